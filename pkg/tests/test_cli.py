import subprocess
import sys

import numpy as np
import pytest

from disguise_id.checkpoint import save_checkpoint
from disguise_id.cli import main
from disguise_id.geom import save_png
from disguise_id.network import Regressor, conv

TINY = "[run]\npreset = desk\n[model]\nwidth = 0.25\n[train]\nepochs = 1\n[eval]\nmultiface_scenes = 1\n"


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    assert main(["synth", "--subjects", "5", "--per-subject", "4", "--background", "simple", "--seed", "1",
                 "--config", str(root / "tiny.ini"), "--out", str(root / "d")]) == 0
    assert main(["train", "--manifest", str(root / "d/manifest.jsonl"), "--config", str(root / "tiny.ini"),
                 "--out", str(root / "t")]) == 0
    return root


def test_synth_counts(work, capsys):
    assert len(list((work / "d/images").glob("*.png"))) == 25
    assert main(["synth", "--subjects", "5", "--per-subject", "4", "--background", "simple", "--seed", "1",
                 "--config", str(work / "tiny.ini"), "--out", str(work / "d2")]) == 0
    out = capsys.readouterr().out
    assert "records 25" in out and "manifest.jsonl" in out
    assert (work / "d2/manifest.jsonl").read_bytes() == (work / "d/manifest.jsonl").read_bytes()


def test_train_outputs(work):
    for name in ("best.dfi", "last.dfi", "train_log.csv", "config.ini"):
        assert (work / "t" / name).exists()
    assert "preset = desk" in (work / "t/config.ini").read_text()


def test_evaluate_twice_identical(work, capsys):
    args = ["evaluate", "--checkpoint", str(work / "t/best.dfi"), "--manifest", str(work / "d/manifest.jsonl"),
            "--config", str(work / "tiny.ini"), "--multiface"]
    assert main(args + ["--out", str(work / "e1")]) == 0
    assert main(args + ["--out", str(work / "e2")]) == 0
    names = ["report.json", "table_pck.csv", "curves.csv", "identification.csv", "curves.svg", "config.ini"]
    for name in names:
        assert (work / "e1" / name).read_bytes() == (work / "e2" / name).read_bytes()
    assert '"2-face"' in (work / "e1/report.json").read_text()


def _zero_checkpoint(path):
    model = Regressor([conv(3, 14, 1)], (128, 128, 3))
    save_checkpoint(model, path)


def test_detect_zero_weights_not_visible(tmp_path, capsys):
    _zero_checkpoint(tmp_path / "z.dfi")
    save_png(np.random.default_rng(0).random((128, 128, 3)), tmp_path / "img.png")
    assert main(["detect", "--checkpoint", str(tmp_path / "z.dfi"), "--image", str(tmp_path / "img.png"),
                 "--overlay", str(tmp_path / "o.png")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 14
    assert [ln.split()[0] for ln in lines] == [f"P{i}" for i in range(1, 15)]
    assert all(ln.endswith(" not-visible") for ln in lines)
    assert (tmp_path / "o.png").exists()


def _colour_checkpoint(path):
    # each heatmap is a different colour projection, so argmaxes land on distinct pixels
    model = Regressor([conv(3, 14, 1)], (128, 128, 3))
    angles = np.linspace(0, 2 * np.pi, 14, endpoint=False)
    w = np.stack([np.cos(angles), np.sin(angles), np.cos(2 * angles + 1)])
    model.params[0][0][0, 0] = w.astype(np.float32)
    save_checkpoint(model, path)


def test_identify_probe_in_gallery(tmp_path, capsys):
    _colour_checkpoint(tmp_path / "c.dfi")
    rng = np.random.default_rng(3)
    paths = []
    for i in range(3):
        paths.append(tmp_path / f"g{i}.png")
        save_png(rng.random((128, 128, 3)), paths[-1])
    gallery = [f"{10 + i}={p}" for i, p in enumerate(paths)]
    assert main(["identify", "--checkpoint", str(tmp_path / "c.dfi"), "--probe", str(paths[1]),
                 "--gallery", *gallery, "--min-peak=-1e9"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "identified subject 11"
    assert out[1].startswith("subject 11 tau 0.000000")


def test_detect_prints_original_coordinates(tmp_path, capsys):
    _colour_checkpoint(tmp_path / "c.dfi")
    img = np.zeros((132, 132, 3))
    img[40, 70] = (1.0, 0.0, 0.0)  # maximises the cos(0)=1 projection of P1
    save_png(img, tmp_path / "dot.png")
    assert main(["detect", "--checkpoint", str(tmp_path / "c.dfi"), "--image", str(tmp_path / "dot.png")]) == 0
    first = capsys.readouterr().out.splitlines()[0].split()
    assert first[0] == "P1" and first[3] == "visible"
    assert abs(float(first[1]) - 70) <= 1 and abs(float(first[2]) - 40) <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(work, tmp_path, capsys):
    assert main(["detect", "--checkpoint", str(tmp_path / "missing.dfi"), "--image", "x.png"]) == 3
    (tmp_path / "bad.ini").write_text("[train]\nepoch = 1\n")
    assert main(["train", "--manifest", str(work / "d/manifest.jsonl"), "--config", str(tmp_path / "bad.ini"),
                 "--out", str(tmp_path / "t")]) == 4
    assert main(["detect", "--checkpoint", str(work / "d/manifest.jsonl"), "--image", "x.png"]) == 4
    (tmp_path / "hot.ini").write_text(TINY.replace("epochs = 1", "epochs = 4\nbatch_size = 4\nbase_lr = 1e6"))
    assert main(["train", "--manifest", str(work / "d/manifest.jsonl"), "--config", str(tmp_path / "hot.ini"),
                 "--out", str(tmp_path / "t")]) == 5
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--subjects", "5"])
    assert exc.value.code == 2


@pytest.mark.parametrize("sub", ["synth", "train", "detect", "identify", "evaluate"])
def test_help(sub):
    res = subprocess.run([sys.executable, "-m", "disguise_id", sub, "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--" in res.stdout


def test_missing_out_is_usage_error():
    res = subprocess.run([sys.executable, "-m", "disguise_id", "synth", "--subjects", "5"], capture_output=True,
                         text=True)
    assert res.returncode == 2 and "usage:" in res.stderr
