import dataclasses

import numpy as np
import pytest

from disguise_id.augment import AugmentConfig
from disguise_id.config import preset
from disguise_id.errors import ContractError
from disguise_id.network import Regressor, default_layers
from disguise_id.synth import DatasetManifest, SynthConfig, generate_dataset
from disguise_id.train import TrainConfig, train

DESK = preset("desk")


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    return generate_dataset(4, 3, "simple", 0, tmp_path_factory.mktemp("tiny"), SynthConfig().scaled(132))


def small_model():
    return Regressor(default_layers(0.25), (128, 128, 3), seed=1)


def run(manifest, out_dir=None, aug=DESK.augment, **kw):
    cfg = dataclasses.replace(DESK.train, epochs=2, batch_size=4, **kw)
    return train(small_model(), manifest, cfg, aug, DESK.gaussian, out_dir)


def test_zero_epochs(manifest, tmp_path):
    model = small_model()
    before = model.copy()
    best, log = train(model, manifest, dataclasses.replace(DESK.train, epochs=0), DESK.augment, DESK.gaussian,
                      tmp_path)
    assert log.epochs == []
    for a, b, c in zip(model.params, before.params, best.params):
        if a is not None:
            assert np.array_equal(a[0], b[0]) and np.array_equal(c[0], b[0])
    assert (tmp_path / "train_log.csv").read_text() == "epoch,lr,train_loss,val_pck5\n"


def test_same_seed_same_log_and_weights(manifest, tmp_path):
    run(manifest, tmp_path / "a")
    run(manifest, tmp_path / "b")
    for name in ("train_log.csv", "best.dfi", "last.dfi"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_augmented_training_deterministic(manifest):
    aug = dataclasses.replace(DESK.augment, enabled=True)
    _, a = run(manifest, aug=aug)
    _, b = run(manifest, aug=aug)
    assert a.to_csv() == b.to_csv()
    assert all(np.isfinite(e.train_loss) for e in a.epochs)


def test_log_contents(manifest):
    _, log = run(manifest, drop_epoch=1)
    assert [e.epoch for e in log.epochs] == [1, 2]
    assert [e.lr for e in log.epochs] == [DESK.train.base_lr, DESK.train.lr_after_drop]
    assert 1 <= log.best_epoch <= 2


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert cfg.lr(20) == 1e-5 and cfg.lr(21) == 1e-6


def test_bad_config():
    with pytest.raises(ContractError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ContractError):
        TrainConfig(base_lr=0)


def test_empty_split(manifest):
    only_train = DatasetManifest([r for r in manifest.records if r.split == "train"], manifest.root)
    with pytest.raises(ContractError):
        run(only_train)


def test_input_size_mismatch(manifest):
    with pytest.raises(ContractError):
        run(manifest, aug=AugmentConfig(crop_size=(124, 124), output_size=(64, 64), enabled=False))
