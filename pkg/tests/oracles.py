"""Independent reference computations used by several test modules."""

import numpy as np

from disguise_id.network import LayerSpec, Regressor, conv

RELU = LayerSpec("relu")
POOL = LayerSpec("maxpool")

# every layer kind, odd kernels 1/3/5, pooling between convs
MINI_LAYERS = [conv(2, 3, 5), RELU, POOL, conv(3, 4, 3), RELU, conv(4, 4, 1), RELU, POOL, conv(4, 3, 3)]
MINI_INPUT = (8, 8, 2)


def mini_problem(seed=0):
    rng = np.random.default_rng(seed)
    model = Regressor(MINI_LAYERS, MINI_INPUT, dtype=np.float64, seed=seed, output_gain=1.0)
    for p in model.params:
        if p is not None:
            p[1][:] = rng.normal(0, 0.1, p[1].shape)
    x = rng.random((2,) + MINI_INPUT)
    up = rng.normal(size=(2,) + model.output_size)
    return model, x, up


def numeric_gradients(model64, x, upstream, rel_step=1e-3):
    """Central differences of sum(upstream * forward(x)) in float64.

    Returns ``(grads, kinks)``. The network is piecewise linear in each weight,
    so where the two one-sided slopes disagree the step straddles a ReLU or
    max-pool switch; those entries are set to NaN and counted in ``kinks``.
    """
    def loss():
        return float(np.sum(upstream * model64.forward(x, keep_cache=False)))

    f0 = loss()
    kinks = 0
    out = []
    for p in model64.params:
        if p is None:
            out.append(None)
            continue
        pair = []
        for t in p:
            g = np.zeros_like(t)
            flat, gflat = t.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                h = rel_step * max(1.0, abs(old))
                flat[k] = old + h
                fp = loss()
                flat[k] = old - h
                fm = loss()
                flat[k] = old
                right, left = (fp - f0) / h, (f0 - fm) / h
                if abs(right - left) > 1e-6 * max(1.0, abs(right), abs(left)):
                    gflat[k] = np.nan
                    kinks += 1
                else:
                    gflat[k] = (fp - fm) / (2 * h)
            pair.append(g)
        out.append(tuple(pair))
    return out, kinks


def relative_errors(analytic, numeric):
    """Per tensor, NaN reference entries skipped: of |a - n| / max(|a|, |n|) in the L2 sense."""
    errs = []
    for a, n in zip(analytic, numeric):
        if a is None:
            continue
        for ta, tn in zip(a, n):
            ta, tn = np.asarray(ta, np.float64), np.asarray(tn, np.float64)
            keep = np.isfinite(tn)
            ta, tn = ta[keep], tn[keep]
            denom = max(np.linalg.norm(ta), np.linalg.norm(tn), 1e-30)
            errs.append(np.linalg.norm(ta - tn) / denom)
    return errs


def brute_force_pck(detections, truths, d):
    """Per-point accuracy by explicit loops; NaN where no truth is visible."""
    out = []
    for j in range(14):
        hit = total = 0
        for det, gt in zip(detections, truths):
            if not gt.visible[j]:
                continue
            total += 1
            if det.visible[j]:
                dx = det.points[j][0] - gt.points[j][0]
                dy = det.points[j][1] - gt.points[j][1]
                if (dx * dx + dy * dy) ** 0.5 <= d:
                    hit += 1
        out.append(100.0 * hit / total if total else float("nan"))
    return out
