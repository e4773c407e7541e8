import numpy as np
import pytest

from voxelfill.nn import Grid, backward


def finite_diff_check(build_loss, grids, rng, rtol=1e-4, h_scale=1e-3, n_coords=8):
    """Central-difference check of analytic gradients, float64 mode.

    build_loss must rebuild the graph from the grids' current data. Returns
    the worst relative error over the sampled coordinates.
    """
    for g in grids:
        g.grad = None
    backward(build_loss())
    worst = 0.0
    for g in grids:
        assert g.grad is not None, f"no gradient reached {g}"
        flat = g.data.reshape(-1)
        gflat = g.grad.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in coords:
            orig = flat[i]
            h = h_scale * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = build_loss().item()
            flat[i] = orig - h
            fm = build_loss().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, err)
    assert worst < rtol, f"gradient mismatch: relative error {worst:.3e}"
    return worst


def probe_loss(out, probe):
    """Scalar loss sum(out * fixed_probe), exercising every output element."""
    from voxelfill.nn import ops
    return ops.sum_(ops.mul(out, Grid(probe)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
