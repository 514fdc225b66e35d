"""Backend parity (compiled vs numpy twin) and Jacobian correctness."""

import numpy as np
import pytest

from armpose import CameraIntrinsics, load_bundled_model
from armpose import _core_py
from armpose.solver import SolverOptions, _bounds_full, _bounds_weak, _full_inits
from armpose.synth import SampleRanges, sample_scene
from armpose.util import substream

try:
    from armpose import _core
    HAVE_COMPILED = True
except ImportError:
    _core = None
    HAVE_COMPILED = False

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED,
                                    reason="compiled extension not built")


def make(impl, model):
    return impl.KernelModel(model.rest, model.kp_chain, model.kp_njoints,
                            model.joint_axes, model.joint_pivots,
                            model.joint_parent, model.joint_topo)


@pytest.fixture(scope="module")
def kms(model):
    out = {"python": make(_core_py, model)}
    if HAVE_COMPILED:
        out["compiled"] = make(_core, model)
    return out


def random_q(model, rng):
    lim = model.limits_rad()
    return rng.uniform(lim[:, 0], lim[:, 1])


def scene_inputs(model, intr, idx=0, sigma=0.0):
    pose, z, y = sample_scene(7, SampleRanges(), model, intr, index=idx)
    pts = y.points
    if sigma > 0:
        pts = pts + substream(99, idx).normal(0, sigma, size=pts.shape)
    mask_idx = np.arange(17, dtype=np.int32)
    intr4 = (intr.fx, intr.fy, intr.cx, intr.cy)
    return pose.as_params(), pts, mask_idx, intr4


# -- parity ---------------------------------------------------------------------


@needs_compiled
def test_fk_parity(kms, model, rng):
    for _ in range(50):
        q = random_q(model, rng)
        a = kms["python"].fk(q)
        b = kms["compiled"].fk(q)
        assert np.allclose(a, b, atol=1e-12)


@needs_compiled
def test_fk_jac_parity(kms, model, rng):
    for _ in range(20):
        q = random_q(model, rng)
        pa, ja = kms["python"].fk_jac(q)
        pb, jb = kms["compiled"].fk_jac(q)
        assert np.allclose(pa, pb, atol=1e-12)
        assert np.allclose(ja, jb, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("mode", [0, 1])
def test_residual_jacobian_parity(kms, model, intr, rng, mode):
    for idx in range(5):
        params, pts, mask_idx, intr4 = scene_inputs(model, intr, idx, sigma=2.0)
        if mode == 1:
            params = np.concatenate([[5.0], params[3:6], [10.0, -4.0], params[6:10]])
            intr4 = None
        ra, Ja, oka = kms["python"].residual_jacobian(mode, params, pts, mask_idx, intr4)
        rb, Jb, okb = kms["compiled"].residual_jacobian(mode, params, pts, mask_idx, intr4)
        assert oka == okb
        assert np.allclose(ra, rb, atol=1e-9)
        assert np.allclose(Ja, Jb, atol=1e-9)


@needs_compiled
def test_lm_solve_parity(kms, model, intr):
    lo, hi = _bounds_full(model)
    params, pts, mask_idx, intr4 = scene_inputs(model, intr, 3)
    # start near the truth: a well-conditioned basin both backends resolve
    p0 = params + 0.02
    outs = {}
    for name, km in kms.items():
        p, loss, iters, conv, valid, trace = km.lm_solve(
            0, p0, pts, mask_idx, intr4, lo, hi, 400, 1e-12)
        assert valid and conv
        outs[name] = (p, loss)
    pa, la = outs["python"]
    pb, lb = outs["compiled"]
    assert np.allclose(pa, pb, atol=1e-6)
    assert abs(la - lb) < 1e-9


# -- Jacobian vs finite differences ----------------------------------------------


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_jacobian_matches_finite_differences(kms, model, intr, rng, backend):
    if backend not in kms:
        pytest.skip("compiled extension not built")
    km = kms[backend]
    step = 1e-5
    checked = 0
    for idx in range(100):
        params, pts, mask_idx, intr4 = scene_inputs(model, intr, idx)
        # keep interior of the box so central differences stay feasible
        r0, J, ok = km.residual_jacobian(0, params, pts, mask_idx, intr4)
        assert ok
        fd = np.empty_like(J)
        for j in range(10):
            dp = np.zeros(10)
            dp[j] = step
            rp, _, okp = km.residual_jacobian(0, params + dp, pts, mask_idx, intr4)
            rm, _, okm = km.residual_jacobian(0, params - dp, pts, mask_idx, intr4)
            assert okp and okm
            fd[:, j] = (rp - rm) / (2 * step)
        scale = max(1.0, np.abs(J).max())
        assert np.abs(J - fd).max() / scale < 1e-4
        checked += 1
    assert checked == 100


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_weak_jacobian_matches_finite_differences(kms, model, intr, backend):
    if backend not in kms:
        pytest.skip("compiled extension not built")
    km = kms[backend]
    step = 1e-5
    for idx in range(20):
        params, pts, mask_idx, _ = scene_inputs(model, intr, idx)
        wp = np.concatenate([[5.0], params[3:6], [10.0, -4.0], params[6:10]])
        r0, J, ok = km.residual_jacobian(1, wp, pts, mask_idx, None)
        fd = np.empty_like(J)
        for j in range(10):
            dp = np.zeros(10)
            dp[j] = step
            rp, _, _ = km.residual_jacobian(1, wp + dp, pts, mask_idx, None)
            rm, _, _ = km.residual_jacobian(1, wp - dp, pts, mask_idx, None)
            fd[:, j] = (rp - rm) / (2 * step)
        scale = max(1.0, np.abs(J).max())
        assert np.abs(J - fd).max() / scale < 1e-4


# -- LM behavior ------------------------------------------------------------------


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_monotone_damping(kms, model, intr, backend):
    if backend not in kms:
        pytest.skip("compiled extension not built")
    km = kms[backend]
    lo, hi = _bounds_full(model)
    opts = SolverOptions(seed=5)
    for idx in range(5):
        params, pts, mask_idx, intr4 = scene_inputs(model, intr, idx, sigma=2.0)
        from armpose.camera import Keypoints2D

        y = Keypoints2D(pts, np.ones(17), np.ones(17, dtype=bool))
        inits = _full_inits(y, mask_idx, intr, model, opts, None)
        for p0 in inits[:4]:
            _, _, _, _, valid, trace = km.lm_solve(0, p0, pts, mask_idx, intr4,
                                                   lo, hi, 300, 1e-10)
            assert valid
            assert all(b < a for a, b in zip(trace, trace[1:]))


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_invalid_initialization_flagged(kms, model, intr, backend):
    if backend not in kms:
        pytest.skip("compiled extension not built")
    km = kms[backend]
    lo, hi = _bounds_full(model)
    params, pts, mask_idx, intr4 = scene_inputs(model, intr, 0)
    bad = params.copy()
    bad[0:3] = [0.0, 0.0, 200.0]     # camera above, looking away from the arm
    bad[3:6] = [0.0, np.radians(-45.0), 0.0]
    p, loss, iters, conv, valid, trace = km.lm_solve(
        0, bad, pts, mask_idx, intr4, lo, hi, 100, 1e-10)
    assert not valid and not conv and loss == np.inf
