import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest

from fragrate import BetaBinary, TableBinary, UniformBinary
from fragrate import _kernels
from fragrate import simulator as sim
from fragrate.scalefn import LevyDescriptor, rho

pytestmark = pytest.mark.skipif("compiled" not in _kernels.available_backends(),
                                reason="compiled extension not built")

PY = _kernels.get_backend("python")


@pytest.fixture(scope="module")
def C():
    return _kernels.get_backend("compiled")


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_volterra_march_agrees(C):
    rng = np.random.default_rng(0)
    alpha = rng.random(400) * 1e-3
    beta = rng.random(400) * 1e-3
    w_py = PY.volterra_march(alpha, beta, 0.7)
    w_c = C.volterra_march(alpha, beta, 0.7)
    np.testing.assert_allclose(w_c, w_py, rtol=1e-12, atol=0)


MODELS = [UniformBinary(), BetaBinary(0.5), TableBinary(((0.6, 0.0), (0.7, 2.0), (0.8, 1.0), (0.9, 0.0)))]


@pytest.mark.parametrize("model", MODELS, ids=["uniform", "beta", "table"])
def test_sample_small_bit_identical(C, model):
    code, prm = sim.sim_model(model).kernel_spec()
    for u in np.linspace(0.0, 1.0, 257)[:-1]:
        assert C.sample_small(code, prm, float(u)) == PY.sample_small(code, prm, float(u))


def test_h_interp_bit_identical(C):
    hv = np.cumsum(np.random.default_rng(1).random(50))
    for x in np.linspace(0.0, 6.0, 101):
        assert C.h_interp(hv, 0.1, float(x)) == PY.h_interp(hv, 0.1, float(x))


@pytest.mark.parametrize("mode", [sim.CLASSICAL, sim.CONFINED])
@pytest.mark.parametrize("model", MODELS, ids=["uniform", "beta", "table"])
def test_tree_kernel_bit_identical(model, mode):
    u = UniformBinary()
    conf = rho(LevyDescriptor(u, 0.5), 0.5, 2.0) if model is MODELS[0] else None
    k = dict(v=0.5, a=0.5, b=2.0, checkpoints=[0.5, 1.0, 2.0, 3.0], n_replicas=200, seed=21, mode=mode,
             ptilts=(0.5, 1.0), conf=conf, track_spine=conf is not None)
    if isinstance(model, BetaBinary):
        # coarse truncation keeps the unpruned population small; the kernel path is the same
        k["eps"] = 0.2
    b_py = sim.simulate_tree_batch(model, backend="python", **k)
    b_c = sim.simulate_tree_batch(model, backend="compiled", **k)
    fields = ("n_live", "n_window", "n_good", "mass", "msum", "hsum", "spine_logsize", "spine_good", "zeta",
              "n_events")
    assert _digest(*(getattr(b_py, f) for f in fields)) == _digest(*(getattr(b_c, f) for f in fields))


def test_spine_exit_bit_identical():
    u = UniformBinary()
    e_py = sim.many_to_one_confined(u, 0.5, 0.5, 2.0, [1.0, 2.0, 4.0], 50_000, seed=2, backend="python")
    e_c = sim.many_to_one_confined(u, 0.5, 0.5, 2.0, [1.0, 2.0, 4.0], 50_000, seed=2, backend="compiled")
    assert np.array_equal(e_py.mean, e_c.mean)
    assert np.array_equal(e_py.se, e_c.se)


def test_unknown_backend():
    with pytest.raises(ImportError):
        _kernels.get_backend("fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, FRAGRATE_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from fragrate import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env["FRAGRATE_BACKEND"] = ""
    out = subprocess.run([sys.executable, "-c", "from fragrate import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "compiled"
