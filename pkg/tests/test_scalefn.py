import math

import numpy as np
import pytest

from fragrate import BetaBinary, UniformBinary
from fragrate.errors import DomainError, MeshError
from fragrate.rates import rate_profile
from fragrate.scalefn import (LevyDescriptor, convolution_series, h_eval, laplace_check, phi, psi, rho,
                              rho_vs_c_gap, scale_grid, tilted_scale_check)

from oracles import exp_jump_params, rho_exact, w_exact

LOG4 = math.log(4.0)


@pytest.fixture(scope="module")
def desc():
    return LevyDescriptor(UniformBinary(), 0.5)


@pytest.fixture(scope="module")
def conf(desc):
    return rho(desc, 0.5, 2.0)


def test_psi_values(desc):
    assert psi(desc, 0.0) == 0.0
    assert psi(desc, 2.0) == pytest.approx(0.5)
    assert psi(desc, 1e6) / 1e6 == pytest.approx(0.5, rel=1e-5)
    lam = np.linspace(0, 5, 50)
    assert np.all(np.diff([psi(desc, x) for x in lam], 2) >= -1e-12)


def test_phi(desc):
    assert phi(desc, 0.0) == 0.0
    assert phi(desc, 0.5) == pytest.approx(2.0, abs=1e-12)
    qs = np.linspace(0, 3, 20)
    assert np.all(np.diff([phi(desc, q) for q in qs]) > 0)
    fast = LevyDescriptor(UniformBinary(), 0.8)
    assert phi(fast, 0.0) == 0.0
    slow = LevyDescriptor(UniformBinary(), 0.2)
    assert phi(slow, 0.0) == pytest.approx(3.0, abs=1e-12)  # 0.2 l = l/(l+2) at l = 3
    with pytest.raises(DomainError):
        phi(desc, -0.1)


@pytest.mark.parametrize("q", [-1.0, -0.2, 0.0, 0.5])
def test_scale_grid_against_closed_form(desc, q):
    g = scale_grid(desc, q, LOG4, 1e-3)
    exact = w_exact(g.x, 0.5, q)
    assert np.max(np.abs(g.values - exact)) <= 1e-4
    assert g.values[0] == pytest.approx(2.0, abs=1e-12)
    if q >= 0:
        assert np.all(g.values > 0) and np.all(np.diff(g.values) >= -1e-12)


def test_scale_grid_tilted_closed_form(desc):
    p = 0.7
    c, mu = exp_jump_params(p)
    g = scale_grid(desc.tilted(p), 0.3, 1.0, 1e-3)
    assert np.max(np.abs(g.values - w_exact(g.x, 0.5, 0.3, c, mu))) <= 1e-6


def test_scale_grid_domain(desc):
    with pytest.raises(DomainError):
        scale_grid(desc, 0.0, -1.0, 1e-3)
    with pytest.raises(DomainError):
        scale_grid(desc, 0.0, 1.0, 0.5)
    with pytest.raises(MeshError):
        # a mesh this coarse gives a first-cell weight above the drift
        scale_grid(LevyDescriptor(BetaBinary(0.9), 0.01), 0.0, 1.0, 0.1)


@pytest.mark.parametrize("q", [-1.0, -0.2, 0.0, 0.5])
def test_laplace_identity(desc, q):
    lam0 = phi(desc, abs(q)) + 1.0
    for c in laplace_check(desc, q, [lam0, lam0 + 1.0, lam0 + 3.0]):
        assert c.rel_error <= 1e-3


def test_laplace_identity_beta():
    d = LevyDescriptor(BetaBinary(0.5), 2.0)
    for c in laplace_check(d, 0.5, [phi(d, 0.5) + 1.0, phi(d, 0.5) + 2.0], delta=0.01):
        assert c.rel_error <= 1e-3


@pytest.mark.parametrize("q", [1.0, 0.7, -1.0])
def test_convolution_series(desc, q):
    x, s, _ = convolution_series(desc, q, 2.0, delta=2e-3)
    assert np.max(np.abs(s - w_exact(x, 0.5, q))) <= 1e-5


def test_series_derivative_matches_finite_difference(desc):
    q, h = 0.3, 1e-3
    x, ds, _ = convolution_series(desc, q, 1.0, delta=2e-3, derivative=True)
    fd = (scale_grid(desc, q + h, 1.0, 2e-3).values - scale_grid(desc, q - h, 1.0, 2e-3).values) / (2 * h)
    assert np.max(np.abs(ds - fd)) <= 1e-3


def test_rho_matches_oracle(conf):
    assert conf.rho == pytest.approx(rho_exact(0.5, 0.5, 2.0), abs=1e-6)
    assert conf.rho == pytest.approx(0.7977357668547143, abs=1e-8)
    assert abs(conf.grid.at_end()) <= max(conf.zero_tol, 1e-9)
    assert np.all(conf.grid.values[1:-1] > 0)


def test_rho_first_zero_property(desc, conf):
    below = scale_grid(desc, -(conf.rho - 0.01), LOG4, LOG4 / 1387)
    assert np.min(below.values[1:]) > 0
    above = scale_grid(desc, -(conf.rho + 1e-4), LOG4, LOG4 / 1387)
    assert above.at_end() <= 0


def test_rho_decreasing_in_b(desc):
    vals = [rho(desc, 0.5, b).rho for b in (1.5, 2.0, 3.0, 4.0, 6.0)]
    assert all(r > 0 for r in vals)
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals == pytest.approx([1.16967, 0.79774, 0.51763, 0.40077, 0.29374], abs=1e-4)


def test_rho_continuous_in_beta(desc):
    base = rho(desc, 0.5, 2.0).rho
    incs = [abs(rho(desc, 0.5, 2.0 * math.exp(d)).rho - base) for d in (0.1, 0.05, 0.025)]
    assert incs[0] > incs[1] > incs[2]


def test_h_eval(conf):
    la, lb = math.log(0.5), math.log(2.0)
    assert h_eval(conf, la) == pytest.approx(2.0)
    assert h_eval(conf, lb) == 0.0
    assert h_eval(conf, lb + 1.0) == 0.0
    assert h_eval(conf, la - 1e-9) == 0.0
    assert conf.h0 > 0
    assert conf.h0 == pytest.approx(float(w_exact(-la, 0.5, -conf.rho)), abs=1e-5)


def test_tilted_scale_identity(desc):
    assert tilted_scale_check(desc, 0.0, 0.2, LOG4) <= 1e-12
    assert tilted_scale_check(desc, 1.0, 0.2, LOG4) <= 1e-5
    assert tilted_scale_check(desc, 0.5, -0.1, LOG4) <= 1e-5


def test_tilted_identity_closed_forms(desc):
    p, q = 0.5, -0.1
    c, mu = exp_jump_params(p)
    x = np.linspace(0, LOG4, 50)
    lhs = w_exact(x, 0.5, psi(desc, p) + q)
    rhs = np.exp(p * x) * w_exact(x, 0.5, q, c, mu)
    assert np.max(np.abs(lhs - rhs) / np.abs(lhs)) <= 1e-10


def test_rho_vs_c_gap():
    prof = rate_profile(UniformBinary())
    d = LevyDescriptor(UniformBinary(), 0.1)
    assert rho_vs_c_gap(prof, d, 0.5, 2.0) >= 0
    assert rho(d, 0.5, 2.0).rho > 0.1
    d5 = LevyDescriptor(UniformBinary(), 0.5)
    gaps = [rho_vs_c_gap(prof, d5, 0.5, b) for b in (2.0, 3.0, 4.0, 6.0, 10.0)]
    assert all(g >= 0 for g in gaps)
    assert all(x > y for x, y in zip(gaps, gaps[1:]))


def test_beta_rho():
    d = LevyDescriptor(BetaBinary(0.5), 2.0)
    c = rho(d, 0.5, 2.0, delta=0.01)
    assert c.rho == pytest.approx(2.8526, abs=2e-3)
