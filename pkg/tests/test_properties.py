"""Property-based checks on splits, the Laplace exponent and the rate functions."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from fragrate import BetaBinary, TableBinary, UniformBinary, kappa
from fragrate.dislocation import sample_splits
from fragrate.rates import capital_c, rate_profile, upsilon

MODELS = {"uniform": UniformBinary(), "beta": BetaBinary(0.5),
          "table": TableBinary(((0.6, 0.0), (0.7, 2.0), (0.8, 1.0), (0.9, 0.0)))}
PROFILE = rate_profile(UniformBinary())


@settings(max_examples=40, deadline=None)
@given(name=st.sampled_from(sorted(MODELS)), seed=st.integers(0, 2**32 - 1))
def test_splits_are_conservative_and_ordered(name, seed):
    s = sample_splits(MODELS[name], 64, np.random.default_rng(seed), eps=1e-3)
    assert np.all(s[:, 1] > 0)
    assert np.all(s[:, 0] >= s[:, 1])
    assert np.all(s.sum(axis=1) == 1.0)


@settings(max_examples=60, deadline=None)
@given(q=st.floats(-0.4, 6.0), h=st.floats(0.05, 1.0))
def test_kappa_increasing_and_concave(q, h):
    for m in (MODELS["uniform"], MODELS["table"]):
        k0, k1, k2 = kappa(m, q - h), kappa(m, q), kappa(m, q + h)
        assert k0 < k1 < k2
        assert k1 - k0 >= k2 - k1 - 1e-12


@settings(max_examples=60, deadline=None)
@given(v=st.floats(0.01, 1.9))
def test_rate_function_bounds(v):
    # C(v) is the infimum over p of (p + 1) v - kappa(p)
    c = capital_c(PROFILE, v)
    for p in (-0.9, 0.0, 1.0, 3.0):
        assert c <= (p + 1) * v - kappa(UniformBinary(), p) + 1e-12
    assert abs(c - (2 * math.sqrt(2 * v) - v - 1)) < 1e-10
    assert upsilon(PROFILE, v) > -2.0
