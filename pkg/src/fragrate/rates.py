"""Critical speeds and the Legendre-dual rate function C(v)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .dislocation import DOMAIN_MARGIN, DislocationModel, kappa, kappa_prime, p_lower
from .errors import DomainError, InvariantViolation, RootBracketError, ToleranceError

SIGN_MARGIN = 1e-8
UPSILON_TOL = 1e-12


class ClassicalRegime(enum.Enum):
    SUPERCRITICAL = "SupercriticalClassical"
    SUBCRITICAL = "SubcriticalClassical"


class ConfinedRegime(enum.Enum):
    SUPERCRITICAL = "SupercriticalConfined"
    SUBCRITICAL = "SubcriticalConfined"


def _kp(model, p):
    return kappa_prime(model, p)


def _lower_probe(pl, k):
    # points approaching p_lower (or -oo) geometrically from 0
    if math.isfinite(pl):
        return pl + (0.0 - pl) * 2.0 ** -k
    return -(2.0 ** k)


def _solve_kappa_prime(model, v):
    pl = p_lower(model)
    f = lambda p: _kp(model, p) - v
    f0 = f(0.0)
    if f0 == 0.0:
        return 0.0
    if f0 > 0:
        lo, hi = 0.0, 1.0
        while f(hi) > 0:
            lo, hi = hi, 2.0 * hi
            if hi > 1e8:
                raise RootBracketError(f"kappa' never drops to {v}")
    else:
        hi, lo = 0.0, None
        for k in range(1, 80):
            cand = _lower_probe(pl, k)
            if math.isfinite(pl) and cand <= pl + DOMAIN_MARGIN:
                break
            if f(cand) > 0:
                lo = cand
                break
            hi = cand
        if lo is None:
            raise DomainError(f"speed {v} is not below v_max")
    p = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return p


@dataclass(frozen=True)
class RateProfile:
    """Critical constants of a dislocation model."""

    model: DislocationModel
    p_lower: float
    p_bar: float
    v_typ: float
    v_min: float
    v_max: float

    def kappa(self, q):
        return kappa(self.model, q)

    def kappa_prime(self, q):
        return kappa_prime(self.model, q)


def rate_profile(model: DislocationModel) -> RateProfile:
    """Compute p_lower, p_bar, v_typ, v_min and v_max for a model."""
    pl = p_lower(model)
    pb = p_bar(model)
    # every binary family here has kappa' -> oo at p_lower: the small piece
    # term int w^{p+1} |log w| g(w) dw diverges exactly where it stops being integrable
    return RateProfile(model, pl, pb, kappa_prime(model, 0.0), kappa_prime(model, pb), math.inf)


def _model(obj):
    return obj.model if isinstance(obj, RateProfile) else obj


def _profile(obj):
    return obj if isinstance(obj, RateProfile) else rate_profile(obj)


def upsilon(profile, v: float) -> float:
    """Unique root p of kappa'(p) = v."""
    prof = _profile(profile)
    if not 0.0 < v < prof.v_max:
        raise DomainError(f"speed {v} outside (0, v_max)")
    p = _solve_kappa_prime(prof.model, v)
    resid = abs(_kp(prof.model, p) - v)
    if resid > UPSILON_TOL * max(1.0, v):
        # one Newton polish using kappa''
        from .dislocation import kappa_derivatives
        k1, k2 = kappa_derivatives(prof.model, p)
        p -= (k1 - v) / k2
    return p


def capital_c(profile, v: float) -> float:
    """C(v) = (Upsilon_v + 1) v - kappa(Upsilon_v)."""
    prof = _profile(profile)
    p = upsilon(prof, v)
    return (p + 1.0) * v - kappa(prof.model, p)


def capital_c_direct(profile, v: float, n_grid: int = 100_001) -> float:
    """inf_p (p+1) v - kappa(p) by brute grid search and bounded refinement."""
    prof = _profile(profile)
    pl = prof.p_lower
    m = prof.model
    closed = m.kind == "uniform-binary"
    # quadrature near p_lower is ill-conditioned; the minimizer never sits there since kappa' blows up
    lo = pl + (1e-6 if closed else 1e-3) if math.isfinite(pl) else -50.0
    hi = max(10.0, 4.0 * abs(upsilon(prof, v)) + 1.0)
    ps = np.linspace(lo, hi, n_grid)
    if closed:
        vals = (ps + 1.0) * v - ps / (ps + 2.0)
    else:
        vals = np.array([(p + 1.0) * v - kappa(m, p) for p in ps])
    k = int(np.argmin(vals))
    a, b = ps[max(k - 1, 0)], ps[min(k + 1, n_grid - 1)]
    res = optimize.minimize_scalar(lambda p: (p + 1.0) * v - kappa(m, p), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12})
    return float(min(res.fun, vals[k]))


def p_bar(profile) -> float:
    """Root of kappa(q) - (q+1) kappa'(q); v_min = kappa'(p_bar)."""
    m = _model(profile)
    g = lambda q: kappa(m, q) - (q + 1.0) * kappa_prime(m, q)
    lo, hi = 0.0, 1.0
    while g(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise RootBracketError("kappa(q) - (q+1) kappa'(q) has no sign change on (0, 1e6)")
    return optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def classify_speed(profile, v: float, a: float, b: float, rho: float):
    """(classical regime, confined regime) from the signs of C(v) and v - rho."""
    prof = _profile(profile)
    if not 0 < a < 1 < b:
        raise DomainError("need 0 < a < 1 < b")
    c = capital_c(prof, v)
    gap = v - rho
    if abs(c) < SIGN_MARGIN or abs(gap) < SIGN_MARGIN:
        raise ToleranceError(f"ambiguous sign: C(v)={c:.3g}, v-rho={gap:.3g}")
    if c < gap - 1e-6:
        raise InvariantViolation(f"C(v)={c} < v - rho={gap}")
    cls = ClassicalRegime.SUPERCRITICAL if c > 0 else ClassicalRegime.SUBCRITICAL
    con = ConfinedRegime.SUPERCRITICAL if gap > 0 else ConfinedRegime.SUBCRITICAL
    return cls, con


def d_alpha(profile, p: float, alpha: float) -> float:
    """d(p, alpha) = (1+alpha) kappa(p) - kappa(p + alpha (p+1)).

    The shifted argument is formed as p + alpha (p+1) so that alpha = 0 gives
    exactly p and hence d(p, 0) = 0.
    """
    m = _model(profile)
    return (1.0 + alpha) * kappa(m, p) - kappa(m, p + alpha * (p + 1.0))


def first_alpha_root(profile, p: float, alpha_cap: float = 50.0) -> float:
    """Smallest alpha > 0 with d(p, alpha) = 0, or inf if none below the cap.

    d(p, .) is convex with d(p, 0) = 0, so there is at most one positive root
    and it exists only when the slope at 0, kappa(p) - (p+1) kappa'(p), is negative.
    """
    m = _model(profile)
    slope = kappa(m, p) - (p + 1.0) * kappa_prime(m, p)
    if slope >= 0 or p == -1.0:
        return math.inf
    pl = p_lower(m)
    cap = alpha_cap
    if p + 1.0 < 0 and math.isfinite(pl):
        # the argument p + alpha(p+1) must stay above p_lower
        cap = min(cap, (pl + DOMAIN_MARGIN - p) / (p + 1.0) * (1 - 1e-9))
    f = lambda a: d_alpha(m, p, a)
    a = 1e-3
    while a < cap and f(a) < 0:
        a *= 1.5
    if a >= cap:
        return math.inf
    return optimize.brentq(f, a / 1.5 if a > 1e-3 else 1e-12, a, xtol=1e-14)


def d_sign_map(profile, ps, alphas):
    """Evaluate d on a grid and compare against the small-alpha classification.

    Expected: d(p, 0) = 0; for p < p_bar, d < 0 while alpha is below the first
    positive root; for p >= p_bar, d > 0 for every alpha > 0.
    """
    prof = _profile(profile)
    ps = np.asarray(ps, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    d = np.array([[d_alpha(prof, p, a) for a in alphas] for p in ps])
    expected = np.zeros_like(d)
    roots = np.array([first_alpha_root(prof, p) if p < prof.p_bar else math.inf for p in ps])
    for i, p in enumerate(ps):
        for j, a in enumerate(alphas):
            if a == 0:
                expected[i, j] = 0
            elif p < prof.p_bar:
                expected[i, j] = -1 if a < roots[i] else 1
            else:
                expected[i, j] = 1
    observed = np.sign(d)
    return {"d": d, "expected": expected, "observed": observed, "alpha_roots": roots,
            "mismatches": int(np.sum(observed != expected)),
            "zero_column_exact": bool(np.all(d[:, alphas == 0] == 0.0))}
