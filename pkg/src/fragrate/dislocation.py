"""Binary conservative dislocation measures.

A binary split of a fragment produces pieces ``(1 - w, w)`` with the small
piece ``w`` in ``(0, 1/2]``.  Every model below is described by the density
``g(w)`` of the small piece under the dislocation measure; the largest piece
``u = 1 - w`` then carries the same density on ``[1/2, 1)``.

From ``g`` we get the Laplace exponent of the tagged fragment,

    kappa(q) = int (1 - (1-w)**(q+1) - w**(q+1)) g(w) dw,

and the Levy measure ``L(dx) = e^{-2x} g(sigma(x)) dx`` of the subordinator
``xi = -log|I_V|`` where ``sigma(x) = 1 - e^{-x}`` for ``x < log 2`` (the tagged
point stays in the large piece) and ``sigma(x) = e^{-x}`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, QuadratureError, TruncationRequired

LOG2 = math.log(2.0)
DOMAIN_MARGIN = 1e-9
DEFAULT_EPS = 1e-4
QUAD_RTOL = 1e-10

# kernel model codes, mirrored in fragrate._kernels
CODE_UNIFORM = 0
CODE_POWER = 1
CODE_TABLE = 2


class DislocationModel:
    """Common interface; concrete models are frozen dataclasses."""

    kind: ClassVar[str] = "abstract"
    w_lo: float
    w_hi: float = 0.5

    # g(w) ~ w**(-singular_exponent) as w -> 0 when w_lo == 0
    singular_exponent: float = 0.0

    def density(self, w):
        raise NotImplementedError

    def log_density_at_exp(self, x):
        """log g(e^{-x}) for large x, evaluated without overflow."""
        return np.log(self.density(np.exp(-np.asarray(x, dtype=float))))

    @property
    def total_mass(self) -> float:
        raise NotImplementedError

    @property
    def finite_activity(self) -> bool:
        return math.isfinite(self.total_mass)

    @property
    def knots(self) -> tuple[float, ...]:
        return ()

    def _F1(self, w):
        """Antiderivative of (1 - w) g(w)."""
        raise NotImplementedError

    def _F2(self, w):
        """Antiderivative of w g(w)."""
        raise NotImplementedError

    def levy_tail(self, y):
        """L((y, oo)) for y > 0, vectorised."""
        y = np.asarray(y, dtype=float)
        w1 = -np.expm1(-y)
        w2 = np.exp(-y)
        lo1 = np.maximum(w1, self.w_lo)
        big = np.where(w1 < self.w_hi, self._F1(self.w_hi) - self._F1(np.minimum(lo1, self.w_hi)), 0.0)
        hi2 = np.minimum(w2, self.w_hi)
        small = np.where(w2 > self.w_lo, self._F2(np.maximum(hi2, self.w_lo)) - self._F2(self.w_lo), 0.0)
        return big + small

    def levy_density(self, x):
        """Density of L at x > 0, vectorised."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        big = x < LOG2
        if np.any(big):
            w = -np.expm1(-x[big])
            out[big] = np.exp(-2.0 * x[big]) * self.density(w)
        sm = ~big
        if np.any(sm):
            xs = x[sm]
            w = np.exp(-xs)
            inside = (w >= self.w_lo) & (w <= self.w_hi)
            vals = np.zeros_like(xs)
            if np.any(inside):
                vals[inside] = np.exp(-2.0 * xs[inside] + self.log_density_at_exp(xs[inside]))
            out[sm] = vals
        return out

    def truncated(self, eps: float) -> "DislocationModel":
        """Finite-activity version dropping splits whose large-piece jump is below eps."""
        return self

    def kernel_spec(self) -> tuple[int, np.ndarray]:
        raise NotImplementedError

    def sample_small(self, u):
        """Inverse-CDF map from uniforms in [0, 1) to small-piece sizes."""
        raise NotImplementedError


@dataclass(frozen=True)
class UniformBinary(DislocationModel):
    """Split point uniform on (0, 1); unit total dislocation rate."""

    kind: ClassVar[str] = "uniform-binary"
    w_lo: float = field(default=0.0, init=False)
    w_hi: float = field(default=0.5, init=False)

    def density(self, w):
        w = np.asarray(w, dtype=float)
        return np.where((w >= 0.0) & (w <= 0.5), 2.0, 0.0)

    def log_density_at_exp(self, x):
        return np.full_like(np.asarray(x, dtype=float), LOG2)

    @property
    def total_mass(self) -> float:
        return 1.0

    def _F1(self, w):
        return 2.0 * w - w * w

    def _F2(self, w):
        return w * w

    def levy_tail(self, y):
        return np.exp(-2.0 * np.asarray(y, dtype=float))

    def kernel_spec(self):
        return CODE_UNIFORM, np.zeros(4)

    def sample_small(self, u):
        return 0.5 * (1.0 - np.asarray(u, dtype=float))


@dataclass(frozen=True)
class BetaBinary(DislocationModel):
    """Largest piece u in (1/2, 1) with nu(du) = (1 - u)**(-1 - theta) du.

    ``w_min > 0`` restricts the measure to small pieces ``w >= w_min``; that is
    how the infinite-activity model is truncated for simulation.
    """

    theta: float
    w_min: float = 0.0
    kind: ClassVar[str] = "beta-binary"

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise DomainError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0.0 <= self.w_min < 0.5:
            raise DomainError(f"w_min must lie in [0, 1/2), got {self.w_min}")

    @property
    def w_lo(self) -> float:
        return self.w_min

    @property
    def singular_exponent(self) -> float:
        return 1.0 + self.theta

    def density(self, w):
        w = np.asarray(w, dtype=float)
        inside = (w > 0.0) & (w >= self.w_min) & (w <= 0.5)
        with np.errstate(divide="ignore"):
            return np.where(inside, np.power(np.where(inside, w, 1.0), -1.0 - self.theta), 0.0)

    def log_density_at_exp(self, x):
        return (1.0 + self.theta) * np.asarray(x, dtype=float)

    @property
    def total_mass(self) -> float:
        if self.w_min == 0.0:
            return math.inf
        th = self.theta
        return (self.w_min ** -th - 0.5 ** -th) / th

    def _F1(self, w):
        th = self.theta
        w = np.asarray(w, dtype=float)
        with np.errstate(divide="ignore"):
            return -np.power(w, -th) / th - np.power(w, 1.0 - th) / (1.0 - th)

    def _F2(self, w):
        th = self.theta
        return np.power(np.asarray(w, dtype=float), 1.0 - th) / (1.0 - th)

    def truncated(self, eps: float) -> "BetaBinary":
        if eps <= 0.0:
            raise TruncationRequired("infinite-activity model needs eps > 0")
        w_min = max(self.w_min, -math.expm1(-eps))
        return BetaBinary(self.theta, w_min)

    def kernel_spec(self):
        if self.w_min == 0.0:
            raise TruncationRequired("infinite-activity model needs eps > 0")
        th = self.theta
        a = self.w_min ** -th
        return CODE_POWER, np.array([th, a, a - 0.5 ** -th, 0.0])

    def sample_small(self, u):
        if self.w_min == 0.0:
            raise TruncationRequired("infinite-activity model needs eps > 0")
        _, prm = self.kernel_spec()
        u = np.asarray(u, dtype=float)
        return np.power(prm[1] - u * prm[2], -1.0 / self.theta)


@dataclass(frozen=True)
class TableBinary(DislocationModel):
    """Finite binary measure given by a piecewise-linear largest-piece density.

    ``table`` holds ``(u, density)`` knots with ``1/2 <= u <= 1`` strictly
    increasing; the density vanishes outside the knot range.
    """

    table: tuple[tuple[float, float], ...]
    kind: ClassVar[str] = "table-binary"
    _w: np.ndarray = field(init=False, repr=False, compare=False)
    _g: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tab = tuple((float(u), float(d)) for u, d in self.table)
        if len(tab) < 2:
            raise DomainError("table needs at least two knots")
        us = np.array([u for u, _ in tab])
        ds = np.array([d for _, d in tab])
        if np.any(np.diff(us) <= 0) or us[0] < 0.5 or us[-1] > 1.0:
            raise DomainError("table knots must increase within [1/2, 1]")
        if np.any(ds < 0) or not np.any(ds > 0):
            raise DomainError("table densities must be non-negative and not all zero")
        # trim zero segments at both ends of the support
        nz = np.flatnonzero(ds > 0)
        lo, hi = max(nz[0] - 1, 0), min(nz[-1] + 1, len(ds) - 1)
        us, ds = us[lo:hi + 1], ds[lo:hi + 1]
        w = (1.0 - us)[::-1].copy()
        g = ds[::-1].copy()
        seg = 0.5 * (g[1:] + g[:-1]) * np.diff(w)
        object.__setattr__(self, "table", tab)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_g", g)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def w_lo(self) -> float:
        return float(self._w[0])

    @property
    def w_hi(self) -> float:
        return float(self._w[-1])

    @property
    def knots(self):
        return tuple(float(x) for x in self._w)

    def density(self, w):
        w = np.asarray(w, dtype=float)
        return np.interp(w, self._w, self._g, left=0.0, right=0.0)

    def log_density_at_exp(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.density(np.exp(-np.asarray(x, dtype=float))))

    @property
    def total_mass(self) -> float:
        return float(self._cum[-1])

    def _seg_coeffs(self, w):
        k = np.clip(np.searchsorted(self._w, w, side="right") - 1, 0, len(self._w) - 2)
        w0, w1 = self._w[k], self._w[k + 1]
        g0, g1 = self._g[k], self._g[k + 1]
        c1 = (g1 - g0) / (w1 - w0)
        c0 = g0 - c1 * w0
        return k, c0, c1

    def _antider(self, w, which):
        # exact integrals of (1-w)g or w g from w_lo, piecewise polynomial
        w = np.clip(np.asarray(w, dtype=float), self._w[0], self._w[-1])
        nodes = self._w

        def prim(c0, c1, x):
            if which == 1:
                return c0 * x + (c1 - c0) * x ** 2 / 2 - c1 * x ** 3 / 3
            return c0 * x ** 2 / 2 + c1 * x ** 3 / 3

        n = len(nodes) - 1
        seg_vals = np.zeros(n + 1)
        for j in range(n):
            _, c0, c1 = self._seg_coeffs(np.array([0.5 * (nodes[j] + nodes[j + 1])]))
            seg_vals[j + 1] = seg_vals[j] + prim(c0[0], c1[0], nodes[j + 1]) - prim(c0[0], c1[0], nodes[j])
        k, c0, c1 = self._seg_coeffs(w)
        return seg_vals[k] + prim(c0, c1, w) - prim(c0, c1, nodes[k])

    def _F1(self, w):
        return self._antider(w, 1)

    def _F2(self, w):
        return self._antider(w, 2)

    def kernel_spec(self):
        # packed as [m, w_0..w_m, g_0..g_m, cum_0..cum_m]
        m = len(self._w)
        return CODE_TABLE, np.concatenate([[float(m)], self._w, self._g, self._cum])

    def sample_small(self, u):
        u = np.asarray(u, dtype=float)
        target = u * self._cum[-1]
        k = np.clip(np.searchsorted(self._cum, target, side="right") - 1, 0, len(self._w) - 2)
        r = target - self._cum[k]
        h = self._w[k + 1] - self._w[k]
        g0, g1 = self._g[k], self._g[k + 1]
        a = (g1 - g0) / (2.0 * h)
        disc = np.sqrt(np.maximum(g0 * g0 + 4.0 * a * r, 0.0))
        denom = g0 + disc
        x = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
        return np.minimum(self._w[k] + x, self._w[k + 1])


def model_from_config(section: dict) -> DislocationModel:
    """Build a model from a parsed ``[model]`` config section."""
    name = section.get("model", "uniform-binary")
    if name == "uniform-binary":
        return UniformBinary()
    if name == "beta-binary":
        return BetaBinary(float(section["theta"]))
    if name == "table-binary":
        knots = section["table"]
        if isinstance(knots, str):
            knots = parse_table(knots)
        return TableBinary(tuple(knots))
    raise DomainError(f"unknown model {name!r}")


def parse_table(text: str) -> list[tuple[float, float]]:
    """Parse ``"0.5:1.0, 0.75:2.0"`` into knot pairs."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        u, d = item.split(":")
        out.append((float(u), float(d)))
    return out


# --------------------------------------------------------------------------
# Laplace exponent


def p_lower(model: DislocationModel) -> float:
    """Integrability threshold of sum_{j>=2} u_j^{p+1} under nu."""
    if model.w_lo > 0.0:
        return -math.inf
    if isinstance(model, UniformBinary):
        return -2.0
    if isinstance(model, BetaBinary):
        return model.theta - 1.0
    if isinstance(model, TableBinary):
        return -2.0 if model._g[0] > 0 else -3.0
    raise NotImplementedError(type(model))


def _check_domain(model, q):
    pl = p_lower(model)
    if not q > pl + DOMAIN_MARGIN:
        raise DomainError(f"q={q} is not above p_lower={pl}")


def _quad(f, a, b, **kw):
    kw.setdefault("limit", 400)
    val, err = integrate.quad(f, a, b, epsabs=1e-15, epsrel=1e-13, **kw)
    return val, err


def _a_integral(model, q, order):
    """int a_order(w, q) g(w) dw, the large-piece half of kappa^{(order)}."""

    def a(w):
        lw = math.log1p(-w)
        if order == 0:
            return -math.expm1((q + 1.0) * lw)
        e = math.exp((q + 1.0) * lw)
        return -e * lw if order == 1 else -e * lw * lw

    gam = model.singular_exponent
    lo, hi = model.w_lo, model.w_hi
    if lo == 0.0 and gam > 0.0:
        # regular part g(w) w^gam is constant for the power-law family
        reg = lambda w: float(model.density(w)) * w ** gam if w > 0 else 1.0
        lim = (q + 1.0, 1.0, 0.0)[order]

        def f(w):
            return (a(w) / w if w > 0 else lim) * reg(w)

        return _quad(f, 0.0, hi, weight="alg", wvar=(1.0 - gam, 0.0))
    pts = [k for k in model.knots if lo < k < hi] or None
    return _quad(lambda w: a(w) * float(model.density(w)), lo, hi, points=pts)


def _b_integral(model, q, order):
    """int w^{q+1} (log w)^order g(w) dw, the small-piece half."""
    lo, hi = model.w_lo, model.w_hi
    if lo == 0.0:
        # x = -log w; integrand e^{-(q+2)x} (-x)^order g(e^{-x})
        def f(x):
            return math.exp(-(q + 2.0) * x + float(model.log_density_at_exp(x))) * (-x) ** order

        x0 = -math.log(hi)
        inner = sorted(-math.log(k) for k in model.knots if 0.0 < k < hi)
        if inner:
            v1, e1 = _quad(f, x0, inner[-1], points=inner[:-1] or None)
            v2, e2 = _quad(f, inner[-1], math.inf)
            return v1 + v2, e1 + e2
        return _quad(f, x0, math.inf)
    pts = [k for k in model.knots if lo < k < hi] or None
    return _quad(lambda w: w ** (q + 1.0) * math.log(w) ** order * float(model.density(w)), lo, hi, points=pts)


def _kappa_quad(model, q, order=0):
    va, ea = _a_integral(model, q, order)
    vb, eb = _b_integral(model, q, order)
    scale = abs(va) + abs(vb)
    if ea + eb > QUAD_RTOL * max(scale, 1e-300) + 1e-14:
        raise QuadratureError(f"kappa^({order})({q}) error {ea + eb:.3g} vs scale {scale:.3g}")
    return va - vb


def kappa(model: DislocationModel, q: float, method: str = "auto") -> float:
    """Laplace exponent of the tagged fragment.

    ``method`` is ``"auto"`` (closed form when known), ``"closed"`` or ``"quad"``.
    """
    _check_domain(model, q)
    if method != "quad" and isinstance(model, UniformBinary):
        return q / (q + 2.0)
    if method == "closed":
        raise NotImplementedError(f"no closed form for {model.kind}")
    return _kappa_quad(model, q, 0)


def kappa_derivatives(model: DislocationModel, q: float, method: str = "auto") -> tuple[float, float]:
    """(kappa'(q), kappa''(q))."""
    _check_domain(model, q)
    if method != "quad" and isinstance(model, UniformBinary):
        s = q + 2.0
        return 2.0 / (s * s), -4.0 / (s * s * s)
    return _kappa_quad(model, q, 1), _kappa_quad(model, q, 2)


def kappa_prime(model, q, method="auto") -> float:
    _check_domain(model, q)
    if method != "quad" and isinstance(model, UniformBinary):
        return 2.0 / (q + 2.0) ** 2
    return _kappa_quad(model, q, 1)


def levy_tail(model: DislocationModel, y: float) -> float:
    """Rate of tagged-fragment log-jumps exceeding y."""
    if not y > 0:
        raise DomainError("levy_tail needs y > 0")
    return float(model.levy_tail(y))


def truncation_bias_bound(model: DislocationModel, eps: float) -> float:
    """int_0^eps x L(dx) plus the mass of the dropped far tail.

    Bounds |kappa(q) - kappa_eps(q)| for q in [0, 1] once the truncated
    model drops every split with small piece below 1 - e^{-eps}.
    """
    if eps <= 0:
        return 0.0
    near, _ = _quad(lambda x: x * float(model.levy_density(np.array([x]))[0]), 0.0, eps)
    tr = model.truncated(eps)
    far = float(model._F2(tr.w_lo) - model._F2(model.w_lo)) if tr.w_lo > model.w_lo else 0.0
    return near + far


# --------------------------------------------------------------------------
# sampling


def _uniforms(rng: np.random.Generator, n):
    return rng.random(n)


def sample_split(model: DislocationModel, rng: np.random.Generator, eps: float = 0.0) -> tuple[float, float]:
    """One dislocation (s1, s2) with s1 >= s2 > 0 and s1 + s2 = 1."""
    if not model.finite_activity:
        if eps <= 0:
            raise TruncationRequired("infinite-activity model needs eps > 0")
        model = model.truncated(eps)
    w = float(model.sample_small(rng.random()))
    return 1.0 - w, w


def sample_splits(model: DislocationModel, n: int, rng: np.random.Generator, eps: float = 0.0) -> np.ndarray:
    """Vectorised sample_split; returns an (n, 2) array."""
    if not model.finite_activity:
        if eps <= 0:
            raise TruncationRequired("infinite-activity model needs eps > 0")
        model = model.truncated(eps)
    w = model.sample_small(rng.random(n))
    return np.column_stack([1.0 - w, w])


@dataclass(frozen=True)
class SpineJumpLaw:
    """Jump law of xi with Esscher tilts.

    For infinite-activity models only jumps above ``eps`` are kept, so the
    untilted rate is L((eps, oo)).  Finite models ignore ``eps``.
    """

    model: DislocationModel
    eps: float = 0.0

    def __post_init__(self):
        if not self.model.finite_activity and self.eps <= 0:
            raise TruncationRequired("infinite-activity model needs eps > 0")
        if self.eps < 0:
            raise DomainError("eps must be non-negative")

    @property
    def truncating(self) -> bool:
        return not self.model.finite_activity

    @property
    def w_cut(self) -> float:
        """Smallest small-piece size whose large-piece jump is retained."""
        return -math.expm1(-self.eps) if self.truncating else self.model.w_lo

    def _check(self, p):
        pl = p_lower(self.model)
        if math.isfinite(pl) and not p > pl + DOMAIN_MARGIN:
            raise DomainError(f"tilt {p} not above p_lower {pl}")

    def _rates(self, p):
        # (large-piece part, small-piece part) of int e^{-px} L(dx) over x > eps
        m = self.model
        c = p + 1.0
        if isinstance(m, BetaBinary):
            e = c - m.theta
            small = 0.5 ** e / e
            big, _ = _quad(lambda w: (1.0 - w) ** c * w ** (-1.0 - m.theta), self.w_cut, 0.5)
            return big, small
        big, _ = _quad(lambda w: (1.0 - w) ** c * float(m.density(w)), m.w_lo, m.w_hi,
                       points=[k for k in m.knots if m.w_lo < k < m.w_hi] or None)
        return big, m.total_mass - kappa(m, p) - big

    def rate(self, p: float = 0.0) -> float:
        """Total jump rate of xi under the tilt p."""
        self._check(p)
        if isinstance(self.model, UniformBinary):
            return 2.0 / (p + 2.0)
        return float(sum(self._rates(p)))

    def kappa(self, q: float) -> float:
        """Laplace exponent of the retained subordinator."""
        return self.rate(0.0) - self.rate(q)

    def sample(self, p: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """n jumps of xi under the tilted law e^{-px} L(dx) / rate."""
        self._check(p)
        m = self.model
        if isinstance(m, UniformBinary):
            return rng.exponential(1.0 / (p + 2.0), size=n)
        if isinstance(m, BetaBinary):
            return _beta_jumps(m, self.w_cut, p, n, rng, self._rates(p))
        return _thinned_jumps(m, p, n, rng)


def _beta_jumps(m, w_cut, p, n, rng, rates):
    big_rate, small_rate = rates
    c = p + 1.0
    is_big = rng.random(n) * (big_rate + small_rate) < big_rate
    out = np.empty(n)
    ns = int(n - is_big.sum())
    # small-piece jumps: density of w proportional to w^{p - theta} on (0, 1/2]
    us = 1.0 - rng.random(ns)
    out[~is_big] = LOG2 - np.log(us) / (c - m.theta)
    nb = n - ns
    if nb:
        trunc = BetaBinary(m.theta, w_cut)
        bound = max((1.0 - w_cut) ** c, 0.5 ** c)
        got = []
        have = 0
        while have < nb:
            k = max(2 * (nb - have), 64)
            w = trunc.sample_small(rng.random(k))
            w = w[rng.random(k) * bound < (1.0 - w) ** c]
            got.append(w)
            have += w.size
        w = np.concatenate(got)[:nb]
        out[is_big] = -np.log1p(-w)
    return out


def _tilt_weight_bound(m, p):
    c = p + 1.0
    f = lambda w: w ** c + (1.0 - w) ** c
    return max(f(m.w_lo), f(m.w_hi), f(0.5)) if m.w_lo > 0 else max(1.0, f(0.5))


def _thinned_jumps(m, p, n, rng):
    # propose splits from nu/mass; accept with prob (w^{p+1} + (1-w)^{p+1}) / bound
    c = p + 1.0
    bound = _tilt_weight_bound(m, p)
    out = np.empty(n)
    filled = 0
    while filled < n:
        k = max(2 * (n - filled), 64)
        w = m.sample_small(rng.random(k))
        big = (1.0 - w) ** c
        small = w ** c
        acc = rng.random(k) * bound < big + small
        w, big, small = w[acc], big[acc], small[acc]
        take_big = rng.random(w.size) * (big + small) < big
        x = np.where(take_big, -np.log1p(-w), -np.log(w))
        k2 = min(x.size, n - filled)
        out[filled:filled + k2] = x[:k2]
        filled += k2
    return out


def sample_spine_jump(law: SpineJumpLaw, p: float, rng: np.random.Generator) -> float:
    """One jump of xi under the Esscher tilt p."""
    return float(law.sample(p, 1, rng)[0])
