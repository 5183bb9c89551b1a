"""Scale functions of Y_t = v t - xi_t and the confinement rate.

W^(q) is obtained from the renewal form

    v W(x) = 1 + int_0^x (q + Pi(y)) W(x - y) dy,        Pi(y) = L((y, oo)),

which has Laplace transform 1/(psi(lambda) - q) with psi(lambda) = v lambda -
kappa(lambda).  The equation is discretised by product integration against
piecewise-linear W and marched forward; three nested meshes give a Richardson
estimate of the discretisation error.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import _kernels
from .dislocation import LOG2, DislocationModel, UniformBinary, kappa, kappa_prime, p_lower
from .errors import DomainError, InvariantViolation, MeshError, RootBracketError, ScanExhausted, SingularTailError

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True)
class LevyDescriptor:
    """Y_t = v t - xi_t, optionally under the Esscher tilt ``tilt``.

    Under the tilt the Levy measure becomes e^{-p x} L(dx) and the Laplace
    exponent becomes psi_p(lambda) = psi(lambda + p) - psi(p).
    """

    model: DislocationModel
    v: float
    tilt: float = 0.0

    def __post_init__(self):
        if not self.v > 0:
            raise DomainError("speed must be positive")
        pl = p_lower(self.model)
        if math.isfinite(pl) and not self.tilt > pl:
            raise DomainError(f"tilt {self.tilt} not above p_lower {pl}")

    def tilted(self, p: float) -> "LevyDescriptor":
        return LevyDescriptor(self.model, self.v, self.tilt + p)

    def kappa(self, lam):
        p = self.tilt
        if p == 0.0:
            return kappa(self.model, lam)
        return kappa(self.model, lam + p) - kappa(self.model, p)

    def kappa_prime(self, lam):
        return kappa_prime(self.model, lam + self.tilt)

    @property
    def lam_lower(self) -> float:
        return p_lower(self.model) - self.tilt

    def exp_tail(self):
        """(c, mu) when the jump tail is c e^{-mu y}, else None."""
        if isinstance(self.model, UniformBinary):
            mu = 2.0 + self.tilt
            return 2.0 / mu, mu
        return None

    def levy_density(self, x):
        x = np.asarray(x, dtype=float)
        dens = self.model.levy_density(x)
        return dens * np.exp(-self.tilt * x) if self.tilt != 0.0 else dens

    def tail(self, y):
        """Jump tail of the (tilted) Levy measure."""
        y = np.asarray(y, dtype=float)
        et = self.exp_tail()
        if et is not None:
            return et[0] * np.exp(-et[1] * y)
        if self.tilt == 0.0:
            return self.model.levy_tail(y)
        return np.array([_tail_quad(self, float(t)) for t in np.atleast_1d(y)]).reshape(y.shape)


def psi(desc: LevyDescriptor, lam: float) -> float:
    """Laplace exponent E e^{lam Y_t} = e^{t psi(lam)}."""
    return desc.v * lam - desc.kappa(lam)


def psi_prime(desc: LevyDescriptor, lam: float) -> float:
    return desc.v - desc.kappa_prime(lam)


def phi(desc: LevyDescriptor, q: float) -> float:
    """Largest root of psi(lambda) = q for q >= 0."""
    if q < 0:
        raise DomainError("phi needs q >= 0")
    # psi is convex; its minimum sits where kappa'(lambda + p) = v
    if psi_prime(desc, 0.0) >= 0:
        lam_min = 0.0
    else:
        lo, hi = 0.0, 1.0
        while psi_prime(desc, hi) < 0:
            lo, hi = hi, 2 * hi
        lam_min = optimize.brentq(lambda x: psi_prime(desc, x), lo, hi, xtol=1e-15)
    if q == 0 and lam_min == 0.0:
        return 0.0
    hi = max(lam_min, 1.0)
    while psi(desc, hi) <= q:
        hi *= 2.0
    root = optimize.brentq(lambda x: psi(desc, x) - q, lam_min, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return root


# --------------------------------------------------------------------------
# product-integration weights


def _tail_quad(desc, y):
    pts = [LOG2] if y < LOG2 else []
    f = lambda x: float(desc.levy_density(np.array([x]))[0])
    total, err = 0.0, 0.0
    edges = [y] + pts
    for a, b in zip(edges, edges[1:] + [math.inf]):
        val, e = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)
        total += val
        err += e
    if not math.isfinite(total) or err > 1e-8 * max(abs(total), 1e-300) + 1e-13:
        raise SingularTailError(f"tail integral beyond {y} failed (err {err:.2g})")
    return total


def _cell_integrals(desc, delta, n_cells):
    """I_k[j] = int over cell j of (x - y_j)^k l_p(x) dx for k = 0, 1, 2."""
    y0 = np.arange(n_cells) * delta
    out = np.zeros((3, n_cells))
    # Gauss-Legendre on each cell; the cell holding log 2 is split at the kink
    j_kink = int(LOG2 // delta)
    m = np.ones(n_cells, bool)
    m[0] = False
    if 0 <= j_kink < n_cells:
        m[j_kink] = False
    nodes = y0[m, None] + delta * _GL_X[None, :]
    vals = desc.levy_density(nodes.ravel()).reshape(nodes.shape)
    rel = nodes - y0[m, None]
    for k in range(3):
        out[k, m] = delta * np.sum(_GL_W[None, :] * vals * rel ** k, axis=1)
    if 0 < j_kink < n_cells:
        yj = y0[j_kink]
        for lo, hi in ((yj, LOG2), (LOG2, yj + delta)):
            if hi <= lo:
                continue
            nodes = lo + (hi - lo) * _GL_X
            vals = desc.levy_density(nodes)
            for k in range(3):
                out[k, j_kink] += np.sum((hi - lo) * _GL_W * vals * (nodes - yj) ** k)
    out[:, 0] = _first_cell(desc, delta)
    if not np.all(np.isfinite(out)):
        raise SingularTailError("non-finite cell integral")
    return out


def _first_cell(desc, delta):
    gam = desc.model.singular_exponent if desc.model.w_lo == 0.0 else 0.0
    f = lambda x: float(desc.levy_density(np.array([x]))[0])
    res = [0.0, 0.0, 0.0]
    hi = min(delta, LOG2)
    for k in (1, 2):
        if gam > 0:
            # l(x) ~ x^{-gam} at 0: integrate x^{k-gam} against the regular part
            reg = lambda x: f(x) * x ** gam if x > 0 else 1.0
            val, err = integrate.quad(reg, 0.0, hi, weight="alg", wvar=(k - gam, 0.0), epsabs=1e-16, epsrel=1e-12)
        else:
            val, err = integrate.quad(lambda x: f(x) * x ** k, 0.0, hi, epsabs=1e-16, epsrel=1e-12)
        if hi < delta:
            v2, e2 = integrate.quad(lambda x: f(x) * x ** k, hi, delta, epsabs=1e-16, epsrel=1e-12)
            val, err = val + v2, err + e2
        if not math.isfinite(val) or err > 1e-9 * abs(val) + 1e-15:
            raise SingularTailError(f"first-cell moment {k} failed (err {err:.2g})")
        res[k] = val
    return res


@functools.lru_cache(maxsize=64)
def _tail_weights(desc: LevyDescriptor, delta: float, n_cells: int):
    """Cell weights (m0 - m1, m1) of the jump tail Pi on cells 0..n_cells-1."""
    et = desc.exp_tail()
    y = np.arange(n_cells) * delta
    if et is not None:
        c, mu = et
        h = mu * delta
        e = c * np.exp(-mu * y)
        m0 = e * (-math.expm1(-h)) / mu
        if h < 1e-2:
            f1 = 0.5 - h / 3 + h * h / 8 - h ** 3 / 30 + h ** 4 / 144
        else:
            f1 = (-math.expm1(-h) - h * math.exp(-h)) / (h * h)
        m1 = e * delta * f1
    else:
        ints = _cell_integrals(desc, delta, n_cells)
        right = (np.arange(n_cells) + 1) * delta
        if desc.tilt == 0.0:
            tail_r = desc.model.levy_tail(right)
        else:
            last = _tail_quad(desc, float(right[-1]))
            # tail at y_{j+1} = tail at the far end plus cell masses j+1..n-1
            rev = np.cumsum(ints[0, ::-1])[::-1]
            tail_r = last + np.concatenate([rev[1:], [0.0]])
        m0 = delta * tail_r + ints[1]
        m1 = 0.5 * delta * tail_r + ints[2] / (2.0 * delta)
    return m0 - m1, m1


def _march(desc, q, delta, n):
    """W^(q) on nodes 0..n at mesh delta."""
    a_t, b_t = _tail_weights(desc, float(delta), n + 1)
    alpha = a_t + 0.5 * q * delta
    beta = b_t + 0.5 * q * delta
    if not desc.v - alpha[0] > 0:
        raise MeshError(f"mesh {delta} too coarse: first cell weight {alpha[0]:.3g} >= v")
    return _kernels.active.volterra_march(alpha, beta, desc.v)


@dataclass(frozen=True)
class ScaleGrid:
    """W^(q) tabulated on the nodes k * delta of [0, beta]."""

    desc: LevyDescriptor
    q: float
    beta: float
    delta: float
    x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    error: float = 0.0
    ratio: float = float("nan")

    @property
    def v(self):
        return self.desc.v

    def __call__(self, x):
        return np.interp(x, self.x, self.values)

    def at_end(self) -> float:
        return float(np.interp(self.beta, self.x, self.values))


def _n_nodes(beta, delta):
    return int(math.ceil(beta / delta - 1e-9))


def _richardson(coarse, mid, fine, check):
    # coarse/mid/fine share the coarse nodes
    d1 = np.max(np.abs(mid - coarse))
    d2 = np.max(np.abs(fine - mid))
    scale = np.max(np.abs(fine))
    if d2 <= 1e-13 * max(scale, 1.0) or d1 <= 1e-13 * max(scale, 1.0):
        return fine, d2, float("nan")
    ratio = d1 / d2
    if check and not 2.0 <= ratio <= 8.0:
        raise MeshError(f"Richardson ratio {ratio:.3g} outside [2, 8]")
    r = min(max(ratio, 2.0), 8.0)
    corr = (fine - mid) / (r - 1.0)
    return fine + corr, float(np.max(np.abs(corr))), ratio


def scale_grid(desc: LevyDescriptor, q: float, beta: float, delta: float, check_ratio: bool = True) -> ScaleGrid:
    """W^(q) on [0, beta] at mesh delta with a Richardson error estimate.

    Solves at delta, delta/2 and delta/4; the contraction ratio of successive
    differences must lie in [2, 8].  The stored values are extrapolated from
    the two finest meshes using the observed ratio.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    if not 0 < delta <= beta / 10 + 1e-15:
        raise DomainError("delta must lie in (0, beta/10]")
    n = _n_nodes(beta, delta)
    w1 = _march(desc, q, delta, n)
    w2 = _march(desc, q, delta / 2, 2 * n)[::2]
    w4 = _march(desc, q, delta / 4, 4 * n)[::4]
    vals, err, ratio = _richardson(w1, w2, w4, check_ratio)
    x = np.arange(n + 1) * delta
    return ScaleGrid(desc, q, beta, delta, x, vals, err, ratio)


def _scale_end_fast(desc, q, beta, delta):
    """W^(q)(beta) and min over interior nodes from two meshes (order-2 extrapolation)."""
    n = _n_nodes(beta, delta)
    d = beta / n
    w1 = _march(desc, q, d, n)
    w2 = _march(desc, q, d / 2, 2 * n)[::2]
    w = (4.0 * w2 - w1) / 3.0
    return float(w[-1]), float(np.min(w[1:-1])) if n > 2 else float(w[0]), float(abs(w2[-1] - w1[-1]) / 3.0)


# --------------------------------------------------------------------------
# confinement rate


@dataclass(frozen=True)
class ConfinedRate:
    """rho(v; a, b) with the tabulated W^(-rho) on [0, log(b/a)]."""

    desc: LevyDescriptor
    a: float
    b: float
    rho: float
    grid: ScaleGrid = field(repr=False)
    scan_step: float = 0.01
    zero_tol: float = 0.0

    @property
    def v(self):
        return self.desc.v

    @property
    def beta(self):
        return math.log(self.b / self.a)

    @property
    def h0(self) -> float:
        return float(h_eval(self, 0.0))

    def h(self, y):
        return h_eval(self, y)


def rho(desc: LevyDescriptor, a: float, b: float, dq: float = 0.01, q_max: float | None = None,
        delta: float = 1e-3, scan_delta: float | None = None, tol: float = 1e-10) -> ConfinedRate:
    """First zero rho of q -> W^(-q)(log(b/a)).

    A coarse scan in steps of ``dq`` (halved whenever W^(-q) already has an
    interior zero while the end value is still positive) brackets the first
    sign change; a fine-mesh Brent solve then locates it.
    """
    if not 0 < a < 1 < b:
        raise DomainError("need 0 < a < 1 < b")
    beta = math.log(b / a)
    if q_max is None:
        q_max = 50.0 * desc.v / beta
    scan_delta = scan_delta or max(delta, beta / 400.0)
    f_coarse = lambda q: _scale_end_fast(desc, -q, beta, scan_delta)
    q_lo = 0.0
    end0, _, _ = f_coarse(0.0)
    if not end0 > 0:
        raise InvariantViolation("W(beta) must be positive")
    step = dq
    q_hi = None
    while q_lo < q_max:
        cand = min(q_lo + step, q_max)
        end, interior, _ = f_coarse(cand)
        if end > 0 and interior <= 0:
            step /= 2.0
            if step < 1e-8:
                raise ScanExhausted("step halving did not isolate the first zero")
            continue
        if end <= 0:
            q_hi = cand
            break
        q_lo = cand
    if q_hi is None:
        raise ScanExhausted(f"no sign change of W^(-q)(beta) for q up to {q_max:.4g}")

    f_fine = lambda q: _scale_end_fast(desc, -q, beta, delta)[0]
    lo, hi = q_lo, q_hi
    # the coarse bracket may be shifted by the coarse-mesh error; widen if needed
    for _ in range(50):
        flo, fhi = f_fine(lo), f_fine(hi)
        if flo > 0 >= fhi:
            break
        if flo <= 0:
            lo = max(0.0, lo - step)
        if fhi > 0:
            hi = hi + step
    else:
        raise RootBracketError("fine-mesh bracket for rho not found")
    r = optimize.brentq(f_fine, lo, hi, xtol=tol, rtol=1e-14)
    # mesh adjusted so that the last node is exactly beta
    grid = scale_grid(desc, -r, beta, beta / _n_nodes(beta, delta), check_ratio=False)
    zero_tol = 10.0 * grid.error + 1e-12
    end = grid.at_end()
    if abs(end) > max(zero_tol, 1e-9):
        raise InvariantViolation(f"|W^(-rho)(beta)| = {end:.3g} exceeds zero tolerance {zero_tol:.3g}")
    if np.any(grid.values[1:-1] <= 0):
        raise InvariantViolation("W^(-rho) is not positive on the interior grid")
    if not r > 0:
        raise InvariantViolation("rho must be positive")
    return ConfinedRate(desc, a, b, r, grid, dq, zero_tol)


def h_eval(conf: ConfinedRate, y):
    """h(y) = W^(-rho)(y - log a) on [log a, log b), zero elsewhere."""
    y = np.asarray(y, dtype=float)
    la, lb = math.log(conf.a), math.log(conf.b)
    x = y - la
    val = np.interp(x, conf.grid.x, conf.grid.values)
    out = np.where((y >= la) & (y < lb), val, 0.0)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# checks


def tilted_scale_check(desc: LevyDescriptor, p: float, q: float, beta: float, delta: float = 1e-3) -> float:
    """max relative gap between W^(psi(p)+q)(x) and e^{px} W_p^(q)(x) on [0, beta]."""
    lhs = scale_grid(desc, psi(desc, p) + q, beta, delta, check_ratio=False)
    rhs = scale_grid(desc.tilted(p), q, beta, delta, check_ratio=False)
    r = np.exp(p * rhs.x) * rhs.values
    den = np.maximum(np.abs(lhs.values), np.abs(r))
    keep = den > 1e-8 * np.max(den)
    return float(np.max(np.abs(lhs.values - r)[keep] / den[keep]))


def rho_vs_c_gap(profile, desc: LevyDescriptor, a: float, b: float, v: float | None = None, **kw) -> float:
    """C(v) - (v - rho(v; a, b)); non-negative up to numerical error."""
    from .rates import capital_c
    v = desc.v if v is None else v
    if v != desc.v:
        desc = LevyDescriptor(desc.model, v, desc.tilt)
    conf = rho(desc, a, b, **kw)
    return capital_c(profile, v) - (v - conf.rho)


@dataclass(frozen=True)
class LaplaceCheck:
    lam: float
    numeric: float
    exact: float
    tail_bound: float

    @property
    def rel_error(self) -> float:
        return abs(self.numeric - self.exact) / abs(self.exact)


def laplace_check(desc: LevyDescriptor, q: float, lams, delta: float = 0.01, tol: float = 1e-4):
    """Compare int e^{-lam x} W^(q)(x) dx with 1/(psi(lam) - q).

    Uses |W^(q)(x)| <= e^{phi(|q|) x} / psi'(phi(|q|)) to choose the truncation
    point so that the neglected tail is below ``tol`` relative; every lam must
    be at least phi(|q|) + 1.  When psi'(phi(|q|)) = 0 the bound is taken
    from a slightly larger q.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    if np.any(lams < phi(desc, abs(q)) + 1.0 - 1e-12):
        raise DomainError(f"lambda must be at least phi(|q|) + 1")
    # W^(q') dominates W^(|q|) for q' >= |q|; step q' up when psi' vanishes at phi(|q|)
    qb = abs(q)
    f0, slope = phi(desc, qb), psi_prime(desc, phi(desc, qb))
    while slope < 1e-6:
        qb += 0.1
        f0 = phi(desc, qb)
        slope = psi_prime(desc, f0)
    exact = np.array([1.0 / (psi(desc, lam) - q) for lam in lams])
    gap = float(np.min(lams)) - f0
    x_end = max(1.0, math.log(1.0 / (tol * gap * slope * float(np.min(np.abs(exact))))) / gap)
    grid = scale_grid(desc, q, x_end, delta, check_ratio=False)
    out = []
    for lam, ex in zip(lams, exact):
        num = integrate.simpson(np.exp(-lam * grid.x) * grid.values, x=grid.x)
        tb = math.exp(-(lam - f0) * grid.x[-1]) / ((lam - f0) * slope)
        out.append(LaplaceCheck(float(lam), float(num), float(ex), tb))
    return out


def _series_once(desc, q, x_max, delta, tol, derivative):
    base = scale_grid(desc, 0.0, x_max, delta, check_ratio=False)
    w = base.values
    z = abs(q) * x_max * float(w[-1])
    k_max, term = 0, float(w[-1])
    while True:
        k_max += 1
        term *= z / k_max
        if term * (k_max + 1 if derivative else 1) < tol and k_max > z:
            break
    n = w.size
    total = np.zeros(n)
    power = w.copy()  # W^{*(k+1)}, starting at k = 0
    for k in range(k_max + 1):
        if derivative:
            if k >= 1:
                total += k * q ** (k - 1) * power
        else:
            total += q ** k * power
        # trapezoid rule for int_0^x power(y) w(x - y) dy
        nxt = np.convolve(power, w)[:n] * delta
        nxt -= 0.5 * delta * (power[0] * w + w[0] * power)
        power = nxt
    return base.x, total, k_max


def convolution_series(desc: LevyDescriptor, q: float, x_max: float, delta: float = 1e-3, tol: float = 1e-10,
                       derivative: bool = False):
    """sum_k q^k W^{*(k+1)}(x) on [0, x_max], or its q-derivative.

    W = W^(0) comes from the Volterra solver and the convolution powers from
    the trapezoid rule, extrapolated over delta and delta/2.  The series stops
    at the first K where sum_{k>K} (|q| x W(x))^k W(x)/k! drops below ``tol``,
    using 0 <= W^{*(k+1)}(x) <= x^k W(x)^{k+1}/k!.
    """
    x, s1, k1 = _series_once(desc, q, x_max, delta, tol, derivative)
    _, s2, k2 = _series_once(desc, q, x_max, delta / 2, tol, derivative)
    s2 = s2[::2][:x.size]
    return x, s2 + (s2 - s1) / 3.0, max(k1, k2)
