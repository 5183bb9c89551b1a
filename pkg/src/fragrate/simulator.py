"""Exact simulation of interval fragmentations and of the tagged fragment.

Tree runs are event driven: every live fragment carries an exponential
clock with rate equal to the total mass of the (truncated) dislocation
measure, so there is no time discretisation.  Spine estimators reweight
paths of the tagged-fragment subordinator xi simulated under an Esscher tilt.

Replica ``i`` of a run with master seed ``s`` draws from
``PCG64(SeedSequence(s, spawn_key=(i,)))``; spine batches use the same rule
with the chunk index as the key.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dislocation import DEFAULT_EPS, DislocationModel, SpineJumpLaw, UniformBinary, kappa, kappa_derivatives
from .errors import DegenerateWeights, DomainError, PopulationExplosion, SpineDead
from .rates import upsilon
from .scalefn import ConfinedRate

CLASSICAL = "classical"
CONFINED = "confined"
SPINE_CHUNK = 100_000
DEFAULT_MAX_FRAGMENTS = 10_000_000


def replica_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replica ``index`` of master seed ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sim_model(model: DislocationModel, eps: float = DEFAULT_EPS) -> DislocationModel:
    """The finite-activity model actually simulated in trees."""
    return model if model.finite_activity else model.truncated(eps)


def _workers():
    try:
        return max(1, int(os.environ.get("FRAGRATE_WORKERS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# tree simulation


@dataclass
class FragmentPopulation:
    """Live fragments at time ``time``.

    ``good`` marks membership of the confined set: the fragment and all its
    ancestors stayed inside (a e^{-vs}, b e^{-vs}).  Kill deadlines follow
    from ``log_sizes``: a fragment leaves the window at (log b - log size)/v.
    """

    time: float
    log_sizes: np.ndarray
    birth_times: np.ndarray
    good: np.ndarray
    v: float
    a: float
    b: float
    model: DislocationModel

    @property
    def kill_deadlines(self) -> np.ndarray:
        return (math.log(self.b) - self.log_sizes) / self.v

    @property
    def n_total(self) -> int:
        return int(self.log_sizes.size)

    @property
    def n_confined_good(self) -> int:
        return int(np.sum(self.good))

    @property
    def total_mass(self) -> float:
        return float(np.sum(np.exp(self.log_sizes)))

    def in_window(self) -> np.ndarray:
        y = self.log_sizes + self.v * self.time
        return (y > math.log(self.a)) & (y < math.log(self.b))


@dataclass
class TreeTrajectory:
    """Counters of one tree replica at the checkpoints."""

    checkpoints: np.ndarray
    mode: str
    n_live: np.ndarray
    n_window: np.ndarray
    n_good: np.ndarray
    mass: np.ndarray
    msum: np.ndarray
    hsum: np.ndarray
    spine_logsize: np.ndarray
    spine_good: np.ndarray
    zeta: float
    n_events: int
    exploded: bool
    population: FragmentPopulation | None = None
    events: list | None = None

    @property
    def counts(self) -> np.ndarray:
        """#G~(t) in classical mode, #G(t) in confined mode."""
        return self.n_window if self.mode == CLASSICAL else self.n_good


@dataclass
class TreeBatch:
    """Stacked counters of many replicas; arrays are (replica, checkpoint)."""

    checkpoints: np.ndarray
    mode: str
    seed: int
    n_live: np.ndarray
    n_window: np.ndarray
    n_good: np.ndarray
    mass: np.ndarray
    msum: np.ndarray
    hsum: np.ndarray
    spine_logsize: np.ndarray
    spine_good: np.ndarray
    zeta: np.ndarray
    n_events: np.ndarray
    exploded: np.ndarray
    ptilts: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_replicas(self) -> int:
        return int(self.n_live.shape[0])

    @property
    def counts(self) -> np.ndarray:
        return self.n_window if self.mode == CLASSICAL else self.n_good


def _prepare(model, v, a, b, checkpoints, mode, eps, conf):
    if not 0 < a < 1 < b:
        raise DomainError("need 0 < a < 1 < b")
    if not v > 0:
        raise DomainError("speed must be positive")
    if mode not in (CLASSICAL, CONFINED):
        raise DomainError(f"unknown mode {mode!r}")
    ck = np.asarray(checkpoints, dtype=float)
    if ck.ndim != 1 or ck.size == 0 or np.any(np.diff(ck) <= 0) or ck[0] < 0:
        raise DomainError("checkpoints must be increasing and non-negative")
    m = sim_model(model, eps)
    code, prm = m.kernel_spec()
    if conf is not None:
        if abs(conf.a - a) > 1e-15 or abs(conf.b - b) > 1e-15 or abs(conf.v - v) > 1e-15:
            raise DomainError("confined rate was computed for different (v, a, b)")
        hv, hdx = np.ascontiguousarray(conf.grid.values), float(conf.grid.delta)
    else:
        hv, hdx = np.zeros(1), 1.0
    return m, code, prm, ck, hv, hdx


def _run_one(gen, m, code, prm, v, a, b, ck, mode, ptilts, hv, hdx, prune_level, track_spine, max_fragments,
             record_events, backend):
    kern = _kernels.get_backend("python" if record_events else backend)
    k = ck.size
    n_live = np.full(k, -1, dtype=np.int64)
    n_window = np.full(k, -1, dtype=np.int64)
    n_good = np.full(k, -1, dtype=np.int64)
    mass = np.full(k, np.nan)
    msum = np.full((k, len(ptilts)), np.nan)
    hsum = np.full(k, np.nan)
    sls = np.full(k, np.nan)
    sgood = np.zeros(k, dtype=np.int8)
    events = [] if record_events else None
    status, zeta, n_ev, ls, births, goods = kern.tree_kernel(
        gen, code, prm, float(m.total_mass), float(v), math.log(a), math.log(b), ck, int(mode == CONFINED),
        np.asarray(ptilts, dtype=float), hv, hdx, float(prune_level), int(track_spine), int(max_fragments),
        n_live, n_window, n_good, mass, msum, hsum, sls, sgood, event_log=events)
    return (n_live, n_window, n_good, mass, msum, hsum, sls, sgood, zeta, n_ev, status, ls, births, goods, events)


def _prune_level(mode, prune, ck, v, a, ptilts, conf, track_spine):
    if prune is None:
        prune = mode == CLASSICAL and not ptilts and not track_spine
    if not prune:
        return -math.inf
    # a fragment with log size <= log a - v t_max never re-enters any window
    return math.log(a) - v * float(ck[-1])


def simulate_tree(model: DislocationModel, v: float, a: float, b: float, checkpoints, mode: str = CONFINED,
                  rng=None, eps: float = DEFAULT_EPS, ptilts=(), conf: ConfinedRate | None = None,
                  track_spine: bool = False, max_fragments: int = DEFAULT_MAX_FRAGMENTS, prune: bool | None = None,
                  record_events: bool = False, backend: str | None = None) -> TreeTrajectory:
    """One replica of the fragmentation started from the unit interval.

    ``ptilts`` requests the additive sums sum_i |J_i|^{p+1}; ``conf`` enables
    the confined-martingale sums.  Classical mode prunes fragments that can
    never re-enter a window unless sums over all fragments are requested.
    ``record_events`` keeps the genealogy (parent id, child ids and log sizes
    per split) and runs on the python kernel.
    """
    m, code, prm, ck, hv, hdx = _prepare(model, v, a, b, checkpoints, mode, eps, conf)
    ptilts = tuple(float(p) for p in ptilts)
    pl = _prune_level(mode, prune, ck, v, a, ptilts, conf, track_spine)
    backend_name = None if backend is None else backend
    res = _run_one(_as_rng(rng), m, code, prm, v, a, b, ck, mode, ptilts, hv, hdx, pl, track_spine, max_fragments,
                   record_events, backend_name)
    (n_live, n_window, n_good, mass, msum, hsum, sls, sgood, zeta, n_ev, status, ls, births, goods, events) = res
    t_end = float(ck[-1])
    ls = np.asarray(ls, dtype=float)
    goods = np.asarray(goods, dtype=bool) & (ls + v * t_end < math.log(b))
    pop = FragmentPopulation(t_end, ls, np.asarray(births, dtype=float), goods, v, a, b, m)
    return TreeTrajectory(ck, mode, n_live, n_window, n_good, mass, msum, hsum, sls, sgood, float(zeta), int(n_ev),
                          bool(status), pop, events)


def _batch_chunk(args):
    (seed, lo, hi, m, code, prm, v, a, b, ck, mode, ptilts, hv, hdx, pl, track_spine, max_fragments, backend) = args
    rows = []
    for i in range(lo, hi):
        rows.append(_run_one(replica_rng(seed, i), m, code, prm, v, a, b, ck, mode, ptilts, hv, hdx, pl, track_spine,
                             max_fragments, False, backend)[:11])
    return rows


def simulate_tree_batch(model: DislocationModel, v: float, a: float, b: float, checkpoints, n_replicas: int,
                        seed: int, mode: str = CONFINED, eps: float = DEFAULT_EPS, ptilts=(),
                        conf: ConfinedRate | None = None, track_spine: bool = False,
                        max_fragments: int = DEFAULT_MAX_FRAGMENTS, prune: bool | None = None,
                        allow_partial: bool = False, backend: str | None = None) -> TreeBatch:
    """Independent replicas; results do not depend on the worker count.

    Raises PopulationExplosion (carrying the partial batch as ``.partial``)
    when a replica exceeds ``max_fragments``, unless ``allow_partial``.
    """
    m, code, prm, ck, hv, hdx = _prepare(model, v, a, b, checkpoints, mode, eps, conf)
    ptilts = tuple(float(p) for p in ptilts)
    pl = _prune_level(mode, prune, ck, v, a, ptilts, conf, track_spine)
    workers = _workers()
    n_chunks = max(1, min(workers * 4, n_replicas)) if workers > 1 else 1
    edges = np.linspace(0, n_replicas, n_chunks + 1).astype(int)
    jobs = [(seed, int(lo), int(hi), m, code, prm, v, a, b, ck, mode, ptilts, hv, hdx, pl, track_spine, max_fragments,
             backend) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_batch_chunk, jobs))
    else:
        parts = [_batch_chunk(j) for j in jobs]
    rows = [r for part in parts for r in part]
    cols = list(zip(*rows)) if rows else [[]] * 11
    batch = TreeBatch(ck, mode, seed, np.array(cols[0]), np.array(cols[1]), np.array(cols[2]), np.array(cols[3]),
                      np.array(cols[4]), np.array(cols[5]), np.array(cols[6]), np.array(cols[7]),
                      np.array(cols[8], dtype=float), np.array(cols[9]), np.array(cols[10], dtype=bool), ptilts,
                      {"v": v, "a": a, "b": b, "eps": eps, "split_rate": float(m.total_mass), "model": m.kind})
    if batch.exploded.any() and not allow_partial:
        err = PopulationExplosion(f"{int(batch.exploded.sum())} replica(s) exceeded {max_fragments} fragments")
        err.partial = batch
        raise err
    return batch


# --------------------------------------------------------------------------
# martingales


@dataclass(frozen=True)
class Additive:
    p: float


@dataclass(frozen=True)
class Confined:
    conf: ConfinedRate


def martingale_eval(pop: FragmentPopulation, kind) -> float:
    """M_t^(p) or the confined martingale for a population snapshot."""
    t = pop.time
    if isinstance(kind, Additive):
        return float(np.sum(np.exp((kind.p + 1.0) * pop.log_sizes)) * math.exp(kappa(pop.model, kind.p) * t))
    if isinstance(kind, Confined):
        c = kind.conf
        ls = pop.log_sizes[pop.good]
        h = np.atleast_1d(c.h(c.v * t + ls))
        return float(math.exp(c.rho * t) / c.h0 * np.sum(h * np.exp(ls)))
    raise DomainError(f"unknown martingale kind {kind!r}")


def additive_martingale(batch: TreeBatch, p: float, model: DislocationModel) -> np.ndarray:
    """M_t^(p) per replica and checkpoint, from the kernel sums."""
    j = batch.ptilts.index(float(p))
    m = sim_model(model, batch.meta.get("eps", DEFAULT_EPS))
    return batch.msum[:, :, j] * np.exp(kappa(m, p) * batch.checkpoints)[None, :]


def confined_martingale(batch, conf: ConfinedRate) -> np.ndarray:
    """M_t^{(v,a,b)} = e^{rho t}/h(0) sum_good h(vt + log|J|) |J|."""
    return batch.hsum * (np.exp(conf.rho * batch.checkpoints) / conf.h0)


def spine_decomposition(traj, conf: ConfinedRate, index: int = -1):
    """(c_t, d_t): the tagged fragment's share of the confined martingale and the rest.

    ``traj`` is a TreeTrajectory with a tracked spine.  Raises SpineDead when
    the tagged fragment has left the confined set.
    """
    t = float(traj.checkpoints[index])
    m_t = float(traj.hsum[index]) * math.exp(conf.rho * t) / conf.h0
    if not traj.spine_good[index]:
        raise SpineDead(f"tagged fragment is not in the confined set at t={t}")
    ls = float(traj.spine_logsize[index])
    c_t = math.exp(conf.rho * t) / conf.h0 * float(conf.h(conf.v * t + ls)) * math.exp(ls)
    return c_t, m_t - c_t


def spine_decomposition_batch(batch: TreeBatch, conf: ConfinedRate):
    """c_t and d_t arrays; c_t = 0 where the spine is dead."""
    t = batch.checkpoints[None, :]
    ls = np.where(batch.spine_good.astype(bool), batch.spine_logsize, -np.inf)
    h = np.where(np.isfinite(ls), conf.h(conf.v * t + np.where(np.isfinite(ls), ls, 0.0)), 0.0)
    c = np.exp(conf.rho * t) / conf.h0 * h * np.exp(ls)
    return c, confined_martingale(batch, conf) - c


# --------------------------------------------------------------------------
# spine paths


@dataclass
class SpinePath:
    """One path of xi on [0, t] under the Esscher tilt p."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray
    tilt: float
    t: float
    kappa_p: float

    @property
    def xi_t(self) -> float:
        return float(np.sum(self.jump_sizes))

    @property
    def likelihood_ratio(self) -> float:
        """dP/dP^(p) on [0, t] = e^{p xi_t - t kappa(p)}."""
        return math.exp(self.tilt * self.xi_t - self.t * self.kappa_p)

    def xi_at(self, s):
        s = np.asarray(s, dtype=float)
        cs = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        return cs[np.searchsorted(self.jump_times, s, side="right")]


def spine_law(model: DislocationModel, eps: float = DEFAULT_EPS) -> SpineJumpLaw:
    return SpineJumpLaw(model, 0.0 if model.finite_activity else eps)


def simulate_spine(model: DislocationModel, p: float, t: float, rng=None, eps: float = DEFAULT_EPS) -> SpinePath:
    """Compound-Poisson path of xi under P^(p), exact at the event times."""
    law = spine_law(model, eps)
    rng = _as_rng(rng)
    n = int(rng.poisson(law.rate(p) * t))
    times = np.sort(rng.random(n) * t)
    sizes = law.sample(p, n, rng)
    return SpinePath(times, sizes, p, t, law.kappa(p))


def spine_xi_at(law: SpineJumpLaw, p: float, checkpoints, n_paths: int, rng) -> np.ndarray:
    """xi at each checkpoint for n_paths independent tilted paths."""
    ck = np.asarray(checkpoints, dtype=float)
    dt = np.diff(np.concatenate([[0.0], ck]))
    rate = law.rate(p)
    counts = rng.poisson(rate * dt[None, :], size=(n_paths, ck.size))
    if isinstance(law.model, UniformBinary):
        inc = rng.gamma(counts, 1.0 / (p + 2.0))
    else:
        sizes = law.sample(p, int(counts.sum()), rng)
        cs = np.concatenate([[0.0], np.cumsum(sizes)])
        ends = np.cumsum(counts.ravel())
        inc = (cs[ends] - cs[ends - counts.ravel()]).reshape(counts.shape)
    return np.cumsum(inc, axis=1)


def spine_paths_padded(law: SpineJumpLaw, p: float, t_end: float, n_paths: int, rng):
    """Jump times and sizes of n_paths tilted paths as padded row arrays."""
    counts = rng.poisson(law.rate(p) * t_end, size=n_paths).astype(np.int64)
    width = int(counts.max()) if n_paths else 0
    raw = rng.random((n_paths, width)) * t_end
    mask = np.arange(width)[None, :] < counts[:, None]
    times = np.sort(np.where(mask, raw, np.inf), axis=1)
    sizes = np.zeros((n_paths, width))
    sizes[mask] = law.sample(p, int(counts.sum()), rng)
    return np.ascontiguousarray(times), sizes, counts


def spine_exits(law, p, checkpoints, n_paths, rng, a, b, v, backend=None):
    """Exit times of Y = vt - xi - log a from (0, log(b/a)) and xi at checkpoints."""
    ck = np.asarray(checkpoints, dtype=float)
    times, sizes, counts = spine_paths_padded(law, p, float(ck[-1]), n_paths, rng)
    ex = np.empty(n_paths)
    xi = np.empty((n_paths, ck.size))
    kern = _kernels.get_backend(backend)
    kern.spine_exit_kernel(times, sizes, counts, -math.log(a), math.log(b / a), float(v), ck, ex, xi)
    return ex, xi


@dataclass
class Estimate:
    """Per-checkpoint Monte Carlo means with standard errors."""

    checkpoints: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    ess: np.ndarray
    n: int
    tilt: float
    meta: dict = field(default_factory=dict)


class _Acc:
    """Streaming sums of weights over chunks."""

    def __init__(self, k):
        self.s1 = np.zeros(k)
        self.s2 = np.zeros(k)
        self.n = 0

    def add(self, w):
        self.s1 += w.sum(axis=0)
        self.s2 += (w * w).sum(axis=0)
        self.n += w.shape[0]

    def result(self, ck, tilt, meta=None):
        n = self.n
        mean = self.s1 / n
        var = np.maximum(self.s2 / n - mean ** 2, 0.0)
        se = np.sqrt(var / max(n - 1, 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            ess = np.where(self.s2 > 0, self.s1 ** 2 / self.s2, 0.0)
        return Estimate(ck, mean, se, ess, n, tilt, meta or {})


def _chunks(n_paths):
    k = 0
    while n_paths > 0:
        m = min(SPINE_CHUNK, n_paths)
        yield k, m
        k += 1
        n_paths -= m


def _warn_ess(est: Estimate):
    mask = est.mean > 0
    if np.any(est.ess[mask] < 0.01 * est.n):
        warnings.warn(f"effective sample size below 1% of {est.n} paths", DegenerateWeights, stacklevel=3)


def _default_tilt(model, v, p):
    return upsilon(model, v) if p is None else float(p)


def many_to_one_classical(model: DislocationModel, v: float, a: float, b: float, checkpoints, n_paths: int,
                          seed: int, p: float | None = None, eps: float = DEFAULT_EPS) -> Estimate:
    """E #G~(t) as E^(p)[e^{(p+1) xi_t - t kappa(p)} 1{vt - xi_t in (log a, log b)}]."""
    p = _default_tilt(model, v, p)
    law = spine_law(model, eps)
    kp = law.kappa(p)
    ck = np.asarray(checkpoints, dtype=float)
    acc = _Acc(ck.size)
    la, lb = math.log(a), math.log(b)
    for k, m in _chunks(n_paths):
        xi = spine_xi_at(law, p, ck, m, replica_rng(seed, k))
        y = v * ck[None, :] - xi
        w = np.where((y > la) & (y < lb), np.exp((p + 1.0) * xi - ck[None, :] * kp), 0.0)
        acc.add(w)
    est = acc.result(ck, p, {"kappa_p": kp, "eps": law.eps})
    _warn_ess(est)
    return est


def many_to_one_confined(model: DislocationModel, v: float, a: float, b: float, checkpoints, n_paths: int,
                         seed: int, p: float | None = None, eps: float = DEFAULT_EPS,
                         backend: str | None = None) -> Estimate:
    """E #G(t) as E^(p)[e^{(p+1) xi_t - t kappa(p)} 1{Y stays in (0, beta) on [0, t]}]."""
    p = _default_tilt(model, v, p)
    law = spine_law(model, eps)
    kp = law.kappa(p)
    ck = np.asarray(checkpoints, dtype=float)
    acc = _Acc(ck.size)
    for k, m in _chunks(n_paths):
        ex, xi = spine_exits(law, p, ck, m, replica_rng(seed, k), a, b, v, backend)
        alive = ex[:, None] > ck[None, :]
        w = np.where(alive, np.exp((p + 1.0) * xi - ck[None, :] * kp), 0.0)
        acc.add(w)
    est = acc.result(ck, p, {"kappa_p": kp, "eps": law.eps})
    _warn_ess(est)
    return est


def spine_stabilization(conf: ConfinedRate, checkpoints, n_paths: int, seed: int, p: float | None = None,
                        eps: float = DEFAULT_EPS) -> Estimate:
    """E[D_t c_t] e^{-(rho - v) t}, the h-transformed mean of the spine term.

    D_t = e^{rho t} 1{t < T} h(Y_t)/h(0) is the spine martingale and
    c_t = D_t |I_V(t)|, so E[D_t c_t] = E[D_t^2 e^{-xi_t}], estimated from
    tilted spine paths.
    """
    model, v, a, b = conf.desc.model, conf.v, conf.a, conf.b
    p = _default_tilt(model, v, p)
    law = spine_law(model, eps)
    kp = law.kappa(p)
    ck = np.asarray(checkpoints, dtype=float)
    acc = _Acc(ck.size)
    for k, m in _chunks(n_paths):
        ex, xi = spine_exits(law, p, ck, m, replica_rng(seed, k), a, b, v)
        alive = ex[:, None] > ck[None, :]
        hv = conf.h(v * ck[None, :] - xi)
        d = np.exp(conf.rho * ck)[None, :] * hv / conf.h0
        lr = np.exp(p * xi - ck[None, :] * kp)
        w = np.where(alive, lr * d * d * np.exp(-xi), 0.0) * np.exp(-(conf.rho - v) * ck)[None, :]
        acc.add(w)
    return acc.result(ck, p, {"kappa_p": kp})


def local_clt_check(model: DislocationModel, v: float, a: float, b: float, t: float, n_paths: int, seed: int,
                    eps: float = DEFAULT_EPS):
    """sigma_p sqrt(2 pi t) P^(p)(vt - xi_t in [log a, log b]) with p = Upsilon_v.

    Returns (statistic, standard error); the limit as t grows is log(b/a).
    """
    if not a < b:
        raise DomainError("need a < b")
    p = upsilon(model, v)
    sigma = math.sqrt(-kappa_derivatives(model, p)[1])
    law = spine_law(model, eps)
    hits = 0
    total = 0
    for k, m in _chunks(n_paths):
        xi = spine_xi_at(law, p, [t], m, replica_rng(seed, k))[:, 0]
        y = v * t - xi
        hits += int(np.sum((y >= math.log(a)) & (y <= math.log(b))))
        total += m
    ph = hits / total
    scale = sigma * math.sqrt(2.0 * math.pi * t)
    return scale * ph, scale * math.sqrt(ph * (1 - ph) / total)
