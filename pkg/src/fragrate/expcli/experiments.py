"""Experiment dispatch: one function per experiment kind."""

from __future__ import annotations

import math
import time
import warnings

import numpy as np

from .. import rates, scalefn, simulator
from ..errors import ConfigError, FragrateError, InsufficientPoints, PopulationExplosion
from .config import ExperimentConfig
from .fitting import fit_rate
from .records import Check, ExperimentRecord


# --------------------------------------------------------------------------
# helpers


def _backend(cfg):
    b = cfg["experiment"]["backend"]
    return None if b == "auto" else b


def _need(cfg, key, what="a value"):
    val = cfg.params[key]
    if val is None or (isinstance(val, tuple) and not val):
        raise ConfigError(f"[parameters] {key}: {cfg.kind} needs {what}")
    return val


def _speed(cfg):
    return _need(cfg, "v", "a speed")[0]


def _checkpoints(cfg):
    return np.array(_need(cfg, "t_checkpoints", "checkpoints"), dtype=float)


def _fit_mask(cfg, ck):
    lo = cfg.params["fit_from"]
    hi = cfg.params["fit_to"]
    lo = -math.inf if lo is None else lo
    hi = math.inf if hi is None else hi
    return (ck >= lo - 1e-12) & (ck <= hi + 1e-12)


def _fit(cfg, ck, y, se):
    m = _fit_mask(cfg, ck)
    pts = [(t, yy, s) for t, yy, s, k in zip(ck, y, se, m) if k]
    return fit_rate(pts)


def _check(name, value, reference, cfg, key, detail="", kind="abs"):
    tol = cfg.tol[key]
    if kind == "abs":
        ok = abs(value - reference) <= tol
    elif kind == "rel":
        ok = abs(value - reference) <= tol * abs(reference)
    elif kind == "le":
        ok = value <= reference + tol
    elif kind == "ge":
        ok = value >= reference - tol
    else:
        raise ValueError(kind)
    return Check(name, float(value), float(reference), float(tol), key, bool(ok), detail)


def _desc(cfg, v):
    return scalefn.LevyDescriptor(cfg.model(), v)


def _conf(cfg, v, a=None, b=None):
    a = cfg.params["a"] if a is None else a
    b = cfg.params["b"] if b is None else b
    return scalefn.rho(_desc(cfg, v), a, b, dq=cfg.params["dq"], delta=cfg.params["delta"])


def _batch(cfg, rec, v, a, b, ck, mode, **kw):
    ex = cfg["experiment"]
    try:
        return simulator.simulate_tree_batch(cfg.model(), v, a, b, ck, ex["n_replicas"], cfg.seed, mode=mode,
                                             eps=cfg["model"]["truncation_eps"], max_fragments=ex["max_fragments"],
                                             backend=_backend(cfg), **kw)
    except PopulationExplosion as exc:
        part = exc.partial
        rec.partial = True
        n_bad = int(part.exploded.sum())
        rec.notes.append(f"partial: {n_bad} of {part.n_replicas} replicas hit the fragment cap and were dropped")
        keep = ~part.exploded
        for name in ("n_live", "n_window", "n_good", "mass", "msum", "hsum", "spine_logsize", "spine_good", "zeta",
                     "n_events", "exploded"):
            setattr(part, name, getattr(part, name)[keep])
        return part


def _fit_dict(fit):
    return fit.as_dict() if fit is not None else None


def _try_fit(rec, name, cfg, ck, y, se):
    try:
        f = _fit(cfg, ck, y, se)
    except InsufficientPoints as exc:
        rec.notes.append(f"{name}: {exc}")
        rec.checks.append(Check(f"{name} fit", math.nan, math.nan, 0.0, "", False, str(exc)))
        return None
    rec.fits[name] = f.as_dict()
    if f.excluded:
        rec.notes.append(f"{name}: zero estimates excluded at t = {list(f.excluded)}")
    return f


# --------------------------------------------------------------------------
# presence


def _sandwich(counts, n_se):
    n = counts.shape[0]
    x = counts.astype(float)
    pres = (x > 0).mean(axis=0)
    m1 = x.mean(axis=0)
    x2 = x * x
    m2 = x2.mean(axis=0)
    se_p = np.sqrt(pres * (1 - pres) / max(n - 1, 1))
    se_m1 = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m1)
    rows = []
    for j in range(x.shape[1]):
        if m2[j] > 0:
            c = np.cov(np.vstack([x[:, j], x2[:, j]])) / n if n > 1 else np.zeros((2, 2))
            g = np.array([2 * m1[j] / m2[j], -m1[j] ** 2 / m2[j] ** 2])
            lower = m1[j] ** 2 / m2[j]
            se_lo = math.sqrt(max(float(g @ c @ g), 0.0))
        else:
            lower, se_lo = 0.0, 0.0
        ok_lo = lower - pres[j] <= n_se * math.hypot(se_lo, se_p[j]) + 1e-15
        ok_hi = pres[j] - m1[j] <= n_se * math.hypot(se_p[j], se_m1[j]) + 1e-15
        rows.append((float(pres[j]), float(se_p[j]), float(lower), se_lo, float(m1[j]), float(se_m1[j]),
                     bool(ok_lo and ok_hi)))
    return rows


def presence_probability(cfg: ExperimentConfig, mode: str | None = None, record: ExperimentRecord | None = None):
    """Presence frequencies of G~(t) (classical) or G(t) (confined) per checkpoint.

    Returns ``(rows, batch)``; each row carries the frequency with its binomial
    standard error and the moment sandwich (E#)^2/E(#^2) <= P <= E#.  A
    checkpoint where every replica is extinct is recorded as 0 with the exact
    one-sided 95% upper bound 1 - 0.05^(1/n).
    """
    mode = mode or cfg.params["mode"]
    rec = record if record is not None else ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    v, ck = _speed(cfg), _checkpoints(cfg)
    a, b = cfg.params["a"], cfg.params["b"]
    batch = _batch(cfg, rec, v, a, b, ck, mode)
    n = batch.n_replicas
    counts = batch.counts
    rows = []
    for t, (p, sp, lo, slo, up, sup, ok), surv in zip(ck, _sandwich(counts, cfg.tol["n_se"]), (counts > 0).sum(0)):
        row = {"t": float(t), "presence": p, "se": sp, "lower": lo, "lower_se": slo, "upper": up, "upper_se": sup,
               "sandwich_ok": ok, "survivors": int(surv), "n": n}
        if surv == 0:
            row["upper_95"] = 1.0 - 0.05 ** (1.0 / n)
            rec.notes.append(f"all replicas extinct at t={t:g}; recorded as 0 with one-sided bound")
        rows.append(row)
    return rows, batch


def _advisory(rec, cfg, n, rate, t_max):
    expected = n * math.exp(rate * t_max)
    need = cfg.tol["min_survivors"]
    rec.summary["expected_survivors_at_t_max"] = expected
    if expected < need:
        rec.notes.append(f"advisory: about {expected:.1f} survivors expected at t={t_max:g}, "
                         f"fewer than min_survivors={need:g}; increase n_replicas")


def _presence(cfg, mode):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    model, v, ck = cfg.model(), _speed(cfg), _checkpoints(cfg)
    a, b = cfg.params["a"], cfg.params["b"]
    if mode == simulator.CLASSICAL:
        ref = rates.capital_c(model, v)
        rec.reference = {"name": "C(v)", "value": ref}
    else:
        conf = _conf(cfg, v)
        ref = v - conf.rho
        rec.reference = {"name": "v - rho", "value": ref, "rho": conf.rho}
    if ref >= 0:
        rec.notes.append(f"configuration is not subcritical (reference rate {ref:.4g} >= 0)")
    _advisory(rec, cfg, cfg["experiment"]["n_replicas"], ref, float(ck[-1]))
    rows, _ = presence_probability(cfg, mode, rec)
    ex = cfg["experiment"]
    m2o = None
    if ex["n_paths"] > 0:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if mode == simulator.CLASSICAL:
                m2o = simulator.many_to_one_classical(model, v, a, b, ck, ex["n_paths"], cfg.seed,
                                                      eps=cfg["model"]["truncation_eps"])
            else:
                m2o = simulator.many_to_one_confined(model, v, a, b, ck, ex["n_paths"], cfg.seed,
                                                     eps=cfg["model"]["truncation_eps"], backend=_backend(cfg))
        rec.notes += [str(w.message) for w in caught]
        for row, m, s in zip(rows, m2o.mean, m2o.se):
            row["many_to_one"] = float(m)
            row["many_to_one_se"] = float(s)
        rec.summary["tilt"] = m2o.tilt
    f = _try_fit(rec, "presence", cfg, ck, [r["presence"] for r in rows], [r["se"] for r in rows])
    if f is not None:
        rec.checks.append(_check("presence slope", f.slope, ref, cfg, "slope"))
    if m2o is not None:
        f2 = _try_fit(rec, "many_to_one", cfg, ck, m2o.mean, m2o.se)
        if f2 is not None:
            rec.checks.append(_check("many-to-one slope", f2.slope, ref, cfg, "slope"))
    bad = [r["t"] for r in rows if not r["sandwich_ok"]]
    rec.checks.append(Check("moment sandwich", float(len(bad)), 0.0, cfg.tol["n_se"], "n_se", not bad,
                            f"violations at t = {bad}" if bad else "holds at every checkpoint"))
    rec.points = rows
    return rec


def run_presence_classical(cfg):
    return _presence(cfg, simulator.CLASSICAL)


def run_presence_confined(cfg):
    return _presence(cfg, simulator.CONFINED)


# --------------------------------------------------------------------------
# deterministic tables


def run_rates_table(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    model = cfg.model()
    prof = rates.rate_profile(model)
    vs = list(cfg.params["v"]) or list(np.round(np.linspace(0.02, cfg.params["v_cap"], 50), 12))
    vs = sorted(set(vs) | {prof.v_min, prof.v_typ})
    n_grid = 100_001 if model.kind == "uniform-binary" else 401
    for v in vs:
        c = rates.capital_c(prof, v)
        rec.points.append({"v": float(v), "upsilon": rates.upsilon(prof, v), "C": c,
                           "C_direct": rates.capital_c_direct(prof, v, n_grid=n_grid),
                           "regime": ("critical" if abs(c) <= cfg.tol["zero"] else "supercritical" if c > 0 else "subcritical")})
    rec.reference = {"p_lower": prof.p_lower, "p_bar": prof.p_bar, "v_typ": prof.v_typ, "v_min": prof.v_min,
                     "v_max": prof.v_max}
    rec.summary = dict(rec.reference)
    row_min = next(r for r in rec.points if r["v"] == prof.v_min)
    rec.checks.append(_check("C(v_min) = 0", row_min["C"], 0.0, cfg, "zero"))
    worst = max(rec.points, key=lambda r: abs(r["C"] - r["C_direct"]))
    rec.checks.append(_check("Legendre duality", worst["C"] - worst["C_direct"], 0.0, cfg, "zero",
                             f"worst at v={worst['v']:.6g}"))
    return rec


def run_scale_table(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    v = _speed(cfg)
    a, b, delta = cfg.params["a"], cfg.params["b"], cfg.params["delta"]
    beta = math.log(b / a)
    desc = _desc(cfg, v)
    qs = list(cfg.params["q"]) or [0.0]
    worst = 0.0
    for q in qs:
        g = scalefn.scale_grid(desc, q, beta, delta)
        for x, w in zip(g.x, g.values):
            rec.points.append({"q": float(q), "x": float(x), "W": float(w)})
        lam0 = scalefn.phi(desc, abs(q)) + 1.0
        chk = scalefn.laplace_check(desc, q, [lam0, lam0 + 1.0, lam0 + 3.0], delta=max(delta, 0.01))
        err = max(c.rel_error for c in chk)
        worst = max(worst, err)
        rec.summary[f"q={q!r}"] = {"richardson_error": g.error, "ratio": g.ratio, "laplace_rel_error": err,
                                   "W_end": g.at_end()}
    conf = _conf(cfg, v)
    rec.reference = {"rho": conf.rho, "h0": conf.h0, "beta": beta}
    rec.checks.append(_check("Laplace transform identity", worst, 0.0, cfg, "laplace"))
    rec.checks.append(Check("rho positive", conf.rho, 0.0, 0.0, "", conf.rho > 0))
    return rec


def run_sweep(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    model = cfg.model()
    prof = rates.rate_profile(model)
    vs = _need(cfg, "v", "a speed grid")
    pairs = list(cfg.params["ab_pairs"]) or [(cfg.params["a"], cfg.params["b"])]
    for v in vs:
        c = rates.capital_c(prof, v)
        for a, b in pairs:
            r = _conf(cfg, v, a, b).rho
            rec.points.append({"v": float(v), "a": float(a), "b": float(b), "C": c, "rho": r, "v_minus_rho": v - r,
                               "gap": c - (v - r)})
    worst = min(rec.points, key=lambda r: r["gap"])
    where = f"min gap at v={worst['v']:g}, (a,b)=({worst['a']:g},{worst['b']:g})"
    rec.checks.append(_check("C(v) >= v - rho", worst["gap"], 0.0, cfg, "gap", where, kind="ge"))
    below = [r for r in rec.points if r["v"] < prof.v_min]
    bad = [r for r in below if not r["rho"] > r["v"]]
    rec.checks.append(Check("rho > v below v_min", float(len(bad)), 0.0, 0.0, "", not bad,
                            f"{len(below)} rows with v < v_min"))
    rec.reference = {"v_min": prof.v_min}
    rec.summary = {"n_rows": len(rec.points), "min_gap": worst["gap"]}
    return rec


# --------------------------------------------------------------------------
# growth and martingales


def run_growth(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    v, ck = _speed(cfg), _checkpoints(cfg)
    a = cfg.params["a"]
    ladder = sorted(set((cfg.params["b"],) + tuple(cfg.params["b_ladder"])))
    rows, chosen = [], None
    for b in ladder:
        r = _conf(cfg, v, a, b).rho
        rows.append({"b": b, "rho": r, "v_minus_rho": v - r})
        if v - r > cfg.tol["margin"]:
            chosen = (b, r)
            break
    rec.summary["ladder"] = rows
    if chosen is None:
        rec.checks.append(Check("supercritical window found", math.nan, cfg.tol["margin"], cfg.tol["margin"],
                                "margin", False, f"no b in {ladder} gives v - rho > margin"))
        return rec
    b, r = chosen
    ref = v - r
    rec.reference = {"name": "v - rho", "value": ref, "rho": r, "b": b}
    batch = _batch(cfg, rec, v, a, b, ck, simulator.CONFINED)
    x = batch.n_good.astype(float)
    n = x.shape[0]
    mean, se = x.mean(0), x.std(0, ddof=1) / math.sqrt(n)
    rec.points = [{"t": float(t), "mean_count": float(m), "se": float(s), "presence": float(p)}
                  for t, m, s, p in zip(ck, mean, se, (x > 0).mean(0))]
    f = _try_fit(rec, "mean_count", cfg, ck, mean, se)
    if f is not None:
        rec.checks.append(_check("growth slope", f.slope, ref, cfg, "slope"))
    return rec


def _mean_check(rec, cfg, name, vals, t):
    n = vals.shape[0]
    m = float(vals.mean())
    s = float(vals.std(ddof=1) / math.sqrt(n))
    tol = cfg.tol["n_se"]
    ok = abs(m - 1.0) <= tol * s
    rec.checks.append(Check(f"{name} mean at t={t:g}", m, 1.0, tol, "n_se", bool(ok), f"se={s:.4g}"))
    return m, s


def run_martingale_mean(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    model, ck = cfg.model(), _checkpoints(cfg)
    a, b = cfg.params["a"], cfg.params["b"]
    ps = cfg.params["p"]
    vs = cfg.params["v"]
    if not ps and not vs:
        raise ConfigError("[parameters] martingale-mean needs exponents p and/or a speed v")
    conf = _conf(cfg, vs[0]) if vs else None
    v = vs[0] if vs else 1.0
    batch = _batch(cfg, rec, v, a, b, ck, simulator.CLASSICAL, ptilts=ps, conf=conf)
    for p in ps:
        mt = simulator.additive_martingale(batch, p, model)
        for j, t in enumerate(ck):
            m, s = _mean_check(rec, cfg, f"M^({p:g})", mt[:, j], t)
            rec.points.append({"t": float(t), "martingale": f"additive p={p!r}", "mean": m, "se": s})
    if conf is not None:
        mt = simulator.confined_martingale(batch, conf)
        for j, t in enumerate(ck):
            m, s = _mean_check(rec, cfg, "confined M", mt[:, j], t)
            rec.points.append({"t": float(t), "martingale": "confined", "mean": m, "se": s})
        rec.reference = {"rho": conf.rho, "h0": conf.h0}
    return rec


def run_second_moment(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    v, ck = _speed(cfg), _checkpoints(cfg)
    a, b = cfg.params["a"], cfg.params["b"]
    conf = _conf(cfg, v)
    batch = _batch(cfg, rec, v, a, b, ck, simulator.CONFINED, conf=conf)
    m = simulator.confined_martingale(batch, conf)
    m2 = m * m
    n = m.shape[0]
    mean, se = m2.mean(0), m2.std(0, ddof=1) / math.sqrt(n)
    rec.points = [{"t": float(t), "mean_M": float(x), "second_moment": float(y), "se": float(s)}
                  for t, x, y, s in zip(ck, m.mean(0), mean, se)]
    gap = v - conf.rho
    f = _try_fit(rec, "second_moment", cfg, ck, mean, se)
    if gap < 0:
        rec.reference = {"name": "rho - v", "value": -gap, "rho": conf.rho, "regime": "v < rho"}
        if f is not None:
            rec.checks.append(_check("second-moment slope", f.slope, -gap, cfg, "slope"))
    else:
        rec.reference = {"name": "bounded", "value": 0.0, "rho": conf.rho, "regime": "v > rho"}
        if f is not None:
            rec.checks.append(_check("second moment not growing", f.slope, 0.0, cfg, "flat_slope", kind="le"))
        # E[M_t^2] of a martingale never decreases; boundedness shows up as a vanishing growth rate
        sel = np.flatnonzero(_fit_mask(cfg, ck))
        if sel.size >= 6:
            half = sel.size // 2
            early = fit_rate([(ck[i], mean[i], se[i]) for i in sel[:half + 1]])
            late = fit_rate([(ck[i], mean[i], se[i]) for i in sel[half:]])
            rec.fits["second_moment_early"] = early.as_dict()
            rec.fits["second_moment_late"] = late.as_dict()
            rec.checks.append(Check("second-moment growth decelerates", late.slope, early.slope, 0.0, "",
                                    bool(late.slope < early.slope), "late slope below early slope"))
    return rec


def run_lclt(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    model, v, ck = cfg.model(), _speed(cfg), _checkpoints(cfg)
    a, b = cfg.params["a"], cfg.params["b"]
    target = math.log(b / a)
    n = cfg["experiment"]["n_paths"]
    for t in ck:
        s, e = simulator.local_clt_check(model, v, a, b, float(t), n, cfg.seed, eps=cfg["model"]["truncation_eps"])
        rec.points.append({"t": float(t), "statistic": s, "se": e})
    rec.reference = {"name": "log(b/a)", "value": target}
    last = rec.points[-1]
    rec.checks.append(_check(f"local CLT at t={last['t']:g}", last["statistic"], target, cfg, "rel", kind="rel"))
    return rec


def run_spine_decomposition(cfg):
    rec = ExperimentRecord(cfg.kind, cfg.hash, cfg.seed, cfg.to_text())
    v, ck = _speed(cfg), _checkpoints(cfg)
    a, b = cfg.params["a"], cfg.params["b"]
    conf = _conf(cfg, v)
    ex = cfg["experiment"]
    est = simulator.spine_stabilization(conf, ck, ex["n_paths"], cfg.seed, eps=cfg["model"]["truncation_eps"])
    rec.points = [{"t": float(t), "spine_term": float(m), "se": float(s)} for t, m, s in zip(ck, est.mean, est.se)]
    if ex["n_replicas"] > 0:
        batch = _batch(cfg, rec, v, a, b, ck, simulator.CONFINED, conf=conf, track_spine=True)
        c, d = simulator.spine_decomposition_batch(batch, conf)
        for row, cm, dm in zip(rec.points, c.mean(0), d.mean(0)):
            row["mean_c"] = float(cm)
            row["mean_d"] = float(dm)
    rec.reference = {"rho": conf.rho, "v_minus_rho": v - conf.rho}
    if len(ck) >= 2:
        last, prev = est.mean[-1], est.mean[-2]
        rec.checks.append(_check("spine term stabilizes", float(last), float(prev), cfg, "rel", kind="rel",
                                 detail=f"t={ck[-2]:g} -> {ck[-1]:g}"))
    rec.checks.append(Check("spine term positive", float(est.mean[-1]), 0.0, 0.0, "", bool(est.mean[-1] > 0)))
    return rec


# --------------------------------------------------------------------------
# plain simulation (CLI ``simulate``)


def simulate_record(cfg: ExperimentConfig) -> ExperimentRecord:
    """Tree replicas without pass/fail checks.

    ``points`` holds one row per (replica, checkpoint); ``summary`` holds the
    per-checkpoint means, presence frequencies and martingale means, and
    ``fits`` the fitted slopes of presence and mean count.
    """
    start = time.perf_counter()
    rec = ExperimentRecord("simulate", cfg.hash, cfg.seed, cfg.to_text())
    model, v, ck = cfg.model(), _speed(cfg), _checkpoints(cfg)
    a, b, mode = cfg.params["a"], cfg.params["b"], cfg.params["mode"]
    ps = cfg.params["p"]
    batch = _batch(cfg, rec, v, a, b, ck, mode, ptilts=ps)
    x = batch.counts.astype(float)
    n = x.shape[0]
    for i in range(n):
        for j, t in enumerate(ck):
            rec.points.append({"replica": i, "t": float(t), "n_live": int(batch.n_live[i, j]),
                               "count": int(batch.counts[i, j]), "mass": float(batch.mass[i, j])})
    agg = []
    mts = {p: simulator.additive_martingale(batch, p, model) for p in ps}
    for j, t in enumerate(ck):
        pres = float((x[:, j] > 0).mean())
        row = {"t": float(t), "mean_live": float(batch.n_live[:, j].mean()), "mean_count": float(x[:, j].mean()),
               "count_se": float(x[:, j].std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, "presence": pres,
               "presence_se": math.sqrt(pres * (1 - pres) / max(n - 1, 1)),
               "mean_mass": float(batch.mass[:, j].mean())}
        for p, mt in mts.items():
            row[f"martingale_p={p!r}"] = float(mt[:, j].mean())
        agg.append(row)
    rec.summary = {"mode": mode, "n_replicas": n, "per_checkpoint": agg}
    for name, key, se in (("presence", "presence", "presence_se"), ("mean_count", "mean_count", "count_se")):
        try:
            rec.fits[name] = _fit(cfg, ck, [r[key] for r in agg], [r[se] for r in agg]).as_dict()
        except InsufficientPoints as exc:
            rec.notes.append(f"{name}: {exc}")
    rec.wall_clock = time.perf_counter() - start
    return rec


RUNNERS = {
    "rates-table": run_rates_table,
    "scale-table": run_scale_table,
    "presence-classical": run_presence_classical,
    "presence-confined": run_presence_confined,
    "growth": run_growth,
    "martingale-mean": run_martingale_mean,
    "second-moment": run_second_moment,
    "lclt": run_lclt,
    "cv-vs-rho-sweep": run_sweep,
    "spine-decomposition": run_spine_decomposition,
}


def run(cfg: ExperimentConfig) -> ExperimentRecord:
    """Run the configured experiment; deterministic given the seed."""
    start = time.perf_counter()
    try:
        rec = RUNNERS[cfg.kind](cfg)
    except FragrateError as exc:
        exc.args = (f"{cfg.kind}: {exc}",) + exc.args[1:]
        raise
    rec.wall_clock = time.perf_counter() - start
    if rec.partial:
        rec.checks.append(Check("complete batch", 0.0, 0.0, 0.0, "", False, "partial results"))
    return rec
