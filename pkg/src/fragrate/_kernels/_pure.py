"""Pure-Python/numpy reference implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
The simulation kernels consume the generator in the same order and give
bit-identical output; the Volterra march agrees up to summation-order rounding.
"""

from __future__ import annotations

import math

import numpy as np


def volterra_march(alpha, beta, v):
    """Forward march for v W(x) = 1 + int_0^x K(y) W(x - y) dy.

    ``alpha[j]``/``beta[j]`` are the product-integration weights of K on cell
    j against the left/right hat function.  Returns W on nodes 0..len(alpha)-1.
    """
    alpha = np.ascontiguousarray(alpha, dtype=float)
    beta = np.ascontiguousarray(beta, dtype=float)
    n = alpha.shape[0]
    gam = np.empty(n)
    gam[0] = 0.0
    gam[1:] = alpha[1:] + beta[:-1]
    w = np.empty(n)
    w[0] = 1.0 / v
    denom = v - alpha[0]
    for k in range(1, n):
        s = 1.0 + np.dot(gam[1:k + 1], w[k - 1::-1]) - alpha[k] * w[0]
        w[k] = s / denom
    return w


# --------------------------------------------------------------------------
# split sampler, mirrored in C

def sample_small(code, prm, u):
    """Small-piece size from one uniform; same arithmetic as the C kernel."""
    if code == 0:
        return 0.5 * (1.0 - u)
    if code == 1:
        return math.pow(prm[1] - u * prm[2], -1.0 / prm[0])
    m = int(prm[0])
    ws = prm[1:1 + m]
    gs = prm[1 + m:1 + 2 * m]
    cum = prm[1 + 2 * m:1 + 3 * m]
    target = u * cum[m - 1]
    k = 0
    while k < m - 2 and cum[k + 1] <= target:
        k += 1
    r = target - cum[k]
    h = ws[k + 1] - ws[k]
    g0 = gs[k]
    a = (gs[k + 1] - g0) / (2.0 * h)
    disc = g0 * g0 + 4.0 * a * r
    disc = math.sqrt(disc) if disc > 0.0 else 0.0
    den = g0 + disc
    x = 2.0 * r / den if den > 0.0 else 0.0
    w = ws[k] + x
    return w if w < ws[k + 1] else ws[k + 1]


def h_interp(hv, dx, x):
    """Linear interpolation of the tabulated h at offset x = y - log a >= 0."""
    n = len(hv) - 1
    s = x / dx
    k = int(s)
    if k >= n:
        return hv[n]
    return hv[k] + (hv[k + 1] - hv[k]) * (s - k)


def tree_kernel(gen, code, prm, split_rate, v, log_a, log_b, checkpoints, confined, ptilts, hvals, h_dx,
                prune_level, track_spine, max_fragments,
                n_live, n_window, n_good, mass, msum, hsum, spine_ls, spine_good, event_log=None):
    """One replica of the interval fragmentation, recorded at checkpoints.

    Every live fragment splits at rate ``split_rate``; the next event time is
    exponential with rate N * split_rate and the splitting fragment is chosen
    uniformly.  In confined mode fragments outside the good set are dropped,
    and fragments past their deadline are discarded lazily when picked.

    Returns (status, zeta, n_events, ls, births, goods) where status is 0 on
    success and 1 when ``max_fragments`` was exceeded; ``zeta`` is the last
    time the good set was non-empty (inf if still non-empty at the horizon).
    """
    rnd = gen.random
    ls = [0.0]
    births = [0.0]
    goods = [1]
    ids = [0]
    next_id = 1
    spine = 0 if track_spine else -1
    spine_l = 0.0
    t = 0.0
    zeta = -1.0
    n_ck = len(checkpoints)
    t_end = checkpoints[n_ck - 1]
    ck = 0
    n_ev = 0
    n_p = len(ptilts)
    have_h = len(hvals) > 1
    status = 0
    while True:
        n = len(ls)
        if n > 0:
            u = rnd()
            t_next = t - math.log1p(-u) / (n * split_rate)
        else:
            t_next = math.inf
        while ck < n_ck and checkpoints[ck] < t_next:
            tc = checkpoints[ck]
            cw = 0
            cg = 0
            ms = 0.0
            hs = 0.0
            for p_i in range(n_p):
                msum[ck, p_i] = 0.0
            for i in range(n):
                li = ls[i]
                y = li + v * tc
                if log_a < y < log_b:
                    cw += 1
                ms += math.exp(li)
                for p_i in range(n_p):
                    msum[ck, p_i] += math.exp((ptilts[p_i] + 1.0) * li)
                if goods[i] and y < log_b:
                    cg += 1
                    if have_h:
                        hs += h_interp(hvals, h_dx, y - log_a) * math.exp(li)
            n_live[ck] = n
            n_window[ck] = cw
            n_good[ck] = cg
            mass[ck] = ms
            hsum[ck] = hs
            if spine >= 0:
                spine_ls[ck] = spine_l
                spine_good[ck] = 1 if (goods[spine] and spine_l + v * tc < log_b) else 0
            else:
                spine_ls[ck] = math.nan if confined else spine_l
                spine_good[ck] = 0
            ck += 1
        if ck >= n_ck or t_next > t_end:
            break
        t = t_next
        n_ev += 1
        i = int(rnd() * n)
        if i >= n:
            i = n - 1
        li = ls[i]
        gi = goods[i]
        dead_line = (log_b - li) / v
        if gi and dead_line <= t:
            # good status was lost at the deadline
            if dead_line > zeta:
                zeta = dead_line
        parent_good = gi and li + v * t < log_b
        if confined and not parent_good:
            _swap_remove(ls, births, goods, ids, i)
            if spine == i:
                spine = -1
            elif spine == len(ls):
                spine = i
            continue
        w = sample_small(code, prm, rnd())
        l1 = li + math.log1p(-w)
        l2 = li + math.log(w)
        g1 = 1 if (parent_good and l1 + v * t > log_a) else 0
        g2 = 1 if (parent_good and l2 + v * t > log_a) else 0
        if parent_good and not g1 and not g2:
            if t > zeta:
                zeta = t
        to_spine = 0
        if spine == i:
            to_spine = 1 if rnd() < 1.0 - w else 2
            spine_l = l1 if to_spine == 1 else l2
        if event_log is not None:
            event_log.append((t, ids[i], next_id, l1, next_id + 1, l2))
        keep1 = (g1 or not confined) and l1 > prune_level
        keep2 = (g2 or not confined) and l2 > prune_level
        pid = i
        if keep1:
            ls[i] = l1
            births[i] = t
            goods[i] = g1
            ids[i] = next_id
        else:
            _swap_remove(ls, births, goods, ids, i)
            if spine == len(ls):
                spine = i
            pid = -1
        if to_spine == 1:
            spine = pid
        if keep2:
            ls.append(l2)
            births.append(t)
            goods.append(g2)
            ids.append(next_id + 1)
            if to_spine == 2:
                spine = len(ls) - 1
        elif to_spine == 2:
            spine = -1
        next_id += 2
        if len(ls) > max_fragments:
            status = 1
            break
    # fragments still good at the horizon, or lost at a deadline before it
    for i in range(len(ls)):
        if goods[i]:
            dl = (log_b - ls[i]) / v
            if dl > t_end:
                zeta = math.inf
            elif dl > zeta:
                zeta = dl
    return status, zeta, n_ev, ls, births, goods


def _swap_remove(ls, births, goods, ids, i):
    last = len(ls) - 1
    if i != last:
        ls[i] = ls[last]
        births[i] = births[last]
        goods[i] = goods[last]
        ids[i] = ids[last]
    ls.pop()
    births.pop()
    goods.pop()
    ids.pop()


def spine_exit_kernel(times, sizes, counts, y0, beta, v, checkpoints, exit_time, xi_out):
    """First exit of Y = y0 + v t - xi from (0, beta) and xi at checkpoints.

    Rows of ``times``/``sizes`` hold each path's jumps (padded beyond
    ``counts``).  Y rises linearly between jumps, so it can leave through beta
    only inside a segment and through 0 only at a jump.  ``exit_time`` is inf
    when the path stays inside up to the last checkpoint.
    """
    n, m = times.shape
    t_end = checkpoints[-1]
    cols = np.arange(m + 1)[None, :]
    cnt = counts[:, None]
    s_after = np.cumsum(sizes, axis=1)
    s_full = np.concatenate([np.zeros((n, 1)), s_after], axis=1)
    t_full = np.concatenate([np.zeros((n, 1)), times], axis=1)
    s_prev = s_full
    t_prev = t_full
    # segment j runs from jump j-1 (or 0) to jump j (or the horizon)
    t_seg_end = np.where(cols < cnt, np.concatenate([times, np.full((n, 1), np.inf)], axis=1), t_end)
    valid = cols <= cnt
    with np.errstate(invalid="ignore"):
        y_top = t_prev + (beta - (y0 + v * t_prev - s_prev)) / v
    top = np.where(valid & (y_top <= t_seg_end), y_top, np.inf)
    jump_valid = np.arange(m)[None, :] < cnt
    bottom = np.where(jump_valid & (y0 + v * times - s_after <= 0.0), times, np.inf)
    ex = np.minimum(top.min(axis=1), bottom.min(axis=1) if m else np.inf)
    exit_time[:] = ex
    for ck, tc in enumerate(checkpoints):
        idx = np.sum(jump_valid & (times <= tc), axis=1)
        xi_out[:, ck] = s_full[np.arange(n), idx]
