# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_pure.py`` for the reference semantics."""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, log1p, pow, sqrt, INFINITY, NAN
from libc.stdint cimport int64_t, int8_t
from libc.stdlib cimport free, malloc, realloc
from numpy.random cimport bitgen_t

cnp.import_array()


def volterra_march(alpha_in, beta_in, double v):
    cdef double[::1] alpha = np.ascontiguousarray(alpha_in, dtype=np.float64)
    cdef double[::1] beta = np.ascontiguousarray(beta_in, dtype=np.float64)
    cdef Py_ssize_t n = alpha.shape[0]
    out = np.empty(n)
    cdef double[::1] w = out
    cdef double[::1] gam = np.empty(n)
    cdef Py_ssize_t k, j
    cdef double s, denom = v - alpha[0]
    gam[0] = 0.0
    for k in range(1, n):
        gam[k] = alpha[k] + beta[k - 1]
    w[0] = 1.0 / v
    for k in range(1, n):
        s = 0.0
        for j in range(1, k + 1):
            s += gam[j] * w[k - j]
        w[k] = (1.0 + s - alpha[k] * w[0]) / denom
    return out


cdef inline double _sample_small(int code, double[::1] prm, double u) noexcept nogil:
    cdef int m, k
    cdef double target, r, h, g0, a, disc, den, x, w
    if code == 0:
        return 0.5 * (1.0 - u)
    if code == 1:
        return pow(prm[1] - u * prm[2], -1.0 / prm[0])
    m = <int> prm[0]
    target = u * prm[3 * m]
    k = 0
    while k < m - 2 and prm[1 + 2 * m + k + 1] <= target:
        k += 1
    r = target - prm[1 + 2 * m + k]
    h = prm[1 + k + 1] - prm[1 + k]
    g0 = prm[1 + m + k]
    a = (prm[1 + m + k + 1] - g0) / (2.0 * h)
    disc = g0 * g0 + 4.0 * a * r
    disc = sqrt(disc) if disc > 0.0 else 0.0
    den = g0 + disc
    x = 2.0 * r / den if den > 0.0 else 0.0
    w = prm[1 + k] + x
    return w if w < prm[1 + k + 1] else prm[1 + k + 1]


def sample_small(int code, prm_in, double u):
    cdef double[::1] prm = np.ascontiguousarray(prm_in, dtype=np.float64)
    return _sample_small(code, prm, u)


cdef inline double _h_interp(double[::1] hv, double dx, double x) noexcept nogil:
    cdef Py_ssize_t n = hv.shape[0] - 1
    cdef double s = x / dx
    cdef Py_ssize_t k = <Py_ssize_t> s
    if k >= n:
        return hv[n]
    return hv[k] + (hv[k + 1] - hv[k]) * (s - k)


def h_interp(hv_in, double dx, double x):
    cdef double[::1] hv = np.ascontiguousarray(hv_in, dtype=np.float64)
    return _h_interp(hv, dx, x)


cdef struct Pop:
    double *ls
    double *births
    int8_t *goods
    Py_ssize_t n
    Py_ssize_t cap


cdef int _grow(Pop *p) noexcept nogil:
    cdef Py_ssize_t cap = p.cap * 2
    cdef double *a = <double *> realloc(p.ls, cap * sizeof(double))
    if a == NULL:
        return -1
    p.ls = a
    a = <double *> realloc(p.births, cap * sizeof(double))
    if a == NULL:
        return -1
    p.births = a
    cdef int8_t *g = <int8_t *> realloc(p.goods, cap * sizeof(int8_t))
    if g == NULL:
        return -1
    p.goods = g
    p.cap = cap
    return 0


cdef inline void _swap_remove(Pop *p, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t last = p.n - 1
    if i != last:
        p.ls[i] = p.ls[last]
        p.births[i] = p.births[last]
        p.goods[i] = p.goods[last]
    p.n -= 1


def tree_kernel(gen, int code, prm_in, double split_rate, double v, double log_a, double log_b,
                checkpoints_in, int confined, ptilts_in, hvals_in, double h_dx, double prune_level,
                int track_spine, Py_ssize_t max_fragments,
                int64_t[::1] n_live, int64_t[::1] n_window, int64_t[::1] n_good, double[::1] mass,
                double[:, ::1] msum, double[::1] hsum, double[::1] spine_ls, int8_t[::1] spine_good, event_log=None):
    if event_log is not None:
        raise NotImplementedError("event logging is only available in the python backend")
    cdef double[::1] prm = np.ascontiguousarray(prm_in, dtype=np.float64)
    cdef double[::1] checkpoints = np.ascontiguousarray(checkpoints_in, dtype=np.float64)
    cdef double[::1] ptilts = np.ascontiguousarray(ptilts_in, dtype=np.float64)
    cdef double[::1] hvals = np.ascontiguousarray(hvals_in, dtype=np.float64)
    capsule = gen.bit_generator.capsule
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

    cdef Pop pop
    pop.cap = 1024
    pop.n = 1
    pop.ls = <double *> malloc(pop.cap * sizeof(double))
    pop.births = <double *> malloc(pop.cap * sizeof(double))
    pop.goods = <int8_t *> malloc(pop.cap * sizeof(int8_t))
    if pop.ls == NULL or pop.births == NULL or pop.goods == NULL:
        free(pop.ls); free(pop.births); free(pop.goods)
        raise MemoryError()
    pop.ls[0] = 0.0
    pop.births[0] = 0.0
    pop.goods[0] = 1

    cdef Py_ssize_t spine = 0 if track_spine else -1
    cdef double spine_l = 0.0
    cdef double t = 0.0, zeta = -1.0, t_next, u, tc, y, li, ms, hs, w, l1, l2, dead_line, dl
    cdef Py_ssize_t n_ck = checkpoints.shape[0]
    cdef double t_end = checkpoints[n_ck - 1]
    cdef Py_ssize_t ck = 0, n, i, p_i, cw, cg, pid
    cdef Py_ssize_t n_p = ptilts.shape[0]
    cdef int64_t n_ev = 0
    cdef bint have_h = hvals.shape[0] > 1
    cdef int status = 0, gi, parent_good, g1, g2, to_spine, keep1, keep2

    with nogil:
        while True:
            n = pop.n
            if n > 0:
                u = rng.next_double(rng.state)
                t_next = t - log1p(-u) / (n * split_rate)
            else:
                t_next = INFINITY
            while ck < n_ck and checkpoints[ck] < t_next:
                tc = checkpoints[ck]
                cw = 0
                cg = 0
                ms = 0.0
                hs = 0.0
                for p_i in range(n_p):
                    msum[ck, p_i] = 0.0
                for i in range(n):
                    li = pop.ls[i]
                    y = li + v * tc
                    if log_a < y and y < log_b:
                        cw += 1
                    ms += exp(li)
                    for p_i in range(n_p):
                        msum[ck, p_i] += exp((ptilts[p_i] + 1.0) * li)
                    if pop.goods[i] and y < log_b:
                        cg += 1
                        if have_h:
                            hs += _h_interp(hvals, h_dx, y - log_a) * exp(li)
                n_live[ck] = n
                n_window[ck] = cw
                n_good[ck] = cg
                mass[ck] = ms
                hsum[ck] = hs
                if spine >= 0:
                    spine_ls[ck] = spine_l
                    spine_good[ck] = 1 if (pop.goods[spine] and spine_l + v * tc < log_b) else 0
                else:
                    spine_ls[ck] = NAN if confined else spine_l
                    spine_good[ck] = 0
                ck += 1
            if ck >= n_ck or t_next > t_end:
                break
            t = t_next
            n_ev += 1
            i = <Py_ssize_t> (rng.next_double(rng.state) * n)
            if i >= n:
                i = n - 1
            li = pop.ls[i]
            gi = pop.goods[i]
            dead_line = (log_b - li) / v
            if gi and dead_line <= t:
                if dead_line > zeta:
                    zeta = dead_line
            parent_good = gi and li + v * t < log_b
            if confined and not parent_good:
                _swap_remove(&pop, i)
                if spine == i:
                    spine = -1
                elif spine == pop.n:
                    spine = i
                continue
            w = _sample_small(code, prm, rng.next_double(rng.state))
            l1 = li + log1p(-w)
            l2 = li + log(w)
            g1 = 1 if (parent_good and l1 + v * t > log_a) else 0
            g2 = 1 if (parent_good and l2 + v * t > log_a) else 0
            if parent_good and not g1 and not g2:
                if t > zeta:
                    zeta = t
            to_spine = 0
            if spine == i:
                to_spine = 1 if rng.next_double(rng.state) < 1.0 - w else 2
                spine_l = l1 if to_spine == 1 else l2
            keep1 = (g1 or not confined) and l1 > prune_level
            keep2 = (g2 or not confined) and l2 > prune_level
            pid = i
            if keep1:
                pop.ls[i] = l1
                pop.births[i] = t
                pop.goods[i] = g1
            else:
                _swap_remove(&pop, i)
                if spine == pop.n:
                    spine = i
                pid = -1
            if to_spine == 1:
                spine = pid
            if keep2:
                if pop.n == pop.cap:
                    if _grow(&pop) != 0:
                        status = 2
                        break
                pop.ls[pop.n] = l2
                pop.births[pop.n] = t
                pop.goods[pop.n] = g2
                pop.n += 1
                if to_spine == 2:
                    spine = pop.n - 1
            elif to_spine == 2:
                spine = -1
            if pop.n > max_fragments:
                status = 1
                break
        for i in range(pop.n):
            if pop.goods[i]:
                dl = (log_b - pop.ls[i]) / v
                if dl > t_end:
                    zeta = INFINITY
                elif dl > zeta:
                    zeta = dl

    if status == 2:
        free(pop.ls); free(pop.births); free(pop.goods)
        raise MemoryError()
    ls_out = np.empty(pop.n)
    births_out = np.empty(pop.n)
    goods_out = np.empty(pop.n, dtype=np.int8)
    cdef double[::1] lo = ls_out
    cdef double[::1] bo = births_out
    cdef int8_t[::1] go = goods_out
    for i in range(pop.n):
        lo[i] = pop.ls[i]
        bo[i] = pop.births[i]
        go[i] = pop.goods[i]
    free(pop.ls); free(pop.births); free(pop.goods)
    return status, zeta, n_ev, ls_out, births_out, goods_out


def spine_exit_kernel(double[:, ::1] times, double[:, ::1] sizes, int64_t[::1] counts, double y0, double beta,
                      double v, checkpoints_in, double[::1] exit_time, double[:, ::1] xi_out):
    cdef double[::1] checkpoints = np.ascontiguousarray(checkpoints_in, dtype=np.float64)
    cdef Py_ssize_t n_paths = times.shape[0], n_ck = checkpoints.shape[0]
    cdef Py_ssize_t k, j, c, ck
    cdef double t_end = checkpoints[n_ck - 1]
    cdef double s_prev, s_after, t_prev, tj, y_top, ex, cand
    with nogil:
        for k in range(n_paths):
            c = counts[k]
            s_prev = 0.0
            t_prev = 0.0
            ex = INFINITY
            ck = 0
            for j in range(c + 1):
                tj = times[k, j] if j < c else t_end
                y_top = t_prev + (beta - (y0 + v * t_prev - s_prev)) / v
                if y_top <= tj and y_top < ex:
                    ex = y_top
                while ck < n_ck and checkpoints[ck] < tj:
                    xi_out[k, ck] = s_prev
                    ck += 1
                if j == c:
                    break
                s_after = s_prev + sizes[k, j]
                if y0 + v * tj - s_after <= 0.0:
                    cand = tj
                    if cand < ex:
                        ex = cand
                s_prev = s_after
                t_prev = tj
            while ck < n_ck:
                xi_out[k, ck] = s_prev
                ck += 1
            exit_time[k] = ex
