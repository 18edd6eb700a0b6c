# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics (including RNG consumption order) are mirrored
exactly by ``tracekit._fallback``; keep the two in lockstep."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, uint8_t, int64_t
from libc.string cimport memcpy

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double next_uniform(uint64_t* state) nogil:
    state[0] += GAMMA
    return (mix64(state[0]) >> 11) * INV53


IMPLEMENTATION = "compiled"


def code_bits(const uint64_t[::1] keys, const double[::1] p):
    cdef Py_ssize_t n = keys.shape[0], m = p.shape[0]
    cdef Py_ssize_t nbytes = (m + 7) // 8
    out_arr = np.zeros((n, nbytes), dtype=np.uint8)
    cdef uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t j, i
    cdef uint64_t st
    with nogil:
        for j in range(n):
            st = keys[j]
            for i in range(m):
                out[j, i >> 3] |= <uint8_t>((next_uniform(&st) < p[i]) << (i & 7))
    return out_arr


def single_scores(const uint8_t[:, ::1] packed, const double[::1] w0, const double[::1] w1):
    """s_j = sum_i w_{x_j(i)}[i] through per-byte lookup tables."""
    cdef Py_ssize_t n = packed.shape[0], nb = packed.shape[1], m = w0.shape[0]
    cdef Py_ssize_t b, v, k, i, j
    cdef double base = 0.0, acc
    table_arr = np.zeros((nb, 256), dtype=np.float64)
    cdef double[:, ::1] table = table_arr
    cdef double d
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(m):
            base += w0[i]
        for b in range(nb):
            for k in range(8):
                i = 8 * b + k
                if i >= m:
                    break
                d = w1[i] - w0[i]
                for v in range(1 << k, 256):
                    if v & (1 << k):
                        table[b, v] += d
        for j in range(n):
            acc = base
            for b in range(nb):
                acc += table[b, packed[j, b]]
            out[j] = acc
    return out_arr


def subset_scores(const uint8_t[:, ::1] rows, const double[:, ::1] w, int t, bint record_all):
    """Score every t-subset of ``rows`` in revolving-door order.

    ``w`` is position-major, shape (m, t+1). Returns (per-user best score,
    per-user best subset, global best score, global best subset, all scores
    or None, subset count).
    """
    cdef Py_ssize_t s = rows.shape[0], m = rows.shape[1]
    cdef Py_ssize_t tp1 = t + 1
    cdef Py_ssize_t i, j, r
    cdef Py_ssize_t total = 0
    cdef int64_t[::1] c = np.zeros(t + 2, dtype=np.int64)
    phi_arr = np.zeros(m, dtype=np.int64)
    cdef int64_t[::1] phi = phi_arr
    ubest_arr = np.full(s, -np.inf)
    cdef double[::1] ubest = ubest_arr
    usub_arr = np.full((s, t), -1, dtype=np.int64)
    cdef int64_t[:, ::1] usub = usub_arr
    gsub_arr = np.full(t, -1, dtype=np.int64)
    cdef int64_t[::1] gsub = gsub_arr
    cdef double gbest = -np.inf, score
    cdef Py_ssize_t count = _n_choose_k(s, t)
    cdef double[::1] allsc
    all_arr = None
    if record_all:
        all_arr = np.empty(count, dtype=np.float64)
        allsc = all_arr
    cdef Py_ssize_t out_u = -1, in_u = -1
    cdef bint done = False
    cdef Py_ssize_t jj
    if t < 1 or t > s:
        raise ValueError("need 1 <= t <= number of suspects")
    for j in range(1, t + 1):
        c[j] = j - 1
    c[t + 1] = s
    for j in range(1, t + 1):
        for i in range(m):
            phi[i] += rows[c[j], i]
    while True:
        score = 0.0
        for i in range(m):
            score += w[i, phi[i]]
        if record_all:
            allsc[total] = score
        total += 1
        if score > gbest:
            gbest = score
            for j in range(t):
                gsub[j] = c[j + 1]
        for j in range(1, t + 1):
            r = c[j]
            if score > ubest[r]:
                ubest[r] = score
                for jj in range(t):
                    usub[r, jj] = c[jj + 1]
        # advance (Knuth, Algorithm R); record the single swapped pair
        if t == s:
            break
        if t == 1:
            if c[1] + 1 >= s:
                break
            out_u = c[1]
            in_u = c[1] + 1
            c[1] += 1
        else:
            done = _revolving_step(c, t, &out_u, &in_u)
            if done:
                break
        for i in range(m):
            phi[i] += <int64_t>rows[in_u, i] - <int64_t>rows[out_u, i]
    for j in range(s):
        if usub[j, 0] >= 0:
            _sort_small(usub, j, t)
    _sort_row(gsub, t)
    return ubest_arr, usub_arr, gbest, gsub_arr, all_arr, total


cdef Py_ssize_t _n_choose_k(Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r = 1, i
    if k < 0 or k > n:
        return 0
    for i in range(1, k + 1):
        r = r * (n - k + i) // i
    return r


cdef void _sort_small(int64_t[:, ::1] a, Py_ssize_t row, Py_ssize_t t):
    cdef Py_ssize_t i, j
    cdef int64_t v
    for i in range(1, t):
        v = a[row, i]
        j = i - 1
        while j >= 0 and a[row, j] > v:
            a[row, j + 1] = a[row, j]
            j -= 1
        a[row, j + 1] = v


cdef void _sort_row(int64_t[::1] a, Py_ssize_t t):
    cdef Py_ssize_t i, j
    cdef int64_t v
    for i in range(1, t):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


cdef bint _revolving_step(int64_t[::1] c, Py_ssize_t t, Py_ssize_t* out_u, Py_ssize_t* in_u):
    """One transition of the revolving-door order; returns True when exhausted."""
    cdef Py_ssize_t j
    cdef bint try_decrease
    if t & 1:
        if c[1] + 1 < c[2]:
            out_u[0] = c[1]
            in_u[0] = c[1] + 1
            c[1] += 1
            return False
        j = 2
        try_decrease = True
    else:
        if c[1] > 0:
            out_u[0] = c[1]
            in_u[0] = c[1] - 1
            c[1] -= 1
            return False
        j = 2
        try_decrease = False
    while True:
        if try_decrease:
            if c[j] >= j:
                out_u[0] = c[j]
                in_u[0] = j - 2
                c[j] = c[j - 1]
                c[j - 1] = j - 2
                return False
            j += 1
            try_decrease = False
        else:
            if c[j] + 1 < c[j + 1]:
                out_u[0] = j - 2
                in_u[0] = c[j] + 1
                c[j - 1] = c[j]
                c[j] += 1
                return False
            j += 1
            if j > t:
                return True
            try_decrease = True


def splitting(const double[:, :, ::1] w, const double[::1] p, int t, Py_ssize_t n_particles,
              Py_ssize_t kmax, Py_ssize_t n_prop, uint64_t key):
    """Last-particle adaptive splitting on fresh t-tuples of codewords.

    ``w`` has shape (m, K, t+1); a tuple's score is max_k sum_i w[i, k, phi_i].
    After each clone, ``n_prop`` single-site proposals are made along a
    systematic scan whose cursor persists across levels.
    Returns (levels, accepted, proposed, status); status 1 means the mutation
    kernel rejected every proposal over a full sweep.
    """
    cdef Py_ssize_t m = w.shape[0], K = w.shape[1], tp1 = w.shape[2]
    cdef Py_ssize_t N = n_particles
    cdef Py_ssize_t a, r, i, k, it, s, amin, src
    cdef Py_ssize_t icur = 0, rcur = 0
    cdef uint64_t st = key
    bits_arr = np.zeros((N, t, m), dtype=np.uint8)
    cdef uint8_t[:, :, ::1] bits = bits_arr
    phi_arr = np.zeros((N, m), dtype=np.int64)
    cdef int64_t[:, ::1] phi = phi_arr
    part_arr = np.zeros((N, K), dtype=np.float64)
    cdef double[:, ::1] part = part_arr
    score_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] score = score_arr
    levels_arr = np.empty(kmax, dtype=np.float64)
    cdef double[::1] levels = levels_arr
    newpart_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] newpart = newpart_arr
    cdef double L, best, u
    cdef int64_t oldphi, newphi
    cdef uint8_t nb
    cdef long long accepted = 0, proposed = 0, streak = 0
    cdef Py_ssize_t sweep = t * m
    cdef int status = 0
    cdef Py_ssize_t filled = 0
    with nogil:
        for a in range(N):
            for r in range(t):
                for i in range(m):
                    if next_uniform(&st) < p[i]:
                        bits[a, r, i] = 1
                        phi[a, i] += 1
            for k in range(K):
                u = 0.0
                for i in range(m):
                    u += w[i, k, phi[a, i]]
                part[a, k] = u
            best = part[a, 0]
            for k in range(1, K):
                if part[a, k] > best:
                    best = part[a, k]
            score[a] = best
        for it in range(kmax):
            amin = 0
            for a in range(1, N):
                if score[a] < score[amin]:
                    amin = a
            L = score[amin]
            levels[it] = L
            filled = it + 1
            if it == kmax - 1:
                break
            src = <Py_ssize_t>(next_uniform(&st) * (N - 1))
            if src >= amin:
                src += 1
            memcpy(&bits[amin, 0, 0], &bits[src, 0, 0], t * m * sizeof(uint8_t))
            memcpy(&phi[amin, 0], &phi[src, 0], m * sizeof(int64_t))
            memcpy(&part[amin, 0], &part[src, 0], K * sizeof(double))
            score[amin] = score[src]
            for s in range(n_prop):
                i = icur
                r = rcur
                icur += 1
                if icur == m:
                    icur = 0
                    rcur += 1
                    if rcur == t:
                        rcur = 0
                nb = 1 if next_uniform(&st) < p[i] else 0
                if nb == bits[amin, r, i]:
                    continue
                oldphi = phi[amin, i]
                newphi = oldphi + 1 if nb else oldphi - 1
                if K == 1:
                    best = part[amin, 0] + (w[i, 0, newphi] - w[i, 0, oldphi])
                    proposed += 1
                    if best > L:
                        bits[amin, r, i] = nb
                        phi[amin, i] = newphi
                        part[amin, 0] = best
                        score[amin] = best
                        accepted += 1
                        streak = 0
                    else:
                        streak += 1
                    continue
                best = -1e308
                for k in range(K):
                    newpart[k] = part[amin, k] + (w[i, k, newphi] - w[i, k, oldphi])
                    if newpart[k] > best:
                        best = newpart[k]
                proposed += 1
                if best > L:
                    bits[amin, r, i] = nb
                    phi[amin, i] = newphi
                    for k in range(K):
                        part[amin, k] = newpart[k]
                    score[amin] = best
                    accepted += 1
                    streak = 0
                else:
                    streak += 1
            if streak >= sweep:
                status = 1
                break
    return levels_arr[:filled], accepted, proposed, status


def direct_scores(const double[:, :, ::1] w, const double[::1] p, int t, Py_ssize_t count, uint64_t key):
    """Scores of ``count`` fresh t-tuples drawn straight from the code distribution."""
    cdef Py_ssize_t m = w.shape[0], K = w.shape[1]
    cdef Py_ssize_t a, r, i, k
    cdef uint64_t st = key
    phi_arr = np.zeros(m, dtype=np.int64)
    cdef int64_t[::1] phi = phi_arr
    out_arr = np.empty(count, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double u, best
    cdef int b
    if t == 1 and K == 1:
        # common case: one table, one codeword; accumulate while sampling
        with nogil:
            for a in range(count):
                u = 0.0
                for i in range(m):
                    b = next_uniform(&st) < p[i]
                    u += w[i, 0, b]
                out[a] = u
        return out_arr
    with nogil:
        for a in range(count):
            for i in range(m):
                phi[i] = 0
            for r in range(t):
                for i in range(m):
                    phi[i] += next_uniform(&st) < p[i]
            best = -1e308
            for k in range(K):
                u = 0.0
                for i in range(m):
                    u += w[i, k, phi[i]]
                if u > best:
                    best = u
            out[a] = best
    return out_arr
