# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout and joint dynamic-programming kernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t splitmix(uint64_t x) nogil:
    cdef uint64_t z = x + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double unif(uint64_t h, int64_t k, int stream) nogil:
    cdef uint64_t z = splitmix(h ^ ((<uint64_t>k << 2) | <uint64_t>stream))
    return <double>(z >> 11) * INV53


cdef inline int64_t step_robot(const int64_t[:, :, :, :] succ, const double[:, :, :, :] cum,
                               int64_t k, int64_t i, int64_t a, double u) nogil:
    if u < cum[k, i, a, 0]:
        return succ[k, i, a, 0]
    if u < cum[k, i, a, 1]:
        return succ[k, i, a, 1]
    return succ[k, i, a, 2]


def rollout_scores(const int64_t[:, :, :, :] succ, const double[:, :, :, :] cum,
                   const double[:, :, :] cost, const int64_t[:] goal, const double[:, :] score,
                   int M, int random_ties, const uint64_t[:] keys, const int64_t[:] start,
                   double gamma, int64_t horizon):
    """Rollouts of a score-table policy: top ``M`` positive scores get an operator."""
    cdef Py_ssize_t I = keys.shape[0], K = goal.shape[0]
    out_cost = np.zeros(I)
    out_steps = np.zeros(I, dtype=np.int64)
    out_trunc = np.zeros(I, dtype=np.uint8)
    cdef double[:] oc = out_cost
    cdef int64_t[:] os = out_steps
    cdef unsigned char[:] ot = out_trunc
    cdef int64_t[:] x = np.empty(K, dtype=np.int64)
    cdef int64_t[:] act = np.empty(K, dtype=np.int64)
    cdef double[:] tkey = np.empty(K)
    cdef Py_ssize_t it, k, j, m
    cdef int64_t t, best
    cdef uint64_t h
    cdef double disc, total, sc, bs, bk, c
    cdef int active
    with nogil:
        for it in range(I):
            for k in range(K):
                x[k] = start[k]
            disc = 1.0
            total = 0.0
            t = 0
            while True:
                active = 0
                for k in range(K):
                    if x[k] != goal[k]:
                        active = 1
                        break
                if not active:
                    break
                if t >= horizon:
                    ot[it] = 1
                    break
                h = splitmix(keys[it] ^ <uint64_t>t)
                for k in range(K):
                    act[k] = 0
                    if random_ties:
                        tkey[k] = unif(h, k, 1)
                    else:
                        tkey[k] = <double>k
                for m in range(M):
                    best = -1
                    bs = 0.0
                    bk = 0.0
                    for k in range(K):
                        if act[k] or x[k] == goal[k]:
                            continue
                        sc = score[k, x[k]]
                        if not sc > 0.0:
                            continue
                        if best < 0 or sc > bs or (sc == bs and tkey[k] < bk):
                            best = k
                            bs = sc
                            bk = tkey[k]
                    if best < 0:
                        break
                    act[best] = 1
                c = 0.0
                for k in range(K):
                    c += cost[k, x[k], act[k]]
                total += disc * c
                for k in range(K):
                    if x[k] != goal[k]:
                        x[k] = step_robot(succ, cum, k, x[k], act[k], unif(h, k, 0))
                disc *= gamma
                t += 1
            oc[it] = total
            os[it] = t
    return out_cost, out_steps, out_trunc


def rollout_joint(const int64_t[:, :, :, :] succ, const double[:, :, :, :] cum,
                  const double[:, :, :] cost, const int64_t[:] goal, const int64_t[:] stride,
                  const int64_t[:] action, const int64_t[:] alloc_mask,
                  const uint64_t[:] keys, const int64_t[:] start, double gamma, int64_t horizon):
    """Rollouts of a policy stored as one allocation per joint state."""
    cdef Py_ssize_t I = keys.shape[0], K = goal.shape[0]
    out_cost = np.zeros(I)
    out_steps = np.zeros(I, dtype=np.int64)
    out_trunc = np.zeros(I, dtype=np.uint8)
    cdef double[:] oc = out_cost
    cdef int64_t[:] os = out_steps
    cdef unsigned char[:] ot = out_trunc
    cdef int64_t[:] x = np.empty(K, dtype=np.int64)
    cdef Py_ssize_t it, k
    cdef int64_t t, code, mask, a
    cdef uint64_t h
    cdef double disc, total, c
    cdef int active
    with nogil:
        for it in range(I):
            for k in range(K):
                x[k] = start[k]
            disc = 1.0
            total = 0.0
            t = 0
            while True:
                active = 0
                code = 0
                for k in range(K):
                    code += x[k] * stride[k]
                    if x[k] != goal[k]:
                        active = 1
                if not active:
                    break
                if t >= horizon:
                    ot[it] = 1
                    break
                h = splitmix(keys[it] ^ <uint64_t>t)
                mask = alloc_mask[action[code]]
                c = 0.0
                for k in range(K):
                    c += cost[k, x[k], (mask >> k) & 1]
                total += disc * c
                for k in range(K):
                    if x[k] != goal[k]:
                        a = (mask >> k) & 1
                        x[k] = step_robot(succ, cum, k, x[k], a, unif(h, k, 0))
                disc *= gamma
                t += 1
            oc[it] = total
            os[it] = t
    return out_cost, out_steps, out_trunc


cdef int solve_small(double* A, double* b, int n) nogil:
    """Gaussian elimination with partial pivoting, in place; solution left in b."""
    cdef int i, j, r, piv
    cdef double mx, f, tmp
    for i in range(n):
        piv = i
        mx = fabs(A[i * n + i])
        for r in range(i + 1, n):
            if fabs(A[r * n + i]) > mx:
                mx = fabs(A[r * n + i])
                piv = r
        if mx == 0.0:
            return -1
        if piv != i:
            for j in range(n):
                tmp = A[i * n + j]; A[i * n + j] = A[piv * n + j]; A[piv * n + j] = tmp
            tmp = b[i]; b[i] = b[piv]; b[piv] = tmp
        for r in range(i + 1, n):
            f = A[r * n + i] / A[i * n + i]
            if f != 0.0:
                for j in range(i, n):
                    A[r * n + j] -= f * A[i * n + j]
                b[r] -= f * b[i]
    for i in range(n - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, n):
            tmp -= A[i * n + j] * b[j]
        b[i] = tmp / A[i * n + i]
    return 0


def joint_dp(const double[:, :, :, :] prob, const double[:, :, :] cost, const int64_t[:] goal,
             const int64_t[:] stride, const int64_t[:, :] taus, const int64_t[:] alloc_mask,
             double gamma, double tol, double[:] V, int64_t[:] action):
    """Block-backward exact solve of the joint problem; fills ``V`` and ``action``.

    ``taus`` lists task vectors, most advanced first.  See the numpy
    implementation for the block structure.
    """
    cdef Py_ssize_t K = goal.shape[0], nB = taus.shape[0], A = alloc_mask.shape[0]
    cdef Py_ssize_t bi
    cdef int Kp, nF, nA, nO, fi, fj, ai, oi, j, it, changed, a
    cdef int64_t k, base, mask, rmask, code, i, o, f
    cdef double pr, val, q, bestq, c
    R_arr = np.zeros(K, dtype=np.int64)
    cdef int64_t[:] R = R_arr
    feas_arr = np.zeros(A, dtype=np.int64)
    cdef int64_t[:] feas = feas_arr
    if K > 16:
        raise ValueError("too many robots for the compiled joint solver")
    # scratch sized for the worst case
    cdef int maxF = 1 << K
    c_arr = np.zeros((maxF, A)); ext_arr = np.zeros((maxF, A)); pin_arr = np.zeros((maxF, A, maxF))
    cdef double[:, :] cc = c_arr
    cdef double[:, :] ext = ext_arr
    cdef double[:, :, :] pin = pin_arr
    pol_arr = np.zeros(maxF, dtype=np.int64)
    cdef int64_t[:] pol = pol_arr
    Am_arr = np.zeros(maxF * maxF); b_arr = np.zeros(maxF); vb_arr = np.zeros(maxF)
    cdef double[:] Am = Am_arr
    cdef double[:] bv = b_arr
    cdef double[:] vb = vb_arr
    cdef int64_t[:] loc = np.zeros(K, dtype=np.int64)
    cdef int64_t[:] digit = np.zeros(K, dtype=np.int64)
    cdef double[:] W = np.zeros(3 ** int(K))
    cdef double[:] T = np.zeros(3 ** int(K))
    cdef double wv[48]
    cdef Py_ssize_t size
    cdef double P3[16][2][2][3]
    with nogil:
        for bi in range(nB):
            Kp = 0
            rmask = 0
            base = 0
            for k in range(K):
                if taus[bi, k] < goal[k] // 2:
                    R[Kp] = k
                    Kp += 1
                    rmask |= (<int64_t>1) << k
                    loc[k] = 2 * taus[bi, k]
                else:
                    loc[k] = goal[k]
                base += loc[k] * stride[k]
            if Kp == 0:
                V[base] = 0.0
                action[base] = 0
                continue
            nA = 0
            for ai in range(A):
                if (alloc_mask[ai] & ~rmask) == 0:
                    feas[nA] = ai
                    nA += 1
            for j in range(Kp):
                k = R[j]
                for f in range(2):
                    i = loc[k] + f
                    for a in range(2):
                        P3[j][f][a][2] = prob[k, i, a, 0]
                        P3[j][f][a][1 - f] = prob[k, i, a, 1]
                        P3[j][f][a][f] = prob[k, i, a, 2]
            nF = 1 << Kp
            nO = 1
            for j in range(Kp):
                digit[j] = 0
                nO *= 3
            # successor values over offsets {0,1,2}^Kp, robot j at stride 3^j
            for oi in range(nO):
                code = base
                changed = 0
                for j in range(Kp):
                    code += digit[j] * stride[R[j]]
                    if digit[j] == 2:
                        changed = 1
                W[oi] = V[code] if changed else 0.0
                for j in range(Kp):
                    digit[j] += 1
                    if digit[j] < 3:
                        break
                    digit[j] = 0
            for fi in range(nF):
                for ai in range(nA):
                    mask = alloc_mask[feas[ai]]
                    c = 0.0
                    for j in range(Kp):
                        k = R[j]
                        c += cost[k, loc[k] + ((fi >> j) & 1), (mask >> k) & 1]
                        for o in range(3):
                            wv[j * 3 + o] = P3[j][(fi >> j) & 1][(mask >> k) & 1][o]
                    cc[fi, ai] = c
                    for fj in range(nF):
                        pr = 1.0
                        for j in range(Kp):
                            pr *= wv[j * 3 + ((fj >> j) & 1)]
                        pin[fi, ai, fj] = pr
                    size = nO // 3
                    for oi in range(size):
                        T[oi] = wv[(Kp - 1) * 3] * W[oi] + wv[(Kp - 1) * 3 + 1] * W[oi + size] \
                            + wv[(Kp - 1) * 3 + 2] * W[oi + 2 * size]
                    for j in range(Kp - 2, -1, -1):
                        size = size // 3
                        for oi in range(size):
                            T[oi] = wv[j * 3] * T[oi] + wv[j * 3 + 1] * T[oi + size] + wv[j * 3 + 2] * T[oi + 2 * size]
                    ext[fi, ai] = T[0]
            # policy iteration on the block
            for fi in range(nF):
                bestq = cc[fi, 0] + gamma * ext[fi, 0]
                pol[fi] = 0
                for ai in range(1, nA):
                    q = cc[fi, ai] + gamma * ext[fi, ai]
                    if q < bestq:
                        bestq = q
                        pol[fi] = ai
            for it in range(500):
                for fi in range(nF):
                    for fj in range(nF):
                        Am[fi * nF + fj] = -gamma * pin[fi, pol[fi], fj]
                    Am[fi * nF + fi] += 1.0
                    bv[fi] = cc[fi, pol[fi]] + gamma * ext[fi, pol[fi]]
                solve_small(&Am[0], &bv[0], nF)
                for fi in range(nF):
                    vb[fi] = bv[fi]
                changed = 0
                for fi in range(nF):
                    q = cc[fi, pol[fi]] + gamma * ext[fi, pol[fi]]
                    for fj in range(nF):
                        q += gamma * pin[fi, pol[fi], fj] * vb[fj]
                    bestq = q
                    i = pol[fi]
                    for ai in range(nA):
                        val = cc[fi, ai] + gamma * ext[fi, ai]
                        for fj in range(nF):
                            val += gamma * pin[fi, ai, fj] * vb[fj]
                        if val < bestq - tol:
                            bestq = val
                            i = ai
                    if i != pol[fi]:
                        pol[fi] = i
                        changed = 1
                if not changed:
                    break
            for fi in range(nF):
                code = base
                for j in range(Kp):
                    code += ((fi >> j) & 1) * stride[R[j]]
                V[code] = vb[fi]
                bestq = 0.0
                i = -1
                for ai in range(nA):
                    val = cc[fi, ai] + gamma * ext[fi, ai]
                    for fj in range(nF):
                        val += gamma * pin[fi, ai, fj] * vb[fj]
                    if i < 0 or val < bestq:
                        bestq = val
                        i = ai
                for ai in range(nA):
                    val = cc[fi, ai] + gamma * ext[fi, ai]
                    for fj in range(nF):
                        val += gamma * pin[fi, ai, fj] * vb[fj]
                    if val <= bestq + tol:
                        action[code] = feas[ai]
                        break
    return None
