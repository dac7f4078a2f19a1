"""Pure numpy versions of the compiled kernels, with identical signatures.

Rollouts advance all iterations in lockstep; the joint solver works block by
block with tensor contractions.  Random draws come from the same counter
hash as the compiled code, so both produce the same trajectories.
"""
from __future__ import annotations

import itertools

import numpy as np

from .rng import ENV, TIE, splitmix

_INV53 = 1.0 / 9007199254740992.0


def _unif(h: np.ndarray, K: int, stream: int) -> np.ndarray:
    lane = (np.arange(K, dtype=np.uint64) << np.uint64(2)) | np.uint64(stream)
    z = splitmix(h[:, None] ^ lane[None, :])
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def _step(succ, cum, x, act, u):
    K = x.shape[1]
    kk = np.arange(K)[None, :]
    c = cum[kk, x, act]  # (I, K, 2)
    o = np.where(u < c[..., 0], 0, np.where(u < c[..., 1], 1, 2))
    return succ[kk, x, act, o]


def _rollout(succ, cum, cost, goal, keys, start, gamma, horizon, choose):
    keys = np.asarray(keys, dtype=np.uint64)
    I, K = keys.shape[0], goal.shape[0]
    x = np.broadcast_to(np.asarray(start, dtype=np.int64), (I, K)).copy()
    total = np.zeros(I)
    steps = np.zeros(I, dtype=np.int64)
    trunc = np.zeros(I, dtype=np.uint8)
    disc = 1.0
    kk = np.arange(K)[None, :]
    t = 0
    while True:
        live = (x != goal[None, :]).any(axis=1)
        if t >= horizon:
            trunc[live] = 1
            break
        if not live.any():
            break
        h = splitmix(keys ^ np.uint64(t))
        act = choose(x, h)
        c = np.zeros(I)
        for k in range(K):
            c += cost[k, x[:, k], act[:, k]]
        total += np.where(live, disc * c, 0.0)
        u = _unif(h, K, ENV)
        nxt = _step(succ, cum, x, act, u)
        x = np.where(live[:, None] & (x != goal[None, :]), nxt, x)
        steps += live
        disc *= gamma
        t += 1
    return total, steps, trunc


def rollout_scores(succ, cum, cost, goal, score, M, random_ties, keys, start, gamma, horizon):
    K = goal.shape[0]
    kk = np.arange(K)[None, :]

    def choose(x, h):
        I = x.shape[0]
        sc = score[kk, x]
        elig = (sc > 0.0) & (x != goal[None, :])
        key = _unif(h, K, TIE) if random_ties else np.broadcast_to(np.arange(K, dtype=float), (I, K))
        s = np.where(elig, sc, -np.inf)
        order = np.lexsort((key, -s), axis=1)[:, :M]
        act = np.zeros((I, K), dtype=np.int64)
        rows = np.arange(I)[:, None]
        act[rows, order] = elig[rows, order]
        return act

    return _rollout(succ, cum, cost, goal, keys, start, gamma, horizon, choose)


def rollout_joint(succ, cum, cost, goal, stride, action, alloc_mask, keys, start, gamma, horizon):
    K = goal.shape[0]
    bits = np.arange(K, dtype=np.int64)

    def choose(x, h):
        mask = alloc_mask[action[x @ stride]]
        return (mask[:, None] >> bits[None, :]) & 1

    return _rollout(succ, cum, cost, goal, keys, start, gamma, horizon, choose)


def _robot_kernel(prob, k, loc):
    P = np.zeros((2, 2, 3))
    for f in (0, 1):
        for a in (0, 1):
            p, q, r = prob[k, loc + f, a]
            P[f, a, 2] = p
            P[f, a, 1 - f] = q
            P[f, a, f] = r
    return P


def _policy_iteration(c, ext, Pin, g, tol, max_iter=500):
    nF = c.shape[0]
    rows = np.arange(nF)
    pol = np.argmin(c + g * ext, axis=1)
    for _ in range(max_iter):
        A = np.eye(nF) - g * Pin[rows, pol]
        Vb = np.linalg.solve(A, c[rows, pol] + g * ext[rows, pol])
        Q = c + g * ext + g * Pin @ Vb
        improve = Q.min(axis=1) < Q[rows, pol] - tol
        if not improve.any():
            return Vb
        pol = np.where(improve, np.argmin(Q, axis=1), pol)
    raise RuntimeError("block policy iteration did not settle")


def joint_dp(prob, cost, goal, stride, taus, alloc_mask, gamma, tol, V, action):
    K = goal.shape[0]
    n_tasks = goal // 2
    g = gamma
    for tau in taus:
        R = [k for k in range(K) if tau[k] < n_tasks[k]]
        local0 = np.where(tau < n_tasks, 2 * tau, goal)
        base = int(local0 @ stride)
        if not R:
            V[base] = 0.0
            action[base] = 0
            continue
        Kp = len(R)
        rmask = sum(1 << k for k in R)
        feas = np.nonzero((alloc_mask & ~rmask) == 0)[0]
        offs = np.array(list(itertools.product(range(3), repeat=Kp)), dtype=np.int64)
        W = V[base + offs @ stride[R]]
        W = np.where((offs < 2).all(axis=1), 0.0, W)
        flags = np.array(list(itertools.product((0, 1), repeat=Kp)), dtype=np.int64)
        fcodes = base + flags @ stride[R]
        nF, nA = flags.shape[0], feas.size
        A_loc = (alloc_mask[feas][:, None] >> np.array(R)[None, :]) & 1  # (nA, Kp)
        kern = [_robot_kernel(prob, k, local0[k]) for k in R]
        X = np.stack([kern[j][flags[:, j][:, None], A_loc[:, j][None, :]] for j in range(Kp)], axis=2)
        X = X.reshape(nF * nA, Kp, 3)
        T = X[:, 0, :] @ W.reshape(3, -1)
        for j in range(1, Kp):
            T = np.einsum("xo,xor->xr", X[:, j, :], T.reshape(nF * nA, 3, -1))
        ext = T.reshape(nF, nA)
        Pin = np.ones((nF * nA, nF))
        for j in range(Kp):
            Pin *= X[:, j, flags[:, j]]
        Pin = Pin.reshape(nF, nA, nF)
        c = np.zeros((nF, nA))
        for j, k in enumerate(R):
            c += cost[k, (local0[k] + flags[:, j])[:, None], A_loc[None, :, j]]
        Vb = _policy_iteration(c, ext, Pin, g, tol)
        Q = c + g * ext + g * Pin @ Vb
        first = np.argmax(Q <= Q.min(axis=1, keepdims=True) + tol, axis=1)
        V[fcodes] = Vb
        action[fcodes] = feas[first]
