"""Independent straight-line reference implementations used as test oracles.

Written with plain Python floats and loops, sharing only the RNG key
contract (SeedSequence(seed, spawn_key=(crc32(role), client, round))) with
the library.
"""
import zlib

import numpy as np


def _rng(seed, role, client, rnd):
    key = (zlib.crc32(role.encode()), client, rnd)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def one_round_1d(xs, ys, neighbors, S, seed, tau, lr, batch, init_scale=1.0, double_first=True):
    """One FedSPD round for 1-D squared loss ``0.5 * (c * x - y) ** 2``.

    ``xs``/``ys`` are per-client lists of floats, ``neighbors[i]`` the sorted
    closed neighbourhood of client ``i``. Returns ``(centers, assignments, mixture)``
    with ``centers[i][s]`` a float.
    """
    N = len(xs)
    # initialization: shared per-cluster scalar, random assignments
    init = [init_scale * float(_rng(seed, "init", s, 0).standard_normal(1)[0]) for s in range(S)]
    centers = [[init[s] for s in range(S)] for _ in range(N)]
    assign = [[int(v) for v in _rng(seed, "assign", i, 0).integers(0, S, size=len(xs[i]))] for i in range(N)]
    mixture = [[sum(1 for a in assign[i] if a == s) / len(assign[i]) for s in range(S)] for i in range(N)]

    rnd = 1
    # step 1a: selection by inverse CDF
    sel = []
    for i in range(N):
        r = float(_rng(seed, "select", i, rnd).random())
        acc, choice = 0.0, None
        for s in range(S):
            acc += mixture[i][s]
            if r < acc:
                choice = s
                break
        sel.append(S - 1 if choice is None else choice)

    # step 1b: tau SGD steps on the selected cluster's assigned data
    steps = tau * 2 if double_first else tau
    after = [row[:] for row in centers]
    for i in range(N):
        s = sel[i]
        px = [x for x, a in zip(xs[i], assign[i]) if a == s]
        py = [y for y, a in zip(ys[i], assign[i]) if a == s]
        if not px:
            continue
        g_rng = _rng(seed, "local", i, rnd)
        c = centers[i][s]
        for _ in range(steps):
            idx = g_rng.integers(0, len(px), size=batch)
            total = 0.0
            for k in idx:
                total += px[k] * (px[k] * c - py[k])
            c = c - lr * (total / batch)
        after[i][s] = c

    # steps 2-3: closed-neighbourhood averaging of received centers, per cluster
    new = [row[:] for row in after]
    for i in range(N):
        for s in range(S):
            msgs = [after[j][s] for j in neighbors[i] if sel[j] == s]
            if msgs:
                # offset form: exact when every message is identical
                total = 0.0
                for m in msgs:
                    total += m - msgs[0]
                new[i][s] = msgs[0] + total / len(msgs)

    # step 4: hard reassignment to the lowest-loss cluster
    out_assign, out_mix = [], []
    for i in range(N):
        a_i = []
        for x, y in zip(xs[i], ys[i]):
            best, best_loss = 0, None
            for s in range(S):
                r = x * new[i][s] - y
                loss = 0.5 * r * r
                if best_loss is None or loss < best_loss:
                    best, best_loss = s, loss
            a_i.append(best)
        out_assign.append(a_i)
        out_mix.append([sum(1 for a in a_i if a == s) / len(a_i) for s in range(S)])
    return new, out_assign, out_mix
