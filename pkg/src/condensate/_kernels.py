"""Compiled event-loop kernels for the inclusion process.

Site bookkeeping: every site belongs to one category, ``min(eta_i, A + 1)``
(category ``A + 1`` collects all fast sites). ``members[c, :mcount[c]]``
lists the sites of category ``c`` and ``pos[i]`` is the slot of site ``i``
in its list, so a site changes category in O(1). A Fenwick tree over the
integer excesses ``(eta_i - A)_+`` samples fast sites proportionally to
their excess in O(log L). ``tot[0]`` holds the total excess.
"""
import numpy as np
from numba import njit

FROZEN = 1


@njit(cache=True)
def fenwick_add(tree, i, delta):
    i += 1
    n = tree.shape[0]
    while i < n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def fenwick_find(tree, target):
    """Index of the first site whose prefix sum exceeds ``target``."""
    n = tree.shape[0] - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    return pos


@njit(cache=True)
def build(eta, A, members, mcount, pos, tree, tot):
    L = eta.shape[0]
    mcount[:] = 0
    tree[:] = 0
    tot[0] = 0
    for i in range(L):
        c = min(eta[i], A + 1)
        members[c, mcount[c]] = i
        pos[i] = mcount[c]
        mcount[c] += 1
        ex = eta[i] - A
        if ex > 0:
            fenwick_add(tree, i, ex)
            tot[0] += ex


@njit(cache=True)
def _relocate(site, c_old, c_new, members, mcount, pos):
    if c_old == c_new:
        return
    p = pos[site]
    last = members[c_old, mcount[c_old] - 1]
    members[c_old, p] = last
    pos[last] = p
    mcount[c_old] -= 1
    members[c_new, mcount[c_new]] = site
    pos[site] = mcount[c_new]
    mcount[c_new] += 1


@njit(cache=True)
def _shift(site, d, eta, A, members, mcount, pos, tree, tot):
    n_old = eta[site]
    n_new = n_old + d
    _relocate(site, min(n_old, A + 1), min(n_new, A + 1), members, mcount, pos)
    eta[site] = n_new
    delta = max(n_new - A, 0) - max(n_old - A, 0)
    if delta != 0:
        fenwick_add(tree, site, delta)
        tot[0] += delta


@njit(cache=True)
def move(i, j, eta, A, members, mcount, pos, tree, tot):
    """One particle from site ``i`` to site ``j``."""
    _shift(i, -1, eta, A, members, mcount, pos, tree, tot)
    _shift(j, 1, eta, A, members, mcount, pos, tree, tot)


@njit(cache=True)
def aggregate(slow, off, A, mcount, tot):
    """``sum_i u(eta_i)`` from category counts and the total excess."""
    s = 0.0
    for k in range(A + 1):
        s += slow[k] * mcount[k]
    return s + tot[0] + off * mcount[A + 1]


@njit(cache=True)
def sample_site(u, slow, off, A, members, mcount, tree, tot):
    """Site drawn with probability ``u(eta_i) / sum_j u(eta_j)``; ``u`` uniform on [0,1)."""
    x = u * aggregate(slow, off, A, mcount, tot)
    last_k = -1
    for k in range(A + 1):
        if slow[k] > 0.0 and mcount[k] > 0:
            w = slow[k] * mcount[k]
            last_k = k
            if x < w:
                idx = min(int(x / slow[k]), mcount[k] - 1)
                return members[k, idx]
            x -= w
    E = tot[0]
    if E > 0:
        if x < E:
            return fenwick_find(tree, min(int(x), E - 1))
        x -= E
    F = mcount[A + 1]
    if off > 0.0 and F > 0:
        idx = min(int(x / off), F - 1)
        return members[A + 1, idx]
    # rounding overshoot at the top of the range
    if E > 0:
        return fenwick_find(tree, E - 1)
    return members[last_k, mcount[last_k] - 1]


@njit(cache=True)
def step(rng, eta, A, s1, c1, s2, c2, members, mcount, pos, tree, tot, stats):
    """One event. Returns ``(holding_time, i, j, status)``; ``i == j`` is a no-op."""
    S1 = aggregate(s1, c1, A, mcount, tot)
    S2 = aggregate(s2, c2, A, mcount, tot)
    rate = S1 * S2
    if not rate > 0.0:
        return 0.0, -1, -1, FROZEN
    tau = rng.standard_exponential() / rate
    i = sample_site(rng.random(), s1, c1, A, members, mcount, tree, tot)
    j = sample_site(rng.random(), s2, c2, A, members, mcount, tree, tot)
    if i == j:
        stats[1] += 1
    else:
        move(i, j, eta, A, members, mcount, pos, tree, tot)
        stats[0] += 1
    return tau, i, j, 0


@njit(cache=True)
def run_until(t_end, clock, rng, eta, A, s1, c1, s2, c2, members, mcount, pos, tree, tot, stats, acc):
    """Advance to ``t_end``; the pending holding time past ``t_end`` is discarded
    (exact by memorylessness). ``acc[0]`` accumulates the time integral of the
    number of fast sites. Returns ``(clock, status)``."""
    while True:
        S1 = aggregate(s1, c1, A, mcount, tot)
        S2 = aggregate(s2, c2, A, mcount, tot)
        rate = S1 * S2
        if not rate > 0.0:
            acc[0] += mcount[A + 1] * (t_end - clock)
            return t_end, FROZEN
        tau = rng.standard_exponential() / rate
        if clock + tau > t_end:
            acc[0] += mcount[A + 1] * (t_end - clock)
            return t_end, 0
        acc[0] += mcount[A + 1] * tau
        clock += tau
        i = sample_site(rng.random(), s1, c1, A, members, mcount, tree, tot)
        j = sample_site(rng.random(), s2, c2, A, members, mcount, tree, tot)
        if i == j:
            stats[1] += 1
        else:
            move(i, j, eta, A, members, mcount, pos, tree, tot)
            stats[0] += 1


@njit(cache=True)
def observe(out, eta, A, N, members, mcount, tot, mmax, topk):
    """Fill one observation row: gamma_N, y_0..y_{A-1}, fast fraction,
    phi_2..phi_mmax of the embedded cluster vector, then the ``topk`` largest
    excesses (zero-padded)."""
    L = eta.shape[0]
    col = 0
    out[col] = tot[0] / N
    col += 1
    for k in range(A):
        out[col] = mcount[k] / L
        col += 1
    F = mcount[A + 1]
    out[col] = F / L
    col += 1
    ex = np.empty(F, dtype=np.float64)
    for a in range(F):
        ex[a] = (eta[members[A + 1, a]] - A) / N
    for m in range(2, mmax + 1):
        s = 0.0
        for a in range(F):
            s += ex[a] ** m
        out[col] = s
        col += 1
    if topk > 0:
        srt = np.sort(ex)[::-1]
        for a in range(topk):
            out[col] = srt[a] * N if a < F else 0.0
            col += 1


@njit(cache=True)
def run_grid(grid, clock, rng, eta, A, N, s1, c1, s2, c2, members, mcount, pos, tree, tot,
             stats, acc, out, mmax, topk):
    """Record observables at each grid time (state after the last event at or before it)."""
    status = 0
    for g in range(grid.shape[0]):
        if status == 0:
            clock, status = run_until(grid[g], clock, rng, eta, A, s1, c1, s2, c2,
                                      members, mcount, pos, tree, tot, stats, acc)
        else:
            acc[0] += mcount[A + 1] * (grid[g] - clock)
            clock = grid[g]
        observe(out[g], eta, A, N, members, mcount, tot, mmax, topk)
    return clock, status
