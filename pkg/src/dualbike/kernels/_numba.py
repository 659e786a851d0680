"""numba-compiled kernels; same signatures and results as ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def fill_level_counts(d, cap, p, vcap, levels):
    out = np.zeros(levels.shape[0], dtype=np.int64)
    for i in range(levels.shape[0]):
        target = np.int64(np.floor(levels[i] * cap + 0.5))
        if target < d:
            out[i] = min(vcap - p, d - target)
        elif target > d:
            out[i] = max(-p, d - target)
    return out


@njit(cache=True)
def _power_normalize(x, mask, m, out, weight):
    n = x.shape[0]
    cnt = 0
    best = -np.inf
    for i in range(n):
        if mask[i]:
            cnt += 1
            if m != 0.0 and x[i] > 0.0:
                lw = m * np.log(x[i])
                if lw > best:
                    best = lw
    if cnt == 0:
        return
    if m == 0.0 or best == -np.inf:
        for i in range(n):
            if mask[i]:
                out[i] += weight / cnt
        return
    tmp = np.zeros(n)
    total = 0.0
    for i in range(n):
        if mask[i] and x[i] > 0.0:
            tmp[i] = np.exp(m * np.log(x[i]) - best)
            total += tmp[i]
    for i in range(n):
        if mask[i]:
            out[i] += weight * (tmp[i] / total)


@njit(cache=True)
def _plain_normalize(x, mask, out, weight):
    n = x.shape[0]
    total = 0.0
    cnt = 0
    for i in range(n):
        if mask[i]:
            total += x[i]
            cnt += 1
    for i in range(n):
        if mask[i]:
            if total > 0.0:
                out[i] += weight * (x[i] / total)
            else:
                out[i] += weight / cnt


@njit(cache=True)
def station_affinity(inventory, capacities, load, vcap):
    n = inventory.shape[0]
    out = np.empty(n)
    for i in range(n):
        # one rounding on an exact numerator keeps the complement symmetry exact
        c = capacities[i]
        d = inventory[i]
        out[i] = ((c - d) * load + d * (vcap - load)) / (c * vcap)
    return out


@njit(cache=True)
def routing_distribution(dist_row, inventory, capacities, load, vcap, mask, alpha, m, greedy):
    n = dist_row.shape[0]
    out = np.zeros(n)
    any_free = False
    for i in range(n):
        if mask[i]:
            any_free = True
    if not any_free:
        return out
    inv_d = np.zeros(n)
    for i in range(n):
        if mask[i]:
            inv_d[i] = 1.0 / dist_row[i]
    g = station_affinity(inventory.astype(np.float64), capacities.astype(np.float64),
                         float(load), float(vcap))
    if greedy:
        score = np.zeros(n)
        _plain_normalize(inv_d, mask, score, alpha)
        _plain_normalize(g, mask, score, 1.0 - alpha)
        best = -1
        for i in range(n):
            if mask[i] and (best < 0 or score[i] > score[best]):
                best = i
        out[best] = 1.0
        return out
    if m == 0.0:
        _power_normalize(inv_d, mask, 0.0, out, 1.0)
        return out
    _power_normalize(inv_d, mask, m, out, alpha)
    _power_normalize(g, mask, m, out, 1.0 - alpha)
    return out


@njit(cache=True)
def nearest_free_dock(dist_row, inventory, capacities):
    best = -1
    for i in range(dist_row.shape[0]):
        if inventory[i] < capacities[i] and (best < 0 or dist_row[i] < dist_row[best]):
            best = i
    return best


@njit(cache=True)
def masked_argmax(q, mask):
    best = -1
    for i in range(q.shape[0]):
        if mask[i] and (best < 0 or q[i] > q[best]):
            best = i
    return best


@njit(cache=True)
def encode_state(clock_frac, inventory, capacities, b, g, load, vcap, until_next, ops,
                 phase, acting):
    n = inventory.shape[0]
    v = b.shape[0]
    out = np.zeros(1 + n + v * (2 * n + 4))
    out[0] = clock_frac
    for i in range(n):
        out[1 + i] = inventory[i] / capacities[i]
    pos = 1 + n
    for r in range(v):
        if r == 0:
            k = acting
        elif r <= acting:
            k = r - 1
        else:
            k = r
        out[pos + b[k]] = 1.0
        out[pos + n + g[k]] = 1.0
        pos += 2 * n
        out[pos] = load[k] / vcap[k]
        out[pos + 1] = min(max(until_next[k], 0.0), 1.0)
        out[pos + 2] = min(ops[k] / vcap[k], 1.0)
        out[pos + 3] = phase[k]
        pos += 4
    return out
