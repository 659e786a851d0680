"""Pure-numpy kernels. Reference path, and the fallback when numba is unavailable."""
import numpy as np


def fill_level_counts(d, cap, p, vcap, levels):
    """Signed pick-up (+) / drop-off (-) counts reaching each fill level."""
    targets = np.floor(np.asarray(levels) * cap + 0.5).astype(np.int64)
    out = np.zeros(len(targets), dtype=np.int64)
    above = targets < d
    below = targets > d
    out[above] = np.minimum(vcap - p, d - targets[above])
    out[below] = np.maximum(-p, d - targets[below])
    return out


def _power_normalize(x, mask, m):
    # x**m / sum(x**m) over mask, computed in log space
    out = np.zeros(len(x))
    idx = np.flatnonzero(mask)
    if m == 0.0:
        out[idx] = 1.0 / len(idx)
        return out
    vals = x[idx]
    pos = vals > 0
    if not pos.any():
        out[idx] = 1.0 / len(idx)
        return out
    logw = np.full(len(idx), -np.inf)
    logw[pos] = m * np.log(vals[pos])
    w = np.exp(logw - logw.max())
    out[idx] = w / w.sum()
    return out


def _plain_normalize(x, mask):
    out = np.zeros(len(x))
    idx = np.flatnonzero(mask)
    total = x[idx].sum()
    if total > 0:
        out[idx] = x[idx] / total
    else:
        out[idx] = 1.0 / len(idx)
    return out


def station_affinity(inventory, capacities, load, vcap):
    """How well each station matches the vehicle: empty docks x vehicle fullness + bikes x vehicle space."""
    # one rounding on an exact numerator keeps the complement symmetry exact
    c, d = capacities, inventory
    return ((c - d) * load + d * (vcap - load)) / (c * vcap)


def routing_distribution(dist_row, inventory, capacities, load, vcap, mask, alpha, m, greedy):
    mask = np.asarray(mask, dtype=bool)
    n = len(dist_row)
    if not mask.any():
        return np.zeros(n)
    inv_d = np.zeros(n)
    inv_d[mask] = 1.0 / dist_row[mask]
    g = station_affinity(inventory.astype(float), capacities.astype(float), float(load), float(vcap))
    if greedy:
        score = alpha * _plain_normalize(inv_d, mask) + (1.0 - alpha) * _plain_normalize(g, mask)
        score[~mask] = -np.inf
        out = np.zeros(n)
        out[int(np.argmax(score))] = 1.0
        return out
    if m == 0.0:
        # both terms are uniform; skip the mix so the mass is exactly 1/k
        return _power_normalize(inv_d, mask, 0.0)
    return alpha * _power_normalize(inv_d, mask, m) + (1.0 - alpha) * _power_normalize(g, mask, m)


def nearest_free_dock(dist_row, inventory, capacities):
    free = inventory < capacities
    if not free.any():
        return -1
    d = np.where(free, dist_row, np.inf)
    return int(np.argmin(d))


def masked_argmax(q, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return -1
    return int(np.argmax(np.where(mask, q, -np.inf)))


def encode_state(clock_frac, inventory, capacities, b, g, load, vcap, until_next, ops,
                 phase, acting):
    n = len(inventory)
    v = len(b)
    out = np.zeros(1 + n + v * (2 * n + 4))
    out[0] = clock_frac
    out[1:1 + n] = inventory / capacities
    order = [acting] + [k for k in range(v) if k != acting]
    pos = 1 + n
    for k in order:
        out[pos + b[k]] = 1.0
        out[pos + n + g[k]] = 1.0
        pos += 2 * n
        out[pos] = load[k] / vcap[k]
        out[pos + 1] = min(max(until_next[k], 0.0), 1.0)
        out[pos + 2] = min(ops[k] / vcap[k], 1.0)
        out[pos + 3] = phase[k]
        pos += 4
    return out
