"""Independent reference implementations used to check the package."""

import math

import numpy as np
from scipy.optimize import linprog


def packet_counts(kind, nbytes, host_mtu=512, soc_mtu=128):
    """Packet counts by explicit per-packet enumeration (no ceiling division)."""
    def packets(mtu):
        count, left = 0, nbytes
        while left > 0:
            left -= mtu
            count += 1
        return count

    host, soc = packets(host_mtu), packets(soc_mtu)
    return {
        "client_host": (host, host),
        "client_soc": (soc, 0),
        "hostsoc_rdma": (host + soc, host),
        "hostsoc_dma": (0, host),
    }[kind]


def hybrid_grid_search(P, N, ratio, step=0.1):
    """Best H + S on a step-sized grid satisfying both replication constraints."""
    best = (0.0, 0.0, 0.0)
    s_values = np.arange(0.0, P + step, step)
    for S in s_values:
        h_max = min(P - S * (1 + ratio), N - S * ratio)
        if h_max < 0:
            continue
        H = math.floor(h_max / step + 1e-9) * step
        if H + S > best[0] + 1e-12:
            best = (H + S, S, H)
    return best


def maxmin_lp(A, caps, bounds):
    """Max-min fair rates by repeated LPs: raise the common floor of unfrozen flows,
    then freeze flows that cannot exceed it."""
    n = A.shape[1]
    frozen = np.full(n, np.nan)
    while np.isnan(frozen).any():
        free = np.isnan(frozen)
        # variables: rates x (n) and the floor t; maximize t
        c = np.zeros(n + 1)
        c[-1] = -1.0
        a_ub = [np.append(A[j], 0.0) for j in range(A.shape[0])]
        b_ub = list(caps)
        for i in np.flatnonzero(free):
            row = np.zeros(n + 1)
            row[i], row[-1] = -1.0, 1.0
            a_ub.append(row)
            b_ub.append(0.0)
        var_bounds = [(frozen[i], frozen[i]) if not free[i] else (0, bounds[i]) for i in range(n)]
        var_bounds.append((0, None))
        res = linprog(c, A_ub=np.array(a_ub), b_ub=b_ub, bounds=var_bounds, method="highs")
        t = res.x[-1]
        # a free flow is frozen at t if it cannot be raised above t while others keep >= t
        for i in np.flatnonzero(free):
            c2 = np.zeros(n + 1)
            c2[i] = -1.0
            vb = list(var_bounds)
            vb[-1] = (t, t)
            for k in np.flatnonzero(free):
                if k != i:
                    vb[k] = (max(t - 1e-9, 0), bounds[k])
            r2 = linprog(c2, A_ub=np.array(a_ub), b_ub=b_ub, bounds=vb, method="highs")
            if r2.x[i] <= t + 1e-7:
                frozen[i] = t
    return frozen


def harmonic_direct(m, theta, chunk=10_000_000):
    total = 0.0
    for start in range(1, m + 1, chunk):
        stop = min(m, start + chunk - 1)
        total += float(np.sum(np.arange(start, stop + 1, dtype=float) ** -theta))
    return total


def inverse_cdf_zipf(rng, n, theta, count):
    weights = np.arange(1, n + 1, dtype=float) ** -theta
    cdf = np.cumsum(weights / weights.sum())
    return np.searchsorted(cdf, rng.random(count), side="right") + 1
