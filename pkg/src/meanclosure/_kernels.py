"""Numba kernels for the linear-time closed-testing shortcuts."""

import numpy as np
from numba import njit


@njit(cache=True, boundscheck=True)
def fdp_bound_kernel(u, v, G):
    """False-discovery bound for a candidate set via the step-down merge.

    u: transformed scores of the candidate set, non-increasing;
    v: transformed scores of the complement, non-increasing (non-empty);
    G: thresholds with G[a] the cutoff for a set of size a (1-based).

    The merge walks the sizes a = 1, 2, ... keeping Q equal to the largest
    possible transformed-score sum of a size-a set whose intersection with
    the candidate set has not yet been certified, stepping k up whenever
    that sum exceeds the threshold. Sentinels: a virtual complement score
    v_0 = max(u_1, v_1) larger than everything consumed after it, and a
    virtual candidate score u_{s+1} below both minima so the candidate
    list never wins the merge once exhausted. Returns k - 1, the bound.
    """
    s = u.shape[0]
    ms = v.shape[0]
    U = np.empty(s + 2)
    U[1:s + 1] = u
    U[s + 1] = min(u[s - 1], v[ms - 1]) - 1.0
    V = np.empty(ms + 1)
    V[1:ms + 1] = v
    V[0] = max(u[0], v[0])
    k = 1
    a = 1
    b = -1
    Q = 0.0
    while a - k - b <= ms and k + b <= s:
        if U[k + b + 1] >= V[a - k - b] or a == 1:
            Q += U[k + b + 1]
            b += 1
        else:
            Q += V[a - k - b]
        while k <= min(s, a) and Q > G[a]:
            if b > 0:
                b -= 1
            else:
                Q += U[k + 1] - V[a - k]
            k += 1
        a += 1
    return k - 1
