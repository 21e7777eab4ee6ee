"""Compiled inner loop for the allocation draw."""

import math

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# exp(x) is exactly 0.0 in double precision below this.
_EXP_ZERO = -746.0


@numba.njit(cache=True)
def allocate(y, log_weights, means, variances, u, out):
    """Inverse-CDF categorical draw of every allocation, for every chain.

    ``log_weights``, ``means``, ``variances`` are (J, K); ``u`` is (J, n)
    with entries in (0, 1].  Writes labels into ``out`` (J, n) and returns
    -1, or the flat index ``j * n + i`` of the first observation whose
    probabilities all vanished.

    """
    J, K = log_weights.shape
    n = y.shape[0]
    c0 = np.empty(K)
    half_prec = np.empty(K)
    buf = np.empty(K)
    for j in range(J):
        for k in range(K):
            c0[k] = -0.5 * (LOG_2PI + math.log(variances[j, k]))
            half_prec[k] = 0.5 / variances[j, k]
        for i in range(n):
            top = -np.inf
            for k in range(K):
                d = y[i] - means[j, k]
                v = log_weights[j, k] + (c0[k] - d * d * half_prec[k])
                buf[k] = v
                if v > top:
                    top = v
            if not (top > -np.inf and top < np.inf):
                return j * n + i
            total = 0.0
            for k in range(K):
                x = buf[k] - top
                if x > _EXP_ZERO:
                    total += math.exp(x)
                buf[k] = total
            # buf is non-decreasing: the label is the first index whose
            # cumulative mass reaches u * total
            threshold = u[j, i] * total
            label = K - 1
            for k in range(K - 1):
                if buf[k] >= threshold:
                    label = k
                    break
            out[j, i] = label
    return -1
