"""Truncated bivariate Taylor (jet) arithmetic on plain coefficient arrays.

A jet is a complex array C of shape (jx+1, jt+1); C[a, b] is the Taylor
coefficient of dx^a dt^b (factorials already absorbed).  These helpers are the
numeric substrate shared by the divisor Laurent extraction, the wave-series
jets and the pseudo-differential coefficient algebra; validity-order tracking
lives with the callers.
"""

from math import comb, factorial

import numpy as np
from scipy.signal import convolve2d

from .errors import ZeroLeadingTerm


def jet_from_derivatives(derivs):
    """Convert raw mixed derivatives d_x^a d_t^b f into Taylor coefficients."""
    D = np.asarray(derivs, dtype=complex)
    jx, jt = D.shape[0] - 1, D.shape[1] - 1
    fx = np.array([float(factorial(a)) for a in range(jx + 1)])
    ft = np.array([float(factorial(b)) for b in range(jt + 1)])
    return D / np.outer(fx, ft)


def jmul(A, B):
    """Truncated product, output shaped like the first factor."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    full = convolve2d(A, B)
    return np.ascontiguousarray(full[: A.shape[0], : A.shape[1]])


def jrecip(A):
    """Multiplicative inverse of a jet with nonzero constant term."""
    A = np.asarray(A, dtype=complex)
    if A[0, 0] == 0:
        raise ZeroLeadingTerm("jet reciprocal needs a nonzero constant term")
    jx, jt = A.shape
    R = np.zeros_like(A)
    inv = 1.0 / A[0, 0]
    for a in range(jx):
        for b in range(jt):
            s = 1.0 + 0.0j if (a, b) == (0, 0) else 0.0 + 0.0j
            for k in range(a + 1):
                for l in range(b + 1):
                    if (k, l) == (0, 0):
                        continue
                    s -= A[k, l] * R[a - k, b - l]
            R[a, b] = inv * s
    return R


def jlog(A):
    """log of a jet with nonzero constant term (principal branch at the base)."""
    A = np.asarray(A, dtype=complex)
    if A[0, 0] == 0:
        raise ZeroLeadingTerm("jet log needs a nonzero constant term")
    jx, jt = A.shape
    Ahat = A / A[0, 0]
    Ahat[0, 0] = 0.0
    out = np.zeros_like(A)
    out[0, 0] = np.log(A[0, 0])
    P = Ahat.copy()
    for k in range(1, jx + jt):
        out += ((-1.0) ** (k + 1) / k) * P
        P = jmul(P, Ahat)
    return out


def jdiff_x(A):
    A = np.asarray(A, dtype=complex)
    out = np.zeros_like(A)
    for a in range(A.shape[0] - 1):
        out[a] = (a + 1) * A[a + 1]
    return out


def jdiff_t(A):
    A = np.asarray(A, dtype=complex)
    out = np.zeros_like(A)
    for b in range(A.shape[1] - 1):
        out[:, b] = (b + 1) * A[:, b + 1]
    return out


# --- univariate series helpers (arrays over the t-variable) ---

def smul(a, b):
    """Truncated product of two t-series, output length = len(a)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return np.convolve(a, b)[: len(a)]


def spow_accumulate(e, kmax):
    """[e^0, e^1, ..., e^kmax] as truncated series of fixed length."""
    n = len(e)
    pows = [np.zeros(n, dtype=complex) for _ in range(kmax + 1)]
    pows[0][0] = 1.0
    for k in range(1, kmax + 1):
        pows[k] = smul(pows[k - 1], e)
    return pows


def jeval_x_series(A, e):
    """Evaluate a jet at dx = e(dt): returns a t-series of length A.shape[1]."""
    A = np.asarray(A, dtype=complex)
    pows = spow_accumulate(np.asarray(e, dtype=complex), A.shape[0] - 1)
    out = np.zeros(A.shape[1], dtype=complex)
    for a in range(A.shape[0]):
        out += smul(A[a], pows[a])
    return out


def jshift_x(A, e):
    """Substitute dx -> dx' + e(dt) into a jet (e a t-series, e[0] = 0)."""
    A = np.asarray(A, dtype=complex)
    jx = A.shape[0]
    pows = spow_accumulate(np.asarray(e, dtype=complex), jx - 1)
    out = np.zeros_like(A)
    for a in range(jx):  # source x-power
        for k in range(a + 1):  # surviving dx'^k, factor e^{a-k}
            out[k] += comb(a, k) * smul(A[a], pows[a - k])
    return out


def jmul_t_series(A, s):
    """Multiply a jet by a pure t-series (broadcast over x-orders)."""
    A = np.asarray(A, dtype=complex)
    s = np.asarray(s, dtype=complex)
    out = np.zeros_like(A)
    for a in range(A.shape[0]):
        out[a] = smul(A[a], s)
    return out


def sdiff(s):
    s = np.asarray(s, dtype=complex)
    out = np.zeros_like(s)
    out[:-1] = s[1:] * np.arange(1, len(s))
    return out
