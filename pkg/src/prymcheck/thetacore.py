"""Error-bounded Riemann theta functions with characteristics and derivatives.

The basic object is the lattice sum

    theta(z | B) = sum_m exp(2*pi*i*(z, m) + pi*i*(B m, m)),   m in Z^g,

with B symmetric and Im(B) positive definite.  Half-integer characteristics
shift the summation index to m + eps, level-two thetas are theta[eps,0](2z|2B),
and directional derivatives multiply each term by 2*pi*i*(m, d) per direction.

Evaluation strategy: the argument is first reduced modulo the lattice
Z^g + B Z^g with an exact exponential compensation factor, then the sum is
truncated to an ellipsoid in the Im(B)-norm whose Gaussian tail is bounded in
closed form (incomplete gamma functions).  The returned error bound covers the
tail, the derivative growth factors, and a float roundoff allowance.
"""

import hashlib
import math
import os
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma_fn
from scipy.special import gammaincc

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    Overflow,
    TargetTooSmall,
    ValidationError,
)

DEFAULT_LATTICE_CAP = 10_000_000
_EXP_LIMIT = 700.0  # beyond this the compensation factor overflows float64

_LATTICE_CACHE = {}
_RADIUS_CACHE = {}
_CHOL_CACHE = {}
_CACHE_LOCK = threading.Lock()


def _cached_cholesky(B):
    key = B.fingerprint()
    hit = _CHOL_CACHE.get(key)
    if hit is None:
        hit = np.linalg.cholesky(B.entries.imag)
        hit.setflags(write=False)
        with _CACHE_LOCK:
            _CHOL_CACHE.setdefault(key, hit)
    return hit


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeriodMatrix:
    """Validated g x g symmetric complex matrix with Im positive definite."""

    genus: int
    entries: np.ndarray  # stored exactly symmetric, read-only

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def imag_cholesky(self):
        # lower-triangular L with Im(B) = L L^T
        return np.linalg.cholesky(self.entries.imag)

    def fingerprint(self):
        return hashlib.sha256(self.entries.tobytes()).hexdigest()[:16]

    def __eq__(self, other):
        return (
            isinstance(other, PeriodMatrix)
            and self.genus == other.genus
            and np.array_equal(self.entries, other.entries)
        )

    def __hash__(self):
        return hash((self.genus, self.entries.tobytes()))


@dataclass(frozen=True)
class Characteristic:
    """Half-integer characteristic: a g-vector with entries in {0, 1/2}."""

    eps: tuple

    @classmethod
    def coerce(cls, raw, genus):
        if isinstance(raw, Characteristic):
            eps = raw.eps
        else:
            eps = tuple(float(x) for x in np.atleast_1d(raw))
        if len(eps) != genus:
            raise DimensionMismatch(
                f"characteristic has length {len(eps)}, expected {genus}"
            )
        for x in eps:
            if x not in (0.0, 0.5):
                raise ValidationError(f"characteristic entries must be 0 or 1/2, got {x}")
        return cls(eps)

    def as_array(self):
        return np.array(self.eps, dtype=float)


@dataclass(frozen=True)
class DerivativeSpec:
    """Ordered directional derivatives, at most 4 directions."""

    directions: tuple  # tuple of g-vectors (tuples of complex)

    @classmethod
    def coerce(cls, raw, genus):
        if raw is None:
            return cls(())
        if isinstance(raw, DerivativeSpec):
            dirs = raw.directions
        else:
            dirs = tuple(tuple(complex(c) for c in np.atleast_1d(d)) for d in raw)
        if len(dirs) > 4:
            raise ValidationError(f"at most 4 derivative directions supported, got {len(dirs)}")
        for d in dirs:
            if len(d) != genus:
                raise DimensionMismatch(f"derivative direction has length {len(d)}, expected {genus}")
            if not all(np.isfinite([c.real, c.imag]).all() for c in d):
                raise ValidationError("derivative directions must be finite")
        return cls(dirs)

    @property
    def order(self):
        return len(self.directions)

    def as_matrix(self):
        if not self.directions:
            return np.zeros((0, 0), dtype=complex)
        return np.array(self.directions, dtype=complex)


@dataclass(frozen=True)
class ThetaResult:
    value: complex
    error_bound: float
    lattice_points_used: int


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def validate_period_matrix(raw, tolerance=None) -> PeriodMatrix:
    """Validate and symmetrize a raw matrix into a PeriodMatrix.

    Asymmetry up to ``tolerance`` (default 1e-12 relative) is averaged away;
    anything larger raises NotSymmetric.  A Cholesky factorization of the
    imaginary part is attempted and failure raises NotPositiveDefinite.
    """
    if isinstance(raw, PeriodMatrix):
        return raw
    M = np.array(raw, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise NotSymmetric(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M.real)) or not np.all(np.isfinite(M.imag)):
        raise ValidationError("period matrix entries must be finite")
    scale = 1.0 + np.abs(M).max()
    tol = 1e-12 * scale if tolerance is None else float(tolerance)
    asym = np.abs(M - M.T).max()
    if asym > tol:
        raise NotSymmetric(f"asymmetry {asym:.3e} exceeds tolerance {tol:.3e}")
    M = (M + M.T) / 2.0
    try:
        np.linalg.cholesky(M.imag)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("imaginary part admits no Cholesky factorization") from None
    return PeriodMatrix(genus=M.shape[0], entries=M)


def characteristics(genus):
    """All 2^g half-integer characteristics, lexicographic with 0 < 1/2."""
    out = []
    for bits in range(2 ** genus):
        eps = tuple(
            0.5 if (bits >> (genus - 1 - k)) & 1 else 0.0 for k in range(genus)
        )
        out.append(Characteristic(eps))
    return out


# ---------------------------------------------------------------------------
# truncation machinery
# ---------------------------------------------------------------------------

def _cube_radius(L):
    """max of ||s||_Y over corners s of the centered unit cube (Y = L L^T)."""
    g = L.shape[0]
    best = 0.0
    for bits in range(2 ** (g - 1)):
        s = np.array([0.5 if (bits >> k) & 1 else -0.5 for k in range(g)])
        best = max(best, float(np.linalg.norm(L.T @ s)))
    return best


def _poly_shift(coeffs, h):
    """Coefficients of p(s + h) given coefficients of p (ascending order)."""
    n = len(coeffs)
    out = np.zeros(n)
    for j, cj in enumerate(coeffs):
        if cj == 0.0:
            continue
        for k in range(j + 1):
            out[k] += cj * math.comb(j, k) * h ** (j - k)
    return out


def _gauss_tail_integral(a, coeffs):
    """integral_a^inf exp(-pi s^2) * sum_j coeffs[j] s^j ds (a >= 0)."""
    a = max(a, 0.0)
    total = 0.0
    for j, cj in enumerate(coeffs):
        if cj == 0.0:
            continue
        k = (j + 1) / 2.0
        total += cj * 0.5 * math.pi ** (-k) * gammaincc(k, math.pi * a * a) * _gamma_fn(k)
    return total


def _tail_bound(B: PeriodMatrix, R, poly_coeffs=(1.0,)):
    """Upper bound for sum over ||m + c||_Y >= R of P(||m+c||_Y) exp(-pi ||m+c||_Y^2).

    Valid uniformly over shifts c in the centered unit cube (and an extra
    half-integer characteristic offset, both absorbed in the cube radius).
    ``poly_coeffs`` are ascending coefficients of the nonnegative increasing
    polynomial P.
    """
    g = B.genus
    L = _cached_cholesky(B)
    rho = 2.0 * _cube_radius(L)  # cube offset + characteristic offset
    det_root = float(np.prod(np.diag(L)))
    sphere = 2.0 * math.pi ** (g / 2.0) / _gamma_fn(g / 2.0)
    # integrand: P(s + 2 rho) * (s + rho)^(g-1), s from R - 2 rho
    shell = _poly_shift(np.array(poly_coeffs, dtype=float), 2.0 * rho)
    radial = np.zeros(g)
    radial[g - 1] = 1.0  # s^(g-1)
    radial = _poly_shift(radial, rho)
    full = np.convolve(shell, radial)
    return sphere / det_root * _gauss_tail_integral(R - 2.0 * rho, full)


def _uniform_cell_factor(B: PeriodMatrix):
    rho = _cube_radius(_cached_cholesky(B))
    return math.exp(math.pi * rho * rho)


def _lattice_cap():
    raw = os.environ.get("PRYM_MAX_LATTICE", "")
    if raw:
        try:
            return int(raw)
        except ValueError:
            pass
    return DEFAULT_LATTICE_CAP


def _point_estimate(B: PeriodMatrix, R):
    Y = B.entries.imag
    g = B.genus
    vol_ball = math.pi ** (g / 2.0) / _gamma_fn(g / 2.0 + 1.0)
    return vol_ball * R ** g / math.sqrt(float(np.linalg.det(Y))) + 2.0 ** g


def truncation_radius(B, target_error, poly_coeffs=(1.0,)) -> float:
    """Smallest ellipsoid radius whose uniform Gaussian tail is below target.

    The bound covers every reduced argument in the fundamental cell; see
    `_tail_bound`.  Raises TargetTooSmall when the implied lattice would
    exceed the configured hard cap (PRYM_MAX_LATTICE, default 1e7 points).

    Results are cached per matrix with the target and polynomial coefficients
    quantized conservatively (toward a larger radius), so repeated evaluations
    against the same matrix avoid the bisection.
    """
    B = validate_period_matrix(B)
    target = float(target_error)
    if not target > 0.0:
        raise ValidationError("target_error must be positive")

    # conservative quantization: shrink the target to a half-decade bucket,
    # grow each polynomial coefficient to a power of two
    t_q = 10.0 ** (math.floor(2.0 * math.log10(target)) / 2.0)
    p_q = tuple(
        0.0 if c <= 0.0 else 2.0 ** math.ceil(math.log2(c)) for c in poly_coeffs
    )
    key = (B.fingerprint(), t_q, p_q)
    hit = _RADIUS_CACHE.get(key)
    if hit is not None:
        return hit

    uniform = _uniform_cell_factor(B)

    def bound(R):
        return uniform * _tail_bound(B, R, p_q)

    L = _cached_cholesky(B)
    lo = 2.0 * _cube_radius(L) + 1e-9
    hi = max(lo + 0.5, 1.0)
    cap = _lattice_cap()
    while bound(hi) > t_q:
        hi *= 1.4
        if _point_estimate(B, hi) > cap:
            raise TargetTooSmall(
                f"radius {hi:.2f} implies more than {cap} lattice points"
            )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if bound(mid) <= t_q:
            hi = mid
        else:
            lo = mid
    R = max(hi, 1.0)
    with _CACHE_LOCK:
        _RADIUS_CACHE.setdefault(key, R)
    return R


def _lattice_points(B: PeriodMatrix, R_enum):
    """Integer points with ||m||_Y <= R_enum, cached per (matrix, radius)."""
    R_q = math.ceil(R_enum * 8.0) / 8.0
    key = (B.fingerprint(), R_q)
    pts = _LATTICE_CACHE.get(key)
    if pts is not None:
        return pts
    Y = B.entries.imag
    L = _cached_cholesky(B)
    Yinv = np.linalg.inv(Y)
    g = B.genus
    spans = [np.arange(-int(np.floor(R_q * math.sqrt(Yinv[i, i]))) - 1,
                       int(np.floor(R_q * math.sqrt(Yinv[i, i]))) + 2)
             for i in range(g)]
    grids = np.meshgrid(*spans, indexing="ij")
    M = np.stack([grid.ravel() for grid in grids], axis=1)
    norms = np.linalg.norm(M @ L, axis=1)
    M = M[norms <= R_q]
    # lexicographic order for reproducibility
    order = np.lexsort(M.T[::-1])
    M = np.ascontiguousarray(M[order])
    M.setflags(write=False)
    with _CACHE_LOCK:
        _LATTICE_CACHE.setdefault(key, M)
    return _LATTICE_CACHE[key]


# ---------------------------------------------------------------------------
# the summation engine
# ---------------------------------------------------------------------------

def _reduce_argument(z, B: PeriodMatrix):
    """Split z = z_red + B n + m0 with z_red in the fundamental cell."""
    Y = B.entries.imag
    n = np.round(np.linalg.solve(Y, z.imag)).astype(int)
    w = z - B.entries @ n
    m0 = np.round(w.real).astype(int)
    z_red = w - m0
    return z_red, n, m0


def _deriv_poly_coeffs(dirs_mat, L, n_vec, c_vec):
    """Ascending coefficients of P(r) >= prod_k |2 pi (m - n, d_k)| on the tail.

    Uses |(m - n, d)| <= |d|_2 (r / lam_min^(1/2) + D) for ||m + c||_Y = r.
    """
    if dirs_mat.shape[0] == 0:
        return (1.0,)
    lam_min = float(np.min(np.linalg.eigvalsh(L @ L.T)))
    D = float(np.linalg.norm(n_vec + c_vec)) + 1.0
    coeffs = np.array([1.0])
    for d in dirs_mat:
        nd = 2.0 * math.pi * float(np.linalg.norm(d))
        coeffs = np.convolve(coeffs, [nd * D, nd / math.sqrt(lam_min)])
    return tuple(coeffs)


def _theta_engine(z, B: PeriodMatrix, eps, deriv_specs, target_error):
    """Shared evaluator.

    Returns (values, error_bounds, npoints) where values[k] is the theta
    derivative for deriv_specs[k], all with the same characteristic eps.
    """
    g = B.genus
    z = np.asarray(z, dtype=complex)
    if z.shape != (g,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({g},)")
    if not np.all(np.isfinite(z.real)) or not np.all(np.isfinite(z.imag)):
        raise ValidationError("z must be finite")

    z_red, n_vec, m0 = _reduce_argument(z, B)
    eps_arr = eps.as_array()
    log_comp = (
        1j * math.pi * complex(n_vec @ B.entries @ n_vec)
        - 2j * math.pi * complex(z @ n_vec)
        + 2j * math.pi * float(m0 @ eps_arr)
    )
    if log_comp.real > _EXP_LIMIT:
        raise Overflow("compensation factor exceeds float range; |Im z| too large")
    comp = np.exp(log_comp)

    Y = B.entries.imag
    L = _cached_cholesky(B)
    c_vec = np.linalg.solve(Y, z_red.imag)

    # one radius serving every requested derivative spec
    worst_poly = (1.0,)
    worst_order = -1
    for spec in deriv_specs:
        if spec.order > worst_order:
            worst_order = spec.order
            worst_poly = _deriv_poly_coeffs(spec.as_matrix(), L, n_vec, c_vec)
    R = truncation_radius(B, target_error / max(abs(comp), 1.0), poly_coeffs=worst_poly)

    M = _lattice_points(B, R + 2.0 * _cube_radius(L))
    if len(M) > _lattice_cap():
        raise TargetTooSmall(f"{len(M)} lattice points exceed the configured cap")
    A = M + eps_arr  # summation index m + eps
    expo = 2j * math.pi * (A @ z_red) + 1j * math.pi * np.einsum("ij,jk,ik->i", A, B.entries, A)
    E = np.exp(expo)

    cell = math.exp(math.pi * float(c_vec @ Y @ c_vec))
    values = []
    bounds = []
    for spec in deriv_specs:
        fac = np.ones(len(A), dtype=complex)
        for d in spec.directions:
            fac = fac * (2j * math.pi * ((A - n_vec) @ np.asarray(d, dtype=complex)))
        s = np.sum(fac * E)
        absum = float(np.sum(np.abs(fac) * np.abs(E)))
        tail = _tail_bound(B, R, _deriv_poly_coeffs(spec.as_matrix(), L, n_vec, c_vec))
        err = abs(comp) * (cell * tail + 1e-15 * absum)
        values.append(comp * s)
        bounds.append(err)
    return values, bounds, len(M)


# ---------------------------------------------------------------------------
# public evaluators
# ---------------------------------------------------------------------------

def theta(z, B, derivs=None, target_error=1e-12) -> ThetaResult:
    """Riemann theta (or a directional derivative of it) with error bound."""
    B = validate_period_matrix(B)
    spec = DerivativeSpec.coerce(derivs, B.genus)
    eps = Characteristic.coerce(np.zeros(B.genus), B.genus)
    vals, errs, npts = _theta_engine(np.asarray(z, dtype=complex), B, eps, [spec], target_error)
    return ThetaResult(vals[0], errs[0], npts)


def theta_char(eps, z, B, derivs=None, target_error=1e-12) -> ThetaResult:
    """theta[eps,0](z|B): first characteristic eps in {0,1/2}^g, second fixed to 0."""
    B = validate_period_matrix(B)
    eps = Characteristic.coerce(eps, B.genus)
    spec = DerivativeSpec.coerce(derivs, B.genus)
    vals, errs, npts = _theta_engine(np.asarray(z, dtype=complex), B, eps, [spec], target_error)
    return ThetaResult(vals[0], errs[0], npts)


def level2_theta(eps, z, B, derivs=None, target_error=1e-12) -> ThetaResult:
    """Level-two theta: Theta[eps,0](z) = theta[eps,0](2z | 2B).

    Derivatives are taken with respect to z, so each derivative direction
    carries a chain-rule factor 2.
    """
    B = validate_period_matrix(B)
    eps = Characteristic.coerce(eps, B.genus)
    spec = DerivativeSpec.coerce(derivs, B.genus)
    B2 = PeriodMatrix(B.genus, 2.0 * B.entries)
    z2 = 2.0 * np.asarray(z, dtype=complex)
    scale = 2.0 ** spec.order
    vals, errs, npts = _theta_engine(z2, B2, eps, [spec], target_error / scale)
    return ThetaResult(scale * vals[0], scale * errs[0], npts)


def level2_all_chars(z, B, deriv_specs, target_error=1e-12):
    """Theta[eps,0](z) for every eps and every spec in ``deriv_specs``.

    Returns a (2^g, len(deriv_specs)) complex array in the lexicographic
    characteristic order of `characteristics`.  This is the batch evaluator
    behind the linear condition systems, sharing one lattice enumeration.
    """
    B = validate_period_matrix(B)
    specs = [DerivativeSpec.coerce(s, B.genus) for s in deriv_specs]
    B2 = PeriodMatrix(B.genus, 2.0 * B.entries)
    z2 = 2.0 * np.asarray(z, dtype=complex)
    chars = characteristics(B.genus)
    out = np.zeros((len(chars), len(specs)), dtype=complex)
    for i, eps in enumerate(chars):
        vals, _, _ = _theta_engine(z2, B2, eps, specs, target_error)
        for k, spec in enumerate(specs):
            out[i, k] = 2.0 ** spec.order * vals[k]
    return out


def theta_gradient(z, B, target_error=1e-12):
    """Gradient of theta along the standard coordinate directions."""
    B = validate_period_matrix(B)
    g = B.genus
    eye = np.eye(g)
    eps = Characteristic.coerce(np.zeros(g), g)
    specs = [DerivativeSpec.coerce([eye[k]], g) for k in range(g)]
    vals, _, _ = _theta_engine(np.asarray(z, dtype=complex), B, eps, specs, target_error)
    return np.array(vals, dtype=complex)


def theta_uv_jet(z, B, U, V, jx, jt, target_error=1e-14):
    """Raw mixed directional derivatives d_U^a d_V^b theta(z|B).

    Returns a (jx+1, jt+1) array with entry [a, b] equal to the derivative of
    order a along U and b along V (no factorial scaling).  This is the jet
    backend for divisor tracking, Laurent extraction, and the wave/psdo
    pipelines; unlike the public DerivativeSpec surface it accepts orders
    beyond 4 (up to a safety cap of 40 total).
    """
    B = validate_period_matrix(B)
    g = B.genus
    if jx + jt > 40:
        raise ValidationError("requested jet order exceeds the safety cap")
    z = np.asarray(z, dtype=complex)
    if z.shape != (g,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({g},)")
    U = np.asarray(U, dtype=complex)
    V = np.asarray(V, dtype=complex)

    z_red, n_vec, m0 = _reduce_argument(z, B)
    log_comp = (
        1j * math.pi * complex(n_vec @ B.entries @ n_vec)
        - 2j * math.pi * complex(z @ n_vec)
    )
    if log_comp.real > _EXP_LIMIT:
        raise Overflow("compensation factor exceeds float range; |Im z| too large")
    comp = np.exp(log_comp)

    Y = B.entries.imag
    L = _cached_cholesky(B)
    c_vec = np.linalg.solve(Y, z_red.imag)
    # radius: plain target plus enough slack for the polynomial growth of the
    # highest mixed order (heuristic (1+order) digits of margin)
    order = jx + jt
    R = truncation_radius(B, target_error * 10.0 ** (-(order // 4 + 2)))

    M = _lattice_points(B, R + 2.0 * _cube_radius(L))
    A = M.astype(float)
    expo = 2j * math.pi * (A @ z_red) + 1j * math.pi * np.einsum("ij,jk,ik->i", A, B.entries, A)
    E = np.exp(expo)
    FU = 2j * math.pi * ((A - n_vec) @ U)
    FV = 2j * math.pi * ((A - n_vec) @ V)

    FU_pow = np.ones((jx + 1, len(A)), dtype=complex)
    for a in range(1, jx + 1):
        FU_pow[a] = FU_pow[a - 1] * FU
    FV_pow = np.ones((jt + 1, len(A)), dtype=complex)
    for b in range(1, jt + 1):
        FV_pow[b] = FV_pow[b - 1] * FV

    out = np.zeros((jx + 1, jt + 1), dtype=complex)
    for a in range(jx + 1):
        weighted = FU_pow[a] * E
        for b in range(jt + 1):
            out[a, b] = comp * np.sum(FV_pow[b] * weighted)
    return out
