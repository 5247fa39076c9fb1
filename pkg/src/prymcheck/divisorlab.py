"""Theta-divisor sampling, the divisor identity, root tracking, Laurent data.

The central objects are zeros of tau(x, t) = theta(U x + V t + Z).  A simple
zero eta(t) moves with velocities obtained by implicit differentiation,

    eta'  = - dV theta / dU theta,
    eta'' = - (dU^2 theta eta'^2 + 2 dUdV theta eta' + dV^2 theta) / dU theta,

and the potential u = 2 d^2_{xt} ln tau + C has the Laurent expansion

    u = 2 eta' / (x - eta)^2 + v + w (x - eta) + ...

whose coefficients v, w (and the time derivative of v) are extracted from a
bivariate jet of tau: the root branch x = eta(t) is divided out of the jet
(Weierstrass-style), the logarithm of the regular cofactor is differentiated,
and the chain rule converts shifted-frame derivatives back to (x, t).

The residue dynamics residual per tracked node is

    |eta'' v - eta' v' + 2 eta'^2 w| / max(|eta'' v|, |eta' v'|, |2 eta'^2 w|).
"""

from dataclasses import dataclass

import numpy as np

from .abeliandata import FlowData
from .errors import AllTermsTiny, NotSimple, Overflow, RootLost, SamplingFailed
from .jets import (
    jdiff_t,
    jdiff_x,
    jet_from_derivatives,
    jeval_x_series,
    jlog,
    jmul_t_series,
    jshift_x,
    sdiff,
)
from .thetacore import theta, theta_gradient, theta_uv_jet, validate_period_matrix

NEWTON_TOL = 1e-12
SAMPLE_TOL_FACTOR = 1e-10
SIMPLE_ROOT_FACTOR = 1e-8
JET_X_ORDER = 6
JET_T_ORDER = 4


# ---------------------------------------------------------------------------
# divisor sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DivisorSample:
    Z: np.ndarray
    theta_abs: float
    grad_scale: float

    def verify(self, B):
        """Re-check the divisor membership invariant against fresh evaluations."""
        th = abs(theta(self.Z, B).value)
        grad = float(np.linalg.norm(theta_gradient(self.Z, B)))
        return th <= SAMPLE_TOL_FACTOR * (1.0 + grad)


def _divisor_score(B, Z):
    """|theta| relative to the gradient scale; inf when out of float range."""
    try:
        th = theta(Z, B).value
        grad = theta_gradient(Z, B)
    except Overflow:
        return np.inf, None, None
    gnorm = float(np.linalg.norm(grad))
    if not np.isfinite(th) or not np.isfinite(gnorm):
        return np.inf, None, None
    return abs(th) / (1.0 + gnorm), th, grad


def _newton_to_divisor(B, Z0, W, max_steps=50):
    """Damped Newton for theta(Z0 + s W) = 0, seeded by a coarse line scan.

    Plain Newton escapes easily: away from its zeros theta is dominated by a
    single exponential term, where the Newton step is a nonzero constant.
    """
    scan = np.linspace(-1.5, 1.5, 25)
    scores = []
    for sv in scan:
        sc, _, _ = _divisor_score(B, Z0 + sv * W)
        scores.append(sc)
    s = complex(scan[int(np.argmin(scores))])
    score, th, grad = _divisor_score(B, Z0 + s * W)
    if not np.isfinite(score):
        return None
    for _ in range(max_steps):
        Z = Z0 + s * W
        gnorm = float(np.linalg.norm(grad))
        if abs(th) <= NEWTON_TOL * (1.0 + gnorm):
            return Z, abs(th), gnorm
        dW = complex(grad @ W)
        if abs(dW) < 1e-14 * (1.0 + gnorm):
            return None
        step = th / dW
        for _ in range(8):  # halve until the relative score improves
            cand, th_c, grad_c = _divisor_score(B, Z0 + (s - step) * W)
            if cand < score:
                break
            step = step / 2.0
        else:
            return None
        s = s - step
        score, th, grad = cand, th_c, grad_c
    return None


def _reduce_to_cell(Z, B):
    """Translate by the period lattice into the fundamental cell."""
    Y = B.entries.imag
    n = np.round(np.linalg.solve(Y, Z.imag)).astype(int)
    w = Z - B.entries @ n
    return w - np.round(w.real)


def sample_theta_divisor(B, seed, count, max_retries=10):
    """Seeded points on the theta divisor found by scalar Newton iteration.

    Returned points are reduced to the fundamental cell (the divisor is
    invariant under lattice translations).
    """
    B = validate_period_matrix(B)
    g = B.genus
    rng = np.random.default_rng(int(seed))
    samples = []
    for _ in range(int(count)):
        hit = None
        for _ in range(max_retries):
            a = rng.uniform(-0.5, 0.5, size=g)
            b = rng.uniform(-0.5, 0.5, size=g)
            Z0 = a + B.entries @ b
            W = rng.normal(size=g) + 1j * rng.normal(size=g)
            hit = _newton_to_divisor(B, Z0, W)
            if hit is not None:
                break
        if hit is None:
            raise SamplingFailed("Newton retries exhausted while sampling the divisor")
        Z = _reduce_to_cell(hit[0], B)
        # polish after the translation and refresh the certificate values
        polished = _newton_to_divisor(B, Z, np.ones(g) + 0.3j * np.arange(1, g + 1))
        if polished is not None:
            Z, th_abs, gnorm = polished
        else:
            th_abs = abs(theta(Z, B).value)
            gnorm = float(np.linalg.norm(theta_gradient(Z, B)))
        samples.append(DivisorSample(Z=Z, theta_abs=th_abs, grad_scale=gnorm))
    return samples


# ---------------------------------------------------------------------------
# the divisor identity
# ---------------------------------------------------------------------------

def condition_C_residual(B, U, V, sample, floor=1e-18):
    """Relative residual of the six-derivative divisor identity at a sample.

    The identity combines four products of directional derivatives, each with
    three U- and three V-derivatives in total, so the relative residual is
    invariant under rescaling of U and V and under swapping them.  Full
    lattice shifts of Z multiply the identity numerator by a common cube of
    the quasi-periodicity factor; the product normalizer is covariant only on
    the divisor where the identity itself (nearly) holds, which is the regime
    the residual is meant to certify.
    """
    B = validate_period_matrix(B)
    U = np.asarray(U, dtype=complex)
    V = np.asarray(V, dtype=complex)
    Z = np.asarray(sample.Z if isinstance(sample, DivisorSample) else sample, dtype=complex)
    J = theta_uv_jet(Z, B, U, V, 2, 2)
    # the identity is homogeneous of degree 3 in the jet entries: rescale to
    # keep the triple products inside float range for large arguments
    mag = np.abs(J[1:, :]).max() + np.abs(J[0, 1:]).max()
    if mag > 0:
        J = J / mag
    tU, tV = J[1, 0], J[0, 1]
    tUU, tVV, tUV = J[2, 0], J[0, 2], J[1, 1]
    tUUVV = J[2, 2]
    tUVV = J[1, 2]
    tUUV = J[2, 1]
    prods = [
        tU * tV * tUUVV,
        tUU * tVV * tUV,
        -tUU * tV * tUVV,
        -tU * tVV * tUUV,
    ]
    scale = max(abs(p) for p in prods)
    if scale < floor:
        raise AllTermsTiny("all four products below floor; degenerate divisor point")
    return abs(sum(prods)) / scale


# ---------------------------------------------------------------------------
# root tracking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RootTrack:
    t_nodes: np.ndarray
    eta: np.ndarray
    eta_dot: np.ndarray
    eta_ddot: np.ndarray
    v: np.ndarray
    w: np.ndarray
    v_dot: np.ndarray

    def verify(self, d: FlowData, Z):
        """Each node satisfies the on-divisor invariant for tau."""
        Z = np.asarray(Z, dtype=complex)
        for t, x in zip(self.t_nodes, self.eta):
            wv = d.U * x + d.V * t + Z
            th = abs(theta(wv, d.B).value)
            gn = float(np.linalg.norm(theta_gradient(wv, d.B)))
            if th > SAMPLE_TOL_FACTOR * (1.0 + gn):
                return False
        return True


def _tau_newton(d, Z, t, x0, max_steps=50):
    x = complex(x0)
    for _ in range(max_steps):
        wv = d.U * x + d.V * t + Z
        try:
            J = theta_uv_jet(wv, d.B, d.U, d.V, 1, 0)
        except Overflow:
            return None
        tau, tau_x = J[0, 0], J[1, 0]
        if abs(tau) <= NEWTON_TOL * (1.0 + abs(tau_x)):
            return x
        if abs(tau_x) < 1e-14:
            return None
        x = x - tau / tau_x
    return None


def _node_data(d, Z, t, eta, C):
    """Velocities and Laurent data at a verified simple root."""
    wv = d.U * eta + d.V * t + Z
    derivs = theta_uv_jet(wv, d.B, d.U, d.V, JET_X_ORDER, JET_T_ORDER)
    tau_x = derivs[1, 0]
    grad_scale = float(np.linalg.norm(theta_gradient(wv, d.B))) * float(
        np.linalg.norm(d.U)
    )
    if abs(tau_x) < SIMPLE_ROOT_FACTOR * (1.0 + grad_scale):
        raise NotSimple(f"|dU theta| = {abs(tau_x):.3e} too small at t = {t}")
    eta_dot = -derivs[0, 1] / tau_x
    eta_ddot = -(
        derivs[2, 0] * eta_dot**2 + 2.0 * derivs[1, 1] * eta_dot + derivs[0, 2]
    ) / tau_x
    v, w_coef, v_dot = _laurent_from_jet(derivs, C)
    return eta_dot, eta_ddot, v, w_coef, v_dot


def _laurent_from_jet(derivs, C):
    """(v, w, v_dot) of u = 2 d^2_{xt} ln tau + C from a tau jet at the root."""
    tau = jet_from_derivatives(derivs)
    jt = tau.shape[1] - 1
    # root branch e(dt) with tau(e(dt), dt) = 0, by Newton on truncated series
    e = np.zeros(jt + 1, dtype=complex)
    tau_x = jdiff_x(tau)
    for _ in range(max(3, jt.bit_length() + 2)):
        num = jeval_x_series(tau, e)
        den = jeval_x_series(tau_x, e)
        corr = np.zeros_like(e)  # series division num / den
        inv0 = 1.0 / den[0]
        for i in range(len(e)):
            s = num[i]
            for k in range(1, i + 1):
                s -= den[k] * corr[i - k]
            corr[i] = s * inv0
        e = e - corr
        e[0] = 0.0  # the root sits exactly at the jet base
    sigma = jshift_x(tau, e)  # sigma(dx', dt) = tau(dx' + e, dt)
    h = np.zeros_like(sigma)
    h[:-1] = sigma[1:]  # sigma / dx' (constant column vanishes on the root)
    L = jlog(h)
    e_prime = sdiff(e)
    # d^2_{xt} ln h in original coordinates, written in the shifted frame
    G = 2.0 * (jdiff_t(jdiff_x(L)) - jmul_t_series(jdiff_x(jdiff_x(L)), e_prime))
    v = G[0, 0] + C
    w_coef = G[1, 0]
    v_dot = G[0, 1]
    return v, w_coef, v_dot


def track_root(d: FlowData, Z, t_span, nodes, x0_guess) -> RootTrack:
    """Predictor-corrector continuation of a simple zero of tau over t_span."""
    Z = np.asarray(Z, dtype=complex)
    C = d.C if d.C is not None else 0.0
    t0, t1 = t_span
    ts = np.linspace(float(t0), float(t1), int(nodes))
    eta0 = _tau_newton(d, Z, ts[0], x0_guess)
    if eta0 is None:
        raise RootLost("initial Newton iteration failed from the supplied guess")
    etas, dots, ddots, vs, ws, vdots = [], [], [], [], [], []
    eta = eta0
    for i, t in enumerate(ts):
        if i > 0:
            dt = ts[i] - ts[i - 1]
            guess = etas[-1] + dots[-1] * dt + 0.5 * ddots[-1] * dt * dt
            eta = _tau_newton(d, Z, t, guess)
            if eta is None:
                raise RootLost(f"Newton diverged at node {i} (t = {t})")
        eta_dot, eta_ddot, v, w_coef, v_dot = _node_data(d, Z, t, eta, C)
        etas.append(eta)
        dots.append(eta_dot)
        ddots.append(eta_ddot)
        vs.append(v)
        ws.append(w_coef)
        vdots.append(v_dot)
    return RootTrack(
        t_nodes=ts,
        eta=np.array(etas),
        eta_dot=np.array(dots),
        eta_ddot=np.array(ddots),
        v=np.array(vs),
        w=np.array(ws),
        v_dot=np.array(vdots),
    )


def laurent_coeffs_u(d: FlowData, Z, t, eta):
    """Laurent data (v, w, v_dot) of the potential at a verified simple root."""
    Z = np.asarray(Z, dtype=complex)
    C = d.C if d.C is not None else 0.0
    _, _, v, w_coef, v_dot = _node_data(d, Z, float(t), complex(eta), C)
    return v, w_coef, v_dot


def sys_residual(track: RootTrack, rel_floor=1e-5, degenerate_floor=1e-12):
    """Per-node relative residual of the root-dynamics relation.

    Nodes with |eta'| below ``degenerate_floor`` are degenerate (the Laurent
    pole disappears) and are reported as NaN rather than silently passed.
    The normalizer is the largest of the three terms, floored at
    rel_floor * |eta'|^2 * (1 + |v|): at genus 1 the zeros move rigidly, so
    all three terms vanish identically and an unfloored ratio would be pure
    roundoff noise.
    """
    out = []
    for ed, edd, v, vd, w_coef in zip(
        track.eta_dot, track.eta_ddot, track.v, track.v_dot, track.w
    ):
        if abs(ed) < degenerate_floor:
            out.append(float("nan"))
            continue
        terms = [edd * v, -ed * vd, 2.0 * ed * ed * w_coef]
        scale = max(abs(z) for z in terms)
        floor = rel_floor * abs(ed) ** 2 * (1.0 + abs(v))
        out.append(abs(sum(terms)) / max(scale, floor))
    return out
