"""Periodic wave-series construction and the Laurent residue step.

The recursion for the coefficients of a formal wave solution
psi = e^{kt} (1 + sum_s xi_s k^{-s}) of (d_x d_t + u) psi = 0 is

    d_x xi_{s+1} = - d^2_{xt} xi_s - u xi_s,

solved here for x-periodic potentials by cumulative quadrature plus a
normalization function c_s(t) per level, fixed (up to a constant, taken zero
at the initial time) by the linear ODE

    c_s'(t) + integral_period u (c_s + xi_s^0) dx = 0.

Construction carries exact t-derivative stacks: the potential callable must
provide analytic t-derivatives, so the only discretization errors are the
second-order x-quadrature and, in the residual check, the second-order
x-difference -- halving the x-step divides the residual by four.

Pole-carrying Laurent data propagates separately through `laurent_step`,
which advances the residue r_s and first regular coefficient r_{s1} of
xi_s = r_s/(x-eta) + r_{s0} + r_{s1}(x-eta) + ... one order, and reports the
residue obstruction |v r + 2 eta' r_1| of the produced level.
"""

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np

from .errors import DegenerateRoot, NotPeriodic, ValidationError
from .jets import sdiff, smul
from .thetacore import validate_period_matrix

PERIODICITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# potential callables
# ---------------------------------------------------------------------------

def theta_potential(flow, Z, constant=None):
    """Pole-free periodic potential from genus-1 flow data on a real line.

    Returns a callable u(x_array, t, dt_order=0) evaluating t-derivatives of
    2 d^2_{xt} log theta(U x + V t + Z) + constant.  Requires genus 1 with
    U = (1,) (period exactly 1 in x) and an argument line staying away from
    the theta zeros (real V and Z with real B-line suffices).
    """
    if flow.genus != 1 or abs(flow.U[0] - 1.0) > 1e-12:
        raise ValidationError("theta potential requires genus 1 data with U = (1,)")
    B = validate_period_matrix(flow.B)
    b = complex(B.entries[0, 0])
    v = complex(flow.V[0])
    z0 = complex(np.asarray(Z, dtype=complex).reshape(1)[0])
    c0 = complex(flow.C if constant is None else constant)

    # fixed lattice span for the 1-D sums (Im(b) >= 1 for generated matrices)
    span = int(np.ceil(6.0 / np.sqrt(b.imag))) + 3
    mm = np.arange(-span, span + 1)
    quad = np.exp(1j * np.pi * b * mm * mm)

    def u(x, t, dt_order=0):
        x = np.asarray(x, dtype=float)
        w = x + v * t + z0  # argument on the line
        E = np.exp(2j * np.pi * np.outer(mm, w)) * quad[:, None]
        n_der = dt_order + 2
        derivs = np.empty((n_der + 1, len(w)), dtype=complex)
        fac = np.ones(len(mm), dtype=complex)
        for k in range(n_der + 1):
            derivs[k] = fac @ E
            fac = fac * (2j * np.pi * mm)
        # log-derivatives per point via truncated series
        th = derivs / np.array([factorial(k) for k in range(n_der + 1)])[:, None]
        logj = _log_series_columns(th)
        # u^{(j)} = 2 v^{j+1} (log theta)^{(j+2)} + constant at j = 0
        j = dt_order
        val = 2.0 * v ** (j + 1) * logj[j + 2] * factorial(j + 2)
        if j == 0:
            val = val + c0
        return val

    return u


def _log_series_columns(th):
    """Columnwise truncated log of Taylor-coefficient stacks (axis 0)."""
    n = th.shape[0]
    out = np.zeros_like(th)
    out[0] = np.log(th[0])
    hat = th / th[0]
    hat[0] = 0.0
    P = hat.copy()
    for k in range(1, n):
        out += ((-1.0) ** (k + 1) / k) * P
        if k < n - 1:
            P = _col_mul(P, hat)
    return out


def _col_mul(a, b):
    n = a.shape[0]
    out = np.zeros_like(a)
    for i in range(n):
        for k in range(i + 1):
            out[i] += a[k] * b[i - k]
    return out


# ---------------------------------------------------------------------------
# periodic construction
# ---------------------------------------------------------------------------

@dataclass
class WaveSeries:
    order: int
    x: np.ndarray
    t: np.ndarray
    xi: list  # xi[s] is an (nx, nt) array, s = 0..S
    xi_t: list  # exact d_t xi[s] on the same grid
    c: list  # normalization functions c_s(t) on the t grid (c[0] == 0)
    periodic_defect: np.ndarray  # per order s = 0..S, max |wrap mismatch|
    poles: tuple = ()  # (eta, r_s, r_s0, r_s1) records; empty for periodic builds


def _cumtrapz_periodic(values, h):
    """Cumulative trapezoid from the first node along axis 0 (periodic grid)."""
    avg = 0.5 * (values[1:] + values[:-1]) * h
    out = np.zeros_like(values)
    out[1:] = np.cumsum(avg, axis=0)
    return out


def _full_period_integral(values, h):
    """Trapezoid over the full period, wrapping the first node."""
    wrapped = np.concatenate([values, values[:1]], axis=0)
    return np.sum(0.5 * (wrapped[1:] + wrapped[:-1]) * h, axis=0)


def build_wave_periodic(u, S, x0=0.0, nx=512, nt=64, t_span=(0.0, 0.25),
                        depth_guard=6) -> WaveSeries:
    """Construct the first S wave coefficients for an x-periodic potential.

    ``u(x_array, t, dt_order=0)`` must be periodic in x with period 1 (checked
    to 1e-8) and supply analytic t-derivatives up to order S + depth_guard.
    The normalization ODE is integrated by a Taylor method of the full stack
    depth, so its error is negligible against the x-quadrature.
    """
    S = int(S)
    if S < 0 or S > 10:
        raise ValidationError("order S must be in 0..10")
    x = x0 + np.arange(int(nx)) / int(nx)
    t = np.linspace(float(t_span[0]), float(t_span[1]), int(nt))
    h = 1.0 / int(nx)
    depth0 = S + depth_guard

    probe = u(np.array([x0]), t[0])
    wrap = u(np.array([x0 + 1.0]), t[0])
    if abs(probe[0] - wrap[0]) > PERIODICITY_TOL * (1.0 + abs(probe[0])):
        raise NotPeriodic("u(x0 + 1, t) differs from u(x0, t) beyond tolerance")

    # u derivative stacks: ustack[j][ix, it] = d_t^j u
    ustack = np.empty((depth0 + 1, len(x), len(t)), dtype=complex)
    for j in range(depth0 + 1):
        for it, tv in enumerate(t):
            ustack[j][:, it] = u(x, tv, dt_order=j)

    # xi stacks per level; level s carries depth0 - s derivative orders
    xi_stacks = [np.zeros((depth0 + 1, len(x), len(t)), dtype=complex)]
    xi_stacks[0][0] = 1.0
    c_list = [np.zeros(len(t), dtype=complex)]
    defects = [0.0]

    for s in range(S):
        depth_next = depth0 - (s + 1)
        cur = xi_stacks[s]
        # product stacks d_t^j (u * xi_s) by Leibniz
        prod = np.zeros((depth_next + 1, len(x), len(t)), dtype=complex)
        for j in range(depth_next + 1):
            for l in range(j + 1):
                prod[j] += comb(j, l) * ustack[l] * cur[j - l]
        xi0_next = np.empty_like(prod)
        for j in range(depth_next + 1):
            xi0_next[j] = -cur[j + 1] - _cumtrapz_periodic(prod[j], h)

        # normalization function for the produced level:
        #   c'(t) = -(abar c + bbar),  abar = period integral of u,
        #   bbar = period integral of u * xi^0_{s+1}
        abar = np.empty((depth_next + 1, len(t)), dtype=complex)
        bbar = np.empty((depth_next + 1, len(t)), dtype=complex)
        for j in range(depth_next + 1):
            abar[j] = _full_period_integral(ustack[j], h)
            acc = np.zeros((len(x), len(t)), dtype=complex)
            for l in range(j + 1):
                acc += comb(j, l) * ustack[l] * xi0_next[j - l]
            bbar[j] = _full_period_integral(acc, h)
        c_nodes, c_stack = _taylor_ode(abar, bbar, t)

        nxt = np.zeros_like(cur)
        for j in range(depth_next + 1):
            nxt[j] = xi0_next[j] + c_stack[j][None, :]
        xi_stacks.append(nxt)
        c_list.append(c_nodes)

        # wrap defect of xi^0_{s+1}: - integral over the period of u xi_s
        defect = -_full_period_integral(prod[0], h)
        defects.append(float(np.abs(defect).max()))

    return WaveSeries(
        order=S,
        x=x,
        t=t,
        xi=[st[0] for st in xi_stacks],
        xi_t=[st[1] for st in xi_stacks],
        c=c_list,
        periodic_defect=np.array(defects),
    )


def _taylor_ode(abar, bbar, t):
    """Integrate c' = -(abar c + bbar), c(t[0]) = 0, by full-depth Taylor steps.

    abar, bbar carry t-derivative stacks at the grid nodes; returns node
    values and the derivative stack of c at the nodes.
    """
    depth = abar.shape[0]
    nt = len(t)
    c_nodes = np.zeros(nt, dtype=complex)
    c_stack = np.zeros((depth, nt), dtype=complex)

    def stack_at(it, c_val):
        st = np.zeros(depth, dtype=complex)
        st[0] = c_val
        for j in range(depth - 1):
            acc = bbar[j, it]
            for l in range(j + 1):
                acc += comb(j, l) * abar[l, it] * st[j - l]
            st[j + 1] = -acc
        return st

    c_stack[:, 0] = stack_at(0, 0.0)
    for it in range(nt - 1):
        dt = t[it + 1] - t[it]
        st = c_stack[:, it]
        val = sum(st[j] * dt ** j / factorial(j) for j in range(depth))
        c_nodes[it + 1] = val
        c_stack[:, it + 1] = stack_at(it + 1, val)
    return c_nodes, c_stack


# ---------------------------------------------------------------------------
# recursion residual
# ---------------------------------------------------------------------------

def _dx_periodic(arr, h):
    return (np.roll(arr, -1, axis=0) - np.roll(arr, 1, axis=0)) / (2.0 * h)


def wave_pde_residual(ws: WaveSeries, u, floor=1e-14):
    """Per-order relative residual of the wave recursion on the grid.

    For each s the quantity d_x xi_{s+1} + d^2_{xt} xi_s + u xi_s is formed
    with second-order periodic x-differences (t-derivatives are exact), and
    its grid maximum is divided by max(|u xi_s|, floor).
    """
    if ws.order < 1:
        raise ValidationError("wave series must carry at least one order")
    h = ws.x[1] - ws.x[0]
    uvals = np.empty((len(ws.x), len(ws.t)), dtype=complex)
    for it, tv in enumerate(ws.t):
        uvals[:, it] = u(ws.x, tv)
    out = []
    for s in range(ws.order):
        source = uvals * ws.xi[s]
        resid = _dx_periodic(ws.xi[s + 1], h) + _dx_periodic(ws.xi_t[s], h) + source
        norm = max(float(np.abs(source).max()), floor)
        out.append(float(np.abs(resid).max()) / norm)
    return out


# ---------------------------------------------------------------------------
# Laurent residue propagation
# ---------------------------------------------------------------------------

def laurent_step(r_s, r_s0, r_s1, eta_dot, v, w):
    """Advance the pole data of a wave coefficient one order.

    All inputs are univariate t-jets (ascending Taylor coefficients at a
    common base time).  Returns (r_next, r_next_1, residue_check) with

        r_next   = -r_s' + 2 eta' r_s0,
        r_next_1 = -v r_s0 - w r_s - r_s1',

    and residue_check the magnitude of the produced level's residue
    obstruction |v r_next + 2 eta' r_next_1| (constant term), which vanishes
    when the root dynamics relation holds.
    """
    jets = [np.atleast_1d(np.asarray(a, dtype=complex))
            for a in (r_s, r_s0, r_s1, eta_dot, v, w)]
    L = min(len(a) for a in jets)
    if L < 1:
        raise ValidationError("empty jet input")
    r_s, r_s0, r_s1, eta_dot, v, w = [a[:L] for a in jets]
    if abs(eta_dot[0]) < 1e-12:
        raise DegenerateRoot("eta' vanishes; the pole disappears")
    r_next = -sdiff(r_s) + 2.0 * smul(eta_dot, r_s0)
    r_next_1 = -smul(v, r_s0) - smul(w, r_s) - sdiff(r_s1)
    check = smul(v, r_next) + 2.0 * smul(eta_dot, r_next_1)
    return r_next, r_next_1, float(abs(check[0]))
