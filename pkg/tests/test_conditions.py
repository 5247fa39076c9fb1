import numpy as np
import pytest

from prymcheck import conditions as cond
from prymcheck.abeliandata import FlowData, random_ppav
from prymcheck.errors import AllZero, EmptySamples, NoConvergence, ZeroVector
from prymcheck.thetacore import characteristics, theta

from .oracles import theta_box

B1 = [[1j]]


def solved_prym_g1(seed=5, U=(0.8 + 0.1j,), V=(0.3 - 0.2j,), A=(0.25 + 0.35j,)):
    B = random_ppav(1, seed)
    U, V, A = (np.array(v, dtype=complex) for v in (U, V, A))
    rep = cond.prym_linear_solve(B, U, V, A)
    sc = rep.solved_constants
    return FlowData(B=B, U=U, V=V, A=A, p=sc["p"], E=sc["E"],
                    C=sc["C_potential"], mode="prym"), rep


def solved_jacobian_g1(seed=5):
    B = random_ppav(1, seed)
    U = np.array([0.8 + 0.1j])
    V = np.array([0.3 - 0.2j])
    A = np.array([0.25 + 0.35j])
    rep = cond.jacobian_linear_solve(B, U, V, A)
    sc = rep.solved_constants
    return FlowData(B=B, U=U, V=V, A=A, p=sc["p"], E=sc["E"], mode="jacobian"), rep


def level2_box(z, B, eps, dirs=()):
    return theta_box(2 * np.asarray(z, dtype=complex), 2 * np.asarray(B, dtype=complex),
                     eps=eps, dirs=dirs) * 2.0 ** len(tuple(dirs))


class TestJacobianLinearSolve:
    def test_g1_example_against_explicit_solve(self):
        U, V, A = [0.7], [0.3 + 0.1j], [0.2 + 0.4j]
        rep = cond.jacobian_linear_solve(B1, U, V, A)
        assert rep.residual <= 1e-10
        # independent oracle: build the 2x2 system from box sums and solve it
        half = np.array(A) / 2.0
        rows, rhs = [], []
        for eps in ([0.0], [0.5]):
            T = level2_box(half, B1, eps)
            dU = level2_box(half, B1, eps, dirs=[U])
            dV = level2_box(half, B1, eps, dirs=[V])
            dUU = level2_box(half, B1, eps, dirs=[U, U])
            rows.append([-2.0 * dU, T])
            rhs.append(-(dV - dUU))
        p, mu = np.linalg.solve(np.array(rows), np.array(rhs))
        assert rep.solved_constants["p"] == pytest.approx(p, abs=1e-9)
        assert rep.solved_constants["E"] == pytest.approx(mu + p * p, abs=1e-9)

    def test_zero_u_raises(self):
        with pytest.raises(ZeroVector):
            cond.jacobian_linear_solve(B1, [0.0], [1.0], [0.5])

    def test_g2_negative_control_sweep(self):
        bad = 0
        for seed in range(20):
            B = random_ppav(2, seed)
            rng = np.random.default_rng(700 + seed)
            U = rng.normal(size=2) + 1j * rng.normal(size=2)
            V = rng.normal(size=2) + 1j * rng.normal(size=2)
            A = rng.uniform(-0.5, 0.5, 2) + B.entries @ rng.uniform(-0.5, 0.5, 2)
            if cond.jacobian_linear_solve(B, U, V, A).residual >= 1e-3:
                bad += 1
        assert bad >= 18

    def test_report_invariant(self):
        rep = cond.jacobian_linear_solve(B1, [0.7], [0.3 + 0.1j], [0.2 + 0.4j])
        assert rep.scale > 0
        assert rep.residual == pytest.approx(
            max(abs(v) for v in rep.per_characteristic) / rep.scale
        )
        assert len(rep.per_characteristic) == 2


class TestPrymLinearSolve:
    @pytest.mark.parametrize("seed", range(5))
    def test_g1_underdetermined_tiny_residual(self, seed):
        B = random_ppav(1, seed)
        rng = np.random.default_rng(seed)
        U = rng.normal(size=1) + 1j * rng.normal(size=1)
        V = rng.normal(size=1) + 1j * rng.normal(size=1)
        A = rng.normal(size=1) + 1j * rng.normal(size=1) * 0.3
        rep = cond.prym_linear_solve(B, U, V, A)
        assert rep.residual <= 1e-12

    def test_zero_v_raises(self):
        with pytest.raises(ZeroVector):
            cond.prym_linear_solve(random_ppav(2, 0), [1.0, 0], [0.0, 0.0], [0.5, 0.1])

    def test_equation_values_match_plain_theta_recomputation(self):
        # independent route: theta[eps,0](z|B) written through plain theta at
        # z + B eps with its exponential prefactor and product-rule terms
        rng = np.random.default_rng(31)
        for trial in range(4):
            g = int(rng.integers(1, 3))
            B = random_ppav(g, 50 + trial)
            Bm = B.entries
            U = rng.normal(size=g) + 1j * rng.normal(size=g)
            V = rng.normal(size=g) + 1j * rng.normal(size=g)
            A = rng.normal(size=g) + 1j * rng.normal(size=g) * 0.2
            rep = cond.prym_linear_solve(B, U, V, A)
            p, E, C = (rep.solved_constants[k] for k in ("p", "E", "C"))
            B2 = 2.0 * Bm
            z2 = np.asarray(A, dtype=complex)  # 2 * (A/2)

            def char_pack(eps):
                eps = np.asarray(eps)
                shift = z2 + B2 @ eps
                pref = np.exp(1j * np.pi * (eps @ B2 @ eps) + 2j * np.pi * (z2 @ eps))
                t = theta(shift, B2).value
                tU = theta(shift, B2, derivs=[U]).value
                tV = theta(shift, B2, derivs=[V]).value
                tUV = theta(shift, B2, derivs=[U, V]).value
                cU = 2j * np.pi * (U @ eps)
                cV = 2j * np.pi * (V @ eps)
                T = pref * t
                dU = 2.0 * pref * (cU * t + tU)
                dV = 2.0 * pref * (cV * t + tV)
                dUV = 4.0 * pref * (cU * cV * t + cU * tV + cV * tU + tUV)
                return T, dU, dV, dUV

            for i, eps in enumerate(characteristics(g)):
                T, dU, dV, dUV = char_pack(eps.as_array())
                val = dUV + p * dV + E * dU + C * T
                assert abs(val - rep.per_characteristic[i]) <= 1e-12 * rep.scale

    def test_argmin_invariance_unimodular_scaling(self):
        rng = np.random.default_rng(9)
        B = random_ppav(2, 9)
        U = rng.normal(size=2) + 1j * rng.normal(size=2)
        V = rng.normal(size=2) + 1j * rng.normal(size=2)
        A = rng.normal(size=2) + 1j * rng.normal(size=2) * 0.2
        lam = np.exp(1j * 0.73)
        mu = np.exp(-1j * 1.21)
        r0 = cond.prym_linear_solve(B, U, V, A).residual
        r1 = cond.prym_linear_solve(B, lam * U, mu * V, A).residual
        assert abs(r0 - r1) <= 1e-10

    def test_argmin_invariance_general_scaling_on_solved_data(self):
        d, rep = solved_prym_g1()
        r1 = cond.prym_linear_solve(d.B, 2.5 * d.U, (0.5 + 1.0j) * d.V, d.A).residual
        assert abs(rep.residual - r1) <= 1e-10


class TestPdeResiduals:
    def test_prym_pipeline(self):
        d, rep = solved_prym_g1()
        rng = np.random.default_rng(12)
        samples = [(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)) for _ in range(25)]
        assert cond.pde_residual_prym(d, samples) <= 1e-6

    def test_prym_sensitivity_to_C(self):
        d, _ = solved_prym_g1()
        rng = np.random.default_rng(12)
        samples = [(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)) for _ in range(25)]
        bad = FlowData(B=d.B, U=d.U, V=d.V, A=d.A, p=d.p, E=d.E, C=d.C + 0.1, mode="prym")
        assert cond.pde_residual_prym(bad, samples) >= 1e-2

    def test_prym_empty_samples(self):
        d, _ = solved_prym_g1()
        with pytest.raises(EmptySamples):
            cond.pde_residual_prym(d, [])

    def test_prym_all_samples_on_divisor(self):
        # g=1, B=[[i]]: theta vanishes at (1+B)/2; park the only sample there
        B = random_ppav(1, 3)
        U = np.array([1.0 + 0j])
        V = np.array([0.5 + 0j])
        A = np.array([0.3 + 0.1j])
        rep = cond.prym_linear_solve(B, U, V, A)
        sc = rep.solved_constants
        d = FlowData(B=B, U=U, V=V, A=A, p=sc["p"], E=sc["E"], C=sc["C_potential"],
                     mode="prym")
        zstar = (1.0 + B.entries[0, 0]) / 2.0
        with pytest.raises(EmptySamples):
            cond.pde_residual_prym(d, [(0.0, 0.0)], z=np.array([zstar]))

    def test_jacobian_pipeline_and_sensitivity(self):
        d, rep = solved_jacobian_g1()
        assert rep.residual <= 1e-10
        rng = np.random.default_rng(13)
        samples = [(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)) for _ in range(25)]
        assert cond.pde_residual_jacobian(d, samples) <= 1e-6
        bad = FlowData(B=d.B, U=d.U, V=d.V, A=d.A, p=d.p, E=d.E + 0.1, mode="jacobian")
        assert cond.pde_residual_jacobian(bad, samples) >= 1e-2

    def test_jacobian_empty_samples(self):
        d, _ = solved_jacobian_g1()
        with pytest.raises(EmptySamples):
            cond.pde_residual_jacobian(d, [])


class TestSearch:
    def test_g1_immediate_convergence(self):
        out = cond.search_flow_vectors(random_ppav(1, 4), mode="prym", seed=1, restarts=1)
        assert out.report.residual <= 1e-12
        assert out.flow.C is not None

    def test_zero_restarts(self):
        with pytest.raises(NoConvergence) as err:
            cond.search_flow_vectors(random_ppav(1, 4), mode="prym", seed=1, restarts=0)
        assert err.value.trace == []

    @pytest.mark.slow
    def test_g2_search_reaches_threshold(self):
        out = cond.search_flow_vectors(random_ppav(2, 0), mode="prym", seed=7, restarts=20)
        assert out.report.residual <= 1e-8
        # solved data must satisfy the pde as well (potential constant route)
        rng = np.random.default_rng(1)
        samples = [(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)) for _ in range(10)]
        assert cond.pde_residual_prym(out.flow, samples) <= 1e-5


class TestKummer:
    def test_even_in_Z(self):
        B = random_ppav(2, 21)
        rng = np.random.default_rng(2)
        Z = rng.normal(size=2) + 1j * rng.normal(size=2) * 0.3
        a = cond.kummer_image(Z, B)
        b = cond.kummer_image(-Z, B)
        assert np.allclose(a, b, atol=1e-10)

    def test_g1_zero_point_values(self):
        # box-sum oracle: coordinates (theta(0|2i), theta[1/2,0](0|2i)),
        # normalized by the first; the second equals sqrt(2) - 1
        img = cond.kummer_image([0.0], B1)
        assert img[0] == 1.0
        assert img[1].real == pytest.approx(0.41421356237309503, abs=1e-12)
        assert abs(img[1].imag) < 1e-12

    def test_projective_normalization_under_common_factor(self):
        # a full lattice shift rescales every coordinate by one common factor
        B = random_ppav(2, 22)
        rng = np.random.default_rng(3)
        Z = rng.normal(size=2) + 1j * rng.normal(size=2) * 0.2
        m = np.array([1, -1])
        a = cond.kummer_image(Z, B)
        b = cond.kummer_image(Z + B.entries @ m, B)
        assert np.allclose(a, b, atol=1e-9)

    def test_all_zero(self):
        with pytest.raises(AllZero):
            cond.kummer_image([0.0], B1, tolerance=1e6)
