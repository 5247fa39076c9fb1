import numpy as np
import pytest

from prymcheck.abeliandata import FlowData, random_ppav
from prymcheck.conditions import prym_linear_solve, search_flow_vectors


@pytest.fixture(scope="session")
def solved_prym_g1():
    """Generic solved genus-1 prym flow (complex U, V)."""
    B = random_ppav(1, 5)
    U = np.array([0.8 + 0.1j])
    V = np.array([0.3 - 0.2j])
    A = np.array([0.25 + 0.35j])
    rep = prym_linear_solve(B, U, V, A)
    sc = rep.solved_constants
    flow = FlowData(B=B, U=U, V=V, A=A, p=sc["p"], E=sc["E"],
                    C=sc["C_potential"], mode="prym")
    return flow, rep


@pytest.fixture(scope="session")
def solved_prym_g2():
    """Search-solved genus-2 prym flow; shared because the search is slow."""
    out = search_flow_vectors(random_ppav(2, 0), mode="prym", seed=7, restarts=20)
    assert out.report.residual <= 1e-8
    return out.flow, out.report


@pytest.fixture(scope="session")
def real_line_prym_g1():
    """Solved g=1 flow with U = 1, real V and real base point.

    With a real argument line the theta zeros stay at imaginary offset
    Im(B)/2, so potentials sampled on real (x, t) grids are pole-free.
    """
    B = random_ppav(1, 11)
    U = np.array([1.0 + 0j])
    V = np.array([0.35 + 0j])
    A = np.array([0.2 + 0.3j])
    rep = prym_linear_solve(B, U, V, A)
    sc = rep.solved_constants
    flow = FlowData(B=B, U=U, V=V, A=A, p=sc["p"], E=sc["E"],
                    C=sc["C_potential"], mode="prym")
    return flow, rep
