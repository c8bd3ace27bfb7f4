import numpy as np
import pytest
import scipy.sparse as sp

from rfem.bench import convection_problem, smooth_problem
from rfem.fespace import FeFunction, build_space
from rfem.forms import StabSpec, assemble_load, assemble_stiffness
from rfem.mesh import make_crisscross, make_lshape
from rfem.recovery import build_recovery
from rfem.system import (
    LinearSystem,
    SolverError,
    build_fem_system,
    build_rfem_system,
    condition_estimate,
    dg_equivalence_gap,
    fem_equivalence_gap,
    inverse_iteration,
    power_iteration,
    solve,
    sparsity_summary,
)


def rfem(n, r=0, s=1, stab=None, problem=None):
    m = make_crisscross(n)
    dg, cg = build_space(m, "DG", r), build_space(m, "CG", s)
    op = build_recovery(dg, cg)
    return dg, cg, op, build_rfem_system(dg, cg, op, problem or smooth_problem(), stab or StabSpec())


def test_system_shape_and_symmetry():
    _, _, _, system = rfem(8)
    assert system.matrix.shape == (256, 256)
    assert system.symmetric
    assert set(system.parts) == {"K", "S", "EKE"}


def test_convection_system_is_nonsymmetric():
    _, _, _, system = rfem(2, problem=convection_problem(0.1, "a"))
    assert not system.symmetric and "C" in system.parts


def test_linear_system_validation():
    with pytest.raises(ValueError):
        LinearSystem(sp.csr_matrix(np.eye(2)), np.ones(3), True)
    with pytest.raises(ValueError):
        LinearSystem(sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]])), np.ones(2), True)


def test_solve_examples():
    b = np.array([3.0, -1.0, 2.0])
    np.testing.assert_allclose(solve(LinearSystem(sp.identity(3, format="csr"), b, True)), b)
    u = solve(LinearSystem(sp.csr_matrix(np.diag([2.0, 4.0])), np.array([2.0, 4.0]), True))
    np.testing.assert_allclose(u, [1.0, 1.0])
    np.testing.assert_array_equal(solve(LinearSystem(sp.identity(2, format="csr"), np.zeros(2), True)), 0.0)


def test_solve_reports_singular():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        with np.errstate(all="ignore"), pytest.warns(Warning):
            solve(LinearSystem(A, np.array([1.0, 0.0]), True))


def test_test1_residual_and_galerkin_energy():
    _, _, _, system = rfem(4)
    u = solve(system)
    b = system.rhs
    assert np.linalg.norm(system.matrix @ u - b) / np.linalg.norm(b) < 1e-10
    assert u @ system.matrix @ u == pytest.approx(b @ u, rel=1e-10)


def test_iterative_path(monkeypatch):
    import rfem.system as system_mod

    _, _, _, system = rfem(8)
    direct = solve(system)
    monkeypatch.setattr(system_mod, "DIRECT_LIMIT", 10)
    np.testing.assert_allclose(solve(system), direct, rtol=1e-8, atol=1e-12)
    _, _, _, conv = rfem(4, problem=convection_problem(0.01, "b"))
    monkeypatch.setattr(system_mod, "DIRECT_LIMIT", 20000)
    ref = solve(conv)
    monkeypatch.setattr(system_mod, "DIRECT_LIMIT", 10)
    np.testing.assert_allclose(solve(conv), ref, rtol=1e-8, atol=1e-12)


def test_zero_stabilisation_is_singular():
    m = make_crisscross(2)
    dg, cg = build_space(m, "DG", 0), build_space(m, "CG", 1)
    op = build_recovery(dg, cg)
    K = assemble_stiffness(cg)
    A = (op.E.T @ K @ op.E).toarray()
    rank = np.linalg.matrix_rank(A)
    assert rank == len(cg.interior_dofs) < dg.ndof


def test_matrix_is_psd():
    _, _, _, system = rfem(4, 1, 2, StabSpec("jump", alpha=2, power=2))
    lam = np.linalg.eigvalsh(system.matrix.toarray())
    assert lam.min() >= -1e-10 * lam.max()


def test_condition_examples():
    assert condition_estimate(sp.identity(5, format="csr")) == pytest.approx(1.0)
    assert condition_estimate(sp.diags([1.0, 4.0]).tocsr()) == pytest.approx(4.0, rel=1e-6)
    A = sp.diags(np.linspace(1, 50, 40)).tocsr()
    assert power_iteration(A) == pytest.approx(50, rel=1e-5)
    assert inverse_iteration(A) == pytest.approx(1, rel=1e-5)


def test_condition_matches_dense_eigenvalues():
    _, _, _, system = rfem(4)
    lam = np.linalg.eigvalsh(system.matrix.toarray())
    assert condition_estimate(system.matrix, tol=1e-10) == pytest.approx(lam[-1] / lam[0], rel=1e-4)


def test_fem_system_reduced():
    cg = build_space(make_crisscross(3), "CG", 1)
    fem = build_fem_system(cg, smooth_problem())
    assert fem.matrix.shape[0] == len(cg.interior_dofs)
    assert fem.expand(np.ones(fem.matrix.shape[0]))[cg.boundary_dofs].max() == 0


@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("c_sigma", [0.01, 1.0, 100.0])
def test_fem_equivalence(degree, c_sigma):
    assert fem_equivalence_gap(make_crisscross(4), degree, c_sigma, smooth_problem()) < 1e-9


@pytest.mark.parametrize("theta", [1.0, 0.0, -1.0])
def test_dg_equivalence(theta):
    mg, rg = dg_equivalence_gap(make_crisscross(2), 1, 10.0, theta, smooth_problem())
    assert mg < 1e-13 and rg < 1e-13


def test_sparsity_summary():
    s = sparsity_summary(sp.csr_matrix(np.array([[1.0, 0, 2.0], [0, 1.0, 0], [0, 0, 1.0]])))
    assert s == {"shape": (3, 3), "nnz": 4, "bandwidth": 2}


@pytest.mark.parametrize("kind", ["jump", "volume"])
def test_coercivity_identity_small(kind):
    m = make_lshape(1)
    dg, cg = build_space(m, "DG", 1), build_space(m, "CG", 2)
    op = build_recovery(dg, cg)
    stab = StabSpec(kind, alpha=1, c_sigma=3.0)
    system = build_rfem_system(dg, cg, op, smooth_problem(), stab)
    from rfem.forms import local_stab_energy

    w = np.random.default_rng(0).standard_normal(dg.ndof)
    ew = op(FeFunction(dg, w))
    energy = w @ op.E.T @ assemble_stiffness(cg) @ op.E @ w
    lhs = ew.coeffs @ assemble_stiffness(cg) @ ew.coeffs + local_stab_energy(dg, op, stab, w).sum()
    assert w @ system.matrix @ w == pytest.approx(lhs, rel=1e-12)
    assert energy <= w @ system.matrix @ w


def test_load_through_recovery():
    dg, cg, op, system = rfem(3)
    np.testing.assert_allclose(system.rhs, op.E.T @ assemble_load(cg, smooth_problem().f))
