import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sosmee import sdpcore
from sosmee.sdpcore import (
    NONNEG,
    PSD,
    SOC,
    ZERO,
    Cone,
    ConicProgram,
    ProgramBuilder,
    Settings,
    smat,
    svec,
    svec_len,
)

BACKENDS = ["auto", "admm"]


def trace_program(C):
    """max <C, X> s.t. tr X = 1, X psd, written as a minimisation."""
    k = C.shape[0]
    b = ProgramBuilder()
    X = b.add_psd_variable(k)
    diag = [X.index(i, i) for i in range(k)]
    b.add_constraint(ZERO, 1, [0] * k, diag, [1.0] * k, [-1.0])
    b.add_linear_objective(X.indices, -svec(C))
    return b.build(), X


def check_optimal(prog, sol, eps):
    assert sol.status == sdpcore.OPTIMAL
    assert max(sol.primal_residual, sol.dual_residual) <= 10 * eps
    assert abs(sol.primal_objective - sol.dual_objective) <= 10 * eps * (1 + abs(sol.primal_objective))
    # psd blocks of the slack are psd
    pos = 0
    for cone in prog.cones:
        if cone.kind == PSD:
            S = smat(sol.s[pos:pos + cone.size])
            assert np.linalg.eigvalsh(S).min() >= -10 * eps
        pos += cone.size


@given(st.integers(1, 6))
def test_svec_round_trip_and_inner_product(k):
    rng = np.random.default_rng(k)
    A, B = rng.normal(size=(2, k, k))
    A, B = A + A.T, B + B.T
    assert svec(A).size == svec_len(k)
    np.testing.assert_allclose(smat(svec(A)), A)
    assert math.isclose(svec(A) @ svec(B), np.trace(A @ B), rel_tol=1e-12, abs_tol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_scalar_psd(backend):
    b = ProgramBuilder()
    X = b.add_psd_variable(1)
    # x - 1 in PSD(1)
    b.add_constraint(PSD, 1, [0], [X.index(0, 0)], [1.0], [-1.0])
    b.add_linear_objective([X.index(0, 0)], [1.0])
    prog = b.build()
    s = Settings(backend=backend)
    sol = sdpcore.solve(prog, s)
    check_optimal(prog, sol, s.eps)
    assert abs(sol.x[X.index(0, 0)] - 1.0) <= 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_trace_with_fixed_diagonal(backend):
    b = ProgramBuilder()
    X = b.add_psd_variable(2)
    b.add_constraint(ZERO, 2, [0, 1], [X.index(0, 0), X.index(1, 1)], [1.0, 1.0], [-2.0, -3.0])
    b.add_linear_objective([X.index(0, 0), X.index(1, 1)], [1.0, 1.0])
    prog = b.build()
    s = Settings(backend=backend)
    sol = sdpcore.solve(prog, s)
    check_optimal(prog, sol, s.eps)
    assert abs(sol.primal_objective - 5.0) <= 1e-6
    assert abs(X.value(sol.x)[0, 1]) <= 1e-4


@pytest.mark.parametrize("backend", BACKENDS)
def test_max_eigenvalue(backend):
    rng = np.random.default_rng(4)
    C = rng.normal(size=(4, 4))
    C = C + C.T
    prog, X = trace_program(C)
    s = Settings(backend=backend)
    sol = sdpcore.solve(prog, s)
    check_optimal(prog, sol, s.eps)
    assert abs(-sol.primal_objective - np.linalg.eigvalsh(C)[-1]) <= 1e-5


@pytest.mark.parametrize("backend", BACKENDS)
def test_soc_and_nonneg(backend):
    # min t s.t. |(1, 2)| <= t, t >= 0
    b = ProgramBuilder()
    t = b.add_variables(1)[0]
    b.add_constraint(SOC, 3, [0], [t], [1.0], [0.0, 1.0, 2.0])
    b.add_constraint(NONNEG, 1, [0], [t], [1.0], [0.0])
    b.add_linear_objective([t], [1.0])
    sol = sdpcore.solve(b.build(), Settings(backend=backend))
    assert sol.status == sdpcore.OPTIMAL
    assert abs(sol.x[t] - math.sqrt(5)) <= 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_detects_primal_infeasible(backend):
    b = ProgramBuilder()
    x = b.add_variables(1)[0]
    b.add_constraint(NONNEG, 1, [0], [x], [1.0], [-1.0])  # x >= 1
    b.add_constraint(NONNEG, 1, [0], [x], [-1.0], [0.0])  # x <= 0
    b.add_linear_objective([x], [1.0])
    sol = sdpcore.solve(b.build(), Settings(backend=backend))
    assert sol.status == sdpcore.PRIMAL_INFEASIBLE


@pytest.mark.parametrize("backend", BACKENDS)
def test_detects_unbounded(backend):
    b = ProgramBuilder()
    x = b.add_variables(1)[0]
    b.add_constraint(NONNEG, 1, [0], [x], [1.0], [0.0])
    b.add_linear_objective([x], [-1.0])
    sol = sdpcore.solve(b.build(), Settings(backend=backend))
    assert sol.status == sdpcore.DUAL_INFEASIBLE


@pytest.mark.parametrize("backend", BACKENDS)
def test_deterministic(backend):
    rng = np.random.default_rng(9)
    C = rng.normal(size=(5, 5))
    prog, _ = trace_program(C + C.T)
    s = Settings(backend=backend)
    a, b = sdpcore.solve(prog, s), sdpcore.solve(prog, s)
    assert a.status == b.status
    assert abs(a.primal_objective - b.primal_objective) <= 1e-12
    np.testing.assert_array_equal(a.x, b.x)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_eigenvalue_oracle_property(seed, k):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(k, k))
    C = C + C.T
    prog, _ = trace_program(C)
    sol = sdpcore.solve(prog)
    check_optimal(prog, sol, Settings().eps)
    assert abs(-sol.primal_objective - np.linalg.eigvalsh(C)[-1]) <= 1e-5 * (1 + np.abs(C).max())


def test_polish_tightens_admm_point():
    rng = np.random.default_rng(2)
    C = rng.normal(size=(4, 4))
    prog, _ = trace_program(C + C.T)
    rough = sdpcore.solve(prog, Settings(backend="admm", eps=1e-3, polish=False))
    res0 = max(rough.primal_residual, rough.dual_residual, rough.gap)
    fine = sdpcore.polish(prog, rough)
    assert fine is not None
    assert max(fine.primal_residual, fine.dual_residual, fine.gap) < res0


def test_program_shape_validation():
    with pytest.raises(ValueError):
        ConicProgram(np.zeros(2), sp.csc_matrix((3, 2)), np.zeros(3), [Cone(NONNEG, 2)])
    with pytest.raises(ValueError):
        Cone("exp", 3)


def test_unknown_backend():
    prog, _ = trace_program(np.eye(2))
    with pytest.raises(ValueError):
        sdpcore.solve(prog, Settings(backend="mosek"))


def test_settings_from_env(monkeypatch):
    monkeypatch.setenv("SOSMEE_EPS", "1e-9")
    monkeypatch.setenv("SOSMEE_BACKEND", "admm")
    s = Settings.from_env()
    assert s.eps == 1e-9 and s.backend == "admm"
    assert Settings.from_env(eps=1e-5).eps == 1e-5


def test_dump_and_load_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    C = rng.normal(size=(3, 3))
    prog, _ = trace_program(C + C.T)
    path = tmp_path / "prog.txt"
    sdpcore.dump_program(prog, path)
    back = sdpcore.load_program(path)
    assert back.cones == prog.cones
    np.testing.assert_array_equal(back.c, prog.c)
    np.testing.assert_array_equal(back.b, prog.b)
    assert (back.A != prog.A).nnz == 0
    assert sdpcore.solve(back).primal_objective == sdpcore.solve(prog).primal_objective
