import numpy as np
import pytest

from smgark.integrators import (NewtonError, SolverConfig, StepError, integrate, make_stepper,
                                newton_solve, step_flat, step_mr_imex2, step_mr_lpfr, step_pmgark,
                                steps_for, tableau_stepper)
from smgark.systems import PhaseState, harmonic_system, imex_split
from smgark.tableau import build_mr_imex2, build_mr_imim2, build_mr_lpfr


def _close(a: PhaseState, b: PhaseState, tol):
    return np.max(np.abs(a.as_vector() - b.as_vector())) <= tol


def test_generic_matches_lpfr_on_harmonic():
    sys_ = harmonic_system(3.0)
    y = PhaseState([0.4], [0.9])
    a = step_pmgark(build_mr_lpfr(2), sys_, y, 0.01)[0]
    b = step_mr_lpfr(sys_, y, 0.01, 2)[0]
    assert _close(a, b, 1e-12 * max(1, np.abs(b.as_vector()).max()))


def test_generic_matches_imex2_on_fpu(fpu, fpu_y0):
    tw = imex_split(fpu)
    a = step_pmgark(build_mr_imex2(2), tw.separable, fpu_y0, 0.01)[0]
    b = step_mr_imex2(tw, fpu_y0, 0.01, 2)[0]
    assert _close(a, b, 1e-11)


@pytest.mark.parametrize("name,M", [("mr-lpfr", 2), ("mr-imex2", 3), ("mr-imim2", 3)])
def test_flat_oracle(fpu, fpu_y0, name, M):
    st = make_stepper(name, M, generic=True)
    work = st.prepare(fpu)
    a = st(work, fpu_y0, 0.02)[0]
    b = step_flat(st.tableau, work, fpu_y0, 0.02)[0]
    assert _close(a, b, 1e-11)


def test_harmonic_lpfr_m2_is_two_leapfrog_steps():
    w = 2.0
    sys_ = harmonic_system(w)
    y = PhaseState([0.3], [1.0])
    H = 0.05
    out = step_mr_lpfr(sys_, y, H, 2)[0]
    p, q = y.p.copy(), y.q.copy()
    h = H / 2
    for _ in range(2):
        p = p - 0.5 * h * w**2 * q
        q = q + h * p
        p = p - 0.5 * h * w**2 * q
    assert np.max(np.abs(out.p - p)) <= 1e-15 and np.max(np.abs(out.q - q)) <= 1e-15


def test_imex2_linear_midpoint_map():
    w = 50.0
    sys_ = imex_split(harmonic_system(w))
    y = PhaseState([0.7], [0.2])
    h = 0.002
    out = step_mr_imex2(sys_, y, h, 1)[0]
    A = np.array([[0.0, -w**2], [1.0, 0.0]])
    E = np.eye(2)
    exact = np.linalg.solve(E - h / 2 * A, (E + h / 2 * A) @ y.as_vector())
    assert np.max(np.abs(out.as_vector() - exact)) <= 1e-13


def test_fused_kicks_count(fpu, fpu_y0):
    tr = integrate(make_stepper("mr-imex2", 4), fpu, fpu_y0, 0.1, 10, fuse_kicks=True)
    assert tr.stats[-1].slow_force_evals == 11
    tr = integrate(make_stepper("mr-imex2", 4), fpu, fpu_y0, 0.1, 10)
    assert tr.stats[-1].slow_force_evals == 20


def test_fused_and_unfused_agree(fpu, fpu_y0):
    st = make_stepper("mr-lpfr", 4)
    a = integrate(st, fpu, fpu_y0, 0.05, 8, fuse_kicks=True).final
    b = integrate(st, fpu, fpu_y0, 0.05, 8).final
    assert np.array_equal(a.as_vector(), b.as_vector())


def test_newton_linear_one_iteration():
    c = np.array([1.0, -2.0])
    x, iters = newton_solve(lambda x: x - c, lambda x: np.eye(2), np.zeros(2))
    assert iters == 1 and np.allclose(x, c)


def test_newton_midpoint_stage_converges_fast():
    w, h = 50.0, 0.002
    A = np.array([[0.0, -w**2], [1.0, 0.0]])
    y0 = np.array([1.0, 0.02])
    res = lambda k: k - A @ (y0 + h / 2 * k)
    x, iters = newton_solve(res, lambda k: np.eye(2) - h / 2 * A, A @ y0)
    exact = np.linalg.solve(np.eye(2) - h / 2 * A, A @ y0)
    assert iters <= 5 and np.allclose(x, exact, rtol=1e-12)


def test_newton_no_root():
    with pytest.raises(NewtonError) as exc:
        newton_solve(lambda x: x**2 + 1, lambda x: np.diag(2 * x), np.array([0.5]), SolverConfig(max_iters=20))
    assert exc.value.residual_norm > 0.5


def test_integrate_zero_steps(fpu, fpu_y0):
    tr = integrate(make_stepper("mr-imex2", 2), fpu, fpu_y0, 0.1, 0)
    assert len(tr.states) == 1 and tr.final is fpu_y0


def test_harmonic_full_period():
    sys_ = harmonic_system(1.0)
    y0 = PhaseState([0.0], [1.0])
    H = 2 * np.pi / 628
    y = integrate(make_stepper("mr-lpfr", 2), sys_, y0, H, 628).final
    assert np.max(np.abs(y.as_vector() - y0.as_vector())) <= 1e-3


def test_steps_for():
    assert steps_for(1.0, 0.1) == 10
    assert steps_for(0.0, 0.1) == 0
    with pytest.raises(ValueError):
        steps_for(1.0, 0.3)


def test_shape_mismatch(fpu):
    with pytest.raises(ValueError, match="dimension"):
        step_pmgark(build_mr_imim2(2), fpu, PhaseState([0.0], [0.0]), 0.1)


def test_step_error_carries_index(fpu, fpu_y0):
    def boom(sys_, y, H, cache=None, micro_observer=None):
        raise RuntimeError("boom")
    with pytest.raises(StepError) as exc:
        integrate(boom, fpu, fpu_y0, 0.1, 3)
    assert exc.value.step == 0


def test_imim2_bounded_for_all_m(fpu, fpu_y0):
    for M in (1, 10):
        tr = integrate(make_stepper("mr-imim2", M), fpu, fpu_y0, 0.1, 100, record=False)
        assert abs(fpu.hamiltonian(tr.final) - fpu.hamiltonian(fpu_y0)) < 1.0


def test_trajectory_csv(fpu, fpu_y0):
    tr = integrate(make_stepper("mr-imex2", 50), fpu, fpu_y0, 0.1, 10)
    text = tr.to_csv()
    rows = text.splitlines()
    assert len(rows) == 12
    assert rows[0].split(",")[:2] == ["t", "p0"] and rows[0].endswith("slow_evals,fast_evals")
    assert float(rows[1].split(",")[-4]) == pytest.approx(2.00120008, abs=1e-14)


def test_tableau_stepper_matches_named(fpu, fpu_y0):
    a = tableau_stepper(build_mr_lpfr(4))(fpu, fpu_y0, 0.05)[0]
    b = make_stepper("mr-lpfr", 4)(fpu, fpu_y0, 0.05)[0]
    assert _close(a, b, 1e-13)
