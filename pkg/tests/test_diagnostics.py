import math

import numpy as np
import pytest

from smgark.diagnostics import (ReferenceError, SweepCell, convergence_order, energy_study, fit_slope,
                                forward_euler, micro_trace, reference_solution, reference_trajectory,
                                reversibility_residual, rk2, slow_mask, stability_sweep,
                                structure_matrix, sweep_slopes, sweep_to_csv, symplecticity_residual)
from smgark.integrators import SolverConfig, make_stepper
from smgark.systems import PhaseState, harmonic_flow, harmonic_system

SCHEMES = [("mr-lpfr", 4), ("mr-imex2", 5), ("mr-imim2", 5)]


def exact_rotation(omega):
    def fn(sys, y, H, cache=None, micro_observer=None):
        return harmonic_flow(y, H, omega), None
    return fn


def test_structure_matrix():
    J = structure_matrix(2)
    assert np.array_equal(J.T, -J) and np.array_equal(J @ J, -np.eye(4))


def test_exact_flow_is_symplectic():
    sys_ = harmonic_system(1.0)
    assert symplecticity_residual(exact_rotation(1.0), sys_, PhaseState([0.3], [0.8]), 0.1) <= 1e-9


def test_forward_euler_foil():
    sys_ = harmonic_system(1.0)
    y = PhaseState([0.3], [0.8])
    r = symplecticity_residual(forward_euler(), sys_, y, 0.1)
    assert r == pytest.approx(0.01, rel=1e-6)
    assert reversibility_residual(forward_euler(), sys_, y, 0.1) > 1e-4


@pytest.mark.parametrize("name,M", SCHEMES)
def test_shipped_schemes_symplectic_and_reversible(fpu, fpu_y0, name, M):
    st = make_stepper(name, M)
    assert symplecticity_residual(st, fpu, fpu_y0, 0.01) <= 1e-6
    assert reversibility_residual(st, fpu, fpu_y0, 0.05) <= 10 * SolverConfig().newton_rel_tol


def test_lpfr_fpu_m2(fpu, fpu_y0):
    assert symplecticity_residual(make_stepper("mr-lpfr", 2), fpu, fpu_y0, 0.01) <= 1e-6


def test_reversibility_zero_step(fpu, fpu_y0):
    assert reversibility_residual(forward_euler(), fpu, fpu_y0, 0.0) == 0.0


def test_reference_matches_analytic():
    sys_ = harmonic_system(1.0)
    y0 = PhaseState([0.0], [1.0])
    y = reference_solution(sys_, y0, 1.0)
    assert np.max(np.abs(y.as_vector() - harmonic_flow(y0, 1.0, 1.0).as_vector())) <= 1e-10
    assert reference_solution(sys_, y0, 0.0) is y0


def test_reference_fpu_self_consistent(fpu, fpu_y0):
    y = reference_solution(fpu, fpu_y0, 3.0)
    assert np.all(np.isfinite(y.as_vector()))


def test_reference_gate_rejects_coarse_step(fpu, fpu_y0):
    with pytest.raises(ReferenceError) as exc:
        reference_solution(fpu, fpu_y0, 1.0, h=0.01)
    assert exc.value.discrepancy > 1e-10


def test_reference_trajectory_grid():
    sys_ = harmonic_system(2.0)
    t, states = reference_trajectory(sys_, PhaseState([1.0], [0.0]), 1.0, sample_dt=0.25)
    assert np.allclose(t, [0, 0.25, 0.5, 0.75, 1.0]) and len(states) == 5


def test_slow_mask(fpu):
    m = slow_mask(fpu)
    assert m.tolist() == [False] * 6 + [True, False] * 3


def test_fit_slope():
    H = np.array([0.1, 0.05, 0.025])
    assert fit_slope(H, 3 * H**2) == pytest.approx(2.0)
    assert math.isnan(fit_slope(H, [np.nan, np.nan, 1.0]))


def test_convergence_harmonic_second_order():
    sys_ = harmonic_system(1.0)
    y0 = PhaseState([0.0], [1.0])
    ref = harmonic_flow(y0, 1.0, 1.0)
    res = convergence_order(make_stepper("mr-lpfr", 2), sys_, y0, 1.0, [0.1, 0.05, 0.025, 0.0125], ref)
    assert res.slope == pytest.approx(2.0, abs=0.1)
    rows = res.to_csv().splitlines()
    assert rows[0] == "H,error" and rows[-1].startswith("slope,") and len(rows) == 6
    with pytest.raises(ValueError):
        convergence_order(make_stepper("mr-lpfr", 2), sys_, y0, 1.0, [0.3], ref)


def test_energy_instability_detected(fpu, fpu_y0):
    es = energy_study(make_stepper("mr-lpfr", 1), fpu, fpu_y0, 0.1, 20.0)
    assert es.max_deviation > 1


def test_energy_series_csv(fpu, fpu_y0):
    es = energy_study(make_stepper("mr-lpfr", 10), fpu, fpu_y0, 0.1, 1.0)
    rows = es.to_csv().splitlines()
    assert rows[0] == "t,H,I1,I2,I3,I" and len(rows) == 12
    assert es.failed_at is None and math.isfinite(es.max_deviation)
    assert es.oscillatory[0, -1] == 1.0


def test_micro_trace_grid(fpu, fpu_y0):
    ts, vals = micro_trace(make_stepper("mr-imex2", 5), fpu, fpu_y0, 0.1, 0.2)
    assert len(ts) == 11 and np.allclose(np.diff(ts), 0.02)
    with pytest.raises(ValueError, match="micro-steps"):
        micro_trace(forward_euler(), fpu, fpu_y0, 0.1, 0.2)


def test_sweep_empty_and_failed_cells():
    assert stability_sweep(omega_list=[]) == []
    ref = {50.0: PhaseState(np.zeros(6), np.zeros(6))}
    cells = stability_sweep(["mr-imex2", "nope"], [50.0], [0.1], t_end=0.2, references=ref)
    assert math.isfinite(cells[0].error)
    assert math.isnan(cells[1].error) and "nope" in cells[1].reason
    text = sweep_to_csv(cells)
    assert text.splitlines()[0] == "scheme,omega,H,error,reason"


def test_sweep_slopes():
    cells = [SweepCell("a", 50.0, H, 2 * H**2) for H in (0.1, 0.05, 0.025)]
    assert sweep_slopes(cells)[("a", 50.0)] == pytest.approx(2.0)


def test_rk2_foil_drifts(fpu, fpu_y0):
    es = energy_study(rk2(), fpu, fpu_y0, 0.01, 5.0, every=10)
    assert es.failed_at is None and es.max_deviation > 1e-4
