import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smgark.conditions import (composition_order_residual, full_report, is_decoupled, is_explicit,
                               is_symmetric, is_symplectic, order_report, order_report_flat, flat_scale,
                               positive_weights)
from smgark.tableau import (Half, as_partitioned, build_mr_imex2, build_mr_imim2, build_mr_lpfr,
                            from_halves)
from smgark.composition import suzuki, triple_jump


def _replace(h: Half, **kw) -> Half:
    return h._replace(**{k: np.asarray(v, dtype=float) for k, v in kw.items()})


def test_lpfr_order_two_exact():
    rep = order_report(build_mr_lpfr(2), 2)
    assert len(rep) == 12
    assert rep.max_residual <= 1e-13


def test_imex2_order_two_m5():
    assert order_report(build_mr_imex2(5), 2).passed


def test_zeroed_slow_weight_breaks_structure():
    # b^s = [1, 0] keeps every order-2 row but is neither symplectic nor symmetric
    t = build_mr_lpfr(2)
    bad = from_halves(_replace(t.bar, bs=[1.0, 0.0]), t.tilde)
    assert order_report(bad, 2).passed
    assert is_symplectic(bad).max_residual == pytest.approx(0.25)
    assert not is_symmetric(bad).passed
    assert not positive_weights(bad)


def test_perturbed_slow_weight_fails_order():
    t = build_mr_lpfr(2)
    bad = from_halves(_replace(t.bar, bs=[0.5, 0.6]), t.tilde)
    failing = [e.condition_id for e in order_report(bad, 2).failing()]
    assert failing == ["p1.slow.bar", "p2.slow.bar-tilde-ss", "p2.slow.bar-tilde-sf"]


def test_symplectic_exact():
    assert is_symplectic(build_mr_lpfr(2)).max_residual == 0
    assert is_symplectic(build_mr_imex2(3)).passed


def _euler_pair():
    e = Half(np.zeros((1, 1)), np.ones(1), (np.zeros((1, 1)),), (np.ones(1),),
             (np.zeros((1, 1)),), (np.zeros((1, 1)),))
    return from_halves(e)


def test_explicit_euler_fails_symplectic_and_symmetric():
    t = _euler_pair()
    rep = is_symplectic(t)
    assert rep["symplectic.a"].residual == pytest.approx(1.0)
    assert not is_symmetric(t).passed


def test_symmetry_of_shipped_schemes():
    for t in (build_mr_lpfr(4), build_mr_imex2(2), build_mr_imim2(5)):
        assert is_symmetric(t).max_residual == 0


def test_explicitness():
    assert is_explicit(build_mr_lpfr(2))
    assert not is_explicit(as_partitioned(build_mr_imex2(2)))
    z = Half(np.zeros((1, 1)), np.ones(1), (np.zeros((1, 1)),), (np.ones(1),),
             (np.zeros((1, 1)),), (np.zeros((1, 1)),))
    assert is_explicit(from_halves(z))


def test_decoupling():
    assert is_decoupled(build_mr_imex2(4))
    assert is_decoupled(build_mr_imim2(2))
    assert not is_decoupled(build_mr_imim2(3))
    mp = np.array([[0.5]])
    dense = Half(mp, np.ones(1), (mp,), (np.ones(1),), (np.ones((1, 1)),), (np.ones((1, 1)),))
    assert not is_decoupled(from_halves(dense))
    zero = Half(mp, np.ones(1), (mp,), (np.ones(1),), (np.zeros((1, 1)),), (np.zeros((1, 1)),))
    assert is_decoupled(from_halves(zero))


def test_positive_weights():
    assert positive_weights(build_mr_imex2(3))
    assert positive_weights(build_mr_lpfr(2))


def test_composition_residuals():
    a, b = composition_order_residual(triple_jump(2).gammas, 2)
    assert abs(a) <= 1e-15 and abs(b) <= 1e-15
    a, b = composition_order_residual(suzuki(2).gammas, 2)
    assert abs(a) <= 1e-15 and abs(b) <= 1e-15
    assert composition_order_residual([1.0], 2) == (0.0, 1.0)


def test_report_csv_columns():
    text = full_report(build_mr_imex2(2), 2).to_csv()
    head = text.splitlines()[0]
    assert head == "condition_id,lhs,rhs,residual,pass"
    assert text.endswith("\n") and "\r" not in text


@settings(max_examples=40, deadline=None)
@given(M=st.integers(1, 6), p=st.integers(1, 3),
       name=st.sampled_from(["mr-lpfr", "mr-imex2", "mr-imim2"]))
def test_block_equals_flat(M, p, name):
    from smgark.tableau import build_scheme
    if name == "mr-lpfr" and M % 2 and M != 1:
        M += 1
    t = build_scheme(name, M)
    blk = order_report(t, p)
    flat = order_report_flat(t, p)
    for e in blk:
        k = flat_scale(e.condition_id)
        assert abs(e.residual - M ** k * flat[e.condition_id].residual) <= 1e-12
