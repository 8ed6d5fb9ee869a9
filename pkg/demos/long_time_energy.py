"""Energy over [0, 220] for the multirate schemes at H=0.1.

The singlerate leapfrog (M=1) violates H*omega < 2 and blows up; the
multirate versions keep H and the oscillatory energy bounded.
"""
from smgark.diagnostics import energy_study
from smgark.integrators import make_stepper
from smgark.systems import FpuParams, fpu_system, standard_initial_state

P = FpuParams(3, 50.0)
sys_ = fpu_system(P)
y0 = standard_initial_state(P)

for name, M in [("mr-lpfr", 1), ("mr-lpfr", 50), ("mr-imex2", 50), ("mr-imim2", 50)]:
    es = energy_study(make_stepper(name, M), sys_, y0, 0.1, 220.0, every=10)
    if es.failed_at is not None:
        print(f"{name:9s} M={M:<3d} diverged at t = {es.failed_at:g}")
        continue
    with open(f"energy-{name}-M{M}.csv", "w", newline="") as fh:
        es.to_csv(fh)
    print(f"{name:9s} M={M:<3d} max |H-H0| {es.max_deviation:.3f}  drift {es.drift_slope:+.1e}"
          f"  max |I-I0| {es.invariant_deviation:.3f}")
