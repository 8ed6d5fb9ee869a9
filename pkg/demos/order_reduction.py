"""Slow-component convergence of IMEX2 and its triple-jump composition.

At omega=50 the composition gains two orders; at omega=10000 it falls back
towards the base scheme.
"""
from smgark.diagnostics import convergence_order, scheme_stepper, sweep_reference
from smgark.systems import FpuParams, fpu_system, standard_initial_state

for omega in (50.0, 10000.0):
    P = FpuParams(3, omega)
    sys_, y0 = fpu_system(P), standard_initial_state(P)
    ref = sweep_reference(omega)
    for spec in ("mr-imex2", "mr-imex2+tj"):
        res = convergence_order(scheme_stepper(spec), sys_, y0, 3.0, [2.0**-k for k in range(5, 10)], ref)
        errs = " ".join(f"{e:.1e}" for e in res.errors)
        print(f"omega={omega:<7g} {spec:12s} slope {res.slope:.2f}   errors {errs}")
