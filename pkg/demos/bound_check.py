"""Train one encoder on a Gaussian scene and compare ln N - L with the analytic bound.

Run: python3 demos/bound_check.py
"""

from tupleinfonce.miverify import BoundBudget, bound_grid_specs, verify_tnce_bound

for target in (0.6, 1.2):
    spec, noise = bound_grid_specs((target,), modality_noise=0.5)[0]
    for alpha in ((1.0, 0.0, 0.0), (0.34, 0.33, 0.33)):
        rep = verify_tnce_bound(spec, alpha, noise, BoundBudget(max_steps=600))
        print(
            f"view MI {target:.1f} nats, alpha {alpha}: ln N - L = {rep.estimate:.3f}, "
            f"bound = {rep.rhs:.3f} (view {rep.view_mi:.3f}), holds: {rep.passed}, steps {rep.steps}"
        )
