"""Quick end-to-end check of the pyfilmctl bindings.

Build the extension first:

    pip install -e crates/python --no-build-isolation
"""

import json
import math

import pyfilmctl as fc


def main():
    params = fc.PhysicalParams(11.29)
    print(params)

    n = 64
    dh, dq = fc.wr_rhs(params, [1.0] * n, [2.0 / 3.0] * n)
    assert max(map(abs, dh + dq)) < 1e-12, "flat film must be a fixed point"

    sys = fc.linearize(params, n_nodes=n, m=5, p=5)
    assert sys.unstable_dimension() == 8
    lead = max(sys.eigenvalues(), key=lambda z: z.real)
    print(f"open loop: {sys.unstable_dimension()} unstable, leading {lead:.4f}")

    # scalar Riccati equation with the closed form sqrt(2) - 1
    q = fc.solve_care([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert abs(q[0][0] - (math.sqrt(2) - 1)) < 1e-12
    print(f"scalar CARE: {q[0][0]:.15f}")

    for strategy in ("full-state", "luenberger"):
        ctrl = fc.synthesize(sys, strategy)
        eig = ctrl.closed_loop_eigenvalues(sys)
        assert max(z.real for z in eig) < 0, strategy
        back = fc.Controller.from_json(ctrl.to_json())
        assert back.to_json() == ctrl.to_json()
        info = json.loads(ctrl.info_json())
        print(f"{strategy}: closed-loop abscissa {ctrl.closed_loop_abscissa:.4f}, unstable dim {info['unstable_dimension']}")

    cfg = fc.RunConfig(fc.PhysicalParams(3.0), strategy="full-state", n_nodes=32)
    cfg.burn_in_time = 20.0
    cfg.control_time = 30.0
    rec = fc.run(cfg)
    print(rec)
    assert len(rec.times) == len(rec.norms) == len(rec.costs)
    assert all(b >= a for a, b in zip(rec.costs, rec.costs[1:]))
    assert rec.mass_defect < 1e-8

    try:
        fc.RunConfig.from_text("[control]\nstrategy = sof\n")
    except ValueError as e:
        assert "reynolds" in str(e)
    else:
        raise AssertionError("missing reynolds must be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
