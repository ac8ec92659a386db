"""Smoke test for the formlab Python extension.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math

import formlab

UNIT = [(-0.5, 0.5), (-0.5, 0.5)]


def main():
    spec = formlab.Spec.quadratic(2, 1, 3, 1, 4, 1)
    assert (spec.n, spec.r, spec.d, spec.main_exponent) == (4, 1, 2, 1)
    assert spec.eval([1.0, 2.0, 3.0, 4.0]) == [1 + 4 - 9 + 16, 4.0]
    assert all(c["passed"] for c in spec.validate()["checks"])

    ident = formlab.Instance.identity(spec)
    assert formlab.count(ident, UNIT, 10.0)["count"] == 113
    assert formlab.count(ident, UNIT, 1.0, strategy="naive")["count"] == 9

    c = formlab.constant(ident, 100_000, seed=1)
    assert abs(c["value"] - 2 * math.pi) < 1e-6, c

    vol = formlab.volume(ident, UNIT, 200.0, 200_000, seed=1)
    assert abs(vol["value"] / 200.0 - 2 * math.pi) < 5 * vol["std_error"] / 200.0 + 0.02, vol

    inst = formlab.Instance.sample(spec, seed=7)
    again = formlab.Instance.from_json(inst.to_json())
    assert again.g1 == inst.g1 and again.lam == inst.lam
    assert json.loads(inst.to_json())["spec"]["n"] == 4

    w = formlab.solve(inst, [0.3, -0.2], [0.05, 0.05], 50.0)
    if w is not None:
        assert all(r < 0.05 for r in w["residuals"])
    r = formlab.smallest_radius(inst, [0.3, -0.2], [0.05, 0.05], 200)
    assert r is None or r["t_star"] <= 200

    s = formlab.uniform_supmin(ident, 1.0, 10.0, 0.25)
    assert s["value"] == 0.5, s

    basis = formlab.sample_lattice(4, seed=3)
    d = formlab.discrepancy(spec, basis, UNIT, 10.0, 50_000, seed=3)
    assert d["d"] == abs(d["count"] - d["volume"])

    try:
        formlab.count(ident, UNIT, 100.0, budget=10)
    except formlab.BudgetExceeded:
        pass
    else:
        raise AssertionError("budget not enforced")

    try:
        formlab.Spec.quadratic(2, 2, 3, 3, 4, 1)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid signature accepted")

    print("formlab smoke test: ok")


if __name__ == "__main__":
    main()
