"""Smoke test for the permshield Python module."""

import math

import permshield


def main():
    x, z = permshield.paired_design(12, 2)
    y = [math.sin(0.7 * i) for i in range(12)]

    res = permshield.run_test(x, z, y, rows=list(range(1, 13)), b=99, seed=1)
    assert res.p_value == (1 + 99 / 2) / 100, res
    assert res.n_ties == 99

    open_res = permshield.run_test(x, z, y, b=200, seed=3)
    again = permshield.run_test(x, z, y, b=200, seed=3)
    assert open_res.p_value == again.p_value
    assert 0 < open_res.p_value <= 1

    mu, safety, quantile, size = permshield.exact_estimates(*permshield.paired_design(7, 2), rows=[4])
    assert size == 720
    assert safety >= 2 / 6 - 1e-12
    assert quantile == 0.0

    x, z = permshield.paired_design(40, 8)
    sel = permshield.select_rows(x, z, alpha=0.05, budget=4, m=300, seed=2)
    assert sel.shield_safety <= 0.05
    assert len(sel.q_values) == 5
    assert set(sel.shield_rows) <= set(sel.rows)

    for name, passed, cases, violations in permshield.verify_suite("group", seed=1):
        assert passed, (name, cases, violations)

    try:
        permshield.run_test([1.0, 2.0], [[1.0], [1.0], [1.0]], [0.0, 1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("dimension mismatch not reported")

    print(f"permshield {permshield.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
