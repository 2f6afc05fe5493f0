"""End-to-end analytic-vs-finite-difference gradient verification."""


def test_end_to_end_gradient_check(gradcheck_result):
    r = gradcheck_result
    print(
        f"\ngradient check: {r['total']} parameters, {r['fraction_ok'] * 100:.2f}% "
        f"within 1e-3 (worst rel err {r['worst_rel_err']:.2e}) in {r['elapsed_s']:.0f}s"
    )
    assert r["fraction_ok"] >= 0.99
    assert r["elapsed_s"] < 300
