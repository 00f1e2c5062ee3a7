"""Smoke test for the pyplab extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pyplab-*.whl
"""

import math
import tempfile

import pyplab


def main():
    assert pyplab.k2(0.0) == 0.0
    assert abs(pyplab.psi2(1.0) - math.log(2)) < 1e-15
    threshold, bound = pyplab.all_fail_bound(1.0, 16)
    assert abs(threshold - 0.832555) < 1e-5 and abs(bound - 0.946058) < 1e-5

    half = pyplab.Activation("half_space:0")
    assert half.eval(0.0) and not half.eval(-1e-12)
    assert abs(pyplab.first_moment_alpha(half) - 1.0) < 1e-12

    gauss = pyplab.DisorderSpec("gaussian")
    rade = pyplab.DisorderSpec("rademacher")
    assert rade.is_lattice() and rade.variance_proxy() == 1.0

    free = pyplab.Instance.sample(half, gauss, 5, 0, seed=1)
    assert free.count() == 32

    inst = pyplab.Instance.sample(pyplab.Activation("symmetric_interval:0.6"), rade, 12, 6, seed=7)
    assert inst.count() == inst.count_naive()
    assert len(inst.solutions()) == inst.count()
    assert inst.exists_solution() == (inst.count() > 0)
    hist = inst.violation_histogram()
    assert sum(hist) == 2**12 and hist[0] == inst.count()

    curve = pyplab.threshold_scan(half, gauss, 10, [0.0, 0.5, 1.0, 1.5], 100, 3)
    assert curve["p_solvable"][0] == 1.0

    gap = pyplab.clt_gap(half, 1, 10, rade, 20000, 5)
    assert abs(gap["value"] - 252 / 2048) < 4 * gap["se"]

    config = 'seed = 2\nn = 6\nm = 3\n[model]\nactivation = "half_space:0"\n'
    with tempfile.TemporaryDirectory() as out:
        csv = pyplab.run("enumerate", config, out)
    assert csv.startswith("n,m,alpha,z,")

    try:
        pyplab.Activation("interval:2,1")
    except ValueError:
        pass
    else:
        raise AssertionError("inverted interval accepted")

    print("pyplab smoke test passed")


if __name__ == "__main__":
    main()
