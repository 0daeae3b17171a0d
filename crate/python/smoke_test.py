"""Smoke test for the lrfpn_py extension module.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import os
import sys
import tempfile

import lrfpn_py as lr


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    flags = lr.AblationFlags("sp,pp,ci")
    check(flags.label == "+SPIEM+CI", f"flag label {flags.label}")
    check(len(lr.AblationFlags.lattice()) == 10, "lattice has 10 rows")
    try:
        lr.AblationFlags("xx")
        check(False, "bad token rejected")
    except ValueError:
        check(True, "bad token rejected")

    x = lr.Tensor([1, 2, 5, 5], [float(i % 7) for i in range(50)])
    avg = lr.adaptive_avg_pool(x, 2, 2)
    mx = lr.adaptive_max_pool(x, 2, 2)
    check(avg.dims == [1, 2, 2, 2], "avg pool dims")
    check(all(m >= a for m, a in zip(mx.data, avg.data)), "max pool dominates avg pool")
    k = lr.Tensor([3, 2, 3, 3], [0.1 * ((i % 5) - 2) for i in range(54)])
    naive = lr.conv2d(x, k, stride=2, padding=1, path="naive")
    fast = lr.conv2d(x, k, stride=2, padding=1, path="optimized")
    check(naive.dims == [1, 3, 3, 3], "conv dims")
    check(max(abs(a - b) for a, b in zip(naive.data, fast.data)) < 1e-12, "conv paths agree")

    model = lr.LrFpnModel("full", seed=0, miniature=True)
    image, heatmap = lr.scene(0, image_size=model.input_size)
    levels = model.forward(image)
    sides = [p.dims[2] for p in levels]
    check(len(levels) == 5, f"pyramid sides {sides}")
    check(all(b == (a + 1) // 2 for a, b in zip(sides, sides[1:])), "levels halve")
    pred = model.predict(image)
    check(pred.dims == heatmap.dims, "prediction matches heatmap shape")
    check(all(0.0 < p < 1.0 for p in pred.data), "predictions are probabilities")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.lrfpn")
        model.save(path)
        other = lr.LrFpnModel("full", seed=1, miniature=True)
        other.load(path)
        name = model.param_names()[0]
        check(other.param(name).data == model.param(name).data, "checkpoint round trip")
        with open(path, "r+b") as f:
            f.truncate(10)
        try:
            other.load(path)
            check(False, "truncated checkpoint rejected")
        except ValueError:
            check(True, "truncated checkpoint rejected")

    losses = lr.train("full", seed=0, steps=40, miniature=True)
    check(len(losses) == 40 and losses[-1] < losses[0], f"training {losses[0]:.4f} -> {losses[-1]:.4f}")

    passed, err, _ = lr.gradcheck(probes=60)
    check(passed, f"gradcheck max rel err {err:.2e}")
    passed, _ = lr.oracle(cases=20)
    check(passed, "kernel oracles")
    print("smoke test: PASS")


if __name__ == "__main__":
    main()
