"""Quick end-to-end check of the `cwkd` extension module.

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import cwkd


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    print("cwkd", cwkd.__version__)

    # Constant maps have uniform spatial distributions.
    x = cwkd.Tensor((1, 2, 3, 4), [0.7] * 24)
    d = cwkd.channel_distribution(x, temperature=0.5)
    assert all(close(p, 1 / 12) for p in d.tolist())

    # KL of softmax(0, ln 3) against uniform, and its gradient.
    t = cwkd.Tensor((1, 1, 1, 2), [0.0, math.log(3.0)])
    s = cwkd.Tensor.zeros((1, 1, 1, 2))
    value, grad = cwkd.LossSpec("cw_kl").evaluate(t, s)
    assert close(value, 0.25 * math.log(0.5) + 0.75 * math.log(1.5))
    assert close(grad.get(0, 0, 0, 0), 0.25) and close(grad.get(0, 0, 0, 1), -0.25)

    for kind in cwkd.KINDS:
        v, _ = cwkd.LossSpec(kind).evaluate(x, x, cwkd.Labels((1, 3, 4), [0] * 12))
        assert abs(v) < 1e-12, (kind, v)

    assert cwkd.complexity("pa", 64, 64, 32, 4) == ("(h·w)^2·c", 536870912)
    try:
        cwkd.LossSpec("ho")
    except ValueError as e:
        print("rejected HO:", e)
    else:
        raise AssertionError("HO should be unsupported")

    report = cwkd.gradcheck(instances=2)
    assert report["passed"], report
    print("gradcheck worst", max(report["max_rel_error"].values()))

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.cwt"
        d.save(str(path))
        assert cwkd.Tensor.load(str(path)).tolist() == d.tolist()

        cfg = cwkd.Config.from_toml(
            "seeds = [0]\neval_every = 10\n"
            "[dataset]\ntrain = 8\nval = 4\nheight = 16\nwidth = 16\n"
            "[model]\nteacher_width = 4\nstudent_width = 2\n"
            "[optimizer]\nsteps = 20\nbatch = 2\n"
        )
        teacher = cwkd.train_teacher(cfg, seed=0)
        teacher.net.save(str(Path(tmp) / "teacher"))
        reloaded = cwkd.ToyNet.load(str(Path(tmp) / "teacher"))
        _, val = cwkd.build_dataset(cfg)
        assert close(reloaded.evaluate(val), teacher.net.evaluate(val))

        student = cwkd.distill(cfg.with_losses([cwkd.LossSpec("cw_kl", alpha=35.0)]), reloaded)
        baseline = cwkd.distill(cfg.with_losses([cwkd.LossSpec("cw_kl", alpha=0.0)]), reloaded)
        ce_only = cwkd.distill(cfg, reloaded)
        assert baseline.best_val_miou == ce_only.best_val_miou
        print(f"teacher {teacher.best_val_miou:.3f}  student {student.best_val_miou:.3f}")

    print("ok")


if __name__ == "__main__":
    main()
