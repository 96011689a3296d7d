"""Smoke test for the compiled `diffmvr` extension.

Build and run from the repository root:

    cargo build --release -p diffmvr-python --features extension-module
    cp target/release/libdiffmvr.so python/diffmvr.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import diffmvr  # noqa: E402


def check_schedule():
    assert diffmvr.alpha_bars(2, 0.5, 0.5) == [0.5, 0.25]
    ab = diffmvr.alpha_bars(50)
    assert len(ab) == 50 and all(b < a for a, b in zip(ab, ab[1:]))


def check_metrics():
    rng = random.Random(0)
    shape = (3, 12, 12)
    x = [rng.random() for _ in range(math.prod(shape))]
    assert diffmvr.ssim(x, x, shape) == 1.0
    h = math.sqrt(0.5)
    d = diffmvr.frechet_distance([[-h], [h]], [[1 - h], [1 + h]])
    assert abs(d - 1.0) < 1e-9, d
    try:
        diffmvr.ssim(x, x[:-1], shape)
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch not rejected")


def check_guidance():
    clip = diffmvr.generate_clip(7, p=16, frames=6)
    cov = clip["coverages"]
    for t in range(len(cov)):
        brute = max((i for i in range(t) if cov[i] < 0.01), default=None)
        assert diffmvr.find_past(cov, t) == brute
    c, p, _ = clip["shape"]
    occluded = max(range(len(cov)), key=lambda t: cov[t])
    axis = diffmvr.symmetry_axis(clip["frames"][occluded], clip["masks"][occluded], clip["shape"])
    assert p // 4 <= axis <= 3 * p // 4
    assert len(clip["truth"]) == len(clip["frames"])


def check_pipeline():
    tiny = {"clips": "6", "p": "16", "frames": "4", "vae_steps": "5", "steps": "5", "t_max": "4"}
    with tempfile.TemporaryDirectory() as d:
        data, run = os.path.join(d, "data"), os.path.join(d, "run")
        print(diffmvr.run("gen", settings={**tiny, "out": data}))
        ckpt = diffmvr.run("train", settings={**tiny, "data": data, "out": run})
        diffmvr.run("inpaint", settings={**tiny, "data": data, "checkpoint": ckpt, "out": run})
        print(diffmvr.run("eval", settings={**tiny, "checkpoint": ckpt, "out": run}))
        assert os.path.exists(os.path.join(run, "metrics.csv"))
        try:
            diffmvr.run("gen", settings={**tiny, "out": data})
        except ValueError:
            pass
        else:
            raise AssertionError("gen overwrote a non-empty directory")


if __name__ == "__main__":
    for check in (check_schedule, check_metrics, check_guidance, check_pipeline):
        check()
        print(f"{check.__name__}: ok")
