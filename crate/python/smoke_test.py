"""Smoke test for the cutoff_lab extension module.

Build and install it first:

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import json
import math
import pathlib
import tempfile

import cutoff_lab


def check_transport():
    a = [[0.0, 0.0], [1.0, 0.0]]
    b = [[0.0, 1.0], [1.0, 1.0]]
    assert abs(cutoff_lab.wasserstein(a, b, 2.0) - 1.0) < 1e-12
    # Two points swapped at equal cost.
    assert abs(cutoff_lab.wasserstein([[0.0], [3.0]], [[3.0], [0.0]], 1.0)) < 1e-12
    sliced = cutoff_lab.sliced_wasserstein(a, b, 2.0, directions=32, seed=3)
    assert 0.0 < sliced <= 1.0 + 1e-12
    try:
        cutoff_lab.wasserstein([[0.0], [1.0]], [[0.0]], 2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unequal sizes must fail")


def check_spectral():
    out = cutoff_lab.linear_cutoff([[1.0, 1.0], [0.0, 1.0]], [1.0, 1.0])
    assert abs(out["q"] - 1.0) < 1e-9 and out["ell"] == 2 and out["m"] == 1
    rot = cutoff_lab.linear_cutoff([[1.0, 2.0], [-2.0, 1.0]], [1.0, 0.0])
    assert rot["m"] == 2 and all(abs(abs(t) - 2.0) < 1e-9 for t in rot["thetas"])
    eps = 0.01
    t = cutoff_lab.cutoff_time(1.0, 2, eps)
    assert abs(t - (math.log(1 / eps) + math.log(math.log(1 / eps)))) < 1e-12


def check_oracle():
    # Far past the cutoff the law is stationary and the distance vanishes.
    assert cutoff_lab.ou_gaussian_ratio(1.0, 1.0, 0.05, 40.0) < 1e-10
    assert cutoff_lab.ou_gaussian_ratio(1.0, 1.0, 0.05, 0.0) > 19.0


CONFIG = """
master_seed = 7
output_dir = "unused"
x0 = [1.0]
n_traj = 256

[field]
name = "linear"
matrix = [[1.0]]

[noise]
kind = "brownian"

[schedule]
epsilons = [0.1, 0.05]
r_grid = [-1.0, 0.0, 1.0]
p = 2.0
"""


def check_run():
    resolved = cutoff_lab.resolve_config(CONFIG)
    assert "dt = 0.01" in resolved and "horizon = 20.0" in resolved
    assert "cutoff" in cutoff_lab.SUBCOMMANDS
    with tempfile.TemporaryDirectory() as tmp:
        written = cutoff_lab.run("cutoff", CONFIG, output_dir=tmp, workers=1)
        names = sorted(pathlib.Path(p).name for p in written)
        assert "curve.csv" in names and "manifest.json" in names, names
        manifest = json.loads((pathlib.Path(tmp) / "cutoff" / "manifest.json").read_text())
        assert manifest["master_seed"] == 7
        rerun = cutoff_lab.run("cutoff", CONFIG, output_dir=tmp, workers=2)
        assert sorted(map(str, rerun)) == sorted(map(str, written))
        curve = (pathlib.Path(tmp) / "cutoff" / "curve.csv").read_text()
        assert curve.count("\n") == 1 + 2 * 3
    try:
        cutoff_lab.resolve_config(CONFIG.replace("p = 2.0", "p = -1.0"))
    except ValueError as e:
        assert "schedule.p" in str(e)
    else:
        raise AssertionError("bad config must fail")


if __name__ == "__main__":
    check_transport()
    check_spectral()
    check_oracle()
    check_run()
    print("smoke test ok")
