#!/usr/bin/env python3
"""End-to-end smoke test of the Python bindings.

Builds nothing itself: run `cargo build -p twoset-py --release` (or debug)
first. The script locates the compiled extension, imports it, and drives a
small analysis on the bundled fixtures.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_twoset():
    candidates = [
        ROOT / "target" / "release" / "libtwoset.so",
        ROOT / "target" / "debug" / "libtwoset.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p twoset-py --release")
    tmp = Path(tempfile.mkdtemp(prefix="twoset_py_"))
    shutil.copy(lib, tmp / "twoset.so")
    sys.path.insert(0, str(tmp))
    import twoset  # noqa: E402

    return twoset


def close(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1.0)


def main():
    ts = import_twoset()

    # --- geyser fixture: partition structure and the compatibility table
    geyser = ts.load_geyser(str(ROOT / "fixtures" / "geyser.csv"))
    assert geyser.counts() == (77, 221), geyser.counts()
    assert geyser.names == ["x1", "x2"]

    rows = geyser.compat_table([[], ["x1"], ["x2"], ["x1", "x2"]])
    assert len(rows) == 8
    by_key = {(tuple(r["predictors"]), r["direction"]): r["breakdown"] for r in rows}
    empty_back = by_key[((), "S0|S1")]
    assert close(empty_back["term1"] + empty_back["term2"] + empty_back["term3"],
                 empty_back["total"], 1e-12)
    assert empty_back["term2"] == 0.0
    # published scale: the low-quality dataset's own noise is about 0.032
    assert 0.025 < empty_back["term1"] < 0.04, empty_back

    # --- closed-form error at explicit variances
    b = geyser.prediction_error(["x1", "x2"], 0.0069, 0.0081, 0.0, "S0|S1")
    assert close(b["term1"], 0.0069, 1e-12)
    assert b["term2"] == 0.0

    # --- search on the geyser candidates
    ranked = geyser.similarity_search(min_common=1)
    assert [r["rank"] for r in ranked] == [1, 2, 3]
    assert all(close(r["pe_total"], r["forward"]["total"] + r["backward"]["total"], 1e-12)
               for r in ranked)

    # --- diabetes fixture: the per-dataset subset selections
    diabetes = ts.load_diabetes(str(ROOT / "fixtures" / "diabetes.csv"))
    assert diabetes.counts() == (377, 65)
    precise = diabetes.mlsel(1, top=1)[0]
    assert precise["predictors"] == ["x2", "x3", "x9", "x10"], precise
    imprecise = diabetes.mlsel(0, top=1)[0]
    assert imprecise["predictors"] == ["x2", "x3", "x4", "x7", "x9"], imprecise

    # --- a short posterior run
    run = geyser.gibbs(["x1", "x2"], iters=3000, burnin=1000, seed=5)
    assert len(run["sigma_eta_sq"]) == 2000
    assert all(v > 0 for v in run["sigma_eta_sq"][:50])
    assert run["pe_sd"] >= 0.0 and math.isfinite(run["pe_mean"])
    rerun = geyser.gibbs(["x1", "x2"], iters=3000, burnin=1000, seed=5)
    assert run["sigma_eta_sq"] == rerun["sigma_eta_sq"], "seeded runs must be identical"

    # --- brute-force formula check
    cfg = {
        "n0": 40, "n1": 50,
        "sigma0_sq": 0.9, "sigma1_sq": 1.2, "sigma_eta_sq": 0.2,
        "intercept": 0.4, "beta": [1.0, -0.5],
        "design": "gaussian", "replications": 20000, "seed": 9,
    }
    check = ts.simulate_check(json.dumps(cfg))
    for direction, entry in check.items():
        assert entry["z"] < 4.0, (direction, entry)

    # --- in-memory construction
    made = ts.from_arrays(
        [0.1, 0.4, 0.3, 0.7, 0.2, 0.9, 1.2, 0.8, 1.1, 0.6],
        [[1.0], [2.0], [3.0], [4.0], [5.0], [1.5], [2.5], [3.5], [4.5], [5.5]],
        [0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
        ["x1"],
    )
    assert made.counts() == (5, 5)
    fit = made.fit(0, ["x1"])
    assert 0.0 < fit["shrinkage_mean"] < 1.0

    print("python bindings smoke test: all checks passed")


if __name__ == "__main__":
    main()
