#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds nothing itself: run `cargo build -p reach-precise-py` (or --release)
first, then `python3 python/smoke_test.py`.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_bindings():
    candidates = [
        REPO / "target" / "release" / "libreach_precise_py.so",
        REPO / "target" / "debug" / "libreach_precise_py.so",
        REPO / "target" / "release" / "reach_precise_py.dll",
        REPO / "target" / "debug" / "reach_precise_py.dll",
        REPO / "target" / "release" / "libreach_precise_py.dylib",
        REPO / "target" / "debug" / "libreach_precise_py.dylib",
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("no built extension found; run: cargo build -p reach-precise-py")
    src = max(built, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="reach_precise_py_"))
    shutil.copy(src, stage / "reach_precise_py.so")
    sys.path.insert(0, str(stage))
    import reach_precise_py

    return reach_precise_py


def main():
    rp = import_bindings()

    geom = rp.ArmGeometry.ur3()
    ranges = geom.joint_ranges_deg
    assert len(ranges) == 6
    assert math.isclose(geom.delta_bound_deg, 10.0, rel_tol=1e-9)

    ref = rp.ArmGeometry.reference_config_deg()
    pos, rot = geom.forward_kinematics(ref)
    assert len(pos) == 3 and len(rot) == 3
    # orientation rows are orthonormal
    for row in rot:
        assert math.isclose(sum(v * v for v in row), 1.0, abs_tol=1e-12)

    # quantization snaps to multiples and is idempotent
    q = rp.quantize([0.123, -0.456, 0.789, 0.0, 1.04, -2.0], 0.1)
    assert all(math.isclose(v / 0.1, round(v / 0.1), abs_tol=1e-9) for v in q)
    assert rp.quantize(q, 0.1) == q

    # minimum displacement scales ~linearly with resolution
    exact_1, approx_1 = geom.min_end_displacement(ref, 1.0)
    exact_001, _ = geom.min_end_displacement(ref, 0.01)
    assert 50 < exact_1 / exact_001 < 150
    assert math.isclose(exact_1, approx_1, rel_tol=0.05)
    print(f"min displacement @1deg: {exact_1 * 1e3:.3f} mm")

    # reachability envelope grows with the delta bound
    d1 = geom.max_relative_distance(1.0, samples=20000, seed=7)
    d10 = geom.max_relative_distance(10.0, samples=20000, seed=7)
    assert d10 > d1 > 0
    print(f"envelope: {d1 * 100:.2f} cm @1deg, {d10 * 100:.2f} cm @10deg")

    # displacement consistency: FM(s, 0) = 0
    zero = geom.displacement(ref, [0.0] * 6)
    assert all(abs(v) < 1e-15 for v in zero)

    # a quick pretraining run learns something
    model, curve = rp.pretrain(scale="desk", seed=7, iterations=3, n_train=1500, n_test=500)
    assert len(curve) == 3
    assert curve[-1] < curve[0]
    print(f"pretrain precision: {curve[0] * 1e3:.2f} -> {curve[-1] * 1e3:.2f} mm")

    # checkpoint round trip preserves parameters exactly
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "model.json")
        model.save(path)
        again = rp.InverseModel.load(path)
        assert again.param_hash() == model.param_hash()

    # replication is isolation: reaching never touches the original
    hash_before = model.param_hash()
    dq = [1.5, -2.0, 1.0, -0.5, 0.8, -1.2]
    target = geom.displacement(ref, dq)
    report = rp.reach_target(geom, model, ref, target, resolution_deg=0.1, strategy="parallel")
    assert model.param_hash() == hash_before
    assert abs(report["audited_precision_m"] - report["final_precision_m"]) < 1e-9
    assert report["final_precision_m"] < 0.05
    print(
        f"reach: {report['final_precision_m'] * 1e3:.3f} mm "
        f"(threshold {report['threshold_m'] * 1e3:.3f} mm, success={report['success']})"
    )

    # inference respects the delta bound
    out = model.infer(ref, target)
    assert all(abs(v) <= geom.delta_bound_deg for v in out)

    print("smoke test passed")


if __name__ == "__main__":
    main()
