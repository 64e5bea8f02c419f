"""Smoke test for the skatepose_py extension.

Builds the extension with cargo (unless SKATEPOSE_PY_LIB points at a built
library), loads it and exercises each binding once.

    python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def built_library() -> Path:
    override = os.environ.get("SKATEPOSE_PY_LIB")
    if override:
        return Path(override)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "skatepose-py"],
        cwd=ROOT,
        check=True,
    )
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    for name in ("libskatepose_py.so", "libskatepose_py.dylib", "skatepose_py.dll"):
        path = target / "release" / name
        if path.exists():
            return path
    raise SystemExit("built library not found under " + str(target / "release"))


def load(lib: Path, workdir: Path):
    suffix = importlib.machinery.EXTENSION_SUFFIXES[0]
    dest = workdir / ("skatepose_py" + suffix)
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("skatepose_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def standing_pose(dx=0.0, dy=0.0):
    # h36m17 order: pelvis, r hip, r knee, r ankle, l hip, l knee, l ankle,
    # chest, neck, nose, head, l shoulder, l elbow, l wrist,
    # r shoulder, r elbow, r wrist
    p = [
        (0.0, 0.0, 0.95), (-0.1, 0.0, 0.95), (-0.1, 0.0, 0.5), (-0.1, 0.0, 0.05),
        (0.1, 0.0, 0.95), (0.1, 0.0, 0.5), (0.1, 0.0, 0.05),
        (0.0, 0.0, 1.2), (0.0, 0.0, 1.45), (0.0, 0.0, 1.55), (0.0, 0.0, 1.7),
        (0.18, 0.0, 1.45), (0.3, 0.0, 1.2), (0.4, 0.0, 1.0),
        (-0.18, 0.0, 1.45), (-0.3, 0.0, 1.2), (-0.4, 0.0, 1.0),
    ]
    return [[x + dx, y + dy, z] for x, y, z in p]


def main():
    with tempfile.TemporaryDirectory() as tmp:
        sp = load(built_library(), Path(tmp))

        set_labels = sp.label_schema("set")
        element_labels = sp.label_schema("element")
        assert len(set_labels) == 13, set_labels
        assert len(element_labels) == 30, element_labels

        gt = ["NONE"] * 5 + ["Lutz_entry"] * 5 + ["3Lutz_jump"] * 4 + ["landing"] * 3 + ["NONE"] * 3
        assert sp.f1_at_k(gt, gt, 50.0) == 100.0
        report = sp.evaluate(gt, gt)
        assert report["frame_accuracy"] == 100.0, report
        try:
            sp.f1_at_k(gt, ["bogus"] * len(gt), 50.0)
        except ValueError as e:
            assert "parse" in str(e) or "schema" in str(e), e
        else:
            raise AssertionError("bad label accepted")

        frames = [standing_pose(0.3 * t, 0.05 * t * t) for t in range(12)]
        canon, facing = sp.canonicalize(frames)
        assert len(canon) == 12 and len(facing) == 12
        assert all(abs(c) < 1e-9 for c in canon[0][0]), canon[0][0]

        proj = sp.project([[0.0, 0.0, 0.0], [0.4, 0.0, 0.0]], math.pi / 2, 0.0, 5.0)
        assert proj[0] == [0.0, 0.0]
        assert math.isclose(abs(proj[1][0]), 0.08, rel_tol=0.02), proj

        out = Path(tmp) / "gradcheck"
        assert sp.run_cli(["gradcheck", "--out-dir", str(out)]) == 0
        assert (out / "manifest.json").exists()
        assert sp.run_cli(["evaluate", "--no-such-flag"]) == 2

    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
