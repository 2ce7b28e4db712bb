"""Secondary acceptance: render a real Test-1 desk-scale run end to end.

The run directory is produced by the solver's own CLI (the only coupling),
then rendered twice to verify the byte-for-byte determinism contract.
"""

import shutil
import subprocess
import sys

import pytest

from chviz import io as vio
from chviz import render
from chviz.cli import main

TEST1_CFG = """
preset = test1
epsilon = 0.15
tol = 0.15
t_end = 5e-4
dt_init = 2e-5
temporal_rtol = 1e-3
block_steps = 5
snapshot_every_blocks = 1
"""


@pytest.fixture(scope="session")
def test1_run_dir(tmp_path_factory):
    if shutil.which("spinodal") is None:
        pytest.skip("spinodal CLI not installed")
    base = tmp_path_factory.mktemp("test1_run")
    cfg = base / "test1.cfg"
    cfg.write_text(TEST1_CFG)
    out = base / "run"
    proc = subprocess.run(
        ["spinodal", "run", "--config", str(cfg), "--output", str(out), "--quiet"],
        capture_output=True, text=True, timeout=900)
    assert proc.returncode == 0, proc.stderr
    return out


def test_acceptance_series_render(test1_run_dir, tmp_path):
    out = tmp_path / "imgs"
    report = render.render_series(str(test1_run_dir), str(out))
    line = (f"ACCEPTANCE viz-series: images={len(report.images)} "
            f"plots={len(report.plots)} missing={report.missing}")
    print(line, file=sys.stderr)
    assert report.missing == []
    assert len(report.images) >= 2
    assert len(report.plots) == 4
    for p in report.images + report.plots:
        assert (out / p.split("/")[-1]).stat().st_size > 0


def test_acceptance_initial_snapshot_closed_loops(test1_run_dir, tmp_path):
    ls = vio.read_levelset(test1_run_dir / "ls_00000.txt")
    assert ls.closed_count() == 2, "test1 initial data encloses two circles"
    img = tmp_path / "t0.png"
    rc = main(["snapshot", str(test1_run_dir / "snap_00000.txt"),
               "--levelset", str(test1_run_dir / "ls_00000.txt"),
               "-o", str(img)])
    print(f"ACCEPTANCE viz-initial-loops: closed={ls.closed_count()}",
          file=sys.stderr)
    assert rc == 0 and img.stat().st_size > 0


def test_acceptance_deterministic_bytes(test1_run_dir, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    render.render_series(str(test1_run_dir), str(a))
    render.render_series(str(test1_run_dir), str(b))
    mismatches = []
    for pa in sorted(a.iterdir()):
        pb = b / pa.name
        if pa.read_bytes() != pb.read_bytes():
            mismatches.append(pa.name)
    print(f"ACCEPTANCE viz-deterministic: mismatches={mismatches}",
          file=sys.stderr)
    assert mismatches == []
