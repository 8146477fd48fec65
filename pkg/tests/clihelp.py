"""Helpers for driving the command-line tool in-process and as a subprocess."""

import contextlib
import io
import os
import subprocess
import sys
from pathlib import Path

from tpswarp import formats
from tpswarp.cli import main
from tpswarp.classifier import zero_params


def run(argv, threads=None):
    """Run the CLI in-process; returns ``(code, stdout, stderr)``."""
    out, err = io.StringIO(), io.StringIO()
    old = os.environ.get("WARP_THREADS")
    if threads is not None:
        os.environ["WARP_THREADS"] = str(threads)
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            try:
                code = main([str(a) for a in argv])
            except SystemExit as exc:  # argparse usage errors
                code = exc.code
    finally:
        if threads is not None:
            if old is None:
                os.environ.pop("WARP_THREADS", None)
            else:
                os.environ["WARP_THREADS"] = old
    return code, out.getvalue(), err.getvalue()


def run_subprocess(argv, threads=1):
    env = dict(os.environ, WARP_THREADS=str(threads))
    p = subprocess.run([sys.executable, "-m", "tpswarp", *map(str, argv)], capture_output=True, text=True, env=env)
    return p.returncode, p.stdout, p.stderr


def snapshot(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def subcommand_jobs(work: Path):
    """One representative invocation per subcommand. Inputs are created in ``work/inputs``."""
    inputs = work / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    code, _, err = run(["synth", "--family", "fisheye", "--param", "k1=-0.2", "--size", "96x96",
                        "--seed", "3", "--out", inputs / "sample"])
    assert code == 0, err
    formats.write_params(inputs / "zero.json", zero_params())
    s = inputs / "sample"
    return {
        "synth": lambda o: ["synth", "--family", "portrait", "--params", "faces=1,cx0=0.1,cy0=0,radius0=0.3,amp0=0.2",
                            "--size", "80x72", "--seed", "5", "--out", o / "synth"],
        "solve": lambda o: ["solve", "--grid", s / "grid.json", "--out", o / "tps.json"],
        "warp": lambda o: ["warp", "--in", s / "input.png", "--grid", s / "grid.json", "--size", "128x112",
                           "--out", o / "warped.png"],
        "classify": lambda o: ["classify", "--grid", s / "grid.json", "--params", inputs / "zero.json"],
        "train": lambda o: ["train", "--count-per-class", "4", "--grid-size", "6", "--epochs", "2", "--batch-size", "8",
                            "--seed", "1", "--out", o / "params.json"],
        "eval": lambda o: ["eval", "--in", s / "input.png", "--ref", s / "clean.png", "--mask", s / "mask.png"],
    }


def determinism_report(work: Path, thread_settings=(1, 3), repeats=2, launcher=run):
    """For each subcommand: True when every run gives identical exit code, stdout and output files."""
    jobs = subcommand_jobs(work)
    report = {}
    for name, make in jobs.items():
        seen = None
        ok = True
        k = 0
        for threads in thread_settings:
            for _ in range(repeats):
                out_dir = work / f"{name}_{k}"
                out_dir.mkdir()
                k += 1
                code, stdout, _ = launcher(make(out_dir), threads=threads)
                result = (code, stdout.replace(str(out_dir), "<out>"), snapshot(out_dir))
                ok = ok and code == 0
                if seen is None:
                    seen = result
                elif result != seen:
                    ok = False
        report[name] = ok
    return report
