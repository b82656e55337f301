"""Threshold sweep through the command-line interface.

Generates a small model plus a handful of inputs, sweeps a grid over the
input and softmax thresholds on several workers, and prints the resulting
accuracy-proxy / executed-MACs table with its Pareto markers.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

workdir = Path(tempfile.mkdtemp(prefix="deltakws-sweep-"))
print(f"working in {workdir}")


def cli(*args):
    cmd = [sys.executable, "-m", "deltakws.cli", *args]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise SystemExit(f"command failed ({proc.returncode}): {proc.stderr}")
    return proc.stdout


dims = ["--seq-tokens", "24", "--feature-dim", "10", "--embed-dim", "36",
        "--mlp-dim", "72", "--heads", "3", "--layers", "4"]
cli("gen", "weights", "--seed", "1", "-o", str(workdir / "model.dkwt"), *dims)

inputs = []
for i, rho in enumerate((0.6, 0.9, 0.99)):
    path = workdir / f"{i}__rho{rho}.dkwf"
    cli("gen", "features", "--seed", str(50 + i), "-o", str(path),
        "--seq-tokens", "24", "--feature-dim", "10", "--rho", str(rho))
    inputs.append(str(path))

out = workdir / "sweep.csv"
cli("sweep", "-w", str(workdir / "model.dkwt"), "--inputs", *inputs, "-o", str(out),
    "--jobs", "4",
    "--theta-x", "0", "0.1", "0.3",
    "--theta-softmax", "0", "0.001", "0.01")

lines = out.read_text().splitlines()
header = lines[0].split(",")
keep = ["input_id", "theta_x", "theta_softmax", "pct_total", "speedup", "logit_dev", "pareto"]
idx = [header.index(c) for c in keep]
print(" | ".join(f"{c:>12}" for c in keep))
for line in lines[1:]:
    cells = line.split(",")
    print(" | ".join(f"{cells[i]:>12}" for i in idx))

print(f"\nfull table: {out}")
print("pareto=1 marks threshold tuples that are non-dominated for that input")
print("(no other tuple has both lower logit deviation and fewer executed MACs)")
