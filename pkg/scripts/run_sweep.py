"""Robustness sweeps over rotation and skew against noise for a trained model.

Writes one CSV (and a gnuplot script) per axis into --out-dir.
"""

import argparse
from pathlib import Path

from xcorner import xnet
from xcorner.cli import main as cli_main


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", required=True)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--noise", default="0:100:10")
    ap.add_argument("--step", type=float, default=5.0, help="axis step in degrees (1 for the full grid)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="sweeps")
    a = ap.parse_args()
    xnet.load_model(a.model)  # fail early on a bad file
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for axis, hi in (("rotation", 90), ("skew", 70)):
        code = cli_main([
            "sweep", "--axis", axis, "--values", f"0:{hi}:{a.step:g}", "--noise", a.noise,
            "--trials", str(a.trials), "--model", a.model, "--seed", str(a.seed),
            "--out", str(out / f"{axis}.csv"), "--gnuplot-script",
        ])  # fmt: skip
        if code:
            raise SystemExit(code)
        print(f"wrote {out / f'{axis}.csv'}")


if __name__ == "__main__":
    main()
