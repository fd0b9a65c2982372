"""Runs every CLI subcommand once into a directory; shared by the CLI tests and the acceptance suite."""

from __future__ import annotations

from pathlib import Path

from xcorner.cli import main


def run_all(root: Path, model: str | None = None, trials: int = 2) -> dict[str, bytes]:
    """Execute gen, train, detect, recover, sweep, bench-refine and eval; return output bytes by name.

    With ``model`` given, detection-side commands use it instead of the freshly
    trained one (which is too small to detect much).
    """
    root.mkdir(parents=True, exist_ok=True)
    boards, corners = root / "boards", root / "corners"
    steps = [
        ["gen", "--kind", "board", "--count", "6", "--out", str(boards), "--seed", "3"],
        ["gen", "--kind", "corner", "--count", "3", "--out", str(corners), "--seed", "3", "--noise", "5"],
        ["gen", "--kind", "board", "--count", "1", "--out", str(root / "big"), "--seed", "4", "--size", "120",
         "--rows", "5", "--cols", "6", "--square", "12", "--rot", "20", "--noise", "3"],
        ["train", "--config", "A", "--data", str(boards), "--epochs", "1", "--seed", "3", "--out", str(root / "m.rcdn")],
    ]  # fmt: skip
    for argv in steps:
        assert main(argv) == 0, argv
    m = model or str(root / "m.rcdn")
    image = str(root / "big" / "board_00000.pgm")
    more = [
        ["detect", "--model", m, "--image", image, "--out", str(root / "det.csv"), "--seed", "3"],
        ["recover", "--model", m, "--image", image, "--out", str(root / "grid.csv"), "--seed", "3"],
        ["sweep", "--axis", "rotation", "--values", "0,45", "--noise", "0,20", "--trials", str(trials),
         "--model", m, "--seed", "3", "--out", str(root / "sweep.csv"), "--gnuplot-script"],
        ["bench-refine", "--factor", "noise", "--values", "0,40", "--trials", str(trials), "--seed", "3",
         "--out", str(root / "bench.csv"), "--gnuplot-script"],
        ["eval", "--pred", str(root / "det.csv"), "--truth", str(root / "big" / "board_00000.corners.csv"),
         "--out", str(root / "eval.csv")],
    ]  # fmt: skip
    for argv in more:
        assert main(argv) == 0, argv
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }
