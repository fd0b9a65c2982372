"""Command-line entry point: ``xcorner <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every random draw is
derived from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import boardgrow, lab, subpix, synthgen, xnet
from .candfilter import NMS_HALFWIDTH, ThresholdScheme, read_points, write_candidates
from .gridcore import GridError, load_gray

log = logging.getLogger("xcorner")


def _range(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            return lab.axis_values(lo, hi, step)
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; expected lo:hi:step or a comma list") from None


def _scheme(text: str) -> ThresholdScheme:
    try:
        return ThresholdScheme.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _cluster(text: str) -> dict[str, int]:
    out = {"k": 10, "min": 2, "skip": 30}
    try:
        for part in text.split(","):
            key, _, val = part.partition("=")
            if key not in out:
                raise ValueError
            out[key] = int(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad cluster spec {text!r}; expected k=10,min=2,skip=30") from None
    return out


def _rect(text: str) -> tuple[float, float, float, float]:
    try:
        x, y, w, h = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rectangle {text!r}; expected X,Y,W,H") from None
    return x, y, w, h


def _write_rows(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _gnuplot(csv_path: str | Path, title: str, xlabel: str, ylabel: str, series: list[tuple[int, int, str]]) -> None:
    """Plot script next to ``csv_path``; ``series`` holds (x column, y column, label), 1-based."""
    p = Path(csv_path)
    plots = ", ".join(f"'{p.name}' using {x}:{y} with linespoints title '{t}'" for x, y, t in series)
    p.with_suffix(".gp").write_text(
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"
        f"plot {plots}\n"
    )


# --- subcommands --------------------------------------------------------------


def cmd_gen(a: argparse.Namespace) -> int:
    if a.kind == "corner":
        kw = {}
        if a.rot is not None:
            kw["rotation_deg"] = a.rot
        if a.skew is not None:
            kw["skew_deg"] = a.skew
        if a.noise is not None:
            kw["noise_std"] = a.noise
        synthgen.build_corner_dataset(a.count, a.seed, a.out, size=a.size or 41, **kw)
        return 0
    d = synthgen.BoardDistribution()
    fix = {}
    if a.size:
        fix.update(width=a.size, height=a.size)
    for name, val in (("rows", a.rows), ("cols", a.cols)):
        if val is not None:
            fix[name] = (val, val)
    for name, val in (("square_px", a.square), ("noise_std", a.noise), ("rotation_deg", a.rot), ("skew_deg", a.skew)):
        if val is not None:
            fix[name] = (val, val)
    if a.invert:
        fix["invert_prob"] = 1.0
    lens = (a.k1, a.k2, a.p1, a.p2)
    if any(v is not None for v in lens):
        fix["fixed_distortion"] = tuple(float(v or 0.0) for v in lens)
    if a.occlude is not None:
        fix["fixed_occlusion"] = a.occlude
    synthgen.build_dataset(a.count, dataclasses.replace(d, **fix), a.seed, a.out)
    return 0


def cmd_train(a: argparse.Namespace) -> int:
    data = synthgen.load_dataset(a.data)
    if not data:
        raise RuntimeError(f"no images listed in {a.data}/manifest.csv")
    cfg = xnet.TrainConfig(
        epochs=a.epochs,
        batch_size=a.batch,
        momentum=a.momentum,
        lr0=a.lr,
        decay_rate=a.decay,
        lambda_reg=a.lam,
        seed=a.seed,
    )
    model, _ = xnet.train(data, a.config, cfg)
    xnet.save_model(a.out, model)
    return 0


def _detect_config(a: argparse.Namespace) -> lab.DetectConfig:
    cl = a.cluster
    return lab.DetectConfig(
        scheme=a.threshold,
        nms_halfwidth=a.nms_halfwidth,
        cluster_k=cl["k"],
        cluster_min=cl["min"],
        cluster_skip=cl["skip"],
        refine=a.refine,
        seed=a.seed,
    )


def cmd_detect(a: argparse.Namespace) -> int:
    model = xnet.load_model(a.model)
    image = load_gray(a.image)
    write_candidates(a.out, lab.detect(model, image, _detect_config(a)))
    return 0


def cmd_recover(a: argparse.Namespace) -> int:
    model = xnet.load_model(a.model)
    image = load_gray(a.image)
    cands = lab.detect(model, image, _detect_config(a))
    pts = np.array([c.xy for c in cands]).reshape(-1, 2)
    grids = boardgrow.recover_boards(pts, image, np.array([c.score for c in cands]))
    if not grids:
        log.warning("no checkerboard recovered")
    out = Path(a.out)
    for n, g in enumerate(grids or [None]):
        path = out if n == 0 else out.with_name(f"{out.stem}_{n}{out.suffix}")
        rows = []
        if g is not None:
            for i in range(g.rows):
                for j in range(g.cols):
                    k = g.cells[i, j]
                    if k == boardgrow.ABSENT:
                        rows.append([i, j, "", "", 0])
                    else:
                        x, y = g.points[k]
                        rows.append([i, j, f"{x:.6f}", f"{y:.6f}", 1])
        _write_rows(path, ["row", "col", "x", "y", "present"], rows)
    return 0


def cmd_sweep(a: argparse.Namespace) -> int:
    model = xnet.load_model(a.model)
    cfg = lab.DetectConfig(scheme=a.threshold, refine="none", seed=a.seed)
    res = lab.sweep(model, a.axis, a.noise, a.trials, a.seed, a.values, cfg=cfg)
    _write_rows(a.out, [a.axis, "noise", "mean_error_px"], ([f"{x:g}", f"{n:g}", f"{e:.6f}"] for x, n, e in res.rows()))
    if a.gnuplot_script:
        _gnuplot(a.out, f"{a.axis} x noise", a.axis, "mean error (px)", [(1, 3, "mean error")])
    return 0


def cmd_bench(a: argparse.Namespace) -> int:
    response_fn = None
    if a.model:
        model = xnet.load_model(a.model)
        response_fn = lambda img: xnet.forward(model, img)  # noqa: E731
    res = lab.bench_refiners(a.factor, a.trials, a.methods, a.seed, a.values, response_fn)
    rows = []
    for vi, v in enumerate(res.values):
        for m in res.methods:
            rows.append([f"{v:g}", m, f"{res.mean_error[m][vi]:.6f}", res.valid_count[m][vi]])
    _write_rows(a.out, [a.factor, "method", "mean_error_px", "valid"], rows)
    if a.gnuplot_script:
        _gnuplot(a.out, f"refiners vs {a.factor}", a.factor, "mean error (px)", [(1, 3, "mean error")])
    return 0


def cmd_eval(a: argparse.Namespace) -> int:
    rep = lab.match_detections(read_points(a.pred), read_points(a.truth), a.radius)
    _write_rows(
        a.out,
        ["tp", "fp", "fn", "precision", "recall", "mean_error_px"],
        [[rep.true_positives, rep.false_positives, rep.false_negatives,
          f"{rep.precision:.6f}", f"{rep.recall:.6f}", f"{rep.mean_localization_error_px:.6f}"]],
    )  # fmt: skip
    return 0


# --- parser -------------------------------------------------------------------


def _add_detect_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=_scheme, default=ThresholdScheme("adaptive"))
    p.add_argument("--nms-halfwidth", type=int, default=NMS_HALFWIDTH)
    p.add_argument("--cluster", type=_cluster, default=_cluster("k=10"))
    p.add_argument("--refine", choices=subpix.REFINERS, default="mixed")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap = argparse.ArgumentParser(prog="xcorner", description="X-corner detection and checkerboard recovery")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="render a synthetic dataset", parents=[common])
    p.add_argument("--kind", choices=("corner", "board"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, help="image side in px (corner default 41, board default 64)")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--square", type=float)
    p.add_argument("--noise", type=float, help="noise std on the 0-255 scale")
    p.add_argument("--rot", type=float)
    p.add_argument("--skew", type=float)
    p.add_argument("--invert", action="store_true")
    p.add_argument("--occlude", type=_rect, help="X,Y,W,H mid-gray rectangle")
    for k in ("k1", "k2", "p1", "p2"):
        p.add_argument(f"--{k}", type=float)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a detector", parents=[common])
    p.add_argument("--config", choices=xnet.CONFIG_IDS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--decay", type=float, default=0.01)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("detect", help="detect corners in one image", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_detect_flags(p)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("recover", help="detect corners and recover checkerboard grids", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="grid CSV; further boards go to <stem>_N<suffix>")
    _add_detect_flags(p)
    p.set_defaults(fn=cmd_recover)

    p = sub.add_parser("sweep", help="localization error over rotation|skew x noise", parents=[common])
    p.add_argument("--axis", choices=sorted(lab.AXES), required=True)
    p.add_argument("--noise", type=_range, default=_range("0:100:10"))
    p.add_argument("--values", type=_range, help="axis values (default 0..max step 1)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=_scheme, default=ThresholdScheme("adaptive"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--gnuplot-script", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench-refine", help="subpixel refiner benchmark", parents=[common])
    p.add_argument("--factor", choices=sorted(lab.FACTOR_VALUES), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m], default=list(lab.BENCH_METHODS))
    p.add_argument("--values", type=_range, help="factor values (default: the built-in grid)")
    p.add_argument("--model", help="detector for the response map (default: smoothed saddle response)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--gnuplot-script", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("eval", help="precision/recall of predicted points against truth", parents=[common])
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (OSError, RuntimeError, GridError, synthgen.SceneError, xnet.ModelFormatError) as e:
        print(f"xcorner {a.cmd}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # argument values argparse cannot validate (method names, ranges)
        print(f"xcorner {a.cmd}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
