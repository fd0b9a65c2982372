"""Desk-scale detector training and held-out evaluation.

Defaults reproduce the acceptance setting (config A, 2000 boards, 5 epochs).
Scale up with flags, e.g. the deeper config F on a larger set:

    python scripts/train_desk.py --config F --train-images 20000 --epochs 20 --out f.rcdn
"""

import argparse
import logging
import time

from xcorner import xnet
from xcorner.candfilter import ThresholdScheme
from xcorner.lab import DetectConfig, evaluate_detector
from xcorner.synthgen import BoardDistribution, sample_boards


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", choices=xnet.CONFIG_IDS, default="A")
    ap.add_argument("--train-images", type=int, default=2000)
    ap.add_argument("--held-out", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--batch", type=int, default=20)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--train-seed", type=int, default=1)
    ap.add_argument("--eval-seed", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0, help="initialization and shuffling")
    ap.add_argument("--out", default="desk.rcdn")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    dist = BoardDistribution()
    data = [(img, gt.mask) for _, img, gt in sample_boards(a.train_images, dist, a.train_seed)]
    t0 = time.time()
    cfg = xnet.TrainConfig(epochs=a.epochs, batch_size=a.batch, lr0=a.lr, seed=a.seed)
    model, history = xnet.train(data, a.config, cfg)
    print(f"trained config {a.config} ({model.n_params} params) in {time.time() - t0:.0f}s")
    print("epoch losses:", " ".join(f"{h:.4f}" for h in history))
    xnet.save_model(a.out, model)

    held = [(img, gt.visible) for _, img, gt in sample_boards(a.held_out, dist, a.eval_seed)]
    for scheme in ("adaptive", "fixed:0.5", "std:1.0"):
        r = evaluate_detector(model, held, DetectConfig(scheme=ThresholdScheme.parse(scheme)))
        print(f"{scheme:10s} P={r.precision:.4f} R={r.recall:.4f} err={r.mean_localization_error_px:.3f}px")


if __name__ == "__main__":
    main()
