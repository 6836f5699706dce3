"""Pilot run: short training + held-out interactive evaluation."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from ivseg.data import ToyVideoSpec, generate_toy_video
from ivseg.evaluation import EvalConfig, evaluate_interactive, mean_jaccard_video
from ivseg.nets import load_checkpoint
from ivseg.train import TrainConfig, train


def main():
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 400
    lr = float(sys.argv[2]) if len(sys.argv) > 2 else 3e-4
    out = sys.argv[3] if len(sys.argv) > 3 else "/tmp/pilot"
    cfg = TrainConfig.from_yaml("configs/toy.yaml")
    cfg.iterations = iters
    cfg.lr = lr
    t0 = time.time()
    final = train(cfg, out, progress=True)
    train_time = time.time() - t0
    print(f"TRAIN DONE {iters} iters in {train_time/60:.1f} min")

    import csv
    with open(f"{out}/loss_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    losses = [float(r["loss"]) for r in rows]
    k = max(1, len(losses) // 10)
    first, last = np.mean(losses[:k]), np.mean(losses[-k:])
    print(f"LOSS first10% {first:.4f} last10% {last:.4f} ratio {last/first:.3f}")

    model, _ = load_checkpoint(final)
    config = EvalConfig(max_interactions=3)
    j1s, j3s = [], []
    t0 = time.time()
    for seed in range(100, 110):
        frames, gts = generate_toy_video(cfg.toy, seed)
        curve = evaluate_interactive(model, frames, gts, config, seed=seed)
        js = [p.j for p in curve]
        j1 = js[0] if js else 0.0
        j3 = js[-1] if js else 0.0
        j1s.append(j1)
        j3s.append(j3)
        print(f"  video {seed}: " + " ".join(f"J{i+1}={j:.3f}" for i, j in enumerate(js)))
    print(f"EVAL mean J1={np.mean(j1s):.3f} J3={np.mean(j3s):.3f} gain={np.mean(j3s)-np.mean(j1s):.3f} time {time.time()-t0:.0f}s")


if __name__ == "__main__":
    main()
