"""Command-line entry points: train, evaluate, serve, and toy-data helpers."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path


def _cmd_train(args) -> int:
    from .train import TrainConfig, train

    cfg = TrainConfig.from_yaml(args.config) if args.config else TrainConfig()
    final = train(cfg, args.out, seed=args.seed, progress=True)
    print(f"final checkpoint: {final}")
    return 0


def _load_video_dir(video_dir: Path):
    from .masks import decode_label_png, frame_from_png

    frame_files = sorted((video_dir / "frames").glob("*.png"))
    mask_files = sorted((video_dir / "masks").glob("*.png"))
    if not frame_files or len(frame_files) != len(mask_files):
        raise SystemExit(f"{video_dir}: need matching frames/ and masks/ PNG sequences")
    frames = [frame_from_png(p.read_bytes(), i) for i, p in enumerate(frame_files)]
    gts = [decode_label_png(p.read_bytes()) for p in mask_files]
    num_objects = max(g.num_objects for g in gts)
    gts = [type(g)(g.labels, num_objects) for g in gts]
    return frames, gts


def _cmd_evaluate(args) -> int:
    import yaml

    from .evaluation import EvalConfig, evaluate_videos, write_report
    from .nets import load_checkpoint

    model, meta = load_checkpoint(args.ckpt)
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
        config = EvalConfig(**raw)
    else:
        config = EvalConfig()
    videos_root = Path(args.videos)
    videos = {
        child.name: _load_video_dir(child)
        for child in sorted(videos_root.iterdir())
        if (child / "frames").is_dir()
    }
    if not videos:
        raise SystemExit(f"no video directories under {videos_root}")
    results = evaluate_videos(model, videos, config, seed=args.seed)
    write_report(args.report, results, config)
    from .evaluation import auc, j_at

    for vid, (points, _) in results.items():
        if points:
            print(
                f"{vid}: AUC {auc(points, config.budget_s):.3f} "
                f"J@{config.budget_s:.0f} {j_at(points, config.budget_s):.3f} "
                f"({len(points)} interactions)"
            )
    print(f"report written to {args.report}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app_from_checkpoint

    port = int(os.environ.get("IVSEG_PORT", args.port))
    data_dir = os.environ.get("IVSEG_DATA_DIR", args.data_dir)
    app = app_from_checkpoint(
        args.ckpt, data_dir, async_rounds=args.async_rounds, ui_dir=args.ui
    )
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def _cmd_make_toys(args) -> int:
    from .data import ToyVideoSpec, generate_toy_video
    from .masks import encode_label_png, frame_to_png

    out = Path(args.out)
    for i in range(args.count):
        seed = args.seed + i
        spec = ToyVideoSpec(
            num_frames=args.frames, h=args.size, w=args.size, num_objects=args.objects
        )
        frames, gts = generate_toy_video(spec, seed)
        video_dir = out / f"toy_{seed:04d}"
        (video_dir / "frames").mkdir(parents=True, exist_ok=True)
        (video_dir / "masks").mkdir(parents=True, exist_ok=True)
        for t, (frame, gt) in enumerate(zip(frames, gts)):
            (video_dir / "frames" / f"{t:05d}.png").write_bytes(frame_to_png(frame))
            (video_dir / "masks" / f"{t:05d}.png").write_bytes(encode_label_png(gt))
        print(f"wrote {video_dir}")
    return 0


def _cmd_init_ckpt(args) -> int:
    from .nets import ModelConfig, init_params, save_checkpoint

    cfg = ModelConfig.reduced(roi_size=args.roi_size) if args.variant == "reduced" else ModelConfig.paper()
    model = init_params(cfg, args.seed)
    save_checkpoint(model, args.out, 0)
    print(f"wrote random-init checkpoint {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the multi-round training loop")
    p.add_argument("--config", help="YAML training config (defaults otherwise)")
    p.add_argument("--out", required=True, help="checkpoint/loss-curve output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="robot-agent evaluation over a video directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--videos", required=True, help="directory of <video>/frames + <video>/masks")
    p.add_argument("--config", help="YAML EvalConfig")
    p.add_argument("--report", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--async-rounds", action="store_true")
    p.add_argument("--ui", help="serve a built frontend directory at /ui")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("make-toys", help="materialize toy videos as frames/masks PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=100)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--objects", type=int, default=1)
    p.set_defaults(func=_cmd_make_toys)

    p = sub.add_parser("init-ckpt", help="write a random-init checkpoint (for demos/tests)")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=["reduced", "paper"], default="reduced")
    p.add_argument("--roi-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_init_ckpt)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
