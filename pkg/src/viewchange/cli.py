"""Command-line pipeline: flow, synth, train, predict, evaluate, visualize.

Exit codes: 0 success, 1 usage or I/O failure, 2 no epipolar model found,
3 training divergence. All writers are atomic, so failed commands leave no
partial outputs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .config import PipelineConfig, load_config
from .containers import ChangeMask, FlowField, Image, ImagePair
from .data import (
    ScenePair,
    SynthConfig,
    extract_patches,
    load_pcd,
    make_folds,
    read_fold_plan,
    synth_generate,
    write_fold_plan,
    write_scene,
)
from .densify import densify
from .epipolar import CameraModel, ransac_essential
from .errors import (
    FormatError,
    IngestionError,
    NoModelError,
    ShapeError,
    TrainingDivergedError,
)
from .matching import match_images, write_matches
from .metrics import (
    binarize,
    evaluate_fold,
    mask_to_binary,
    overlay_image,
    report_to_csv,
)
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.model import NetworkConfig, init_params, sliding_window_predict
from .net.train import TrainConfig, train, write_loss_log
from .tensor_ops import concat_inputs, flow_to_color, normalize_flow, normalize_image


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _camera_from_config(cfg: PipelineConfig, width: int, height: int) -> CameraModel:
    cam = cfg.camera
    if cam.kind == "pinhole":
        focal = cam.fx if cam.fx > 0 else 1.2 * max(width, height)
        fy = cam.fy if cam.fy > 0 else focal
        cx = cam.cx if cam.cx >= 0 else None
        cy = cam.cy if cam.cy >= 0 else None
        return CameraModel.pinhole(width, height, fx=focal, fy=fy, cx=cx, cy=cy)
    if cam.kind == "equirectangular":
        return CameraModel.equirectangular(
            width, height, span_h=cam.span_h,
            span_v=cam.span_v if cam.span_v > 0 else None,
        )
    raise ValueError(f"unknown camera kind {cam.kind!r}")


def _limit_threads(threads: int | None):
    if threads is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def cmd_flow(args) -> int:
    cfg = _config(args)
    t0 = fileio.read_png(args.t0)
    t1 = fileio.read_png(args.t1)
    if (t0.width, t0.height) != (t1.width, t1.height):
        print(
            f"error: image dims differ: {t0.width}x{t0.height} vs {t1.width}x{t1.height}",
            file=sys.stderr,
        )
        return 1
    pair = ImagePair(t0, t1)
    matches = match_images(t0, t1, cfg.matcher)
    cam = _camera_from_config(cfg, t0.width, t0.height)
    try:
        result = ransac_essential(matches, cam, cfg.ransac)
    except NoModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    flagged = matches.with_inliers(result.inlier_flags)
    flow = densify(pair, flagged, cfg.densify)
    fileio.write_flo(flow, args.out)
    if args.matches:
        write_matches(flagged, args.matches)
    if args.vis:
        fileio.write_png(flow_to_color(flow), args.vis)
    print(
        f"flow: {len(matches)} matches, {result.best_inlier_count} inliers "
        f"({result.iterations_run} iterations) -> {args.out}"
    )
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out)
    for index in range(args.pairs if args.pairs is not None else cfg.synth.pairs):
        scfg = SynthConfig(
            seed=cfg.seed + index,
            width=cfg.synth.width,
            height=cfg.synth.height,
            shift_mag=cfg.synth.shift_mag,
            change_fraction=cfg.synth.change_fraction,
            jitter=cfg.synth.jitter,
        )
        write_scene(synth_generate(scfg), out_dir)
    (out_dir / "SYNTH").mkdir(parents=True, exist_ok=True)
    print(f"synth: wrote {args.pairs if args.pairs is not None else cfg.synth.pairs} pairs under {out_dir}")
    return 0


def _dataset_from_pairs(pairs: list[ScenePair], cfg: PipelineConfig):
    use_flow = cfg.in_channels == 8
    samples = []
    for pair in pairs:
        h, w = pair.image_t0.height, pair.image_t0.width
        if min(h, w) >= 224:
            patches = extract_patches(pair, use_flow=use_flow, d_max=cfg.d_max)
        else:
            patches = extract_patches(
                pair, patch=min(h, w), stride=min(h, w), out=128,
                use_flow=use_flow, d_max=cfg.d_max,
            )
        samples.extend(patches)
    return [(s.x.data[0].astype(np.float32), s.target.values) for s in samples]


def cmd_train(args) -> int:
    cfg = _config(args)
    use_flow = cfg.in_channels == 8
    try:
        pairs = load_pcd(args.dataset, with_flow=use_flow)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    plan_path = Path(args.dataset) / "folds.csv"
    if plan_path.is_file():
        plan = read_fold_plan(plan_path)
    else:
        plan = make_folds(pairs, k=args.folds, seed=cfg.seed)
        write_fold_plan(plan, plan_path)
    if not 0 <= args.fold < plan.k:
        print(f"error: fold index {args.fold} outside 0..{plan.k - 1}", file=sys.stderr)
        return 1
    train_ids = set(plan.train_ids(args.fold))
    train_pairs = [p for p in pairs if p.id in train_ids]
    dataset = _dataset_from_pairs(train_pairs, cfg)

    net_cfg = NetworkConfig(in_channels=cfg.in_channels)
    params = init_params(net_cfg, seed=cfg.seed)
    tcfg = TrainConfig(
        lr=cfg.train.lr, beta1=cfg.train.beta1, beta2=cfg.train.beta2,
        batch_size=cfg.train.batch_size, iterations=cfg.train.iterations,
        epochs=cfg.train.epochs or None, seed=cfg.seed,
        deterministic=cfg.train.deterministic,
    )
    try:
        params, log = train(net_cfg, params, tcfg, dataset)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    save_checkpoint(args.out, net_cfg, params, extras={"d_max": cfg.d_max})
    if args.log:
        write_loss_log(log, args.log)
    print(f"train: fold {args.fold}, {len(dataset)} patches, final loss {log[-1].loss:.4f}")
    return 0


def cmd_predict(args) -> int:
    try:
        net_cfg, params, extras = load_checkpoint(args.checkpoint)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg = _config(args)
    t0 = fileio.read_png(args.t0)
    t1 = fileio.read_png(args.t1)
    needs_flow = net_cfg.in_channels == 8
    if needs_flow and not args.flow:
        print("error: 8-channel checkpoint needs --flow", file=sys.stderr)
        return 1
    if not needs_flow and args.flow:
        print("error: 6-channel checkpoint takes no --flow", file=sys.stderr)
        return 1
    try:
        ImagePair(t0, t1)
        flow = fileio.read_flo(args.flow) if needs_flow else None
        if flow is not None and (flow.width, flow.height) != (t0.width, t0.height):
            raise ShapeError("flow dims do not match the images")
    except (ShapeError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    d_max = float(extras.get("d_max", cfg.d_max))
    channels = concat_inputs(
        normalize_image(t0), normalize_image(t1),
        normalize_flow(flow, d_max) if flow is not None else None,
    ).data[0].astype(np.float32)
    pred = sliding_window_predict(net_cfg, params, channels)
    prob = pred / net_cfg.s_max
    quantized = np.floor(prob * 255.0 + 0.5).astype(np.uint8)  # round half up
    fileio.write_png(Image(quantized), args.out)
    if args.overlay and args.gt:
        gt = mask_to_binary(fileio.read_mask_png(args.gt))
        fileio.write_png(overlay_image(binarize(prob, cfg.metrics.threshold), gt), args.overlay)
    print(f"predict: wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred_files = sorted(pred_dir.glob("*.png"))
    if not pred_files:
        print(f"error: no predictions in {pred_dir}", file=sys.stderr)
        return 1
    preds, gts, ids = [], [], []
    for pf in pred_files:
        gf = gt_dir / pf.name
        if not gf.is_file():
            print(f"error: missing ground truth for {pf.name}", file=sys.stderr)
            return 1
        prob = fileio.read_png(pf).data[:, :, 0].astype(np.float64) / 255.0
        preds.append(prob)
        gts.append(mask_to_binary(fileio.read_mask_png(gf)))
        ids.append(pf.stem)
    report = evaluate_fold(preds, gts, tau=cfg.metrics.threshold, pair_ids=ids)
    report_to_csv(report, args.out)
    if args.overlays:
        overlay_dir = Path(args.overlays)
        overlay_dir.mkdir(parents=True, exist_ok=True)
        for pid, prob, gt in zip(ids, preds, gts):
            fileio.write_png(
                overlay_image(binarize(prob, cfg.metrics.threshold), gt),
                overlay_dir / f"{pid}.png",
            )
    print(
        f"evaluate: {len(ids)} pairs, mean F1 {report.mean_f1:.4f} "
        f"(std {report.std_f1:.4f}), mean mIOU {report.mean_miou:.4f}"
    )
    return 0


def cmd_visualize(args) -> int:
    wrote = []
    if args.flow:
        flow = fileio.read_flo(args.flow)
        fileio.write_png(flow_to_color(flow, args.max_mag), args.out)
        wrote.append(args.out)
    elif args.pred and args.gt:
        prob = fileio.read_png(args.pred).data[:, :, 0].astype(np.float64) / 255.0
        gt = mask_to_binary(fileio.read_mask_png(args.gt))
        fileio.write_png(overlay_image(prob >= 0.5, gt), args.out)
        wrote.append(args.out)
    else:
        print("error: give --flow, or --pred with --gt", file=sys.stderr)
        return 1
    print(f"visualize: wrote {', '.join(wrote)}")
    return 0


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="viewchange", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, help="cap BLAS threads (1 = fully sequential)")

    p = sub.add_parser("flow", help="estimate dense flow for an image pair")
    p.add_argument("t0"); p.add_argument("t1")
    p.add_argument("--out", required=True, help="output .flo path")
    p.add_argument("--matches", help="write inlier-annotated matches here")
    p.add_argument("--vis", help="write a flow color rendering here")
    common(p); p.set_defaults(func=cmd_flow)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, help="number of pairs (default from config)")
    common(p); p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on one cross-validation fold")
    p.add_argument("dataset", help="dataset root directory")
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--folds", type=int, default=5, help="fold count when creating a plan")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="loss log CSV path")
    common(p); p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a change-probability map")
    p.add_argument("checkpoint"); p.add_argument("t0"); p.add_argument("t1")
    p.add_argument("--flow", help=".flo input (8-channel checkpoints)")
    p.add_argument("--out", required=True, help="probability PNG path")
    p.add_argument("--gt", help="ground-truth mask for --overlay")
    p.add_argument("--overlay", help="write a TP/FP/FN overlay here")
    common(p); p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score prediction PNGs against masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--overlays", help="directory for per-pair overlays")
    common(p); p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="render flow or prediction overlays")
    p.add_argument("--flow"); p.add_argument("--pred"); p.add_argument("--gt")
    p.add_argument("--max-mag", type=float, help="flow color saturation scale")
    p.add_argument("--out", required=True)
    common(p); p.set_defaults(func=cmd_visualize)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = None
    try:
        limiter = _limit_threads(getattr(args, "threads", None))
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, IngestionError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    raise SystemExit(main())
