"""Command-line surface: dataset generation, oracle runs, training, eval.

Subcommands: gen | gt | train | infer | eval | gradcheck | ablate.
Exit codes: 0 success, 1 check/run failure, 2 usage error (argparse default).
Every run serializes its effective configuration into the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import image_io
from .autodiff import NumericError, set_corrupt_op
from .checks import CHECK_NAMES, run_suite
from .config import RunConfig
from .estimator import DualPixelStereoRegressor
from .evaluation import evaluate_predictions, write_affine_csv, write_metrics_csv
from .plane_sweep import BilateralParams, CameraView, ground_truth_from_views, inverse_depth_planes
from .scenes import SceneConfig, load_dataset, make_dataset

__all__ = ["main"]


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "steps", "learning_rate", "fusion_mode", "refine_mode", "gamma",
                "n_train", "n_test", "planes", "fusion_channels"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            overrides[key] = value
    return RunConfig.load(getattr(args, "config", None), overrides)


def _estimator_from_config(config: RunConfig) -> DualPixelStereoRegressor:
    return DualPixelStereoRegressor(
        image_height=config.image_height,
        image_width=config.image_width,
        dp_ratio=config.dp_ratio,
        feature_channels=config.feature_channels,
        dp_channels=config.dp_channels,
        fusion_channels=config.fusion_channels,
        trunk_channels=config.trunk_channels,
        guide_channels=config.guide_channels,
        fusion_mode=config.fusion_mode,
        refine_mode=config.refine_mode,
        validity_channel=config.validity_channel,
        gamma=config.gamma,
        temperature=config.temperature,
        leaky_slope=config.leaky_slope,
        huber_delta=config.huber_delta,
        lambda_dp=config.lambda_dp,
        lambda_dc=config.lambda_dc,
        lambda_unref=config.lambda_unref,
        lambda_ref=config.lambda_ref,
        learning_rate=config.learning_rate,
        n_steps=config.steps,
        checkpoint_every=config.checkpoint_every,
        seed=config.seed,
    )


def _scene_config(config: RunConfig) -> SceneConfig:
    return SceneConfig(
        seed=config.seed,
        height=config.image_height,
        width=config.image_width,
        dp_ratio=config.dp_ratio,
        baseline=config.baseline,
        focal=config.focal,
        occluder_range=(config.occluder_min, config.occluder_max),
        textures=tuple(config.textures),
        warp_magnitude=config.warp_magnitude,
    )


def cmd_gen(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out)
    make_dataset(_scene_config(config), config.n_train, config.n_test, out)
    config.dump(out / "config.json")
    print(f"wrote {config.n_train} train / {config.n_test} test samples to {out}")
    return 0


def _load_views(scene_dir: Path):
    meta = json.loads((scene_dir / "cameras.json").read_text())
    views = []
    for entry in meta["views"]:
        views.append(CameraView(
            image=image_io.read_png(scene_dir / entry["image"]),
            intrinsics=np.asarray(entry["intrinsics"]),
            rotation=np.asarray(entry["rotation"]),
            translation=np.asarray(entry["translation"]),
        ))
    return views, int(meta.get("reference", 0)), int(meta.get("stereo_partner", 1))


def cmd_gt(args) -> int:
    config = _config_from_args(args)
    scene_dir = Path(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    views, ref_index, partner_index = _load_views(scene_dir)
    planes = inverse_depth_planes(config.z_min, config.z_max, config.planes)
    result = ground_truth_from_views(views, planes, BilateralParams(),
                                     ref_index=ref_index, partner_index=partner_index)
    image_io.write_pfm(out / "depth.pfm", result["depth"])
    image_io.write_pfm(out / "disparity.pfm", result["disparity"])
    image_io.write_pfm(out / "confidence.pfm", result["confidence"])
    image_io.write_pfm(out / "c_occ.pfm", result["occlusion"])
    config.dump(out / "config.json")
    lo, hi = image_io.write_disparity_png(out / "disparity.png", result["disparity"])
    print(f"swept {len(views)} views over {config.planes} planes; disparity range "
          f"[{lo:.3f}, {hi:.3f}] px -> {out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.json")
    samples = load_dataset(args.data, "train")
    estimator = _estimator_from_config(config)
    try:
        estimator.fit(samples, out_dir=out, resume=args.resume)
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    final = estimator.history_[-1][1] if estimator.history_ else float("nan")
    print(f"trained {config.steps} steps; final loss {final:.6f}; "
          f"checkpoint at {out / 'checkpoint.du2'}")
    return 0


def cmd_infer(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.json")
    estimator = _estimator_from_config(config).load(args.checkpoint)
    samples = load_dataset(args.data, args.split)
    predictions = estimator.predict(samples)
    for i, pred in enumerate(predictions):
        image_io.write_pfm(out / f"disparity_{i:05d}.pfm", pred)
        lo, hi = image_io.write_disparity_png(out / f"disparity_{i:05d}.png", pred)
        print(f"sample {i:05d}: disparity range [{lo:.3f}, {hi:.3f}] px")
    return 0


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.json")
    estimator = _estimator_from_config(config).load(args.checkpoint)
    samples = load_dataset(args.data, args.split)
    results = estimator.predict_full(samples)
    predictions = [r["d_ref"].values.data for r in results]
    rows = evaluate_predictions(predictions, samples)
    write_metrics_csv(out / "metrics.csv", rows)
    affine_entries = [
        (f"{i:05d}",) + (r["affine"].as_floats() if r["affine"] is not None
                         else (float("nan"), float("nan")))
        for i, r in enumerate(results)
    ]
    write_affine_csv(out / "affine_fit.csv", affine_entries)
    if args.affine_fit:
        write_metrics_csv(out / "metrics_affine_fit.csv",
                          evaluate_predictions(predictions, samples, affine_fit=True))
    agg = rows[-1]
    print(f"aggregate: mae {agg['mae']:.4f} rmse {agg['rmse']:.4f} "
          f"occ_mae {agg['occ_mae']:.4f} -> {out / 'metrics.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.corrupt_op:
        set_corrupt_op(args.corrupt_op)
    try:
        results = run_suite(args.only or None, seed=args.seed or 0)
    finally:
        set_corrupt_op(None)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text("\n".join(r.line() for r in results) + "\n")
    if failed:
        print(f"FAILED: {', '.join(r.name for r in failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def cmd_ablate(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_dataset(args.data, "train")
    test = load_dataset(args.data, "test")
    summary = []
    fusion_modes = args.fusion_modes or [config.fusion_mode]
    refine_modes = args.refine_modes or [config.refine_mode]
    for fusion_mode in fusion_modes:
        for refine_mode in refine_modes:
            tag = f"{fusion_mode}__{refine_mode}"
            run_config = RunConfig.load(None, {**config.__dict__,
                                               "fusion_mode": fusion_mode,
                                               "refine_mode": refine_mode})
            run_dir = out / tag
            run_dir.mkdir(parents=True, exist_ok=True)
            run_config.dump(run_dir / "config.json")
            estimator = _estimator_from_config(run_config)
            estimator.fit(samples, out_dir=run_dir)
            rows = evaluate_predictions(estimator.predict(test), test)
            write_metrics_csv(run_dir / "metrics.csv", rows)
            agg = rows[-1]
            summary.append((tag, agg["mae"], agg["occ_mae"]))
            print(f"{tag}: mae {agg['mae']:.4f} occ_mae {agg['occ_mae']:.4f}")
    with open(out / "ablation_summary.csv", "w") as f:
        f.write("run,mae,occ_mae\n")
        for tag, mae, occ in summary:
            f.write(f"{tag},{mae:.6f},{occ:.6f}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="du2",
        description="Desk-scale dual-camera + dual-pixel depth fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=str, default=None, help="JSON run config")
        p.add_argument("--seed", type=int, default=None)
        if out_required:
            p.add_argument("--out", type=str, required=True, help="output directory")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p_gen)
    p_gen.add_argument("--n-train", type=int, default=None, dest="n_train")
    p_gen.add_argument("--n-test", type=int, default=None, dest="n_test")
    p_gen.set_defaults(func=cmd_gen)

    p_gt = sub.add_parser("gt", help="plane-sweep ground truth for a scene directory")
    common(p_gt)
    p_gt.add_argument("--scene", type=str, required=True,
                      help="directory with view images + cameras.json")
    p_gt.add_argument("--planes", type=int, default=None)
    p_gt.set_defaults(func=cmd_gt)

    p_train = sub.add_parser("train", help="train the pipeline")
    common(p_train)
    p_train.add_argument("--data", type=str, required=True)
    p_train.add_argument("--steps", type=int, default=None)
    p_train.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p_train.add_argument("--fusion-mode", type=str, default=None, dest="fusion_mode",
                         choices=["dc_only", "dp_dc_2d", "dp_dc_cost", "dp_dc_conf"])
    p_train.add_argument("--refine-mode", type=str, default=None, dest="refine_mode",
                         choices=["rgb_only", "dp_only", "dp_image_warp", "rgb_plus_dp"])
    p_train.add_argument("--gamma", type=float, default=None)
    p_train.add_argument("--fusion-channels", type=int, default=None, dest="fusion_channels")
    p_train.add_argument("--resume", type=str, default=None)
    p_train.set_defaults(func=cmd_train)

    p_infer = sub.add_parser("infer", help="run inference, write PFM + PNG maps")
    common(p_infer)
    p_infer.add_argument("--checkpoint", type=str, required=True)
    p_infer.add_argument("--data", type=str, required=True)
    p_infer.add_argument("--split", type=str, default="test")
    p_infer.add_argument("--fusion-mode", type=str, default=None, dest="fusion_mode")
    p_infer.add_argument("--refine-mode", type=str, default=None, dest="refine_mode")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint, write metrics CSV")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=str, required=True)
    p_eval.add_argument("--data", type=str, required=True)
    p_eval.add_argument("--split", type=str, default="test")
    p_eval.add_argument("--affine-fit", action="store_true",
                        help="also score with the best-fit affine correction")
    p_eval.add_argument("--fusion-mode", type=str, default=None, dest="fusion_mode")
    p_eval.add_argument("--refine-mode", type=str, default=None, dest="refine_mode")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--out", type=str, default=None)
    p_grad.add_argument("--only", nargs="*", choices=list(CHECK_NAMES), default=None)
    p_grad.add_argument("--corrupt-op", type=str, default=None, dest="corrupt_op",
                        help="harness self-test: corrupt one op's analytic gradient")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_ablate = sub.add_parser("ablate", help="train + eval a grid of ablation modes")
    common(p_ablate)
    p_ablate.add_argument("--data", type=str, required=True)
    p_ablate.add_argument("--steps", type=int, default=None)
    p_ablate.add_argument("--fusion-modes", nargs="*", default=None, dest="fusion_modes")
    p_ablate.add_argument("--refine-modes", nargs="*", default=None, dest="refine_modes")
    p_ablate.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, NumericError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
