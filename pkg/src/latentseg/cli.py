"""Command-line entry point: gen / train / infer / eval / ablate.

Every run writes its fully resolved configuration (including seeds) into the
output directory, so any result can be reproduced from the run directory
alone. Config files use `key = value` lines (JSON-typed values, # comments);
`--set key=value` overrides individual entries.
"""

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import metrics as metrics_mod
from . import sampling as sampling_mod
from .codec import CodecConfig, CodecTrainConfig, load_codec, save_codec, train_codec
from .data import GenConfig, dataset_digest, generate_synthetic, load_dataset
from .sampling import SamplerConfig, benchmark_paradigms, sample, seed_for_image
from .schedule import build_schedule
from .training import (
    ONE_STEP,
    PARADIGMS,
    Sample,
    TrainConfig,
    save_train_checkpoint,
    train,
)
from .unet import UNetConfig, build_unet, load_unet

logger = logging.getLogger("latentseg")


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; values are JSON-typed with a string fallback."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(val)
    return out


def _coerce(val: str):
    lowered = val.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return json.loads(val)
    except (json.JSONDecodeError, ValueError):
        return val


def _apply_overrides(base: dict, pairs) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        base[key.strip()] = _coerce(val.strip())
    return base


def _filter_fields(cls, settings: dict) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in settings.items() if k in names}


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path("runs") / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_provenance(out: Path, command: str, args, resolved: dict):
    payload = {
        "command": command,
        "argv": sys.argv[1:],
        "resolved": resolved,
    }
    (out / "resolved_config.json").write_text(json.dumps(payload, indent=2, default=str))


def _load_settings(args) -> dict:
    settings = {}
    if getattr(args, "config", None):
        settings.update(parse_config_text(Path(args.config).read_text()))
    _apply_overrides(settings, getattr(args, "set", None))
    return settings


def cmd_gen(args) -> int:
    out = _out_dir(args, "gen")
    settings = _load_settings(args)
    gen_cfg = GenConfig(**_filter_fields(GenConfig, settings))
    manifest = generate_synthetic(args.n, args.res, args.seed, out, gen_cfg)
    digest = dataset_digest(out)
    _write_provenance(
        out, "gen",
        args,
        {"n": args.n, "res": args.res, "seed": args.seed,
         "gen_config": dataclasses.asdict(gen_cfg), "digest": digest},
    )
    print(f"generated {args.n} samples at {out} (digest {digest[:16]})")
    print(f"splits: " + ", ".join(f"{k}={len(v)}" for k, v in manifest.splits.items()))
    return 0


def _resolve_train_configs(args):
    settings = _load_settings(args)
    tc_kwargs = _filter_fields(TrainConfig, settings)
    for name in ("epochs", "seed", "paradigm", "batch_size", "learning_rate"):
        val = getattr(args, name, None)
        if val is not None:
            tc_kwargs[name] = val
    if args.no_edge:
        tc_kwargs["use_edge_task"] = False
    if args.no_cutmix:
        tc_kwargs["aug_cutmix"] = False
    train_cfg = TrainConfig(**tc_kwargs)

    uc_kwargs = _filter_fields(UNetConfig, settings)
    if args.no_dbia:
        uc_kwargs["use_dbia_mutual"] = False
    if args.dbia_geo:
        uc_kwargs["mutual_mode"] = "geo"
    if args.no_swci:
        uc_kwargs["use_swci"] = False
    if not train_cfg.use_edge_task:
        uc_kwargs["use_dbia_mutual"] = False
    if "channel_multipliers" in uc_kwargs:
        uc_kwargs["channel_multipliers"] = tuple(uc_kwargs["channel_multipliers"])
    unet_cfg = UNetConfig(**uc_kwargs)
    return train_cfg, unet_cfg, settings


def _prepare_codec(args, train_samples, val_samples, out: Path, seed: int, settings: dict):
    if args.codec:
        codec = load_codec(args.codec)
        logger.info("loaded codec from %s", args.codec)
        return codec, {"loaded_from": str(args.codec)}
    cc = CodecTrainConfig(**_filter_fields(CodecTrainConfig, settings))
    cc = dataclasses.replace(cc, seed=seed)
    if args.codec_epochs is not None:
        cc = dataclasses.replace(cc, epochs=args.codec_epochs)
    holdout = [s.mask for s in val_samples] if val_samples else None
    codec, log = train_codec(train_samples, cc, CodecConfig(), holdout_masks=holdout)
    save_codec(codec, out / "codec.pt")
    return codec, {"trained": True, "epochs": cc.epochs, "log_tail": log[-3:]}


def cmd_train(args) -> int:
    out = _out_dir(args, "train")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        dataset = load_dataset(args.data)
    except FileNotFoundError as exc:
        print(f"error: cannot load dataset at {args.data}: {exc}", file=sys.stderr)
        return 1
    train_samples = dataset.load_split("train")
    val_samples = dataset.load_split("val")
    if not train_samples:
        print("error: dataset has no train samples", file=sys.stderr)
        return 1

    train_cfg, unet_cfg, settings = _resolve_train_configs(args)
    schedule = build_schedule()
    codec, codec_info = _prepare_codec(args, train_samples, val_samples, out, train_cfg.seed, settings)

    resume_state = None
    model = build_unet(unet_cfg, seed=train_cfg.seed)
    if args.resume:
        prev_model, extra = load_unet(args.resume)
        model.load_state_dict(prev_model.state_dict())
        resume_state = {
            "model": prev_model.state_dict(),
            "optimizer": extra["optimizer"],
            "epoch": extra["epoch"],
            "global_step": extra.get("global_step", 0),
        }

    _write_provenance(
        out, "train", args,
        {
            "data": str(args.data),
            "train_config": dataclasses.asdict(train_cfg),
            "unet_config": dataclasses.asdict(unet_cfg),
            "schedule": {"kind": schedule.beta_schedule_kind, "T_train": schedule.T_train},
            "codec": codec_info,
            "resume": str(args.resume) if args.resume else None,
        },
    )

    model, history = train(
        train_samples, val_samples, model, codec, schedule, train_cfg,
        log_path=out / "train_log.jsonl", resume_state=resume_state,
    )
    save_train_checkpoint(model, history, train_cfg, out / "unet_last.pt")
    if history.get("best_state") is not None:
        save_train_checkpoint(model, history, train_cfg, out / "unet_best.pt", best=True)
    summary = {
        "wall_s": history["wall_s"],
        "final_loss": history["steps"][-1]["loss"] if history["steps"] else None,
        "best": history["best"],
        "val": history["val"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary.get("best") or {}, indent=2))
    print(f"checkpoints written to {out}")
    return 0


def _parse_steps(text: str):
    steps = [int(tok) for tok in text.split(",") if tok.strip()]
    if len(steps) == 1:
        return SamplerConfig(ONE_STEP, steps)
    kind = sampling_mod.TWO_STEP_FIXED if len(steps) == 2 else sampling_mod.N_STEP_DDPM
    return SamplerConfig(kind, steps)


def cmd_infer(args) -> int:
    out = _out_dir(args, "infer")
    if args.threads:
        torch.set_num_threads(args.threads)
    codec = load_codec(args.codec)
    model, _ = load_unet(args.checkpoint)
    model.trained = True
    schedule = build_schedule()
    base = _parse_steps(args.steps)

    from PIL import Image

    inputs = []
    if args.data:
        dataset = load_dataset(args.data)
        for s in dataset.iter_split(args.split):
            inputs.append((s.id, s.image))
    else:
        for path in sorted(Path(args.images).glob("*.png")):
            arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
            inputs.append((path.stem, arr.transpose(2, 0, 1)))
    if not inputs:
        print("error: no input images found", file=sys.stderr)
        return 1

    (out / "masks").mkdir(exist_ok=True)
    (out / "edges").mkdir(exist_ok=True)
    edge_stream = not args.no_edge
    timings = []
    for image_id, image in inputs:
        cfg = SamplerConfig(
            base.paradigm, base.timesteps,
            seed=seed_for_image(args.seed, image_id),
            binarize_threshold=args.threshold,
        )
        mask_map, edge_map, timing = sample(model, codec, schedule, image, cfg, edge_stream)
        Image.fromarray((mask_map[0] * 255).round().astype(np.uint8)).save(
            out / "masks" / f"{image_id}.png"
        )
        if edge_map is not None:
            Image.fromarray((edge_map[0] * 255).round().astype(np.uint8)).save(
                out / "edges" / f"{image_id}.png"
            )
        timing["id"] = image_id
        timings.append(timing)

    (out / "timing.json").write_text(json.dumps(timings, indent=2))
    _write_provenance(
        out, "infer", args,
        {
            "checkpoint": str(args.checkpoint), "codec": str(args.codec),
            "steps": base.timesteps, "seed": args.seed, "threshold": args.threshold,
            "count": len(inputs), "edge_stream": edge_stream,
        },
    )
    mean_ms = float(np.mean([t["total_ms"] for t in timings]))
    print(f"wrote {len(inputs)} predictions to {out / 'masks'} (mean {mean_ms:.1f} ms/image)")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args, "eval")
    report = metrics_mod.evaluate_dirs(args.pred, args.gt)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json())
    agg = report.aggregate
    print("  ".join(f"{k}={agg[k]:.4f}" for k in metrics_mod.METRIC_COLUMNS) + f"  n={report.count}")
    if report.skipped:
        print(f"unmatched ids ({len(report.skipped)}): {', '.join(report.skipped)}", file=sys.stderr)
        if args.strict:
            return 1
    return 0


ABLATION_ROWS = (
    # name, edge, dbia, geo, swci, cutmix
    ("baseline", False, False, False, False, False),
    ("edge", True, False, False, False, False),
    ("edge_dbia", True, True, False, False, False),
    ("edge_dbia_swci", True, True, False, True, False),
    ("full", True, True, False, True, True),
    ("edge_dbia_geo", True, True, True, False, False),
)

FULLSCALE_FOOTER = (
    "# full-scale reference (1024px, pretrained backbone): "
    "F_max 0.918, E 0.948, S 0.904, MAE 0.029"
)


def cmd_ablate(args) -> int:
    out = _out_dir(args, "ablate")
    if args.threads:
        torch.set_num_threads(args.threads)
    dataset = load_dataset(args.data)
    train_samples = dataset.load_split("train")
    val_samples = dataset.load_split("val")[: args.n_val]
    if not train_samples or not val_samples:
        print("error: ablation needs train and val splits", file=sys.stderr)
        return 1
    schedule = build_schedule()

    settings = _load_settings(args)
    if args.codec:
        codec = load_codec(args.codec)
    else:
        cc = CodecTrainConfig(
            **_filter_fields(CodecTrainConfig, settings) | {"seed": args.seed}
        )
        if args.codec_epochs is not None:
            cc = dataclasses.replace(cc, epochs=args.codec_epochs)
        codec, _ = train_codec(
            train_samples, cc, CodecConfig(), holdout_masks=[s.mask for s in val_samples]
        )
        save_codec(codec, out / "codec.pt")

    base_tc = _filter_fields(TrainConfig, settings)
    base_tc.update({"epochs": args.epochs, "seed": args.seed, "val_every": max(args.epochs, 1)})
    base_uc = _filter_fields(UNetConfig, settings)
    if "channel_multipliers" in base_uc:
        base_uc["channel_multipliers"] = tuple(base_uc["channel_multipliers"])

    rows = []
    full_model = None
    for name, edge, dbia, geo, swci, cm in ABLATION_ROWS:
        tc = TrainConfig(**base_tc | {"use_edge_task": edge, "aug_cutmix": cm})
        uc = UNetConfig(
            **base_uc
            | {
                "use_dbia_mutual": dbia and edge,
                "mutual_mode": "geo" if geo else "mutual",
                "use_swci": swci,
            }
        )
        model = build_unet(uc, seed=args.seed)
        model, _hist = train([*train_samples], val_samples, model, codec, schedule, tc)
        scores = _eval_model(model, codec, schedule, val_samples, tc, args.seed)
        row = {"config": name, "edge": edge, "dbia": dbia, "dbia_geo": geo,
               "swci": swci, "cutmix": cm}
        row.update(scores)
        rows.append(row)
        print(f"[{name}] " + "  ".join(f"{k}={v:.4f}" for k, v in scores.items()))
        if name == "full":
            full_model = model

    comp_cols = ["config", "edge", "dbia", "dbia_geo", "swci", "cutmix",
                 "f_max", "e_measure", "s_measure", "mae"]
    lines = [",".join(comp_cols)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[c]) for c in comp_cols))
    lines.append(FULLSCALE_FOOTER)
    (out / "ablation_components.csv").write_text("\n".join(lines) + "\n")

    bench_samples = val_samples[: args.n_bench]
    bench = benchmark_paradigms(
        full_model, codec, schedule, bench_samples, args.bench_steps, seed=args.seed
    )
    bench_cols = ["paradigm", "steps", "f_max", "e_measure", "s_measure", "mae", "mean_time_ms"]
    blines = [",".join(bench_cols)]
    for row in bench:
        blines.append(",".join(_csv_cell(row[c]) for c in bench_cols))
    (out / "ablation_paradigms.csv").write_text("\n".join(blines) + "\n")
    _plot_timing(bench, out / "timing_vs_steps.png")

    _write_provenance(
        out, "ablate", args,
        {
            "data": str(args.data), "epochs": args.epochs, "seed": args.seed,
            "rows": [r[0] for r in ABLATION_ROWS], "bench_steps": args.bench_steps,
            "train_base": base_tc, "unet_base": base_uc,
        },
    )
    print(f"ablation tables written to {out}")
    return 0


def _eval_model(model, codec, schedule, val_samples, tc, seed):
    from . import metrics as M

    scfg = SamplerConfig(ONE_STEP, [999])
    scores = {"f_max": [], "e_measure": [], "s_measure": [], "mae": []}
    for s in val_samples:
        cfg = SamplerConfig(ONE_STEP, [999], seed=seed_for_image(seed, s.id))
        mask_map, _, _ = sample(model, codec, schedule, s.image, cfg, edge_stream=tc.use_edge_task)
        pred, gt = mask_map[0], s.mask[0]
        scores["f_max"].append(M.f_max(pred, gt))
        scores["e_measure"].append(M.e_measure(pred, gt))
        scores["s_measure"].append(M.s_measure(pred, gt))
        scores["mae"].append(M.mae(pred, gt))
    return {k: float(np.mean(v)) for k, v in scores.items()}


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _plot_timing(bench_rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r["steps"] for r in bench_rows]
    times = [r["mean_time_ms"] for r in bench_rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(steps, times, "o-")
    ax.set_xlabel("denoising steps")
    ax.set_ylabel("mean inference time (ms)")
    ax.set_title("inference time vs step count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentseg",
        description="One-step latent-diffusion binary segmentation at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic shapes dataset")
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the codec and the denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--paradigm", choices=PARADIGMS)
    p.add_argument("--codec", help="reuse a codec checkpoint instead of training one")
    p.add_argument("--codec-epochs", type=int)
    p.add_argument("--resume", help="continue from a last-checkpoint file")
    p.add_argument("--no-edge", action="store_true")
    p.add_argument("--no-dbia", action="store_true")
    p.add_argument("--dbia-geo", action="store_true")
    p.add_argument("--no-swci", action="store_true")
    p.add_argument("--no-cutmix", action="store_true")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict masks for a directory of images")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset root (uses --split)")
    src.add_argument("--images", help="directory of RGB PNGs")
    p.add_argument("--split", default="val")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out")
    p.add_argument("--steps", default="999", help="comma-separated timesteps, e.g. 999,499")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--no-edge", action="store_true")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true", help="exit 1 on unmatched ids")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="component toggle matrix + paradigm benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--codec")
    p.add_argument("--codec-epochs", type=int)
    p.add_argument("--n-val", dest="n_val", type=int, default=16)
    p.add_argument("--n-bench", dest="n_bench", type=int, default=8)
    p.add_argument("--bench-steps", dest="bench_steps", type=int, nargs="+",
                   default=[1, 2, 5, 10])
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
