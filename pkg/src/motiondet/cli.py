"""Command-line entry points.

Subcommands: ``gen-data`` (synthesize a dataset), ``train``, ``eval``
(detections + reports + figures), ``ablate`` (train/evaluate a variant
list into one comparison table), ``plot`` (render a figure from a report,
metrics log, or ablation file).
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import datagen, reporting
from .config import PipelineConfig, load_config_file, pipeline_config_from, scene_config_from
from .evaluation import write_detections
from .train import evaluate_model, load_checkpoint, train


def _load_values(path) -> dict:
    return load_config_file(path) if path else {}


def cmd_gen_data(args) -> int:
    values = _load_values(args.config)
    scene = scene_config_from(values)
    count = int(values.get("num_videos", args.num_videos))
    samples = [datagen.generate_video(scene, seed) for seed in range(count)]
    manifest = datagen.write_dataset(samples, args.out)
    print(f"wrote {manifest['num_videos']} videos ({manifest['num_frames']} frames) to {manifest['root']}")
    return 0


def cmd_train(args) -> int:
    values = _load_values(args.config)
    cfg = pipeline_config_from(values)
    if args.variant:
        cfg.variant = args.variant
    if args.out:
        cfg.out_dir = args.out

    def log(record):
        print(
            f"epoch {record['epoch']:>2}  lr {record['lr']:.5f}  "
            f"val mAP {record['val_map'] if record['val_map'] is not None else 'n/a'}"
        )

    result = train(cfg, log_fn=log)
    out_dir = Path(cfg.out_dir)
    write_detections(result["val_detections"], out_dir / "detections.jsonl")
    reporting.write_report(result["val_report"], out_dir)
    reporting.plot_metrics(result["metrics"], out_dir / "loss_curves.png")
    print(f"final checkpoint: {result['checkpoint']}")
    print(reporting.format_report(result["val_report"], title=f"validation (variant {cfg.variant})"))
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint, variant_override=args.variant)
    samples = datagen.read_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dets, report = evaluate_model(model, samples, apply_seq_nms=args.seq_nms)
    write_detections(dets, out_dir / "detections.jsonl")
    paths = reporting.write_report(report, out_dir)
    print(reporting.format_report(report, title=f"evaluation of {args.checkpoint}"))
    print(f"report: {paths['json']}  figure: {paths['figure']}")
    return 0


def cmd_ablate(args) -> int:
    values = _load_values(args.config)
    base = pipeline_config_from(values)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    rows = []
    for variant in variants:
        cfg = PipelineConfig.from_dict({**dataclasses.asdict(base), "variant": variant})
        cfg.out_dir = str(Path(args.out) / f"variant_{variant}")
        try:
            result = train(cfg)
            report = result["val_report"]
            row = {"variant": variant, **{k: report.get(k) for k in reporting.REPORT_KEYS}}
            write_detections(
                result["val_detections"], Path(cfg.out_dir) / "detections.jsonl"
            )
            reporting.write_report(report, cfg.out_dir)
        except Exception as exc:  # keep remaining variants running
            row = {"variant": variant, "error": f"{type(exc).__name__}: {exc}"}
        rows.append(row)
    paths = reporting.write_ablation(rows, args.out)
    print(reporting.format_ablation_table(rows))
    print(f"table: {paths['json']}  figure: {paths['figure']}")
    return 1 if any("error" in row for row in rows) else 0


def cmd_plot(args) -> int:
    kind = reporting.plot_any(args.report, args.out)
    print(f"rendered {kind} figure to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motiondet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic video dataset")
    p.add_argument("--config", default="", help="key = value config file")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--num-videos", type=int, default=20)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one pipeline variant")
    p.add_argument("--config", default="", help="key = value config file")
    p.add_argument("--variant", default="", choices=["", "a", "b", "c", "d", "e", "f"])
    p.add_argument("--out", default="", help="override output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="eval_out")
    p.add_argument("--variant", default="", help="override variant (e <-> f only)")
    p.add_argument("--seq-nms", action="store_true", help="apply sequence rescoring")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare pipeline variants")
    p.add_argument("--config", default="")
    p.add_argument("--variants", default="a,b,c,d,e,f")
    p.add_argument("--out", default="ablation_out")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("plot", help="render a figure from a report/metrics file")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
