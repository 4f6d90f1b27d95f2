"""Command-line entry point: analyze, synth, train, eval, infer, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analyzer
from .errors import MTPNError
from .metrics import compute_map, compute_miou
from .network.config import BACKBONES, ModelConfig, parse_resolution
from .runconfig import RunConfig, load_run_config
from .runtime import bench as bench_mod
from .runtime.checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .runtime.fileio import atomic_write_text, read_ppm, write_ppm
from .runtime.infer import infer, render_overlay
from .training.synth import Sample, synth_sample
from .training.trainer import train

log = logging.getLogger("mtpn")


def _resolution(text):
    try:
        return parse_resolution(text)
    except MTPNError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------------------
# dataset directories


def save_sample(sample: Sample, path) -> None:
    blob = json.dumps({"kind": "sample", "boxes": [list(b) for b in sample.boxes]}, sort_keys=True).encode()
    tensors = {
        "image": sample.image,
        "drivable_mask": sample.drivable_mask.astype(np.float32),
        "lane_mask": sample.lane_mask.astype(np.float32),
    }
    write_tensors(path, blob, tensors)


def load_sample(path) -> Sample:
    blob, t = read_tensors(path)
    if blob.get("kind") != "sample":
        raise MTPNError(f"{path} is not a sample file")
    boxes = [(int(b[0]), *(float(v) for v in b[1:])) for b in blob["boxes"]]
    return Sample(t["image"], boxes, t["drivable_mask"].astype(np.uint8), t["lane_mask"].astype(np.uint8))


def load_dataset(directory) -> list[Sample]:
    files = sorted(Path(directory).glob("*.mtpn"))
    if not files:
        raise MTPNError(f"no samples (*.mtpn) in {directory}")
    return [load_sample(f) for f in files]


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args) -> int:
    backbones = BACKBONES if args.backbone in (None, "both") else (args.backbone,)
    reports = [analyzer.count_flops(ModelConfig(backbone=b, input_res=args.resolution), args.resolution)
               for b in backbones]
    cmp = analyzer.compare_models(*reports) if len(reports) == 2 else None
    print(analyzer.format_table(reports, cmp))
    for r in reports:
        print(f"{r.model_label}: params={r.total_params} macs={r.total_macs} flops={r.total_flops} "
              f"size_bytes={r.est_model_size_bytes}")
    if args.out:
        doc = {"reports": [r.to_dict() for r in reports]}
        if cmp is not None:
            doc["comparison"] = cmp.to_dict()
        atomic_write_text(args.out, json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        s = synth_sample(args.seed + k, args.resolution, args.difficulty, args.num_classes)
        save_sample(s, out / f"sample_{k:05d}.mtpn")
        write_ppm(out / f"sample_{k:05d}.ppm", s.image)
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    data = load_dataset(args.data)
    cfg = rc.model_config(data[0].resolution)
    model, tlog = train(cfg, rc.schedule(), data)
    save_checkpoint(model, args.out)
    if args.log:
        atomic_write_text(args.log, tlog.to_jsonl())
    last = tlog.records[-1]
    print(f"trained {last.epoch} epochs: l_total={last.l_total:.5f} l_det={last.l_det:.5f} l_seg={last.l_seg:.5f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    preds, gts, d_iou, l_iou = [], [], [], []
    for s in data:
        r = infer(model, s.image, args.conf, args.nms)
        preds.append(r.detections)
        gts.append(s.boxes)
        d_iou.append(compute_miou(r.drivable_mask, s.drivable_mask))
        l_iou.append(compute_miou(r.lane_mask, s.lane_mask))
    m = compute_map(preds, gts)
    result = {
        "map": m.map, "recall": m.recall, "num_gt": m.num_gt,
        "miou_drivable": float(np.mean(d_iou)), "miou_lane": float(np.mean(l_iou)), "samples": len(data),
    }
    print(json.dumps(result, indent=2))
    if args.out:
        atomic_write_text(args.out, json.dumps(result, indent=2) + "\n")
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.ckpt)
    image = read_ppm(args.image)
    r = infer(model, image, args.conf, args.nms)
    render_overlay(image, r.detections, r.drivable_mask, r.lane_mask, args.out)
    print(f"{len(r.detections)} detection(s); overlay written to {args.out}")
    for d in r.detections:
        print(f"  class={d.class_id} score={d.score:.3f} box=({', '.join(f'{v:.1f}' for v in d.box)})")
    return 0


def cmd_bench(args) -> int:
    from .network.model import build_model

    rc = load_run_config(args.config) if args.config else RunConfig()
    if args.ckpt:
        model = load_checkpoint(args.ckpt)
    else:
        model = build_model(rc.model_config().replace(backbone=args.backbone or "mobilenetv2"), seed=args.seed)
    resolutions = args.resolutions or rc.bench_resolutions()
    warmup = rc.bench["warmup"] if args.warmup is None else args.warmup
    iters = rc.bench["iters"] if args.iters is None else args.iters
    threads = rc.bench["threads"] if args.threads is None else args.threads

    def progress(row):
        log.info("%dx%d mean %.2f ms", row.h, row.w, row.mean_ms)

    report = bench_mod.benchmark(model, resolutions, warmup, iters, threads, args.include_post, args.seed,
                                 progress=progress)
    print(f"{report.model_label} on {report.device} ({report.threads} thread(s), {report.backend} kernels)")
    print("  ".join(f"{r.h}x{r.w}: {r.mean_ms:.2f} ms ({r.fps:.2f} fps)" for r in report.rows))
    if args.out:
        atomic_write_text(args.out, report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtpn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="parameter / FLOP / size cost model")
    a.add_argument("--backbone", choices=[*BACKBONES, "both"], default="both")
    a.add_argument("--resolution", type=_resolution, default=(384, 640), help="HxW, e.g. 384x640")
    a.add_argument("--out", help="write the cost report as JSON")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="generate synthetic road scenes")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=_resolution, default=(128, 192))
    s.add_argument("--difficulty", choices=["easy", "medium"], default="easy")
    s.add_argument("--num-classes", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="phased multi-task training")
    t.add_argument("--config", required=True, help="run configuration JSON")
    t.add_argument("--data", required=True, help="directory written by synth")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="write the per-epoch log as JSON lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="mAP, recall and mIoU on a dataset directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--conf", type=float, default=0.25)
    e.add_argument("--nms", type=float, default=0.5)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="run one image and render the overlay")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True, help="input P6 .ppm")
    i.add_argument("--out", required=True, help="output P6 .ppm")
    i.add_argument("--conf", type=float, default=0.25)
    i.add_argument("--nms", type=float, default=0.5)
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="batch-1 latency sweep")
    src = b.add_mutually_exclusive_group()
    src.add_argument("--backbone", choices=BACKBONES)
    src.add_argument("--ckpt")
    b.add_argument("--config", help="run configuration JSON (bench section)")
    b.add_argument("--resolutions", type=_resolution, nargs="+")
    b.add_argument("--warmup", type=int)
    b.add_argument("--iters", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--include-post", action="store_true", help="time decode, NMS and argmax too")
    b.add_argument("--out", help="write the report as JSON")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (MTPNError, ValueError, OSError) as exc:
        print(f"mtpn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
