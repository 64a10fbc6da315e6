"""``boxforge`` command line.

Subcommands: ``fuse``, ``augment``, ``tta-merge``, ``evaluate``, ``compare``.
Exit codes: 0 success, 2 configuration/usage error, 3 I/O or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from PIL import Image

import boxforge
from boxforge import _backend, augment, coco_io
from boxforge.core import ImageBuffer
from boxforge.errors import BoxforgeError, ConfigError, InputError
from boxforge.evaluation import EvalConfig, EvalReport, evaluate, render_table
from boxforge.fusion import FusionConfig, fuse_images, group_by_image, worker_count
from boxforge.tta import TtaBundle, TtaTransform, merge

log = logging.getLogger("boxforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str = boxforge.__version__
    backend: str = ""
    started_at: str = ""
    wall_time: float = 0.0

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def _config_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}


class _Run:
    """Times a command and fills in the manifest bookkeeping."""

    def __init__(self, args, inputs, outputs):
        self.manifest = RunManifest(
            command=args.command,
            config=_config_snapshot(args),
            seed=getattr(args, "seed", None),
            inputs=[str(p) for p in inputs],
            outputs=[str(p) for p in outputs],
            backend=_backend.name,
            started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        self._t0 = time.perf_counter()

    def finish(self, path) -> None:
        self.manifest.wall_time = round(time.perf_counter() - self._t0, 6)
        if path is not None:
            self.manifest.write(path)


# --- fuse --------------------------------------------------------------------


def cmd_fuse(args) -> int:
    run = _Run(args, [args.gt, *args.inputs], [args.out])
    n = len(args.inputs)
    cfg = FusionConfig(
        iou_threshold=args.iou_thr,
        score_threshold=args.score_thr,
        num_models=n,
        model_weights=tuple(args.weights) if args.weights else None,
    )
    index = coco_io.load_annotations(args.gt)
    dets = []
    for model_id, path in enumerate(args.inputs):
        dets.extend(coco_io.load_results(path, index, model_id=model_id))
    fused = fuse_images(dets, cfg, method=args.method, workers=worker_count())
    coco_io.save_results(fused, index, args.out)
    run.finish(_manifest_path(args.out))
    log.info("fused %d detections from %d files into %d boxes", len(dets), n, len(fused))
    return EXIT_OK


# --- tta-merge ---------------------------------------------------------------


def _load_transforms(path) -> list[TtaTransform]:
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: bad transform manifest: {exc}") from None
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{path}: transform manifest must be a non-empty JSON list")
    return [TtaTransform.from_json(e) for e in entries]


def cmd_tta_merge(args) -> int:
    run = _Run(args, [args.gt, args.manifest, *args.inputs], [args.out])
    transforms = _load_transforms(args.manifest)
    if len(transforms) != len(args.inputs):
        raise ConfigError(f"{len(transforms)} manifest entries but {len(args.inputs)} input files")
    cfg = FusionConfig(iou_threshold=args.iou_thr, score_threshold=args.score_thr, num_models=len(transforms))
    index = coco_io.load_annotations(args.gt)
    per_transform = [
        group_by_image(coco_io.load_results(path, index, model_id=i, frame=(t.scale_w, t.scale_h)))
        for i, (t, path) in enumerate(zip(transforms, args.inputs))
    ]
    image_ids = sorted(set().union(*per_transform))

    def one(image_id):
        bundle = TtaBundle(
            image_id,
            tuple((t, tuple(groups.get(image_id, ()))) for t, groups in zip(transforms, per_transform)),
        )
        return merge(bundle, cfg)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        fused = [fb for per_image in pool.map(one, image_ids) for fb in per_image]
    coco_io.save_results(fused, index, args.out)
    run.finish(_manifest_path(args.out))
    return EXIT_OK


# --- evaluate / compare --------------------------------------------------------


def _eval_config(args) -> EvalConfig:
    return EvalConfig(max_dets=args.max_dets)


def cmd_evaluate(args) -> int:
    run = _Run(args, [args.gt, args.dt], [args.out] if args.out else [])
    index = coco_io.load_annotations(args.gt)
    dets = coco_io.load_results(args.dt, index)
    report = evaluate(dets, index.annotations, _eval_config(args), image_ids=index.images)
    if args.format == "json":
        text = json.dumps(report.to_dict(include_curves=args.curves), indent=2) + "\n"
    else:
        text = render_table([(args.label or Path(args.dt).stem, report)])
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    run.finish(args.manifest)
    return EXIT_OK


def _parse_labeled(spec: str) -> tuple[str, Path]:
    if "=" in spec:
        label, path = spec.split("=", 1)
    else:
        label, path = Path(spec).stem, spec
    if not label:
        raise ConfigError(f"empty label in {spec!r}")
    return label, Path(path)


def _is_report(obj) -> bool:
    return isinstance(obj, dict) and "ap_50_95" in obj


def cmd_compare(args) -> int:
    labeled = [_parse_labeled(s) for s in args.dt]
    run = _Run(args, ([args.gt] if args.gt else []) + [p for _, p in labeled], [])
    index = None
    rows = []
    for label, path in labeled:
        obj = coco_io.read_json(path)
        if _is_report(obj):
            report = EvalReport.from_dict(obj)
        else:
            if args.gt is None:
                raise ConfigError(f"{path} holds detections; --gt is required to evaluate it")
            if index is None:
                index = coco_io.load_annotations(args.gt)
            if not isinstance(obj, list):
                raise InputError(f"{path}: expected a results array or an evaluation report")
            dets = coco_io.results_from_json(obj, index)
            report = evaluate(dets, index.annotations, _eval_config(args), image_ids=index.images)
        rows.append((label, report))
    if args.format == "json":
        sys.stdout.write(json.dumps({label: r.to_dict() for label, r in rows}, indent=2) + "\n")
    else:
        sys.stdout.write(render_table(rows))
    run.finish(args.manifest)
    return EXIT_OK


# --- augment -------------------------------------------------------------------


def _parse_amp(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--amp expects LO:HI, got {text!r}") from None
    return lo, hi


def _image_path(images_dir: Path, meta) -> Path:
    return images_dir / meta.file_name


def _save_copy(src: Path, dst: Path) -> None:
    dst.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(src, dst)


def _write_image(img: ImageBuffer, dst: Path) -> None:
    dst.parent.mkdir(parents=True, exist_ok=True)
    coco_io.save_image(img, dst)


def _resize(img: ImageBuffer, width: int, height: int) -> ImageBuffer:
    if (img.width, img.height) == (width, height):
        return img
    im = Image.fromarray(img.pixels).resize((width, height), Image.BILINEAR)
    return ImageBuffer.from_array(im)


def _ordered_map(fn, items, workers):
    """Apply ``fn`` across a pool, yielding results in input order, a chunk at a time."""
    items = list(items)
    chunk = max(1, workers * 4)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for i in range(0, len(items), chunk):
            yield from pool.map(fn, items[i : i + chunk])


def _augment_into(args, work: Path, index, images_dir: Path) -> None:
    out_images = work / "images"
    workers = worker_count()
    by_image = {i: [] for i in index.images}
    for g in index.annotations:
        by_image[g.image_id].append(g)
    ids = sorted(index.images)

    if args.op == "bbox-jitter":
        lo, hi = _parse_amp(args.amp)
        cfg = augment.JitterConfig(lo, hi, seed=args.seed)
        jittered = {}
        for image_id in ids:
            meta = index.images[image_id]
            rng = augment.substream(args.seed, "bbox-jitter", image_id)
            jittered[image_id] = iter(augment.bbox_jitter(by_image[image_id], meta, cfg, rng=rng))
        # keep file order
        index.annotations = [next(jittered[g.image_id]) for g in index.annotations]
        for image_id in ids:
            meta = index.images[image_id]
            _save_copy(_image_path(images_dir, meta), out_images / meta.file_name)

    elif args.op == "grid-mask":
        cfg = augment.GridMaskConfig(
            d_min=args.d_min,
            d_max=args.d_max,
            keep_ratio=args.keep_ratio,
            apply_prob=0.7 if args.apply_prob is None else args.apply_prob,
            seed=args.seed,
        )

        def one(image_id):
            meta = index.images[image_id]
            img = coco_io.load_image(_image_path(images_dir, meta))
            return meta, augment.grid_mask(img, cfg, rng=augment.substream(args.seed, "grid-mask", image_id))

        for meta, img in _ordered_map(one, ids, workers):
            _write_image(img, out_images / meta.file_name)

    elif args.op == "mix-up":
        cfg = augment.MixupConfig(
            alpha=args.alpha, apply_prob=0.5 if args.apply_prob is None else args.apply_prob, seed=args.seed
        )

        def one(image_id):
            meta = index.images[image_id]
            a = coco_io.load_image(_image_path(images_dir, meta))
            others = [i for i in ids if i != image_id]
            if not others:
                return meta, a, [augment.WeightedAnnotation(g, 1.0) for g in by_image[image_id]]
            partner = others[int(augment.substream(args.seed, "mix-up-partner", image_id).integers(len(others)))]
            b_meta = index.images[partner]
            b = _resize(coco_io.load_image(_image_path(images_dir, b_meta)), meta.width, meta.height)
            b_gts = [dataclasses.replace(g, image_id=image_id) for g in by_image[partner]]
            rng = augment.substream(args.seed, "mix-up", image_id)
            img, anns = augment.mix_up(a, by_image[image_id], b, b_gts, cfg, rng=rng)
            return meta, img, anns

        new_anns = []
        next_ann = max((g.ann_id for g in index.annotations if g.ann_id is not None), default=0) + 1
        index.weights = {}
        for meta, img, anns in _ordered_map(one, ids, workers):
            _write_image(img, out_images / meta.file_name)
            for wa in anns:
                g = wa.gt
                if g.ann_id is None:
                    g = dataclasses.replace(g, ann_id=next_ann)
                    next_ann += 1
                new_anns.append(g)
                if wa.weight != 1.0:
                    index.weights[g.ann_id] = wa.weight
        index.annotations = new_anns

    elif args.op == "oversample":
        if args.min_count is None:
            raise ConfigError("--op oversample needs --min-count")
        result = augment.oversample_rare_classes(
            index,
            lambda meta: coco_io.load_image(_image_path(images_dir, meta)),
            min_count=args.min_count,
            copies=args.copies,
            seed=args.seed,
        )
        for image_id in ids:
            meta = index.images[image_id]
            _save_copy(_image_path(images_dir, meta), out_images / meta.file_name)
        for image_id, img in sorted(result.images.items()):
            _write_image(img, out_images / result.index.images[image_id].file_name)
        index.images = result.index.images
        index.annotations = result.index.annotations
        log.info(
            "oversampled %d rare categories into %d new images", len(result.rare_categories), len(result.images)
        )
    else:
        raise ConfigError(f"unknown augmentation {args.op!r}")

    coco_io.save_annotations(index, work / "annotations.json")


def cmd_augment(args) -> int:
    out_dir = Path(args.out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise ConfigError(f"output directory {out_dir} is not empty")
    if args.op == "oversample" and args.min_count is None:
        raise ConfigError("--op oversample needs --min-count")
    run = _Run(args, [args.ann, args.images], [out_dir])
    index = coco_io.load_annotations(args.ann)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        _augment_into(args, work, index, Path(args.images))
        run.finish(work / "manifest.json")
        if out_dir.exists():
            out_dir.rmdir()
        work.rename(out_dir)
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    return EXIT_OK


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="boxforge", description="Detection post-processing: fusion, TTA merging, augmentation, COCO AP."
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {boxforge.__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fuse", help="ensemble result files with NMS or WBF")
    f.add_argument("--method", choices=("nms", "wbf"), default="wbf")
    f.add_argument("--iou-thr", type=float, default=None)
    f.add_argument("--score-thr", type=float, default=0.0)
    f.add_argument("--weights", type=float, nargs="+", default=None)
    f.add_argument("--inputs", nargs="+", required=True)
    f.add_argument("--gt", required=True, help="COCO instances file supplying image sizes")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fuse)

    a = sub.add_parser("augment", help="materialize an augmented dataset")
    a.add_argument("--op", choices=("bbox-jitter", "grid-mask", "mix-up", "oversample"), required=True)
    a.add_argument("--ann", required=True)
    a.add_argument("--images", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--amp", default="0.95:1.05", help="bbox-jitter scale range LO:HI")
    a.add_argument("--d-min", type=int, default=32)
    a.add_argument("--d-max", type=int, default=96)
    a.add_argument("--keep-ratio", type=float, default=0.5)
    a.add_argument("--apply-prob", type=float, default=None)
    a.add_argument("--alpha", type=float, default=1.5)
    a.add_argument("--min-count", type=int, default=None)
    a.add_argument("--copies", type=int, default=6)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("tta-merge", help="merge per-transform results into one model output")
    t.add_argument("--manifest", required=True, help="JSON list of {width, height, flipped}")
    t.add_argument("--inputs", nargs="+", required=True)
    t.add_argument("--gt", required=True, help="COCO instances file supplying original image sizes")
    t.add_argument("--out", required=True)
    t.add_argument("--iou-thr", type=float, default=None)
    t.add_argument("--score-thr", type=float, default=0.0)
    t.set_defaults(func=cmd_tta_merge)

    e = sub.add_parser("evaluate", help="COCO AP of one results file")
    e.add_argument("--gt", required=True)
    e.add_argument("--dt", required=True)
    e.add_argument("--format", choices=("table", "json"), default="table")
    e.add_argument("--label", default=None)
    e.add_argument("--max-dets", type=int, default=100)
    e.add_argument("--curves", action="store_true", help="include precision curves in JSON")
    e.add_argument("--out", default=None)
    e.add_argument("--manifest", default=None)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="one table row per labeled results file or report")
    c.add_argument("--gt", default=None)
    c.add_argument("--dt", nargs="+", required=True, metavar="LABEL=FILE")
    c.add_argument("--format", choices=("table", "json"), default="table")
    c.add_argument("--max-dets", type=int, default=100)
    c.add_argument("--manifest", default=None)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"boxforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BoxforgeError, OSError) as exc:
        print(f"boxforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
