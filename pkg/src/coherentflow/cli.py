"""Command-line pipeline: synth | detect | regions | recognize | mine | render.

Every subcommand reads one JSON config, is deterministic given the config and
seed, and writes JSON reports carrying a schema_version field.  Exit codes:
0 success, 2 validation/config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import render
from .diffusion import DiffusionConfig, coarse_to_fine
from .errors import CoherentFlowError, ValidationError
from .fields import FlowSequence, GridDims, read_flo, write_flo
from .mining import MiningConfig, cluster_frames, extract_flow_curve
from .pgm import read_pgm16, write_pgm16
from .recognition import extract_feature, load_model, predict, save_model, train
from .regions import (
    SemanticRegionMap,
    SimilarityConfig,
    build_semantic_regions,
    cluster_coherent_motions,
)
from .segmentation import SegmentationConfig, motion_from_mask, segment
from .synth import SceneSpec, cne, generate, per, rand_index
from .util import SCHEMA_VERSION, dump_json, load_json, stage_seed


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    classifier_epochs: int = 200
    classifier_reg: float = 1e-3
    tef_stride: int | None = None
    max_tefs: int | None = None
    regions_stride: int = 4
    regions_map: str | None = None

    _SECTIONS = {
        "seed", "workers", "diffusion", "segmentation", "similarity", "mining",
        "classifier", "detect", "regions", "schema_version",
    }

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        unknown = set(obj) - cls._SECTIONS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")

        def sub(name, builder, **extra):
            body = dict(obj.get(name, {}))
            body.update(extra)
            try:
                return builder(**body)
            except TypeError as exc:
                raise ValidationError(f"bad {name} config: {exc}") from exc

        cfg = cls(
            seed=int(obj.get("seed", 0)),
            workers=int(obj.get("workers", 1)),
            diffusion=sub("diffusion", DiffusionConfig),
            segmentation=sub("segmentation", SegmentationConfig),
            similarity=sub("similarity", SimilarityConfig),
            mining=sub("mining", MiningConfig),
        )
        classifier = obj.get("classifier", {})
        cfg.classifier_epochs = int(classifier.get("epochs", 200))
        cfg.classifier_reg = float(classifier.get("reg", 1e-3))
        detect = obj.get("detect", {})
        cfg.tef_stride = detect.get("tef_stride")
        cfg.max_tefs = detect.get("max_tefs")
        regions = obj.get("regions", {})
        cfg.regions_stride = int(regions.get("stride", 4))
        cfg.regions_map = regions.get("map")
        if cfg.workers < 1:
            raise ValidationError("workers must be >= 1")
        return cfg


def _pool_size(cfg: PipelineConfig) -> int:
    env = os.environ.get("COHERENTFLOW_THREADS")
    if env:
        return max(1, int(env))
    return cfg.workers


def _load_sequence(flow_dir: Path) -> FlowSequence:
    files = sorted(flow_dir.glob("frame_*.flo"))
    if not files:
        raise ValidationError(f"no frame_*.flo files in {flow_dir}")
    frames = [read_flo(f) for f in files]
    return FlowSequence(frames[0].dims, frames)


def _load_truth(path: Path):
    truth_file = path / "truth.json"
    if truth_file.exists():
        return load_json(truth_file)
    return None


def cmd_synth(args) -> int:
    spec = SceneSpec.from_json(load_json(args.config))
    if args.seed is not None:
        spec.rng_seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq, truth = generate(spec)
    for i, frame in enumerate(seq.frames):
        write_flo(frame, out / f"frame_{i:04d}.flo")
    for i, cmap in enumerate(truth.coherent_maps):
        write_pgm16(cmap, out / f"truth_coherent_{i:04d}.pgm")
    write_pgm16(truth.semantic_map, out / "truth_semantic.pgm")
    dump_json(
        {
            "schema_version": SCHEMA_VERSION,
            "spec": spec.to_json(),
            "phase_labels": truth.phase_labels,
            "centerlines": [c.tolist() for c in truth.centerlines],
            "num_frames": spec.num_frames,
        },
        out / "truth.json",
    )
    return 0


def _detect_one(seq, start, pipeline: PipelineConfig):
    tef = coarse_to_fine(seq, start, pipeline.diffusion)
    seg_cfg = SegmentationConfig(
        sample_count=pipeline.segmentation.sample_count,
        weight_threshold=pipeline.segmentation.weight_threshold,
        min_region_area=pipeline.segmentation.min_region_area,
        magnitude_floor=pipeline.segmentation.magnitude_floor,
        rng_seed=stage_seed(pipeline.seed, f"detect:{start}"),
    )
    motions = segment(tef, seg_cfg, frame=start)
    return tef, motions


def _label_map(motions, dims: GridDims) -> np.ndarray:
    labels = np.full((dims.height, dims.width), -1, dtype=np.int32)
    for m in motions:
        labels[m.mask] = m.id
    return labels


def cmd_detect(args) -> int:
    pipeline = PipelineConfig.from_json(load_json(args.config))
    if args.seed is not None:
        pipeline.seed = args.seed
    src = Path(args.indir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq = _load_sequence(src)
    T_max = pipeline.diffusion.T_max
    if len(seq) < T_max:
        raise ValidationError(f"sequence of {len(seq)} frames is shorter than T_max={T_max}")
    stride = pipeline.tef_stride or T_max
    starts = list(range(0, len(seq) - T_max + 1, stride))
    if pipeline.max_tefs:
        starts = starts[: pipeline.max_tefs]

    with ThreadPoolExecutor(max_workers=_pool_size(pipeline)) as pool:
        results = list(pool.map(lambda s: _detect_one(seq, s, pipeline), starts))

    truth = _load_truth(src)
    report_frames = []
    pers = []
    det_counts, truth_counts = [], []
    for start, (tef, motions) in zip(starts, results):
        write_flo(tef, out / f"tef_{start:04d}.flo")
        labels = _label_map(motions, seq.dims)
        write_pgm16(labels, out / f"labels_{start:04d}.pgm")
        entry = {
            "start": start,
            "tef_file": f"tef_{start:04d}.flo",
            "labels_file": f"labels_{start:04d}.pgm",
            "regions": [
                {
                    "id": m.id,
                    "area": m.area,
                    "bbox": list(m.bbox()),
                    "mean_energy": [float(v) for v in m.mean_energy()],
                }
                for m in motions
            ],
        }
        if truth is not None:
            gt_map = read_pgm16(src / f"truth_coherent_{start:04d}.pgm")
            entry["per"] = per(labels, gt_map)
            pers.append(entry["per"])
            det_counts.append(len(motions))
            truth_counts.append(int(gt_map.max()) + 1)
        report_frames.append(entry)

    report = {
        "schema_version": SCHEMA_VERSION,
        "tef_starts": starts,
        "frames": report_frames,
        "region_matching": "maximum-overlap assignment",
    }
    if truth is not None:
        report["mean_per"] = float(np.mean(pers)) if pers else None
        report["cne"] = cne(det_counts, truth_counts)
        # carry the truth sidecar forward so later stages can score themselves
        if (src / "truth_semantic.pgm").exists():
            (out / "truth_semantic.pgm").write_bytes(
                (src / "truth_semantic.pgm").read_bytes()
            )
        dump_json(truth, out / "truth.json")
    dump_json(report, out / "report.json")
    return 0


def _load_detections(det_dir: Path):
    """Rebuild per-field coherent motions from detect outputs."""
    tef_files = sorted(det_dir.glob("tef_*.flo"))
    if not tef_files:
        raise ValidationError(f"no detections found in {det_dir}")
    motions_by_tef = []
    tefs = []
    starts = []
    for tf in tef_files:
        start = int(tf.stem.split("_")[1])
        tef = read_flo(tf)
        labels = read_pgm16(det_dir / f"labels_{start:04d}.pgm")
        motions = []
        for lab in range(int(labels.max()) + 1):
            mask = labels == lab
            if mask.any():
                motions.append(motion_from_mask(mask, tef.vectors, id=lab, frame=start))
        motions_by_tef.append(motions)
        tefs.append(tef)
        starts.append(start)
    return starts, tefs, motions_by_tef


def cmd_regions(args) -> int:
    pipeline = PipelineConfig.from_json(load_json(args.config))
    if args.seed is not None:
        pipeline.seed = args.seed
    det_dir = Path(args.indir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    starts, tefs, motions_by_tef = _load_detections(det_dir)
    flat = [m for motions in motions_by_tef for m in motions]
    if not flat:
        raise ValidationError("no coherent motions in the detections")
    step1 = cluster_coherent_motions(
        flat, pipeline.similarity, stage_seed(pipeline.seed, "regions:step1")
    )
    region_map = build_semantic_regions(
        motions_by_tef,
        step1,
        tefs[0].dims,
        stage_seed(pipeline.seed, "regions:step2"),
        stride=pipeline.regions_stride,
    )
    write_pgm16(region_map.labels, out / "semantic_regions.pgm")
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "num_regions": region_map.num_regions,
        "step1_labels": [int(v) for v in step1.labels],
        "tef_starts": starts,
        "regions": [],
    }
    for r in range(region_map.num_regions):
        mask = region_map.labels == r
        ys, xs = np.nonzero(mask)
        sidecar["regions"].append(
            {
                "id": r,
                "area": int(mask.sum()),
                "centroid": [float(xs.mean()), float(ys.mean())],
            }
        )
    semantic_truth = None
    for cand in (det_dir / "truth_semantic.pgm", det_dir.parent / "truth_semantic.pgm"):
        if cand.exists():
            semantic_truth = read_pgm16(cand)
            break
    if semantic_truth is not None:
        sidecar["rand_index"] = rand_index(region_map.labels, semantic_truth)
    dump_json(sidecar, out / "semantic_regions.json")
    return 0


def _clip_feature(clip_dir: Path, pipeline: PipelineConfig, region_map: SemanticRegionMap):
    seq = _load_sequence(clip_dir)
    tef = coarse_to_fine(seq, 0, pipeline.diffusion)
    return extract_feature(tef, region_map)


def cmd_recognize(args) -> int:
    pipeline = PipelineConfig.from_json(load_json(args.config))
    if args.seed is not None:
        pipeline.seed = args.seed
    data = Path(args.indir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_root, test_root = data / "train", data / "test"
    if not train_root.is_dir() or not test_root.is_dir():
        raise ValidationError(f"{data} must contain train/ and test/ directories")

    classes = sorted(p.name for p in train_root.iterdir() if p.is_dir())
    if len(classes) < 2:
        raise ValidationError("recognition needs at least two classes")

    if pipeline.regions_map:
        region_labels = read_pgm16(pipeline.regions_map)
        first_clip = sorted((train_root / classes[0]).iterdir())[0]
        dims = _load_sequence(first_clip).dims
        region_map = SemanticRegionMap(dims, region_labels)
    else:
        region_map = _regions_from_training(train_root, classes, pipeline)
        write_pgm16(region_map.labels, out / "semantic_regions.pgm")

    def gather(root):
        feats, labs = [], []
        for cname in classes:
            cdir = root / cname
            if not cdir.is_dir():
                continue
            for clip in sorted(cdir.iterdir()):
                feats.append(_clip_feature(clip, pipeline, region_map))
                labs.append(cname)
        return feats, labs

    train_x, train_y = gather(train_root)
    model = train(
        train_x,
        train_y,
        epochs=pipeline.classifier_epochs,
        reg=pipeline.classifier_reg,
        seed=stage_seed(pipeline.seed, "recognize:train"),
    )
    save_model(model, out / "model.json")
    reloaded = load_model(out / "model.json")

    test_x, test_y = gather(test_root)
    correct = 0
    per_class = {c: {"total": 0, "correct": 0} for c in classes}
    for f, y in zip(test_x, test_y):
        pred = predict(reloaded, f)
        per_class[y]["total"] += 1
        if pred == y:
            correct += 1
            per_class[y]["correct"] += 1
    accuracy = correct / len(test_y) if test_y else 0.0
    dump_json(
        {
            "schema_version": SCHEMA_VERSION,
            "classes": classes,
            "accuracy": accuracy,
            "per_class": per_class,
            "train_size": len(train_y),
            "test_size": len(test_y),
        },
        out / "report.json",
    )
    return 0


def _regions_from_training(train_root: Path, classes, pipeline: PipelineConfig) -> SemanticRegionMap:
    """Build semantic regions from a few training clips per class."""
    motions_by_tef = []
    dims = None
    for cname in classes:
        clips = sorted((train_root / cname).iterdir())[:2]
        for clip in clips:
            seq = _load_sequence(clip)
            dims = seq.dims
            tef, motions = _detect_one(seq, 0, pipeline)
            motions_by_tef.append(motions)
    flat = [m for motions in motions_by_tef for m in motions]
    if not flat:
        raise ValidationError("training clips produced no coherent motions")
    step1 = cluster_coherent_motions(
        flat, pipeline.similarity, stage_seed(pipeline.seed, "recognize:step1")
    )
    return build_semantic_regions(
        motions_by_tef, step1, dims,
        stage_seed(pipeline.seed, "recognize:step2"),
        stride=pipeline.regions_stride,
    )


def cmd_mine(args) -> int:
    pipeline = PipelineConfig.from_json(load_json(args.config))
    if args.seed is not None:
        pipeline.seed = args.seed
    det_dir = Path(args.indir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    starts, tefs, motions_by_tef = _load_detections(det_dir)

    if pipeline.regions_map:
        region_map = SemanticRegionMap(tefs[0].dims, read_pgm16(pipeline.regions_map))
    elif (det_dir / "semantic_regions.pgm").exists():
        region_map = SemanticRegionMap(
            tefs[0].dims, read_pgm16(det_dir / "semantic_regions.pgm")
        )
    else:
        flat = [m for motions in motions_by_tef for m in motions]
        if not flat:
            raise ValidationError("no coherent motions in the detections")
        step1 = cluster_coherent_motions(
            flat, pipeline.similarity, stage_seed(pipeline.seed, "mine:step1")
        )
        region_map = build_semantic_regions(
            motions_by_tef, step1, tefs[0].dims,
            stage_seed(pipeline.seed, "mine:step2"),
            stride=pipeline.regions_stride,
        )

    groups = cluster_frames(
        motions_by_tef, region_map, pipeline.similarity, pipeline.mining,
        stage_seed(pipeline.seed, "mine:frames"),
    )
    group_entries = []
    curves_json = []
    for gi, group in enumerate(groups):
        entry = {
            "frames": [starts[t] for t in group.frame_indices],
            "patterns": [],
        }
        for ci, pattern in enumerate(group.patterns):
            name = f"pattern_g{gi}_c{ci}.flo"
            write_flo(pattern, out / name)
            entry["patterns"].append(name)
            if (pattern.vectors != 0).any():
                curve = extract_flow_curve(pattern, pipeline.mining, psi_id=ci)
                curves_json.append({"group": gi, "cluster": ci, "curve": curve.to_json()})
        group_entries.append(entry)
    dump_json(
        {"schema_version": SCHEMA_VERSION, "groups": group_entries},
        out / "groups.json",
    )
    dump_json({"schema_version": SCHEMA_VERSION, "curves": curves_json}, out / "curves.json")
    return 0


def cmd_render(args) -> int:
    src = Path(args.indir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    produced = 0
    for flo in sorted(src.glob("*.flo")):
        render.render_quiver(read_flo(flo), out / f"{flo.stem}_quiver.png")
        produced += 1
    label_rgb = None
    for pgm in sorted(src.glob("*.pgm")):
        labels = read_pgm16(pgm)
        render.render_label_map(labels, out / f"{pgm.stem}_labels.png")
        if label_rgb is None:
            label_rgb = render.label_map_rgb(labels)
        produced += 1
    curves_file = src / "curves.json"
    if curves_file.exists():
        from .mining import FlowCurve

        def parse(obj):
            return FlowCurve(
                points=np.asarray(obj["points"], dtype=np.float64),
                children=[parse(c) for c in obj["children"]],
                psi_id=obj.get("psi_id", -1),
            )

        payload = load_json(curves_file)
        curves = [parse(c["curve"]) for c in payload.get("curves", [])]
        if curves:
            if label_rgb is not None:
                render.render_curves(curves, out / "curves.png", base=label_rgb)
            else:
                hw = _curves_extent(curves)
                render.render_curves(curves, out / "curves.png", shape=hw)
            produced += 1
    if produced == 0:
        raise ValidationError(f"nothing to render in {src}")
    return 0


def _curves_extent(curves) -> tuple:
    def walk(c):
        yield c.points
        for child in c.children:
            yield from walk(child)

    pts = np.vstack([p for c in curves for p in walk(c)])
    return (int(pts[:, 1].max()) + 8, int(pts[:, 0].max()) + 8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coherentflow",
        description="Motion-field analysis: thermal energy fields, coherent "
        "motions, semantic regions, activity recognition, and recurrent "
        "activity mining.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_in in (
        ("synth", cmd_synth, False),
        ("detect", cmd_detect, True),
        ("regions", cmd_regions, True),
        ("recognize", cmd_recognize, True),
        ("mine", cmd_mine, True),
        ("render", cmd_render, True),
    ):
        p = sub.add_parser(name)
        if name != "render":
            p.add_argument("--config", required=True)
        if needs_in:
            p.add_argument("--in", dest="indir", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, json.JSONDecodeError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CoherentFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - map unexpected failures to exit 3
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
