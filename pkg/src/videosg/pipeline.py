"""Run orchestration: configuration, ingestion, and the five commands.

Each command (synth, track, train, eval, report) reads what it needs from an
output directory, writes its artifacts there, and drops a manifest recording
the fully resolved configuration, its hash, the seed, library versions, and
the hashes of every input and output file. Artifacts carry no wall-clock
state, so the same config and seed reproduce them byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, sgeval
from .data import Dataset, VideoPayload, read_dataset, write_dataset
from .sgmodel import ModelConfig, SceneGraphClassifier
from .synth import SynthConfig, generate
from .tracker import cluster_and_track, label_grouping, track_video, write_tracklet_dump
from .validation import check_distribution


@dataclass
class TrackerSettings:
    max_gap: int = 50
    feat_weight: float = 2.0
    iou_weight: float = 1.0
    l1_weight: float = 2.0
    reject_threshold: float = 0.5
    nms_threshold: float | None = None
    expiry_mode: str = "frames"


@dataclass
class TrainSettings:
    epochs: int = 500
    lr: float = 1e-3
    weight_decay: float = 0.0
    shuffle: bool = True
    stop_accuracy: float | None = 0.97
    stop_recall: float | None = 0.92
    stop_recall_at: int = 10
    eval_every: int = 25
    verbose: int = 0


@dataclass
class EvalSettings:
    ks: tuple[int, ...] = (10, 20, 50)
    constraint: str = "both"  # with | none | both


@dataclass
class RunConfig:
    task: str = "sgcls"
    seed: int = 0
    out_dir: str = "runs/toy"
    dataset_path: str | None = None
    context_mode: str | None = None   # None: task default
    subject_class: int | None = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    tracker: TrackerSettings = field(default_factory=TrackerSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def resolved_context_mode(self) -> str:
        if self.context_mode is not None:
            return self.context_mode
        # detection-style runs group by predicted label (cheap and robust to
        # duplicate boxes); classification-style runs use the tracker
        return "labels" if self.task == "sgdet" else "tracklets"

    def match_mode(self) -> str:
        return "iou" if self.task == "sgdet" else "identity"

    def dataset_file(self) -> str:
        return self.dataset_path or os.path.join(self.out_dir, "dataset.jsonl")

    def validate(self) -> "RunConfig":
        if self.task not in ("sgcls", "sgdet"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.eval.constraint not in ("with", "none", "both"):
            raise ValueError(f"unknown constraint mode {self.eval.constraint!r}")
        if self.tracker.max_gap < 1:
            raise ValueError("tracker.max_gap must be positive")
        for name in ("feat_weight", "iou_weight", "l1_weight"):
            if getattr(self.tracker, name) < 0:
                raise ValueError(f"tracker.{name} must be nonnegative")
        if not 0.0 <= self.tracker.reject_threshold <= 1.0:
            raise ValueError("tracker.reject_threshold must lie in [0, 1]")
        self.model.validate()
        self.synth.validate()
        return self

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["eval"]["ks"] = list(self.eval.ks)
        return out


def _merge_dataclass(instance, overrides: dict):
    known = {f.name for f in dataclasses.fields(instance)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown config keys for {type(instance).__name__}: "
                         f"{sorted(unknown)}")
    return dataclasses.replace(instance, **overrides)


def config_from_dict(obj: dict) -> RunConfig:
    """Build a RunConfig from a (possibly partial) JSON object.

    Task-dependent tracker defaults are applied before explicit overrides:
    detection runs zero the feature and box cost weights so association rests
    on class evidence alone, which holds up better when boxes come from a
    detector instead of ground truth.
    """
    obj = dict(obj)
    task = obj.get("task", "sgcls")
    cfg = RunConfig(task=task)
    if task == "sgdet":
        cfg.tracker = TrackerSettings(feat_weight=0.0, iou_weight=0.0, l1_weight=0.0)
    for key in ("seed", "out_dir", "dataset_path", "context_mode", "subject_class"):
        if key in obj:
            setattr(cfg, key, obj[key])
    if "synth" in obj:
        cfg.synth = _merge_dataclass(cfg.synth, obj["synth"])
    if "tracker" in obj:
        cfg.tracker = _merge_dataclass(cfg.tracker, obj["tracker"])
    if "model" in obj:
        cfg.model = _merge_dataclass(cfg.model, obj["model"])
    if "train" in obj:
        cfg.train = _merge_dataclass(cfg.train, obj["train"])
    if "eval" in obj:
        ev = dict(obj["eval"])
        if "ks" in ev:
            ev["ks"] = tuple(int(k) for k in ev["ks"])
        cfg.eval = _merge_dataclass(cfg.eval, ev)
    unknown = set(obj) - {"task", "seed", "out_dir", "dataset_path", "context_mode",
                          "subject_class", "synth", "tracker", "model", "train", "eval"}
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    return cfg.validate()


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    base = {}
    if path is not None:
        with open(path) as fh:
            base = json.load(fh)
    if overrides:
        base.update(overrides)
    return config_from_dict(base)


# ---- manifest helpers ----------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, inputs: list[str],
                   outputs: list[str]) -> str:
    config_json = cfg.to_json()
    manifest = {
        "command": command,
        "config": config_json,
        "config_hash": hashlib.sha256(_canonical_json(config_json).encode()).hexdigest(),
        "seed": cfg.seed,
        "versions": {
            "videosg": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "inputs": {os.path.basename(p): _sha256_file(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256_file(p) for p in outputs},
    }
    path = os.path.join(cfg.out_dir, f"manifest_{command}.json")
    _atomic_write_text(path, _canonical_json(manifest) + "\n")
    return path


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---- ingestion view ------------------------------------------------------

@dataclass
class FrameRecord:
    """Flat per-frame ingestion record used by downstream consumers that do
    not care about video grouping."""
    video_id: str
    frame_index: int
    timestamp: float | None
    objects: list
    relations: list
    unions: dict


def ingest(path: str) -> list[FrameRecord]:
    """Read and validate a dataset file into flat frame records.

    Validation happens in the reader: distributions off by at most 1e-4 are
    renormalized, anything worse is rejected with the offending line number.
    """
    ds = read_dataset(path)
    records = []
    for video in ds.videos:
        for i, fr in enumerate(video.frames):
            ts = video.timestamps[i] if video.timestamps is not None else None
            records.append(FrameRecord(video.video_id, fr.frame_index, ts,
                                       fr.objects, fr.relations, fr.unions))
    return records


def convert_external_annotations(path: str) -> Dataset:
    """Stub for adapting third-party annotation exports.

    Real detector output formats vary too much to cover blindly; write a
    small adapter that fills VideoPayload/FramePayload objects and emits
    them with write_dataset. Untested against any specific external format.
    """
    raise NotImplementedError("adapt your annotation export to the dataset "
                              "format described in data.py")


# ---- commands ------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> list[str]:
    os.makedirs(cfg.out_dir, exist_ok=True)
    dataset = generate(cfg.synth, seed=cfg.seed)
    path = cfg.dataset_file()
    write_dataset(path, dataset)
    write_manifest(cfg, "synth", [], [path])
    return [path]


def _split_dataset(ds: Dataset, holdout: int = 0) -> tuple[list[VideoPayload], list[VideoPayload]]:
    if holdout <= 0:
        return ds.videos, []
    return ds.videos[:-holdout], ds.videos[-holdout:]


def cmd_track(cfg: RunConfig) -> list[str]:
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = read_dataset(cfg.dataset_file())
    t = cfg.tracker
    params = {"max_gap": t.max_gap, "feat_weight": t.feat_weight,
              "iou_weight": t.iou_weight, "l1_weight": t.l1_weight,
              "reject_threshold": t.reject_threshold, "expiry_mode": t.expiry_mode}
    out_path = os.path.join(cfg.out_dir, "tracklets.jsonl")
    tmp = out_path + ".tmp"
    with open(tmp, "w") as fh:
        for video in ds.videos:
            frames = video.detections()
            if t.nms_threshold is not None:
                result = cluster_and_track(frames, nms_threshold=t.nms_threshold,
                                           timestamps=video.timestamps, **params)
            else:
                result = track_video(frames, timestamps=video.timestamps, **params)
            for tr in result.tracklets:
                record = {
                    "video_id": video.video_id,
                    "track_id": tr.id,
                    "members": [[f, d] for f, d in tr.members],
                    "last_frame": tr.last_frame,
                    "size": len(tr.members),
                }
                fh.write(_canonical_json(record) + "\n")
    os.replace(tmp, out_path)
    write_manifest(cfg, "track", [cfg.dataset_file()], [out_path])
    return [out_path]


def _estimator_from_config(cfg: RunConfig) -> SceneGraphClassifier:
    m, t, tr = cfg.model, cfg.tracker, cfg.train
    return SceneGraphClassifier(
        num_classes=m.num_classes, attention_arity=m.attention_arity,
        spatial_arity=m.spatial_arity, contact_arity=m.contact_arity,
        d_feat=m.d_feat, box_width=m.box_width, dist_width=m.dist_width,
        semantic_width=m.semantic_width, visual_width=m.visual_width,
        spatial_width=m.spatial_width, union_width=m.union_width,
        obj_layers=m.obj_layers, obj_heads=m.obj_heads, obj_ff=m.obj_ff,
        class_hidden=m.class_hidden, spatial_layers=m.spatial_layers,
        temporal_layers=m.temporal_layers, rel_heads=m.rel_heads, rel_ff=m.rel_ff,
        dropout=m.dropout, context_mode=cfg.resolved_context_mode(),
        subject_class=cfg.subject_class, nms_threshold=t.nms_threshold,
        max_gap=t.max_gap, feat_weight=t.feat_weight, iou_weight=t.iou_weight,
        l1_weight=t.l1_weight, reject_threshold=t.reject_threshold,
        epochs=tr.epochs, lr=tr.lr, weight_decay=tr.weight_decay, seed=cfg.seed,
        shuffle=tr.shuffle, stop_accuracy=tr.stop_accuracy,
        stop_recall=tr.stop_recall, stop_recall_at=tr.stop_recall_at,
        eval_every=tr.eval_every, verbose=tr.verbose)


def _check_dataset_matches(cfg: RunConfig, ds: Dataset) -> None:
    h, m = ds.header, cfg.model
    mismatches = []
    for name, have, want in [
        ("num_classes", h.num_classes, m.num_classes),
        ("attention_arity", h.attention_arity, m.attention_arity),
        ("spatial_arity", h.spatial_arity, m.spatial_arity),
        ("contact_arity", h.contact_arity, m.contact_arity),
        ("d_feat", h.d_feat, m.d_feat),
        ("union_width", h.union_width, m.union_width),
    ]:
        if have != want:
            mismatches.append(f"{name}: dataset {have} vs model {want}")
    if mismatches:
        raise ValueError("dataset/model mismatch: " + "; ".join(mismatches))


def cmd_train(cfg: RunConfig) -> list[str]:
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = read_dataset(cfg.dataset_file())
    _check_dataset_matches(cfg, ds)
    est = _estimator_from_config(cfg)
    est.fit(ds.videos)
    ckpt = os.path.join(cfg.out_dir, "model.ckpt")
    est.save(ckpt)
    history = [{k: v for k, v in rec.items() if k != "elapsed"}
               for rec in est.history_]
    hist_path = os.path.join(cfg.out_dir, "history.json")
    _atomic_write_text(hist_path, _canonical_json({"epochs": history}) + "\n")
    write_manifest(cfg, "train", [cfg.dataset_file()], [ckpt, hist_path])
    return [ckpt, hist_path]


def _constraints(cfg: RunConfig) -> list[str]:
    return {"with": ["with_constraint"], "none": ["no_constraint"],
            "both": ["with_constraint", "no_constraint"]}[cfg.eval.constraint]


def cmd_eval(cfg: RunConfig) -> list[str]:
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = read_dataset(cfg.dataset_file())
    _check_dataset_matches(cfg, ds)
    ckpt = os.path.join(cfg.out_dir, "model.ckpt")
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"no checkpoint at {ckpt}; run the train command first")
    est = _estimator_from_config(cfg).load_model(ckpt)
    predictions = est.predict(ds.videos)

    pred_path = os.path.join(cfg.out_dir, "predictions.jsonl")
    records = []
    for video, pred in zip(ds.videos, predictions):
        by_frame: dict[int, dict] = {}
        for f, d, cls, dist in pred.object_rows:
            rec = by_frame.setdefault(f, {"video_id": video.video_id, "frame_index": f,
                                          "objects": [], "triplets": []})
            rec["objects"].append({"id": d, "pred_class": cls,
                                   "dist": [float(x) for x in dist]})
        for t in pred.triplets:
            by_frame[t.frame_index]["triplets"].append(sgeval.triplet_to_json(t))
        records.extend(by_frame[f] for f in sorted(by_frame))
    sgeval.write_predictions(pred_path, records)

    graphs, by_frame_preds, labels = {}, {}, []
    for video, pred in zip(ds.videos, predictions):
        for g in sgeval.frame_graphs_from_payload(video):
            graphs[(video.video_id, g.frame_index)] = g
        for t in pred.triplets:
            by_frame_preds.setdefault((video.video_id, t.frame_index), []).append(t)
        gt = {(fr.frame_index, o.detection_id): o.gt_class
              for fr in video.frames for o in fr.objects}
        for f, d, cls, _ in pred.object_rows:
            if gt.get((f, d)) is not None:
                labels.append((cls, gt[(f, d)]))

    arities = {"attention": cfg.model.attention_arity,
               "spatial": cfg.model.spatial_arity,
               "contact": cfg.model.contact_arity}
    outputs = [pred_path]
    for constraint in _constraints(cfg):
        report = sgeval.evaluate(by_frame_preds, graphs, labels, arities,
                                 task=cfg.task, constraint=constraint,
                                 match_mode=cfg.match_mode(), ks=cfg.eval.ks)
        path = os.path.join(cfg.out_dir, f"metrics_{constraint}.json")
        _atomic_write_text(path, _canonical_json(report.to_json()) + "\n")
        outputs.append(path)
    write_manifest(cfg, "eval", [cfg.dataset_file(), ckpt], outputs)
    return outputs


def cmd_report(cfg: RunConfig) -> list[str]:
    lines = []
    inputs = []
    for constraint in _constraints(cfg):
        path = os.path.join(cfg.out_dir, f"metrics_{constraint}.json")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no metrics at {path}; run the eval command first")
        inputs.append(path)
        with open(path) as fh:
            obj = json.load(fh)
        report = sgeval.MetricsReport(
            task=obj["task"], constraint=obj["constraint"],
            ks=tuple(sorted(int(k) for k in obj["recall"])),
            recall={int(k): v for k, v in obj["recall"].items()},
            mean_recall={int(k): v for k, v in obj["mean_recall"].items()},
            object_accuracy=obj["object_accuracy"],
            frame_count=obj["frame_count"],
            evaluated_frame_count=obj["evaluated_frame_count"])
        lines.append(report.render_table())
    text = "\n\n".join(lines) + "\n"
    path = os.path.join(cfg.out_dir, "report.txt")
    _atomic_write_text(path, text)
    write_manifest(cfg, "report", inputs, [path])
    print(text, end="")
    return [path]


COMMANDS = {
    "synth": cmd_synth,
    "track": cmd_track,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def run(cfg: RunConfig, command: str) -> list[str]:
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; choices: {sorted(COMMANDS)}")
    return COMMANDS[command](cfg)
