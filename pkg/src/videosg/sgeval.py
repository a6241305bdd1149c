"""Scene graph evaluation: triplet ranking, Recall@K, mean recall, accuracy.

Recall here is image-level: a frame's recall is the fraction of its ground
truth triplets matched by a top-K prediction, and the corpus number averages
over frames that carry at least one ground truth triplet. ``with_constraint``
keeps one predicate per relationship category per subject-object pair (the
category argmax); ``no_constraint`` keeps every predicate score.

Two grounding modes: ``identity`` compares detection ids plus predicted
labels (classification tasks, boxes are given), ``iou`` requires box overlap
strictly above 0.5 plus label agreement (detection tasks).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geom import BBox, iou

CATEGORIES = ("attention", "spatial", "contact")


@dataclass(frozen=True)
class TripletPrediction:
    frame_index: int
    pair_index: int
    subject_id: int
    object_id: int
    subject_class: int
    object_class: int
    subject_box: BBox
    object_box: BBox
    subject_score: float
    object_score: float
    category: str
    predicate: int
    predicate_score: float
    score: float

    def global_predicate(self, arities: dict[str, int]) -> int:
        offset = 0
        for cat in CATEGORIES:
            if cat == self.category:
                return offset + self.predicate
            offset += arities[cat]
        raise ValueError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class GroundTruthObject:
    detection_id: int
    box: BBox
    label: int


@dataclass(frozen=True)
class GroundTruthTriplet:
    subject_id: int
    object_id: int
    category: str
    predicate: int


@dataclass
class FrameGraph:
    frame_index: int
    objects: list[GroundTruthObject] = field(default_factory=list)
    triplets: list[GroundTruthTriplet] = field(default_factory=list)

    def object_by_id(self, det_id: int) -> GroundTruthObject:
        for o in self.objects:
            if o.detection_id == det_id:
                return o
        raise KeyError(f"no ground truth object with id {det_id}")


def frame_graphs_from_payload(video) -> list[FrameGraph]:
    """Expand a video payload's annotations into per-frame graphs.

    Each relation annotation becomes one attention triplet plus one triplet
    per listed spatial and contact predicate.
    """
    out = []
    for fr in video.frames:
        objs = [GroundTruthObject(o.detection_id, o.box, int(o.gt_class))
                for o in fr.objects if o.gt_class is not None]
        trips = []
        for r in fr.relations:
            trips.append(GroundTruthTriplet(r.subject_id, r.object_id, "attention", r.attention))
            for i in r.spatial:
                trips.append(GroundTruthTriplet(r.subject_id, r.object_id, "spatial", int(i)))
            for i in r.contact:
                trips.append(GroundTruthTriplet(r.subject_id, r.object_id, "contact", int(i)))
        out.append(FrameGraph(fr.frame_index, objs, trips))
    return out


def match_detection(predictions: list[tuple[BBox, int, float]],
                    ground_truths: list[tuple[BBox, int]],
                    iou_threshold: float = 0.5) -> list[int | None]:
    """Greedy detection grounding: highest-scoring prediction first, each
    ground truth claimed at most once, a claim needs IoU strictly above the
    threshold and equal labels. Returns the claimed gt index per prediction,
    aligned with the input order.
    """
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i][2], i))
    claimed: set[int] = set()
    result: list[int | None] = [None] * len(predictions)
    for i in order:
        box, label, _ = predictions[i]
        best = None
        best_iou = iou_threshold
        for j, (gbox, glabel) in enumerate(ground_truths):
            if j in claimed or glabel != label:
                continue
            ov = iou(box, gbox)
            if ov > best_iou:
                best_iou = ov
                best = j
        if best is not None:
            claimed.add(best)
            result[i] = best
    return result


def rank_triplets(predictions: list[TripletPrediction], mode: str,
                  arities: dict[str, int]) -> list[TripletPrediction]:
    """Order one frame's candidate triplets for Recall@K.

    ``no_constraint`` ranks every candidate. ``with_constraint`` first keeps
    only the argmax predicate per (pair, category), ties to the lower
    predicate index. Sorting is by descending combined score with
    deterministic ties on (pair index, global predicate index).
    """
    if mode == "with_constraint":
        best: dict[tuple[int, str], TripletPrediction] = {}
        for t in predictions:
            key = (t.pair_index, t.category)
            cur = best.get(key)
            if cur is None or t.predicate_score > cur.predicate_score or (
                    t.predicate_score == cur.predicate_score and t.predicate < cur.predicate):
                best[key] = t
        pool = list(best.values())
    elif mode == "no_constraint":
        pool = list(predictions)
    else:
        raise ValueError(f"unknown constraint mode {mode!r}")
    return sorted(pool, key=lambda t: (-t.score, t.pair_index, t.global_predicate(arities)))


def _triplet_hit(pred: TripletPrediction, gt: GroundTruthTriplet, graph: FrameGraph,
                 match_mode: str) -> bool:
    if pred.category != gt.category or pred.predicate != gt.predicate:
        return False
    gs = graph.object_by_id(gt.subject_id)
    go = graph.object_by_id(gt.object_id)
    if match_mode == "identity":
        return (pred.subject_id == gt.subject_id and pred.object_id == gt.object_id
                and pred.subject_class == gs.label and pred.object_class == go.label)
    if match_mode == "iou":
        return (pred.subject_class == gs.label and pred.object_class == go.label
                and iou(pred.subject_box, gs.box) > 0.5
                and iou(pred.object_box, go.box) > 0.5)
    raise ValueError(f"unknown match mode {match_mode!r}")


def recall_at_k(ranked: list[TripletPrediction], graph: FrameGraph, k: int,
                match_mode: str = "identity") -> tuple[int, int]:
    """Hits and ground-truth count for one frame at cutoff ``k``.

    A gt triplet is hit when any top-k prediction grounds both endpoints and
    names the same predicate; each gt counts once.
    """
    top = ranked[:k]
    hits = 0
    for gt in graph.triplets:
        if any(_triplet_hit(p, gt, graph, match_mode) for p in top):
            hits += 1
    return hits, len(graph.triplets)


def object_accuracy(predicted_labels, gt_labels) -> float:
    """Fraction of ground-truth objects predicted with the correct class."""
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    gt_labels = np.asarray(gt_labels, dtype=np.int64)
    if predicted_labels.shape != gt_labels.shape:
        raise ValueError("label arrays must align")
    if gt_labels.size == 0:
        return 0.0
    return float(np.mean(predicted_labels == gt_labels))


@dataclass
class MetricsReport:
    task: str
    constraint: str
    ks: tuple[int, ...]
    recall: dict[int, float]
    mean_recall: dict[int, float]
    object_accuracy: float
    frame_count: int
    evaluated_frame_count: int

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "constraint": self.constraint,
            "recall": {str(k): self.recall[k] for k in self.ks},
            "mean_recall": {str(k): self.mean_recall[k] for k in self.ks},
            "object_accuracy": self.object_accuracy,
            "frame_count": self.frame_count,
            "evaluated_frame_count": self.evaluated_frame_count,
        }

    def render_table(self) -> str:
        rows = [("metric", "value")]
        for k in self.ks:
            rows.append((f"R@{k}", f"{self.recall[k]:.4f}"))
        for k in self.ks:
            rows.append((f"mR@{k}", f"{self.mean_recall[k]:.4f}"))
        rows.append(("obj acc", f"{self.object_accuracy:.4f}"))
        rows.append(("frames", str(self.frame_count)))
        rows.append(("frames w/ gt", str(self.evaluated_frame_count)))
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {value}" for name, value in rows]
        header = f"{self.task} ({self.constraint})"
        return "\n".join([header, "-" * len(header)] + lines)


def evaluate(frame_predictions: dict[tuple[str, int], list[TripletPrediction]],
             frame_graphs: dict[tuple[str, int], FrameGraph],
             object_labels: list[tuple[int, int]],
             arities: dict[str, int],
             task: str = "sgcls",
             constraint: str = "with_constraint",
             match_mode: str = "identity",
             ks: tuple[int, ...] = (10, 20, 50)) -> MetricsReport:
    """Corpus-level metrics.

    ``frame_predictions`` and ``frame_graphs`` are keyed by (video id, frame
    index); ``object_labels`` is a flat list of (predicted, gt) class pairs
    for the accuracy number. Mean recall groups hits by global predicate
    index and averages per-class corpus recalls over classes that occur.
    """
    ks = tuple(sorted(ks))
    total = {k: 0.0 for k in ks}
    frames_with_gt = 0
    num_predicates = sum(arities[c] for c in CATEGORIES)
    class_hits = {k: np.zeros(num_predicates) for k in ks}
    class_gt = np.zeros(num_predicates)

    for key, graph in frame_graphs.items():
        if not graph.triplets:
            continue
        frames_with_gt += 1
        ranked = rank_triplets(frame_predictions.get(key, []), constraint, arities)
        for k in ks:
            hits, count = recall_at_k(ranked, graph, k, match_mode)
            total[k] += hits / count
        # per-predicate bookkeeping for mean recall
        for gt in graph.triplets:
            gp = _global_predicate(gt.category, gt.predicate, arities)
            class_gt[gp] += 1
            for k in ks:
                if any(_triplet_hit(p, gt, graph, match_mode) for p in ranked[:k]):
                    class_hits[k][gp] += 1

    recall = {k: (total[k] / frames_with_gt if frames_with_gt else 0.0) for k in ks}
    mean_recall = {}
    occupied = class_gt > 0
    for k in ks:
        if occupied.any():
            mean_recall[k] = float(np.mean(class_hits[k][occupied] / class_gt[occupied]))
        else:
            mean_recall[k] = 0.0
    acc = object_accuracy([p for p, _ in object_labels], [g for _, g in object_labels]) \
        if object_labels else 0.0
    return MetricsReport(task=task, constraint=constraint, ks=ks, recall=recall,
                         mean_recall=mean_recall, object_accuracy=acc,
                         frame_count=len(frame_graphs),
                         evaluated_frame_count=frames_with_gt)


def _global_predicate(category: str, predicate: int, arities: dict[str, int]) -> int:
    offset = 0
    for cat in CATEGORIES:
        if cat == category:
            return offset + predicate
        offset += arities[cat]
    raise ValueError(f"unknown category {category!r}")


# ---- prediction files ----------------------------------------------------

def write_predictions(path: str, records: list[dict]) -> None:
    """Line-delimited prediction dump, one record per frame."""
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def read_predictions(path: str) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return out


def triplet_to_json(t: TripletPrediction) -> dict:
    return {
        "pair_index": t.pair_index,
        "subject_id": t.subject_id, "object_id": t.object_id,
        "subject_class": t.subject_class, "object_class": t.object_class,
        "subject_box": [float(v) for v in t.subject_box.as_array()],
        "object_box": [float(v) for v in t.object_box.as_array()],
        "subject_score": t.subject_score, "object_score": t.object_score,
        "category": t.category, "predicate": t.predicate,
        "predicate_score": t.predicate_score, "score": t.score,
    }


def triplet_from_json(frame_index: int, obj: dict) -> TripletPrediction:
    return TripletPrediction(
        frame_index=frame_index,
        pair_index=int(obj["pair_index"]),
        subject_id=int(obj["subject_id"]), object_id=int(obj["object_id"]),
        subject_class=int(obj["subject_class"]), object_class=int(obj["object_class"]),
        subject_box=BBox(*obj["subject_box"]), object_box=BBox(*obj["object_box"]),
        subject_score=float(obj["subject_score"]), object_score=float(obj["object_score"]),
        category=str(obj["category"]), predicate=int(obj["predicate"]),
        predicate_score=float(obj["predicate_score"]), score=float(obj["score"]),
    )
