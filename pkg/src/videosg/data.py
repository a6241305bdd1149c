"""Dataset payloads and JSONL serialization.

A dataset file is JSON Lines: a header record first, then one record per
video. The header pins the label space (class count, predicate arities) and
the feature widths so ingestion can validate every row against it.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geom import BBox
from .tracker import Detection
from .validation import check_distribution

FORMAT_NAME = "videosg.dataset"
FORMAT_VERSION = 1


@dataclass
class DatasetHeader:
    num_classes: int
    attention_arity: int
    spatial_arity: int
    contact_arity: int
    d_feat: int
    union_width: int

    def to_json(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "num_classes": self.num_classes,
            "attention_arity": self.attention_arity,
            "spatial_arity": self.spatial_arity,
            "contact_arity": self.contact_arity,
            "d_feat": self.d_feat,
            "union_width": self.union_width,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetHeader":
        if obj.get("format") != FORMAT_NAME:
            raise ValueError(f"not a dataset header: format={obj.get('format')!r}")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset version {obj.get('version')!r}")
        return cls(
            num_classes=int(obj["num_classes"]),
            attention_arity=int(obj["attention_arity"]),
            spatial_arity=int(obj["spatial_arity"]),
            contact_arity=int(obj["contact_arity"]),
            d_feat=int(obj["d_feat"]),
            union_width=int(obj["union_width"]),
        )


@dataclass
class FrameObject:
    detection_id: int
    box: BBox
    class_dist: np.ndarray
    feature: np.ndarray
    gt_class: int | None = None


@dataclass
class RelationAnnotation:
    subject_id: int
    object_id: int
    attention: int
    spatial: tuple[int, ...] = ()
    contact: tuple[int, ...] = ()


@dataclass
class FramePayload:
    frame_index: int
    objects: list[FrameObject] = field(default_factory=list)
    relations: list[RelationAnnotation] = field(default_factory=list)
    unions: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


@dataclass
class VideoPayload:
    video_id: str
    frames: list[FramePayload] = field(default_factory=list)
    timestamps: list[float] | None = None

    def detections(self) -> list[list[Detection]]:
        """Tracker-facing view: one Detection list per frame, in order."""
        out = []
        for fr in self.frames:
            out.append([
                Detection(frame_index=fr.frame_index, detection_id=o.detection_id,
                          box=o.box, class_dist=o.class_dist, feature=o.feature)
                for o in fr.objects
            ])
        return out

    def object_count(self) -> int:
        return sum(len(fr.objects) for fr in self.frames)


@dataclass
class Dataset:
    header: DatasetHeader
    videos: list[VideoPayload]


def _round_floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float64)]


def video_to_json(video: VideoPayload) -> dict:
    frames = []
    for fr in video.frames:
        objs = []
        for o in fr.objects:
            rec = {
                "id": o.detection_id,
                "box": _round_floats(o.box.as_array()),
                "class_dist": _round_floats(o.class_dist),
                "feature": _round_floats(o.feature),
            }
            if o.gt_class is not None:
                rec["gt_class"] = int(o.gt_class)
            objs.append(rec)
        rels = [
            {"subject": r.subject_id, "object": r.object_id, "attention": int(r.attention),
             "spatial": [int(i) for i in r.spatial], "contact": [int(i) for i in r.contact]}
            for r in fr.relations
        ]
        unions = [
            {"subject": int(s), "object": int(t), "feature": _round_floats(u)}
            for (s, t), u in sorted(fr.unions.items())
        ]
        frames.append({"frame_index": fr.frame_index, "objects": objs,
                       "relations": rels, "unions": unions})
    rec = {"video_id": video.video_id, "frames": frames}
    if video.timestamps is not None:
        rec["timestamps"] = _round_floats(video.timestamps)
    return rec


def _parse_video(obj: dict, header: DatasetHeader, where: str) -> VideoPayload:
    frames = []
    for fi, fr in enumerate(obj.get("frames", [])):
        objects = []
        seen_ids = set()
        for o in fr.get("objects", []):
            det_id = int(o["id"])
            if det_id in seen_ids:
                raise ValueError(f"{where}: duplicate detection id {det_id} in frame {fi}")
            seen_ids.add(det_id)
            dist = check_distribution(o["class_dist"], f"{where} class_dist")
            if dist.size != header.num_classes:
                raise ValueError(
                    f"{where}: class_dist length {dist.size} != header num_classes "
                    f"{header.num_classes}")
            feat = np.asarray(o["feature"], dtype=np.float64)
            if feat.size != header.d_feat:
                raise ValueError(
                    f"{where}: feature length {feat.size} != header d_feat {header.d_feat}")
            gt = o.get("gt_class")
            if gt is not None:
                gt = int(gt)
                if not 0 <= gt < header.num_classes:
                    raise ValueError(f"{where}: gt_class {gt} out of range")
            box = BBox(*[float(v) for v in o["box"]])
            objects.append(FrameObject(det_id, box, dist, feat, gt))
        relations = []
        for r in fr.get("relations", []):
            att = int(r["attention"])
            if not 0 <= att < header.attention_arity:
                raise ValueError(f"{where}: attention label {att} out of range")
            spa = tuple(int(i) for i in r.get("spatial", []))
            con = tuple(int(i) for i in r.get("contact", []))
            if any(not 0 <= i < header.spatial_arity for i in spa):
                raise ValueError(f"{where}: spatial label out of range: {spa}")
            if any(not 0 <= i < header.contact_arity for i in con):
                raise ValueError(f"{where}: contact label out of range: {con}")
            if int(r["subject"]) not in seen_ids or int(r["object"]) not in seen_ids:
                raise ValueError(f"{where}: relation references unknown detection id")
            relations.append(RelationAnnotation(int(r["subject"]), int(r["object"]),
                                                att, spa, con))
        unions = {}
        for u in fr.get("unions", []):
            vec = np.asarray(u["feature"], dtype=np.float64)
            if vec.size != header.union_width:
                raise ValueError(
                    f"{where}: union feature length {vec.size} != header union_width "
                    f"{header.union_width}")
            unions[(int(u["subject"]), int(u["object"]))] = vec
        frames.append(FramePayload(int(fr["frame_index"]), objects, relations, unions))
    ts = obj.get("timestamps")
    return VideoPayload(str(obj["video_id"]), frames,
                        None if ts is None else [float(t) for t in ts])


def write_dataset(path: str, dataset: Dataset) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(dataset.header.to_json(), sort_keys=True,
                            separators=(",", ":")) + "\n")
        for video in dataset.videos:
            fh.write(json.dumps(video_to_json(video), sort_keys=True,
                                separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def read_dataset(path: str) -> Dataset:
    videos = []
    header = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if header is None:
                header = DatasetHeader.from_json(obj)
                continue
            try:
                videos.append(_parse_video(obj, header, f"{path}:{lineno}"))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed video record: {exc}") from exc
    if header is None:
        raise ValueError(f"{path}: empty dataset (missing header line)")
    return Dataset(header, videos)


def synthesize_union_feature(box_s: BBox, box_o: BBox, feat_s: np.ndarray,
                             feat_o: np.ndarray, width: int) -> np.ndarray:
    """Deterministic stand-in for a pooled union-region feature.

    A fixed cosine projection of the two boxes and chunk means of the two
    features: no randomness, no learned state, stable across runs. Used when
    an input file carries no union features of its own.
    """
    base = np.concatenate([
        box_s.as_array(), box_o.as_array(),
        [float(np.mean(feat_s)), float(np.mean(feat_o)),
         float(np.std(feat_s)), float(np.std(feat_o))],
    ])
    k = np.arange(width, dtype=np.float64).reshape(-1, 1)
    j = np.arange(base.size, dtype=np.float64).reshape(1, -1)
    basis = np.cos((k + 1.0) * (j + 1.0) * 0.7)
    out = basis @ base
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


def union_for_pair(frame: FramePayload, subject_id: int, object_id: int,
                   width: int) -> np.ndarray:
    """The frame's stored union feature for a pair, or the synthesized fallback."""
    key = (subject_id, object_id)
    if key in frame.unions:
        return frame.unions[key]
    by_id = {o.detection_id: o for o in frame.objects}
    s, o = by_id[subject_id], by_id[object_id]
    return synthesize_union_feature(s.box, o.box, s.feature, o.feature, width)
