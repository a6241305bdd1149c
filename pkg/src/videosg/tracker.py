"""Online coarse tracklet construction.

Detections arrive frame by frame and are matched to active tracklets with a
padded Hungarian assignment over a composite cost (class-distribution cosine,
feature cosine, box cost). A matched pair whose class and feature cosine
similarities are both below the rejection threshold is voided and the
detection starts a new tracklet, as do detections routed to padding. A
tracklet that goes unmatched for more than ``max_gap`` key frames becomes
inactive: it is kept (finished tracklets are needed downstream) but excluded
from matching.

The tracker deliberately produces *coarse* sequences: its job is to group
evidence for the downstream transformer, not to be a benchmark-grade tracker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json

import numpy as np
from sklearn.base import BaseEstimator

from .assign import MatchWeights, build_cost_matrix, hungarian
from .geom import BBox, BoxCostWeights, nms_cluster
from .validation import check_distribution

DetKey = tuple[int, int]  # (frame_index, detection_id)


@dataclass
class Detection:
    """One detector output for one frame."""

    frame_index: int
    box: BBox
    class_dist: np.ndarray
    feature: np.ndarray
    detection_id: int = 0

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        self.class_dist = check_distribution(self.class_dist)
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.ndim != 1 or not np.all(np.isfinite(self.feature)):
            raise ValueError("feature must be a finite 1-D vector")

    @property
    def score(self) -> float:
        """Detection confidence: the top class probability."""
        return float(self.class_dist.max())

    @property
    def label(self) -> int:
        return int(self.class_dist.argmax())


@dataclass
class Tracklet:
    """An ordered set of detections believed to be one object instance.

    ``avg_class_dist`` / ``avg_feature`` are arithmetic means over all member
    detections, maintained as running sums so they match batch recomputation
    to machine precision. ``last_box`` is the box of the most recently added
    member.
    """

    id: int
    members: list[DetKey] = field(default_factory=list)
    avg_class_dist: np.ndarray | None = None
    avg_feature: np.ndarray | None = None
    last_box: BBox | None = None
    last_frame: int = -1
    last_timestamp: float = 0.0
    active: bool = True
    _class_sum: np.ndarray | None = None
    _feat_sum: np.ndarray | None = None

    def append(self, det: Detection, timestamp: float | None = None) -> None:
        if self.members and det.frame_index <= self.last_frame:
            raise ValueError("tracklet members must have strictly increasing frames")
        self.members.append((det.frame_index, det.detection_id))
        if self._class_sum is None:
            self._class_sum = det.class_dist.copy()
            self._feat_sum = det.feature.copy()
        else:
            self._class_sum = self._class_sum + det.class_dist
            self._feat_sum = self._feat_sum + det.feature
        n = len(self.members)
        self.avg_class_dist = self._class_sum / n
        self.avg_feature = self._feat_sum / n
        self.last_box = det.box
        self.last_frame = det.frame_index
        if timestamp is not None:
            self.last_timestamp = float(timestamp)

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class TrackResult:
    """Final tracking output for one video.

    ``assignments`` maps every ingested detection to its tracklet and its
    sequence position. For plain tracking the position is the member index;
    with NMS clustering all members of a cluster share their representative's
    position.
    """

    tracklets: list[Tracklet]
    assignments: dict[DetKey, tuple[int, int]]

    def tracklet_of(self, frame_index: int, detection_id: int) -> int:
        return self.assignments[(frame_index, detection_id)][0]


@dataclass
class ObjectSequence:
    """One temporally ordered token sequence for the object transformer."""

    track_id: int
    items: list[tuple[int, int, int]]  # (position, frame_index, detection_id)


class CoarseTracker(BaseEstimator):
    """Online tracklet builder with the padded-Hungarian association step.

    Parameters
    ----------
    max_gap : int or float
        Inactivity horizon: a tracklet with no new member for more than
        ``max_gap`` key frames (or seconds, see ``expiry_mode``) is excluded
        from matching.
    feat_weight, iou_weight, l1_weight : float
        Weights of the feature-cosine, (1 - GIoU) and L1 box terms of the
        matching cost. The class-distribution cosine term has weight 1.
    reject_threshold : float
        A Hungarian match is voided when both the class-distribution cosine
        and the feature cosine fall below this value.
    expiry_mode : {"frames", "seconds"}
        Whether ``max_gap`` counts key frames or elapsed timestamp seconds.
    """

    def __init__(self, max_gap=50, feat_weight=2.0, iou_weight=1.0, l1_weight=2.0,
                 reject_threshold=0.5, expiry_mode="frames"):
        self.max_gap = max_gap
        self.feat_weight = feat_weight
        self.iou_weight = iou_weight
        self.l1_weight = l1_weight
        self.reject_threshold = reject_threshold
        self.expiry_mode = expiry_mode

    def _weights(self) -> MatchWeights:
        return MatchWeights(
            feat_weight=self.feat_weight,
            box=BoxCostWeights(iou_weight=self.iou_weight, l1_weight=self.l1_weight),
            reject_threshold=self.reject_threshold,
        )

    def reset(self) -> "CoarseTracker":
        if self.expiry_mode not in ("frames", "seconds"):
            raise ValueError(f"expiry_mode must be 'frames' or 'seconds', got {self.expiry_mode!r}")
        self._tracklets: list[Tracklet] = []
        self._assignments: dict[DetKey, tuple[int, int]] = {}
        self._next_id = 0
        self._current_frame = -1
        self._current_time = -np.inf
        return self

    @property
    def tracklets(self) -> list[Tracklet]:
        return self._tracklets

    def _gap_of(self, trk: Tracklet, frame_index: int, timestamp: float | None) -> float:
        if self.expiry_mode == "seconds":
            if timestamp is None:
                raise ValueError("expiry_mode='seconds' requires per-frame timestamps")
            return float(timestamp) - trk.last_timestamp
        return float(frame_index - trk.last_frame)

    def step(self, dets: list[Detection], timestamp: float | None = None) -> list[tuple[int, bool]]:
        """Ingest one frame; returns (tracklet_id, is_new) per detection."""
        if not hasattr(self, "_tracklets"):
            self.reset()
        if dets:
            frame = dets[0].frame_index
            if any(d.frame_index != frame for d in dets):
                raise ValueError("all detections in a step must share one frame_index")
            ids = [d.detection_id for d in dets]
            if len(set(ids)) != len(ids):
                raise ValueError("detection ids must be unique within a frame")
        else:
            frame = self._current_frame + 1
        if frame <= self._current_frame:
            raise ValueError(
                f"out-of-order frame {frame}; already processed up to {self._current_frame}"
            )

        active = [t for t in self._tracklets if self._gap_of(t, frame, timestamp) <= self.max_gap]
        weights = self._weights()
        out: list[tuple[int, bool]] = []
        if dets:
            matching = hungarian(build_cost_matrix(dets, active, weights))
            for j, det in enumerate(dets):
                col = matching.perm[j]
                target = active[col] if col < len(active) else None
                if target is not None:
                    dist_sim = _cosine(det.class_dist, target.avg_class_dist)
                    feat_sim = _cosine(det.feature, target.avg_feature)
                    if dist_sim < self.reject_threshold and feat_sim < self.reject_threshold:
                        target = None  # apparent mismatch: void the assignment
                if target is None:
                    target = Tracklet(id=self._next_id)
                    self._next_id += 1
                    self._tracklets.append(target)
                    is_new = True
                else:
                    is_new = False
                target.append(det, timestamp)
                position = len(target) - 1
                self._assignments[(frame, det.detection_id)] = (target.id, position)
                out.append((target.id, is_new))

        self._current_frame = frame
        if timestamp is not None:
            self._current_time = float(timestamp)
        for t in self._tracklets:
            t.active = self._gap_of(t, self._current_frame, timestamp) <= self.max_gap
        return out

    def fit(self, frames: list[list[Detection]], timestamps: list[float] | None = None):
        """Track a whole video. Frames must be ordered by frame index."""
        self.reset()
        for i, dets in enumerate(frames):
            ts = timestamps[i] if timestamps is not None else None
            self.step(dets, timestamp=ts)
        self.tracklets_ = self._tracklets
        self.result_ = TrackResult(tracklets=self._tracklets, assignments=dict(self._assignments))
        return self

    def fit_predict(self, frames, timestamps=None) -> list[list[int]]:
        """Track a video and return per-frame tracklet ids, one list per frame."""
        self.fit(frames, timestamps)
        labels = []
        for dets in frames:
            labels.append([self.result_.assignments[(d.frame_index, d.detection_id)][0] for d in dets])
        return labels


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def track_video(frames: list[list[Detection]], timestamps=None, **tracker_params) -> TrackResult:
    """Run the coarse tracker over ordered frames and return all tracklets."""
    return CoarseTracker(**tracker_params).fit(frames, timestamps).result_


def cluster_and_track(frames: list[list[Detection]], nms_threshold: float = 0.5,
                      timestamps=None, **tracker_params) -> TrackResult:
    """NMS-cluster each frame's detections, track the cluster representatives,
    then attach every cluster member to its representative's tracklet and
    sequence position.

    Used when the detector emits several boxes per object: positions stay
    invariant to the number of duplicate detections in a frame.
    """
    tracker = CoarseTracker(**tracker_params).reset()
    member_map: dict[DetKey, tuple[int, int]] = {}
    for i, dets in enumerate(frames):
        ts = timestamps[i] if timestamps is not None else None
        clusters = nms_cluster([(d.box, d.score) for d in dets], nms_threshold) if dets else []
        reps = [dets[c.representative] for c in clusters]
        tracker.step(reps, timestamp=ts)
        for cluster in clusters:
            rep = dets[cluster.representative]
            tid, pos = tracker._assignments[(rep.frame_index, rep.detection_id)]
            for m in cluster.members:
                det = dets[m]
                member_map[(det.frame_index, det.detection_id)] = (tid, pos)
    return TrackResult(tracklets=tracker.tracklets, assignments=member_map)


def label_grouping(frames: list[list[Detection]]) -> list[ObjectSequence]:
    """Fast sequence builder: detections sharing an argmax class form one
    temporally ordered sequence; same-class detections in one frame share a
    position.
    """
    groups: dict[int, ObjectSequence] = {}
    frame_rank: dict[int, dict[int, int]] = {}
    for dets in frames:
        for det in dets:
            label = det.label
            if label not in groups:
                groups[label] = ObjectSequence(track_id=len(groups), items=[])
                frame_rank[label] = {}
            ranks = frame_rank[label]
            if det.frame_index not in ranks:
                ranks[det.frame_index] = len(ranks)
            groups[label].items.append((ranks[det.frame_index], det.frame_index, det.detection_id))
    return list(groups.values())


def sequences_from_result(result: TrackResult) -> list[ObjectSequence]:
    """Turn a TrackResult into per-tracklet token sequences ordered by
    (position, frame, detection id)."""
    by_track: dict[int, ObjectSequence] = {}
    for t in result.tracklets:
        by_track[t.id] = ObjectSequence(track_id=t.id, items=[])
    for (frame, det_id), (tid, pos) in result.assignments.items():
        by_track[tid].items.append((pos, frame, det_id))
    sequences = []
    for t in result.tracklets:
        seq = by_track[t.id]
        seq.items.sort()
        if seq.items:
            sequences.append(seq)
    return sequences


def write_tracklet_dump(result: TrackResult, path) -> None:
    """One JSON record per tracklet: id, members, final averages, last box."""
    with open(path, "w") as fh:
        for t in result.tracklets:
            record = {
                "id": t.id,
                "members": [[f, d] for f, d in t.members],
                "avg_class_dist": [float(x) for x in t.avg_class_dist],
                "avg_feature": [float(x) for x in t.avg_feature],
                "last_box": [t.last_box.cx, t.last_box.cy, t.last_box.w, t.last_box.h],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def read_tracklet_dump(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
