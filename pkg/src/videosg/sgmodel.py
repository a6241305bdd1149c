"""Two-stage scene graph model over tracked object sequences.

Stage one refines per-detection class evidence with a transformer that
attends along each object sequence (tracklet), which is where long-range
temporal context enters. Stage two builds one vector per subject-object
pair, mixes pairs within a frame through a spatial encoder, then runs a
temporal encoder along same-class-pair sequences and scores the three
predicate categories.

The module exposes the raw model (:class:`SceneGraphModel`) and a
scikit-learn style wrapper (:class:`SceneGraphClassifier`) whose
``context_mode`` switches between tracker-built sequences, label-grouped
sequences, and isolated per-frame tokens (the no-context baseline).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import tracker as trk
from .autodiff import Tensor, backward, concat, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import VideoPayload, union_for_pair
from .nn import (AdamW, Linear, ParameterStore, TransformerEncoder, cross_entropy,
                 dropout, glorot_uniform, multilabel_margin, sinusoidal_positions)
from .sgeval import TripletPrediction

DetKey = tuple[int, int]


@dataclass
class ModelConfig:
    """Widths and depths for both stages.

    Defaults are the toy scale: the full-size layout shrunk roughly 32x and
    rounded so each width stays divisible by its head count.
    """

    num_classes: int = 5
    attention_arity: int = 3
    spatial_arity: int = 3
    contact_arity: int = 4
    d_feat: int = 40
    box_width: int = 8
    dist_width: int = 16
    semantic_width: int = 16
    visual_width: int = 24
    spatial_width: int = 16
    union_width: int = 24
    obj_layers: int = 3
    obj_heads: int = 4
    obj_ff: int = 64
    class_hidden: int = 32
    spatial_layers: int = 1
    temporal_layers: int = 3
    rel_heads: int = 4
    rel_ff: int = 64
    dropout: float = 0.1

    @property
    def d_object(self) -> int:
        return self.box_width + self.dist_width + self.d_feat

    @property
    def d_rel(self) -> int:
        return 2 * self.visual_width + self.spatial_width + 2 * self.semantic_width

    def validate(self) -> "ModelConfig":
        if self.d_object % self.obj_heads != 0:
            raise ValueError(f"object width {self.d_object} not divisible by "
                             f"{self.obj_heads} heads")
        if self.d_rel % self.rel_heads != 0:
            raise ValueError(f"relationship width {self.d_rel} not divisible by "
                             f"{self.rel_heads} heads")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj).validate()

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        """Full-size widths; provided for completeness, tests stay at toy scale."""
        return cls(num_classes=35, attention_arity=3, spatial_arity=6, contact_arity=16,
                   d_feat=2048, box_width=128, dist_width=200, semantic_width=200,
                   visual_width=512, spatial_width=512, union_width=12544,
                   obj_layers=3, obj_heads=8, obj_ff=2048, class_hidden=1024,
                   spatial_layers=1, temporal_layers=3, rel_heads=8, rel_ff=2048,
                   dropout=0.1).validate()

    @classmethod
    def tiny(cls, num_classes: int = 4) -> "ModelConfig":
        """Smallest config that still exercises every component; used for the
        finite-difference gradient contract."""
        return cls(num_classes=num_classes, attention_arity=3, spatial_arity=3,
                   contact_arity=4, d_feat=8, box_width=4, dist_width=4,
                   semantic_width=3, visual_width=6, spatial_width=6, union_width=6,
                   obj_layers=1, obj_heads=2, obj_ff=12, class_hidden=8,
                   spatial_layers=1, temporal_layers=1, rel_heads=2, rel_ff=12,
                   dropout=0.0).validate()


@dataclass
class ObjectOutputs:
    order: list[DetKey]
    row_of: dict[DetKey, int]
    logits: Tensor              # (N, num_classes)
    dists: np.ndarray           # softmax of logits
    features: Tensor            # (N, d_feat) refined feature slice
    boxes: np.ndarray           # (N, 4) raw cxcywh


@dataclass
class RelationshipOutputs:
    pairs: list[tuple[int, int, int]]       # (frame_index, subject_id, object_id)
    pair_classes: np.ndarray                # (P, 2) class ids used for embedding
    attention_logits: Tensor
    spatial_logits: Tensor
    contact_logits: Tensor

    def scores(self) -> dict[str, np.ndarray]:
        att = self.attention_logits.data
        shifted = att - att.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return {
            "attention": e / e.sum(axis=-1, keepdims=True),
            "spatial": 1.0 / (1.0 + np.exp(-self.spatial_logits.data)),
            "contact": 1.0 / (1.0 + np.exp(-self.contact_logits.data)),
        }


@dataclass
class VideoPrediction:
    video_id: str
    object_rows: list[tuple[int, int, int, np.ndarray]]  # (frame, det id, class, dist)
    triplets: list[TripletPrediction] = field(default_factory=list)


def triplet_score(subject_dist, predicate_score: float, object_dist) -> float:
    """Combined confidence of a candidate triplet: the product of the two
    endpoint max-class scores and the predicate score."""
    return float(np.max(subject_dist) * predicate_score * np.max(object_dist))


def singleton_sequences(frames: list[list[trk.Detection]]) -> list[trk.ObjectSequence]:
    """No-context fallback: every detection becomes its own length-1 sequence."""
    out = []
    for dets in frames:
        for det in dets:
            out.append(trk.ObjectSequence(track_id=len(out),
                                          items=[(0, det.frame_index, det.detection_id)]))
    return out


def build_sequences(video: VideoPayload, context_mode: str,
                    tracker_params: dict | None = None,
                    nms_threshold: float | None = None) -> list[trk.ObjectSequence]:
    """Sequence construction per context mode.

    ``tracklets`` runs the coarse tracker (optionally NMS-clustering first
    when ``nms_threshold`` is set), ``labels`` groups by argmax class, and
    ``none`` isolates every detection.
    """
    frames = video.detections()
    if context_mode == "none":
        return singleton_sequences(frames)
    if context_mode == "labels":
        return trk.label_grouping(frames)
    if context_mode == "tracklets":
        params = dict(tracker_params or {})
        if nms_threshold is not None:
            result = trk.cluster_and_track(frames, nms_threshold=nms_threshold,
                                           timestamps=video.timestamps, **params)
        else:
            result = trk.track_video(frames, timestamps=video.timestamps, **params)
        return trk.sequences_from_result(result)
    raise ValueError(f"unknown context mode {context_mode!r}")


class SceneGraphModel:
    """Parameter container plus the forward passes for both stages."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        c = config
        self.box_embed = Linear(store, "obj.box_embed", 4, c.box_width, rng)
        self.dist_embed = Linear(store, "obj.dist_embed", c.num_classes, c.dist_width,
                                 rng, bias=False)
        self.obj_encoder = TransformerEncoder(store, "obj.encoder", c.d_object,
                                              c.obj_heads, c.obj_ff, c.obj_layers,
                                              c.dropout, rng)
        self.class_hidden = Linear(store, "obj.class_head.hidden", c.d_object,
                                   c.class_hidden, rng)
        self.class_out = Linear(store, "obj.class_head.out", c.class_hidden,
                                c.num_classes, rng)
        self.subject_proj = Linear(store, "rel.subject_proj", c.d_feat, c.visual_width,
                                   rng, bias=False)
        self.object_proj = Linear(store, "rel.object_proj", c.d_feat, c.visual_width,
                                  rng, bias=False)
        self.box_pair_embed = Linear(store, "rel.box_pair_embed", 8, c.union_width, rng)
        self.union_proj = Linear(store, "rel.union_proj", c.union_width, c.spatial_width,
                                 rng, bias=False)
        self.class_embed = store.add(
            "rel.class_embed",
            glorot_uniform(rng, c.num_classes, c.semantic_width,
                           (c.num_classes, c.semantic_width)))
        self.spatial_encoder = TransformerEncoder(store, "rel.spatial_encoder", c.d_rel,
                                                  c.rel_heads, c.rel_ff, c.spatial_layers,
                                                  c.dropout, rng)
        self.temporal_encoder = TransformerEncoder(store, "rel.temporal_encoder", c.d_rel,
                                                   c.rel_heads, c.rel_ff,
                                                   c.temporal_layers, c.dropout, rng)
        self.head_attention = Linear(store, "rel.head.attention", c.d_rel,
                                     c.attention_arity, rng)
        self.head_spatial = Linear(store, "rel.head.spatial", c.d_rel,
                                   c.spatial_arity, rng)
        self.head_contact = Linear(store, "rel.head.contact", c.d_rel,
                                   c.contact_arity, rng)
        self.params = store

    # ---- stage one: object sequences ------------------------------------

    @staticmethod
    def _standardize_boxes(boxes: np.ndarray) -> np.ndarray:
        # per-video surrogate for the batch normalization in front of the
        # box embedding; degenerate axes pass through unscaled
        mu = boxes.mean(axis=0)
        sd = boxes.std(axis=0)
        sd = np.where(sd < 1e-6, 1.0, sd)
        return (boxes - mu) / sd

    def _grouped_encode(self, encoder: TransformerEncoder, rows: Tensor,
                        groups: list[list[int]], positions: list[list[int]] | None,
                        rng: np.random.Generator, train: bool) -> Tensor:
        """Pad row subsets into a batch, encode, gather rows back in order.

        ``groups`` lists row indices; every row must appear exactly once
        across all groups. ``positions`` (when given) aligns with ``groups``
        and drives the sinusoidal encoding added before the stack.
        """
        n, d = rows.data.shape
        counted = sorted(i for g in groups for i in g)
        if counted != list(range(n)):
            raise ValueError("groups must partition the row set")
        s = len(groups)
        length = max(len(g) for g in groups)
        idx = np.zeros((s, length), dtype=np.int64)
        mask = np.zeros((s, length), dtype=bool)
        back = np.zeros(n, dtype=np.int64)
        pe = np.zeros((s, length, d)) if positions is not None else None
        for gi, g in enumerate(groups):
            for li, row in enumerate(g):
                idx[gi, li] = row
                mask[gi, li] = True
                back[row] = gi * length + li
            if positions is not None:
                pe[gi, :len(g)] = sinusoidal_positions(positions[gi], d)
        x = rows.take(idx)
        if pe is not None:
            x = x + Tensor(pe)
        enc = encoder(x, mask, rng, train)
        return enc.reshape(s * length, d).take(back)

    def object_pass(self, video: VideoPayload, sequences: list[trk.ObjectSequence],
                    rng: np.random.Generator, train: bool = False) -> ObjectOutputs:
        order: list[DetKey] = []
        row_of: dict[DetKey, int] = {}
        boxes, dists, feats = [], [], []
        for fr in video.frames:
            for o in fr.objects:
                key = (fr.frame_index, o.detection_id)
                row_of[key] = len(order)
                order.append(key)
                boxes.append(o.box.as_array())
                dists.append(o.class_dist)
                feats.append(o.feature)
        if not order:
            raise ValueError(f"video {video.video_id!r} has no detections")
        boxes = np.stack(boxes)
        dists = np.stack(dists)
        feats = np.stack(feats)

        c = self.config
        box_e = dropout(self.box_embed(Tensor(self._standardize_boxes(boxes))).relu(),
                        c.dropout, rng, train)
        dist_e = self.dist_embed(Tensor(dists))
        tokens = concat([box_e, dist_e, Tensor(feats)], axis=-1)

        groups, positions = [], []
        for seq in sequences:
            items = sorted(seq.items)
            groups.append([row_of[(f, d)] for _, f, d in items])
            positions.append([p for p, _, _ in items])
        refined = self._grouped_encode(self.obj_encoder, tokens, groups, positions,
                                       rng, train)
        logits = self.class_out(self.class_hidden(refined).relu())
        shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return ObjectOutputs(order=order, row_of=row_of, logits=logits,
                             dists=e / e.sum(axis=-1, keepdims=True),
                             features=refined.narrow(-1, c.d_object - c.d_feat, c.d_feat),
                             boxes=boxes)

    # ---- stage two: relationships ---------------------------------------

    def relationship_pass(self, video: VideoPayload, obj_out: ObjectOutputs,
                          pairs: list[tuple[int, int, int]], pair_classes: np.ndarray,
                          rng: np.random.Generator,
                          train: bool = False) -> RelationshipOutputs:
        """Score predicates for the given (frame, subject id, object id) pairs.

        ``pair_classes`` supplies the class ids fed to the semantic
        embedding and the temporal grouping: ground truth when teacher
        forcing, refined argmaxes at inference.
        """
        c = self.config
        frames_by_index = {fr.frame_index: fr for fr in video.frames}
        subj_rows = np.array([obj_out.row_of[(f, s)] for f, s, _ in pairs], dtype=np.int64)
        obj_rows = np.array([obj_out.row_of[(f, o)] for f, _, o in pairs], dtype=np.int64)
        unions = np.stack([
            union_for_pair(frames_by_index[f], s, o, c.union_width) for f, s, o in pairs
        ])
        box_pairs = np.concatenate([obj_out.boxes[subj_rows], obj_out.boxes[obj_rows]],
                                   axis=1)
        visual = concat([self.subject_proj(obj_out.features.take(subj_rows)),
                         self.object_proj(obj_out.features.take(obj_rows))], axis=-1)
        spatial = self.union_proj(Tensor(unions) + self.box_pair_embed(Tensor(box_pairs)))
        semantic = concat([self.class_embed.take(pair_classes[:, 0]),
                           self.class_embed.take(pair_classes[:, 1])], axis=-1)
        rel = concat([visual, spatial, semantic], axis=-1)

        # spatial mixing within each frame, no positional signal
        frame_groups: dict[int, list[int]] = {}
        for i, (f, _, _) in enumerate(pairs):
            frame_groups.setdefault(f, []).append(i)
        rel = self._grouped_encode(self.spatial_encoder, rel,
                                   [frame_groups[f] for f in sorted(frame_groups)],
                                   None, rng, train)

        # temporal mixing along same-class-pair sequences, frame-rank positions
        temporal_groups: dict[tuple[int, int], list[int]] = {}
        for i, (f, _, _) in enumerate(pairs):
            key = (int(pair_classes[i, 0]), int(pair_classes[i, 1]))
            temporal_groups.setdefault(key, []).append(i)
        groups, positions = [], []
        for key in sorted(temporal_groups):
            members = sorted(temporal_groups[key], key=lambda i: (pairs[i][0], i))
            rank: dict[int, int] = {}
            pos = []
            for i in members:
                f = pairs[i][0]
                if f not in rank:
                    rank[f] = len(rank)
                pos.append(rank[f])
            groups.append(members)
            positions.append(pos)
        z = self._grouped_encode(self.temporal_encoder, rel, groups, positions, rng, train)

        return RelationshipOutputs(pairs=list(pairs), pair_classes=pair_classes,
                                   attention_logits=self.head_attention(z),
                                   spatial_logits=self.head_spatial(z),
                                   contact_logits=self.head_contact(z))

    # ---- losses and inference -------------------------------------------

    def video_loss(self, video: VideoPayload, sequences: list[trk.ObjectSequence],
                   rng: np.random.Generator, train: bool = True) -> tuple[Tensor, dict]:
        """Teacher-forced total loss: class cross entropy summed over
        detections plus per-category margin losses summed over annotated
        relationship instances."""
        obj_out = self.object_pass(video, sequences, rng, train)
        labels = []
        for f, d in obj_out.order:
            fr = next(x for x in video.frames if x.frame_index == f)
            o = next(x for x in fr.objects if x.detection_id == d)
            if o.gt_class is None:
                raise ValueError(f"video {video.video_id!r} lacks a gt class for "
                                 f"detection ({f}, {d})")
            labels.append(o.gt_class)
        labels = np.asarray(labels, dtype=np.int64)
        total = cross_entropy(obj_out.logits, labels, reduction="sum")
        stats = {
            "object_correct": int((obj_out.dists.argmax(axis=1) == labels).sum()),
            "object_count": len(labels),
            "pair_count": 0,
        }

        pairs, anns = [], []
        gt_of = {key: lab for key, lab in zip(obj_out.order, labels)}
        for fr in video.frames:
            for r in fr.relations:
                pairs.append((fr.frame_index, r.subject_id, r.object_id))
                anns.append(r)
        if pairs:
            pair_classes = np.array(
                [[gt_of[(f, s)], gt_of[(f, o)]] for f, s, o in pairs], dtype=np.int64)
            rel_out = self.relationship_pass(video, obj_out, pairs, pair_classes,
                                             rng, train)
            c = self.config
            p = len(pairs)
            att_pos = np.zeros((p, c.attention_arity), dtype=bool)
            spa_pos = np.zeros((p, c.spatial_arity), dtype=bool)
            con_pos = np.zeros((p, c.contact_arity), dtype=bool)
            for i, r in enumerate(anns):
                att_pos[i, r.attention] = True
                for j in r.spatial:
                    spa_pos[i, j] = True
                for j in r.contact:
                    con_pos[i, j] = True
            total = total + multilabel_margin(rel_out.attention_logits, att_pos,
                                              ~att_pos, reduction="sum")
            total = total + multilabel_margin(rel_out.spatial_logits, spa_pos,
                                              ~spa_pos, reduction="sum")
            total = total + multilabel_margin(rel_out.contact_logits, con_pos,
                                              ~con_pos, reduction="sum")
            stats["pair_count"] = p
        return total, stats

    def enumerate_pairs(self, video: VideoPayload, obj_out: ObjectOutputs,
                        subject_class: int | None) -> list[tuple[int, int, int]]:
        """Candidate pairs at inference.

        With a configured subject class, detections refined to that class
        pair with every other detection in their frame; frames without one
        fall back to all ordered pairs. ``None`` always takes all ordered
        pairs.
        """
        refined = obj_out.dists.argmax(axis=1)
        pairs = []
        for fr in video.frames:
            ids = [o.detection_id for o in fr.objects]
            if len(ids) < 2:
                continue
            if subject_class is None:
                subjects = ids
            else:
                subjects = [d for d in ids
                            if refined[obj_out.row_of[(fr.frame_index, d)]] == subject_class]
                if not subjects:
                    subjects = ids
            for s in subjects:
                for o in ids:
                    if o != s:
                        pairs.append((fr.frame_index, s, o))
        return pairs

    def predict_video(self, video: VideoPayload, sequences: list[trk.ObjectSequence],
                      subject_class: int | None = None) -> VideoPrediction:
        rng = np.random.default_rng(0)  # inert: dropout is off outside training
        with no_grad():
            obj_out = self.object_pass(video, sequences, rng, train=False)
            refined = obj_out.dists.argmax(axis=1)
            rows = [(f, d, int(refined[i]), obj_out.dists[i])
                    for i, (f, d) in enumerate(obj_out.order)]
            pairs = self.enumerate_pairs(video, obj_out, subject_class)
            triplets: list[TripletPrediction] = []
            if pairs:
                pair_classes = np.array(
                    [[refined[obj_out.row_of[(f, s)]], refined[obj_out.row_of[(f, o)]]]
                     for f, s, o in pairs], dtype=np.int64)
                rel_out = self.relationship_pass(video, obj_out, pairs, pair_classes,
                                                 rng, train=False)
                scores = rel_out.scores()
                box_of = {}
                for fr in video.frames:
                    for o in fr.objects:
                        box_of[(fr.frame_index, o.detection_id)] = o.box
                for i, (f, s, o) in enumerate(pairs):
                    srow, orow = obj_out.row_of[(f, s)], obj_out.row_of[(f, o)]
                    s_score = float(obj_out.dists[srow].max())
                    o_score = float(obj_out.dists[orow].max())
                    for category in ("attention", "spatial", "contact"):
                        for pi, p_score in enumerate(scores[category][i]):
                            triplets.append(TripletPrediction(
                                frame_index=f, pair_index=i,
                                subject_id=s, object_id=o,
                                subject_class=int(refined[srow]),
                                object_class=int(refined[orow]),
                                subject_box=box_of[(f, s)], object_box=box_of[(f, o)],
                                subject_score=s_score, object_score=o_score,
                                category=category, predicate=pi,
                                predicate_score=float(p_score),
                                score=triplet_score(obj_out.dists[srow], float(p_score),
                                                    obj_out.dists[orow]),
                            ))
        return VideoPrediction(video_id=video.video_id, object_rows=rows,
                               triplets=triplets)

    # ---- persistence -----------------------------------------------------

    def save(self, path: str, extra_meta: dict | None = None) -> None:
        meta = {"config": self.config.to_json()}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params.state_arrays(), meta)

    @classmethod
    def load(cls, path: str) -> "SceneGraphModel":
        arrays, meta = load_checkpoint(path)
        model = cls(ModelConfig.from_json(meta["config"]))
        model.params.load_arrays(arrays)
        return model


class SceneGraphClassifier(BaseEstimator):
    """Estimator facade: sequence construction, training loop, prediction.

    ``fit`` consumes a list of :class:`VideoPayload` with ground-truth
    classes and relation annotations. ``predict`` returns one
    :class:`VideoPrediction` per video. ``context_mode`` selects how object
    sequences are built: "tracklets" (coarse tracker), "labels" (argmax
    grouping), or "none" (isolated detections; per-frame baseline).
    """

    def __init__(self, num_classes=5, attention_arity=3, spatial_arity=3,
                 contact_arity=4, d_feat=40, box_width=8, dist_width=16,
                 semantic_width=16, visual_width=24, spatial_width=16, union_width=24,
                 obj_layers=3, obj_heads=4, obj_ff=64, class_hidden=32,
                 spatial_layers=1, temporal_layers=3, rel_heads=4, rel_ff=64,
                 dropout=0.1, context_mode="tracklets", subject_class=0,
                 nms_threshold=None, max_gap=50, feat_weight=2.0, iou_weight=1.0,
                 l1_weight=2.0, reject_threshold=0.5, epochs=200, lr=1e-3,
                 weight_decay=0.0, seed=0, shuffle=True, stop_accuracy=None,
                 stop_recall_at=None, stop_recall=None, eval_every=25, verbose=0):
        self.num_classes = num_classes
        self.attention_arity = attention_arity
        self.spatial_arity = spatial_arity
        self.contact_arity = contact_arity
        self.d_feat = d_feat
        self.box_width = box_width
        self.dist_width = dist_width
        self.semantic_width = semantic_width
        self.visual_width = visual_width
        self.spatial_width = spatial_width
        self.union_width = union_width
        self.obj_layers = obj_layers
        self.obj_heads = obj_heads
        self.obj_ff = obj_ff
        self.class_hidden = class_hidden
        self.spatial_layers = spatial_layers
        self.temporal_layers = temporal_layers
        self.rel_heads = rel_heads
        self.rel_ff = rel_ff
        self.dropout = dropout
        self.context_mode = context_mode
        self.subject_class = subject_class
        self.nms_threshold = nms_threshold
        self.max_gap = max_gap
        self.feat_weight = feat_weight
        self.iou_weight = iou_weight
        self.l1_weight = l1_weight
        self.reject_threshold = reject_threshold
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed
        self.shuffle = shuffle
        self.stop_accuracy = stop_accuracy
        self.stop_recall_at = stop_recall_at
        self.stop_recall = stop_recall
        self.eval_every = eval_every
        self.verbose = verbose

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            num_classes=self.num_classes, attention_arity=self.attention_arity,
            spatial_arity=self.spatial_arity, contact_arity=self.contact_arity,
            d_feat=self.d_feat, box_width=self.box_width, dist_width=self.dist_width,
            semantic_width=self.semantic_width, visual_width=self.visual_width,
            spatial_width=self.spatial_width, union_width=self.union_width,
            obj_layers=self.obj_layers, obj_heads=self.obj_heads, obj_ff=self.obj_ff,
            class_hidden=self.class_hidden, spatial_layers=self.spatial_layers,
            temporal_layers=self.temporal_layers, rel_heads=self.rel_heads,
            rel_ff=self.rel_ff, dropout=self.dropout).validate()

    def _tracker_params(self) -> dict:
        return {"max_gap": self.max_gap, "feat_weight": self.feat_weight,
                "iou_weight": self.iou_weight, "l1_weight": self.l1_weight,
                "reject_threshold": self.reject_threshold}

    def _sequences(self, video: VideoPayload) -> list[trk.ObjectSequence]:
        return build_sequences(video, self.context_mode, self._tracker_params(),
                               self.nms_threshold)

    def fit(self, X: list[VideoPayload], y=None) -> "SceneGraphClassifier":
        videos = [v for v in X if v.object_count() > 0]
        if not videos:
            raise ValueError("fit needs at least one video with detections")
        self.model_ = SceneGraphModel(self._model_config(), seed=self.seed)
        self.sequences_ = {v.video_id: self._sequences(v) for v in videos}
        optimizer = AdamW(self.model_.params, lr=self.lr,
                          weight_decay=self.weight_decay)
        rng = np.random.default_rng(self.seed)
        self.history_ = []
        start = time.monotonic()
        for epoch in range(self.epochs):
            order = np.arange(len(videos))
            if self.shuffle:
                rng.shuffle(order)
            epoch_loss = 0.0
            correct = count = 0
            for vi in order:
                video = videos[vi]
                optimizer.zero_grad()
                loss, stats = self.model_.video_loss(video, self.sequences_[video.video_id],
                                                     rng, train=True)
                value = loss.item()
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} on video {video.video_id!r}")
                backward(loss)
                optimizer.step()
                epoch_loss += value
                correct += stats["object_correct"]
                count += stats["object_count"]
            record = {"epoch": epoch, "loss": epoch_loss / len(videos),
                      "train_accuracy": correct / max(count, 1),
                      "elapsed": time.monotonic() - start}
            self.history_.append(record)
            if self.verbose and (epoch % max(1, int(self.verbose)) == 0):
                print(f"epoch {epoch:4d}  loss {record['loss']:.4f}  "
                      f"acc {record['train_accuracy']:.4f}")
            if self._should_stop(videos, record, epoch):
                break
        self.n_epochs_ = len(self.history_)
        return self

    def _should_stop(self, videos, record, epoch) -> bool:
        if self.stop_accuracy is None:
            return False
        if record["train_accuracy"] < self.stop_accuracy:
            return False
        if (epoch + 1) % max(1, self.eval_every) != 0:
            return False
        # dropout-off accuracy, and optionally the recall target, both on
        # the training set; only consulted once the running accuracy looks done
        preds = self.predict(videos)
        labels = []
        for v, p in zip(videos, preds):
            gt = {(fr.frame_index, o.detection_id): o.gt_class
                  for fr in v.frames for o in fr.objects}
            for f, d, cls, _ in p.object_rows:
                labels.append((cls, gt[(f, d)]))
        acc = np.mean([1.0 if a == b else 0.0 for a, b in labels])
        if acc < self.stop_accuracy:
            return False
        if self.stop_recall is None:
            return True
        from .sgeval import evaluate, frame_graphs_from_payload
        k = self.stop_recall_at or 10
        graphs, by_frame = {}, {}
        for v, p in zip(videos, preds):
            for g in frame_graphs_from_payload(v):
                graphs[(v.video_id, g.frame_index)] = g
            for t in p.triplets:
                by_frame.setdefault((v.video_id, t.frame_index), []).append(t)
        report = evaluate(by_frame, graphs, labels, self._arities(),
                          constraint="with_constraint", match_mode="identity", ks=(k,))
        return report.recall[k] >= self.stop_recall

    def _arities(self) -> dict[str, int]:
        return {"attention": self.attention_arity, "spatial": self.spatial_arity,
                "contact": self.contact_arity}

    def predict(self, X: list[VideoPayload]) -> list[VideoPrediction]:
        if not hasattr(self, "model_"):
            raise RuntimeError("fit the estimator (or load a checkpoint) first")
        out = []
        for video in X:
            if video.object_count() == 0:
                out.append(VideoPrediction(video.video_id, [], []))
                continue
            seqs = self.sequences_.get(video.video_id) if hasattr(self, "sequences_") \
                else None
            if seqs is None:
                seqs = self._sequences(video)
            out.append(self.model_.predict_video(video, seqs, self.subject_class))
        return out

    def score(self, X: list[VideoPayload], y=None) -> float:
        """Mean object accuracy over ground-truth-labeled detections."""
        preds = self.predict(X)
        pairs = []
        for v, p in zip(X, preds):
            gt = {(fr.frame_index, o.detection_id): o.gt_class
                  for fr in v.frames for o in fr.objects}
            for f, d, cls, _ in p.object_rows:
                if gt.get((f, d)) is not None:
                    pairs.append((cls, gt[(f, d)]))
        if not pairs:
            return 0.0
        return float(np.mean([1.0 if a == b else 0.0 for a, b in pairs]))

    def save(self, path: str) -> None:
        self.model_.save(path, {"estimator": {
            "context_mode": self.context_mode, "subject_class": self.subject_class}})

    def load_model(self, path: str) -> "SceneGraphClassifier":
        self.model_ = SceneGraphModel.load(path)
        return self
