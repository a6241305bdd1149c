"""Synthetic annotated-video generator.

Videos contain one agent (class 0) plus a few other objects, each of a
distinct class, moving on smooth, well-separated orbits. Every detection
carries a class distribution and a visual feature built from per-class
anchors; all anchors share a common base direction, so features of different
classes still have cosine similarity around 0.6. That keeps the coarse
tracker from rejecting a match when a frame's class evidence is corrupted.

Corruption replaces a detection's evidence (distribution argmax and feature)
with another class's anchor while the ground truth label stays put: from a
single frame such a sample is indistinguishable from a genuine sample of the
decoy class, so only temporal context can recover the label. Predicate
labels follow slow per-object Markov chains and are imprinted into the
emitted union features, which makes them learnable from the pair inputs.

Object classes are unique within a video, so a detection's ground-truth
class doubles as its instance identity (used by tracker purity checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (Dataset, DatasetHeader, FrameObject, FramePayload,
                   RelationAnnotation, VideoPayload)
from .geom import BBox

SHARED_BASE_WEIGHT = 0.6  # squared cosine between any two class anchors


@dataclass
class SynthConfig:
    num_videos: int = 20
    frames_per_video: int = 30
    num_classes: int = 5
    attention_arity: int = 3
    spatial_arity: int = 3
    contact_arity: int = 4
    d_feat: int = 40
    union_width: int = 24
    min_objects: int = 3
    max_objects: int = 3
    agent_class: int = 0
    corruption_rate: float = 0.1
    extra_predicate_rate: float = 0.05
    gap_rate: float = 0.05
    max_gap_len: int = 5
    duplicate_rate: float = 0.0
    dist_floor: float = 0.2
    feature_noise: float = 0.05
    union_noise: float = 0.05
    markov_stay: float = 0.85
    with_timestamps: bool = False
    frame_stride: int = 1

    def validate(self) -> "SynthConfig":
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 2 <= self.min_objects <= self.max_objects:
            raise ValueError("object counts must satisfy 2 <= min <= max")
        if self.max_objects > self.num_classes:
            raise ValueError("classes are unique per video; max_objects cannot "
                             "exceed num_classes")
        if self.d_feat < self.num_classes + 1:
            raise ValueError("d_feat must fit the shared base plus one direction "
                             "per class")
        needed = 1 + self.attention_arity + self.spatial_arity + self.contact_arity
        if self.union_width < needed:
            raise ValueError(f"union_width must be at least {needed}")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must be in [0, 1)")
        return self

    def header(self) -> DatasetHeader:
        return DatasetHeader(num_classes=self.num_classes,
                             attention_arity=self.attention_arity,
                             spatial_arity=self.spatial_arity,
                             contact_arity=self.contact_arity,
                             d_feat=self.d_feat, union_width=self.union_width)


def _orthonormal(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, count)))
    return q.T  # (count, dim) orthonormal rows


def make_class_anchors(rng: np.random.Generator, d_feat: int,
                       num_classes: int) -> np.ndarray:
    """Unit anchors, one per class, pairwise cosine = SHARED_BASE_WEIGHT."""
    basis = _orthonormal(rng, d_feat, num_classes + 1)
    base = basis[0]
    a = np.sqrt(SHARED_BASE_WEIGHT)
    b = np.sqrt(1.0 - SHARED_BASE_WEIGHT)
    return np.stack([a * base + b * basis[c + 1] for c in range(num_classes)])


def make_predicate_anchors(rng: np.random.Generator, width: int,
                           arities: tuple[int, int, int]) -> dict[str, np.ndarray]:
    total = 1 + sum(arities)
    basis = _orthonormal(rng, width, total)
    off = 1
    out = {"base": basis[0]}
    for name, arity in zip(("attention", "spatial", "contact"), arities):
        out[name] = basis[off:off + arity]
        off += arity
    return out


@dataclass
class _ObjectTrack:
    label: int
    center: np.ndarray     # (2,) orbit center
    radius: float
    omega: float
    phase: float
    size: np.ndarray       # (2,) width/height
    gap_left: int = 0
    # forces a visible frame: set at track start (objects enter visible, so a
    # gap only ever interrupts an established track) and after each gap ends
    # (gaps cannot chain past max_gap_len)
    must_show: bool = True
    attention_state: int = 0
    spatial_state: int = 0
    contact_state: int = 0


def _markov_step(state: int, arity: int, stay: float, rng: np.random.Generator) -> int:
    if arity == 1 or rng.random() < stay:
        return state
    move = int(rng.integers(1, arity))
    return (state + move) % arity


def _box_at(track: _ObjectTrack, t: int) -> BBox:
    angle = track.omega * t + track.phase
    cx = track.center[0] + track.radius * np.cos(angle)
    cy = track.center[1] + track.radius * np.sin(angle)
    return BBox(float(cx), float(cy), float(track.size[0]), float(track.size[1]))


def _class_dist(label: int, num_classes: int, floor: float,
                rng: np.random.Generator) -> np.ndarray:
    dist = np.full(num_classes, floor / num_classes)
    dist[label] += 1.0 - floor
    dist += rng.uniform(0, 0.01, size=num_classes)
    return dist / dist.sum()


def generate(config: SynthConfig, seed: int = 0) -> Dataset:
    config = config.validate()
    rng = np.random.default_rng(seed)
    class_anchors = make_class_anchors(rng, config.d_feat, config.num_classes)
    pred_anchors = make_predicate_anchors(
        rng, config.union_width,
        (config.attention_arity, config.spatial_arity, config.contact_arity))

    videos = []
    for vi in range(config.num_videos):
        videos.append(_generate_video(config, rng, class_anchors, pred_anchors,
                                      f"video{vi:04d}"))
    return Dataset(config.header(), videos)


def _generate_video(config: SynthConfig, rng: np.random.Generator,
                    class_anchors: np.ndarray, pred_anchors: dict,
                    video_id: str) -> VideoPayload:
    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    others = [c for c in range(config.num_classes) if c != config.agent_class]
    labels = [config.agent_class] + list(
        rng.choice(others, size=n_objects - 1, replace=False))

    # spread orbit centers around a ring so boxes rarely overlap across objects
    tracks = []
    ring = rng.permutation(n_objects)
    for oi, label in enumerate(labels):
        angle = 2 * np.pi * ring[oi] / n_objects + rng.uniform(-0.2, 0.2)
        center = 0.5 + 0.26 * np.array([np.cos(angle), np.sin(angle)])
        tracks.append(_ObjectTrack(
            label=int(label),
            center=center,
            radius=float(rng.uniform(0.02, 0.06)),
            omega=float(rng.uniform(0.15, 0.45)),
            phase=float(rng.uniform(0, 2 * np.pi)),
            size=rng.uniform(0.08, 0.18, size=2),
            attention_state=int(rng.integers(config.attention_arity)),
            spatial_state=int(rng.integers(config.spatial_arity)),
            contact_state=int(rng.integers(config.contact_arity)),
        ))

    frames = []
    for t in range(config.frames_per_video):
        frame_index = t * config.frame_stride
        objects: list[FrameObject] = []
        relations: list[RelationAnnotation] = []
        unions: dict[tuple[int, int], np.ndarray] = {}
        id_of: dict[int, int] = {}

        for oi, track in enumerate(tracks):
            is_agent = oi == 0
            if not is_agent:
                # advance the visibility state machine; the agent never blinks
                if track.gap_left > 0:
                    track.gap_left -= 1
                    track.must_show = track.gap_left == 0
                    continue
                if track.must_show:
                    track.must_show = False
                elif rng.random() < config.gap_rate:
                    track.gap_left = int(rng.integers(1, config.max_gap_len + 1)) - 1
                    if track.gap_left == 0:
                        track.must_show = True
                    continue
            det_id = len(objects)
            id_of[oi] = det_id
            evident = track.label
            if rng.random() < config.corruption_rate:
                decoys = [c for c in range(config.num_classes) if c != track.label]
                evident = int(rng.choice(decoys))
            feature = class_anchors[evident] + rng.normal(
                0, config.feature_noise, size=config.d_feat)
            feature /= np.linalg.norm(feature)
            objects.append(FrameObject(
                detection_id=det_id,
                box=_box_at(track, t),
                class_dist=_class_dist(evident, config.num_classes,
                                       config.dist_floor, rng),
                feature=feature,
                gt_class=track.label,
            ))

        # predicate chains tick every frame, observed only when visible
        for oi, track in enumerate(tracks):
            if oi == 0:
                continue
            track.attention_state = _markov_step(track.attention_state,
                                                 config.attention_arity,
                                                 config.markov_stay, rng)
            track.spatial_state = _markov_step(track.spatial_state,
                                               config.spatial_arity,
                                               config.markov_stay, rng)
            track.contact_state = _markov_step(track.contact_state,
                                               config.contact_arity,
                                               config.markov_stay, rng)
            if 0 not in id_of or oi not in id_of:
                continue
            spatial = [track.spatial_state]
            if config.spatial_arity > 1 and rng.random() < config.extra_predicate_rate:
                extra = (track.spatial_state + 1 +
                         int(rng.integers(config.spatial_arity - 1))) % config.spatial_arity
                spatial.append(extra)
            contact = [track.contact_state]
            if config.contact_arity > 1 and rng.random() < config.extra_predicate_rate:
                extra = (track.contact_state + 1 +
                         int(rng.integers(config.contact_arity - 1))) % config.contact_arity
                contact.append(extra)
            u = pred_anchors["base"].copy()
            u = u + pred_anchors["attention"][track.attention_state]
            for sidx in spatial:
                u = u + pred_anchors["spatial"][sidx]
            for cidx in contact:
                u = u + pred_anchors["contact"][cidx]
            u = u + rng.normal(0, config.union_noise, size=config.union_width)
            u /= np.linalg.norm(u)
            sid, oid = id_of[0], id_of[oi]
            relations.append(RelationAnnotation(
                subject_id=sid, object_id=oid,
                attention=track.attention_state,
                spatial=tuple(sorted(set(spatial))),
                contact=tuple(sorted(set(contact)))))
            unions[(sid, oid)] = u

        # optional near-duplicate detections (detector double-fires)
        if config.duplicate_rate > 0:
            for obj in list(objects):
                if rng.random() >= config.duplicate_rate:
                    continue
                jitter = rng.uniform(-0.015, 0.015, size=2)
                box = obj.box
                dup_box = BBox(float(np.clip(box.cx + jitter[0], box.w / 2, 1 - box.w / 2)),
                               float(np.clip(box.cy + jitter[1], box.h / 2, 1 - box.h / 2)),
                               box.w, box.h)
                softer = 0.6 * obj.class_dist + 0.4 / config.num_classes
                objects.append(FrameObject(
                    detection_id=len(objects),
                    box=dup_box,
                    class_dist=softer / softer.sum(),
                    feature=obj.feature + rng.normal(0, 0.01, size=config.d_feat),
                    gt_class=obj.gt_class,
                ))

        frames.append(FramePayload(frame_index=frame_index, objects=objects,
                                   relations=relations, unions=unions))

    timestamps = None
    if config.with_timestamps:
        timestamps = [fr.frame_index / 3.0 for fr in frames]
    return VideoPayload(video_id=video_id, frames=frames, timestamps=timestamps)
