"""Two-stage scene graph model: shapes, losses, prediction, persistence."""

import numpy as np
import pytest

from videosg.autodiff import backward
from videosg.data import VideoPayload
from videosg.nn import AdamW
from videosg.sgmodel import (
    ModelConfig,
    SceneGraphClassifier,
    SceneGraphModel,
    build_sequences,
    singleton_sequences,
    triplet_score,
)
from videosg.synth import SynthConfig, generate

TINY_KW = dict(d_feat=8, box_width=4, dist_width=4, semantic_width=3,
               visual_width=6, spatial_width=6, union_width=12,
               obj_layers=1, obj_heads=2, obj_ff=12, class_hidden=8,
               spatial_layers=1, temporal_layers=1, rel_heads=2, rel_ff=12)


def tiny_dataset(num_videos=2, frames=6, seed=0, **synth_kw):
    cfg = SynthConfig(num_videos=num_videos, frames_per_video=frames,
                      num_classes=4, min_objects=3, max_objects=3,
                      d_feat=8, union_width=12, corruption_rate=0.0,
                      gap_rate=0.0, extra_predicate_rate=0.0, **synth_kw)
    return generate(cfg, seed=seed)


def tiny_model(ds, seed=0, dropout=0.0):
    cfg = ModelConfig(num_classes=ds.header.num_classes,
                      attention_arity=ds.header.attention_arity,
                      spatial_arity=ds.header.spatial_arity,
                      contact_arity=ds.header.contact_arity,
                      dropout=dropout, **TINY_KW).validate()
    return SceneGraphModel(cfg, seed=seed)


class TestModelConfig:
    def test_widths(self):
        cfg = ModelConfig()
        assert cfg.d_object == 8 + 16 + 40
        assert cfg.d_rel == 2 * 24 + 16 + 2 * 16
        cfg.validate()

    def test_head_divisibility_enforced(self):
        with pytest.raises(ValueError):
            ModelConfig(obj_heads=7).validate()
        with pytest.raises(ValueError):
            ModelConfig(rel_heads=7).validate()

    def test_named_configs_valid(self):
        ModelConfig.tiny().validate()
        big = ModelConfig.full_scale()
        assert big.d_object == 128 + 200 + 2048
        assert big.d_rel == 2 * 512 + 512 + 2 * 200

    def test_json_roundtrip(self):
        cfg = ModelConfig.tiny()
        assert ModelConfig.from_json(cfg.to_json()) == cfg


class TestSequenceModes:
    def test_none_isolates_every_detection(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        seqs = singleton_sequences(video.detections())
        assert len(seqs) == video.object_count()
        assert all(len(s.items) == 1 and s.items[0][0] == 0 for s in seqs)

    def test_tracklets_group_instances(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        seqs = build_sequences(video, "tracklets")
        # clean data, 3 steady objects: one sequence each
        assert len(seqs) == 3
        covered = sorted((f, d) for s in seqs for _, f, d in s.items)
        expected = sorted((fr.frame_index, o.detection_id)
                          for fr in video.frames for o in fr.objects)
        assert covered == expected

    def test_unknown_mode(self):
        ds = tiny_dataset()
        with pytest.raises(ValueError):
            build_sequences(ds.videos[0], "sometimes")


class TestObjectPass:
    def test_shapes_and_distributions(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        out = model.object_pass(video, seqs, np.random.default_rng(0), train=False)
        n = video.object_count()
        assert out.logits.shape == (n, 4)
        assert out.features.shape == (n, 8)
        assert out.boxes.shape == (n, 4)
        np.testing.assert_allclose(out.dists.sum(axis=1), 1.0, atol=1e-9)
        assert len(out.order) == n
        assert all(out.row_of[key] == i for i, key in enumerate(out.order))

    def test_deterministic_in_eval_mode(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds, dropout=0.3)
        seqs = build_sequences(video, "tracklets")
        a = model.object_pass(video, seqs, np.random.default_rng(1), train=False)
        b = model.object_pass(video, seqs, np.random.default_rng(2), train=False)
        np.testing.assert_allclose(a.logits.data, b.logits.data, atol=0)

    def test_same_seed_same_parameters(self):
        ds = tiny_dataset()
        m1 = tiny_model(ds, seed=3)
        m2 = tiny_model(ds, seed=3)
        m3 = tiny_model(ds, seed=4)
        for name, p in m1.params.items():
            np.testing.assert_allclose(p.data, m2.params[name].data, atol=0)
        diffs = [np.abs(p.data - m3.params[name].data).max()
                 for name, p in m1.params.items() if p.data.size]
        assert max(diffs) > 1e-9


class TestRelationshipPass:
    def test_logit_shapes_and_score_ranges(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        rng = np.random.default_rng(0)
        obj_out = model.object_pass(video, seqs, rng, train=False)
        pairs = [(fr.frame_index, r.subject_id, r.object_id)
                 for fr in video.frames for r in fr.relations]
        classes = np.zeros((len(pairs), 2), dtype=np.int64)
        rel_out = model.relationship_pass(video, obj_out, pairs, classes, rng,
                                          train=False)
        p = len(pairs)
        assert rel_out.attention_logits.shape == (p, 3)
        assert rel_out.spatial_logits.shape == (p, 3)
        assert rel_out.contact_logits.shape == (p, 4)
        scores = rel_out.scores()
        np.testing.assert_allclose(scores["attention"].sum(axis=1), 1.0, atol=1e-9)
        for cat in ("spatial", "contact"):
            assert np.all((scores[cat] > 0) & (scores[cat] < 1))

    def test_semantic_embedding_depends_on_classes(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        rng = np.random.default_rng(0)
        obj_out = model.object_pass(video, seqs, rng, train=False)
        pairs = [(video.frames[0].frame_index,
                  video.frames[0].relations[0].subject_id,
                  video.frames[0].relations[0].object_id)]
        a = model.relationship_pass(video, obj_out, pairs,
                                    np.array([[0, 1]]), rng, train=False)
        b = model.relationship_pass(video, obj_out, pairs,
                                    np.array([[2, 3]]), rng, train=False)
        assert np.abs(a.attention_logits.data - b.attention_logits.data).max() > 1e-9


class TestVideoLoss:
    def test_loss_finite_and_stats_consistent(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        loss, stats = model.video_loss(video, seqs, np.random.default_rng(0),
                                       train=False)
        assert np.isfinite(loss.item())
        assert stats["object_count"] == video.object_count()
        assert 0 <= stats["object_correct"] <= stats["object_count"]
        assert stats["pair_count"] == sum(len(fr.relations) for fr in video.frames)

    def test_all_parameters_receive_gradients(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        loss, _ = model.video_loss(video, seqs, np.random.default_rng(0), train=False)
        backward(loss)
        missing = [name for name, p in model.params.items() if p.grad is None]
        assert missing == []
        bad = [name for name, p in model.params.items()
               if not np.isfinite(p.grad).all()]
        assert bad == []

    def test_loss_decreases_under_training(self):
        ds = tiny_dataset(num_videos=1, frames=5)
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        opt = AdamW(model.params, lr=3e-3)
        rng = np.random.default_rng(0)
        first = None
        for step in range(30):
            opt.zero_grad()
            loss, _ = model.video_loss(video, seqs, rng, train=True)
            if first is None:
                first = loss.item()
            backward(loss)
            opt.step()
        final, _ = model.video_loss(video, seqs, rng, train=False)
        assert final.item() < first * 0.7

    def test_missing_gt_class_rejected(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        video.frames[0].objects[0].gt_class = None
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        with pytest.raises(ValueError, match="gt class"):
            model.video_loss(video, seqs, np.random.default_rng(0))


class TestPrediction:
    def test_triplet_score_composition(self):
        s = np.array([0.7, 0.3])
        o = np.array([0.2, 0.8])
        assert triplet_score(s, 0.5, o) == pytest.approx(0.7 * 0.5 * 0.8)

    def test_predict_video_emits_full_candidate_set(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        pred = model.predict_video(video, seqs, subject_class=None)
        assert len(pred.object_rows) == video.object_count()
        frames_with_pairs = [fr for fr in video.frames if len(fr.objects) >= 2]
        total_pairs = sum(len(fr.objects) * (len(fr.objects) - 1)
                          for fr in frames_with_pairs)
        per_pair = 3 + 3 + 4
        assert len(pred.triplets) == total_pairs * per_pair

    def test_subject_class_filter_limits_pairs(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        all_pairs = model.predict_video(video, seqs, subject_class=None)
        filtered = model.predict_video(video, seqs, subject_class=0)
        assert len(filtered.triplets) <= len(all_pairs.triplets)
        # fallback keeps frames represented even when no subject matches
        frames_all = {t.frame_index for t in all_pairs.triplets}
        frames_filtered = {t.frame_index for t in filtered.triplets}
        assert frames_filtered == frames_all

    def test_scores_consistent_with_components(self):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds)
        seqs = build_sequences(video, "tracklets")
        pred = model.predict_video(video, seqs, subject_class=None)
        for t in pred.triplets[:50]:
            assert t.score == pytest.approx(
                t.subject_score * t.object_score * t.predicate_score)


class TestPersistence:
    def test_save_load_identical_predictions(self, tmp_path):
        ds = tiny_dataset()
        video = ds.videos[0]
        model = tiny_model(ds, seed=9)
        seqs = build_sequences(video, "tracklets")
        path = str(tmp_path / "model.ckpt")
        model.save(path, {"note": "test"})
        clone = SceneGraphModel.load(path)
        assert clone.config == model.config
        a = model.predict_video(video, seqs)
        b = clone.predict_video(video, seqs)
        assert len(a.triplets) == len(b.triplets)
        for x, y in zip(a.triplets, b.triplets):
            assert x.score == pytest.approx(y.score, abs=1e-12)


class TestEstimator:
    def make_estimator(self, **kw):
        base = dict(num_classes=4, d_feat=8, box_width=4, dist_width=4,
                    semantic_width=3, visual_width=6, spatial_width=6,
                    union_width=12, obj_layers=1, obj_heads=2, obj_ff=12,
                    class_hidden=8, spatial_layers=1, temporal_layers=1,
                    rel_heads=2, rel_ff=12, dropout=0.0, epochs=8, lr=2e-3,
                    seed=0, verbose=0)
        base.update(kw)
        return SceneGraphClassifier(**base)

    def test_fit_records_history_and_improves(self):
        ds = tiny_dataset(num_videos=2, frames=6)
        est = self.make_estimator(epochs=25)
        est.fit(ds.videos)
        assert est.n_epochs_ == 25
        assert len(est.history_) == 25
        assert est.history_[-1]["loss"] < est.history_[0]["loss"]
        assert {"epoch", "loss", "train_accuracy", "elapsed"} <= set(est.history_[0])

    def test_predict_and_score(self):
        ds = tiny_dataset(num_videos=2, frames=6)
        est = self.make_estimator(epochs=5)
        est.fit(ds.videos)
        preds = est.predict(ds.videos)
        assert len(preds) == 2
        assert preds[0].video_id == ds.videos[0].video_id
        acc = est.score(ds.videos)
        assert 0.0 <= acc <= 1.0

    def test_predict_before_fit_raises(self):
        ds = tiny_dataset()
        with pytest.raises(RuntimeError):
            self.make_estimator().predict(ds.videos)

    def test_predict_handles_unseen_video(self):
        train = tiny_dataset(num_videos=2, frames=6, seed=0)
        other = tiny_dataset(num_videos=1, frames=6, seed=99)
        est = self.make_estimator(epochs=2)
        est.fit(train.videos)
        out = est.predict(other.videos)
        assert out[0].object_rows

    def test_empty_video_predicts_empty(self):
        train = tiny_dataset(num_videos=2, frames=6)
        est = self.make_estimator(epochs=2)
        est.fit(train.videos)
        empty = VideoPayload(video_id="empty", frames=[])
        out = est.predict([empty])
        assert out[0].object_rows == [] and out[0].triplets == []

    def test_fit_rejects_all_empty(self):
        est = self.make_estimator()
        with pytest.raises(ValueError):
            est.fit([VideoPayload(video_id="e", frames=[])])

    def test_early_stop_on_accuracy(self):
        ds = tiny_dataset(num_videos=2, frames=6)
        est = self.make_estimator(epochs=200, stop_accuracy=0.9, eval_every=5)
        est.fit(ds.videos)
        assert est.n_epochs_ < 200
        assert est.history_[-1]["train_accuracy"] >= 0.9

    def test_get_params_clone_compatible(self):
        est = self.make_estimator(epochs=3)
        params = est.get_params()
        clone = SceneGraphClassifier(**params)
        assert clone.get_params() == params

    def test_estimator_save_load(self, tmp_path):
        ds = tiny_dataset(num_videos=2, frames=6)
        est = self.make_estimator(epochs=3)
        est.fit(ds.videos)
        path = str(tmp_path / "est.ckpt")
        est.save(path)
        fresh = self.make_estimator()
        fresh.load_model(path)
        a = est.predict(ds.videos[:1])[0]
        b = fresh.predict(ds.videos[:1])[0]
        assert [r[:3] for r in a.object_rows] == [r[:3] for r in b.object_rows]

    def test_training_deterministic_for_seed(self):
        ds = tiny_dataset(num_videos=2, frames=6)
        a = self.make_estimator(epochs=4, dropout=0.1, seed=5).fit(ds.videos)
        b = self.make_estimator(epochs=4, dropout=0.1, seed=5).fit(ds.videos)
        for (name, p), (_, q) in zip(a.model_.params.items(), b.model_.params.items()):
            np.testing.assert_allclose(p.data, q.data, atol=0, err_msg=name)
        assert [r["loss"] for r in a.history_] == [r["loss"] for r in b.history_]


class TestContextModes:
    def test_none_mode_trains_per_frame(self):
        ds = tiny_dataset(num_videos=2, frames=6)
        est = SceneGraphClassifier(num_classes=4, d_feat=8, box_width=4,
                                   dist_width=4, semantic_width=3, visual_width=6,
                                   spatial_width=6, union_width=12, obj_layers=1,
                                   obj_heads=2, obj_ff=12, class_hidden=8,
                                   spatial_layers=1, temporal_layers=1, rel_heads=2,
                                   rel_ff=12, dropout=0.0, context_mode="none",
                                   epochs=3, lr=2e-3, seed=0)
        est.fit(ds.videos)
        seqs = est.sequences_[ds.videos[0].video_id]
        assert all(len(s.items) == 1 for s in seqs)
