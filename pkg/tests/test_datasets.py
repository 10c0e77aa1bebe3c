import numpy as np
import pytest

from streamhoi.datasets import (
    MotionPair,
    MotionSequence,
    PointCloudSequence,
    SynthMotionSpec,
    SynthPcdSpec,
    convert_depth_clip,
    convert_motion_capture_pair,
    make_interaction_clips,
    make_motion_pairs,
    reactor_from_history,
    velocity_centroid_accuracy,
)
from streamhoi.exceptions import ConfigurationError, NumericalError, ShapeError


def _run_lengths(labels):
    runs, current = [], 1
    for a, b in zip(labels[:-1], labels[1:]):
        if a == b:
            current += 1
        else:
            runs.append(current)
            current = 1
    runs.append(current)
    return runs


class TestMotionContainers:
    def test_sequence_properties(self):
        seq = MotionSequence(np.zeros((5, 3)), fps=25.0)
        assert seq.n_frames == 5 and seq.pose_dim == 3

    def test_sequence_validation(self):
        with pytest.raises(ShapeError):
            MotionSequence(np.zeros(5))
        with pytest.raises(ShapeError):
            MotionSequence(np.zeros((0, 3)))
        with pytest.raises(NumericalError):
            MotionSequence(np.full((4, 2), np.nan))
        with pytest.raises(ConfigurationError):
            MotionSequence(np.zeros((4, 2)), fps=0.0)

    def test_pair_shape_checks(self):
        actor = MotionSequence(np.zeros((6, 4)))
        reactor = MotionSequence(np.zeros((6, 3)))
        points = np.zeros((10, 3))
        pose = np.zeros((6, 7))
        MotionPair(actor, points, pose, reactor, action_class=0)  # valid
        with pytest.raises(ShapeError):
            MotionPair(actor, np.zeros((10, 2)), pose, reactor, 0)
        with pytest.raises(ShapeError):
            MotionPair(actor, points, np.zeros((5, 7)), reactor, 0)
        with pytest.raises(ShapeError):
            MotionPair(actor, points, pose, MotionSequence(np.zeros((4, 3))), 0)


class TestMotionSpecValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigurationError):
            SynthMotionSpec(lag=0)
        with pytest.raises(ConfigurationError):
            SynthMotionSpec(seq_len=5, long_range_start=5)
        with pytest.raises(ConfigurationError):
            SynthMotionSpec(ema_decay=1.0)
        with pytest.raises(ConfigurationError):
            SynthMotionSpec(n_classes=0)


class TestReactorRule:
    def test_noise_free_pairs_match_the_causal_oracle_exactly(self):
        spec = SynthMotionSpec(
            n_sequences=4, noise_scale=0.0, long_range_weight=0.7, long_range_start=5
        )
        for pair in make_motion_pairs(spec):
            oracle = reactor_from_history(
                pair.actor.frames, pair.object_pose, pair.latent, spec
            )
            assert np.array_equal(oracle, pair.reactor.frames)

    def test_first_frames_by_hand(self):
        # unrolls the EMA recursion manually for the first three frames
        from streamhoi.datasets import (
            _actor_to_pose_matrix,
            _object_mixing_matrix,
        )

        spec = SynthMotionSpec(n_sequences=1, noise_scale=0.0, seq_len=10)
        rng = np.random.default_rng(42)
        actor = rng.standard_normal((10, spec.actor_dim))
        pose = np.concatenate(
            [rng.standard_normal((10, 3)), np.tile([1.0, 0, 0, 0], (10, 1))], axis=1
        )
        out = reactor_from_history(actor, pose, 0.0, spec)
        proj = _actor_to_pose_matrix(spec)
        w_obj = _object_mixing_matrix(spec.pose_dim)
        ema = np.zeros(spec.actor_dim)
        for t in range(3):
            lagged = actor[max(t - spec.lag, 0)]
            expected = (
                spec.ema_weight * ema @ proj
                + spec.lag_weight * lagged @ proj
                + spec.object_weight * pose[t, :3] @ w_obj
            )
            np.testing.assert_allclose(out[t], expected, atol=1e-13)
            ema = spec.ema_decay * ema + (1 - spec.ema_decay) * actor[t]

    def test_latent_channel_decomposition(self):
        # the latent adds a linearly decaying burst then a constant late term
        from streamhoi.datasets import _latent_directions

        w, start = 0.7, 5
        spec = SynthMotionSpec(
            n_sequences=1, noise_scale=0.0, long_range_weight=w,
            long_range_start=start, seq_len=12,
        )
        rng = np.random.default_rng(9)
        actor = rng.standard_normal((12, spec.actor_dim))
        pose = np.concatenate(
            [rng.standard_normal((12, 3)), np.tile([1.0, 0, 0, 0], (12, 1))], axis=1
        )
        burst_dir, late_dir = _latent_directions(spec.pose_dim)
        with_latent = reactor_from_history(actor, pose, 1.0, spec)
        without = reactor_from_history(actor, pose, 0.0, spec)
        delta = with_latent - without
        for t in range(12):
            if t < start:
                expected = 2.0 * w * (1.0 - t / start) * burst_dir
            else:
                expected = w * late_dir
            np.testing.assert_allclose(delta[t], expected, atol=1e-13)

    def test_latent_sign_flips_the_channel(self):
        spec = SynthMotionSpec(
            n_sequences=1, noise_scale=0.0, long_range_weight=0.5, seq_len=10
        )
        rng = np.random.default_rng(3)
        actor = rng.standard_normal((10, spec.actor_dim))
        pose = np.concatenate(
            [rng.standard_normal((10, 3)), np.tile([1.0, 0, 0, 0], (10, 1))], axis=1
        )
        plus = reactor_from_history(actor, pose, 1.0, spec)
        minus = reactor_from_history(actor, pose, -1.0, spec)
        base = reactor_from_history(actor, pose, 0.0, spec)
        np.testing.assert_allclose(plus - base, base - minus, atol=1e-13)


class TestMakeMotionPairs:
    def test_deterministic(self):
        spec = SynthMotionSpec(n_sequences=3)
        a = make_motion_pairs(spec)
        b = make_motion_pairs(spec)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.actor.frames, pb.actor.frames)
            assert np.array_equal(pa.reactor.frames, pb.reactor.frames)
            assert np.array_equal(pa.object_points, pb.object_points)
            assert pa.latent == pb.latent

    def test_seed_changes_the_draw(self):
        a = make_motion_pairs(SynthMotionSpec(n_sequences=2, seed=0))
        b = make_motion_pairs(SynthMotionSpec(n_sequences=2, seed=1))
        assert not np.array_equal(a[0].actor.frames, b[0].actor.frames)

    def test_classes_are_balanced_round_robin(self):
        spec = SynthMotionSpec(n_sequences=8, n_classes=4)
        classes = [p.action_class for p in make_motion_pairs(spec)]
        assert classes == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_latent_is_a_sign(self):
        spec = SynthMotionSpec(n_sequences=6)
        assert all(p.latent in (-1.0, 1.0) for p in make_motion_pairs(spec))

    def test_even_classes_get_spheres(self):
        spec = SynthMotionSpec(n_sequences=4, n_classes=4, n_object_points=24)
        pairs = make_motion_pairs(spec)
        radii = np.linalg.norm(pairs[0].object_points, axis=1)
        assert np.allclose(radii, radii[0])  # sphere: constant radius
        cube_radii = np.linalg.norm(pairs[1].object_points, axis=1)
        assert cube_radii.std() > 1e-3  # cube face samples vary in norm

    def test_noise_scale_controls_residual(self):
        base = dict(n_sequences=2, seed=4)
        noisy = make_motion_pairs(SynthMotionSpec(noise_scale=0.05, **base))
        spec0 = SynthMotionSpec(noise_scale=0.0, **base)
        for pair in noisy:
            oracle = reactor_from_history(
                pair.actor.frames, pair.object_pose, pair.latent, spec0
            )
            resid = pair.reactor.frames - oracle
            assert 0.01 < resid.std() < 0.12

    def test_fps_propagates(self):
        spec = SynthMotionSpec(n_sequences=1, fps=12.5)
        pair = make_motion_pairs(spec)[0]
        assert pair.actor.fps == 12.5 and pair.reactor.fps == 12.5


class TestPointCloudContainers:
    def test_validation(self):
        pts = np.zeros((4, 6, 3))
        with pytest.raises(ShapeError):
            PointCloudSequence(np.zeros((4, 6, 2)), pts, np.zeros(4), 2)
        with pytest.raises(ShapeError):
            PointCloudSequence(pts, np.zeros((4, 5, 3)), np.zeros(4), 2)
        with pytest.raises(ShapeError):
            PointCloudSequence(pts, pts, np.zeros(3), 2)
        with pytest.raises(ShapeError):
            PointCloudSequence(pts, pts, np.full(4, 5), n_classes=2)
        clip = PointCloudSequence(pts, pts, np.zeros(4), 2)
        assert clip.n_frames == 4 and clip.n_points == 6

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            SynthPcdSpec(segment_len_bounds=(1, 5))
        with pytest.raises(ConfigurationError):
            SynthPcdSpec(segment_len_bounds=(8, 4))
        with pytest.raises(ConfigurationError):
            SynthPcdSpec(context_mode="windowed")
        with pytest.raises(ConfigurationError):
            SynthPcdSpec(seq_len=4, segment_len_bounds=(8, 10))
        with pytest.raises(ConfigurationError):
            SynthPcdSpec(n_classes=1)


class TestMakeInteractionClips:
    def _paired_spec(self, **kwargs):
        base = dict(
            n_sequences=8, seq_len=40, n_points=48, n_classes=4,
            segment_len_bounds=(8, 14), context_mode="paired", context_len=4, seed=3,
        )
        base.update(kwargs)
        return SynthPcdSpec(**base)

    def test_deterministic(self):
        spec = self._paired_spec(n_sequences=2)
        a = make_interaction_clips(spec)
        b = make_interaction_clips(spec)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.points, cb.points)
            assert np.array_equal(ca.labels, cb.labels)

    def test_labels_in_range_and_run_lengths(self):
        spec = self._paired_spec()
        for clip in make_interaction_clips(spec):
            assert clip.labels.min() >= 0 and clip.labels.max() < 4
            lo, hi = spec.segment_len_bounds
            for run in _run_lengths(clip.labels):
                assert lo <= run <= hi + lo - 1

    def test_context_bit_matches_opening_burst_sign(self):
        # paired classes differ only in the first-context_len z offset, whose
        # sign encodes the context bit that also lands in the label parity
        for clip in make_interaction_clips(self._paired_spec()):
            z0 = clip.points[0].mean(axis=0)[2]
            assert abs(z0) > 0.3
            assert (z0 > 0) == (clip.labels[0] % 2 == 1)

    def test_plain_mode_has_no_burst(self):
        spec = self._paired_spec(context_mode="plain", n_classes=3, seed=5)
        for clip in make_interaction_clips(spec):
            assert abs(clip.points[0].mean(axis=0)[2]) < 0.15

    def test_normals_are_unit_and_static(self):
        clip = make_interaction_clips(self._paired_spec(n_sequences=1))[0]
        norms = np.linalg.norm(clip.normals, axis=2)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)
        assert np.array_equal(clip.normals[0], clip.normals[-1])

    def test_velocity_centroid_oracle_separates_patterns(self):
        plain = SynthPcdSpec(
            n_sequences=6, seq_len=60, n_points=48, n_classes=3,
            segment_len_bounds=(8, 14), context_mode="plain", seed=5,
        )
        acc = velocity_centroid_accuracy(make_interaction_clips(plain))
        assert acc >= 90.0

    def test_velocity_centroid_oracle_cannot_resolve_context(self):
        # pattern is visible in velocity but the context bit is not, so the
        # frame-local oracle sits well below ceiling yet above chance (25%)
        acc = velocity_centroid_accuracy(make_interaction_clips(self._paired_spec()))
        assert 30.0 <= acc <= 90.0


class TestConverterStubs:
    def test_stubs_raise(self):
        with pytest.raises(NotImplementedError):
            convert_motion_capture_pair("clip.bvh")
        with pytest.raises(NotImplementedError):
            convert_depth_clip("scan.npz")
