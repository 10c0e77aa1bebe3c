"""Synthetic interaction data for the generation and perception tasks.

Two generators:

make_motion_pairs builds (actor, object, reactor) triples. The reactor pose
is a causal function of the actor/object history: an exponential moving
average of the actor, a lagged actor echo, a projection of the object
position, an optional long-range latent channel, and seeded noise. With the
noise scale at zero the reactor is exactly reconstructible from the history
(reactor_from_history is that oracle). The latent channel writes a
per-sequence sign into the first few reactor frames (a short burst) and then
re-applies it additively to every later frame; it is deliberately invisible
in the conditioning stream, so a streaming generator can only stay
consistent with it by remembering its own early output.

make_interaction_clips builds point-cloud sequences of a rigid primitive
moving through class-specific velocity patterns, labeled per frame. Classes
come in (pattern, context) pairs: the context bit is only visible during an
opening burst, after which paired classes move identically. Set
context_mode="plain" for fully frame-local labels.
"""

import dataclasses

import numpy as np

from .exceptions import ConfigurationError, ShapeError
from .utils import numpy_generator
from .validation import check_label_array, check_motion_array

OBJECT_FEATURE_SEED = 90125  # fixed mixing matrix shared by all datasets


@dataclasses.dataclass
class MotionSequence:
    """One pose-vector sequence: frames is (T, D), fps in frames/second."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.frames = check_motion_array(self.frames, "frames")
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ConfigurationError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def pose_dim(self):
        return self.frames.shape[1]


@dataclasses.dataclass
class MotionPair:
    """A conditioning stream plus the motion to be generated.

    actor: the observed agent's pose sequence (T, Da).
    object_points: static object geometry (P, 3).
    object_pose: per-frame object position+orientation (T, 7) as
        (x, y, z, qw, qx, qy, qz).
    reactor: the target pose sequence (T, Dp).
    action_class: integer interaction label.
    latent: the hidden per-sequence sign driving the long-range channel
        (kept for oracles; models must not read it).
    """

    actor: MotionSequence
    object_points: np.ndarray
    object_pose: np.ndarray
    reactor: MotionSequence
    action_class: int
    latent: float = 0.0

    def __post_init__(self):
        self.object_points = np.asarray(self.object_points, dtype=np.float64)
        self.object_pose = np.asarray(self.object_pose, dtype=np.float64)
        if self.object_points.ndim != 2 or self.object_points.shape[1] != 3:
            raise ShapeError(
                f"object_points must be (P, 3), got {self.object_points.shape}"
            )
        if self.object_pose.shape != (self.actor.n_frames, 7):
            raise ShapeError(
                f"object_pose must be (T, 7) with T={self.actor.n_frames}, "
                f"got {self.object_pose.shape}"
            )
        if self.reactor.n_frames != self.actor.n_frames:
            raise ShapeError("actor and reactor must have the same length")


@dataclasses.dataclass
class SynthMotionSpec:
    """Knobs of the synthetic interaction-motion family."""

    n_sequences: int = 16
    seq_len: int = 24
    pose_dim: int = 4
    actor_dim: int = 4
    n_classes: int = 4
    n_object_points: int = 32
    lag: int = 2
    ema_decay: float = 0.85
    ema_weight: float = 0.9
    lag_weight: float = 0.5
    object_weight: float = 0.3
    noise_scale: float = 0.02
    long_range_weight: float = 0.0
    long_range_start: int = 5
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.lag < 1:
            raise ConfigurationError(f"lag must be >= 1, got {self.lag}")
        if self.seq_len < self.long_range_start + 2:
            raise ConfigurationError("seq_len too short for the long-range channel")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ConfigurationError("ema_decay must be in [0, 1)")
        if self.n_classes < 1 or self.pose_dim < 1 or self.actor_dim < 1:
            raise ConfigurationError("n_classes and dims must be positive")


def _object_mixing_matrix(pose_dim):
    rng = np.random.default_rng(OBJECT_FEATURE_SEED)
    return 0.3 * rng.standard_normal((3, pose_dim))


def _latent_directions(pose_dim):
    burst = np.array([(-1.0) ** d for d in range(pose_dim)])
    burst /= np.linalg.norm(burst)
    late = np.array([np.cos(0.9 * d + 0.4) for d in range(pose_dim)])
    late /= np.linalg.norm(late)
    return burst, late


def _primitive_points(kind, n_points, rng, radius=0.3):
    """Points + analytic unit normals on a sphere or cube surface."""
    if kind == "sphere":
        # Fibonacci lattice: deterministic, near-uniform.
        i = np.arange(n_points, dtype=np.float64)
        phi = np.arccos(1 - 2 * (i + 0.5) / n_points)
        theta = np.pi * (1 + 5**0.5) * i
        normals = np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
            axis=1,
        )
        return radius * normals, normals
    if kind == "cube":
        faces = np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            dtype=np.float64,
        )
        pts, nrm = [], []
        for j in range(n_points):
            f = faces[j % 6]
            uv = rng.uniform(-1, 1, size=2)
            # Build the two in-face axes from the face normal.
            axis_a = np.roll(np.abs(f), 1)
            axis_b = np.roll(np.abs(f), 2)
            pts.append(radius * (f + uv[0] * axis_a + uv[1] * axis_b))
            nrm.append(f)
        return np.asarray(pts), np.asarray(nrm)
    raise ConfigurationError(f"unknown primitive {kind!r}")


def _actor_trajectory(spec, action_class, rng):
    t = np.arange(spec.seq_len, dtype=np.float64)
    omega = 0.25 + 0.12 * action_class
    amp = (0.8 + 0.2 * action_class) * (1.0 + 0.1 * rng.standard_normal())
    phase = 2 * np.pi * np.arange(spec.actor_dim) / spec.actor_dim
    jitter = 0.3 * rng.standard_normal(spec.actor_dim)
    frames = amp * np.sin(omega * t[:, None] + phase[None, :] + jitter[None, :])
    frames += 0.4 * np.cos(0.53 * omega * t[:, None] + 1.7 * phase[None, :])
    return frames


def _object_track(spec, action_class, rng):
    t = np.arange(spec.seq_len, dtype=np.float64)
    nu = 0.10 + 0.03 * (action_class % 4)
    theta0 = rng.uniform(0, 2 * np.pi)
    pos = np.stack(
        [
            0.6 * np.cos(nu * t + theta0),
            0.6 * np.sin(nu * t + theta0),
            0.3 * np.sin(0.5 * nu * t + theta0),
        ],
        axis=1,
    )
    yaw = nu * t
    quat = np.stack(
        [np.cos(yaw / 2), np.zeros_like(yaw), np.zeros_like(yaw), np.sin(yaw / 2)],
        axis=1,
    )
    return np.concatenate([pos, quat], axis=1)  # (T, 7)


def reactor_from_history(actor, object_pose, latent, spec):
    """Noise-free reactor reconstruction from the causal history.

    This is the generative rule itself with the noise term removed: with
    spec.noise_scale == 0, make_motion_pairs produces exactly this sequence.
    """
    actor = check_motion_array(actor, "actor")
    length = actor.shape[0]
    w_obj = _object_mixing_matrix(spec.pose_dim)
    burst_dir, late_dir = _latent_directions(spec.pose_dim)
    out = np.zeros((length, spec.pose_dim))
    ema = np.zeros(spec.actor_dim)
    proj = _actor_to_pose_matrix(spec)
    for t in range(length):
        lagged = actor[max(t - spec.lag, 0)]
        base = (
            spec.ema_weight * (ema @ proj)
            + spec.lag_weight * (lagged @ proj)
            + spec.object_weight * (object_pose[t, :3] @ w_obj)
        )
        if spec.long_range_weight > 0:
            if t < spec.long_range_start:
                strength = 1.0 - t / spec.long_range_start
                base = base + 2.0 * spec.long_range_weight * latent * strength * burst_dir
            else:
                base = base + spec.long_range_weight * latent * late_dir
        out[t] = base
        ema = spec.ema_decay * ema + (1 - spec.ema_decay) * actor[t]
    return out


def _actor_to_pose_matrix(spec):
    """Fixed actor-to-reactor coupling map (a generative-family constant)."""
    rng = np.random.default_rng(OBJECT_FEATURE_SEED + 1)
    m = rng.standard_normal((spec.actor_dim, spec.pose_dim))
    return m / np.sqrt(spec.actor_dim)


def make_motion_pairs(spec):
    """Sample a balanced list of MotionPair per the spec. Deterministic."""
    pairs = []
    for i in range(spec.n_sequences):
        rng = numpy_generator(spec.seed, "motion", i)
        action_class = i % spec.n_classes
        actor = _actor_trajectory(spec, action_class, rng)
        object_pose = _object_track(spec, action_class, rng)
        kind = "sphere" if action_class % 2 == 0 else "cube"
        points, _ = _primitive_points(
            kind, spec.n_object_points, rng, radius=0.25 + 0.05 * (action_class % 3)
        )
        latent = 1.0 if rng.uniform() < 0.5 else -1.0
        clean = reactor_from_history(actor, object_pose, latent, spec)
        noise = spec.noise_scale * rng.standard_normal(clean.shape)
        pairs.append(
            MotionPair(
                actor=MotionSequence(actor, fps=spec.fps),
                object_points=points,
                object_pose=object_pose,
                reactor=MotionSequence(clean + noise, fps=spec.fps),
                action_class=action_class,
                latent=latent,
            )
        )
    return pairs


@dataclasses.dataclass
class PointCloudSequence:
    """A labeled 4D clip: points (T, n, 3), normals (T, n, 3), labels (T,)."""

    points: np.ndarray
    normals: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ShapeError(f"points must be (T, n, 3), got {self.points.shape}")
        if self.normals.shape != self.points.shape:
            raise ShapeError("normals must match points")
        self.labels = check_label_array(self.labels, "labels", self.n_classes)
        if self.labels.shape[0] != self.points.shape[0]:
            raise ShapeError("labels must have one entry per frame")

    @property
    def n_frames(self):
        return self.points.shape[0]

    @property
    def n_points(self):
        return self.points.shape[1]


@dataclasses.dataclass
class SynthPcdSpec:
    """Knobs of the synthetic 4D segmentation family."""

    n_sequences: int = 8
    seq_len: int = 150
    n_points: int = 64
    n_classes: int = 19
    segment_len_bounds: tuple = (8, 30)
    context_mode: str = "paired"  # "paired" or "plain"
    context_len: int = 4
    jitter: float = 0.003
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.segment_len_bounds
        if lo < 2 or hi < lo:
            raise ConfigurationError(
                f"segment_len_bounds must satisfy 2 <= lo <= hi, got {lo, hi}"
            )
        if self.context_mode not in ("paired", "plain"):
            raise ConfigurationError("context_mode must be 'paired' or 'plain'")
        if self.seq_len < lo:
            raise ConfigurationError("seq_len shorter than the minimum segment")
        if self.n_classes < 2:
            raise ConfigurationError("need at least 2 classes")


def _pattern_directions(n_patterns):
    dirs = []
    for p in range(n_patterns):
        angle = 2 * np.pi * p / max(n_patterns, 1)
        tilt = 0.4 * ((-1) ** p)
        v = np.array([np.cos(angle), np.sin(angle), tilt])
        dirs.append(v / np.linalg.norm(v))
    return np.asarray(dirs)


def _segment_layout(spec, rng):
    """Segment lengths covering seq_len, each >= 2."""
    lo, hi = spec.segment_len_bounds
    lengths = []
    remaining = spec.seq_len
    while remaining > 0:
        seg = int(rng.integers(lo, hi + 1))
        if remaining - seg < lo:
            seg = remaining  # absorb the tail so no segment is undersized
        lengths.append(seg)
        remaining -= seg
    return lengths


def make_interaction_clips(spec):
    """Sample labeled point-cloud sequences. Deterministic given the seed."""
    if spec.context_mode == "paired":
        n_patterns = (spec.n_classes + 1) // 2
    else:
        n_patterns = spec.n_classes
    dirs = _pattern_directions(n_patterns)
    clips = []
    for i in range(spec.n_sequences):
        rng = numpy_generator(spec.seed, "pcd", i)
        kind = "sphere" if i % 2 == 0 else "cube"
        base_points, base_normals = _primitive_points(kind, spec.n_points, rng)
        context = int(rng.integers(0, 2)) if spec.context_mode == "paired" else 0
        lengths = _segment_layout(spec, rng)
        labels = np.zeros(spec.seq_len, dtype=np.int64)
        velocity = np.zeros((spec.seq_len, 3))
        t0 = 0
        prev_pattern = -1
        for seg_len in lengths:
            pattern = int(rng.integers(0, n_patterns))
            if n_patterns > 1 and pattern == prev_pattern:
                pattern = (pattern + 1) % n_patterns
            prev_pattern = pattern
            if spec.context_mode == "paired":
                label = 2 * pattern + context
                if label >= spec.n_classes:
                    label = 2 * pattern
            else:
                label = pattern
            labels[t0 : t0 + seg_len] = label
            speed = 0.05 + 0.01 * pattern
            omega = 0.3 + 0.05 * pattern
            local_t = np.arange(seg_len)
            wobble = 1.0 + 0.3 * np.sin(omega * local_t)
            velocity[t0 : t0 + seg_len] = speed * wobble[:, None] * dirs[pattern]
            t0 += seg_len
        center = np.cumsum(velocity, axis=0)
        points = base_points[None, :, :] + center[:, None, :]
        if spec.context_mode == "paired":
            burst_t = np.arange(spec.seq_len)
            envelope = np.where(
                burst_t < spec.context_len,
                np.sin(np.pi * (burst_t + 1) / (spec.context_len + 1)),
                0.0,
            )
            sign = 1.0 if context == 1 else -1.0
            points = points + (0.8 * sign * envelope)[:, None, None] * np.array(
                [0.0, 0.0, 1.0]
            )
        points = points + spec.jitter * rng.standard_normal(points.shape)
        normals = np.broadcast_to(
            base_normals[None, :, :], points.shape
        ).copy()
        clips.append(
            PointCloudSequence(
                points=points,
                normals=normals,
                labels=labels,
                n_classes=spec.n_classes,
            )
        )
    return clips


def velocity_centroid_accuracy(train_clips, test_clips=None):
    """Sanity oracle: nearest class centroid on per-frame centroid velocity.

    This resolves the motion pattern (not the context bit), so it should beat
    chance by a wide margin on any healthy draw of the generator.
    """
    test_clips = train_clips if test_clips is None else test_clips

    def frame_features(clip):
        centers = clip.points.mean(axis=1)  # (T, 3)
        vel = np.diff(centers, axis=0, prepend=centers[:1])
        return vel

    sums, counts = {}, {}
    for clip in train_clips:
        feats = frame_features(clip)
        for label in np.unique(clip.labels):
            mask = clip.labels == label
            sums[label] = sums.get(label, 0) + feats[mask].sum(axis=0)
            counts[label] = counts.get(label, 0) + mask.sum()
    classes = sorted(sums)
    centroids = np.stack([sums[c] / counts[c] for c in classes])
    hits = total = 0
    for clip in test_clips:
        feats = frame_features(clip)
        d = np.linalg.norm(feats[:, None, :] - centroids[None, :, :], axis=2)
        pred = np.asarray(classes)[d.argmin(axis=1)]
        hits += (pred == clip.labels).sum()
        total += clip.labels.size
    return 100.0 * hits / total


def convert_motion_capture_pair(source_path):
    """Converter stub for real paired-motion data.

    A real adapter must produce one MotionPair per interaction clip with:
      actor.frames        (T, Da)  flattened joint rotations or positions of
                                   the observed agent, one row per frame
      reactor.frames      (T, Dp)  the target agent's pose rows, same T
      object_points       (P, 3)   object surface sample in the world frame
      object_pose         (T, 7)   per-frame object (x, y, z, qw, qx, qy, qz)
      action_class        int      interaction category id
      fps                 float    capture rate after any resampling
    Sequences must share fps and be trimmed to a common frame alignment.
    """
    raise NotImplementedError(
        "dataset adapter not included; see the docstring for the field mapping"
    )


def convert_depth_clip(source_path):
    """Converter stub for real 4D segmentation data.

    A real adapter must produce one PointCloudSequence per clip with:
      points     (T, n, 3)  per-frame point sample, fixed n (resample frames)
      normals    (T, n, 3)  unit normals per point (estimate if absent)
      labels     (T,)       per-frame action id in [0, n_classes)
      n_classes  int        label-space size shared by the whole dataset
    """
    raise NotImplementedError(
        "dataset adapter not included; see the docstring for the field mapping"
    )
