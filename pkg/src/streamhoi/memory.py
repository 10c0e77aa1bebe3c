"""Short/long-term memory over per-frame feature vectors.

ShortTermMemory is a fixed-capacity FIFO: the first observed frame fills the
whole buffer with copies, after which each push appends the newest frame and
evicts the oldest. LongTermMemory keeps an ordered list of consolidated
frames: while it is over capacity, the most similar adjacent pair is merged
(earliest pair on ties) so temporally redundant content collapses first.

The combined MemoryState drives both and produces the pooled summary vector
that gets fused with a model's hidden states. Entries are torch tensors and
all merging/pooling is expressed with differentiable ops, so gradients flow
through memory during training.
"""

import dataclasses

import numpy as np
import torch

from .exceptions import ConfigurationError, InvalidStateError, ShapeError
from .validation import as_float_tensor

MEMORY_VARIANTS = ("off", "ms_only", "ml_only", "me")
FUSION_MODES = ("concat_maxpool", "add", "max")


def _check_frame(frame, dim):
    frame = as_float_tensor(frame, "frame")
    if frame.ndim != 1:
        raise ShapeError(f"frame must be 1-d, got shape {tuple(frame.shape)}")
    if dim is not None and frame.shape[0] != dim:
        raise ShapeError(f"frame has dim {frame.shape[0]}, expected {dim}")
    return frame


class ShortTermMemory:
    """Sliding window of the last `capacity` frames.

    The first push copies the incoming frame into every slot, so the buffer
    always has exactly `capacity` entries once anything has been observed.
    `push` returns the evicted frame, or None while copies of the initial
    frame are still being displaced (those padding copies were never really
    observed, so downstream consumers must not treat them as history).
    """

    def __init__(self, capacity):
        if not isinstance(capacity, int) or capacity < 1:
            raise ConfigurationError(f"capacity must be a positive int, got {capacity}")
        self.capacity = capacity
        self._frames = []
        self._is_padding = []
        self.dim = None

    def __len__(self):
        return len(self._frames)

    @property
    def frames(self):
        return list(self._frames)

    def push(self, frame):
        """Insert the newest frame; return the evicted real frame or None."""
        frame = _check_frame(frame, self.dim)
        if self.dim is None:
            self.dim = frame.shape[0]
        if not self._frames:
            self._frames = [frame] * self.capacity
            self._is_padding = [True] * (self.capacity - 1) + [False]
            return None
        self._frames.append(frame)
        self._is_padding.append(False)
        evicted = self._frames.pop(0)
        was_padding = self._is_padding.pop(0)
        return None if was_padding else evicted


def merge_frames(a, b, count_a=1, count_b=1, merge="mean"):
    """Merge two adjacent frames into one."""
    if merge == "mean":
        return (a + b) / 2
    if merge == "count_weighted":
        return (count_a * a + count_b * b) / (count_a + count_b)
    raise ConfigurationError(f"unknown merge rule {merge!r}")


def pair_similarity(a, b, similarity="dot"):
    if similarity == "dot":
        return torch.dot(a, b)
    if similarity == "cosine":
        denom = torch.linalg.vector_norm(a) * torch.linalg.vector_norm(b)
        return torch.dot(a, b) / (denom + 1e-12)
    raise ConfigurationError(f"unknown similarity {similarity!r}")


def consolidate(frames, capacity, counts=None, similarity="dot", merge="mean"):
    """Reduce an ordered frame list to at most `capacity` entries.

    While the list is too long, the adjacent pair with the highest similarity
    is merged (the earliest such pair on exact ties) and the second member is
    dropped. Returns (frames, counts); counts track how many original frames
    each surviving entry absorbed.
    """
    if not isinstance(capacity, int) or capacity < 1:
        raise ConfigurationError(f"capacity must be a positive int, got {capacity}")
    frames = list(frames)
    counts = [1] * len(frames) if counts is None else list(counts)
    if len(counts) != len(frames):
        raise ShapeError("counts must align with frames")
    while len(frames) > capacity:
        best_i = 0
        best_sim = None
        for i in range(len(frames) - 1):
            sim = float(
                pair_similarity(frames[i], frames[i + 1], similarity).detach()
            )
            if best_sim is None or sim > best_sim:
                best_sim = sim
                best_i = i
        merged = merge_frames(
            frames[best_i],
            frames[best_i + 1],
            counts[best_i],
            counts[best_i + 1],
            merge=merge,
        )
        frames[best_i] = merged
        counts[best_i] = counts[best_i] + counts[best_i + 1]
        del frames[best_i + 1]
        del counts[best_i + 1]
    return frames, counts


class LongTermMemory:
    """Ordered consolidated history with at most `capacity` entries."""

    def __init__(self, capacity, similarity="dot", merge="mean"):
        if not isinstance(capacity, int) or capacity < 1:
            raise ConfigurationError(f"capacity must be a positive int, got {capacity}")
        if similarity not in ("dot", "cosine"):
            raise ConfigurationError(f"unknown similarity {similarity!r}")
        if merge not in ("mean", "count_weighted"):
            raise ConfigurationError(f"unknown merge rule {merge!r}")
        self.capacity = capacity
        self.similarity = similarity
        self.merge = merge
        self._frames = []
        self._counts = []

    def __len__(self):
        return len(self._frames)

    @property
    def frames(self):
        return list(self._frames)

    @property
    def merge_counts(self):
        return list(self._counts)

    def admit(self, frame):
        """Append a frame evicted from short-term memory and re-consolidate."""
        frame = _check_frame(frame, self._frames[0].shape[0] if self._frames else None)
        self._frames.append(frame)
        self._counts.append(1)
        self._frames, self._counts = consolidate(
            self._frames,
            self.capacity,
            counts=self._counts,
            similarity=self.similarity,
            merge=self.merge,
        )


@dataclasses.dataclass
class MemoryConfig:
    short_capacity: int = 8
    long_capacity: int = 8
    variant: str = "me"
    fusion: str = "concat_maxpool"
    mode: str = "accumulate"
    similarity: str = "dot"
    merge: str = "mean"

    def __post_init__(self):
        if self.variant not in MEMORY_VARIANTS:
            raise ConfigurationError(f"variant must be one of {MEMORY_VARIANTS}")
        if self.fusion not in FUSION_MODES:
            raise ConfigurationError(f"fusion must be one of {FUSION_MODES}")
        if self.mode not in ("accumulate", "literal"):
            raise ConfigurationError("mode must be 'accumulate' or 'literal'")


class MemoryState:
    """Short-term FIFO plus long-term consolidated store over one stream.

    mode="accumulate" admits every real frame evicted from the FIFO into
    long-term memory. mode="literal" instead rebuilds long-term memory as a
    consolidated copy of the current FIFO contents after every observation,
    which forgets anything older than the window; it is kept for comparison.
    """

    def __init__(self, dim, config=None):
        self.config = MemoryConfig() if config is None else config
        if dim is not None and (not isinstance(dim, int) or dim < 1):
            raise ConfigurationError(f"dim must be a positive int, got {dim}")
        self.dim = dim
        self.short = ShortTermMemory(self.config.short_capacity)
        self.long = LongTermMemory(
            self.config.long_capacity,
            similarity=self.config.similarity,
            merge=self.config.merge,
        )
        self.n_observed = 0

    def observe(self, frame):
        frame = _check_frame(frame, self.dim)
        if self.dim is None:
            self.dim = frame.shape[0]
        evicted = self.short.push(frame)
        if self.config.mode == "accumulate":
            if evicted is not None:
                self.long.admit(evicted)
        else:
            frames, counts = consolidate(
                self.short.frames,
                self.config.long_capacity,
                similarity=self.config.similarity,
                merge=self.config.merge,
            )
            self.long._frames = frames
            self.long._counts = counts
        self.n_observed += 1

    def entries(self, variant=None):
        """Memory rows that participate in pooling, in order (short then long)."""
        variant = self.config.variant if variant is None else variant
        if variant not in MEMORY_VARIANTS:
            raise ConfigurationError(f"variant must be one of {MEMORY_VARIANTS}")
        rows = []
        if variant in ("ms_only", "me"):
            rows.extend(self.short.frames)
        if variant in ("ml_only", "me"):
            rows.extend(self.long.frames)
        return rows

    def pooled(self, variant=None):
        """Elementwise max over the stacked memory rows; zeros if empty."""
        rows = self.entries(variant)
        if not rows:
            if self.dim is None:
                raise InvalidStateError(
                    "memory dim is unknown; observe a frame or pass dim at init"
                )
            ref = self.short._frames[0] if self.short._frames else None
            dtype = ref.dtype if ref is not None else torch.get_default_dtype()
            return torch.zeros(self.dim, dtype=dtype)
        return torch.stack(rows).max(dim=0).values

    def state_arrays(self):
        """Serialize buffers to plain numpy arrays for snapshot files."""
        if self.dim is None:
            raise InvalidStateError("cannot snapshot before the dim is known")
        short = self.short.frames
        return {
            "short": np.stack([f.detach().numpy() for f in short])
            if short
            else np.zeros((0, self.dim)),
            "short_padding": np.asarray(self.short._is_padding, dtype=bool),
            "long": np.stack([f.detach().numpy() for f in self.long.frames])
            if len(self.long)
            else np.zeros((0, self.dim)),
            "merge_counts": np.asarray(self.long.merge_counts, dtype=np.int64),
            "n_observed": np.asarray(self.n_observed, dtype=np.int64),
        }

    def load_state_arrays(self, arrays):
        self.short._frames = [torch.as_tensor(row) for row in arrays["short"]]
        self.short._is_padding = [bool(v) for v in arrays["short_padding"]]
        if self.short._frames:
            self.short.dim = self.short._frames[0].shape[0]
        self.long._frames = [torch.as_tensor(row) for row in arrays["long"]]
        self.long._counts = [int(v) for v in arrays["merge_counts"]]
        self.n_observed = int(arrays["n_observed"])
        return self


def save_memory_state(path, state):
    np.savez(path, **state.state_arrays())


def load_memory_state(path, dim, config=None):
    state = MemoryState(dim, config=config)
    with np.load(path) as data:
        state.load_state_arrays({k: data[k] for k in data.files})
    return state


def fuse_memory(hidden, pooled, fusion="concat_maxpool"):
    """Combine a hidden-state tensor with a pooled memory vector.

    hidden is (..., D); pooled is (D,) or broadcastable to hidden. The
    concat variant returns (..., 2D) for the caller to project back down;
    add/max keep the width.
    """
    if fusion not in FUSION_MODES:
        raise ConfigurationError(f"fusion must be one of {FUSION_MODES}")
    pooled = pooled.expand_as(hidden) if pooled.shape != hidden.shape else pooled
    if fusion == "concat_maxpool":
        return torch.cat([hidden, pooled], dim=-1)
    if fusion == "add":
        return hidden + pooled
    return torch.maximum(hidden, pooled)


def rollout_pooled(features, config, include_current=True):
    """Pooled memory summary per timestep for a feature sequence.

    Parameters
    ----------
    features : (T, D) or (batch, T, D) tensor of per-frame features.
    config : MemoryConfig.
    include_current : if True, pooled[t] summarizes frames [0..t]; if False
        it summarizes strictly past frames [0..t-1] (zeros at t = 0), which
        is what a generator conditioning on its own already-emitted frames
        needs.

    Returns
    -------
    Tensor shaped like features. For variant "off" this is all zeros.
    """
    squeeze = features.ndim == 2
    if squeeze:
        features = features.unsqueeze(0)
    batch, length, dim = features.shape
    if config.variant == "off":
        out = torch.zeros_like(features)
        return out.squeeze(0) if squeeze else out
    rows = []
    for b in range(batch):
        state = MemoryState(dim, config=config)
        pooled_t = []
        for t in range(length):
            if include_current:
                state.observe(features[b, t])
                pooled_t.append(state.pooled())
            else:
                pooled_t.append(
                    state.pooled()
                    if state.n_observed
                    else torch.zeros(dim, dtype=features.dtype)
                )
                state.observe(features[b, t])
        rows.append(torch.stack(pooled_t))
    out = torch.stack(rows)
    return out.squeeze(0) if squeeze else out
