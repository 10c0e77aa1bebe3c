"""Streaming action segmentation over point-cloud sequences.

The segmenter runs the 4D point backbone per frame, pools points into a
frame descriptor, enhances the frame stream with causal sequence blocks
(selective-SSM or transformer), fuses the pooled memory summary, and emits
per-frame class logits. Everything left of the logits is causal in online
mode, so frame t's prediction never moves when later frames change.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .datasets import PointCloudSequence
from .exceptions import ConfigurationError, NumericalError, ShapeError
from .memory import MemoryConfig, fuse_memory, rollout_pooled
from .nets import count_parameters, make_block, matched_ffn_width
from .point4d import PointBackbone4D
from .utils import derive_seed, numpy_generator
from .validation import check_choice, check_positive_int


class TemporalEnhancer(nn.Module):
    """Sequence blocks plus memory fusion over per-frame descriptors."""

    def __init__(self, in_dim, model_dim, n_classes, depth=2,
                 block_kind="mamba", state_dim=8, conv_width=4, expansion=2,
                 heads=2, ffn_width=None, fusion="concat_maxpool", online=True):
        super().__init__()
        self.model_dim = model_dim
        self.fusion = fusion
        self.proj = nn.Linear(in_dim, model_dim)
        self.blocks = nn.ModuleList(
            [
                make_block(
                    block_kind, model_dim, state_dim=state_dim,
                    conv_width=conv_width, expansion=expansion, heads=heads,
                    ffn_width=ffn_width, causal=online,
                )
                for _ in range(depth)
            ]
        )
        if fusion == "concat_maxpool":
            self.fuse_proj = nn.Linear(2 * model_dim, model_dim)
        else:
            self.fuse_proj = None
        self.head = nn.Linear(model_dim, n_classes)

    def hidden(self, frame_feats):
        h = self.proj(frame_feats)
        for blk in self.blocks:
            h = blk(h)
        return h

    def forward(self, frame_feats, memory_config):
        """frame_feats: (b, T, in_dim) -> logits (b, T, n_classes)."""
        h = self.hidden(frame_feats)
        if memory_config is not None and memory_config.variant != "off":
            mem = rollout_pooled(h, memory_config, include_current=True)
        else:
            mem = torch.zeros_like(h)
        if self.fusion == "concat_maxpool":
            h = self.fuse_proj(fuse_memory(h, mem, self.fusion))
        elif memory_config is not None and memory_config.variant != "off":
            h = fuse_memory(h, mem, self.fusion)
        return self.head(h)


class OnlineActionSegmenter(ClassifierMixin, BaseEstimator):
    """Per-frame action classifier over streaming point clouds.

    granularity="frame" pools points to one descriptor per frame before the
    temporal blocks; granularity="point" runs the temporal blocks on every
    point's feature stream and pools afterwards (slower, finer).
    """

    def __init__(self, channels=(12, 16, 24, 32), out_channels=32,
                 radius_base=0.3, radius_growth=1.8, temporal_radius=1,
                 frame_dt=0.1, model_dim=32, depth=2, temporal_model="mamba",
                 state_dim=8, conv_width=4, expansion=2, heads=2,
                 ffn_width=None, granularity="frame", memory="me",
                 fusion="concat_maxpool", short_capacity=8, long_capacity=8,
                 memory_mode="accumulate", similarity="dot", merge="mean",
                 mode="online", train_steps=150, batch_size=4,
                 learning_rate=2e-3, grad_clip=1.0, seed=0):
        self.channels = channels
        self.out_channels = out_channels
        self.radius_base = radius_base
        self.radius_growth = radius_growth
        self.temporal_radius = temporal_radius
        self.frame_dt = frame_dt
        self.model_dim = model_dim
        self.depth = depth
        self.temporal_model = temporal_model
        self.state_dim = state_dim
        self.conv_width = conv_width
        self.expansion = expansion
        self.heads = heads
        self.ffn_width = ffn_width
        self.granularity = granularity
        self.memory = memory
        self.fusion = fusion
        self.short_capacity = short_capacity
        self.long_capacity = long_capacity
        self.memory_mode = memory_mode
        self.similarity = similarity
        self.merge = merge
        self.mode = mode
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.seed = seed

    def _memory_config(self):
        return MemoryConfig(
            short_capacity=self.short_capacity,
            long_capacity=self.long_capacity,
            variant=self.memory,
            fusion=self.fusion,
            mode=self.memory_mode,
            similarity=self.similarity,
            merge=self.merge,
        )

    def _check_params(self):
        check_choice(self.temporal_model, "temporal_model",
                     ("mamba", "causal_transformer"))
        check_choice(self.mode, "mode", ("online", "offline"))
        check_choice(self.granularity, "granularity", ("frame", "point"))
        check_positive_int(self.train_steps, "train_steps", minimum=0)
        check_positive_int(self.batch_size, "batch_size")
        self._memory_config()

    @staticmethod
    def _stack_clips(clips):
        if not clips:
            raise ShapeError("need at least one clip")
        for c in clips:
            if not isinstance(c, PointCloudSequence):
                raise ShapeError("inputs must be PointCloudSequence instances")
        shapes = {(c.n_frames, c.n_points) for c in clips}
        if len(shapes) != 1:
            raise ShapeError(f"clips must share (T, n) shape, got {shapes}")
        points = torch.as_tensor(
            np.stack([c.points for c in clips]), dtype=torch.float32
        )
        normals = torch.as_tensor(
            np.stack([c.normals for c in clips]), dtype=torch.float32
        )
        labels = torch.as_tensor(np.stack([c.labels for c in clips]))
        return points, normals, labels

    def _build(self, n_classes, kind, ffn_width):
        backbone = PointBackbone4D(
            in_channels=3,
            channels=self.channels,
            out_channels=self.out_channels,
            radius_base=self.radius_base,
            radius_growth=self.radius_growth,
            temporal_radius=self.temporal_radius,
            online=self.mode == "online",
            frame_dt=self.frame_dt,
        )
        enhancer = TemporalEnhancer(
            in_dim=self.out_channels,
            model_dim=self.model_dim,
            n_classes=n_classes,
            depth=self.depth,
            block_kind=kind,
            state_dim=self.state_dim,
            conv_width=self.conv_width,
            expansion=self.expansion,
            heads=self.heads,
            ffn_width=ffn_width,
            fusion=self.fusion,
            online=self.mode == "online",
        )
        return backbone, enhancer

    def _frame_features(self, backbone, points, normals, anchors=None):
        per_point = backbone(points, normals, anchors)  # (b, T, n, C)
        if self.granularity == "frame":
            return per_point.max(dim=2).values  # (b, T, C)
        return per_point

    def _logits(self, backbone, enhancer, points, normals, anchors=None):
        feats = self._frame_features(backbone, points, normals, anchors)
        mem_cfg = self._memory_config()
        if self.granularity == "frame":
            return enhancer(feats, mem_cfg)
        # point granularity: enhance each point's stream, then pool frames.
        b, length, n, c = feats.shape
        streams = feats.permute(0, 2, 1, 3).reshape(b * n, length, c)
        h = enhancer.hidden(streams).reshape(b, n, length, -1).permute(0, 2, 1, 3)
        h = h.max(dim=2).values  # (b, T, model_dim)
        if mem_cfg.variant != "off":
            mem = rollout_pooled(h, mem_cfg, include_current=True)
        else:
            mem = torch.zeros_like(h)
        if enhancer.fuse_proj is not None:
            h = enhancer.fuse_proj(fuse_memory(h, mem, self.fusion))
        elif mem_cfg.variant != "off":
            h = fuse_memory(h, mem, self.fusion)
        return enhancer.head(h)

    def fit(self, X, y=None):
        """X: list of PointCloudSequence; y: optional list of (T,) labels
        overriding the labels stored on the clips."""
        self._check_params()
        points, normals, labels = self._stack_clips(X)
        if y is not None:
            labels = torch.as_tensor(np.stack([np.asarray(v) for v in y]))
        self.n_classes_ = int(max(c.n_classes for c in X))
        if int(labels.max()) >= self.n_classes_:
            raise ShapeError("labels exceed the declared class count")

        matched = self.ffn_width
        torch.manual_seed(derive_seed(self.seed, "init"))
        if self.temporal_model == "causal_transformer" and matched is None:
            ref_bb, ref_enh = self._build(self.n_classes_, "mamba", None)
            reference = count_parameters(ref_bb) + count_parameters(ref_enh)

            def build(width):
                bb, enh = self._build(self.n_classes_, "causal_transformer", width)
                return nn.ModuleList([bb, enh])

            matched = matched_ffn_width(reference, build)
        torch.manual_seed(derive_seed(self.seed, "init"))
        self.backbone_, self.enhancer_ = self._build(
            self.n_classes_, self.temporal_model, matched
        )
        self.matched_ffn_width_ = matched
        self.n_parameters_ = count_parameters(self.backbone_) + count_parameters(
            self.enhancer_
        )
        params = list(self.backbone_.parameters()) + list(
            self.enhancer_.parameters()
        )
        self.optimizer_ = torch.optim.Adam(params, lr=self.learning_rate)
        anchors = self.backbone_.precompute_anchors(points)
        n = points.shape[0]
        self.loss_history_ = []
        for step in range(self.train_steps):
            rng = numpy_generator(self.seed, "batch", step)
            idx = np.sort(rng.choice(n, size=min(self.batch_size, n), replace=False))
            torch.manual_seed(derive_seed(self.seed, "step", step))
            sel = torch.as_tensor(idx)
            logits = self._logits(
                self.backbone_,
                self.enhancer_,
                points[sel],
                normals[sel],
                [a[sel] for a in anchors],
            )
            loss = F.cross_entropy(
                logits.reshape(-1, self.n_classes_), labels[sel].reshape(-1)
            )
            self.optimizer_.zero_grad()
            loss.backward()
            if self.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(params, self.grad_clip)
            self.optimizer_.step()
            value = float(loss.detach())
            if not np.isfinite(value):
                raise NumericalError(f"training loss became non-finite at step {step}")
            self.loss_history_.append(value)
        self.backbone_.eval()
        self.enhancer_.eval()
        return self

    def _check_fitted(self):
        if not hasattr(self, "backbone_"):
            raise NotFittedError("this segmenter has not been fitted yet")

    def predict_logits(self, X):
        self._check_fitted()
        points, normals, _ = self._stack_clips(X)
        with torch.no_grad():
            return self._logits(self.backbone_, self.enhancer_, points, normals)

    def predict(self, X):
        """Per-frame labels, one (T,) int array per clip."""
        logits = self.predict_logits(X)
        pred = logits.argmax(dim=-1).numpy()
        return [pred[i] for i in range(pred.shape[0])]

    def score(self, X, y=None):
        """Framewise accuracy in [0, 1] against clip labels (or y)."""
        target = [c.labels for c in X] if y is None else y
        pred = self.predict(X)
        hits = sum(int((p == np.asarray(t)).sum()) for p, t in zip(pred, target))
        total = sum(len(p) for p in pred)
        return hits / total
