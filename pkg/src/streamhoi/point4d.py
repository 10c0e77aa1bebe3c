"""Spatio-temporal point convolution over point-cloud sequences.

One layer gathers, for every anchor point at frame t, the neighbors within a
spatial radius across a small window of nearby frames. Each neighbor emits a
message that is a linear map of its spatio-temporal displacement
(dx, dy, dz, dt) plus a linear map of its features; messages are max-pooled
over space and summed over the temporal window. In online mode the window
covers only past and current frames.

Anchors are chosen by farthest point sampling with a canonical start (the
point farthest from the centroid), so anchor selection is deterministic
without any RNG plumbing.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError, ShapeError


def _first_argmax(values):
    """Index of the maximum, smallest index on ties. values: (batch, n).

    Rows without a well-defined maximum (all NaN, e.g. a deliberately
    corrupted frame) fall back to index 0; their output is garbage anyway
    and must not crash the batch.
    """
    n = values.shape[1]
    top = values.max(dim=1, keepdim=True).values
    hit = values == top
    idx = torch.where(hit, torch.arange(n), torch.full((n,), n))
    idx = idx.min(dim=1).values
    return torch.where(idx >= n, torch.zeros_like(idx), idx)


def farthest_point_indices(points, k):
    """Batched farthest point sampling.

    points: (batch, n, 3); returns (batch, k) int64 anchor indices. The walk
    starts at the point farthest from the centroid and greedily adds the
    point maximizing the distance to the selected set (first index on ties).
    k must not exceed n.
    """
    if points.ndim != 3 or points.shape[-1] != 3:
        raise ShapeError(f"points must be (batch, n, 3), got {tuple(points.shape)}")
    batch, n, _ = points.shape
    if not (1 <= k <= n):
        raise ConfigurationError(f"k must be in [1, {n}], got {k}")
    rows = torch.arange(batch)
    centroid = points.mean(dim=1, keepdim=True)
    start = _first_argmax(torch.linalg.vector_norm(points - centroid, dim=2))
    chosen = [start]
    mind = torch.linalg.vector_norm(points - points[rows, start].unsqueeze(1), dim=2)
    for _ in range(1, k):
        nxt = _first_argmax(mind)
        chosen.append(nxt)
        d = torch.linalg.vector_norm(points - points[rows, nxt].unsqueeze(1), dim=2)
        mind = torch.minimum(mind, d)
    return torch.stack(chosen, dim=1)


def temporal_offsets(temporal_radius, online):
    if online:
        return list(range(-temporal_radius, 1))
    return list(range(-temporal_radius, temporal_radius + 1))


class PointConv4D(nn.Module):
    """One 4D point convolution: anchors gather neighbors across (space, time).

    Args:
        in_channels: per-point feature width of the source cloud.
        out_channels: message width.
        spatial_radius: neighbor cutoff in coordinate units.
        temporal_radius: frames of context on each side (past only if online).
        frame_dt: the time value assigned to one frame step in the
            displacement feature.
    """

    def __init__(self, in_channels, out_channels, spatial_radius,
                 temporal_radius=1, online=True, frame_dt=0.1):
        super().__init__()
        if spatial_radius <= 0:
            raise ConfigurationError("spatial_radius must be positive")
        if temporal_radius < 0:
            raise ConfigurationError("temporal_radius must be >= 0")
        self.spatial_radius = spatial_radius
        self.temporal_radius = temporal_radius
        self.online = online
        self.frame_dt = frame_dt
        self.disp = nn.Linear(4, out_channels, bias=False)  # W_d
        self.feat = nn.Linear(in_channels, out_channels, bias=False)  # W_f

    def forward(self, points, feats, anchor_idx):
        """points: (b, T, n, 3); feats: (b, T, n, C); anchor_idx: (b, T, m).

        Returns (anchor_points, messages): (b, T, m, 3) and (b, T, m, C').
        """
        b, length, n, _ = points.shape
        m = anchor_idx.shape[-1]
        gather = anchor_idx.unsqueeze(-1).expand(b, length, m, 3)
        anchors = torch.gather(points, 2, gather)  # (b, T, m, 3)
        out = None
        feat_msg = self.feat(feats)  # (b, T, n, C')
        for dt in temporal_offsets(self.temporal_radius, self.online):
            src_t = torch.arange(length) + dt
            valid = (src_t >= 0) & (src_t < length)  # (T,)
            src_t = src_t.clamp(0, length - 1)
            src_pts = points[:, src_t]  # (b, T, n, 3)
            src_msg = feat_msg[:, src_t]  # (b, T, n, C')
            flat_anchor = anchors.reshape(b * length, m, 3)
            flat_src = src_pts.reshape(b * length, n, 3)
            dist = torch.cdist(flat_anchor, flat_src).reshape(b, length, m, n)
            keep = dist <= self.spatial_radius
            keep = keep & valid.view(1, length, 1, 1)
            rel = src_pts.unsqueeze(2) - anchors.unsqueeze(3)  # (b, T, m, n, 3)
            dt_feat = torch.full_like(rel[..., :1], dt * self.frame_dt)
            msg = self.disp(torch.cat([rel, dt_feat], dim=-1))
            msg = msg + src_msg.unsqueeze(2)  # (b, T, m, n, C')
            msg = msg.masked_fill(~keep.unsqueeze(-1), float("-inf"))
            pooled = msg.max(dim=3).values  # spatial max-pool
            pooled = torch.where(
                torch.isinf(pooled), torch.zeros_like(pooled), pooled
            )
            out = pooled if out is None else out + pooled  # temporal sum-pool
        return anchors, out


def interpolate_features(targets, sources, feats, k=3, eps=1e-8):
    """Inverse-distance-weighted k-NN feature interpolation per frame.

    targets: (b, T, n, 3); sources: (b, T, m, 3); feats: (b, T, m, C).
    Returns (b, T, n, C).
    """
    b, length, n, _ = targets.shape
    m = sources.shape[2]
    k = min(k, m)
    dist = torch.cdist(
        targets.reshape(b * length, n, 3), sources.reshape(b * length, m, 3)
    )  # (bT, n, m)
    knn_d, knn_i = dist.topk(k, dim=2, largest=False)
    w = 1.0 / (knn_d + eps)
    w = w / w.sum(dim=2, keepdim=True)  # (bT, n, k)
    flat_feats = feats.reshape(b * length, m, -1)
    gathered = torch.gather(
        flat_feats.unsqueeze(1).expand(-1, n, -1, -1),
        2,
        knn_i.unsqueeze(-1).expand(-1, -1, -1, flat_feats.shape[-1]),
    )  # (bT, n, k, C)
    out = (w.unsqueeze(-1) * gathered).sum(dim=2)
    return out.reshape(b, length, n, -1)


class PointBackbone4D(nn.Module):
    """Four-level encoder/decoder over point-cloud sequences.

    The encoder halves the anchor count per level while widening channels;
    the decoder interpolates back up level by level, concatenating skip
    features. No temporal resampling happens anywhere; every frame keeps its
    own feature row, which is what the streaming head needs.
    """

    def __init__(self, in_channels=3, channels=(16, 24, 32, 48), out_channels=48,
                 radius_base=0.25, radius_growth=1.8, temporal_radius=1,
                 online=True, frame_dt=0.1):
        super().__init__()
        if len(channels) != 4:
            raise ConfigurationError("channels must list the 4 encoder widths")
        self.online = online
        self.channels = tuple(channels)
        self.convs = nn.ModuleList()
        prev = in_channels
        for level, width in enumerate(channels):
            self.convs.append(
                PointConv4D(
                    prev,
                    width,
                    spatial_radius=radius_base * (radius_growth**level),
                    temporal_radius=temporal_radius,
                    online=online,
                    frame_dt=frame_dt,
                )
            )
            prev = width
        self.dec_lins = nn.ModuleList()
        widths = list(channels)
        for level in range(3, 0, -1):
            self.dec_lins.append(
                nn.Linear(widths[level] + widths[level - 1], widths[level - 1])
            )
        self.out_lin = nn.Linear(channels[0], out_channels)

    def anchor_counts(self, n_points):
        counts = []
        for level in range(4):
            counts.append(max(n_points // (2**level), 4))
        return counts

    def precompute_anchors(self, points):
        """Hierarchical FPS anchor indices per level for a (b, T, n, 3) tensor.

        Level 0 keeps every point. The level-l indices select within the
        level-(l-1) anchor cloud, which is how the encoder consumes them.
        """
        b, length, n, _ = points.shape
        counts = self.anchor_counts(n)
        anchors = [torch.arange(n).view(1, 1, n).expand(b, length, n)]
        cur = points
        for level in range(1, 4):
            prev_m = cur.shape[2]
            sel = farthest_point_indices(
                cur.reshape(b * length, prev_m, 3), counts[level]
            ).reshape(b, length, counts[level])
            anchors.append(sel)
            cur = torch.gather(
                cur, 2, sel.unsqueeze(-1).expand(b, length, counts[level], 3)
            )
        return anchors

    def forward(self, points, feats, anchors=None):
        """points: (b, T, n, 3); feats: (b, T, n, C_in) -> (b, T, n, C_out)."""
        if anchors is None:
            anchors = self.precompute_anchors(points)
        skips = []  # (positions, features) per level
        cur_pts, cur_feats = points, feats
        for level in range(4):
            pts, msg = self.convs[level](cur_pts, cur_feats, anchors[level])
            msg = F.relu(msg)
            skips.append((pts, msg))
            cur_pts, cur_feats = pts, msg
        # Decoder: level 3 -> 0, interpolating and fusing skip features.
        pts_hi, feats_hi = skips[3]
        for j, level in enumerate(range(3, 0, -1)):
            pts_lo, feats_lo = skips[level - 1]
            up = interpolate_features(pts_lo, pts_hi, feats_hi)
            fused = F.relu(self.dec_lins[j](torch.cat([up, feats_lo], dim=-1)))
            pts_hi, feats_hi = pts_lo, fused
        return self.out_lin(feats_hi)  # (b, T, n, out)
