"""Denoising networks for motion generation.

The denoiser is a U-shaped stack without temporal resampling: an encoder of
sequence blocks, a conditioning attention that lets noisy motion tokens look
at the condition stream (causally in online mode), a memory fusion seam where
a pooled memory vector joins the hidden state, and a decoder of sequence
blocks wired to the encoder through long skip connections. The sequence
blocks are either selective-SSM blocks or pre-norm transformer blocks; both
fit the same skeleton so the two model families differ only in the temporal
mixer.

The network predicts the clean signal x0, not the added noise.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError
from .mamba import MambaBlock, RMSNorm
from .memory import FUSION_MODES, fuse_memory


def sinusoidal_embedding(values, dim, max_period=10000.0):
    """Map scalars in [0, 1] to (len, dim) sin/cos features."""
    values = values.reshape(-1).float()
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / max(half, 1)
    )
    args = values[:, None] * freqs[None, :] * max_period
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def masked_attention(q, k, v, allowed):
    """Scaled dot-product attention with an explicit keep-mask.

    q, k, v: (batch, heads, L, head_dim). allowed: (Lq, Lk) bool, True where
    a query may attend. Disallowed positions are excluded *before* softmax
    and their values are zeroed so that a corrupted (NaN) future token cannot
    leak into a past query through the 0 * NaN product; a corrupted token
    still poisons every query that is allowed to see it, which is what the
    causality checks rely on.
    """
    scale = q.shape[-1] ** -0.5
    scores = torch.matmul(q, k.transpose(-2, -1)) * scale  # (b, h, Lq, Lk)
    scores = scores.masked_fill(~allowed, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    v_safe = torch.where(torch.isfinite(v), v, torch.zeros_like(v))
    return torch.matmul(weights, v_safe)


class MultiheadSelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, allowed):
        batch, length, dim = x.shape
        qkv = self.qkv(x).reshape(batch, length, 3, self.heads, dim // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each (b, h, L, hd)
        out = masked_attention(q, k, v, allowed)
        out = out.transpose(1, 2).reshape(batch, length, dim)
        return self.proj(out)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feedforward block with optional causal mask."""

    def __init__(self, dim, heads=2, ffn_width=None, causal=True):
        super().__init__()
        self.causal = causal
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        ffn_width = 4 * dim if ffn_width is None else ffn_width
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_width), nn.GELU(), nn.Linear(ffn_width, dim)
        )

    def forward(self, x):
        length = x.shape[-2]
        if self.causal:
            allowed = torch.tril(torch.ones(length, length, dtype=torch.bool))
        else:
            allowed = torch.ones(length, length, dtype=torch.bool)
        x = x + self.attn(self.norm1(x), allowed)
        return x + self.ffn(self.norm2(x))


class ConditionAttention(nn.Module):
    """Cross-stream attention over [hidden | condition] token rows.

    Hidden and condition tokens for the same sequence are concatenated along
    the token axis with a stream embedding; in online mode token i may only
    attend to tokens whose frame index does not exceed its own, so frame t of
    the motion can see the condition up to t but nothing later.
    """

    def __init__(self, dim, heads=2):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads)
        self.stream = nn.Parameter(torch.zeros(2, dim))

    def forward(self, hidden, cond, online=True):
        batch, length, dim = hidden.shape
        tokens = torch.cat(
            [hidden + self.stream[0], cond + self.stream[1]], dim=1
        )  # (b, 2T, D)
        frame = torch.arange(length).repeat(2)
        if online:
            allowed = frame[:, None] >= frame[None, :]
        else:
            allowed = torch.ones(2 * length, 2 * length, dtype=torch.bool)
        out = self.attn(self.norm(tokens), allowed)
        return hidden + out[:, :length]


class PointSetEncoder(nn.Module):
    """Order-invariant object geometry summary: per-point MLP then max-pool."""

    def __init__(self, dim, hidden=32):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(3, hidden), nn.SiLU(), nn.Linear(hidden, dim)
        )

    def forward(self, points):
        # points: (batch, P, 3) -> (batch, dim)
        return self.mlp(points).max(dim=1).values


class ConditionEncoder(nn.Module):
    """Embed the per-frame condition stream (actor pose, object pose, shape)."""

    def __init__(self, actor_dim, object_pose_dim, dim):
        super().__init__()
        self.actor_proj = nn.Linear(actor_dim, dim)
        self.pose_proj = nn.Linear(object_pose_dim, dim)
        self.shape_enc = PointSetEncoder(dim)

    def forward(self, actor, object_pose, object_points):
        # actor: (b, T, Da); object_pose: (b, T, Dp); object_points: (b, P, 3)
        tokens = self.actor_proj(actor) + self.pose_proj(object_pose)
        return tokens + self.shape_enc(object_points).unsqueeze(1)


def make_block(kind, dim, state_dim=8, conv_width=4, expansion=2, heads=2,
               ffn_width=None, causal=True):
    if kind == "mamba":
        return MambaBlock(
            dim, state_dim=state_dim, conv_width=conv_width, expansion=expansion
        )
    if kind == "causal_transformer":
        return TransformerBlock(dim, heads=heads, ffn_width=ffn_width, causal=causal)
    raise ConfigurationError(f"unknown block kind {kind!r}")


class MotionDenoiser(nn.Module):
    """Clean-signal predictor for the motion diffusion model.

    Args:
        pose_dim: width of one generated pose vector.
        actor_dim: width of one conditioning actor pose vector.
        object_pose_dim: width of the object pose stream (translation+rotation).
        model_dim: hidden width.
        depth: number of encoder blocks (the decoder mirrors it).
        block_kind: "mamba" or "causal_transformer".
        fusion: how pooled memory joins the hidden state; with
            "concat_maxpool" the widths are [hidden | memory] -> model_dim.
            When memory is disabled the same seam receives zeros so parameter
            counts do not depend on the ablation axis.
        online: restrict the conditioning attention (and transformer blocks)
            to past frames. Selective-SSM blocks are causal either way.
    """

    def __init__(self, pose_dim, actor_dim, object_pose_dim=7, model_dim=48,
                 depth=2, block_kind="mamba", state_dim=8, conv_width=4,
                 expansion=2, heads=2, ffn_width=None, fusion="concat_maxpool",
                 online=True):
        super().__init__()
        if fusion not in FUSION_MODES:
            raise ConfigurationError(f"fusion must be one of {FUSION_MODES}")
        self.pose_dim = pose_dim
        self.model_dim = model_dim
        self.fusion = fusion
        self.online = online
        self.block_kind = block_kind

        self.embed = nn.Linear(pose_dim, model_dim)
        self.step_mlp = nn.Sequential(
            nn.Linear(model_dim, model_dim), nn.SiLU(), nn.Linear(model_dim, model_dim)
        )
        self.cond = ConditionEncoder(actor_dim, object_pose_dim, model_dim)

        def block():
            return make_block(
                block_kind, model_dim, state_dim=state_dim, conv_width=conv_width,
                expansion=expansion, heads=heads, ffn_width=ffn_width, causal=online,
            )

        self.enc_blocks = nn.ModuleList([block() for _ in range(depth)])
        self.cond_attn = ConditionAttention(model_dim, heads=heads)
        if fusion == "concat_maxpool":
            self.fuse_proj = nn.Linear(2 * model_dim, model_dim)
        else:
            self.fuse_proj = None
        self.skip_projs = nn.ModuleList(
            [nn.Linear(2 * model_dim, model_dim) for _ in range(depth)]
        )
        self.dec_blocks = nn.ModuleList([block() for _ in range(depth)])
        self.out_norm = RMSNorm(model_dim)
        self.head = nn.Linear(model_dim, pose_dim)

    def encode(self, x, steps, cond_tokens):
        """Encoder half: token embedding, blocks, conditioning attention.

        x: (b, T, pose_dim); steps: (b,) floats in [0, 1]; cond_tokens from
        the condition encoder. Returns (features, skips).
        """
        h = self.embed(x) + self.step_mlp(
            sinusoidal_embedding(steps, self.model_dim).to(x.dtype)
        ).unsqueeze(1)
        skips = []
        for blk in self.enc_blocks:
            h = blk(h)
            skips.append(h)
        h = self.cond_attn(h, cond_tokens, online=self.online)
        return h, skips

    def clean_features(self, x0, cond_tokens):
        """Encoder features of an uncorrupted sequence (step 0); feeds memory."""
        steps = torch.zeros(x0.shape[0], dtype=x0.dtype)
        features, _ = self.encode(x0, steps, cond_tokens)
        return features

    def decode(self, features, skips, memory_pooled):
        if self.fusion == "concat_maxpool":
            mem = (
                torch.zeros_like(features) if memory_pooled is None else memory_pooled
            )
            h = self.fuse_proj(fuse_memory(features, mem, self.fusion))
        elif memory_pooled is None:
            h = features
        else:
            h = fuse_memory(features, memory_pooled, self.fusion)
        for i, blk in enumerate(self.dec_blocks):
            h = self.skip_projs[i](torch.cat([h, skips[-1 - i]], dim=-1))
            h = blk(h)
        return self.head(self.out_norm(h))

    def forward(self, x_t, steps, cond_tokens, memory_pooled=None):
        """Predict x0 from a corrupted sequence.

        x_t: (b, T, pose_dim); steps: (b,) floats in [0, 1] (t / n_steps);
        cond_tokens: (b, T, model_dim); memory_pooled: (b, T, model_dim) or
        None when memory is off.
        """
        features, skips = self.encode(x_t, steps, cond_tokens)
        return self.decode(features, skips, memory_pooled)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def matched_ffn_width(reference_params, build, low=1, high=4096, tol=0.10):
    """Find an ffn width making build(width) match a parameter budget.

    build(width) must return a module. Returns the width whose parameter
    count is closest to reference_params; raises if nothing lands within
    tol (relative).
    """
    best_width, best_err = None, None
    lo, hi = low, high
    while lo <= hi:
        mid = (lo + hi) // 2
        params = count_parameters(build(mid))
        err = abs(params - reference_params) / reference_params
        if best_err is None or err < best_err:
            best_err, best_width = err, mid
        if params < reference_params:
            lo = mid + 1
        else:
            hi = mid - 1
    if best_err is None or best_err > tol:
        raise ConfigurationError(
            f"could not match parameter budget {reference_params} within "
            f"{tol:.0%} (best width {best_width}, err {best_err:.1%})"
        )
    return best_width
