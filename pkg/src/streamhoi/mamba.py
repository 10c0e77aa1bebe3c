"""Selective state-space sequence block.

The block follows the usual recipe: project up, causal depthwise conv,
input-dependent (selective) timescale/input/output maps, diagonal ZOH scan,
gated output projection, residual. The scan is strictly left-to-right, so the
block is causal by construction; there is no bidirectional variant here.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class RMSNorm(nn.Module):
    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        scale = torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps)
        return x * scale * self.weight


def selective_scan(u, delta, A, B, C, D=None):
    """Diagonal selective scan with exact zero-order-hold discretization.

    Parameters
    ----------
    u : (batch, T, d_inner) inputs after the causal conv.
    delta : (batch, T, d_inner) positive per-step timescales.
    A : (d_inner, n_state) diagonal state matrix entries, strictly negative.
    B : (batch, T, n_state) input map, shared across channels per step.
    C : (batch, T, n_state) output map, shared across channels per step.
    D : optional (d_inner,) skip gain.

    Returns
    -------
    (batch, T, d_inner) outputs y_t = C_t h_t (+ D u_t), where
    h_t = exp(delta_t A) h_{t-1} + (expm1(delta_t A) / A) B_t u_t.
    """
    batch, length, d_inner = u.shape
    n_state = A.shape[1]
    dA = torch.exp(delta.unsqueeze(-1) * A)  # (batch, T, d_inner, n_state)
    # expm1(delta a)/a is the exact ZOH input gain for diagonal a != 0.
    dB = torch.expm1(delta.unsqueeze(-1) * A) / A  # (batch, T, d_inner, n_state)
    dBu = dB * B.unsqueeze(2) * u.unsqueeze(-1)  # (batch, T, d_inner, n_state)
    h = torch.zeros(batch, d_inner, n_state, dtype=u.dtype, device=u.device)
    ys = []
    for t in range(length):
        h = dA[:, t] * h + dBu[:, t]
        ys.append((h * C[:, t].unsqueeze(1)).sum(-1))  # (batch, d_inner)
    y = torch.stack(ys, dim=1)  # (batch, T, d_inner)
    if D is not None:
        y = y + u * D
    return y


class MambaBlock(nn.Module):
    """Pre-norm residual selective-SSM block.

    Args:
        dim: model width of the residual stream.
        state_dim: per-channel SSM state size.
        conv_width: receptive field of the causal depthwise conv (>= 1).
        expansion: inner width multiplier.
        dt_rank: low-rank width of the timescale projection; defaults to
            max(dim // 16, 1).
    """

    def __init__(self, dim, state_dim=8, conv_width=4, expansion=2, dt_rank=None):
        super().__init__()
        if conv_width < 1:
            raise ValueError(f"conv_width must be >= 1, got {conv_width}")
        if state_dim < 1:
            raise ValueError(f"state_dim must be >= 1, got {state_dim}")
        self.dim = dim
        self.state_dim = state_dim
        self.conv_width = conv_width
        self.d_inner = expansion * dim
        self.dt_rank = max(dim // 16, 1) if dt_rank is None else dt_rank

        self.norm = RMSNorm(dim)
        self.in_proj = nn.Linear(dim, 2 * self.d_inner, bias=False)
        self.conv = nn.Conv1d(
            self.d_inner,
            self.d_inner,
            kernel_size=conv_width,
            groups=self.d_inner,
            bias=True,
        )
        self.x_proj = nn.Linear(self.d_inner, self.dt_rank + 2 * state_dim, bias=False)
        self.dt_proj = nn.Linear(self.dt_rank, self.d_inner, bias=True)
        self.out_proj = nn.Linear(self.d_inner, dim, bias=False)

        # State matrix is input independent and diagonal, initialized to
        # -1 .. -state_dim per channel; stored as log magnitude.
        a_init = torch.arange(1, state_dim + 1, dtype=torch.float32)
        self.A_log = nn.Parameter(torch.log(a_init).repeat(self.d_inner, 1))
        self.D = nn.Parameter(torch.ones(self.d_inner))

        # Bias the softplus so initial timescales land in [dt_min, dt_max].
        dt_min, dt_max = 1e-3, 1e-1
        dt = torch.exp(
            torch.rand(self.d_inner)
            * (math.log(dt_max) - math.log(dt_min))
            + math.log(dt_min)
        )
        inv_softplus = dt + torch.log(-torch.expm1(-dt))
        with torch.no_grad():
            self.dt_proj.bias.copy_(inv_softplus)

    def forward(self, x):
        """x: (batch, T, dim) -> (batch, T, dim), causal."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        residual = x
        x = self.norm(x)
        xz = self.in_proj(x)  # (batch, T, 2 d_inner)
        xs, z = xz.chunk(2, dim=-1)
        # Depthwise conv over time, left-padded so step t never sees t+1.
        xs = xs.transpose(1, 2)  # (batch, d_inner, T)
        xs = F.pad(xs, (self.conv_width - 1, 0))
        xs = self.conv(xs).transpose(1, 2)  # (batch, T, d_inner)
        xs = F.silu(xs)
        dbc = self.x_proj(xs)  # (batch, T, dt_rank + 2 n)
        dt, b, c = torch.split(
            dbc, [self.dt_rank, self.state_dim, self.state_dim], dim=-1
        )
        delta = F.softplus(self.dt_proj(dt))  # (batch, T, d_inner)
        a = -torch.exp(self.A_log)  # (d_inner, n) strictly negative
        y = selective_scan(xs, delta, a, b, c, self.D)
        y = y * F.silu(z)
        out = self.out_proj(y) + residual
        return out.squeeze(0) if squeeze else out
