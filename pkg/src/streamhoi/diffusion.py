"""Gaussian forward process and clean-signal-parameterized reverse steps.

The forward process corrupts a sequence by

    q(x_t | x_{t-1}) = N(sqrt(alpha_t) x_{t-1}, (1 - alpha_t) I),

whose composition has the closed-form marginal used by q_sample. The reverse
chain plugs a predicted clean signal into the exact Gaussian posterior
q(x_{t-1} | x_t, x_0), so the denoiser network predicts x_0 rather than the
noise. Steps are 1-indexed: t runs over 1..n_steps and alpha_bar(0) = 1.
"""

import dataclasses
import math

import numpy as np
import torch

from .exceptions import ConfigurationError
from .validation import as_float_tensor, check_finite


@dataclasses.dataclass
class DiffusionSchedule:
    betas: torch.Tensor  # (n_steps,), betas[i] is beta_{i+1}
    kind: str = "linear"

    def __post_init__(self):
        self.betas = as_float_tensor(self.betas, "betas", dtype=torch.float64)
        if self.betas.ndim != 1 or self.betas.shape[0] < 1:
            raise ConfigurationError("betas must be a non-empty 1-d array")
        check_finite(self.betas, "betas")
        if (self.betas <= 0).any() or (self.betas >= 1).any():
            raise ConfigurationError("betas must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = torch.cumprod(self.alphas, dim=0)

    @property
    def n_steps(self):
        return self.betas.shape[0]

    def beta(self, t):
        return self._lookup(self.betas, t, left=None)

    def alpha(self, t):
        return self._lookup(self.alphas, t, left=None)

    def alpha_bar(self, t):
        """Cumulative signal fraction; alpha_bar(0) == 1 by convention."""
        return self._lookup(self.alpha_bars, t, left=1.0)

    def _lookup(self, table, t, left):
        t = torch.as_tensor(t)
        if (t > self.n_steps).any() or (t < (0 if left is not None else 1)).any():
            raise ConfigurationError(
                f"step index must be in [{0 if left is not None else 1}, "
                f"{self.n_steps}], got {t}"
            )
        if left is None:
            return table[t - 1]
        padded = torch.cat([torch.tensor([left], dtype=table.dtype), table])
        return padded[t]


def make_schedule(n_steps, kind="linear", beta_start=1e-3, beta_end=0.2):
    """Build a noise schedule.

    kind="linear" spaces betas evenly between beta_start and beta_end. The
    defaults are sized for n_steps around 100; shorter chains want a larger
    beta_end (or the cosine schedule, which adapts by construction).

    kind="cosine" uses the squared-cosine cumulative schedule with offset
    0.008 and betas clipped to 0.999.
    """
    if not isinstance(n_steps, int) or n_steps < 1:
        raise ConfigurationError(f"n_steps must be a positive int, got {n_steps}")
    if kind == "linear":
        if not (0 < beta_start <= beta_end < 1):
            raise ConfigurationError(
                f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )
        betas = torch.linspace(beta_start, beta_end, n_steps, dtype=torch.float64)
    elif kind == "cosine":
        s = 0.008
        steps = torch.arange(n_steps + 1, dtype=torch.float64)
        f = torch.cos((steps / n_steps + s) / (1 + s) * math.pi / 2) ** 2
        alpha_bars = f / f[0]
        betas = 1 - alpha_bars[1:] / alpha_bars[:-1]
        betas = betas.clamp(min=1e-8, max=0.999)
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(betas=betas, kind=kind)


def _gather_coeff(value, x):
    """Reshape a per-sample scalar coefficient to broadcast over x."""
    value = value.to(x.dtype)
    if value.ndim == 0:
        return value
    return value.reshape(value.shape[0], *([1] * (x.ndim - 1)))


def q_sample(x0, t, noise, schedule):
    """Closed-form forward marginal x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    t may be a python int (applied to the whole batch) or a (batch,) tensor of
    per-sample steps in [1, n_steps]. noise must be shaped like x0; it is
    supplied by the caller so sampling stays reproducible.
    """
    x0 = as_float_tensor(x0, "x0")
    noise = as_float_tensor(noise, "noise", dtype=x0.dtype)
    if noise.shape != x0.shape:
        raise ConfigurationError(
            f"noise shape {tuple(noise.shape)} must match x0 {tuple(x0.shape)}"
        )
    ab = schedule.alpha_bar(t)
    if isinstance(t, torch.Tensor) and t.ndim == 1 and t.shape[0] != x0.shape[0]:
        raise ConfigurationError("per-sample t must align with the batch dim of x0")
    scale = _gather_coeff(torch.sqrt(ab), x0)
    sigma = _gather_coeff(torch.sqrt(1.0 - ab), x0)
    return scale * x0 + sigma * noise


def posterior_step(x_t, t, x0_hat, schedule, noise):
    """One reverse step x_t -> x_{t-1} given a clean-signal prediction.

    Uses the exact Gaussian posterior q(x_{t-1} | x_t, x_0 = x0_hat):

        mean = sqrt(ab_{t-1}) beta_t / (1 - ab_t) * x0_hat
             + sqrt(alpha_t) (1 - ab_{t-1}) / (1 - ab_t) * x_t
        var  = beta_t (1 - ab_{t-1}) / (1 - ab_t)

    At t = 1 the posterior collapses onto x0_hat and no noise is added.
    """
    if not isinstance(t, int) or not (1 <= t <= schedule.n_steps):
        raise ConfigurationError(
            f"t must be an int in [1, {schedule.n_steps}], got {t}"
        )
    x_t = as_float_tensor(x_t, "x_t")
    x0_hat = as_float_tensor(x0_hat, "x0_hat", dtype=x_t.dtype)
    if t == 1:
        return x0_hat.clone()
    noise = as_float_tensor(noise, "noise", dtype=x_t.dtype)
    if noise.shape != x_t.shape:
        raise ConfigurationError("noise must be shaped like x_t")
    beta_t = float(schedule.beta(t))
    alpha_t = float(schedule.alpha(t))
    ab_t = float(schedule.alpha_bar(t))
    ab_prev = float(schedule.alpha_bar(t - 1))
    coef_x0 = math.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = math.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
    return coef_x0 * x0_hat + coef_xt * x_t + math.sqrt(var) * noise


def schedule_to_arrays(schedule):
    """Plain-array view for checkpoint files."""
    return {
        "betas": schedule.betas.numpy().astype(np.float64),
        "kind": np.asarray(schedule.kind),
    }


def schedule_from_arrays(arrays):
    return DiffusionSchedule(
        betas=torch.as_tensor(np.asarray(arrays["betas"], dtype=np.float64)),
        kind=str(arrays["kind"]),
    )
