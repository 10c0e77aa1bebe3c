"""Linear state-space primitives: discretization, recurrence, kernel form.

This module implements the single-input single-output building block

    h_t = A_bar h_{t-1} + B_bar x_t
    y_t = C h_t

together with its zero-order-hold discretization and the equivalent causal
convolution kernel. Multi-channel models stack one copy of this recurrence
per feature channel; the batched/selective version used by the neural blocks
lives in mamba.py and shares the same math.

All functions here accept array-likes and return torch tensors. They validate
their inputs, so they are safe to call from user code; the neural blocks use
their own unvalidated inner loops because corrupt values must be allowed to
propagate through them (that is how the causality checks work).
"""

import dataclasses

import torch

from .exceptions import NumericalError, ShapeError
from .validation import as_float_tensor, check_finite


@dataclasses.dataclass
class SSMParameters:
    """Continuous-time parameters of one scalar-channel state-space model.

    Attributes
    ----------
    A : (N, N) state matrix.
    B : (N, 1) input map.
    C : (1, N) output map.
    delta : scalar timescale, or a (T,) per-timestep vector for selective
        variants. Must be finite and non-negative; delta == 0 yields the
        identity transition with zero input gain.
    """

    A: torch.Tensor
    B: torch.Tensor
    C: torch.Tensor
    delta: torch.Tensor

    def __post_init__(self):
        self.A = as_float_tensor(self.A, "A")
        self.B = as_float_tensor(self.B, "B")
        self.C = as_float_tensor(self.C, "C")
        self.delta = as_float_tensor(self.delta, "delta")
        dtype = torch.promote_types(
            torch.promote_types(self.A.dtype, self.B.dtype),
            torch.promote_types(self.C.dtype, self.delta.dtype),
        )
        self.A, self.B, self.C, self.delta = (
            self.A.to(dtype),
            self.B.to(dtype),
            self.C.to(dtype),
            self.delta.to(dtype),
        )
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ShapeError(f"A must be square (N, N), got {tuple(self.A.shape)}")
        n = self.A.shape[0]
        if self.B.ndim == 1:
            self.B = self.B.reshape(n, 1)
        if self.C.ndim == 1:
            self.C = self.C.reshape(1, n)
        if self.B.shape != (n, 1):
            raise ShapeError(f"B must be (N, 1) with N={n}, got {tuple(self.B.shape)}")
        if self.C.shape != (1, n):
            raise ShapeError(f"C must be (1, N) with N={n}, got {tuple(self.C.shape)}")
        if self.delta.ndim > 1:
            raise ShapeError(
                f"delta must be a scalar or a (T,) vector, got {tuple(self.delta.shape)}"
            )
        check_finite(self.A, "A")
        check_finite(self.B, "B")
        check_finite(self.C, "C")
        if not torch.isfinite(self.delta).all():
            raise NumericalError("delta contains NaN or Inf")
        if (self.delta < 0).any():
            raise ValueError("delta must be non-negative")

    @property
    def state_dim(self):
        return self.A.shape[0]


@dataclasses.dataclass
class DiscreteTransition:
    """Zero-order-hold discretization of SSMParameters.

    A_bar is (N, N) or (T, N, N) when delta was per-timestep; B_bar matches
    with trailing shape (N, 1).
    """

    A_bar: torch.Tensor
    B_bar: torch.Tensor


@dataclasses.dataclass
class HiddenState:
    """Recurrence carry: state vector h (N,) and the number of absorbed steps."""

    h: torch.Tensor
    t: int = 0


@dataclasses.dataclass
class KernelForm:
    """Impulse-response view of the recurrence.

    k_bar[i] = C A_bar^i B_bar, so that y = causal_conv(x, k_bar) reproduces
    the scan from a zero initial state.
    """

    k_bar: torch.Tensor

    @property
    def length(self):
        return self.k_bar.shape[0]


def discretize(params):
    """Zero-order-hold discretization via the augmented matrix exponential.

    Builds M = delta * [[A, B], [0, 0]] and reads A_bar = exp(M)[:N, :N],
    B_bar = exp(M)[:N, N:]. This equals A_bar = exp(delta A) and
    B_bar = (delta A)^{-1} (exp(delta A) - I) delta B when A is invertible,
    and handles singular A (including A = 0, where B_bar = delta B) exactly.

    Returns
    -------
    DiscreteTransition with (N, N)/(N, 1) tensors, or stacked
    (T, N, N)/(T, N, 1) when params.delta is a (T,) vector.
    """
    if not isinstance(params, SSMParameters):
        raise TypeError("params must be SSMParameters")
    n = params.state_dim
    dtype = params.A.dtype
    top = torch.cat([params.A, params.B], dim=1)  # (N, N + 1)
    bottom = torch.zeros(1, n + 1, dtype=dtype)
    m = torch.cat([top, bottom], dim=0)  # (N + 1, N + 1)
    if params.delta.ndim == 0:
        e = torch.matrix_exp(params.delta * m)
        return DiscreteTransition(A_bar=e[:n, :n], B_bar=e[:n, n:])
    scaled = params.delta.reshape(-1, 1, 1) * m  # (T, N + 1, N + 1)
    e = torch.matrix_exp(scaled)
    return DiscreteTransition(A_bar=e[:, :n, :n], B_bar=e[:, :n, n:])


def _per_step_transitions(params, length):
    """(A_bar, B_bar) per step as (T, N, N) and (T, N, 1)."""
    disc = discretize(params)
    if disc.A_bar.ndim == 2:
        a = disc.A_bar.unsqueeze(0).expand(length, -1, -1)
        b = disc.B_bar.unsqueeze(0).expand(length, -1, -1)
        return a, b
    if disc.A_bar.shape[0] != length:
        raise ShapeError(
            f"per-timestep delta has length {disc.A_bar.shape[0]}, "
            f"but the input sequence has length {length}"
        )
    return disc.A_bar, disc.B_bar


def ssm_scan(xs, params, h0=None, delayed_output=False):
    """Run the discrete recurrence over a scalar input sequence.

    Parameters
    ----------
    xs : (T,) input sequence.
    params : SSMParameters. If params.delta is a (T,) vector, each step uses
        its own discretized transition.
    h0 : optional (N,) initial state; zeros by default.
    delayed_output : if True, emit y_t = C h_t *before* absorbing x_t, i.e.
        the state-indexing variant in which the input only affects the output
        one step later (y_0 then depends only on h0). Default False emits
        y_t = C (A_bar h_{t-1} + B_bar x_t).

    Returns
    -------
    (ys, final) where ys is (T,) and final is a HiddenState carrying the
    post-scan state, so that scanning a split sequence piecewise reproduces
    the whole scan exactly.
    """
    if not isinstance(params, SSMParameters):
        raise TypeError("params must be SSMParameters")
    xs = as_float_tensor(xs, "xs", dtype=params.A.dtype)
    if xs.ndim == 2 and xs.shape[1] == 1:
        xs = xs.reshape(-1)
    if xs.ndim != 1:
        raise ShapeError(f"xs must be (T,), got {tuple(xs.shape)}")
    check_finite(xs, "xs")
    n = params.state_dim
    length = xs.shape[0]
    if h0 is None:
        h = torch.zeros(n, 1, dtype=params.A.dtype)
        t0 = 0
    else:
        if isinstance(h0, HiddenState):
            t0 = h0.t
            h0 = h0.h
        else:
            t0 = 0
        h0 = as_float_tensor(h0, "h0", dtype=params.A.dtype)
        if h0.ndim == 1:
            h0 = h0.reshape(-1, 1)
        if h0.shape != (n, 1):
            raise ShapeError(f"h0 must be (N,) with N={n}, got {tuple(h0.shape)}")
        check_finite(h0, "h0")
        h = h0.clone()
    a_bar, b_bar = _per_step_transitions(params, length)
    ys = torch.empty(length, dtype=params.A.dtype)
    for t in range(length):
        if delayed_output:
            ys[t] = (params.C @ h).reshape(())
            h = a_bar[t] @ h + b_bar[t] * xs[t]
        else:
            h = a_bar[t] @ h + b_bar[t] * xs[t]
            ys[t] = (params.C @ h).reshape(())
    if not torch.isfinite(h).all():
        raise NumericalError("hidden state left the finite range during the scan")
    return ys, HiddenState(h=h.reshape(-1), t=t0 + length)


def ssm_kernel(params, length):
    """Materialize the causal convolution kernel equivalent to the scan.

    Only valid for scalar delta (a single shared transition); per-timestep
    deltas have no fixed kernel.
    """
    if not isinstance(params, SSMParameters):
        raise TypeError("params must be SSMParameters")
    if params.delta.ndim != 0:
        raise ValueError("kernel form requires a scalar delta")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    disc = discretize(params)
    k = torch.empty(length, dtype=params.A.dtype)
    v = disc.B_bar  # (N, 1), holds A_bar^i B_bar
    for i in range(length):
        k[i] = (params.C @ v).reshape(())
        if i + 1 < length:
            v = disc.A_bar @ v
    return KernelForm(k_bar=k)


def kernel_apply(xs, kernel):
    """Causal convolution y_t = sum_{i=0..t} k_bar[i] x_{t-i}.

    The kernel must be at least as long as the input so no response is
    truncated.
    """
    if not isinstance(kernel, KernelForm):
        raise TypeError("kernel must be a KernelForm")
    xs = as_float_tensor(xs, "xs", dtype=kernel.k_bar.dtype)
    if xs.ndim != 1:
        raise ShapeError(f"xs must be (T,), got {tuple(xs.shape)}")
    check_finite(xs, "xs")
    length = xs.shape[0]
    if kernel.length < length:
        raise ShapeError(
            f"kernel length {kernel.length} is shorter than the input length {length}"
        )
    ys = torch.zeros(length, dtype=xs.dtype)
    for i in range(length):
        k_i = kernel.k_bar[i]
        if i == 0:
            ys = ys + k_i * xs
        else:
            ys[i:] = ys[i:] + k_i * xs[:-i]
    return ys
