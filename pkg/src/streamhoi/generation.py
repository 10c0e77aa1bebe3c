"""Conditional motion generation with a streaming diffusion sampler.

Training is standard denoising regression: corrupt the target motion with
the closed-form forward marginal at a random step, predict the clean signal,
take the mean squared error. Memory snapshots come from a clean-signal
encoder pass so they match what sampling will see.

Online sampling emits one frame at a time. For frame t the reverse chain
runs over the whole prefix [0..t]; already-emitted frames are re-noised to
the current step with fixed per-(frame, step) noise (the replacement trick),
so they anchor the window while only frame t actually evolves. Because every
noise draw is keyed by (frame, step) rather than by the window shape, a run
over a truncated conditioning stream reproduces the emitted prefix exactly.
"""

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datasets import MotionPair, MotionSequence
from .diffusion import make_schedule, posterior_step, q_sample
from .exceptions import ConfigurationError, NumericalError, ShapeError
from .memory import MemoryConfig, MemoryState, rollout_pooled
from .nets import MotionDenoiser, count_parameters, matched_ffn_width
from .utils import derive_seed, numpy_generator, torch_generator
from .validation import check_choice, check_positive_int


def stack_pairs(pairs):
    """Validate a list of MotionPair and stack it into float32 tensors."""
    if not pairs:
        raise ShapeError("need at least one motion pair")
    for p in pairs:
        if not isinstance(p, MotionPair):
            raise ShapeError("inputs must be MotionPair instances")
    shapes = {
        (p.actor.n_frames, p.actor.pose_dim, p.reactor.pose_dim,
         p.object_points.shape[0])
        for p in pairs
    }
    if len(shapes) != 1:
        raise ShapeError(f"pairs must share shapes, got {shapes}")
    to = lambda arrs: torch.as_tensor(np.stack(arrs), dtype=torch.float32)
    return {
        "actor": to([p.actor.frames for p in pairs]),
        "reactor": to([p.reactor.frames for p in pairs]),
        "object_pose": to([p.object_pose for p in pairs]),
        "object_points": to([p.object_points for p in pairs]),
        "classes": np.asarray([p.action_class for p in pairs], dtype=np.int64),
        "fps": pairs[0].actor.fps,
    }


def _standardize(x, mean, std):
    return (x - mean) / std


def diffusion_train_step(denoiser, optimizer, schedule, x0, actor, object_pose,
                         object_points, memory_config, step_seed, grad_clip=1.0):
    """One denoising-regression step; exactly reproducible from step_seed.

    The per-sample diffusion step, the corruption noise and nothing else are
    drawn from step_seed, so identical inputs and seed give identical loss
    and identical parameter updates.
    """
    denoiser.train()
    batch = x0.shape[0]
    rng = np.random.default_rng(step_seed)
    t = torch.as_tensor(rng.integers(1, schedule.n_steps + 1, size=batch))
    gen = torch.Generator().manual_seed(step_seed)
    noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = q_sample(x0, t, noise, schedule)
    cond_tokens = denoiser.cond(actor, object_pose, object_points)
    if memory_config is not None and memory_config.variant != "off":
        feats = denoiser.clean_features(x0, cond_tokens)
        mem = rollout_pooled(feats, memory_config, include_current=False)
    else:
        mem = None
    steps_norm = t.to(x0.dtype) / schedule.n_steps
    pred = denoiser(x_t, steps_norm, cond_tokens, mem)
    loss = F.mse_loss(pred, x0)
    optimizer.zero_grad()
    loss.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(denoiser.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


class OnlineMotionGenerator(BaseEstimator):
    """Streaming conditional motion generator.

    Parameters mirror the ablation axes: `backbone` picks the temporal mixer
    ("mamba" or "causal_transformer", parameter-matched via the feedforward
    width when ffn_width is None), `memory`/`fusion`/`short_capacity`/
    `long_capacity` configure the memory model, and `mode` switches between
    streaming ("online") and whole-sequence ("offline") attention and
    sampling.
    """

    def __init__(self, model_dim=48, depth=2, backbone="mamba", state_dim=8,
                 conv_width=4, expansion=2, heads=2, ffn_width=None,
                 memory="me", fusion="concat_maxpool", short_capacity=8,
                 long_capacity=8, memory_mode="accumulate", similarity="dot",
                 merge="mean", mode="online", diffusion_steps=100,
                 schedule="cosine", beta_start=1e-3, beta_end=0.2,
                 train_steps=400, batch_size=8, learning_rate=1e-3,
                 grad_clip=1.0, seed=0):
        self.model_dim = model_dim
        self.depth = depth
        self.backbone = backbone
        self.state_dim = state_dim
        self.conv_width = conv_width
        self.expansion = expansion
        self.heads = heads
        self.ffn_width = ffn_width
        self.memory = memory
        self.fusion = fusion
        self.short_capacity = short_capacity
        self.long_capacity = long_capacity
        self.memory_mode = memory_mode
        self.similarity = similarity
        self.merge = merge
        self.mode = mode
        self.diffusion_steps = diffusion_steps
        self.schedule = schedule
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.seed = seed

    # -- configuration plumbing ------------------------------------------

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

    def _build_denoiser(self, pose_dim, actor_dim, kind, ffn_width):
        return MotionDenoiser(
            pose_dim=pose_dim,
            actor_dim=actor_dim,
            object_pose_dim=7,
            model_dim=self.model_dim,
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

    def _check_params(self):
        check_choice(self.backbone, "backbone", ("mamba", "causal_transformer"))
        check_choice(self.mode, "mode", ("online", "offline"))
        check_positive_int(self.diffusion_steps, "diffusion_steps")
        check_positive_int(self.train_steps, "train_steps", minimum=0)
        check_positive_int(self.batch_size, "batch_size")
        self._memory_config()  # validates the memory axes

    # -- training ---------------------------------------------------------

    def fit(self, pairs, y=None):
        self._check_params()
        data = stack_pairs(pairs)
        x0_raw = data["reactor"]
        self.pose_dim_ = x0_raw.shape[2]
        self.actor_dim_ = data["actor"].shape[2]
        self.n_frames_ = x0_raw.shape[1]
        self.fps_ = data["fps"]
        self.reactor_mean_ = x0_raw.mean(dim=(0, 1))
        self.reactor_std_ = x0_raw.std(dim=(0, 1)).clamp(min=1e-3)
        self.actor_mean_ = data["actor"].mean(dim=(0, 1))
        self.actor_std_ = data["actor"].std(dim=(0, 1)).clamp(min=1e-3)

        torch.manual_seed(derive_seed(self.seed, "init"))
        matched = self.ffn_width
        if self.backbone == "causal_transformer" and matched is None:
            reference = count_parameters(
                self._build_denoiser(self.pose_dim_, self.actor_dim_, "mamba", None)
            )
            matched = matched_ffn_width(
                reference,
                lambda w: self._build_denoiser(
                    self.pose_dim_, self.actor_dim_, "causal_transformer", w
                ),
            )
        torch.manual_seed(derive_seed(self.seed, "init"))
        self.denoiser_ = self._build_denoiser(
            self.pose_dim_, self.actor_dim_, self.backbone, matched
        )
        self.matched_ffn_width_ = matched
        self.n_parameters_ = count_parameters(self.denoiser_)
        self.schedule_ = make_schedule(
            self.diffusion_steps, self.schedule, self.beta_start, self.beta_end
        )
        self.optimizer_ = torch.optim.Adam(
            self.denoiser_.parameters(), lr=self.learning_rate
        )
        self.loss_history_ = []
        self.steps_done_ = 0
        self._train_tensors_ = data
        self.continue_fit(self.train_steps)
        return self

    def continue_fit(self, n_steps):
        """Run n_steps more optimizer steps on the fitted training set.

        The step seed stream is indexed by the absolute step number, so
        train(k) then continue(j) matches an uninterrupted train(k + j)
        exactly.
        """
        if not hasattr(self, "denoiser_"):
            raise NotFittedError("fit must run before continue_fit")
        data = self._train_tensors_
        x0 = _standardize(data["reactor"], self.reactor_mean_, self.reactor_std_)
        actor = _standardize(data["actor"], self.actor_mean_, self.actor_std_)
        n = x0.shape[0]
        mem_cfg = self._memory_config()
        for _ in range(n_steps):
            step = self.steps_done_
            rng = numpy_generator(self.seed, "batch", step)
            idx = rng.choice(n, size=min(self.batch_size, n), replace=False)
            idx = np.sort(idx)
            loss = diffusion_train_step(
                self.denoiser_,
                self.optimizer_,
                self.schedule_,
                x0[idx],
                actor[idx],
                data["object_pose"][idx],
                data["object_points"][idx],
                mem_cfg,
                derive_seed(self.seed, "step", step),
                grad_clip=self.grad_clip,
            )
            if not np.isfinite(loss):
                tail = [f"{v:.4f}" for v in self.loss_history_[-5:]]
                raise NumericalError(
                    f"training loss became non-finite at step {step} "
                    f"(recent losses: {tail})"
                )
            self.loss_history_.append(loss)
            self.steps_done_ += 1
        return self

    # -- sampling ---------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "denoiser_"):
            raise NotFittedError("this generator has not been fitted yet")

    def _cond_tensors(self, pairs):
        data = stack_pairs(pairs)
        if data["actor"].shape[2] != self.actor_dim_:
            raise ShapeError(
                f"actor dim {data['actor'].shape[2]} != fitted {self.actor_dim_}"
            )
        actor = _standardize(data["actor"], self.actor_mean_, self.actor_std_)
        return actor, data["object_pose"], data["object_points"], data["fps"]

    def sample(self, pairs, seed=0):
        """Generate one motion per conditioning pair (reactors are ignored).

        Returns a list of MotionSequence. Fully deterministic given the seed;
        in online mode the emitted prefix is bitwise independent of how much
        conditioning follows it.
        """
        self._check_fitted()
        with torch.no_grad():
            if self.mode == "online":
                out = self._sample_online(pairs, seed)
            else:
                out = self._sample_offline(pairs, seed)
        frames = out * self.reactor_std_ + self.reactor_mean_
        fps = pairs[0].actor.fps
        return [
            MotionSequence(frames[b].numpy().astype(np.float64), fps=fps)
            for b in range(frames.shape[0])
        ]

    def _sample_online(self, pairs, seed):
        self.denoiser_.eval()
        actor, object_pose, object_points, _ = self._cond_tensors(pairs)
        batch, length = actor.shape[0], actor.shape[1]
        dim = self.pose_dim_
        n_steps = self.schedule_.n_steps
        cond_tokens = self.denoiser_.cond(actor, object_pose, object_points)
        mem_cfg = self._memory_config()
        use_memory = mem_cfg.variant != "off"
        states = [MemoryState(self.model_dim, mem_cfg) for _ in range(batch)]
        mem_rows = [torch.zeros(batch, self.model_dim)]  # pooled before frame 0

        def draw(tag, *idx):
            gen = torch_generator(seed, tag, *idx)
            return torch.randn(batch, dim, generator=gen)

        emitted = torch.zeros(batch, length, dim)
        renoised = []  # renoised[j][s] anchors frame j at step s
        for t in range(length):
            mem_win = torch.stack(mem_rows[: t + 1], dim=1) if use_memory else None
            x_cur = draw("init", t)
            for s in range(n_steps, 0, -1):
                if t:
                    past = torch.stack([renoised[j][s] for j in range(t)], dim=1)
                    x_in = torch.cat([past, x_cur.unsqueeze(1)], dim=1)
                else:
                    x_in = x_cur.unsqueeze(1)
                steps_norm = torch.full((batch,), s / n_steps)
                x0_hat = self.denoiser_(
                    x_in, steps_norm, cond_tokens[:, : t + 1], mem_win
                )
                x_cur = posterior_step(
                    x_cur, s, x0_hat[:, t], self.schedule_, draw("post", t, s)
                )
            emitted[:, t] = x_cur
            renoised.append(
                {
                    s: q_sample(
                        x_cur,
                        s,
                        draw("renoise", t, s),
                        self.schedule_,
                    )
                    for s in range(1, n_steps + 1)
                }
            )
            if use_memory:
                feats = self.denoiser_.clean_features(
                    emitted[:, : t + 1], cond_tokens[:, : t + 1]
                )
                for b in range(batch):
                    states[b].observe(feats[b, t])
                mem_rows.append(torch.stack([st.pooled() for st in states]))
        return emitted

    def _sample_offline(self, pairs, seed):
        self.denoiser_.eval()
        actor, object_pose, object_points, _ = self._cond_tensors(pairs)
        batch, length = actor.shape[0], actor.shape[1]
        n_steps = self.schedule_.n_steps
        cond_tokens = self.denoiser_.cond(actor, object_pose, object_points)
        mem_cfg = self._memory_config()
        use_memory = mem_cfg.variant != "off"
        gen = torch_generator(seed, "offline-init")
        x = torch.randn(batch, length, self.pose_dim_, generator=gen)
        mem = None
        for s in range(n_steps, 0, -1):
            steps_norm = torch.full((batch,), s / n_steps)
            x0_hat = self.denoiser_(x, steps_norm, cond_tokens, mem)
            gen = torch_generator(seed, "offline", s)
            noise = torch.randn(x.shape, generator=gen)
            x = posterior_step(x, s, x0_hat, self.schedule_, noise)
            if use_memory:
                feats = self.denoiser_.clean_features(x0_hat, cond_tokens)
                mem = rollout_pooled(feats, mem_cfg, include_current=True)
        return x

    # -- evaluation helpers ------------------------------------------------

    def reconstruction_error(self, pairs, seed=0):
        """Teacher-forced denoising error on held-out motions.

        Corrupts the reference reactors at every schedule step with seeded
        noise, asks the denoiser to reconstruct the clean motion, and
        averages the squared error in standardized pose space (the space
        the training loss lives in). This scores the fitted model's fit to
        the data directly; it does not depend on the sampling path, and it
        is deterministic given the probe seed.
        """
        self._check_fitted()
        data = stack_pairs(pairs)
        if data["reactor"].shape[2] != self.pose_dim_:
            raise ShapeError(
                f"reactor dim {data['reactor'].shape[2]} != fitted {self.pose_dim_}"
            )
        if data["actor"].shape[2] != self.actor_dim_:
            raise ShapeError(
                f"actor dim {data['actor'].shape[2]} != fitted {self.actor_dim_}"
            )
        x0 = _standardize(data["reactor"], self.reactor_mean_, self.reactor_std_)
        actor = _standardize(data["actor"], self.actor_mean_, self.actor_std_)
        self.denoiser_.eval()
        mem_cfg = self._memory_config()
        n_steps = self.schedule_.n_steps
        batch = x0.shape[0]
        total = 0.0
        with torch.no_grad():
            cond = self.denoiser_.cond(
                actor, data["object_pose"], data["object_points"]
            )
            if mem_cfg.variant != "off":
                feats = self.denoiser_.clean_features(x0, cond)
                mem = rollout_pooled(feats, mem_cfg, include_current=False)
            else:
                mem = None
            for s in range(1, n_steps + 1):
                gen = torch_generator(seed, "denoise", s)
                noise = torch.randn(x0.shape, generator=gen)
                t = torch.full((batch,), s, dtype=torch.long)
                x_t = q_sample(x0, t, noise, self.schedule_)
                steps_norm = torch.full((batch,), s / n_steps, dtype=x0.dtype)
                pred = self.denoiser_(x_t, steps_norm, cond, mem)
                total += float(F.mse_loss(pred, x0))
        return total / n_steps

    def score(self, pairs, y=None):
        """Negative reconstruction error, for estimator-API compatibility."""
        return -self.reconstruction_error(pairs)
