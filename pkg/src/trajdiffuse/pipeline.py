"""End-to-end guided prediction and the training loop.

Prediction runs the reverse diffusion chain per intent: condition the noisy
trajectory on the observed history and the intent anchors, predict the clean
signal, take a stochastic reverse step, optionally apply the map guidance in
world coordinates, and re-condition. The returned trajectories carry the
observed history and the intent anchors bit-exactly (a final conditioning
pass runs in world coordinates).

Training draws a per-sample step index, noises the clean trajectory with the
closed-form marginal, clamps the conditioned frames to their clean values
(matching inference), and regresses the network output onto the clean
trajectory over future frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import TrajBatch, clamp_frames_batch, loss_and_grad
from .denoiser import (
    AdamState,
    ArchDescriptor,
    DenoiserParams,
    NonFiniteGradientError,
    adam_update,
    backward_from_cache,
    forward_with_cache,
    init_params,
)
from .mapguide import GuidanceConfig, NavEnvironment, ecfl_check, guidance_delta
from .schedule import NoiseSchedule, build_cosine_schedule
from .synth import IntentOracleConfig, Scene
from .validation import as_float_array


@dataclass
class PredictionRequest:
    """One agent's prediction task: history, K intents, environment, seed."""

    observed: np.ndarray  # (t_obs, 2) world meters
    intents: list  # K ConditionSpec, shared frame layout
    env: NavEnvironment | None
    seed: int = 0
    guidance_on: bool = True
    sample_seeds: list | None = None  # optional per-sample stream seeds


@dataclass
class PredictionResult:
    trajectories: TrajBatch  # (K, T, 2), world meters
    per_sample_ecfl: np.ndarray | None  # (K,) booleans, None without an env


def _sample_streams(request: PredictionRequest, k: int) -> list:
    if request.sample_seeds is not None:
        if len(request.sample_seeds) != k:
            raise ValueError("sample_seeds must have one entry per intent")
        seeds = [np.random.SeedSequence([int(s)]) for s in request.sample_seeds]
    else:
        seeds = [np.random.SeedSequence([int(request.seed), i]) for i in range(k)]
    return [np.random.default_rng(s) for s in seeds]


def _validate_request(request: PredictionRequest, desc: ArchDescriptor) -> np.ndarray:
    observed = as_float_array(request.observed, "observed", shape=(desc.t_obs, 2))
    if not request.intents:
        raise ValueError("request carries no intents")
    frames = request.intents[0].frames
    for spec in request.intents:
        if spec.t_obs != desc.t_obs or spec.t_pred != desc.t_pred:
            raise ValueError("intent frame split does not match the model")
        if not np.array_equal(spec.frames, frames):
            raise ValueError("all intents must share one clamp-frame layout")
        if not np.array_equal(spec.values[: desc.t_obs], observed):
            raise ValueError("intent history does not match the observed trajectory")
    if request.guidance_on and request.env is None:
        raise ValueError("guidance requires an environment")
    return observed


def predict(request: PredictionRequest, params: DenoiserParams, schedule: NoiseSchedule,
            cfg: GuidanceConfig = GuidanceConfig()) -> PredictionResult:
    """Sample one trajectory per intent through the guided denoising chain."""
    desc = params.arch
    if not params.all_finite():
        raise ValueError("model parameters contain non-finite values (untrained or corrupt)")
    if schedule.n_steps != desc.n_steps:
        raise ValueError("schedule does not match the model descriptor")
    observed = _validate_request(request, desc)

    t_obs, t_total = desc.t_obs, desc.traj_len
    k = len(request.intents)
    frames = request.intents[0].frames
    values_world = np.stack([spec.values for spec in request.intents])
    center = observed[-1]
    scale = desc.coord_scale
    values_std = (values_world - center) / scale

    streams = _sample_streams(request, k)
    tau = np.stack([rng.standard_normal((t_total, 2)) for rng in streams])
    for i in range(schedule.n_steps, 0, -1):
        tau = clamp_frames_batch(tau, frames, values_std)
        x0_pred, _ = forward_with_cache(params, tau, i)
        noise = np.stack([rng.standard_normal((t_total, 2)) for rng in streams])
        a = schedule.alphas[i - 1]
        ab = schedule.alpha_bars[i - 1]
        ab_prev = schedule.alpha_bars_prev[i - 1]
        mean = (np.sqrt(a) * (1 - ab_prev) * tau + np.sqrt(ab_prev) * (1 - a) * x0_pred) / (1 - ab)
        sigma = np.sqrt(schedule.posterior_vars[i - 1])
        tau = mean if sigma == 0.0 else mean + sigma * noise
        if request.guidance_on:
            world = tau * scale + center
            for j in range(k):
                world[j] += guidance_delta(request.env, world[j], t_obs, cfg)
            tau = (world - center) / scale
        tau = clamp_frames_batch(tau, frames, values_std)

    world = tau * scale + center
    world = clamp_frames_batch(world, frames, values_world)  # exactness contract
    batch = TrajBatch(world, t_obs, desc.t_pred)
    flags = None
    if request.env is not None:
        flags = np.array([ecfl_check(request.env, world[j], t_obs) for j in range(k)])
    return PredictionResult(trajectories=batch, per_sample_ecfl=flags)


# ----------------------------------------------------------------- training

@dataclass
class TrainConfig:
    n_epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    n_steps: int = 25
    weighting: str = "simple"
    seed: int = 0
    widths: tuple = (32, 64, 128)
    kernel_len: int = 5
    gn_groups: int = 8
    emb_dim: int = 32
    coord_scale: float = 5.0
    cosine_offset: float = 0.008


def _collect_training_arrays(scenes: list, coord_scale: float):
    """Standardized clean trajectories plus the shared clamp-frame layout."""
    t_obs = scenes[0].t_obs
    t_pred = scenes[0].t_pred
    frames = None
    x0 = []
    for scene in scenes:
        if scene.t_obs != t_obs or scene.t_pred != t_pred:
            raise ValueError("all scenes must share the same frame split")
        for agent in scene.agents:
            if agent.intents:
                agent_frames = agent.intents[0].frames
            else:
                layout = IntentOracleConfig().resolved_frames(t_obs, t_pred)
                agent_frames = np.concatenate(
                    [np.arange(t_obs), layout, [t_obs + t_pred - 1]]
                ).astype(np.intp)
            if frames is None:
                frames = agent_frames
            elif not np.array_equal(frames, agent_frames):
                raise ValueError("agents disagree on the clamp-frame layout")
            center = agent.trajectory[t_obs - 1]
            x0.append((agent.trajectory - center) / coord_scale)
    if not x0:
        raise ValueError("dataset contains no agents")
    return np.stack(x0), frames, t_obs, t_pred


def train(scenes: list, config: TrainConfig,
          init: DenoiserParams | None = None) -> tuple[DenoiserParams, list]:
    """Train the denoiser on ground-truth trajectories; returns (params, log).

    The log has one entry per epoch: {"epoch", "mean_loss", "skipped_steps"}.
    Steps with non-finite gradients are skipped and counted; a non-finite
    loss aborts with a diagnostic.
    """
    if not scenes:
        raise ValueError("training dataset is empty")
    x0_all, frames, t_obs, t_pred = _collect_training_arrays(scenes, config.coord_scale)

    desc = ArchDescriptor(
        widths=config.widths, kernel_len=config.kernel_len, gn_groups=config.gn_groups,
        emb_dim=config.emb_dim, t_obs=t_obs, t_pred=t_pred, n_steps=config.n_steps,
        coord_scale=config.coord_scale,
    )
    if init is not None:
        if init.arch != desc:
            raise ValueError("resume checkpoint architecture does not match the config")
        params = DenoiserParams({k: v.copy() for k, v in init.tensors.items()}, desc)
    else:
        params = init_params(desc, seed=config.seed)
    schedule = build_cosine_schedule(config.n_steps, config.cosine_offset)
    state = AdamState.for_params(params.tensors)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 555]))

    n = x0_all.shape[0]
    i_lo = 2 if config.weighting == "paper" else 1
    log = []
    for epoch in range(config.n_epochs):
        order = rng.permutation(n)
        losses, weights = [], []
        skipped = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x0 = x0_all[idx]
            bsz = x0.shape[0]
            i_steps = rng.integers(i_lo, config.n_steps + 1, size=bsz)
            eps = rng.standard_normal(x0.shape)
            ab = schedule.alpha_bars[i_steps - 1][:, None, None]
            x_i = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
            x_i[:, frames, :] = x0[:, frames, :]  # clamp to clean values, as at inference
            pred, cache = forward_with_cache(params, x_i, i_steps)
            loss, dpred = loss_and_grad(pred, x0, t_obs, i_steps, schedule, config.weighting)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch} (lr={config.lr}, "
                    f"weighting={config.weighting}); aborting"
                )
            grads, _ = backward_from_cache(params, cache, dpred)
            try:
                params.tensors, state = adam_update(params.tensors, grads, state, config.lr)
            except NonFiniteGradientError:
                skipped += 1
                continue
            losses.append(loss)
            weights.append(bsz)
        mean_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        log.append({"epoch": epoch, "mean_loss": mean_loss, "skipped_steps": skipped})
    return params, log
