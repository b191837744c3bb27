"""Diffusion math core over trajectory batches.

Forward noising via the closed-form marginal, inpainting-style frame
conditioning, the posterior mean in the clean-signal parameterization, the
stochastic reverse step, and the training loss (plain MSE or the
schedule-weighted form). Every operation is a pure function; randomness
enters only through explicit noise arrays supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule
from .validation import as_float_array, check_batch, check_same_shape, check_step_index


@dataclass
class TrajBatch:
    """K trajectories of T = t_obs + t_pred frames, world meters.

    samples has shape (K, T, 2); frame indices are 0-based, so observed
    frames are 0..t_obs-1 and future frames t_obs..T-1.
    """

    samples: np.ndarray
    t_obs: int
    t_pred: int

    def __post_init__(self):
        self.samples = check_batch(self.samples)
        if self.t_obs < 1 or self.t_pred < 1:
            raise ValueError("t_obs and t_pred must each be >= 1")
        if self.samples.shape[1] != self.t_obs + self.t_pred:
            raise ValueError(
                f"samples have {self.samples.shape[1]} frames, expected "
                f"t_obs + t_pred = {self.t_obs + self.t_pred}"
            )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    def like(self, samples: np.ndarray) -> "TrajBatch":
        """New batch with the same frame split and the given samples."""
        return TrajBatch(samples, self.t_obs, self.t_pred)


@dataclass(frozen=True)
class ConditionSpec:
    """The clamp set: observed history plus waypoint/goal anchors.

    frames are sorted 0-based indices; the full history 0..t_obs-1 and the
    goal frame T-1 are always present, waypoints lie strictly between.
    values[j] is the 2-vector clamped onto frames[j].
    """

    frames: np.ndarray
    values: np.ndarray
    t_obs: int
    t_pred: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.intp)
        values = as_float_array(self.values, "clamp values", shape=(None, 2))
        if frames.ndim != 1 or frames.size != values.shape[0]:
            raise ValueError("frames and values must align one-to-one")
        if np.any(np.diff(frames) <= 0):
            raise ValueError("clamp frames must be sorted and distinct")
        t_total = self.t_obs + self.t_pred
        if frames.size and (frames[0] < 0 or frames[-1] >= t_total):
            raise IndexError(f"clamp frame out of range 0..{t_total - 1}")
        if not np.array_equal(frames[: self.t_obs], np.arange(self.t_obs)):
            raise ValueError("every observed frame 0..t_obs-1 must be clamped")
        if t_total - 1 not in frames:
            raise ValueError("the goal frame (last frame) must be clamped")
        frames.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "values", values)

    @property
    def n_waypoints(self) -> int:
        """Number of interior waypoint anchors (history and goal excluded)."""
        return int(self.frames.size - self.t_obs - 1)

    @classmethod
    def from_anchors(cls, history, waypoint_frames, waypoint_values, goal_value,
                     t_pred: int) -> "ConditionSpec":
        """Build a spec from history plus (frame, value) waypoint/goal anchors."""
        history = as_float_array(history, "history", shape=(None, 2))
        t_obs = history.shape[0]
        waypoint_frames = list(np.asarray(waypoint_frames, dtype=int).ravel())
        waypoint_values = (
            np.asarray(waypoint_values, dtype=np.float64).reshape(-1, 2)
            if len(waypoint_frames)
            else np.zeros((0, 2))
        )
        goal_frame = t_obs + t_pred - 1
        for w in waypoint_frames:
            if not t_obs <= w < goal_frame:
                raise ValueError(f"waypoint frame {w} must lie in [{t_obs}, {goal_frame})")
        frames = np.concatenate(
            [np.arange(t_obs), np.asarray(waypoint_frames, dtype=int), [goal_frame]]
        )
        values = np.concatenate(
            [history, waypoint_values, np.asarray(goal_value, dtype=np.float64).reshape(1, 2)]
        )
        order = np.argsort(frames)
        return cls(frames[order], values[order], t_obs=t_obs, t_pred=t_pred)

    def transformed(self, center, scale: float) -> "ConditionSpec":
        """Same clamp set with values mapped to (v - center) / scale."""
        center = np.asarray(center, dtype=np.float64).reshape(2)
        return ConditionSpec(
            self.frames.copy(), (self.values - center) / float(scale), self.t_obs, self.t_pred
        )


def forward_noise(clean: TrajBatch, i: int, noise: np.ndarray, schedule: NoiseSchedule) -> TrajBatch:
    """Sample the closed-form marginal: sqrt(ab_i) * clean + sqrt(1 - ab_i) * noise."""
    i = check_step_index(i, schedule.n_steps)
    noise = np.asarray(noise, dtype=np.float64)
    check_same_shape(noise, clean.samples, "noise", "samples")
    ab = schedule.alpha_bars[i - 1]
    return clean.like(np.sqrt(ab) * clean.samples + np.sqrt(1.0 - ab) * noise)


def apply_conditioning(traj: TrajBatch, cond: ConditionSpec) -> TrajBatch:
    """Overwrite the clamped frames of every sample with the clamp values."""
    if cond.t_obs + cond.t_pred != traj.n_frames:
        raise IndexError("condition frame layout does not match the batch length")
    out = traj.samples.copy()
    out[:, cond.frames, :] = cond.values
    return traj.like(out)


def clamp_frames_batch(samples: np.ndarray, frames: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per-sample conditioning: values has shape (K, n_frames, 2)."""
    out = samples.copy()
    out[:, frames, :] = values
    return out


def posterior_mean(x0_pred: TrajBatch, x_i: TrajBatch, i: int, schedule: NoiseSchedule) -> TrajBatch:
    """Posterior mean of the reverse kernel given the predicted clean signal.

    mu = [sqrt(a_i)(1 - ab_{i-1}) x_i + sqrt(ab_{i-1})(1 - a_i) x0] / (1 - ab_i),
    which collapses to x0 exactly at i = 1 where ab_0 = 1.
    """
    i = check_step_index(i, schedule.n_steps)
    check_same_shape(x0_pred.samples, x_i.samples, "x0_pred", "x_i")
    a = schedule.alphas[i - 1]
    ab = schedule.alpha_bars[i - 1]
    ab_prev = schedule.alpha_bars_prev[i - 1]
    coef_xi = np.sqrt(a) * (1.0 - ab_prev)
    coef_x0 = np.sqrt(ab_prev) * (1.0 - a)
    return x_i.like((coef_xi * x_i.samples + coef_x0 * x0_pred.samples) / (1.0 - ab))


def reverse_step(x_i: TrajBatch, x0_pred: TrajBatch, i: int, schedule: NoiseSchedule,
                 noise: np.ndarray) -> TrajBatch:
    """One stochastic reverse step: posterior mean plus sigma_q(i) * noise.

    sigma_q(1) = 0, so the final step is deterministic and returns the
    predicted clean signal regardless of the noise array.
    """
    i = check_step_index(i, schedule.n_steps)
    noise = np.asarray(noise, dtype=np.float64)
    check_same_shape(noise, x_i.samples, "noise", "samples")
    mean = posterior_mean(x0_pred, x_i, i, schedule)
    sigma = np.sqrt(schedule.posterior_vars[i - 1])
    if sigma == 0.0:
        return mean
    return mean.like(mean.samples + sigma * noise)


def _future_sq_error(x0_pred: TrajBatch, x0_true: TrajBatch) -> np.ndarray:
    """Per-sample mean squared error over future frames only, shape (K,)."""
    check_same_shape(x0_pred.samples, x0_true.samples, "x0_pred", "x0_true")
    t_obs = x0_true.t_obs
    diff = x0_pred.samples[:, t_obs:, :] - x0_true.samples[:, t_obs:, :]
    return np.mean(diff * diff, axis=(1, 2))


def training_loss(x0_pred: TrajBatch, x0_true: TrajBatch, i: int, schedule: NoiseSchedule,
                  weighting: str = "simple") -> float:
    """Training loss over future frames, averaged over the batch.

    "simple" is the unweighted MSE; "paper" multiplies the same MSE by
    lambda(alpha_i) / (2 sigma_q^2(i)) and rejects i = 1 where the weight is
    singular.
    """
    i = check_step_index(i, schedule.n_steps)
    per_sample = _future_sq_error(x0_pred, x0_true)
    if weighting == "simple":
        return float(np.mean(per_sample))
    if weighting == "paper":
        if i < 2:
            raise ValueError("paper weighting requires i >= 2 (sigma_q^2(1) = 0)")
        w = schedule.loss_weights[i - 1] / (2.0 * schedule.posterior_vars[i - 1])
        return float(w * np.mean(per_sample))
    raise ValueError(f"unknown weighting {weighting!r}")


def loss_and_grad(pred: np.ndarray, target: np.ndarray, t_obs: int, i_steps: np.ndarray,
                  schedule: NoiseSchedule, weighting: str = "simple") -> tuple[float, np.ndarray]:
    """Batched loss with per-sample step indices, plus d(loss)/d(pred).

    The gradient is zero on observed frames; per-sample losses are averaged
    over the batch. Used by the training loop, where each sample draws its
    own step index.
    """
    k, t_total, _ = pred.shape
    n_future_elems = (t_total - t_obs) * 2
    if weighting == "simple":
        w = np.ones(k)
    elif weighting == "paper":
        if np.any(i_steps < 2):
            raise ValueError("paper weighting requires i >= 2")
        idx = i_steps - 1
        w = schedule.loss_weights[idx] / (2.0 * schedule.posterior_vars[idx])
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    diff = pred[:, t_obs:, :] - target[:, t_obs:, :]
    per_sample = np.mean(diff * diff, axis=(1, 2))
    loss = float(np.mean(w * per_sample))
    grad = np.zeros_like(pred)
    grad[:, t_obs:, :] = (2.0 / (k * n_future_elems)) * w[:, None, None] * diff
    return loss, grad
