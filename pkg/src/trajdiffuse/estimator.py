"""Estimator-style front end: configure once, fit on scenes, predict agents.

The class follows the scikit-learn conventions (constructor stores
hyperparameters verbatim, ``fit`` returns ``self``, fitted state lives in
trailing-underscore attributes, ``get_params``/``set_params`` round-trip) so
it drops into pipelines and grid searches without scikit-learn itself being
a dependency.
"""

from __future__ import annotations

import inspect

import numpy as np

from .denoiser import DenoiserParams, load_checkpoint, save_checkpoint
from .mapguide import GuidanceConfig, NavEnvironment
from .pipeline import PredictionRequest, PredictionResult, TrainConfig, predict, train
from .schedule import build_cosine_schedule


class NotFittedError(RuntimeError):
    """predict() was called before fit() or load()."""


class TrajDiffuse:
    """Map-guided conditional diffusion model for trajectory prediction.

    Parameters
    ----------
    n_steps : int
        Denoising steps N in the reverse chain.
    widths : tuple of int
        Channel widths per U-Net resolution level.
    lr, batch_size, n_epochs, weighting, seed
        Training settings; `weighting` is "simple" (plain MSE) or "paper"
        (schedule-weighted).
    coord_scale : float
        Standardization scale in meters; trajectories are centered on the
        last observed position and divided by this before the network.
    guidance_steps, guidance_scale
        Gradient-descent step count and step size (meters; None means one
        pixel) for the map guidance at sampling time.
    """

    def __init__(self, n_steps=25, widths=(32, 64, 128), kernel_len=5, gn_groups=8,
                 emb_dim=32, coord_scale=5.0, lr=1e-3, batch_size=32, n_epochs=200,
                 weighting="simple", cosine_offset=0.008, guidance_steps=10,
                 guidance_scale=None, seed=0):
        self.n_steps = n_steps
        self.widths = widths
        self.kernel_len = kernel_len
        self.gn_groups = gn_groups
        self.emb_dim = emb_dim
        self.coord_scale = coord_scale
        self.lr = lr
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.weighting = weighting
        self.cosine_offset = cosine_offset
        self.guidance_steps = guidance_steps
        self.guidance_scale = guidance_scale
        self.seed = seed

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for TrajDiffuse")
            setattr(self, name, value)
        return self

    # ------------------------------------------------------------------ fit

    def fit(self, scenes, init: DenoiserParams | None = None):
        """Train on a list of scenes; returns self."""
        config = TrainConfig(
            n_epochs=self.n_epochs, batch_size=self.batch_size, lr=self.lr,
            n_steps=self.n_steps, weighting=self.weighting, seed=self.seed,
            widths=tuple(self.widths), kernel_len=self.kernel_len,
            gn_groups=self.gn_groups, emb_dim=self.emb_dim,
            coord_scale=self.coord_scale, cosine_offset=self.cosine_offset,
        )
        self.model_params_, self.training_log_ = train(scenes, config, init=init)
        self.schedule_ = build_cosine_schedule(self.n_steps, self.cosine_offset)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_params_"):
            raise NotFittedError("call fit() or load() before predict()")

    # -------------------------------------------------------------- predict

    def guidance_config(self) -> GuidanceConfig:
        return GuidanceConfig(n_grad_steps=self.guidance_steps, step_scale=self.guidance_scale)

    def predict(self, observed, intents, env: NavEnvironment | None = None,
                seed: int = 0, guidance: bool = True,
                sample_seeds=None) -> PredictionResult:
        """Sample one trajectory per intent for a single agent."""
        self._check_fitted()
        request = PredictionRequest(
            observed=np.asarray(observed, dtype=np.float64), intents=list(intents),
            env=env, seed=seed, guidance_on=guidance, sample_seeds=sample_seeds,
        )
        return predict(request, self.model_params_, self.schedule_, self.guidance_config())

    def predict_request(self, request: PredictionRequest) -> PredictionResult:
        self._check_fitted()
        return predict(request, self.model_params_, self.schedule_, self.guidance_config())

    # ------------------------------------------------------------------ I/O

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(self.model_params_, self.schedule_, path)

    @classmethod
    def load(cls, path) -> "TrajDiffuse":
        params, schedule = load_checkpoint(path)
        desc = params.arch
        model = cls(
            n_steps=desc.n_steps, widths=desc.widths, kernel_len=desc.kernel_len,
            gn_groups=desc.gn_groups, emb_dim=desc.emb_dim, coord_scale=desc.coord_scale,
        )
        model.model_params_ = params
        model.schedule_ = schedule
        model.training_log_ = []
        return model
