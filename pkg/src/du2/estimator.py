"""Scikit-learn style front door for the disparity pipeline.

``fit`` trains the network on a list of scene samples (or a dataset
directory), ``predict`` returns full-resolution disparity maps, and the
hyperparameters round-trip through ``get_params``/``set_params`` so the
estimator composes with model-selection tooling.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .losses import LossWeights, eval_metrics
from .model import DisparityPipeline, PipelineConfig
from .scenes import load_dataset
from .train import TrainSettings, load_checkpoint, save_checkpoint, train
from .validation import check_scene_sample

__all__ = ["DualPixelStereoRegressor"]


class DualPixelStereoRegressor(BaseEstimator):
    """Depth-from-stereo-plus-dual-pixel estimator with a fit/predict surface.

    Parameters mirror the run configuration; all are plain keyword arguments
    so ``get_params``/``set_params``/``clone`` behave as usual.
    """

    def __init__(self, image_height=64, image_width=80, dp_ratio=2,
                 feature_channels=16, dp_channels=16, fusion_channels=8,
                 trunk_channels=16, guide_channels=32,
                 fusion_mode="dp_dc_conf", refine_mode="rgb_plus_dp",
                 validity_channel=True, gamma=0.1, temperature=0.5,
                 leaky_slope=0.2, huber_delta=1.0,
                 lambda_dp=1.0, lambda_dc=10.0, lambda_unref=1.0, lambda_ref=1.0,
                 learning_rate=1e-3, n_steps=2000, checkpoint_every=500, seed=0):
        self.image_height = image_height
        self.image_width = image_width
        self.dp_ratio = dp_ratio
        self.feature_channels = feature_channels
        self.dp_channels = dp_channels
        self.fusion_channels = fusion_channels
        self.trunk_channels = trunk_channels
        self.guide_channels = guide_channels
        self.fusion_mode = fusion_mode
        self.refine_mode = refine_mode
        self.validity_channel = validity_channel
        self.gamma = gamma
        self.temperature = temperature
        self.leaky_slope = leaky_slope
        self.huber_delta = huber_delta
        self.lambda_dp = lambda_dp
        self.lambda_dc = lambda_dc
        self.lambda_unref = lambda_unref
        self.lambda_ref = lambda_ref
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    # -- construction helpers ----------------------------------------------

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            image_height=self.image_height,
            image_width=self.image_width,
            dp_ratio=self.dp_ratio,
            feature_channels=self.feature_channels,
            dp_channels=self.dp_channels,
            fusion_channels=self.fusion_channels,
            trunk_channels=self.trunk_channels,
            guide_channels=self.guide_channels,
            fusion_mode=self.fusion_mode,
            refine_mode=self.refine_mode,
            validity_channel=self.validity_channel,
            gamma=self.gamma,
            temperature=self.temperature,
            leaky_slope=self.leaky_slope,
            seed=self.seed,
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            steps=self.n_steps,
            learning_rate=self.learning_rate,
            seed=self.seed,
            huber_delta=self.huber_delta,
            weights=LossWeights(self.lambda_dp, self.lambda_dc, self.lambda_unref,
                                self.lambda_ref),
            checkpoint_every=self.checkpoint_every,
        )

    def _resolve_samples(self, X, split="train"):
        if isinstance(X, (str, Path)):
            return load_dataset(X, split)
        return list(X)

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() or load() before predicting")

    # -- estimator surface ---------------------------------------------------

    def fit(self, X, y=None, out_dir=None, resume=None):
        """Train on SceneSamples (or a dataset directory); returns self."""
        samples = self._resolve_samples(X, "train")
        for sample in samples:
            check_scene_sample(sample, self.image_height, self.image_width, self.dp_ratio)
        self.model_ = DisparityPipeline(self.pipeline_config())
        self.history_ = train(self.model_, samples, self.train_settings(),
                              out_dir=out_dir, resume=resume)
        return self

    def predict(self, X):
        """Full-resolution disparity maps (numpy [H, W]) for each sample."""
        self._require_fitted()
        samples = self._resolve_samples(X, "test")
        out = []
        for sample in samples:
            check_scene_sample(sample, self.image_height, self.image_width, self.dp_ratio)
            result = self.model_.predict_sample(sample)
            out.append(result["d_ref"].values.data.copy())
        return out

    def predict_full(self, X):
        """Per-sample output dictionaries (all intermediate maps and volumes)."""
        self._require_fitted()
        samples = self._resolve_samples(X, "test")
        return [self.model_.predict_sample(s) for s in samples]

    def score(self, X, y=None):
        """Negative confidence-weighted MAE over samples carrying ground truth."""
        self._require_fitted()
        samples = self._resolve_samples(X, "test")
        maes = []
        for sample, pred in zip(samples, self.predict(samples)):
            maes.append(eval_metrics(pred, sample.gt.d_r, sample.gt.c_r)["mae"])
        return -float(np.mean(maes))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        self._require_fitted()
        save_checkpoint(path, self.model_)
        return self

    def load(self, path):
        """Load parameters into a freshly built pipeline; marks the estimator fitted."""
        self.model_ = DisparityPipeline(self.pipeline_config())
        load_checkpoint(path, self.model_)
        return self
