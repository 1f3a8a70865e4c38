"""Training loop: adaptive-moment optimizer, batch size 1, loss logging.

Sample order is a per-epoch permutation derived from the run seed and the
epoch index, so resuming from a checkpoint replays the identical sequence
without serializing generator state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .autodiff import NumericError
from .losses import LossWeights, total_loss
from .model import DisparityPipeline

__all__ = ["Adam", "TrainSettings", "train", "save_checkpoint", "load_checkpoint"]


class Adam:
    """Adaptive-moment gradient descent over named parameter tensors."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def state(self) -> dict:
        out = {"opt.step": np.array(float(self.step_count))}
        for name, _ in self.params:
            out[f"opt.m.{name}"] = self.m[name].copy()
            out[f"opt.v.{name}"] = self.v[name].copy()
        return out

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["opt.step"])
        for name, _ in self.params:
            self.m[name][...] = state[f"opt.m.{name}"]
            self.v[name][...] = state[f"opt.v.{name}"]


@dataclass
class TrainSettings:
    steps: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    huber_delta: float = 1.0
    weights: LossWeights = LossWeights()
    checkpoint_every: int = 500
    log_every: int = 1


def save_checkpoint(path, model: DisparityPipeline, optimizer: Adam | None = None) -> None:
    archive = model.state()
    if optimizer is not None:
        archive.update(optimizer.state())
    checkpoint.save_archive(path, archive)


def load_checkpoint(path, model: DisparityPipeline, optimizer: Adam | None = None) -> dict:
    archive = checkpoint.load_archive(path)
    model.load_state({k: v for k, v in archive.items() if not k.startswith("opt.")})
    if optimizer is not None and "opt.step" in archive:
        optimizer.load_state(archive)
    return archive


def _sample_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng((seed + 1) * 1_000_003 + epoch)
    return rng.permutation(n)


def train(model: DisparityPipeline, samples: list, settings: TrainSettings,
          out_dir=None, resume=None) -> list:
    """Run the loop; returns [(step, loss, alpha, beta)] and writes the CSV log.

    A non-finite loss aborts with the offending step in the message. The
    dual-pixel loss term is dropped automatically when the pipeline runs
    without a dual-pixel branch.
    """
    if not samples:
        raise ValueError("training requires at least one sample")
    weights = settings.weights
    if not model.uses_dp_volume and weights.dp != 0.0:
        weights = LossWeights(0.0, weights.dc, weights.unref, weights.ref)

    optimizer = Adam(model.named_parameters(), lr=settings.learning_rate)
    start_step = 0
    if resume is not None:
        load_checkpoint(resume, model, optimizer)
        start_step = optimizer.step_count

    out_dir = Path(out_dir) if out_dir is not None else None
    log_rows = []
    n = len(samples)
    log_file = None
    writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "loss_log.csv"
        fresh = start_step == 0 or not log_path.exists()
        log_file = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_file)
        if fresh:
            writer.writerow(["step", "loss", "alpha", "beta"])

    try:
        for step in range(start_step, settings.steps):
            epoch, pos = divmod(step, n)
            sample = samples[_sample_order(settings.seed, epoch, n)[pos]]
            outputs = model.predict_sample(sample)
            loss = total_loss(outputs, outputs["affine"], sample.gt.d_r, sample.gt.c_r,
                              weights, settings.huber_delta)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"training aborted: non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            alpha, beta = (outputs["affine"].as_floats() if outputs["affine"] is not None
                           else (float("nan"), float("nan")))
            row = (step, value, alpha, beta)
            log_rows.append(row)
            if writer is not None and step % settings.log_every == 0:
                writer.writerow([step, f"{value:.9f}", f"{alpha:.9f}", f"{beta:.9f}"])
            if (out_dir is not None and settings.checkpoint_every
                    and (step + 1) % settings.checkpoint_every == 0):
                save_checkpoint(out_dir / "checkpoint.du2", model, optimizer)
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.du2", model, optimizer)
    finally:
        if log_file is not None:
            log_file.close()
    return log_rows
