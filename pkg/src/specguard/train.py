"""Supervised training: SGD with momentum and weight decay on cross-entropy,
spectral penalty activated after a burn-in period, amortized power-iteration
refreshes, readout retraining on frozen features, and per-epoch tracking of
the confidence angle and feature norm of selected samples.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import regularize
from .network import (Net, backward, feature_map_batch, forward_batch,
                      parameters, predict_batch, softmax)
from .numerics import Rng
from .regularize import RegConfig, SpectralState


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    epochs: int
    lr: float
    batch_size: int | None = None  # None = full batch
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    reg: RegConfig = field(default_factory=RegConfig)
    track_samples: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.reg.burn_in_epoch > self.epochs:
            raise ValueError("burn_in_epoch exceeds total epochs")


@dataclass
class TrainLog:
    """Per-epoch history. Arrays have length == epochs; the pre-training
    state is kept separately in the ``initial_*`` fields."""

    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    sigma2: list[list[float]] = field(default_factory=list)  # per weighted layer
    track_theta: list[list[float]] = field(default_factory=list)
    track_feat_norm: list[list[float]] = field(default_factory=list)
    initial_sigma2: list[float] = field(default_factory=list)
    initial_theta: list[float] = field(default_factory=list)
    initial_feat_norm: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        n_layers = len(self.initial_sigma2)
        n_track = len(self.initial_theta)
        header = (["epoch", "loss", "train_acc", "test_acc"]
                  + [f"sigma2_layer{i}" for i in range(n_layers)]
                  + [f"theta_sample{i}" for i in range(n_track)]
                  + [f"feat_norm_sample{i}" for i in range(n_track)])
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerow([0, "", "", ""]
                       + [repr(v) for v in self.initial_sigma2]
                       + [repr(v) for v in self.initial_theta]
                       + [repr(v) for v in self.initial_feat_norm])
            for e in range(len(self.loss)):
                w.writerow([e + 1, repr(self.loss[e]), repr(self.train_acc[e]),
                            repr(self.test_acc[e])]
                           + [repr(v) for v in self.sigma2[e]]
                           + [repr(v) for v in self.track_theta[e]]
                           + [repr(v) for v in self.track_feat_norm[e]])

    def summary(self) -> dict:
        return {
            "epochs": len(self.loss),
            "final_loss": self.loss[-1] if self.loss else None,
            "final_train_acc": self.train_acc[-1] if self.train_acc else None,
            "final_test_acc": self.test_acc[-1] if self.test_acc else None,
            "final_sigma2": self.sigma2[-1] if self.sigma2 else [],
        }


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    m = len(labels)
    p = softmax(logits)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.mean(np.log(p[np.arange(m), labels] + eps)))
    d = p
    d[np.arange(m), labels] -= 1.0
    return loss, d / m


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray],
             velocity: list[np.ndarray], lr: float, momentum: float,
             weight_decay: float) -> None:
    """Heavy-ball SGD, in place: v <- momentum*v + g + wd*p; p <- p - lr*v."""
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v


def evaluate(net: Net, inputs: np.ndarray, labels: np.ndarray,
             batch: int = 4096) -> float:
    hits = 0
    for i in range(0, len(labels), batch):
        hits += int(np.sum(predict_batch(net, inputs[i:i + batch])
                           == labels[i:i + batch]))
    return hits / len(labels)


def _all_sigma2(net: Net) -> list[float]:
    from .spectral import conv_top_sigma2, dense_top_triple

    out = []
    for _, layer in net.weighted_layers():
        W = layer.W if layer.kind == "dense" else layer.kernel
        if not np.all(np.isfinite(W)):  # keep logging alive on diverging runs
            out.append(float("nan"))
        elif layer.kind == "dense":
            out.append(dense_top_triple(layer.W).sigma2)
        else:
            out.append(conv_top_sigma2(layer.kernel, layer.h, layer.w, layer.stride))
    return out


def track_confidence(net: Net, samples: np.ndarray,
                     labels: np.ndarray) -> list[tuple[float, float]]:
    """(theta_x, ||features||) per tracked sample, with the comparison class
    taken as the runner-up logit. Misclassified samples give theta_x <= 0 and
    are still reported."""
    logits, _ = forward_batch(net, samples)
    feats = feature_map_batch(net, samples)
    out = []
    W = net.readout.W
    for i, c in enumerate(labels):
        order = np.argsort(logits[i])[::-1]
        k = int(order[0]) if order[0] != c else int(order[1])
        diff = W[c] - W[k]
        fn = float(np.linalg.norm(feats[i]))
        denom = np.linalg.norm(diff) * fn
        theta = float(diff @ feats[i] / denom) if denom > 0 else 0.0
        out.append((theta, fn))
    return out


def train_supervised(net: Net, inputs: np.ndarray, labels: np.ndarray,
                     cfg: TrainConfig,
                     test_inputs: np.ndarray | None = None,
                     test_labels: np.ndarray | None = None,
                     state: SpectralState | None = None,
                     on_epoch_end=None,
                     ) -> tuple[Net, TrainLog]:
    """Mini-batch SGD on cross-entropy plus the configured spectral penalty.

    The penalty contributes gradients only from ``burn_in_epoch`` on; the
    power-iteration state warms up over the last 10% of the burn-in so the
    cached triples are converged when the penalty activates. Deterministic
    given (net, cfg.seed).
    """
    rng = Rng(cfg.seed).spawn(1)  # batch-order stream
    m = len(labels)
    batch = cfg.batch_size or m
    reg_active = cfg.reg.mode != "none" and cfg.reg.gamma > 0.0
    if reg_active and state is None:
        state = regularize.init_state(net, cfg.reg, Rng(cfg.seed).spawn(2))
    burn_in = cfg.reg.burn_in_epoch
    warmup_start = burn_in - max(1, math.ceil(0.1 * burn_in)) if reg_active else 0

    params = parameters(net)
    velocity = [np.zeros_like(p) for p in params]
    log = TrainLog()
    log.initial_sigma2 = _all_sigma2(net)
    if cfg.track_samples:
        tracked_x = inputs[cfg.track_samples]
        tracked_y = labels[cfg.track_samples]
        pairs = track_confidence(net, tracked_x, tracked_y)
        log.initial_theta = [p[0] for p in pairs]
        log.initial_feat_norm = [p[1] for p in pairs]

    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        epoch_loss = 0.0
        n_batches = 0
        penalty_on = reg_active and epoch >= burn_in
        state_on = reg_active and epoch >= warmup_start
        for start in range(0, m, batch):
            idx = order[start:start + batch]
            logits, cache = forward_batch(net, inputs[idx])
            loss, dlogits = cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                # snapshot must not assume finite weights
                scales = [float(np.max(np.abs(p))) for p in params]
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}",
                    {"epoch": epoch, "loss": loss, "param_scales": scales})
            grads = backward(net, cache, dlogits)
            if penalty_on:
                pgrads = regularize.penalty_grads(net, cfg.reg, state)
                grads = [g + pg for g, pg in zip(grads, pgrads)]
            sgd_step(params, grads, velocity, cfg.lr, cfg.momentum,
                     cfg.weight_decay)
            if state_on:
                regularize.refresh(state, net, cfg.reg)
            epoch_loss += loss
            n_batches += 1

        log.loss.append(epoch_loss / n_batches)
        log.train_acc.append(evaluate(net, inputs, labels))
        log.test_acc.append(evaluate(net, test_inputs, test_labels)
                            if test_inputs is not None else float("nan"))
        log.sigma2.append(_all_sigma2(net))
        if cfg.track_samples:
            pairs = track_confidence(net, tracked_x, tracked_y)
            log.track_theta.append([p[0] for p in pairs])
            log.track_feat_norm.append([p[1] for p in pairs])
        if on_epoch_end is not None:
            on_epoch_end(epoch, net)

    return net, log


@dataclass
class ReadoutFit:
    W: np.ndarray
    b: np.ndarray | None
    objective: float
    grad_norm: float
    converged: bool
    n_iter: int


def retrain_readout(features: np.ndarray, labels: np.ndarray,
                    n_classes: int | None = None, l2_strength: float = 1.0,
                    fit_intercept: bool = True, tol: float = 1e-6,
                    max_iter: int = 2000) -> ReadoutFit:
    """Multinomial logistic regression on frozen features.

    Minimizes sum_i CE_i + (l2_strength/2) * ||W||_F^2 (intercept, when
    fitted, is unpenalized) with L-BFGS to gradient norm <= tol. The
    objective is strictly convex in W, so the fit is unique up to the usual
    constant-shift gauge of the intercept.
    """
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    m, d = F.shape
    K = n_classes or int(y.max()) + 1
    Y = np.zeros((m, K))
    Y[np.arange(m), y] = 1.0

    def unpack(theta):
        W = theta[: K * d].reshape(K, d)
        b = theta[K * d:] if fit_intercept else None
        return W, b

    def objective(theta):
        W, b = unpack(theta)
        logits = F @ W.T
        if b is not None:
            logits = logits + b
        z = logits - logits.max(axis=1, keepdims=True)
        logZ = np.log(np.exp(z).sum(axis=1)) + logits.max(axis=1)
        ce = float(np.sum(logZ) - np.sum(logits[np.arange(m), y]))
        val = ce + 0.5 * l2_strength * float(np.sum(W * W))
        P = softmax(logits)
        gW = (P - Y).T @ F + l2_strength * W
        if b is not None:
            gb = (P - Y).sum(axis=0)
            return val, np.concatenate([gW.ravel(), gb])
        return val, gW.ravel()

    theta0 = np.zeros(K * d + (K if fit_intercept else 0))
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-15})
    theta = res.x
    val, grad = objective(theta)
    gnorm = float(np.linalg.norm(grad))
    W, b = unpack(theta)
    return ReadoutFit(W=W, b=b, objective=val, grad_norm=gnorm,
                      converged=gnorm <= tol, n_iter=int(res.nit))


def write_summary(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
