"""Spectral penalties on layer weights and the amortized refresh policy.

Two modes share one penalty form, (gamma/2) * sum of sigma_max^2 over a set
of layers: ``rep-spectral`` covers every weighted layer except the readout,
``ll-spectral`` additionally covers the readout. The top singular triples are
maintained by warm-started power iteration, refreshed every
``refresh_period`` parameter updates rather than converged at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Net
from .numerics import Rng
from .spectral import (ConvOperator, MatrixOperator, SingularTriple,
                       conv_sigma2_kernel_grad, power_iter_sigma2, sigma2_grad)

MODES = ("none", "rep-spectral", "ll-spectral")


@dataclass
class RegConfig:
    mode: str = "none"
    gamma: float = 0.0
    burn_in_epoch: int = 0
    refresh_period: int = 1
    iters_per_refresh: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.refresh_period < 1:
            raise ValueError(f"refresh_period must be >= 1, got {self.refresh_period}")
        if self.iters_per_refresh < 1:
            raise ValueError("iters_per_refresh must be >= 1")


@dataclass
class _LayerState:
    layer_index: int
    triple: SingularTriple


@dataclass
class SpectralState:
    """One cached singular triple per regularized layer."""

    entries: list[_LayerState] = field(default_factory=list)

    def ages(self) -> list[int]:
        return [e.triple.age for e in self.entries]


def _operator_for(layer):
    if layer.kind == "dense":
        return MatrixOperator(layer.W)
    if layer.kind == "conv2d-periodic":
        return ConvOperator(layer.kernel, layer.h, layer.w, layer.stride)
    raise ValueError(f"layer kind {layer.kind!r} carries no weights")


def regularized_layers(net: Net, cfg: RegConfig) -> list[tuple[int, object]]:
    """(layer index, layer) pairs the penalty applies to under ``cfg.mode``."""
    if cfg.mode == "none":
        return []
    weighted = net.weighted_layers()
    if cfg.mode == "rep-spectral":
        return weighted[:-1]  # everything but the readout
    return weighted


def init_state(net: Net, cfg: RegConfig, rng: Rng,
               warmup_iters: int = 0) -> SpectralState:
    """Fresh state with random start vectors; ``warmup_iters`` power steps
    converge each triple immediately when nonzero."""
    state = SpectralState()
    for idx, layer in regularized_layers(net, cfg):
        op = _operator_for(layer)
        triple = power_iter_sigma2(op, rng=rng, iters=max(warmup_iters, 1))
        triple.age = 0
        state.entries.append(_LayerState(layer_index=idx, triple=triple))
    return state


def refresh(state: SpectralState, net: Net, cfg: RegConfig, step: int | None = None) -> SpectralState:
    """Amortized refresh, called once per parameter update: entries whose age
    has reached the refresh period get ``iters_per_refresh`` warm-started
    power-iteration steps, the rest just age."""
    layers = net.layers
    for entry in state.entries:
        entry.triple.age += 1
        if entry.triple.age >= cfg.refresh_period:
            op = _operator_for(layers[entry.layer_index])
            new = power_iter_sigma2(op, v0=entry.triple.v,
                                    iters=cfg.iters_per_refresh)
            new.age = 0
            new.degenerate = entry.triple.degenerate
            entry.triple = new
    return state


def penalty(net: Net, cfg: RegConfig, state: SpectralState) -> float:
    """(gamma/2) * sum of cached sigma_max^2 over the regularized layers."""
    if cfg.mode == "none" or cfg.gamma == 0.0:
        return 0.0
    return 0.5 * cfg.gamma * sum(e.triple.sigma2 for e in state.entries)


def penalty_grads(net: Net, cfg: RegConfig, state: SpectralState) -> list[np.ndarray]:
    """Parameter gradients of the penalty, aligned with ``network.parameters``.

    Dense layers get gamma * sigma * u v^T; convolution layers get the same
    outer product transported to kernel coordinates through the operator
    form. Bias entries and unregularized layers are zero — in particular the
    readout gradient is exactly zero under rep-spectral.
    """
    reg_idx = {e.layer_index: e.triple for e in state.entries}
    grads = []
    for idx, layer in net.weighted_layers():
        active = cfg.mode != "none" and cfg.gamma != 0.0 and idx in reg_idx
        if layer.kind == "dense":
            if active:
                grads.append(0.5 * cfg.gamma * sigma2_grad(layer.W, reg_idx[idx]))
            else:
                grads.append(np.zeros_like(layer.W))
            if layer.b is not None:
                grads.append(np.zeros_like(layer.b))
        else:
            if active:
                grads.append(0.5 * cfg.gamma * conv_sigma2_kernel_grad(
                    layer.kernel.shape, reg_idx[idx], layer.stride))
            else:
                grads.append(np.zeros_like(layer.kernel))
            if layer.b is not None:
                grads.append(np.zeros_like(layer.b))
    return grads


def exact_sigma2s(net: Net, cfg: RegConfig) -> list[float]:
    """Exact sigma_max^2 per regularized layer (SVD / FFT spectrum), for
    logging and tests; the training path uses the amortized state instead."""
    from .spectral import conv_top_sigma2, dense_top_triple

    out = []
    for _, layer in regularized_layers(net, cfg):
        if layer.kind == "dense":
            out.append(dense_top_triple(layer.W).sigma2)
        else:
            out.append(conv_top_sigma2(layer.kernel, layer.h, layer.w, layer.stride))
    return out
