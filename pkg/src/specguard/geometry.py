"""Geometry of the learned representation: pull-back metric of the feature
map, its volume element, the confidence angle theta_x, and lower bounds on
the adversarial distance of a correctly classified sample.

The bound family shares one numerator, the rescaled logit margin
((W_c - W_k) features + b_c - b_k) / ||W_c - W_k||, divided by an estimate
or certificate of the feature-map gradient norm:

* ``local``     — gradient norm at x itself (an estimate, not a certificate);
* ``ball``      — max gradient norm over sampled points of a ball around x;
* ``certified`` — global product of layer spectral norms times activation
                  derivative sups, a provable Lipschitz bound, making the
                  inequality hold unconditionally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Net, feature_map, forward, input_jacobian_feature, predict
from .numerics import Rng, svd_top
from .spectral import conv_top_sigma2, dense_top_triple

BOUND_MODES = ("local", "ball", "certified")


@dataclass
class MetricTensor:
    g: np.ndarray  # (n, n) symmetric PSD
    x: np.ndarray


@dataclass
class GeometryReport:
    theta_x: float
    feat_norm: float
    lambda_max_g: float
    bound_local: float
    bound_certified: float
    comparison_class: int
    bound_ball: float | None = None

    def row(self) -> list:
        return [self.theta_x, self.feat_norm, self.lambda_max_g,
                self.bound_local,
                self.bound_ball if self.bound_ball is not None else "",
                self.bound_certified, self.comparison_class]

    ROW_HEADER = ["theta_x", "feat_norm", "lambda_max_g", "bound_local",
                  "bound_ball", "bound_certified", "comparison_class"]


def metric_tensor(net: Net, x: np.ndarray) -> MetricTensor:
    """Pull-back of the Euclidean feature-space metric: g = J^T J with J the
    feature-map Jacobian at x."""
    J = input_jacobian_feature(net, x)
    g = J.T @ J
    g = 0.5 * (g + g.T)
    return MetricTensor(g=g, x=np.asarray(x, dtype=np.float64))


def lambda_max_g(net: Net, x: np.ndarray) -> float:
    """Top eigenvalue of the metric tensor = sigma_max(J)^2."""
    J = input_jacobian_feature(net, x)
    sigma, _, _ = svd_top(J)
    return sigma * sigma


def grad_norm(net: Net, x: np.ndarray) -> float:
    """Spectral norm of the feature-map Jacobian at x."""
    J = input_jacobian_feature(net, x)
    sigma, _, _ = svd_top(J)
    return sigma


def volume_element(g: np.ndarray) -> float:
    """sqrt(det g) via eigenvalues, clamping tiny negative values (numerical
    PSD repair) to zero."""
    lam = np.linalg.eigvalsh(g)
    scale = max(1.0, float(lam[-1]))
    if lam[0] < -1e-12 * scale:
        raise ValueError(f"metric tensor not PSD: min eigenvalue {lam[0]}")
    lam = np.clip(lam, 0.0, None)
    return float(np.sqrt(np.prod(lam)))


def volume_element_grid(net: Net, rect: tuple[float, float, float, float],
                        resolution: int) -> np.ndarray:
    """Grid of sqrt(det g) at cell centers of a 2D box (x0, x1, y0, y1).
    Row i runs over y (ascending), column j over x."""
    if net.input_shape != (2,):
        raise ValueError("volume element maps require 2D inputs")
    x0, x1, y0, y1 = rect
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    grid = np.empty((resolution, resolution))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            grid[i, j] = volume_element(metric_tensor(net, np.array([x, y])).g)
    return grid


def theta_x(net: Net, x: np.ndarray, c: int, k: int) -> float:
    """Cosine of the angle between the feature vector and the readout
    confidence direction W_c - W_k (bias excluded)."""
    feats = feature_map(net, x)
    fn = np.linalg.norm(feats)
    if fn == 0.0:
        raise ValueError("feature vector is zero; theta_x undefined")
    diff = net.readout.W[c] - net.readout.W[k]
    dn = np.linalg.norm(diff)
    if dn == 0.0:
        raise ValueError("confidence direction W_c - W_k is zero")
    return float(diff @ feats / (dn * fn))


def runner_up_class(net: Net, x: np.ndarray, c: int) -> int:
    logits, _ = forward(net, x)
    order = np.argsort(logits)[::-1]
    return int(order[0]) if order[0] != c else int(order[1])


def lipschitz_product(net: Net) -> float:
    """Certified global bound on ||grad of the feature map||_2: product of
    layer spectral norms times the activation-derivative sups."""
    prod = net.max_activation_deriv()
    for _, layer in net.weighted_layers()[:-1]:
        if layer.kind == "dense":
            prod *= dense_top_triple(layer.W).sigma
        else:
            prod *= float(np.sqrt(conv_top_sigma2(layer.kernel, layer.h,
                                                  layer.w, layer.stride)))
    return prod


def sample_ball(rng: Rng, x: np.ndarray, R: float, M: int) -> np.ndarray:
    """M points uniform in the L2 ball of radius R around x."""
    n = x.size
    dirs = rng.gaussian((M, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = R * rng.uniform((M,)) ** (1.0 / n)
    return (x.ravel()[None] + dirs * radii[:, None]).reshape((M,) + x.shape)


def margin_numerator(net: Net, x: np.ndarray, c: int, k: int) -> float:
    """((W_c - W_k) features + b_c - b_k) / ||W_c - W_k||."""
    feats = feature_map(net, x)
    W, b = net.readout.W, net.readout.b
    diff = W[c] - W[k]
    num = float(diff @ feats)
    if b is not None:
        num += float(b[c] - b[k])
    return num / float(np.linalg.norm(diff))


def adv_lower_bound(net: Net, x: np.ndarray, c: int, k: int | None = None,
                    mode: str = "certified", R: float | None = None,
                    M: int = 256, rng: Rng | None = None) -> float:
    """Lower bound on the adversarial distance of x (true class c) against
    class k. Negative margins (theta_x <= 0) report 0. ``local`` and ``ball``
    are estimates; ``certified`` is provable."""
    x = np.asarray(x, dtype=np.float64)
    if predict(net, x) != c:
        raise ValueError("x is not correctly classified; bound undefined")
    if k is None:
        k = runner_up_class(net, x, c)
    if k == c:
        raise ValueError("comparison class must differ from the true class")
    if mode not in BOUND_MODES:
        raise ValueError(f"mode must be one of {BOUND_MODES}")
    num = margin_numerator(net, x, c, k)
    if num <= 0.0:
        return 0.0
    if mode == "local":
        denom = grad_norm(net, x)
    elif mode == "certified":
        denom = lipschitz_product(net)
    else:
        if R is None or R <= 0:
            raise ValueError("ball mode needs a positive radius R")
        if rng is None:
            rng = Rng(0)
        pts = sample_ball(rng, x, R, M)
        denom = max(grad_norm(net, x), max(grad_norm(net, p) for p in pts))
    if denom == 0.0:
        return float("inf")
    return num / denom


def geometry_report(net: Net, x: np.ndarray, c: int, k: int | None = None,
                    ball_R: float | None = None, ball_M: int = 256,
                    rng: Rng | None = None) -> GeometryReport:
    """All geometric quantities of one correctly classified sample."""
    x = np.asarray(x, dtype=np.float64)
    if k is None:
        k = runner_up_class(net, x, c)
    bound_ball = None
    if ball_R is not None:
        bound_ball = adv_lower_bound(net, x, c, k, mode="ball", R=ball_R,
                                     M=ball_M, rng=rng)
    return GeometryReport(
        theta_x=theta_x(net, x, c, k),
        feat_norm=float(np.linalg.norm(feature_map(net, x))),
        lambda_max_g=lambda_max_g(net, x),
        bound_local=adv_lower_bound(net, x, c, k, mode="local"),
        bound_ball=bound_ball,
        bound_certified=adv_lower_bound(net, x, c, k, mode="certified"),
        comparison_class=k,
    )
