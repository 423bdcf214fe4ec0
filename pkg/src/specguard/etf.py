"""Simplex equiangular tight frames and last-layer alignment dynamics.

With one frozen unit representation per class arranged as a simplex ETF,
full-batch gradient descent of the cross-entropy on the readout alone
aligns each weight row with its class representation; the confidence angle
then takes the closed form (1 - z_k.z_c) / ||z_c - z_k||, identical over k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import softmax
from .numerics import Rng


@dataclass
class EtfFrame:
    """K unit vectors in R^d with pairwise inner product -1/(K-1), sum zero."""

    Z: np.ndarray  # (K, d)

    @property
    def K(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]


def make_simplex_etf(K: int, d: int) -> EtfFrame:
    """Centered, normalized K-point simplex embedded in the first K-1
    coordinates of R^d (any orthonormal completion is equivalent)."""
    if K < 2:
        raise ValueError("need at least 2 classes")
    if d < K - 1:
        raise ValueError(f"simplex ETF with K={K} needs dimension >= {K - 1}")
    # rows of M: centered unit-norm simplex vertices in the sum-zero subspace
    M = np.sqrt(K / (K - 1.0)) * (np.eye(K) - np.ones((K, K)) / K)
    # orthonormal basis of the sum-zero subspace (Helmert rows)
    B = np.zeros((K - 1, K))
    for i in range(1, K):
        B[i - 1, :i] = 1.0
        B[i - 1, i] = -i
        B[i - 1] /= np.linalg.norm(B[i - 1])
    coords = M @ B.T  # (K, K-1)
    Z = np.zeros((K, d))
    Z[:, : K - 1] = coords
    return EtfFrame(Z=Z)


def lastlayer_loss(W: np.ndarray, Z: np.ndarray) -> float:
    """Balanced one-sample-per-class cross-entropy of logits W z_k."""
    logits = Z @ W.T  # (K, K): row k = logits of sample k
    z = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(z).sum(axis=1)) + logits.max(axis=1)
    K = Z.shape[0]
    return float(np.mean(logZ - np.diag(logits)))


def lastlayer_grad(W: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Gradient of ``lastlayer_loss`` w.r.t. W: (1/K)(G - I)^T Z with G the
    softmax of the logits, one row per class sample."""
    K = Z.shape[0]
    G = softmax(Z @ W.T)
    return (G - np.eye(K)).T @ Z / K


@dataclass
class AlignmentTrajectory:
    W: np.ndarray                 # final weights
    cosines: np.ndarray           # (steps + 1, K): cos(W_k, z_k) incl. init
    norms: np.ndarray             # (steps + 1, K): ||W_k||
    diverged: bool = False

    def to_csv(self, path) -> None:
        import csv

        K = self.cosines.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step"] + [f"cos_{k}" for k in range(K)]
                       + [f"norm_{k}" for k in range(K)])
            for s in range(self.cosines.shape[0]):
                w.writerow([s] + [repr(v) for v in self.cosines[s]]
                           + [repr(v) for v in self.norms[s]])


def _row_cosines(W: np.ndarray, Z: np.ndarray) -> np.ndarray:
    num = np.sum(W * Z, axis=1)
    den = np.linalg.norm(W, axis=1) * np.linalg.norm(Z, axis=1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def lastlayer_gd(Z: np.ndarray, init_std: float, lr: float, steps: int,
                 rng: Rng) -> AlignmentTrajectory:
    """Full-batch gradient descent on the readout with frozen representations,
    logging per-class alignment cosines. Weight norms grow without bound
    under cross-entropy, so convergence is judged by the cosines."""
    K, d = Z.shape
    W = rng.gaussian((K, d), 0.0, init_std)
    cosines = [_row_cosines(W, Z)]
    norms = [np.linalg.norm(W, axis=1)]
    for _ in range(steps):
        W = W - lr * lastlayer_grad(W, Z)
        cosines.append(_row_cosines(W, Z))
        norms.append(np.linalg.norm(W, axis=1))
    cos = np.stack(cosines)
    # persistent late decrease of the mean cosine marks divergence
    tail = cos.mean(axis=1)[max(0, steps - 100):]
    diverged = bool(steps > 200 and np.all(np.diff(tail) < 0))
    return AlignmentTrajectory(W=W, cosines=cos, norms=np.stack(norms),
                               diverged=diverged)


def theta_x_analytic(Z: np.ndarray, c: int, k: int) -> float:
    """Confidence-angle cosine under perfect last-layer alignment:
    (1 - z_k.z_c) / ||z_c - z_k||; equal for every k != c by ETF symmetry."""
    if c == k:
        raise ValueError("comparison class must differ from the true class")
    zc, zk = Z[c], Z[k]
    return float((1.0 - zk @ zc) / np.linalg.norm(zc - zk))
