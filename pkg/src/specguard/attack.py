"""Black-box decision-based attack evaluation.

The tangent attack sees only class labels through a query-counting oracle.
Per boundary-update iteration it (1) estimates the boundary normal from
labeled sphere probes, (2) finds the tangent point of a hemisphere placed
at the current boundary point, in the 2D plane spanned by the sample, the
boundary point and the normal, and (3) bisects the segment from the sample
to the tangent point back onto the boundary. Distances are therefore
non-increasing over iterations and the final point is a genuine adversarial
sample, giving an upper bound on the adversarial distance.

``brute_force_distance`` is the validation oracle: bisected boundary
distances along a dense direction cover (low input dimension only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Net, predict_batch
from .numerics import Rng


class DecisionOracle:
    """Label-only interface to a classifier, with a query counter.

    ``fn`` maps a batch (m, ...) of inputs to m integer labels; logits are
    deliberately not exposed.
    """

    def __init__(self, fn):
        self._fn = fn
        self.queries = 0

    @classmethod
    def from_net(cls, net: Net) -> "DecisionOracle":
        return cls(lambda X: predict_batch(net, X))

    @classmethod
    def from_linear(cls, w: np.ndarray, b: float) -> "DecisionOracle":
        """Two-class oracle: label = 1 iff w.x + b > 0."""
        w = np.asarray(w, dtype=np.float64)
        return cls(lambda X: (np.asarray(X) @ w + b > 0).astype(int))

    def query(self, x: np.ndarray) -> int:
        return int(self.query_batch(np.asarray(x)[None])[0])

    def query_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        self.queries += len(X)
        return np.asarray(self._fn(X))


@dataclass
class AttackConfig:
    T: int = 40                      # boundary-update iterations
    init_draws: int = 200
    init_std: float | None = None    # None: 0.5 * (value range of x)
    init_escalations: int = 8
    normal_probes: int = 100
    probe_radius_coef: float = 1.0   # probe radius = coef * d / sqrt(n)
    hemisphere_coef: float = 0.3     # hemisphere radius r = coef * d
    max_tangent_retries: int = 4
    bisect_tol: float = 1e-4         # relative to the segment length

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        for name in ("probe_radius_coef", "hemisphere_coef", "bisect_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class AttackResult:
    x_adv: np.ndarray | None
    delta: float
    queries: int
    trace: list[float] = field(default_factory=list)
    success: bool = True
    adv_label: int | None = None


def boundary_bisect(oracle: DecisionOracle, x_clean: np.ndarray,
                    x_adv: np.ndarray, tol: float = 1e-4) -> np.ndarray:
    """Binary search along the segment from x_clean to x_adv; returns an
    adversarial-side point within tol * segment length of the boundary."""
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    clean_label = oracle.query(x_clean)
    if oracle.query(x_adv) == clean_label:
        raise ValueError("endpoints have the same label; nothing to bisect")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if oracle.query(x_clean + mid * (x_adv - x_clean)) == clean_label:
            lo = mid
        else:
            hi = mid
    return x_clean + hi * (x_adv - x_clean)


def init_adversarial(oracle: DecisionOracle, x: np.ndarray, y: int,
                     draws: int, std: float, rng: Rng,
                     escalations: int = 4) -> np.ndarray | None:
    """Gaussian-perturbation initialization: among draws whose label flipped,
    keep the one closest to x. Returns None if every escalation fails."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    for _ in range(escalations + 1):
        pts = x[None] + rng.gaussian((draws,) + x.shape, 0.0, std)
        labels = oracle.query_batch(pts)
        flipped = np.where(labels != y)[0]
        if len(flipped) > 0:
            dists = np.linalg.norm((pts[flipped] - x).reshape(len(flipped), -1),
                                   axis=1)
            return pts[flipped[np.argmin(dists)]]
        std *= 2.0
    return None


def estimate_normal(oracle: DecisionOracle, x_t: np.ndarray, B: int,
                    radius: float, rng: Rng, y: int,
                    max_retries: int = 4) -> np.ndarray | None:
    """Estimated unit normal pointing into the adversarial region: mean of
    sphere-probe directions weighted by the baseline-subtracted adversarial
    indicator. One-sided probe batches retry at half the radius."""
    x_t = np.asarray(x_t, dtype=np.float64)
    n = x_t.size
    for _ in range(max_retries + 1):
        dirs = rng.gaussian((B, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = x_t[None] + radius * dirs.reshape((B,) + x_t.shape)
        phi = np.where(oracle.query_batch(pts) != y, 1.0, -1.0)
        if B == 1:
            return (phi[0] * dirs[0]).reshape(x_t.shape)
        if np.all(phi == phi[0]):
            radius *= 0.5
            continue
        w = phi - phi.mean()
        g = (w[:, None] * dirs).sum(axis=0)
        nrm = np.linalg.norm(g)
        if nrm > 0:
            return (g / nrm).reshape(x_t.shape)
        radius *= 0.5
    return None


def tangent_point(x: np.ndarray, x_t: np.ndarray, normal: np.ndarray,
                  r: float, rng: Rng | None = None) -> tuple[np.ndarray, bool]:
    """Tangent point of the radius-r hemisphere at x_t (oriented by the
    normal) whose tangent line passes through x, solved in the plane of
    (x - x_t, normal).

    Returns (point, degenerate) where degenerate marks a normal parallel to
    x - x_t, in which case a random orthogonal direction is used.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    xt = np.asarray(x_t, dtype=np.float64).ravel()
    nrm = np.asarray(normal, dtype=np.float64).ravel()
    d = np.linalg.norm(x - xt)
    if r >= d:
        r = 0.5 * d
    e1 = (x - xt) / d
    w = nrm - (nrm @ e1) * e1
    wn = np.linalg.norm(w)
    degenerate = wn < 1e-12 * max(np.linalg.norm(nrm), 1e-300)
    if degenerate:
        if rng is None:
            rng = Rng(0)
        v = rng.gaussian((x.size,))
        v -= (v @ e1) * e1
        vn = np.linalg.norm(v)
        while vn < 1e-12:
            v = rng.gaussian((x.size,))
            v -= (v @ e1) * e1
            vn = np.linalg.norm(v)
        e2 = v / vn
    else:
        e2 = w / wn
    k = xt + (r * r / d) * e1 + r * np.sqrt(max(1.0 - r * r / (d * d), 0.0)) * e2
    return k.reshape(np.asarray(x_t).shape), degenerate


def tangent_attack(oracle: DecisionOracle, x: np.ndarray, y: int,
                   cfg: AttackConfig | None = None,
                   rng: Rng | None = None) -> AttackResult:
    """Decision-based attack on a correctly classified sample x with label y.

    Returns the boundary point after T updates (the best iterate, since the
    trace is non-increasing) and its distance. Initialization failure is
    reported with success=False rather than raised.
    """
    cfg = cfg or AttackConfig()
    rng = rng or Rng(0)
    x = np.asarray(x, dtype=np.float64)
    q0 = oracle.queries
    if oracle.query(x) != y:
        raise ValueError("sample is not correctly classified; attack undefined")

    std = cfg.init_std
    if std is None:
        spread = float(np.max(x) - np.min(x))
        std = 0.5 * spread if spread > 0 else 1.0
    x_start = init_adversarial(oracle, x, y, cfg.init_draws, std, rng,
                               cfg.init_escalations)
    if x_start is None:
        return AttackResult(x_adv=None, delta=float("inf"),
                            queries=oracle.queries - q0, success=False)

    x_t = boundary_bisect(oracle, x, x_start, cfg.bisect_tol)
    n = x.size
    trace = [float(np.linalg.norm(x_t - x))]
    for _ in range(cfg.T):
        d = float(np.linalg.norm(x_t - x))
        if d == 0.0:
            break
        normal = estimate_normal(oracle, x_t, cfg.normal_probes,
                                 cfg.probe_radius_coef * d / np.sqrt(n),
                                 rng, y)
        if normal is None:
            trace.append(trace[-1])
            continue
        r = cfg.hemisphere_coef * d
        updated = False
        for _ in range(cfg.max_tangent_retries + 1):
            k, _ = tangent_point(x, x_t, normal, r, rng)
            if oracle.query(k) != y:
                x_t = boundary_bisect(oracle, x, k, cfg.bisect_tol)
                updated = True
                break
            r *= 0.5
        trace.append(float(np.linalg.norm(x_t - x)) if updated else trace[-1])

    adv_label = oracle.query(x_t)
    return AttackResult(x_adv=x_t, delta=float(np.linalg.norm(x_t - x)),
                        queries=oracle.queries - q0, trace=trace,
                        success=adv_label != y, adv_label=int(adv_label))


def _direction_cover(n: int, n_dirs: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if n == 3:
        # Fibonacci sphere
        i = np.arange(n_dirs) + 0.5
        phi = np.arccos(1.0 - 2.0 * i / n_dirs)
        theta = np.pi * (1.0 + np.sqrt(5.0)) * i
        return np.stack([np.cos(theta) * np.sin(phi),
                         np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    raise ValueError(f"dense direction cover needs input dim <= 3, got {n}")


def brute_force_distance(oracle: DecisionOracle, x: np.ndarray,
                         n_dirs: int = 720, tol: float = 1e-6,
                         r_max: float = 10.0, n_scan: int = 128) -> float:
    """Upper bound on the adversarial distance by dense ray cover: along
    each direction, scan for a label flip within r_max and bisect the first
    flip bracket; the minimum over directions tightens as n_dirs grows.
    Returns inf when no adversarial point is found within r_max."""
    x = np.asarray(x, dtype=np.float64)
    y = oracle.query(x)
    dirs = _direction_cover(x.size, n_dirs)
    radii = r_max * (np.arange(1, n_scan + 1) / n_scan)
    pts = (x.ravel()[None, None] + dirs[:, None] * radii[None, :, None])
    labels = oracle.query_batch(
        pts.reshape(-1, *x.shape)).reshape(len(dirs), n_scan)
    flips = labels != y
    hit = flips.any(axis=1)
    if not hit.any():
        return float("inf")
    first = np.argmax(flips[hit], axis=1)
    lo = np.where(first > 0, radii[first - 1], 0.0)
    hi = radii[first]
    d_hit = dirs[hit]
    iters = int(np.ceil(np.log2(1.0 / tol)))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pts = x.ravel()[None] + d_hit * mid[:, None]
        mid_labels = oracle.query_batch(pts.reshape(-1, *x.shape))
        adv = mid_labels != y
        hi = np.where(adv, mid, hi)
        lo = np.where(adv, lo, mid)
    return float(np.min(hi))


def robustness_report(distances, thresholds) -> dict:
    """Mean, quartiles, and the proportion of samples whose adversarial
    distance exceeds each threshold."""
    d = np.asarray(list(distances), dtype=np.float64)
    if d.size == 0:
        raise ValueError("no distances given")
    qs = np.percentile(d, [25, 50, 75])
    return {
        "count": int(d.size),
        "mean": float(np.mean(d)),
        "q25": float(qs[0]),
        "median": float(qs[1]),
        "q75": float(qs[2]),
        "proportions": {float(t): float(np.mean(d >= t)) for t in thresholds},
    }
