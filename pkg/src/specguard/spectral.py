"""Top singular values of layer operators and their analytic gradients.

Three routes to sigma_max^2 of a layer:

* ``power_iter_sigma2``: alternating power iteration on any linear operator
  exposing apply/adjoint, warm-startable across parameter updates;
* ``conv_top_sigma2``: exact value for a periodic strided convolution via
  the FFT of stride-phase slices of the zero-padded kernel;
* ``conv_linearize``: the explicit (small) matrix of the convolution,
  used as an independent oracle for the other two.

Gradients: d sigma^2 / dW = 2 sigma u v^T for dense weights; for a
convolution the same outer product is transported to kernel coordinates
by correlating the left vector against shifted right-vector patches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import Rng, svd_top

# matrices at most this many entries may be materialized by conv_linearize
LINEARIZE_MAX_ENTRIES = 10**6


@dataclass
class SingularTriple:
    """Cached estimate of the top singular triple of a layer operator.

    ``u`` and ``v`` are unit vectors in the operator's output/input spaces
    (images for convolutions); ``age`` counts parameter updates since the
    last power-iteration refresh; ``degenerate`` marks a (near-)tied top
    singular value, where the gradient is a subgradient choice.
    """

    sigma2: float
    u: np.ndarray
    v: np.ndarray
    age: int = 0
    degenerate: bool = False

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))


@dataclass
class ConvSpec:
    """Shape bookkeeping for a periodic strided convolution."""

    c_out: int
    c_in: int
    k: int
    stride: int
    h: int
    w: int

    def __post_init__(self):
        if self.k > self.h or self.k > self.w:
            raise ValueError(f"kernel size {self.k} exceeds input {self.h}x{self.w}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def h_out(self) -> int:
        return (self.h - 1) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w - 1) // self.stride + 1


class MatrixOperator:
    """Dense matrix as a linear operator."""

    def __init__(self, M: np.ndarray):
        self.M = np.asarray(M, dtype=np.float64)

    @property
    def in_shape(self):
        return (self.M.shape[1],)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.M @ v

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        return self.M.T @ u


class ConvOperator:
    """Periodic strided convolution as a linear operator on images.

    Right vectors live in (c_in, h, w), left vectors in (c_out, h_out, w_out);
    the adjoint never materializes the linearized matrix.
    """

    def __init__(self, kernel: np.ndarray, h: int, w: int, stride: int = 1):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 4:
            raise ValueError(f"kernel must be 4D (c_out,c_in,k,k), got {kernel.shape}")
        self.kernel = kernel
        self.spec = ConvSpec(kernel.shape[0], kernel.shape[1], max(kernel.shape[2:]),
                             stride, h, w)
        self.h, self.w, self.stride = h, w, stride

    @property
    def in_shape(self):
        return (self.spec.c_in, self.h, self.w)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return _kernels.conv2d_periodic(np.ascontiguousarray(v), self.kernel, self.stride)

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        return _kernels.conv2d_periodic_adjoint(np.ascontiguousarray(u), self.kernel,
                                                self.stride, self.h, self.w)


def _norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a.ravel()))


def power_iter_sigma2(op, v0: np.ndarray | None = None, iters: int = 1,
                      rng: Rng | None = None) -> SingularTriple:
    """Estimate the top singular value squared by alternating power iteration.

    Each iteration applies the operator and its adjoint with intermediate
    normalization; the returned value is ||op(v_N)||^2. Warm-start by
    passing the previous triple's right vector as ``v0``; a zero operator
    yields sigma2 = 0.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if v0 is None:
        if rng is None:
            raise ValueError("pass v0 or an rng for the random start")
        v = rng.gaussian(op.in_shape)
    else:
        v = np.array(v0, dtype=np.float64)
    nv = _norm(v)
    if nv == 0.0:
        raise ValueError("v0 must be nonzero")
    v = v / nv

    u = None
    for _ in range(iters):
        u = op.apply(v)
        nu = _norm(u)
        if nu == 0.0:
            # operator annihilates v (e.g. the zero operator)
            return SingularTriple(sigma2=0.0, u=np.zeros_like(u), v=v)
        u = u / nu
        v = op.adjoint(u)
        nv = _norm(v)
        if nv == 0.0:
            return SingularTriple(sigma2=0.0, u=u, v=np.zeros_like(v))
        v = v / nv

    p = op.apply(v)
    sigma2 = float(np.vdot(p.ravel(), p.ravel()).real)
    np_ = _norm(p)
    u_final = p / np_ if np_ > 0 else u
    return SingularTriple(sigma2=sigma2, u=u_final, v=v)


def _stride_phase_fft(kernel: np.ndarray, h: int, w: int, stride: int) -> np.ndarray:
    """FFT of the stride-phase slices of the zero-padded kernel.

    Returns P with shape (h//s, w//s, c_out, c_in * s^2): one small complex
    matrix per 2D frequency bin. The union of the singular values of these
    matrices is the singular spectrum of the linearized convolution.
    """
    c_out, c_in, kh, kw = kernel.shape
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if (h % stride) or (w % stride):
        raise ValueError(f"input {h}x{w} must be divisible by stride {stride}")
    padded = np.zeros((c_out, c_in, h, w))
    padded[:, :, :kh, :kw] = kernel
    sh, sw = h // stride, w // stride
    slices = np.empty((c_out, c_in, stride * stride, sh, sw))
    for i in range(stride):
        for j in range(stride):
            slices[:, :, i * stride + j] = padded[:, :, i::stride, j::stride]
    transforms = np.fft.fft2(slices, axes=(-2, -1))
    transforms = transforms.reshape(c_out, c_in * stride * stride, sh, sw)
    return transforms.transpose(2, 3, 0, 1)


def conv_top_sigma2(kernel: np.ndarray, h: int, w: int, stride: int = 1,
                    degeneracy_rtol: float = 1e-10):
    """Exact sigma_max^2 of the linearized periodic convolution.

    Per frequency bin the smaller of P P* / P* P is diagonalized and the
    maximum eigenvalue over all bins is returned. ``degeneracy_rtol`` sets
    the relative gap under which the top value is flagged as tied; call
    ``conv_top_sigma2_full`` for the flag.
    """
    sigma2, _ = conv_top_sigma2_full(kernel, h, w, stride, degeneracy_rtol)
    return sigma2


def conv_top_sigma2_full(kernel: np.ndarray, h: int, w: int, stride: int = 1,
                         degeneracy_rtol: float = 1e-10) -> tuple[float, bool]:
    """As ``conv_top_sigma2``, also reporting near-degeneracy of the top value."""
    kernel = np.asarray(kernel, dtype=np.float64)
    P = _stride_phase_fft(kernel, h, w, stride)
    rows, cols = P.shape[2], P.shape[3]
    if cols > rows:
        gram = np.einsum("...ij,...kj->...ik", P.conj(), P)
    else:
        gram = np.einsum("...ji,...jk->...ik", P.conj(), P)
    eigvals = np.linalg.eigvalsh(gram)  # ascending per bin
    flat = np.sort(eigvals.reshape(-1))
    top = float(flat[-1])
    degenerate = False
    if flat.size > 1 and top > 0:
        degenerate = (top - float(flat[-2])) < degeneracy_rtol * top
    return max(top, 0.0), degenerate


def conv_linearize(kernel: np.ndarray, h: int, w: int, stride: int = 1) -> np.ndarray:
    """Materialize the matrix of the periodic convolution w.r.t. row-major
    vectorization: Vec(conv(X)) = M @ Vec(X). Small instances only."""
    kernel = np.asarray(kernel, dtype=np.float64)
    c_out, c_in, kh, kw = kernel.shape
    spec = ConvSpec(c_out, c_in, max(kh, kw), stride, h, w)
    n_in = c_in * h * w
    n_rows = c_out * spec.h_out * spec.w_out
    if n_rows * n_in > LINEARIZE_MAX_ENTRIES:
        raise ValueError(
            f"linearized matrix {n_rows}x{n_in} exceeds the size cap "
            f"({LINEARIZE_MAX_ENTRIES} entries)")
    M = np.empty((n_rows, n_in))
    basis = np.zeros((c_in, h, w))
    col = 0
    for ci in range(c_in):
        for y in range(h):
            for x in range(w):
                basis[ci, y, x] = 1.0
                M[:, col] = _kernels.conv2d_periodic(basis, kernel, stride).ravel()
                basis[ci, y, x] = 0.0
                col += 1
    return M


def sigma2_grad(W: np.ndarray, triple: SingularTriple) -> np.ndarray:
    """Analytic gradient of sigma_max^2 at a dense weight: 2 sigma u v^T."""
    W = np.asarray(W)
    grad = 2.0 * triple.sigma * np.outer(triple.u, triple.v)
    if grad.shape != W.shape:
        raise ValueError(f"triple vectors {grad.shape} do not match W {W.shape}")
    return grad


def conv_sigma2_kernel_grad(kernel_shape: tuple, triple: SingularTriple,
                            stride: int) -> np.ndarray:
    """Gradient of sigma_max^2 w.r.t. the convolution kernel.

    With converged unit vectors, sigma = <u, conv(v)>, so the derivative per
    kernel tap is the correlation of u against the matching shifted patch of
    v, scaled by 2 sigma.
    """
    c_out, c_in, kh, kw = kernel_shape
    u = np.ascontiguousarray(triple.u)
    v = np.ascontiguousarray(triple.v)
    corr = _kernels.conv_kernel_corr(u, v, kh, kw, stride)
    return 2.0 * triple.sigma * corr


def dense_top_triple(W: np.ndarray, check_degenerate: bool = False) -> SingularTriple:
    """Exact top triple of a dense matrix (SVD), optionally flagging ties."""
    sigma, u, v = svd_top(W)
    triple = SingularTriple(sigma2=sigma * sigma, u=u, v=v)
    if check_degenerate and min(W.shape) > 1:
        s = np.linalg.svd(np.asarray(W, dtype=np.float64), compute_uv=False)
        if s[0] > 0 and (s[0] - s[1]) < 1e-10 * s[0]:
            triple.degenerate = True
    return triple
