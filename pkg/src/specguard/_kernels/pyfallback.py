"""Pure-numpy implementations of the hot kernels.

These are the reference semantics; the Cython module ``_cykernels`` must
agree with them to floating-point tolerance. Conventions:

* images are (channels, height, width), float64, C-contiguous
* convolution is periodic (circular) cross-correlation:
  out[o, y, x] = sum_{i,p,q} kernel[o, i, p, q] * img[i, (s*y+p) % h, (s*x+q) % w]
* output height/width is floor((n - 1) / s) + 1
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def conv_out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def conv2d_periodic(img: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Periodic 2D cross-correlation of a (c_in, h, w) image with a
    (c_out, c_in, kh, kw) kernel. Returns (c_out, h_out, w_out)."""
    c_in, h, w = img.shape
    c_out, c_in_k, kh, kw = kernel.shape
    if c_in_k != c_in:
        raise ValueError(f"channel mismatch: image has {c_in}, kernel expects {c_in_k}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    h_out = conv_out_size(h, stride)
    w_out = conv_out_size(w, stride)
    out = np.zeros((c_out, h_out, w_out))
    for p in range(kh):
        for q in range(kw):
            shifted = np.roll(img, (-p, -q), axis=(1, 2))[:, ::stride, ::stride]
            out += np.einsum("oi,iyx->oyx", kernel[:, :, p, q], shifted)
    return out


def conv2d_periodic_adjoint(grad_out: np.ndarray, kernel: np.ndarray, stride: int,
                            h: int, w: int) -> np.ndarray:
    """Adjoint of ``conv2d_periodic`` with respect to the image: maps a
    (c_out, h_out, w_out) cotangent back to a (c_in, h, w) image."""
    c_out, c_in, kh, kw = kernel.shape
    h_out, w_out = grad_out.shape[1:]
    grad_img = np.zeros((c_in, h, w))
    up = np.zeros((c_in, h, w))
    for p in range(kh):
        for q in range(kw):
            t = np.einsum("oi,oyx->iyx", kernel[:, :, p, q], grad_out)
            up[:] = 0.0
            up[:, : stride * h_out : stride, : stride * w_out : stride] = t
            grad_img += np.roll(up, (p, q), axis=(1, 2))
    return grad_img


def conv_kernel_corr(u: np.ndarray, v: np.ndarray, kh: int, kw: int,
                     stride: int) -> np.ndarray:
    """Correlation of an output-space image u (c_out, h_out, w_out) against
    an input-space image v (c_in, h, w), accumulated per kernel tap:

    out[o, i, p, q] = sum_{y,x} u[o, y, x] * v[i, (s*y+p) % h, (s*x+q) % w]

    This is the derivative of ``sum(u * conv2d_periodic(v, K))`` w.r.t. K.
    """
    c_out = u.shape[0]
    c_in, h, w = v.shape
    out = np.empty((c_out, c_in, kh, kw))
    for p in range(kh):
        for q in range(kw):
            shifted = np.roll(v, (-p, -q), axis=(1, 2))[:, ::stride, ::stride]
            out[:, :, p, q] = np.einsum("oyx,iyx->oi", u, shifted)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of exact GELU: Phi(x) + x * phi(x)."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf
