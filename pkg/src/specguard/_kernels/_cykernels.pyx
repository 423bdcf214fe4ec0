# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython implementations of the hot kernels.

Semantics must match ``specguard._kernels.pyfallback`` exactly; see that
module for the conventions (periodic cross-correlation, C-order images).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport erf, exp, sqrt

cnp.import_array()

cdef double INV_SQRT2 = 1.0 / sqrt(2.0)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.14159265358979323846)


def conv_out_size(int n, int stride):
    return (n - 1) // stride + 1


def conv2d_periodic(cnp.ndarray[cnp.float64_t, ndim=3] img,
                    cnp.ndarray[cnp.float64_t, ndim=4] kernel,
                    int stride=1):
    cdef int c_in = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef int c_out = kernel.shape[0], c_in_k = kernel.shape[1]
    cdef int kh = kernel.shape[2], kw = kernel.shape[3]
    if c_in_k != c_in:
        raise ValueError(f"channel mismatch: image has {c_in}, kernel expects {c_in_k}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    cdef int h_out = (h - 1) // stride + 1
    cdef int w_out = (w - 1) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((c_out, h_out, w_out))
    cdef int o, i, y, x, p, q
    cdef double acc
    for o in range(c_out):
        for y in range(h_out):
            for x in range(w_out):
                acc = 0.0
                for i in range(c_in):
                    for p in range(kh):
                        for q in range(kw):
                            acc += kernel[o, i, p, q] * img[i, (stride * y + p) % h,
                                                            (stride * x + q) % w]
                out[o, y, x] = acc
    return out


def conv2d_periodic_adjoint(cnp.ndarray[cnp.float64_t, ndim=3] grad_out,
                            cnp.ndarray[cnp.float64_t, ndim=4] kernel,
                            int stride, int h, int w):
    cdef int c_out = kernel.shape[0], c_in = kernel.shape[1]
    cdef int kh = kernel.shape[2], kw = kernel.shape[3]
    cdef int h_out = grad_out.shape[1], w_out = grad_out.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] grad_img = np.zeros((c_in, h, w))
    cdef int o, i, y, x, p, q
    cdef double g
    for o in range(c_out):
        for y in range(h_out):
            for x in range(w_out):
                g = grad_out[o, y, x]
                for i in range(c_in):
                    for p in range(kh):
                        for q in range(kw):
                            grad_img[i, (stride * y + p) % h,
                                     (stride * x + q) % w] += g * kernel[o, i, p, q]
    return grad_img


def conv_kernel_corr(cnp.ndarray[cnp.float64_t, ndim=3] u,
                     cnp.ndarray[cnp.float64_t, ndim=3] v,
                     int kh, int kw, int stride):
    cdef int c_out = u.shape[0], h_out = u.shape[1], w_out = u.shape[2]
    cdef int c_in = v.shape[0], h = v.shape[1], w = v.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((c_out, c_in, kh, kw))
    cdef int o, i, y, x, p, q
    cdef double uo
    for o in range(c_out):
        for y in range(h_out):
            for x in range(w_out):
                uo = u[o, y, x]
                for i in range(c_in):
                    for p in range(kh):
                        for q in range(kw):
                            out[o, i, p, q] += uo * v[i, (stride * y + p) % h,
                                                      (stride * x + q) % w]
    return out


def gelu(cnp.ndarray x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = 0.5 * flat[i] * (1.0 + erf(flat[i] * INV_SQRT2))
    return out.reshape(np.asarray(x).shape)


def gelu_grad(cnp.ndarray x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef double xi
    for i in range(n):
        xi = flat[i]
        out[i] = 0.5 * (1.0 + erf(xi * INV_SQRT2)) + xi * INV_SQRT_2PI * exp(-0.5 * xi * xi)
    return out.reshape(np.asarray(x).shape)
