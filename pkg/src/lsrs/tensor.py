"""Dense tensor helpers: 2-D FFT over the trailing axes and batched complex solves.

Tensors are plain numpy arrays. Real activations use float64 and spectral data
complex128; batches are laid out as (batch, channels, n, n).
"""

import numpy as np
import scipy.fft

PIVOT_TOL = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def _check_nonempty(x):
    x = np.asarray(x)
    if x.ndim < 2 or x.size == 0:
        raise ValueError(f"fft2 needs a non-empty array with >= 2 axes, got shape {x.shape}")
    return x


def fft2(x):
    """Unnormalized forward DFT along the last two axes."""
    x = _check_nonempty(x)
    return scipy.fft.fft2(x, axes=(-2, -1))


def ifft2(x):
    """Inverse of :func:`fft2`; carries the 1/n^2 factor."""
    x = _check_nonempty(x)
    return scipy.fft.ifft2(x, axes=(-2, -1))


def rfft2(x):
    """Forward DFT of real data, keeping the n // 2 + 1 non-redundant last-axis bins."""
    x = _check_nonempty(x)
    return scipy.fft.rfft2(x, axes=(-2, -1))


def irfft2(x, n):
    """Inverse of :func:`rfft2` for an ``n x n`` real signal."""
    x = _check_nonempty(x)
    return scipy.fft.irfft2(x, s=(n, n), axes=(-2, -1))


def complex_solve(a, b):
    """Solve ``a @ y = b`` for stacks of square complex matrices.

    Gaussian elimination with partial pivoting, vectorized over all leading
    axes of ``a``. ``b`` may be a matrix (..., m, k) or a vector (..., m).
    Raises SingularMatrixError when a pivot falls below ``PIVOT_TOL``.
    """
    a = np.array(a, dtype=np.complex128)
    b = np.array(b, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    vector = b.ndim == a.ndim - 1
    if vector:
        b = b[..., None]
    if b.shape[:-1] != a.shape[:-1]:
        raise ValueError(f"shape mismatch: a {a.shape} vs b {b.shape}")

    m = a.shape[-1]
    lead = a.shape[:-2]
    a = a.reshape(-1, m, m)
    b = b.reshape(-1, m, b.shape[-1])
    rows = np.arange(a.shape[0])
    for col in range(m):
        piv = col + np.argmax(np.abs(a[:, col:, col]), axis=1)
        if np.any(np.abs(a[rows, piv, col]) < PIVOT_TOL):
            raise SingularMatrixError("singular matrix: pivot magnitude below 1e-12")
        # swap rows col <-> piv
        a_col, a_piv = a[rows, col].copy(), a[rows, piv].copy()
        a[rows, col], a[rows, piv] = a_piv, a_col
        b_col, b_piv = b[rows, col].copy(), b[rows, piv].copy()
        b[rows, col], b[rows, piv] = b_piv, b_col
        if col + 1 < m:
            factors = a[:, col + 1:, col] / a[:, col, col][:, None]
            a[:, col + 1:, col:] -= factors[:, :, None] * a[:, col, col:][:, None, :]
            b[:, col + 1:, :] -= factors[:, :, None] * b[:, col, :][:, None, :]
    y = np.empty_like(b)
    for row in range(m - 1, -1, -1):
        acc = b[:, row, :]
        if row + 1 < m:
            acc = acc - np.einsum("bj,bjk->bk", a[:, row, row + 1:], y[:, row + 1:, :])
        y[:, row, :] = acc / a[:, row, row][:, None]
    y = y.reshape(*lead, m, -1)
    return y[..., 0] if vector else y


def conj_t(m):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(m, -1, -2))
