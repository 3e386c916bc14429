"""Dense complex matrix / 3-way tensor algebra.

Index conventions (1-based in formulas, 0-based in code):

* ``khatri_rao(A, B)[(i-1)*J + j, k] = A[i, k] * B[j, k]``, i.e. column ``k``
  is ``kron(A[:, k], B[:, k])``.
* ``unfold(T, 1)[i1, (i3-1)*I2 + i2] = T[i1, i2, i3]`` and cyclically for
  modes 2 and 3::

      unfold(T, 2)[i2, (i1-1)*I3 + i3] = T[i1, i2, i3]
      unfold(T, 3)[i3, (i2-1)*I1 + i1] = T[i1, i2, i3]

  so that ``unfold(cp_reconstruct(F1, F2, F3), n) == F_n @ khatri_rao(F_b, F_a).T``
  where ``(a, b)`` are the two other modes taken cyclically after ``n``.
* ``vec_row`` stacks rows: ``vec_row(M)[(i-1)*q + j] = M[i, j]``.

Matrices and tensors are plain ``numpy.ndarray`` objects of dtype
``complex128``; storage is C (row-major) order throughout.

Correspondence with slice-wise ALS notation: with ``T = sum_k a_k o b_k o c_k``,
the frontal slice ``T[:, :, i3] = A diag(C[i3, :]) B.T``. Stacking those slices
side by side gives ``unfold(T, 1) = A (C kr B).T``; the transposed unfoldings
``[T]^T_(n)`` used in slice notation are the transposes of ours with the
Khatri-Rao operands ordered as above.
"""

import numpy as np

__all__ = [
    "DimensionError",
    "as_complex_matrix",
    "as_complex_tensor3",
    "khatri_rao",
    "kron",
    "cp_reconstruct",
    "unfold",
    "fold",
    "vec_row",
    "ivec_row",
]

# mode -> (next1, next2) in cyclic order, 0-based
_CYCLIC = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains NaN or Inf")


def as_complex_matrix(M, name="matrix"):
    """Validate and convert ``M`` to a finite 2-D ``complex128`` array.

    1-D input is promoted to a single column.
    """
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {M.shape}")
    _check_finite(M, name)
    return M


def as_complex_tensor3(T, name="tensor"):
    """Validate and convert ``T`` to a finite 3-way ``complex128`` array."""
    T = np.asarray(T, dtype=np.complex128)
    if T.ndim != 3:
        raise DimensionError(f"{name} must be 3-way, got shape {T.shape}")
    if min(T.shape) < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {T.shape}")
    _check_finite(T, name)
    return T


def _mode_index(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def khatri_rao(A, B):
    """Column-wise Kronecker product of ``A`` (I x K) and ``B`` (J x K).

    Returns
    -------
    ndarray, shape (I*J, K)
        Row ``(i-1)*J + j`` holds ``A[i, :] * B[j, :]``.
    """
    A = as_complex_matrix(A, "A")
    B = as_complex_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"khatri_rao needs equal column counts, got {A.shape[1]} and {B.shape[1]}"
        )
    I, K = A.shape
    J = B.shape[0]
    return (A[:, None, :] * B[None, :, :]).reshape(I * J, K)


def kron(a, b):
    """Kronecker product of two vectors (same ordering as :func:`khatri_rao`)."""
    return np.kron(np.asarray(a, dtype=np.complex128).ravel(),
                   np.asarray(b, dtype=np.complex128).ravel())


def cp_reconstruct(F1, F2, F3):
    """Tensor ``T[i1, i2, i3] = sum_k F1[i1, k] F2[i2, k] F3[i3, k]``."""
    F1 = as_complex_matrix(F1, "F1")
    F2 = as_complex_matrix(F2, "F2")
    F3 = as_complex_matrix(F3, "F3")
    if not F1.shape[1] == F2.shape[1] == F3.shape[1]:
        raise DimensionError(
            "factor matrices must share a column count, got "
            f"{F1.shape[1]}, {F2.shape[1]}, {F3.shape[1]}"
        )
    return np.einsum("ak,bk,ck->abc", F1, F2, F3)


def unfold(T, mode):
    """Mode-``mode`` unfolding of a 3-way tensor (cyclic convention).

    Parameters
    ----------
    T : array_like, shape (I1, I2, I3)
    mode : {1, 2, 3}

    Returns
    -------
    ndarray, shape (I_mode, I_next1 * I_next2)
        Column index is ``i_next2 * I_next1 + i_next1`` (0-based), so the
        ``next1`` index runs fastest.
    """
    n = _mode_index(mode)
    T = as_complex_tensor3(T)
    next1, next2 = _CYCLIC[n]
    return np.ascontiguousarray(
        np.transpose(T, (n, next2, next1)).reshape(T.shape[n], -1)
    )


def fold(M, mode, dims):
    """Inverse of :func:`unfold`: rebuild a tensor of shape ``dims``."""
    n = _mode_index(mode)
    M = as_complex_matrix(M)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise DimensionError(f"dims must be three positive counts, got {dims}")
    next1, next2 = _CYCLIC[n]
    expected = (dims[n], dims[next1] * dims[next2])
    if M.shape != expected:
        raise DimensionError(
            f"matrix shape {M.shape} does not match mode-{mode} unfolding {expected} of {dims}"
        )
    perm = (n, next2, next1)
    T = M.reshape(dims[n], dims[next2], dims[next1])
    return np.ascontiguousarray(np.transpose(T, np.argsort(perm)))


def vec_row(M):
    """Row-wise vectorization: concatenate the rows of ``M``."""
    return as_complex_matrix(M).reshape(-1).copy()


def ivec_row(v, p, q):
    """Inverse row vectorization: ``out[i, j] = v[i*q + j]`` (0-based)."""
    v = np.asarray(v, dtype=np.complex128).ravel()
    if v.size != p * q:
        raise DimensionError(f"cannot reshape vector of length {v.size} to {p}x{q}")
    _check_finite(v, "vector")
    return v.reshape(p, q).copy()
