"""Rank-K CP decomposition of complex 3-way tensors by alternating least squares."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .tensor_core import (
    DimensionError,
    as_complex_matrix,
    as_complex_tensor3,
    cp_reconstruct,
    khatri_rao,
    unfold,
)

__all__ = [
    "NumericalError",
    "AlsOptions",
    "AlsReport",
    "CpFactors",
    "cp_als",
    "residual",
    "kruskal_generic",
    "align_factors",
    "column_congruence",
    "CPALS",
]

PINV_RTOL = 1e-12
# stop once the fit is exact to working precision
_EXACT_RESIDUAL = 1e-13


class NumericalError(FloatingPointError):
    """ALS produced a non-finite residual."""


@dataclass(frozen=True)
class AlsOptions:
    rank: int
    max_iters: int = 500
    rel_tol: float = 1e-8
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")


@dataclass
class AlsReport:
    """Diagnostics of the selected ALS run.

    ``residual_history[i]`` is the relative residual after sweep ``i + 1``.
    ``rank_deficient`` is set when a Khatri-Rao operand had singular values
    truncated by the pseudo-inverse. ``kruskal_ok`` is the generic-k-rank
    uniqueness check for the tensor shape and rank.
    """

    iterations: int
    final_residual: float
    converged: bool
    restart_index: int
    rank_deficient: bool = False
    kruskal_ok: bool = True
    residual_history: list = field(default_factory=list, repr=False)


@dataclass
class CpFactors:
    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray

    def __post_init__(self):
        self.F1 = as_complex_matrix(self.F1, "F1")
        self.F2 = as_complex_matrix(self.F2, "F2")
        self.F3 = as_complex_matrix(self.F3, "F3")
        if not self.F1.shape[1] == self.F2.shape[1] == self.F3.shape[1]:
            raise DimensionError("CP factors must share a column count")

    @property
    def rank(self):
        return self.F1.shape[1]

    def __iter__(self):
        return iter((self.F1, self.F2, self.F3))

    def __getitem__(self, i):
        return (self.F1, self.F2, self.F3)[i]

    def reconstruct(self):
        return cp_reconstruct(self.F1, self.F2, self.F3)


def kruskal_generic(dims, rank):
    """Kruskal's sufficient condition assuming every factor has full k-rank.

    Rank-1 decompositions are always essentially unique, although the
    inequality itself only covers rank >= 2.
    """
    if rank == 1:
        return True
    return 2 * rank + 2 <= sum(min(d, rank) for d in dims)


def residual(T, F):
    """Relative Frobenius error ``|T - [[F]]| / |T|`` (absolute if ``T`` is zero)."""
    T = as_complex_tensor3(T)
    F = F if isinstance(F, CpFactors) else CpFactors(*F)
    R = F.reconstruct()
    if R.shape != T.shape:
        raise DimensionError(f"factors reconstruct to {R.shape}, tensor is {T.shape}")
    err = np.linalg.norm(T - R)
    norm = np.linalg.norm(T)
    return float(err / norm) if norm > 0 else float(err)


def _pinv_transpose(KR):
    """``pinv(KR.T)`` with singular values below ``PINV_RTOL * s_max`` dropped."""
    U, s, Vh = np.linalg.svd(KR, full_matrices=False)
    keep = s > PINV_RTOL * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    # KR = U S Vh  =>  pinv(KR.T) = conj(U) S^-1 conj(Vh)
    P = (U[:, keep].conj() / s[keep]) @ Vh[keep].conj()
    return P, not keep.all()


def _init_factors(dims, rank, rng):
    return [
        (rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))) / np.sqrt(2)
        for d in dims
    ]


# Gram path is used while cond(KR) < 1e4; beyond that the squared
# conditioning of the normal equations costs too many digits.
_GRAM_MIN_EIG_RATIO = 1e-8


def _ls_update(mttkrp, gram, X_n, F_b, F_a):
    """Solve ``min |X_n - F khatri_rao(F_b, F_a).T|`` for ``F``.

    ``mttkrp = X_n @ conj(KR)`` and ``gram = KR^H KR`` are supplied so the
    Khatri-Rao product is only formed on the ill-conditioned fallback.
    """
    if not (np.all(np.isfinite(mttkrp)) and np.all(np.isfinite(gram))):
        raise NumericalError("non-finite values in ALS update")
    w = np.linalg.eigvalsh(gram)
    if w[0] > _GRAM_MIN_EIG_RATIO * w[-1] > 0:
        # F conj(G) = mttkrp, conj(G) = G.T
        return np.linalg.solve(gram, mttkrp.T).T, False
    P, trunc = _pinv_transpose(khatri_rao(F_b, F_a))
    return X_n @ P, trunc


# Below this relative residual the expanded-norm formula loses too many
# digits to cancellation and the residual is formed explicitly.
_EXPANDED_RESIDUAL_FLOOR = 1e-2


def _single_run(T, unfoldings, dims, opts, rng, norm_T):
    F = _init_factors(dims, opts.rank, rng)
    history = []
    deficient = False
    converged = False
    X1, X2, X3 = unfoldings
    buf = np.empty_like(X3)
    norm2 = norm_T ** 2
    for it in range(opts.max_iters):
        F1, F2, F3 = F
        # T x_3 conj(F3) serves both the mode-1 and mode-2 updates (F3 is
        # unchanged between them)
        W = T @ F3.conj()
        H3 = F3.conj().T @ F3
        F1, t1 = _ls_update(np.einsum("ijr,jr->ir", W, F2.conj()),
                            (F2.conj().T @ F2) * H3, X1, F3, F2)
        F2, t2 = _ls_update(np.einsum("ijr,ir->jr", W, F1.conj()),
                            H3 * (F1.conj().T @ F1), X2, F1, F3)
        KR = khatri_rao(F2, F1)
        M3 = X3 @ KR.conj()
        G3 = (F1.conj().T @ F1) * (F2.conj().T @ F2)
        F3, t3 = _ls_update(M3, G3, X3, F2, F1)
        deficient |= t1 or t2 or t3

        # |X - F B^T|^2 = |X|^2 - 2 Re<F, X conj(B)> + <F^H F, B^H B>
        err2 = (norm2 - 2 * np.vdot(F3, M3).real
                + np.vdot(F3.conj().T @ F3, G3.conj()).real)
        if err2 < (_EXPANDED_RESIDUAL_FLOOR * norm_T) ** 2:
            np.matmul(F3, KR.T, out=buf)
            np.subtract(X3, buf, out=buf)
            err2 = np.vdot(buf, buf).real
        err = np.sqrt(max(err2, 0.0))
        res = err / norm_T if norm_T > 0 else err
        if not np.isfinite(res):
            raise NumericalError(f"non-finite residual at sweep {it + 1}")

        # keep modes 1 and 2 unit-norm; scale moves to mode 3
        for X in (F1, F2):
            norms = np.linalg.norm(X, axis=0)
            norms[norms == 0] = 1.0
            X /= norms
            F3 = F3 * norms
        F = [F1, F2, F3]
        history.append(float(res))
        if res < _EXACT_RESIDUAL:
            converged = True
            break
        if it > 0:
            prev = history[-2]
            if abs(prev - res) < opts.rel_tol * max(prev, np.finfo(float).tiny):
                converged = True
                break
    return F, history, converged, deficient


def cp_als(T, opts):
    """Fit ``T ~ sum_k F1[:, k] o F2[:, k] o F3[:, k]`` by trilinear ALS.

    Each sweep updates the factors in the order 1, 2, 3 with
    ``F_n <- unfold(T, n) @ pinv(khatri_rao(F_b, F_a).T)``, where ``(a, b)``
    are the two other modes in cyclic order. The update is computed from the
    normal equations (Hadamard product of factor Grams) when they are well
    conditioned, and from a truncated SVD of the Khatri-Rao product otherwise.
    Every restart starts from i.i.d. complex Gaussian factors drawn from
    ``default_rng([opts.seed, restart])``; the run with the smallest final
    residual is returned (ties go to the lower restart index).

    Parameters
    ----------
    T : array_like, shape (I1, I2, I3)
    opts : AlsOptions or int
        An int is taken as the rank with default options.

    Returns
    -------
    factors : CpFactors
    report : AlsReport

    Raises
    ------
    NumericalError
        If the residual becomes NaN or Inf.
    """
    if not isinstance(opts, AlsOptions):
        opts = AlsOptions(rank=int(opts))
    T = as_complex_tensor3(T)
    dims = T.shape
    limit = min(dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1])
    if opts.rank > limit:
        raise ValueError(f"rank {opts.rank} exceeds the smallest unfolding width {limit}")
    unfoldings = [unfold(T, m) for m in (1, 2, 3)]
    norm_T = np.linalg.norm(T)

    best = None
    for r in range(opts.restarts):
        rng = np.random.default_rng([opts.seed, r])
        F, history, converged, deficient = _single_run(T, unfoldings, dims, opts, rng, norm_T)
        if best is None or history[-1] < best[1][-1]:
            best = (F, history, converged, deficient, r)

    F, history, converged, deficient, r = best
    report = AlsReport(
        iterations=len(history),
        final_residual=history[-1],
        converged=converged,
        restart_index=r,
        rank_deficient=deficient,
        kruskal_ok=kruskal_generic(dims, opts.rank),
        residual_history=history,
    )
    return CpFactors(*F), report


def _unit_columns(X):
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    return X / norms


def _congruence_matrix(est, ref):
    C = np.ones((ref.rank, est.rank))
    for E, R in zip(est, ref):
        C *= np.abs(_unit_columns(R).conj().T @ _unit_columns(E))
    return C


def align_factors(est, ref):
    """Permute and rescale the columns of ``est`` to match ``ref``.

    Columns are matched greedily by decreasing congruence (the product over
    modes of normalized inner-product magnitudes). Each matched column is then
    rescaled per mode by the least-squares factor ``<est, ref> / <est, est>``.

    Returns
    -------
    aligned : CpFactors
        ``aligned[n][:, j]`` is ``scales[n, j] * est[n][:, perm[j]]``.
    perm : ndarray of int
    scales : ndarray, shape (3, K)
    """
    if est.rank != ref.rank:
        raise DimensionError(f"rank mismatch: {est.rank} vs {ref.rank}")
    for E, R in zip(est, ref):
        if E.shape != R.shape:
            raise DimensionError(f"factor shape mismatch: {E.shape} vs {R.shape}")
    K = ref.rank
    C = _congruence_matrix(est, ref)
    perm = np.full(K, -1)
    used_ref, used_est = set(), set()
    for flat in np.argsort(-C, axis=None, kind="stable"):
        j, i = divmod(int(flat), K)
        if j in used_ref or i in used_est:
            continue
        perm[j] = i
        used_ref.add(j)
        used_est.add(i)
        if len(used_ref) == K:
            break

    scales = np.empty((3, K), dtype=np.complex128)
    aligned = []
    for n, (E, R) in enumerate(zip(est, ref)):
        Ep = E[:, perm]
        denom = np.sum(np.abs(Ep) ** 2, axis=0)
        denom[denom == 0] = 1.0
        scales[n] = np.sum(Ep.conj() * R, axis=0) / denom
        aligned.append(Ep * scales[n])
    return CpFactors(*aligned), perm, scales


def column_congruence(est, ref):
    """Per-column congruence of already-aligned factors, each in [0, 1]."""
    return np.diag(_congruence_matrix(est, ref)).copy()


class CPALS(BaseEstimator):
    """Estimator wrapper around :func:`cp_als`.

    Parameters
    ----------
    rank : int
    max_iter : int, default=500
    tol : float, default=1e-8
        Stop when the relative change of the residual drops below ``tol``.
    n_restarts : int, default=1
    random_state : int, default=0

    Attributes
    ----------
    factors_ : CpFactors
    report_ : AlsReport
    n_iter_ : int
    residual_ : float
    """

    def __init__(self, rank=1, max_iter=500, tol=1e-8, n_restarts=1, random_state=0):
        self.rank = rank
        self.max_iter = max_iter
        self.tol = tol
        self.n_restarts = n_restarts
        self.random_state = random_state

    def _options(self):
        return AlsOptions(rank=self.rank, max_iters=self.max_iter, rel_tol=self.tol,
                          restarts=self.n_restarts, seed=self.random_state)

    def fit(self, X, y=None):
        self.factors_, self.report_ = cp_als(X, self._options())
        self.n_iter_ = self.report_.iterations
        self.residual_ = self.report_.final_residual
        return self

    def reconstruct(self):
        return self.factors_.reconstruct()

    def score(self, X, y=None):
        """``1 - residual`` of the fitted factors on ``X``."""
        return 1.0 - residual(X, self.factors_)
