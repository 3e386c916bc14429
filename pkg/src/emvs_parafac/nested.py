"""Nested PARAFAC estimation of the 8 target parameters, plus the single-stage
PARAFAC baseline.

Pipeline (nested)::

    Y (6MN, 6, L) --outer ALS--> A_tqr (6MN x K), Q_r (6 x K), S^T (L x K)
        Q_r columns   -> receive (theta~, phi, gamma, eta)
        sum_k A_tqr[:, k] --rearrange--> Y1 (N, 6, M)
    Y1 --inner ALS--> A_r (N x K), Q_t (6 x K), A_t (M x K)
        A_t, A_r      -> transmit / receive elevations (rotation invariance)
        Q_t columns   -> transmit (phi, gamma, eta)
    receive tuples from the outer stage are matched to inner columns by
    elevation; the inner stage already pairs A_t, Q_t and A_r.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .cp_als import AlsOptions, AlsReport, cp_als, kruskal_generic
from .extraction import (
    direction_from_response,
    elevation_from_steering,
    pair_parameters,
    poynting_vector,
    polarization_from_response,
    split_rank_one,
)
from .radar_model import PARAM_NAMES, SnapshotData
from .tensor_core import DimensionError, as_complex_matrix, as_complex_tensor3

__all__ = [
    "IdentifiabilityError",
    "StageError",
    "Identifiability",
    "OuterFactors",
    "InnerFactors",
    "TargetEstimate",
    "check_identifiability",
    "outer_decompose",
    "rearrange_to_inner",
    "inner_decompose",
    "estimate_nested",
    "estimate_baseline_parafac",
    "complexity_estimate",
    "NestedParafac",
    "BaselineParafac",
]


class IdentifiabilityError(ValueError):
    """The requested number of targets cannot be uniquely resolved."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass
class Identifiability:
    ok: bool
    details: list

    def failures(self):
        return [d for d in self.details if not d[3]]

    def __bool__(self):
        return self.ok


@dataclass
class OuterFactors:
    A_tqr_hat: np.ndarray
    Q_r_hat: np.ndarray
    S_hat: np.ndarray
    report: AlsReport


@dataclass
class InnerFactors:
    A_r_hat: np.ndarray
    Q_t_hat: np.ndarray
    A_t_hat: np.ndarray
    report: AlsReport


@dataclass
class TargetEstimate:
    theta_t: float
    phi_t: float
    gamma_t: float
    eta_t: float
    theta_r: float
    phi_r: float
    gamma_r: float
    eta_r: float
    diagnostics: dict = field(default_factory=dict, repr=False)

    def as_array(self):
        return np.array([getattr(self, n) for n in PARAM_NAMES])


def _kappa(rows, K):
    return min(rows, K)


def check_identifiability(M, N, K, L):
    """Generic Kruskal conditions for both CP stages plus the subarray bound.

    Every factor is assumed to have full k-rank, so ``kappa = min(rows, K)``.

    Returns
    -------
    Identifiability
        ``details`` holds ``(label, lhs, rhs, ok)`` per bound.
    """
    for name, val in (("M", M), ("N", N), ("K", K), ("L", L)):
        if int(val) < 1:
            raise ValueError(f"{name} must be positive, got {val}")
    k_outer = _kappa(6 * M * N, K) + _kappa(6, K) + _kappa(L, K)
    k_inner = _kappa(M, K) + _kappa(6, K) + _kappa(N, K)
    # a rank-1 CP model is unique whenever it is nonzero
    details = [
        ("2K+2 <= k(A_tqr)+k(Q_r)+k(S)", 2 * K + 2, k_outer, K == 1 or 2 * K + 2 <= k_outer),
        ("2K+2 <= k(A_t)+k(Q_t)+k(A_r)", 2 * K + 2, k_inner, K == 1 or 2 * K + 2 <= k_inner),
        ("K <= M-1", K, M - 1, K <= M - 1),
        ("K <= N-1", K, N - 1, K <= N - 1),
    ]
    return Identifiability(all(d[3] for d in details), details)


def _require(verdict):
    if not verdict:
        msg = "; ".join(f"{label} violated ({lhs} > {rhs})"
                        for label, lhs, rhs, _ in verdict.failures())
        raise IdentifiabilityError(msg)


def _options(opts, K):
    if opts is None:
        return AlsOptions(rank=K)
    return replace(opts, rank=K)


def _tensor_of(data):
    if isinstance(data, SnapshotData):
        return data.tensor
    return as_complex_tensor3(data, "snapshot tensor")


def _check_rank(K):
    if int(K) != K or K < 1:
        raise ValueError(f"number of targets must be a positive integer, got {K!r}")


def outer_decompose(data, K, opts=None):
    """Outer CP stage on the ``(6MN, 6, L)`` tensor.

    Factors are assigned as ``(A_tqr, Q_r, S^T)``; ``S_hat`` is returned as
    ``K x L``.
    """
    _check_rank(K)
    Y = _tensor_of(data)
    if not kruskal_generic(Y.shape, K):
        raise IdentifiabilityError(f"outer Kruskal bound fails for K={K} and shape {Y.shape}")
    F, report = cp_als(Y, _options(opts, K))
    return OuterFactors(F.F1, F.F2, F.F3.T.copy(), report)


def rearrange_to_inner(A_tqr_hat, M, N):
    """Build the inner ``(N, 6, M)`` tensor from the outer first factor.

    With ``v = sum_k A_tqr_hat[:, k]`` and rows ordered as
    ``kron(a_t, q_t, a_r)``, i.e. ``v[((m*6 + p)*N + n)]`` (0-based),

    * ``ivec_row(v, 6M, N) = (A_t kr Q_t) A_r^T``;
    * the returned tensor is ``Y1[n, p, m] = v[(m*6 + p)*N + n]``, which equals
      ``sum_k a_r,k o q_t,k o a_t,k`` up to the column scales of the outer fit.
    """
    A = as_complex_matrix(A_tqr_hat, "A_tqr_hat")
    if A.shape[0] != 6 * M * N:
        raise DimensionError(f"{A.shape[0]} rows cannot be split as 6*M*N with M={M}, N={N}")
    v = A.sum(axis=1)
    return np.ascontiguousarray(v.reshape(M, 6, N).transpose(2, 1, 0))


def inner_decompose(Y1, K, opts=None):
    """Inner CP stage on the ``(N, 6, M)`` tensor; factors ``(A_r, Q_t, A_t)``."""
    _check_rank(K)
    Y1 = as_complex_tensor3(Y1, "inner tensor")
    if not kruskal_generic(Y1.shape, K):
        raise IdentifiabilityError(f"inner Kruskal bound fails for K={K} and shape {Y1.shape}")
    F, report = cp_als(Y1, _options(opts, K))
    return InnerFactors(F.F1, F.F2, F.F3, report)


def _four_tuple(q):
    theta, phi = direction_from_response(q)
    gamma, eta = polarization_from_response(q, theta, phi)
    return theta, phi, gamma, eta


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except IdentifiabilityError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _geometry(Y, M, N, K):
    if Y.shape[0] != 6 * M * N or Y.shape[1] != 6:
        raise DimensionError(f"tensor shape {Y.shape} does not match M={M}, N={N}")
    _require(check_identifiability(M, N, K, Y.shape[2]))


def estimate_nested(data, M, N, K, opts=None, pairing="optimal"):
    """Nested PARAFAC estimate of ``K`` targets.

    Parameters
    ----------
    data : SnapshotData or array_like, shape (6MN, 6, L)
    M, N : int
        Transmit and receive EMVS counts.
    K : int
    opts : AlsOptions, optional
        ALS controls shared by both stages; ``rank`` is overridden by ``K``.
    pairing : {"optimal", "greedy"}

    Returns
    -------
    list of TargetEstimate
        Ordered by inner-stage column. The transmit elevation comes from the
        transmit steering estimate, the receive elevation from the receive
        steering estimate, the remaining angles from the EMVS responses.
    """
    _check_rank(K)
    Y = _tensor_of(data)
    _geometry(Y, M, N, K)

    outer = _stage("outer", outer_decompose, Y, K, opts)
    rx_outer = _stage("receive-response", lambda: [_four_tuple(q) for q in outer.Q_r_hat.T])
    Y1 = _stage("rearrange", rearrange_to_inner, outer.A_tqr_hat, M, N)
    inner = _stage("inner", inner_decompose, Y1, K, opts)

    theta_t, lam_t = _stage("transmit-elevation", elevation_from_steering, inner.A_t_hat,
                            return_eigenvalues=True)
    theta_r, lam_r = _stage("receive-elevation", elevation_from_steering, inner.A_r_hat,
                            return_eigenvalues=True)
    tx = _stage("transmit-response", lambda: [_four_tuple(q) for q in inner.Q_t_hat.T])
    assignment, paired = _stage("pairing", pair_parameters, theta_r, rx_outer, pairing)

    order = np.argsort(assignment, kind="stable")
    estimates = []
    for i in order:
        j = int(assignment[i])
        _, phi_t, gamma_t, eta_t = tx[j]
        theta_r_j, phi_r, gamma_r, eta_r = paired[i]
        estimates.append(TargetEstimate(
            float(theta_t[j]), phi_t, gamma_t, eta_t,
            float(theta_r_j), phi_r, gamma_r, eta_r,
            diagnostics={
                "inner_column": j,
                "outer_column": int(i),
                "eigenvalue_t": complex(lam_t[j]),
                "eigenvalue_r": complex(lam_r[j]),
                "theta_t_poynting": tx[j][0],
                "theta_r_poynting": rx_outer[i][0],
                "poynting_t": poynting_vector(inner.Q_t_hat[:, j]),
                "poynting_r": poynting_vector(outer.Q_r_hat[:, i]),
                "outer_report": outer.report,
                "inner_report": inner.report,
            },
        ))
    return estimates


def estimate_baseline_parafac(data, M, N, K, opts=None):
    """Single-stage PARAFAC with rank-1 reconstruction of the composite factors.

    The snapshot tensor is viewed as ``(6M, 6N, L)`` with factors
    ``(A_t kr Q_t, A_r kr Q_r, S^T)``. Every composite column is reshaped to
    an ``M x 6`` (resp. ``N x 6``) matrix and split into steering vector and
    EMVS response by its dominant singular pair. Transmit and receive share
    the CP column index, so no pairing is needed.
    """
    _check_rank(K)
    Y = _tensor_of(data)
    _geometry(Y, M, N, K)
    L = Y.shape[2]
    Y6 = Y.reshape(6 * M, 6 * N, L)

    def fit():
        if not kruskal_generic(Y6.shape, K):
            raise IdentifiabilityError(f"Kruskal bound fails for K={K} and shape {Y6.shape}")
        return cp_als(Y6, _options(opts, K))

    F, report = _stage("parafac", fit)

    def split(B, P):
        pairs = [split_rank_one(B[:, k], P, 6) for k in range(K)]
        return (np.column_stack([a for a, _ in pairs]),
                np.column_stack([q for _, q in pairs]))

    A_t, Q_t = _stage("reconstruction", split, F.F1, M)
    A_r, Q_r = _stage("reconstruction", split, F.F2, N)

    def extract(A, Q):
        thetas, lams = zip(*[elevation_from_steering(A[:, [k]], return_eigenvalues=True)
                             for k in range(K)])
        return [float(t[0]) for t in thetas], [complex(v[0]) for v in lams], \
            [_four_tuple(q) for q in Q.T]

    theta_t, lam_t, tx = _stage("transmit-extraction", extract, A_t, Q_t)
    theta_r, lam_r, rx = _stage("receive-extraction", extract, A_r, Q_r)

    return [
        TargetEstimate(
            theta_t[k], *tx[k][1:], theta_r[k], *rx[k][1:],
            diagnostics={
                "column": k,
                "eigenvalue_t": lam_t[k],
                "eigenvalue_r": lam_r[k],
                "theta_t_poynting": tx[k][0],
                "theta_r_poynting": rx[k][0],
                "report": report,
            },
        )
        for k in range(K)
    ]


def complexity_estimate(M, N, L, K, sweeps):
    """Leading-order flop count ``sweeps * (6MN + M + N + L + 12) * K^2``."""
    return sweeps * (6 * M * N + M + N + L + 12) * K ** 2


class _ParafacEstimator(BaseEstimator):
    def __init__(self, n_targets=1, n_tx=2, n_rx=2, max_iter=500, tol=1e-8,
                 n_restarts=1, random_state=0):
        self.n_targets = n_targets
        self.n_tx = n_tx
        self.n_rx = n_rx
        self.max_iter = max_iter
        self.tol = tol
        self.n_restarts = n_restarts
        self.random_state = random_state

    def _als_options(self):
        return AlsOptions(rank=self.n_targets, max_iters=self.max_iter, rel_tol=self.tol,
                          restarts=self.n_restarts, seed=self.random_state)

    def _estimate(self, X):
        raise NotImplementedError

    def fit(self, X, y=None):
        """Estimate the target parameters from a ``(6MN, 6, L)`` snapshot tensor.

        Sets ``targets_`` (list of TargetEstimate) and ``params_``
        (``(n_targets, 8)`` array, columns ordered as ``PARAM_NAMES``).
        """
        self.targets_ = self._estimate(X)
        self.params_ = np.vstack([t.as_array() for t in self.targets_])
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).params_


class NestedParafac(_ParafacEstimator):
    """Nested (two-stage) PARAFAC 8D parameter estimator.

    Parameters
    ----------
    n_targets : int
    n_tx, n_rx : int
        Number of transmit / receive EMVS elements (M, N).
    max_iter, tol, n_restarts, random_state
        ALS controls shared by the outer and inner stages.
    pairing : {"optimal", "greedy"}
        Receive-side pairing rule.
    """

    def __init__(self, n_targets=1, n_tx=2, n_rx=2, max_iter=500, tol=1e-8,
                 n_restarts=1, random_state=0, pairing="optimal"):
        super().__init__(n_targets, n_tx, n_rx, max_iter, tol, n_restarts, random_state)
        self.pairing = pairing

    def _estimate(self, X):
        return estimate_nested(X, self.n_tx, self.n_rx, self.n_targets,
                               self._als_options(), pairing=self.pairing)


class BaselineParafac(_ParafacEstimator):
    """Single-stage PARAFAC estimator with rank-1 factor reconstruction."""

    def _estimate(self, X):
        return estimate_baseline_parafac(X, self.n_tx, self.n_rx, self.n_targets,
                                         self._als_options())
