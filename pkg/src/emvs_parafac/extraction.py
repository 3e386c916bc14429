"""Angle and polarization recovery from estimated steering / EMVS responses."""

import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment

from .radar_model import spatial_angular_matrix
from .tensor_core import DimensionError, as_complex_matrix

__all__ = [
    "DegenerateGeometryError",
    "DegenerateResponseError",
    "wrap_phase",
    "elevation_from_steering",
    "poynting_vector",
    "direction_from_response",
    "polarization_from_response",
    "pair_parameters",
    "split_rank_one",
]

_RESPONSE_FLOOR = 1e-9
_RANK_RTOL = 1e-10


class DegenerateGeometryError(ValueError):
    """The shifted subarray matrix is rank deficient."""


class DegenerateResponseError(ValueError):
    """An EMVS response has a vanishing electric or magnetic part."""


def wrap_phase(x):
    """Map angles to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def elevation_from_steering(A_hat, return_eigenvalues=False):
    """Elevation per column of an estimated ULA steering matrix.

    The two maximally overlapping subarrays satisfy ``J2 A = J1 A Phi`` with
    ``Phi = diag(exp(-j pi sin(theta_k)))``. ``Phi`` is estimated by least
    squares, its eigenvalues give ``sin(theta) = -angle(lambda) / pi``, and each
    eigenvalue is attributed to the column its eigenvector points at.

    Parameters
    ----------
    A_hat : array_like, shape (P, K)
        Columns are steering vectors up to complex scale and in any order.
    return_eigenvalues : bool
        Also return the eigenvalue attributed to each column.

    Returns
    -------
    theta : ndarray, shape (K,)
        Elevations in [0, pi/2], in column order of ``A_hat``.
    """
    A = as_complex_matrix(A_hat, "A_hat")
    P, K = A.shape
    if P < 2:
        raise DimensionError("need at least two array elements")
    if K > P - 1:
        raise DimensionError(f"{K} columns cannot be resolved by {P} elements")
    A1, A2 = A[:-1], A[1:]
    s = np.linalg.svd(A1, compute_uv=False)
    if s[0] == 0 or s[-1] < _RANK_RTOL * s[0]:
        raise DegenerateGeometryError("shifted subarray matrix is rank deficient")
    Phi = np.linalg.lstsq(A1, A2, rcond=None)[0]
    lam, V = np.linalg.eig(Phi)
    # eigenvector i of Phi ~ e_j up to scale when column j carries lambda_i
    weight = np.abs(V) / np.linalg.norm(V, axis=0)
    cols, eig_idx = linear_sum_assignment(-weight)
    lam = lam[eig_idx[np.argsort(cols)]]

    sin_theta = -np.angle(lam) / np.pi
    if np.any((sin_theta < 0) | (sin_theta > 1)):
        warnings.warn("elevation phase outside [0, pi/2] was clamped", RuntimeWarning,
                      stacklevel=2)
    theta = np.arcsin(np.clip(sin_theta, 0.0, 1.0))
    if return_eigenvalues:
        return theta, lam
    return theta


def _split_response(q_hat):
    q = np.asarray(q_hat, dtype=np.complex128).ravel()
    if q.size != 6:
        raise DimensionError(f"EMVS response must have 6 entries, got {q.size}")
    e, h = q[:3], q[3:]
    ne, nh = np.linalg.norm(e), np.linalg.norm(h)
    if ne < _RESPONSE_FLOOR or nh < _RESPONSE_FLOOR:
        raise DegenerateResponseError("electric or magnetic part of the response vanishes")
    return q, e / ne, h / nh


def poynting_vector(q_hat):
    """Normalized Poynting vector ``Re(e/|e| x conj(h)/|h|)``."""
    _, e, h = _split_response(q_hat)
    return np.cross(e, h.conj()).real


def direction_from_response(q_hat):
    """Elevation and azimuth of an EMVS response (invariant to complex scale).

    ``u = sin(theta) cos(phi), v = sin(theta) sin(phi)``, so
    ``theta = arcsin(sqrt(u^2 + v^2))`` and ``phi = atan2(v, u)``. At the zenith
    ``atan2(0, 0) = 0`` is reported.
    """
    u, v, _ = poynting_vector(q_hat)
    theta = float(np.arcsin(min(1.0, np.hypot(u, v))))
    phi = float(np.arctan2(v, u) % (2 * np.pi))
    return theta, phi


def polarization_from_response(q_hat, theta, phi):
    """Polarization angle and phase difference given the direction.

    ``g = pinv(F(theta, phi)) q``; the ratio ``g1 / g2 = tan(gamma) exp(j eta)``
    removes the unknown complex scale of ``q``.
    """
    q, _, _ = _split_response(q_hat)
    g = np.linalg.pinv(spatial_angular_matrix(theta, phi)) @ q
    if abs(g[1]) < 1e-12 * np.linalg.norm(g):
        warnings.warn("polarization at the gamma = pi/2 limit", RuntimeWarning, stacklevel=2)
        return float(np.pi / 2), float(wrap_phase(np.angle(g[0])))
    ratio = g[0] / g[1]
    if abs(ratio) < 1e-12:
        # eta is unobservable when sin(gamma) = 0
        return float(np.arctan(abs(ratio))), 0.0
    return float(np.arctan(abs(ratio))), float(wrap_phase(np.angle(ratio)))


def pair_parameters(theta_inner, rx_outer, method="optimal"):
    """Match outer-stage receive tuples to inner-stage receive elevations.

    Parameters
    ----------
    theta_inner : sequence of float, length K
        Receive elevations from the inner-stage steering estimate.
    rx_outer : sequence of (theta, phi, gamma, eta), length K
        Receive 4-tuples from the outer-stage EMVS responses.
    method : {"optimal", "greedy"}
        ``"optimal"`` solves the one-to-one assignment minimizing the total
        ``|theta_outer[i] - theta_inner[j]|``. ``"greedy"`` takes the nearest
        inner elevation for each outer tuple independently and may reuse an
        index.

    Returns
    -------
    assignment : ndarray of int, shape (K,)
        ``assignment[i]`` is the inner index paired with outer tuple ``i``.
    paired : list of tuple
        ``paired[i] = (theta_inner[assignment[i]], phi_i, gamma_i, eta_i)``.
    """
    theta_inner = np.asarray(theta_inner, dtype=float).ravel()
    rx_outer = [tuple(map(float, r)) for r in rx_outer]
    if len(rx_outer) != theta_inner.size:
        raise DimensionError(
            f"length mismatch: {len(rx_outer)} outer tuples vs {theta_inner.size} elevations")
    theta_outer = np.array([r[0] for r in rx_outer])
    cost = np.abs(theta_outer[:, None] - theta_inner[None, :])
    if method == "optimal":
        rows, cols = linear_sum_assignment(cost)
        assignment = cols[np.argsort(rows)]
    elif method == "greedy":
        assignment = np.argmin(cost, axis=1)
    else:
        raise ValueError(f"unknown pairing method {method!r}")
    paired = [(theta_inner[j],) + r[1:] for j, r in zip(assignment, rx_outer)]
    return assignment, paired


def split_rank_one(v, p, q):
    """Split ``v ~ kron(a, b)`` (lengths p, q) by the dominant singular pair.

    Returns ``a`` (length p) and ``b`` (length q) with
    ``kron(a, b)`` the best rank-1 approximation of ``v``.
    """
    v = np.asarray(v, dtype=np.complex128).ravel()
    if v.size != p * q:
        raise DimensionError(f"cannot split length {v.size} into {p}x{q}")
    U, s, Vh = np.linalg.svd(v.reshape(p, q), full_matrices=False)
    return U[:, 0] * s[0], Vh[0].copy()
