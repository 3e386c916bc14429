"""Bistatic EMVS-MIMO radar scene and snapshot synthesis.

Each target contributes a virtual-array response
``(a_t kr q_t) kr (a_r kr q_r)`` of length ``36*M*N``, where ``a_t``/``a_r``
are half-wavelength ULA steering vectors and ``q_t``/``q_r`` are the 6-component
EMVS responses. Since the Khatri-Rao product is associative this equals
``A_tqr kr Q_r`` with ``A_tqr = A_t kr Q_t kr A_r`` (6MN x K), which is how the
snapshot tensor of shape ``(6MN, 6, L)`` is laid out::

    Y[((m*6 + p)*N + n), p', l] = sum_k A_t[m,k] Q_t[p,k] A_r[n,k] Q_r[p',k] S[k,l]

(0-based). Flattening the first two axes in C order gives the
``36MN x L`` matrix form ``(A_tqr kr Q_r) @ S``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import cp_reconstruct, khatri_rao

__all__ = [
    "PARAM_NAMES",
    "TargetParams",
    "Scene",
    "SnapshotData",
    "ula_steering",
    "spatial_angular_matrix",
    "polarization_vector",
    "emvs_response",
    "build_factors",
    "gaussian_source",
    "synthesize",
    "reference_scene",
]

PARAM_NAMES = (
    "theta_t", "phi_t", "gamma_t", "eta_t",
    "theta_r", "phi_r", "gamma_r", "eta_r",
)

_DOMAINS = {
    "theta": (0.0, np.pi),
    "phi": (0.0, 2 * np.pi),
    "gamma": (0.0, np.pi / 2),
    "eta": (-np.pi, np.pi),
}


@dataclass(frozen=True)
class TargetParams:
    """Eight angle/polarization parameters of one target, in radians.

    Domains: elevations in [0, pi), azimuths in [0, 2 pi), polarization
    angles in [0, pi/2), phase differences in [-pi, pi).
    """

    theta_t: float
    phi_t: float
    gamma_t: float
    eta_t: float
    theta_r: float
    phi_r: float
    gamma_r: float
    eta_r: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            lo, hi = _DOMAINS[name.split("_")[0]]
            if not (np.isfinite(value) and lo <= value < hi):
                raise ValueError(f"{name}={value!r} outside [{lo:.6g}, {hi:.6g})")

    @classmethod
    def from_degrees(cls, **kwargs):
        """Build from ``theta_t_deg=...`` style keywords (or bare names)."""
        values = {}
        for key, val in kwargs.items():
            name = key[:-4] if key.endswith("_deg") else key
            values[name] = float(np.deg2rad(val))
        return cls(**values)

    def as_array(self):
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, values):
        return cls(*[float(v) for v in values])


@dataclass(frozen=True)
class Scene:
    """K targets seen by an M-element transmit and N-element receive EMVS array
    over L snapshots."""

    targets: tuple
    M: int
    N: int
    L: int

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.targets) < 1:
            raise ValueError("a scene needs at least one target")
        if self.M < 2 or self.N < 2:
            raise ValueError(f"need M >= 2 and N >= 2, got M={self.M}, N={self.N}")
        if self.L < 1:
            raise ValueError(f"need L >= 1, got {self.L}")
        theta_r = np.array([t.theta_r for t in self.targets])
        if len(np.unique(theta_r)) != len(theta_r):
            raise ValueError("receive elevations must be pairwise distinct for pairing")

    @property
    def K(self):
        return len(self.targets)

    def truth(self):
        """Ground truth as a (K, 8) array, columns in ``PARAM_NAMES`` order."""
        return np.vstack([t.as_array() for t in self.targets])


@dataclass
class SnapshotData:
    """Snapshot tensor of shape ``(6MN, 6, L)``."""

    tensor: np.ndarray
    snr_db: float | None = None
    warnings: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.complex128)
        if self.tensor.ndim != 3 or self.tensor.shape[1] != 6 or self.tensor.shape[0] % 6:
            raise ValueError(f"snapshot tensor must be (6MN, 6, L), got {self.tensor.shape}")

    def matrix(self):
        """Matrix form, shape ``(36MN, L)``."""
        return self.tensor.reshape(-1, self.tensor.shape[2])


def ula_steering(theta, count):
    """Half-wavelength ULA steering vector ``exp(-j pi m sin(theta))``, m = 1..count."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    m = np.arange(1, count + 1)
    return np.exp(-1j * np.pi * m * np.sin(theta))


def spatial_angular_matrix(theta, phi):
    """6 x 2 EMVS angular matrix; rows 0-2 electric field, rows 3-5 magnetic."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    return np.array([
        [cp * ct, -sp],
        [sp * ct, cp],
        [-st, 0.0],
        [-sp, -cp * ct],
        [cp, -sp * ct],
        [0.0, st],
    ])


def polarization_vector(gamma, eta):
    return np.array([np.sin(gamma) * np.exp(1j * eta), np.cos(gamma)])


def emvs_response(theta, phi, gamma, eta):
    """6-component EMVS response ``F(theta, phi) @ g(gamma, eta)``.

    The electric and magnetic halves each have unit norm, so ``|q| = sqrt(2)``.
    """
    return spatial_angular_matrix(theta, phi) @ polarization_vector(gamma, eta)


def build_factors(scene):
    """Return ``(A_t, Q_t, A_r, Q_r)`` with one column per target."""
    ts = scene.targets
    A_t = np.column_stack([ula_steering(t.theta_t, scene.M) for t in ts])
    Q_t = np.column_stack([emvs_response(t.theta_t, t.phi_t, t.gamma_t, t.eta_t) for t in ts])
    A_r = np.column_stack([ula_steering(t.theta_r, scene.N) for t in ts])
    Q_r = np.column_stack([emvs_response(t.theta_r, t.phi_r, t.gamma_r, t.eta_r) for t in ts])
    return A_t, Q_t, A_r, Q_r


def gaussian_source(rng, K, L):
    """i.i.d. unit-variance circular complex Gaussian target coefficients."""
    return (rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L))) / np.sqrt(2)


def synthesize(scene, snr_db=None, seed=0, source=gaussian_source):
    """Draw a snapshot tensor for ``scene``.

    Parameters
    ----------
    scene : Scene
    snr_db : float or None
        Per-entry signal-to-noise ratio in dB. ``None`` returns the noiseless
        tensor.
    seed : int or sequence of int
        Entropy for ``numpy.random.SeedSequence``. The source draw and the
        noise draw use the two children of ``SeedSequence(seed).spawn(2)``,
        so changing the SNR never changes the source matrix.
    source : callable
        ``source(rng, K, L) -> (K, L)`` complex array.

    Returns
    -------
    SnapshotData
    """
    notes = []
    if scene.L < scene.K:
        msg = f"L={scene.L} < K={scene.K}: source factor is not identifiable"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    src_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    S = np.asarray(source(np.random.default_rng(src_seq), scene.K, scene.L), dtype=np.complex128)
    if S.shape != (scene.K, scene.L):
        raise ValueError(f"source returned shape {S.shape}, expected {(scene.K, scene.L)}")

    A_t, Q_t, A_r, Q_r = build_factors(scene)
    A_tqr = khatri_rao(khatri_rao(A_t, Q_t), A_r)
    Y = cp_reconstruct(A_tqr, Q_r, S.T)

    if snr_db is not None:
        p_sig = np.mean(np.abs(Y) ** 2)
        sigma2 = p_sig / 10 ** (snr_db / 10)
        rng = np.random.default_rng(noise_seq)
        noise = rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape)
        Y = Y + np.sqrt(sigma2 / 2) * noise
    return SnapshotData(Y, None if snr_db is None else float(snr_db), tuple(notes))


def reference_scene(L=200):
    """The three-target reference scene with M=9 transmit and N=10 receive EMVS."""
    deg = {
        "theta_t": [40, 20, 30], "phi_t": [15, 25, 35],
        "gamma_t": [10, 22, 35], "eta_t": [38, 48, 56],
        "theta_r": [24, 38, 16], "phi_r": [21, 32, 55],
        "gamma_r": [42, 33, 60], "eta_r": [17, 27, 39],
    }
    targets = [TargetParams.from_degrees(**{k: v[i] for k, v in deg.items()}) for i in range(3)]
    return Scene(targets, M=9, N=10, L=L)
