"""Monte-Carlo RMSE-versus-SNR sweeps."""

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linear_sum_assignment

from .cp_als import AlsOptions, NumericalError
from .extraction import wrap_phase
from .nested import (
    StageError,
    check_identifiability,
    estimate_baseline_parafac,
    estimate_nested,
)
from .radar_model import PARAM_NAMES, Scene, TargetParams, synthesize

log = logging.getLogger(__name__)

METHODS = {"nested": estimate_nested, "baseline": estimate_baseline_parafac}
PARAM_GROUPS = {
    "angle": ("theta_t", "phi_t", "theta_r", "phi_r"),
    "polarization": ("gamma_t", "eta_t", "gamma_r", "eta_r"),
}
PERIODIC = np.array([n.startswith(("phi", "eta")) for n in PARAM_NAMES])
CSV_HEADER = ("snr_db", "method", "param_group", "rmse_rad", "trials_used", "wall_time_s")
PARAM_CSV_HEADER = ("snr_db", "method", "param", "rmse_rad", "trials_used")
MAX_FAILURE_FRACTION = 0.2


class ConfigError(ValueError):
    pass


class SweepError(RuntimeError):
    pass


@dataclass
class BenchConfig:
    scene: Scene
    snr_grid_db: list
    trials: int
    methods: list
    master_seed: int = 0
    als: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db must not be empty")
        if list(self.snr_grid_db) != sorted(self.snr_grid_db):
            raise ConfigError("snr_grid_db must be sorted")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {sorted(METHODS)}")
        try:
            self.als_options()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad als section: {exc}") from exc

    def als_options(self, seed=0):
        allowed = {"max_iters", "rel_tol", "restarts"}
        extra = set(self.als) - allowed
        if extra:
            raise TypeError(f"unknown als keys {sorted(extra)}")
        return AlsOptions(rank=self.scene.K, seed=seed, **self.als)

    def to_dict(self):
        targets = [
            {f"{n}_deg": float(np.rad2deg(getattr(t, n))) for n in PARAM_NAMES}
            for t in self.scene.targets
        ]
        return {
            "M": self.scene.M, "N": self.scene.N, "L": self.scene.L, "K": self.scene.K,
            "targets": targets,
            "snr_grid_db": list(self.snr_grid_db),
            "trials": self.trials,
            "methods": list(self.methods),
            "master_seed": self.master_seed,
            "als": dict(self.als),
        }

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def scene_from_dict(doc):
    try:
        targets = [TargetParams.from_degrees(**t) for t in doc["targets"]]
        scene = Scene(targets, M=int(doc["M"]), N=int(doc["N"]), L=int(doc["L"]))
    except KeyError as exc:
        raise ConfigError(f"missing config field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scene: {exc}") from exc
    if "K" in doc and int(doc["K"]) != scene.K:
        raise ConfigError(f"K={doc['K']} but {scene.K} targets listed")
    return scene


def config_from_dict(doc):
    scene = scene_from_dict(doc)
    try:
        return BenchConfig(
            scene=scene,
            snr_grid_db=[float(s) for s in doc.get("snr_grid_db", [0, 5, 10, 15, 20])],
            trials=int(doc.get("trials", 100)),
            methods=list(doc.get("methods", ["nested", "baseline"])),
            master_seed=int(doc.get("master_seed", 0)),
            als=dict(doc.get("als", {})),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def bundled_config_path(name):
    """Path of a config shipped with the package (e.g. ``"paper_iv.json"``)."""
    ref = resources.files("emvs_parafac") / "configs" / name
    return Path(str(ref)) if ref.is_file() else None


def resolve_config_path(path):
    p = Path(path)
    if p.is_file():
        return p
    bundled = bundled_config_path(p.name) if p.parent == Path(".") else None
    if bundled is not None:
        return bundled
    raise ConfigError(f"config file not found: {path}")


def load_config(path):
    p = resolve_config_path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return config_from_dict(doc)


def angle_error(est, truth, periodic=None):
    """Elementwise ``est - truth`` with shortest-arc wrapping where ``periodic``."""
    d = np.asarray(est, dtype=float) - np.asarray(truth, dtype=float)
    if periodic is not None:
        d = np.where(periodic, wrap_phase(d), d)
    return d


def rmse(estimates, truth, periodic=None):
    """``sqrt(sum |est - truth|^2 / (T * K))`` over trials T and targets K.

    Parameters
    ----------
    estimates, truth : array_like, shape (T, K, P) or (K, P)
        Already paired to each other.
    periodic : bool array of shape (P,), optional
        Columns whose errors are taken on the circle.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.size == 0:
        raise ValueError("rmse of an empty set")
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    if est.ndim == 2:
        est, tru = est[None], tru[None]
    T, K = est.shape[:2]
    d = angle_error(est, tru, periodic)
    return float(np.sqrt(np.sum(d ** 2) / (T * K)))


def match_to_truth(est, truth):
    """Row permutation of ``est`` (K, 8) minimizing total squared wrapped error."""
    d = angle_error(est[:, None, :], truth[None, :, :], PERIODIC)
    cost = np.sum(d ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost.T)
    return cols[np.argsort(rows)]


def trial_seed(master_seed, snr_index, trial):
    """Entropy for the synthesis of one trial; independent of execution order."""
    return [int(master_seed), int(snr_index), int(trial)]


def _als_seed(master_seed, snr_index, trial):
    seq = np.random.SeedSequence([int(master_seed), int(snr_index), int(trial), 1])
    return int(seq.generate_state(1)[0])


@dataclass
class TrialOutcome:
    snr_index: int
    trial: int
    sq_errors: dict  # method -> (K, 8) squared errors, or None on failure
    seconds: dict
    failures: dict


def _converged(estimates):
    for e in estimates:
        d = e.diagnostics
        for key in ("outer_report", "inner_report", "report"):
            if key in d and not d[key].converged:
                return False
    return True


def run_trial(cfg, snr_index, trial, noiseless=False):
    snr = None if noiseless else cfg.snr_grid_db[snr_index]
    data = synthesize(cfg.scene, snr, seed=trial_seed(cfg.master_seed, snr_index, trial))
    truth = cfg.scene.truth()
    opts = cfg.als_options(seed=_als_seed(cfg.master_seed, snr_index, trial))
    sq, secs, fails = {}, {}, {}
    for name in cfg.methods:
        t0 = time.perf_counter()
        try:
            est = METHODS[name](data, cfg.scene.M, cfg.scene.N, cfg.scene.K, opts)
        except (StageError, NumericalError) as exc:
            sq[name], fails[name] = None, str(exc)
        else:
            if _converged(est):
                E = np.vstack([e.as_array() for e in est])
                E = E[match_to_truth(E, truth)]
                sq[name] = angle_error(E, truth, PERIODIC) ** 2
            else:
                sq[name], fails[name] = None, "ALS did not converge"
        secs[name] = time.perf_counter() - t0
    return TrialOutcome(snr_index, trial, sq, secs, fails)


@dataclass
class BenchRow:
    snr_db: float
    method: str
    param_group: str
    rmse_rad: float
    trials_used: int
    wall_time_s: float


@dataclass
class BenchResult:
    rows: list
    param_rows: list
    failures: list
    config_digest: str

    def table(self):
        return [asdict(r) for r in self.rows]

    def lookup(self, method, group):
        """RMSE per SNR for one (method, group), in grid order."""
        return [r.rmse_rad for r in self.rows if r.method == method and r.param_group == group]


def run_sweep(cfg, n_jobs=1, noiseless=False):
    """Run every (SNR, trial) of ``cfg`` and reduce to RMSE rows.

    Trials that raise a numerical/stage error or whose ALS fails to converge
    are excluded and listed in ``failures``; more than 20% failures at any
    (SNR, method) point raises :class:`SweepError`.
    """
    _require = check_identifiability(cfg.scene.M, cfg.scene.N, cfg.scene.K, cfg.scene.L)
    if not _require:
        raise ConfigError("scene is not identifiable: " + ", ".join(
            f[0] for f in _require.failures()))

    units = [(s, t) for s in range(len(cfg.snr_grid_db)) for t in range(cfg.trials)]
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(run_trial)(cfg, s, t, noiseless) for s, t in units)
    # fixed reduction order regardless of scheduling
    outcomes = sorted(outcomes, key=lambda o: (o.snr_index, o.trial))

    rows, param_rows, failures = [], [], []
    K = cfg.scene.K
    for s, snr in enumerate(cfg.snr_grid_db):
        point = [o for o in outcomes if o.snr_index == s]
        for method in cfg.methods:
            errs = [o.sq_errors[method] for o in point if o.sq_errors[method] is not None]
            for o in point:
                if method in o.failures:
                    failures.append({"snr_db": snr, "method": method, "trial": o.trial,
                                     "reason": o.failures[method]})
            n_fail = len(point) - len(errs)
            if n_fail > MAX_FAILURE_FRACTION * len(point) or not errs:
                raise SweepError(
                    f"{n_fail}/{len(point)} trials failed at snr_db={snr}, method={method}")
            wall = float(sum(o.seconds[method] for o in point))
            stack = np.stack(errs)  # (T, K, 8)
            used = len(errs)
            for group, names in PARAM_GROUPS.items():
                idx = [PARAM_NAMES.index(n) for n in names]
                value = float(np.sqrt(stack[:, :, idx].sum() / (used * K)))
                rows.append(BenchRow(snr, method, group, value, used, wall))
            for i, name in enumerate(PARAM_NAMES):
                param_rows.append((snr, method, name,
                                   float(np.sqrt(stack[:, :, i].sum() / (used * K))), used))
    return BenchResult(rows, param_rows, failures, cfg.digest())


def _fmt(x):
    return repr(float(x))


def format_csv(result, include_wall_time=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        w.writerow([_fmt(r.snr_db), r.method, r.param_group, _fmt(r.rmse_rad), r.trials_used,
                    f"{r.wall_time_s:.3f}" if include_wall_time else ""])
    return buf.getvalue()


def format_param_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PARAM_CSV_HEADER)
    for snr, method, name, value, used in result.param_rows:
        w.writerow([_fmt(snr), method, name, _fmt(value), used])
    return buf.getvalue()


def manifest(cfg, result, noiseless=False):
    from . import __version__

    return {
        "config_sha256": result.config_digest,
        "master_seed": cfg.master_seed,
        "software_version": __version__,
        "noiseless": noiseless,
        "config": cfg.to_dict(),
        "failures": result.failures,
        "wall_time_s": {f"{r.method}@{_fmt(r.snr_db)}": r.wall_time_s
                        for r in result.rows if r.param_group == "angle"},
    }
