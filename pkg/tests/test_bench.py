import json

import numpy as np
import pytest

from emvs_parafac.bench import (
    CSV_HEADER,
    PERIODIC,
    BenchConfig,
    ConfigError,
    SweepError,
    angle_error,
    bundled_config_path,
    config_from_dict,
    format_csv,
    load_config,
    manifest,
    match_to_truth,
    rmse,
    run_sweep,
    trial_seed,
)
from emvs_parafac.radar_model import reference_scene

TARGETS = [
    {"theta_t_deg": 40, "phi_t_deg": 15, "gamma_t_deg": 10, "eta_t_deg": 38,
     "theta_r_deg": 24, "phi_r_deg": 21, "gamma_r_deg": 42, "eta_r_deg": 17},
    {"theta_t_deg": 20, "phi_t_deg": 25, "gamma_t_deg": 22, "eta_t_deg": 48,
     "theta_r_deg": 38, "phi_r_deg": 32, "gamma_r_deg": 33, "eta_r_deg": 27},
]


def small_doc(**kw):
    doc = {"M": 4, "N": 5, "L": 40, "targets": TARGETS, "snr_grid_db": [0, 20],
           "trials": 3, "methods": ["nested", "baseline"], "master_seed": 11,
           "als": {"max_iters": 2000}}
    doc.update(kw)
    return doc


class TestRmse:
    def test_perfect(self):
        truth = np.ones((4, 3, 8))
        assert rmse(truth, truth) == 0.0

    def test_single_error(self):
        truth = np.zeros((1, 1, 8))
        est = truth.copy()
        est[0, 0, 3] = 0.1
        assert rmse(est, truth) == pytest.approx(0.1)

    def test_two_trials_two_targets_by_hand(self):
        truth = np.zeros((2, 2, 2))
        est = np.array([[[0.1, 0.0], [0.0, 0.2]],
                        [[0.3, 0.0], [0.0, 0.0]]])
        # sum of squares 0.01 + 0.04 + 0.09 = 0.14, over T*K = 4
        assert rmse(est, truth) == pytest.approx(np.sqrt(0.14 / 4))

    def test_wrapped(self):
        est, truth = np.array([[np.pi - 0.01]]), np.array([[-np.pi + 0.01]])
        assert rmse(est, truth, periodic=[True]) == pytest.approx(0.02)
        assert rmse(est, truth) == pytest.approx(2 * np.pi - 0.02)

    def test_empty(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((0, 2, 8)), np.zeros((0, 2, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((1, 2, 8)), np.zeros((1, 3, 8)))


class TestMatching:
    def test_recovers_permutation(self):
        truth = reference_scene().truth()
        perm = [2, 0, 1]
        est = truth[perm] + 1e-3
        np.testing.assert_allclose(est[match_to_truth(est, truth)], truth + 1e-3)

    def test_azimuth_wraps(self):
        d = angle_error([0.01, 2 * np.pi - 0.01], [2 * np.pi - 0.01, 0.01], [True, True])
        np.testing.assert_allclose(d, [0.02, -0.02], atol=1e-12)
        assert PERIODIC.tolist() == [False, True, False, True] * 2


class TestConfig:
    def test_bundled_matches_reference_scene(self):
        cfg = load_config(bundled_config_path("paper_iv.json"))
        assert (cfg.scene.M, cfg.scene.N, cfg.scene.L, cfg.scene.K) == (9, 10, 200, 3)
        np.testing.assert_allclose(cfg.scene.truth(), reference_scene().truth())
        assert cfg.snr_grid_db == [0, 5, 10, 15, 20]
        assert cfg.trials == 100

    def test_bare_name_resolves_to_bundled(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert load_config("paper_iv.json").scene.K == 3

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "none.json")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.json")

    @pytest.mark.parametrize("patch", [
        {"trials": 0}, {"snr_grid_db": []}, {"snr_grid_db": [10, 0]},
        {"methods": ["esprit"]}, {"als": {"max_iters": 0}}, {"als": {"bogus": 1}},
        {"K": 3}, {"M": 1},
    ])
    def test_invalid(self, patch):
        with pytest.raises(ConfigError):
            config_from_dict(small_doc(**patch))

    def test_missing_field(self):
        doc = small_doc()
        del doc["targets"]
        with pytest.raises(ConfigError, match="targets"):
            config_from_dict(doc)

    def test_digest_tracks_content(self):
        a = config_from_dict(small_doc())
        assert a.digest() == config_from_dict(small_doc()).digest()
        assert a.digest() != config_from_dict(small_doc(master_seed=12)).digest()


class TestSeeds:
    def test_independent_of_order(self):
        assert trial_seed(1, 2, 3) == [1, 2, 3]
        assert trial_seed(1, 2, 3) != trial_seed(1, 3, 2)


@pytest.fixture(scope="module")
def small_result():
    cfg = config_from_dict(small_doc())
    return cfg, run_sweep(cfg)


class TestSweep:
    def test_rows(self, small_result):
        cfg, result = small_result
        assert len(result.rows) == 2 * 2 * 2
        assert len(result.param_rows) == 2 * 2 * 8
        assert all(r.rmse_rad >= 0 and r.trials_used == 3 for r in result.rows)
        keys = {(r.snr_db, r.method, r.param_group) for r in result.rows}
        assert len(keys) == len(result.rows)

    def test_group_is_mean_of_params(self, small_result):
        _, result = small_result
        per = {(s, m, p): v for s, m, p, v, _ in result.param_rows}
        for r in result.rows:
            names = ("theta_t", "phi_t", "theta_r", "phi_r") if r.param_group == "angle" \
                else ("gamma_t", "eta_t", "gamma_r", "eta_r")
            ms = sum(per[(r.snr_db, r.method, n)] ** 2 for n in names)
            assert r.rmse_rad == pytest.approx(np.sqrt(ms))

    def test_deterministic_and_parallel_safe(self, small_result):
        cfg, result = small_result
        again = run_sweep(cfg, n_jobs=2)
        assert format_csv(again) == format_csv(result)

    def test_csv_header(self, small_result):
        text = format_csv(small_result[1])
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        assert len(text.splitlines()) == 9

    def test_manifest(self, small_result):
        cfg, result = small_result
        doc = manifest(cfg, result)
        assert doc["config_sha256"] == cfg.digest()
        assert doc["master_seed"] == 11
        assert doc["software_version"]
        json.dumps(doc)

    def test_noiseless_single_trial(self):
        cfg = config_from_dict(small_doc(trials=1, snr_grid_db=[0]))
        result = run_sweep(cfg, noiseless=True)
        assert all(r.rmse_rad < 1e-6 for r in result.rows)

    def test_unidentifiable(self):
        doc = small_doc(M=2)
        with pytest.raises(ConfigError, match="M-1"):
            run_sweep(config_from_dict(doc))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failure_policy(self):
        # one sweep never converges, so every trial is excluded
        cfg = config_from_dict(small_doc(trials=2, snr_grid_db=[0], als={"max_iters": 1}))
        with pytest.raises(SweepError, match="snr_db=0"):
            run_sweep(cfg)


@pytest.mark.slow
def test_reference_protocol_row_count():
    cfg = load_config(bundled_config_path("paper_iv.json"))
    cfg.trials = 1
    result = run_sweep(cfg)
    assert len(result.rows) == 5 * 2 * 2
