import numpy as np
import pytest
from sklearn.base import clone

from emvs_parafac.cp_als import AlsOptions, align_factors, column_congruence, CpFactors
from emvs_parafac.nested import (
    BaselineParafac,
    IdentifiabilityError,
    NestedParafac,
    StageError,
    check_identifiability,
    complexity_estimate,
    estimate_baseline_parafac,
    estimate_nested,
    inner_decompose,
    outer_decompose,
    rearrange_to_inner,
)
from emvs_parafac.radar_model import build_factors, reference_scene, synthesize
from emvs_parafac.tensor_core import DimensionError, cp_reconstruct, ivec_row, khatri_rao

from conftest import crandn

OPTS = AlsOptions(rank=3, max_iters=2000)


def theorem_one_oracle(A_t, Q_t, A_r):
    """Y1[n, p, m] = sum_k A_r[n,k] Q_t[p,k] A_t[m,k] by explicit loops."""
    N, M, K = A_r.shape[0], A_t.shape[0], A_t.shape[1]
    Y1 = np.zeros((N, 6, M), dtype=complex)
    for n in range(N):
        for p in range(6):
            for m in range(M):
                Y1[n, p, m] = sum(A_r[n, k] * Q_t[p, k] * A_t[m, k] for k in range(K))
    return Y1


@pytest.fixture(scope="module")
def noiseless():
    scene = reference_scene()
    return scene, synthesize(scene, None, seed=0)


class TestRearrange:
    def test_theorem_one_small(self, rng):
        M = N = K = 2
        A_t, Q_t, A_r = crandn(rng, M, K), crandn(rng, 6, K), crandn(rng, N, K)
        A_tqr = khatri_rao(khatri_rao(A_t, Q_t), A_r)
        Y1 = rearrange_to_inner(A_tqr, M, N)
        assert np.max(np.abs(Y1 - theorem_one_oracle(A_t, Q_t, A_r))) < 1e-12
        assert np.max(np.abs(Y1 - cp_reconstruct(A_r, Q_t, A_t))) < 1e-12

    def test_ivec_row_form(self, rng):
        M, N, K = 3, 4, 2
        A_t, Q_t, A_r = crandn(rng, M, K), crandn(rng, 6, K), crandn(rng, N, K)
        v = khatri_rao(khatri_rao(A_t, Q_t), A_r).sum(axis=1)
        np.testing.assert_allclose(ivec_row(v, 6 * M, N), khatri_rao(A_t, Q_t) @ A_r.T, atol=1e-12)

    def test_rank_one(self, rng):
        a_t, q_t, a_r = crandn(rng, 3, 1), crandn(rng, 6, 1), crandn(rng, 4, 1)
        A_tqr = khatri_rao(khatri_rao(a_t, q_t), a_r)
        v = A_tqr[:, 0]
        mat = ivec_row(v, 18, 4)
        assert np.linalg.matrix_rank(mat) == 1
        np.testing.assert_allclose(mat, khatri_rao(a_t, q_t) @ a_r.T, atol=1e-12)

    def test_column_scales_are_absorbed(self, rng):
        M, N, K = 3, 4, 2
        A_t, Q_t, A_r = crandn(rng, M, K), crandn(rng, 6, K), crandn(rng, N, K)
        c = crandn(rng, K)
        Y1 = rearrange_to_inner(khatri_rao(khatri_rao(A_t, Q_t), A_r) * c, M, N)
        np.testing.assert_allclose(Y1, cp_reconstruct(A_r * c, Q_t, A_t), atol=1e-12)

    def test_zero(self):
        assert not rearrange_to_inner(np.zeros((6 * 2 * 3, 2)), 2, 3).any()

    def test_bad_rows(self):
        with pytest.raises(DimensionError):
            rearrange_to_inner(np.ones((35, 1)), 2, 3)


class TestIdentifiability:
    def test_reference_scene(self):
        assert check_identifiability(9, 10, 3, 200)

    def test_boundary(self):
        assert check_identifiability(9, 10, 8, 200).ok

    def test_boundary_plus_one(self):
        verdict = check_identifiability(9, 10, 9, 200)
        assert not verdict.ok
        assert [f[0] for f in verdict.failures()] == ["K <= M-1"]

    def test_details_listed(self):
        labels = [d[0] for d in check_identifiability(4, 5, 2, 10).details]
        assert len(labels) == 4

    def test_nonpositive(self):
        with pytest.raises(ValueError):
            check_identifiability(0, 3, 1, 1)


class TestStages:
    def test_outer_noiseless(self, noiseless):
        scene, data = noiseless
        outer = outer_decompose(data, 3, OPTS)
        A_t, Q_t, A_r, Q_r = build_factors(scene)
        ref = CpFactors(khatri_rao(khatri_rao(A_t, Q_t), A_r), Q_r, np.ones((200, 3)))
        est = CpFactors(outer.A_tqr_hat, outer.Q_r_hat, np.ones((200, 3)))
        aligned, _, _ = align_factors(est, ref)
        assert np.all(column_congruence(aligned, ref) > 0.999)
        assert outer.S_hat.shape == (3, 200)

    def test_outer_rank_zero(self, noiseless):
        with pytest.raises(ValueError):
            outer_decompose(noiseless[1], 0)

    def test_inner_noiseless(self, noiseless):
        scene, data = noiseless
        outer = outer_decompose(data, 3, OPTS)
        inner = inner_decompose(rearrange_to_inner(outer.A_tqr_hat, 9, 10), 3, OPTS)
        A_t, Q_t, A_r, _ = build_factors(scene)
        ref = CpFactors(A_r, Q_t, A_t)
        aligned, _, _ = align_factors(CpFactors(inner.A_r_hat, inner.Q_t_hat, inner.A_t_hat), ref)
        assert np.all(column_congruence(aligned, ref) > 0.999)

    def test_inner_kruskal_gate(self, rng):
        with pytest.raises(IdentifiabilityError):
            inner_decompose(crandn(rng, 2, 6, 2), 5)

    def test_inner_rank_one(self, rng):
        a_r, q_t, a_t = crandn(rng, 4, 1), crandn(rng, 6, 1), crandn(rng, 3, 1)
        Y1 = cp_reconstruct(a_r, q_t, a_t)
        inner = inner_decompose(Y1, 1, AlsOptions(rank=1, max_iters=50))
        assert inner.report.final_residual < 1e-12


class TestEstimateNested:
    def test_noiseless_exact(self, noiseless):
        scene, data = noiseless
        est = estimate_nested(data, 9, 10, 3, OPTS)
        E = np.vstack([e.as_array() for e in est])
        truth = scene.truth()
        order = [int(np.argmin(np.abs(truth[:, 0] - e[0]))) for e in E]
        assert sorted(order) == [0, 1, 2]
        np.testing.assert_allclose(E, truth[order], atol=1e-6)

    def test_greedy_pairing_flag(self, noiseless):
        scene, data = noiseless
        est = estimate_nested(data, 9, 10, 3, OPTS, pairing="greedy")
        assert len(est) == 3

    def test_rejected_before_als(self, noiseless):
        # K = 9 violates K <= M-1 and must fail fast
        with pytest.raises(IdentifiabilityError, match="M-1"):
            estimate_nested(noiseless[1], 9, 10, 9, AlsOptions(rank=9, max_iters=1))

    def test_geometry_mismatch(self, noiseless):
        with pytest.raises(DimensionError):
            estimate_nested(noiseless[1], 8, 10, 3)

    def test_stage_tag(self):
        # a zero tensor leaves the EMVS responses degenerate
        data = np.zeros((6 * 3 * 3, 6, 5), dtype=complex)
        with pytest.raises(StageError) as info:
            estimate_nested(data, 3, 3, 1, AlsOptions(rank=1, max_iters=3))
        assert info.value.stage == "receive-response"

    def test_outputs_in_domain(self):
        scene = reference_scene()
        for e in estimate_nested(synthesize(scene, 5.0, seed=3), 9, 10, 3):
            assert 0 <= e.theta_t < np.pi and 0 <= e.theta_r < np.pi
            assert 0 <= e.phi_t < 2 * np.pi and 0 <= e.phi_r < 2 * np.pi
            assert 0 <= e.gamma_t <= np.pi / 2 and 0 <= e.gamma_r <= np.pi / 2
            assert -np.pi <= e.eta_t < np.pi and -np.pi <= e.eta_r < np.pi


class TestBaseline:
    def test_noiseless_exact(self, noiseless):
        scene, data = noiseless
        est = estimate_baseline_parafac(data, 9, 10, 3, OPTS)
        E = np.vstack([e.as_array() for e in est])
        truth = scene.truth()
        order = [int(np.argmin(np.abs(truth[:, 0] - e[0]))) for e in E]
        np.testing.assert_allclose(E, truth[order], atol=1e-6)

    def test_identifiability(self, noiseless):
        with pytest.raises(IdentifiabilityError):
            estimate_baseline_parafac(noiseless[1], 9, 10, 9)


class TestComplexity:
    def test_reference_numbers(self):
        assert complexity_estimate(9, 10, 200, 3, 100) == 693_900

    def test_zero_targets(self):
        assert complexity_estimate(9, 10, 200, 0, 100) == 0

    def test_linear_in_sweeps(self):
        assert complexity_estimate(4, 5, 50, 2, 20) == 2 * complexity_estimate(4, 5, 50, 2, 10)


class TestEstimators:
    def test_get_params(self):
        est = NestedParafac(n_targets=3, n_tx=9, n_rx=10, pairing="greedy")
        params = est.get_params()
        assert params["pairing"] == "greedy" and params["n_tx"] == 9
        assert clone(est).get_params() == params
        assert "pairing" not in BaselineParafac().get_params()

    @pytest.mark.parametrize("cls", [NestedParafac, BaselineParafac])
    def test_fit_predict(self, cls, noiseless):
        scene, data = noiseless
        est = cls(n_targets=3, n_tx=9, n_rx=10, max_iter=2000)
        P = est.fit_predict(data)
        assert P.shape == (3, 8)
        assert len(est.targets_) == 3
        # raw ndarray input is accepted as well
        np.testing.assert_allclose(cls(**est.get_params()).fit_predict(data.tensor), P)
