import numpy as np
import pytest

from hybridssm.mixing import hankel_profile
from hybridssm.ssm_core import (
    GateTrack,
    GkaInfoState,
    ShermanMorrisonGain,
    SsmKind,
    SsmState,
    chebyshev_residual_bound,
    chebyshev_solve,
    default_spectral_bounds,
    gka_gain,
    gka_info_update,
    gka_output,
    gka_recurrence_equivalence,
    make_default_gates,
    ssm_forward,
    ssm_io_matrix,
    ssm_step,
    zero_info_state,
)


def rand_kvq(T, d_k, d_v, seed=0, unit_keys=False):
    rng = np.random.default_rng(seed)
    k = rng.standard_normal((T, d_k))
    if unit_keys:
        k /= np.linalg.norm(k, axis=1, keepdims=True)
    return k, rng.standard_normal((T, d_v)), rng.standard_normal((T, d_k))


class TestSsmStep:
    def test_mamba2_no_decay_accumulates_outer_products(self):
        T, d_k, d_v = 6, 3, 2
        k, v, _ = rand_kvq(T, d_k, d_v, seed=1)
        state = SsmState(np.zeros((d_v, d_k)))
        for t in range(T):
            state = ssm_step(SsmKind.MAMBA2, state, k[t], v[t], gamma=1.0)
        expected = sum(np.outer(v[t], k[t]) for t in range(T))
        assert np.allclose(state.s, expected, atol=1e-13)

    def test_gdn_erase_preserves_orthogonal_direction(self):
        # orthonormal keys: erase along k2 leaves the k1 slot untouched
        k1 = np.array([1.0, 0.0, 0.0])
        k2 = np.array([0.0, 1.0, 0.0])
        v1 = np.array([2.0, -1.0])
        v2 = np.array([0.5, 3.0])
        state = SsmState(np.zeros((2, 3)))
        state = ssm_step(SsmKind.GDN, state, k1, v1, gamma=1.0, beta=1.0)
        state = ssm_step(SsmKind.GDN, state, k2, v2, gamma=1.0, beta=1.0)
        assert np.allclose(state.s, np.outer(v1, k1) + np.outer(v2, k2), atol=1e-14)
        assert np.allclose(state.s @ k1, v1, atol=1e-14)

    def test_gdn_scalar_two_steps_hand_unrolled(self):
        # d_k = d_v = 1, k = 1: S' = S * gamma * (1 - beta) + beta * v
        gamma, beta = 0.5, 0.7
        state = SsmState(np.zeros((1, 1)))
        state = ssm_step(SsmKind.GDN, state, [1.0], [1.0], gamma=gamma, beta=beta)
        assert state.s[0, 0] == pytest.approx(0.7)
        state = ssm_step(SsmKind.GDN, state, [1.0], [2.0], gamma=gamma, beta=beta)
        assert state.s[0, 0] == pytest.approx(0.7 * 0.5 * 0.3 + 0.7 * 2.0)

    def test_gate_range_enforced(self):
        state = SsmState(np.zeros((1, 1)))
        with pytest.raises(ValueError):
            ssm_step(SsmKind.MAMBA2, state, [1.0], [1.0], gamma=0.0)
        with pytest.raises(ValueError):
            ssm_step(SsmKind.GDN, state, [1.0], [1.0], gamma=0.5, beta=1.5)

    def test_dimension_mismatch_rejected(self):
        state = SsmState(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            ssm_step(SsmKind.MAMBA2, state, np.ones(4), np.ones(2))

    def test_gka_requires_gain(self):
        state = SsmState(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            ssm_step(SsmKind.GKA, state, np.ones(3), np.ones(2))


class TestGkaInfoUpdate:
    def test_beta_zero_filters_token(self):
        info = GkaInfoState(h=np.eye(2), u=np.ones((3, 2)))
        out = gka_info_update(info, np.array([5.0, 1.0]), np.ones(3), 1.0, 0.0)
        assert np.array_equal(out.h, info.h)
        assert np.array_equal(out.u, info.u)

    def test_additive_accumulation(self):
        k1, k2 = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
        info = zero_info_state(1, 2)
        info = gka_info_update(info, k1, np.ones(1), 1.0, 1.0)
        info = gka_info_update(info, k2, np.ones(1), 1.0, 1.0)
        assert np.allclose(info.h, np.outer(k1, k1) + np.outer(k2, k2), atol=1e-15)

    def test_matches_unrolled_closed_form(self):
        # oracle: direct sum  sum_i beta_i (prod_{j>i} gamma_j) k_i k_i^T
        T, d_k = 5, 3
        rng = np.random.default_rng(3)
        k = rng.standard_normal((T, d_k))
        v = rng.standard_normal((T, 2))
        gamma, beta = 0.9, 0.5
        info = zero_info_state(2, d_k)
        for t in range(T):
            info = gka_info_update(info, k[t], v[t], gamma, beta)
        expected_h = np.zeros((d_k, d_k))
        expected_u = np.zeros((2, d_k))
        for i in range(T):
            w = beta * gamma ** (T - 1 - i)
            expected_h += w * np.outer(k[i], k[i])
            expected_u += w * np.outer(v[i], k[i])
        assert np.allclose(info.h, expected_h, atol=1e-14)
        assert np.allclose(info.u, expected_u, atol=1e-14)

    def test_symmetry_preserved_exactly(self):
        rng = np.random.default_rng(4)
        info = zero_info_state(2, 4)
        for t in range(20):
            info = gka_info_update(info, rng.standard_normal(4), rng.standard_normal(2),
                                   rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0))
            assert np.array_equal(info.h, info.h.T)

    def test_beta_one_recovers_ungated_form(self):
        rng = np.random.default_rng(5)
        k, v = rng.standard_normal(3), rng.standard_normal(2)
        info = GkaInfoState(h=np.eye(3) * 0.5, u=rng.standard_normal((2, 3)))
        out = gka_info_update(info, k, v, 0.8, 1.0)
        assert np.array_equal(out.h, 0.8 * info.h + np.outer(k, k))
        assert np.array_equal(out.u, 0.8 * info.u + np.outer(v, k))

    def test_asymmetric_h_rejected(self):
        h = np.array([[1.0, 0.5], [0.1, 1.0]])
        with pytest.raises(ValueError):
            GkaInfoState(h=h, u=np.zeros((1, 2)))


class TestGkaGain:
    def test_zero_history_scales_key(self):
        info = zero_info_state(1, 3)
        k = np.array([1.0, -2.0, 0.5])
        g = gka_gain(info, k, beta_t=0.7, lam_t=2.0)
        assert np.allclose(g, 0.7 * k / 2.0, atol=1e-15)

    def test_rank_one_history_halves_unit_key(self):
        # oracle: (k k^T + I)^{-1} k = k / (1 + ||k||^2) by Sherman-Morrison
        k = np.array([0.6, 0.8])
        info = GkaInfoState(h=np.outer(k, k), u=np.zeros((1, 2)))
        g = gka_gain(info, k, beta_t=1.0, lam_t=1.0)
        assert np.allclose(g, k / 2.0, atol=1e-14)

    def test_sherman_morrison_matches_dense_path(self):
        # oracle: dense matrix inverse each step
        T, d_k = 10, 4
        rng = np.random.default_rng(6)
        lam = 0.8
        sm = ShermanMorrisonGain(d_k, lam)
        h = np.zeros((d_k, d_k))
        for t in range(T):
            k = rng.standard_normal(d_k)
            beta = rng.uniform(0.2, 1.0)
            h = h + beta * np.outer(k, k)
            g_inc = sm.update(k, beta)
            g_dense = beta * np.linalg.inv(h + lam * np.eye(d_k)) @ k
            assert np.max(np.abs(g_inc - g_dense)) < 1e-10
            assert np.max(np.abs(sm.phi - np.linalg.inv(h + lam * np.eye(d_k)))) < 1e-10

    def test_nonpositive_lam_rejected(self):
        with pytest.raises(ValueError):
            gka_gain(zero_info_state(1, 2), np.ones(2), 1.0, 0.0)
        with pytest.raises(ValueError):
            ShermanMorrisonGain(2, -1.0)


class TestChebyshev:
    def test_point_spectrum_exact_in_one_iteration(self):
        lam = 2.5
        q = np.array([1.0, -3.0, 0.5])
        x, hist = chebyshev_solve(np.zeros((3, 3)), lam, q, r=1, spectral_bounds=(lam, lam))
        assert np.allclose(x, q / lam, atol=1e-15)
        assert hist[-1] < 1e-14

    def test_diag_system_converges(self):
        # oracle: dense solve
        h = np.diag([1.0, 2.0, 3.0])
        lam = 0.1
        q = np.array([1.0, 1.0, 1.0])
        x, _ = chebyshev_solve(h, lam, q, r=30, spectral_bounds=(1.1, 3.1))
        exact = np.linalg.solve(h + lam * np.eye(3), q)
        assert np.linalg.norm(x - exact) <= 1e-8

    def test_operator_form_matches_dense_form(self):
        rng = np.random.default_rng(7)
        g = rng.standard_normal((5, 5))
        h = g @ g.T
        q = rng.standard_normal(5)
        lam = 0.5
        bounds = default_spectral_bounds(h, lam)
        x_dense, hist_dense = chebyshev_solve(h, lam, q, r=20, spectral_bounds=bounds)
        x_op, hist_op = chebyshev_solve(lambda p: h @ p, lam, q, r=20, spectral_bounds=bounds)
        assert np.allclose(x_dense, x_op, atol=1e-12)
        assert np.allclose(hist_dense, hist_op, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_residuals_respect_classical_bound(self, seed):
        # oracle: evaluate the interval bound per iteration
        rng = np.random.default_rng(seed)
        d = 8
        g = rng.standard_normal((d, d))
        h = g @ g.T
        lam = 0.2 * np.linalg.norm(h)
        a, b = default_spectral_bounds(h, lam)
        q = rng.standard_normal(d)
        r = 25
        _, hist = chebyshev_solve(h, lam, q, r=r, spectral_bounds=(a, b))
        bound = chebyshev_residual_bound(a, b, r) * np.linalg.norm(q)
        assert np.all(hist <= 1.1 * bound + 1e-12)
        kappa = b / a
        rho = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
        geo = 2.0 * rho ** np.arange(1, r + 1) * np.linalg.norm(q)
        assert np.all(hist[5:] <= geo[5:])  # eventually dominated by the geometric rate

    @pytest.mark.parametrize("seed", range(3))
    def test_monotone_accuracy_in_iterations(self, seed):
        rng = np.random.default_rng(100 + seed)
        g = rng.standard_normal((6, 6))
        h = g @ g.T
        lam = 0.15 * np.linalg.norm(h)
        q = rng.standard_normal(6)
        bounds = default_spectral_bounds(h, lam)
        for r in (1, 5, 10, 20):
            _, h1 = chebyshev_solve(h, lam, q, r=r, spectral_bounds=bounds)
            _, h2 = chebyshev_solve(h, lam, q, r=r + 10, spectral_bounds=bounds)
            assert h2[-1] <= h1[-1]

    def test_invalid_bounds_rejected(self):
        q = np.ones(2)
        with pytest.raises(ValueError):
            chebyshev_solve(np.eye(2), 1.0, q, r=5, spectral_bounds=(0.0, 1.0))
        with pytest.raises(ValueError):
            chebyshev_solve(np.eye(2), 1.0, q, r=5, spectral_bounds=(2.0, 1.0))
        with pytest.raises(ValueError):
            chebyshev_solve(np.eye(2), 1.0, q, r=0)
        with pytest.raises(ValueError):
            chebyshev_solve(lambda p: p, 1.0, q, r=5)  # operator form needs bounds

    def test_divergence_reported_with_iteration_index(self):
        # bounds wildly below the true spectrum make the step sizes huge and
        # the iterates overflow; the failure must name an iteration
        h = 1e4 * np.eye(4)
        q = np.ones(4)
        with pytest.raises(FloatingPointError, match="iteration"):
            with np.errstate(over="ignore", invalid="ignore"):
                chebyshev_solve(h, 1.0, q, r=400, spectral_bounds=(1e-300, 2e-300))


class TestGkaOutput:
    def test_zero_history(self):
        rng = np.random.default_rng(8)
        u = rng.standard_normal((3, 4))
        info = GkaInfoState(h=np.zeros((4, 4)), u=u)
        q = rng.standard_normal(4)
        lam = 0.7
        assert np.allclose(gka_output(info, q, lam), u @ q / lam, atol=1e-13)

    def test_zero_info_state_reads_zero(self):
        info = GkaInfoState(h=np.eye(3), u=np.zeros((2, 3)))
        for r in (1, 5, 30):
            assert np.array_equal(gka_output(info, np.ones(3), 0.5, "chebyshev", r), np.zeros(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_chebyshev_converges_to_exact(self, seed):
        rng = np.random.default_rng(seed)
        d_k = 6
        g = rng.standard_normal((d_k, d_k))
        h = g @ g.T
        info = GkaInfoState(h=h, u=rng.standard_normal((3, d_k)))
        q = rng.standard_normal(d_k)
        lam = 0.1 * np.linalg.norm(h)
        exact = gka_output(info, q, lam, "exact")
        approx = gka_output(info, q, lam, "chebyshev", r=60)
        assert np.max(np.abs(exact - approx)) < 1e-6

    def test_unknown_solver_rejected(self):
        with pytest.raises(ValueError):
            gka_output(zero_info_state(1, 2), np.ones(2), 1.0, solver="cg")


class TestRecurrenceEquivalence:
    @pytest.mark.parametrize("seed", range(6))
    def test_identity_decay_fixed_lam(self, seed):
        T, d_k, d_v = 8, 4, 3
        k, v, q = rand_kvq(T, d_k, d_v, seed=seed)
        rng = np.random.default_rng(1000 + seed)
        gates = GateTrack(gamma=np.ones(T), beta=rng.uniform(0.2, 1.0, T),
                          lam=np.full(T, 0.6))
        assert gka_recurrence_equivalence(k, v, q, gates) < 1e-9

    def test_beta_zero_gives_zero_both_ways(self):
        T = 5
        k, v, q = rand_kvq(T, 3, 2, seed=9)
        gates = GateTrack(gamma=np.ones(T), beta=np.zeros(T), lam=np.full(T, 0.4))
        assert gka_recurrence_equivalence(k, v, q, gates) == 0.0

    def test_single_step(self):
        k, v, q = rand_kvq(1, 3, 2, seed=10)
        gates = GateTrack(gamma=np.ones(1), beta=np.array([0.8]), lam=np.array([0.5]))
        assert gka_recurrence_equivalence(k, v, q, gates) < 1e-12

    def test_closed_form_path_with_decay(self):
        # with gamma < 1 the recurrence and info forms genuinely differ;
        # the function must still run and report the gap
        T = 6
        k, v, q = rand_kvq(T, 3, 2, seed=11)
        gates = GateTrack(gamma=np.full(T, 0.9), beta=np.full(T, 0.7), lam=np.full(T, 0.5))
        diff = gka_recurrence_equivalence(k, v, q, gates)
        assert np.isfinite(diff)

    def test_requires_fixed_lam_track(self):
        k, v, q = rand_kvq(3, 2, 2, seed=12)
        gates = GateTrack(gamma=np.ones(3), beta=np.ones(3))
        with pytest.raises(ValueError):
            gka_recurrence_equivalence(k, v, q, gates)


class TestIoMatrixProbe:
    def test_mamba2_scalar_all_ones(self):
        # gamma = 1, scalar k = q = 1: read-after-write lower-triangular ones
        T = 5
        ones = np.ones((T, 1))
        gates = GateTrack(gamma=np.ones(T), beta=np.ones(T))
        m = ssm_io_matrix(SsmKind.MAMBA2, ones, ones, gates)
        assert np.allclose(m, np.tril(np.ones((T, T))), atol=1e-13)

    @pytest.mark.parametrize("kind", [SsmKind.MAMBA2, SsmKind.GDN, SsmKind.GKA])
    def test_semiseparability_bounded_by_dk(self, kind):
        T, d_k = 12, 3
        rng = np.random.default_rng(13)
        keys = rng.standard_normal((T, d_k))
        queries = rng.standard_normal((T, d_k))
        gates = GateTrack(gamma=rng.uniform(0.6, 1.0, T), beta=rng.uniform(0.3, 1.0, T),
                          lam=np.full(T, 0.5))
        m = ssm_io_matrix(kind, keys, queries, gates)
        assert hankel_profile(np.tril(m), rank_tol=1e-7).n_min <= d_k

    def test_gdn_beta_zero_degenerates_to_scaled_mamba2(self):
        # beta = 0 writes nothing: probed matrix is exactly zero, and for
        # small beta the probe is beta * Mamba-2 probe + O(beta^2)
        T, d_k = 6, 3
        rng = np.random.default_rng(14)
        keys = rng.standard_normal((T, d_k))
        queries = rng.standard_normal((T, d_k))
        gamma = rng.uniform(0.5, 1.0, T)
        gates0 = GateTrack(gamma=gamma, beta=np.zeros(T))
        assert np.array_equal(ssm_io_matrix(SsmKind.GDN, keys, queries, gates0), np.zeros((T, T)))
        m_m2 = ssm_io_matrix(SsmKind.MAMBA2, keys, queries, GateTrack(gamma=gamma, beta=np.ones(T)))
        eps = 1e-6
        m_gdn = ssm_io_matrix(SsmKind.GDN, keys, queries, GateTrack(gamma=gamma, beta=np.full(T, eps)))
        assert np.max(np.abs(m_gdn - eps * m_m2)) < 100 * eps ** 2

    def test_probe_matches_sequential_forward(self):
        # oracle: sequential forward per basis input, via ssm_step
        T, d_k = 5, 2
        rng = np.random.default_rng(15)
        keys = rng.standard_normal((T, d_k))
        queries = rng.standard_normal((T, d_k))
        gamma = rng.uniform(0.5, 1.0, T)
        beta = rng.uniform(0.3, 1.0, T)
        gates = GateTrack(gamma=gamma, beta=beta)
        probed = ssm_io_matrix(SsmKind.GDN, keys, queries, gates)
        manual = np.zeros((T, T))
        for j in range(T):
            state = SsmState(np.zeros((1, d_k)))
            for t in range(T):
                v = np.array([1.0 if t == j else 0.0])
                state = ssm_step(SsmKind.GDN, state, keys[t], v, gamma=gamma[t], beta=beta[t])
                manual[t, j] = (state.s @ queries[t])[0]
        assert np.allclose(probed, manual, atol=1e-12)


class TestForwardAndGates:
    def test_default_gates_deterministic_and_in_range(self):
        x = np.random.default_rng(16).standard_normal((10, 4))
        g1 = make_default_gates(x)
        g2 = make_default_gates(x)
        assert np.array_equal(g1.gamma, g2.gamma) and np.array_equal(g1.beta, g2.beta)
        assert np.all((g1.gamma > 0) & (g1.gamma <= 1))
        assert np.all((g1.beta >= 0) & (g1.beta <= 1))

    def test_gate_track_validation(self):
        with pytest.raises(ValueError):
            GateTrack(gamma=np.array([0.0]), beta=np.array([0.5]))
        with pytest.raises(ValueError):
            GateTrack(gamma=np.array([0.5]), beta=np.array([-0.1]))
        with pytest.raises(ValueError):
            GateTrack(gamma=np.array([0.5]), beta=np.array([0.5]), lam=np.array([0.0]))

    def test_forward_final_state_matches_steps(self):
        T, d_k, d_v = 7, 3, 2
        k, v, q = rand_kvq(T, d_k, d_v, seed=17)
        rng = np.random.default_rng(18)
        gates = GateTrack(gamma=rng.uniform(0.5, 1.0, T), beta=rng.uniform(0.3, 1.0, T))
        y, s = ssm_forward(SsmKind.GDN, k, v, q, gates)
        state = SsmState(np.zeros((d_v, d_k)))
        for t in range(T):
            state = ssm_step(SsmKind.GDN, state, k[t], v[t], gamma=gates.gamma[t], beta=gates.beta[t])
        assert np.allclose(s, state.s, atol=1e-12)
        assert np.allclose(y[-1], state.s @ q[-1], atol=1e-12)

    def test_gka_forward_adaptive_lambda_runs(self):
        T = 6
        k, v, q = rand_kvq(T, 4, 3, seed=19)
        gates = GateTrack(gamma=np.full(T, 0.95), beta=np.full(T, 0.8))
        y, info = ssm_forward(SsmKind.GKA, k, v, q, gates, alpha=0.05)
        assert y.shape == (T, 3)
        assert isinstance(info, GkaInfoState)

    def test_gka_forward_filtered_prefix_reads_zero(self):
        # beta = 0 over a prefix leaves the info pair empty there; the
        # adaptive regularizer is 0 and the outputs must be exactly zero
        T = 6
        k, v, q = rand_kvq(T, 4, 3, seed=20)
        beta = np.array([0.0, 0.0, 0.0, 0.8, 0.8, 0.8])
        gates = GateTrack(gamma=np.ones(T), beta=beta)
        for solver in ("exact", "chebyshev"):
            y, _ = ssm_forward(SsmKind.GKA, k, v, q, gates, solver=solver, r=5)
            assert np.array_equal(y[:3], np.zeros((3, 3)))
            assert np.all(np.isfinite(y))
