import io

import numpy as np
import pytest

from robmatreg import data_bench, grmr, rmr
from robmatreg.exceptions import ContractViolation

from oracles import fd_gradient

RNG = np.random.default_rng


def random_state(seed, n=6, p=2, q=3):
    rng = RNG(seed)
    d = rng.standard_normal((n, p * q))
    return grmr.DecompositionState(
        d=d,
        x_clean=rng.standard_normal((n, p * q)),
        e_outliers=rng.standard_normal((n, p * q)),
        gamma_dual=rng.standard_normal((n, p * q)),
        x_hat=rng.standard_normal((n, p * q)),
        gamma_hat=rng.standard_normal((n, p * q)),
        e_hat=rng.standard_normal((n, p * q)),
    )


class TestGradE:
    def test_zero_at_quadratic_minimizer(self):
        st = random_state(1)
        mu = 1.7
        st.e_outliers = st.d - st.x_clean - st.gamma_dual / mu
        assert np.abs(grmr.grad_e(st, mu)).max() <= 1e-12

    def test_all_zero_state(self):
        st = random_state(2)
        st.x_clean = np.zeros_like(st.d)
        st.e_outliers = np.zeros_like(st.d)
        st.gamma_dual = np.zeros_like(st.d)
        mu = 2.5
        assert np.allclose(grmr.grad_e(st, mu), -mu * st.d)

    def test_matches_finite_differences(self):
        st = random_state(3)
        mu = 1.3

        def f(e):
            return 0.5 * mu * float(np.sum(
                (st.d - st.x_clean - st.gamma_dual / mu - e) ** 2))

        g = grmr.grad_e(st, mu)
        fd = fd_gradient(f, st.e_outliers, h=1e-5)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


class TestGradX:
    def test_zero_when_w_zero_and_coupled_minimizer(self):
        st = random_state(4)
        mu = 0.9
        st.x_clean = st.d - st.e_outliers - st.gamma_dual / mu
        w = np.zeros(st.d.shape[1])
        y = RNG(5).standard_normal(st.d.shape[0])
        g = grmr.grad_x(st, w, 0.3, y, box_c=2.0, mu=mu)
        assert np.abs(g).max() <= 1e-12

    def test_zero_box_reduces_to_coupling(self):
        st = random_state(6)
        mu = 1.1
        w = RNG(7).standard_normal(st.d.shape[1])
        y = RNG(8).standard_normal(st.d.shape[0])
        g = grmr.grad_x(st, w, 0.2, y, box_c=0.0, mu=mu)
        expected = mu * (st.x_clean + st.e_outliers + st.gamma_dual / mu - st.d)
        assert np.allclose(g, expected)

    def test_matches_finite_differences(self):
        st = random_state(9)
        mu, c, b = 0.7, 1.4, 0.25
        w = RNG(10).standard_normal(st.d.shape[1])
        y = RNG(11).standard_normal(st.d.shape[0])

        def f(x):
            fit = x @ w + b - y
            return c * float(fit @ fit) + 0.5 * mu * float(np.sum(
                (st.d - x - st.e_outliers - st.gamma_dual / mu) ** 2))

        g = grmr.grad_x(st, w, b, y, box_c=c, mu=mu)
        fd = fd_gradient(f, st.x_clean, h=1e-5)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5

    def test_shape_mismatch(self):
        st = random_state(12)
        with pytest.raises(ContractViolation):
            grmr.grad_x(st, np.zeros(3), 0.0, np.zeros(st.d.shape[0]),
                        box_c=1.0, mu=1.0)


class TestProxSteps:
    def test_fixed_point_with_zero_penalties(self):
        rng = RNG(13)
        n, w_len = 5, 6
        d = rng.standard_normal((n, w_len))
        x = rng.standard_normal((n, w_len))
        gam = rng.standard_normal((n, w_len))
        mu = 1.6
        e = d - x - gam / mu
        w = np.zeros(w_len)
        y = rng.standard_normal(n)
        st = grmr.DecompositionState(d=d, x_clean=x, e_outliers=e,
                                     gamma_dual=gam, x_hat=x, gamma_hat=gam,
                                     e_hat=e)
        out = grmr.prox_steps(st, 0.5 / mu, 0.5 / mu, 0.0, 0.0, w, 0.0, y,
                              box_c=2.0, mu=mu)
        assert np.abs(out.e_outliers - e).max() <= 1e-12
        assert np.abs(out.x_clean - x).max() <= 1e-12

    def test_huge_l1_weight_zeroes_outliers(self):
        st = random_state(14)
        w = RNG(15).standard_normal(st.d.shape[1])
        y = RNG(16).standard_normal(st.d.shape[0])
        out = grmr.prox_steps(st, 0.1, 0.01, 1e9, 0.0, w, 0.0, y,
                              box_c=1.0, mu=1.0)
        assert np.abs(out.e_outliers).max() == 0.0

    def test_scalar_closed_form(self):
        d = np.array([[2.0]])
        mu, lam, gam, c, b = 2.0, 0.8, 0.6, 1.5, 0.1
        w = np.array([0.4])
        y = np.array([1.0])
        st = grmr.DecompositionState(
            d=d, x_clean=np.array([[0.5]]), e_outliers=np.array([[0.3]]),
            gamma_dual=np.array([[0.2]]), x_hat=np.array([[0.5]]),
            gamma_hat=np.array([[0.2]]), e_hat=np.array([[0.3]]))
        t_e, t_x = 0.4, 0.2
        out = grmr.prox_steps(st, t_e, t_x, lam, gam, w, b, y, box_c=c, mu=mu)
        ge = mu * (0.3 + 0.5 + 0.2 / mu - 2.0)
        e_arg = 0.3 - t_e * ge
        e1 = np.sign(e_arg) * max(abs(e_arg) - t_e * lam, 0.0)
        gx = 2 * c * (0.5 * 0.4 + b - 1.0) * 0.4 + mu * (0.5 + e1 + 0.2 / mu - 2.0)
        x_arg = 0.5 - t_x * gx
        x1 = np.sign(x_arg) * max(abs(x_arg) - t_x * gam, 0.0)
        assert out.e_outliers[0, 0] == pytest.approx(e1, abs=1e-12)
        assert out.x_clean[0, 0] == pytest.approx(x1, abs=1e-12)


class TestSolveDecomposition:
    def _params(self, **kw):
        base = dict(rmr=rmr.RmrHyperParams(box_c=kw.pop("box_c", 1.0)),
                    gamma=0.0, l1_lambda=0.0, mu=1.0, inner_max_iters=500,
                    outer_max_iters=1, outer_tol=1e-6)
        base.update(kw)
        return grmr.GrmrHyperParams(**base)

    def test_zero_input_is_immediate_fixed_point(self):
        d = np.zeros((4, 6))
        model = rmr.RmrModel(w=np.zeros((2, 3)), b=0.0)
        dec = grmr.solve_decomposition(d, model, np.zeros(4), self._params())
        assert dec.converged and dec.iterations == 1
        assert np.abs(dec.x_clean).max() == 0.0
        assert np.abs(dec.e_outliers).max() == 0.0

    def test_penalty_free_split_is_reached(self):
        rng = RNG(17)
        d = rng.standard_normal((5, 6))
        model = rmr.RmrModel(w=np.zeros((2, 3)), b=0.0)
        params = self._params(box_c=1e-9)
        dec = grmr.solve_decomposition(d, model, np.zeros(5), params)
        assert dec.converged
        assert (np.linalg.norm(d - dec.x_clean - dec.e_outliers)
                <= 1e-6 * max(1.0, np.linalg.norm(d)))

    def test_sparse_plus_low_rank_recovery(self):
        rng = RNG(77)
        n, m, r = 60, 48, 3
        low = rng.standard_normal((n, r)) @ rng.standard_normal((r, m))
        sparse = np.zeros((n, m))
        mask = rng.random((n, m)) < 0.05
        sparse[mask] = 8.0 * rng.standard_normal(int(mask.sum()))
        d = low + sparse
        model = rmr.RmrModel(w=np.zeros((1, m)), b=0.0)
        params = self._params(box_c=1e-9, gamma=1.0,
                              l1_lambda=1.0 / np.sqrt(n),
                              inner_max_iters=3000, outer_tol=1e-7)
        dec = grmr.solve_decomposition(d, model, np.zeros(n), params)
        assert dec.converged
        assert np.linalg.norm(dec.x_clean - low) / np.linalg.norm(low) <= 0.1

    def test_constraint_residual_never_worse_than_start(self):
        rng = RNG(18)
        d = rng.standard_normal((6, 4))
        x0 = rng.standard_normal((6, 4))
        e0 = rng.standard_normal((6, 4))
        model = rmr.RmrModel(w=0.1 * np.ones((2, 2)), b=0.1)
        params = self._params(box_c=2.0, l1_lambda=0.3, gamma=0.2,
                              inner_max_iters=400)
        dec = grmr.solve_decomposition(d, model, np.zeros(6), params,
                                       init=(x0, e0))
        start = np.linalg.norm(d - x0 - e0)
        assert dec.constraint_residual <= start + 1e-12

    def test_restart_discipline(self):
        rng = RNG(19)
        d = rng.standard_normal((8, 6))
        model = rmr.RmrModel(w=rng.standard_normal((2, 3)), b=0.2)
        params = self._params(box_c=5.0, l1_lambda=0.2, gamma=0.1,
                              inner_max_iters=200, outer_tol=1e-12)
        dec = grmr.solve_decomposition(d, model, rng.standard_normal(8),
                                       params, collect_states=True)
        states = dec.states
        assert len(states) >= 2
        saw_restart = False
        for k in range(1, len(states)):
            st = states[k]
            if st.momentum_t == 1.0:
                prev = states[k - 1]
                if np.array_equal(st.x_hat, prev.x_clean) and \
                        np.array_equal(st.gamma_hat, prev.gamma_dual):
                    saw_restart = True
            assert st.momentum_t >= 1.0
            assert np.array_equal(st.e_hat, st.e_outliers)
        assert saw_restart


class TestStacking:
    def test_round_trip(self):
        rng = RNG(20)
        mats = [rng.standard_normal((3, 4)) for _ in range(5)]
        stacked, shape = grmr.stack_rows(mats)
        assert stacked.shape == (5, 12) and shape == (3, 4)
        back = grmr.unstack_rows(stacked, shape)
        for a, b in zip(mats, back):
            assert np.array_equal(a, b)

    def test_mismatched_rejected(self):
        with pytest.raises(ContractViolation):
            grmr.stack_rows([np.zeros((2, 2)), np.zeros((3, 2))])


class TestFitGrmr:
    def test_zero_outer_iterations_is_plain_fit(self):
        rng = RNG(21)
        w_true = np.outer(rng.standard_normal(8), rng.standard_normal(8))
        spec = data_bench.NoiseSpec(label_noise_scale=0.05, seed=22)
        samples = data_bench.generate_synthetic(w_true, 0.0, 50, spec)
        params = grmr.GrmrHyperParams(
            rmr=rmr.RmrHyperParams(tau=2.0, max_iters=200),
            outer_max_iters=0)
        res = grmr.fit_grmr(samples, params=params)
        plain = rmr.fit(samples, params.rmr)
        assert np.array_equal(res.model.w, plain.model.w)
        assert res.model.b == plain.model.b
        assert np.abs(res.e_outliers).max() == 0.0

    def test_clean_data_large_l1_matches_plain_fit(self):
        w_true = data_bench.generate_shape("square", 16)
        spec = data_bench.NoiseSpec(label_noise_scale=0.1, seed=7)
        samples = data_bench.generate_synthetic(w_true, 0.0, 120, spec)
        rp = rmr.RmrHyperParams(tau=20.0, max_iters=400, primal_tol=1e-4)
        plain = rmr.fit(samples, rp)
        params = grmr.GrmrHyperParams(rmr=rp, gamma=0.0, l1_lambda=1e9,
                                      mu=1.3e5, inner_max_iters=2000,
                                      outer_max_iters=2, outer_tol=1e-9)
        res = grmr.fit_grmr(samples, params=params)
        assert np.linalg.norm(res.model.w - plain.model.w) <= 1e-3
        assert np.abs(res.e_outliers).max() == 0.0

    def test_corrupted_run_descends_and_does_not_hurt(self):
        w_true = data_bench.generate_shape("square", 16)
        spec = data_bench.NoiseSpec(label_noise_scale=0.1,
                                    corrupt_fraction=0.10, corrupt_block=6,
                                    seed=1000)
        samples = data_bench.generate_synthetic(w_true, 0.0, 120, spec)
        rp = rmr.RmrHyperParams(tau=20.0, max_iters=400, primal_tol=1e-4)
        plain = rmr.fit(samples, rp)
        params = grmr.GrmrHyperParams(rmr=rp, gamma=0.0, l1_lambda=100.0,
                                      mu=1.0, inner_max_iters=2000,
                                      outer_max_iters=3, outer_tol=1e-5)
        res = grmr.fit_grmr(samples, params=params)
        objs = res.objective_full
        assert len(objs) == 4
        for a, b in zip(objs, objs[1:]):
            assert b <= a + 1e-8 * max(1.0, abs(a))
        rae_rmr = data_bench.rae(plain.model.w, w_true)
        rae_grmr = data_bench.rae(res.model.w, w_true)
        assert rae_grmr <= rae_rmr

    def test_trace_rows(self):
        rng = RNG(23)
        w_true = np.outer(rng.standard_normal(7), rng.standard_normal(7))
        spec = data_bench.NoiseSpec(label_noise_scale=0.05, seed=24)
        samples = data_bench.generate_synthetic(w_true, 0.0, 40, spec)
        sink = io.StringIO()
        params = grmr.GrmrHyperParams(
            rmr=rmr.RmrHyperParams(tau=1.0, max_iters=100),
            gamma=0.1, l1_lambda=0.5, mu=1.0, inner_max_iters=50,
            outer_max_iters=2, outer_tol=1e-7)
        grmr.fit_grmr(samples, params=params, trace_sink=sink)
        lines = sink.getvalue().strip().splitlines()
        assert lines[0] == ("outer_iter,inner_iter,objective_relaxed,"
                            "objective_full,constraint_residual,combined_c,"
                            "restarted")
        assert len(lines) > 2
        cells = lines[1].split(",")
        assert len(cells) == 7 and cells[0] == "1"

    def test_plain_matrices_require_labels(self):
        mats = [np.zeros((2, 2))]
        with pytest.raises(ContractViolation):
            grmr.fit_grmr(mats, params=grmr.GrmrHyperParams())
