import os
import subprocess
import sys

import numpy as np
import pytest

from robmatreg import _kernels


def random_qp_arrays(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, max(n, 2)))
    gram = a @ a.T
    z = rng.standard_normal(n)
    eps = float(rng.uniform(0.0, 0.2))
    return gram, eps - z, eps + z


@pytest.mark.skipif(not _kernels.NUMBA_ENABLED,
                    reason="numba unavailable or disabled")
class TestPathAgreement:
    @pytest.mark.parametrize("seed,n", [(0, 3), (1, 5), (2, 8), (3, 12)])
    def test_identical_iterates(self, seed, n):
        gram, lp, ln = random_qp_arrays(seed, n)
        box, tol, cap = 7.5, 1e-8, 200000

        beta_a = np.zeros(n)
        grad_a = np.zeros(n)
        tr_a = np.zeros(1)
        steps_a, gap_a, ok_a = _kernels.smo_pair_loop(
            gram, lp, ln, box, tol, cap, beta_a, grad_a, tr_a, False)

        beta_b = np.zeros(n)
        grad_b = np.zeros(n)
        tr_b = np.zeros(1)
        steps_b, gap_b, ok_b = _kernels._smo_pair_loop_numpy(
            gram, lp, ln, box, tol, cap, beta_b, grad_b, tr_b, False)

        assert ok_a and ok_b
        assert steps_a == steps_b
        assert np.array_equal(beta_a, beta_b)
        assert gap_a == gap_b

    def test_objective_traces_agree(self):
        gram, lp, ln = random_qp_arrays(9, 6)
        cap = 10000
        beta_a = np.zeros(6)
        grad_a = np.zeros(6)
        tr_a = np.zeros(cap + 1)
        steps_a, _, _ = _kernels.smo_pair_loop(
            gram, lp, ln, 3.0, 1e-8, cap, beta_a, grad_a, tr_a, True)
        beta_b = np.zeros(6)
        grad_b = np.zeros(6)
        tr_b = np.zeros(cap + 1)
        steps_b, _, _ = _kernels._smo_pair_loop_numpy(
            gram, lp, ln, 3.0, 1e-8, cap, beta_b, grad_b, tr_b, True)
        assert steps_a == steps_b
        assert np.allclose(tr_a[:steps_a + 1], tr_b[:steps_b + 1],
                           rtol=0, atol=1e-12)


class TestEnvFlag:
    def test_disable_flag_selects_numpy_path(self):
        env = dict(os.environ)
        env[_kernels.ENV_FLAG] = "1"
        code = (
            "import numpy as np\n"
            "import robmatreg\n"
            "from robmatreg import _kernels\n"
            "assert not robmatreg.NUMBA_ENABLED\n"
            "assert _kernels.smo_pair_loop is _kernels._smo_pair_loop_numpy\n"
            "qp = robmatreg.DualQp(gram=np.eye(2),"
            " lin_pos=np.array([-1.0, 1.0]),"
            " lin_neg=np.array([1.0, -1.0]), box=10.0)\n"
            "st = robmatreg.solve(qp)\n"
            "assert np.allclose(st.beta, [1.0, -1.0])\n"
        )
        subprocess.run([sys.executable, "-c", code], env=env, check=True)

    def test_default_uses_numba_when_available(self):
        code = (
            "import robmatreg\n"
            "from robmatreg import _kernels\n"
            "import importlib.util\n"
            "has_numba = importlib.util.find_spec('numba') is not None\n"
            "assert robmatreg.NUMBA_ENABLED == has_numba\n"
        )
        env = dict(os.environ)
        env.pop(_kernels.ENV_FLAG, None)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)
