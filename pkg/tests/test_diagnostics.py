import json
import warnings

import numpy as np
import pytest

from epsel import (
    build_measurement,
    instrumented_run,
    lemma1_check,
    orthogonality_report,
    predict_error_covariance,
    run_ep,
    sample_noise,
    sample_signal,
)
from epsel.diagnostics import average_traces
from epsel.ensembles import limiting_spectrum
from epsel.exceptions import DimensionMismatchError, InvalidVarianceError


def setup(prior, N=256, sigma2=0.01, seed=0, ensemble="row_orthogonal"):
    ms, xs, ws = np.random.SeedSequence(seed).spawn(3)
    model = build_measurement(ensemble, N // 2, N, sigma2, ms)
    return model, sample_signal(prior, N, xs), sample_noise(N // 2, sigma2, ws)


@pytest.fixture(scope="module")
def sparse_case():
    from epsel import PriorSpec
    prior = PriorSpec(0.1)
    model, x, w = setup(prior, seed=4)
    return prior, model, x, w


class TestInstrumentedRun:
    def test_matches_run_ep(self, sparse_case):
        prior, model, x, w = sparse_case
        tr = instrumented_run(model, prior, x, w, 6, keep_vectors=True)
        ep = run_ep(model, prior, model.apply(x) + w, x, T=6, early_stop_tol=0, keep_history=True)
        for t, x_ab in enumerate(ep.x_ab_history):
            np.testing.assert_allclose(x - x_ab, tr.vectors["h"][:, t], atol=1e-9, rtol=0)
        np.testing.assert_allclose(tr.mse, ep.mse, atol=1e-9, rtol=0)
        np.testing.assert_allclose(tr.v_ab, ep.v_ab, rtol=1e-14)

    @pytest.mark.parametrize("ensemble", ["row_orthogonal", "iid_gaussian"])
    def test_reduced_equals_full_v(self, sparse_case, ensemble):
        prior = sparse_case[0]
        model, x, w = setup(prior, N=128, seed=8, ensemble=ensemble)
        a = instrumented_run(model, prior, x, w, 4)
        b = instrumented_run(model, prior, x, w, 4, full_v=True, keep_vectors=True)
        for k in ("qq", "bb", "mm", "hh", "hq", "bm", "mu", "nu", "mse"):
            np.testing.assert_allclose(getattr(a, k), getattr(b, k), atol=1e-12, err_msg=k)
        # b_0 = V^H x keeps the norm
        assert abs(np.vdot(b.vectors["b"][:, 0], b.vectors["b"][:, 0]).real
                   - np.vdot(x, x).real) < 1e-9
        np.testing.assert_allclose(b.bb, b.qq[:4, :4], atol=1e-9)

    def test_gram_tables_hermitian(self, sparse_case):
        prior, model, x, w = sparse_case
        tr = instrumented_run(model, prior, x, w, 5)
        for k in ("qq", "bb", "mm", "hh"):
            g = getattr(tr, k)
            np.testing.assert_allclose(g, g.conj().T, atol=1e-14, err_msg=k)
            assert np.all(np.real(np.diag(g)) >= 0)
            assert np.min(np.linalg.eigvalsh(g)) > -1e-12
        assert abs(tr.qq[0, 0] - np.vdot(x, x).real / x.size) < 1e-15

    def test_mu_is_projection_residual(self, sparse_case):
        prior, model, x, w = sparse_case
        tr = instrumented_run(model, prior, x, w, 4, keep_vectors=True)
        Q = tr.vectors["q"]
        for t in range(Q.shape[1]):
            if t == 0:
                resid = Q[:, 0]
            else:
                coef = np.linalg.lstsq(Q[:, :t], Q[:, t], rcond=None)[0]
                resid = Q[:, t] - Q[:, :t] @ coef
            assert tr.mu[t] == pytest.approx(np.vdot(resid, resid).real / x.size, rel=1e-8)

    def test_gaussian_prior_keeps_q0(self, gaussian_prior):
        model, x, w = setup(gaussian_prior, seed=1)
        with pytest.warns(RuntimeWarning, match="nearly singular"):
            tr = instrumented_run(model, gaussian_prior, x, w, 3, keep_vectors=True)
        for t in range(4):
            np.testing.assert_array_equal(tr.vectors["q"][:, t], x)

    def test_dimension_errors(self, sparse_case):
        prior, model, x, w = sparse_case
        with pytest.raises(DimensionMismatchError):
            instrumented_run(model, prior, x[:-1], w, 2)
        with pytest.raises(DimensionMismatchError):
            instrumented_run(model, prior, x, w[:-1], 2)


@pytest.fixture(scope="module")
def preds(sparse_case):
    sp = limiting_spectrum("row_orthogonal", 0.5)
    return {T: predict_error_covariance(sparse_case[0], sp, 0.01, T, samples=100_000)
            for T in (1, 3)}


class TestOrthogonalityReport:
    def test_single_iteration_rows(self, sparse_case, preds):
        prior, model, x, w = sparse_case
        rep = orthogonality_report(instrumented_run(model, prior, x, w, 1), preds[1])
        assert rep.families == ["hq", "bm", "qq"]
        idx = {(c.identity, c.indices) for c in rep.checks}
        assert idx == {("hq", (0, 0)), ("hq", (0, 1)), ("bm", (0, 0)),
                       ("qq", (0, 0)), ("qq", (1, 0)), ("qq", (1, 1))}

    def test_all_families(self, sparse_case, preds):
        prior, model, x, w = sparse_case
        rep = orthogonality_report(instrumented_run(model, prior, x, w, 3), preds[3])
        assert rep.families == ["hq", "bm", "mmqq", "hhmm", "qq"]
        n_hq = sum(t + 2 for t in range(3))
        assert sum(c.identity == "hq" for c in rep.checks) == n_hq
        tau = 5 / np.sqrt(x.size)
        for c in rep.checks:
            if c.identity in ("hq", "bm", "hhmm"):
                assert c.tol == pytest.approx(tau)
            else:
                assert c.tol == pytest.approx(max(tau, 0.05 * c.predicted))

    def test_gaussian_prior_hq_is_h_against_x(self, gaussian_prior, preds):
        model, x, w = setup(gaussian_prior, seed=2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = instrumented_run(model, gaussian_prior, x, w, 3, keep_vectors=True)
        rep = orthogonality_report(tr, preds[3], families=("hq",))
        H = tr.vectors["h"]
        for c in rep.checks:
            t = c.indices[0]
            assert c.measured == pytest.approx(abs(np.vdot(H[:, t], x)) / x.size, rel=1e-12)

    def test_shape_mismatch(self, sparse_case, preds):
        prior, model, x, w = sparse_case
        with pytest.raises(DimensionMismatchError):
            orthogonality_report(instrumented_run(model, prior, x, w, 2), preds[3])

    def test_json_schema(self, sparse_case, preds):
        prior, model, x, w = sparse_case
        rep = orthogonality_report(instrumented_run(model, prior, x, w, 1), preds[1])
        data = json.loads(rep.to_json())
        assert "tol_policy" in data and isinstance(data["passed"], bool)
        for row in data["checks"]:
            assert set(row) == {"identity", "indices", "measured", "predicted", "tol", "passed"}

    def test_average_traces(self, sparse_case):
        prior, model, x, w = sparse_case
        a = instrumented_run(model, prior, x, w, 2)
        b = instrumented_run(model, prior, -x, -w, 2)
        avg = average_traces([a, b])
        np.testing.assert_allclose(avg.qq, (a.qq + b.qq) / 2)


class TestLemma1:
    def test_gaussian(self, gaussian_prior):
        res = lemma1_check(gaussian_prior, 1.0, samples=100_000, seed=0)
        assert res.c1 == 0 and res.within(3)

    def test_sparse(self, sparse_prior):
        res = lemma1_check(sparse_prior, 0.5, samples=1_000_000, seed=0)
        assert abs(res.c1) < 3 * res.se_c1
        assert abs(res.c2_minus_mmse) < 3 * res.se_c2

    def test_errors(self, sparse_prior):
        with pytest.raises(InvalidVarianceError):
            lemma1_check(sparse_prior, 0.0)
        with pytest.raises(ValueError):
            lemma1_check(sparse_prior, 1.0, samples=100)
