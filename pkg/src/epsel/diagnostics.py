"""Instrumented error recursions and empirical checks of the asymptotic
orthogonality and covariance identities."""
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_dimension, check_variance, check_vector
from .ensembles import haar_trace_law_draw, seed_sequence, spectrum_of
from .ep_core import gamma_coeff
from .exceptions import DimensionMismatchError, NumericalFailureError
from .priors import extrinsic_denoise, mmse, posterior_mean, sample_signal

logger = logging.getLogger(__name__)

FAMILIES = ("hq", "bm", "mmqq", "hhmm", "qq")


@dataclass
class ErrorTrace:
    """Gram data of the error recursion.

    Tables indexed ``[t, s]`` hold ``N^{-1} v_s^H v_t``: ``qq`` is
    (T+1) x (T+1); ``bb``, ``mm``, ``hh`` are T x T.  The mixed tables are
    ``hq[t, s] = N^{-1} h_t^H q_s`` (T x (T+1)) and
    ``bm[s, t] = N^{-1} b_s^H m_t`` (T x T).
    """

    N: int
    M: int
    T: int
    qq: np.ndarray
    bb: np.ndarray
    mm: np.ndarray
    hh: np.ndarray
    hq: np.ndarray
    bm: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    mse: np.ndarray
    v_ba: np.ndarray
    v_ab: np.ndarray
    gamma: np.ndarray
    seed: object = None
    vectors: dict = field(default=None, repr=False)


def _table(X):
    # [t, s] = N^{-1} x_s^H x_t
    return (X.conj().T @ X).T / X.shape[0]


def _schur_residuals(gram, name):
    """Diagonal of the Cholesky factor squared: ``N^{-1}||v_t^perp||^2``."""
    g = np.asarray(gram).T  # [s, t] = N^{-1} v_s^H v_t
    out = np.empty(g.shape[0])
    for t in range(g.shape[0]):
        if t == 0:
            out[t] = np.real(g[0, 0])
            continue
        sub = g[:t, :t]
        lam_min = float(np.min(np.linalg.eigvalsh(sub)))
        if lam_min < 1e-8:
            warnings.warn(f"{name} Gram matrix nearly singular before step {t} "
                          f"(min eigenvalue {lam_min:.2e})", RuntimeWarning, stacklevel=3)
        coef = np.linalg.lstsq(sub, g[:t, t], rcond=None)[0]
        out[t] = float(np.real(g[t, t] - np.vdot(g[:t, t], coef)))
    return out


def instrumented_run(model, prior, x_true, w_noise, T, full_v=False, keep_vectors=False,
                     seed=None):
    """Run the error recursion in SVD coordinates and record its Gram data.

    ``q_0 = x``; for each iteration ``b_t = V^H q_t``,
    ``m_t = b_t - gamma_t W_t ((Sigma, 0) b_t + U^H w)``, ``h_t = V m_t`` and
    ``q_{t+1} = x - eta_t(x - h_t)``.  By construction ``h_t`` equals
    ``x - x_ab`` of :func:`epsel.ep_core.run_ep` on the same data.

    Only the first ``M`` coordinates of ``b_t`` are touched by the filter,
    so by default the recursion uses ``V_row`` and unitarity for the rest;
    ``full_v=True`` forms the complete ``V`` instead.
    """
    T = check_dimension(T, "T")
    N, M = model.N, model.M
    x = check_vector(x_true, "x_true", N)
    w = check_vector(w_noise, "w_noise", M)
    spectrum = spectrum_of(model)
    sv, s2 = model.sv, model.sigma2
    w_t = model.U.conj().T @ w
    V = model.V if full_v else model.V_row

    Q = np.empty((N, T + 1), dtype=complex)
    H = np.empty((N, T), dtype=complex)
    Btop = np.empty((M, T), dtype=complex)
    Mtop = np.empty((M, T), dtype=complex)
    Bfull = np.empty((N, T), dtype=complex) if full_v else None
    Mfull = np.empty((N, T), dtype=complex) if full_v else None
    mse = np.empty(T)
    v_ba_hist, v_ab_hist, gam_hist = np.empty(T), np.empty(T), np.empty(T)

    Q[:, 0] = x
    v_ba = 1.0
    for t in range(T):
        q = Q[:, t]
        gam = gamma_coeff(spectrum, s2, v_ba)
        v_ab = gam - v_ba
        if full_v:
            b = V.conj().T @ q
            b_top = b[:M]
        else:
            b_top = V.conj().T @ q
        m_top = b_top - gam * (sv / (s2 + v_ba * sv**2)) * (sv * b_top + w_t)
        if full_v:
            m = b.copy()
            m[:M] = m_top
            h = V @ m
            Bfull[:, t], Mfull[:, t] = b, m
        else:
            # V m = V_row m_top + (I - V_row V_row^H) q
            h = V @ (m_top - b_top) + q
        if not np.all(np.isfinite(h)):
            raise NumericalFailureError("non-finite module-A error", t)
        r = x - h
        mse[t] = np.mean(np.abs(x - posterior_mean(prior, r, v_ab)) ** 2)
        out = extrinsic_denoise(prior, r, v_ab)
        Q[:, t + 1] = x - out.mean
        H[:, t], Btop[:, t], Mtop[:, t] = h, b_top, m_top
        v_ba_hist[t], v_ab_hist[t], gam_hist[t] = v_ba, v_ab, gam
        v_ba = out.variance

    qq = _table(Q)
    hh = _table(H)
    hq = H.conj().T @ Q / N
    if full_v:
        bb = _table(Bfull)
        mm = _table(Mfull)
        bm = Bfull.conj().T @ Mfull / N
    else:
        # coordinates M..N-1 of b_t and m_t coincide; their inner products
        # follow from unitarity: <b_s, b_t>_tail = <q_s, q_t> - <b_s, b_t>_top
        top_bb = Btop.conj().T @ Btop / N
        tail = qq[:T, :T].T - top_bb
        bb = (top_bb + tail).T
        mm = (Mtop.conj().T @ Mtop / N + tail).T
        bm = Btop.conj().T @ Mtop / N + tail

    mu = _schur_residuals(qq, "q")
    nu = _schur_residuals(mm, "m")
    vectors = None
    if keep_vectors:
        vectors = {"q": Q, "h": H}
        if full_v:
            vectors.update(b=Bfull, m=Mfull)
    return ErrorTrace(N, M, T, qq, bb, mm, hh, hq, bm, mu, nu, mse,
                      v_ba_hist, v_ab_hist, gam_hist, seed, vectors)


def average_traces(traces):
    """Elementwise mean of the Gram tables of several independent traces."""
    if not traces:
        raise ValueError("no traces to average")
    first = traces[0]
    keys = ("qq", "bb", "mm", "hh", "hq", "bm", "mu", "nu", "mse", "v_ba", "v_ab", "gamma")
    avg = {k: np.mean([getattr(tr, k) for tr in traces], axis=0) for k in keys}
    return ErrorTrace(first.N, first.M, first.T, seed=[tr.seed for tr in traces], **avg)


@dataclass
class IdentityCheck:
    identity: str
    indices: tuple
    measured: float
    predicted: float
    tol: float
    passed: bool


@dataclass
class IdentityReport:
    checks: list
    tol_policy: str

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def family_passed(self, family):
        rows = [c for c in self.checks if c.identity == family]
        return bool(rows) and all(c.passed for c in rows)

    @property
    def families(self):
        seen = []
        for c in self.checks:
            if c.identity not in seen:
                seen.append(c.identity)
        return seen

    def to_dict(self):
        return {
            "tol_policy": self.tol_policy,
            "passed": self.passed,
            "checks": [
                {**asdict(c), "indices": list(c.indices), "passed": bool(c.passed)}
                for c in self.checks
            ],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _abs_real(z):
    return float(np.abs(z))


def orthogonality_report(trace, predictions, tol_scale=5.0, rel_tol=0.05, families=FAMILIES):
    """Compare a trace against the asymptotic identities.

    ``tau_N = tol_scale / sqrt(N)``.  Orthogonality families (``hq``,
    ``bm``) and the ``hhmm`` equality use the absolute band ``tau_N``;
    ``mmqq`` and ``qq`` use ``max(tau_N, rel_tol * |predicted|)``.  With a
    single iteration only ``hq``, ``bm`` and ``qq`` are reported.
    """
    T = trace.T
    if predictions.T != T:
        raise DimensionMismatchError(f"trace has T={T}, predictions have T={predictions.T}")
    tau = tol_scale / np.sqrt(trace.N)
    checks = []
    if T == 1:
        families = [f for f in families if f in ("hq", "bm", "qq")]

    def add(name, idx, measured, predicted, rel):
        tol = max(tau, rel_tol * abs(predicted)) if rel else tau
        err = abs(measured - predicted)
        checks.append(IdentityCheck(name, idx, _abs_real(measured), _abs_real(predicted),
                                    float(tol), bool(err < tol)))

    zeta = predictions.zeta
    m_pred = predictions.gamma2 - zeta[:T, :T]
    for name in families:
        if name == "hq":
            for t in range(T):
                for s in range(t + 2):
                    add(name, (t, s), trace.hq[t, s], 0.0, False)
        elif name == "bm":
            for t in range(T):
                for s in range(t + 1):
                    add(name, (s, t), trace.bm[s, t], 0.0, False)
        elif name == "mmqq":
            for t in range(T):
                for s in range(t + 1):
                    add(name, (t, s), trace.mm[t, s], m_pred[t, s], True)
        elif name == "hhmm":
            for t in range(T):
                for s in range(t + 1):
                    add(name, (t, s), trace.hh[t, s] - trace.mm[t, s], 0.0, False)
        elif name == "qq":
            for t in range(T + 1):
                for s in range(t + 1):
                    add(name, (t, s), trace.qq[t, s], zeta[t, s], True)
        else:
            raise ValueError(f"unknown identity family {name!r}")
    policy = f"tau_N = {tol_scale}/sqrt(N) = {tau:.4g}; relative families use max(tau_N, {rel_tol}*|pred|)"
    return IdentityReport(checks, policy)


@dataclass(frozen=True)
class Lemma1Result:
    c1: complex
    c2_minus_mmse: complex
    se_c1: float
    se_c2: float

    def within(self, k=3.0):
        """Both estimates within ``k`` standard errors of zero."""
        return abs(self.c1) <= k * self.se_c1 and abs(self.c2_minus_mmse) <= k * self.se_c2


def lemma1_check(prior, v, samples=1_000_000, seed=0):
    """Monte Carlo estimates of ``E[z* eta(x+z)]`` and
    ``E[z* posterior_mean(x+z)] - MMSE(v)`` with ``z ~ CN(0, v)``.

    Both vanish for the extrinsic denoiser; standard errors are returned
    alongside.
    """
    v = check_variance(v)
    samples = check_dimension(samples, "samples", minimum=10_000)
    x_seed, z_seed = seed_sequence(seed).spawn(2)
    x = sample_signal(prior, samples, x_seed)
    g = np.random.default_rng(z_seed).standard_normal((samples, 2))
    z = np.sqrt(v / 2.0) * (g[:, 0] + 1j * g[:, 1])
    r = x + z
    p1 = np.conj(z) * extrinsic_denoise(prior, r, v).mean
    p2 = np.conj(z) * posterior_mean(prior, r, v)
    c1, c2 = p1.mean(), p2.mean()

    def stderr(p, c):
        return float(np.sqrt(np.mean(np.abs(p - c) ** 2) / samples))

    return Lemma1Result(complex(c1), complex(c2 - mmse(prior, v)), stderr(p1, c1), stderr(p2, c2))


def trace_law_trials(a, b, D, draws, seed=0):
    """``draws`` independent Haar draws of the trace-law statistics."""
    draws = check_dimension(draws, "draws")
    children = seed_sequence(seed).spawn(draws)
    out = np.array([haar_trace_law_draw(a, b, D, child) for child in children])
    return out[:, 0], out[:, 1]
