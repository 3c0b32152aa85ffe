"""Scalar state evolution and cross-iteration error covariances."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import brentq

from ._validation import check_dimension, check_positive, check_variance
from .ensembles import seed_sequence
from .ep_core import gamma_coeff
from .exceptions import CovarianceConstructionError, InvalidParameterError, InvalidSpectrumError
from .priors import V_MAX, V_MIN, extrinsic_denoise, extrinsic_variance, mmse, sample_signal

logger = logging.getLogger(__name__)


def phi_a_to_b(spectrum, sigma2, v):
    """Module-A extrinsic variance map ``gamma(v) - v``."""
    return gamma_coeff(spectrum, sigma2, v) - v


def phi_b_to_a(prior, v):
    """Module-B extrinsic variance map ``(1/MMSE(v) - 1/v)^{-1}`` (clamped)."""
    return extrinsic_variance(prior, v)


@dataclass
class SeTrajectory:
    mse_ba: np.ndarray  # length T + 1, starts at 1
    mse_ab: np.ndarray
    predicted_mse: np.ndarray
    gamma: np.ndarray

    def __len__(self):
        return len(self.mse_ab)

    def as_rows(self):
        return [
            {"iter": t, "mse_ba": float(self.mse_ba[t]), "mse_ab": float(self.mse_ab[t]),
             "predicted_mse": float(self.predicted_mse[t]), "gamma": float(self.gamma[t])}
            for t in range(len(self))
        ]


def se_recursion(prior, spectrum, sigma2, T):
    """Iterate the two variance maps from ``mse_ba = 1`` for ``T`` rounds.

    ``predicted_mse[t] = MMSE(mse_ab[t])`` is the large-system MSE of the
    posterior-mean estimate in iteration ``t``.
    """
    T = check_dimension(T, "T")
    mse_ba = np.empty(T + 1)
    mse_ab = np.empty(T)
    pred = np.empty(T)
    gam = np.empty(T)
    mse_ba[0] = 1.0
    for t in range(T):
        gam[t] = gamma_coeff(spectrum, sigma2, mse_ba[t])
        mse_ab[t] = gam[t] - mse_ba[t]
        pred[t] = mmse(prior, mse_ab[t])
        mse_ba[t + 1] = phi_b_to_a(prior, mse_ab[t])
    return SeTrajectory(mse_ba, mse_ab, pred, gam)


@dataclass(frozen=True)
class FixedPoint:
    v_ba: float
    v_ab: float
    mse: float
    stable: bool


@dataclass
class FixedPointReport:
    points: list
    unique: bool
    attractor: FixedPoint
    iterations: int
    converged: bool
    note: str = ""

    @property
    def count(self):
        return len(self.points)


def _fp_map(prior, spectrum, sigma2):
    def g(v):
        return phi_b_to_a(prior, phi_a_to_b(spectrum, sigma2, v))
    return g


def _fp_residual_grid(prior, spectrum, sigma2, grid):
    """Vectorized ``F(v)`` over a grid (same arithmetic as the scalar maps)."""
    lam, w = spectrum.eigenvalues, spectrum.weights
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lam > 0, lam / (sigma2 + grid[:, None] * lam), 0.0)
    v_ab = 1.0 / (spectrum.delta * (ratio @ w)) - grid
    if prior.is_gaussian:
        return 1.0 - grid
    m = mmse(prior, v_ab)
    prec = 1.0 / m - 1.0 / v_ab
    with np.errstate(divide="ignore"):
        g = np.where(prec <= 1.0 / V_MAX, V_MAX, np.clip(1.0 / prec, V_MIN, V_MAX))
    return g - grid


def _iterate_to_limit(g, v0=1.0, tol=1e-12, max_iter=100_000):
    v = v0
    for it in range(1, max_iter + 1):
        v_new = g(v)
        if abs(v_new - v) <= tol * max(v, 1e-300):
            return v_new, it, True
        v = v_new
    return v, max_iter, False


def se_fixed_points(prior, spectrum, sigma2, v_min=1e-8, v_max=10.0, points=2000,
                    max_iter=100_000):
    """Locate all fixed points of the state-evolution map on a log grid.

    Sign changes of ``F(v) = phi_b_to_a(phi_a_to_b(v)) - v`` are refined by
    Brent's method to ``1e-12`` relative accuracy.  The report also records
    the limit reached by iterating from ``v_ba = 1`` (the attractor the
    algorithm actually converges to).
    """
    v_min = check_positive(v_min, "v_min")
    v_max = check_positive(v_max, "v_max")
    points = check_dimension(points, "points", minimum=2)
    if v_max <= v_min:
        raise InvalidParameterError("v_max must exceed v_min")
    g = _fp_map(prior, spectrum, sigma2)

    def F(v):
        return g(v) - v

    grid = np.geomspace(v_min, v_max, points)
    vals = _fp_residual_grid(prior, spectrum, sigma2, grid)
    roots = [grid[i] for i in np.flatnonzero(vals == 0.0)]
    for i in np.flatnonzero(vals[:-1] * vals[1:] < 0):
        roots.append(brentq(F, grid[i], grid[i + 1], xtol=1e-300, rtol=1e-12, maxiter=500))
    roots.sort()

    def describe(v):
        v_ab = phi_a_to_b(spectrum, sigma2, v)
        h = 1e-6 * v
        slope = (g(v + h) - g(v - h)) / (2 * h)
        return FixedPoint(float(v), float(v_ab), float(mmse(prior, v_ab)), bool(abs(slope) < 1))

    fps = [describe(v) for v in roots]
    v_lim, iters, converged = _iterate_to_limit(g, max_iter=max_iter)
    note = ""
    if not fps:
        note = "grid exhausted: no sign change; attractor reported as the unique fixed point"
        fps = [describe(v_lim)]
    attractor = min(fps, key=lambda p: abs(np.log(p.v_ba / v_lim)))
    return FixedPointReport(fps, len(fps) == 1, attractor, iters, converged, note)


def cross_gamma(spectrum, sigma2, v_t, v_tp, zeta):
    """Cross-iteration gain ``gamma_{t,t'}``.

    ``gamma_t gamma_t' int delta lambda (sigma2 + zeta lambda) /
    ((sigma2 + v_t lambda)(sigma2 + v_t' lambda)) drho``.  With
    ``zeta = v_t = v_t'`` it collapses to ``gamma_t``.
    """
    v_t = check_variance(v_t, "v_t")
    v_tp = check_variance(v_tp, "v_tp")
    sigma2 = check_positive(sigma2, "sigma2", allow_zero=True)
    lam = spectrum.eigenvalues
    if lam.size == 0:
        raise InvalidSpectrumError("empty spectrum")
    g_t = gamma_coeff(spectrum, sigma2, v_t)
    g_tp = gamma_coeff(spectrum, sigma2, v_tp)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(
            lam > 0,
            lam * (sigma2 + zeta * lam) / ((sigma2 + v_t * lam) * (sigma2 + v_tp * lam)),
            0.0)
    val = g_t * g_tp * spectrum.delta * np.sum(spectrum.weights * integrand)
    return val if np.iscomplexobj(val) else float(val)


@dataclass
class CovarianceTables:
    """Predicted second moments of the error recursion.

    ``zeta[t, s]`` is the limit of ``q_s^H q_t / N`` (t, s = 0..T),
    ``gamma2[t, s]`` the cross gain, ``m_cov = gamma2 - zeta[:T, :T]`` the
    limit of ``m_s^H m_t / N`` and ``nu`` its diagonal.  ``zeta_stderr``
    holds Monte Carlo standard errors of the ``zeta`` entries.
    """

    zeta: np.ndarray
    zeta_stderr: np.ndarray
    gamma2: np.ndarray
    m_cov: np.ndarray
    se: SeTrajectory
    samples: int
    seed: int = None
    extra: dict = field(default_factory=dict)

    @property
    def nu(self):
        return np.real(np.diag(self.m_cov))

    @property
    def T(self):
        return self.gamma2.shape[0]


def _complex_normal(rng, n):
    g = rng.standard_normal((n, 2))
    return (g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0)


def predict_error_covariance(prior, spectrum, sigma2, T, samples=1_000_000, seed=0,
                             jitter=1e-12):
    """Monte Carlo evaluation of the cross-iteration covariances.

    Scalar surrogate of the error recursion: ``x`` follows the prior, the
    module-A errors ``h_0..h_{T-1}`` are jointly circular Gaussian and
    independent of ``x``, with covariance built row by row (diagonal from
    state evolution, off-diagonal from :func:`cross_gamma` evaluated at the
    already estimated ``zeta``), and ``q_{t+1} = x - eta_t(x - h_t)``.

    The Gaussian vector is generated through an incrementally extended
    Cholesky factor, so earlier samples stay fixed when row ``t`` is added.
    """
    T = check_dimension(T, "T")
    samples = check_dimension(samples, "samples", minimum=100_000)
    se = se_recursion(prior, spectrum, sigma2, T)
    x_seed, z_seed = seed_sequence(seed).spawn(2)
    rng = np.random.default_rng(z_seed)
    x = sample_signal(prior, samples, x_seed)

    zeta = np.zeros((T + 1, T + 1), dtype=complex)
    zeta_se = np.zeros((T + 1, T + 1))
    gamma2 = np.zeros((T, T), dtype=complex)
    m_cov = np.zeros((T, T), dtype=complex)
    chol = np.zeros((T, T), dtype=complex)
    qs = [x]
    zs = []
    _record_zeta(zeta, zeta_se, qs, 0)

    for t in range(T):
        v_t = se.mse_ba[t]
        for s in range(t):
            g = cross_gamma(spectrum, sigma2, v_t, se.mse_ba[s], complex(zeta[t, s]))
            gamma2[t, s], gamma2[s, t] = g, np.conj(g)
            m_cov[t, s] = g - zeta[t, s]
            m_cov[s, t] = np.conj(m_cov[t, s])
        gamma2[t, t] = se.gamma[t]
        m_cov[t, t] = se.mse_ab[t]

        # extend L with L L^H = m_cov[:t+1, :t+1]
        if t > 0:
            row = np.conj(solve_triangular(chol[:t, :t], np.conj(m_cov[t, :t]), lower=True))
        else:
            row = np.zeros(0, dtype=complex)
        resid = float(np.real(m_cov[t, t]) - np.sum(np.abs(row) ** 2))
        if resid < -1e-8 * max(1.0, float(np.real(m_cov[t, t]))):
            raise CovarianceConstructionError(
                f"m_cov not positive semidefinite at row {t} (residual {resid:.3e})")
        chol[t, :t] = row
        chol[t, t] = np.sqrt(max(resid, 0.0) + jitter)

        zs.append(_complex_normal(rng, samples))
        h = sum(chol[t, j] * zs[j] for j in range(t + 1))
        qs.append(x - extrinsic_denoise(prior, x - h, se.mse_ab[t]).mean)
        _record_zeta(zeta, zeta_se, qs, t + 1)

    eig_min = float(np.min(np.linalg.eigvalsh(m_cov)))
    if eig_min < -1e-8 * max(1.0, float(np.max(np.real(np.diag(m_cov))))):
        raise CovarianceConstructionError(f"m_cov has negative eigenvalue {eig_min:.3e}")
    return CovarianceTables(zeta, zeta_se, gamma2, m_cov, se, samples,
                            seed if isinstance(seed, int) else None)


def _record_zeta(zeta, zeta_se, qs, t):
    q_t = qs[t]
    n = q_t.size
    for s in range(t + 1):
        prod = np.conj(qs[s]) * q_t
        mean = prod.mean()
        zeta[t, s] = mean
        zeta[s, t] = np.conj(mean)
        zeta_se[t, s] = zeta_se[s, t] = np.sqrt(np.mean(np.abs(prod - mean) ** 2) / n)
