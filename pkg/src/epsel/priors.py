"""Bernoulli-Gaussian signal prior and its scalar denoisers.

All estimators treat each coordinate as an AWGN observation
``r = x + CN(0, v)`` of a signal drawn from

    x ~ (1 - rho_s) * delta_0 + rho_s * CN(0, active_var),

with ``rho_s * active_var == 1`` so the signal has unit power.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._validation import check_dimension, check_variance, check_vector
from .ensembles import seed_sequence
from .exceptions import InvalidParameterError, InvalidVarianceError

logger = logging.getLogger(__name__)

V_MIN = 1e-12
V_MAX = 1e6


@dataclass(frozen=True)
class PriorSpec:
    rho_s: float = 0.1
    active_var: float = None

    def __post_init__(self):
        rho = float(self.rho_s)
        if not 0.0 < rho <= 1.0:
            raise InvalidParameterError(f"rho_s must lie in (0, 1], got {rho}")
        a = 1.0 / rho if self.active_var is None else float(self.active_var)
        if not np.isfinite(a) or a <= 0:
            raise InvalidParameterError(f"active_var must be > 0, got {a}")
        if abs(rho * a - 1.0) > 1e-9:
            raise InvalidParameterError(
                f"rho_s * active_var must equal 1 (unit signal power), got {rho * a}")
        object.__setattr__(self, "rho_s", rho)
        object.__setattr__(self, "active_var", a)
        if rho == 1.0:
            warnings.warn("rho_s = 1 gives a Gaussian prior; intended for analytic checks only",
                          stacklevel=3)

    @property
    def is_gaussian(self):
        return self.rho_s == 1.0

    @property
    def fourth_moment(self):
        """``E|x|^4`` (``2 rho_s active_var^2`` for the circular mixture)."""
        return 2.0 * self.rho_s * self.active_var**2

    def to_dict(self):
        return {"rho_s": self.rho_s, "active_var": self.active_var}


@dataclass(frozen=True)
class DenoiserOutput:
    mean: np.ndarray
    variance: float


def sample_signal(prior, n, seed=None):
    n = check_dimension(n, "N")
    rng = np.random.default_rng(seed_sequence(seed))
    g = rng.standard_normal((n, 2))
    x = np.sqrt(prior.active_var / 2.0) * (g[:, 0] + 1j * g[:, 1])
    if not prior.is_gaussian:
        x[rng.random(n) >= prior.rho_s] = 0.0
    return x


def _active_weight(rho, a, u, v):
    """Posterior probability that a coordinate is active, given ``|r|^2 = u``.

    Evaluated as a logistic of the log-odds so large ``u / v`` cannot overflow.
    """
    if rho == 1.0:
        return np.ones_like(u)
    log_odds = (np.log(rho / (1.0 - rho)) + np.log(v / (a + v))
                + u * (1.0 / v - 1.0 / (a + v)))
    return expit(log_odds)


def posterior_mean(prior, r, v):
    """Elementwise ``E[x | x + CN(0, v) = r]``."""
    v = check_variance(v)
    r = check_vector(r, "r")
    a = prior.active_var
    w = _active_weight(prior.rho_s, a, np.abs(r) ** 2, v)
    return w * (a / (a + v)) * r


def _posterior_variance(rho, a, u, v):
    s = a / (a + v)
    w = _active_weight(rho, a, u, v)
    return w * s * v + w * (1.0 - w) * s * s * u


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_FIXED_BREAKS = np.array([0.0, 1.0, 4.0, 12.0, 30.0, 60.0])
_HALF_OFFSETS = np.array([-40.0, -12.0, -4.0, -1.0, 0.0, 1.0, 4.0, 12.0, 40.0])


def _mmse_array(rho, a, v):
    v = v[:, None]
    # log-odds slope in u, and where the posterior weight crosses 1/2
    slope = 1.0 / v - 1.0 / (a + v)
    u_half = (np.log((a + v) / v) - np.log(rho / (1.0 - rho))) / slope
    total = 0.0
    for weight, c in ((rho, a + v), (1.0 - rho, v)):
        # |r|^2 is exponential with mean c under each mixture component
        t_half, t_width = u_half / c, 1.0 / (slope * c)
        pts = np.concatenate(
            [np.broadcast_to(_FIXED_BREAKS, (v.shape[0], _FIXED_BREAKS.size)),
             t_half + _HALF_OFFSETS * t_width], axis=1)
        breaks = np.sort(np.clip(pts, 0.0, 60.0), axis=1)
        lo, hi = breaks[:, :-1, None], breaks[:, 1:, None]
        t = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
        wt = 0.5 * (hi - lo) * _GL_WEIGHTS
        u = c[:, :, None] * t
        f = _posterior_variance(rho, a, u, v[:, :, None])
        total = total + weight * np.sum(wt * np.exp(-t) * f, axis=(1, 2))
    return total


def mmse(prior, v):
    """Per-coordinate MMSE of estimating ``x`` from ``x + CN(0, v)``.

    Radial quadrature: ``|r|^2`` is a two-component exponential mixture, and
    the posterior variance depends on ``r`` only through ``|r|^2``.  Each
    component is integrated with composite 16-point Gauss-Legendre panels,
    with breakpoints clustered around the sharp switch of the posterior
    weight.  Accepts a scalar or an array of variances.
    """
    if np.ndim(v) > 0:
        v = np.asarray(v, dtype=float)
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise InvalidVarianceError("all variances must be finite and > 0")
        if prior.is_gaussian:
            return v / (1.0 + v)
        return _mmse_array(prior.rho_s, prior.active_var, v.ravel()).reshape(v.shape)
    v = check_variance(v)
    if prior.is_gaussian:
        return v / (1.0 + v)
    return float(_mmse_array(prior.rho_s, prior.active_var, np.array([v]))[0])


def extrinsic_variance(prior, v, m=None):
    """``(1/MMSE(v) - 1/v)^{-1}`` clamped to ``[V_MIN, V_MAX]``."""
    v = check_variance(v)
    if prior.is_gaussian:
        return 1.0
    if m is None:
        m = mmse(prior, v)
    precision = 1.0 / m - 1.0 / v
    if precision <= 1.0 / V_MAX:
        logger.warning("MMSE(%g)=%g not below v; clamping extrinsic variance to %g", v, m, V_MAX)
        return V_MAX
    return float(min(max(1.0 / precision, V_MIN), V_MAX))


def extrinsic_denoise(prior, r, v):
    """Extrinsic message of the denoising module.

    ``v' = (1/MMSE(v) - 1/v)^{-1}`` and
    ``eta(r) = v' (posterior_mean(r) / MMSE(v) - r / v)``.

    For a Gaussian prior the extrinsic message is the prior itself
    (mean 0, variance 1) and is returned in closed form.
    """
    v = check_variance(v)
    r = check_vector(r, "r")
    if prior.is_gaussian:
        return DenoiserOutput(np.zeros_like(r), 1.0)
    m = mmse(prior, v)
    v_ext = extrinsic_variance(prior, v, m)
    mean = v_ext * (posterior_mean(prior, r, v) / m - r / v)
    return DenoiserOutput(mean, v_ext)
