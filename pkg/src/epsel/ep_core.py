"""EP message passing between an LMMSE module (A) and a denoiser (B)."""
import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_dimension, check_positive, check_variance, check_vector
from .ensembles import spectrum_of
from .exceptions import InvalidSpectrumError, NumericalFailureError
from .priors import extrinsic_denoise, posterior_mean

logger = logging.getLogger(__name__)

V_FLOOR = 1e-12


def gamma_coeff(spectrum, sigma2, v):
    """Extrinsic gain ``gamma(v)``.

    ``1/gamma = delta * int lambda / (sigma2 + v lambda) drho(lambda)``; for
    an empirical spectrum of ``M`` eigenvalues this is
    ``N^{-1} Tr(W A)`` with ``W`` the LMMSE filter.
    """
    v = check_variance(v)
    sigma2 = check_positive(sigma2, "sigma2", allow_zero=True)
    lam = spectrum.eigenvalues
    if lam.size == 0:
        raise InvalidSpectrumError("empty spectrum")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lam > 0, lam / (sigma2 + v * lam), 0.0)
    inv = spectrum.delta * np.sum(spectrum.weights * ratio)
    if inv <= 0.0:
        return np.inf
    return 1.0 / inv


def lmmse_filter(model, residual, v):
    """``W^t residual`` with ``W^t = A^H (sigma2 I + v A A^H)^{-1}``, applied
    through the SVD (a diagonal solve)."""
    sv = model.sv
    z = model.U.conj().T @ residual
    return model.V_row @ (sv / (model.sigma2 + v * sv**2) * z)


def lmmse_step(model, y, x_ba, v_ba, spectrum=None):
    """Module A: extrinsic LMMSE estimate.

    Returns ``(x_ab, v_ab, gamma)`` where
    ``x_ab = x_ba + gamma W (y - A x_ba)`` and ``v_ab = gamma - v_ba``.
    ``gamma`` uses the realized spectrum of ``model`` unless ``spectrum``
    is given.
    """
    v_ba = check_variance(v_ba, "v_ba")
    y = check_vector(y, "y", model.M)
    x_ba = check_vector(x_ba, "x_ba", model.N)
    if spectrum is None:
        spectrum = spectrum_of(model)
    gamma = gamma_coeff(spectrum, model.sigma2, v_ba)
    x_ab = x_ba + gamma * lmmse_filter(model, y - model.apply(x_ba), v_ba)
    return x_ab, gamma - v_ba, gamma


@dataclass
class EpTrajectory:
    """Per-iteration record of an EP run.

    Row ``t`` holds the variances entering and leaving module A in
    iteration ``t``, the gain ``gamma_t``, and (when the true signal is
    known) the empirical MSE of the posterior-mean estimate and of
    ``x_ab``.
    """

    v_ba: list = field(default_factory=list)
    v_ab: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    mse_ab: list = field(default_factory=list)
    estimate: np.ndarray = None
    x_ab_history: list = None

    def __len__(self):
        return len(self.v_ab)

    def as_rows(self):
        n = len(self)
        mse = self.mse if self.mse else [np.nan] * n
        return [
            {"iter": t, "mse_emp": mse[t], "v_ab": self.v_ab[t],
             "v_ba": self.v_ba[t], "gamma": self.gamma[t]}
            for t in range(n)
        ]


def run_ep(model, prior, y, x_true=None, T=20, v_floor=V_FLOOR, early_stop_tol=1e-8,
           damping=None, keep_history=False):
    """Run the EP iteration for ``T`` rounds starting from ``x_ba = 0, v_ba = 1``.

    Parameters
    ----------
    model : MeasurementModel
    prior : PriorSpec
    y : array of length M
    x_true : array of length N, optional
        Enables per-iteration empirical MSE.
    T : int
        Maximum number of iterations.
    v_floor : float
        Lower bound applied to both message variances.
    early_stop_tol : float
        Stop once ``|mse_t - mse_{t-1}| < early_stop_tol * mse_t``; ``0``
        disables early stopping.  Without ``x_true`` the module-A variance
        ``v_ab`` is monitored instead of the MSE.
    damping : float, optional
        Convex mixing of consecutive module-B means; ``None`` (the
        default) means undamped.

    Returns
    -------
    EpTrajectory
        ``estimate`` is the posterior mean from the last iteration.
    """
    T = check_dimension(T, "T")
    y = check_vector(y, "y", model.M)
    if x_true is not None:
        x_true = check_vector(x_true, "x_true", model.N)
    spectrum = spectrum_of(model)
    traj = EpTrajectory(x_ab_history=[] if keep_history else None)
    x_ba = np.zeros(model.N, dtype=np.complex128)
    v_ba = 1.0
    for t in range(T):
        x_ab, v_ab, gamma = lmmse_step(model, y, x_ba, v_ba, spectrum)
        if v_ab <= 0:
            raise NumericalFailureError(f"nonpositive v_ab={v_ab}", t)
        v_ab = max(v_ab, v_floor)
        _check_finite(x_ab, v_ab, "module A", t)
        est = posterior_mean(prior, x_ab, v_ab)
        traj.v_ba.append(v_ba)
        traj.v_ab.append(v_ab)
        traj.gamma.append(gamma)
        if keep_history:
            traj.x_ab_history.append(x_ab)
        if x_true is not None:
            traj.mse.append(float(np.mean(np.abs(x_true - est) ** 2)))
            traj.mse_ab.append(float(np.mean(np.abs(x_true - x_ab) ** 2)))
        traj.estimate = est
        monitor = traj.mse if x_true is not None else traj.v_ab
        if (early_stop_tol > 0 and t > 0
                and abs(monitor[-1] - monitor[-2]) < early_stop_tol * monitor[-1]):
            logger.debug("early stop at iteration %d", t)
            break
        out = extrinsic_denoise(prior, x_ab, v_ab)
        x_new = out.mean
        if damping:
            x_new = damping * x_ba + (1.0 - damping) * x_new
        x_ba, v_ba = x_new, max(out.variance, v_floor)
        _check_finite(x_ba, v_ba, "module B", t)
    return traj


def _check_finite(x, v, where, t):
    if not np.isfinite(v) or not np.all(np.isfinite(x)):
        raise NumericalFailureError(f"non-finite message from {where}", t)
