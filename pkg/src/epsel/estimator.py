"""scikit-learn style wrapper around :func:`epsel.ep_core.run_ep`."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_vector
from .ensembles import MeasurementModel, model_from_matrix
from .ep_core import V_FLOOR, run_ep
from .exceptions import DimensionMismatchError
from .priors import PriorSpec


class EPRecovery(BaseEstimator):
    """Recover a Bernoulli-Gaussian signal from ``y = A x + w``.

    ``fit(A, y)`` takes the sensing matrix (dense ``M x N`` array or a
    :class:`~epsel.ensembles.MeasurementModel`) as ``X`` and the
    measurements as ``y``, and stores the posterior-mean estimate in
    ``coef_``.  ``predict(A)`` returns ``A @ coef_``.

    Parameters
    ----------
    rho_s : float
        Active fraction of the prior; the active variance is ``1 / rho_s``.
    sigma2 : float
        Noise variance. Ignored when ``X`` is a MeasurementModel (the model
        carries its own).
    max_iter : int
    tol : float
        Relative early-stopping tolerance; ``0`` runs all iterations.
    damping : float or None
    """

    def __init__(self, rho_s=0.1, sigma2=0.01, max_iter=20, tol=1e-8, damping=None,
                 v_floor=V_FLOOR):
        self.rho_s = rho_s
        self.sigma2 = sigma2
        self.max_iter = max_iter
        self.tol = tol
        self.damping = damping
        self.v_floor = v_floor

    def _model(self, X):
        if isinstance(X, MeasurementModel):
            return X
        return model_from_matrix(X, self.sigma2)

    def fit(self, X, y, x_true=None):
        model = self._model(X)
        y = check_vector(y, "y")
        if y.size != model.M:
            raise DimensionMismatchError(f"y has {y.size} entries, A has {model.M} rows")
        prior = PriorSpec(self.rho_s)
        traj = run_ep(model, prior, y, x_true=x_true, T=self.max_iter, v_floor=self.v_floor,
                      early_stop_tol=self.tol, damping=self.damping)
        self.model_ = model
        self.prior_ = prior
        self.trajectory_ = traj
        self.coef_ = traj.estimate
        self.n_iter_ = len(traj)
        self.n_features_in_ = model.N
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        if isinstance(X, MeasurementModel):
            return X.apply(self.coef_)
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"expected a matrix with {self.n_features_in_} columns, got shape {X.shape}")
        return X @ self.coef_

    def score(self, X, y):
        """Negative normalized residual ``-||y - A coef_||^2 / ||y||^2``."""
        y = check_vector(y, "y")
        r = y - self.predict(X)
        return -float(np.vdot(r, r).real / np.vdot(y, y).real)
