"""Unitarily invariant measurement models and Haar sampling.

A measurement matrix is kept in SVD form ``A = U (diag(sv), 0) V^H`` with
``U`` (M x M) and ``V`` (N x N) independent Haar unitaries.  Only the first
``M`` columns of ``V`` enter ``A``, so the model stores that block densely
and rebuilds the full ``V`` on demand from the same random stream.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import check_dimension, check_matrix, check_positive, check_vector
from .exceptions import (
    DimensionMismatchError,
    InvalidParameterError,
    InvalidSpectrumError,
    UnsupportedShapeError,
)

ENSEMBLES = ("iid_gaussian", "row_orthogonal", "custom_spectrum")


def seed_sequence(seed):
    """Normalize ints, ``None`` and existing sequences to a ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _complex_gaussian(rng, n, k):
    # drawn row-major as (k, n, 2) so the first j < k columns do not depend on k
    g = rng.standard_normal((k, n, 2))
    return ((g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0)).T


def sample_haar_unitary(n, seed=None, columns=None):
    """Draw a Haar-distributed unitary matrix.

    Uses the QR decomposition of a complex Ginibre matrix followed by the
    phase correction ``Q <- Q diag(R_jj / |R_jj|)``, which makes the
    triangular factor's diagonal positive and the law of ``Q`` uniform.

    Parameters
    ----------
    n : int
        Dimension.
    seed : int, SeedSequence or None
    columns : int, optional
        Return only the first ``columns`` columns (an n x columns frame with
        orthonormal columns).  For a fixed seed they coincide, up to rounding,
        with the leading columns of the full draw.
    """
    n = check_dimension(n, "n")
    k = n if columns is None else check_dimension(columns, "columns")
    if k > n:
        raise InvalidParameterError(f"columns={k} exceeds dimension n={n}")
    rng = np.random.default_rng(seed_sequence(seed))
    z = _complex_gaussian(rng, n, k)
    q, r = np.linalg.qr(z)
    d = np.diag(r).copy()
    mag = np.abs(d)
    d[mag == 0] = 1.0
    mag[mag == 0] = 1.0
    return q * (d / mag)


def sample_noise(m, sigma2, seed=None):
    """Circular complex Gaussian noise CN(0, sigma2 I_m)."""
    m = check_dimension(m, "M")
    sigma2 = check_positive(sigma2, "sigma2")
    rng = np.random.default_rng(seed_sequence(seed))
    g = rng.standard_normal((m, 2))
    return np.sqrt(sigma2 / 2.0) * (g[:, 0] + 1j * g[:, 1])


@dataclass(frozen=True)
class EnsembleSpec:
    """Which singular-value law to use when building a measurement model."""

    kind: str = "row_orthogonal"
    sv: tuple = None

    def __post_init__(self):
        if self.kind not in ENSEMBLES:
            raise InvalidParameterError(
                f"unknown ensemble {self.kind!r}; expected one of {ENSEMBLES}")
        if self.kind == "custom_spectrum":
            if self.sv is None or len(self.sv) == 0:
                raise InvalidParameterError("custom_spectrum requires a nonempty sv list")
            object.__setattr__(self, "sv", tuple(float(s) for s in self.sv))

    @classmethod
    def coerce(cls, spec):
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, str):
            return cls(kind=spec)
        if isinstance(spec, dict):
            return cls(kind=spec.get("kind", "row_orthogonal"), sv=spec.get("sv"))
        raise InvalidParameterError(f"cannot interpret ensemble spec {spec!r}")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.sv is not None:
            d["sv"] = list(self.sv)
        return d


def draw_singular_values(ensemble, m, n, seed=None):
    """Singular values for ``ensemble``, normalized so that ``sum(sv**2) == n``."""
    ensemble = EnsembleSpec.coerce(ensemble)
    m = check_dimension(m, "M")
    n = check_dimension(n, "N")
    if ensemble.kind == "row_orthogonal":
        sv = np.full(m, np.sqrt(n / m))
    elif ensemble.kind == "iid_gaussian":
        rng = np.random.default_rng(seed_sequence(seed))
        g = _complex_gaussian(rng, m, n) / np.sqrt(m)
        sv = np.linalg.svd(g, compute_uv=False)
    else:
        sv = np.asarray(ensemble.sv, dtype=float)
        if sv.shape != (m,):
            raise DimensionMismatchError(
                f"custom_spectrum has {sv.size} singular values, expected M={m}")
        if np.any(sv < 0) or not np.all(np.isfinite(sv)):
            raise InvalidParameterError("singular values must be finite and nonnegative")
    energy = float(np.sum(sv**2))
    if energy <= 0.0:
        raise InvalidParameterError("spectrum is identically zero; cannot normalize")
    return sv * np.sqrt(n / energy)


@dataclass(frozen=True)
class SpectralDensity:
    """Eigenvalue law of ``A A^H`` as weighted atoms.

    Every spectrum, analytic or sampled, is stored as eigenvalues with
    probability weights, so integrals against the law are finite sums.
    ``kind`` records where the atoms came from.
    """

    kind: str
    eigenvalues: np.ndarray
    weights: np.ndarray
    delta: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if lam.size == 0:
            raise InvalidSpectrumError("spectrum has no eigenvalues")
        if lam.shape != w.shape:
            raise InvalidSpectrumError("eigenvalues and weights differ in shape")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise InvalidSpectrumError("eigenvalues must be finite and nonnegative")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
            raise InvalidSpectrumError("weights must be a probability vector")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidSpectrumError(f"delta must lie in (0, 1], got {self.delta}")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def point_mass(cls, lambda0, delta):
        return cls("point_mass", [float(lambda0)], [1.0], delta, {"lambda0": float(lambda0)})

    @classmethod
    def empirical(cls, eigenvalues, delta):
        lam = np.asarray(eigenvalues, dtype=float)
        return cls("empirical", lam, np.full(lam.size, 1.0 / max(lam.size, 1)), delta)

    @classmethod
    def sampled_reference(cls, ensemble, delta, n_ref=4096, seed=0):
        """Empirical spectrum of one large reference draw from ``ensemble``."""
        n_ref = check_dimension(n_ref, "n_ref")
        m = max(1, int(round(delta * n_ref)))
        sv = draw_singular_values(ensemble, m, n_ref, seed)
        spec = cls.empirical(sv**2, m / n_ref)
        object.__setattr__(spec, "kind", "sampled_reference")
        spec.meta.update(ensemble=EnsembleSpec.coerce(ensemble).to_dict(), n_ref=n_ref)
        return spec

    @classmethod
    def marchenko_pastur(cls, delta, nodes=256):
        """Limit law of ``A A^H`` for i.i.d. Gaussian ``A`` under the unit
        column-energy normalization (mean eigenvalue ``1/delta``).

        The density has square-root edges; substituting
        ``xi = 1 + delta + 2 sqrt(delta) cos(theta)`` makes the integrand
        smooth and Gauss-Legendre in ``theta`` converges quickly.
        """
        if not 0.0 < delta <= 1.0:
            raise InvalidSpectrumError(f"delta must lie in (0, 1], got {delta}")
        t, wt = np.polynomial.legendre.leggauss(nodes)
        theta = 0.5 * np.pi * (t + 1.0)
        wt = 0.5 * np.pi * wt
        h = 2.0 * np.sqrt(delta)
        xi = 1.0 + delta + h * np.cos(theta)
        # h^2 sin^2 / xi stays finite at xi -> 0 when delta == 1
        dens = h**2 * np.sin(theta) ** 2 / (2.0 * np.pi * delta * np.maximum(xi, 1e-300))
        w = wt * dens
        w = w / w.sum()
        return cls("marchenko_pastur", xi / delta, w, delta, {"nodes": nodes})

    def integrate(self, f):
        """Return ``int f(lambda) drho(lambda)``."""
        return np.sum(self.weights * f(self.eigenvalues))

    def moment(self, k):
        return float(np.sum(self.weights * self.eigenvalues**k))

    def to_dict(self):
        d = {"kind": self.kind, "delta": self.delta}
        if self.kind == "point_mass":
            d["lambda0"] = float(self.eigenvalues[0])
        d.update({k: v for k, v in self.meta.items() if k not in d})
        return d


def marchenko_pastur_density(lam, delta):
    """Density of the ``1/delta``-scaled Marchenko-Pastur law at ``lam``."""
    xi = np.asarray(lam, dtype=float) * delta
    a, b = (1 - np.sqrt(delta)) ** 2, (1 + np.sqrt(delta)) ** 2
    inside = (xi > a) & (xi < b)
    out = np.zeros_like(xi)
    xs = xi[inside]
    out[inside] = np.sqrt((b - xs) * (xs - a)) / (2 * np.pi * delta * xs)
    return out * delta


def limiting_spectrum(ensemble, delta, n_ref=4096, seed=0):
    """Large-system eigenvalue law associated with ``ensemble``."""
    ensemble = EnsembleSpec.coerce(ensemble)
    if ensemble.kind == "row_orthogonal":
        return SpectralDensity.point_mass(1.0 / delta, delta)
    if ensemble.kind == "iid_gaussian":
        return SpectralDensity.marchenko_pastur(delta)
    sv = np.asarray(ensemble.sv, dtype=float)
    n = len(sv) / delta
    return SpectralDensity.empirical(sv**2 * n / np.sum(sv**2), delta)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """``A = U (diag(sv), 0) V^H`` with noise variance ``sigma2``.

    ``V_row`` holds the first ``M`` columns of ``V`` (the row space of
    ``A``); the full ``V`` is regenerated lazily through :attr:`V`.
    """

    M: int
    N: int
    U: np.ndarray
    V_row: np.ndarray
    sv: np.ndarray
    sigma2: float
    ensemble: EnsembleSpec = None
    v_seed: np.random.SeedSequence = field(default=None, repr=False)

    @property
    def delta(self):
        return self.M / self.N

    @cached_property
    def V(self):
        if self.M == self.N:
            return self.V_row
        if self.v_seed is None:
            raise InvalidParameterError("model was built without a V seed; full V unavailable")
        return sample_haar_unitary(self.N, self.v_seed)

    def apply(self, x):
        """``A x``."""
        x = check_vector(x, "x", self.N)
        return self.U @ (self.sv * (self.V_row.conj().T @ x))

    def adjoint(self, y):
        """``A^H y``."""
        y = check_vector(y, "y", self.M)
        return self.V_row @ (self.sv * (self.U.conj().T @ y))

    def dense(self):
        return (self.U * self.sv) @ self.V_row.conj().T


def build_measurement(ensemble, M, N, sigma2, seed=None):
    """Sample a unitarily invariant measurement model.

    ``U`` and ``V`` are independent Haar draws; the singular values follow
    ``ensemble`` and are scaled so that ``sum(sv**2) == N``.
    """
    ensemble = EnsembleSpec.coerce(ensemble)
    M = check_dimension(M, "M")
    N = check_dimension(N, "N")
    if M > N:
        raise UnsupportedShapeError(f"M={M} > N={N}; only M <= N is supported")
    sigma2 = check_positive(sigma2, "sigma2")
    u_seed, v_seed, sv_seed = seed_sequence(seed).spawn(3)
    sv = draw_singular_values(ensemble, M, N, sv_seed)
    U = sample_haar_unitary(M, u_seed)
    V_row = sample_haar_unitary(N, v_seed, columns=M)
    return MeasurementModel(M, N, U, V_row, sv, sigma2, ensemble, v_seed)


def model_from_matrix(A, sigma2):
    """Wrap an explicit matrix into SVD form (no randomness involved)."""
    A = check_matrix(A, "A")
    M, N = A.shape
    if M > N:
        raise UnsupportedShapeError(f"M={M} > N={N}; only M <= N is supported")
    sigma2 = check_positive(sigma2, "sigma2")
    U, sv, Vh = np.linalg.svd(A, full_matrices=True)
    V = Vh.conj().T
    model = MeasurementModel(M, N, U, V[:, :M].copy(), sv, sigma2,
                             EnsembleSpec("custom_spectrum", tuple(sv)))
    model.__dict__["V"] = V
    return model


def spectrum_of(model):
    """Empirical eigenvalue distribution of ``A A^H`` for a realized model."""
    return SpectralDensity.empirical(model.sv**2, model.delta)


def trace_law_statistics(V, a, b, D):
    """``(b^H V a / N, b^H V^H D V a / N)`` for a unitary ``V``.

    ``D`` may be a full Hermitian matrix or the 1-D diagonal of one.
    """
    V = check_matrix(V, "V")
    n = V.shape[0]
    if V.shape != (n, n):
        raise DimensionMismatchError(f"V must be square, got {V.shape}")
    a = check_vector(a, "a", n)
    b = check_vector(b, "b", n)
    va, vb = V @ a, V @ b
    return np.vdot(b, va) / n, np.vdot(vb, _apply_hermitian(D, va, n)) / n


def haar_trace_law_draw(a, b, D, seed=None):
    """Same statistics as :func:`trace_law_statistics` for a fresh Haar ``V``,
    without forming ``V``.

    With ``(a, b) = E R`` (thin QR) and ``F`` any unitary whose leading
    columns are ``E``, ``V' = V F^H`` is again Haar and ``V' (a, b)`` equals
    ``V[:, :2] R``, so only a two-column Haar frame is sampled.
    """
    a = check_vector(a, "a")
    n = a.size
    b = check_vector(b, "b", n)
    if n < 2:
        raise InvalidParameterError("need N >= 2")
    _, r = np.linalg.qr(np.column_stack([a, b]))
    w = sample_haar_unitary(n, seed, columns=2)
    va, vb = w @ r[:, 0], w @ r[:, 1]
    return np.vdot(b, va) / n, np.vdot(vb, _apply_hermitian(D, va, n)) / n


def _apply_hermitian(D, x, n):
    D = np.asarray(D)
    if D.ndim == 1:
        if D.shape != (n,):
            raise DimensionMismatchError(f"diagonal D has length {D.size}, expected {n}")
        return D * x
    if D.shape != (n, n):
        raise DimensionMismatchError(f"D has shape {D.shape}, expected {(n, n)}")
    return D @ x
