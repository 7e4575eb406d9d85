"""Multivariate Gaussian mixtures fitted by expectation-maximisation.

One mixture per hidden state forms the emission model of the HMM.
Covariances are full; a small ridge ``eps * I`` keeps them positive definite
when a component collapses onto a handful of points.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DimensionMismatchError, InvalidInputError, ParseError

FORMAT_VERSION = 1
_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64)).copy()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64)).copy()
        d = mean.size
        if mean.ndim != 1 or cov.shape != (d, d):
            raise DimensionMismatchError(
                f"mean of dimension {d} does not match covariance of shape {cov.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidInputError("component parameters must be finite")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise InvalidInputError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InvalidInputError("covariance is not positive definite") from None
        for a in (mean, cov, chol):
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance."""
        return self._chol

    def log_pdf(self, X: np.ndarray) -> np.ndarray:
        """Log normal density at each row of ``X`` (shape ``(n, D)``)."""
        z = solve_triangular(self._chol, (X - self.mean).T, lower=True, check_finite=False)
        log_det_half = np.log(np.diag(self._chol)).sum()
        return -0.5 * np.einsum("ij,ij->j", z, z) - log_det_half - 0.5 * self.dim * _LOG_2PI


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64)).copy()
        comps = tuple(self.components)
        if len(comps) == 0 or weights.shape != (len(comps),):
            raise InvalidInputError(
                f"need one weight per component, got {weights.size} weights for {len(comps)} components"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"mixture weights must be a probability vector, got {weights}")
        if len({c.dim for c in comps}) != 1:
            raise DimensionMismatchError("mixture components have different dimensions")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, means, covariances) -> "GaussianMixture":
        return cls(
            weights,
            tuple(GaussianComponent(m, c) for m, c in zip(np.asarray(means), np.asarray(covariances))),
        )

    @classmethod
    def single(cls, mean, covariance) -> "GaussianMixture":
        return cls([1.0], (GaussianComponent(mean, covariance),))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def covariances(self) -> np.ndarray:
        return np.array([c.covariance for c in self.components])

    def weighted_log_pdfs(self, X: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x_i; mu_k, S_k)`` as an ``(n, K)`` array."""
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return np.column_stack([c.log_pdf(X) for c in self.components]) + log_w


def _as_points(mix: GaussianMixture, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim <= 1
    X = X.reshape(1, -1) if single else X
    if X.ndim != 2 or X.shape[1] != mix.dim:
        raise DimensionMismatchError(
            f"expected feature vectors of dimension {mix.dim}, got shape {np.shape(x)}"
        )
    return X, single


def log_density(mix: GaussianMixture, x):
    """Log of the mixture density, stable in the far tails.

    Accepts a single vector of length D (returns a float) or an ``(n, D)``
    array (returns an array of length n).
    """
    X, single = _as_points(mix, x)
    out = logsumexp(mix.weighted_log_pdfs(X), axis=1)
    return float(out[0]) if single else out


def density(mix: GaussianMixture, x):
    out = np.exp(log_density(mix, x))
    return float(out) if np.ndim(out) == 0 else out


def responsibilities(mix: GaussianMixture, x) -> np.ndarray:
    """Posterior component probabilities; shape ``(K,)`` or ``(n, K)``."""
    X, single = _as_points(mix, x)
    lp = mix.weighted_log_pdfs(X)
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    return r[0] if single else r


# -- fitting -----------------------------------------------------------------


@dataclass
class FitConfig:
    tolerance: float = 1e-6
    max_iterations: int = 200
    seed: int = 0
    init: str = "kmeans++"
    floor_scale: float = 1e-6

    def __post_init__(self):
        if self.init not in ("kmeans++", "random"):
            raise InvalidInputError(f"unknown initialisation {self.init!r}")
        if self.max_iterations < 1 or self.tolerance < 0:
            raise InvalidInputError("max_iterations must be >= 1 and tolerance >= 0")


@dataclass
class FitReport:
    iterations: int = 0
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False
    floored: int = 0
    starved: int = 0


def covariance_floor(X: np.ndarray, scale: float = 1e-6) -> float:
    """Ridge size ``scale * mean per-dimension variance`` (``scale`` if the data are constant)."""
    v = float(np.mean(np.var(X, axis=0)))
    return scale * v if v > 0 else scale


def floor_covariance(cov: np.ndarray, eps: float) -> tuple[np.ndarray, bool]:
    """Raise eigenvalues of ``cov`` below ``eps`` to ``eps``.

    Clipping, rather than adding a ridge, gives the likelihood-maximising
    covariance among those with all eigenvalues ``>= eps``, so EM stays
    monotone when the floor engages.
    """
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w[0] < eps:
        cov = (V * np.maximum(w, eps)) @ V.T
        return 0.5 * (cov + cov.T), True
    return cov, False


def weighted_moments(X: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and ``1/sum(w)``-normalised scatter of ``X`` under weights ``w``."""
    total = w.sum()
    mean = w @ X / total
    diff = X - mean
    cov = (diff * w[:, None]).T @ diff / total
    return mean, 0.5 * (cov + cov.T)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(X.shape[0])]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(X.shape[0], p=d2 / total)
        else:
            idx = rng.integers(X.shape[0])
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def initial_mixture(X: np.ndarray, k: int, config: FitConfig) -> GaussianMixture:
    rng = np.random.default_rng(config.seed)
    if config.init == "kmeans++":
        means = _kmeanspp(X, k, rng)
    else:
        means = X[rng.choice(X.shape[0], size=k, replace=False)]
    eps = covariance_floor(X, config.floor_scale)
    cov, _ = floor_covariance(np.atleast_2d(np.cov(X.T, bias=True)), eps)
    return GaussianMixture.from_arrays(np.full(k, 1.0 / k), means, [cov] * k)


def _canonical_order(X: np.ndarray) -> np.ndarray:
    # row order must not influence the fit
    return X[np.lexsort(X.T[::-1])]


def fit(data, n_components: int = 3, config: FitConfig | None = None) -> tuple[GaussianMixture, FitReport]:
    """Fit a ``K``-component mixture to ``data`` (shape ``(n, D)``) by EM.

    Each iteration computes component responsibilities, then re-estimates
    weights ``N_k / N``, means and full covariances from them.  Iteration
    stops when the relative log-likelihood gain drops below
    ``config.tolerance`` or after ``config.max_iterations``.

    ``report.log_likelihood_trace[0]`` is the data log-likelihood of the
    initial mixture and entry ``i`` is the value after iteration ``i``.
    """
    config = config or FitConfig()
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if n_components < 1:
        raise InvalidInputError("need at least one component")
    if X.shape[0] < n_components:
        raise InvalidInputError(f"{X.shape[0]} points cannot support {n_components} components")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("data must be finite")
    X = _canonical_order(X)
    n, _ = X.shape
    eps = covariance_floor(X, config.floor_scale)

    mix = initial_mixture(X, n_components, config)
    report = FitReport()
    lp = mix.weighted_log_pdfs(X)
    ll = float(logsumexp(lp, axis=1).sum())
    report.log_likelihood_trace.append(ll)

    for it in range(1, config.max_iterations + 1):
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        counts = resp.sum(axis=0)
        weights, means, covs = [], [], []
        for k, comp in enumerate(mix.components):
            if counts[k] < 1e-10:
                report.starved += 1
                means.append(comp.mean)
                covs.append(comp.covariance)
            else:
                mean, cov = weighted_moments(X, resp[:, k])
                cov, hit = floor_covariance(cov, eps)
                report.floored += hit
                means.append(mean)
                covs.append(cov)
            weights.append(counts[k] / n)
        weights = np.array(weights) / np.sum(weights)
        mix = GaussianMixture.from_arrays(weights, means, covs)

        lp = mix.weighted_log_pdfs(X)
        new_ll = float(logsumexp(lp, axis=1).sum())
        report.log_likelihood_trace.append(new_ll)
        report.iterations = it
        # a single component has responsibilities fixed at 1, so one M step is the fixed point
        if n_components == 1 or (new_ll - ll) <= config.tolerance * max(abs(ll), 1e-300):
            report.converged = True
            break
        ll = new_ll
    return mix, report


# -- serialisation ------------------------------------------------------------


def format_vector(values) -> str:
    return " ".join("%.17g" % v for v in np.ravel(values))


def parse_vector(text: str, size: int | None = None) -> np.ndarray:
    try:
        out = np.array([float(t) for t in text.split()], dtype=np.float64)
    except ValueError:
        raise InvalidInputError(f"bad numeric list {text!r}") from None
    if size is not None and out.size != size:
        raise InvalidInputError(f"expected {size} values, got {out.size}")
    return out


def mixture_to_sections(mix: GaussianMixture, parser: configparser.ConfigParser, prefix: str = "") -> None:
    head = f"{prefix}mixture"
    parser[head] = {
        "version": str(FORMAT_VERSION),
        "dim": str(mix.dim),
        "n_components": str(mix.n_components),
        "weights": format_vector(mix.weights),
    }
    for k, comp in enumerate(mix.components):
        parser[f"{prefix}component.{k}"] = {
            "mean": format_vector(comp.mean),
            "covariance": format_vector(comp.covariance),
        }


def mixture_from_sections(parser: configparser.ConfigParser, prefix: str = "") -> GaussianMixture:
    head = parser[f"{prefix}mixture"]
    if int(head["version"]) != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported mixture format version {head['version']}")
    d, k = int(head["dim"]), int(head["n_components"])
    weights = parse_vector(head["weights"], k)
    means, covs = [], []
    for j in range(k):
        sec = parser[f"{prefix}component.{j}"]
        means.append(parse_vector(sec["mean"], d))
        covs.append(parse_vector(sec["covariance"], d * d).reshape(d, d))
    return GaussianMixture.from_arrays(weights, means, covs)


def new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    return parser


def dumps_mixture(mix: GaussianMixture) -> str:
    parser = new_parser()
    mixture_to_sections(mix, parser)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads_mixture(text: str) -> GaussianMixture:
    parser = new_parser()
    parser.read_string(text)
    return mixture_from_sections(parser)


def save_mixture(path, mix: GaussianMixture) -> None:
    Path(path).write_text(dumps_mixture(mix))


def load_mixture(path) -> GaussianMixture:
    try:
        return loads_mixture(Path(path).read_text())
    except (KeyError, configparser.Error, InvalidInputError) as exc:
        raise ParseError(path, 0, f"invalid mixture file: {exc}") from None
