"""Covariate and treatment generators for the pseudo-experiment studies.

Correlated binary covariates come from a Gaussian copula: each pair's latent
normal correlation is calibrated so that thresholding reproduces the target
Pearson correlation of the binaries.  Continuous covariates are multivariate
normal, optionally truncated to a box by whole-row rejection.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import expit, ndtr, ndtri

from .errors import GenerationError, InfeasibleCorrelationError, InvalidArgumentError
from .glm import Dataset

MIN_ACCEPTANCE = 1e-4
PSD_REPAIR = 1e-8
LATENT_TOL = 1e-6


def bvn_cdf(a: float, b: float, rho: float) -> float:
    """``P(U <= a, V <= b)`` for standard normals with correlation ``rho``.

    Uses Plackett's reduction
    ``Phi2 = Phi(a) Phi(b) + (1/2pi) int_0^rho phi2(a, b; r) dr`` with the
    substitution ``r = sin(t)``, which removes the endpoint singularity.
    """
    if not abs(rho) < 1.0:
        raise InvalidArgumentError(f"|rho| must be < 1, got {rho}")
    base = float(ndtr(a) * ndtr(b))
    if rho == 0.0:
        return base
    if not (math.isfinite(a) and math.isfinite(b)):
        # infinite limits: one margin is degenerate
        if a == -math.inf or b == -math.inf:
            return 0.0
        return float(ndtr(min(a, b)))
    s = a * a + b * b
    ab = a * b

    def integrand(t: float) -> float:
        c = math.cos(t)
        return math.exp(-(s - 2.0 * ab * math.sin(t)) / (2.0 * c * c))

    val, _ = integrate.quad(integrand, 0.0, math.asin(rho), epsabs=1e-12, epsrel=1e-10, limit=200)
    return min(1.0, max(0.0, base + val / (2.0 * math.pi)))


def binary_correlation_bounds(p1: float, p2: float) -> tuple[float, float]:
    """Frechet bounds on the Pearson correlation of Bernoulli(p1), Bernoulli(p2)."""
    sd = math.sqrt(p1 * (1 - p1) * p2 * (1 - p2))
    lo = (max(0.0, p1 + p2 - 1.0) - p1 * p2) / sd
    hi = (min(p1, p2) - p1 * p2) / sd
    return lo, hi


def _binary_corr_from_latent(p1: float, p2: float, r: float) -> float:
    p11 = bvn_cdf(float(ndtri(p1)), float(ndtri(p2)), r)
    return (p11 - p1 * p2) / math.sqrt(p1 * (1 - p1) * p2 * (1 - p2))


def solve_latent_correlation(p1: float, p2: float, target_rho: float) -> float:
    """Latent normal correlation giving binaries with Pearson correlation ``target_rho``.

    The binaries are ``1{U_i > Phi^-1(1 - p_i)}``; their correlation is
    increasing in the latent correlation, so bisection on ``(-1, 1)`` works.
    """
    for p in (p1, p2):
        if not 0.0 < p < 1.0:
            raise InvalidArgumentError(f"marginal means must lie in (0, 1), got {p}")
    lo_b, hi_b = binary_correlation_bounds(p1, p2)
    if not lo_b < target_rho < hi_b:
        raise InfeasibleCorrelationError(
            f"correlation {target_rho} unattainable for marginals ({p1}, {p2}); "
            f"bounds are ({lo_b:.6f}, {hi_b:.6f})",
            (lo_b, hi_b),
        )
    if target_rho == 0.0:
        return 0.0
    lo, hi = -1.0, 1.0
    while hi - lo > LATENT_TOL:
        mid = 0.5 * (lo + hi)
        if _binary_corr_from_latent(p1, p2, mid) < target_rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@lru_cache(maxsize=64)
def _latent_matrix(marginals: tuple[float, ...], corr: tuple[tuple[float, ...], ...]):
    d = len(marginals)
    lat = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            lat[i, j] = lat[j, i] = solve_latent_correlation(marginals[i], marginals[j], corr[i][j])
    vals, vecs = np.linalg.eigh(lat)
    if vals.min() < 0.0:
        if vals.min() < -PSD_REPAIR:
            raise GenerationError(
                f"latent correlation matrix is not positive semi-definite "
                f"(smallest eigenvalue {vals.min():.3g})"
            )
        lat = vecs @ np.diag(np.clip(vals, 0.0, None)) @ vecs.T
        scale = np.sqrt(np.diag(lat))
        lat = lat / np.outer(scale, scale)
    lat.setflags(write=False)
    return lat


def latent_correlation_matrix(marginals, corr) -> np.ndarray:
    marginals = tuple(float(p) for p in marginals)
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (len(marginals), len(marginals)) or not np.allclose(corr, corr.T):
        raise InvalidArgumentError("binary correlation matrix must be symmetric and d x d")
    return _latent_matrix(marginals, tuple(map(tuple, corr.tolist())))


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # PSD latent matrices after repair may be singular; fall back to eigh
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -PSD_REPAIR:
        raise GenerationError("covariance matrix is not positive definite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gen_mvn(cov, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows of ``N(0, cov)``; ``cov`` must be positive definite."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise GenerationError("covariance matrix is not positive definite") from None
    return rng.standard_normal((n, cov.shape[0])) @ L.T


def gen_truncated_mvn(cov, lower: float, upper: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``N(0, cov)`` rows conditioned on every coordinate lying in ``[lower, upper]``."""
    if not lower < upper:
        raise InvalidArgumentError(f"need lower < upper, got ({lower}, {upper})")
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise GenerationError("covariance matrix is not positive definite") from None
    d = cov.shape[0]
    out = np.empty((0, d))
    tried = accepted = 0
    while out.shape[0] < n:
        need = n - out.shape[0]
        rate = accepted / tried if tried else 0.5
        batch = max(1000, int(1.2 * need / max(rate, MIN_ACCEPTANCE)))
        z = rng.standard_normal((batch, d)) @ L.T
        ok = np.all((z >= lower) & (z <= upper), axis=1)
        tried += batch
        accepted += int(ok.sum())
        if accepted / tried < MIN_ACCEPTANCE:
            raise GenerationError(
                f"truncation acceptance rate {accepted / tried:.2g} is below {MIN_ACCEPTANCE}"
            )
        out = np.vstack([out, z[ok][:need]])
    return out


def gen_correlated_binary(marginals, corr, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n x d`` 0/1 matrix with the given means and pairwise Pearson correlations."""
    marginals = np.asarray(marginals, dtype=float)
    lat = latent_correlation_matrix(marginals, corr)
    u = rng.standard_normal((n, marginals.size)) @ _sqrt_factor(lat).T
    return (u > ndtri(1.0 - marginals)).astype(float)


def gen_treatment(X, intercept: float, beta, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli treatment with ``P(Z=1) = expit(intercept + X beta)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (X.shape[1],):
        raise InvalidArgumentError(f"beta must have {X.shape[1]} entries, got {beta.shape}")
    return (rng.random(X.shape[0]) < expit(intercept + X @ beta)).astype(int)


@dataclass(frozen=True)
class SimStudyConfig:
    """Generative specification of a pseudo-experiment study.

    Covariate columns are the binary block followed by the normal block.
    ``unobserved`` is a 0-based column index hidden from the analyst.
    """

    name: str
    binary_marginals: tuple[float, ...]
    binary_corr: tuple[tuple[float, ...], ...]
    normal_cov: tuple[tuple[float, ...], ...]
    intercept: float
    beta: tuple[float, ...]
    n: int = 500
    reps: int = 1000
    resamples: int = 100
    truth_n: int = 100_000
    truncation: tuple[float, float] | None = None
    unobserved: int | None = None
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        tup = lambda m: tuple(tuple(float(v) for v in row) for row in m)  # noqa: E731
        object.__setattr__(self, "binary_marginals", tuple(float(p) for p in self.binary_marginals))
        object.__setattr__(self, "binary_corr", tup(self.binary_corr))
        object.__setattr__(self, "normal_cov", tup(self.normal_cov))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.truncation is not None:
            object.__setattr__(self, "truncation", tuple(float(t) for t in self.truncation))
        nb, nn = len(self.binary_marginals), len(self.normal_cov)
        total = nb + nn
        if not self.names:
            object.__setattr__(self, "names", tuple(f"X{k + 1}" for k in range(total)))
        else:
            object.__setattr__(self, "names", tuple(self.names))
        for label, m, d in (("binary_corr", self.binary_corr, nb), ("normal_cov", self.normal_cov, nn)):
            a = np.asarray(m, dtype=float).reshape(d, -1) if d else np.zeros((0, 0))
            if a.shape != (d, d) or not np.allclose(a, a.T):
                raise InvalidArgumentError(f"{label} must be a symmetric {d} x {d} matrix")
        if len(self.beta) != total or len(self.names) != total:
            raise InvalidArgumentError(f"beta and names must have {total} entries")
        if self.unobserved is not None and not 0 <= self.unobserved < total:
            raise InvalidArgumentError(f"unobserved index {self.unobserved} out of range")
        if self.truncation is not None and not self.truncation[0] < self.truncation[1]:
            raise InvalidArgumentError("truncation bounds must satisfy lower < upper")
        if min(self.n, self.reps, self.resamples, self.truth_n) < 1:
            raise InvalidArgumentError("n, reps, resamples and truth_n must be positive")

    @property
    def n_covariates(self) -> int:
        return len(self.beta)

    @property
    def observed(self) -> list[int]:
        return [k for k in range(self.n_covariates) if k != self.unobserved]

    def replace(self, **changes) -> "SimStudyConfig":
        d = self.to_dict()
        d.update(changes)
        return SimStudyConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("binary_marginals", "beta", "names", "truncation"):
            if d[key] is not None:
                d[key] = list(d[key])
        for key in ("binary_corr", "normal_cov"):
            d[key] = [list(row) for row in d[key]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimStudyConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidArgumentError(f"unknown config fields: {sorted(extra)}")
        d = dict(d)
        if d.get("truncation") is not None:
            d["truncation"] = tuple(d["truncation"])
        return cls(**d)


def generate_covariates(config: SimStudyConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """All covariate columns (observed and hidden) for ``n`` subjects."""
    blocks = []
    if config.binary_marginals:
        blocks.append(gen_correlated_binary(config.binary_marginals, config.binary_corr, n, rng))
    if config.normal_cov:
        if config.truncation is None:
            blocks.append(gen_mvn(config.normal_cov, n, rng))
        else:
            lo, hi = config.truncation
            blocks.append(gen_truncated_mvn(config.normal_cov, lo, hi, n, rng))
    return np.hstack(blocks)


def simulate_dataset(config: SimStudyConfig, n: int, rng: np.random.Generator) -> Dataset:
    """One analyst-view dataset: the hidden column (if any) is dropped after
    treatment assignment."""
    X = generate_covariates(config, n, rng)
    z = gen_treatment(X, config.intercept, config.beta, rng)
    obs = config.observed
    return Dataset(z, X[:, obs], tuple(config.names[k] for k in obs))


_BINARY_MEANS = (0.2, 0.6, 0.1, 0.3)
_BINARY_CORR = (
    (1.00, -0.40, 0.00, 0.10),
    (-0.40, 1.00, 0.00, -0.10),
    (0.00, 0.00, 1.00, 0.10),
    (0.10, -0.10, 0.10, 1.00),
)
_SIGMA6 = (
    (1.00, 0.90, 0.30, 0.30, 0.40, 0.30),
    (0.90, 1.00, 0.40, 0.30, 0.50, 0.20),
    (0.30, 0.40, 1.00, 0.20, 0.30, 0.10),
    (0.30, 0.30, 0.20, 1.00, 0.30, 0.00),
    (0.40, 0.50, 0.30, 0.30, 1.00, 0.10),
    (0.30, 0.20, 0.10, 0.00, 0.10, 1.00),
)
_SIGMA7 = (
    (1.00, 0.90, 0.30, 0.30, 0.40, 0.30, 0.20),
    (0.90, 1.00, 0.40, 0.30, 0.50, 0.20, 0.50),
    (0.30, 0.40, 1.00, 0.20, 0.30, 0.10, 0.00),
    (0.30, 0.30, 0.20, 1.00, 0.30, 0.00, 0.30),
    (0.40, 0.50, 0.30, 0.30, 1.00, 0.10, 0.70),
    (0.30, 0.20, 0.10, 0.00, 0.10, 1.00, 0.10),
    (0.20, 0.50, 0.00, 0.30, 0.70, 0.10, 1.00),
)


def builtin_configs() -> dict[str, SimStudyConfig]:
    """The two simulation designs: no hidden confounder, and X11 hidden."""
    return {
        "study1": SimStudyConfig(
            name="study1",
            binary_marginals=_BINARY_MEANS,
            binary_corr=_BINARY_CORR,
            normal_cov=_SIGMA6,
            intercept=1.7,
            beta=(0, 1.5, -0.5, -1.2, 4.4, -1.8, -0.3, 0, 0.9, -2),
        ),
        "study2": SimStudyConfig(
            name="study2",
            binary_marginals=_BINARY_MEANS,
            binary_corr=_BINARY_CORR,
            normal_cov=_SIGMA7,
            intercept=0.0,
            beta=(0, 0.7, -1.6, -0.8, 2, -0.6, -0.2, 0.8, 1.4, 0.3, 1.6),
            truncation=(-2.0, 2.0),
            unobserved=10,
        ),
    }
