"""Monte Carlo studies of SIP estimators.

``run_study`` repeats generate -> estimate -> resample for a simulation
config and summarizes against large-sample "true" SIPs.  ``semi_synthetic_study``
keeps a real covariate matrix fixed, regenerates treatment from the logistic
model fitted to the real data, and summarizes both cohort-averaged and
per-subject SIPs.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .datagen import SimStudyConfig, simulate_dataset
from .errors import InvalidArgumentError, SipError, StudyError
from .glm import Dataset, fit_logistic
from .resampling import as_seed_sequence, resample_sips, summarize_draws
from .sip import fit_family, row_sips, sip_averaged

log = logging.getLogger(__name__)

MAX_FAILED_REPS = 0.05


@dataclass(frozen=True)
class StudySummaryRow:
    """One covariate's line in a study summary; ``index`` is None for the overall SIP."""

    index: int | None
    covariate: str
    mean: float
    true_sd: float
    resampling_sd: float
    true_value: float = math.nan
    coverage: float = math.nan
    mean_rank: float = math.nan
    beta: float = math.nan

    @property
    def label(self) -> str:
        return "SIP" if self.index is None else f"SIP_{self.index + 1}"


@dataclass(frozen=True, eq=False)
class QqSeries:
    """Order-statistic pairs ``(reference, estimate, ci_lower, ci_upper)``."""

    points: np.ndarray
    label: str = ""
    names: tuple[str, ...] = ()

    @property
    def crosses(self) -> np.ndarray:
        ref, _, lo, hi = self.points.T
        return (lo <= ref) & (ref <= hi)

    @property
    def crossing_fraction(self) -> float:
        return float(np.mean(self.crosses))


def qq_series(estimates, cis, reference, label: str = "", names: Sequence[str] = ()) -> QqSeries:
    """Pair sorted reference values with sorted estimates, carrying each estimate's CI."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(reference, dtype=float)
    cis = np.asarray(cis, dtype=float)
    if est.ndim != 1 or est.shape != ref.shape or cis.shape != (est.size, 2):
        raise InvalidArgumentError("estimates, reference and cis must have matching lengths")
    if est.size < 2:
        raise InvalidArgumentError("a Q-Q series needs at least 2 points")
    if np.any(cis[:, 0] > cis[:, 1]):
        raise InvalidArgumentError("every CI must satisfy lower <= upper")
    order = np.lexsort((cis[:, 1], cis[:, 0], est))
    pts = np.column_stack([np.sort(ref), est[order], cis[order, 0], cis[order, 1]])
    labels = tuple(names[i] for i in order) if len(names) else ()
    return QqSeries(pts, label, labels)


def mean_ranks(estimates: np.ndarray) -> np.ndarray:
    """Average rank per column, rank 1 = largest value, ties averaged."""
    return rankdata(-np.asarray(estimates), axis=-1, method="average").mean(axis=0)


def _percentile_ci(values: np.ndarray, level: float) -> np.ndarray:
    q = [(1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0]
    return np.quantile(values, q, axis=0).T


def compute_true_sips(
    config: SimStudyConfig, seed, *, oracle: bool = False, permissive: bool = False
) -> np.ndarray:
    """Averaged SIPs of one dataset with ``config.truth_n`` rows.

    By default only the analyst-visible covariates enter the models.  With
    ``oracle=True`` the hidden covariate is kept in every model and the SIPs
    of the visible covariates are returned; without a hidden covariate both
    views coincide.
    """
    rng = np.random.default_rng(as_seed_sequence(seed))
    data = simulate_dataset(config.replace(unobserved=None), config.truth_n, rng)
    if oracle:
        return sip_averaged(data, permissive=permissive).per_covariate[config.observed]
    return sip_averaged(data.select(config.observed), permissive=permissive).per_covariate


def _replicate(config: SimStudyConfig, stream, R: int, level: float, permissive: bool, ridge: float):
    data_ss, draw_ss = stream.spawn(2)
    data = simulate_dataset(config, config.n, np.random.default_rng(data_ss))
    est = sip_averaged(data, permissive=permissive, ridge=ridge).per_covariate
    summary = summarize_draws(
        resample_sips(data, R, draw_ss, permissive=permissive, ridge=ridge), level
    )
    return est, summary.per_covariate_sd, summary.per_covariate_ci


def _safe_replicate(args):
    try:
        return _replicate(*args)
    except SipError as exc:
        return f"{type(exc).__name__}: {exc}"


def _run_jobs(fn, jobs, workers: int, progress: Callable[[int, int], None] | None):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(fn(job))
            if progress is not None:
                progress(i + 1, len(jobs))
    return results


def _check_failures(results, reps: int):
    failures = [(i, r) for i, r in enumerate(results) if isinstance(r, str)]
    if len(failures) > MAX_FAILED_REPS * reps:
        raise StudyError(
            f"{len(failures)} of {reps} replications failed; first: {failures[0][1]}", failures
        )
    for i, msg in failures:
        log.warning("replication %d failed: %s", i, msg)
    return failures


@dataclass(eq=False)
class StudyResult:
    config: SimStudyConfig
    names: tuple[str, ...]
    beta: np.ndarray
    truth: np.ndarray
    estimates: np.ndarray
    resampling_sd: np.ndarray
    cis: np.ndarray
    failures: list[tuple[int, str]]
    level: float
    reference: np.ndarray | None = None

    @property
    def reps(self) -> int:
        return self.estimates.shape[0]

    @property
    def coverage(self) -> np.ndarray:
        lo, hi = self.cis[..., 0], self.cis[..., 1]
        return np.mean((lo <= self.truth) & (self.truth <= hi), axis=0)

    @property
    def mean_rank(self) -> np.ndarray:
        return mean_ranks(self.estimates)

    @property
    def rows(self) -> list[StudySummaryRow]:
        """Summary rows ordered by decreasing ``|beta|`` (stable)."""
        mean = self.estimates.mean(axis=0)
        sd = self.estimates.std(axis=0, ddof=1)
        rs = self.resampling_sd.mean(axis=0)
        cov, rank = self.coverage, self.mean_rank
        order = sorted(range(len(self.names)), key=lambda k: -abs(self.beta[k]))
        return [
            StudySummaryRow(
                index=int(self._index[k]),
                covariate=self.names[k],
                mean=float(mean[k]),
                true_sd=float(sd[k]),
                resampling_sd=float(rs[k]),
                true_value=float(self.truth[k]),
                coverage=float(cov[k]),
                mean_rank=float(rank[k]),
                beta=float(self.beta[k]),
            )
            for k in order
        ]

    @property
    def _index(self) -> list[int]:
        return self.config.observed

    def qq(self) -> QqSeries:
        """Mean estimates against the oracle reference SIPs.

        Bars are across-replication percentile intervals of the estimates.
        """
        return qq_series(
            self.estimates.mean(axis=0),
            _percentile_ci(self.estimates, self.level),
            self.truth if self.reference is None else self.reference,
            self.config.name,
            self.names,
        )


def run_study(
    config: SimStudyConfig,
    seed,
    *,
    reps: int | None = None,
    resamples: int | None = None,
    level: float = 0.95,
    truth: np.ndarray | None = None,
    reference: np.ndarray | None = None,
    permissive: bool = False,
    ridge: float = 0.0,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> StudyResult:
    """Replicate the estimate-and-resample pipeline ``reps`` times.

    ``reps`` and ``resamples`` default to the config's values.  The seed's
    first child generates the truth dataset, the second is split once per
    replication, so every table cell is a function of ``(config, seed)``.
    """
    reps = config.reps if reps is None else reps
    R = config.resamples if resamples is None else resamples
    if reps < 2:
        raise InvalidArgumentError("reps must be >= 2")
    truth_ss, rep_ss = as_seed_sequence(seed).spawn(2)
    if truth is None:
        truth = compute_true_sips(config, truth_ss, permissive=permissive)
    truth = np.asarray(truth, dtype=float)
    if reference is None:
        if config.unobserved is None:
            reference = truth
        else:
            reference = compute_true_sips(config, truth_ss, oracle=True, permissive=permissive)
    jobs = [(config, s, R, level, permissive, ridge) for s in rep_ss.spawn(reps)]
    results = _run_jobs(_safe_replicate, jobs, workers, progress)
    failures = _check_failures(results, reps)
    good = [r for r in results if not isinstance(r, str)]
    return StudyResult(
        config=config,
        names=tuple(config.names[k] for k in config.observed),
        beta=np.array([config.beta[k] for k in config.observed]),
        truth=truth,
        estimates=np.array([g[0] for g in good]),
        resampling_sd=np.array([g[1] for g in good]),
        cis=np.array([g[2] for g in good]),
        failures=failures,
        level=level,
        reference=np.asarray(reference, dtype=float),
    )


def standardize(dataset: Dataset) -> Dataset:
    """Center and scale every covariate column (binary indicators included)."""
    X = dataset.covariates
    sd = X.std(axis=0)
    const = [dataset.names[k] for k in np.flatnonzero(sd == 0)]
    if const:
        raise InvalidArgumentError(f"cannot standardize constant columns: {const}")
    return Dataset(dataset.treatment, (X - X.mean(axis=0)) / sd, dataset.names, dataset.ids)


def _semi_rep(args):
    X, names, alpha, beta, stream, R, permissive, ridge = args
    data_ss, draw_ss = stream.spawn(2)
    rng = np.random.default_rng(data_ss)
    z = (rng.random(X.shape[0]) < 1.0 / (1.0 + np.exp(-(alpha + X @ beta)))).astype(int)
    try:
        data = Dataset(z, X, names)
        rows = row_sips(data, fit_family(data, permissive=permissive, ridge=ridge))
        draws = resample_sips(data, R, draw_ss, permissive=permissive, ridge=ridge, keep_rows=True)
    except SipError as exc:
        return f"{type(exc).__name__}: {exc}"
    avg_sd, row_sd, _ = _draw_spread(draws)
    return rows, (avg_sd, row_sd)


def _draw_spread(draws):
    """Across-draw SDs of averaged and per-row SIPs, with the overall SIP appended."""
    stack = np.array([d.rows for d in draws if d.ok])  # (R, n, K)
    stack = np.concatenate([stack, stack.mean(axis=2, keepdims=True)], axis=2)
    avg = stack.mean(axis=1)  # (R, K+1)
    return avg.std(axis=0, ddof=1), stack.std(axis=0, ddof=1), stack


@dataclass(eq=False)
class SemiSyntheticResult:
    """Replicated SIPs over a fixed (standardized) covariate matrix.

    Arrays carry the overall SIP as their last column.
    """

    data: Dataset
    alpha: float
    beta: np.ndarray
    row_estimates: np.ndarray  # (reps, n, K+1)
    resampling_sd: np.ndarray  # (reps, K+1)
    row_resampling_sd: np.ndarray  # (reps, n, K+1)
    observed_rows: np.ndarray  # (n, K+1) SIPs of the real treatment
    observed_draws: np.ndarray  # (R, n, K+1)
    failures: list[tuple[int, str]]
    level: float

    @property
    def names(self) -> tuple[str, ...]:
        return self.data.names

    @property
    def reps(self) -> int:
        return self.row_estimates.shape[0]

    @property
    def estimates(self) -> np.ndarray:
        """Per-replication cohort-averaged SIPs, shape ``(reps, K+1)``."""
        return self.row_estimates.mean(axis=1)

    def _table(self, est, rs) -> list[StudySummaryRow]:
        K = self.data.K
        mean, sd = est.mean(axis=0), est.std(axis=0, ddof=1)
        rs = rs.mean(axis=0)
        rank = mean_ranks(est[:, :K])
        rows = [
            StudySummaryRow(
                index=k,
                covariate=self.names[k],
                mean=float(mean[k]),
                true_sd=float(sd[k]),
                resampling_sd=float(rs[k]),
                mean_rank=float(rank[k]),
                beta=float(self.beta[k]),
            )
            for k in sorted(range(K), key=lambda k: (rank[k], -mean[k]))
        ]
        rows.append(
            StudySummaryRow(None, "overall", float(mean[K]), float(sd[K]), float(rs[K]))
        )
        return rows

    def cohort_table(self) -> list[StudySummaryRow]:
        """Cohort-averaged summary ordered by mean rank; last row is the overall SIP."""
        return self._table(self.estimates, self.resampling_sd)

    def subject_table(self, row: int) -> list[StudySummaryRow]:
        """The same summary for SIPs evaluated at one subject's covariates."""
        if not 0 <= row < self.data.n:
            raise InvalidArgumentError(f"subject row {row} out of range 0..{self.data.n - 1}")
        return self._table(self.row_estimates[:, row, :], self.row_resampling_sd[:, row, :])

    def qq(self, row: int | None = None) -> QqSeries:
        """Real-data SIPs (with resampling CIs) against the semi-synthetic means."""
        K = self.data.K
        if row is None:
            est = self.observed_rows.mean(axis=0)[:K]
            draws = self.observed_draws.mean(axis=1)[:, :K]
            ref = self.estimates.mean(axis=0)[:K]
            label = "cohort"
        else:
            est = self.observed_rows[row, :K]
            draws = self.observed_draws[:, row, :K]
            ref = self.row_estimates[:, row, :K].mean(axis=0)
            label = f"subject row {row}"
        return qq_series(est, _percentile_ci(draws, self.level), ref, label, self.names)


def semi_synthetic_study(
    dataset: Dataset,
    reps: int,
    R: int,
    seed,
    *,
    level: float = 0.95,
    permissive: bool = False,
    ridge: float = 0.0,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> SemiSyntheticResult:
    """Standardize, fit the full propensity model, then resimulate treatment ``reps`` times."""
    if reps < 2 or R < 2:
        raise InvalidArgumentError("reps and R must be >= 2")
    data = standardize(dataset)
    full = fit_logistic(data, range(data.K), ridge=ridge)
    if not full.usable:
        raise SipError(
            "the full propensity model separates the real data; pseudo-true "
            "coefficients do not exist"
        )
    obs_ss, rep_ss = as_seed_sequence(seed).spawn(2)
    family = fit_family(data, permissive=permissive, ridge=ridge)
    obs = row_sips(data, family)
    obs = np.concatenate([obs, obs.mean(axis=1, keepdims=True)], axis=1)
    obs_draws = resample_sips(data, R, obs_ss, permissive=permissive, ridge=ridge, keep_rows=True)
    _, _, obs_stack = _draw_spread(obs_draws)

    jobs = [
        (data.covariates, data.names, full.alpha, full.beta, s, R, permissive, ridge)
        for s in rep_ss.spawn(reps)
    ]
    results = _run_jobs(_semi_rep, jobs, workers, progress)
    failures = _check_failures(results, reps)
    good = [r for r in results if not isinstance(r, str)]
    row_est = np.array([np.concatenate([g[0], g[0].mean(axis=1, keepdims=True)], axis=1) for g in good])
    return SemiSyntheticResult(
        data=data,
        alpha=full.alpha,
        beta=full.beta,
        row_estimates=row_est,
        resampling_sd=np.array([g[1][0] for g in good]),
        row_resampling_sd=np.array([g[1][1] for g in good]),
        observed_rows=obs,
        observed_draws=obs_stack,
        failures=failures,
        level=level,
    )
