"""Exponential-weight resampling of SIP estimates.

Each draw multiplies every subject's log-likelihood contribution by an
independent Exp(1) weight, refits the whole model family and recomputes the
SIPs.  Draw ``r`` (1-based ``seed_tag``) owns child ``r - 1`` of the run's
:class:`numpy.random.SeedSequence`, so results do not depend on the order in
which draws are computed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ResamplingError, SipError
from .glm import Dataset
from .sip import AVERAGED, POINT, SipResult, fit_family, row_sips

MAX_FAILED_FRACTION = 0.10


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        raise InvalidArgumentError("an explicit seed is required")
    return np.random.SeedSequence(seed)


def draw_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` standard exponential variates by inversion, ``-log(1 - U)``."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    return -np.log1p(-rng.random(n))


@dataclass(frozen=True, eq=False)
class ResampleDraw:
    seed_tag: int
    weights: np.ndarray
    sip: SipResult | None
    error: str | None = None
    rows: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.sip is not None


@dataclass(frozen=True, eq=False)
class ResampleSummary:
    per_covariate_sd: np.ndarray
    overall_sd: float
    per_covariate_ci: np.ndarray
    overall_ci: tuple[float, float]
    level: float
    draws: int
    failed: int = 0


def resample_draw(
    dataset: Dataset,
    stream: np.random.SeedSequence,
    seed_tag: int,
    point=None,
    *,
    permissive: bool = False,
    ridge: float = 0.0,
    keep_rows: bool = False,
) -> ResampleDraw:
    """One weighted refit; fit failures are captured on the returned draw."""
    w = draw_weights(dataset.n, np.random.default_rng(stream))
    try:
        family = fit_family(dataset, w, permissive=permissive, ridge=ridge)
    except SipError as exc:
        return ResampleDraw(seed_tag, w, None, f"{type(exc).__name__}: {exc}")
    if point is None:
        rows = row_sips(dataset, family)
        sip = SipResult(rows.mean(axis=0), AVERAGED, None, dataset.names, family.flagged)
        return ResampleDraw(seed_tag, w, sip, None, rows if keep_rows else None)
    x = np.asarray(point, dtype=float)
    per = row_sips(dataset, family, x[None, :])[0]
    return ResampleDraw(seed_tag, w, SipResult(per, POINT, x, dataset.names, family.flagged))


def resample_sips(
    dataset: Dataset,
    R: int,
    seed,
    point=None,
    *,
    permissive: bool = False,
    ridge: float = 0.0,
    keep_rows: bool = False,
    max_failed_fraction: float = MAX_FAILED_FRACTION,
) -> list[ResampleDraw]:
    """``R`` weighted refits, averaged over rows unless ``point`` is given.

    Raises ResamplingError when more than ``max_failed_fraction`` of the
    draws fail; the error's ``draws`` attribute holds every draw.
    """
    if R < 2:
        raise InvalidArgumentError("R must be >= 2")
    if point is not None and np.shape(point) != (dataset.K,):
        raise InvalidArgumentError(f"point must have {dataset.K} coordinates")
    streams = as_seed_sequence(seed).spawn(R)
    draws = [
        resample_draw(
            dataset, s, r + 1, point, permissive=permissive, ridge=ridge, keep_rows=keep_rows
        )
        for r, s in enumerate(streams)
    ]
    failed = [d for d in draws if not d.ok]
    if len(failed) > max_failed_fraction * R:
        err = ResamplingError(
            f"{len(failed)} of {R} resampling draws failed; first: {failed[0].error}"
        )
        err.draws = draws
        raise err
    return draws


def summarize_draws(draws: list[ResampleDraw], level: float = 0.95) -> ResampleSummary:
    """Sample SDs and percentile intervals (linear interpolation) over successful draws."""
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError(f"level must lie in (0, 1), got {level}")
    good = [d for d in draws if d.ok]
    if len(good) < 2:
        raise ResamplingError(f"need at least 2 successful draws, got {len(good)}")
    per = np.array([d.sip.per_covariate for d in good])
    overall = np.array([d.sip.overall for d in good])
    q = [(1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0]
    ci = np.quantile(per, q, axis=0).T
    oci = np.quantile(overall, q)
    # centring on the first draw first keeps the SD of identical draws exactly 0
    return ResampleSummary(
        per_covariate_sd=(per - per[0]).std(axis=0, ddof=1),
        overall_sd=float((overall - overall[0]).std(ddof=1)),
        per_covariate_ci=ci,
        overall_ci=(float(oci[0]), float(oci[1])),
        level=level,
        draws=len(good),
        failed=len(draws) - len(good),
    )
