"""Leave-one-variable-out influence scores and sensitivity index probabilities.

For covariates ``1..K`` the full model ``B`` and every model with one or two
covariates removed are fitted once.  At a point ``x``:

* ``full[j]  = e_B(x) - e_{B minus j}(x)`` is covariate ``j``'s influence,
* ``bench[j, k] = e_{B minus j}(x) - e_{B minus j,k}(x)`` is the influence of
  ``k`` in the pseudo-experiment where ``j`` is treated as unobserved,

and ``SIP_j(x)`` is the share of ``k != j`` with ``|full[j]| > |bench[j, k]|``.
Everything is on the log-odds (linear predictor) scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping

import numpy as np

from .errors import FitFailureError, InvalidArgumentError, InvariantError
from .glm import Dataset, FitResult, IndexSet, fit_many

AVERAGED = "averaged"
POINT = "point"


def enumerate_fit_family(K: int) -> list[IndexSet]:
    """Full set, all leave-one-out sets, then all leave-two-out sets (0-based)."""
    if K < 2:
        raise InvalidArgumentError(f"need at least 2 covariates for a benchmark, got K={K}")
    full = tuple(range(K))
    family = [full]
    family += [tuple(c for c in full if c != j) for j in full]
    family += [tuple(c for c in full if c not in (j, k)) for j, k in combinations(full, 2)]
    return family


def family_size(K: int) -> int:
    return 1 + K + K * (K - 1) // 2


@dataclass
class FitFamily:
    """Fit cache for one dataset and weight vector.

    ``fits`` is keyed by canonical index set; the leave-one-out fit of ``j``
    serves both as the reduced full model and as the pseudo-experiment's
    benchmark model.
    """

    K: int
    fits: dict[IndexSet, FitResult]
    flagged: tuple[IndexSet, ...] = ()
    fit_count: int = 0

    def __getitem__(self, key: IndexSet) -> FitResult:
        try:
            return self.fits[key]
        except KeyError:
            raise InvariantError(f"fit cache has no entry for index set {key}") from None


def fit_family(
    dataset: Dataset,
    weights: np.ndarray | None = None,
    *,
    permissive: bool = False,
    ridge: float = 0.0,
) -> FitFamily:
    """Fit every model of the family exactly once.

    Raises FitFailureError naming the first index set whose fit did not
    converge, unless ``permissive`` is set, in which case flagged fits are
    kept and listed in ``FitFamily.flagged``.
    """
    sets = enumerate_fit_family(dataset.K)
    fits = fit_many(dataset, sets, weights, ridge=ridge)
    bad = [f for f in fits if not f.usable]
    if bad and not permissive:
        f = bad[0]
        why = "separation" if f.separation_flag else "no convergence"
        raise FitFailureError(
            f"logistic fit failed ({why}) for index set "
            f"{[dataset.names[c] for c in f.index_set]}",
            f.index_set,
        )
    return FitFamily(
        K=dataset.K,
        fits={f.index_set: f for f in fits},
        flagged=tuple(f.index_set for f in bad),
        fit_count=len(fits),
    )


def _coefficient_matrix(family: Mapping[IndexSet, FitResult] | FitFamily, K: int):
    """Stack the family's fits as rows of a ``(m, K+1)`` [alpha, beta] matrix.

    Row order follows :func:`enumerate_fit_family`.
    """
    sets = enumerate_fit_family(K)
    coef = np.zeros((len(sets), K + 1))
    for i, s in enumerate(sets):
        f = _lookup(family, s)
        coef[i, 0] = f.alpha
        coef[i, 1 + np.array(s, dtype=int)] = f.beta
    return coef


def _lookup(cache, key):
    try:
        return cache[key]
    except KeyError:
        raise InvariantError(f"fit cache has no entry for index set {key}") from None


def _pair_rows(K: int) -> np.ndarray:
    rows = np.zeros((K, K), dtype=int)
    for i, (j, k) in enumerate(combinations(range(K), 2)):
        rows[j, k] = rows[k, j] = 1 + K + i
    return rows


def influence_arrays(family, points: np.ndarray, K: int):
    """Influence scores at each row of ``points``.

    Returns ``full`` with shape ``(m, K)`` and ``bench`` with shape
    ``(m, K, K)``; ``bench[:, j, j]`` is NaN.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != K:
        raise InvalidArgumentError(f"points must be (m, {K}), got {points.shape}")
    coef = _coefficient_matrix(family, K)
    eta = coef[:, 0] + points @ coef[:, 1:].T  # (m, family size)
    loo = eta[:, 1 : K + 1]
    full = eta[:, [0]] - loo
    rows = _pair_rows(K)
    bench = loo[:, :, None] - eta[:, rows]
    idx = np.arange(K)
    bench[:, idx, idx] = np.nan
    return full, bench


def sip_from_scores(full: np.ndarray, bench: np.ndarray) -> np.ndarray:
    """Per-covariate SIPs for each evaluation point (strict inequality, ties lose)."""
    K = full.shape[-1]
    off = ~np.eye(K, dtype=bool)
    wins = (np.abs(full)[..., :, None] > np.abs(bench)) & off
    return wins.sum(axis=-1) / (K - 1)


@dataclass(frozen=True, eq=False)
class InfluenceTable:
    full_scores: np.ndarray
    benchmark_scores: np.ndarray
    evaluation_point: np.ndarray | str


@dataclass(frozen=True, eq=False)
class SipResult:
    """Per-covariate SIPs and their mean (the overall SIP)."""

    per_covariate: np.ndarray
    mode: str
    point: np.ndarray | None = None
    names: tuple[str, ...] = ()
    flagged: tuple[IndexSet, ...] = ()
    overall: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "overall", float(np.mean(self.per_covariate)))

    def as_dict(self) -> dict[str, float]:
        out = {name: float(v) for name, v in zip(self.names, self.per_covariate)}
        out["overall"] = self.overall
        return out


def influence_scores(dataset: Dataset, fit_cache, x) -> InfluenceTable:
    x = np.asarray(x, dtype=float)
    if x.shape != (dataset.K,):
        raise InvalidArgumentError(f"x must have {dataset.K} coordinates, got shape {x.shape}")
    full, bench = influence_arrays(fit_cache, x[None, :], dataset.K)
    return InfluenceTable(full[0], bench[0], x)


def sip_at_point(table: InfluenceTable, names: tuple[str, ...] = ()) -> SipResult:
    full = np.asarray(table.full_scores, dtype=float)
    bench = np.asarray(table.benchmark_scores, dtype=float)
    K = full.shape[0]
    if K < 2 or bench.shape != (K, K):
        raise InvalidArgumentError("influence table must have K >= 2 and a K x K benchmark")
    point = None if isinstance(table.evaluation_point, str) else table.evaluation_point
    return SipResult(sip_from_scores(full, bench), POINT, point, names)


def row_sips(dataset: Dataset, family: FitFamily, points: np.ndarray | None = None) -> np.ndarray:
    """Point SIPs at every observed row (or at ``points``), shape ``(m, K)``."""
    points = dataset.covariates if points is None else points
    full, bench = influence_arrays(family, points, dataset.K)
    return sip_from_scores(full, bench)


def sip_averaged(
    dataset: Dataset,
    weights: np.ndarray | None = None,
    *,
    permissive: bool = False,
    ridge: float = 0.0,
    family: FitFamily | None = None,
) -> SipResult:
    """SIPs averaged over every observed covariate row."""
    if family is None:
        family = fit_family(dataset, weights, permissive=permissive, ridge=ridge)
    rows = row_sips(dataset, family)
    return SipResult(rows.mean(axis=0), AVERAGED, None, dataset.names, family.flagged)


def sip_point(
    dataset: Dataset,
    x,
    weights: np.ndarray | None = None,
    *,
    permissive: bool = False,
    ridge: float = 0.0,
    family: FitFamily | None = None,
) -> SipResult:
    """SIPs at a single covariate point ``x``."""
    if family is None:
        family = fit_family(dataset, weights, permissive=permissive, ridge=ridge)
    res = sip_at_point(influence_scores(dataset, family, x), dataset.names)
    return SipResult(res.per_covariate, POINT, res.point, dataset.names, family.flagged)
