"""Logistic-regression maximum likelihood over covariate subsets.

Every model in sipkit is a logit model ``P(Z=1|x) = expit(alpha + x_A' beta)``
fitted to a subset ``A`` of the covariates.  Fits are computed by IRLS
(Newton's method on the concave log-likelihood) with step halving.  Many
subsets of the same design can be fitted at once by :func:`fit_many`, which
runs the identical Newton iteration vectorized across models.

Index sets are 0-based, sorted tuples of covariate columns.  The empty tuple
is the intercept-only model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import ConvergenceError, InvalidArgumentError, SingularDesignError

IndexSet = tuple[int, ...]

GRADIENT_TOL = 1e-8
MAX_ITER = 100
SEPARATION_COEF = 30.0
SEPARATION_IMPROVEMENT = 1e-10
DEFAULT_RIDGE = 1e-6
_MAX_HALVINGS = 40
_RANK_RTOL = 1e-10
_ROUNDOFF = 1e-12


def canonical_set(members: Iterable[int], n_covariates: int) -> IndexSet:
    """Return ``members`` as a sorted tuple of distinct in-range column indices."""
    out = tuple(sorted({int(m) for m in members}))
    if out and (out[0] < 0 or out[-1] >= n_covariates):
        raise InvalidArgumentError(
            f"index set {out} out of bounds for {n_covariates} covariates"
        )
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary treatment vector plus an ``n x K`` covariate matrix."""

    treatment: np.ndarray
    covariates: np.ndarray
    names: tuple[str, ...] = ()
    ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        z = np.asarray(self.treatment)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if z.ndim != 1 or x.ndim != 2:
            raise InvalidArgumentError("treatment must be 1-D and covariates 2-D")
        if z.shape[0] != x.shape[0]:
            raise InvalidArgumentError(
                f"treatment length {z.shape[0]} != covariate rows {x.shape[0]}"
            )
        if z.shape[0] == 0:
            raise InvalidArgumentError("dataset has no subjects")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("covariates contain missing or non-finite values")
        if not np.all((z == 0) | (z == 1)):
            raise InvalidArgumentError("treatment must contain only 0 and 1")
        z = z.astype(float)
        if z.min() == z.max():
            raise InvalidArgumentError("treatment needs at least one 0 and one 1")
        names = tuple(self.names) if self.names else tuple(
            f"X{k + 1}" for k in range(x.shape[1])
        )
        if len(names) != x.shape[1]:
            raise InvalidArgumentError(
                f"{len(names)} names given for {x.shape[1]} covariates"
            )
        z.setflags(write=False)
        x = np.ascontiguousarray(x)
        x.setflags(write=False)
        object.__setattr__(self, "treatment", z)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "names", names)
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != z.shape[0]:
                raise InvalidArgumentError(f"{len(ids)} ids given for {z.shape[0]} subjects")
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def K(self) -> int:
        return self.covariates.shape[1]

    def design(self, members: Sequence[int] = ()) -> np.ndarray:
        """Design matrix with a leading intercept column."""
        members = list(members)
        return np.column_stack([np.ones(self.n), self.covariates[:, members]])

    def select(self, columns: Sequence[int]) -> "Dataset":
        """Dataset restricted to ``columns`` (in the given order)."""
        columns = list(columns)
        return Dataset(
            self.treatment,
            self.covariates[:, columns],
            tuple(self.names[c] for c in columns),
            self.ids,
        )

    def row_of(self, subject: str) -> int:
        """Row index of an external subject ID."""
        if self.ids is None:
            raise InvalidArgumentError("dataset has no ID column")
        try:
            return self.ids.index(str(subject))
        except ValueError:
            raise InvalidArgumentError(f"subject ID {subject!r} not found") from None


@dataclass(frozen=True, eq=False)
class FitResult:
    """Logistic fit over one index set.

    ``converged`` is False for separated fits; such results are only usable
    where the caller explicitly permits flagged fits.
    """

    index_set: IndexSet
    alpha: float
    beta: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    separation_flag: bool
    n_covariates: int
    loglik: float = float("nan")
    trace: list[tuple[int, float, float]] = field(default_factory=list, repr=False)

    @property
    def usable(self) -> bool:
        return self.converged and not self.separation_flag


def _check_weights(weights: np.ndarray | None, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise InvalidArgumentError(f"weights must have length {n}, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidArgumentError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise InvalidArgumentError("weights must not all be zero")
    return w


def _check_beta(members: IndexSet, beta) -> np.ndarray:
    b = np.asarray([] if beta is None else beta, dtype=float).reshape(-1)
    if b.shape != (len(members),):
        raise InvalidArgumentError(
            f"beta has length {b.size} but index set has {len(members)} members"
        )
    return b


def log_likelihood(
    dataset: Dataset,
    members: Sequence[int],
    alpha: float,
    beta,
    weights: np.ndarray | None = None,
) -> float:
    """Average (optionally weighted) Bernoulli log-likelihood of a logit model."""
    members = canonical_set(members, dataset.K)
    b = _check_beta(members, beta)
    w = _check_weights(weights, dataset.n)
    eta = alpha + dataset.covariates[:, list(members)] @ b
    z = dataset.treatment
    return float(np.sum(w * (z * eta - _softplus(eta))) / dataset.n)


def score(
    dataset: Dataset,
    members: Sequence[int],
    alpha: float,
    beta,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of :func:`log_likelihood` with respect to ``(alpha, beta)``."""
    members = canonical_set(members, dataset.K)
    b = _check_beta(members, beta)
    w = _check_weights(weights, dataset.n)
    d = dataset.design(members)
    p = expit(d @ np.concatenate([[alpha], b]))
    return d.T @ (w * (dataset.treatment - p)) / dataset.n


def check_rank(design: np.ndarray, weights: np.ndarray, labels: Sequence[str]) -> None:
    """Raise SingularDesignError if the weighted design lacks full column rank.

    Columns are equilibrated before a column-pivoted QR, so the decision does
    not depend on covariate scale and earlier columns win pivot ties.
    """
    rows = weights > 0
    a = design[rows] * np.sqrt(weights[rows])[:, None]
    norms = np.linalg.norm(a, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        bad = [labels[i] for i in zero]
        raise SingularDesignError(f"design columns are identically zero: {bad}", bad)
    if a.shape[0] < a.shape[1]:
        raise SingularDesignError(
            f"{a.shape[0]} weighted rows cannot identify {a.shape[1]} coefficients",
            list(labels),
        )
    _, r, piv = linalg.qr(a / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > _RANK_RTOL * diag[0]))
    if rank < a.shape[1]:
        bad = [labels[i] for i in sorted(piv[rank:])]
        raise SingularDesignError(
            f"design is rank deficient (rank {rank} of {a.shape[1]}); "
            f"offending columns: {bad}",
            bad,
        )


def _softplus(eta):
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def _objective(X, z, w, B, ridge):
    eta = X @ B.T
    ll = (w @ (z[:, None] * eta - _softplus(eta))) / X.shape[0]
    if ridge:
        ll = ll - 0.5 * ridge * np.sum(B[:, 1:] ** 2, axis=1)
    return ll, eta


def _prob(eta):
    # expit via tanh: same values to ~1e-16 absolute, several times faster
    return 0.5 * np.tanh(0.5 * eta) + 0.5


def _newton(X, z, w, masks, ridge, tol, max_iter, start=None):
    """Masked Newton-Raphson for ``m`` logit models sharing one design.

    ``masks[m, c]`` says whether column ``c`` of ``X`` belongs to model ``m``;
    coefficients outside the mask stay at zero.  ``start`` is an optional
    common starting coefficient vector.  Returns the coefficient matrix and
    per-model diagnostics.
    """
    n, p = X.shape
    m = masks.shape[0]
    B = np.zeros((m, p)) if start is None else np.where(masks, start, 0.0)
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    pen = np.zeros(p)
    pen[1:] = ridge
    obj, ETA = _objective(X, z, w, B, ridge)
    converged = np.zeros(m, bool)
    separated = np.zeros(m, bool)
    iterations = np.zeros(m, int)
    gnorm = np.full(m, np.inf)
    traces = [[] for _ in range(m)]
    active = np.arange(m)
    treated = (z == 1) & (w > 0)
    control = (z == 0) & (w > 0)

    for it in range(max_iter + 1):
        if active.size == 0:
            break
        Ba = B[active]
        Ma = masks[active]
        eta = ETA[:, active]
        P = _prob(eta)
        G = (X.T @ (w[:, None] * (z[:, None] - P))).T / n - pen * Ba
        G = np.where(Ma, G, 0.0)
        gn = np.abs(G).max(axis=1)
        gnorm[active] = gn
        for j, k in enumerate(active):
            traces[k].append((it, float(obj[k]), float(gn[j])))
        done = gn <= tol
        sep_now = np.abs(Ba[:, 1:]).max(axis=1, initial=0.0) > SEPARATION_COEF
        if sep_now.any():
            e = eta[:, sep_now]
            sep_now[sep_now] = e[treated].min(axis=0, initial=np.inf) >= e[control].max(
                axis=0, initial=-np.inf
            )
        separated[active[sep_now]] = True
        converged[active[done & ~sep_now]] = True
        keep = ~(done | sep_now)
        if it == max_iter:
            break
        active, G, P, Ma, Ba = active[keep], G[keep], P[:, keep], Ma[keep], Ba[keep]
        if active.size == 0:
            break

        Wt = w[:, None] * P * (1.0 - P)
        H = (Wt.T @ XX).reshape(-1, p, p) / n + np.diag(pen)
        outer = Ma[:, :, None] & Ma[:, None, :]
        H = np.where(outer, H, 0.0) + np.eye(p) * (~Ma)[:, :, None]
        step = np.linalg.solve(H, G[:, :, None])[:, :, 0]

        t = np.ones(active.size)
        old = obj[active]
        # summation round-off in the objective must not veto a Newton step
        floor = old - _ROUNDOFF * (1.0 + np.abs(old))
        new, eta_new = _objective(X, z, w, Ba + step, ridge)
        pending = np.flatnonzero(new < floor)
        for _ in range(_MAX_HALVINGS):
            if pending.size == 0:
                break
            t[pending] *= 0.5
            new[pending], eta_new[:, pending] = _objective(
                X, z, w, Ba[pending] + t[pending, None] * step[pending], ridge
            )
            pending = pending[new[pending] < floor[pending]]
        stuck = np.zeros(active.size, bool)
        stuck[pending] = True
        Bn = np.where(stuck[:, None], Ba, Ba + t[:, None] * step)
        new = np.where(stuck, old, new)
        improvement = new - old
        B[active] = Bn
        obj[active] = new
        ETA[:, active[~stuck]] = eta_new[:, ~stuck]
        iterations[active] += 1

        big = np.abs(Bn[:, 1:]).max(axis=1, initial=0.0) > SEPARATION_COEF
        sep_now = big & (improvement < SEPARATION_IMPROVEMENT)
        separated[active[sep_now]] = True
        # no ascent direction left and not separated: stop with the last score
        active = active[~(sep_now | stuck)]

    return B, obj, converged, separated, iterations, gnorm, traces


def fit_many(
    dataset: Dataset,
    sets: Sequence[Sequence[int]],
    weights: np.ndarray | None = None,
    *,
    ridge: float = 0.0,
    tol: float = GRADIENT_TOL,
    max_iter: int = MAX_ITER,
    warm_start: bool = True,
) -> list[FitResult]:
    """Fit one logit model per index set, vectorized over the sets.

    The rank check is made once on the union of the requested columns; any
    subset of a full-rank design is itself full rank.  With ``warm_start``
    and the union set among ``sets``, every model starts from the union fit.
    Models that neither converge nor separate come back with ``converged=False`` and
    ``separation_flag=False``; callers decide whether that is fatal.

    The score tolerance, the separation threshold and any ``ridge`` penalty
    all refer to coefficients of standardized covariates.
    """
    K = dataset.K
    sets = [canonical_set(s, K) for s in sets]
    w = _check_weights(weights, dataset.n)
    union = sorted(set().union(*sets)) if sets else []
    cols = [0] + [c + 1 for c in union]
    X = dataset.design(union)
    labels = ["(intercept)"] + [dataset.names[c] for c in union]
    check_rank(X, w, labels)
    pos = {c: i + 1 for i, c in enumerate(union)}
    masks = np.zeros((len(sets), len(cols)), bool)
    masks[:, 0] = True
    for i, s in enumerate(sets):
        masks[i, [pos[c] for c in s]] = True

    # Newton runs on centred, unit-variance columns: the iteration, the
    # tolerance and the separation threshold then do not depend on how each
    # covariate is located or scaled.  Coefficients are mapped back below.
    live = w > 0
    mu = X[live, 1:].mean(axis=0)
    sd = X[live, 1:].std(axis=0)
    Xs = X.copy()
    Xs[:, 1:] = (X[:, 1:] - mu) / sd
    z = dataset.treatment
    start = None
    if warm_start and len(sets) > 1 and masks.all(axis=1).any():
        # subsets start from the union model's coefficients
        full = _newton(Xs, z, w, np.ones((1, len(cols)), bool), ridge, tol, max_iter)
        if full[2][0]:
            start = full[0][0]
    B, obj, conv, sep, its, gn, traces = _newton(Xs, z, w, masks, ridge, tol, max_iter, start)
    B = B.copy()
    B[:, 1:] /= sd
    B[:, 0] -= B[:, 1:] @ mu
    if start is not None:
        its = its + masks.all(axis=1) * full[4][0]
    out = []
    for i, s in enumerate(sets):
        out.append(
            FitResult(
                index_set=s,
                alpha=float(B[i, 0]),
                beta=B[i, [pos[c] for c in s]].copy(),
                converged=bool(conv[i]),
                iterations=int(its[i]),
                final_gradient_norm=float(gn[i]),
                separation_flag=bool(sep[i]),
                n_covariates=K,
                loglik=float(obj[i]),
                trace=traces[i],
            )
        )
    return out


def fit_logistic(
    dataset: Dataset,
    members: Sequence[int] = (),
    weights: np.ndarray | None = None,
    *,
    ridge: float = 0.0,
    tol: float = GRADIENT_TOL,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Maximum-likelihood logit fit of treatment on the covariates in ``members``.

    Raises:
        SingularDesignError: the (weighted) design is rank deficient.
        ConvergenceError: no convergence within ``max_iter`` and no separation.
    """
    fit = fit_many(dataset, [members], weights, ridge=ridge, tol=tol, max_iter=max_iter)[0]
    if not fit.converged and not fit.separation_flag:
        raise ConvergenceError(
            f"IRLS did not converge for index set {fit.index_set} in {max_iter} "
            f"iterations (score max-norm {fit.final_gradient_norm:.3g})",
            fit.trace,
        )
    return fit


def linear_predictor(fit: FitResult, x, *, allow_flagged: bool = False):
    """Fitted log-odds ``alpha + x_A' beta`` at one point or at each row of ``x``."""
    if not fit.usable and not allow_flagged:
        raise InvalidArgumentError(
            f"fit for index set {fit.index_set} is not converged; pass allow_flagged=True"
        )
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != fit.n_covariates or x.ndim not in (1, 2):
        raise InvalidArgumentError(
            f"x must have {fit.n_covariates} coordinates, got shape {x.shape}"
        )
    out = fit.alpha + x[..., list(fit.index_set)] @ fit.beta
    return float(out) if x.ndim == 1 else out
