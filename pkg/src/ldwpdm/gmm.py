"""Full-covariance Gaussian mixture: densities, EM fitting and BIC selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .domain import DIM_LABELS
from .errors import EmptyData, InsufficientData, SingularCovariance

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
JITTER_SCALE = 1e-6
DEFAULT_EPSILON = 1e-10
DEFAULT_MAX_ITER = 500
DEFAULT_RESTARTS = 5
_LLOYD_STEPS = 10
_DEGENERATE_MASS = 1e-9
# smallest covariance eigenvalue, in units of the per-dimension data variance, below which
# a component counts as collapsed onto a lower-dimensional set (the likelihood is unbounded there)
_COLLAPSE_EIG = 1e-6


def regularized_cholesky(cov, floor: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factor of ``cov``; adds ``lam * I`` only if the plain factorization fails.

    ``lam`` starts at ``1e-6`` times the mean diagonal variance (or ``floor`` when
    that is zero) and grows tenfold until the factorization succeeds.

    Returns:
        ``(L, cov_used)`` where ``cov_used`` is the possibly jittered matrix.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise SingularCovariance("covariance contains non-finite entries")
    try:
        return np.linalg.cholesky(cov), cov
    except np.linalg.LinAlgError:
        pass
    lam = JITTER_SCALE * float(np.mean(np.diag(cov)))
    if not lam > 0:
        lam = floor
    if not lam > 0:
        raise SingularCovariance("covariance is not positive definite and has no scale to regularize with")
    eye = np.eye(cov.shape[0])
    for _ in range(12):
        jittered = cov + lam * eye
        try:
            return np.linalg.cholesky(jittered), jittered
        except np.linalg.LinAlgError:
            lam *= 10.0
    raise SingularCovariance("covariance stays singular after regularization")


def _chol_logpdf(X: np.ndarray, mu: np.ndarray, L: np.ndarray) -> np.ndarray:
    d = mu.shape[0]
    z = solve_triangular(L, (X - mu).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", z, z)
    half_logdet = np.sum(np.log(np.diag(L)))
    return -0.5 * (d * LOG_2PI + maha) - half_logdet


def mgd_logpdf(x, mu, sigma) -> np.ndarray | float:
    """Log density of a multivariate Gaussian; ``x`` may be one point or ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    L, _ = regularized_cholesky(sigma)
    X = x.reshape(-1, mu.shape[0])
    out = _chol_logpdf(X, mu, L)
    return float(out[0]) if x.ndim <= 1 and X.shape[0] == 1 else out


def mgd_pdf(x, mu, sigma):
    """Multivariate Gaussian density, evaluated through the log domain."""
    return np.exp(mgd_logpdf(x, mu, sigma))


@dataclass(frozen=True, eq=False)
class FitReport:
    iterations: int
    loglik_trace: tuple[float, ...]
    converged: bool
    epsilon: float
    restarts: int = 1
    reinitializations: int = 0
    # indices into loglik_trace whose step moved a degenerate component instead of a plain EM update
    reinit_steps: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "loglik_trace": list(self.loglik_trace),
            "converged": self.converged,
            "epsilon": self.epsilon,
            "restarts": self.restarts,
            "reinitializations": self.reinitializations,
            "reinit_steps": list(self.reinit_steps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(
            iterations=int(d["iterations"]),
            loglik_trace=tuple(float(x) for x in d["loglik_trace"]),
            converged=bool(d["converged"]),
            epsilon=float(d["epsilon"]),
            restarts=int(d.get("restarts", 1)),
            reinitializations=int(d.get("reinitializations", 0)),
            reinit_steps=tuple(int(i) for i in d.get("reinit_steps", ())),
        )


@dataclass(frozen=True, eq=False)
class GmmModel:
    """K weighted full-covariance Gaussians over ``d`` dimensions."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    dim_labels: tuple[str, ...] = DIM_LABELS
    fit_report: FitReport | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.array(self.means, dtype=float))
        cov = np.array(self.covariances, dtype=float)
        K, d = mu.shape
        if cov.ndim == 2 and d == 1:
            cov = cov.reshape(K, 1, 1)
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covariances {cov.shape}")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie in (0, 1] and sum to 1")
        if not np.allclose(cov, np.transpose(cov, (0, 2, 1)), rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariances must be symmetric")
        labels = tuple(self.dim_labels)
        if len(labels) != d:
            labels = tuple(f"x{i}" for i in range(d))
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dim_labels", labels)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @cached_property
    def cholesky(self) -> np.ndarray:
        return np.stack([regularized_cholesky(c)[0] for c in self.covariances])

    def component_logpdf(self, X) -> np.ndarray:
        """``(n, K)`` matrix of per-component Gaussian log densities (unweighted)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([_chol_logpdf(X, self.means[k], self.cholesky[k]) for k in range(self.K)])

    def weighted_logpdf(self, X) -> np.ndarray:
        return self.component_logpdf(X) + np.log(self.weights)

    def logpdf(self, X) -> np.ndarray:
        return logsumexp(self.weighted_logpdf(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "dim_labels": list(self.dim_labels),
            "K": self.K,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": [c.reshape(-1).tolist() for c in self.covariances],
            "fit_report": None if self.fit_report is None else self.fit_report.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        means = np.asarray(d["means"], dtype=float)
        K, dim = means.shape
        covs = np.asarray(d["covariances"], dtype=float).reshape(K, dim, dim)
        report = d.get("fit_report")
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            means=means,
            covariances=covs,
            dim_labels=tuple(d.get("dim_labels", DIM_LABELS)),
            fit_report=None if report is None else FitReport.from_dict(report),
        )


def gmm_pdf(x, model: GmmModel):
    """Mixture density ``sum_k w_k N(x; mu_k, Sigma_k)`` for one point or a batch."""
    x = np.asarray(x, dtype=float)
    out = np.exp(model.logpdf(x.reshape(-1, model.d)))
    return float(out[0]) if x.ndim <= 1 else out


def log_likelihood(data, model: GmmModel) -> float:
    X = _as_data(data, model.d)
    # correctly rounded, so the result does not depend on summation order
    return math.fsum(model.logpdf(X))


def _as_data(data, d: int | None = None) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.size == 0:
        raise EmptyData("data is empty")
    if X.ndim == 1:
        X = X.reshape(-1, 1) if d in (None, 1) else X.reshape(1, -1)
    if d is not None and X.shape[1] != d:
        raise ValueError(f"data has {X.shape[1]} columns, model expects {d}")
    return X


# -- EM ---------------------------------------------------------------------------

def _kmeanspp_labels(Z: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = Z.shape[0]
    centers = np.empty((K, Z.shape[1]))
    centers[0] = Z[rng.integers(n)]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    # greedy seeding: of a few d2-weighted candidates keep the one that lowers the potential most
    trials = 2 + int(math.log(K))
    for k in range(1, K):
        total = d2.sum()
        if total > 0:
            cand = rng.choice(n, size=trials, p=d2 / total)
        else:
            cand = rng.integers(n, size=trials)
        cd2 = np.minimum(d2[None], ((Z[None] - Z[cand][:, None]) ** 2).sum(axis=2))
        best = int(np.argmin(cd2.sum(axis=1)))
        centers[k] = Z[cand[best]]
        d2 = cd2[best]
    labels = None
    for _ in range(_LLOYD_STEPS):
        dist = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            members = labels == k
            if members.any():
                centers[k] = Z[members].mean(axis=0)
            else:
                far = int(np.argmax(dist[np.arange(n), labels]))
                centers[k] = Z[far]
                labels[far] = k
    return labels


def _params_from_labels(X, labels, K, floor):
    n, d = X.shape
    w = np.empty(K)
    mu = np.empty((K, d))
    cov = np.empty((K, d, d))
    for k in range(K):
        members = X[labels == k]
        if len(members) == 0:
            members = X[[k % n]]
        w[k] = len(members)
        mu[k] = members.mean(axis=0)
        diff = members - mu[k]
        c = diff.T @ diff / len(members)
        cov[k] = regularized_cholesky(c, floor)[1]
    return w / w.sum(), mu, cov


def _stacked_logpdf(X1T, mu, chol):
    """``(K, n)`` component log densities from one stacked projection.

    ``X1T`` is the ``(d + 1, n)`` transposed data with a trailing row of ones, so
    each block ``L_k^-1 (x - mu_k)`` of the product comes out of a single matmul.
    """
    K, d = mu.shape
    linv = np.stack([solve_triangular(chol[k], np.eye(d), lower=True) for k in range(K)])
    W = np.empty((K, d, d + 1))
    W[:, :, :d] = linv
    W[:, :, d] = -np.einsum("ked,kd->ke", linv, mu)
    Y = W.reshape(K * d, d + 1) @ X1T
    Y *= Y
    maha = Y.reshape(K, d, -1).sum(axis=1)
    half_logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    maha *= -0.5
    maha -= (0.5 * d * LOG_2PI + half_logdet)[:, None]
    return maha


def _estep(X1T, w, mu, cov, floor):
    """Responsibilities ``(K, n)`` and per-point log-likelihoods ``(n,)``."""
    K = w.shape[0]
    chol = np.empty_like(cov)
    for k in range(K):
        chol[k], cov[k] = regularized_cholesky(cov[k], floor)
    logp = _stacked_logpdf(X1T, mu, chol)
    logp += np.log(w)[:, None]
    top = logp.max(axis=0)
    logp -= top
    np.exp(logp, out=logp)
    total = logp.sum(axis=0)
    logp /= total
    return logp, top + np.log(total)


def _mstep(X, XX, resp):
    n, d = X.shape
    nk = resp.sum(axis=1)
    w = nk / n
    w = w / w.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        # components without mass come out as NaN here and are reinitialized by the caller
        mu = (resp @ X) / nk[:, None]
        second = (resp @ XX).reshape(-1, d, d) / nk[:, None, None]
    cov = second - mu[:, :, None] * mu[:, None, :]
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    return nk, w, mu, cov


def _em_single(X, K, init, epsilon, max_iter, rng, floor):
    if isinstance(init, GmmModel):
        w, mu, cov = init.weights.copy(), init.means.copy(), init.covariances.copy()
    elif init == "random":
        idx = rng.choice(X.shape[0], size=K, replace=False)
        d2 = ((X[:, None, :] - X[idx][None]) ** 2).sum(axis=2)
        w, mu, cov = _params_from_labels(X, np.argmin(d2, axis=1), K, floor)
    elif init in ("kmeans++", "kmeans"):
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        Z = (X - X.mean(axis=0)) / scale
        w, mu, cov = _params_from_labels(X, _kmeanspp_labels(Z, K, rng), K, floor)
    else:
        raise ValueError(f"unknown init strategy {init!r}")

    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    unit = np.outer(1.0 / scale, 1.0 / scale)
    XX = (X[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)
    X1T = np.vstack([X.T, np.ones(X.shape[0])])
    resp, point_ll = _estep(X1T, w, mu, cov, floor)
    trace = [float(point_ll.sum())]
    converged = False
    reinits = 0
    steps = []
    it = 0
    while it < max_iter:
        nk, w, mu, cov = _mstep(X, XX, resp)
        with np.errstate(invalid="ignore"):
            low = np.linalg.eigvalsh(np.nan_to_num(cov) * unit)[:, 0]
        dead = np.flatnonzero((nk < _DEGENERATE_MASS) | ~(low >= _COLLAPSE_EIG))
        if dead.size:
            # keep K fixed: move dead or collapsed components onto the worst-explained points
            order = np.argsort(point_ll, kind="stable")
            global_cov = np.cov(X, rowvar=False, bias=True).reshape(X.shape[1], X.shape[1])
            for j, k in enumerate(dead):
                mu[k] = X[order[j]]
                cov[k] = global_cov
                w[k] = 1.0 / X.shape[0]
            w /= w.sum()
            reinits += dead.size
            steps.append(it + 1)
            log.debug("reinitialized %d degenerate component(s)", dead.size)
        it += 1
        resp, point_ll = _estep(X1T, w, mu, cov, floor)
        trace.append(float(point_ll.sum()))
        if not dead.size and trace[-1] - trace[-2] < epsilon:
            converged = True
            break
    report = FitReport(it, tuple(trace), converged, epsilon, 1, reinits, tuple(steps))
    return w, mu, cov, report


def em_fit(
    data,
    K: int,
    init="kmeans++",
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int | None = 0,
    restarts: int = DEFAULT_RESTARTS,
    dim_labels: Sequence[str] | None = None,
) -> tuple[GmmModel, FitReport]:
    """Maximum-likelihood mixture fit by expectation-maximization.

    Each run alternates responsibilities (E-step) with weighted mean/covariance
    updates (M-step) and stops at the first iteration whose log-likelihood gain
    falls below ``epsilon``. Of ``restarts`` independently seeded runs the one
    with the highest final log-likelihood is returned.

    Args:
        data: ``(n, d)`` array of observations.
        K: number of components.
        init: ``"kmeans++"`` (default), ``"random"``, or a :class:`GmmModel` to start from.
        epsilon: absolute log-likelihood tolerance.
        max_iter: cap on EM iterations per run.
        seed: seed for all randomness of the fit.
        restarts: number of independent initializations (ignored when ``init`` is a model).
    """
    X = _as_data(data)
    n, d = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if n < K * (d + 1):
        raise InsufficientData(f"{n} points cannot support K={K} components in d={d} (need {K * (d + 1)})")
    floor = JITTER_SCALE * max(float(np.mean(X.var(axis=0))), np.finfo(float).tiny)
    runs = 1 if isinstance(init, GmmModel) else max(1, int(restarts))
    seeds = np.random.SeedSequence(seed).spawn(runs)

    # EM runs on centred data to keep the moment-based covariance update well conditioned
    center = X.mean(axis=0)
    Xc = X - center
    start = init
    if isinstance(init, GmmModel):
        start = GmmModel(init.weights, init.means - center, init.covariances, init.dim_labels)
    best = None
    for ss in seeds:
        w, mu, cov, report = _em_single(Xc, K, start, epsilon, max_iter, np.random.default_rng(ss), floor)
        if best is None or report.loglik_trace[-1] > best[3].loglik_trace[-1]:
            best = (w, mu, cov, report)
    w, mu, cov, report = best
    report = FitReport(report.iterations, report.loglik_trace, report.converged, epsilon, runs,
                       report.reinitializations, report.reinit_steps)
    labels = tuple(dim_labels) if dim_labels is not None else (DIM_LABELS if d == len(DIM_LABELS) else ())
    model = GmmModel(w, mu + center, cov, labels, report)
    return model, report


# -- model selection ----------------------------------------------------------------

def n_parameters(K: int, d: int) -> int:
    """Free parameters of a full-covariance mixture: weights, means and covariances."""
    return (K - 1) + K * d + K * d * (d + 1) // 2


def bic_score(data, model: GmmModel) -> float:
    """``-2 log L + p ln n``; lower is better."""
    X = _as_data(data, model.d)
    return -2.0 * log_likelihood(X, model) + n_parameters(model.K, model.d) * math.log(X.shape[0])


class BicPoint(NamedTuple):
    k: int
    bic: float
    model: GmmModel


def elbow(ks: Sequence[int], bics: Sequence[float], threshold: float = 0.01) -> int:
    """Smallest K after which adding a component improves BIC by less than ``threshold`` (relative)."""
    for i in range(len(ks) - 1):
        prev, nxt = bics[i], bics[i + 1]
        gain = (prev - nxt) / abs(prev) if prev != 0 else (0.0 if nxt >= prev else math.inf)
        if gain < threshold:
            return ks[i]
    return ks[-1]


def select_components(
    data,
    K_range: Sequence[int],
    runs_per_K: int = 1,
    seed: int | None = 0,
    threshold: float = 0.01,
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[int, list[BicPoint]]:
    """Sweep K, score each best-of-``runs_per_K`` fit by BIC and pick the elbow."""
    ks = sorted(set(int(k) for k in K_range))
    if not ks:
        raise ValueError("K_range is empty")
    X = _as_data(data)
    seeds = np.random.SeedSequence(seed).spawn(len(ks))
    curve = []
    for k, ss in zip(ks, seeds):
        model, _ = em_fit(X, k, epsilon=epsilon, max_iter=max_iter,
                          seed=int(ss.generate_state(1)[0]), restarts=runs_per_K)
        curve.append(BicPoint(k, bic_score(X, model), model))
    return elbow(ks, [p.bic for p in curve], threshold), curve
