"""Hidden-mode layer over the mixture components.

Every mixture component is one hidden mode. Transitions are estimated by counting
consecutive hard mode assignments; the mode weights are filtered forward on the
observable block (v, psi, rho, dy) and the yaw rate is regressed per mode.

Mode indices are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .domain import DIM_LABELS, ObservablePoint
from .errors import NumericalUnderflow, SequenceTooShort, SingularCovariance
from .gmm import LOG_2PI, GmmModel, em_fit, regularized_cholesky

ZETA_INDEX = (0, 1, 2, 3)
TARGET_INDEX = 4


def assign_modes(X, gmm: GmmModel) -> np.ndarray:
    """Mode of each row: argmax of the unweighted component densities (first index wins ties)."""
    return np.argmax(gmm.component_logpdf(X), axis=1)


def assign_mode(x, gmm: GmmModel) -> int:
    return int(assign_modes(np.atleast_2d(np.asarray(x, dtype=float)), gmm)[0])


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    entries: np.ndarray
    counts: np.ndarray
    state_totals: np.ndarray

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_counts(cls, counts) -> "TransitionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        K = counts.shape[0]
        totals = counts.sum(axis=1)
        entries = np.full((K, K), 1.0 / K)
        seen = totals > 0
        entries[seen] = counts[seen] / totals[seen, None]
        return cls(entries, counts, totals)

    def to_dict(self) -> dict:
        return {
            "entries": self.entries.tolist(),
            "counts": self.counts.tolist(),
            "state_totals": self.state_totals.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionMatrix":
        return cls(np.asarray(d["entries"], dtype=float),
                   np.asarray(d["counts"], dtype=np.int64),
                   np.asarray(d["state_totals"], dtype=np.int64))


def count_transitions(mode_sequence, K: int) -> np.ndarray:
    seq = np.asarray(mode_sequence, dtype=np.int64)
    counts = np.zeros((K, K), dtype=np.int64)
    if len(seq) >= 2:
        np.add.at(counts, (seq[:-1], seq[1:]), 1)
    return counts


def estimate_transitions(mode_sequence, K: int) -> TransitionMatrix:
    """Row-normalized transfer counts; modes never left get a uniform row."""
    if len(mode_sequence) < 2:
        raise SequenceTooShort("need at least two modes to count a transition")
    return TransitionMatrix.from_counts(count_transitions(mode_sequence, K))


def estimate_transitions_many(sequences: Iterable[Sequence[int]], K: int) -> TransitionMatrix:
    """Pool transfer counts over several sequences without bridging their boundaries."""
    counts = np.zeros((K, K), dtype=np.int64)
    longest = 0
    for seq in sequences:
        counts += count_transitions(seq, K)
        longest = max(longest, len(seq))
    if longest < 2:
        raise SequenceTooShort("no sequence has two or more modes")
    return TransitionMatrix.from_counts(counts)


@dataclass(frozen=True)
class ForwardState:
    beta: np.ndarray
    t: int = 0


@dataclass(frozen=True, eq=False)
class PdmModel:
    """Personalized driver model: mixture, mode transitions and the observable/yaw-rate split."""

    gmm: GmmModel
    transitions: TransitionMatrix
    zeta_index: tuple[int, ...] = ZETA_INDEX
    target_index: int = TARGET_INDEX
    mu_z: np.ndarray = field(init=False, repr=False)
    mu_y: np.ndarray = field(init=False, repr=False)
    chol_zz: np.ndarray = field(init=False, repr=False)
    coef: np.ndarray = field(init=False, repr=False)
    log_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        zi = tuple(int(i) for i in self.zeta_index)
        ti = int(self.target_index)
        if sorted(zi + (ti,)) != list(range(self.gmm.d)):
            raise ValueError("partition must cover every dimension exactly once")
        if self.transitions.K != self.gmm.K:
            raise ValueError("transition matrix size does not match the number of components")
        S = self.gmm.covariances
        mu = self.gmm.means
        K, m = self.gmm.K, len(zi)
        chol = np.empty((K, m, m))
        coef = np.empty((K, m))
        for k in range(K):
            try:
                chol[k] = regularized_cholesky(S[k][np.ix_(zi, zi)])[0]
            except SingularCovariance as exc:
                raise SingularCovariance(f"observable block of component {k} is singular") from exc
            s_zy = S[k][zi, ti]
            # coef = Sigma_yz Sigma_zz^-1, via two triangular solves
            tmp = solve_triangular(chol[k], s_zy, lower=True)
            coef[k] = solve_triangular(chol[k].T, tmp, lower=False)
        log_norm = -0.5 * m * LOG_2PI - np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        for name, val in (("zeta_index", zi), ("target_index", ti), ("mu_z", mu[:, zi].copy()),
                          ("mu_y", mu[:, ti].copy()), ("chol_zz", chol), ("coef", coef),
                          ("log_norm", log_norm)):
            object.__setattr__(self, name, val)

    @property
    def K(self) -> int:
        return self.gmm.K

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.gmm.weights)

    def zeta_logpdf(self, Z) -> np.ndarray:
        """``(n, K)`` log N(zeta; mu_k^zeta, Sigma_k^zetazeta)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty((Z.shape[0], self.K))
        for k in range(self.K):
            z = solve_triangular(self.chol_zz[k], (Z - self.mu_z[k]).T, lower=True, check_finite=False)
            out[:, k] = self.log_norm[k] - 0.5 * np.einsum("ij,ij->j", z, z)
        return out

    @staticmethod
    def _normalize(logits: np.ndarray) -> np.ndarray:
        norm = logsumexp(logits, axis=1, keepdims=True)
        if not np.all(np.isfinite(norm)):
            raise NumericalUnderflow("all mode weights vanished")
        beta = np.exp(logits - norm)
        return beta / beta.sum(axis=1, keepdims=True)

    def init_beta(self, Z) -> np.ndarray:
        """Initial mode weights, proportional to w_k N(zeta_1)."""
        return self._normalize(self.log_weights + self.zeta_logpdf(Z))

    def advance(self, beta, Z) -> np.ndarray:
        """One forward step for a batch: ``beta`` is ``(n, K)``, ``Z`` is ``(n, 4)``."""
        prior = np.atleast_2d(beta) @ self.transitions.entries
        with np.errstate(divide="ignore"):
            logits = np.log(prior) + self.zeta_logpdf(Z)
        return self._normalize(logits)

    def advance_linear(self, beta, Z) -> np.ndarray:
        """Same recursion as :meth:`advance` without the log domain (underflows on outliers)."""
        prior = np.atleast_2d(beta) @ self.transitions.entries
        unnorm = prior * np.exp(self.zeta_logpdf(Z))
        total = unnorm.sum(axis=1, keepdims=True)
        if not np.all(total > 0):
            raise NumericalUnderflow("linear-domain weights underflowed")
        return unnorm / total

    def conditional_means(self, Z) -> np.ndarray:
        """``(n, K)`` per-mode regression mu_k^y + Sigma_k^yz (Sigma_k^zz)^-1 (zeta - mu_k^z)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self.mu_y + np.einsum("kj,nkj->nk", self.coef, Z[:, None, :] - self.mu_z[None])

    def yaw_rate(self, beta, Z) -> np.ndarray:
        return np.sum(np.atleast_2d(beta) * self.conditional_means(Z), axis=1)

    def filter(self, Z) -> np.ndarray:
        """Forward-filtered mode weights for every row of one observable sequence."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty((Z.shape[0], self.K))
        if not len(Z):
            return out
        logpdf = self.zeta_logpdf(Z)
        T = self.transitions.entries
        out[0] = self._normalize((self.log_weights + logpdf[0])[None])[0]
        with np.errstate(divide="ignore"):
            for i in range(1, len(Z)):
                logits = np.log(out[i - 1] @ T) + logpdf[i]
                out[i] = self._normalize(logits[None])[0]
        return out

    def to_dict(self) -> dict:
        return {
            "gmm": self.gmm.to_dict(),
            "transitions": self.transitions.to_dict(),
            "partition": {
                "zeta": [self.gmm.dim_labels[i] for i in self.zeta_index],
                "target": self.gmm.dim_labels[self.target_index],
                "zeta_index": list(self.zeta_index),
                "target_index": self.target_index,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PdmModel":
        part = d.get("partition", {})
        return cls(GmmModel.from_dict(d["gmm"]), TransitionMatrix.from_dict(d["transitions"]),
                   tuple(part.get("zeta_index", ZETA_INDEX)), int(part.get("target_index", TARGET_INDEX)))


def _zeta(zeta) -> np.ndarray:
    if isinstance(zeta, ObservablePoint):
        return zeta.zeta[None]
    return np.atleast_2d(np.asarray(zeta, dtype=float))


def init_forward(zeta, model: PdmModel) -> ForwardState:
    return ForwardState(model.init_beta(_zeta(zeta))[0], 0)


def forward_step(state: ForwardState, zeta, model: PdmModel) -> ForwardState:
    return ForwardState(model.advance(state.beta[None], _zeta(zeta))[0], state.t + 1)


def infer_yaw_rate(state: ForwardState, zeta, model: PdmModel) -> float:
    """Conditional expectation of the yaw rate given the filtered mode weights."""
    return float(model.yaw_rate(state.beta[None], _zeta(zeta))[0])


def build_pdm(sequences: Sequence[np.ndarray], gmm: GmmModel) -> PdmModel:
    """Attach mode transitions counted over ``sequences`` (each ``(n_i, 5)``) to a fitted mixture."""
    modes = [assign_modes(seq, gmm) for seq in sequences if len(seq)]
    return PdmModel(gmm, estimate_transitions_many(modes, gmm.K))


def train_pdm(sequences: Sequence[np.ndarray], K: int, *, seed=0, restarts: int = 5,
              epsilon: float = 1e-10, max_iter: int = 500) -> PdmModel:
    """Fit the mixture on the pooled sequences, then count mode transitions within each sequence."""
    pooled = np.concatenate([np.asarray(s, dtype=float) for s in sequences])
    gmm, _ = em_fit(pooled, K, epsilon=epsilon, max_iter=max_iter, seed=seed, restarts=restarts,
                    dim_labels=DIM_LABELS)
    return build_pdm(sequences, gmm)
