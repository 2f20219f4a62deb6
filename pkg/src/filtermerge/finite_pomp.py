"""Finite-alphabet partially observed Markov processes and exact filtering.

The model is a hidden chain on n states with row-stochastic transition matrix
T, an i.i.d. noise symbol Z on m points with law Q, and an observation
Y = h(X, Z) taking K distinct values. The assignment h is stored as an
integer matrix H with H[x, z] = output index, from which the channel matrix

    B[x, y] = sum_z Q[z] * 1{H[x, z] == y}

is derived. B is canonical for computation; (Q, H) is canonical for the file
format. All beliefs are plain probability vectors over states, renormalized
after every Bayes step.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import AbsoluteContinuityViolated, ZeroEvidence

SUM_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteDist:
    """Probability vector over the state alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(p < 0.0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > SUM_ATOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")

    @property
    def n(self):
        return self.probs.size

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n, x):
        p = np.zeros(n)
        p[x] = 1.0
        return cls(p)


def build_channel_matrix(Q, H, K=None):
    """Channel matrix B[x, y] = P(Y = y | X = x) from noise law and assignment.

    Parameters
    ----------
    Q : length-m probability vector over noise symbols
    H : n x m integer matrix, H[x, z] = output index of h(x, z)
    K : number of output levels; defaults to max(H) + 1
    """
    Q = np.asarray(Q, dtype=float)
    H = np.asarray(H)
    if H.ndim != 2:
        raise ValueError("H must be a 2-d assignment matrix")
    if not np.issubdtype(H.dtype, np.integer):
        Hf = np.asarray(H, dtype=float)
        H = Hf.astype(int)
        if np.any(Hf != H):
            raise ValueError("H entries must be integers")
    if Q.ndim != 1 or Q.shape[0] != H.shape[1]:
        raise ValueError("Q length must match the noise axis of H")
    if np.any(Q < 0.0) or abs(Q.sum() - 1.0) > SUM_ATOL:
        raise ValueError("Q must be a probability vector")
    if K is None:
        K = int(H.max()) + 1
    if np.any(H < 0) or np.any(H >= K):
        raise ValueError("output indices in H must lie in [0, K)")
    n = H.shape[0]
    B = np.zeros((n, int(K)))
    for y in range(int(K)):
        B[:, y] = (Q * (H == y)).sum(axis=1)
    return B


@dataclass(frozen=True, eq=False)
class FinitePOMP:
    """Finite POMP (T, Q, H) with the derived channel matrix B.

    A caller-supplied B is only accepted if it reproduces the one derived
    from (Q, H) exactly.
    """

    T: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    K: int = None
    B: np.ndarray = None

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        H = np.asarray(self.H)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError("T must be square")
        if np.any(T < 0.0) or np.any(np.abs(T.sum(axis=1) - 1.0) > SUM_ATOL):
            raise ValueError("every row of T must be a probability vector")
        if H.shape[0] != T.shape[0]:
            raise ValueError("H must have one row per state")
        K = self.K if self.K is not None else int(np.asarray(H).max()) + 1
        derived = build_channel_matrix(Q, H, K=int(K))
        if self.B is not None and not np.array_equal(
                np.asarray(self.B, dtype=float), derived):
            raise ValueError("stored B does not match the channel derived "
                             "from (Q, H)")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "H", np.asarray(H, dtype=int))
        object.__setattr__(self, "K", int(K))
        object.__setattr__(self, "B", derived)

    @property
    def n(self):
        return self.T.shape[0]

    @property
    def m(self):
        return self.Q.shape[0]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One sampled realization (states, observations) and the seed it used."""

    xs: np.ndarray
    ys: np.ndarray
    seed: int

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=int)
        ys = np.asarray(self.ys, dtype=int)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValueError("xs and ys must be index vectors of equal length")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)


def model_to_dict(model):
    return {
        "n": int(model.n),
        "m": int(model.m),
        "K": int(model.K),
        "T": model.T.tolist(),
        "Q": model.Q.tolist(),
        "H": model.H.tolist(),
    }


def model_from_dict(d):
    """Build a model from the JSON dict {n, m, K, T, Q, H[, B]}."""
    T = np.asarray(d["T"], dtype=float)
    Q = np.asarray(d["Q"], dtype=float)
    H = np.asarray(d["H"])
    for key, want in (("n", T.shape[0]), ("m", Q.shape[0])):
        if key in d and int(d[key]) != int(want):
            raise ValueError(f"declared {key}={d[key]} does not match arrays")
    K = int(d["K"]) if "K" in d else None
    B = np.asarray(d["B"], dtype=float) if "B" in d else None
    return FinitePOMP(T=T, Q=Q, H=H, K=K, B=B)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def filter_init(model, prior, y0):
    """Belief over X_0 after seeing the first observation y0."""
    w = prior.probs * model.B[:, int(y0)]
    total = w.sum()
    if total == 0.0:
        raise ZeroEvidence(f"P(Y_0={y0}) is zero under the prior")
    return FiniteDist(w / total)


def predict(model, pi):
    """One-step predictor: push the belief through the transition matrix."""
    return FiniteDist(pi.probs @ model.T)


def filter_update(model, pi_prev, y):
    """Bayes step: propagate pi_prev one step, then condition on Y = y."""
    w = model.B[:, int(y)] * (pi_prev.probs @ model.T)
    total = w.sum()
    if total == 0.0:
        raise ZeroEvidence(f"observation {y} has zero probability under the "
                           "propagated belief")
    return FiniteDist(w / total)


def filter_sequence(model, prior, ys):
    """Filters and one-step predictors along a whole observation sequence.

    Returns (filters, predictors), each a list of FiniteDist of length
    len(ys). predictors[0] is the prior itself; predictors[t] for t >= 1 is
    the filter at t-1 pushed through T.
    """
    filters = [filter_init(model, prior, ys[0])]
    predictors = [prior]
    for y in ys[1:]:
        predictors.append(predict(model, filters[-1]))
        filters.append(filter_update(model, filters[-1], y))
    return filters, predictors


def sample_trajectory(model, prior, horizon, seed):
    """Sample (X_0..X_h, Y_0..Y_h) from the model started at the prior.

    Fully deterministic given ``seed``: draws come from
    ``np.random.default_rng(seed)`` in the fixed order
    x_0, y_0, x_1, y_1, ..., x_h, y_h.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = np.random.default_rng(seed)
    n, K = model.n, model.K
    xs = np.empty(horizon + 1, dtype=int)
    ys = np.empty(horizon + 1, dtype=int)
    xs[0] = rng.choice(n, p=prior.probs)
    ys[0] = rng.choice(K, p=model.B[xs[0]])
    for t in range(horizon):
        xs[t + 1] = rng.choice(n, p=model.T[xs[t]])
        ys[t + 1] = rng.choice(K, p=model.B[xs[t + 1]])
    return Trajectory(xs=xs, ys=ys, seed=int(seed))


def smooth_x0(model, prior, ys, x_n=None):
    """Exact conditional law of X_0 given Y_{0:h} = ys (and X_h = x_n if
    given), by a backward pass over the alphabet. O(n^2 h), no path
    enumeration."""
    ys = [int(y) for y in ys]
    n = model.n
    if x_n is None:
        beta = np.ones(n)
    else:
        beta = np.zeros(n)
        beta[int(x_n)] = 1.0
    # beta[x] = P(y_{t+1:h} [, X_h = x_n] | X_t = x)
    for t in range(len(ys) - 2, -1, -1):
        beta = model.T @ (model.B[:, ys[t + 1]] * beta)
    w = prior.probs * model.B[:, ys[0]] * beta
    total = w.sum()
    if total == 0.0:
        raise ZeroEvidence("conditioning event has probability zero")
    return FiniteDist(w / total)


def rn_identity_gap(model, mu, nu, ys, n=None):
    """Worst-state gap between the two exact expressions for the density of
    the mu-filter with respect to the nu-filter.

    One side is the ratio of the two filters run independently; the other is
    the smoothed expectation of dmu/dnu(X_0) pinned at the end state, divided
    by its unpinned version. Both are exact finite sums, so the gap should be
    at floating-point level.
    """
    if n is None:
        n = len(ys) - 1
    ys = [int(y) for y in ys[: n + 1]]
    mu_p, nu_p = mu.probs, nu.probs
    if np.any((mu_p > 0.0) & (nu_p == 0.0)):
        raise AbsoluteContinuityViolated("mu is not absolutely continuous "
                                         "with respect to nu")
    ratio = np.divide(mu_p, nu_p, out=np.zeros_like(mu_p),
                      where=nu_p > 0.0)
    filt_mu, _ = filter_sequence(model, mu, ys)
    filt_nu, _ = filter_sequence(model, nu, ys)
    pi_mu = filt_mu[-1].probs
    pi_nu = filt_nu[-1].probs
    denom = float(ratio @ smooth_x0(model, nu, ys).probs)
    gap = 0.0
    for x in range(model.n):
        if pi_nu[x] <= 0.0:
            continue
        pinned = smooth_x0(model, nu, ys, x_n=x)
        rhs = float(ratio @ pinned.probs) / denom
        lhs = pi_mu[x] / pi_nu[x]
        gap = max(gap, abs(lhs - rhs))
    return gap
