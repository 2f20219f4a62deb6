"""Distances between beliefs and Monte Carlo merging experiments.

Metrics: total variation in the sum convention (Σ|p_i - q_i|, range [0, 2] —
note that half this value is the other common convention), relative entropy
in nats, the Pinsker bound tv <= sqrt(2·kl), a weak-convergence gap measured
against a fixed finite bank of bounded test functions, and a bounded-Lipschitz
gap solved exactly as a small linear program.

merging_experiment runs dual filters from two priors over many simulated
trajectories and reports per-step averages of all of these, plus the gap
between the one-step-ahead observation laws the two posteriors induce.
invariant_dist and harris_re_curve cover the long-run side: stationary law of
a transition matrix and the decreasing relative-entropy curve toward it.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from operator import index as _as_int
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import (
    AbsoluteContinuityViolated,
    FilterMergeError,
    InfiniteInitialDivergence,
    NonUniqueInvariant,
)
from .finite_pomp import FiniteDist, filter_sequence, model_to_dict, sample_trajectory
from .rng import derive_seed

__all__ = [
    "BANK_VERSION",
    "MergingReport",
    "bl_gap",
    "default_bank",
    "harris_re_curve",
    "invariant_dist",
    "kl",
    "merging_csv_text",
    "merging_experiment",
    "model_digest",
    "pinsker_holds",
    "tv",
    "weak_gap",
]

TV_CONVENTION = "sum(|p_i - q_i|), range [0, 2]"

BANK_VERSION = 1
_BANK_SEED = 0x6D65726765
_BANK_PROFILES = 16

CSV_HEADER = ("step,mean_tv_filter,se_tv_filter,mean_tv_predictor,"
              "mean_kl_filter,se_kl_filter,weak_gap,bl_gap,mean_tv_pred_meas")


def _vec(p) -> np.ndarray:
    a = p.probs if isinstance(p, FiniteDist) else np.asarray(p, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("expected a 1-d probability vector")
    return a


def _pair(p, q):
    a, b = _vec(p), _vec(q)
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def tv(p, q) -> float:
    """Total variation distance Σ|p_i - q_i|, in [0, 2]."""
    a, b = _pair(p, q)
    return float(np.sum(np.abs(a - b)))


def kl(p, q) -> float:
    """Relative entropy Σ p_i·ln(p_i/q_i) in nats; +inf off support."""
    a, b = _pair(p, q)
    mask = a > 0.0
    if np.any(b[mask] == 0.0):
        return math.inf
    am = a[mask]
    return float(np.sum(am * np.log(am / b[mask])))


def pinsker_holds(p, q) -> tuple[bool, float]:
    """Check tv(p,q) <= sqrt(2·kl(p,q)); returns (holds, rhs - lhs)."""
    lhs = tv(p, q)
    d = kl(p, q)
    if d == math.inf:
        return True, math.inf
    rhs = math.sqrt(2.0 * d)
    return lhs <= rhs, rhs - lhs


def default_bank(n: int) -> np.ndarray:
    """The versioned test-function bank over an n-point state space.

    Rows are the n coordinate indicators followed by 16 smooth profiles
    (randomly phased cosines with a sign dither, drawn from a fixed seed and
    sup-normalized). The bank is finite, so the gap it measures is a lower
    bound on the sup over all functions bounded by 1; bump BANK_VERSION on
    any change to this construction.
    """
    n = _as_int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(_BANK_SEED)
    idx = np.arange(n, dtype=float)
    profiles = np.empty((_BANK_PROFILES, n))
    for k in range(_BANK_PROFILES):
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        mix = rng.normal(0.0, 0.5)
        sign = -1.0 if rng.random() < 0.5 else 1.0
        vals = sign * np.cos(2.0 * np.pi * freq * idx / n + phase)
        vals = vals + mix * np.sin(4.0 * np.pi * freq * idx / n)
        peak = np.max(np.abs(vals))
        profiles[k] = vals / peak if peak > 0.0 else vals
    return np.vstack([np.eye(n), profiles])


def weak_gap(p, q, bank: Optional[np.ndarray] = None) -> float:
    """Largest |E_p f - E_q f| over the bank of test functions.

    Defaults to default_bank(n). Rows whose sup norm exceeds 1 are scaled
    down to sup 1 on load; rows already within bounds are used as given.
    """
    a, b = _pair(p, q)
    bank = default_bank(a.size) if bank is None else np.asarray(bank, dtype=float)
    if bank.ndim != 2 or bank.shape[1] != a.size:
        raise ValueError("bank must be a matrix with one column per state")
    if bank.shape[0] == 0:
        return 0.0
    peaks = np.max(np.abs(bank), axis=1)
    scale = np.where(peaks > 1.0, peaks, 1.0)
    return float(np.max(np.abs((bank / scale[:, None]) @ (a - b))))


def bl_gap(p, q, positions) -> float:
    """Bounded-Lipschitz gap with states embedded at the given positions.

    Maximizes Σ f_x (p_x - q_x) over |f| <= 1 with |f_x - f_y| bounded by the
    position distance, solved exactly as a linear program.
    """
    a, b = _pair(p, q)
    pos = np.asarray(positions, dtype=float)
    if pos.shape != a.shape:
        raise ValueError("positions must assign one real location per state")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    n = a.size
    if n == 1:
        return 0.0
    d = a - b
    ii, jj = np.triu_indices(n, 1)
    npairs = ii.size
    A = np.zeros((2 * npairs, n))
    rows = np.arange(npairs)
    A[rows, ii] = 1.0
    A[rows, jj] = -1.0
    A[npairs + rows] = -A[rows]
    bound = np.abs(pos[ii] - pos[jj])
    res = linprog(
        c=-d,
        A_ub=A,
        b_ub=np.concatenate([bound, bound]),
        bounds=[(-1.0, 1.0)] * n,
        method="highs",
    )
    if not res.success:
        raise FilterMergeError(f"bounded-Lipschitz LP did not solve: {res.message}")
    return float(max(0.0, -res.fun))


class _BLPolytopeOracle:
    """Exact bounded-Lipschitz gaps for one fixed position embedding.

    The feasible set {|f| <= 1, |f_x - f_y| <= |pos_x - pos_y|} does not
    depend on the distributions, and a linear objective attains its maximum
    at a vertex. Enumerating the vertices once (every full-rank choice of n
    active constraints, kept if feasible) turns each later solve into a
    matrix product and a max — same optimum as the LP, used when thousands
    of gaps are needed against one embedding.
    """

    # subsets to consider = C(2n + n(n-1), n); past this, building the
    # vertex table costs more than it saves
    MAX_SUBSETS = 50_000

    def __init__(self, positions):
        pos = np.asarray(positions, dtype=float)
        n = pos.size
        ii, jj = np.triu_indices(n, 1)
        rows = [np.eye(n), -np.eye(n)]
        bounds = [np.ones(n), np.ones(n)]
        pair = np.zeros((ii.size, n))
        pair[np.arange(ii.size), ii] = 1.0
        pair[np.arange(ii.size), jj] = -1.0
        dist = np.abs(pos[ii] - pos[jj])
        rows.extend([pair, -pair])
        bounds.extend([dist, dist])
        A = np.vstack(rows)
        b = np.concatenate(bounds)

        import itertools as _it

        verts = []
        for subset in _it.combinations(range(A.shape[0]), n):
            sub = A[list(subset)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            v = np.linalg.solve(sub, b[list(subset)])
            if np.all(A @ v <= b + 1e-9):
                verts.append(v)
        self.vertices = np.unique(np.round(np.array(verts), 9), axis=0)

    @classmethod
    def build_if_small(cls, positions):
        n = np.asarray(positions).size
        if n < 2 or math.comb(2 * n + n * (n - 1), n) > cls.MAX_SUBSETS:
            return None
        return cls(positions)

    def gap(self, p, q) -> float:
        d = (p.probs if isinstance(p, FiniteDist) else p) - (
            q.probs if isinstance(q, FiniteDist) else q
        )
        return float(max(0.0, np.max(self.vertices @ d)))


# ---------------------------------------------------------------------------
# merging experiment


def model_digest(model) -> str:
    """sha256 of the canonical JSON form of a model."""
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class MergingReport:
    """Per-step trial averages of belief gaps between two priors.

    All gap columns are means over trials; se columns are per-step standard
    errors (std/sqrt(trials), zero when trials == 1). kl_trials keeps the
    raw per-trial relative entropies for paired comparisons between steps.
    """

    horizon: int
    trials: int
    seed: int
    model_digest: str
    bank_version: int
    mean_tv_filter: np.ndarray
    se_tv_filter: np.ndarray
    mean_tv_predictor: np.ndarray
    mean_kl_filter: np.ndarray
    se_kl_filter: np.ndarray
    weak_gap: np.ndarray
    bl_gap: np.ndarray
    mean_tv_pred_meas: np.ndarray
    kl_trials: np.ndarray

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.horizon + 1)


def _merging_trial(model, mu, nu, horizon, seed, trial, bank, positions):
    traj = sample_trajectory(model, mu, horizon, derive_seed(seed, trial))
    filt_mu, pred_mu = filter_sequence(model, mu, traj.ys)
    filt_nu, pred_nu = filter_sequence(model, nu, traj.ys)
    out = np.empty((6, horizon + 1))
    for t in range(horizon + 1):
        fm, fn = filt_mu[t].probs, filt_nu[t].probs
        pm, pn = pred_mu[t].probs, pred_nu[t].probs
        out[0, t] = tv(fm, fn)
        out[1, t] = tv(pm, pn)
        out[2, t] = kl(fm, fn)
        out[3, t] = weak_gap(fm, fn, bank)
        out[4, t] = bl_gap(fm, fn, positions)
        out[5, t] = tv(pm @ model.B, pn @ model.B)
    return out


def _se(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] < 2:
        return np.zeros(rows.shape[1])
    return np.std(rows, axis=0, ddof=1) / math.sqrt(rows.shape[0])


def merging_experiment(
    model,
    mu,
    nu,
    horizon: int,
    trials: int,
    seed: int,
    bank: Optional[np.ndarray] = None,
    positions=None,
    workers: int = 1,
) -> MergingReport:
    """Dual-filter gap statistics over simulated trajectories.

    Trajectories are sampled with the state initialized from mu (all reported
    expectations are under that law); both filters then consume the same
    observations. Requires mu absolutely continuous w.r.t. nu entrywise.
    Positions for the bounded-Lipschitz gap default to 0..n-1; the test bank
    defaults to default_bank(n). Per-trial results land in fixed slots keyed
    by trial index, so every worker count produces the identical report.
    """
    horizon = _as_int(horizon)
    trials = _as_int(trials)
    seed = _as_int(seed)
    workers = _as_int(workers)
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    mu = mu if isinstance(mu, FiniteDist) else FiniteDist(np.asarray(mu, dtype=float))
    nu = nu if isinstance(nu, FiniteDist) else FiniteDist(np.asarray(nu, dtype=float))
    if mu.n != model.n or nu.n != model.n:
        raise ValueError("prior dimensions must match the model")
    if np.any((mu.probs > 0.0) & (nu.probs == 0.0)):
        raise AbsoluteContinuityViolated(
            "mu puts mass where nu has none; dual filtering under nu is undefined"
        )
    bank = default_bank(model.n) if bank is None else np.asarray(bank, dtype=float)
    positions = (
        np.arange(model.n, dtype=float)
        if positions is None
        else np.asarray(positions, dtype=float)
    )

    rows = np.empty((trials, 6, horizon + 1))
    if workers == 1:
        for t in range(trials):
            rows[t] = _merging_trial(model, mu, nu, horizon, seed, t, bank, positions)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(
                lambda t: _merging_trial(model, mu, nu, horizon, seed, t, bank, positions),
                range(trials),
            )
            for t, block in enumerate(results):
                rows[t] = block

    return MergingReport(
        horizon=horizon,
        trials=trials,
        seed=seed,
        model_digest=model_digest(model),
        bank_version=BANK_VERSION,
        mean_tv_filter=np.mean(rows[:, 0, :], axis=0),
        se_tv_filter=_se(rows[:, 0, :]),
        mean_tv_predictor=np.mean(rows[:, 1, :], axis=0),
        mean_kl_filter=np.mean(rows[:, 2, :], axis=0),
        se_kl_filter=_se(rows[:, 2, :]),
        weak_gap=np.mean(rows[:, 3, :], axis=0),
        bl_gap=np.mean(rows[:, 4, :], axis=0),
        mean_tv_pred_meas=np.mean(rows[:, 5, :], axis=0),
        kl_trials=rows[:, 2, :].copy(),
    )


def merging_csv_text(report: MergingReport, extra_meta: Optional[dict] = None) -> str:
    """Render a MergingReport as CSV with a JSON metadata comment line.

    Floats are written in shortest round-trip form, so equal reports render
    byte-identically.
    """
    meta = {
        "bank_version": report.bank_version,
        "horizon": report.horizon,
        "model_digest": report.model_digest,
        "seed": report.seed,
        "trials": report.trials,
        "tv_convention": TV_CONVENTION,
        "weak_gap_note": "sup over a finite bank; underestimates the full weak sup",
    }
    if extra_meta:
        meta.update(extra_meta)
    lines = ["# " + json.dumps(meta, sort_keys=True), CSV_HEADER]
    cols = (
        report.mean_tv_filter,
        report.se_tv_filter,
        report.mean_tv_predictor,
        report.mean_kl_filter,
        report.se_kl_filter,
        report.weak_gap,
        report.bl_gap,
        report.mean_tv_pred_meas,
    )
    for t in range(report.horizon + 1):
        lines.append(str(t) + "," + ",".join(repr(float(c[t])) for c in cols))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# long-run behavior of the state chain itself


def _check_stochastic(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] == 0:
        raise ValueError("T must be a square matrix")
    if np.any(T < 0.0) or not np.allclose(T.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("T rows must be probability vectors")
    return T


def invariant_dist(T, residual_tol: float = 1e-13, max_iter: int = 200_000) -> FiniteDist:
    """Stationary law of a transition matrix by damped power iteration.

    Iterates pi <- pi·(I + T)/2, which has the same fixed points as T but
    converges even for periodic chains.  Runs from two different starting
    points; disagreement between their limits, or failure to reach
    ||pi·T - pi||_inf <= residual_tol, raises NonUniqueInvariant.
    """
    T = _check_stochastic(T)
    n = T.shape[0]
    lazy = 0.5 * (np.eye(n) + T)

    def run(start):
        pi = start
        for _ in range(max_iter):
            if np.max(np.abs(pi @ T - pi)) <= residual_tol:
                return pi
            pi = pi @ lazy
            pi = pi / pi.sum()
        return None

    e0 = np.zeros(n)
    e0[0] = 1.0
    a = run(np.full(n, 1.0 / n))
    b = run(e0)
    if a is None or b is None:
        raise NonUniqueInvariant(
            f"power iteration did not settle within {max_iter} steps"
        )
    if np.max(np.abs(a - b)) > 1e-10:
        raise NonUniqueInvariant(
            "different starting laws converge to different fixed points; "
            "the stationary law is not unique"
        )
    return FiniteDist(a)


def harris_re_curve(
    T,
    pi0,
    steps: int,
    floor: Optional[float] = None,
    support_tol: float = 1e-12,
) -> np.ndarray:
    """Relative entropy of the marginal law to the stationary law, per step.

    Returns D(pi_t || pi) for t = 0..steps with pi_t = pi0·T^t.  The sequence
    is guaranteed non-increasing; a numerical increase beyond 1e-12 raises.
    Raises InfiniteInitialDivergence when pi0 loads mass where the stationary
    law has none (numerically: at most support_tol, since power iteration
    reaches exact zeros only in the limit), and enforces ``floor`` on the
    final value when given.
    """
    steps = _as_int(steps)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    T = _check_stochastic(T)
    pi = invariant_dist(T).probs
    p0 = FiniteDist(np.asarray(_vec(pi0), dtype=float)).probs
    if p0.size != pi.size:
        raise ValueError("pi0 dimension must match T")
    if np.any(p0[pi <= support_tol] > 0.0):
        raise InfiniteInitialDivergence(
            "pi_0 puts mass outside the support of the stationary law, so "
            "D(pi_0 || pi) is infinite and the curve is not defined"
        )
    curve = np.empty(steps + 1)
    cur = p0
    for t in range(steps + 1):
        if t > 0:
            cur = cur @ T
        curve[t] = kl(cur, pi)
    if np.any(np.diff(curve) > 1e-12):
        raise FilterMergeError(
            "relative entropy to the stationary law increased along the chain; "
            "this indicates a numerical failure, not a property of the model"
        )
    if floor is not None and curve[-1] > floor:
        raise FilterMergeError(
            f"final relative entropy {curve[-1]!r} is above the requested floor {floor!r}"
        )
    return curve
