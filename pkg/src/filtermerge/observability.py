"""Algorithmic observability tests for finite models.

Three matrices decide what the observations can distinguish:

* the one-step matrix A = B (rows are per-state output laws),
* the marginal matrix M = [A, TA, ..., T^(n-1)A], whose full rank is a
  sufficient (not necessary) condition, with the block count capped at n
  because higher powers of T add no new directions,
* the N-step joint matrix with entry (x, word) = P(Y_1..Y_N | X_1 = x),
  whose full rank for some N settles observability.

Ranks are numeric: singular values are compared against a relative
threshold, since the exact-arithmetic rank is not available in floats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, SizeCapExceeded

DEFAULT_RANK_TOL = 1e-9
DEFAULT_JOINT_CAP = 2 ** 20
DEFAULT_RESIDUAL_TOL = 1e-8


def numeric_rank(mat, tol=DEFAULT_RANK_TOL):
    """Count singular values above tol * sigma_max * max(rows, cols)."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return 0
    svals = np.linalg.svd(mat, compute_uv=False)
    smax = svals[0]
    if smax == 0.0:
        return 0
    return int(np.sum(svals > tol * smax * max(mat.shape)))


def one_step_matrix(model):
    """Per-state output law matrix; rank n means one observation suffices."""
    return model.B.copy()


def marginal_matrix(model):
    """[A, TA, ..., T^(n-1)A], each block from one more left product by T."""
    blocks = [model.B.copy()]
    for _ in range(model.n - 1):
        blocks.append(model.T @ blocks[-1])
    return np.hstack(blocks)


def joint_matrix(model, N, cap=DEFAULT_JOINT_CAP):
    """n x K^N matrix of joint output-word probabilities given the start state.

    Column index is the base-K value of the word with y_1 most significant.
    Built by a backward recursion over (state, suffix), never by path
    enumeration.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    n, K = model.n, model.K
    if K ** N > cap:
        raise SizeCapExceeded(f"K^N = {K ** N} exceeds the column cap {cap}")
    # G[x, suffix] = P(Y_t..Y_N | X_t = x), shrinking t from N to 1
    G = model.B.copy()
    for _ in range(N - 1):
        TG = model.T @ G
        G = (model.B[:, :, None] * TG[:, None, :]).reshape(n, -1)
    return G


@dataclass(frozen=True, eq=False)
class ObservabilityReport:
    """Matrices, numeric ranks, and the verdict for one model."""

    A: np.ndarray
    M: np.ndarray
    joint: np.ndarray
    joint_N: int
    rank_A: int
    rank_M: int
    rank_joint: int
    tol: float
    verdict: str
    marginal_test_inconclusive: bool

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "M": self.M.tolist(),
            "joint": self.joint.tolist(),
            "joint_N": self.joint_N,
            "rank_A": self.rank_A,
            "rank_M": self.rank_M,
            "rank_joint": self.rank_joint,
            "tol": self.tol,
            "verdict": self.verdict,
            "marginal_test_inconclusive": self.marginal_test_inconclusive,
        }


def observability_verdict(model, N_max, tol=DEFAULT_RANK_TOL,
                          cap=DEFAULT_JOINT_CAP):
    """Search for the smallest window length that makes the model observable.

    OneStepObservable when A already has rank n; otherwise NStepObservable(N)
    for the smallest N <= N_max whose joint matrix has rank n; otherwise
    NotObservableUpTo(N_max). The marginal test is reported separately
    because its failure (rank M < n) decides nothing.
    """
    if N_max < 1:
        raise ValueError("N_max must be >= 1")
    n = model.n
    A = one_step_matrix(model)
    rank_A = numeric_rank(A, tol=tol)
    M = marginal_matrix(model)
    rank_M = numeric_rank(M, tol=tol)
    inconclusive = rank_M < n

    joint = A
    joint_N = 1
    rank_joint = rank_A
    if rank_A == n:
        verdict = "OneStepObservable"
    else:
        verdict = f"NotObservableUpTo({N_max})"
        for N in range(2, N_max + 1):
            joint = joint_matrix(model, N, cap=cap)
            joint_N = N
            rank_joint = numeric_rank(joint, tol=tol)
            if rank_joint == n:
                verdict = f"NStepObservable({N})"
                break
    return ObservabilityReport(A=A, M=M, joint=joint, joint_N=joint_N,
                               rank_A=rank_A, rank_M=rank_M,
                               rank_joint=rank_joint, tol=tol,
                               verdict=verdict,
                               marginal_test_inconclusive=inconclusive)


def solve_g(model, f, N, bound=None, residual_tol=DEFAULT_RESIDUAL_TOL,
            cap=DEFAULT_JOINT_CAP):
    """Minimum-norm least-squares g over output words with J g ~= f.

    Returns (g, residual_inf). Raises Infeasible when the residual exceeds
    residual_tol or the solution breaches the sup-norm bound; ties in
    rank-deficient systems go to the pseudo-inverse solution.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (model.n,):
        raise ValueError("f must assign one value per state")
    J = joint_matrix(model, N, cap=cap)
    g, *_ = np.linalg.lstsq(J, f, rcond=None)
    residual_inf = float(np.max(np.abs(f - J @ g))) if f.size else 0.0
    g_sup = float(np.max(np.abs(g))) if g.size else 0.0
    if residual_inf > residual_tol:
        raise Infeasible(f"best residual {residual_inf:.3e} exceeds "
                         f"{residual_tol:.1e}", residual_inf=residual_inf,
                         g_sup=g_sup)
    if bound is not None and g_sup > bound:
        raise Infeasible(f"solution sup-norm {g_sup:.3e} exceeds bound "
                         f"{bound:.3e}", residual_inf=residual_inf,
                         g_sup=g_sup)
    return g, residual_inf
