"""Class-aware attribution priors from oracle probabilities.

Each mask ``m_i`` yields a target ``z_i = -1 / ln p_i`` where ``p_i`` is the
oracle's probability of the gold label on the masked, label-space-enriched
prompt. Per-word scores ``alpha`` minimise
``sum_i (z_i - alpha . m_i)^2 + lambda * |alpha|^2``, i.e. they solve
``(M^T M + lambda I) alpha = M^T z``. The system is factored as ``L L^T`` and
solved by forward then backward substitution; nothing is ever inverted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from priorguide.core import AttributionVector, TokenizedSentence
from priorguide.errors import (
    InvalidInputError,
    NotPositiveDefiniteError,
    SingularSystemError,
    SolverFault,
)
from priorguide.masking import MaskPlan, apply_mask, sample_masks
from priorguide.oracle import Oracle, PromptTemplate, render_prompt


@dataclass(frozen=True)
class RidgeSystem:
    M: np.ndarray
    z: np.ndarray
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError("ridge regularizer must be positive")
        if self.M.ndim != 2 or self.M.shape[0] != len(self.z):
            raise InvalidInputError("design matrix rows must match target length")


@dataclass(frozen=True)
class CholeskyFactor:
    L: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.L @ self.L.T


@dataclass
class CapConfig:
    n: int = 100
    lam: float = 0.1
    seed: int = 0
    template: PromptTemplate = field(default_factory=PromptTemplate)
    # Relative residual accepted from the triangular solves before escalating.
    solve_rtol: float = 1e-10


def target_score(p: float) -> float:
    """``-1 / ln p``: positive and strictly increasing on (0, 1)."""
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise InvalidInputError(f"probability {p} outside (0, 1)")
    return -1.0 / math.log(p)


def assemble_system(plan: MaskPlan | np.ndarray, z, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``A = M^T M + lam I`` and ``b = M^T z``."""
    M = plan.matrix() if isinstance(plan, MaskPlan) else np.asarray(plan, dtype=float)
    system = RidgeSystem(M, np.asarray(z, dtype=float), lam)
    A = system.M.T @ system.M
    # Exact symmetry: copy the upper triangle from the lower one.
    A = np.tril(A) + np.tril(A, -1).T
    A[np.diag_indices_from(A)] += lam
    return A, system.M.T @ system.z


def cholesky_factor(A) -> CholeskyFactor:
    """Cholesky-Banachiewicz factorization of a symmetric positive-definite matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("cholesky_factor needs a square matrix")
    d = A.shape[0]
    L = np.zeros_like(A)
    for j in range(d):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(f"non-positive pivot {pivot:.3g} at column {j}")
        L[j, j] = math.sqrt(pivot)
        if j + 1 < d:
            L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return CholeskyFactor(L)


def solve_triangular(T, b, orientation: str) -> np.ndarray:
    """Forward (``lower``) or backward (``upper``) substitution."""
    T = np.asarray(T, dtype=float)
    b = np.asarray(b, dtype=float)
    n = T.shape[0]
    if T.shape != (n, n) or b.shape != (n,):
        raise InvalidInputError("shape mismatch in triangular solve")
    diag = np.diag(T)
    if np.any(diag == 0.0):
        raise SingularSystemError("zero on the diagonal of a triangular system")
    x = np.zeros(n)
    if orientation == "lower":
        for i in range(n):
            x[i] = (b[i] - T[i, :i] @ x[:i]) / diag[i]
    elif orientation == "upper":
        for i in range(n - 1, -1, -1):
            x[i] = (b[i] - T[i, i + 1 :] @ x[i + 1 :]) / diag[i]
    else:
        raise InvalidInputError(f"orientation must be 'lower' or 'upper', not {orientation!r}")
    return x


def solve_spd(A, b, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``A x = b`` through ``L y = b``, ``L^T x = y``."""
    factor = cholesky_factor(A)
    y = solve_triangular(factor.L, b, "lower")
    x = solve_triangular(factor.L.T, y, "upper")
    b = np.asarray(b, dtype=float)
    scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
    # Loose backstop: a residual far above rounding means the input was corrupt.
    if np.max(np.abs(A @ x - b), initial=0.0) > 1e6 * rtol * scale * max(1.0, float(np.abs(A).max())):
        raise SolverFault("triangular solves left an excessive residual")
    return x


def solve_ridge(M, z, lam: float, weights=None, rtol: float = 1e-10) -> np.ndarray:
    """Ridge solution; optional per-row weights scale rows and targets by ``sqrt(w)``."""
    M = np.asarray(M, dtype=float)
    z = np.asarray(z, dtype=float)
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        if np.any(~(w > 0)):
            raise InvalidInputError("ridge weights must be positive")
        M = M * w[:, None]
        z = z * w
    A, b = assemble_system(M, z, lam)
    try:
        return solve_spd(A, b, rtol)
    except NotPositiveDefiniteError as exc:
        raise SolverFault(f"ridge matrix not positive definite despite lambda={lam}") from exc


def ridge_objective_gradient(M, z, lam: float, alpha) -> np.ndarray:
    """``-2 sum_i (z_i - alpha . m_i) m_i + 2 lam alpha``."""
    M = np.asarray(M, dtype=float)
    resid = np.asarray(z, dtype=float) - M @ alpha
    return -2.0 * M.T @ resid + 2.0 * lam * np.asarray(alpha)


def oracle_probabilities(
    s: TokenizedSentence, label: str, plan: MaskPlan, oracle: Oracle, template: PromptTemplate
) -> np.ndarray:
    return np.array(
        [oracle.label_probability(render_prompt(template, apply_mask(s, m)), label) for m in plan.masks]
    )


def cap_extract(
    s: TokenizedSentence, gold_label: str, oracle: Oracle, cfg: CapConfig | None = None
) -> AttributionVector:
    """Raw (unnormalized) class-aware scores for every word of ``s``."""
    cfg = cfg or CapConfig()
    if len(s) == 0:
        raise InvalidInputError(f"{s.id}: cannot attribute an empty sentence")
    plan = sample_masks(len(s), cfg.n, cfg.seed)
    probs = oracle_probabilities(s, gold_label, plan, oracle, cfg.template)
    z = np.array([target_score(p) for p in probs])
    alpha = solve_ridge(plan.matrix(), z, cfg.lam, rtol=cfg.solve_rtol)
    return AttributionVector(s.id, tuple(alpha), "cap", False, s.words)
