"""Gain design for synchronization of identical linear agents.

The strict matrix inequality ``PA + A'P - 2PBB'P + 2 alpha P < 0`` is met by
solving the Riccati equation

    (A + alpha I)' P + P (A + alpha I) - 2 P B B' P + eps I = 0

so its left-hand side equals ``-eps I``. The feedback gain is ``F = -B'P``
and the coupling gain defaults to ``c = 1/lambda2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sl


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class LinearDesign:
    P: np.ndarray
    F: np.ndarray
    c: float
    alpha_margin: float
    lmi_residual: float  # max eigenvalue of PA + A'P - 2PBB'P + 2 alpha P
    epsilon: float

    def report(self) -> dict:
        return {
            "P": self.P.tolist(),
            "F": self.F.tolist(),
            "c": self.c,
            "alpha_margin": self.alpha_margin,
            "lmi_residual": self.lmi_residual,
            "epsilon": self.epsilon,
            "note": "P solves the Riccati equation with slack eps*I; "
                    "any P satisfying the strict inequality would do.",
        }


@dataclass(frozen=True)
class HurwitzReport:
    margins: tuple[tuple[int, float, float], ...]  # (j, lambda_j, max real part)

    @property
    def passed(self) -> bool:
        return all(m < 0 for _, _, m in self.margins)

    @property
    def failures(self) -> list[int]:
        return [j for j, _, m in self.margins if m >= 0]


def controllability_rank(A, B, tol: float = 1e-9) -> int:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks), tol=tol))


def solve_riccati(A, G, Q) -> np.ndarray:
    """Stabilizing solution of A'P + PA - PGP + Q = 0.

    Uses the stable invariant subspace of the Hamiltonian
    [[A, -G], [-Q, -A']] from an ordered real Schur form.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = sl.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise DesignError(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e12:
        raise DesignError("stable subspace is not a graph; Riccati solve failed")
    P = np.linalg.solve(U1.T, U2.T).T  # U2 U1^{-1}
    return 0.5 * (P + P.T)


def lmi_residual(A, B, P, alpha: float) -> float:
    A = np.atleast_2d(A)
    PB = P @ B
    M = P @ A + A.T @ P - 2.0 * PB @ PB.T + 2.0 * alpha * P
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def design(A, B, lambda2: float, alpha_margin: float = 0.0, epsilon: float = 1e-6,
           c: float | None = None) -> LinearDesign:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    if lambda2 <= 0:
        raise DesignError(f"lambda2 must be positive, got {lambda2}")
    if alpha_margin < 0:
        raise DesignError(f"alpha_margin must be nonnegative, got {alpha_margin}")
    rank = controllability_rank(A, B)
    if rank < n:
        raise DesignError(f"(A, B) not controllable: rank {rank} < {n}")
    Abar = A + alpha_margin * np.eye(n)
    P = solve_riccati(Abar, 2.0 * B @ B.T, epsilon * np.eye(n))
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise DesignError("Riccati solution is not positive definite")
    res = lmi_residual(A, B, P, alpha_margin)
    if not res < -1e-8:
        raise DesignError(f"LMI residual {res:.3g} is not negative")
    c_min = 1.0 / lambda2
    if c is None:
        c = c_min
    elif c < c_min:
        raise DesignError(f"coupling gain c={c} below 1/lambda2={c_min}")
    return LinearDesign(P=P, F=-B.T @ P, c=float(c), alpha_margin=float(alpha_margin),
                        lmi_residual=res, epsilon=float(epsilon))


def verify_hurwitz_family(A, B, F, c: float, laplacian_eigenvalues) -> HurwitzReport:
    """Max real part of eig(A + c lambda_j B F) for j = 2..N (lambda_1 = 0 skipped)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    lams = sorted(float(v) for v in laplacian_eigenvalues)
    margins = []
    for j, lam in enumerate(lams[1:], start=2):
        ev = np.linalg.eigvals(A + c * lam * B @ F)
        margins.append((j, lam, float(np.max(ev.real))))
    return HurwitzReport(tuple(margins))
