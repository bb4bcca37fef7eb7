"""
control.py - Gain Synthesis and Certificate Constants

Solves the Riccati equation behind the feedback gain K = B^T R with a
Newton-Kleinman iteration (each step one Lyapunov solve) and derives every
constant the stability and trigger-parameter results need: rho_1, k_max, the
dynamic-trigger ceiling, xi_max, vartheta and k_w.

Two parameters share a letter in the underlying analysis. Here `varsigma_R`
weights the Riccati equation and `varsigma_T = eta * lambda_min(Psi) - v1` is
the decay margin used by the trigger bounds.
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .debug_logger import NULL_LOGGER
from .errors import (
    CertificateError, ConvergenceError, ParameterError, SingularMatrixError,
    StabilizabilityError, ValidationError,
)
from .graph import DirectedNetwork, GroundedMatrix, grounded_matrix, numerical_rank

DEFAULT_VARSIGMA_R = 1.0
DEFAULT_DELTA = 0.05
_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 60
_RESIDUAL_SLACK = 1e-9


@dataclass(frozen=True)
class TriggerBounds:
    """Constants bounding the trigger parameters."""
    k_max: float
    xi_max: float
    vartheta: float
    k_w: float
    varsigma_T: float
    rho1: float
    k_dynamic: float
    norm_M: float
    v1: float

    @property
    def k_certified(self) -> float:
        """Largest k_i admissible for both the static and the dynamic rule."""
        return min(self.k_max, self.k_dynamic)


@dataclass(frozen=True)
class GainDesign:
    """Riccati solution, feedback gain and all certificate quantities."""
    R: np.ndarray
    K: np.ndarray
    varsigma_R: float
    delta: float
    v1: float
    riccati_residual: float
    grounded: GroundedMatrix
    bounds: TriggerBounds

    @property
    def varsigma_T(self) -> float:
        return self.bounds.varsigma_T

    @property
    def rho1(self) -> float:
        return self.bounds.rho1

    @property
    def k_max(self) -> float:
        return self.bounds.k_max

    @property
    def xi_max(self) -> float:
        return self.bounds.xi_max

    @property
    def vartheta(self) -> float:
        return self.bounds.vartheta

    @property
    def k_w(self) -> float:
        return self.bounds.k_w

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready view of the design."""
        return {
            "R": self.R.tolist(),
            "K": self.K.tolist(),
            "varsigma_R": self.varsigma_R,
            "delta": self.delta,
            "v1": self.v1,
            "varsigma_T": self.bounds.varsigma_T,
            "rho1": self.bounds.rho1,
            "k_max": self.bounds.k_max,
            "k_dynamic": self.bounds.k_dynamic,
            "k_certified": self.bounds.k_certified,
            "xi_max": self.bounds.xi_max,
            "vartheta": self.bounds.vartheta,
            "k_w": self.bounds.k_w,
            "norm_M": self.bounds.norm_M,
            "eta": self.grounded.eta,
            "psi": self.grounded.psi.tolist(),
            "riccati_residual": self.riccati_residual,
        }


def check_stabilizable(A: np.ndarray, B: np.ndarray) -> None:
    """
    PBH test: rank [A - lambda I, B] = n for every eigenvalue with Re >= 0.

    Raises:
        StabilizabilityError: an unstable mode is uncontrollable.
    """
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < -1e-12:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if numerical_rank(pencil) < n:
            raise StabilizabilityError(f"(A, B) is not stabilizable: mode {lam:.4g} is uncontrollable")


def _initial_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stabilizing G0 with A - B G0 Hurwitz (zero when A is already Hurwitz)."""
    eigs = np.linalg.eigvals(A)
    if np.all(eigs.real < 0):
        return np.zeros((B.shape[1], A.shape[0]))
    zeta = float(np.max(np.abs(eigs.real))) + 1.0
    shifted = A + zeta * np.eye(A.shape[0])
    X = linalg.solve_continuous_lyapunov(shifted, 2.0 * B @ B.T)
    G0 = B.T @ np.linalg.pinv(X)
    if np.any(np.linalg.eigvals(A - B @ G0).real >= 0):
        raise ConvergenceError("could not construct an initial stabilizing gain")
    return G0


def riccati_residual(A: np.ndarray, B: np.ndarray, R: np.ndarray, varsigma_R: float) -> float:
    """lambda_max(A^T R + R A - varsigma_R R B B^T R + varsigma_R I)."""
    n = A.shape[0]
    expr = A.T @ R + R @ A - varsigma_R * R @ B @ B.T @ R + varsigma_R * np.eye(n)
    return float(np.linalg.eigvalsh(0.5 * (expr + expr.T))[-1])


def solve_riccati(
    A: np.ndarray,
    B: np.ndarray,
    varsigma_R: float = DEFAULT_VARSIGMA_R,
    delta: float = DEFAULT_DELTA,
    logger: Any = NULL_LOGGER,
) -> np.ndarray:
    """
    Solves A^T R + R A - varsigma_R R B B^T R + (varsigma_R + delta) I = 0.

    Newton-Kleinman: with G_k stabilizing, solve the Lyapunov equation
    (A - B G_k)^T X + X (A - B G_k) = -(Q + G_k^T G_k / varsigma_R) and set
    G_{k+1} = varsigma_R B^T X, until the Riccati residual is below 1e-10.

    Args:
        A: n x n system matrix.
        B: n x p input matrix.
        varsigma_R: Riccati weight, > 0.
        delta: strictness margin, >= 0.
        logger: DebugLogger for iteration output.

    Returns:
        R, symmetric positive definite.

    Raises:
        ParameterError: varsigma_R <= 0 or delta < 0.
        StabilizabilityError: (A, B) not stabilizable.
        ConvergenceError: the iteration did not converge.
        CertificateError: the residual bound lambda_max <= -delta/2 fails.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if not varsigma_R > 0:
        raise ParameterError(f"varsigma_R must be positive, got {varsigma_R}")
    if delta < 0:
        raise ParameterError(f"delta must be nonnegative, got {delta}")
    check_stabilizable(A, B)

    n = A.shape[0]
    Q = (varsigma_R + delta) * np.eye(n)
    G = _initial_gain(A, B)
    X = np.zeros((n, n))
    for iteration in range(1, _NEWTON_MAX_ITER + 1):
        closed = A - B @ G
        X = linalg.solve_continuous_lyapunov(closed.T, -(Q + G.T @ G / varsigma_R))
        X = 0.5 * (X + X.T)
        G = varsigma_R * B.T @ X
        residual = A.T @ X + X @ A - varsigma_R * X @ B @ B.T @ X + Q
        size = float(np.linalg.norm(residual))
        logger.log(f"Newton-Kleinman iteration {iteration}: residual {size:.3e}")
        if size < _NEWTON_TOL * max(1.0, float(np.linalg.norm(X))):
            break
    else:
        raise ConvergenceError(f"Newton-Kleinman did not converge in {_NEWTON_MAX_ITER} iterations")

    if np.linalg.eigvalsh(X)[0] <= 0:
        raise CertificateError("Riccati solution is not positive definite")
    margin = riccati_residual(A, B, X, varsigma_R)
    if margin > -delta / 2 + _RESIDUAL_SLACK:
        raise CertificateError(f"Riccati inequality margin {margin:.3e} exceeds -delta/2")
    return X


def feedback_gain(R: np.ndarray, B: np.ndarray) -> np.ndarray:
    """K = B^T R."""
    B = np.asarray(B, dtype=float).reshape(R.shape[0], -1)
    return B.T @ R


def trigger_bounds(
    R: np.ndarray,
    B: np.ndarray,
    K: np.ndarray,
    gm: GroundedMatrix,
    v1: Optional[float] = None,
    mu: Optional[Sequence[float]] = None,
) -> TriggerBounds:
    """
    Evaluates the trigger-parameter constants.

    rho_1 = lambda_max(Psi^2 kron (R B K)^2) and
    k_max = varsigma_T v1 / (rho_1 ||M|| + v1 varsigma_T).
    The dynamic-rule constants xi_max = rho_1 / (v1 (1 - k ||M||^2)) and
    vartheta = varsigma_T - xi_max k ||M||^2 are evaluated at
    k = min(k_max, k_dynamic), where
    k_dynamic = varsigma_T v1 / ((2 rho_1 + varsigma_T v1) ||M||^2)
    is the largest k giving vartheta >= varsigma_T / 2.
    k_w = min(vartheta / lambda_max(Psi kron R), min_i mu_i).

    Args:
        v1: Young parameter; defaults to eta * lambda_min(Psi) / 2.
        mu: dynamic-variable decay rates; omitted for static triggering.

    Raises:
        ParameterError: v1 outside (0, eta lambda_min(Psi)), k_max outside
            (0, 1) or vartheta <= 0.
    """
    B = np.asarray(B, dtype=float).reshape(R.shape[0], -1)
    psi = np.asarray(gm.psi)
    ceiling = gm.eta * float(np.min(psi))
    if v1 is None:
        v1 = ceiling / 2
    if not 0 < v1 < ceiling:
        raise ParameterError(f"v1 must lie in (0, {ceiling:.6g}), got {v1}")
    varsigma_T = ceiling - v1

    RBK = R @ B @ K
    Psi = np.diag(psi)
    rho1 = float(np.max(np.linalg.eigvals(np.kron(Psi @ Psi, RBK @ RBK)).real))
    if rho1 <= 0:
        raise ParameterError("R B K vanishes; the input matrix has no effect")
    norm_M = float(np.linalg.norm(gm.M, 2))
    k_max = varsigma_T * v1 / (rho1 * norm_M + v1 * varsigma_T)
    if not 0 < k_max < 1:
        raise ParameterError(f"k_max = {k_max:.6g} is outside (0, 1)")

    k_dynamic = varsigma_T * v1 / ((2 * rho1 + varsigma_T * v1) * norm_M ** 2)
    k_eff = min(k_max, k_dynamic)
    xi_max = rho1 / (v1 * (1 - k_eff * norm_M ** 2))
    vartheta = varsigma_T - xi_max * k_eff * norm_M ** 2
    if vartheta <= 0:
        raise ParameterError(f"vartheta = {vartheta:.6g} is not positive")

    k_w = vartheta / (float(np.max(psi)) * float(np.linalg.eigvalsh(R)[-1]))
    if mu is not None and len(mu) > 0:
        k_w = min(k_w, float(np.min(mu)))
    return TriggerBounds(k_max, xi_max, vartheta, k_w, varsigma_T, rho1, k_dynamic, norm_M, v1)


def closed_loop_matrix(A: np.ndarray, B: np.ndarray, K: np.ndarray, M: np.ndarray) -> np.ndarray:
    """I_m kron A - M kron (B K), the disagreement dynamics with zero measurement error."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if K.shape != (B.shape[1], A.shape[0]) or M.shape[0] != M.shape[1]:
        raise ValidationError(f"dimension mismatch: A {A.shape}, B {B.shape}, K {K.shape}, M {M.shape}")
    return np.kron(np.eye(M.shape[0]), A) - np.kron(M, B @ K)


def chi_coefficients(gm: GroundedMatrix, net: DirectedNetwork) -> np.ndarray:
    """
    Convex weights of the leaders seen by each follower.

    Column j is M^{-1} B_oj 1_m, so the result is M^{-1} times the coupling
    matrix. Rows are nonnegative and sum to one.
    """
    try:
        return np.linalg.solve(gm.M, np.asarray(net.coupling))
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError("grounded matrix M is singular") from e


def resolve_varsigma_R(value: Union[float, str], eta: float) -> float:
    """Numeric values pass through; "auto" gives min(1, eta / 2)."""
    if value == "auto":
        return min(DEFAULT_VARSIGMA_R, eta / 2)
    return float(value)


def design_gain(
    A: np.ndarray,
    B: np.ndarray,
    net: DirectedNetwork,
    varsigma_R: Union[float, str] = DEFAULT_VARSIGMA_R,
    delta: float = DEFAULT_DELTA,
    v1: Optional[float] = None,
    mu: Optional[Sequence[float]] = None,
    logger: Any = NULL_LOGGER,
) -> GainDesign:
    """
    Certified design pipeline: grounded matrix, Riccati gain, trigger bounds
    and a spectral check that I_m kron A - M kron BK is Hurwitz.

    Raises:
        SingularMatrixError, CertificateError: see `grounded_matrix`.
        StabilizabilityError, ConvergenceError: see `solve_riccati`.
        ParameterError: see `trigger_bounds`.
        CertificateError: the closed loop is not Hurwitz.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    gm = grounded_matrix(net)
    sigma_R = resolve_varsigma_R(varsigma_R, gm.eta)
    if sigma_R > gm.eta:
        logger.warn(f"varsigma_R = {sigma_R:.4g} exceeds eta = {gm.eta:.4g}; closed-loop stability is checked numerically only")

    R = solve_riccati(A, B, sigma_R, delta, logger)
    K = feedback_gain(R, B)
    bounds = trigger_bounds(R, B, K, gm, v1, mu)
    spectrum = np.linalg.eigvals(closed_loop_matrix(A, B, K, gm.M))
    if np.any(spectrum.real >= 0):
        raise CertificateError(f"closed loop is not Hurwitz (max Re = {np.max(spectrum.real):.4g})")

    design = GainDesign(
        R=R, K=K, varsigma_R=sigma_R, delta=delta,
        v1=bounds.v1,
        riccati_residual=riccati_residual(A, B, R, sigma_R),
        grounded=gm, bounds=bounds,
    )
    logger.section("Gain Design", [
        f"eta = {gm.eta:.6g}, psi = {np.array2string(gm.psi, precision=4)}",
        f"varsigma_R = {sigma_R:.6g}, delta = {delta:.6g}, residual = {design.riccati_residual:.3e}",
        f"K = {np.array2string(K, precision=4)}",
        f"k_max = {bounds.k_max:.6g}, k_dynamic = {bounds.k_dynamic:.6g}, xi_max = {bounds.xi_max:.6g}",
        f"vartheta = {bounds.vartheta:.6g}, k_w = {bounds.k_w:.6g}",
    ])
    return design
