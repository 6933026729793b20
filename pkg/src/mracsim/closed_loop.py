"""Plant and reference-model dynamics, the adaptive control law, the regressor,
and the ideal-gain solver used by tests and diagnostics only.

The parameterization: a plant  x' = A x + B u  is driven by
u = kr_hat (kx_hat x + r)  so that, at the ideal gains,
A + B kr kx = A_ref and B kr = B_ref and the closed loop reproduces the
reference model x_ref' = A_ref x_ref + B_ref r exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import AssumptionViolation, DimensionError, RankError

_MATCH_TOL = 1e-9
_HURWITZ_MARGIN = 1e-9


def _full_column_rank(b: np.ndarray, name: str) -> None:
    try:
        linalg.left_pseudoinverse(b)
    except RankError as exc:
        raise RankError(f"{name} must have full column rank: {exc}") from exc


def characteristic_polynomial(a: np.ndarray) -> np.ndarray:
    """Coefficients of det(sI - A), leading coefficient first
    (Faddeev-LeVerrier recursion)."""
    a = linalg.as_matrix(a, "characteristic_polynomial")
    k = a.shape[0]
    coeffs = np.empty(k + 1)
    coeffs[0] = 1.0
    mat = np.zeros_like(a)
    eye = np.eye(k)
    for i in range(1, k + 1):
        mat = a @ mat + coeffs[i - 1] * eye
        coeffs[i] = -np.trace(a @ mat) / i
    return coeffs


def is_hurwitz(a: np.ndarray, margin: float = _HURWITZ_MARGIN) -> bool:
    """All roots of the characteristic polynomial strictly left of -margin."""
    roots = np.roots(characteristic_polynomial(a))
    return bool(np.all(roots.real < -margin))


@dataclass(frozen=True, eq=False)
class PlantSpec:
    """Controlled plant x' = A x + B u with full-column-rank B, m <= n."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = linalg.as_matrix(self.a, "plant A")
        b = linalg.as_matrix(self.b, "plant B")
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"plant A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise DimensionError("plant B row count must match A dimension")
        if b.shape[1] > b.shape[0]:
            raise DimensionError("plant requires m <= n inputs")
        _full_column_rank(b, "plant B")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True, eq=False)
class ReferenceSpec:
    """Reference model x_ref' = A_ref x_ref + B_ref r; A_ref must be Hurwitz."""

    a_ref: np.ndarray
    b_ref: np.ndarray

    def __post_init__(self):
        a_ref = linalg.as_matrix(self.a_ref, "reference A_ref")
        b_ref = linalg.as_matrix(self.b_ref, "reference B_ref")
        if a_ref.shape[0] != a_ref.shape[1]:
            raise DimensionError(f"A_ref must be square, got {a_ref.shape}")
        if b_ref.shape[0] != a_ref.shape[0]:
            raise DimensionError("B_ref row count must match A_ref dimension")
        if b_ref.shape[1] > b_ref.shape[0]:
            raise DimensionError("reference requires m <= n inputs")
        _full_column_rank(b_ref, "reference B_ref")
        if not is_hurwitz(a_ref):
            raise ValueError("A_ref is not Hurwitz (eigenvalue real part >= -margin)")
        object.__setattr__(self, "a_ref", a_ref)
        object.__setattr__(self, "b_ref", b_ref)

    @property
    def n(self) -> int:
        return self.a_ref.shape[0]

    @property
    def m(self) -> int:
        return self.b_ref.shape[1]


@dataclass(frozen=True, eq=False)
class IdealGains:
    """Solution of the model-matching equations plus the derived
    adjugate/determinant of the inverse feedforward gain."""

    k_x: np.ndarray
    k_r: np.ndarray
    k_r_inv: np.ndarray
    n_a: np.ndarray  # adjugate of k_r_inv
    n_d: float       # determinant of k_r_inv


@dataclass(frozen=True)
class Setpoint:
    """One setpoint channel.

    Kinds:
        constant(c)            -> c
        exponential(c, a)      -> c * exp(-a * t)
        sine(amp, freq, phase) -> amp * sin(freq * t + phase), freq in rad/s
        step(level, time)      -> 0 for t < time, level afterwards
    """

    kind: str
    params: tuple

    _ARITY = {"constant": 1, "exponential": 2, "sine": 3, "step": 2}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise ValueError(f"unknown setpoint kind {self.kind!r}")
        if len(self.params) != self._ARITY[self.kind]:
            raise ValueError(
                f"setpoint {self.kind} takes {self._ARITY[self.kind]} parameters, "
                f"got {len(self.params)}"
            )
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def value(self, t: float) -> float:
        if t < 0:
            raise ValueError("setpoint evaluated at negative time")
        p = self.params
        if self.kind == "constant":
            return p[0]
        if self.kind == "exponential":
            return p[0] * math.exp(-p[1] * t)
        if self.kind == "sine":
            return p[0] * math.sin(p[1] * t + p[2])
        return p[0] if t >= p[1] else 0.0


def setpoint_vector(setpoints, t: float) -> np.ndarray:
    return np.array([sp.value(t) for sp in setpoints])


def control_input(kx_hat, kr_hat, x, r) -> np.ndarray:
    """Control law u = kr_hat (kx_hat x + r)."""
    kx_hat = linalg.as_matrix(kx_hat, "kx_hat")
    kr_hat = linalg.as_matrix(kr_hat, "kr_hat")
    m, n = kx_hat.shape
    x = linalg.as_vector(x, n, "x")
    r = linalg.as_vector(r, m, "r")
    if kr_hat.shape != (m, m):
        raise DimensionError(f"kr_hat must be {m}x{m}, got {kr_hat.shape}")
    return kr_hat @ (kx_hat @ x + r)


def plant_derivative(spec: PlantSpec, x, u) -> np.ndarray:
    x = linalg.as_vector(x, spec.n, "x")
    u = linalg.as_vector(u, spec.m, "u")
    return spec.a @ x + spec.b @ u


def reference_derivative(spec: ReferenceSpec, x_ref, r) -> np.ndarray:
    x_ref = linalg.as_vector(x_ref, spec.n, "x_ref")
    r = linalg.as_vector(r, spec.m, "r")
    return spec.a_ref @ x_ref + spec.b_ref @ r


def build_regressor(kx_hat, kr_hat, x, r) -> np.ndarray:
    """Regressor phi = [x ; -kr_hat (kx_hat x + r)]; the bottom block is the
    negated control, so theta_err^T phi reproduces the tracking-error forcing
    term exactly for non-symmetric kr_hat."""
    u = control_input(kx_hat, kr_hat, x, r)
    return np.concatenate([np.asarray(x, dtype=float).ravel(), -u])


def stack_gains(k_x, kr_inv) -> np.ndarray:
    """Stack gains into the (n+m) x m parameter matrix theta with
    theta^T = [k_x  kr_inv]."""
    k_x = linalg.as_matrix(k_x, "k_x")
    kr_inv = linalg.as_matrix(kr_inv, "kr_inv")
    if kr_inv.shape[0] != k_x.shape[0]:
        raise DimensionError("k_x and kr_inv must have the same row count")
    return np.vstack([k_x.T, kr_inv.T])


def ideal_gains(plant: PlantSpec, ref: ReferenceSpec) -> IdealGains:
    """Solve A + B kr kx = A_ref, B kr = B_ref for the ideal gains.

    Least-squares through the left pseudoinverse of B; residuals above
    tolerance raise AssumptionViolation (the model-matching assumption fails
    for this plant/reference pair).
    """
    if plant.n != ref.n or plant.m != ref.m:
        raise DimensionError("plant and reference dimensions differ")
    b_pinv = linalg.left_pseudoinverse(plant.b)
    k_r = b_pinv @ ref.b_ref
    resid_b = float(np.linalg.norm(plant.b @ k_r - ref.b_ref))
    if resid_b > _MATCH_TOL * (1.0 + float(np.linalg.norm(ref.b_ref))):
        raise AssumptionViolation(
            "model-matching assumption violated: no gain maps the plant input "
            f"matrix onto the reference one (residual {resid_b:.3e})"
        )
    d = linalg.det(k_r)
    if abs(d) <= 1e-12 * (1.0 + float(np.linalg.norm(k_r)) ** plant.m):
        raise AssumptionViolation("model-matching assumption violated: feedforward gain singular")
    k_r_inv = linalg.adjugate(k_r) / d
    k_x = k_r_inv @ (b_pinv @ (ref.a_ref - plant.a))
    resid_a = float(np.linalg.norm(plant.a + plant.b @ k_r @ k_x - ref.a_ref))
    if resid_a > _MATCH_TOL * (1.0 + float(np.linalg.norm(ref.a_ref))):
        raise AssumptionViolation(
            "model-matching assumption violated: state matrices cannot be "
            f"matched (residual {resid_a:.3e})"
        )
    return IdealGains(
        k_x=k_x,
        k_r=k_r,
        k_r_inv=k_r_inv,
        n_a=linalg.adjugate(k_r_inv),
        n_d=linalg.det(k_r_inv),
    )
