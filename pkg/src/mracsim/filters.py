"""First-order filtration of the tracking-error equation and extraction of the
linear regression y = theta^T phi_f.

All dynamic signals pass through identical aperiodic links 1/(p + l) with zero
initial conditions. The filtered derivative of the tracking error is never
integrated: it is recovered algebraically from the filtered error and the
boundary values (integration by parts), so no signal is ever differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .closed_loop import ReferenceSpec
from .errors import DimensionError


@dataclass
class FilterState:
    """States of the aperiodic links plus the t = 0 boundary values needed by
    the algebraic derivative formula. All filter states start at zero."""

    pole: float                  # filter constant l > 0, 1/s
    e_f: np.ndarray              # filtered tracking error, n
    u_cf: np.ndarray             # filtered compensatory control, m
    phi_f: np.ndarray            # filtered regressor, n+m
    e_ref0: np.ndarray           # tracking error at t = 0
    e_f0: np.ndarray = None      # zero by construction
    mu_f0: np.ndarray = None     # zero by construction

    def __post_init__(self):
        if self.pole <= 0:
            raise ValueError("filter constant must be positive")
        n = np.asarray(self.e_f).size
        if self.e_f0 is None:
            self.e_f0 = np.zeros(n)
        if self.mu_f0 is None:
            self.mu_f0 = np.zeros(n)

    @classmethod
    def initial(cls, n: int, m: int, pole: float, e_ref0) -> "FilterState":
        return cls(
            pole=pole,
            e_f=np.zeros(n),
            u_cf=np.zeros(m),
            phi_f=np.zeros(n + m),
            e_ref0=np.asarray(e_ref0, dtype=float).copy(),
        )


def compensatory_control(theta_hat, phi) -> np.ndarray:
    """u_c = theta_hat^T phi.

    With theta_hat stacked from the current gain estimates and phi built from
    the same estimates, this collapses algebraically to -r; it is computed in
    the general form so that identity stays a checked property.
    """
    theta_hat = linalg.as_matrix(theta_hat, "theta_hat")
    phi = linalg.as_vector(phi, theta_hat.shape[0], "phi")
    return theta_hat.T @ phi


def filter_derivatives(state: FilterState, e_ref, u_c, phi):
    """Aperiodic-link derivatives (-l x_f + x) for the three filtered signals."""
    e_ref = linalg.as_vector(e_ref, state.e_f.size, "e_ref")
    u_c = linalg.as_vector(u_c, state.u_cf.size, "u_c")
    phi = linalg.as_vector(phi, state.phi_f.size, "phi")
    l = state.pole
    return (-l * state.e_f + e_ref, -l * state.u_cf + u_c, -l * state.phi_f + phi)


def filtered_error_derivative(state: FilterState, e_ref_t, t: float) -> np.ndarray:
    """Filtered first derivative of the tracking error, computed without
    differentiating anything:

        mu_f = exp(-l t) mu_f(0) + e_ref(t) - exp(-l t) e_ref(0)
               - l e_f(t) + l exp(-l t) e_f(0)
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    e_ref_t = linalg.as_vector(e_ref_t, state.e_f.size, "e_ref_t")
    decay = math.exp(-state.pole * t)
    return (
        decay * state.mu_f0
        + e_ref_t
        - decay * state.e_ref0
        - state.pole * state.e_f
        + state.pole * decay * state.e_f0
    )


def required_behavior(ref: ReferenceSpec, e_f, u_cf) -> np.ndarray:
    """Model-side response mu_fd = A_ref e_f + B_ref u_cf."""
    e_f = linalg.as_vector(e_f, ref.n, "e_f")
    u_cf = linalg.as_vector(u_cf, ref.m, "u_cf")
    return ref.a_ref @ e_f + ref.b_ref @ u_cf


def regression_output(ref: ReferenceSpec, mu_fd, mu_f) -> np.ndarray:
    """Regression left-hand side y = B_ref^+ (mu_fd - mu_f) = theta^T phi_f."""
    mu_fd = linalg.as_vector(mu_fd, ref.n, "mu_fd")
    mu_f = linalg.as_vector(mu_f, ref.n, "mu_f")
    return linalg.left_pseudoinverse(ref.b_ref) @ (mu_fd - mu_f)
