"""Regressor extension and mixing.

The scalar regression y = theta^T phi_f is replicated through a bank of n+m-1
distinct stable first-order filters; stacking the original and filtered copies
gives an extended square regression which, pre-multiplied by the adjugate of
its regressor matrix, decouples into one scalar regression per unknown with
the common scalar regressor omega = det of the extended regressor.

The excitation monitor is bookkeeping only: it reports when and how strongly
omega became exciting, and no adaptation law ever branches on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DimensionError


@dataclass
class FilterBank:
    """Bank of first-order extension filters a_i/(p + b_i) with their states.

    All gains and poles must be positive and the poles pairwise distinct,
    otherwise the extended rows are dependent and the mixed regressor
    degenerates.
    """

    gains: np.ndarray        # alpha_i > 0
    poles: np.ndarray        # beta_i > 0, pairwise distinct
    y_states: np.ndarray     # (channels, m)
    phi_states: np.ndarray   # (channels, n+m)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float).ravel()
        self.poles = np.asarray(self.poles, dtype=float).ravel()
        if self.gains.size != self.poles.size:
            raise DimensionError("filter bank needs one gain per pole")
        if not (self.gains > 0).all() or not (self.poles > 0).all():
            raise ValueError("filter bank gains and poles must be positive")
        if np.unique(self.poles).size != self.poles.size:
            raise ValueError("filter bank poles must be pairwise distinct")
        self.y_states = np.asarray(self.y_states, dtype=float)
        self.phi_states = np.asarray(self.phi_states, dtype=float)
        if self.y_states.shape[0] != self.channels or self.phi_states.shape[0] != self.channels:
            raise DimensionError("filter bank state rows must match channel count")

    @property
    def channels(self) -> int:
        return self.gains.size

    @classmethod
    def initial(cls, n: int, m: int, gains, poles) -> "FilterBank":
        gains = np.asarray(gains, dtype=float).ravel()
        if gains.size != n + m - 1:
            raise DimensionError(f"extension needs n+m-1 = {n + m - 1} channels, got {gains.size}")
        return cls(
            gains=gains,
            poles=poles,
            y_states=np.zeros((gains.size, m)),
            phi_states=np.zeros((gains.size, n + m)),
        )


def bank_derivatives(bank: FilterBank, y, phi_f):
    """Per-channel derivatives: x_fi' = -b_i x_fi + a_i x for both the
    regression output and the regressor."""
    y = linalg.as_vector(y, bank.y_states.shape[1], "y")
    phi_f = linalg.as_vector(phi_f, bank.phi_states.shape[1], "phi_f")
    dy = -bank.poles[:, None] * bank.y_states + bank.gains[:, None] * y[None, :]
    dphi = -bank.poles[:, None] * bank.phi_states + bank.gains[:, None] * phi_f[None, :]
    return dy, dphi


def extend_regression(y, phi_f, bank: FilterBank):
    """Stack the live signals over the bank states into the extended
    regression (Y_ext, Phi_ext): row 0 holds the unfiltered pair, row i+1 the
    i-th channel."""
    p = bank.phi_states.shape[1]
    m = bank.y_states.shape[1]
    if bank.channels != p - 1:
        raise DimensionError(f"bank must have {p - 1} channels for a {p}-dim regressor")
    y = linalg.as_vector(y, m, "y")
    phi_f = linalg.as_vector(phi_f, p, "phi_f")
    y_ext = np.vstack([y[None, :], bank.y_states])
    phi_ext = np.vstack([phi_f[None, :], bank.phi_states])
    return y_ext, phi_ext


@dataclass(frozen=True, eq=False)
class MixedRegression:
    """Scalar regressor omega = det(Phi_ext) and mixed output
    Y = adj(Phi_ext) Y_ext, satisfying Y = omega * theta whenever
    Y_ext = Phi_ext theta."""

    omega: float
    mixed: np.ndarray  # (n+m, m)


def mix_regression(y_ext, phi_ext) -> MixedRegression:
    phi_ext = linalg.as_matrix(phi_ext, "phi_ext")
    y_ext = linalg.as_matrix(y_ext, "y_ext")
    if phi_ext.shape[0] != phi_ext.shape[1] or y_ext.shape[0] != phi_ext.shape[0]:
        raise DimensionError("extended regression shapes are inconsistent")
    return MixedRegression(
        omega=linalg.det(phi_ext),
        mixed=linalg.adjugate(phi_ext) @ y_ext,
    )


@dataclass(frozen=True)
class ExcitationReport:
    excited: bool
    t0: float | None
    integral: float


@dataclass
class ExcitationMonitor:
    """Tracks when the scalar regressor first becomes non-negligible (t0) and
    accumulates its energy integral over a window after t0.

    threshold: detection level for |omega| (absolute).
    level:     excitation degree the integral must reach to report excited.
    window:    accumulation window after t0 (None = unbounded horizon).
    """

    threshold: float = 1e-10
    level: float = 1e-20
    window: float | None = None
    t0: float | None = None
    integral: float = 0.0
    excited: bool = False
    _prev_sq: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if self.threshold <= 0 or self.level <= 0:
            raise ValueError("monitor threshold and level must be positive")


def monitor_step(mon: ExcitationMonitor, omega: float, t: float, dt: float) -> ExcitationReport:
    """Advance the monitor by one accepted integration step ending at time t.

    The energy integral accumulates trapezoidally over step segments that lie
    inside [t0, t0 + window]; t0 is latched at the first sample where
    |omega| exceeds the threshold. The integral is nondecreasing and the
    excited flag latches once the integral reaches the configured level.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    osq = omega * omega
    if mon.t0 is None:
        if abs(omega) > mon.threshold:
            mon.t0 = t
    else:
        window = math.inf if mon.window is None else mon.window
        seg_start = t - dt
        if seg_start >= mon.t0 - 1e-15 and t <= mon.t0 + window + 1e-12:
            mon.integral += 0.5 * (mon._prev_sq + osq) * dt
    if mon.integral >= mon.level:
        mon.excited = True
    mon._prev_sq = osq
    return ExcitationReport(excited=mon.excited, t0=mon.t0, integral=mon.integral)
