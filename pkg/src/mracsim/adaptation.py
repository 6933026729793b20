"""Memory-filtered regression and the least-squares adaptation laws.

The mixed scalar regression Y = omega * theta is integrated against an
exponentially decaying kernel, producing the nondecreasing information scalar
info(t) = integral of exp(-sigma (tau - t0)) omega^2 and the matching cross
accumulator so that cross = info * theta identically. The estimates of the
feedback gain, of the adjugate and of the determinant of the inverse
feedforward gain are then driven by least-squares laws with exponential
forgetting and a common time-varying scalar gain. The feedforward gain itself
is recovered analytically through a dead-zone-protected inverse of the
determinant estimate, which is what removes any sign assumption on the plant
input matrix.

Exponent bookkeeping: with cross = info * theta, the block targets scale as
  kx block:   info * k_x
  adjugate:   info^(m-1) * N_a     (adjugate homogeneity)
  determinant: info^m * N_d        (determinant homogeneity)
so the laws multiply the kx target by info^(m-1) and the adjugate target by
info^1 to regress all three against info^m * estimate. For m = 2 the two
multipliers coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DimensionError, SingularAdjugateError, StateCorruptionError


@dataclass
class MemoryState:
    """Forgetting-weighted accumulators of the mixed regression.

    decay is the memory factor (1/s); t0 is the gate time, the first instant
    the scalar regressor is nonzero (None while it has stayed exactly zero,
    in which case both accumulators hold zero and their derivatives vanish).
    """

    decay: float
    info: float                 # nonnegative, nondecreasing scalar
    cross: np.ndarray           # (n+m, m), equals info * theta for exact input
    t0: float | None = None

    def __post_init__(self):
        if self.decay <= 0:
            raise ValueError("memory factor must be positive")

    @classmethod
    def initial(cls, n: int, m: int, decay: float) -> "MemoryState":
        return cls(decay=decay, info=0.0, cross=np.zeros((n + m, m)))


def memory_derivatives(state: MemoryState, omega: float, mixed, t: float):
    """(info', cross') = exp(-decay (t - t0)) * (omega^2, omega * mixed);
    both are zero before excitation starts."""
    mixed = linalg.as_matrix(mixed, "mixed")
    if state.t0 is None or t < state.t0:
        return 0.0, np.zeros_like(mixed)
    weight = math.exp(-state.decay * (t - state.t0))
    return weight * omega * omega, weight * omega * mixed


def split_blocks(cross):
    """Split the (n+m) x m accumulator into its transposed gain blocks:
    the first n rows transpose to the kx block (m x n), the last m rows to
    the inverse-feedforward block (m x m)."""
    cross = linalg.as_matrix(cross, "cross")
    p, m = cross.shape
    n = p - m
    if n < 0:
        raise DimensionError(f"accumulator of shape {cross.shape} has more columns than rows")
    return cross[:n, :].T.copy(), cross[n:, :].T.copy()


def adjdet_targets(kr_block):
    """Adjugate and determinant of the inverse-feedforward block. When the
    block equals info * k_r_inv these are info^(m-1) * N_a and info^m * N_d."""
    kr_block = linalg.as_matrix(kr_block, "kr_block")
    return linalg.adjugate(kr_block), linalg.det(kr_block)


@dataclass
class AdaptationState:
    """Adjustable quantities and the scalar adaptation gain.

    forgetting is the least-squares forgetting factor (1/s); gain follows
    gain' = forgetting * gain - info^(2m) * gain^2, frozen before excitation
    and clamped at gain_max. nd_floor is the dead-zone radius protecting the
    determinant inverse. prev_sign resolves sign(0) in the dead zone and
    switches counts its sign changes (at most one per run when the estimate
    error decays monotonically).
    """

    kx_hat: np.ndarray          # m x n
    na_hat: np.ndarray          # m x m
    nd_hat: float
    gain: float
    forgetting: float
    nd_floor: float
    gain_max: float = 1e300
    switches: int = 0
    prev_sign: int = field(default=0)

    def __post_init__(self):
        self.kx_hat = linalg.as_matrix(self.kx_hat, "kx_hat")
        self.na_hat = linalg.as_matrix(self.na_hat, "na_hat")
        if self.na_hat.shape != (self.m, self.m):
            raise DimensionError("na_hat must be m x m")
        if self.gain <= 0:
            raise StateCorruptionError("adaptation gain must be positive")
        if self.forgetting <= 0 or self.nd_floor <= 0 or self.gain_max <= 0:
            raise ValueError("forgetting, nd_floor and gain_max must be positive")
        if self.prev_sign == 0:
            self.prev_sign = 1 if self.nd_hat >= 0 else -1

    @property
    def m(self) -> int:
        return self.kx_hat.shape[0]

    @property
    def rho(self) -> int:
        return self.m - 1


def adaptation_derivatives(adapt: AdaptationState, info: float, kx_target, m_adj, m_det,
                           gate_open: bool = True):
    """Least-squares derivatives of the three estimates and of the gain.

    kx_target is the kx block of the memory accumulator (m x n), m_adj/m_det
    the adjugate/determinant targets of its feedforward block. gate_open is
    False before excitation starts, which freezes the gain (the estimate
    derivatives vanish on their own since info is exactly zero there).
    """
    if adapt.gain <= 0:
        raise StateCorruptionError("adaptation gain must stay positive")
    kx_target = linalg.as_matrix(kx_target, "kx_target")
    m_adj = linalg.as_matrix(m_adj, "m_adj")
    m = adapt.m
    info_m = info**m
    scale = adapt.gain * info_m
    d_kx = scale * (info**adapt.rho * kx_target - info_m * adapt.kx_hat)
    d_na = scale * (info * m_adj - info_m * adapt.na_hat)
    d_nd = scale * (m_det - info_m * adapt.nd_hat)
    if not gate_open:
        d_gain = 0.0
    else:
        d_gain = adapt.forgetting * adapt.gain - info ** (2 * m) * adapt.gain**2
        if adapt.gain >= adapt.gain_max and d_gain > 0:
            d_gain = 0.0
    return d_kx, d_na, d_nd, d_gain


def gain_inverse_derivative(gain_inv: float, info: float, forgetting: float, m: int,
                            gain_max: float, gate_open: bool = True) -> float:
    """Derivative of the inverse gain q = 1/gain: q' = info^(2m) - forgetting q.

    Algebraically identical to the gain law (gain' = -q'/q^2) but linear and
    non-stiff, which is how the integration engines propagate the gain. The
    clamp gain <= gain_max becomes the floor q >= 1/gain_max.
    """
    if not gate_open:
        return 0.0
    dq = info ** (2 * m) - forgetting * gain_inv
    if gain_inv <= 1.0 / gain_max and dq < 0:
        return 0.0
    return dq


def deadzone_inverse(nd_hat: float, nd_floor: float, prev_sign: int) -> float:
    """Singularity-protected inverse of the determinant estimate:

        1/nd_hat                          if |nd_hat| > nd_floor
        -(1/nd_floor) * sign(nd_hat)      otherwise

    sign(0) resolves to prev_sign, so the operator is total. Note the minus
    sign in the dead-zone branch: inside the zone the output carries the
    opposite sign of the estimate.
    """
    if nd_floor <= 0:
        raise ValueError("dead-zone radius must be positive")
    if abs(nd_hat) > nd_floor:
        return 1.0 / nd_hat
    if nd_hat > 0:
        sign = 1
    elif nd_hat < 0:
        sign = -1
    else:
        sign = prev_sign
    return -sign / nd_floor


def recover_kr(na_hat, nd_hat: float, nd_floor: float, prev_sign: int):
    """Recover the feedforward gain and its inverse from the adjugate and
    determinant estimates:

        kr_hat = deadzone_inverse(nd_hat) * na_hat

    Returns (kr_hat, kr_inv_hat, switched) where switched reports that the
    sign of nd_hat (with 0 resolved to prev_sign) differs from prev_sign.
    Raises SingularAdjugateError when na_hat is singular: the recovered gain
    could not be inverted, which indicates a misconfigured scenario rather
    than a recoverable condition.
    """
    na_hat = linalg.as_matrix(na_hat, "na_hat")
    m = na_hat.shape[0]
    if na_hat.shape[0] != na_hat.shape[1]:
        raise DimensionError("na_hat must be square")
    na_det = linalg.det(na_hat)
    if abs(na_det) <= 1e-12 * (1.0 + float(np.linalg.norm(na_hat)) ** m):
        raise SingularAdjugateError(
            f"adjugate estimate is singular (det {na_det:.3e}); cannot invert the feedforward gain"
        )
    inv_scalar = deadzone_inverse(nd_hat, nd_floor, prev_sign)
    kr_hat = inv_scalar * na_hat
    kr_det = inv_scalar**m * na_det
    kr_inv_hat = linalg.adjugate(kr_hat) / kr_det
    if nd_hat > 0:
        sign_now = 1
    elif nd_hat < 0:
        sign_now = -1
    else:
        sign_now = prev_sign
    return kr_hat, kr_inv_hat, sign_now != prev_sign


@dataclass(frozen=True, eq=False)
class ParameterError:
    """Estimate errors against the ideal gains (diagnostics and tests only)."""

    kx_err: np.ndarray
    na_err: np.ndarray
    nd_err: float

    @property
    def stacked(self) -> np.ndarray:
        """Column-major stacking [vec(kx_err); vec(na_err); nd_err]."""
        return np.concatenate(
            [linalg.vectorize(self.kx_err), linalg.vectorize(self.na_err), [self.nd_err]]
        )


def parameter_error(kx_hat, na_hat, nd_hat: float, gains) -> ParameterError:
    return ParameterError(
        kx_err=linalg.as_matrix(kx_hat, "kx_hat") - gains.k_x,
        na_err=linalg.as_matrix(na_hat, "na_hat") - gains.n_a,
        nd_err=float(nd_hat) - gains.n_d,
    )


def lyapunov_value(theta_err_vec, gain: float) -> float:
    """V = theta_err^T Gamma^-1 theta_err with the scalar gain Gamma = gain * I."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    v = np.asarray(theta_err_vec, dtype=float).ravel()
    return float(v @ v) / gain


def rate_bound(info_t: float, gain_t: float, forgetting: float, m: int) -> float:
    """Exponential decay-rate bound kappa = gain(T) info(T)^(2m) + forgetting,
    the scalar-gain reduction of the Lyapunov-descent lower bound. Diagnostic
    for the convergence-envelope check."""
    if gain_t <= 0:
        raise ValueError("gain must be positive")
    if info_t < 0:
        raise ValueError("info must be nonnegative")
    return gain_t * info_t ** (2 * m) + forgetting
