"""Dynamic top-2 threshold and the temperature-controlled piecewise-linear step.

The soft step maps ``[0, 1]`` onto ``[0, 1]`` through five anchor points::

    (0, 0), (tau - tau_m/2, T), (tau, 0.5), (tau + tau_m/2, 1 - T), (1, 1)

with ``tau_m = 5 T min(tau, 1 - tau)``.  At ``T = 0.2`` the transition
width ``tau_m`` equals ``min(tau, 1 - tau)``; as ``T -> 0`` the curve
collapses onto the hard step at ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _node, constant, note_segments

T_MAX = 0.4
DENOM_FLOOR = 1e-12

# segment ids as reported to the breakpoint recorder
LOWER, MIDDLE, UPPER = 0, 1, 2


def check_temperature(T: float) -> float:
    T = float(T)
    if not (0.0 < T <= T_MAX):
        raise ValueError(f"temperature must lie in (0, {T_MAX}], got {T!r}")
    return T


def _check_tau(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    if np.any((tau <= 0.0) | (tau >= 1.0)):
        raise ValueError("threshold tau must lie strictly inside (0, 1)")
    return tau


@dataclass(frozen=True)
class ThresholdParams:
    """Breakpoints and slopes of the soft step for one ``(tau, T)`` pair."""

    tau: float
    T: float
    tau_m: float
    m1: float
    m2: float
    m3: float

    @property
    def lower(self) -> float:
        return self.tau - self.tau_m / 2

    @property
    def upper(self) -> float:
        return self.tau + self.tau_m / 2

    @classmethod
    def from_threshold(cls, tau: float, T: float) -> "ThresholdParams":
        T = check_temperature(T)
        tau = float(_check_tau(tau))
        tau_m = 5.0 * T * min(tau, 1.0 - tau)
        m1 = T / max(tau - tau_m / 2, DENOM_FLOOR)
        m2 = (1.0 - 2.0 * T) / tau_m
        m3 = T / max(1.0 - tau - tau_m / 2, DENOM_FLOOR)
        return cls(tau, T, tau_m, m1, m2, m3)


def top2(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the largest and second-largest entries along the last axis.

    Ties go to the lower index.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("dynamic threshold needs at least two classes")
    first = np.argmax(p, axis=-1)
    masked = p.copy()
    np.put_along_axis(masked, first[..., None], -np.inf, axis=-1)
    second = np.argmax(masked, axis=-1)
    return first, second


def tau_avg(p) -> float | np.ndarray:
    """Mean of the two largest probabilities (per row for a 2-D input)."""
    p = np.asarray(p, dtype=np.float64)
    first, second = top2(p)
    hi = np.take_along_axis(p, first[..., None], axis=-1)[..., 0]
    lo = np.take_along_axis(p, second[..., None], axis=-1)[..., 0]
    out = 0.5 * (hi + lo)
    return float(out) if out.ndim == 0 else out


def heaviside_hard(x, tau):
    """Exact step: 1 above ``tau``, 0 below, 0.5 on the threshold."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > tau, 1.0, np.where(x < tau, 0.0, 0.5))
    return float(out) if out.ndim == 0 else out


def _geometry(tau: np.ndarray, T: float):
    tau_m = 5.0 * T * np.minimum(tau, 1.0 - tau)
    lower = tau - tau_m / 2
    upper = tau + tau_m / 2
    a = np.maximum(lower, DENOM_FLOOR)
    c = np.maximum(1.0 - upper, DENOM_FLOOR)
    return tau_m, lower, upper, a, c


def segment_values(p, tau, T: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Each of the three segment formulas evaluated at ``p`` (whatever segment ``p`` is in).

    The middle segment is interpolated from the anchor on its own side of
    ``tau``, so every join is reproduced exactly rather than through a
    steep slope times a rounded offset.
    """
    p = np.asarray(p, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    _, lower, upper, a, c = _geometry(tau, T)
    rise = 0.5 - T
    val_lo = p * (T / a)
    val_mid = np.where(p <= tau, T + rise * ((p - lower) / (tau - lower)),
                       0.5 + rise * ((p - tau) / (upper - tau)))
    val_hi = 1.0 - (T / c) * (1.0 - p)
    return val_lo, val_mid, val_hi


def _soft_step(p: np.ndarray, tau: np.ndarray, T: float):
    """Value, d/dp, d/dtau and segment id of the soft step, elementwise.

    ``tau`` must broadcast against ``p``.
    """
    half_width_rate = 2.5 * T
    s_slope = np.where(tau <= 0.5, 1.0, -1.0)  # d min(tau, 1 - tau) / d tau
    tau_m, lower_raw, upper, a, c = _geometry(tau, T)
    dtau_m = 5.0 * T * s_slope
    d_lower = 1.0 - half_width_rate * s_slope
    d_upper = 1.0 + half_width_rate * s_slope
    da = np.where(lower_raw > DENOM_FLOOR, d_lower, 0.0)
    dc = np.where(1.0 - upper > DENOM_FLOOR, -d_upper, 0.0)

    m1 = T / a
    m2 = (1.0 - 2.0 * T) / tau_m
    m3 = T / c

    # at T = 0.4 an outer breakpoint reaches 0 or 1; the endpoints keep H(0) = 0, H(1) = 1
    seg = np.where((p < lower_raw) | (p <= 0.0), LOWER,
                   np.where((p > upper) | (p >= 1.0), UPPER, MIDDLE))

    val_lo, val_mid, val_hi = segment_values(p, tau, T)

    dtau_lo = -p * T / a**2 * da
    dm2 = -(1.0 - 2.0 * T) / tau_m**2 * dtau_m
    dtau_mid = dm2 * (p - tau) - m2
    dm3 = -T / c**2 * dc
    dtau_hi = -dm3 * (1.0 - p)

    value = np.choose(seg, [val_lo, val_mid, val_hi])
    dp = np.choose(seg, [np.broadcast_to(m1, p.shape), np.broadcast_to(m2, p.shape),
                         np.broadcast_to(m3, p.shape)])
    dtau = np.choose(seg, [dtau_lo, dtau_mid, dtau_hi])
    return value, dp, dtau, seg


def heaviside_linear(p, tau, T: float):
    """Piecewise-linear soft step at a fixed threshold ``tau``."""
    T = check_temperature(T)
    tau = _check_tau(tau)
    p = np.asarray(p, dtype=np.float64)
    value = _soft_step(p, np.broadcast_to(tau, p.shape), T)[0]
    return float(value) if value.ndim == 0 else value


def heaviside_linear_vec(p, T: float) -> np.ndarray:
    """Soft step applied coordinate-wise at the shared threshold ``tau_avg(p)``.

    Accepts one probability vector or a batch of row vectors.
    """
    T = check_temperature(T)
    p = np.asarray(p, dtype=np.float64)
    tau = _check_tau(tau_avg(p))
    return _soft_step(p, np.expand_dims(tau, -1), T)[0]


def heaviside_linear_op(p, T: float, detach_threshold: bool = False) -> Tensor:
    """Graph op: soft step of each row of ``p`` at that row's dynamic threshold.

    With ``detach_threshold=False`` the gradient also flows through
    ``tau_avg``, which passes half of its adjoint to each of the two
    largest entries of the row.
    """
    T = check_temperature(T)
    p = constant(p)
    if p.ndim not in (1, 2):
        raise ValueError(f"piecewise-linear-heaviside expects 1-D or 2-D input, got {p.shape}")
    P = p.data
    first, second = top2(P)
    tau = 0.5 * (np.take_along_axis(P, first[..., None], axis=-1)
                 + np.take_along_axis(P, second[..., None], axis=-1))
    _check_tau(tau)
    value, dp, dtau, seg = _soft_step(P, tau, T)
    note_segments("piecewise-linear-heaviside", seg)
    note_segments("top2", np.stack([first, second], axis=-1))

    def bw(g):
        grad = g * dp
        if not detach_threshold:
            g_tau = 0.5 * (g * dtau).sum(axis=-1, keepdims=True)
            idx = np.stack([first, second], axis=-1)
            # first != second always, so a plain put is safe
            np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=-1) + g_tau, axis=-1)
        return (grad,)

    return _node(value, "piecewise-linear-heaviside", (p,), bw)
