"""Line-of-sight channel coefficients from node geometry.

Log-distance path loss referenced to 1 m, deterministic phase from the
carrier wavelength. Magnitudes are dimensionless amplitude gains, so the
downlink SINR needs only the transmit-SNR scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ChannelError(Exception):
    pass


def free_space_reference_loss_db(carrier_frequency: float, d0: float = 1.0) -> float:
    """Free-space path loss at the reference distance, in dB."""
    lam = SPEED_OF_LIGHT / carrier_frequency
    return 20.0 * math.log10(4.0 * math.pi * d0 / lam)


@dataclass
class PropagationParams:
    carrier_frequency: float = 9e9
    pathloss_exponent: float = 3.0
    reference_loss_db: float | None = None  # None: free-space at 1 m
    shadowing_sigma_db: float = 0.0

    def __post_init__(self):
        if self.carrier_frequency <= 0:
            raise ValueError("carrier_frequency must be positive")
        if self.pathloss_exponent < 2:
            raise ValueError("pathloss_exponent must be >= 2")
        if self.reference_loss_db is None:
            self.reference_loss_db = free_space_reference_loss_db(self.carrier_frequency)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency


@dataclass
class ChannelMatrix:
    """M x K complex coefficients for one slot."""

    g: np.ndarray
    slot_index: int = 0

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.g)


def _gain_from_distance(d: np.ndarray, params: PropagationParams,
                        shadow_db: np.ndarray | None = None) -> np.ndarray:
    beta_db = -(params.reference_loss_db + 10.0 * params.pathloss_exponent * np.log10(d))
    if shadow_db is not None:
        beta_db = beta_db + shadow_db
    amp = 10.0 ** (beta_db / 20.0)
    phase = -2.0 * np.pi * d / params.wavelength
    return amp * np.exp(1j * phase)


def _distance_3d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # One fixed evaluation order so scalar and matrix paths agree bitwise;
    # the carrier phase magnifies any last-ulp distance discrepancy.
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def los_channel(ap_pos, ue_pos, params: PropagationParams) -> complex:
    """Complex coefficient for one AP-UE pair from 3D positions."""
    d = float(_distance_3d(np.asarray(ap_pos, dtype=float), np.asarray(ue_pos, dtype=float)))
    if d == 0.0:
        raise ChannelError("co-located AP and UE antennas (distance 0)")
    return complex(_gain_from_distance(np.array(d), params))


def build_channel_matrix(ap_positions: np.ndarray, ue_positions: np.ndarray,
                         params: PropagationParams, slot_index: int = 0,
                         rng: np.random.Generator | None = None) -> ChannelMatrix:
    """All M x K coefficients; a pure function of positions unless
    log-normal shadowing is enabled (then rng is required)."""
    d = _distance_3d(ap_positions[:, None, :], ue_positions[None, :, :])
    if (d == 0.0).any():
        raise ChannelError("co-located AP and UE antennas (distance 0)")
    shadow = None
    if params.shadowing_sigma_db > 0.0:
        if rng is None:
            raise ChannelError("shadowing enabled but no rng provided")
        shadow = rng.normal(0.0, params.shadowing_sigma_db, size=d.shape)
    return ChannelMatrix(_gain_from_distance(d, params, shadow), slot_index)
