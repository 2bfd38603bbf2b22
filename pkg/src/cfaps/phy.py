"""Downlink physics: MRT precoding, per-slot SINR/SE, AP power model.

Conventions: channel g and precoding delta are (M, K) complex arrays,
association alpha is (M, K) binary. Active APs transmit at full power
(unit row norm of delta); idle APs have all-zero rows and shut down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PhyError(Exception):
    pass


@dataclass
class PhyParams:
    rho_d: float = 1e6          # transmit SNR: max AP power over noise power
    p_ap: float = 0.2           # fixed circuit power per active AP, W
    amp_efficiency: float = 0.4  # power-amplifier efficiency, in (0, 1)
    noise_power: float = 8e-14  # W (20 MHz bandwidth, 9 dB noise figure)

    def __post_init__(self):
        if self.rho_d <= 0 or self.noise_power <= 0:
            raise ValueError("rho_d and noise_power must be positive")
        if not 0.0 < self.amp_efficiency < 1.0:
            raise ValueError("amp_efficiency must be in (0, 1)")
        if self.p_ap < 0:
            raise ValueError("p_ap must be nonnegative")


@dataclass
class SlotMetrics:
    sinr: np.ndarray          # (K,)
    se: np.ndarray            # (K,) bits/s/Hz
    power: np.ndarray         # (M,) W
    total_power: float


def mrt_precoding(g: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Conjugate beamforming with equal power split per serving AP.

    delta[m, k] = conj(g[m, k]) / |g[m, k]| / sqrt(|S_m|) for served pairs,
    zero otherwise; each active AP row has unit squared norm.
    """
    if g.shape != alpha.shape:
        raise PhyError(f"shape mismatch: channel {g.shape} vs association {alpha.shape}")
    mag = np.abs(g)
    served = alpha != 0
    if (mag[served] == 0.0).any():
        raise PhyError("zero channel magnitude on a served AP-UE pair")
    counts = served.sum(axis=1, keepdims=True).astype(float)
    scale = np.zeros_like(counts)
    np.divide(1.0, np.sqrt(counts), out=scale, where=counts > 0)
    delta = np.zeros_like(g)
    np.divide(np.conj(g), mag, out=delta, where=served)
    delta *= scale
    delta[~served] = 0.0
    return delta


def compute_sinr_se(g: np.ndarray, delta: np.ndarray, rho_d: float):
    """Per-UE SINR and spectral efficiency under the current precoding.

    sinr_k = rho_d |g_k . d_k|^2 / (1 + rho_d sum_{l != k} |g_k . d_l|^2)
    with g_k, d_l the k-th/l-th columns; se_k = log2(1 + sinr_k).
    """
    if g.shape != delta.shape:
        raise PhyError(f"shape mismatch: channel {g.shape} vs precoding {delta.shape}")
    eff = g.T @ delta                      # eff[k, l] = sum_m g[m,k] delta[m,l]
    p = np.abs(eff) ** 2
    sig = np.diag(p).copy()
    interference = p.sum(axis=1) - sig
    sinr = rho_d * sig / (1.0 + rho_d * interference)
    se = np.log2(1.0 + sinr)
    return sinr, se


def compute_power(alpha: np.ndarray, delta: np.ndarray, params: PhyParams):
    """Per-AP power: circuit power when active plus amplifier-scaled
    transmit power; an AP serving nobody consumes nothing."""
    if alpha.shape != delta.shape:
        raise PhyError(f"shape mismatch: association {alpha.shape} vs precoding {delta.shape}")
    active = (alpha.sum(axis=1) > 0).astype(float)
    tx = (np.abs(delta) ** 2).sum(axis=1)
    power = params.p_ap * active + (params.rho_d * params.noise_power / params.amp_efficiency) * tx
    return power, float(power.sum())


def count_active_aps(alpha: np.ndarray) -> int:
    return int((alpha.sum(axis=1) > 0).sum())


def slot_metrics(g: np.ndarray, alpha: np.ndarray, params: PhyParams) -> SlotMetrics:
    """Convenience bundle: MRT, SINR/SE, and power for one slot."""
    delta = mrt_precoding(g, alpha)
    sinr, se = compute_sinr_se(g, delta, params.rho_d)
    power, total = compute_power(alpha, delta, params)
    return SlotMetrics(sinr=sinr, se=se, power=power, total_power=total)
