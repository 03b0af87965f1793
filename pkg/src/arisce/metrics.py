"""Figures of merit: channel NMSE, spectral efficiency, and perfect-CSI
capacity bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import NoiseModel


@dataclass(frozen=True)
class TrialRecord:
    """One Monte Carlo outcome at a given pilot count."""

    trial: int
    regime: str                 # 'near' | 'far'  (where the user actually is)
    mode: str                   # 'active' | 'passive'
    model: str                  # 'near-field' | 'far-field'  (estimator assumption)
    seed: int
    pilots: int
    nmse: float
    rate_bps_hz: float
    capacity_bps_hz: float


def nmse(g_hat: np.ndarray, g: np.ndarray) -> float:
    """Normalized squared error ||g_hat - g||^2 / ||g||^2."""
    denom = float(np.sum(np.abs(g) ** 2))
    if denom == 0:
        raise ValueError("true channel is zero")
    return float(np.sum(np.abs(g_hat - g) ** 2)) / denom


def nmse_cascaded(g_hat: np.ndarray, g: np.ndarray, h: np.ndarray) -> float:
    """NMSE measured on the cascaded per-element channel h * g."""
    return nmse(h * g_hat, h * g)


def spectral_efficiency(phi: np.ndarray, h: np.ndarray, g: np.ndarray,
                        p_d: float, noise: NoiseModel) -> float:
    """Achievable rate log2(1 + P_d |phi^T diag(h) g|^2 /
    (sigma2 + ||phi^T diag(h)||^2 sigma_v2)) in bps/Hz."""
    if p_d < 0:
        raise ValueError("data power must be nonnegative")
    signal = p_d * np.abs(np.sum(phi * h * g)) ** 2
    interference = noise.sigma2 + np.sum(np.abs(phi * h) ** 2) * noise.sigma_v2
    if interference <= 0:
        return float("inf") if signal > 0 else 0.0
    return float(np.log2(1.0 + signal / interference))


def capacity_bound(mode, h: np.ndarray, g_true: np.ndarray, noise: NoiseModel) -> float:
    """Rate of the data-phase configuration rule applied with perfect CSI."""
    from .protocol import configure_for_data  # deferred to avoid an import cycle
    from .estimator import EstimateResult
    from .geometry import DirectionParams

    perfect = EstimateResult(
        beta_hat=float(np.abs(g_true[0]) ** 2),
        omega_hat=float(np.angle(g_true[0])) % (2 * np.pi),
        psi_hat=DirectionParams(0.0, 0.0),
        g_hat=g_true,
        objective_value=np.inf,
        degenerate=False,
    )
    config = configure_for_data(perfect, mode, h, noise, g_incident=g_true)
    eff_noise = noise if mode.mode == "active" else NoiseModel(noise.sigma2, 0.0)
    return spectral_efficiency(config.phi, h, g_true, mode.p_data, eff_noise)
