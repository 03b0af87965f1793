"""Adaptive pilot protocol for the active surface and the passive baseline.

One run spends a budget of L pilot slots.  The first two slots probe with the
sector-covering wide beams; each following round re-estimates the channel from
all observations so far, shapes the per-element gains, phase-aligns toward the
estimate, greedily picks the unused codebook beam best aligned with that
target configuration, and spends one more pilot on it.  That yields L
observations, L-1 estimation passes, and L-2 codebook selections.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .beamcontrol import (
    AmplificationProfile,
    Codebook,
    CodebookExhausted,
    amplification_profile,
    closest_beam,
    compose_config,
    initial_configs,
    phase_align,
    wide_beams,
)
from .channel import BsRisChannel, LosChannelParams, NoiseModel, observe_pilots
from .estimator import EstimateResult, SearchGrid, estimate_channel, noise_covariance
from .geometry import ArrayGeometry, DirectionParams


@dataclass(frozen=True)
class RisMode:
    """Operating mode and its power bookkeeping (watts)."""

    mode: str                   # 'active' | 'passive'
    p_ris: float                # surface amplifier budget (active only)
    p_pilot: float              # per-symbol BS transmit power during pilots
    p_data: float               # per-symbol BS transmit power during data

    def __post_init__(self):
        if self.mode not in ("active", "passive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "active" and self.p_ris <= 0:
            raise ValueError("active mode needs a positive surface power budget")


@dataclass(frozen=True)
class Scenario:
    """Ground truth for one trial: user parameters and realized channel,
    BS-surface link, noise powers, and mode power split."""

    user: LosChannelParams
    g: np.ndarray
    bs: BsRisChannel
    noise: NoiseModel
    mode: RisMode


@dataclass(frozen=True)
class RisConfiguration:
    """Per-element surface coefficients for the data phase."""

    phi: np.ndarray
    fallback: bool = False


@dataclass
class RoundRecord:
    """Per-round trace: pilots spent so far, the codeword appended after this
    round's estimate (None for the final round), and quality metrics."""

    pilots_used: int
    selected_index: int | None
    estimate: EstimateResult
    nmse: float
    rate_bps_hz: float
    profile: AmplificationProfile | None = None
    reobserved: bool = False


@dataclass
class ProtocolState:
    b_rows: list = field(default_factory=list)
    y: list = field(default_factory=list)
    codebook: Codebook | None = None
    estimate: EstimateResult | None = None
    budget: int = 0
    history: list = field(default_factory=list)

    @property
    def b_matrix(self) -> np.ndarray:
        return np.array(self.b_rows)


def configure_for_data(estimate: EstimateResult, mode: RisMode, h: np.ndarray,
                       noise: NoiseModel, g_incident: np.ndarray | None = None) -> RisConfiguration:
    """Data-phase surface configuration from a channel estimate.

    Active: amplification profile times the phase-aligned weights.  The
    commanded gains are scaled down if their power draw against the actual
    incident signal would exceed the budget level the profile is normalized to
    (a hardware power limiter; exact-CSI profiles are unaffected).
    Passive: unit-modulus conjugate phase alignment.
    """
    n = h.shape[0]
    if estimate.degenerate:
        phases = np.exp(-1j * np.angle(h))
        if mode.mode == "passive":
            return RisConfiguration(phi=phases, fallback=True)
        return RisConfiguration(phi=np.sqrt(mode.p_ris / n) * phases, fallback=True)
    phases = phase_align(h, estimate.g_hat)
    if mode.mode == "passive":
        return RisConfiguration(phi=phases)
    profile = amplification_profile(estimate.g_hat, h, mode.p_data, mode.p_ris, noise)
    phi = compose_config(profile, phases)
    if g_incident is not None:
        draw = float(np.sum(profile.p**2 * (mode.p_data * np.abs(g_incident) ** 2
                                            + noise.sigma_v2)))
        # the profile's own normalization level; ratio 1 covers noiseless runs
        ratio = noise.sigma_v2 / noise.sigma2 if noise.sigma2 > 0 else 1.0
        budget = mode.p_ris * ratio
        if draw > budget * (1 + 1e-12):
            phi = phi * np.sqrt(budget / draw)
    return RisConfiguration(phi=phi)


def _observe_one(state: ProtocolState, phi_new: np.ndarray, scenario: Scenario,
                 obs_noise: NoiseModel, rng: np.random.Generator) -> None:
    state.b_rows.append(phi_new)
    y_new = observe_pilots(phi_new[None, :], scenario.bs.h, scenario.g,
                           scenario.mode.p_pilot, obs_noise, rng)
    state.y.append(complex(y_new[0]))


def _budget_exact(phi: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Rescale an amplified pilot configuration so the surface runs exactly at
    its amplifier budget against the actual incident power (automatic gain
    control in the hardware).  The closed-form profile meets the budget only
    when the channel estimate behind it is right; a badly overestimated gain
    would otherwise emit almost nothing and blind all later pilots."""
    noise = scenario.noise
    draw = float(np.sum(np.abs(phi) ** 2
                        * (scenario.mode.p_pilot * np.abs(scenario.g) ** 2
                           + noise.sigma_v2)))
    ratio = noise.sigma_v2 / noise.sigma2 if noise.sigma2 > 0 else 1.0
    budget = scenario.mode.p_ris * ratio
    if draw <= 0 or budget <= 0:
        return phi
    return phi * np.sqrt(budget / draw)


def _energetic_cells(y: np.ndarray, cov, row_cells: list, top: int = 4) -> list:
    """Codeword directions behind the pilot rows with the most whitened energy.

    A row observing energy far above its noise level must be illuminating the
    user, so its beam's cell makes a strong direction-search seed."""
    energy = np.abs(y) ** 2 / np.real(np.diag(cov.f))
    order = np.argsort(-energy, kind="stable")
    seeds = []
    for idx in order:
        if row_cells[idx] is None or energy[idx] < 10.0:
            continue
        seeds.append(row_cells[idx])
        if len(seeds) >= top:
            break
    return seeds


def _run_protocol(scenario: Scenario, geometry: ArrayGeometry, grid: SearchGrid,
                  codebook: Codebook, budget: int,
                  rng: np.random.Generator) -> tuple[EstimateResult, list]:
    if budget < 2:
        raise ValueError("pilot budget must be at least 2")
    mode = scenario.mode
    active = mode.mode == "active"
    # passive surfaces inject no amplification noise, in the observations and
    # in the estimator's covariance alike
    obs_noise = scenario.noise if active else replace(scenario.noise, sigma_v2=0.0)

    theta_w1, theta_w2 = wide_beams(geometry)
    if active:
        phi_1, phi_2 = initial_configs(theta_w1, theta_w2, mode.p_ris, geometry.n)
    else:
        phi_1, phi_2 = theta_w1, theta_w2

    state = ProtocolState(codebook=codebook, budget=budget)
    _observe_one(state, phi_1, scenario, obs_noise, rng)
    _observe_one(state, phi_2, scenario, obs_noise, rng)
    row_cells: list = [None, None]   # codeword direction behind each pilot row

    estimate = None
    while True:
        b = state.b_matrix
        y = np.array(state.y)
        cov = noise_covariance(b, scenario.bs.h, obs_noise)
        warm = None
        if estimate is not None and not estimate.degenerate:
            warm = estimate.psi_hat  # previous round's direction seeds the search
        estimate = estimate_channel(y, cov, b, scenario.bs.h, grid, mode.p_pilot,
                                    warm_start=warm,
                                    extra_seeds=_energetic_cells(y, cov, row_cells))
        state.estimate = estimate

        profile = None
        if active and not estimate.degenerate:
            profile = amplification_profile(estimate.g_hat, scenario.bs.h,
                                            mode.p_data, mode.p_ris, scenario.noise)

        record = RoundRecord(
            pilots_used=len(state.y),
            selected_index=None,
            estimate=estimate,
            nmse=metrics.nmse(estimate.g_hat, scenario.g),
            rate_bps_hz=_achieved_rate(estimate, scenario),
            profile=profile,
        )
        state.history.append(record)

        if len(state.y) >= budget:
            break

        if estimate.degenerate:
            # keep-previous-configuration policy: spend the pilot re-observing
            # with the last configuration rather than aborting the run
            record.reobserved = True
            row_cells.append(row_cells[-1])
            _observe_one(state, state.b_rows[-1], scenario, obs_noise, rng)
            continue

        phases = phase_align(scenario.bs.h, estimate.g_hat)
        phi_star = compose_config(profile, phases) if active else phases
        try:
            theta_next, idx = closest_beam(phi_star, codebook)
        except CodebookExhausted:
            break  # stop refining, return the estimate built on all pilots so far
        record.selected_index = idx
        row_cells.append(DirectionParams(*codebook.params[idx]))
        if active:
            phi_new = _budget_exact(compose_config(profile, theta_next), scenario)
        else:
            phi_new = theta_next
        _observe_one(state, phi_new, scenario, obs_noise, rng)

    return estimate, state.history


def _achieved_rate(estimate: EstimateResult, scenario: Scenario) -> float:
    config = configure_for_data(estimate, scenario.mode, scenario.bs.h,
                                scenario.noise, g_incident=scenario.g)
    eff_noise = (scenario.noise if scenario.mode.mode == "active"
                 else replace(scenario.noise, sigma_v2=0.0))
    return metrics.spectral_efficiency(config.phi, scenario.bs.h, scenario.g,
                                       scenario.mode.p_data, eff_noise)


def run_adaptive_estimation(scenario: Scenario, geometry: ArrayGeometry,
                            grid: SearchGrid, codebook: Codebook, budget: int,
                            rng: np.random.Generator) -> tuple[EstimateResult, list]:
    """Adaptive pilot loop for the active surface."""
    if scenario.mode.mode != "active":
        raise ValueError("scenario mode must be active")
    return _run_protocol(scenario, geometry, grid, codebook, budget, rng)


def run_passive_baseline(scenario: Scenario, geometry: ArrayGeometry,
                         grid: SearchGrid, codebook: Codebook, budget: int,
                         rng: np.random.Generator) -> tuple[EstimateResult, list]:
    """Same loop with unit-modulus configurations, no amplification noise, and
    the full BS power budget."""
    if scenario.mode.mode != "passive":
        raise ValueError("scenario mode must be passive")
    return _run_protocol(scenario, geometry, grid, codebook, budget, rng)
