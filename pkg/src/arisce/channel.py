"""Synthesis of the deterministic BS-RIS link, the parametric user-RIS channel,
the noise model, and noisy pilot observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    ArrayGeometry,
    DirectionParams,
    field_boundaries,
    steering,
)

USER_ANGLE_MAX = np.pi / 3  # users are drawn from +/- 60 degrees in both angles


@dataclass(frozen=True)
class LosChannelParams:
    """Line-of-sight channel parameters: power gain beta, reference phase omega
    in [0, 2*pi), and the direction (plus distance when near field)."""

    beta: float
    omega: float
    dir: DirectionParams

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "omega", float(self.omega) % (2 * np.pi))


@dataclass(frozen=True)
class LosChannel:
    g: np.ndarray  # size=(N,)


@dataclass(frozen=True)
class BsRisChannel:
    h: np.ndarray  # size=(N,), no nulls on a LoS link

    @property
    def d_h(self) -> np.ndarray:
        """The channel in its diagonal-matrix role.  size=(N, N)."""
        return np.diag(self.h)


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise power sigma2 and RIS amplification noise power sigma_v2,
    both in watts.  sigma_v2 = 0 models a passive surface; sigma2 = 0 is
    allowed for noiseless synthesis."""

    sigma2: float
    sigma_v2: float
    rng_seed: int | None = None

    def __post_init__(self):
        if self.sigma2 < 0 or self.sigma_v2 < 0:
            raise ValueError("noise powers must be nonnegative")


def friis_gain(distance_m: float, wavelength_m: float) -> float:
    """Free-space power gain (wavelength / 4 pi d)^2 of a single LoS link."""
    return (wavelength_m / (4 * np.pi * distance_m)) ** 2


def crandn(rng: np.random.Generator, shape, power: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian draws with the given total power."""
    scale = np.sqrt(power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def make_channel(geometry: ArrayGeometry, params: LosChannelParams) -> LosChannel:
    """Realize g = sqrt(beta) * exp(j omega) * a(direction)."""
    a = steering(geometry, params.dir)
    return LosChannel(g=np.sqrt(params.beta) * np.exp(1j * params.omega) * a)


def make_bs_ris_channel(
    geometry: ArrayGeometry,
    bs_distance: float,
    bs_dir: DirectionParams,
    gain_db: float = 0.0,
) -> BsRisChannel:
    """Deterministic LoS BS-to-RIS link with free-space gain plus a lumped
    antenna/element gain in dB.

    The spherical model is used when the BS sits inside the Fraunhofer
    distance of the array, the planar one otherwise.
    """
    if bs_distance <= 0:
        raise ValueError("bs_distance must be positive")
    d_f, _ = field_boundaries(geometry)
    if bs_distance < d_f:
        direction = DirectionParams(bs_dir.azimuth, bs_dir.elevation, bs_distance)
    else:
        direction = DirectionParams(bs_dir.azimuth, bs_dir.elevation, None)
    amp = np.sqrt(friis_gain(bs_distance, geometry.wavelength) * 10 ** (gain_db / 10))
    return BsRisChannel(h=amp * steering(geometry, direction))


def sample_user(
    geometry: ArrayGeometry,
    regime: str,
    rng: np.random.Generator,
    gain_db: float = 0.0,
) -> LosChannelParams:
    """Draw one user: angles uniform on [-pi/3, pi/3]; distance uniform on
    [near_bound, fraunhofer/10] (near regime) or [fraunhofer, 5*fraunhofer]
    (far regime); beta from free-space loss plus a lumped antenna gain;
    omega uniform on [0, 2*pi)."""
    d_f, d_b = field_boundaries(geometry)
    azimuth = rng.uniform(-USER_ANGLE_MAX, USER_ANGLE_MAX)
    elevation = rng.uniform(-USER_ANGLE_MAX, USER_ANGLE_MAX)
    if regime == "near":
        distance = rng.uniform(d_b, d_f / 10)
    elif regime == "far":
        distance = rng.uniform(d_f, 5 * d_f)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    omega = rng.uniform(0.0, 2 * np.pi)
    return LosChannelParams(
        beta=friis_gain(distance, geometry.wavelength) * 10 ** (gain_db / 10),
        omega=omega,
        dir=DirectionParams(azimuth, elevation, distance),
    )


def observe_pilots(
    b_matrix: np.ndarray,
    h: np.ndarray,
    g: np.ndarray,
    p_p: float,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Received pilot vector y = sqrt(P_p) B diag(h) g + amplification noise
    + receiver noise.  size=(L,).

    The surface noise is drawn fresh per pilot slot: row i of B sees its own
    v_i ~ CN(0, sigma_v2 I).  Per slot the draw order is v then w.
    """
    b = np.atleast_2d(np.asarray(b_matrix))
    if b.shape[1] != h.shape[0] or h.shape[0] != g.shape[0]:
        raise ValueError("dimension mismatch between b_matrix, h and g")
    if p_p <= 0:
        raise ValueError("pilot power must be positive")
    hg = h * g
    y = np.empty(b.shape[0], dtype=complex)
    for i in range(b.shape[0]):
        v = crandn(rng, h.shape[0], noise.sigma_v2) if noise.sigma_v2 > 0 else 0.0
        w = crandn(rng, (), noise.sigma2) if noise.sigma2 > 0 else 0.0
        y[i] = np.sqrt(p_p) * (b[i] @ hg) + b[i] @ (h * v) + w
    return y
