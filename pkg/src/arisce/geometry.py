"""Uniform planar array geometry and near/far-field steering vectors.

The array lies in the x-z plane with boresight along +y. Element 1 is the
reference at in-plane coordinate (0, 0); indices grow along rows first
(horizontal axis), then columns (vertical axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array layout.

    n_h, n_v: elements per row / per column.
    delta_h, delta_v: inter-element spacings in meters.
    wavelength: carrier wavelength in meters.
    """

    n_h: int
    n_v: int
    delta_h: float
    delta_v: float
    wavelength: float

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError("element counts must be >= 1")
        if self.delta_h <= 0 or self.delta_v <= 0:
            raise ValueError("element spacings must be positive")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")

    @property
    def n(self) -> int:
        return self.n_h * self.n_v

    @classmethod
    def half_wavelength(cls, n_h: int, n_v: int, carrier_freq_hz: float) -> "ArrayGeometry":
        lam = SPEED_OF_LIGHT / carrier_freq_hz
        return cls(n_h=n_h, n_v=n_v, delta_h=lam / 2, delta_v=lam / 2, wavelength=lam)


@dataclass(frozen=True)
class DirectionParams:
    """Direction of a point source: azimuth/elevation in radians, and, for
    near-field sources, the distance in meters to the reference element."""

    azimuth: float
    elevation: float
    distance: float | None = None

    def __post_init__(self):
        if self.distance is not None and self.distance <= 0:
            raise ValueError("distance must be positive")


def element_position(geometry: ArrayGeometry, n: int) -> tuple[float, float]:
    """In-plane (horizontal, vertical) coordinate in meters of element n (1-based)."""
    if not 1 <= n <= geometry.n:
        raise IndexError(f"element index {n} out of range 1..{geometry.n}")
    row = (n - 1) % geometry.n_h          # 0-based position within a row
    col = int(np.ceil(n / geometry.n_h)) - 1
    return row * geometry.delta_h, col * geometry.delta_v


def element_positions(geometry: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized element coordinates, index order n = 1..N.  size=(N,) each."""
    idx = np.arange(geometry.n)
    i = (idx % geometry.n_h) * geometry.delta_h
    k = (idx // geometry.n_h) * geometry.delta_v
    return i, k


def steering_far_batch(geometry: ArrayGeometry, azimuth, elevation) -> np.ndarray:
    """Planar-wavefront array responses for several directions.  size=(N, K)."""
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    i, k = element_positions(geometry)
    u = np.sin(az) * np.cos(el)           # horizontal spatial frequency
    w = np.sin(el)
    phase = i[:, None] * u[None, :] + k[:, None] * w[None, :]
    return np.exp(-1j * (2 * np.pi / geometry.wavelength) * phase)


def steering_near_batch(geometry: ArrayGeometry, azimuth, elevation, distance) -> np.ndarray:
    """Spherical-wavefront array responses for several source points.  size=(N, K).

    Entry n carries the path-length difference between element n and the
    reference element, evaluated without large-minus-large cancellation.
    """
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    r = np.atleast_1d(np.asarray(distance, dtype=float))
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    i, k = element_positions(geometry)
    px = (r * np.sin(az) * np.cos(el))[None, :]
    py = (r * np.cos(az) * np.cos(el))[None, :]
    pz = (r * np.sin(el))[None, :]
    dx = px - i[:, None]
    dz = pz - k[:, None]
    rn = np.sqrt(dx * dx + py * py + dz * dz)   # source-to-element distances
    # r_n - r_1 = (|e|^2 - 2 p.e) / (r_n + r), exact and cancellation-safe
    pe = px * i[:, None] + pz * k[:, None]
    ee = (i * i + k * k)[:, None]
    s = (ee - 2.0 * pe) / (rn + r[None, :])
    return np.exp(1j * (2 * np.pi / geometry.wavelength) * s)


def steering_far(geometry: ArrayGeometry, direction: DirectionParams) -> np.ndarray:
    """Far-field array response vector.  size=(N,), first entry exactly 1."""
    return steering_far_batch(geometry, direction.azimuth, direction.elevation)[:, 0]


def steering_near(geometry: ArrayGeometry, direction: DirectionParams) -> np.ndarray:
    """Near-field array response vector.  size=(N,), first entry exactly 1."""
    if direction.distance is None:
        raise ValueError("near-field steering requires a distance")
    return steering_near_batch(
        geometry, direction.azimuth, direction.elevation, direction.distance
    )[:, 0]


def steering(geometry: ArrayGeometry, direction: DirectionParams) -> np.ndarray:
    """Array response; spherical model when a distance is present, planar otherwise."""
    if direction.distance is None:
        return steering_far(geometry, direction)
    return steering_near(geometry, direction)


def field_boundaries(geometry: ArrayGeometry) -> tuple[float, float]:
    """Radiating-field boundary distances (fraunhofer, near_bound) in meters.

    fraunhofer = 2 D^2 / wavelength with D the aperture diagonal; beyond it the
    planar-wavefront model holds.  near_bound = 2 D is the lower distance bound
    used when sampling near-field users.
    """
    d = np.hypot((geometry.n_h - 1) * geometry.delta_h,
                 (geometry.n_v - 1) * geometry.delta_v)
    return 2.0 * d * d / geometry.wavelength, 2.0 * d
