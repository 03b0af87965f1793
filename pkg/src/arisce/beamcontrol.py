"""Beam codebooks and surface configuration design.

The pilot codebook holds phase-only beamforming weights built from orthogonal
spatial-frequency pairs (plus distance rings in the near field).  Weights are
the conjugated array responses, so a beam multiplied elementwise onto the
cascaded channel combines coherently toward its generating direction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .channel import NoiseModel
from .geometry import ArrayGeometry, element_positions, field_boundaries, steering_far_batch, steering_near_batch

VISIBLE_SIN_MAX = np.sin(np.pi / 3)  # spatial-frequency support of the user population


class CodebookExhausted(RuntimeError):
    """Every codebook entry has already been used in this run."""


@dataclass(frozen=True)
class Codebook:
    """Phase-only pilot beams plus their generating parameters and used flags."""

    geometry: ArrayGeometry
    regime: str                          # 'near' | 'far'
    entries: np.ndarray                  # size=(R, N), unit modulus
    params: tuple                        # per entry: (az, el) or (az, el, r)
    used: np.ndarray                     # size=(R,), bool
    ring_distances: tuple | None = None

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def available(self) -> int:
        return int(np.sum(~self.used))

    def fresh(self) -> "Codebook":
        """Copy with cleared used flags; entries are shared read-only."""
        return replace(self, used=np.zeros(self.size, dtype=bool))


def spatial_frequency_pairs(geometry: ArrayGeometry, sin_max: float = VISIBLE_SIN_MAX):
    """Orthogonal spatial-frequency pairs restricted to physically visible
    directions inside the user support.

    Returns (u, w, azimuth, elevation) arrays.  u = sin(az) cos(el), w = sin(el);
    the u grid {2m/N_H - 1} and w grid {2q/N_V - 1} make beams exactly
    orthogonal at half-wavelength spacing.
    """
    u_all = 2.0 * np.arange(geometry.n_h) / geometry.n_h - 1.0
    w_all = 2.0 * np.arange(geometry.n_v) / geometry.n_v - 1.0
    uu, ww = np.meshgrid(u_all, w_all, indexing="ij")
    uu, ww = uu.ravel(), ww.ravel()
    keep = (np.abs(uu) <= sin_max + 1e-12) & (np.abs(ww) <= sin_max + 1e-12)
    keep &= uu * uu + ww * ww <= 1.0
    uu, ww = uu[keep], ww[keep]
    if uu.size == 0:
        raise ValueError("empty visible-region grid")
    cos_el = np.sqrt(1.0 - ww * ww)
    az = np.arcsin(np.clip(uu / np.maximum(cos_el, 1e-15), -1.0, 1.0))
    el = np.arcsin(ww)
    return uu, ww, az, el


def default_ring_distances(geometry: ArrayGeometry, n_rings: int) -> np.ndarray:
    """Focal distances sampled uniformly in inverse distance over the span from
    the near-field lower bound out to the Fraunhofer distance."""
    d_f, d_b = field_boundaries(geometry)
    if n_rings < 1:
        raise ValueError("need at least one distance ring")
    if n_rings == 1:
        return np.array([d_f])
    return 1.0 / np.linspace(1.0 / d_f, 1.0 / d_b, n_rings)


def build_codebook(
    geometry: ArrayGeometry,
    regime: str,
    near_distance_rings: int = 4,
    ring_distances=None,
    sin_max: float = VISIBLE_SIN_MAX,
) -> Codebook:
    """Codebook of unit-modulus beams on the orthogonal angle grid; near-field
    codebooks replicate the angle grid at each distance ring."""
    _, _, az, el = spatial_frequency_pairs(geometry, sin_max)
    if regime == "far":
        entries = np.conj(steering_far_batch(geometry, az, el)).T
        params = tuple((float(a), float(e)) for a, e in zip(az, el))
        rings = None
    elif regime == "near":
        if ring_distances is None:
            ring_distances = default_ring_distances(geometry, near_distance_rings)
        rings = tuple(float(r) for r in ring_distances)
        blocks, params = [], []
        for r in rings:
            blocks.append(np.conj(steering_near_batch(geometry, az, el, np.full(az.shape, r))).T)
            params.extend((float(a), float(e), r) for a, e in zip(az, el))
        entries = np.vstack(blocks)
        params = tuple(params)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return Codebook(
        geometry=geometry,
        regime=regime,
        entries=entries,
        params=params,
        used=np.zeros(entries.shape[0], dtype=bool),
        ring_distances=rings,
    )


def _beam_from_sweep(geometry: ArrayGeometry, sweep_vals: np.ndarray,
                     dither_sign: float) -> np.ndarray:
    i, k = element_positions(geometry)
    k_wave = 2 * np.pi / geometry.wavelength
    cols = np.arange(geometry.n) % geometry.n_h
    rows = (np.arange(geometry.n) // geometry.n_h).astype(float)
    dither = (2.0 / geometry.n_v) * ((rows + 0.5) / geometry.n_v - 0.5)
    return np.exp(1j * k_wave * (i * sweep_vals[cols] + k * dither_sign * dither))


@lru_cache(maxsize=32)
def _polished_sweep(geometry: ArrayGeometry) -> tuple:
    """Per-column sweep values for one wide beam: a uniform sweep of the
    sector in sin space, polished by deterministic coordinate descent that
    maximizes the worst-case sector coverage (the plain chirp has interference
    dips several dB deep at some aperture sizes).  The score also holds the
    mirrored out-of-sector field a factor below the in-sector floor so the two
    beams keep a clean left/right separation.

    The ramp spans half the footprint: with weight phases pi*c*t_c and a
    linear ramp t_c, the stationary-phase direction of column c sits at
    2*t_c, so covering sin-azimuth [0, sin(pi/3)] needs t up to sin(pi/3)/2.
    """
    n_h = geometry.n_h
    sweep = (np.arange(n_h) + 0.5) * (VISIBLE_SIN_MAX / 2) / n_h
    azimuths = np.linspace(-np.pi / 3, 0.0, 64)
    in_sector = steering_far_batch(geometry, azimuths, np.zeros_like(azimuths))
    mirror_az = np.linspace(np.pi / 36, np.pi / 3, 48)
    out_sector = steering_far_batch(geometry, mirror_az, np.zeros_like(mirror_az))

    def score(values: np.ndarray) -> float:
        w = _beam_from_sweep(geometry, values, +1.0)
        floor = float(np.min(np.abs(w.conj() @ in_sector) ** 2))
        spill = float(np.max(np.abs(w.conj() @ out_sector) ** 2))
        return min(floor, 0.25 * floor * floor / max(spill, 1e-300))

    best = score(sweep)
    step = VISIBLE_SIN_MAX / (2 * n_h)
    for _ in range(6):
        for c in range(n_h):
            for delta in (0.5 * step, -0.5 * step, 0.25 * step, -0.25 * step):
                trial = sweep.copy()
                trial[c] = np.clip(trial[c] + delta, 0.0, VISIBLE_SIN_MAX / 2)
                if score(trial) > best:
                    best, sweep = score(trial), trial
        step *= 0.6
    return tuple(sweep)


def wide_beams(geometry: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Two phase-only beams covering the complementary azimuth sectors
    [-pi/3, 0] and [0, pi/3] at zero elevation.

    Construction: per-column subarray steering.  Column c of the aperture gets
    the weight phase for the c-th point of a sweep across the beam's sector
    (uniform in sin space, then polished for flat worst-case coverage), which
    widens the composite azimuth pattern while keeping every element at unit
    modulus.  Rows additionally carry a small elevation dither (one null
    spacing end to end), with opposite ramp signs on the two beams: a plain
    unsteered column has exact pattern nulls on every nonzero codebook
    elevation, and identical vertical patterns would leave the elevation
    unidentifiable from the two initial observations.
    """
    if geometry.n_h % 2 != 0:
        raise ValueError("wide beams require an even number of columns")
    sweep = np.array(_polished_sweep(geometry))
    # weights swept over +/- sin(pi/3) give response-domain footprints on the
    # mirrored sector, so beam 1 covers azimuth [-pi/3, 0] and beam 2 [0, pi/3]
    theta_w1 = _beam_from_sweep(geometry, sweep, +1.0)
    theta_w2 = _beam_from_sweep(geometry, -sweep, -1.0)
    return theta_w1, theta_w2


def initial_configs(theta_w1: np.ndarray, theta_w2: np.ndarray, p_ris: float,
                    n: int) -> tuple[np.ndarray, np.ndarray]:
    """First two surface configurations: equal per-element gain sqrt(P_ris/N)
    with the wide-beam phases."""
    if p_ris <= 0:
        raise ValueError("p_ris must be positive")
    scale = np.sqrt(p_ris / n)
    return scale * theta_w1, scale * theta_w2


def phase_align(h: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Unit-modulus phases canceling the aggregate per-element phase of
    h_n * g_hat_n; entries with a vanishing product get phase 0."""
    return np.exp(-1j * np.angle(h * g_hat))


@dataclass(frozen=True)
class AmplificationProfile:
    """Per-element gains p (positive) and the budget normalization constant c."""

    p: np.ndarray
    c: float


def amplification_profile(
    g_hat: np.ndarray,
    h: np.ndarray,
    p_d: float,
    p_ris: float,
    noise: NoiseModel,
) -> AmplificationProfile:
    """Closed-form per-element amplification under the surface power budget.

    p_n = C * alpha_n / (beta_n + gamma_n) with alpha_n = |g_hat_n||h_n|,
    beta_n = |h_n|^2, gamma_n = (|g_hat_n|^2 p_d / sigma_v2 + 1)/(p_ris/sigma2),
    and C chosen so that sum alpha_n^2 gamma_n / (beta_n + gamma_n)^2 = C^{-2}.

    With both noise powers zero (noiseless synthesis) gamma degenerates to its
    equal-noise-power limit |g_hat_n|^2 p_d / p_ris; a passive model
    (sigma_v2 = 0 with receiver noise present) has no defined profile.
    """
    if p_ris <= 0:
        raise ValueError("p_ris must be positive")
    alpha = np.abs(g_hat) * np.abs(h)
    beta = np.abs(h) ** 2
    if noise.sigma_v2 <= 0:
        if noise.sigma2 > 0:
            raise ValueError("amplification profile undefined without surface noise power")
        gamma = np.abs(g_hat) ** 2 * p_d / p_ris
    else:
        if noise.sigma2 <= 0:
            raise ValueError("sigma2 must be positive when sigma_v2 is")
        gamma = (np.abs(g_hat) ** 2 * p_d / noise.sigma_v2 + 1.0) / (p_ris / noise.sigma2)
    base = alpha / (beta + gamma)
    norm = np.sum(alpha**2 * gamma / (beta + gamma) ** 2)
    if norm <= 0:
        raise ValueError("degenerate channel estimate: zero amplification profile")
    c = float(norm ** -0.5)
    return AmplificationProfile(p=c * base, c=c)


def compose_config(profile: AmplificationProfile, phases: np.ndarray) -> np.ndarray:
    """Surface configuration p (elementwise) phases."""
    if profile.p.shape != phases.shape:
        raise ValueError("dimension mismatch between gains and phases")
    return profile.p * phases


def closest_beam(phi_star: np.ndarray, codebook: Codebook) -> tuple[np.ndarray, int]:
    """Unused codebook entry maximizing |phi_star^H theta|; ties go to the
    lowest index.  The selected entry is marked used."""
    if codebook.available() == 0:
        raise CodebookExhausted("no unused codebook entries remain")
    scores = np.abs(codebook.entries @ phi_star.conj())
    scores[codebook.used] = -1.0
    idx = int(np.argmax(scores))
    codebook.used[idx] = True
    return codebook.entries[idx], idx


def export_codebook(codebook: Codebook, path) -> None:
    """Write one line per entry: index, generating parameters, phase vector."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# regime={codebook.regime} entries={codebook.size} "
                 f"elements={codebook.geometry.n}\n")
        fh.write("# index,azimuth,elevation,distance | element phases (rad)\n")
        for idx in range(codebook.size):
            p = codebook.params[idx]
            dist = repr(p[2]) if len(p) == 3 else ""
            phases = " ".join(repr(float(x)) for x in np.angle(codebook.entries[idx]))
            fh.write(f"{idx},{p[0]!r},{p[1]!r},{dist} | {phases}\n")
