"""Parametric maximum-likelihood channel estimation.

Observations y = sqrt(P_p) B diag(h) g + noise are fit with the model
g = sqrt(beta) exp(j omega) a(psi).  The phase and gain are closed-form at a
fixed direction; the direction itself is found by maximizing the whitened
matched-filter ratio

    |y^H F^{-1} B diag(h) a(psi)|^2 / (a^H diag(h)^H B^H F^{-1} B diag(h) a)

over a coarse candidate set followed by local refinement.  F is the pilot
noise covariance; it is factorized once per pilot round and only ever used
through linear solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import NoiseModel
from .geometry import ArrayGeometry, DirectionParams, steering, steering_far_batch, steering_near_batch

_DEN_RTOL = 1e-14  # candidates with energy below this fraction of the max are unobservable


class UnobservableDirection(ValueError):
    """The configuration matrix carries no energy along the candidate direction."""


class EstimationFailure(RuntimeError):
    """No observable candidate direction exists for the current pilot matrix."""


@dataclass
class NoiseCovariance:
    """Hermitian positive-definite pilot noise covariance with a cached
    Cholesky factorization for repeated solves."""

    f: np.ndarray                      # size=(L, L)
    _cho: tuple = field(repr=False, default=None)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._cho, rhs)


def noise_covariance(b_matrix: np.ndarray, h: np.ndarray, noise: NoiseModel) -> NoiseCovariance:
    """Covariance sigma2 I + sigma_v2 (B diag(h)) (B diag(h))^H of the combined
    surface and receiver noise across pilot slots.

    A noiseless model (sigma2 = 0) gets a scale-only floor so the factorization
    exists; estimates are invariant to uniform scaling of the covariance.
    """
    b = np.atleast_2d(np.asarray(b_matrix))
    n_rows = b.shape[0]
    if n_rows < 1:
        raise ValueError("at least one pilot row required")
    bh = b * h[None, :]
    gram = noise.sigma_v2 * (bh @ bh.conj().T) if noise.sigma_v2 > 0 else 0.0
    sigma2 = noise.sigma2
    if sigma2 <= 0:
        scale = np.trace(gram).real / n_rows if noise.sigma_v2 > 0 else 0.0
        sigma2 = 1e-12 * scale if scale > 0 else 1.0
    f = np.asarray(gram + sigma2 * np.eye(n_rows), dtype=complex)
    if not np.all(np.isfinite(f)):
        raise ValueError("noise covariance has non-finite entries")
    return NoiseCovariance(f=f, _cho=cho_factor(f, lower=True))


@dataclass(frozen=True)
class SearchGrid:
    """Direction candidates for the estimator plus the refinement policy.

    Coarse candidates are (azimuth, elevation[, distance]) tuples, typically
    the codebook's generating parameters.  Refinement re-grids a shrinking
    neighborhood of the incumbent in spatial-frequency coordinates
    (sin az cos el, sin el) and, in the near-field regime, inverse distance.
    coarse_starts extra refinement seeds are drawn from the best coarse cells
    ranked by the matched-filter ratio; once sharp pilot rows make the
    likelihood peak narrower than a coarse cell, a single seed can miss it.
    """

    geometry: ArrayGeometry
    regime: str                         # 'near' | 'far'
    candidates: np.ndarray              # size=(K, 2) or (K, 3)
    u_step: float
    w_step: float
    inv_r_step: float | None = None
    distance_min: float | None = None
    refine_depth: int = 4
    shrink: float = 0.25
    refine_points: int = 5
    coarse_starts: int = 6

    def __post_init__(self):
        if len(self.candidates) == 0:
            raise ValueError("search grid must be nonempty")
        if self.regime == "near" and (self.inv_r_step is None or self.distance_min is None):
            raise ValueError("near-field grid needs a distance axis")
        object.__setattr__(self, "_coarse_steer", None)

    def coarse_steering(self) -> np.ndarray:
        """Array responses of the coarse candidates, built once."""
        if self._coarse_steer is None:
            object.__setattr__(self, "_coarse_steer", self.steering_matrix(self.candidates))
        return self._coarse_steer

    @property
    def azimuths(self) -> np.ndarray:
        return np.unique(self.candidates[:, 0])

    @property
    def elevations(self) -> np.ndarray:
        return np.unique(self.candidates[:, 1])

    @property
    def distances(self) -> np.ndarray | None:
        if self.candidates.shape[1] < 3:
            return None
        return np.unique(self.candidates[:, 2])

    @classmethod
    def from_codebook(cls, codebook, refine_depth: int = 4, shrink: float = 0.25,
                      refine_points: int = 5) -> "SearchGrid":
        """Coarse grid from a codebook's generating angle(-distance) tuples."""
        geom = codebook.geometry
        if codebook.regime == "far":
            cands = np.array([(az, el) for az, el in codebook.params])
            inv_r_step, dist_min = None, None
        else:
            cands = np.array([(az, el, r) for az, el, r in codebook.params])
            rings = np.asarray(codebook.ring_distances, dtype=float)
            dist_min = float(np.min(rings))
            inv = np.sort(1.0 / rings)
            inv_r_step = float(np.max(np.diff(inv))) if len(inv) > 1 else float(inv[0])
        return cls(
            geometry=geom,
            regime=codebook.regime,
            candidates=cands,
            u_step=2.0 / geom.n_h,
            w_step=2.0 / geom.n_v,
            inv_r_step=inv_r_step,
            distance_min=dist_min,
            refine_depth=refine_depth,
            shrink=shrink,
            refine_points=refine_points,
        )

    def steering_matrix(self, candidates: np.ndarray) -> np.ndarray:
        """Array responses for candidate tuples.  size=(N, K)."""
        if candidates.shape[1] == 2:
            return steering_far_batch(self.geometry, candidates[:, 0], candidates[:, 1])
        return steering_near_batch(
            self.geometry, candidates[:, 0], candidates[:, 1], candidates[:, 2]
        )


def _scores_over(y, z, cov, bh, grid: SearchGrid, candidates: np.ndarray, steer=None):
    """Per-candidate (residual, ratio); unobservable ones get (+inf, -inf).

    The residual is the whitened projection error min_c ||y - c m(psi)||^2 in
    the F^{-1} metric: minimizing it selects the same direction as maximizing
    the matched-filter ratio, but it is computed from the elementwise
    difference, which stays accurate when one pilot row dominates the
    observation vector (the ratio form loses the fine direction information to
    rounding there).  The ratio in turn is scale-invariant and keeps a broad
    peak at coarse resolution, so it ranks refinement seeds.
    """
    if steer is None:
        steer = grid.steering_matrix(candidates)
    m = bh @ steer                                        # size=(L, K)
    s = cov.solve(m)
    den = np.einsum("lk,lk->k", m.conj(), s).real
    residual = np.full(len(candidates), np.inf)
    ratio = np.full(len(candidates), -np.inf)
    floor = max(np.max(den), 0.0) * _DEN_RTOL
    ok = den > floor
    if not np.any(ok):
        return residual, ratio
    inner = m.conj().T @ z                                # per-candidate m^H F^{-1} y
    ratio[ok] = np.abs(inner[ok]) ** 2 / den[ok]
    scale = np.zeros(len(candidates), dtype=complex)
    scale[ok] = inner[ok] / den[ok]
    r = y[:, None] - m * scale[None, :]
    t = cov.solve(r)
    res = np.einsum("lk,lk->k", r.conj(), t).real
    residual[ok] = res[ok]
    return residual, ratio


def objective(y, cov: NoiseCovariance, b_matrix, h, a_psi) -> float:
    """Whitened matched-filter ratio for a single candidate response a_psi.

    Invariant to nonzero complex scaling of a_psi and to uniform positive
    scaling of the covariance.
    """
    b = np.atleast_2d(np.asarray(b_matrix))
    bh = b * h[None, :]
    m = bh @ a_psi
    s = cov.solve(m)
    den = float(np.real(m.conj() @ s))
    if den <= 0:
        raise UnobservableDirection("configuration carries no energy along a_psi")
    z = cov.solve(np.asarray(y))
    return float(np.abs(z.conj() @ m) ** 2 / den)


def _inner_product(y, cov: NoiseCovariance, b_matrix, h, a_psi) -> complex:
    b = np.atleast_2d(np.asarray(b_matrix))
    m = (b * h[None, :]) @ a_psi
    return complex(cov.solve(np.asarray(y)).conj() @ m)


def estimate_omega(y, cov: NoiseCovariance, b_matrix, h, a_psi) -> float:
    """Closed-form phase estimate, wrapped to [0, 2*pi); 0 when the matched
    inner product vanishes (degenerate observation)."""
    inner = _inner_product(y, cov, b_matrix, h, a_psi)
    if inner == 0:
        return 0.0
    return float(-np.angle(inner)) % (2 * np.pi)


def estimate_beta(y, cov: NoiseCovariance, b_matrix, h, a_psi, p_p: float) -> float:
    """Closed-form gain estimate: |y^H F^{-1} B D_h a|^2 / (P_p (a^H ... a)^2)."""
    b = np.atleast_2d(np.asarray(b_matrix))
    bh = b * h[None, :]
    m = bh @ a_psi
    s = cov.solve(m)
    den = float(np.real(m.conj() @ s))
    if den <= 0:
        raise UnobservableDirection("configuration carries no energy along a_psi")
    num = float(np.abs(cov.solve(np.asarray(y)).conj() @ m) ** 2)
    return num / (p_p * den * den)


def _refine_candidates(grid: SearchGrid, incumbent: np.ndarray, half_width: float) -> np.ndarray:
    """Local candidate mesh around the incumbent, incumbent first.

    The mesh lives in spatial-frequency coordinates (and inverse distance for
    near-field grids) and is clipped to physically valid directions and to
    distances at or beyond the grid's lower bound.
    """
    az0, el0 = incumbent[0], incumbent[1]
    u0 = np.sin(az0) * np.cos(el0)
    w0 = np.sin(el0)
    pts = grid.refine_points
    us = u0 + np.linspace(-half_width * grid.u_step, half_width * grid.u_step, pts)
    ws = w0 + np.linspace(-half_width * grid.w_step, half_width * grid.w_step, pts)
    ws = np.clip(ws, -1.0 + 1e-12, 1.0 - 1e-12)
    if grid.regime == "near":
        v0 = 1.0 / incumbent[2]
        vs = v0 + np.linspace(-half_width * grid.inv_r_step, half_width * grid.inv_r_step, pts)
        vs = np.clip(vs, 1e-12, 1.0 / grid.distance_min)
        uu, ww, vv = np.meshgrid(us, ws, vs, indexing="ij")
        uu, ww, vv = uu.ravel(), ww.ravel(), vv.ravel()
    else:
        uu, ww = np.meshgrid(us, ws, indexing="ij")
        uu, ww = uu.ravel(), ww.ravel()
        vv = None
    cos_el = np.sqrt(1.0 - ww * ww)
    uu = np.clip(uu, -cos_el * (1 - 1e-12), cos_el * (1 - 1e-12))
    az = np.arcsin(uu / cos_el)
    el = np.arcsin(ww)
    if vv is None:
        mesh = np.column_stack([az, el])
    else:
        mesh = np.column_stack([az, el, 1.0 / vv])
    return np.vstack([incumbent[None, :], mesh])


_TRIAGE_LEVELS = 3   # refinement levels run on every start before narrowing
_FINALISTS = 3       # starts carried through the remaining levels
_LEVEL_MOVES = 1     # extra same-width re-centerings before the window shrinks
_NOISE_GATE = 4.0    # accepted whitened residual per pilot row
_HYSTERESIS = 0.2    # required relative improvement to displace the warm start


def _refine_level(y, z, cov, bh, grid, incumbents, level):
    """One refinement level for several incumbents at once.

    Each start's mesh is evaluated in a single batched call; ties keep the
    incumbent (listed first in its block).  A start whose argmin lands off
    center gets re-centered and re-evaluated at the same width a bounded
    number of times: without that, one noisy off-by-a-point pick leaves the
    optimum outside every later (shrunken) window and the descent freezes.
    """
    half_width = grid.shrink ** (level - 1)
    incumbents = list(incumbents)
    vals = [np.inf] * len(incumbents)
    pending = list(range(len(incumbents)))
    for sweep in range(_LEVEL_MOVES + 1):
        blocks = [_refine_candidates(grid, incumbents[i], half_width) for i in pending]
        residual, _ = _scores_over(y, z, cov, bh, grid, np.vstack(blocks))
        moved = []
        offset = 0
        for j, i in enumerate(pending):
            segment = residual[offset:offset + len(blocks[j])]
            offset += len(blocks[j])
            pick = int(np.argmin(segment))
            incumbents[i] = blocks[j][pick]
            vals[i] = float(segment[pick])
            if pick != 0 and sweep < _LEVEL_MOVES:
                moved.append(i)
        pending = moved
        if not pending:
            break
    return incumbents, vals


def _seed_array(grid: SearchGrid, direction: DirectionParams) -> np.ndarray:
    if grid.regime == "near":
        distance = direction.distance if direction.distance is not None else grid.distance_min
        return np.array([direction.azimuth, direction.elevation, distance])
    return np.array([direction.azimuth, direction.elevation])


def estimate_psi(y, cov: NoiseCovariance, b_matrix, h, grid: SearchGrid,
                 warm_start: DirectionParams | None = None,
                 extra_seeds=()) -> DirectionParams:
    """Direction estimate: coarse pass over the grid, then fixed-depth local
    refinement with a geometrically shrinking neighborhood.  Ties keep the
    lowest-index (or incumbent) candidate.

    Refinement descends the projection residual from several seeds: the
    coarse residual argmin, the best coarse cells by matched-filter ratio,
    the caller's extra_seeds (an adaptive loop passes the cells of pilot
    beams that observed real energy), and warm_start (the previous round's
    estimate).  Sharp pilot rows make the likelihood peak narrower than a
    coarse cell, so a single seed can miss the true basin, while spots where
    every pilot row is weakly observed can undercut the coarse residual
    ranking with huge-gain fits; the scale-invariant ratio ranking is immune
    to the latter.  After a few triage levels only the best seeds are refined
    to full depth.
    """
    b = np.atleast_2d(np.asarray(b_matrix))
    bh = b * h[None, :]
    y = np.asarray(y)
    z = cov.solve(y)

    def refine_all(seeds):
        vals = [np.inf] * len(seeds)
        level = 0
        for level in range(1, min(_TRIAGE_LEVELS, grid.refine_depth) + 1):
            seeds, vals = _refine_level(y, z, cov, bh, grid, seeds, level)
        keep = np.argsort(vals, kind="stable")[:_FINALISTS]
        seeds = [seeds[int(i)] for i in keep]
        vals = [vals[int(i)] for i in keep]
        for level in range(level + 1, grid.refine_depth + 1):
            seeds, vals = _refine_level(y, z, cov, bh, grid, seeds, level)
        pick = int(np.argmin(vals))
        return seeds[pick], float(vals[pick])

    # a warm start that already explains the data at the noise level cannot be
    # beaten meaningfully; skip the global pass then (an adaptive loop spends
    # most rounds locked onto the user)
    noise_gate = _NOISE_GATE * max(len(y), 2)
    best = None
    if warm_start is not None:
        best, best_val = refine_all([_seed_array(grid, warm_start)])
        if best_val <= noise_gate:
            return _as_direction(grid, best)

    residual, ratio = _scores_over(y, z, cov, bh, grid, grid.candidates,
                                   steer=grid.coarse_steering())
    if not np.any(np.isfinite(residual)):
        raise EstimationFailure("all candidate directions are unobservable")

    seeds = [grid.candidates[int(np.argmin(residual))].astype(float)]
    order = np.argsort(-ratio, kind="stable")
    for idx in order[: grid.coarse_starts]:
        if np.isfinite(ratio[idx]):
            seeds.append(grid.candidates[int(idx)].astype(float))
    for direction in extra_seeds:
        seeds.append(_seed_array(grid, direction))
    unique, seen = [], set()
    for seed in seeds:
        key = tuple(seed)
        if key not in seen:
            seen.add(key)
            unique.append(seed)
    cand, val = refine_all(unique)
    # a fit that reaches the noise level always wins; otherwise the warm start
    # is displaced only by a clear improvement, since under model mismatch
    # several fit minima are near-equivalent and hopping between them every
    # round just adds estimate variance
    if best is None or val <= noise_gate or val < best_val / (1 + _HYSTERESIS):
        best = cand
    return _as_direction(grid, best)


def _as_direction(grid: SearchGrid, point: np.ndarray) -> DirectionParams:
    if grid.regime == "near":
        return DirectionParams(float(point[0]), float(point[1]), float(point[2]))
    return DirectionParams(float(point[0]), float(point[1]))


@dataclass(frozen=True)
class EstimateResult:
    """Joint channel-parameter estimate and its realized channel vector."""

    beta_hat: float
    omega_hat: float
    psi_hat: DirectionParams
    g_hat: np.ndarray                  # size=(N,)
    objective_value: float
    degenerate: bool = False


def estimate_channel(y, cov: NoiseCovariance, b_matrix, h, grid: SearchGrid,
                     p_p: float, warm_start: DirectionParams | None = None,
                     extra_seeds=()) -> EstimateResult:
    """Full estimate: direction search, then closed-form phase and gain, then
    the realized channel sqrt(beta) exp(j omega) a(psi)."""
    psi = estimate_psi(y, cov, b_matrix, h, grid, warm_start=warm_start,
                       extra_seeds=extra_seeds)
    a = steering(grid.geometry, psi)
    b = np.atleast_2d(np.asarray(b_matrix))
    bh = b * h[None, :]
    m = bh @ a
    s = cov.solve(m)
    den = float(np.real(m.conj() @ s))
    inner = complex(cov.solve(np.asarray(y)).conj() @ m)
    degenerate = den <= 0 or inner == 0
    if degenerate:
        omega = 0.0
        beta = 0.0
        obj = 0.0
    else:
        omega = float(-np.angle(inner)) % (2 * np.pi)
        beta = float(np.abs(inner) ** 2) / (p_p * den * den)
        obj = float(np.abs(inner) ** 2 / den)
    g_hat = np.sqrt(beta) * np.exp(1j * omega) * a
    return EstimateResult(
        beta_hat=beta,
        omega_hat=omega,
        psi_hat=psi,
        g_hat=g_hat,
        objective_value=obj,
        degenerate=degenerate,
    )
