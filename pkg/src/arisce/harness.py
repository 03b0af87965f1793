"""Monte Carlo experiment driver: configuration, trial execution, aggregation,
and CSV/JSON result emission."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .beamcontrol import build_codebook
from .channel import NoiseModel, make_bs_ris_channel, make_channel, sample_user
from .estimator import SearchGrid
from .geometry import ArrayGeometry, DirectionParams
from .metrics import TrialRecord, capacity_bound, nmse_cascaded
from .protocol import RisMode, Scenario, run_adaptive_estimation, run_passive_baseline

BOLTZMANN_X_T290 = 1.380649e-23 * 290.0  # thermal noise density at 290 K, W/Hz

REGIMES = ("near", "far")
MODES = ("active", "passive")
MODELS = ("near-field", "far-field")


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.field = fieldname
        self.message = message


@dataclass(frozen=True)
class ExperimentConfig:
    """All constants of one experiment.  Defaults follow the reference setup:
    28 GHz carrier, 1 MHz bandwidth, 32x32 half-wavelength surface 15 m from
    the BS, 200 mW total power with a quarter to the surface amplifiers,
    pilots 10 dB above data power, 1000 trials."""

    carrier_freq_hz: float = 28e9
    bandwidth_hz: float = 1e6
    n_h: int = 32
    n_v: int = 32
    spacing_wavelengths: float = 0.5
    bs_distance_m: float = 15.0
    total_power_w: float = 0.2
    ris_power_fraction: float = 0.25
    pilot_over_data_db: float = 10.0
    noise_figure_db: float = 10.0
    bs_antenna_gain_db: float = 0.0
    ue_antenna_gain_db: float = 0.0
    regimes: tuple = REGIMES
    modes: tuple = MODES
    models: tuple = MODELS
    pilot_budgets: tuple = tuple(range(2, 11))
    trials: int = 1000
    base_seed: int = 20250809
    near_distance_rings: int = 4
    refine_depth: int = 4
    refine_shrink: float = 0.25
    refine_points: int = 5
    workers: int = 1
    nmse_on_cascaded: bool = False
    coherence_symbols: int | None = None
    output_dir: str = "results"
    output_format: str = "csv"

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if not 0 < self.ris_power_fraction < 1:
            raise ConfigError("ris_power_fraction", "must lie in (0, 1)")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if len(self.pilot_budgets) == 0 or any(l < 2 for l in self.pilot_budgets):
            raise ConfigError("pilot_budgets", "all pilot budgets must be >= 2")
        if self.carrier_freq_hz <= 0:
            raise ConfigError("carrier_freq_hz", "must be positive")
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth_hz", "must be positive")
        if self.total_power_w <= 0:
            raise ConfigError("total_power_w", "must be positive")
        if self.bs_distance_m <= 0:
            raise ConfigError("bs_distance_m", "must be positive")
        if self.n_h < 2 or self.n_h % 2 or self.n_v < 1:
            raise ConfigError("n_h", "needs n_h even and >= 2, n_v >= 1")
        for name, values, allowed in (
            ("regimes", self.regimes, REGIMES),
            ("modes", self.modes, MODES),
            ("models", self.models, MODELS),
        ):
            if len(values) == 0 or any(v not in allowed for v in values):
                raise ConfigError(name, f"entries must be among {allowed}")
        if self.output_format not in ("csv", "json"):
            raise ConfigError("output_format", "must be 'csv' or 'json'")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        data = dict(data)
        for key in ("regimes", "modes", "models", "pilot_budgets"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("regimes", "modes", "models", "pilot_budgets"):
            out[key] = list(out[key])
        return out

    @classmethod
    def desk_profile(cls, **overrides) -> "ExperimentConfig":
        """Desk-scale profile: 16x16 surface, 200 trials, and link constants
        calibrated for functional pilot SNR (the reference setup leaves
        path-loss, antenna-gain, and noise-figure constants open)."""
        base = dict(
            n_h=16,
            n_v=16,
            bandwidth_hz=1e3,
            noise_figure_db=0.0,
            bs_antenna_gain_db=30.0,
            trials=200,
            refine_depth=12,
        )
        base.update(overrides)
        return cls(**base)

    # derived quantities -----------------------------------------------------

    def geometry(self) -> ArrayGeometry:
        lam = 299_792_458.0 / self.carrier_freq_hz
        d = self.spacing_wavelengths * lam
        return ArrayGeometry(n_h=self.n_h, n_v=self.n_v, delta_h=d, delta_v=d,
                             wavelength=lam)

    def noise_power_w(self) -> float:
        return BOLTZMANN_X_T290 * self.bandwidth_hz * 10 ** (self.noise_figure_db / 10)

    def noise_model(self, mode: str) -> NoiseModel:
        sigma2 = self.noise_power_w()
        sigma_v2 = sigma2 if mode == "active" else 0.0
        return NoiseModel(sigma2=sigma2, sigma_v2=sigma_v2)

    def ris_mode(self, mode: str) -> RisMode:
        """Power split: active mode reserves the surface fraction and caps the
        per-symbol BS transmit power at the remaining share, with data power
        the pilot power minus the configured offset; passive mode gives the BS
        the whole budget."""
        offset = 10 ** (self.pilot_over_data_db / 10)
        if mode == "active":
            p_ris = self.ris_power_fraction * self.total_power_w
            p_pilot = self.total_power_w - p_ris
        else:
            p_ris = 0.0
            p_pilot = self.total_power_w
        return RisMode(mode=mode, p_ris=p_ris, p_pilot=p_pilot, p_data=p_pilot / offset)


@dataclass(frozen=True)
class AggregateRow:
    regime: str
    mode: str
    model: str
    pilots: int
    trials: int
    mean_nmse: float
    mean_rate_bps_hz: float
    mean_capacity_bps_hz: float


@dataclass(frozen=True)
class MismatchRow:
    regime: str
    mode: str
    pilots: int
    rate_gap_bps_hz: float      # near-field-model rate minus far-field-model rate


@dataclass
class ResultTable:
    config: ExperimentConfig
    records: list                # TrialRecord rows, sorted
    aggregates: list = field(default_factory=list)
    partial: bool = False

    def sort(self):
        self.records.sort(key=lambda r: (r.regime, r.mode, r.model, r.trial, r.pilots))


class ExperimentInterrupted(RuntimeError):
    """Raised on interrupt; carries whatever results completed."""

    def __init__(self, partial: ResultTable):
        super().__init__("experiment interrupted; partial results attached")
        self.partial = partial


def derive_seed(base_seed: int, trial: int, regime: str, mode: str, model: str) -> int:
    """Stable per-trial seed: base_seed xor a hash of the cell coordinates."""
    digest = hashlib.sha256(f"{trial}|{regime}|{mode}|{model}".encode()).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "big")) & (2**63 - 1)


def derive_user_seed(base_seed: int, trial: int, regime: str) -> int:
    """Seed for the user draw only: shared across modes and models so the
    same trial faces the same channel in every cell (paired comparisons)."""
    digest = hashlib.sha256(f"user|{trial}|{regime}".encode()).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "big")) & (2**63 - 1)


def _run_cell(config: ExperimentConfig, regime: str, mode: str, model: str) -> list:
    """All trials of one (regime, mode, model) cell."""
    geom = config.geometry()
    bs = make_bs_ris_channel(geom, config.bs_distance_m, DirectionParams(0.0, 0.0),
                             gain_db=config.bs_antenna_gain_db)
    codebook_model = "near" if model == "near-field" else "far"
    codebook = build_codebook(geom, codebook_model,
                              near_distance_rings=config.near_distance_rings)
    grid = SearchGrid.from_codebook(codebook, refine_depth=config.refine_depth,
                                    shrink=config.refine_shrink,
                                    refine_points=config.refine_points)
    ris_mode = config.ris_mode(mode)
    noise = config.noise_model(mode)
    budgets = sorted(config.pilot_budgets)
    budget = max(budgets)
    runner = run_adaptive_estimation if mode == "active" else run_passive_baseline

    records = []
    for trial in range(config.trials):
        seed = derive_seed(config.base_seed, trial, regime, mode, model)
        rng = np.random.default_rng(seed)
        user_rng = np.random.default_rng(derive_user_seed(config.base_seed, trial, regime))
        user = sample_user(geom, regime, user_rng, gain_db=config.ue_antenna_gain_db)
        g = make_channel(geom, user).g
        scenario = Scenario(user=user, g=g, bs=bs, noise=noise, mode=ris_mode)
        _, history = runner(scenario, geom, grid, codebook.fresh(), budget, rng)
        capacity = capacity_bound(ris_mode, bs.h, g, noise)
        overhead = _overhead_factor(config)
        for round_rec in history:
            if round_rec.pilots_used not in budgets:
                continue
            value_nmse = round_rec.nmse
            if config.nmse_on_cascaded:
                value_nmse = nmse_cascaded(round_rec.estimate.g_hat, g, bs.h)
            factor = overhead(round_rec.pilots_used)
            records.append(TrialRecord(
                trial=trial, regime=regime, mode=mode, model=model, seed=seed,
                pilots=round_rec.pilots_used, nmse=value_nmse,
                rate_bps_hz=round_rec.rate_bps_hz * factor,
                capacity_bps_hz=capacity * factor,
            ))
    return records


def _overhead_factor(config: ExperimentConfig):
    if config.coherence_symbols is None:
        return lambda pilots: 1.0
    t_coh = config.coherence_symbols
    return lambda pilots: max(0.0, 1.0 - pilots / t_coh)


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run every configured (regime, mode, model) cell; deterministic under
    (base seed, config) regardless of worker count.  On interrupt raises
    ExperimentInterrupted with the completed cells attached."""
    cells = [(regime, mode, model)
             for regime in config.regimes
             for mode in config.modes
             for model in config.models]
    table = ResultTable(config=config, records=[])
    try:
        if config.workers == 1 or len(cells) == 1:
            for cell in cells:
                table.records.extend(_run_cell(config, *cell))
        else:
            with ProcessPoolExecutor(max_workers=min(config.workers, len(cells))) as pool:
                futures = [pool.submit(_run_cell, config, *cell) for cell in cells]
                for fut in futures:          # in submission order: deterministic
                    table.records.extend(fut.result())
    except KeyboardInterrupt:
        table.sort()
        table.aggregates = aggregate(table.records)
        table.partial = True
        raise ExperimentInterrupted(table) from None
    table.sort()
    table.aggregates = aggregate(table.records)
    return table


def aggregate(records: list) -> list:
    """Arithmetic means per (regime, mode, model, pilots), in sorted cell order."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.regime, rec.mode, rec.model, rec.pilots), []).append(rec)
    rows = []
    for key in sorted(groups):
        cell = groups[key]
        rows.append(AggregateRow(
            regime=key[0], mode=key[1], model=key[2], pilots=key[3],
            trials=len(cell),
            mean_nmse=float(np.mean([r.nmse for r in cell])),
            mean_rate_bps_hz=float(np.mean([r.rate_bps_hz for r in cell])),
            mean_capacity_bps_hz=float(np.mean([r.capacity_bps_hz for r in cell])),
        ))
    return rows


def model_mismatch_report(table: ResultTable) -> list:
    """Rate gap between the exact near-field model and the far-field
    approximation, per (regime, mode, pilots)."""
    by_key = {(a.regime, a.mode, a.model, a.pilots): a for a in table.aggregates}
    keys = sorted({(a.regime, a.mode, a.pilots) for a in table.aggregates})
    rows = []
    for regime, mode, pilots in keys:
        near = by_key.get((regime, mode, "near-field", pilots))
        far = by_key.get((regime, mode, "far-field", pilots))
        if near is None or far is None:
            raise ValueError(f"missing model branch for cell {(regime, mode, pilots)}")
        rows.append(MismatchRow(
            regime=regime, mode=mode, pilots=pilots,
            rate_gap_bps_hz=near.mean_rate_bps_hz - far.mean_rate_bps_hz,
        ))
    return rows


# result emission -------------------------------------------------------------

TRIAL_COLUMNS = ("regime", "mode", "model", "trial", "seed", "pilots",
                 "nmse", "rate_bps_hz", "capacity_bps_hz")
AGGREGATE_COLUMNS = ("regime", "mode", "model", "pilots", "trials",
                     "mean_nmse", "mean_rate_bps_hz", "mean_capacity_bps_hz")
MISMATCH_COLUMNS = ("regime", "mode", "pilots", "rate_gap_bps_hz")


def _cell_text(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell_text(getattr(row, c)) for c in columns])


def _write_json(path: str, columns, rows, config: ExperimentConfig):
    payload = {
        "config": config.to_dict(),
        "rows": [{c: getattr(row, c) for c in columns} for row in rows],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def emit_results(table: ResultTable, path: str, fmt: str = "csv") -> list:
    """Write the per-trial file and the aggregate file (plus the model-mismatch
    file when both models are present).  Returns the written paths."""
    if not table.records:
        raise ValueError("refusing to emit an empty result table")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    os.makedirs(path, exist_ok=True)
    models_present = {r.model for r in table.records}
    outputs = [
        (os.path.join(path, f"trials.{fmt}"), TRIAL_COLUMNS, table.records),
        (os.path.join(path, f"aggregate.{fmt}"), AGGREGATE_COLUMNS, table.aggregates),
    ]
    if models_present >= {"near-field", "far-field"}:
        outputs.append((os.path.join(path, f"mismatch.{fmt}"), MISMATCH_COLUMNS,
                        model_mismatch_report(table)))
    written = []
    for file_path, columns, rows in outputs:
        if fmt == "csv":
            _write_csv(file_path, columns, rows)
        else:
            _write_json(file_path, columns, rows, table.config)
        written.append(file_path)
    return written


def parse_results(path: str, fmt: str = "csv") -> list:
    """Read back a per-trial file into TrialRecord rows."""
    file_path = os.path.join(path, f"trials.{fmt}")
    rows = []
    if fmt == "csv":
        with open(file_path, encoding="utf-8", newline="") as fh:
            for raw in csv.DictReader(fh):
                rows.append(_record_from(raw))
    else:
        with open(file_path, encoding="utf-8") as fh:
            payload = json.load(fh)
        for raw in payload["rows"]:
            rows.append(_record_from(raw))
    return rows


def _record_from(raw: dict) -> TrialRecord:
    return TrialRecord(
        trial=int(raw["trial"]), regime=raw["regime"], mode=raw["mode"],
        model=raw["model"], seed=int(raw["seed"]), pilots=int(raw["pilots"]),
        nmse=float(raw["nmse"]), rate_bps_hz=float(raw["rate_bps_hz"]),
        capacity_bps_hz=float(raw["capacity_bps_hz"]),
    )
