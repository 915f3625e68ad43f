"""Experiment harness: synthetic data, learning runs, Monte Carlo study and field export."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .inference import (
    HyperPrior,
    McmcConfig,
    McmcTrace,
    MleResult,
    chain_diagnostics,
    initial_guess,
    mcmc_mean,
    mh_sample,
    mle_optimize,
    write_trace,
)
from .model import Dataset, ExtendedHyperparams, NoiseClass, Observation
from .operators import QuantityKind
from .oracles import LoadKind, PlateGeometry, RitzSolution, navier_field, ritz_field, ritz_solve
from .prediction import FIELD_COLUMNS, PredictiveSummary, Targets, fixed_summary, mc_predictive, write_fields

log = logging.getLogger(__name__)

CASES = {
    "L1": (QuantityKind.W, QuantityKind.Q),
    "L2": (QuantityKind.KAPPA_X, QuantityKind.KAPPA_Y, QuantityKind.KAPPA_XY, QuantityKind.Q),
    "L3": (QuantityKind.W, QuantityKind.KAPPA_X, QuantityKind.KAPPA_Y, QuantityKind.KAPPA_XY, QuantityKind.Q),
}

# counter-based seed streams: SeedSequence(master, spawn_key=(stream, ...))
NOISE_STREAM, MCMC_STREAM, MLE_STREAM = 0, 1, 2


class Support(str, Enum):
    SIMPLY_SUPPORTED = "simply_supported"
    FIXED = "fixed"


class BcMode(str, Enum):
    NONE = "none"
    DISPLACEMENT_ROTATION = "displacement_rotation"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Strict):
    a: float = Field(1.0, gt=0)
    b: float = Field(1.0, gt=0)
    rigidity: float = Field(1.0, gt=0)
    poisson: float = Field(0.3, ge=0, lt=0.5)


class LoadConfig(_Strict):
    kind: LoadKind = LoadKind.SINUSOIDAL
    amplitude: float = 1.0


class GridConfig(_Strict):
    points_per_direction: int = Field(5, ge=2)
    inset: float = Field(0.05, ge=0, lt=0.5)


class PredictionConfig(_Strict):
    points_per_direction: int = Field(21, ge=2)
    quantities: list[str] = ["w", "kappa_x", "M_x"]
    stride: int = Field(10, ge=1)
    source: Literal["mcmc", "mle"] = "mcmc"

    @field_validator("quantities")
    @classmethod
    def _known(cls, v):
        return [QuantityKind.parse(q).value for q in v]


class McmcSettings(_Strict):
    n_samples: int = Field(20_000, ge=1)
    n_burn: int = Field(5_000, ge=0)
    n_adapt: int = Field(2_000, ge=0)
    adapt_batch: int = Field(100, ge=10)
    proposal_sd: float = Field(0.05, gt=0)
    stall_window: int = Field(5_000, ge=1)


class MleSettings(_Strict):
    gtol: float = Field(1e-5, gt=0)
    max_iter: int = Field(500, ge=1)
    n_restarts: int = Field(5, ge=0)
    rigidity_floor_fraction: float = Field(0.2, ge=0)
    restart_scale: float = Field(0.5, gt=0)


class StudyConfig(_Strict):
    replications: int = Field(100, ge=2)
    snrs: list[float] = [5.0, 10.0, 20.0, 100.0]
    cases: list[Literal["L1", "L2", "L3"]] = ["L1", "L2", "L3"]
    mcmc: McmcSettings = McmcSettings(n_samples=1_500, n_burn=250, n_adapt=600, stall_window=1_500)
    workers: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    """Every knob of a run; unknown keys are rejected."""

    geometry: GeometryConfig = GeometryConfig()
    load: LoadConfig = LoadConfig()
    support: Support = Support.SIMPLY_SUPPORTED
    ritz_terms: int = Field(200, ge=1)
    training: GridConfig = GridConfig()
    prediction: PredictionConfig = PredictionConfig()
    snr: float = Field(10.0, gt=0)
    case: Literal["L1", "L2", "L3"] = "L3"
    bc_mode: BcMode = BcMode.NONE
    bc_points_per_edge: int = Field(5, ge=2)
    seed: int = Field(0, ge=0)
    mcmc: McmcSettings = McmcSettings()
    mle: MleSettings = MleSettings()
    study: StudyConfig = StudyConfig()
    prior_bounds: tuple[float, float] = (1e-12, 1e12)
    out: str = "runs/default"

    @model_validator(mode="after")
    def _consistent(self):
        want = LoadKind.SINUSOIDAL if self.support is Support.SIMPLY_SUPPORTED else LoadKind.UNIFORM
        if self.load.kind is not want:
            raise ValueError(f"{self.support.value} plate needs a {want.value} load (the only oracle available)")
        lo, hi = self.prior_bounds
        if not 0 < lo < hi:
            raise ValueError("prior_bounds must satisfy 0 < lower < upper")
        return self

    @property
    def plate(self) -> PlateGeometry:
        g = self.geometry
        return PlateGeometry(g.a, g.b, g.rigidity, g.poisson)

    @property
    def prior(self) -> HyperPrior:
        return HyperPrior(*self.prior_bounds)

    def identity(self) -> dict:
        """Every field that affects results; the output location does not."""
        return self.model_dump(mode="json", exclude={"out"})

    def canonical_json(self) -> str:
        return json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return ExperimentConfig.model_validate(raw)


def seed_sequence(master: int, *key: int) -> np.random.SeedSequence:
    """Independent stream for ``key`` under the master seed (counter-based, order-free)."""
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def training_axis(n: int, span: float, inset: float) -> np.ndarray:
    """Equidistant points with the two outermost moved inward by ``inset * span``."""
    t = np.linspace(0.0, span, n)
    t[0] = inset * span
    t[-1] = (1.0 - inset) * span
    return t


def grid_points(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


class Oracle:
    """Ground truth for the configured plate (Navier or Ritz)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.geometry = cfg.plate
        self._ritz: RitzSolution | None = None
        if cfg.support is Support.FIXED:
            self._ritz = ritz_solve(self.geometry, cfg.load.amplitude, cfg.ritz_terms, cfg.ritz_terms)

    def __call__(self, kind: QuantityKind, points) -> np.ndarray:
        if self._ritz is not None:
            return ritz_field(self._ritz, kind, points)
        return navier_field(self.geometry, self.cfg.load.amplitude, kind, points)


def noise_scale(values: np.ndarray, snr: float) -> float:
    """``sigma_data / SNR`` with the population std over the grid.

    A field that is constant over the grid (uniform load) has no spread, so its
    root-mean-square stands in for ``sigma_data``.
    """
    if math.isinf(snr):
        return 0.0
    sd = float(np.std(values))
    scale = float(np.max(np.abs(values))) if len(values) else 0.0
    if sd <= 1e-12 * scale:
        sd = float(np.sqrt(np.mean(values ** 2)))
    return sd / snr


def generate_training_data(cfg: ExperimentConfig, replication: int = 0, oracle: Oracle | None = None,
                           snr: float | None = None, case: str | None = None) -> Dataset:
    """Noisy oracle values on the inset training grid for the learning case.

    Noise for quantity ``k`` in replication ``r`` is drawn from the stream
    ``(NOISE_STREAM, r, k.order)`` as standard normals and scaled by the SNR,
    so every SNR and every case of one replication share the same draws.
    """
    oracle = oracle or Oracle(cfg)
    snr = cfg.snr if snr is None else snr
    kinds = CASES[case or cfg.case]
    g = cfg.geometry
    n, inset = cfg.training.points_per_direction, cfg.training.inset
    pts = grid_points(training_axis(n, g.a, inset), training_axis(n, g.b, inset))
    obs = []
    for kind in kinds:
        truth = oracle(kind, pts)
        rng = np.random.default_rng(seed_sequence(cfg.seed, NOISE_STREAM, replication, kind.order))
        values = truth + noise_scale(truth, snr) * rng.standard_normal(len(truth))
        obs += [Observation(float(p[0]), float(p[1]), kind, float(v)) for p, v in zip(pts, values)]
    data = Dataset(obs, (g.a, g.b))
    if cfg.bc_mode is not BcMode.NONE:
        data = inject_boundary_conditions(data, cfg.plate, cfg.support, cfg.bc_points_per_edge)
    return data


def inject_boundary_conditions(data: Dataset, geom: PlateGeometry, support: Support | str,
                               points_per_edge: int = 5, mode: BcMode | str = BcMode.DISPLACEMENT_ROTATION) -> Dataset:
    """Append noiseless zero observations on the edges.

    ``w = 0`` everywhere on the boundary; on a fixed plate also the normal
    rotation (``r_x`` on ``x = 0, a``; ``r_y`` on ``y = 0, b``).  Points are
    spaced uniformly including the corners and deduplicated per quantity.
    """
    if BcMode(mode) is BcMode.NONE:
        return data
    support = Support(support)
    sx = np.linspace(0.0, geom.a, points_per_edge)
    sy = np.linspace(0.0, geom.b, points_per_edge)
    w_pts, rx_pts, ry_pts = set(), set(), set()
    for x in (0.0, geom.a):
        for y in sy:
            w_pts.add((x, y))
            rx_pts.add((x, y))
    for y in (0.0, geom.b):
        for x in sx:
            w_pts.add((x, y))
            ry_pts.add((x, y))
    new = [Observation(x, y, QuantityKind.W, 0.0, NoiseClass.NOISELESS_BC) for x, y in sorted(w_pts)]
    if support is Support.FIXED:
        new += [Observation(x, y, QuantityKind.R_X, 0.0, NoiseClass.NOISELESS_BC) for x, y in sorted(rx_pts)]
        new += [Observation(x, y, QuantityKind.R_Y, 0.0, NoiseClass.NOISELESS_BC) for x, y in sorted(ry_pts)]
    return data.extend(new)


def write_dataset(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "quantity", "value", "noise_class"])
        for o in data.observations:
            w.writerow([f"{o.x:.17g}", f"{o.y:.17g}", str(o.kind), f"{o.value:.17g}", str(o.noise_class)])


def read_dataset(path, domain=None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    obs = [Observation(float(r["x"]), float(r["y"]), QuantityKind.parse(r["quantity"]), float(r["value"]),
                       NoiseClass(r["noise_class"])) for r in rows]
    return Dataset(obs, domain)


def _mcmc_config(s: McmcSettings, initial: ExtendedHyperparams, seed) -> McmcConfig:
    return McmcConfig(n_samples=s.n_samples, n_burn=s.n_burn, proposal_sd=(s.proposal_sd,), initial=initial,
                      seed=seed, n_adapt=s.n_adapt, adapt_batch=s.adapt_batch, stall_window=s.stall_window)


def _mle(cfg: ExperimentConfig, data: Dataset, initial: ExtendedHyperparams, seed) -> MleResult:
    m = cfg.mle
    return mle_optimize(data, initial, cfg.geometry.poisson, gtol=m.gtol, max_iter=m.max_iter,
                        n_restarts=m.n_restarts, rigidity_floor=m.rigidity_floor_fraction * cfg.geometry.rigidity,
                        restart_scale=m.restart_scale, seed=seed, prior=cfg.prior)


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    config: dict
    n_observations: int
    initial: dict
    mle: dict
    mcmc: dict
    d_true: float
    d_mle_error: float
    d_mcmc_error: float
    jitter: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class LearningOutcome:
    record: RunRecord
    data: Dataset
    mle: MleResult
    trace: McmcTrace


def run_learning_case(cfg: ExperimentConfig, data: Dataset | None = None) -> LearningOutcome:
    """MLE and MCMC on the same dataset from the same initial hyperparameters."""
    data = data if data is not None else generate_training_data(cfg)
    nu = cfg.geometry.poisson
    initial = initial_guess(data, nu)
    case_idx = list(CASES).index(cfg.case)
    mle = _mle(cfg, data, initial, seed_sequence(cfg.seed, MLE_STREAM, case_idx, 0))
    trace = mh_sample(data, _mcmc_config(cfg.mcmc, initial, seed_sequence(cfg.seed, MCMC_STREAM, case_idx, 0)),
                      nu, cfg.prior)
    diag = chain_diagnostics(trace)
    mean = mcmc_mean(trace)
    d_true = cfg.geometry.rigidity
    record = RunRecord(
        config_hash=cfg.digest(),
        seed=cfg.seed,
        config=cfg.identity(),
        n_observations=len(data),
        initial=initial.natural(),
        mle={
            "params": mle.params.natural(),
            "log_likelihood": mle.log_likelihood,
            "iterations": mle.iterations,
            "converged": mle.converged,
            "identifiable": mle.identifiable,
            "at_bounds": list(mle.at_bounds),
            "gradient_norm": mle.gradient_norm,
            "restarts": mle.restarts,
            "flagged_restarts": mle.flagged_restarts,
            "jitter": mle.jitter,
        },
        mcmc={
            "mean": mean.natural(),
            "std": diag.stds,
            "acceptance_rate": diag.acceptance_rate,
            "n_samples": len(trace),
            "proposal_sd": trace.proposal_sd.tolist(),
            "correlations": {"names": trace.names, "matrix": diag.correlations.tolist()},
            "degenerate": list(diag.degenerate),
            "max_jitter": trace.max_jitter,
        },
        d_true=d_true,
        d_mle_error=mle.params.rigidity / d_true - 1.0,
        d_mcmc_error=mean.rigidity / d_true - 1.0,
        jitter=max(mle.jitter, trace.max_jitter),
    )
    return LearningOutcome(record, data, mle, trace)


def _oracle_summary(points, kind, values) -> PredictiveSummary:
    n = len(values)
    return PredictiveSummary(points, (kind,) * n, values, np.zeros(n), values.copy(), values.copy())


def _scaled(s: PredictiveSummary, c: float) -> PredictiveSummary:
    return PredictiveSummary(s.points, s.kinds, s.mean / c, s.variance / c ** 2, s.lower / c, s.upper / c)


def _rows(s: PredictiveSummary, mask) -> PredictiveSummary:
    return PredictiveSummary(s.points[mask], tuple(k for k, m in zip(s.kinds, mask) if m), s.mean[mask],
                             s.variance[mask], s.lower[mask], s.upper[mask])


def prediction_points(cfg: ExperimentConfig) -> np.ndarray:
    n = cfg.prediction.points_per_direction
    return grid_points(np.linspace(0, cfg.geometry.a, n), np.linspace(0, cfg.geometry.b, n))


def predict_fields(cfg: ExperimentConfig, outcome: LearningOutcome, out_dir, oracle: Oracle | None = None
                   ) -> dict[QuantityKind, tuple[PredictiveSummary, np.ndarray]]:
    """Predict every requested quantity on the grid and write the field files.

    Per quantity: the field, the oracle in the same schema, both normalized by
    ``max |oracle|``, and centerline (``y = b/2``) and edge (``y = 0``)
    extracts of the prediction and of the oracle.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    oracle = oracle or Oracle(cfg)
    pts = prediction_points(cfg)
    kinds = [QuantityKind.parse(q) for q in cfg.prediction.quantities]
    targets = Targets.grid(pts, kinds)
    nu = cfg.geometry.poisson
    if cfg.prediction.source == "mcmc":
        summary = mc_predictive(outcome.data, outcome.trace, nu, targets, stride=cfg.prediction.stride)
    else:
        summary = fixed_summary(outcome.data, outcome.mle.params, nu, targets)
    b = cfg.geometry.b
    n = cfg.prediction.points_per_direction
    center = np.isclose(pts[:, 1], b / 2) if n % 2 else None
    edge = pts[:, 1] == 0.0
    results = {}
    for kind in kinds:
        pred = summary.select(kind)
        truth = oracle(kind, pred.points)
        orc = _oracle_summary(pred.points, kind, truth)
        scale = float(np.max(np.abs(truth)))
        scale = scale if scale > 0 else 1.0
        name = kind.value
        write_fields(out / f"{name}.csv", pred)
        write_fields(out / f"{name}_oracle.csv", orc)
        write_fields(out / f"{name}_normalized.csv", _scaled(pred, scale))
        write_fields(out / f"{name}_oracle_normalized.csv", _scaled(orc, scale))
        if center is not None:
            write_fields(out / f"{name}_centerline.csv", _rows(pred, center))
            write_fields(out / f"{name}_oracle_centerline.csv", _rows(orc, center))
        write_fields(out / f"{name}_edge.csv", _rows(pred, edge))
        write_fields(out / f"{name}_oracle_edge.csv", _rows(orc, edge))
        results[kind] = (pred, truth)
    return results


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Enum):
        return o.value
    raise TypeError(f"not serializable: {type(o)}")


def write_histograms(path, trace: McmcTrace, bins: int = 30) -> None:
    diag = chain_diagnostics(trace, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "bin_lower", "bin_upper", "count"])
        for name, (counts, edges) in diag.histograms.items():
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([name, f"{lo:.17g}", f"{hi:.17g}", int(c)])


def write_correlations(path, trace: McmcTrace) -> None:
    diag = chain_diagnostics(trace)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", *trace.names])
        for name, row in zip(trace.names, diag.correlations):
            w.writerow([name, *(f"{v:.17g}" for v in row)])


def export_learning(outcome: LearningOutcome, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "training_data.csv", outcome.data)
    write_trace(outcome.trace, out / "trace.csv", start_iteration=0)
    write_histograms(out / "histograms.csv", outcome.trace)
    write_correlations(out / "correlations.csv", outcome.trace)
    write_json(out / "run_summary.json", outcome.record.to_dict())


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[LearningOutcome, dict]:
    """Generate, learn and predict; all exports except ``timing.json`` are deterministic."""
    out = Path(out_dir or cfg.out)
    t0 = time.perf_counter()
    oracle = Oracle(cfg)
    data = generate_training_data(cfg, oracle=oracle)
    outcome = run_learning_case(cfg, data)
    t1 = time.perf_counter()
    export_learning(outcome, out)
    fields = predict_fields(cfg, outcome, out / "fields", oracle)
    t2 = time.perf_counter()
    write_json(out / "timing.json", {"learn_seconds": t1 - t0, "predict_seconds": t2 - t1})
    return outcome, fields


# --- Monte Carlo replication study -------------------------------------------------

STUDY_COLUMNS = ("snr", "case", "estimator", "n_used", "n_excluded", "mean", "q25", "q75", "iqr", "min", "max")


def _study_replication(args):
    cfg, snr_idx, case, rep = args
    snr = cfg.study.snrs[snr_idx]
    nu = cfg.geometry.poisson
    data = generate_training_data(cfg, rep, snr=snr, case=case)
    initial = initial_guess(data, nu)
    case_idx = list(CASES).index(case)
    mle = _mle(cfg, data, initial, seed_sequence(cfg.seed, MLE_STREAM, case_idx, rep, snr_idx))
    mcfg = _mcmc_config(cfg.study.mcmc, initial, seed_sequence(cfg.seed, MCMC_STREAM, case_idx, rep, snr_idx))
    try:
        trace = mh_sample(data, mcfg, nu, cfg.prior)
        d_mcmc = float(trace.column("D").mean())
    except Exception as exc:  # recorded, not fatal for the study
        log.warning("replication %d (%s, SNR %g) MCMC failed: %s", rep, case, snr, exc)
        d_mcmc = math.nan
    return {
        "snr": snr, "case": case, "replication": rep,
        "d_mle": mle.params.rigidity, "mle_converged": mle.converged, "mle_collapsed": mle.collapsed,
        "d_mcmc": d_mcmc,
    }


def study_statistics(rows: list[dict], floor: float) -> list[dict]:
    """Per (SNR, case, estimator) summary; MLE runs with ``D < floor`` are excluded and counted."""
    stats = []
    keys = sorted({(r["snr"], r["case"]) for r in rows}, key=lambda k: (k[0], k[1]))
    for snr, case in keys:
        sel = [r for r in rows if r["snr"] == snr and r["case"] == case]
        for est in ("mle", "mcmc"):
            vals = np.array([r[f"d_{est}"] for r in sel], dtype=float)
            keep = np.isfinite(vals)
            if est == "mle":
                keep &= vals >= floor
            used = vals[keep]
            if len(used):
                q25, q75 = np.quantile(used, [0.25, 0.75])
                row = (float(np.mean(used)), float(q25), float(q75), float(q75 - q25), float(used.min()), float(used.max()))
            else:
                row = (math.nan,) * 6
            stats.append(dict(zip(STUDY_COLUMNS, (snr, case, est, int(keep.sum()), int((~keep).sum()), *row))))
    return stats


def monte_carlo_study(cfg: ExperimentConfig, out_dir=None, progress=None) -> list[dict]:
    """Re-sample the noise ``replications`` times per (SNR, case) and summarize D.

    Replication ``r`` of case ``c`` at SNR index ``s`` draws its noise from
    ``(NOISE_STREAM, r, quantity)``, its MLE restarts from
    ``(MLE_STREAM, c, r, s)`` and its chain from ``(MCMC_STREAM, c, r, s)``.
    """
    st = cfg.study
    jobs = [(cfg, si, case, rep) for si in range(len(st.snrs)) for case in st.cases for rep in range(st.replications)]
    if st.workers > 1:
        with ProcessPoolExecutor(st.workers) as pool:
            rows = list(pool.map(_study_replication, jobs, chunksize=4))
    else:
        rows = []
        for i, job in enumerate(jobs):
            rows.append(_study_replication(job))
            if progress:
                progress(i + 1, len(jobs))
    stats = study_statistics(rows, cfg.mle.rigidity_floor_fraction * cfg.geometry.rigidity)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_table(out / "replications.csv", rows, ("snr", "case", "replication", "d_mle", "mle_converged",
                                                      "mle_collapsed", "d_mcmc"))
        _write_table(out / "study_statistics.csv", stats, STUDY_COLUMNS)
        write_json(out / "run_summary.json", {"config_hash": cfg.digest(), "seed": cfg.seed,
                                              "config": cfg.identity(), "statistics": stats})
    return stats


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_table(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
