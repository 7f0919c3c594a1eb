"""Trial synthesis, processing modes and Monte-Carlo orchestration."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .airframe import (PilotBook, ReceivedFrame, calibrate_noise, generate_pilots,
                       pilot_phase_duration, synthesize_received)
from .channel import (AccessChannelSet, ActivityPattern, assemble_access_channels, draw_activity,
                      draw_multipath_set, large_scale_gains)
from .config import AXIS_ALIASES, SCHEMA_VERSION, SWEEPABLE, ScenarioConfig, to_text
from .detector import (DetectionResult, aggregate_network_verdict, run_cellular_baseline,
                       run_sic_detector)
from .errors import ConfigError
from .metrics import (METRIC_DEFINITIONS, SweepPoint, TrialMetrics, activity_error_rate,
                      channel_nmse, monte_carlo_aggregate, region_breakdown)
from .topology import (NetworkTopology, build_cooperation_sets, build_hex_deployment,
                       build_topology, center_mask, write_topology_csv)

log = logging.getLogger(__name__)

TRIAL_COLUMNS = ("trial", "mode", "n_co", "t_p", "snr_db", "aer", "aer_center", "aer_edge",
                 "nmse_db", "missed", "false_alarms", "rounds", "pilot_duration_s", "seed")
DIAG_COLUMNS = ("trial", "anchor", "round", "cancelled", "residual_energy")
SUMMARY_METRICS = ("aer", "aer_center", "aer_edge", "nmse_db", "missed", "false_alarms",
                   "rounds")
# keys a variant may change without re-synthesizing the trial
PROCESSING_KEYS = {"mode", "n_co", "algorithm", "activity_threshold", "reliability_threshold",
                   "max_sic_rounds", "inner_iterations", "damping", "angular_keep_ratio",
                   "enable_angular_refine", "enable_sic", "tolerance", "somp_plateau"}
FAILURE_LIMIT = 0.10


def trial_seed(master_seed: int, trial: int) -> int:
    """64-bit seed of one trial, hashed from ``(master_seed, trial)``."""
    state = np.random.SeedSequence(master_seed, spawn_key=(trial,)).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class TrialData:
    seed: int
    topology: NetworkTopology
    activity: ActivityPattern
    gains: np.ndarray
    channels: AccessChannelSet
    pilots: PilotBook
    frame: ReceivedFrame
    noise_var: float
    center: np.ndarray


def synthesize_trial(cfg: ScenarioConfig, seed: int) -> TrialData:
    """Draw one network realization and its pilot-phase observations.

    Each stage draws from its own child stream, so changing e.g. ``t_p``
    leaves device positions, activity and channels untouched.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
    rng_dev, rng_act, rng_mp, rng_pil, rng_noise = streams
    haps = build_hex_deployment(cfg.n_haps, cfg.spacing_m, cfg.altitude_m, cfg.n_antennas,
                                cfg.edge_anchors)
    topo = build_topology(haps, cfg.footprint_radius_m, cfg.n_devices, rng_dev)
    activity = draw_activity(cfg.n_devices, cfg.n_active, rng_act)
    frame_cfg = cfg.frame()
    gains = large_scale_gains(topo, cfg.carrier_freq_hz)
    mp = draw_multipath_set(topo, cfg.n_paths, cfg.kappa, frame_cfg.max_excess_delay_s, rng_mp)
    channels = assemble_access_channels(activity, gains, mp, frame_cfg.pilot_subcarrier_freqs(),
                                        cfg.n_antennas)
    pilots = generate_pilots(cfg.n_devices, cfg.t_p, cfg.p_pilot, rng_pil, cfg.shared_pilots)
    noise_var = calibrate_noise(cfg.snr_db, gains, cfg.n_antennas)
    frame = synthesize_received(pilots, channels, coop_sets_for(cfg, topo), noise_var, rng_noise)
    return TrialData(seed, topo, activity, gains, channels, pilots, frame, noise_var,
                     center_mask(topo, cfg.center_fraction))


def coop_sets_for(cfg: ScenarioConfig, topo: NetworkTopology):
    if cfg.mode == "cloud":
        return build_cooperation_sets(topo.haps, topo.n_haps, anchors=topo.anchor_ids[:1])
    if cfg.mode == "cellular":
        return build_cooperation_sets(topo.haps, 1, anchors=range(topo.n_haps))
    return build_cooperation_sets(topo.haps, cfg.n_co)


def detect(data: TrialData, cfg: ScenarioConfig) -> DetectionResult:
    """Run the configured processing mode on a synthesized trial."""
    frame = replace(data.frame, coop_sets=tuple(coop_sets_for(cfg, data.topology)))
    det = cfg.detector()
    active = data.activity.active_set if det.algorithm == "oracle-ls" else None
    if cfg.mode == "cellular":
        results = run_cellular_baseline(frame, data.pilots, det, data.topology, active)
    else:
        results = run_sic_detector(frame, data.pilots, det, active)
    return aggregate_network_verdict(results, data.topology)


def evaluate(data: TrialData, cfg: ScenarioConfig, result: DetectionResult) -> TrialMetrics:
    aer, missed, fa = activity_error_rate(data.activity, result.verdict)
    aer_c, aer_e = region_breakdown(data.activity, result.verdict, data.center)
    nmse = channel_nmse(data.channels.h, result.estimates, data.activity)
    return TrialMetrics(aer, aer_c, aer_e, nmse, missed, fa, pilot_phase_duration(cfg.frame()),
                        result.rounds)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    cfg: ScenarioConfig
    metrics: TrialMetrics | None
    diagnostics: list
    error: str | None = None

    def row(self) -> dict:
        m = self.metrics
        return {"trial": self.trial, "mode": self.cfg.mode, "n_co": self.cfg.effective_n_co,
                "t_p": self.cfg.t_p, "snr_db": self.cfg.snr_db, "aer": m.aer,
                "aer_center": m.aer_center, "aer_edge": m.aer_edge, "nmse_db": m.nmse_db,
                "missed": m.missed, "false_alarms": m.false_alarms,
                "rounds": m.detector_rounds, "pilot_duration_s": m.pilot_duration_s,
                "seed": self.seed}


def run_trial(cfg: ScenarioConfig, trial: int,
              variants: Sequence[dict] | None = None) -> list[TrialRecord]:
    """One trial, processed once per variant (default: the config itself).

    Variants override processing keys only, so they all see the same
    synthesized observations.
    """
    seed = trial_seed(cfg.master_seed, trial)
    variants = [{}] if variants is None else list(variants)
    for v in variants:
        extra = set(v) - PROCESSING_KEYS
        if extra:
            raise ConfigError(f"variant keys {sorted(extra)} would change the synthesized trial")
    try:
        data = synthesize_trial(cfg, seed)
    except Exception as exc:  # noqa: BLE001 - logged and counted against the run
        log.error("trial %d (seed %d) failed during synthesis: %s", trial, seed, exc)
        return [TrialRecord(trial, seed, cfg.with_(**v), None, [], repr(exc)) for v in variants]
    out = []
    for v in variants:
        vcfg = cfg.with_(**v)
        try:
            result = detect(data, vcfg)
            metrics = evaluate(data, vcfg, result)
            out.append(TrialRecord(trial, seed, vcfg, metrics, result.diagnostics()))
        except Exception as exc:  # noqa: BLE001
            log.error("trial %d (seed %d, mode %s) failed: %s", trial, seed, vcfg.mode, exc)
            out.append(TrialRecord(trial, seed, vcfg, None, [], repr(exc)))
    return out


def _run_trial_star(args):
    return run_trial(*args)


def run_trials(cfg: ScenarioConfig, variants: Sequence[dict] | None = None,
               trials: Sequence[int] | None = None, workers: int | None = None
               ) -> list[list[TrialRecord]]:
    """Records indexed ``[trial][variant]``, always in trial order."""
    trials = range(cfg.trials) if trials is None else trials
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, t, variants) for t in trials]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_trial_star, jobs))
    return [_run_trial_star(j) for j in jobs]


class RunFailed(RuntimeError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def trial_csv(records: Sequence[TrialRecord]) -> str:
    return _csv_text(TRIAL_COLUMNS, [r.row() for r in records if r.metrics is not None])


def diagnostics_csv(records: Sequence[TrialRecord]) -> str:
    rows = [dict(zip(DIAG_COLUMNS, (r.trial,) + d)) for r in records for d in r.diagnostics]
    return _csv_text(DIAG_COLUMNS, rows)


def aggregate(records: Sequence[TrialRecord]) -> SweepPoint:
    good = [r for r in records if r.metrics is not None]
    if not good:
        raise RunFailed("no successful trials to aggregate")
    return monte_carlo_aggregate([{k: r.row()[k] for k in SUMMARY_METRICS} for r in good])


def summary_text(cfg: ScenarioConfig, point: SweepPoint, n_failed: int = 0) -> str:
    lines = [f"schema_version: {SCHEMA_VERSION}",
             f"fingerprint: {cfg.digest()} seed={cfg.master_seed}",
             f"mode: {cfg.mode}  n_co: {cfg.effective_n_co}  t_p: {cfg.t_p}  snr_db: {cfg.snr_db}",
             f"trials: {point.n_trials} ok, {n_failed} failed"
             + ("  (small sample)" if point.small_sample else "")]
    for name in SUMMARY_METRICS:
        s = point[name]
        if s.mean is None:
            lines.append(f"{name:>14}: n/a")
        else:
            lines.append(f"{name:>14}: {s.mean:.6g} +/- {s.half_width:.3g}  (n={s.n})")
    return "\n".join(lines) + "\n"


def check_failures(records: Sequence[TrialRecord]) -> int:
    n_failed = sum(r.metrics is None for r in records)
    if records and n_failed / len(records) > FAILURE_LIMIT:
        raise RunFailed(f"{n_failed} of {len(records)} trials failed (limit "
                        f"{FAILURE_LIMIT:.0%})")
    return n_failed


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None,
                 explicit: set[str] | None = None) -> tuple[list[TrialRecord], SweepPoint]:
    """Run ``cfg.trials`` trials of one scenario and optionally write its files."""
    records = [recs[0] for recs in run_trials(cfg)]
    n_failed = check_failures(records)
    point = aggregate(records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(trial_csv(records))
        (out / "diagnostics.csv").write_text(diagnostics_csv(records))
        (out / "summary.txt").write_text(summary_text(cfg, point, n_failed))
        (out / "effective_config.cfg").write_text(to_text(cfg, explicit))
        write_metadata(out, cfg)
        write_topology_csv(synthesize_trial(cfg, trial_seed(cfg.master_seed, 0)).topology,
                           out / "topology.csv")
    return records, point


SWEEP_COLUMNS = ("axis", "value", "variant", "n_trials", "small_sample") + tuple(
    f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "ci95")) + ("fingerprint",)
# processing variants that the sweep can run side by side on shared trials
BASELINES = {
    "sic": {},
    "spatial": {"enable_sic": False, "enable_angular_refine": False},
    "cellular": {"mode": "cellular"},
    "cloud": {"mode": "cloud"},
}


def normalize_axis(axis: str) -> str:
    key = AXIS_ALIASES.get(axis.strip().lower())
    if key is None:
        raise ConfigError(f"cannot sweep {axis!r}; sweepable axes are {', '.join(SWEEPABLE)}")
    return key


def sweep(cfg: ScenarioConfig, axis: str, values: Sequence, out_dir: str | Path | None = None,
          variants: Sequence[str] = ("sic",)) -> list[tuple[object, str, SweepPoint]]:
    """One aggregated point per (axis value, variant), all sharing the master seed.

    Variants are names from :data:`BASELINES`; they process the same
    synthesized trials, so their curves are paired.
    """
    axis = normalize_axis(axis)
    unknown = [v for v in variants if v not in BASELINES]
    if unknown:
        raise ConfigError(f"unknown variant(s) {unknown}; expected {', '.join(BASELINES)}")
    cast = float if axis == "snr_db" else int
    points = []
    for v in values:
        pcfg = cfg.with_(**{axis: cast(v)})
        if axis == "n_co" and pcfg.mode == "cloud":
            pcfg = pcfg.with_(mode="edge")
        table = run_trials(pcfg, [BASELINES[name] for name in variants])
        for j, name in enumerate(variants):
            records = [recs[j] for recs in table]
            check_failures(records)
            points.append((cast(v), name, aggregate(records)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(sweep_csv(cfg, axis, points))
        (out / "effective_config.cfg").write_text(to_text(cfg))
        write_metadata(out, cfg, {"sweep_axis": axis, "sweep_values": sorted({v for v, _, _ in points}),
                                  "variants": {n: BASELINES[n] for n in variants}})
    return points


def sweep_csv(cfg: ScenarioConfig, axis: str, points) -> str:
    rows = []
    for value, name, pt in points:
        row = {"axis": axis, "value": value, "variant": name, "n_trials": pt.n_trials,
               "small_sample": int(pt.small_sample), "fingerprint": f"{cfg.digest()}:{cfg.master_seed}"}
        for m in SUMMARY_METRICS:
            row[f"{m}_mean"] = pt[m].mean
            row[f"{m}_ci95"] = pt[m].half_width
        rows.append(row)
    return _csv_text(SWEEP_COLUMNS, rows)


def write_metadata(out: Path, cfg: ScenarioConfig, extra: dict | None = None) -> None:
    meta = {"schema_version": SCHEMA_VERSION, "package_version": __version__,
            "config_digest": cfg.digest(), "master_seed": cfg.master_seed,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "noise_calibration": "median over (device, HAP) of g * N_r / noise_var = 10^(snr_db/10)",
            "metric_definitions": METRIC_DEFINITIONS}
    meta.update(extra or {})
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
