//! Sweep execution: per-trial scene synthesis, reconstruction and metrics.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use super::config::{Observation, Placement, ScenarioConfig, SolverKind};
use super::io::{write_atomic, write_atomic_bytes};
use crate::analysis::{combined_block_prob, mse, mse_in_range, p_block_empirical};
use crate::channel::{build_channels, observe, pilot_estimate, stack_real, RealStackedSystem};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::occlusion::{occlusion_matrices, sensing_range_mask, OcclusionMatrices};
use crate::scene::{sample_in_shell, sample_scene, uniform_array, NodeLayout, ScatterField, VoxelGrid};
use crate::solvers::{run_bilinear, run_gamp, run_mvsvr, ReconstructionResult, TraceRow};

pub const RECORDS_SCHEMA: &str = "# schema: records/v1";
pub const RECORD_COLUMNS: [&str; 12] = [
    "config_hash",
    "sweep_variable",
    "sweep_value",
    "trial",
    "seed",
    "solver",
    "mse_in_range",
    "mse_full",
    "iterations",
    "converged",
    "status",
    "unsensable",
];
pub const AGGREGATE_COLUMNS: [&str; 12] = [
    "sweep_variable",
    "sweep_value",
    "solver",
    "trials",
    "median_mse_in_range",
    "q1_mse_in_range",
    "q3_mse_in_range",
    "median_mse_full",
    "q1_mse_full",
    "q3_mse_full",
    "converged_fraction",
    "median_iterations",
];

/// One solver run on one trial of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub solver: String,
    pub mse_in_range: f64,
    pub mse_full: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
    pub unsensable: usize,
}

/// Statistics over the trials of one `(sweep value, solver)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub solver: String,
    pub trials: usize,
    pub median_mse_in_range: f64,
    pub q1_mse_in_range: f64,
    pub q3_mse_in_range: f64,
    pub median_mse_full: f64,
    pub q1_mse_full: f64,
    pub q3_mse_full: f64,
    pub converged_fraction: f64,
    pub median_iterations: f64,
}

/// Everything a solver run produced that the outputs need.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub point: usize,
    pub trial: usize,
    pub solver: SolverKind,
    pub record: ExperimentRecord,
    pub result: Option<ReconstructionResult<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config_hash: String,
    pub runs: Vec<SolverRun>,
}

impl RunOutput {
    pub fn records(&self) -> Vec<ExperimentRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }

    pub fn aggregates(&self) -> Vec<AggregateRow> {
        aggregate(&self.records())
    }

    pub fn traces(&self, solver: SolverKind, point: usize) -> Vec<&[TraceRow]> {
        self.runs
            .iter()
            .filter(|r| r.solver == solver && r.point == point)
            .filter_map(|r| r.result.as_ref().map(|res| res.trace.as_slice()))
            .collect()
    }
}

/// A synthesized scene with its observation, ready for reconstruction.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub grid: VoxelGrid<f64>,
    pub field: ScatterField<f64>,
    pub layout: NodeLayout<f64>,
    pub occlusion: OcclusionMatrices,
    pub system: RealStackedSystem<f64>,
    pub in_range: Vec<bool>,
}

/// RNG for trial `trial`; the stream depends only on the seed and trial index,
/// so sweep points share scenes and nested user sets.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Samples base-station arrays first, then users, so that a smaller user count
/// is a prefix of a larger one.
pub fn sample_layout<R: Rng + ?Sized>(cfg: &ScenarioConfig, grid: &VoxelGrid<f64>, rng: &mut R) -> Result<NodeLayout<f64>> {
    let mut antennas = Vec::new();
    for (b, bs) in cfg.layout.base_stations.iter().enumerate() {
        let center = match bs.position {
            Some(p) => Vec3::from_array(p),
            None => sample_in_shell(grid, rng),
        };
        antennas.extend(uniform_array(center, bs.rows, bs.cols, cfg.antenna_spacing(bs), b));
    }
    let users = match &cfg.layout.user_placement {
        Placement::Shell => (0..cfg.layout.users).map(|_| sample_in_shell(grid, rng)).collect(),
        Placement::Points(p) => p.iter().take(cfg.layout.users).map(|a| Vec3::from_array(*a)).collect(),
    };
    NodeLayout::new(users, antennas)
}

pub fn build_trial(cfg: &ScenarioConfig, trial: usize) -> Result<TrialInstance> {
    let mut rng = trial_rng(cfg.sweep.seed, trial);
    let grid = cfg.grid()?;
    let prior = cfg.prior()?;
    let field = sample_scene(&grid, &prior, cfg.scatterer_spec(), &mut rng)?;
    let layout = sample_layout(cfg, &grid, &mut rng)?;
    let params = cfg.occlusion_params()?;
    let occlusion = occlusion_matrices(&field, &layout, &params)?;
    let ens = build_channels(&grid, &field, &layout, &occlusion, cfg.channel.fc)?;
    let ens = match cfg.channel.observation {
        Observation::Direct => observe(ens, cfg.channel.snr_db, &mut rng)?,
        Observation::Pilot => {
            let len = cfg.channel.pilot_length.ok_or_else(|| Error::config("channel.pilot_length", "missing"))?;
            pilot_estimate(ens, len, cfg.channel.snr_db, &mut rng)?
        }
    };
    let system = stack_real(&ens)?;
    let in_range = sensing_range_mask(&occlusion);
    Ok(TrialInstance { grid, field, layout, occlusion, system, in_range })
}

/// Bilinear blockage probability: the configured value, or the combined-entry
/// probability from Monte-Carlo hop estimates on this geometry.
pub fn bilinear_rho(cfg: &ScenarioConfig) -> Result<f64> {
    if let Some(rho) = cfg.solver.blockage_prob {
        return Ok(rho);
    }
    let grid = cfg.grid()?;
    let prior = cfg.prior()?;
    let params = cfg.occlusion_params()?;
    let spec = cfg.scatterer_spec();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.sweep.seed);
    rng.set_stream(u64::MAX);
    let est = p_block_empirical(
        |r| sample_scene(&grid, &prior, spec, r),
        |r| sample_layout(cfg, &grid, r),
        &params,
        cfg.analysis.hop_trials,
        &mut rng,
    )?;
    combined_block_prob(est.user.value, est.bs.value, grid.len())
}

fn failed_record(cfg: &ScenarioConfig, hash: &str, value: f64, trial: usize, solver: SolverKind, status: &str) -> ExperimentRecord {
    ExperimentRecord {
        config_hash: hash.to_string(),
        sweep_variable: cfg.sweep.variable.as_str().to_string(),
        sweep_value: value,
        trial,
        seed: cfg.sweep.seed,
        solver: solver.as_str().to_string(),
        mse_in_range: f64::NAN,
        mse_full: f64::NAN,
        iterations: 0,
        converged: false,
        status: status.to_string(),
        unsensable: 0,
    }
}

fn run_trial(cfg: &ScenarioConfig, hash: &str, point: usize, value: f64, trial: usize, rho: f64) -> Vec<SolverRun> {
    let solvers = &cfg.solver.solvers;
    let inst = match build_trial(cfg, trial) {
        Ok(i) => i,
        Err(e) => {
            warn!("trial {trial} at {value}: scene synthesis failed: {e}");
            return solvers
                .iter()
                .map(|s| SolverRun { point, trial, solver: *s, record: failed_record(cfg, hash, value, trial, *s, "error"), result: None })
                .collect();
        }
    };
    let prior = cfg.prior().expect("validated");
    let params = cfg.occlusion_params().expect("validated");
    let opts = cfg.solver.options().expect("validated");
    let truth = inst.field.values();
    let unsensable = inst.in_range.iter().filter(|v| !**v).count();
    solvers
        .iter()
        .map(|&solver| {
            let res = match solver {
                SolverKind::Gamp => run_gamp(&inst.system, &prior, &opts, Some(truth)),
                SolverKind::Bilinear => run_bilinear(&inst.system, &prior, rho, &opts, Some(truth)),
                SolverKind::Mvsvr => run_mvsvr(&inst.system, &inst.grid, &inst.layout, &prior, &params, &opts, Some(truth)),
            };
            match res {
                Ok(res) => {
                    let record = ExperimentRecord {
                        mse_in_range: mse_in_range(truth, &res.x_hat, &inst.in_range).unwrap_or(f64::NAN),
                        mse_full: mse(truth, &res.x_hat).unwrap_or(f64::NAN),
                        iterations: res.iterations,
                        converged: res.converged,
                        status: res.status.as_str().to_string(),
                        unsensable,
                        ..failed_record(cfg, hash, value, trial, solver, "")
                    };
                    SolverRun { point, trial, solver, record, result: Some(res) }
                }
                Err(e) => {
                    warn!("trial {trial} at {value}: {} failed: {e}", solver.as_str());
                    let mut record = failed_record(cfg, hash, value, trial, solver, "error");
                    record.unsensable = unsensable;
                    SolverRun { point, trial, solver, record, result: None }
                }
            }
        })
        .collect()
}

/// Runs every sweep point × trial × solver. Trials execute in parallel; the
/// output order is fixed (point, trial, configured solver order).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let points = cfg.sweep_points();
    let mut runs = Vec::new();
    for (p, &value) in points.iter().enumerate() {
        let point_cfg = cfg.at_point(value);
        let rho = if cfg.solver.solvers.contains(&SolverKind::Bilinear) { bilinear_rho(&point_cfg)? } else { 0.0 };
        info!("sweep point {} = {value}: {} trials", cfg.sweep.variable.as_str(), cfg.sweep.trials);
        let batch: Vec<Vec<SolverRun>> = (0..cfg.sweep.trials)
            .into_par_iter()
            .map(|t| run_trial(&point_cfg, &hash, p, value, t, rho))
            .collect();
        runs.extend(batch.into_iter().flatten());
    }
    Ok(RunOutput { config_hash: hash, runs })
}

fn quartiles(values: Vec<f64>) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut d = Data::new(values);
    (d.median(), d.lower_quartile(), d.upper_quartile())
}

/// Recomputes the per-cell statistics from per-trial rows; non-finite metrics
/// (failed runs) are excluded from the quantiles but count as trials.
pub fn aggregate(records: &[ExperimentRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(f64, String, String)> = Vec::new();
    for r in records {
        let k = (r.sweep_value, r.solver.clone(), r.sweep_variable.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(value, solver, variable)| {
            let cell: Vec<&ExperimentRecord> =
                records.iter().filter(|r| r.sweep_value == value && r.solver == solver).collect();
            let finite = |f: fn(&ExperimentRecord) -> f64| -> Vec<f64> {
                cell.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect()
            };
            let (m_in, q1_in, q3_in) = quartiles(finite(|r| r.mse_in_range));
            let (m_full, q1_full, q3_full) = quartiles(finite(|r| r.mse_full));
            let (m_it, _, _) = quartiles(cell.iter().map(|r| r.iterations as f64).collect());
            AggregateRow {
                sweep_variable: variable,
                sweep_value: value,
                solver,
                trials: cell.len(),
                median_mse_in_range: m_in,
                q1_mse_in_range: q1_in,
                q3_mse_in_range: q3_in,
                median_mse_full: m_full,
                q1_mse_full: q1_full,
                q3_mse_full: q3_full,
                converged_fraction: cell.iter().filter(|r| r.converged).count() as f64 / cell.len().max(1) as f64,
                median_iterations: m_it,
            }
        })
        .collect()
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

pub fn write_records<W: Write + ?Sized>(records: &[ExperimentRecord], w: &mut W) -> Result<()> {
    writeln!(w, "{RECORDS_SCHEMA}")?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RECORD_COLUMNS)?;
    for r in records {
        wtr.write_record([
            r.config_hash.clone(),
            r.sweep_variable.clone(),
            fmt_value(r.sweep_value),
            r.trial.to_string(),
            r.seed.to_string(),
            r.solver.clone(),
            fmt_f(r.mse_in_range),
            fmt_f(r.mse_full),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.status.clone(),
            r.unsensable.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses a `records.csv` written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path)?;
    let body = text
        .strip_prefix(RECORDS_SCHEMA)
        .ok_or_else(|| Error::config(path.display().to_string(), "missing or unsupported records schema line"))?;
    let mut rdr = csv::Reader::from_reader(body.trim_start_matches(['\r', '\n']).as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_aggregate<W: Write + ?Sized>(rows: &[AggregateRow], w: &mut W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(AGGREGATE_COLUMNS)?;
    for a in rows {
        wtr.write_record([
            a.sweep_variable.clone(),
            fmt_value(a.sweep_value),
            a.solver.clone(),
            a.trials.to_string(),
            fmt_f(a.median_mse_in_range),
            fmt_f(a.q1_mse_in_range),
            fmt_f(a.q3_mse_in_range),
            fmt_f(a.median_mse_full),
            fmt_f(a.q1_mse_full),
            fmt_f(a.q3_mse_full),
            fmt_f(a.converged_fraction),
            fmt_f(a.median_iterations),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub sweep_value: f64,
    pub trial: usize,
    pub solver: String,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub name: Option<String>,
    pub seed: u64,
    pub trials: usize,
    pub sweep_variable: String,
    pub sweep_values: Vec<f64>,
    pub runs: Vec<RunEntry>,
}

pub fn dump_name(kind: &str, point: usize, trial: usize, solver: SolverKind) -> String {
    format!("{kind}_p{point}_t{trial}_{}.csv", solver.as_str())
}

/// Writes records, aggregates, metadata, the resolved config and the optional
/// per-run dumps into `dir`; every file is written atomically.
pub fn write_outputs(cfg: &ScenarioConfig, out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let records = out.records();
    write_atomic(&dir.join("records.csv"), |w| write_records(&records, w))?;
    write_atomic(&dir.join("aggregate.csv"), |w| write_aggregate(&aggregate(&records), w))?;
    write_atomic_bytes(&dir.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;

    let runs = out
        .runs
        .iter()
        .map(|r| RunEntry {
            sweep_value: r.record.sweep_value,
            trial: r.trial,
            solver: r.record.solver.clone(),
            iterations: r.record.iterations,
            converged: r.record.converged,
            status: r.record.status.clone(),
        })
        .collect();
    let meta = Metadata {
        config_hash: out.config_hash.clone(),
        name: cfg.name.clone(),
        seed: cfg.sweep.seed,
        trials: cfg.sweep.trials,
        sweep_variable: cfg.sweep.variable.as_str().to_string(),
        sweep_values: cfg.sweep_points(),
        runs,
    };
    write_atomic_bytes(&dir.join("metadata.json"), &serde_json::to_vec_pretty(&meta)?)?;

    for r in &out.runs {
        let Some(res) = &r.result else { continue };
        if cfg.output.voxels {
            write_atomic(&dir.join(dump_name("voxels", r.point, r.trial, r.solver)), |w| res.write_voxels_csv(w))?;
        }
        if cfg.output.traces {
            write_atomic(&dir.join(dump_name("trace", r.point, r.trial, r.solver)), |w| res.write_trace_csv(w))?;
        }
    }
    if cfg.output.plots {
        super::plot::emit_plots(&records, &collect_trace_series(out), dir)?;
    }
    Ok(())
}

/// Misfit series of trial 0 at the last sweep point, one per solver.
pub fn collect_trace_series(out: &RunOutput) -> Vec<(String, Vec<(usize, f64)>)> {
    let last = out.runs.iter().map(|r| r.point).max().unwrap_or(0);
    out.runs
        .iter()
        .filter(|r| r.point == last && r.trial == 0)
        .filter_map(|r| {
            r.result
                .as_ref()
                .map(|res| (r.solver.as_str().to_string(), res.trace.iter().map(|t| (t.t, t.misfit)).collect()))
        })
        .collect()
}
