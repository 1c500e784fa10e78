//! Sensing-range analysis of a configured geometry: closed forms, Monte-Carlo
//! hop probabilities and counted unsensable voxels.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{BaseStationConfig, Placement, ScenarioConfig};
use super::io::{write_atomic, write_atomic_bytes};
use super::run::sample_layout;
use crate::analysis::{
    p_block_bs_closed, p_block_empirical, p_block_user_closed, p_out_bs, unsensed_counts, unsensed_empirical,
    BoundReport, EmpiricalRange, Estimate, NodeDistribution, RangeReport, Scheme,
};
use crate::error::Result;
use crate::geom::Vec3;
use crate::scene::sample_scene;

/// Counted unsensable voxels against the count predicted from the Monte-Carlo
/// hop probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountComparison {
    pub scheme: Scheme,
    pub predicted: f64,
    pub predicted_stderr: f64,
    pub counted: Estimate,
    pub z: f64,
}

impl CountComparison {
    pub fn agrees(&self, k: f64) -> bool {
        (self.z.is_finite() && self.z.abs() <= k) || (self.predicted - self.counted.value).abs() < 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub range: RangeReport,
    pub bound: BoundReport,
    pub comparisons: Vec<CountComparison>,
}

impl fmt::Display for AnalysisOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.range, self.bound)?;
        for c in &self.comparisons {
            writeln!(
                f,
                "  {:?}: predicted {:.3} ± {:.3}, counted {:.3} ± {:.3}, z = {:.2}",
                c.scheme, c.predicted, c.predicted_stderr, c.counted.value, c.counted.stderr, c.z
            )?;
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Delta-method standard error of the predicted count.
fn predicted_stderr(pu: &Estimate, pb: &Estimate, num_users: usize, num_bs: usize, num_voxels: usize, scheme: Scheme) -> f64 {
    let ns = num_voxels as f64;
    let nu = num_users as i32;
    let pbo = p_out_bs(pb.value, num_bs, scheme);
    let d_pbo = match scheme {
        Scheme::SingleBs => 1.0,
        Scheme::MultiBs => num_bs as f64 * pb.value.powi(num_bs as i32 - 1),
    };
    let d_pu = ns * nu as f64 * pu.value.powi(nu - 1) * (1.0 - pbo);
    let d_pb = ns * (1.0 - pu.value.powi(nu)) * d_pbo;
    ((d_pu * pu.stderr).powi(2) + (d_pb * pb.stderr).powi(2)).sqrt()
}

/// Base-station lists of the single- and multi-station schemes: the first
/// configured station alone, and either the configured list (two or more
/// stations) or `multi_bs` copies of the first one.
pub fn scheme_layouts(cfg: &ScenarioConfig) -> (Vec<BaseStationConfig>, Vec<BaseStationConfig>) {
    let first = cfg.layout.base_stations[0];
    let multi = if cfg.layout.base_stations.len() >= 2 {
        cfg.layout.base_stations.clone()
    } else {
        vec![BaseStationConfig { position: None, ..first }; cfg.analysis.multi_bs]
    };
    (vec![first], multi)
}

pub fn validate_analysis(cfg: &ScenarioConfig) -> Result<AnalysisOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let prior = cfg.prior()?;
    let params = cfg.occlusion_params()?;
    let lambda = cfg.scatterer_density()?;
    let l = params.blocking_distance;
    let seed = cfg.sweep.seed;

    let users = match &cfg.layout.user_placement {
        Placement::Shell => NodeDistribution::Shell,
        Placement::Points(p) => NodeDistribution::Points(p.iter().map(|a| Vec3::from_array(*a)).collect()),
    };
    let fixed: Option<Vec<Vec3<f64>>> =
        cfg.layout.base_stations.iter().map(|b| b.position.map(Vec3::from_array)).collect();
    let stations = fixed.map_or(NodeDistribution::Shell, NodeDistribution::Points);
    let pu = p_block_user_closed(&grid, lambda, l, &users, cfg.analysis.draws, &mut rng_for(seed, 0))?;
    let pb = p_block_bs_closed(&grid, lambda, l, &stations, cfg.analysis.draws, &mut rng_for(seed, 1))?;

    let (single_bs, multi_bs) = scheme_layouts(cfg);
    let num_users = cfg.layout.users;
    let mut range = RangeReport::from_probabilities(pu, pb, num_users, multi_bs.len(), grid.len())?;

    let spec = cfg.scatterer_spec();
    let scenes = |r: &mut ChaCha20Rng| sample_scene(&grid, &prior, spec, r);
    let with_bs = |bs: &[BaseStationConfig]| {
        let mut c = cfg.clone();
        c.layout.base_stations = bs.to_vec();
        c
    };
    let single_cfg = with_bs(&single_bs);
    let multi_cfg = with_bs(&multi_bs);

    let hops = p_block_empirical(
        scenes,
        |r| sample_layout(&single_cfg, &grid, r),
        &params,
        cfg.analysis.hop_trials,
        &mut rng_for(seed, 2),
    )?;
    let counted_con = unsensed_empirical(
        scenes,
        |r| sample_layout(&single_cfg, &grid, r),
        &params,
        cfg.analysis.count_trials,
        &mut rng_for(seed, 3),
    )?;
    let counted_dis = unsensed_empirical(
        scenes,
        |r| sample_layout(&multi_cfg, &grid, r),
        &params,
        cfg.analysis.count_trials,
        &mut rng_for(seed, 4),
    )?;

    let mut comparisons = Vec::new();
    let mut predicted = [0.0; 2];
    for (i, (scheme, counted)) in [(Scheme::SingleBs, counted_con), (Scheme::MultiBs, counted_dis)].into_iter().enumerate() {
        let p = unsensed_counts(hops.user.value, hops.bs.value, num_users, multi_bs.len(), grid.len(), scheme)?;
        let se = predicted_stderr(&hops.user, &hops.bs, num_users, multi_bs.len(), grid.len(), scheme);
        let total = (se * se + counted.stderr * counted.stderr).sqrt();
        let z = if total > 0.0 { (counted.value - p) / total } else { f64::NAN };
        predicted[i] = p;
        comparisons.push(CountComparison { scheme, predicted: p, predicted_stderr: se, counted, z });
    }
    range.empirical = Some(EmpiricalRange {
        p_block_user: hops.user,
        p_block_bs: hops.bs,
        n_con_predicted: predicted[0],
        n_dis_predicted: predicted[1],
        n_con: counted_con,
        n_dis: counted_dis,
    });

    let antennas: usize = cfg.layout.base_stations.iter().map(|b| b.rows * b.cols).sum();
    let bound = BoundReport::new(cfg.analysis.m, lambda, prior.slab_mean, &range, antennas)?;
    Ok(AnalysisOutput { range, bound, comparisons })
}

/// Writes `analysis.csv` (range and bound in one row), `comparison.csv` and a
/// text summary `analysis.txt`.
pub fn write_analysis(out: &AnalysisOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("analysis.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = RangeReport::csv_header();
        header.extend(BoundReport::csv_header());
        wtr.write_record(header)?;
        let mut row = out.range.csv_row();
        row.extend(out.bound.csv_row());
        wtr.write_record(row)?;
        wtr.flush()?;
        Ok(())
    })?;
    write_atomic(&dir.join("comparison.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["scheme", "predicted", "predicted_stderr", "counted", "counted_stderr", "trials", "z"])?;
        for c in &out.comparisons {
            let scheme = match c.scheme {
                Scheme::SingleBs => "single-bs",
                Scheme::MultiBs => "multi-bs",
            };
            wtr.write_record([
                scheme.to_string(),
                format!("{:e}", c.predicted),
                format!("{:e}", c.predicted_stderr),
                format!("{:e}", c.counted.value),
                format!("{:e}", c.counted.stderr),
                c.counted.trials.to_string(),
                format!("{:e}", c.z),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    write_atomic_bytes(&dir.join("analysis.txt"), out.to_string().as_bytes())
}
