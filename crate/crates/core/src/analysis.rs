//! Reconstruction metrics, blockage probabilities, sensing-range counts and the
//! sparse-recovery error bound, each paired with a Monte-Carlo estimator.

use std::fmt;
use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::num::Real;
use crate::occlusion::{occlusion_matrices, sensing_range_mask, Occluders, OcclusionParams};
use crate::scene::{sample_in_shell, NodeLayout, ScatterField, VoxelGrid};

/// `(1/N) ‖x − x̂‖²`.
pub fn mse<T: Real>(x_true: &[T], x_hat: &[T]) -> Result<f64> {
    check_lengths(x_true.len(), x_hat.len())?;
    if x_true.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(sq_err(x_true, x_hat, |_| true) / x_true.len() as f64)
}

/// MSE restricted to voxels where `mask` is set, normalized by the selected count.
pub fn mse_in_range<T: Real>(x_true: &[T], x_hat: &[T], mask: &[bool]) -> Result<f64> {
    check_lengths(x_true.len(), x_hat.len())?;
    check_lengths(x_true.len(), mask.len())?;
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sq_err(x_true, x_hat, |i| mask[i]) / n as f64)
}

fn sq_err<T: Real>(a: &[T], b: &[T], keep: impl Fn(usize) -> bool) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, (x, y))| {
            let d = (*x - *y).to_f64_lossy();
            d * d
        })
        .sum()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(format!("{a} vs {b}")));
    }
    Ok(())
}

/// Where a node (user or base station) may be placed.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeDistribution<T> {
    /// Uniform over the horizontal shell around the region, see [`sample_in_shell`].
    Shell,
    /// Uniform over an explicit table of positions.
    Points(Vec<Vec3<T>>),
}

impl<T: Real> NodeDistribution<T> {
    pub fn sample<R: Rng + ?Sized>(&self, grid: &VoxelGrid<T>, rng: &mut R) -> Result<Vec3<T>> {
        match self {
            NodeDistribution::Shell => Ok(sample_in_shell(grid, rng)),
            NodeDistribution::Points(pts) if pts.is_empty() => Err(Error::invalid("empty position table")),
            NodeDistribution::Points(pts) => Ok(pts[rng.random_range(0..pts.len())]),
        }
    }
}

/// Default number of position draws for the closed-form integrals.
pub const DEFAULT_DRAWS: usize = 10_000;

/// Blockage probability of a single node-voxel hop from the first-order
/// formula `E[λ l² ‖a − a^s‖] / (L W H)²`, averaged over node positions and
/// voxel centers.
///
/// Draws are stratified over voxels (draw `k` uses voxel `k mod N_s`). Values
/// above one are clamped with a warning.
pub fn p_block_closed<T: Real, R: Rng + ?Sized>(
    grid: &VoxelGrid<T>,
    lambda: f64,
    l: f64,
    nodes: &NodeDistribution<T>,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("sparsity {lambda} outside [0, 1]")));
    }
    if !(l >= 0.0) {
        return Err(Error::invalid("blocking distance must be non-negative"));
    }
    if draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    if lambda == 0.0 || l == 0.0 {
        return Ok(0.0);
    }
    let vol = grid.volume().to_f64_lossy();
    let centers = grid.centers();
    let mut acc = 0.0;
    for k in 0..draws {
        let a = nodes.sample(grid, rng)?.cast::<f64>();
        let s = centers[k % centers.len()].cast::<f64>();
        acc += a.distance(s);
    }
    let p = lambda * l * l * (acc / draws as f64) / (vol * vol);
    Ok(clamp_probability("blockage probability", p))
}

/// User-side hop blockage probability.
pub fn p_block_user_closed<T: Real, R: Rng + ?Sized>(
    grid: &VoxelGrid<T>,
    lambda: f64,
    l: f64,
    users: &NodeDistribution<T>,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    p_block_closed(grid, lambda, l, users, draws, rng)
}

/// Antenna-side hop blockage probability; the base station position plays the
/// role of the user.
pub fn p_block_bs_closed<T: Real, R: Rng + ?Sized>(
    grid: &VoxelGrid<T>,
    lambda: f64,
    l: f64,
    stations: &NodeDistribution<T>,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    p_block_closed(grid, lambda, l, stations, draws, rng)
}

fn clamp_probability(what: &str, p: f64) -> f64 {
    if p > 1.0 {
        warn!("{what} {p:.4} exceeds 1; clamping");
        1.0
    } else if p < 0.0 {
        warn!("{what} {p:.4} below 0; clamping");
        0.0
    } else {
        p
    }
}

/// A proportion estimated from independent Bernoulli trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl Estimate {
    fn binomial(hits: usize, trials: usize) -> Self {
        let p = hits as f64 / trials as f64;
        Self { value: p, stderr: (p * (1.0 - p) / trials as f64).sqrt(), trials }
    }

    /// Mean and standard error of the mean of independent samples.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { value: mean, stderr: (var / n.max(1) as f64).sqrt(), trials: n }
    }

    /// `|value − reference| ≤ k · stderr`; an exact match is required when the
    /// standard error vanishes.
    pub fn agrees_with(&self, reference: f64, k: f64) -> bool {
        (self.value - reference).abs() <= k * self.stderr
    }
}

/// Empirical per-hop blockage on the user and antenna side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub user: Estimate,
    pub bs: Estimate,
}

pub const MIN_TRIALS: usize = 100;

fn substream(base: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng
}

/// Fraction of blocked hops over independently sampled scenes.
///
/// Each trial samples a field and a layout, then checks one uniformly chosen
/// user→voxel hop and one voxel→antenna hop, so every trial is an independent
/// Bernoulli draw and the binomial standard error applies. Trials run in
/// parallel on per-trial substreams derived from one seed drawn from `rng`.
pub fn p_block_empirical<T, R, S, L>(
    scenes: S,
    layouts: L,
    params: &OcclusionParams<T>,
    trials: usize,
    rng: &mut R,
) -> Result<BlockEstimate>
where
    T: Real,
    R: Rng + ?Sized,
    S: Fn(&mut ChaCha20Rng) -> Result<ScatterField<T>> + Sync,
    L: Fn(&mut ChaCha20Rng) -> Result<NodeLayout<T>> + Sync,
{
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let base: u64 = rng.random();
    let hits = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<(usize, usize)> {
            let mut r = substream(base, i);
            let field = scenes(&mut r)?;
            let layout = layouts(&mut r)?;
            let grid = field.grid();
            let occ = Occluders::from_values(grid, field.values(), params.threshold);
            let s = r.random_range(0..grid.len());
            let c = grid.voxel_center(s)?;
            let u = layout.users()[r.random_range(0..layout.num_users())];
            let a = layout.antennas()[r.random_range(0..layout.num_antennas())].position;
            let l = params.blocking_distance;
            let user_blocked = !occ.path_clear(u, c, l, &[s])?;
            let bs_blocked = !occ.path_clear(c, a, l, &[s])?;
            Ok((user_blocked as usize, bs_blocked as usize))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(BlockEstimate { user: Estimate::binomial(hits.0, trials), bs: Estimate::binomial(hits.1, trials) })
}

/// Mean number of voxels outside the sensing range over sampled scenes.
pub fn unsensed_empirical<T, R, S, L>(
    scenes: S,
    layouts: L,
    params: &OcclusionParams<T>,
    trials: usize,
    rng: &mut R,
) -> Result<Estimate>
where
    T: Real,
    R: Rng + ?Sized,
    S: Fn(&mut ChaCha20Rng) -> Result<ScatterField<T>> + Sync,
    L: Fn(&mut ChaCha20Rng) -> Result<NodeLayout<T>> + Sync,
{
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let base: u64 = rng.random();
    let counts = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut r = substream(base, i);
            let field = scenes(&mut r)?;
            let layout = layouts(&mut r)?;
            let mats = occlusion_matrices(&field, &layout, params)?;
            Ok(sensing_range_mask(&mats).iter().filter(|v| !**v).count() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// One base station; its co-located antennas share a single view.
    SingleBs,
    /// `N_B` independently placed base stations.
    MultiBs,
}

/// Probability that a voxel is invisible to every antenna.
pub fn p_out_bs(p_bs: f64, num_bs: usize, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::SingleBs => p_bs,
        Scheme::MultiBs => p_bs.powi(num_bs as i32),
    }
}

/// Expected number of voxels outside the sensing range,
/// `N_s (p_u^{N_u} + p_b' − p_u^{N_u} p_b')` with `p_b'` from [`p_out_bs`].
pub fn unsensed_counts(p_user: f64, p_bs: f64, num_users: usize, num_bs: usize, num_voxels: usize, scheme: Scheme) -> Result<f64> {
    for (name, p) in [("p_user", p_user), ("p_bs", p_bs)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let pu = p_user.powi(num_users as i32);
    let pb = p_out_bs(p_bs, num_bs, scheme);
    Ok(num_voxels as f64 * (pu + pb - pu * pb))
}

/// Blockage probability of a combined entry, `p_u + p_b − p_u p_b / N_s`,
/// clamped to `[0, 1]`.
pub fn combined_block_prob(p_user: f64, p_bs: f64, num_voxels: usize) -> Result<f64> {
    for (name, p) in [("p_user", p_user), ("p_bs", p_bs)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
        }
    }
    if num_voxels == 0 {
        return Err(Error::invalid("grid has no voxels"));
    }
    Ok(clamp_probability("combined blockage probability", p_user + p_bs - p_user * p_bs / num_voxels as f64))
}

/// ℓ₁ radius `λ θ (N_s − N̄)` of the sensable part of the field.
pub fn radius(lambda: f64, slab_mean: f64, num_voxels: usize, unsensed: f64) -> f64 {
    (lambda * slab_mean * (num_voxels as f64 - unsensed)).max(0.0)
}

/// `m R² ln N_s / (N_s N_u N_R)`.
pub fn mse_bound(m: f64, r: f64, num_voxels: usize, num_users: usize, num_antennas: usize) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::invalid("normalization constant m must be positive"));
    }
    if num_voxels == 0 || num_users == 0 || num_antennas == 0 {
        return Err(Error::invalid("bound needs positive dimensions"));
    }
    let ns = num_voxels as f64;
    Ok(m * r * r * ns.ln() / (ns * num_users as f64 * num_antennas as f64))
}

/// Closed-form sensing-range quantities with optional empirical counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub num_voxels: usize,
    pub num_users: usize,
    pub num_bs: usize,
    pub p_block_user: f64,
    pub p_block_bs: f64,
    pub p_out_user: f64,
    pub p_out_bs_single: f64,
    pub p_out_bs_multi: f64,
    pub n_con: f64,
    pub n_dis: f64,
    pub empirical: Option<EmpiricalRange>,
}

/// Monte-Carlo counterparts of a [`RangeReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRange {
    pub p_block_user: Estimate,
    pub p_block_bs: Estimate,
    /// Counts predicted from the empirical per-hop probabilities.
    pub n_con_predicted: f64,
    pub n_dis_predicted: f64,
    pub n_con: Estimate,
    pub n_dis: Estimate,
}

impl RangeReport {
    pub fn from_probabilities(p_user: f64, p_bs: f64, num_users: usize, num_bs: usize, num_voxels: usize) -> Result<Self> {
        Ok(Self {
            num_voxels,
            num_users,
            num_bs,
            p_block_user: p_user,
            p_block_bs: p_bs,
            p_out_user: p_user.powi(num_users as i32),
            p_out_bs_single: p_out_bs(p_bs, num_bs, Scheme::SingleBs),
            p_out_bs_multi: p_out_bs(p_bs, num_bs, Scheme::MultiBs),
            n_con: unsensed_counts(p_user, p_bs, num_users, num_bs, num_voxels, Scheme::SingleBs)?,
            n_dis: unsensed_counts(p_user, p_bs, num_users, num_bs, num_voxels, Scheme::MultiBs)?,
            empirical: None,
        })
    }

    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "num_voxels",
            "num_users",
            "num_bs",
            "p_block_user",
            "p_block_bs",
            "p_out_user",
            "p_out_bs_single",
            "p_out_bs_multi",
            "n_con",
            "n_dis",
            "emp_p_block_user",
            "emp_p_block_user_se",
            "emp_p_block_bs",
            "emp_p_block_bs_se",
            "emp_n_con_predicted",
            "emp_n_dis_predicted",
            "emp_n_con",
            "emp_n_con_se",
            "emp_n_dis",
            "emp_n_dis_se",
        ]
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![
            self.num_voxels.to_string(),
            self.num_users.to_string(),
            self.num_bs.to_string(),
        ];
        row.extend(
            [
                self.p_block_user,
                self.p_block_bs,
                self.p_out_user,
                self.p_out_bs_single,
                self.p_out_bs_multi,
                self.n_con,
                self.n_dis,
            ]
            .iter()
            .map(|v| format!("{v:e}")),
        );
        match &self.empirical {
            Some(e) => row.extend(
                [
                    e.p_block_user.value,
                    e.p_block_user.stderr,
                    e.p_block_bs.value,
                    e.p_block_bs.stderr,
                    e.n_con_predicted,
                    e.n_dis_predicted,
                    e.n_con.value,
                    e.n_con.stderr,
                    e.n_dis.value,
                    e.n_dis.stderr,
                ]
                .iter()
                .map(|v| format!("{v:e}")),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 10)),
        }
        row
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::csv_header())?;
        wtr.write_record(self.csv_row())?;
        wtr.flush()?;
        Ok(())
    }
}

impl fmt::Display for RangeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sensing range ({} voxels, {} users, {} base stations)", self.num_voxels, self.num_users, self.num_bs)?;
        writeln!(f, "  hop blockage (closed form): user {:.4e}, antenna {:.4e}", self.p_block_user, self.p_block_bs)?;
        writeln!(
            f,
            "  out of range: users {:.4e}, single BS {:.4e}, multi BS {:.4e}",
            self.p_out_user, self.p_out_bs_single, self.p_out_bs_multi
        )?;
        writeln!(f, "  expected unsensable voxels: single BS {:.3}, multi BS {:.3}", self.n_con, self.n_dis)?;
        if let Some(e) = &self.empirical {
            writeln!(
                f,
                "  hop blockage (Monte Carlo): user {:.4} ± {:.4}, antenna {:.4} ± {:.4}",
                e.p_block_user.value, e.p_block_user.stderr, e.p_block_bs.value, e.p_block_bs.stderr
            )?;
            writeln!(
                f,
                "  unsensable voxels, predicted from Monte-Carlo hops: single BS {:.3}, multi BS {:.3}",
                e.n_con_predicted, e.n_dis_predicted
            )?;
            writeln!(
                f,
                "  unsensable voxels, counted: single BS {:.3} ± {:.3}, multi BS {:.3} ± {:.3}",
                e.n_con.value, e.n_con.stderr, e.n_dis.value, e.n_dis.stderr
            )?;
        }
        Ok(())
    }
}

/// Error bound for both sensing schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m: f64,
    pub r_con: f64,
    pub r_dis: f64,
    pub bound_con: f64,
    pub bound_dis: f64,
}

impl BoundReport {
    pub fn new(
        m: f64,
        lambda: f64,
        slab_mean: f64,
        range: &RangeReport,
        num_antennas: usize,
    ) -> Result<Self> {
        let r_con = radius(lambda, slab_mean, range.num_voxels, range.n_con);
        let r_dis = radius(lambda, slab_mean, range.num_voxels, range.n_dis);
        Ok(Self {
            m,
            r_con,
            r_dis,
            bound_con: mse_bound(m, r_con, range.num_voxels, range.num_users, num_antennas)?,
            bound_dis: mse_bound(m, r_dis, range.num_voxels, range.num_users, num_antennas)?,
        })
    }

    pub fn csv_header() -> Vec<&'static str> {
        vec!["m", "r_con", "r_dis", "bound_con", "bound_dis"]
    }

    pub fn csv_row(&self) -> Vec<String> {
        [self.m, self.r_con, self.r_dis, self.bound_con, self.bound_dis].iter().map(|v| format!("{v:e}")).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::csv_header())?;
        wtr.write_record(self.csv_row())?;
        wtr.flush()?;
        Ok(())
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "error bound (up to m = {})", self.m)?;
        writeln!(f, "  radius: single BS {:.4}, multi BS {:.4}", self.r_con, self.r_dis)?;
        writeln!(f, "  MSE bound: single BS {:.4e}, multi BS {:.4e}", self.bound_con, self.bound_dis)
    }
}
