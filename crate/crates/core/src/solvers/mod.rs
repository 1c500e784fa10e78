//! Message-passing reconstruction: the plain GAMP baseline, the soft-occlusion
//! bilinear baseline and the occlusion-aware solver with geometric re-detection.

mod denoise;
mod engine;
mod state;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::occlusion::OcclusionMatrices;

pub use denoise::{
    check_f_identity, gh_denoise_hard, gh_denoise_soft, gx_denoise, output_log_partition, output_posterior,
    residual_step, soft_moments, soft_weight,
};
pub use engine::{run_bilinear, run_gamp, run_mvsvr, Geometry, Solver};
pub use state::{p_step, q_step, r_step, RStep, SolverState};

/// How the channel estimate `ĥ` is updated between iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode<T> {
    /// `ĥ = V̂ ⊙ H` with `V̂` re-detected from the thresholded estimate.
    HardOcclusion,
    /// Independent two-point blockage prior with the given probability.
    SoftBilinear(T),
    /// `ĥ = H` held fixed.
    NoOcclusion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    pub max_iter: usize,
    /// Channel-fit tolerance relative to `‖ĥ^S‖₁`.
    pub eps_t: T,
    /// Relative change of `x̂` below which the run counts as converged.
    pub x_tol: T,
    pub damping: T,
    pub sigma_h_floor: T,
    /// Iterations between occlusion re-detections in hard mode; `1` re-detects
    /// after every update. A detection is also forced before declaring convergence.
    pub detect_interval: usize,
    pub mode: Mode<T>,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 100,
            eps_t: T::lit(1e-6),
            x_tol: T::lit(1e-6),
            damping: T::zero(),
            sigma_h_floor: T::zero(),
            detect_interval: 1,
            mode: Mode::HardOcclusion,
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn with_mode(mut self, mode: Mode<T>) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validated(self) -> Result<Self> {
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if self.detect_interval < 1 {
            return Err(Error::invalid("detect_interval must be at least 1"));
        }
        if !(self.eps_t > T::zero()) {
            return Err(Error::invalid("eps_t must be positive"));
        }
        if !(self.x_tol >= T::zero()) {
            return Err(Error::invalid("x_tol must be non-negative"));
        }
        if !(self.damping >= T::zero() && self.damping < T::one()) {
            return Err(Error::invalid("damping must lie in [0, 1)"));
        }
        if !(self.sigma_h_floor >= T::zero()) || !self.sigma_h_floor.is_finite() {
            return Err(Error::invalid("sigma_h_floor must be finite and non-negative"));
        }
        if let Mode::SoftBilinear(rho) = self.mode {
            if !(rho >= T::zero() && rho <= T::one()) {
                return Err(Error::invalid(format!("blockage probability {rho} outside [0, 1]")));
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Relative change of `x̂` fell below `x_tol`.
    Converged,
    /// Channel misfit fell below `eps_t`.
    ChannelFit,
    MaxIterations,
    /// Misfit grew beyond ten times its running minimum.
    Diverged,
    NonFinite,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::ChannelFit => "channel-fit",
            Status::MaxIterations => "max-iterations",
            Status::Diverged => "diverged",
            Status::NonFinite => "non-finite",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One iteration of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// `Σ_k |ĥ^S_k − (ĥ x̂)_k|` after the update.
    pub misfit: f64,
    /// `Σ_k |ĥ^S_k − h̄^S_k|` from the output posterior.
    pub posterior_misfit: f64,
    pub mse: Option<f64>,
    /// Zero entries of the current occlusion estimate.
    pub occluded: usize,
    /// `‖x̂(t+1) − x̂(t)‖ / ‖x̂(t)‖`.
    pub x_change: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult<T> {
    pub x_hat: Vec<T>,
    pub sigma_x: Vec<T>,
    /// Final occlusion estimate in hard-occlusion mode.
    pub v_est: Option<OcclusionMatrices>,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
    pub status: Status,
}

/// Run metadata written next to the voxel and trace dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub solver: String,
    pub iterations: usize,
    pub converged: bool,
    pub status: Status,
}

impl<T: Real> ReconstructionResult<T> {
    /// `index,x_hat,sigma_x`.
    pub fn write_voxels_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "x_hat", "sigma_x"])?;
        for (i, (x, s)) in self.x_hat.iter().zip(&self.sigma_x).enumerate() {
            wtr.write_record([i.to_string(), format!("{:e}", x.to_f64_lossy()), format!("{:e}", s.to_f64_lossy())])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `t,misfit,posterior_misfit,mse,occluded,x_change`; `mse` is empty without truth.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "misfit", "posterior_misfit", "mse", "occluded", "x_change"])?;
        for r in &self.trace {
            wtr.write_record([
                r.t.to_string(),
                format!("{:e}", r.misfit),
                format!("{:e}", r.posterior_misfit),
                r.mse.map(|m| format!("{m:e}")).unwrap_or_default(),
                r.occluded.to_string(),
                format!("{:e}", r.x_change),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn metadata(&self, config_hash: &str, seed: u64, solver: &str) -> RunMetadata {
        RunMetadata {
            config_hash: config_hash.to_string(),
            seed,
            solver: solver.to_string(),
            iterations: self.iterations,
            converged: self.converged,
            status: self.status,
        }
    }
}
