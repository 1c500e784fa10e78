use log::warn;
use ndarray::{Array, Array1, Array2, Dimension, Zip};

use super::denoise::{gx_denoise, output_posterior, residual_step, soft_moments, soft_weight};
use super::state::{p_step, q_step, r_step, SolverState};
use super::{Mode, ReconstructionResult, SolverOptions, Status, TraceRow};
use crate::channel::RealStackedSystem;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::occlusion::{occlusion_matrices_with, OcclusionMatrices, OcclusionParams, Occluders};
use crate::scene::{NodeLayout, PriorParams, VoxelGrid};

const VARIANCE_CLAMP: f64 = 1e-12;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Geometry needed to re-detect occlusion from intermediate estimates.
#[derive(Debug, Clone, Copy)]
pub struct Geometry<'a, T> {
    pub grid: &'a VoxelGrid<T>,
    pub layout: &'a NodeLayout<T>,
    pub params: OcclusionParams<T>,
}

enum Coupling<'a, T> {
    Fixed,
    Hard(Geometry<'a, T>),
    Soft(T),
}

/// Stepwise message-passing solver over a stacked real system.
pub struct Solver<'a, T: Real> {
    sys: &'a RealStackedSystem<T>,
    prior: PriorParams<T>,
    opts: SolverOptions<T>,
    coupling: Coupling<'a, T>,
    a: Array2<T>,
    y: Array1<T>,
    noise_var: T,
    p_floor: T,
    state: SolverState<T>,
    v_est: Option<OcclusionMatrices>,
    occluder_set: Vec<usize>,
    occlusion_changed: bool,
    truth: Option<&'a [T]>,
}

fn normalization<T: Real>(a: &Array2<T>) -> T {
    let energy: T = a.iter().map(|v| *v * *v).sum();
    if energy > T::zero() && energy.is_finite() {
        (T::from_usize_lossy(a.ncols()) / energy).sqrt()
    } else {
        T::one()
    }
}

/// Expands a complex-entry occlusion pattern onto the interleaved real rows.
fn mask_rows<T: Real>(a: &Array2<T>, v: &OcclusionMatrices, n_u: usize) -> Array2<T> {
    let mut out = a.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let k = i / 2;
        let (u, r) = (k % n_u, k / n_u);
        for (s, h) in row.iter_mut().enumerate() {
            if !v.combined(u, s, r) {
                *h = T::zero();
            }
        }
    }
    out
}

fn damp<T: Real, D: Dimension>(new: &mut Array<T, D>, old: &Array<T, D>, factor: T) {
    if factor > T::zero() {
        Zip::from(new).and(old).for_each(|x, &o| *x = (T::one() - factor) * *x + factor * o);
    }
}

fn relative_change<T: Real>(new: &Array1<T>, old: &Array1<T>) -> f64 {
    let diff: T = new.iter().zip(old).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    let base: T = old.iter().map(|v| *v * *v).sum();
    let (d, b) = (diff.sqrt().to_f64_lossy(), base.sqrt().to_f64_lossy());
    if b > 0.0 {
        d / b
    } else {
        d
    }
}

fn clamp_variances<T: Real>(name: &str, v: &mut Array1<T>) {
    let floor = T::lit(VARIANCE_CLAMP);
    let mut clamped = 0usize;
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = floor;
            clamped += 1;
        }
    }
    if clamped > 0 {
        warn!("clamped {clamped} negative {name} entries to {VARIANCE_CLAMP:e}");
    }
}

impl<'a, T: Real> Solver<'a, T> {
    fn build(
        sys: &'a RealStackedSystem<T>,
        prior: &PriorParams<T>,
        opts: &SolverOptions<T>,
        coupling: Coupling<'a, T>,
        truth: Option<&'a [T]>,
    ) -> Result<Self> {
        let prior = prior.validated()?;
        let opts = opts.validated()?;
        if sys.y.len() != sys.a_free.nrows() || sys.y.len() % 2 != 0 {
            return Err(Error::LengthMismatch("stacked observation and matrix rows differ".into()));
        }
        if let Some(x) = truth {
            if x.len() != sys.num_cols() {
                return Err(Error::LengthMismatch(format!("truth has {} entries for {} voxels", x.len(), sys.num_cols())));
            }
        }
        if let Coupling::Soft(rho) = coupling {
            if !(rho >= T::zero() && rho <= T::one()) {
                return Err(Error::invalid(format!("blockage probability {rho} outside [0, 1]")));
            }
        }
        if let Coupling::Hard(g) = &coupling {
            if g.grid.len() != sys.num_cols()
                || g.layout.num_users() != sys.num_users
                || g.layout.num_antennas() != sys.num_antennas
            {
                return Err(Error::LengthMismatch("geometry does not match the stacked system".into()));
            }
        }
        let scale = normalization(&sys.a_free);
        let a = sys.a_free.mapv(|v| v * scale);
        let y = sys.y.mapv(|v| v * scale);
        let noise_var = sys.noise_var * scale * scale;
        let (h0, sh0) = match &coupling {
            Coupling::Soft(rho) => {
                let rho = *rho;
                let keep = T::one() - rho;
                (a.mapv(|h| keep * h), a.mapv(|h| rho * keep * h * h))
            }
            _ => (a.clone(), Array2::from_elem(a.dim(), T::zero())),
        };
        let sh0 = match &coupling {
            Coupling::Hard(_) => sh0.mapv(|_| opts.sigma_h_floor),
            _ => sh0,
        };
        let v_est = match &coupling {
            Coupling::Hard(g) => Some(OcclusionMatrices::all_clear(
                g.layout.num_users(),
                g.grid.len(),
                g.layout.num_antennas(),
            )),
            _ => None,
        };
        let state = SolverState::init(&prior, h0, sh0, scale);
        Ok(Self {
            sys,
            prior,
            opts,
            coupling,
            a,
            y,
            noise_var,
            p_floor: T::epsilon() * T::epsilon(),
            state,
            v_est,
            occluder_set: Vec::new(),
            occlusion_changed: false,
            truth,
        })
    }

    /// Plain GAMP with the free-space matrix held fixed.
    pub fn gamp(sys: &'a RealStackedSystem<T>, prior: &PriorParams<T>, opts: &SolverOptions<T>) -> Result<Self> {
        Self::build(sys, prior, opts, Coupling::Fixed, None)
    }

    /// Solver whose channel update follows `opts.mode`.
    pub fn mvsvr(
        sys: &'a RealStackedSystem<T>,
        geometry: Geometry<'a, T>,
        prior: &PriorParams<T>,
        opts: &SolverOptions<T>,
    ) -> Result<Self> {
        let coupling = match opts.mode {
            Mode::HardOcclusion => Coupling::Hard(geometry),
            Mode::SoftBilinear(rho) => Coupling::Soft(rho),
            Mode::NoOcclusion => Coupling::Fixed,
        };
        Self::build(sys, prior, opts, coupling, None)
    }

    /// Soft-occlusion bilinear baseline with blockage probability `rho`.
    pub fn bilinear(sys: &'a RealStackedSystem<T>, prior: &PriorParams<T>, rho: T, opts: &SolverOptions<T>) -> Result<Self> {
        Self::build(sys, prior, opts, Coupling::Soft(rho), None)
    }

    /// Records the MSE against `truth` in the trace.
    pub fn with_truth(mut self, truth: &'a [T]) -> Result<Self> {
        if truth.len() != self.sys.num_cols() {
            return Err(Error::LengthMismatch(format!(
                "truth has {} entries for {} voxels",
                truth.len(),
                self.sys.num_cols()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn state(&self) -> &SolverState<T> {
        &self.state
    }

    pub fn occlusion_estimate(&self) -> Option<&OcclusionMatrices> {
        self.v_est.as_ref()
    }

    /// Executes one iteration and returns its trace row.
    pub fn step(&mut self) -> Result<TraceRow> {
        let damping = self.opts.damping;
        let first = self.state.t == 1;

        let (p_bar, mut sigma_p) = p_step(&self.state);
        clamp_variances("sigma_p", &mut sigma_p);
        sigma_p.mapv_inplace(|v| v.max(self.p_floor));
        self.state.p_bar = p_bar;
        self.state.sigma_p = sigma_p;

        let m = self.y.len();
        let mut h_bar = Array1::from_elem(m, T::zero());
        let mut s_hs = Array1::from_elem(m, T::zero());
        let mut s_bar = Array1::from_elem(m, T::zero());
        let mut s_s = Array1::from_elem(m, T::zero());
        for i in 0..m {
            let (p, sp, y) = (self.state.p_bar[i], self.state.sigma_p[i], self.y[i]);
            (h_bar[i], s_hs[i]) = output_posterior(p, sp, y, self.noise_var)?;
            (s_bar[i], s_s[i]) = residual_step(p, sp, y, self.noise_var)?;
        }
        if !first {
            damp(&mut s_bar, &self.state.s_bar, damping);
            damp(&mut s_s, &self.state.sigma_s, damping);
        }
        self.state.h_bar_s = h_bar;
        self.state.sigma_hs = s_hs;
        self.state.s_bar = s_bar;
        self.state.sigma_s = s_s;

        let r = r_step(&self.state, &self.prior);
        let mut sigma_r = r.sigma_r;
        clamp_variances("sigma_r", &mut sigma_r);
        self.state.r_bar = r.r_bar;
        self.state.sigma_r = sigma_r;
        self.state.blind = r.blind;

        if !matches!(self.coupling, Coupling::Fixed) {
            let (q, sq) = q_step(&self.state);
            self.state.q_bar = q;
            self.state.sigma_q = sq;
        }

        let n = self.state.num_cols();
        let mut x_new = Array1::from_elem(n, T::zero());
        let mut sx_new = Array1::from_elem(n, T::zero());
        for j in 0..n {
            (x_new[j], sx_new[j]) = if self.state.blind[j] {
                (self.prior.mean(), self.prior.variance())
            } else {
                gx_denoise(self.state.r_bar[j], self.state.sigma_r[j], &self.prior)?
            };
        }
        clamp_variances("sigma_x", &mut sx_new);
        damp(&mut x_new, &self.state.x_hat, damping);
        damp(&mut sx_new, &self.state.sigma_x, damping);
        let x_change = relative_change(&x_new, &self.state.x_hat);

        // the channel update uses the occlusion estimate from the previous
        // iteration; re-detection below feeds the next one
        let h_new = match &self.coupling {
            Coupling::Fixed => None,
            Coupling::Hard(_) => {
                let v = self.v_est.as_ref().expect("hard mode keeps an occlusion estimate");
                let h = mask_rows(&self.a, v, self.sys.num_users);
                let sh = Array2::from_elem(h.dim(), self.opts.sigma_h_floor);
                Some((h, sh))
            }
            Coupling::Soft(rho) => Some(self.soft_channel(*rho)?),
        };
        if let Some((mut h, sh)) = h_new {
            damp(&mut h, &self.state.h_hat, damping);
            self.state.h_hat = h;
            self.state.sigma_h = sh;
        }
        self.state.x_hat = x_new;
        self.state.sigma_x = sx_new;

        self.occlusion_changed = false;
        if let Coupling::Hard(g) = &self.coupling {
            let due = self.state.t % self.opts.detect_interval == 0 || x_change < self.opts.x_tol.to_f64_lossy();
            if due {
                let x = self.state.x_hat.to_vec();
                let occ = Occluders::from_values(g.grid, &x, g.params.threshold);
                if occ.indices() != self.occluder_set.as_slice() {
                    self.v_est = Some(occlusion_matrices_with(g.grid, &occ, g.layout, g.params.blocking_distance)?);
                    self.occluder_set = occ.indices().to_vec();
                    self.occlusion_changed = true;
                }
            }
        }

        let row = self.trace_row(x_change);
        self.state.t += 1;
        Ok(row)
    }

    fn soft_channel(&self, rho: T) -> Result<(Array2<T>, Array2<T>)> {
        let dim = self.a.dim();
        let mut h = Array2::from_elem(dim, T::zero());
        let mut sh = Array2::from_elem(dim, T::zero());
        let st = &self.state;
        for k in 0..dim.0 / 2 {
            let (re, im) = (2 * k, 2 * k + 1);
            for s in 0..dim.1 {
                let parts = [
                    (self.a[[re, s]], st.q_bar[[re, s]], st.sigma_q[[re, s]]),
                    (self.a[[im, s]], st.q_bar[[im, s]], st.sigma_q[[im, s]]),
                ];
                let w = soft_weight(rho, &parts)?;
                (h[[re, s]], sh[[re, s]]) = soft_moments(w, parts[0].0);
                (h[[im, s]], sh[[im, s]]) = soft_moments(w, parts[1].0);
            }
        }
        Ok((h, sh))
    }

    fn complex_l1(&self, est: &Array1<T>) -> f64 {
        let inv = T::one() / self.state.scale;
        (0..self.y.len() / 2)
            .map(|k| {
                let re = (self.y[2 * k] - est[2 * k]) * inv;
                let im = (self.y[2 * k + 1] - est[2 * k + 1]) * inv;
                (re * re + im * im).sqrt().to_f64_lossy()
            })
            .sum()
    }

    /// Plug-in channel misfit `Σ_k |ĥ^S_k − (ĥ x̂)_k|` in measurement units.
    pub fn misfit(&self) -> f64 {
        self.complex_l1(&self.state.h_hat.dot(&self.state.x_hat))
    }

    /// `‖ĥ^S‖₁` over complex entries in measurement units.
    pub fn observation_l1(&self) -> f64 {
        self.complex_l1(&Array1::from_elem(self.y.len(), T::zero()))
    }

    fn trace_row(&self, x_change: f64) -> TraceRow {
        let mse = self.truth.map(|x| {
            let n = x.len().max(1) as f64;
            x.iter()
                .zip(&self.state.x_hat)
                .map(|(a, b)| {
                    let d = (*a - *b).to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                / n
        });
        TraceRow {
            t: self.state.t,
            misfit: self.misfit(),
            posterior_misfit: self.complex_l1(&self.state.h_bar_s),
            mse,
            occluded: self.v_est.as_ref().map_or(0, |v| v.combined_zero_count()),
            x_change,
        }
    }

    fn finite(&self) -> bool {
        self.state.x_hat.iter().chain(&self.state.sigma_x).all(|v| v.is_finite())
            && self.state.p_bar.iter().all(|v| v.is_finite())
    }

    /// Iterates until a stopping rule fires.
    pub fn run(mut self) -> Result<ReconstructionResult<T>> {
        let y_l1 = self.observation_l1();
        let tol = self.opts.eps_t.to_f64_lossy() * y_l1;
        let x_tol = self.opts.x_tol.to_f64_lossy();
        let mut trace: Vec<TraceRow> = Vec::new();
        let mut best: Option<(f64, Array1<T>, Array1<T>, Option<OcclusionMatrices>)> = None;
        let mut min_misfit = f64::INFINITY;
        let mut status = Status::MaxIterations;
        let mut last_finite: Option<(Array1<T>, Array1<T>, Option<OcclusionMatrices>)> = None;

        for _ in 0..self.opts.max_iter {
            let row = match self.step() {
                Ok(row) => row,
                Err(e) => {
                    warn!("solver step failed at t={}: {e}", self.state.t);
                    status = Status::NonFinite;
                    break;
                }
            };
            let misfit = row.misfit;
            let x_change = row.x_change;
            trace.push(row);
            if !self.finite() || !misfit.is_finite() {
                status = Status::NonFinite;
                break;
            }
            last_finite = Some((self.state.x_hat.clone(), self.state.sigma_x.clone(), self.v_est.clone()));
            if misfit < min_misfit {
                min_misfit = misfit;
                best = Some((misfit, self.state.x_hat.clone(), self.state.sigma_x.clone(), self.v_est.clone()));
            }
            if misfit > DIVERGENCE_FACTOR * min_misfit {
                status = Status::Diverged;
                break;
            }
            if misfit <= tol {
                status = Status::ChannelFit;
                break;
            }
            if x_change < x_tol && !self.occlusion_changed {
                status = Status::Converged;
                break;
            }
        }

        let iterations = trace.len();
        let converged = matches!(status, Status::Converged | Status::ChannelFit);
        let fallback = match status {
            Status::Diverged => best.map(|(_, x, sx, v)| (x, sx, v)),
            Status::NonFinite => last_finite,
            _ => None,
        };
        let (x_hat, sigma_x, v_est) = if converged || status == Status::MaxIterations {
            (self.state.x_hat, self.state.sigma_x, self.v_est)
        } else if let Some(found) = fallback {
            found
        } else {
            let n = self.sys.num_cols();
            (
                Array1::from_elem(n, self.prior.mean()),
                Array1::from_elem(n, self.prior.variance()),
                self.v_est,
            )
        };
        Ok(ReconstructionResult {
            x_hat: x_hat.to_vec(),
            sigma_x: sigma_x.to_vec(),
            v_est,
            trace,
            iterations,
            converged,
            status,
        })
    }
}

/// Plain GAMP over the free-space matrix.
pub fn run_gamp<T: Real>(
    system: &RealStackedSystem<T>,
    prior: &PriorParams<T>,
    opts: &SolverOptions<T>,
    truth: Option<&[T]>,
) -> Result<ReconstructionResult<T>> {
    let mut s = Solver::gamp(system, prior, opts)?;
    if let Some(x) = truth {
        s = s.with_truth(x)?;
    }
    s.run()
}

/// Occlusion-aware reconstruction with per-iteration geometric re-detection.
pub fn run_mvsvr<T: Real>(
    system: &RealStackedSystem<T>,
    grid: &VoxelGrid<T>,
    layout: &NodeLayout<T>,
    prior: &PriorParams<T>,
    occ_params: &OcclusionParams<T>,
    opts: &SolverOptions<T>,
    truth: Option<&[T]>,
) -> Result<ReconstructionResult<T>> {
    let geometry = Geometry { grid, layout, params: *occ_params };
    let mut s = Solver::mvsvr(system, geometry, prior, opts)?;
    if let Some(x) = truth {
        s = s.with_truth(x)?;
    }
    s.run()
}

/// Bilinear baseline with an independent Bernoulli blockage prior per channel entry.
pub fn run_bilinear<T: Real>(
    system: &RealStackedSystem<T>,
    prior: &PriorParams<T>,
    rho: T,
    opts: &SolverOptions<T>,
    truth: Option<&[T]>,
) -> Result<ReconstructionResult<T>> {
    let mut s = Solver::bilinear(system, prior, rho, opts)?;
    if let Some(x) = truth {
        s = s.with_truth(x)?;
    }
    s.run()
}
