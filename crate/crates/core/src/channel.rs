//! Free-space propagation, the occluded single-bounce multipath channel and
//! its real-valued stacking for the solvers.
//!
//! Measurements are ordered antenna-major: the complex measurement for user
//! `n_u` at antenna `n_R` sits at `k = n_R · N_u + n_u`. In the real system,
//! row `2k` holds the real part and row `2k + 1` the imaginary part.

use std::io::Write;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::occlusion::OcclusionMatrices;
use crate::scene::{NodeLayout, ScatterField, VoxelGrid};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn wavelength<T: Real>(fc: T) -> T {
    T::lit(SPEED_OF_LIGHT) / fc
}

/// Free-space coefficient `α e^{jφ}` with `α = λc / (4πd)` and `φ = −2πd / λc`.
pub fn free_space_coeff<T: Real>(d: T, fc: T) -> Result<Complex<T>> {
    if !(d > T::zero()) {
        return Err(Error::CoincidentNodes(d.to_f64_lossy()));
    }
    let lambda = wavelength(fc);
    let two_pi = T::lit(2.0) * T::PI();
    let alpha = lambda / (T::lit(2.0) * two_pi * d);
    // reduce the phase before evaluating sin/cos to keep f32 accurate
    let cycles = d / lambda;
    let frac = cycles - cycles.floor();
    Ok(Complex::from_polar(alpha, -two_pi * frac))
}

#[derive(Debug, Clone)]
pub struct ChannelEnsemble<T> {
    /// `H^{U→s}`, `N_u × N_s`.
    pub user_voxel: Array2<Complex<T>>,
    /// `H^{s→B}`, `N_s × N_R`.
    pub voxel_antenna: Array2<Complex<T>>,
    pub occlusion: OcclusionMatrices,
    /// Noise-free multipath vector `H^S`, length `N_H`.
    pub h_s: Array1<Complex<T>>,
    /// Noisy observation of `H^S`, once observed.
    pub h_s_hat: Option<Array1<Complex<T>>>,
    /// Noise variance per complex entry.
    pub noise_var: T,
    pub fc: T,
}

impl<T: Real> ChannelEnsemble<T> {
    pub fn num_users(&self) -> usize {
        self.user_voxel.nrows()
    }

    pub fn num_voxels(&self) -> usize {
        self.user_voxel.ncols()
    }

    pub fn num_antennas(&self) -> usize {
        self.voxel_antenna.ncols()
    }

    pub fn num_measurements(&self) -> usize {
        self.num_users() * self.num_antennas()
    }

    /// Free-space product `H(n_R)[n_u, n_s]`.
    #[inline]
    pub fn free_space(&self, n_u: usize, n_s: usize, n_r: usize) -> Complex<T> {
        self.user_voxel[[n_u, n_s]] * self.voxel_antenna[[n_s, n_r]]
    }

    /// Free-space matrix `H(n_R) = H^{U→s} diag(H^{s→B}(n_R))`.
    pub fn free_space_matrix(&self, n_r: usize) -> Array2<Complex<T>> {
        let col = self.voxel_antenna.column(n_r);
        let mut out = self.user_voxel.clone();
        for mut row in out.rows_mut() {
            row.zip_mut_with(&col, |h, g| *h = *h * *g);
        }
        out
    }

    /// Stacked free-space matrix, `N_H × N_s`, antenna-major rows.
    pub fn stacked_free_space(&self) -> Array2<Complex<T>> {
        let (n_u, n_s, n_r) = (self.num_users(), self.num_voxels(), self.num_antennas());
        Array2::from_shape_fn((n_u * n_r, n_s), |(k, s)| self.free_space(k % n_u, s, k / n_u))
    }

    /// `H_S` recomputed for another coefficient vector with this ensemble's occlusion.
    pub fn forward(&self, x: &[T]) -> Array1<Complex<T>> {
        forward_model(&self.user_voxel, &self.voxel_antenna, &self.occlusion, x)
    }

    /// Observation dump: `n_u,n_R,re,im` of `Ĥ^S`.
    pub fn write_observation_csv<W: Write>(&self, w: W) -> Result<()> {
        let obs = self.h_s_hat.as_ref().ok_or(Error::MissingObservation)?;
        let n_u = self.num_users();
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n_u", "n_R", "re", "im"])?;
        for (k, h) in obs.iter().enumerate() {
            wtr.write_record([
                (k % n_u).to_string(),
                (k / n_u).to_string(),
                format!("{:e}", h.re),
                format!("{:e}", h.im),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Channel dump: `n_u,n_R,n_s,re,im,v` for every free-space coefficient.
    pub fn write_channel_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n_u", "n_R", "n_s", "re", "im", "v"])?;
        for n_r in 0..self.num_antennas() {
            for n_u in 0..self.num_users() {
                for n_s in 0..self.num_voxels() {
                    let h = self.free_space(n_u, n_s, n_r);
                    let v = self.occlusion.combined(n_u, n_s, n_r) as u8;
                    wtr.write_record([
                        n_u.to_string(),
                        n_r.to_string(),
                        n_s.to_string(),
                        format!("{:e}", h.re),
                        format!("{:e}", h.im),
                        v.to_string(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn forward_model<T: Real>(
    user_voxel: &Array2<Complex<T>>,
    voxel_antenna: &Array2<Complex<T>>,
    occ: &OcclusionMatrices,
    x: &[T],
) -> Array1<Complex<T>> {
    let (n_u, n_s) = user_voxel.dim();
    let n_r = voxel_antenna.ncols();
    let zero = Complex::new(T::zero(), T::zero());
    let h: Vec<Complex<T>> = (0..n_u * n_r)
        .into_par_iter()
        .map(|k| {
            let (u, r) = (k % n_u, k / n_u);
            let mut acc = zero;
            for s in 0..n_s {
                if x[s] != T::zero() && occ.combined(u, s, r) {
                    acc = acc + user_voxel[[u, s]] * voxel_antenna[[s, r]] * x[s];
                }
            }
            acc
        })
        .collect();
    Array1::from(h)
}

/// Builds per-hop free-space matrices and `H^S = [H(n_R) ⊙ V(n_R)] x` for all antennas.
pub fn build_channels<T: Real>(
    grid: &VoxelGrid<T>,
    field: &ScatterField<T>,
    layout: &NodeLayout<T>,
    occ: &OcclusionMatrices,
    fc: T,
) -> Result<ChannelEnsemble<T>> {
    let n_s = grid.len();
    if field.values().len() != n_s
        || occ.num_voxels() != n_s
        || occ.num_users() != layout.num_users()
        || occ.num_antennas() != layout.num_antennas()
    {
        return Err(Error::LengthMismatch("grid, field, layout and occlusion sizes disagree".into()));
    }
    if !(fc > T::zero()) {
        return Err(Error::invalid("carrier frequency must be positive"));
    }
    let centers = grid.centers();
    let mut user_voxel = Array2::from_elem((layout.num_users(), n_s), Complex::new(T::zero(), T::zero()));
    for (u, pos) in layout.users().iter().enumerate() {
        for (s, c) in centers.iter().enumerate() {
            user_voxel[[u, s]] = free_space_coeff(pos.distance(*c), fc)?;
        }
    }
    let mut voxel_antenna = Array2::from_elem((n_s, layout.num_antennas()), Complex::new(T::zero(), T::zero()));
    for (r, ant) in layout.antennas().iter().enumerate() {
        for (s, c) in centers.iter().enumerate() {
            voxel_antenna[[s, r]] = free_space_coeff(ant.position.distance(*c), fc)?;
        }
    }
    let h_s = forward_model(&user_voxel, &voxel_antenna, occ, field.values());
    Ok(ChannelEnsemble {
        user_voxel,
        voxel_antenna,
        occlusion: occ.clone(),
        h_s,
        h_s_hat: None,
        noise_var: T::zero(),
        fc,
    })
}

/// Noise variance for a target SNR (dB) against the mean multipath power.
pub fn noise_variance_for_snr<T: Real>(h_s: &Array1<Complex<T>>, snr_db: T) -> Result<T> {
    if snr_db == T::infinity() {
        return Ok(T::zero());
    }
    let power = h_s.iter().map(|h| h.norm_sqr()).sum::<T>() / T::from_usize_lossy(h_s.len().max(1));
    if !(power > T::zero()) {
        return Err(Error::ZeroSignal);
    }
    Ok(power * T::lit(10.0).powf(-snr_db / T::lit(10.0)))
}

fn complex_gaussian<T: Real, R: Rng + ?Sized>(var: T, rng: &mut R) -> Complex<T> {
    let sd = (var.to_f64_lossy() / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(T::lit(sd * re), T::lit(sd * im))
}

/// Adds circularly-symmetric complex Gaussian noise at `snr_db` (E_b/N_0 against
/// the mean `|H^S|²`); an infinite SNR copies `H^S` exactly.
pub fn observe<T: Real, R: Rng + ?Sized>(mut ens: ChannelEnsemble<T>, snr_db: T, rng: &mut R) -> Result<ChannelEnsemble<T>> {
    let var = noise_variance_for_snr(&ens.h_s, snr_db)?;
    let obs = if var == T::zero() {
        ens.h_s.clone()
    } else {
        ens.h_s.mapv(|h| h + complex_gaussian(var, rng))
    };
    ens.noise_var = var;
    ens.h_s_hat = Some(obs);
    Ok(ens)
}

/// Orthonormal pilot codebook: the first `users` columns of the unitary DFT of size `pilot_len`.
pub fn pilot_codebook<T: Real>(pilot_len: usize, users: usize) -> Array2<Complex<T>> {
    let scale = T::one() / T::from_usize_lossy(pilot_len).sqrt();
    let n = T::from_usize_lossy(pilot_len);
    Array2::from_shape_fn((pilot_len, users), |(t, u)| {
        let ang = -T::lit(2.0) * T::PI() * T::from_usize_lossy((t * u) % pilot_len) / n;
        Complex::from_polar(scale, ang)
    })
}

/// Least-squares channel estimation from orthonormal pilots `Y = S H^S + W`.
///
/// The residual per-entry error variance equals the pilot noise variance and
/// is reported as the ensemble's `noise_var`.
pub fn pilot_estimate<T: Real, R: Rng + ?Sized>(
    mut ens: ChannelEnsemble<T>,
    pilot_len: usize,
    snr_db: T,
    rng: &mut R,
) -> Result<ChannelEnsemble<T>> {
    let n_u = ens.num_users();
    if pilot_len <= n_u {
        return Err(Error::PilotTooShort { pilot_len, users: n_u });
    }
    let var = noise_variance_for_snr(&ens.h_s, snr_db)?;
    let s = pilot_codebook::<T>(pilot_len, n_u);
    let zero = Complex::new(T::zero(), T::zero());
    let mut est = Array1::from_elem(ens.num_measurements(), zero);
    for n_r in 0..ens.num_antennas() {
        let h = ens.h_s.slice(ndarray::s![n_r * n_u..(n_r + 1) * n_u]);
        let mut y = s.dot(&h);
        if var > T::zero() {
            y.mapv_inplace(|v| v + complex_gaussian(var, rng));
        }
        // S^H S = I, so the LS solution is S^H y
        for u in 0..n_u {
            let mut acc = zero;
            for t in 0..pilot_len {
                acc = acc + s[[t, u]].conj() * y[t];
            }
            est[n_r * n_u + u] = acc;
        }
    }
    ens.noise_var = var;
    ens.h_s_hat = Some(est);
    Ok(ens)
}

/// Real embedding of the complex measurement system.
#[derive(Debug, Clone)]
pub struct RealStackedSystem<T> {
    /// `[Re ĥ_0, Im ĥ_0, Re ĥ_1, …]`, length `2 N_H`.
    pub y: Array1<T>,
    /// Free-space matrix with interleaved real/imaginary rows, `2 N_H × N_s`.
    pub a_free: Array2<T>,
    /// Partner row sharing the same complex measurement.
    pub pair_map: Vec<usize>,
    /// Noise variance per real component (`σ^w / 2`).
    pub noise_var: T,
    pub num_users: usize,
    pub num_antennas: usize,
}

impl<T: Real> RealStackedSystem<T> {
    pub fn num_rows(&self) -> usize {
        self.y.len()
    }

    pub fn num_cols(&self) -> usize {
        self.a_free.ncols()
    }

    /// Complex measurement index `k` of a real row.
    #[inline]
    pub fn complex_index(row: usize) -> usize {
        row / 2
    }

    /// Recovers the complex observation and free-space matrix.
    pub fn to_complex(&self) -> (Array1<Complex<T>>, Array2<Complex<T>>) {
        let n_h = self.num_rows() / 2;
        let y = Array1::from_shape_fn(n_h, |k| Complex::new(self.y[2 * k], self.y[2 * k + 1]));
        let a = Array2::from_shape_fn((n_h, self.num_cols()), |(k, s)| {
            Complex::new(self.a_free[[2 * k, s]], self.a_free[[2 * k + 1, s]])
        });
        (y, a)
    }

    /// Builds a stacked system directly from a complex matrix and observation.
    pub fn from_complex(
        y: &Array1<Complex<T>>,
        a: &Array2<Complex<T>>,
        complex_noise_var: T,
        num_users: usize,
        num_antennas: usize,
    ) -> Result<Self> {
        let n_h = y.len();
        if a.nrows() != n_h {
            return Err(Error::LengthMismatch(format!("{} measurements for a {}-row matrix", n_h, a.nrows())));
        }
        if num_users * num_antennas != n_h {
            return Err(Error::LengthMismatch("N_u · N_R must equal the number of measurements".into()));
        }
        let yr = Array1::from_shape_fn(2 * n_h, |i| if i % 2 == 0 { y[i / 2].re } else { y[i / 2].im });
        let ar = Array2::from_shape_fn((2 * n_h, a.ncols()), |(i, s)| {
            let h = a[[i / 2, s]];
            if i % 2 == 0 {
                h.re
            } else {
                h.im
            }
        });
        Ok(Self {
            y: yr,
            a_free: ar,
            pair_map: (0..2 * n_h).map(|i| i ^ 1).collect(),
            noise_var: complex_noise_var / T::lit(2.0),
            num_users,
            num_antennas,
        })
    }
}

/// Stacks `Ĥ^S` and the free-space matrix into a real system.
pub fn stack_real<T: Real>(ens: &ChannelEnsemble<T>) -> Result<RealStackedSystem<T>> {
    let obs = ens.h_s_hat.as_ref().ok_or(Error::MissingObservation)?;
    RealStackedSystem::from_complex(
        obs,
        &ens.stacked_free_space(),
        ens.noise_var,
        ens.num_users(),
        ens.num_antennas(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::scene::Antenna;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const FC: f64 = 30e9;

    #[test]
    fn unit_amplitude_distance() {
        let lambda = SPEED_OF_LIGHT / FC;
        let h = free_space_coeff(lambda / (4.0 * std::f64::consts::PI), FC).unwrap();
        assert!((h.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn whole_wavelengths_have_zero_phase() {
        let lambda = SPEED_OF_LIGHT / FC;
        for k in [1.0, 7.0, 123.0] {
            let h = free_space_coeff(k * lambda, FC).unwrap();
            let phase = h.arg().rem_euclid(2.0 * std::f64::consts::PI);
            assert!(phase.min(2.0 * std::f64::consts::PI - phase) < 1e-6, "phase {phase}");
        }
    }

    #[test]
    fn ten_meter_amplitude() {
        // λc / (4π d) with λc = 299792458 / 30e9 and d = 10
        let expected = (299_792_458.0 / 30e9) / (4.0 * std::f64::consts::PI * 10.0);
        let h = free_space_coeff(10.0, FC).unwrap();
        assert!((h.norm() - expected).abs() < 1e-18);
        assert!((h.norm() - 7.95e-5).abs() < 5e-8);
    }

    #[test]
    fn coincident_nodes_rejected() {
        assert!(matches!(free_space_coeff(0.0, FC), Err(Error::CoincidentNodes(_))));
    }

    fn single_voxel() -> (VoxelGrid<f64>, NodeLayout<f64>) {
        let g = VoxelGrid::new(Vec3::zero(), [1.0; 3], [1.0; 3]).unwrap();
        let layout = NodeLayout::new(
            vec![Vec3::new(-2.0, 0.5, 0.5)],
            vec![Antenna { position: Vec3::new(0.5, 4.0, 0.5), bs: 0 }],
        )
        .unwrap();
        (g, layout)
    }

    #[test]
    fn single_voxel_channel_is_two_hop_product() {
        let (g, layout) = single_voxel();
        let f = ScatterField::new(g.clone(), vec![0.7]).unwrap();
        let occ = OcclusionMatrices::all_clear(1, 1, 1);
        let ens = build_channels(&g, &f, &layout, &occ, FC).unwrap();
        let c = g.voxel_center(0).unwrap();
        let h1 = free_space_coeff(layout.users()[0].distance(c), FC).unwrap();
        let h2 = free_space_coeff(layout.antennas()[0].position.distance(c), FC).unwrap();
        assert!((ens.h_s[0] - h1 * h2 * 0.7).norm() < 1e-20);
        assert!((ens.free_space(0, 0, 0).norm() - h1.norm() * h2.norm()).abs() < 1e-20);
    }

    #[test]
    fn zero_field_zero_channel() {
        let (g, layout) = single_voxel();
        let f = ScatterField::empty(g.clone());
        let occ = OcclusionMatrices::all_clear(1, 1, 1);
        let ens = build_channels(&g, &f, &layout, &occ, FC).unwrap();
        assert_eq!(ens.h_s[0], Complex::new(0.0, 0.0));
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(observe(ens, 20.0, &mut rng), Err(Error::ZeroSignal)));
    }

    #[test]
    fn stacking_layout() {
        let y = Array1::from(vec![Complex::new(1.0, -2.0)]);
        let a = Array2::from_shape_vec((1, 2), vec![Complex::new(3.0, 0.0), Complex::new(4.0, 0.0)]).unwrap();
        let sys = RealStackedSystem::from_complex(&y, &a, 0.2, 1, 1).unwrap();
        assert_eq!(sys.y.to_vec(), vec![1.0, -2.0]);
        assert_eq!(sys.a_free.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(sys.pair_map, vec![1, 0]);
        assert_eq!(sys.noise_var, 0.1);
        let (y2, a2) = sys.to_complex();
        assert_eq!(y2, y);
        assert_eq!(a2, a);
    }

    #[test]
    fn pilot_precondition() {
        let (g, layout) = single_voxel();
        let f = ScatterField::new(g.clone(), vec![0.7]).unwrap();
        let occ = OcclusionMatrices::all_clear(1, 1, 1);
        let ens = build_channels(&g, &f, &layout, &occ, FC).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(pilot_estimate(ens, 1, 20.0, &mut rng), Err(Error::PilotTooShort { .. })));
    }

    #[test]
    fn codebook_is_orthonormal() {
        let s = pilot_codebook::<f64>(8, 5);
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = Complex::new(0.0, 0.0);
                for t in 0..8 {
                    acc += s[[t, i]].conj() * s[[t, j]];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - Complex::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }
}
