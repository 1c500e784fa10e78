//! Voxelized sensing region, sparse scatterer fields and node placement.
//!
//! Voxels are addressed by a flat index in x-fastest row-major order:
//! `flat = ix + n_x * (iy + n_y * iz)`.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::num::Real;

const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    origin: Vec3<T>,
    extents: [T; 3],
    voxel_size: [T; 3],
    counts: [usize; 3],
}

impl<T: Real> VoxelGrid<T> {
    /// Discretizes the box `origin + [0, extents]` into voxels of `voxel_size`.
    pub fn new(origin: Vec3<T>, extents: [T; 3], voxel_size: [T; 3]) -> Result<Self> {
        let mut counts = [0usize; 3];
        for (axis, name) in ['x', 'y', 'z'].into_iter().enumerate() {
            let e = extents[axis].to_f64_lossy();
            let s = voxel_size[axis].to_f64_lossy();
            if !(e > 0.0 && s > 0.0 && e.is_finite() && s.is_finite()) {
                return Err(Error::invalid(format!(
                    "extent and voxel size along {name} must be positive and finite (got {e}, {s})"
                )));
            }
            let n = (e / s).round();
            if n < 1.0 || (n * s - e).abs() > DIVISIBILITY_TOL * e {
                return Err(Error::NonDivisibleExtent { axis: name, extent: e, size: s });
            }
            counts[axis] = n as usize;
        }
        Ok(Self { origin, extents, voxel_size, counts })
    }

    pub fn origin(&self) -> Vec3<T> {
        self.origin
    }

    pub fn extents(&self) -> [T; 3] {
        self.extents
    }

    pub fn voxel_size(&self) -> [T; 3] {
        self.voxel_size
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    /// Number of voxels `N_s`.
    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> T {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    /// Half of the voxel space diagonal; the default blocking distance.
    pub fn half_diagonal(&self) -> T {
        let [l, w, h] = self.voxel_size;
        T::lit(0.5) * (l * l + w * w + h * h).sqrt()
    }

    pub fn min_side(&self) -> T {
        let [l, w, h] = self.voxel_size;
        l.min(w).min(h)
    }

    pub fn diagonal(&self) -> T {
        T::lit(2.0) * self.half_diagonal()
    }

    pub fn coords(&self, index: usize) -> Result<[usize; 3]> {
        self.check(index)?;
        let [nx, ny, _] = self.counts;
        Ok([index % nx, (index / nx) % ny, index / (nx * ny)])
    }

    pub fn flat_index(&self, coords: [usize; 3]) -> Result<usize> {
        let [nx, ny, nz] = self.counts;
        let [ix, iy, iz] = coords;
        if ix >= nx || iy >= ny || iz >= nz {
            return Err(Error::IndexOutOfRange { index: ix + nx * (iy + ny * iz), len: self.len() });
        }
        Ok(ix + nx * (iy + ny * iz))
    }

    pub fn voxel_center(&self, index: usize) -> Result<Vec3<T>> {
        let [ix, iy, iz] = self.coords(index)?;
        Ok(self.center_of(ix, iy, iz))
    }

    fn center_of(&self, ix: usize, iy: usize, iz: usize) -> Vec3<T> {
        let half = T::lit(0.5);
        let [l, w, h] = self.voxel_size;
        self.origin
            + Vec3::new(
                (T::from_usize_lossy(ix) + half) * l,
                (T::from_usize_lossy(iy) + half) * w,
                (T::from_usize_lossy(iz) + half) * h,
            )
    }

    /// All voxel centers in flat-index order.
    pub fn centers(&self) -> Vec<Vec3<T>> {
        let [nx, ny, nz] = self.counts;
        let mut out = Vec::with_capacity(self.len());
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    out.push(self.center_of(ix, iy, iz));
                }
            }
        }
        out
    }

    /// Whether `p` lies inside the closed region box.
    pub fn contains(&self, p: Vec3<T>) -> bool {
        let lo = self.origin;
        let hi = self.origin + Vec3::from_array(self.extents);
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange { index, len: self.len() });
        }
        Ok(())
    }
}

/// Ground-truth (or estimated) scattering coefficients over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterField<T> {
    grid: VoxelGrid<T>,
    x: Vec<T>,
}

impl<T: Real> ScatterField<T> {
    pub fn new(grid: VoxelGrid<T>, x: Vec<T>) -> Result<Self> {
        if x.len() != grid.len() {
            return Err(Error::LengthMismatch(format!(
                "field has {} coefficients for {} voxels",
                x.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, x })
    }

    pub fn empty(grid: VoxelGrid<T>) -> Self {
        let n = grid.len();
        Self { grid, x: vec![T::zero(); n] }
    }

    pub fn grid(&self) -> &VoxelGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.x
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.x
    }

    pub fn into_values(self) -> Vec<T> {
        self.x
    }

    /// `‖x‖₀`.
    pub fn support_size(&self) -> usize {
        self.x.iter().filter(|v| **v != T::zero()).count()
    }
}

/// Spike-and-slab prior plus the occlusion threshold and observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams<T> {
    /// Probability that a voxel is occupied (λ).
    pub sparsity: T,
    /// Slab mean θ^x.
    pub slab_mean: T,
    /// Slab variance σ^x0.
    pub slab_var: T,
    /// Coefficient above which a voxel acts as an occluder (η).
    pub occlusion_threshold: T,
    /// Observation noise variance σ^w.
    pub noise_var: T,
}

impl<T: Real> PriorParams<T> {
    /// Prior with the default threshold `η = θ^x / 4` and no observation noise.
    pub fn new(sparsity: T, slab_mean: T, slab_var: T) -> Result<Self> {
        Self {
            sparsity,
            slab_mean,
            slab_var,
            occlusion_threshold: slab_mean / T::lit(4.0),
            noise_var: T::zero(),
        }
        .validated()
    }

    pub fn with_threshold(mut self, eta: T) -> Result<Self> {
        self.occlusion_threshold = eta;
        self.validated()
    }

    pub fn with_noise_var(mut self, noise_var: T) -> Result<Self> {
        self.noise_var = noise_var;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let zero = T::zero();
        if !(self.sparsity >= zero && self.sparsity <= T::one()) {
            return Err(Error::invalid(format!("sparsity must lie in [0, 1], got {}", self.sparsity)));
        }
        if !(self.slab_var > zero) || !self.slab_mean.is_finite() {
            return Err(Error::invalid("slab variance must be positive and slab mean finite"));
        }
        if !(self.noise_var >= zero) {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        if !(self.occlusion_threshold > zero) {
            return Err(Error::invalid("occlusion threshold must be positive"));
        }
        Ok(self)
    }

    /// Prior mean `λθ^x`.
    pub fn mean(&self) -> T {
        self.sparsity * self.slab_mean
    }

    /// Prior variance `λ(σ^x0 + θ²) − (λθ)²`.
    pub fn variance(&self) -> T {
        let m = self.mean();
        self.sparsity * (self.slab_var + self.slab_mean * self.slab_mean) - m * m
    }
}

impl<T: Real> Default for PriorParams<T> {
    fn default() -> Self {
        Self::new(T::lit(0.05), T::lit(0.5), T::lit(0.04)).expect("default prior is valid")
    }
}

/// How many voxels carry a scatterer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScattererSpec<T> {
    /// Exactly this many voxels, placed uniformly without replacement.
    Count(usize),
    /// Each voxel independently occupied with this probability.
    Rate(T),
}

const MAX_REJECTIONS: usize = 10_000;

/// Draws one slab coefficient truncated to `[0, 1]` by rejection.
pub fn sample_coefficient<T: Real, R: Rng + ?Sized>(prior: &PriorParams<T>, rng: &mut R) -> T {
    let mean = prior.slab_mean.to_f64_lossy();
    let sd = prior.slab_var.to_f64_lossy().sqrt();
    let mut last = mean;
    for _ in 0..MAX_REJECTIONS {
        let z: f64 = StandardNormal.sample(rng);
        last = mean + sd * z;
        if (0.0..=1.0).contains(&last) {
            return T::lit(last);
        }
    }
    // slab essentially outside [0, 1]; fall back to the nearest admissible value
    T::lit(last.clamp(0.0, 1.0))
}

/// Samples a sparse field; deterministic for a given RNG state.
pub fn sample_scene<T: Real, R: Rng + ?Sized>(
    grid: &VoxelGrid<T>,
    prior: &PriorParams<T>,
    spec: ScattererSpec<T>,
    rng: &mut R,
) -> Result<ScatterField<T>> {
    let n = grid.len();
    let mut x = vec![T::zero(); n];
    match spec {
        ScattererSpec::Count(count) => {
            if count > n {
                return Err(Error::TooManyScatterers { requested: count, capacity: n });
            }
            for i in index::sample(rng, n, count) {
                x[i] = sample_coefficient(prior, rng);
            }
        }
        ScattererSpec::Rate(rate) => {
            let p = rate.to_f64_lossy();
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("scatterer rate must lie in [0, 1], got {p}")));
            }
            for v in x.iter_mut() {
                if rng.random::<f64>() < p {
                    *v = sample_coefficient(prior, rng);
                }
            }
        }
    }
    ScatterField::new(grid.clone(), x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Antenna<T> {
    pub position: Vec3<T>,
    /// Zero-based id of the base station the antenna belongs to.
    pub bs: usize,
}

/// User and receive-antenna positions, antennas grouped by base station.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout<T> {
    users: Vec<Vec3<T>>,
    antennas: Vec<Antenna<T>>,
}

impl<T: Real> NodeLayout<T> {
    pub fn new(users: Vec<Vec3<T>>, antennas: Vec<Antenna<T>>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::invalid("layout needs at least one user"));
        }
        if antennas.is_empty() {
            return Err(Error::invalid("layout needs at least one receive antenna"));
        }
        Ok(Self { users, antennas })
    }

    pub fn users(&self) -> &[Vec3<T>] {
        &self.users
    }

    pub fn antennas(&self) -> &[Antenna<T>] {
        &self.antennas
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.antennas.len()
    }

    /// Number of distinct base stations.
    pub fn num_bs(&self) -> usize {
        let mut ids: Vec<usize> = self.antennas.iter().map(|a| a.bs).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// `N_H = N_u · N_R`.
    pub fn num_measurements(&self) -> usize {
        self.users.len() * self.antennas.len()
    }
}

/// Uniform planar array centered at `center`, elements on the x-z plane.
pub fn uniform_array<T: Real>(center: Vec3<T>, rows: usize, cols: usize, spacing: T, bs: usize) -> Vec<Antenna<T>> {
    let half = T::lit(0.5);
    let ox = (T::from_usize_lossy(rows) - T::one()) * half;
    let oz = (T::from_usize_lossy(cols) - T::one()) * half;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let dx = (T::from_usize_lossy(r) - ox) * spacing;
            let dz = (T::from_usize_lossy(c) - oz) * spacing;
            out.push(Antenna { position: center + Vec3::new(dx, T::zero(), dz), bs });
        }
    }
    out
}

/// Uniform point in the shell that extends the region by one region width on
/// both horizontal axes (same vertical span), excluding the region itself.
pub fn sample_in_shell<T: Real, R: Rng + ?Sized>(grid: &VoxelGrid<T>, rng: &mut R) -> Vec3<T> {
    let o = grid.origin().cast::<f64>();
    let [l, w, h] = grid.extents().map(|e| e.to_f64_lossy());
    loop {
        let p = Vec3::new(
            o.x - l + 3.0 * l * rng.random::<f64>(),
            o.y - w + 3.0 * w * rng.random::<f64>(),
            o.z + h * rng.random::<f64>(),
        );
        let inside = p.x >= o.x && p.x <= o.x + l && p.y >= o.y && p.y <= o.y + w;
        if !inside {
            return p.cast();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn reference_grid() -> VoxelGrid<f64> {
        VoxelGrid::new(Vec3::zero(), [5.0; 3], [0.5; 3]).unwrap()
    }

    #[test]
    fn reference_region_has_thousand_voxels() {
        assert_eq!(reference_grid().len(), 1000);
        assert_eq!(reference_grid().counts(), [10, 10, 10]);
    }

    #[test]
    fn single_voxel_center() {
        let g = VoxelGrid::new(Vec3::new(1.0, 2.0, 3.0), [1.0; 3], [1.0; 3]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.voxel_center(0).unwrap(), Vec3::new(1.5, 2.5, 3.5));
    }

    #[test]
    fn x_fastest_order() {
        let g = VoxelGrid::new(Vec3::zero(), [2.0, 1.0, 1.0], [0.5, 1.0, 1.0]).unwrap();
        assert_eq!(g.len(), 4);
        for i in 0..4 {
            assert_eq!(g.coords(i).unwrap(), [i, 0, 0]);
        }
    }

    #[test]
    fn voxel_centers_on_reference_grid() {
        let g = reference_grid();
        assert_eq!(g.voxel_center(0).unwrap(), Vec3::new(0.25, 0.25, 0.25));
        assert_eq!(g.voxel_center(1).unwrap(), Vec3::new(0.75, 0.25, 0.25));
        assert_eq!(g.voxel_center(999).unwrap(), Vec3::new(4.75, 4.75, 4.75));
        assert!(matches!(g.voxel_center(1000), Err(Error::IndexOutOfRange { index: 1000, len: 1000 })));
    }

    #[test]
    fn non_divisible_extent_names_axis() {
        let err = VoxelGrid::new(Vec3::zero(), [5.0, 5.2, 5.0], [0.5; 3]).unwrap_err();
        assert!(matches!(err, Error::NonDivisibleExtent { axis: 'y', .. }));
    }

    #[test]
    fn centers_strictly_inside_and_round_trip() {
        let g = VoxelGrid::new(Vec3::new(-1.0, 0.0, 2.0), [3.0, 2.0, 1.0], [0.5, 0.25, 0.5]).unwrap();
        let centers = g.centers();
        for (i, c) in centers.iter().enumerate() {
            assert_eq!(g.flat_index(g.coords(i).unwrap()).unwrap(), i);
            assert_eq!(*c, g.voxel_center(i).unwrap());
            assert!(c.x > -1.0 && c.x < 2.0 && c.y > 0.0 && c.y < 2.0 && c.z > 2.0 && c.z < 3.0);
        }
    }

    #[test]
    fn zero_count_gives_empty_field() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let f = sample_scene(&reference_grid(), &PriorParams::default(), ScattererSpec::Count(0), &mut rng).unwrap();
        assert_eq!(f.support_size(), 0);
    }

    #[test]
    fn degenerate_slab_pins_coefficients() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let prior = PriorParams::new(1.0, 0.5, 1e-14).unwrap();
        let f = sample_scene(&reference_grid(), &prior, ScattererSpec::Rate(1.0), &mut rng).unwrap();
        assert!(f.values().iter().all(|v| (v - 0.5).abs() < 1e-5));
    }

    #[test]
    fn fifty_scatterers_seed_seven() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let f = sample_scene(&reference_grid(), &PriorParams::default(), ScattererSpec::Count(50), &mut rng).unwrap();
        assert_eq!(f.support_size(), 50);
        assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn count_above_capacity_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let err = sample_scene(&reference_grid(), &PriorParams::default(), ScattererSpec::Count(1001), &mut rng);
        assert!(matches!(err, Err(Error::TooManyScatterers { requested: 1001, capacity: 1000 })));
    }

    #[test]
    fn same_seed_same_scene() {
        let draw = || {
            let mut rng = ChaCha20Rng::seed_from_u64(42);
            sample_scene(&reference_grid(), &PriorParams::default(), ScattererSpec::Count(80), &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn prior_validation() {
        assert!(PriorParams::new(1.5, 0.5, 0.04).is_err());
        assert!(PriorParams::new(0.1, 0.5, 0.0).is_err());
        assert!(PriorParams::<f64>::default().with_noise_var(-1.0).is_err());
        assert_eq!(PriorParams::<f64>::default().occlusion_threshold, 0.125);
    }

    #[test]
    fn array_is_centered() {
        let ants = uniform_array(Vec3::new(1.0, 1.0, 1.0), 5, 5, 0.005, 0);
        assert_eq!(ants.len(), 25);
        let mean = ants.iter().fold(Vec3::zero(), |acc, a| acc + a.position) * (1.0 / 25.0);
        assert!(mean.distance(Vec3::new(1.0, 1.0, 1.0)) < 1e-12);
    }

    #[test]
    fn shell_samples_are_outside_region() {
        let g = reference_grid();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = sample_in_shell(&g, &mut rng);
            assert!(!(p.x >= 0.0 && p.x <= 5.0 && p.y >= 0.0 && p.y <= 5.0));
            assert!(p.x >= -5.0 && p.x <= 10.0 && p.z >= 0.0 && p.z <= 5.0);
        }
    }
}
