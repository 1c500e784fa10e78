//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use mvsense::channel::{build_channels, observe, stack_real, RealStackedSystem};
use mvsense::occlusion::{occlusion_matrices, OcclusionMatrices, OcclusionParams};
use mvsense::scene::{uniform_array, Antenna, NodeLayout, PriorParams, ScatterField, VoxelGrid};
use mvsense::Vec3;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn reference_grid() -> VoxelGrid<f64> {
    VoxelGrid::new(Vec3::zero(), [5.0; 3], [0.5; 3]).unwrap()
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // split into panels so narrow peaks are never missed by the first estimate
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// Posterior mean and variance of the spike-and-slab prior under a Gaussian
/// pseudo-observation, by quadrature of the slab part plus the spike mass.
pub fn spike_slab_posterior(r: f64, sr: f64, lambda: f64, theta: f64, s0: f64) -> (f64, f64) {
    let slab = |x: f64| lambda * normal_pdf(x, theta, s0) * normal_pdf(r, x, sr);
    let (lo, hi) = (-2.0, 3.0);
    let tol = 1e-14;
    let z_slab = integrate(&slab, lo, hi, tol);
    let m1 = integrate(&|x| x * slab(x), lo, hi, tol);
    let m2 = integrate(&|x| x * x * slab(x), lo, hi, tol);
    let z = z_slab + (1.0 - lambda) * normal_pdf(r, 0.0, sr);
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Blocking test through the projection `t = c·b / |b|²`, `d = |c − t b|`.
pub fn blocks_projection(a: Vec3<f64>, b_point: Vec3<f64>, c_point: Vec3<f64>, l: f64) -> bool {
    let b = [b_point.x - a.x, b_point.y - a.y, b_point.z - a.z];
    let c = [c_point.x - a.x, c_point.y - a.y, c_point.z - a.z];
    let bb = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
    let cb = c[0] * b[0] + c[1] * b[1] + c[2] * b[2];
    let t = cb / bb;
    let d = ((c[0] - t * b[0]).powi(2) + (c[1] - t * b[1]).powi(2) + (c[2] - t * b[2]).powi(2)).sqrt();
    d < l && t > 0.0 && t < 1.0
}

/// Occlusion matrices by looping over every (path, voxel) pair.
pub fn brute_force_occlusion(field: &ScatterField<f64>, layout: &NodeLayout<f64>, l: f64, eta: f64) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let grid = field.grid();
    let x = field.values();
    let centers = grid.centers();
    let clear = |a: Vec3<f64>, b: Vec3<f64>, own: usize| {
        (0..x.len()).all(|c| c == own || x[c] <= eta || !blocks_projection(a, b, centers[c], l))
    };
    let user = layout.users().iter().map(|u| (0..x.len()).map(|s| clear(*u, centers[s], s)).collect()).collect();
    let bs = (0..x.len())
        .map(|s| layout.antennas().iter().map(|a| clear(centers[s], a.position, s)).collect())
        .collect();
    (user, bs)
}

pub fn free_space(d: f64, fc: f64) -> Complex64 {
    let lc = 299_792_458.0 / fc;
    Complex64::from_polar(lc / (4.0 * std::f64::consts::PI * d), -2.0 * std::f64::consts::PI * d / lc)
}

/// `H^S` entry for (user, antenna) by summing over voxels.
pub fn brute_force_channel(
    field: &ScatterField<f64>,
    layout: &NodeLayout<f64>,
    occ: &OcclusionMatrices,
    fc: f64,
) -> Vec<Complex64> {
    let centers = field.grid().centers();
    let x = field.values();
    let mut out = Vec::new();
    for (r, ant) in layout.antennas().iter().enumerate() {
        for (u, user) in layout.users().iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..x.len() {
                if occ.user[[u, s]] && occ.bs[[s, r]] {
                    acc += free_space(user.distance(centers[s]), fc) * free_space(centers[s].distance(ant.position), fc) * x[s];
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Best least-squares fit over every support of size `k`, returning the
/// residual norms of the best and second-best support.
pub fn exhaustive_support(a: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> (Vec<usize>, DVector<f64>, f64, f64) {
    let n = a.ncols();
    let mut best: Option<(Vec<usize>, DVector<f64>, f64)> = None;
    let mut second = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let sub = DMatrix::from_fn(a.nrows(), k, |i, j| a[(i, idx[j])]);
        let sol = sub.clone().svd(true, true).solve(y, 1e-12).unwrap();
        let res = (y - &sub * &sol).norm();
        match &best {
            Some((_, _, r)) if res >= *r => second = second.min(res),
            _ => {
                if let Some((_, _, r)) = &best {
                    second = second.min(*r);
                }
                best = Some((idx.clone(), sol, res));
            }
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                let (s, v, r) = best.unwrap();
                return (s, v, r, second);
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// A `side³` grid of unit voxels with `users` users and one `rows × cols`
/// array placed around it.
pub fn small_setup(side: usize, users: usize, rows: usize, cols: usize) -> (VoxelGrid<f64>, NodeLayout<f64>) {
    let e = side as f64;
    let grid = VoxelGrid::new(Vec3::zero(), [e; 3], [1.0; 3]).unwrap();
    let us: Vec<Vec3<f64>> = (0..users)
        .map(|i| {
            let t = i as f64 / users as f64 * std::f64::consts::TAU;
            Vec3::new(e / 2.0 + 2.0 * e * t.cos(), e / 2.0 + 2.0 * e * t.sin(), 0.3 * e + 0.1 * i as f64)
        })
        .collect();
    let ants: Vec<Antenna<f64>> = uniform_array(Vec3::new(e / 2.0, -1.5 * e, e / 2.0), rows, cols, 0.3, 0);
    (grid, NodeLayout::new(us, ants).unwrap())
}

/// Observed stacked system for `field` under its own true occlusion.
pub fn observed_system(
    field: &ScatterField<f64>,
    layout: &NodeLayout<f64>,
    params: &OcclusionParams<f64>,
    snr_db: f64,
    seed: u64,
) -> (OcclusionMatrices, RealStackedSystem<f64>) {
    use rand::SeedableRng;
    let occ = occlusion_matrices(field, layout, params).unwrap();
    let ens = build_channels(field.grid(), field, layout, &occ, 30e9).unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let ens = observe(ens, snr_db, &mut rng).unwrap();
    (occ, stack_real(&ens).unwrap())
}

pub fn default_prior() -> PriorParams<f64> {
    PriorParams::new(0.05, 0.5, 0.04).unwrap()
}
