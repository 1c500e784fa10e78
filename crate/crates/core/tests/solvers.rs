mod common;

use common::{exhaustive_support, observed_system, small_setup};
use mvsense::channel::RealStackedSystem;
use mvsense::occlusion::OcclusionParams;
use mvsense::scene::{PriorParams, ScatterField};
use mvsense::solvers::{
    p_step, q_step, r_step, run_bilinear, run_gamp, run_mvsvr, Geometry, Mode, Solver, SolverOptions, SolverState,
    Status,
};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Random complex Gaussian system with 12 complex (24 real) rows over 16 voxels.
fn gaussian_system(x: &[f64], noise_var: f64, seed: u64) -> RealStackedSystem<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut g = || -> f64 { rng.sample(StandardNormal) };
    let a = Array2::from_shape_fn((12, x.len()), |_| Complex::new(g(), g()) / 24f64.sqrt());
    let clean = a.dot(&Array1::from(x.iter().map(|v| Complex::new(*v, 0.0)).collect::<Vec<_>>()));
    let sd = (noise_var / 2.0).sqrt();
    let y = clean.mapv(|h| h + Complex::new(sd * g(), sd * g()));
    RealStackedSystem::from_complex(&y, &a, noise_var, 3, 4).unwrap()
}

fn opts() -> SolverOptions<f64> {
    SolverOptions { damping: 0.5, ..SolverOptions::default() }
}

#[test]
fn gamp_recovers_sparse_vector_on_gaussian_system() {
    let mut x = vec![0.0; 16];
    x[3] = 0.55;
    x[11] = 0.45;
    let sys = gaussian_system(&x, 1e-8, 1);
    let prior = PriorParams::new(2.0 / 16.0, 0.5, 0.04).unwrap();
    let res = run_gamp(&sys, &prior, &opts().with_max_iter(300), Some(&x)).unwrap();

    let a = DMatrix::from_fn(24, 16, |i, j| sys.a_free[[i, j]]);
    let y = DVector::from_iterator(24, sys.y.iter().copied());
    let (support, ls, best, second) = exhaustive_support(&a, &y, 2);
    assert_eq!(support, vec![3, 11]);
    assert!(second > 100.0 * best);

    let mut order: Vec<usize> = (0..16).collect();
    order.sort_by(|&i, &j| res.x_hat[j].partial_cmp(&res.x_hat[i]).unwrap());
    let mut top = order[..2].to_vec();
    top.sort();
    assert_eq!(top, support);
    for (k, &s) in support.iter().enumerate() {
        assert!((res.x_hat[s] - ls[k]).abs() < 1e-2, "voxel {s}: {} vs {}", res.x_hat[s], ls[k]);
    }
    let off: f64 = order[2..].iter().map(|&i| res.x_hat[i].abs()).fold(0.0, f64::max);
    assert!(off < 1e-2, "largest off-support magnitude {off}");
}

#[test]
fn zero_scene_reconstructs_near_zero() {
    let x = vec![0.0; 16];
    let sys = gaussian_system(&x, 1e-6, 2);
    let prior = PriorParams::new(0.1, 0.5, 0.04).unwrap();
    let res = run_gamp(&sys, &prior, &opts().with_max_iter(200), None).unwrap();
    assert!(res.x_hat.iter().all(|v| v.abs() < 1e-2), "{:?}", res.x_hat);
}

#[test]
fn runs_are_deterministic() {
    let mut x = vec![0.0; 16];
    x[5] = 0.5;
    let sys = gaussian_system(&x, 1e-4, 3);
    let prior = PriorParams::new(0.1, 0.5, 0.04).unwrap();
    let a = run_bilinear(&sys, &prior, 0.2, &opts(), Some(&x)).unwrap();
    let b = run_bilinear(&sys, &prior, 0.2, &opts(), Some(&x)).unwrap();
    assert_eq!(a.x_hat, b.x_hat);
    assert_eq!(a.trace, b.trace);
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
}

fn setup_field() -> (ScatterField<f64>, mvsense::scene::NodeLayout<f64>, OcclusionParams<f64>) {
    let (grid, layout) = small_setup(4, 5, 2, 2);
    let mut x = vec![0.0; grid.len()];
    for (i, v) in [(5, 0.5), (22, 0.6), (41, 0.45), (63, 0.55)] {
        x[i] = v;
    }
    let params = OcclusionParams::for_grid(&grid, 0.125).unwrap();
    (ScatterField::new(grid, x).unwrap(), layout, params)
}

#[test]
fn no_occlusion_mode_matches_gamp() {
    let (field, layout, params) = setup_field();
    let (_, sys) = observed_system(&field, &layout, &params, 30.0, 4);
    let prior = common::default_prior();
    let gamp = run_gamp(&sys, &prior, &opts(), None).unwrap();
    let geo = Geometry { grid: field.grid(), layout: &layout, params };
    let plain = Solver::mvsvr(&sys, geo, &prior, &opts().with_mode(Mode::NoOcclusion)).unwrap().run().unwrap();
    assert_eq!(gamp.x_hat, plain.x_hat);
    assert_eq!(gamp.iterations, plain.iterations);
}

#[test]
fn hard_mode_without_detected_occluders_matches_gamp() {
    let (field, layout, params) = setup_field();
    let (_, sys) = observed_system(&field, &layout, &params, 30.0, 5);
    let prior = common::default_prior();
    let gamp = run_gamp(&sys, &prior, &opts(), None).unwrap();
    // a threshold no estimate can reach leaves the occlusion estimate all-clear
    let blind = OcclusionParams { threshold: 1e6, ..params };
    let hard = run_mvsvr(&sys, field.grid(), &layout, &prior, &blind, &opts(), None).unwrap();
    assert_close(&hard.x_hat, &gamp.x_hat, 1e-10);
    assert_eq!(hard.v_est.unwrap().combined_zero_count(), 0);
}

#[test]
fn bilinear_without_blockage_matches_gamp() {
    let (field, layout, params) = setup_field();
    let (_, sys) = observed_system(&field, &layout, &params, 30.0, 6);
    let prior = common::default_prior();
    let gamp = run_gamp(&sys, &prior, &opts(), None).unwrap();
    let soft = run_bilinear(&sys, &prior, 0.0, &opts(), None).unwrap();
    assert_close(&soft.x_hat, &gamp.x_hat, 1e-10);
}

fn random_state(seed: u64, m: usize, n: usize) -> SolverState<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let prior = common::default_prior();
    let h = Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0));
    let sh = Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..0.1));
    let mut st = SolverState::init(&prior, h, sh, 1.0);
    st.x_hat = Array1::from_shape_fn(n, |j| if j % 3 == 0 { 0.0 } else { rng.random_range(-0.2..0.8) });
    st.sigma_x = Array1::from_shape_fn(n, |_| rng.random_range(0.001..0.05));
    st.s_bar = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
    st.sigma_s = Array1::from_shape_fn(m, |_| rng.random_range(0.1..3.0));
    st
}

#[test]
fn message_updates_match_explicit_sums() {
    let st = random_state(9, 7, 5);
    let prior = common::default_prior();
    let (m, n) = (7, 5);

    let (p, sp) = p_step(&st);
    for i in 0..m {
        let mut fwd = 0.0;
        let mut onsager = 0.0;
        let mut extra = 0.0;
        for j in 0..n {
            let (h, shij, x, sx) = (st.h_hat[[i, j]], st.sigma_h[[i, j]], st.x_hat[j], st.sigma_x[j]);
            fwd += h * x;
            onsager += shij * x * x + h * h * sx;
            extra += shij * sx;
        }
        assert!((p[i] - (fwd - st.s_bar[i] * onsager)).abs() < 1e-12);
        assert!((sp[i] - (onsager + extra)).abs() < 1e-12);
    }

    let r = r_step(&st, &prior);
    for j in 0..n {
        let prec: f64 = (0..m).map(|i| st.h_hat[[i, j]].powi(2) * st.sigma_s[i]).sum();
        let hs: f64 = (0..m).map(|i| st.sigma_h[[i, j]] * st.sigma_s[i]).sum();
        let corr: f64 = (0..m).map(|i| st.h_hat[[i, j]] * st.s_bar[i]).sum();
        let sr = 1.0 / prec;
        assert!((r.sigma_r[j] - sr).abs() < 1e-12 * sr);
        assert!((r.r_bar[j] - (st.x_hat[j] * (1.0 - sr * hs) + sr * corr)).abs() < 1e-12);
    }

    let (q, sq) = q_step(&st);
    for i in 0..m {
        for j in 0..n {
            let (h, x, sx, s, ss) = (st.h_hat[[i, j]], st.x_hat[j], st.sigma_x[j], st.s_bar[i], st.sigma_s[i]);
            if x == 0.0 {
                assert!(sq[[i, j]].is_infinite());
                assert_eq!(q[[i, j]], h);
            } else {
                let v = 1.0 / (x * x * ss);
                assert!((sq[[i, j]] - v).abs() <= 1e-12 * v);
                assert!((q[[i, j]] - (h * (1.0 - v * sx * ss) + v * x * s)).abs() <= 1e-9 * (1.0 + q[[i, j]].abs()));
            }
        }
    }
}

#[test]
fn first_iteration_reports_forward_misfit() {
    let (field, layout, params) = setup_field();
    let (_, sys) = observed_system(&field, &layout, &params, f64::INFINITY, 7);
    let prior = common::default_prior();
    let mut s = Solver::gamp(&sys, &prior, &opts()).unwrap();
    let before = s.misfit();
    let (y, a) = sys.to_complex();
    let x0 = Array1::from_elem(a.ncols(), Complex::new(prior.mean(), 0.0));
    let expected: f64 = (&y - &a.dot(&x0)).iter().map(|c| c.norm()).sum();
    assert!((before - expected).abs() <= 1e-9 * expected);
    let row = s.step().unwrap();
    assert_eq!(row.t, 1);
    assert!(row.misfit.is_finite());
}

#[test]
fn invalid_options_are_rejected() {
    let sys = gaussian_system(&[0.0; 16], 1e-4, 8);
    let prior = common::default_prior();
    assert!(run_bilinear(&sys, &prior, 1.5, &opts(), None).is_err());
    assert!(run_gamp(&sys, &prior, &SolverOptions { damping: 1.0, ..opts() }, None).is_err());
    assert!(run_gamp(&sys, &prior, &SolverOptions { detect_interval: 0, ..opts() }, None).is_err());
    assert!(run_gamp(&sys, &prior, &opts(), Some(&[0.0; 3])).is_err());
}

#[test]
fn trace_carries_mse_against_truth() {
    let mut x = vec![0.0; 16];
    x[0] = 0.5;
    let sys = gaussian_system(&x, 1e-4, 10);
    let prior = PriorParams::new(0.1, 0.5, 0.04).unwrap();
    let res = run_gamp(&sys, &prior, &opts(), Some(&x)).unwrap();
    assert_eq!(res.trace.len(), res.iterations);
    let last = res.trace.last().unwrap().mse.unwrap();
    let direct = mvsense::analysis::mse(&x, &res.x_hat).unwrap();
    if res.status != Status::Diverged && res.status != Status::NonFinite {
        assert!((last - direct).abs() < 1e-15);
    }
}

#[test]
fn single_precision_tracks_double_precision() {
    let mut x = vec![0.0; 16];
    x[2] = 0.5;
    x[9] = 0.6;
    let sys = gaussian_system(&x, 1e-6, 11);
    let prior = PriorParams::new(0.125, 0.5, 0.04).unwrap();
    let r64 = run_gamp(&sys, &prior, &opts().with_max_iter(200), None).unwrap();

    let (y, a) = sys.to_complex();
    let y32 = y.mapv(|c| Complex::new(c.re as f32, c.im as f32));
    let a32 = a.mapv(|c| Complex::new(c.re as f32, c.im as f32));
    let sys32 = RealStackedSystem::from_complex(&y32, &a32, 1e-6f32, 3, 4).unwrap();
    let prior32 = PriorParams::new(0.125f32, 0.5, 0.04).unwrap();
    let o32 = SolverOptions { damping: 0.5f32, ..SolverOptions::default() }.with_max_iter(200);
    let r32 = run_gamp(&sys32, &prior32, &o32, None).unwrap();
    assert!(r32.x_hat.iter().all(|v| v.is_finite()));
    for (a, b) in r32.x_hat.iter().zip(&r64.x_hat) {
        assert!((*a as f64 - b).abs() < 1e-3, "{a} vs {b}");
    }
}
