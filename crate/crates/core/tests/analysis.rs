mod common;

use mvsense::analysis::{
    combined_block_prob, mse, mse_bound, mse_in_range, p_block_closed, p_block_empirical, p_out_bs, radius,
    unsensed_counts, unsensed_empirical, NodeDistribution, RangeReport, Scheme,
};
use mvsense::occlusion::OcclusionParams;
use mvsense::scene::{Antenna, NodeLayout, ScatterField, VoxelGrid};
use mvsense::Vec3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn mse_definitions() {
    let t = [0.0, 0.5, 0.0, 0.6];
    let h = [0.1, 0.5, 0.0, 0.3];
    assert!((mse(&t, &h).unwrap() - (0.01 + 0.09) / 4.0).abs() < 1e-15);
    assert!((mse_in_range(&t, &h, &[true, false, false, true]).unwrap() - 0.05).abs() < 1e-15);
    assert!(mse_in_range(&t, &h, &[false; 4]).is_err());
    assert!(mse(&t, &h[..3]).is_err());
}

#[test]
fn full_error_exceeds_in_range_error_when_outside_is_missed() {
    // the estimate fits the sensed voxels and misses the unsensed scatterers
    let truth = [0.5, 0.0, 0.6, 0.0, 0.55, 0.0];
    let est = [0.49, 0.01, 0.0, 0.0, 0.0, 0.0];
    let mask = [true, true, false, true, false, true];
    assert!(mse(&truth, &est).unwrap() >= mse_in_range(&truth, &est, &mask).unwrap());
}

#[test]
fn closed_form_hop_probability_matches_direct_average() {
    let grid = common::reference_grid();
    let node = Vec3::new(-3.0, 2.0, 1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (lambda, l) = (0.01, 0.433);
    let p = p_block_closed(&grid, lambda, l, &NodeDistribution::Points(vec![node]), grid.len(), &mut rng).unwrap();
    let mean_d: f64 = grid.centers().iter().map(|c| node.distance(*c)).sum::<f64>() / grid.len() as f64;
    let expected = lambda * l * l * mean_d / (125.0f64 * 125.0);
    assert!((p - expected).abs() <= 1e-12 * expected);
    assert_eq!(p_block_closed(&grid, 0.0, l, &NodeDistribution::Shell, 10, &mut rng).unwrap(), 0.0);
}

#[test]
fn count_and_bound_formulas() {
    let (pu, pb, nu, nb, ns) = (0.3, 0.2, 3, 4, 1000);
    let single = unsensed_counts(pu, pb, nu, nb, ns, Scheme::SingleBs).unwrap();
    let multi = unsensed_counts(pu, pb, nu, nb, ns, Scheme::MultiBs).unwrap();
    let a = 0.3f64.powi(3);
    assert!((single - 1000.0 * (a + 0.2 - a * 0.2)).abs() < 1e-9);
    let b = 0.2f64.powi(4);
    assert!((multi - 1000.0 * (a + b - a * b)).abs() < 1e-9);
    assert!((combined_block_prob(pu, pb, ns).unwrap() - (0.5 - 0.06 / 1000.0)).abs() < 1e-15);
    assert!(combined_block_prob(1.2, pb, ns).is_err());

    let r = radius(0.05, 0.5, 1000, 100.0);
    assert!((r - 22.5).abs() < 1e-12);
    let bound = mse_bound(1.0, r, 1000, 20, 25).unwrap();
    assert!((bound - 22.5f64.powi(2) * 1000f64.ln() / (1000.0 * 20.0 * 25.0)).abs() < 1e-15);
    assert!(mse_bound(0.0, r, 1000, 20, 25).is_err());

    let rep = RangeReport::from_probabilities(pu, pb, nu, nb, ns).unwrap();
    assert_eq!(rep.n_con, single);
    assert_eq!(rep.n_dis, multi);
}

/// Three unit voxels in a row along x.
fn row_grid() -> VoxelGrid<f64> {
    VoxelGrid::new(Vec3::zero(), [3.0, 1.0, 1.0], [1.0; 3]).unwrap()
}

fn axis_node(x: f64) -> Vec3<f64> {
    Vec3::new(x, 0.5, 0.5)
}

#[test]
fn empirical_blockage_on_a_row_of_voxels() {
    let grid = row_grid();
    let params = OcclusionParams { blocking_distance: 0.4, threshold: 0.125 };
    let full = |_: &mut ChaCha20Rng| ScatterField::new(row_grid(), vec![0.9; 3]);
    let empty = |_: &mut ChaCha20Rng| Ok(ScatterField::empty(row_grid()));
    let layout = |_: &mut ChaCha20Rng| NodeLayout::new(vec![axis_node(-10.0)], vec![Antenna { position: axis_node(13.0), bs: 0 }]);

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let none = p_block_empirical(empty, layout, &params, 400, &mut rng).unwrap();
    assert_eq!((none.user.value, none.bs.value), (0.0, 0.0));

    // two of the three voxels sit behind another from either end
    let est = p_block_empirical(full, layout, &params, 4000, &mut rng).unwrap();
    assert!(est.user.agrees_with(2.0 / 3.0, 4.0), "{:?}", est.user);
    assert!(est.bs.agrees_with(2.0 / 3.0, 4.0), "{:?}", est.bs);

    let mut r1 = ChaCha20Rng::seed_from_u64(6);
    let mut r2 = ChaCha20Rng::seed_from_u64(6);
    assert_eq!(
        p_block_empirical(full, layout, &params, 500, &mut r1).unwrap(),
        p_block_empirical(full, layout, &params, 500, &mut r2).unwrap()
    );
    assert!(p_block_empirical(full, layout, &params, 10, &mut r1).is_err());
    assert_eq!(grid.len(), 3);
}

#[test]
fn unsensed_count_on_a_row_of_voxels() {
    let params = OcclusionParams { blocking_distance: 0.4, threshold: 0.125 };
    let full = |_: &mut ChaCha20Rng| ScatterField::new(row_grid(), vec![0.9; 3]);
    let one_side = |_: &mut ChaCha20Rng| NodeLayout::new(vec![axis_node(-10.0)], vec![Antenna { position: axis_node(13.0), bs: 0 }]);
    let both_sides = |_: &mut ChaCha20Rng| {
        NodeLayout::new(
            vec![axis_node(-10.0), axis_node(13.0)],
            vec![Antenna { position: axis_node(13.0), bs: 0 }, Antenna { position: axis_node(-10.0), bs: 1 }],
        )
    };
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let a = unsensed_empirical(full, one_side, &params, 5, &mut rng).unwrap();
    assert_eq!((a.value, a.stderr), (3.0, 0.0));
    let b = unsensed_empirical(full, both_sides, &params, 5, &mut rng).unwrap();
    assert_eq!((b.value, b.stderr), (1.0, 0.0));
}

proptest! {
    #[test]
    fn more_stations_never_raise_outage(p in 0.0f64..=1.0, nb in 1usize..10) {
        let a = p_out_bs(p, nb, Scheme::MultiBs);
        let b = p_out_bs(p, nb + 1, Scheme::MultiBs);
        prop_assert!(b <= a);
        prop_assert!(a <= p_out_bs(p, nb, Scheme::SingleBs) + 1e-15);
    }

    #[test]
    fn distributed_count_never_exceeds_colocated(pu in 0.0f64..=1.0, pb in 0.0f64..=1.0, nu in 1usize..30, nb in 1usize..8) {
        let con = unsensed_counts(pu, pb, nu, nb, 1000, Scheme::SingleBs).unwrap();
        let dis = unsensed_counts(pu, pb, nu, nb, 1000, Scheme::MultiBs).unwrap();
        prop_assert!(dis <= con + 1e-9);
        prop_assert!((0.0..=1000.0 + 1e-9).contains(&con));
    }

    #[test]
    fn mse_ignores_voxel_order(seed in 0u64..1000, n in 1usize..50) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let h: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let tp: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let hp: Vec<f64> = idx.iter().map(|&i| h[i]).collect();
        prop_assert!((mse(&t, &h).unwrap() - mse(&tp, &hp).unwrap()).abs() < 1e-12);
    }
}
