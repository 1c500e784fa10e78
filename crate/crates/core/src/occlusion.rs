//! Geometric line-of-sight blocking between users, voxels and antennas.
//!
//! A voxel `C` blocks the segment `A → B` when, with `b = B − A` and
//! `c = C − A`, all of the following hold:
//!
//! * its distance to the line is below the blocking distance: `|c × b| / |b| < l`,
//! * it lies on the `B` side of `A`: `b · c > 0`,
//! * it does not lie beyond `B`: `|c · b| < |b|²`.
//!
//! Only voxels whose coefficient exceeds the occluder threshold `η` can block,
//! and a voxel never blocks a path that ends at its own center.

use std::io::Write;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::num::Real;
use crate::scene::{NodeLayout, ScatterField, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionParams<T> {
    /// Blocking distance `l` (meters).
    pub blocking_distance: T,
    /// Occluder threshold `η` on the scattering coefficient.
    pub threshold: T,
}

impl<T: Real> OcclusionParams<T> {
    pub fn new(blocking_distance: T, threshold: T) -> Result<Self> {
        if !(blocking_distance >= T::zero()) || !blocking_distance.is_finite() {
            return Err(Error::invalid("blocking distance must be finite and non-negative"));
        }
        if !(threshold > T::zero()) {
            return Err(Error::invalid("occluder threshold must be positive"));
        }
        Ok(Self { blocking_distance, threshold })
    }

    /// Default for a grid: blocking distance equal to the voxel half-diagonal.
    pub fn for_grid(grid: &VoxelGrid<T>, threshold: T) -> Result<Self> {
        Self::new(grid.half_diagonal(), threshold)
    }

    /// Explicit blocking distance, checked against `[min side, full diagonal]`.
    pub fn for_grid_with(grid: &VoxelGrid<T>, blocking_distance: T, threshold: T) -> Result<Self> {
        let lo = grid.min_side();
        let hi = grid.diagonal();
        if blocking_distance < lo || blocking_distance > hi {
            return Err(Error::invalid(format!(
                "blocking distance {blocking_distance} outside [{lo}, {hi}] for this grid"
            )));
        }
        Self::new(blocking_distance, threshold)
    }
}

/// Whether `c_point` blocks the segment `a → b_point` for blocking distance `l`.
pub fn blocks<T: Real>(a: Vec3<T>, b_point: Vec3<T>, c_point: Vec3<T>, l: T) -> Result<bool> {
    let b = b_point - a;
    let nb2 = b.norm_sq();
    if nb2 == T::zero() {
        return Err(Error::ZeroLengthSegment);
    }
    Ok(blocks_rel(b, nb2, c_point - a, l))
}

#[inline]
fn blocks_rel<T: Real>(b: Vec3<T>, nb2: T, c: Vec3<T>, l: T) -> bool {
    let dot = b.dot(c);
    dot > T::zero() && dot.abs() < nb2 && c.cross(b).norm() / nb2.sqrt() < l
}

/// True when no occluder (coefficient above `η`, index not excluded) blocks `a → b`.
pub fn path_clear<T: Real>(
    field: &ScatterField<T>,
    a: Vec3<T>,
    b: Vec3<T>,
    params: &OcclusionParams<T>,
    exclude: &[usize],
) -> Result<bool> {
    let grid = field.grid();
    let occluders = Occluders::from_values(grid, field.values(), params.threshold);
    occluders.path_clear(a, b, params.blocking_distance, exclude)
}

/// Positions of voxels whose coefficient exceeds the occluder threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Occluders<T> {
    indices: Vec<usize>,
    centers: Vec<Vec3<T>>,
}

impl<T: Real> Occluders<T> {
    pub fn from_values(grid: &VoxelGrid<T>, x: &[T], threshold: T) -> Self {
        let mut indices = Vec::new();
        let mut centers = Vec::new();
        for (i, v) in x.iter().enumerate() {
            if *v > threshold {
                indices.push(i);
                centers.push(grid.voxel_center(i).expect("index within grid"));
            }
        }
        Self { indices, centers }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn path_clear(&self, a: Vec3<T>, b: Vec3<T>, l: T, exclude: &[usize]) -> Result<bool> {
        let rel = b - a;
        let nb2 = rel.norm_sq();
        if nb2 == T::zero() {
            return Err(Error::ZeroLengthSegment);
        }
        Ok(!self
            .indices
            .iter()
            .zip(&self.centers)
            .any(|(i, c)| !exclude.contains(i) && blocks_rel(rel, nb2, *c - a, l)))
    }

    /// Clearance of the path from `node` to every voxel center, excluding the
    /// target voxel from its own path.
    fn node_to_voxels(&self, node: Vec3<T>, centers: &[Vec3<T>], l: T) -> Result<Vec<bool>> {
        let rel_occ: Vec<Vec3<T>> = self.centers.iter().map(|c| *c - node).collect();
        centers
            .iter()
            .enumerate()
            .map(|(s, center)| {
                let b = *center - node;
                let nb2 = b.norm_sq();
                if nb2 == T::zero() {
                    return Err(Error::ZeroLengthSegment);
                }
                Ok(!self
                    .indices
                    .iter()
                    .zip(&rel_occ)
                    .any(|(i, c)| *i != s && blocks_rel(b, nb2, *c, l)))
            })
            .collect()
    }
}

/// User-side and antenna-side binary occlusion matrices (`true` = unblocked).
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMatrices {
    /// `N_u × N_s`.
    pub user: Array2<bool>,
    /// `N_s × N_R`, column `n_R` is the voxel-to-antenna visibility.
    pub bs: Array2<bool>,
}

impl OcclusionMatrices {
    pub fn all_clear(num_users: usize, num_voxels: usize, num_antennas: usize) -> Self {
        Self {
            user: Array2::from_elem((num_users, num_voxels), true),
            bs: Array2::from_elem((num_voxels, num_antennas), true),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user.nrows()
    }

    pub fn num_voxels(&self) -> usize {
        self.user.ncols()
    }

    pub fn num_antennas(&self) -> usize {
        self.bs.ncols()
    }

    /// Entry of the combined matrix `V(n_R)[n_u, n_s]`.
    #[inline]
    pub fn combined(&self, n_u: usize, n_s: usize, n_r: usize) -> bool {
        self.user[[n_u, n_s]] && self.bs[[n_s, n_r]]
    }

    /// Combined matrix for one antenna, `N_u × N_s`.
    pub fn combined_for_antenna(&self, n_r: usize) -> Array2<bool> {
        let col = self.bs.column(n_r);
        let mut out = self.user.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            row.zip_mut_with(&col, |v, b| *v = *v && *b);
        }
        out
    }

    /// Number of zero entries across all combined matrices.
    pub fn combined_zero_count(&self) -> usize {
        let mut zeros = 0;
        for n_r in 0..self.num_antennas() {
            for n_s in 0..self.num_voxels() {
                if !self.bs[[n_s, n_r]] {
                    zeros += self.num_users();
                } else {
                    zeros += self.user.column(n_s).iter().filter(|v| !**v).count();
                }
            }
        }
        zeros
    }

    /// Rows packed LSB-first into bytes, user matrix then antenna matrix.
    pub fn to_packed_bits(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in [&self.user, &self.bs] {
            for row in m.rows() {
                let mut byte = 0u8;
                for (i, v) in row.iter().enumerate() {
                    if *v {
                        byte |= 1 << (i % 8);
                    }
                    if i % 8 == 7 {
                        out.push(byte);
                        byte = 0;
                    }
                }
                if row.len() % 8 != 0 {
                    out.push(byte);
                }
            }
        }
        out
    }

    /// CSV of the zero entries: `matrix,row,col` with `matrix` ∈ {user, bs}.
    pub fn write_zero_entries_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["matrix", "row", "col"])?;
        for (name, m) in [("user", &self.user), ("bs", &self.bs)] {
            for ((r, c), v) in m.indexed_iter() {
                if !*v {
                    wtr.write_record([name, &r.to_string(), &c.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Occlusion matrices for a field over the given node layout.
pub fn occlusion_matrices<T: Real>(
    field: &ScatterField<T>,
    layout: &NodeLayout<T>,
    params: &OcclusionParams<T>,
) -> Result<OcclusionMatrices> {
    occlusion_matrices_for(field.grid(), field.values(), layout, params)
}

/// Same as [`occlusion_matrices`] but over a raw coefficient vector, e.g. an
/// intermediate estimate.
pub fn occlusion_matrices_for<T: Real>(
    grid: &VoxelGrid<T>,
    x: &[T],
    layout: &NodeLayout<T>,
    params: &OcclusionParams<T>,
) -> Result<OcclusionMatrices> {
    let occluders = Occluders::from_values(grid, x, params.threshold);
    occlusion_matrices_with(grid, &occluders, layout, params.blocking_distance)
}

pub fn occlusion_matrices_with<T: Real>(
    grid: &VoxelGrid<T>,
    occluders: &Occluders<T>,
    layout: &NodeLayout<T>,
    l: T,
) -> Result<OcclusionMatrices> {
    let n_s = grid.len();
    let (n_u, n_r) = (layout.num_users(), layout.num_antennas());
    if occluders.is_empty() {
        return Ok(OcclusionMatrices::all_clear(n_u, n_s, n_r));
    }
    let centers = grid.centers();
    let nodes: Vec<Vec3<T>> = layout
        .users()
        .iter()
        .copied()
        .chain(layout.antennas().iter().map(|a| a.position))
        .collect();
    let rows: Vec<Vec<bool>> = nodes
        .par_iter()
        .map(|node| occluders.node_to_voxels(*node, &centers, l))
        .collect::<Result<_>>()?;

    let mut user = Array2::from_elem((n_u, n_s), true);
    let mut bs = Array2::from_elem((n_s, n_r), true);
    for (i, row) in rows.into_iter().enumerate() {
        if i < n_u {
            for (s, v) in row.into_iter().enumerate() {
                user[[i, s]] = v;
            }
        } else {
            for (s, v) in row.into_iter().enumerate() {
                bs[[s, i - n_u]] = v;
            }
        }
    }
    Ok(OcclusionMatrices { user, bs })
}

/// Voxels seen by at least one user and at least one antenna.
pub fn sensing_range_mask(mats: &OcclusionMatrices) -> Vec<bool> {
    (0..mats.num_voxels())
        .map(|s| mats.user.column(s).iter().any(|v| *v) && mats.bs.row(s).iter().any(|v| *v))
        .collect()
}
