//! Occlusion-aware multi-view sparse voxel reconstruction.
//!
//! The crate models a voxelised region observed by single-antenna users and
//! multi-antenna base stations through single-bounce scattering, where strong
//! scatterers occlude line-of-sight hops. The reconstruction engine is a GAMP
//! variant that re-estimates the occlusion pattern from its own iterates.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod geom;
pub mod harness;
pub mod num;
pub mod occlusion;
pub mod scene;
pub mod solvers;

pub use error::{Error, Result};
pub use geom::Vec3;
pub use num::Real;

pub type Grid = scene::VoxelGrid<f64>;
pub type Field = scene::ScatterField<f64>;
pub type Layout = scene::NodeLayout<f64>;
pub type Prior = scene::PriorParams<f64>;
pub type Channels = channel::ChannelEnsemble<f64>;
pub type Stacked = channel::RealStackedSystem<f64>;

pub type GridF32 = scene::VoxelGrid<f32>;
pub type FieldF32 = scene::ScatterField<f32>;
pub type PriorF32 = scene::PriorParams<f32>;
pub type Reconstruction = solvers::ReconstructionResult<f64>;
