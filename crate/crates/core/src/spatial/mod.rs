//! CPU spatial-query kernels: voxel subsampling, radius and k-nearest
//! neighbour search, farthest point sampling and interpolation.
//!
//! Every kernel breaks distance ties by ascending index, so results do not
//! depend on how queries are split across threads.

mod fps;
mod grid;
mod kdtree;
mod neighbors;

pub use fps::farthest_point_sampling;
pub use grid::{grid_subsample, sphere_query, HashGrid, LabelMode, VoxelKey};
pub(crate) use grid::{majority_label, voxel_groups};
pub use kdtree::KdTree;
pub use neighbors::{knn_interpolate, knn_search, radius_search, NeighborTable};
