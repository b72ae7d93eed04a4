//! Group-equivariant 3D convolution engine for the discrete roto-reflection
//! groups of a cube and a square-based cuboid (D4, D4h, O, Oh), together with
//! the pieces needed to run desk-scale nodule-classification experiments on
//! top of it: a dense tensor type with 3D convolution kernels, equivariant
//! layers with manual backpropagation, a small training loop, a synthetic
//! volumetric patch generator, and FROC scoring.
//!
//! The central mechanism is the two-step group convolution: every learnable
//! filter is expanded into `|H|` transformed copies (a spatial voxel
//! permutation composed with an orientation-channel permutation), and the
//! expanded bank is fed to an ordinary spatial convolution. Feature maps then
//! carry `|H|` orientation channels per feature and transform equivariantly:
//! rotating the input rotates every channel and shuffles the orientation
//! channels by a fixed permutation of the group.

pub mod bench;
pub mod error;
pub mod froc;
pub mod group;
pub mod layers;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod transform;

pub use error::{CoreError, Result};
pub use group::{GroupElement, GroupName, PermutationRep, SymmetryGroup};
pub use tensor::{Conv3dSpec, Padding, Tensor};
