//! Test-time canonicalization of classifier inputs.
//!
//! A perturbed image is straightened by searching over layered, finitely
//! sampled subgroups of the affine group (rotations, scalings, shears,
//! translations, reflections). Each candidate undoing transform is scored by
//! a confidence derived from the curvature of the classifier's energy along
//! the orbit, estimated with Monte-Carlo dropout; a beam of hypotheses walks
//! the layers until a full inverse transform is assembled. The classifier is
//! only ever queried for logits, so any backend that can score an image
//! plugs in.
//!
//! The crate is generic over the working scalar (`f32` or `f64`) through
//! [`scalar::Real`]; the `f64` instantiations used by the CLI are aliased at
//! the crate root.

pub mod confidence;
pub mod error;
pub mod group;
pub mod harness;
pub mod image;
pub mod model;
pub mod seeding;
pub mod scalar;
pub mod search;
pub mod warp;

pub use error::{ItsError, Result};
pub use scalar::Real;

/// Working scalar used by the command-line tools.
pub type Scalar = f64;
pub type Transform = group::AffineTransform<Scalar>;
pub type Subgroup = group::SubgroupSpec<Scalar>;
pub type GrayImage = image::Image<Scalar>;
pub type Profile = confidence::EnergyProfile<Scalar>;
pub type Kernel = confidence::SmoothingKernel<Scalar>;
pub type Stack = search::LayerStack<Scalar>;
pub type Config = search::SearchConfig<Scalar>;
