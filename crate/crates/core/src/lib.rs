//! Editable Gaussian-splat scenes, vehicle dynamics, closed-loop gate-racing
//! rollouts and performance-guided sampling of two-gate training layouts.

pub mod align;
pub mod camera;
pub mod dynamics;
pub mod edit;
pub mod error;
pub mod harness;
pub mod image;
pub mod pgr;
pub mod ply;
pub mod policies;
pub mod primitives;
pub mod render;
pub mod scene;
pub mod seed;
pub mod sim;
pub mod tracks;

pub use error::{DynamicsError, EditError, ImageError, PgrError, SceneError, SimError, TrackError};
pub use scene::{Gaussian, GaussianScene, RigidTransform, Selection};
