//! Probabilistic shape descriptors from 3D images.
//!
//! The crate goes from raw volumes to PCA shape scores with two kinds of
//! uncertainty attached: a per-input aleatoric variance predicted by a
//! dedicated network head, and an epistemic variance estimated by sampling
//! the network under Monte-Carlo dropout.
//!
//! | module | role |
//! |---|---|
//! | [`volume`] | dense 3D images, blur, noise, normalization |
//! | [`supershapes`] | parametric shapes with exact correspondences, rasterization |
//! | [`shapemodel`] | PCA point-distribution model |
//! | [`augment`] | KDE sampling in shape space, thin-plate-spline image warps |
//! | [`network`] | 3D CNN with mean and log-variance heads, losses, training |
//! | [`uncertainty`] | MC-dropout inference and per-point uncertainty fields |
//! | [`eval`] | surface reconstruction and distances, test-set selection, reports |
//! | [`pipeline`] | staged, resumable experiment runner behind the CLI |

pub mod augment;
mod binio;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod network;
pub mod pipeline;
pub mod seeds;
pub mod shapemodel;
pub mod supershapes;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
