//! Density-aware fog synthesis, haze density estimation and routed
//! unfolding dehazing.
//!
//! Scenes are fogged with the atmospheric scattering model ([`fogsim`]),
//! scored for haze density and banded into light / medium / heavy
//! ([`hden`]), and restored by an unfolding branch whose depth matches the
//! band ([`unfold`]). [`pipeline`] trains the estimator head and branch
//! parameters with the density-modulated objective in [`losses`];
//! [`metrics`] and [`bench`] evaluate quality and routing economics.

pub mod bench;
pub mod cli;
pub mod codec;
pub mod error;
pub mod filters;
pub mod fogsim;
pub mod hden;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod scenes;
pub mod unfold;

pub use error::{Error, Result};
pub use fogsim::{AtmosphericLight, DatasetManifest, ScatterCoefficient};
pub use hden::{FogLevel, HazeDensityScore, HdenParams, RoutingThresholds};
pub use image::{DepthMap, RgbImage, TransmissionMap, T_FLOOR};
pub use unfold::{BranchKind, BranchParams, BranchSet, DehazeResult};
