//! Dead-leaves image synthesis and the exact Bayesian ideal observer for
//! segmenting small pixel sets.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: circle-arrangement primitives (critical radii, intersection points, predicates).
//! * [`specfun`]: the Clausen function, the power-law radius law and the radius antiderivative `b`.
//! * [`partitions`]: enumeration and canonical forms of set partitions.
//! * [`prior`]: analytic leaf-probability tables and the recursive partition prior.
//! * [`oracle`]: Monte Carlo and grid estimators used to validate the analytic prior.
//! * [`generator`]: scene generation and image rendering.
//! * [`likelihood`]: uniform-discrete and Gaussian color/texture likelihoods.
//! * [`observer`]: the posterior sweep, MAP extraction and top-k tables.
//! * [`io`]: scene, image and partition file formats.

pub mod error;
pub mod generator;
pub mod geometry;
pub mod io;
pub mod likelihood;
pub mod observer;
pub mod oracle;
pub mod partitions;
pub mod prior;
pub mod specfun;

pub use error::{Error, Result};
pub use generator::{ColorTextureModel, Image, Scene};
pub use geometry::{Branch, PixelSet, Point2};
pub use likelihood::{LikelihoodModel, ObservationWindow};
pub use observer::PosteriorRecord;
pub use oracle::Estimate;
pub use partitions::{MembershipMap, Partition};
pub use prior::{LeafProbTable, PriorEngine, PriorMode, PriorResult};
pub use specfun::RadiusLaw;
