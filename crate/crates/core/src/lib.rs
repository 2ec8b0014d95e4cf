pub mod error;
pub mod experiment;
pub mod extract;
pub mod field;
pub mod metrics;
pub mod pointcloud;
pub mod rng;
pub mod spatial;
pub mod trainer;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
