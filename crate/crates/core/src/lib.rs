pub mod error;
pub mod geometry;
pub mod harness;
pub mod homography;
pub mod imu;
pub mod initializer;
pub mod simulator;
pub mod tracks;
pub mod weighting;

pub use error::{Error, Result, Stage};
