pub mod dbpi;
pub mod em_distributed;
pub mod em_model;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod numerics;
pub mod pca;
pub mod report;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
