pub mod engine;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod mpc;
pub mod observers;
pub mod scenario;

pub use error::{Error, Result};
