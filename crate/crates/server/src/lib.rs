//! HTTP service, persistence and command line for narrativeplay.

pub mod app;
pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod jobs;
pub mod routes;
pub mod store;
pub mod views;

pub use app::{App, Submission};
pub use error::ApiError;
pub use routes::router;
