//! File formats, configuration, threaded rollouts and the run driver around
//! `sigfolio-core`.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod report;
pub mod run;
pub mod transport;
pub mod wire;
