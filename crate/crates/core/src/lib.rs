pub mod chord;
pub mod config;
pub mod dataset;
pub mod gan;
pub mod metrics;
pub mod midi;
pub mod nn;
pub mod score;
pub mod token;
