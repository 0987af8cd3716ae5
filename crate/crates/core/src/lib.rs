//! Shapley-value attribution over image regions.

pub mod coalition;
pub mod dataset;
pub mod evaluators;
pub mod imaging;
pub mod scr;
pub mod pipeline;
pub mod seed;
pub mod selftest;
pub mod synthetic;
pub mod toy_model;
