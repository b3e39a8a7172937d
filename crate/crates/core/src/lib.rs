//! Small-area prevalence estimation from cluster surveys: design-weighted
//! direct estimates, BYM spatial smoothing on a region adjacency graph, and
//! SVG map output.

pub mod bym;
pub mod data;
pub mod direct;
pub mod graph;
pub mod pipeline;
pub mod render;
pub mod synthetic;
