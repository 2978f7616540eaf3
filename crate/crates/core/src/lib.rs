//! Tri-modal retrieval for analog circuits: SPICE netlists, captions and
//! schematic feature vectors embedded into one shared space.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod encoders;
pub mod graph;
pub mod index;
pub mod objective;
pub mod spice;
