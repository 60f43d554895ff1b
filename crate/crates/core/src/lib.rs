pub mod correspondence;
pub mod evaluation;
pub mod extraction;
pub mod fixtures;
pub mod geometry;
pub mod grasp;
pub mod io;
pub mod memory;
pub mod pipeline;
pub mod retrieval;
