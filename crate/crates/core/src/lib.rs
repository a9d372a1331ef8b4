//! Framewise speaker counting from first-order Ambisonics recordings.

pub mod datagen;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod spatial;
pub mod train;
