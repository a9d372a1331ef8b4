//! First-order Ambisonics encoding, image-source shoebox simulation
//! rendered straight to FOA, and isotropic diffuse noise.

mod absorption;
mod bank;
mod diffuse;
mod foa;
mod ism;
mod room;
mod t60;

pub use absorption::{decay_matched_alpha, AbsorptionModel};
pub use bank::{
    build_room_bank, export_room_bank, generate_room_bank, import_room_bank, render_room, room_seed, sample_room,
    BankProgress, BankSpec, RoomResponses, SrirRecord,
};
pub use diffuse::{diffuse_field, diffuse_noise_foa, PLANE_WAVES};
pub use foa::{foa_gains, foa_gains_from_vector, Doa};
pub use ism::{highpass, simulate_srir, DEFAULT_HIGHPASS_HZ, Srir, SrirOptions, SPEED_OF_SOUND};
pub use room::{sabine_alpha, RoomSampler, RoomSpec};
pub use t60::{measure_t60, measure_t60_from_ir, schroeder_t60};

#[derive(Debug, thiserror::Error)]
pub enum SpatialError {
    #[error("invalid room: {0}")]
    InvalidRoom(String),
    #[error("room too small for requested T60 (absorption {alpha:.3} > 1)")]
    RoomTooSmall { alpha: f64 },
    #[error("source {index} coincides with the microphone (distance {distance:.3} m)")]
    SourceAtMic { index: usize, distance: f64 },
    #[error("source index {0} out of range")]
    NoSuchSource(usize),
    #[error("insufficient decay range: {0}")]
    InsufficientDecay(String),
    #[error("could not place positions after {0} attempts")]
    Placement(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}
