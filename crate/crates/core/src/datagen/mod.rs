//! Conversational FOA mixtures: single-speaker tracks with exact activity,
//! convolution with room responses, SIR/SNR mixing, framewise labels and
//! dataset export.

mod conv;
mod corpus;
mod dataset;
mod export;
mod mixture;
mod noise;
mod track;

pub use conv::{convolve_foa, fft_convolve};
pub use corpus::{parse_word_timestamps, toy_corpus_generate, CorpusIndex, Speaker, Split, Utterance};
pub use dataset::{crop_bins, load_split, FeatureChannels, LabeledExample};
pub use export::{
    export_dataset, generate_dataset, read_labels, read_ledgers, CorpusSource, DatasetManifest, DatasetSpec,
    ExampleRecord, NoiseSourceSpec, SplitCounts, SplitSummary, MANIFEST_FILE,
};
pub use mixture::{
    active_power, assemble_mixture, draw_nsp, frame_labels, Mixture, MixtureConfig, MixtureLedger, SourceLedger,
    NSP_WEIGHTS,
};
pub use noise::{NoiseBank, NoiseItem, NoiseMaterial};
pub use track::{build_single_speaker_track, Placement, SpeakerTrack, TrackConfig};

use crate::dsp::DspError;
use crate::spatial::SpatialError;

pub const TRACK_SECONDS: f64 = 15.0;
pub const TRACK_LEN: usize = 240_000;

/// Half-open sample range `[start, end)`.
pub type Interval = (usize, usize);

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("split leakage: {0}")]
    SplitLeakage(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("speaker {0} has no utterances")]
    EmptySpeaker(String),
    #[error("no speech after {0} track attempts")]
    DegenerateTrack(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sorts and merges overlapping or touching intervals, dropping empty ones.
pub fn merge_intervals(mut iv: Vec<Interval>) -> Vec<Interval> {
    iv.retain(|(s, e)| s < e);
    iv.sort_unstable();
    let mut out: Vec<Interval> = Vec::with_capacity(iv.len());
    for (s, e) in iv {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Shifts intervals by `shift` samples and clips them to `[0, len)`.
pub fn shift_intervals(iv: &[Interval], shift: usize, len: usize) -> Vec<Interval> {
    iv.iter()
        .map(|&(s, e)| ((s + shift).min(len), (e + shift).min(len)))
        .filter(|(s, e)| s < e)
        .collect()
}
