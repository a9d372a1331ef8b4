use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{merge_intervals, DatagenError, Interval, Speaker, TRACK_SECONDS};
use crate::dsp::SAMPLE_RATE;

/// Timing of a single-speaker track, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub duration: f64,
    pub initial_silence: (f64, f64),
    pub gap_silence: (f64, f64),
    pub fade_out: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            duration: TRACK_SECONDS,
            initial_silence: (0.5, 1.0),
            gap_silence: (0.5, 2.0),
            fade_out: 0.1,
        }
    }
}

/// Where one utterance landed in a track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub utterance: String,
    pub start: usize,
    /// Samples kept after cropping.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerTrack {
    pub samples: Vec<f32>,
    pub activity: Vec<Interval>,
    pub placements: Vec<Placement>,
}

fn seconds(s: f64) -> usize {
    (s * SAMPLE_RATE as f64).round() as usize
}

/// Lays randomly chosen utterances of one speaker end to end with random
/// silences, crops to the track duration and fades out the cropped end.
/// Activity comes from each utterance's own annotation, so pauses inside
/// an utterance stay inactive.
pub fn build_single_speaker_track<R: Rng + ?Sized>(
    speaker: &Speaker,
    cfg: &TrackConfig,
    rng: &mut R,
) -> Result<SpeakerTrack, DatagenError> {
    if speaker.utterances.is_empty() {
        return Err(DatagenError::EmptySpeaker(speaker.id.clone()));
    }
    let len = seconds(cfg.duration);
    let mut samples = vec![0.0f32; len];
    let mut activity = Vec::new();
    let mut placements = Vec::new();
    let mut cursor = seconds(rng.gen_range(cfg.initial_silence.0..=cfg.initial_silence.1));
    let mut cropped = false;
    while cursor < len {
        let utt = &speaker.utterances[rng.gen_range(0..speaker.utterances.len())];
        let keep = utt.len().min(len - cursor);
        samples[cursor..cursor + keep].copy_from_slice(&utt.samples[..keep]);
        activity.extend(
            utt.activity
                .iter()
                .map(|&(s, e)| (cursor + s.min(keep), cursor + e.min(keep))),
        );
        placements.push(Placement {
            utterance: utt.id.clone(),
            start: cursor,
            len: keep,
        });
        cropped = keep < utt.len();
        cursor += utt.len() + seconds(rng.gen_range(cfg.gap_silence.0..=cfg.gap_silence.1));
    }
    if cropped {
        let fade = seconds(cfg.fade_out).min(len);
        for (i, v) in samples[len - fade..].iter_mut().enumerate() {
            *v *= 1.0 - (i + 1) as f32 / fade as f32;
        }
    }
    Ok(SpeakerTrack {
        samples,
        activity: merge_intervals(activity),
        placements,
    })
}
