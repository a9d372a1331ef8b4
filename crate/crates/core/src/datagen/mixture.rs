use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::track::Placement;
use super::{
    build_single_speaker_track, convolve_foa, shift_intervals, DatagenError, Interval, NoiseItem, Speaker,
    TrackConfig, TRACK_LEN,
};
use crate::dsp::{FFT_SIZE, HOP};
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::spatial::RoomResponses;

/// Relative odds of 1..=5 simultaneous speakers per mixture.
pub const NSP_WEIGHTS: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    pub nsp_weights: [f64; 5],
    /// Per-interferer source-1-to-interferer ratio range (dB).
    pub sir_db: (f64, f64),
    /// Source-1-to-noise ratio range (dB).
    pub snr_db: (f64, f64),
    pub track: TrackConfig,
    pub add_noise: bool,
    /// Rescales the finished mixture (stems and noise alike) to this W RMS.
    pub normalize_rms: Option<f64>,
    pub max_track_attempts: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            nsp_weights: NSP_WEIGHTS,
            sir_db: (0.0, 10.0),
            snr_db: (10.0, 20.0),
            track: TrackConfig::default(),
            add_noise: true,
            normalize_rms: Some(0.05),
            max_track_attempts: 10,
        }
    }
}

/// Draws the number of speakers from weights normalized to sum to one.
pub fn draw_nsp<R: Rng + ?Sized>(weights: &[f64; 5], rng: &mut R) -> usize {
    let dist = WeightedIndex::new(weights).expect("positive weights");
    dist.sample(rng) + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceLedger {
    pub speaker: String,
    /// Which response of the room this source was rendered through.
    pub srir_index: usize,
    /// Whole-sample direct-path delay applied to the activity intervals.
    pub direct_delay: usize,
    /// Active samples of the reverberant stem, sorted and disjoint.
    pub intervals: Vec<Interval>,
    /// `None` for the reference source.
    pub sir_db: Option<f64>,
    pub gain: f64,
    pub placements: Vec<Placement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureLedger {
    pub n_sp: usize,
    pub len: usize,
    pub sources: Vec<SourceLedger>,
    pub snr_db: Option<f64>,
    pub noise_id: Option<String>,
    pub noise_gain: f64,
    pub output_gain: f64,
    pub room_index: usize,
    pub room_seed: u64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Mixture {
    pub audio: Waveform,
    /// Reverberant sources as they appear in `audio`.
    pub stems: Vec<Waveform>,
    pub noise: Option<Waveform>,
    pub ledger: MixtureLedger,
}

/// Mean square of `x` over the union of `intervals` (0 if empty).
pub fn active_power(x: &[f32], intervals: &[Interval]) -> f64 {
    let n: usize = intervals.iter().map(|(s, e)| e - s).sum();
    if n == 0 {
        return 0.0;
    }
    let e: f64 = intervals
        .iter()
        .flat_map(|&(s, e)| &x[s..e])
        .map(|&v| (v as f64).powi(2))
        .sum();
    e / n as f64
}

fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Renders `n_sp` distinct speakers through distinct responses of `room`,
/// mixes them at the drawn SIRs and adds diffuse noise at the drawn SNR.
pub fn assemble_mixture(
    room: &RoomResponses,
    room_index: usize,
    n_sp: usize,
    speakers: &[&Speaker],
    noise: &[&NoiseItem],
    cfg: &MixtureConfig,
    seed: u64,
) -> Result<Mixture, DatagenError> {
    if !(1..=5).contains(&n_sp) {
        return Err(DatagenError::InvalidArgument(format!("n_sp {n_sp}")));
    }
    if speakers.len() < n_sp {
        return Err(DatagenError::InvalidArgument(format!(
            "{} speakers available for {n_sp} sources",
            speakers.len()
        )));
    }
    if room.srirs.len() < n_sp {
        return Err(DatagenError::InvalidArgument(format!(
            "room has {} responses for {n_sp} sources",
            room.srirs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&Speaker> = speakers.choose_multiple(&mut rng, n_sp).copied().collect();
    let slots: Vec<usize> = (0..room.srirs.len()).choose_multiple(&mut rng, n_sp);
    let len = TRACK_LEN.min((cfg.track.duration * SAMPLE_RATE as f64).round() as usize);

    let mut stems = Vec::with_capacity(n_sp);
    let mut sources = Vec::with_capacity(n_sp);
    let mut powers = Vec::with_capacity(n_sp);
    for (speaker, &slot) in chosen.iter().zip(&slots) {
        let srir = &room.srirs[slot];
        let delay = srir.direct_delay.round() as usize;
        let mut attempt = 0;
        let (stem, intervals, placements, power) = loop {
            if attempt == cfg.max_track_attempts {
                return Err(DatagenError::DegenerateTrack(attempt));
            }
            attempt += 1;
            let track = build_single_speaker_track(speaker, &cfg.track, &mut rng)?;
            let intervals = shift_intervals(&track.activity, delay, len);
            if intervals.is_empty() {
                continue;
            }
            let stem = convolve_foa(&track.samples, &srir.audio, len);
            let p = active_power(&stem.channels[0], &intervals);
            if p > 0.0 {
                break (stem, intervals, track.placements, p);
            }
        };
        stems.push(stem);
        powers.push(power);
        sources.push(SourceLedger {
            speaker: speaker.id.clone(),
            srir_index: slot,
            direct_delay: delay,
            intervals,
            sir_db: None,
            gain: 1.0,
            placements,
        });
    }

    let p1 = powers[0];
    for s in 1..n_sp {
        let sir = rng.gen_range(cfg.sir_db.0..=cfg.sir_db.1);
        let gain = (p1 / (powers[s] * db_to_power(sir))).sqrt();
        sources[s].sir_db = Some(sir);
        sources[s].gain = gain;
        scale(&mut stems[s], gain);
    }

    let mut noise_out = None;
    let (mut snr_db, mut noise_id, mut noise_gain) = (None, None, 0.0);
    if cfg.add_noise && !noise.is_empty() {
        let item = noise[rng.gen_range(0..noise.len())];
        let mut n = item.render_diffuse(len, &mut rng);
        let pn = active_power(&n.channels[0], &[(0, len)]);
        let snr = rng.gen_range(cfg.snr_db.0..=cfg.snr_db.1);
        noise_gain = (p1 / (pn * db_to_power(snr))).sqrt();
        scale(&mut n, noise_gain);
        snr_db = Some(snr);
        noise_id = Some(item.id.clone());
        noise_out = Some(n);
    }

    let mut audio = Waveform::silent(4, len);
    for part in stems.iter().chain(noise_out.iter()) {
        for (dst, src) in audio.channels.iter_mut().zip(&part.channels) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    let mut output_gain = 1.0;
    if let Some(target) = cfg.normalize_rms {
        let rms = active_power(&audio.channels[0], &[(0, len)]).sqrt();
        if rms > 0.0 {
            output_gain = target / rms;
            scale(&mut audio, output_gain);
            stems.iter_mut().for_each(|s| scale(s, output_gain));
            if let Some(n) = noise_out.as_mut() {
                scale(n, output_gain);
            }
        }
    }

    Ok(Mixture {
        audio,
        stems,
        noise: noise_out,
        ledger: MixtureLedger {
            n_sp,
            len,
            sources,
            snr_db,
            noise_id,
            noise_gain,
            output_gain,
            room_index,
            room_seed: room.seed,
            seed,
        },
    })
}

fn scale(w: &mut Waveform, g: f64) {
    let g = g as f32;
    w.channels.iter_mut().flatten().for_each(|v| *v *= g);
}

/// Frame `t` spans samples `[t·512, t·512 + 1024)`; its label is the
/// largest number of simultaneously active sources at any of those samples.
pub fn frame_labels(ledger: &MixtureLedger, n_frames: usize) -> Vec<u8> {
    let len = ledger.len.max(n_frames.saturating_sub(1) * HOP + FFT_SIZE);
    let mut delta = vec![0i32; len + 1];
    for src in &ledger.sources {
        for &(s, e) in &src.intervals {
            delta[s.min(len)] += 1;
            delta[e.min(len)] -= 1;
        }
    }
    let mut count = vec![0u8; len];
    let mut c = 0i32;
    for (i, d) in delta[..len].iter().enumerate() {
        c += d;
        count[i] = c as u8;
    }
    (0..n_frames)
        .map(|t| {
            let s = t * HOP;
            count[s..s + FFT_SIZE].iter().copied().max().unwrap_or(0)
        })
        .collect()
}
