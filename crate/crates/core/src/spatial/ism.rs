use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{foa_gains_from_vector, AbsorptionModel, RoomSpec, SpatialError};
use crate::dsp::{Waveform, SAMPLE_RATE};

pub const SPEED_OF_SOUND: f64 = 343.0;

const TAPS: usize = 32;
const FRAC_STEPS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrirOptions {
    /// Highest total number of wall reflections kept.
    pub max_order: Option<u32>,
    /// Response length in samples; defaults to `ceil(1.2·T60·fs)`.
    pub length: Option<usize>,
    /// Overrides the absorption coefficient derived from T60.
    pub alpha: Option<f64>,
    pub absorption: AbsorptionModel,
    /// Cutoff of the second-order Butterworth high-pass applied to every
    /// channel. All image amplitudes are positive, so without it the dense
    /// late field carries a slowly varying offset that inflates the tail.
    pub highpass_hz: Option<f64>,
}

impl Default for SrirOptions {
    fn default() -> Self {
        SrirOptions {
            max_order: None,
            length: None,
            alpha: None,
            absorption: AbsorptionModel::default(),
            highpass_hz: Some(DEFAULT_HIGHPASS_HZ),
        }
    }
}

pub const DEFAULT_HIGHPASS_HZ: f64 = 40.0;

/// In-place causal biquad high-pass (Butterworth, Q = 1/√2).
pub fn highpass(x: &mut [f64], cutoff: f64, fs: f64) {
    let w0 = 2.0 * PI * cutoff / fs;
    let (sn, cs) = w0.sin_cos();
    let a = sn / std::f64::consts::SQRT_2;
    let a0 = 1.0 + a;
    let b0 = (1.0 + cs) / 2.0 / a0;
    let b1 = -(1.0 + cs) / a0;
    let b2 = b0;
    let a1 = -2.0 * cs / a0;
    let a2 = (1.0 - a) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Four-channel (W, X, Y, Z) spatial room impulse response.
#[derive(Clone, Debug, PartialEq)]
pub struct Srir {
    pub audio: Waveform,
    pub room: RoomSpec,
    pub source_index: usize,
    pub alpha: f64,
    /// Direct-path delay in (fractional) samples.
    pub direct_delay: f64,
}

impl Srir {
    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }
}

/// Hann-windowed sinc taps for every quantized fractional delay.
/// Row `r` holds taps for offsets `-15..=16` around a delay of `r / 1024`.
fn sinc_table() -> &'static [[f64; TAPS]] {
    static TABLE: OnceLock<Vec<[f64; TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..FRAC_STEPS)
            .map(|r| {
                let frac = r as f64 / FRAC_STEPS as f64;
                let mut row = [0.0; TAPS];
                if r == 0 {
                    row[15] = 1.0;
                    return row;
                }
                for (j, v) in row.iter_mut().enumerate() {
                    let x = j as f64 - 15.0 - frac;
                    let window = 0.5 * (1.0 + (2.0 * PI * x / TAPS as f64).cos());
                    *v = window * (PI * x).sin() / (PI * x);
                }
                row
            })
            .collect()
    })
}

/// Spreads a unit impulse at a fractional `delay` over the interpolation
/// taps that land inside `0..length`.
fn add_arrival(delay: f64, length: usize, mut put: impl FnMut(usize, f64)) {
    let mut base = delay.floor() as i64;
    let mut r = ((delay - base as f64) * FRAC_STEPS as f64).round() as usize;
    if r == FRAC_STEPS {
        r = 0;
        base += 1;
    }
    let first = base - 15;
    if first >= length as i64 {
        return;
    }
    for (j, &h) in sinc_table()[r].iter().enumerate() {
        let idx = first + j as i64;
        if idx >= 0 && idx < length as i64 && h != 0.0 {
            put(idx as usize, h);
        }
    }
}

/// W channel split by reflection count: `out[n]` holds the response of all
/// images with `n` reflections at unit wall reflectance, so the full W
/// response for reflectance `β` is `Σ_n βⁿ·out[n]` (before high-pass).
pub(crate) fn w_by_order(room: &RoomSpec, src: &[f64; 3], length: usize) -> Vec<Vec<f64>> {
    let fs = SAMPLE_RATE as f64;
    let max_dist = (length + TAPS) as f64 / fs * SPEED_OF_SOUND;
    let mut out = vec![Vec::new(); max_reflections(room, max_dist) + 1];
    for_each_image(room, src, max_dist, usize::MAX, |_, d, refl| {
        let row = &mut out[refl];
        if row.is_empty() {
            row.resize(length, 0.0);
        }
        add_arrival(d * fs / SPEED_OF_SOUND, length, |i, h| row[i] += h / d);
    });
    out
}

/// Image-source simulation of a shoebox with uniform wall absorption,
/// each arrival panned to FOA by its direction at the microphone.
pub fn simulate_srir(room: &RoomSpec, source_index: usize, opts: &SrirOptions) -> Result<Srir, SpatialError> {
    room.validate()?;
    let src = *room
        .sources
        .get(source_index)
        .ok_or(SpatialError::NoSuchSource(source_index))?;
    let distance = room.source_distance(source_index).unwrap();
    if distance < 0.05 {
        return Err(SpatialError::SourceAtMic {
            index: source_index,
            distance,
        });
    }
    let fs = SAMPLE_RATE as f64;
    let length = opts
        .length
        .unwrap_or_else(|| (1.2 * room.t60 * fs).ceil() as usize)
        .max(1);
    let alpha = match opts.alpha {
        Some(a) => a,
        None => opts.absorption.alpha(room, length, opts.highpass_hz)?,
    };
    let beta = (1.0 - alpha).max(0.0).sqrt();
    let max_dist = (length + TAPS) as f64 / fs * SPEED_OF_SOUND;
    let samples_per_meter = fs / SPEED_OF_SOUND;

    let max_refl = max_reflections(room, max_dist);
    let beta_pow: Vec<f64> = (0..=max_refl).map(|k| beta.powi(k as i32)).collect();
    let mut ir = vec![vec![0.0f64; length]; 4];
    let order_limit = opts.max_order.map_or(usize::MAX, |o| o as usize);

    for_each_image(room, &src, max_dist, order_limit, |[dx, dy, dz], d, refl| {
        let amp = beta_pow[refl] / d;
        let g = foa_gains_from_vector(dx, dy, dz);
        add_arrival(d * samples_per_meter, length, |i, h| {
            let v = amp * h;
            for c in 0..4 {
                ir[c][i] += v * g[c];
            }
        });
    });
    if let Some(fc) = opts.highpass_hz {
        ir.iter_mut().for_each(|c| highpass(c, fc, fs));
    }

    Ok(Srir {
        audio: Waveform {
            channels: ir.into_iter().map(|c| c.into_iter().map(|v| v as f32).collect()).collect(),
            sample_rate: SAMPLE_RATE,
        },
        room: room.clone(),
        source_index,
        alpha,
        direct_delay: distance * samples_per_meter,
    })
}

/// Upper bound on the reflection count of any image within `max_dist`.
pub(crate) fn max_reflections(room: &RoomSpec, max_dist: f64) -> usize {
    let n = image_range(room, max_dist);
    (2 * (n[0] + n[1] + n[2]) + 3) as usize
}

fn image_range(room: &RoomSpec, max_dist: f64) -> [i64; 3] {
    [0, 1, 2].map(|k| (max_dist / (2.0 * room.dims[k])).ceil() as i64 + 1)
}

/// Visits every image source within `max_dist` of the mic with its offset
/// from the mic, distance and total wall-reflection count.
pub(crate) fn for_each_image(
    room: &RoomSpec,
    src: &[f64; 3],
    max_dist: f64,
    order_limit: usize,
    mut f: impl FnMut([f64; 3], f64, usize),
) {
    let n = image_range(room, max_dist);
    // Per axis: candidate offsets (image − mic) with their reflection counts.
    let axis = |k: usize| -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        for m in -n[k]..=n[k] {
            for q in 0..=1i64 {
                let pos = (1 - 2 * q) as f64 * src[k] + 2.0 * m as f64 * room.dims[k];
                let d = pos - room.mic[k];
                if d.abs() <= max_dist {
                    out.push((d, ((m - q).abs() + m.abs()) as usize));
                }
            }
        }
        out
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    let max_d2 = max_dist * max_dist;
    for &(dx, rx) in &ax {
        for &(dy, ry) in &ay {
            let dxy2 = dx * dx + dy * dy;
            if dxy2 > max_d2 || rx + ry > order_limit {
                continue;
            }
            for &(dz, rz) in &az {
                let refl = rx + ry + rz;
                let d2 = dxy2 + dz * dz;
                if d2 > max_d2 || refl > order_limit {
                    continue;
                }
                f([dx, dy, dz], d2.sqrt(), refl);
            }
        }
    }
}
