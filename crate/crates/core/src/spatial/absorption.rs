use serde::{Deserialize, Serialize};

use super::ism::{highpass, w_by_order};
use super::t60::schroeder_t60;
use super::{sabine_alpha, RoomSpec, SpatialError};
use crate::dsp::SAMPLE_RATE;

/// How the uniform wall absorption is derived from the target T60.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorptionModel {
    /// `α = 0.161·V / (S·T60)`.
    Sabine,
    /// α chosen so the simulated W response reads back the target T60.
    #[default]
    DecayMatched,
}

impl AbsorptionModel {
    /// `length` and `highpass_hz` describe the response the absorption is
    /// matched for.
    pub fn alpha(self, room: &RoomSpec, length: usize, highpass_hz: Option<f64>) -> Result<f64, SpatialError> {
        match self {
            AbsorptionModel::Sabine => sabine_alpha(room),
            AbsorptionModel::DecayMatched => decay_matched_alpha(room, length, highpass_hz),
        }
    }
}

const BISECTION_STEPS: usize = 30;

/// Bisects the wall absorption so the Schroeder T60 of the W channel,
/// pooled over the room's sources, equals the room's target. The Sabine
/// value must still be physical (≤ 1), which keeps its error path.
///
/// Sabine alone overshoots badly in flat or elongated rooms: the image
/// lattice keeps grazing paths that hit few walls, and the late decay is
/// dominated by them.
pub fn decay_matched_alpha(room: &RoomSpec, length: usize, highpass_hz: Option<f64>) -> Result<f64, SpatialError> {
    sabine_alpha(room)?;
    room.validate()?;
    let fs = SAMPLE_RATE as f64;
    let centre = room.dims.map(|d| d / 2.0);
    let sources = if room.sources.is_empty() {
        vec![centre]
    } else {
        room.sources.clone()
    };
    let parts: Vec<Vec<Vec<f64>>> = sources
        .iter()
        .map(|src| {
            let mut orders = w_by_order(room, src, length);
            if let Some(fc) = highpass_hz {
                orders.iter_mut().filter(|o| !o.is_empty()).for_each(|o| highpass(o, fc, fs));
            }
            orders
        })
        .collect();
    let mut w = vec![0.0; length];
    let mut energy = vec![0.0; length];
    let mut t60_at = |alpha: f64| -> f64 {
        let beta = (1.0 - alpha).sqrt();
        energy.iter_mut().for_each(|e| *e = 0.0);
        for orders in &parts {
            w.iter_mut().for_each(|v| *v = 0.0);
            let mut g = 1.0;
            for o in orders {
                if !o.is_empty() {
                    w.iter_mut().zip(o).for_each(|(a, b)| *a += g * b);
                }
                g *= beta;
            }
            energy.iter_mut().zip(&w).for_each(|(e, v)| *e += v * v);
        }
        // too little decay to fit reads as an unbounded T60
        schroeder_t60(&energy, 1.0 / fs).unwrap_or(f64::INFINITY)
    };
    let (mut lo, mut hi) = (1e-4f64, 0.9999f64);
    if t60_at(hi) > room.t60 {
        return Err(SpatialError::RoomTooSmall { alpha: hi });
    }
    if t60_at(lo) < room.t60 {
        return Ok(lo);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if t60_at(mid) > room.t60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{measure_t60, simulate_srir, SrirOptions};

    fn room(dims: [f64; 3], t60: f64) -> RoomSpec {
        RoomSpec {
            dims,
            t60,
            mic: [1.2, 1.4, 1.1],
            sources: vec![[dims[0] - 0.6, dims[1] - 0.9, 1.5]],
        }
    }

    #[test]
    fn simulated_room_reads_back_target() {
        let r = room([3.3, 9.8, 2.7], 0.6);
        let s = simulate_srir(&r, 0, &SrirOptions::default()).unwrap();
        let t = measure_t60(&s).unwrap();
        assert!((t / 0.6 - 1.0).abs() < 0.02, "{t}");
    }

    #[test]
    fn flat_room_needs_more_absorption_than_sabine() {
        let r = room([9.0, 9.0, 2.2], 0.5);
        let len = 9600;
        assert!(decay_matched_alpha(&r, len, Some(40.0)).unwrap() > sabine_alpha(&r).unwrap());
    }

    #[test]
    fn longer_target_needs_less_absorption() {
        let a = decay_matched_alpha(&room([5.0, 4.0, 3.0], 0.3), 6000, Some(40.0)).unwrap();
        let b = decay_matched_alpha(&room([5.0, 4.0, 3.0], 0.6), 12000, Some(40.0)).unwrap();
        assert!(a > b);
    }
}
