use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SpatialError;

/// Shoebox room with one microphone and up to five sources (meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Length (x), width (y), height (z).
    pub dims: [f64; 3],
    /// Target reverberation time in seconds.
    pub t60: f64,
    pub mic: [f64; 3],
    pub sources: Vec<[f64; 3]>,
}

impl RoomSpec {
    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dims;
        2.0 * (l * w + l * h + w * h)
    }

    pub fn source_distance(&self, index: usize) -> Option<f64> {
        let s = self.sources.get(index)?;
        Some(dist(s, &self.mic))
    }

    /// Mic at least 0.5 m from every wall, every position strictly inside.
    pub fn validate(&self) -> Result<(), SpatialError> {
        if self.dims.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(SpatialError::InvalidRoom(format!("dimensions {:?}", self.dims)));
        }
        if !(self.t60.is_finite() && self.t60 > 0.0) {
            return Err(SpatialError::InvalidRoom(format!("t60 {}", self.t60)));
        }
        if self.sources.len() > 5 {
            return Err(SpatialError::InvalidRoom(format!("{} sources", self.sources.len())));
        }
        for k in 0..3 {
            if self.mic[k] < 0.5 || self.mic[k] > self.dims[k] - 0.5 {
                return Err(SpatialError::InvalidRoom(format!("mic {:?} within 0.5 m of a wall", self.mic)));
            }
        }
        for s in &self.sources {
            if (0..3).any(|k| s[k] <= 0.0 || s[k] >= self.dims[k]) {
                return Err(SpatialError::InvalidRoom(format!("source {s:?} outside room")));
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Sabine inversion `α = 0.161·V / (S·T60)`, uniform over the six walls.
pub fn sabine_alpha(room: &RoomSpec) -> Result<f64, SpatialError> {
    if !(room.t60 > 0.0) {
        return Err(SpatialError::InvalidRoom(format!("t60 {}", room.t60)));
    }
    let alpha = 0.161 * room.volume() / (room.surface() * room.t60);
    if alpha > 1.0 {
        return Err(SpatialError::RoomTooSmall { alpha });
    }
    Ok(alpha.min(0.9999))
}

/// Draws rooms from the training distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomSampler {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub t60: (f64, f64),
    pub mic_wall_margin: f64,
    pub source_wall_margin: f64,
    pub min_source_mic_distance: f64,
    /// Minimum angle between any two source directions seen from the mic.
    pub min_source_separation_deg: f64,
}

impl Default for RoomSampler {
    fn default() -> Self {
        RoomSampler {
            length: (2.0, 10.0),
            width: (2.0, 10.0),
            height: (2.0, 3.0),
            t60: (0.2, 0.8),
            mic_wall_margin: 0.5,
            source_wall_margin: 0.3,
            min_source_mic_distance: 0.5,
            min_source_separation_deg: 0.0,
        }
    }
}

const MAX_ATTEMPTS: usize = 10_000;

impl RoomSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n_sources: usize) -> Result<RoomSpec, SpatialError> {
        for _ in 0..100 {
            let dims = [
                rng.gen_range(self.length.0..=self.length.1),
                rng.gen_range(self.width.0..=self.width.1),
                rng.gen_range(self.height.0..=self.height.1),
            ];
            let t60 = rng.gen_range(self.t60.0..=self.t60.1);
            let mic = [0, 1, 2].map(|k| rng.gen_range(self.mic_wall_margin..=dims[k] - self.mic_wall_margin));
            let mut room = RoomSpec {
                dims,
                t60,
                mic,
                sources: Vec::with_capacity(n_sources),
            };
            if sabine_alpha(&room).is_err() {
                continue;
            }
            let mut attempts = 0;
            while room.sources.len() < n_sources && attempts < MAX_ATTEMPTS {
                attempts += 1;
                let m = self.source_wall_margin;
                let s = [0, 1, 2].map(|k| rng.gen_range(m..=dims[k] - m));
                if dist(&s, &mic) < self.min_source_mic_distance {
                    continue;
                }
                if self.min_source_separation_deg > 0.0
                    && room
                        .sources
                        .iter()
                        .any(|o| angle_deg(&mic, o, &s) < self.min_source_separation_deg)
                {
                    continue;
                }
                room.sources.push(s);
            }
            if room.sources.len() == n_sources {
                room.validate()?;
                return Ok(room);
            }
        }
        Err(SpatialError::Placement(MAX_ATTEMPTS))
    }
}

fn angle_deg(origin: &[f64; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let u: Vec<f64> = (0..3).map(|k| a[k] - origin[k]).collect();
    let v: Vec<f64> = (0..3).map(|k| b[k] - origin[k]).collect();
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees()
}
