use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::corpus::sorted_entries;
use super::{DatagenError, Split};
use crate::dsp::{wav::read_wav, Waveform, SAMPLE_RATE};
use crate::spatial::{diffuse_field, PLANE_WAVES};

/// Source material of one noise type.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseMaterial {
    /// Gaussian noise through a one-pole low-pass with pole `pole`, slowly
    /// amplitude-modulated at `mod_hz` with depth `mod_depth`.
    Colored { pole: f64, mod_hz: f64, mod_depth: f64 },
    /// Mono recording; each plane wave reads it from its own random offset.
    Recording(Arc<Vec<f32>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseItem {
    pub id: String,
    pub split: Split,
    pub material: NoiseMaterial,
}

impl NoiseItem {
    /// Diffuse FOA rendering: 64 plane waves from uniform random directions,
    /// each with an independent excerpt of this noise.
    pub fn render_diffuse<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Waveform {
        diffuse_field(len, PLANE_WAVES, rng, |_, rng| self.excerpt(len, rng))
    }

    /// One mono excerpt of `len` samples.
    pub fn excerpt<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f32> {
        match &self.material {
            NoiseMaterial::Colored { pole, mod_hz, mod_depth } => {
                let norm = (1.0 - pole * pole).sqrt();
                let phase = rng.gen_range(0.0..2.0 * PI);
                let mut y = rng.sample::<f64, _>(StandardNormal);
                (0..len)
                    .map(|n| {
                        y = pole * y + norm * rng.sample::<f64, _>(StandardNormal);
                        let t = n as f64 / SAMPLE_RATE as f64;
                        let env = 1.0 + mod_depth * (2.0 * PI * mod_hz * t + phase).sin();
                        (y * env) as f32
                    })
                    .collect()
            }
            NoiseMaterial::Recording(x) => {
                let off = rng.gen_range(0..x.len());
                (0..len).map(|n| x[(off + n) % x.len()]).collect()
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseBank {
    pub items: Vec<NoiseItem>,
}

impl NoiseBank {
    /// Colored-noise textures from hum-like to hiss-like, split 80/10/10.
    pub fn toy<R: Rng + ?Sized>(n_items: usize, rng: &mut R) -> Self {
        let n_eval = if n_items >= 3 { (n_items / 10).max(1) } else { 0 };
        let n_train = n_items - 2 * n_eval;
        let items = (0..n_items)
            .map(|i| {
                let split = if i < n_train {
                    Split::Train
                } else if i < n_train + n_eval {
                    Split::Val
                } else {
                    Split::Test
                };
                NoiseItem {
                    id: format!("noise{i:03}"),
                    split,
                    material: NoiseMaterial::Colored {
                        pole: rng.gen_range(0.0..0.98),
                        mod_hz: rng.gen_range(0.1..1.0),
                        mod_depth: rng.gen_range(0.0..0.5),
                    },
                }
            })
            .collect();
        NoiseBank { items }
    }

    /// Reads `root/{train,val,test}/*.wav` (16 kHz mono).
    pub fn from_dir(root: &Path) -> Result<Self, DatagenError> {
        let mut items = Vec::new();
        for split in Split::ALL {
            let dir = root.join(split.name());
            if !dir.is_dir() {
                continue;
            }
            for f in sorted_entries(&dir)? {
                if f.extension().and_then(|e| e.to_str()) != Some("wav") {
                    continue;
                }
                let w = read_wav(&f)?;
                if w.sample_rate != SAMPLE_RATE || w.n_channels() != 1 || w.is_empty() {
                    return Err(DatagenError::Corpus(format!("{}: need non-empty 16 kHz mono", f.display())));
                }
                items.push(NoiseItem {
                    id: f.file_stem().unwrap().to_string_lossy().into_owned(),
                    split,
                    material: NoiseMaterial::Recording(Arc::new(w.channels.into_iter().next().unwrap())),
                });
            }
        }
        let bank = NoiseBank { items };
        bank.check_disjoint()?;
        Ok(bank)
    }

    pub fn split(&self, split: Split) -> Vec<&NoiseItem> {
        self.items.iter().filter(|n| n.split == split).collect()
    }

    pub fn check_disjoint(&self) -> Result<(), DatagenError> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for n in &self.items {
            if let Some(&other) = seen.get(n.id.as_str()) {
                if other != n.split {
                    return Err(DatagenError::SplitLeakage(format!(
                        "noise {} in both {} and {}",
                        n.id,
                        other.name(),
                        n.split.name()
                    )));
                }
            }
            seen.insert(&n.id, n.split);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn colored_noise_has_unit_power_and_low_pass_tilt() {
        let item = NoiseItem {
            id: "n".into(),
            split: Split::Train,
            material: NoiseMaterial::Colored {
                pole: 0.9,
                mod_hz: 0.5,
                mod_depth: 0.0,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = item.excerpt(200_000, &mut rng);
        let p: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((p - 1.0).abs() < 0.1, "{p}");
        let lag1: f64 = x.windows(2).map(|w| w[0] as f64 * w[1] as f64).sum::<f64>() / x.len() as f64;
        assert!((lag1 - 0.9).abs() < 0.05, "{lag1}");
    }

    #[test]
    fn toy_bank_splits_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = NoiseBank::toy(20, &mut rng);
        bank.check_disjoint().unwrap();
        assert_eq!(bank.split(Split::Val).len(), 2);
        assert_eq!(bank.split(Split::Test).len(), 2);
    }
}
