use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::foa_gains_from_vector;
use crate::dsp::{Waveform, SAMPLE_RATE};

pub const PLANE_WAVES: usize = 64;

/// Isotropic FOA field: `n_waves` independent plane waves from directions
/// uniform on the sphere, each carrying `signal(wave, rng)` and scaled by
/// `1/√n_waves`.
pub fn diffuse_field<R, F>(len: usize, n_waves: usize, rng: &mut R, mut signal: F) -> Waveform
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> Vec<f32>,
{
    let mut out = vec![vec![0.0f32; len]; 4];
    let scale = 1.0 / (n_waves as f64).sqrt();
    for wave in 0..n_waves {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let az: f64 = rng.gen_range(-PI..PI);
        let r = (1.0 - z * z).sqrt();
        let g = foa_gains_from_vector(r * az.cos(), r * az.sin(), z);
        let s = signal(wave, rng);
        assert_eq!(s.len(), len, "plane-wave signal length");
        for (c, ch) in out.iter_mut().enumerate() {
            let gain = (g[c] * scale) as f32;
            for (o, &v) in ch.iter_mut().zip(&s) {
                *o += gain * v;
            }
        }
    }
    Waveform {
        channels: out,
        sample_rate: SAMPLE_RATE,
    }
}

/// Diffuse white-noise field of `duration` seconds from 64 plane waves.
pub fn diffuse_noise_foa(duration: f64, seed: u64) -> Waveform {
    assert!(duration > 0.0, "duration must be positive");
    let len = (duration * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    diffuse_field(len, PLANE_WAVES, &mut rng, |_, rng| {
        (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
    })
}
