use std::f64::consts::PI;
use std::sync::Arc;

use realfft::{RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;

use super::{DspError, Spectrogram, Waveform};

pub const FFT_SIZE: usize = 1024;
pub const HOP: usize = 512;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

/// `w[k] = sin(π (k + ½) / n)`; squares of samples half a window apart sum to one.
pub fn sine_window(n: usize) -> Vec<f64> {
    assert!(n.is_multiple_of(2), "window length must be even");
    (0..n).map(|k| (PI * (k as f64 + 0.5) / n as f64).sin()).collect()
}

/// Complete frames in a signal of `len` samples (no edge padding).
pub fn frame_count(len: usize) -> usize {
    if len < FFT_SIZE {
        0
    } else {
        (len - FFT_SIZE) / HOP + 1
    }
}

/// Reusable windowed 1024-point real FFT.
pub struct StftPlan {
    window: Vec<f64>,
    fft: Arc<dyn RealToComplex<f64>>,
    input: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Default for StftPlan {
    fn default() -> Self {
        Self::new()
    }
}

impl StftPlan {
    pub fn new() -> Self {
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
        StftPlan {
            window: sine_window(FFT_SIZE),
            input: fft.make_input_vec(),
            spectrum: fft.make_output_vec(),
            scratch: fft.make_scratch_vec(),
            fft,
        }
    }

    /// Magnitudes of bins `0..=512` of one windowed frame.
    pub fn magnitudes(&mut self, frame: &[f32]) -> &[Complex<f64>] {
        for ((dst, &x), &w) in self.input.iter_mut().zip(frame).zip(&self.window) {
            *dst = x as f64 * w;
        }
        self.fft
            .process_with_scratch(&mut self.input, &mut self.spectrum, &mut self.scratch)
            .expect("fixed-size buffers");
        &self.spectrum
    }
}

/// Per-channel magnitude STFT with a 1024-sample sine window and a
/// 512-sample hop; channels are stacked on the last axis.
pub fn stft_magnitude(w: &Waveform) -> Result<Spectrogram, DspError> {
    w.validate()?;
    let len = w.len();
    if len < FFT_SIZE {
        return Err(DspError::InsufficientSamples { len });
    }
    let frames = frame_count(len);
    let channels = w.n_channels();
    let mut values = vec![0.0f32; frames * N_BINS * channels];
    let mut plan = StftPlan::new();
    for (c, samples) in w.channels.iter().enumerate() {
        for t in 0..frames {
            let spec = plan.magnitudes(&samples[t * HOP..t * HOP + FFT_SIZE]);
            for (k, z) in spec.iter().enumerate() {
                values[(t * N_BINS + k) * channels + c] = z.norm() as f32;
            }
        }
    }
    Ok(Spectrogram {
        frames,
        bins: N_BINS,
        channels,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_formula_and_symmetry() {
        let w = sine_window(1024);
        assert!((w[0] - (PI / 2048.0).sin()).abs() < 1e-15);
        assert!((w[0] - 0.001534).abs() < 1e-6);
        for k in 0..1024 {
            assert!((w[k] - w[1023 - k]).abs() < 1e-12);
        }
        for k in 0..512 {
            assert!((w[k] * w[k] + w[k + 512] * w[k + 512] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fifteen_seconds_gives_467_frames() {
        assert_eq!(frame_count(240_000), 467);
        assert_eq!(frame_count(1023), 0);
        assert_eq!(frame_count(1024), 1);
    }

    #[test]
    fn short_signal_is_rejected() {
        let err = stft_magnitude(&Waveform::mono(vec![0.0; 1000])).unwrap_err();
        assert!(matches!(err, DspError::InsufficientSamples { len: 1000 }));
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let w = Waveform {
            channels: vec![vec![0.0; 4096]],
            sample_rate: 44_100,
        };
        assert!(matches!(stft_magnitude(&w), Err(DspError::SampleRate(44_100))));
    }

    #[test]
    fn constant_signal_is_dc() {
        // A sine-windowed constant leaks into bin k with relative magnitude
        // close to 1/(4k²−1): bin 0 dominates, later bins fall off
        // quadratically. Compared against a direct DFT of the window.
        let s = stft_magnitude(&Waveform::mono(vec![0.3; 4096])).unwrap();
        let w = sine_window(FFT_SIZE);
        let dft: Vec<f64> = (0..N_BINS)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, wn) in w.iter().enumerate() {
                    let ph = -2.0 * PI * (k * n) as f64 / FFT_SIZE as f64;
                    re += 0.3 * wn * ph.cos();
                    im += 0.3 * wn * ph.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        for t in 0..s.frames {
            let dc = s.at(t, 0, 0) as f64;
            assert!((dc - 0.3 * 2.0 * 1024.0 / PI).abs() / dc < 1e-3);
            for k in 1..N_BINS {
                let got = s.at(t, k, 0) as f64;
                assert!(got < dc);
                assert!((got - dft[k]).abs() < 1e-6 * dc, "bin {k}: {got} vs {}", dft[k]);
            }
            assert!((s.at(t, 2, 0) as f64 / dc - 1.0 / 15.0).abs() < 1e-4);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let mut x = 0x2545F4914F6CDD1Du64;
        let samples: Vec<f32> = (0..16000)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x % 20001) as f32 / 10000.0 - 1.0
            })
            .collect();
        let s = stft_magnitude(&Waveform::mono(samples.clone())).unwrap();
        let w = sine_window(FFT_SIZE);
        for t in 0..s.frames {
            let time: f64 = (0..FFT_SIZE)
                .map(|n| (samples[t * HOP + n] as f64 * w[n]).powi(2))
                .sum();
            let freq: f64 = (0..N_BINS)
                .map(|k| {
                    let m = (s.at(t, k, 0) as f64).powi(2);
                    if k == 0 || k == N_BINS - 1 { m } else { 2.0 * m }
                })
                .sum::<f64>()
                / FFT_SIZE as f64;
            assert!((time - freq).abs() / time < 1e-6, "frame {t}: {time} vs {freq}");
        }
    }

    #[test]
    fn bin_centered_cosine_peaks_in_its_bin() {
        for k0 in [5usize, 40, 300] {
            let f = 16000.0 * k0 as f64 / 1024.0;
            let x: Vec<f32> = (0..8192)
                .map(|n| (2.0 * PI * f * n as f64 / 16000.0).cos() as f32)
                .collect();
            let s = stft_magnitude(&Waveform::mono(x)).unwrap();
            for t in 0..s.frames {
                let argmax = (0..N_BINS)
                    .max_by(|&a, &b| s.at(t, a, 0).total_cmp(&s.at(t, b, 0)))
                    .unwrap();
                assert_eq!(argmax, k0);
            }
        }
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 1024usize..40_000) {
            let s = stft_magnitude(&Waveform::mono(vec![0.01; len])).unwrap();
            prop_assert_eq!(s.frames, (len - 1024) / 512 + 1);
        }

        #[test]
        fn sign_flip_invariance(seed in 0u64..1000) {
            let x: Vec<f32> = (0..3000).map(|n| (((n as u64 * 2654435761 + seed) % 1000) as f32 / 500.0) - 1.0).collect();
            let neg: Vec<f32> = x.iter().map(|v| -v).collect();
            let a = stft_magnitude(&Waveform::mono(x)).unwrap();
            let b = stft_magnitude(&Waveform::mono(neg)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
