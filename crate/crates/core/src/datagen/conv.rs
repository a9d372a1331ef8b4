use realfft::RealFftPlanner;

use crate::dsp::{Waveform, SAMPLE_RATE};

/// Linear convolution via one real FFT, truncated to `out_len` samples.
pub fn fft_convolve(x: &[f32], h: &[f32], out_len: usize) -> Vec<f32> {
    fft_convolve_many(x, &[h], out_len).pop().unwrap()
}

fn fft_convolve_many(x: &[f32], hs: &[&[f32]], out_len: usize) -> Vec<Vec<f32>> {
    let max_h = hs.iter().map(|h| h.len()).max().unwrap_or(0);
    if x.is_empty() || max_h == 0 {
        return vec![vec![0.0; out_len]; hs.len()];
    }
    let n = (x.len() + max_h - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |sig: &[f32]| {
        let mut buf = fwd.make_input_vec();
        buf.iter_mut().zip(sig).for_each(|(b, &v)| *b = v as f64);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft sizes");
        out
    };
    let xs = spectrum(x);
    hs.iter()
        .map(|h| {
            let mut hspec = spectrum(h);
            hspec.iter_mut().zip(&xs).for_each(|(a, b)| *a *= b);
            let mut time = inv.make_output_vec();
            inv.process(&mut hspec, &mut time).expect("fft sizes");
            let scale = 1.0 / n as f64;
            (0..out_len)
                .map(|i| time.get(i).map_or(0.0, |v| (v * scale) as f32))
                .collect()
        })
        .collect()
}

/// Convolves a mono signal with every channel of a multichannel response.
pub fn convolve_foa(dry: &[f32], srir: &Waveform, out_len: usize) -> Waveform {
    let hs: Vec<&[f32]> = srir.channels.iter().map(|c| c.as_slice()).collect();
    Waveform {
        channels: fft_convolve_many(dry, &hs, out_len),
        sample_rate: SAMPLE_RATE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f32> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f32> = (0..37).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = fft_convolve(&x, &h, 320);
        for (n, &v) in y.iter().enumerate() {
            let direct: f64 = (0..h.len())
                .filter(|&k| n >= k && n - k < x.len())
                .map(|k| h[k] as f64 * x[n - k] as f64)
                .sum();
            assert!((v as f64 - direct).abs() < 1e-5, "{n}");
        }
    }
}
