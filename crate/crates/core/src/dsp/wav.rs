//! WAV reading (PCM 16-bit or 32-bit float) and 32-bit float writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Waveform};

pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>()?,
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()?,
        _ => return Err(DspError::Wav(hound::Error::Unsupported)),
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch.max(1)); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &v) in frame.iter().enumerate() {
            channels[c].push(v);
        }
    }
    Ok(Waveform {
        channels,
        sample_rate: spec.sample_rate,
    })
}

pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: w.n_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..w.len() {
        for c in &w.channels {
            writer.write_sample(c[i])?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: w.n_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..w.len() {
        for c in &w.channels {
            writer.write_sample((c[i].clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_and_pcm16_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform {
            channels: (0..4)
                .map(|c| (0..500).map(|n| ((n * (c + 1)) as f32 * 0.01).sin() * 0.5).collect())
                .collect(),
            sample_rate: 16_000,
        };
        let p = dir.path().join("foa.wav");
        write_wav_f32(&p, &w).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);

        let p16 = dir.path().join("pcm.wav");
        write_wav_i16(&p16, &w).unwrap();
        let back = read_wav(&p16).unwrap();
        for (a, b) in back.channels.iter().flatten().zip(w.channels.iter().flatten()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn malformed_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFF nope").unwrap();
        assert!(read_wav(&p).is_err());
    }
}
