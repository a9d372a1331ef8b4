//! STFT magnitude front end and WAV I/O.

mod stft;
pub mod wav;

pub use stft::{sine_window, stft_magnitude, frame_count, StftPlan, FFT_SIZE, HOP, N_BINS};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("insufficient samples: {len} < {FFT_SIZE}")]
    InsufficientSamples { len: usize },
    #[error("sample rate must be {SAMPLE_RATE} Hz, got {0}")]
    SampleRate(u32),
    #[error("unsupported channel count {0} (expected 1 or 4)")]
    Channels(usize),
    #[error("channels have unequal lengths")]
    Ragged,
    #[error("non-finite sample at channel {channel}, index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

/// Planar multichannel audio. FOA channel order is W, X, Y, Z (ACN, N3D).
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self, DspError> {
        let w = Waveform { channels, sample_rate };
        w.validate()?;
        Ok(w)
    }

    pub fn mono(samples: Vec<f32>) -> Self {
        Waveform {
            channels: vec![samples],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn silent(n_channels: usize, len: usize) -> Self {
        Waveform {
            channels: vec![vec![0.0; len]; n_channels],
            sample_rate: SAMPLE_RATE,
        }
    }

    /// Checks the pipeline entry contract: 16 kHz, 1 or 4 equal-length
    /// channels, finite samples.
    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(DspError::SampleRate(self.sample_rate));
        }
        if !matches!(self.channels.len(), 1 | 4) {
            return Err(DspError::Channels(self.channels.len()));
        }
        let len = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != len) {
            return Err(DspError::Ragged);
        }
        for (channel, c) in self.channels.iter().enumerate() {
            if let Some(index) = c.iter().position(|v| !v.is_finite()) {
                return Err(DspError::NonFinite { channel, index });
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only the W (omnidirectional) channel.
    pub fn w_only(&self) -> Waveform {
        Waveform {
            channels: vec![self.channels[0].clone()],
            sample_rate: self.sample_rate,
        }
    }
}

/// Magnitude spectrogram stored frame-major as `[frames][bins][channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize, channel: usize) -> f32 {
        self.values[(frame * self.bins + bin) * self.channels + channel]
    }

    /// Contiguous `[n][bins][channels]` block starting at `frame`.
    pub fn window(&self, frame: usize, n: usize) -> &[f32] {
        let per = self.bins * self.channels;
        &self.values[frame * per..(frame + n) * per]
    }

    /// Keeps only the first channel (W).
    pub fn w_only(&self) -> Spectrogram {
        if self.channels == 1 {
            return self.clone();
        }
        Spectrogram {
            frames: self.frames,
            bins: self.bins,
            channels: 1,
            values: self.values.iter().step_by(self.channels).copied().collect(),
        }
    }
}
