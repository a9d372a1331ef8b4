use std::path::Path;

use serde::{Deserialize, Serialize};

use super::export::read_labels;
use super::{DatagenError, DatasetManifest, Split};
use crate::dsp::{stft_magnitude, N_BINS};
use crate::dsp::wav::read_wav;
use crate::dsp::Spectrogram;
use crate::parallel::map_slice;

/// Which FOA channels the model sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChannels {
    /// W, X, Y, Z.
    Foa,
    /// Omnidirectional W only.
    WOnly,
}

impl FeatureChannels {
    pub fn count(self) -> usize {
        match self {
            FeatureChannels::Foa => 4,
            FeatureChannels::WOnly => 1,
        }
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            4 => Some(FeatureChannels::Foa),
            1 => Some(FeatureChannels::WOnly),
            _ => None,
        }
    }
}

/// Features and per-frame speaker counts of one mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub features: Spectrogram,
    pub labels: Vec<u8>,
    pub n_sp: usize,
}

/// Lowest `bins` frequency bins of a spectrogram.
pub fn crop_bins(s: &Spectrogram, bins: usize) -> Spectrogram {
    if bins >= s.bins {
        return s.clone();
    }
    let mut values = Vec::with_capacity(s.frames * bins * s.channels);
    for t in 0..s.frames {
        let row = &s.values[t * s.bins * s.channels..];
        values.extend_from_slice(&row[..bins * s.channels]);
    }
    Spectrogram {
        frames: s.frames,
        bins,
        channels: s.channels,
        values,
    }
}

/// Loads one split of an exported dataset and computes STFT magnitude
/// features, keeping `channels` and the lowest `bins` bins (513 = all).
/// Example ids are prefixed with the split name.
pub fn load_split(
    dir: &Path,
    split: Split,
    channels: FeatureChannels,
    bins: usize,
) -> Result<Vec<LabeledExample>, DatagenError> {
    if bins == 0 || bins > N_BINS {
        return Err(DatagenError::InvalidArgument(format!("bins {bins}")));
    }
    let manifest = DatasetManifest::read(dir)?;
    let mut labels = read_labels(dir, split)?;
    let records: Vec<_> = manifest.split_examples(split).cloned().collect();
    let feats = map_slice(&records, |rec| -> Result<Spectrogram, DatagenError> {
        let mut w = read_wav(&dir.join(&rec.audio))?;
        if channels == FeatureChannels::WOnly {
            w = w.w_only();
        }
        Ok(crop_bins(&stft_magnitude(&w)?, bins))
    });
    records
        .into_iter()
        .zip(feats)
        .map(|(rec, f)| {
            let features = f?;
            let l = labels
                .remove(&rec.id)
                .ok_or_else(|| DatagenError::Corpus(format!("no labels for {}", rec.id)))?;
            if l.len() != features.frames {
                return Err(DatagenError::Corpus(format!(
                    "{}: {} labels for {} frames",
                    rec.id,
                    l.len(),
                    features.frames
                )));
            }
            Ok(LabeledExample {
                id: format!("{}/{}", split.name(), rec.id),
                features,
                labels: l,
                n_sp: rec.n_sp,
            })
        })
        .collect()
}
