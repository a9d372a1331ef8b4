//! Sliding one-frame-shift inference over whole signals and the per-class
//! accuracy / MAE metrics with their confusion matrix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledExample;
use crate::dsp::Spectrogram;
use crate::model::{count_from_probs, crnn_forward, CrnnConfig, ModelError, N_CLASSES};
use crate::numerics::{ParamStore, Tensor};
use crate::parallel::map_slice;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("signal has {frames} frames, fewer than N_t = {n_t}")]
    TooShort { frames: usize, n_t: usize },
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class {0} outside 0..6")]
    ClassRange(usize),
    #[error("reports cover different classes: {0:?} vs {1:?}")]
    ClassSetMismatch(Vec<usize>, Vec<usize>),
    #[error("features have {got} bins × {got_ch} channels, model expects {bins} × {channels}")]
    FeatureShape { got: usize, got_ch: usize, bins: usize, channels: usize },
    #[error("empty evaluation set")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which frame a window's decision is attributed to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// The window's last frame `e`.
    #[default]
    EndFrame,
    /// The frame under the decision row, `e − 3`.
    DecisionRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame: usize,
    pub count: usize,
    /// Probabilities of the decision row.
    pub probs: [f32; N_CLASSES],
}

/// Windows evaluated per forward pass in [`sliding_count`].
const SLIDING_BATCH: usize = 32;

/// Runs the model on every window `[e − N_t + 1, e]` for
/// `e = N_t − 1 … n − 1` and reads the count at the decision row. Returns
/// `n − N_t + 1` predictions in frame order.
pub fn sliding_count(
    cfg: &CrnnConfig,
    params: &ParamStore<f32>,
    features: &Spectrogram,
    alignment: Alignment,
) -> Result<Vec<FramePrediction>, EvalError> {
    let n_t = cfg.n_frames;
    if features.bins != cfg.n_bins || features.channels != cfg.in_channels {
        return Err(EvalError::FeatureShape {
            got: features.bins,
            got_ch: features.channels,
            bins: cfg.n_bins,
            channels: cfg.in_channels,
        });
    }
    if features.frames < n_t {
        return Err(EvalError::TooShort {
            frames: features.frames,
            n_t,
        });
    }
    let starts: Vec<usize> = (0..=features.frames - n_t).collect();
    let per_window = n_t * features.bins * features.channels;
    let mut out = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(SLIDING_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * per_window);
        for &s in chunk {
            data.extend_from_slice(features.window(s, n_t));
        }
        let input = Tensor::new(&[chunk.len(), n_t, features.bins, features.channels], data)
            .expect("window sizes agree");
        let probs = crnn_forward(cfg, params, input)?;
        let k = cfg.n_classes;
        for (i, &s) in chunk.iter().enumerate() {
            let rows = Tensor::new(&[n_t, k], probs.data()[i * n_t * k..(i + 1) * n_t * k].to_vec())
                .expect("row block");
            let count = count_from_probs(&rows)?;
            let d = cfg.decision_row();
            let mut p = [0.0f32; N_CLASSES];
            p[..k].copy_from_slice(&rows.data()[d * k..(d + 1) * k]);
            let end = s + n_t - 1;
            out.push(FramePrediction {
                frame: match alignment {
                    Alignment::EndFrame => end,
                    Alignment::DecisionRow => end - 3,
                },
                count,
                probs: p,
            });
        }
    }
    Ok(out)
}

/// Frame counts per (true class, predicted class).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(preds: &[usize], labels: &[usize]) -> Result<Self, EvalError> {
        if preds.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                preds: preds.len(),
                labels: labels.len(),
            });
        }
        let mut m = ConfusionMatrix::default();
        for (&p, &l) in preds.iter().zip(labels) {
            if p >= N_CLASSES {
                return Err(EvalError::ClassRange(p));
            }
            if l >= N_CLASSES {
                return Err(EvalError::ClassRange(l));
            }
            m.counts[l][p] += 1;
        }
        Ok(m)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    /// `T(k)`, the number of frames whose true class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> [Option<f64>; N_CLASSES] {
        std::array::from_fn(|k| {
            let t = self.support(k);
            (t > 0).then(|| 100.0 * self.counts[k][k] as f64 / t as f64)
        })
    }

    pub fn mae(&self) -> [Option<f64>; N_CLASSES] {
        std::array::from_fn(|k| {
            let t = self.support(k);
            (t > 0).then(|| {
                let err: u64 = (0..N_CLASSES).map(|p| self.counts[k][p] * p.abs_diff(k) as u64).sum();
                err as f64 / t as f64
            })
        })
    }
}

/// Percentage of frames of each true class predicted correctly; `None` for
/// classes that never occur in `labels`.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize]) -> Result<[Option<f64>; N_CLASSES], EvalError> {
    Ok(ConfusionMatrix::from_pairs(preds, labels)?.accuracy())
}

/// `MAE(k) = 1/T(k) Σ_{t: label = k} |k̂(t) − k|`; `None` where `T(k) = 0`.
pub fn per_class_mae(preds: &[usize], labels: &[usize]) -> Result<[Option<f64>; N_CLASSES], EvalError> {
    Ok(ConfusionMatrix::from_pairs(preds, labels)?.mae())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: [Option<f64>; N_CLASSES],
    pub mae: [Option<f64>; N_CLASSES],
    pub confusion: ConfusionMatrix,
    pub total_frames: u64,
    pub n_frames: usize,
    pub channels: usize,
    pub alignment: Alignment,
    pub checkpoint: String,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, cfg: &CrnnConfig, alignment: Alignment, checkpoint: &str) -> Self {
        EvalReport {
            accuracy: confusion.accuracy(),
            mae: confusion.mae(),
            total_frames: confusion.total(),
            confusion,
            n_frames: cfg.n_frames,
            channels: cfg.in_channels,
            alignment,
            checkpoint: checkpoint.to_string(),
        }
    }

    pub fn present_classes(&self) -> Vec<usize> {
        (0..N_CLASSES).filter(|&k| self.accuracy[k].is_some()).collect()
    }

    /// Unweighted mean of the per-class accuracies of present classes.
    pub fn mean_accuracy(&self) -> f64 {
        let v: Vec<f64> = self.accuracy.iter().flatten().copied().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Fixed-width table with one accuracy and one MAE row, classes 0–5.
    pub fn render_table(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<24}", format!("{label} N_t={}", self.n_frames));
        for k in 0..N_CLASSES {
            let _ = write!(s, "{k:>8}");
        }
        s.push('\n');
        for (name, row) in [("acc. (%)", &self.accuracy), ("MAE", &self.mae)] {
            let _ = write!(s, "{name:<24}");
            for v in row {
                match v {
                    Some(x) => {
                        let _ = write!(s, "{x:>8.2}");
                    }
                    None => {
                        let _ = write!(s, "{:>8}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Confusion matrix of sliding predictions on one example against its
/// frame labels, skipping frames without a prediction.
pub fn evaluate_example(
    cfg: &CrnnConfig,
    params: &ParamStore<f32>,
    ex: &LabeledExample,
    alignment: Alignment,
) -> Result<ConfusionMatrix, EvalError> {
    let preds = sliding_count(cfg, params, &ex.features, alignment)?;
    let p: Vec<usize> = preds.iter().map(|f| f.count).collect();
    let l: Vec<usize> = preds.iter().map(|f| ex.labels[f.frame] as usize).collect();
    ConfusionMatrix::from_pairs(&p, &l)
}

/// Sliding evaluation over a whole split, parallel across examples.
pub fn evaluate_examples(
    cfg: &CrnnConfig,
    params: &ParamStore<f32>,
    examples: &[LabeledExample],
    alignment: Alignment,
    checkpoint: &str,
) -> Result<EvalReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let parts = map_slice(examples, |ex| evaluate_example(cfg, params, ex, alignment));
    let mut total = ConfusionMatrix::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(EvalReport::from_confusion(total, cfg, alignment, checkpoint))
}

/// Per-class differences `a − b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub accuracy: [Option<f64>; N_CLASSES],
    pub mae: [Option<f64>; N_CLASSES],
    pub mean_accuracy: f64,
    pub warnings: Vec<String>,
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDelta, EvalError> {
    let (ca, cb) = (a.present_classes(), b.present_classes());
    if ca != cb {
        return Err(EvalError::ClassSetMismatch(ca, cb));
    }
    let mut warnings = Vec::new();
    if a.n_frames != b.n_frames {
        let w = format!("comparing N_t = {} with N_t = {}", a.n_frames, b.n_frames);
        log::warn!("{w}");
        warnings.push(w);
    }
    let diff = |x: &[Option<f64>; N_CLASSES], y: &[Option<f64>; N_CLASSES]| {
        std::array::from_fn(|k| Some(x[k]? - y[k]?))
    };
    Ok(ReportDelta {
        accuracy: diff(&a.accuracy, &b.accuracy),
        mae: diff(&a.mae, &b.mae),
        mean_accuracy: a.mean_accuracy() - b.mean_accuracy(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let acc = per_class_accuracy(&[3, 2, 3, 3], &[3, 3, 3, 3]).unwrap();
        let mae = per_class_mae(&[3, 2, 3, 3], &[3, 3, 3, 3]).unwrap();
        assert_eq!(acc[3], Some(75.0));
        assert_eq!(mae[3], Some(0.25));
        assert!(acc.iter().enumerate().all(|(k, a)| k == 3 || a.is_none()));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(per_class_accuracy(&[1, 2], &[1]).is_err());
        assert!(per_class_mae(&[1], &[1, 2]).is_err());
        assert!(per_class_mae(&[6], &[1]).is_err());
    }
}
