//! Convolutional-recurrent speaker counter: four 3×3 convolutions with two
//! frequency max-pools, a sequence-to-sequence LSTM and a per-frame
//! 6-way softmax.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{load_checkpoint, save_checkpoint, InitScheme, NumericsError, ParamStore, Scalar, Tape, Tensor, Var};

pub const N_CLASSES: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match config {expected:?}")]
    InputShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrnnConfig {
    pub n_frames: usize,
    pub n_bins: usize,
    pub in_channels: usize,
    pub conv_channels: [usize; 4],
    pub lstm_hidden: usize,
    pub n_classes: usize,
}

impl CrnnConfig {
    /// 513 bins, convolutions (64, 32, 128, 64), 40 LSTM units.
    pub fn full(n_frames: usize, in_channels: usize) -> Self {
        CrnnConfig {
            n_frames,
            n_bins: 513,
            in_channels,
            conv_channels: [64, 32, 128, 64],
            lstm_hidden: 40,
            n_classes: N_CLASSES,
        }
    }

    /// Bins left after the two 3-wide pools.
    pub fn pooled_bins(&self) -> usize {
        self.n_bins / 3 / 3
    }

    /// Per-frame feature width fed to the LSTM.
    pub fn reshape_dim(&self) -> usize {
        self.pooled_bins() * self.conv_channels[3]
    }

    /// Zero-based output row holding the sequence's decision.
    pub fn decision_row(&self) -> usize {
        self.n_frames - 4
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_frames < 5 {
            return Err(ModelError::Config(format!("n_frames {} < 5", self.n_frames)));
        }
        if self.n_bins < 9 {
            return Err(ModelError::Config(format!("n_bins {} < 9", self.n_bins)));
        }
        if self.in_channels == 0 || self.conv_channels.contains(&0) || self.lstm_hidden == 0 || self.n_classes < 2 {
            return Err(ModelError::Config(format!("{self:?}")));
        }
        Ok(())
    }

    /// Parameter names, shapes and initializers in a fixed order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, InitScheme)> {
        let mut specs = Vec::new();
        let mut cin = self.in_channels;
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            specs.push((
                format!("conv{}.kernel", i + 1),
                vec![3, 3, cin, cout],
                InitScheme::GlorotUniform {
                    fan_in: 9 * cin,
                    fan_out: 9 * cout,
                },
            ));
            specs.push((format!("conv{}.bias", i + 1), vec![cout], InitScheme::Constant { value: 0.0 }));
            cin = cout;
        }
        let (d, h) = (self.reshape_dim(), self.lstm_hidden);
        specs.push((
            "lstm.w_in".into(),
            vec![d, 4 * h],
            InitScheme::GlorotUniform {
                fan_in: d,
                fan_out: 4 * h,
            },
        ));
        specs.push(("lstm.w_rec".into(), vec![h, 4 * h], InitScheme::Orthogonal));
        specs.push(("lstm.bias".into(), vec![4 * h], InitScheme::UnitForgetBias { hidden: h }));
        specs.push((
            "dense.weight".into(),
            vec![h, self.n_classes],
            InitScheme::GlorotUniform {
                fan_in: h,
                fan_out: self.n_classes,
            },
        ));
        specs.push(("dense.bias".into(), vec![self.n_classes], InitScheme::Constant { value: 0.0 }));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Activation shapes of one window through the network, starting with
    /// the input and ending with the logits.
    pub fn shape_trace(&self) -> Vec<(&'static str, Vec<usize>)> {
        let [c1, c2, c3, c4] = self.conv_channels;
        let (t, f) = (self.n_frames, self.n_bins);
        let (f1, f2) = (f / 3, f / 9);
        vec![
            ("input", vec![t, f, self.in_channels]),
            ("conv1", vec![t, f, c1]),
            ("conv2", vec![t, f, c2]),
            ("pool1", vec![t, f1, c2]),
            ("conv3", vec![t, f1, c3]),
            ("conv4", vec![t, f1, c4]),
            ("pool2", vec![t, f2, c4]),
            ("reshape", vec![t, self.reshape_dim()]),
            ("lstm", vec![t, self.lstm_hidden]),
            ("dense", vec![t, self.n_classes]),
        ]
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in self.param_specs() {
            store.insert(name, init.sample(&shape, &mut rng));
        }
        store
    }

    /// Checks that `params` holds every tensor with the right shape.
    pub fn check_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<(), ModelError> {
        for (name, shape, _) in self.param_specs() {
            let p = params.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if p.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!("{name} has shape {:?}, expected {shape:?}", p.shape())));
            }
        }
        Ok(())
    }
}

/// Recorded forward pass; `logits` is `[B, N_t, classes]`.
pub struct Forward<T> {
    pub tape: Tape<T>,
    pub logits: Var,
    pub params: BTreeMap<String, Var>,
    /// Intermediate activations in [`CrnnConfig::shape_trace`] order.
    pub trace: Vec<Var>,
}

/// Runs the network on a batch `[B, N_t, F, C]` (or one window
/// `[N_t, F, C]`) and keeps everything needed for backpropagation.
pub fn forward_on_tape<T: Scalar>(
    cfg: &CrnnConfig,
    params: &ParamStore<T>,
    input: Tensor<T>,
) -> Result<Forward<T>, ModelError> {
    cfg.validate()?;
    let shape = input.shape().to_vec();
    let expected = [cfg.n_frames, cfg.n_bins, cfg.in_channels];
    let batch = match shape.as_slice() {
        [t, f, c] if [*t, *f, *c] == expected => 1,
        [b, t, f, c] if [*t, *f, *c] == expected => *b,
        _ => {
            return Err(ModelError::InputShape {
                got: shape,
                expected: expected.to_vec(),
            })
        }
    };
    let input = input.reshape(&[batch, cfg.n_frames, cfg.n_bins, cfg.in_channels])?;
    let mut tape = Tape::new();
    let mut vars = BTreeMap::new();
    for (name, _, _) in cfg.param_specs() {
        let p = params.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
        vars.insert(name, tape.leaf(p.clone()));
    }
    let v = |n: &str| vars[n];
    let x = tape.leaf(input);
    let mut trace = vec![x];
    let c1 = tape.conv2d_same(x, v("conv1.kernel"), v("conv1.bias"))?;
    let c1 = tape.relu(c1);
    let c2 = tape.conv2d_same(c1, v("conv2.kernel"), v("conv2.bias"))?;
    let c2 = tape.relu(c2);
    let p1 = tape.maxpool_freq(c2)?;
    let c3 = tape.conv2d_same(p1, v("conv3.kernel"), v("conv3.bias"))?;
    let c3 = tape.relu(c3);
    let c4 = tape.conv2d_same(c3, v("conv4.kernel"), v("conv4.bias"))?;
    let c4 = tape.relu(c4);
    let p2 = tape.maxpool_freq(c4)?;
    let r = tape.reshape(p2, &[batch, cfg.n_frames, cfg.reshape_dim()])?;
    let l = tape.lstm_seq(r, v("lstm.w_in"), v("lstm.w_rec"), v("lstm.bias"))?;
    let logits = tape.dense(l, v("dense.weight"), v("dense.bias"))?;
    trace.extend([c1, c2, p1, c3, c4, p2, r, l, logits]);
    Ok(Forward {
        tape,
        logits,
        params: vars,
        trace,
    })
}

/// Per-frame class probabilities, `[B, N_t, classes]` (or `[N_t, classes]`
/// for an unbatched input).
pub fn crnn_forward<T: Scalar>(cfg: &CrnnConfig, params: &ParamStore<T>, input: Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let unbatched = input.rank() == 3;
    let fwd = forward_on_tape(cfg, params, input)?;
    let probs = crate::numerics::ops::softmax(fwd.tape.value(fwd.logits));
    if unbatched {
        Ok(probs.reshape(&[cfg.n_frames, cfg.n_classes])?)
    } else {
        Ok(probs)
    }
}

/// Mean per-frame cross-entropy over every frame of the batch, the
/// probabilities, and the gradient of the loss for every parameter.
pub struct LossAndGrads<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub grads: BTreeMap<String, Tensor<T>>,
}

/// `targets` holds one class per frame, batch-major.
pub fn loss_and_grads<T: Scalar>(
    cfg: &CrnnConfig,
    params: &ParamStore<T>,
    input: Tensor<T>,
    targets: &[usize],
) -> Result<LossAndGrads<T>, ModelError> {
    let mut fwd = forward_on_tape(cfg, params, input)?;
    let (loss_var, probs) = fwd.tape.softmax_xent(fwd.logits, targets)?;
    let loss = fwd.tape.value(loss_var).data()[0];
    let mut g = fwd.tape.backward(loss_var)?;
    let grads = fwd
        .params
        .iter()
        .map(|(name, &var)| {
            let grad = g.take(var).unwrap_or_else(|| Tensor::zeros(fwd.tape.value(var).shape()));
            (name.clone(), grad)
        })
        .collect();
    Ok(LossAndGrads { loss, probs, grads })
}

/// Speaker count of one window: argmax of row `n_frames − 4` of the
/// `[n_frames, classes]` probabilities, ties going to the smaller class.
pub fn count_from_probs<T: Scalar>(probs: &Tensor<T>) -> Result<usize, ModelError> {
    let &[n_t, k] = probs.shape() else {
        return Err(ModelError::Config(format!("probabilities shape {:?}", probs.shape())));
    };
    if n_t < 5 {
        return Err(ModelError::Config(format!("n_frames {n_t} < 5")));
    }
    Ok(argmax_row(&probs.data()[(n_t - 4) * k..(n_t - 3) * k]))
}

/// Writes `params` with a header holding `cfg` under `"model"` and the
/// caller's `extra` metadata under `"extra"`.
pub fn save_model<T: Scalar>(
    path: &Path,
    cfg: &CrnnConfig,
    params: &ParamStore<T>,
    extra: serde_json::Value,
) -> Result<(), ModelError> {
    cfg.check_params(params)?;
    let meta = serde_json::json!({ "model": cfg, "extra": extra });
    save_checkpoint(path, params, &meta)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_model`] and checks the tensors
/// against the embedded config.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(CrnnConfig, ParamStore<T>, serde_json::Value), ModelError> {
    let (params, mut meta) = load_checkpoint::<T>(path)?;
    let cfg: CrnnConfig = serde_json::from_value(meta["model"].take())
        .map_err(|e| ModelError::Config(format!("checkpoint header: {e}")))?;
    cfg.validate()?;
    cfg.check_params(&params)?;
    Ok((cfg, params, meta["extra"].take()))
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
