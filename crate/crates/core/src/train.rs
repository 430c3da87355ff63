//! Training loops.
//!
//! The central routine trains an MLP while stochastically replacing each
//! training sample with a mnemonic code of its own class: once per epoch,
//! every sample independently draws `t ~ U(0,1)` and is swapped for a code
//! when `t < t_mix` (labels never change), after which the epoch proceeds as
//! ordinary shuffled mini-batch SGD. Replacement happens before shuffling.
//!
//! Determinism: one user seed feeds three independent ChaCha streams
//! (initialization, replacement draws, shuffling), so plain training and
//! `t_mix = 0` code training produce bit-identical parameters under the same
//! seed even though only the latter consumes replacement draws.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::MnemonicCodebook;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, SgdConfig};

/// Mixes `seed` with a stream tag (SplitMix64 finalizer) so independent
/// random streams can be derived from one experiment seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_REPLACE: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; input/output dims come from the dataset.
    pub hidden_dims: Vec<usize>,
    /// Per-sample, per-epoch probability of replacement by a mnemonic code.
    pub t_mix: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    /// Classes whose samples are dropped before training (oracle retraining).
    pub excluded_classes: BTreeSet<usize>,
}

impl TrainConfig {
    fn validate(&self, dataset: &LabeledDataset) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_mix) {
            return Err(Error::invalid(format!("t_mix {} outside [0, 1]", self.t_mix)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        self.sgd.validate()?;
        if let Some(&bad) = self
            .excluded_classes
            .iter()
            .find(|&&c| c >= dataset.num_classes())
        {
            return Err(Error::invalid(format!(
                "excluded class {bad} out of range for {} classes",
                dataset.num_classes()
            )));
        }
        Ok(())
    }
}

/// Counters and curves from one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch_train_loss: Vec<f64>,
    /// Test accuracy after each epoch; empty when no eval split was given.
    pub epoch_test_accuracy: Vec<f64>,
    pub replacement_count: u64,
    pub backprop_count: u64,
    pub wall_time_secs: f64,
}

/// Trains a fresh model with stochastic mnemonic-code replacement.
pub fn train_with_codes(
    dataset: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    codebook: &MnemonicCodebook,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainRecord)> {
    run_training(dataset, eval, Some(codebook), config, None, Budget::Epochs(config.epochs))
}

/// Plain training: no codebook, no replacement.
pub fn plain_train(
    dataset: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainRecord)> {
    run_training(dataset, eval, None, config, None, Budget::Epochs(config.epochs))
}

/// Runs exactly `steps` mini-batch SGD steps of code-mixed training starting
/// from a pretrained model. `steps = 0` returns the model unchanged.
pub fn finetune_with_codes(
    pretrained: &MlpModel,
    dataset: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    codebook: &MnemonicCodebook,
    steps: usize,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainRecord)> {
    if pretrained.input_dim() != dataset.feature_dim()
        || pretrained.num_classes() != dataset.num_classes()
    {
        return Err(Error::shape(format!(
            "pretrained model is {}->{} but dataset is {}->{}",
            pretrained.input_dim(),
            pretrained.num_classes(),
            dataset.feature_dim(),
            dataset.num_classes()
        )));
    }
    if steps == 0 {
        return Ok((
            pretrained.clone(),
            TrainRecord {
                epoch_train_loss: Vec::new(),
                epoch_test_accuracy: Vec::new(),
                replacement_count: 0,
                backprop_count: 0,
                wall_time_secs: 0.0,
            },
        ));
    }
    run_training(
        dataset,
        eval,
        Some(codebook),
        config,
        Some(pretrained),
        Budget::Steps(steps),
    )
}

enum Budget {
    Epochs(usize),
    Steps(usize),
}

/// Replaces each kept sample by a code of its class with probability `t_mix`
/// (fresh draw per sample), writing into `mixed`. Returns how many samples
/// were replaced. Labels are untouched by construction.
pub(crate) fn mix_epoch_inputs(
    base: &Array2<f64>,
    labels: &[usize],
    codebook: &MnemonicCodebook,
    t_mix: f64,
    rng: &mut ChaCha8Rng,
    mixed: &mut Array2<f64>,
) -> u64 {
    let mut replaced = 0u64;
    for i in 0..base.nrows() {
        let t: f64 = rng.random();
        if t < t_mix {
            let idx = if codebook.codes_per_class() > 1 {
                rng.random_range(0..codebook.codes_per_class())
            } else {
                0
            };
            mixed
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(codebook.code(labels[i], idx)));
            replaced += 1;
        } else {
            mixed.row_mut(i).assign(&base.row(i));
        }
    }
    replaced
}

fn run_training(
    dataset: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    codebook: Option<&MnemonicCodebook>,
    config: &TrainConfig,
    initial: Option<&MlpModel>,
    budget: Budget,
) -> Result<(MlpModel, TrainRecord)> {
    let start = Instant::now();
    config.validate(dataset)?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if let Some(cb) = codebook {
        if cb.num_classes() < dataset.num_classes() {
            return Err(Error::invalid(format!(
                "codebook has {} classes but dataset needs {}",
                cb.num_classes(),
                dataset.num_classes()
            )));
        }
        if cb.feature_dim() != dataset.feature_dim() {
            return Err(Error::shape(format!(
                "codebook feature dim {} vs dataset {}",
                cb.feature_dim(),
                dataset.feature_dim()
            )));
        }
    }

    // Drop excluded classes up front.
    let kept: Vec<usize> = (0..dataset.len())
        .filter(|&i| !config.excluded_classes.contains(&dataset.labels()[i]))
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("no samples left after class exclusion"));
    }
    let n = kept.len();
    let dim = dataset.feature_dim();
    let mut base = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (r, &i) in kept.iter().enumerate() {
        base.row_mut(r).assign(&dataset.inputs().row(i));
        labels.push(dataset.labels()[i]);
    }

    let mut model = match initial {
        Some(m) => m.clone(),
        None => {
            let mut dims = vec![dim];
            dims.extend_from_slice(&config.hidden_dims);
            dims.push(dataset.num_classes());
            MlpModel::new_seeded(&dims, derive_seed(config.seed, STREAM_INIT))?
        }
    };
    if model.input_dim() != dim || model.num_classes() != dataset.num_classes() {
        return Err(Error::shape("model dimensions do not match dataset"));
    }

    let mut rng_replace = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_REPLACE));
    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SHUFFLE));

    let steps_per_epoch = n.div_ceil(config.batch_size);
    let (max_epochs, max_steps) = match budget {
        Budget::Epochs(e) => (e, e * steps_per_epoch),
        Budget::Steps(s) => (s.div_ceil(steps_per_epoch), s),
    };

    let mut mixed = base.clone();
    let mut batch_buf = Array2::zeros((config.batch_size, dim));
    let mut batch_labels = vec![0usize; config.batch_size];
    let mut order: Vec<usize> = (0..n).collect();

    let mut record = TrainRecord {
        epoch_train_loss: Vec::with_capacity(max_epochs),
        epoch_test_accuracy: Vec::new(),
        replacement_count: 0,
        backprop_count: 0,
        wall_time_secs: 0.0,
    };
    let mut step = 0usize;

    'epochs: for _epoch in 0..max_epochs {
        if let Some(cb) = codebook {
            record.replacement_count +=
                mix_epoch_inputs(&base, &labels, cb, config.t_mix, &mut rng_replace, &mut mixed);
        }
        let inputs = if codebook.is_some() { &mixed } else { &base };

        order.shuffle(&mut rng_shuffle);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if step >= max_steps {
                break;
            }
            let b = chunk.len();
            for (r, &i) in chunk.iter().enumerate() {
                batch_buf.row_mut(r).assign(&inputs.row(i));
                batch_labels[r] = labels[i];
            }
            let bview = batch_buf.slice(s![0..b, ..]);
            let (loss, grad) = model.loss_and_grad(bview, &batch_labels[0..b])?;
            model.sgd_step(&grad, &config.sgd, step)?;
            epoch_loss += loss * b as f64;
            seen += b;
            step += 1;
            record.backprop_count += 1;
        }
        if seen > 0 {
            record.epoch_train_loss.push(epoch_loss / seen as f64);
        }
        if let Some(ev) = eval {
            record
                .epoch_test_accuracy
                .push(model.accuracy(ev.inputs().view(), ev.labels())?);
        }
        if step >= max_steps {
            break 'epochs;
        }
    }

    record.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, record))
}
