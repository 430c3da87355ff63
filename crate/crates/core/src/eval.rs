//! Measurement: forgetting metrics, membership-inference AUC, backdoor and
//! curvature diagnostics, and Fisher-approximation studies.
//!
//! Every operation here is read-only on the model.

use std::collections::BTreeSet;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::MnemonicCodebook;
use crate::data::{LabeledDataset, SplitTag};
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::partition::ClassPartition;
use crate::train::derive_seed;
use crate::unlearn::{fim_error, fim_from_codebook, oracle_fim, FimDiagonal, FimSource};

/// Forgetting-capability metrics. `e_f` is `100 - a_f` by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Test accuracy over the remaining classes, percent.
    pub a_r: f64,
    /// Test accuracy over the forgetting classes, percent.
    pub a_f: f64,
    /// Test error over the forgetting classes: `100 - a_f`.
    pub e_f: f64,
    /// Wall time of the forgetting call being evaluated, when applicable.
    pub forget_time_secs: Option<f64>,
    /// Backward passes of the forgetting call being evaluated.
    pub backprop_count: Option<u64>,
    pub dataset: String,
    pub forget_classes: Vec<usize>,
    pub method: String,
}

/// Accuracy split by partition: `a_r` over remaining-class test samples,
/// `a_f` over forgetting-class test samples, `e_f = 100 - a_f`.
pub fn forgetting_capability(
    model: &MlpModel,
    test_set: &LabeledDataset,
    partition: &ClassPartition,
) -> Result<EvalReport> {
    let remain_idx: Vec<usize> = (0..test_set.len())
        .filter(|&i| partition.remain().contains(&test_set.labels()[i]))
        .collect();
    let forget_idx: Vec<usize> = (0..test_set.len())
        .filter(|&i| partition.forget().contains(&test_set.labels()[i]))
        .collect();
    if remain_idx.is_empty() || forget_idx.is_empty() {
        return Err(Error::invalid(
            "test set must contain samples from both partitions",
        ));
    }
    let remain = test_set.subset(&remain_idx)?;
    let forget = test_set.subset(&forget_idx)?;
    let a_r = model.accuracy(remain.inputs().view(), remain.labels())?;
    let a_f = model.accuracy(forget.inputs().view(), forget.labels())?;
    Ok(EvalReport {
        a_r,
        a_f,
        e_f: 100.0 - a_f,
        forget_time_secs: None,
        backprop_count: None,
        dataset: String::new(),
        forget_classes: partition.forget().iter().copied().collect(),
        method: String::new(),
    })
}

/// True iff the model's argmax never equals `class_id` on the test set;
/// also returns the number of offending predictions.
pub fn never_outputs_class(
    model: &MlpModel,
    test_set: &LabeledDataset,
    class_id: usize,
) -> Result<(bool, usize)> {
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let preds = model.predictions(test_set.inputs().view())?;
    let count = preds.iter().filter(|&&p| p == class_id).count();
    Ok((count == 0, count))
}

/// Per-sample loss values with train/test membership for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossDistribution {
    pub losses: Vec<f64>,
    pub membership: Vec<SplitTag>,
    pub class_id: usize,
}

fn class_losses(model: &MlpModel, split: &LabeledDataset, class_id: usize) -> Result<Vec<f64>> {
    let idx = split.class_indices(class_id);
    if idx.is_empty() {
        return Err(Error::EmptyClass {
            class: class_id,
            what: "samples",
        });
    }
    let sub = split.subset(&idx)?;
    model.per_sample_losses(sub.inputs().view(), sub.labels())
}

/// Cross-entropy losses of one class's members in both splits.
pub fn loss_distributions(
    model: &MlpModel,
    train_split: &LabeledDataset,
    test_split: &LabeledDataset,
    class_id: usize,
) -> Result<LossDistribution> {
    let train = class_losses(model, train_split, class_id)?;
    let test = class_losses(model, test_split, class_id)?;
    let mut losses = train.clone();
    let mut membership = vec![SplitTag::Train; train.len()];
    losses.extend_from_slice(&test);
    membership.extend(vec![SplitTag::Test; test.len()]);
    Ok(LossDistribution {
        losses,
        membership,
        class_id,
    })
}

/// Rank-statistic AUC of the naive loss-threshold membership attack.
///
/// Orientation: the probability that a random train-member loss is *lower*
/// than a random test loss (ties count one half), so values above 0.5 mean
/// train members are distinguishable by their lower losses.
pub fn mia_auc(
    model: &MlpModel,
    train_split: &LabeledDataset,
    test_split: &LabeledDataset,
    class_id: usize,
) -> Result<f64> {
    let train = class_losses(model, train_split, class_id)?;
    let test = class_losses(model, test_split, class_id)?;
    Ok(rank_auc(&train, &test))
}

/// `P(a < b) + P(a = b)/2` for `a` drawn from `low_group`, `b` from `other`.
pub(crate) fn rank_auc(low_group: &[f64], other: &[f64]) -> f64 {
    let mut sorted = other.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    let m = sorted.len();
    let mut total = 0.0;
    for &l in low_group {
        let lower = sorted.partition_point(|&x| x < l);
        let upper = sorted.partition_point(|&x| x <= l);
        let greater = m - upper;
        total += greater as f64 + 0.5 * (upper - lower) as f64;
    }
    total / (low_group.len() as f64 * m as f64)
}

/// Accuracy on test inputs convexly mixed with one class's mnemonic code:
/// `x' = (1 - r) x + r xi`, labels unchanged. `r = 0` reproduces plain test
/// accuracy; `r = 1` evaluates on the pure code.
pub fn backdoor_probe(
    model: &MlpModel,
    codebook: &MnemonicCodebook,
    test_set: &LabeledDataset,
    trigger_class: usize,
    ratios: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if trigger_class >= codebook.num_classes() {
        return Err(Error::invalid(format!(
            "trigger class {trigger_class} not in codebook"
        )));
    }
    if let Some(&bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("mixing ratio {bad} outside [0, 1]")));
    }
    let code = codebook.code(trigger_class, 0);
    let mut out = Vec::with_capacity(ratios.len());
    let mut mixed = test_set.inputs().clone();
    for &r in ratios {
        for (mut row, base) in mixed.rows_mut().into_iter().zip(test_set.inputs().rows()) {
            for ((m, &x), &xi) in row.iter_mut().zip(base).zip(code) {
                *m = (1.0 - r) * x + r * xi;
            }
        }
        let acc = model.accuracy(mixed.view(), test_set.labels())?;
        out.push((r, acc));
    }
    Ok(out)
}

/// Per-layer mean absolute gradients of the mixed-distribution loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceLayerRow {
    pub layer: String,
    /// Mean |gradient| of the full mixed loss.
    pub grad_full: f64,
    /// Mean |gradient| of the forgetting-class mixed loss.
    pub grad_forget: f64,
    /// Mean |gradient| of the remaining-class mixed loss.
    pub grad_remain: f64,
    pub ratio_forget: f64,
    pub ratio_remain: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub t_mix: f64,
    pub layers: Vec<LaplaceLayerRow>,
}

/// Mean gradient of the mixed loss restricted to `classes`: the code part is
/// weighted by each class's share of the restricted data, matching how often
/// replacement presents each code during training.
fn mixed_grad(
    model: &MlpModel,
    dataset: &LabeledDataset,
    codebook: &MnemonicCodebook,
    classes: &BTreeSet<usize>,
    t_mix: f64,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| classes.contains(&dataset.labels()[i]))
        .collect();
    if idx.is_empty() {
        return Err(Error::invalid("no samples in the requested class set"));
    }
    let total = idx.len() as f64;

    // Data part, chunked mean over the restricted samples.
    let sub = dataset.subset(&idx)?;
    let mut data_grad = vec![0.0; model.num_params()];
    let chunk = 2048;
    let mut start = 0;
    while start < sub.len() {
        let end = (start + chunk).min(sub.len());
        let (_, g) = model.loss_and_grad(
            sub.inputs().slice(s![start..end, ..]),
            &sub.labels()[start..end],
        )?;
        let w = (end - start) as f64 / total;
        for (acc, &v) in data_grad.iter_mut().zip(g.values()) {
            *acc += w * v;
        }
        start = end;
    }

    // Code part, weighted by class frequency within the restricted set.
    let counts = sub.class_counts();
    let mut code_grad = vec![0.0; model.num_params()];
    for &c in classes {
        if counts[c] == 0 {
            continue;
        }
        let freq = counts[c] as f64 / total;
        let mut inputs = Array2::zeros((codebook.codes_per_class(), codebook.feature_dim()));
        let mut labels = Vec::with_capacity(codebook.codes_per_class());
        for i in 0..codebook.codes_per_class() {
            inputs
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(codebook.code(c, i)));
            labels.push(c);
        }
        let (_, g) = model.loss_and_grad(inputs.view(), &labels)?;
        for (acc, &v) in code_grad.iter_mut().zip(g.values()) {
            *acc += freq * v;
        }
    }

    Ok(data_grad
        .iter()
        .zip(&code_grad)
        .map(|(&d, &c)| t_mix * c + (1.0 - t_mix) * d)
        .collect())
}

fn mean_abs_per_layer(model: &MlpModel, values: &[f64]) -> Vec<(String, f64)> {
    model
        .params()
        .segmentation()
        .segments()
        .iter()
        .map(|seg| {
            let slice = &values[seg.offset..seg.offset + seg.len];
            let mean = slice.iter().map(|v| v.abs()).sum::<f64>() / seg.len as f64;
            (seg.name.clone(), mean)
        })
        .collect()
}

/// Curvature-expansion validity check: compares per-layer mean absolute
/// gradients of the full, forgetting-class, and remaining-class mixed losses
/// at the current parameters.
pub fn laplace_diagnostic(
    model: &MlpModel,
    dataset: &LabeledDataset,
    codebook: &MnemonicCodebook,
    partition: &ClassPartition,
    t_mix: f64,
) -> Result<LaplaceReport> {
    if !(0.0..=1.0).contains(&t_mix) {
        return Err(Error::invalid("t_mix outside [0, 1]"));
    }
    let all: BTreeSet<usize> = (0..partition.num_classes()).collect();
    let g_full = mixed_grad(model, dataset, codebook, &all, t_mix)?;
    let g_forget = mixed_grad(model, dataset, codebook, partition.forget(), t_mix)?;
    let g_remain = mixed_grad(model, dataset, codebook, partition.remain(), t_mix)?;

    let full = mean_abs_per_layer(model, &g_full);
    let forget = mean_abs_per_layer(model, &g_forget);
    let remain = mean_abs_per_layer(model, &g_remain);

    let layers = full
        .into_iter()
        .zip(forget)
        .zip(remain)
        .map(|(((layer, f), (_, cf)), (_, cr))| LaplaceLayerRow {
            layer,
            grad_full: f,
            grad_forget: cf,
            grad_remain: cr,
            ratio_forget: cf / f,
            ratio_remain: cr / f,
        })
        .collect();
    Ok(LaplaceReport { t_mix, layers })
}

/// One point of the approximation-error curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FimStudyPoint {
    /// Requested samples per class.
    pub n: usize,
    /// Mean error to the oracle diagonal across seeds.
    pub mean: f64,
    pub std: f64,
    pub seed_count: usize,
    /// Set when some class holds fewer than `n` samples (capped to all).
    pub capped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FimStudy {
    pub points: Vec<FimStudyPoint>,
    /// Error of the mnemonic-code diagonal against the same oracle.
    pub mnemonic_error: f64,
    pub oracle_samples: u64,
}

/// Compares data-subset Fisher diagonals against the oracle (all training
/// data of `class_set`) for each subset size, plus the mnemonic-code
/// diagonal. Subsampling is seeded; each requested size is evaluated once
/// per seed.
pub fn fim_approximation_study(
    model: &MlpModel,
    dataset: &LabeledDataset,
    codebook: &MnemonicCodebook,
    class_set: &BTreeSet<usize>,
    sample_counts: &[usize],
    seeds: &[u64],
) -> Result<FimStudy> {
    if sample_counts.iter().any(|&n| n == 0) {
        return Err(Error::invalid("sample counts must be positive"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    let oracle = oracle_fim(model, dataset, class_set)?;

    let mut points = Vec::with_capacity(sample_counts.len());
    for &n in sample_counts {
        let mut errs = Vec::with_capacity(seeds.len());
        let mut capped = false;
        for &seed in seeds {
            let fim = subset_fim(model, dataset, class_set, n, seed, &mut capped)?;
            errs.push(fim_error(&fim, &oracle)?);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var =
            errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errs.len() as f64;
        points.push(FimStudyPoint {
            n,
            mean,
            std: var.sqrt(),
            seed_count: seeds.len(),
            capped,
        });
    }

    let code_fim = fim_from_codebook(model, codebook, class_set)?;
    let mnemonic_error = fim_error(&code_fim, &oracle)?;
    Ok(FimStudy {
        points,
        mnemonic_error,
        oracle_samples: oracle.samples_used(),
    })
}

/// Data Fisher diagonal from `n` seeded random samples per class. A class
/// with fewer than `n` samples contributes all of them (in dataset order, so
/// `n >= class size` reproduces the oracle exactly).
pub fn subset_fim(
    model: &MlpModel,
    dataset: &LabeledDataset,
    class_set: &BTreeSet<usize>,
    n: usize,
    seed: u64,
    capped: &mut bool,
) -> Result<FimDiagonal> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x51D));
    let mut picked = Vec::new();
    for &c in class_set {
        let mut idx = dataset.class_indices(c);
        if idx.is_empty() {
            return Err(Error::EmptyClass { class: c, what: "samples" });
        }
        if n < idx.len() {
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
        } else if n > idx.len() {
            *capped = true;
        }
        picked.extend(idx);
    }
    let sub = dataset.subset(&picked)?;
    let fim = crate::unlearn::estimate_fim_diagonal(model, &sub, class_set)?;
    debug_assert_eq!(fim.source(), FimSource::Data);
    Ok(fim)
}
