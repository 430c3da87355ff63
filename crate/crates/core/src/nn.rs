//! Minimal dense-network engine.
//!
//! An [`MlpModel`] is a fully connected network with rectifier activations on
//! hidden layers and identity output, storing its weights in one flat
//! [`ParameterVector`]. The engine provides batched forward passes,
//! reverse-mode gradients of the mean softmax cross-entropy, per-sample
//! squared-gradient accumulation (the kernel behind Fisher diagonals), and a
//! plain SGD step with weight decay and an optional cosine schedule.
//!
//! All arithmetic is `f64`. Batches are row-major `(samples, features)`.
//! Weight matrices are `(out, in)`; the affine map is `z = a Wᵀ + b`.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{check_aligned, GradientVector, ParameterVector, Segment, Segmentation};

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over `total_steps`.
    Cosine { total_steps: usize },
}

/// SGD hyperparameters: `w ← w − lr_t (g + weight_decay · w)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl SgdConfig {
    pub fn constant(learning_rate: f64, weight_decay: f64) -> Self {
        SgdConfig {
            learning_rate,
            weight_decay,
            schedule: Schedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if let Schedule::Cosine { total_steps } = self.schedule {
            if total_steps == 0 {
                return Err(Error::invalid("cosine schedule needs total_steps > 0"));
            }
        }
        Ok(())
    }

    /// Learning rate at a given global step. Never negative.
    pub fn rate_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine { total_steps } => {
                let t = step.min(total_steps) as f64 / total_steps as f64;
                (self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0)
            }
        }
    }
}

/// Fully connected network: rectifier on hidden layers, identity output.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    params: ParameterVector,
    init_seed: u64,
}

fn segmentation_for(layer_dims: &[usize]) -> Result<Arc<Segmentation>> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid("need at least input and output dimensions"));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer dimensions must be positive"));
    }
    let mut segments = Vec::new();
    let mut offset = 0usize;
    for l in 0..layer_dims.len() - 1 {
        let (d_in, d_out) = (layer_dims[l], layer_dims[l + 1]);
        segments.push(Segment {
            name: format!("layer{l}.weight"),
            offset,
            len: d_out * d_in,
            shape: vec![d_out, d_in],
        });
        offset += d_out * d_in;
        segments.push(Segment {
            name: format!("layer{l}.bias"),
            offset,
            len: d_out,
            shape: vec![d_out],
        });
        offset += d_out;
    }
    Ok(Arc::new(Segmentation::new(segments)?))
}

impl MlpModel {
    /// Seeded construction: every parameter of layer `l` is drawn from
    /// `uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
    pub fn new_seeded(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let segmentation = segmentation_for(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(segmentation.total_len());
        for l in 0..layer_dims.len() - 1 {
            let (d_in, d_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = 1.0 / (d_in as f64).sqrt();
            for _ in 0..d_out * d_in {
                values.push(rng.random_range(-bound..bound));
            }
            for _ in 0..d_out {
                values.push(rng.random_range(-bound..bound));
            }
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            params: ParameterVector::new(values, segmentation)?,
            init_seed: seed,
        })
    }

    /// All-zero parameters. Mostly useful for constructing exact test cases.
    pub fn zeroed(layer_dims: &[usize]) -> Result<Self> {
        let segmentation = segmentation_for(layer_dims)?;
        let values = vec![0.0; segmentation.total_len()];
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            params: ParameterVector::new(values, segmentation)?,
            init_seed: 0,
        })
    }

    /// Rebuilds a model from raw values (checkpoint loading, hand-built tests).
    pub fn from_raw(layer_dims: &[usize], values: Vec<f64>, init_seed: u64) -> Result<Self> {
        let segmentation = segmentation_for(layer_dims)?;
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            params: ParameterVector::new(values, segmentation)?,
            init_seed,
        })
    }

    /// Same architecture, different parameter values.
    pub fn with_params(&self, params: ParameterVector) -> Result<Self> {
        check_aligned(self.params.segmentation(), params.segmentation())?;
        Ok(MlpModel {
            layer_dims: self.layer_dims.clone(),
            params,
            init_seed: self.init_seed,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn weight_view(&self, l: usize) -> ArrayView2<'_, f64> {
        let seg = self
            .params
            .segmentation()
            .segment(&format!("layer{l}.weight"))
            .expect("weight segment exists");
        ArrayView2::from_shape(
            (seg.shape[0], seg.shape[1]),
            &self.params.values()[seg.offset..seg.offset + seg.len],
        )
        .expect("segment shape is consistent")
    }

    fn bias_slice(&self, l: usize) -> &[f64] {
        let seg = self
            .params
            .segmentation()
            .segment(&format!("layer{l}.bias"))
            .expect("bias segment exists");
        &self.params.values()[seg.offset..seg.offset + seg.len]
    }

    fn check_batch(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} features but model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    // Writes into a fresh C-order array so downstream row iteration is
    // contiguous regardless of operand layouts.
    fn affine(&self, a: ArrayView2<'_, f64>, l: usize) -> Array2<f64> {
        let w = self.weight_view(l);
        let b = ndarray::ArrayView1::from(self.bias_slice(l));
        let mut z = Array2::zeros((a.nrows(), w.nrows()));
        ndarray::linalg::general_mat_mul(1.0, &a, &w.t(), 0.0, &mut z);
        z += &b;
        z
    }

    /// Batched forward pass producing raw logits `(samples, classes)`.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let n = self.layer_count();
        let mut a = self.affine(batch, 0);
        for l in 1..n {
            relu_inplace(&mut a);
            a = self.affine(a.view(), l);
        }
        Ok(a)
    }

    /// Forward pass keeping every hidden activation for backprop.
    fn forward_collect(&self, batch: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let n = self.layer_count();
        let mut hidden = Vec::with_capacity(n.saturating_sub(1));
        let mut a = self.affine(batch, 0);
        for l in 1..n {
            relu_inplace(&mut a);
            hidden.push(a);
            a = self.affine(hidden.last().unwrap().view(), l);
        }
        (hidden, a)
    }

    fn check_labeled_batch(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        self.check_batch(batch)?;
        if batch.nrows() == 0 {
            return Err(Error::invalid("batch is empty"));
        }
        if labels.len() != batch.nrows() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                batch.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(
        &self,
        batch: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, GradientVector)> {
        self.check_labeled_batch(batch, labels)?;
        if !batch.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("input batch"));
        }
        let b = batch.nrows() as f64;
        let (hidden, logits) = self.forward_collect(batch);

        let mut loss = 0.0;
        let mut delta = logits; // reused in place: logits -> softmax -> delta
        for (row, &y) in delta.rows_mut().into_iter().zip(labels) {
            let row = row.into_slice().expect("contiguous row");
            let lse = logsumexp(row);
            loss += lse - row[y];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v /= b;
            }
        }
        loss /= b;

        let grad = self.backprop(batch, &hidden, delta);
        Ok((loss, GradientVector::new(grad, Arc::clone(self.params.segmentation()))?))
    }

    /// Backpropagates `delta = dL/d(logits)` into a flat gradient vector.
    fn backprop(
        &self,
        batch: ArrayView2<'_, f64>,
        hidden: &[Array2<f64>],
        mut delta: Array2<f64>,
    ) -> Vec<f64> {
        let n = self.layer_count();
        let mut grad = vec![0.0; self.params.len()];
        for l in (0..n).rev() {
            let a_prev = if l == 0 {
                batch
            } else {
                hidden[l - 1].view()
            };
            let dw = delta.t().dot(&a_prev);
            let db = delta.sum_axis(Axis(0));
            write_segment(&mut grad, self.params.segmentation(), l, &dw, &db);
            if l > 0 {
                let w = self.weight_view(l);
                let mut d_prev = Array2::zeros((delta.nrows(), w.ncols()));
                ndarray::linalg::general_mat_mul(1.0, &delta, &w, 0.0, &mut d_prev);
                // Rectifier mask: derivative is 1 where the activation is
                // positive, 0 elsewhere (including exactly at 0).
                d_prev
                    .iter_mut()
                    .zip(hidden[l - 1].iter())
                    .for_each(|(d, &h)| {
                        if h <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = d_prev;
            }
        }
        grad
    }

    /// Adds the sum over samples of the squared per-sample loss gradient to
    /// `acc`. Per-sample losses here are each sample's own cross-entropy (no
    /// batch mean), so for one sample this is exactly `(∂L/∂w)²`.
    ///
    /// Identity used per layer: the per-sample weight gradient is an outer
    /// product `δᵢ aᵢᵀ`, so `Σᵢ (δᵢ aᵢᵀ)∘² = (δ∘δ)ᵀ (a∘a)`.
    pub(crate) fn accumulate_squared_grads(
        &self,
        batch: ArrayView2<'_, f64>,
        labels: &[usize],
        acc: &mut [f64],
    ) -> Result<()> {
        self.check_labeled_batch(batch, labels)?;
        if acc.len() != self.params.len() {
            return Err(Error::shape("accumulator length mismatch"));
        }
        let (hidden, logits) = self.forward_collect(batch);
        let mut delta = logits;
        for (row, &y) in delta.rows_mut().into_iter().zip(labels) {
            let row = row.into_slice().expect("contiguous row");
            let lse = logsumexp(row);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            row[y] -= 1.0;
        }

        let n = self.layer_count();
        for l in (0..n).rev() {
            let a_prev = if l == 0 {
                batch
            } else {
                hidden[l - 1].view()
            };
            let delta_sq = delta.mapv(|v| v * v);
            let a_sq = a_prev.mapv(|v| v * v);
            let dw_sq = delta_sq.t().dot(&a_sq);
            let db_sq = delta_sq.sum_axis(Axis(0));
            add_segment(acc, self.params.segmentation(), l, &dw_sq, &db_sq);
            if l > 0 {
                let w = self.weight_view(l);
                let mut d_prev = Array2::zeros((delta.nrows(), w.ncols()));
                ndarray::linalg::general_mat_mul(1.0, &delta, &w, 0.0, &mut d_prev);
                d_prev
                    .iter_mut()
                    .zip(hidden[l - 1].iter())
                    .for_each(|(d, &h)| {
                        if h <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = d_prev;
            }
        }
        Ok(())
    }

    /// Per-sample cross-entropy losses.
    pub fn per_sample_losses(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labeled_batch(batch, labels)?;
        let logits = self.forward(batch)?;
        Ok(logits
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, &y)| {
                let row = row.to_slice().expect("contiguous row");
                logsumexp(row) - row[y]
            })
            .collect())
    }

    /// Argmax class per sample; ties resolve to the lowest class index.
    pub fn predictions(&self, batch: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| argmax_lowest(row.to_slice().expect("contiguous row")))
            .collect())
    }

    /// Classification accuracy as a percentage in `[0, 100]`.
    pub fn accuracy(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        self.check_labeled_batch(batch, labels)?;
        let preds = self.predictions(batch)?;
        let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(100.0 * correct as f64 / labels.len() as f64)
    }

    /// One SGD step: `w ← w − lr_t (g + weight_decay · w)`.
    ///
    /// A non-finite gradient is rejected before any parameter changes.
    pub fn sgd_step(
        &mut self,
        grad: &GradientVector,
        config: &SgdConfig,
        step_index: usize,
    ) -> Result<()> {
        config.validate()?;
        check_aligned(self.params.segmentation(), grad.segmentation())?;
        if !grad.is_finite() {
            return Err(Error::non_finite("gradient"));
        }
        let lr = config.rate_at(step_index);
        let wd = config.weight_decay;
        for (w, &g) in self.params.values_mut().iter_mut().zip(grad.values()) {
            *w -= lr * (g + wd * *w);
        }
        debug_assert!(self.params.is_finite());
        Ok(())
    }
}

// Gradient tensors are written through logical (row-major) iteration since
// `dot` may hand back an F-order result for transposed operands.
fn write_segment(
    out: &mut [f64],
    segmentation: &Segmentation,
    layer: usize,
    dw: &Array2<f64>,
    db: &Array1<f64>,
) {
    let wseg = segmentation
        .segment(&format!("layer{layer}.weight"))
        .expect("weight segment exists");
    for (o, &v) in out[wseg.offset..wseg.offset + wseg.len].iter_mut().zip(dw.iter()) {
        *o = v;
    }
    let bseg = segmentation
        .segment(&format!("layer{layer}.bias"))
        .expect("bias segment exists");
    for (o, &v) in out[bseg.offset..bseg.offset + bseg.len].iter_mut().zip(db.iter()) {
        *o = v;
    }
}

fn add_segment(
    out: &mut [f64],
    segmentation: &Segmentation,
    layer: usize,
    dw: &Array2<f64>,
    db: &Array1<f64>,
) {
    let wseg = segmentation
        .segment(&format!("layer{layer}.weight"))
        .expect("weight segment exists");
    for (o, &v) in out[wseg.offset..wseg.offset + wseg.len].iter_mut().zip(dw.iter()) {
        *o += v;
    }
    let bseg = segmentation
        .segment(&format!("layer{layer}.bias"))
        .expect("bias segment exists");
    for (o, &v) in out[bseg.offset..bseg.offset + bseg.len].iter_mut().zip(db.iter()) {
        *o += v;
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax. Exposed for diagnostics and tests.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let row = row.as_slice_mut().expect("contiguous row");
        let lse = logsumexp(row);
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn finite_difference_grad(
        model: &MlpModel,
        batch: ArrayView2<'_, f64>,
        labels: &[usize],
        step: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; model.num_params()];
        for i in 0..model.num_params() {
            let mut plus = model.params().values().to_vec();
            plus[i] += step;
            let m_plus = MlpModel::from_raw(model.layer_dims(), plus, 0).unwrap();
            let (l_plus, _) = m_plus.loss_and_grad(batch, labels).unwrap();

            let mut minus = model.params().values().to_vec();
            minus[i] -= step;
            let m_minus = MlpModel::from_raw(model.layer_dims(), minus, 0).unwrap();
            let (l_minus, _) = m_minus.loss_and_grad(batch, labels).unwrap();

            grad[i] = (l_plus - l_minus) / (2.0 * step);
        }
        grad
    }

    #[test]
    fn zero_model_maps_to_zero_logits() {
        let model = MlpModel::zeroed(&[3, 4, 2]).unwrap();
        let batch = array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]];
        let logits = model.forward(batch.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        // 3x3 identity weight, zero bias: logits == input.
        let mut values = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let model = MlpModel::from_raw(&[3, 3], values, 0).unwrap();
        let batch = array![[0.2, -1.5, 4.0]];
        let logits = model.forward(batch.view()).unwrap();
        assert_eq!(logits, batch);
    }

    #[test]
    fn forward_matches_hand_rolled_matmul() {
        // Straight-line reimplementation of the 2-4-3 forward pass.
        let model = MlpModel::new_seeded(&[2, 4, 3], 77).unwrap();
        let batch = array![[0.3, -0.8], [1.4, 0.2], [-0.5, -0.1]];
        let logits = model.forward(batch.view()).unwrap();

        let v = model.params().values();
        let (w1, b1) = (&v[0..8], &v[8..12]); // 4x2 row-major, then 4
        let (w2, b2) = (&v[12..24], &v[24..27]); // 3x4 row-major, then 3
        for (r, row) in batch.rows().into_iter().enumerate() {
            let mut h = [0.0f64; 4];
            for o in 0..4 {
                let mut z = b1[o];
                for i in 0..2 {
                    z += w1[o * 2 + i] * row[i];
                }
                h[o] = z.max(0.0);
            }
            for o in 0..3 {
                let mut z = b2[o];
                for i in 0..4 {
                    z += w2[o * 4 + i] * h[i];
                }
                let got = logits[[r, o]];
                let rel = (got - z).abs() / z.abs().max(1e-300);
                assert!(rel < 1e-12, "row {r} class {o}: got {got}, oracle {z}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = MlpModel::zeroed(&[3, 2]).unwrap();
        let batch = array![[1.0, 2.0]];
        assert!(matches!(
            model.forward(batch.view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn uniform_logits_give_log_k_loss() {
        let model = MlpModel::zeroed(&[5, 7]).unwrap();
        let batch = Array2::zeros((4, 5));
        let labels = vec![0, 3, 6, 2];
        let (loss, _) = model.loss_and_grad(batch.view(), &labels).unwrap();
        assert!((loss - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_central_finite_differences() {
        // Two seeded models under 200 parameters each.
        for seed in [1u64, 2] {
            let model = MlpModel::new_seeded(&[4, 8, 3], seed).unwrap(); // 40+27 = 67 params
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let batch = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.5..1.5));
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let (_, grad) = model.loss_and_grad(batch.view(), &labels).unwrap();
            let fd = finite_difference_grad(&model, batch.view(), &labels, 1e-5);
            for (i, (&g, &f)) in grad.values().iter().zip(&fd).enumerate() {
                let rel = (g - f).abs() / g.abs().max(f.abs()).max(1e-8);
                assert!(rel < 1e-4, "param {i}: analytic {g}, fd {f}");
            }
        }
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grad_unchanged() {
        let model = MlpModel::new_seeded(&[3, 5, 2], 9).unwrap();
        let batch = array![[0.1, 0.2, -0.4], [1.0, -1.0, 0.5]];
        let labels = vec![1, 0];
        let doubled = ndarray::concatenate(Axis(0), &[batch.view(), batch.view()]).unwrap();
        let labels2 = vec![1, 0, 1, 0];
        let (l1, g1) = model.loss_and_grad(batch.view(), &labels).unwrap();
        let (l2, g2) = model.loss_and_grad(doubled.view(), &labels2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_rejects_empty_batch_and_non_finite_input() {
        let model = MlpModel::zeroed(&[2, 2]).unwrap();
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(model.loss_and_grad(empty.view(), &[]).is_err());
        let bad = array![[f64::NAN, 0.0]];
        assert!(matches!(
            model.loss_and_grad(bad.view(), &[0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sgd_zero_grad_zero_decay_is_fixed_point() {
        let mut model = MlpModel::new_seeded(&[2, 3], 5).unwrap();
        let before = model.params().values().to_vec();
        let grad = GradientVector::new(
            vec![0.0; model.num_params()],
            Arc::clone(model.params().segmentation()),
        )
        .unwrap();
        model
            .sgd_step(&grad, &SgdConfig::constant(0.1, 0.0), 0)
            .unwrap();
        assert_eq!(before, model.params().values());
    }

    #[test]
    fn sgd_scalar_arithmetic() {
        // Single 1x1 weight (plus one bias we leave untouched): w = 1, g = 2,
        // lr = 0.1, decay = 0 -> w = 0.8.
        let mut model = MlpModel::from_raw(&[1, 1], vec![1.0, 0.0], 0).unwrap();
        let grad = GradientVector::new(
            vec![2.0, 0.0],
            Arc::clone(model.params().segmentation()),
        )
        .unwrap();
        model
            .sgd_step(&grad, &SgdConfig::constant(0.1, 0.0), 0)
            .unwrap();
        assert!((model.params().values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_rate_vanishes_at_total_steps() {
        let cfg = SgdConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            schedule: Schedule::Cosine { total_steps: 100 },
        };
        assert!(cfg.rate_at(100) < 1e-9);
        assert!(cfg.rate_at(0) > 0.009);
        for s in 0..=150 {
            assert!(cfg.rate_at(s) >= 0.0);
        }
    }

    #[test]
    fn sgd_rejects_non_finite_grad_and_leaves_model_unchanged() {
        let mut model = MlpModel::new_seeded(&[2, 2], 3).unwrap();
        let before = model.params().values().to_vec();
        let mut g = vec![0.0; model.num_params()];
        g[1] = f64::INFINITY;
        let grad =
            GradientVector::new(g, Arc::clone(model.params().segmentation())).unwrap();
        assert!(model
            .sgd_step(&grad, &SgdConfig::constant(0.1, 0.0), 0)
            .is_err());
        assert_eq!(before, model.params().values());
    }

    #[test]
    fn accuracy_matches_constructed_cases() {
        // Identity 3-class model: prediction = argmax of input.
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let model = MlpModel::from_raw(&[3, 3], values, 0).unwrap();
        let batch = array![[9.0, 0.0, 0.0], [0.0, 9.0, 0.0], [0.0, 0.0, 9.0]];
        assert_eq!(model.accuracy(batch.view(), &[0, 1, 2]).unwrap(), 100.0);
        assert_eq!(model.accuracy(batch.view(), &[1, 2, 0]).unwrap(), 0.0);
        let two_thirds = model.accuracy(batch.view(), &[0, 1, 0]).unwrap();
        assert!((two_thirds - 66.67).abs() < 0.01);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(model.accuracy(empty.view(), &[]).is_err());
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        let model = MlpModel::zeroed(&[2, 4]).unwrap();
        let batch = array![[1.0, 1.0]];
        // All logits are 0 -> class 0 wins the tie.
        assert_eq!(model.predictions(batch.view()).unwrap(), vec![0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let model = MlpModel::new_seeded(&[3, 6, 4], 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = Array2::from_shape_fn((5, 3), |_| rng.random_range(-3.0..3.0));
        let logits = model.forward(batch.view()).unwrap();
        let p = softmax_rows(&logits);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn training_reduces_loss_on_separable_toy_set() {
        let mut model = MlpModel::new_seeded(&[2, 8, 2], 21).unwrap();
        let mut batch = Array2::zeros((20, 2));
        let mut labels = Vec::new();
        for i in 0..20 {
            let side = i % 2;
            batch[[i, 0]] = if side == 0 { -1.0 } else { 1.0 } + 0.01 * i as f64;
            batch[[i, 1]] = 0.3;
            labels.push(side);
        }
        let cfg = SgdConfig::constant(0.1, 0.0);
        let (initial, _) = model.loss_and_grad(batch.view(), &labels).unwrap();
        for step in 0..500 {
            let (_, grad) = model.loss_and_grad(batch.view(), &labels).unwrap();
            model.sgd_step(&grad, &cfg, step).unwrap();
        }
        let (final_loss, _) = model.loss_and_grad(batch.view(), &labels).unwrap();
        assert!(final_loss < initial);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = MlpModel::new_seeded(&[4, 5, 3], 123).unwrap();
        let b = MlpModel::new_seeded(&[4, 5, 3], 123).unwrap();
        assert_eq!(a.params().values(), b.params().values());
    }
}
