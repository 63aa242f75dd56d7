//! End-to-end training and inference orchestration for the binarized MLP,
//! plus the self-describing binary checkpoint format.
//!
//! The training step follows a fixed order per minibatch: binarize weights,
//! forward through the packed kernels and Batch Normalization, binarize
//! hidden activations, square hinge loss, straight-through backward,
//! optional gradient quantization, optimizer update, then clip the master
//! weights to [-1, 1].

use std::fs::File;
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::bitkernel::BitMatrix;
use crate::data_io::{encode_targets, to_bitplanes, Dataset};
use crate::error::{Error, Result};
use crate::layers::{
    activation_backward, activation_binarize_forward, bn_backward, bn_forward_auto,
    linear_forward_bytes, BatchNormState, BnMode, LinearLayer,
};
use crate::optim::{
    adam_update, clip_weights, decay_lr, shift_adamax_update, shift_decay_lr, OptimMode,
    OptimState,
};
use crate::quantize::{quantize_gradient_tensor, sign_binarize, QuantKind, QuantSpec, Scheme};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// How the first layer consumes its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// 8-bit inputs fed through the bit-plane kernel
    BytePlanes,
    /// real-valued inputs fed through the float product
    Float,
}

/// A stack of binarized linear layers, each followed by Batch Normalization.
/// Hidden activations are binarized; the last layer's output is not.
#[derive(Debug, Clone)]
pub struct QnnModel<T> {
    pub layers: Vec<LinearLayer<T>>,
    pub bns: Vec<BatchNormState<T>>,
    pub spec: QuantSpec,
    pub input_mode: InputMode,
}

impl<T: Real> QnnModel<T> {
    /// Build an MLP from a dimension chain, e.g. `[784, 1024, 1024, 1024, 10]`.
    pub fn mlp(
        dims: &[usize],
        bn_mode: BnMode,
        spec: QuantSpec,
        input_mode: InputMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidDims {
                rows: dims.len(),
                cols: 0,
            });
        }
        spec.validate()?;
        let mut layers = Vec::new();
        let mut bns = Vec::new();
        for w in dims.windows(2) {
            layers.push(LinearLayer::new(w[0], w[1], rng)?);
            bns.push(BatchNormState::new(w[1], bn_mode));
        }
        Ok(QnnModel {
            layers,
            bns,
            spec,
            input_mode,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect()
    }

    fn binarize_all_weights(&mut self) {
        for l in &mut self.layers {
            l.binarize_weights();
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// base learning rate before per-layer scaling
    pub lr: f64,
    /// per-epoch exponential decay factor (ADAM schedule)
    pub lr_decay: f64,
    /// halve the rate every this many epochs instead (shift schedule); 0
    /// selects the exponential schedule
    pub shift_lr_period: usize,
    pub optim: OptimMode,
    /// stochastic activation binarization during training
    pub stochastic: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidDims {
                rows: self.epochs,
                cols: self.batch_size,
            });
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.shift_lr_period > 0 {
            shift_decay_lr(self.lr, self.shift_lr_period, epoch)
        } else {
            decay_lr(self.lr, self.lr_decay, epoch)
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 100,
            seed: 1,
            lr: 0.01,
            lr_decay: 0.97,
            shift_lr_period: 0,
            optim: OptimMode::Adam,
            stochastic: false,
        }
    }
}

/// Per-layer optimizer state: weights plus the two BN parameter vectors.
#[derive(Debug, Clone)]
pub struct TrainerState<T> {
    pub w: Vec<OptimState<T>>,
    pub gamma: Vec<OptimState<T>>,
    pub beta: Vec<OptimState<T>>,
    pub epoch: usize,
}

impl<T: Real> TrainerState<T> {
    pub fn new(model: &QnnModel<T>, mode: OptimMode) -> Self {
        let w = model
            .layers
            .iter()
            .map(|l| OptimState::new(l.in_dim() * l.out_dim(), mode))
            .collect();
        let gamma = model
            .bns
            .iter()
            .map(|b| OptimState::new(b.features(), mode))
            .collect();
        let beta = model
            .bns
            .iter()
            .map(|b| OptimState::new(b.features(), mode))
            .collect();
        TrainerState {
            w,
            gamma,
            beta,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub error_rate: f64,
}

fn gather_batch(data: &Dataset, idx: &[usize]) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(idx.len() * data.dim);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        images.extend_from_slice(data.image(i));
        labels.push(data.labels[i]);
    }
    (images, labels)
}

fn bytes_to_tensor<T: Real>(rows: usize, cols: usize, bytes: &[u8]) -> Result<Tensor<T>> {
    Tensor::from_vec(rows, cols, bytes.iter().map(|&b| T::from_f64x(b as f64)).collect())
}

fn argmax_row<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Run one epoch over `data` in shuffled minibatches. A trailing batch of
/// size one is dropped (Batch Normalization needs at least two rows).
/// Returns the mean minibatch loss and the training error rate.
pub fn train_epoch<T: Real>(
    model: &mut QnnModel<T>,
    data: &Dataset,
    config: &TrainConfig,
    state: &mut TrainerState<T>,
) -> Result<EpochMetrics> {
    config.validate()?;
    if data.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let epoch = state.epoch;
    let lr = config.lr_at(epoch);
    let num_layers = model.num_layers();
    let classes = model.out_dim();

    let mut order: Vec<usize> = (0..data.n).collect();
    let mut shuffle_rng = Rng::new(config.seed).stream(0x1000 + epoch as u64);
    shuffle_rng.shuffle(&mut order);

    let mut loss_sum = 0.0f64;
    let mut batches = 0usize;
    let mut wrong = 0usize;
    let mut seen = 0usize;

    for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
        let m = chunk.len();
        if m < 2 {
            continue;
        }
        let (images, labels) = gather_batch(data, chunk);
        let targets: Tensor<T> = encode_targets(&labels, classes)?;

        // forward
        model.binarize_all_weights();
        let a0_float = bytes_to_tensor::<T>(m, data.dim, &images)?;
        let mut acts: Vec<Tensor<T>> = vec![a0_float]; // binarized inputs per layer
        let mut bn_inputs_cache = Vec::new();
        let mut bn_caches = Vec::new();
        let mut pre_bin: Vec<Tensor<T>> = Vec::new(); // BN outputs before binarization
        let mut out = None;
        for k in 0..num_layers {
            let s = if k == 0 && model.input_mode == InputMode::BytePlanes {
                let planes = to_bitplanes(m, data.dim, &images)?;
                linear_forward_bytes(&model.layers[k], &planes)?
            } else if k > 0 && model.spec.activations.bits == 1 {
                // hidden activations are exactly +-1, so the packed kernel
                // computes the identical integer product faster
                let a_bits = BitMatrix::pack(&acts[k])?;
                let wt = model.layers[k].packed_weights_t()?;
                crate::bitkernel::xnor_gemm(&a_bits, &wt)?
            } else {
                let wb = model.layers[k].binary_weights()?;
                acts[k].matmul_fast(wb)?
            };
            bn_inputs_cache.push(s);
            let (h, cache) = bn_forward_auto(&mut model.bns[k], &bn_inputs_cache[k], true)?;
            bn_caches.push(cache.expect("training mode returns a cache"));
            if k + 1 < num_layers {
                let mut act_rng = Rng::new(config.seed ^ 0x9e3779b97f4a7c15)
                    .stream(((epoch as u64) << 40) | ((batch_idx as u64) << 8) | k as u64);
                let a = activation_binarize_forward(
                    &h,
                    &model.spec,
                    &mut act_rng,
                    true,
                    config.stochastic,
                );
                pre_bin.push(h);
                acts.push(a);
            } else {
                out = Some(h);
            }
        }
        let out = out.expect("at least one layer");

        let (loss, g_out) = crate::layers::square_hinge_loss(&out, &targets)?;
        let loss_f = loss.to_f64x();
        if !loss_f.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batch_idx,
            });
        }
        loss_sum += loss_f;
        batches += 1;
        for (i, &l) in labels.iter().enumerate() {
            if argmax_row(out.row(i)) != l as usize {
                wrong += 1;
            }
        }
        seen += m;

        // backward and update, output layer inward
        let mut g = g_out;
        for k in (0..num_layers).rev() {
            let (mut g_s, g_gamma, g_beta) = bn_backward(&model.bns[k], &g, &bn_caches[k])?;
            if let Some(kind) = model.spec.gradients.clone() {
                g_s = quantize_gradient_tensor(&g_s, &kind);
            }
            let g_w = acts[k].matmul_at_b(&g_s)?;
            if k > 0 {
                let g_a = g_s.matmul_a_bt(model.layers[k].binary_weights()?)?;
                g = activation_backward(&g_a, &pre_bin[k - 1])?;
            }

            let w_lr = T::from_f64x(lr) * model.layers[k].gamma_k();
            let bn_lr = T::from_f64x(lr);
            match config.optim {
                OptimMode::Adam => {
                    let w = model.layers[k].weights_mut();
                    adam_update(w.data_mut(), g_w.data(), &mut state.w[k], w_lr)?;
                    clip_weights(w);
                    adam_update(&mut model.bns[k].gamma, &g_gamma, &mut state.gamma[k], bn_lr)?;
                    adam_update(&mut model.bns[k].beta, &g_beta, &mut state.beta[k], bn_lr)?;
                }
                OptimMode::ShiftAdaMax => {
                    let w = model.layers[k].weights_mut();
                    shift_adamax_update(w.data_mut(), g_w.data(), &mut state.w[k], w_lr)?;
                    clip_weights(w);
                    shift_adamax_update(
                        &mut model.bns[k].gamma,
                        &g_gamma,
                        &mut state.gamma[k],
                        bn_lr,
                    )?;
                    shift_adamax_update(&mut model.bns[k].beta, &g_beta, &mut state.beta[k], bn_lr)?;
                }
            }
        }
    }

    state.epoch += 1;
    if batches == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(EpochMetrics {
        epoch,
        loss: loss_sum / batches as f64,
        error_rate: wrong as f64 / seen as f64,
    })
}

/// Forward a batch in inference mode and return the output logits.
/// `packed` selects the bit-packed kernels; the float path binarizes with
/// the same sign rule and produces bit-identical logits.
fn infer_batch<T: Real>(
    model: &mut QnnModel<T>,
    images: &[u8],
    m: usize,
    dim: usize,
    packed: bool,
) -> Result<Tensor<T>> {
    let num_layers = model.num_layers();
    let mut a: Option<Tensor<T>> = None;
    for k in 0..num_layers {
        let s = if k == 0 {
            if packed && model.input_mode == InputMode::BytePlanes {
                let planes = to_bitplanes(m, dim, images)?;
                linear_forward_bytes(&model.layers[k], &planes)?
            } else {
                let a0 = bytes_to_tensor::<T>(m, dim, images)?;
                a0.matmul_fast(model.layers[k].binary_weights()?)?
            }
        } else {
            let prev = a.take().expect("hidden activation present");
            if packed {
                let a_bits = BitMatrix::pack(&prev)?;
                let wt = model.layers[k].packed_weights_t()?;
                crate::bitkernel::xnor_gemm(&a_bits, &wt)?
            } else {
                prev.matmul_fast(model.layers[k].binary_weights()?)?
            }
        };
        let (h, _) = bn_forward_auto(&mut model.bns[k], &s, false)?;
        if k + 1 < num_layers {
            a = Some(h.map(sign_binarize));
        } else {
            a = Some(h);
        }
    }
    Ok(a.expect("at least one layer"))
}

/// Classification error rate over a dataset using the packed inference
/// path (or the float reference path with `packed = false`). Ties in the
/// argmax break toward the lowest class index.
pub fn evaluate<T: Real>(model: &mut QnnModel<T>, data: &Dataset, packed: bool) -> Result<f64> {
    if data.n == 0 {
        return Err(Error::EmptyDataset);
    }
    model.binarize_all_weights();
    let mut wrong = 0usize;
    let chunk = 1000usize;
    let mut start = 0usize;
    while start < data.n {
        let m = chunk.min(data.n - start);
        let images = &data.images[start * data.dim..(start + m) * data.dim];
        let out = infer_batch(model, images, m, data.dim, packed)?;
        for i in 0..m {
            if argmax_row(out.row(i)) != data.labels[start + i] as usize {
                wrong += 1;
            }
        }
        start += m;
    }
    Ok(wrong as f64 / data.n as f64)
}

/// Full output logits for a dataset, for bitwise roundtrip checks.
pub fn predict_logits<T: Real>(
    model: &mut QnnModel<T>,
    data: &Dataset,
    packed: bool,
) -> Result<Tensor<T>> {
    if data.n == 0 {
        return Err(Error::EmptyDataset);
    }
    model.binarize_all_weights();
    let mut out = Tensor::zeros(data.n, model.out_dim())?;
    let chunk = 1000usize;
    let mut start = 0usize;
    while start < data.n {
        let m = chunk.min(data.n - start);
        let images = &data.images[start * data.dim..(start + m) * data.dim];
        let logits = infer_batch(model, images, m, data.dim, packed)?;
        for i in 0..m {
            out.row_mut(start + i).copy_from_slice(logits.row(i));
        }
        start += m;
    }
    Ok(out)
}

/// One epoch row of the training log, also emitted as CSV by the CLI.
#[derive(Debug, Clone, Copy)]
pub struct FitRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_err: f64,
    pub val_err: f64,
}

pub const FIT_CSV_HEADER: &str = "epoch,train_loss,train_err,val_err";

impl FitRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.train_err, self.val_err
        )
    }
}

pub struct FitResult<T> {
    pub history: Vec<FitRow>,
    pub best_model: QnnModel<T>,
    pub best_val_err: f64,
    pub best_epoch: usize,
}

/// Train for the configured number of epochs, tracking validation error
/// after each epoch and keeping the model with the best validation error.
pub fn fit<T: Real>(
    mut model: QnnModel<T>,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&FitRow)>,
) -> Result<FitResult<T>> {
    config.validate()?;
    let mut state = TrainerState::new(&model, config.optim);
    let mut history = Vec::new();
    let mut best_val_err = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_model = model.clone();
    for _ in 0..config.epochs {
        let metrics = train_epoch(&mut model, train, config, &mut state)?;
        let val_err = evaluate(&mut model, val, true)?;
        let row = FitRow {
            epoch: metrics.epoch,
            train_loss: metrics.loss,
            train_err: metrics.error_rate,
            val_err,
        };
        if let Some(cb) = progress.as_deref_mut() {
            cb(&row);
        }
        history.push(row);
        if val_err < best_val_err {
            best_val_err = val_err;
            best_epoch = metrics.epoch;
            best_model = model.clone();
        }
    }
    Ok(FitResult {
        history,
        best_model,
        best_val_err,
        best_epoch,
    })
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"QNN1";
pub const CHECKPOINT_VERSION: u32 = 1;
/// largest accepted per-layer dimension when loading
pub const CHECKPOINT_DIM_LIMIT: u64 = 1 << 24;

fn push_f32_slice<T: Real>(buf: &mut Vec<u8>, xs: &[T]) {
    for &x in xs {
        buf.extend_from_slice(&(x.to_f64x() as f32).to_le_bytes());
    }
}

/// Serialize the model (and optionally the optimizer state) to the
/// little-endian checkpoint format.
pub fn save_checkpoint<T: Real>(
    model: &QnnModel<T>,
    state: Option<&TrainerState<T>>,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.num_layers() as u32).to_le_bytes());
    for (layer, bn) in model.layers.iter().zip(&model.bns) {
        buf.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        push_f32_slice(&mut buf, layer.weights().data());
        push_f32_slice(&mut buf, &bn.gamma);
        push_f32_slice(&mut buf, &bn.beta);
        push_f32_slice(&mut buf, &bn.running_mean);
        push_f32_slice(&mut buf, &bn.running_var);
    }
    for kind in [
        Some(&model.spec.weights),
        Some(&model.spec.activations),
        model.spec.gradients.as_ref(),
    ] {
        match kind {
            Some(k) => {
                buf.push(k.bits);
                buf.push(k.scheme.to_u8());
            }
            None => {
                buf.push(0);
                buf.push(0);
            }
        }
    }
    match state {
        None => buf.push(0),
        Some(st) => {
            buf.push(1);
            buf.push(match st.w.first().map(|s| s.mode) {
                Some(OptimMode::ShiftAdaMax) => 1,
                _ => 0,
            });
            buf.extend_from_slice(&(st.epoch as u64).to_le_bytes());
            for group in [&st.w, &st.gamma, &st.beta] {
                for s in group.iter() {
                    buf.extend_from_slice(&s.t.to_le_bytes());
                    push_f32_slice(&mut buf, &s.m);
                    push_f32_slice(&mut buf, &s.v);
                }
            }
        }
    }
    let mut f = File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                needed: self.pos + n,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32_vec<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| T::from_f64x(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    }
}

/// Deserialize a checkpoint. Magic mismatch, unsupported version,
/// truncation and dimension overflow are distinct errors.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(QnnModel<T>, Option<TrainerState<T>>)> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    let mut cur = Cursor { buf: &raw, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let num_layers = cur.u32()? as usize;
    let mut layers = Vec::new();
    let mut bns = Vec::new();
    for _ in 0..num_layers {
        let in_dim = cur.u32()? as u64;
        let out_dim = cur.u32()? as u64;
        if in_dim == 0
            || out_dim == 0
            || in_dim > CHECKPOINT_DIM_LIMIT
            || out_dim > CHECKPOINT_DIM_LIMIT
            || in_dim * out_dim > CHECKPOINT_DIM_LIMIT
        {
            return Err(Error::CheckpointDimOverflow(in_dim.max(out_dim)));
        }
        let (in_dim, out_dim) = (in_dim as usize, out_dim as usize);
        let w = Tensor::from_vec(in_dim, out_dim, cur.f32_vec(in_dim * out_dim)?)?;
        let mut bn = BatchNormState::new(out_dim, BnMode::Vanilla);
        bn.gamma = cur.f32_vec(out_dim)?;
        bn.beta = cur.f32_vec(out_dim)?;
        bn.running_mean = cur.f32_vec(out_dim)?;
        bn.running_var = cur.f32_vec(out_dim)?;
        layers.push(LinearLayer::from_weights(w));
        bns.push(bn);
    }
    let mut kinds = Vec::new();
    for _ in 0..3 {
        let bits = cur.u8()?;
        let scheme = cur.u8()?;
        if bits == 0 {
            kinds.push(None);
        } else {
            kinds.push(Some(QuantKind::new(
                bits,
                Scheme::from_u8(scheme)?,
                -1.0,
                1.0,
            )?));
        }
    }
    let spec = QuantSpec {
        weights: kinds[0].clone().ok_or_else(|| {
            Error::InvalidQuantSpec("checkpoint missing weight quantization".into())
        })?,
        activations: kinds[1].clone().ok_or_else(|| {
            Error::InvalidQuantSpec("checkpoint missing activation quantization".into())
        })?,
        gradients: kinds[2].clone(),
    };
    let mut model = QnnModel {
        layers,
        bns,
        spec,
        input_mode: InputMode::BytePlanes,
    };

    let state = if cur.u8()? == 1 {
        let mode = if cur.u8()? == 1 {
            OptimMode::ShiftAdaMax
        } else {
            OptimMode::Adam
        };
        let epoch = cur.u64()? as usize;
        let mut st = TrainerState::new(&model, mode);
        st.epoch = epoch;
        let dims = model.layer_dims();
        for group in 0..3 {
            for k in 0..num_layers {
                let len = if group == 0 {
                    dims[k].0 * dims[k].1
                } else {
                    dims[k].1
                };
                let target = match group {
                    0 => &mut st.w[k],
                    1 => &mut st.gamma[k],
                    _ => &mut st.beta[k],
                };
                target.t = cur.u64()?;
                target.m = cur.f32_vec(len)?;
                target.v = cur.f32_vec(len)?;
            }
        }
        Some(st)
    } else {
        None
    };
    model.binarize_all_weights();
    Ok((model, state))
}
