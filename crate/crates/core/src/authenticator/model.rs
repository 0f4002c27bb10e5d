use serde::{Deserialize, Serialize};

use crate::dataio::NormStats;
use crate::netkernels::{
    layer_backward, layer_forward, recurrent_backward, recurrent_forward, softmax,
    softmax_xent_batch, Activation, Cache, Differentiable, Gradients, LayerParams, SequenceCache,
    Tensor,
};
use crate::rng::stage_rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    LstmFcn,
    Lstm,
    RnnGru,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::LstmFcn, ArchKind::Lstm, ArchKind::RnnGru];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::LstmFcn => "lstm_fcn",
            ArchKind::Lstm => "lstm",
            ArchKind::RnnGru => "rnn_gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Width of each recurrent layer.
    pub hidden: usize,
    /// Number of stacked recurrent layers.
    pub layers: usize,
    /// Filters of the three convolution blocks (LstmFcn only).
    pub conv_filters: [usize; 3],
    pub conv_kernels: [usize; 3],
    pub n_features: usize,
    pub n_classes: usize,
}

impl ArchSpec {
    pub fn new(kind: ArchKind, n_features: usize, n_classes: usize) -> Self {
        ArchSpec {
            kind,
            hidden: 64,
            layers: 1,
            conv_filters: [128, 256, 128],
            conv_kernels: [8, 5, 3],
            n_features,
            n_classes,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_conv_filters(mut self, filters: [usize; 3]) -> Self {
        self.conv_filters = filters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::TooFewClasses(self.n_classes));
        }
        if self.hidden == 0 || self.layers == 0 || self.n_features == 0 {
            return Err(Error::Shape(format!("degenerate architecture {self:?}")));
        }
        if self.kind == ArchKind::LstmFcn
            && (self.conv_filters.contains(&0) || self.conv_kernels.contains(&0))
        {
            return Err(Error::Shape(
                "conv widths and kernels must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (h, f, d) = (self.hidden, self.n_features, self.n_classes);
        let gates = match self.kind {
            ArchKind::RnnGru => 3,
            _ => 4,
        };
        let cell = |input: usize| match self.kind {
            ArchKind::RnnGru => gates * h * (input + h) + 2 * gates * h,
            _ => gates * h * (input + h) + gates * h,
        };
        let recurrent: usize = cell(f) + (1..self.layers).map(|_| cell(h)).sum::<usize>();
        let (conv, head_in) = match self.kind {
            ArchKind::LstmFcn => {
                let [c1, c2, c3] = self.conv_filters;
                let [k1, k2, k3] = self.conv_kernels;
                let conv = c1 * k1 * f + c1 + c2 * k2 * c1 + c2 + c3 * k3 * c2 + c3;
                (conv, h + c3)
            }
            _ => (0, h),
        };
        recurrent + conv + head_in * d + d
    }
}

/// Classifier parameters plus the normalization they were trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub arch: ArchSpec,
    pub layers: Vec<LayerParams>,
    pub norm_stats: Option<NormStats>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Argmax label with its probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let label = argmax(&probs);
        Prediction { probs, label }
    }
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Seeded, untrained model.
pub fn build_model(arch: &ArchSpec, seed: u64) -> Result<TrainedModel> {
    arch.validate()?;
    let mut rng = stage_rng(seed, arch.kind.name());
    let mut layers = Vec::new();
    let mut input = arch.n_features;
    for _ in 0..arch.layers {
        layers.push(match arch.kind {
            ArchKind::RnnGru => LayerParams::gru(input, arch.hidden, &mut rng),
            _ => LayerParams::lstm(input, arch.hidden, &mut rng),
        });
        input = arch.hidden;
    }
    let mut head_in = arch.hidden;
    if arch.kind == ArchKind::LstmFcn {
        let mut ch = arch.n_features;
        for (&filters, &kernel) in arch.conv_filters.iter().zip(&arch.conv_kernels) {
            layers.push(LayerParams::conv1d(
                ch,
                filters,
                kernel,
                Activation::Relu,
                &mut rng,
            ));
            ch = filters;
        }
        layers.push(LayerParams::global_pool());
        head_in += ch;
    }
    layers.push(LayerParams::dense(
        head_in,
        arch.n_classes,
        Activation::Identity,
        1.0,
        &mut rng,
    ));
    Ok(TrainedModel {
        arch: arch.clone(),
        layers,
        norm_stats: None,
        history: Vec::new(),
    })
}

/// Everything the backward pass needs from one forward pass.
pub struct ModelCache {
    recurrent: Vec<SequenceCache>,
    conv: Vec<Cache>,
    head: Cache,
    steps: usize,
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (rows, ca, cb) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = Vec::with_capacity(rows * (ca + cb));
    for r in 0..rows {
        out.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
    }
    Tensor::from_vec(&[rows, ca + cb], out).expect("row-wise concat")
}

fn split_cols(x: &Tensor, first: usize) -> (Tensor, Tensor) {
    let (rows, cols) = (x.dim(0), x.dim(1));
    let second = cols - first;
    let (mut a, mut b) = (
        Vec::with_capacity(rows * first),
        Vec::with_capacity(rows * second),
    );
    for row in x.data().chunks(cols) {
        a.extend_from_slice(&row[..first]);
        b.extend_from_slice(&row[first..]);
    }
    (
        Tensor::from_vec(&[rows, first], a).expect("split"),
        Tensor::from_vec(&[rows, second], b).expect("split"),
    )
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.arch.n_features
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::num_params).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 3 {
            return Err(Error::Shape(format!(
                "model input must be [B, T, F], got {:?}",
                x.shape()
            )));
        }
        if x.dim(2) != self.n_features() {
            return Err(Error::FeatureMismatch {
                expected: self.n_features(),
                got: x.dim(2),
            });
        }
        Ok(())
    }

    /// Logits `[B, D]` for windows `[B, T, F]`, plus the backward cache.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ModelCache)> {
        self.check_input(x)?;
        let n_rec = self.arch.layers;
        let steps = x.dim(1);
        let mut seq = x.clone();
        let mut recurrent = Vec::with_capacity(n_rec);
        for cell in &self.layers[..n_rec] {
            let (out, cache) = recurrent_forward(cell, &seq)?;
            recurrent.push(cache);
            seq = out;
        }
        let mut features = seq.time_slice(steps - 1);
        let mut conv = Vec::new();
        let head_idx = self.layers.len() - 1;
        if self.arch.kind == ArchKind::LstmFcn {
            let mut h = x.clone();
            for layer in &self.layers[n_rec..head_idx] {
                let f = layer_forward(layer, &h, None)?;
                conv.push(f.cache);
                h = f.output;
            }
            features = concat_cols(&features, &h);
        }
        let head = layer_forward(&self.layers[head_idx], &features, None)?;
        Ok((
            head.output,
            ModelCache {
                recurrent,
                conv,
                head: head.cache,
                steps,
            },
        ))
    }

    /// Parameter gradients and input gradient `[B, T, F]` for an upstream
    /// gradient on the logits.
    pub fn backward(
        &self,
        cache: &ModelCache,
        dlogits: &Tensor,
    ) -> Result<(Vec<Gradients>, Tensor)> {
        let n_rec = self.arch.layers;
        let head_idx = self.layers.len() - 1;
        let mut grads: Vec<Gradients> = self.layers.iter().map(Gradients::zeros_like).collect();
        let head = layer_backward(&self.layers[head_idx], &cache.head, dlogits, None)?;
        grads[head_idx] = head.grads;
        let (d_last, d_conv) = if self.arch.kind == ArchKind::LstmFcn {
            let (a, b) = split_cols(&head.input_grad, self.arch.hidden);
            (a, Some(b))
        } else {
            (head.input_grad, None)
        };

        let mut dx = None;
        if let Some(mut up) = d_conv {
            for (i, layer) in self.layers[n_rec..head_idx].iter().enumerate().rev() {
                let b = layer_backward(layer, &cache.conv[i], &up, None)?;
                grads[n_rec + i] = b.grads;
                up = b.input_grad;
            }
            dx = Some(up);
        }

        let batch = d_last.dim(0);
        let mut d_seq = Tensor::zeros(&[batch, cache.steps, self.arch.hidden]);
        d_seq.set_time_slice(cache.steps - 1, &d_last);
        for i in (0..n_rec).rev() {
            let (g, d_in) = recurrent_backward(&self.layers[i], &cache.recurrent[i], &d_seq)?;
            grads[i] = g;
            d_seq = d_in;
        }
        let dx = match dx {
            Some(mut conv_dx) => {
                conv_dx.add_assign(&d_seq);
                conv_dx
            }
            None => d_seq,
        };
        Ok((grads, dx))
    }

    /// Per-window class probabilities.
    pub fn predict_windows(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (logits, _) = self.forward(x)?;
        Ok(logits
            .data()
            .chunks(self.n_classes())
            .map(softmax)
            .collect())
    }

    /// Window probabilities averaged over the windows of `x`, then argmax.
    pub fn predict_mean(&self, x: &Tensor) -> Result<Prediction> {
        let rows = self.predict_windows(x)?;
        Ok(Prediction::from_probs(mean_rows(&rows)))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::netkernels::checkpoint::save(path, "model", self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let m: TrainedModel = crate::netkernels::checkpoint::load(path, "model")?;
        m.check_layers()?;
        Ok(m)
    }

    /// Layer kinds and shapes agree with the architecture.
    fn check_layers(&self) -> Result<()> {
        let fresh = build_model(&self.arch, 0)?;
        let congruent = fresh.layers.len() == self.layers.len()
            && fresh.layers.iter().zip(&self.layers).all(|(a, b)| {
                a.kind == b.kind
                    && a.tensors.len() == b.tensors.len()
                    && a.tensors
                        .iter()
                        .zip(&b.tensors)
                        .all(|(x, y)| x.shape() == y.shape())
            });
        if !congruent {
            return Err(Error::Shape(
                "checkpoint layers do not match architecture".into(),
            ));
        }
        self.layers.iter().try_for_each(LayerParams::validate)
    }
}

pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

impl Differentiable for TrainedModel {
    fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    fn loss(&self, input: &Tensor, targets: &[usize]) -> Result<f64> {
        let (logits, _) = self.forward(input)?;
        Ok(softmax_xent_batch(&logits, targets)?.0)
    }

    fn loss_and_grads(&self, input: &Tensor, targets: &[usize]) -> Result<(f64, Vec<Gradients>)> {
        let (logits, cache) = self.forward(input)?;
        let (loss, dlogits) = softmax_xent_batch(&logits, targets)?;
        let (grads, _) = self.backward(&cache, &dlogits)?;
        Ok((loss, grads))
    }
}
