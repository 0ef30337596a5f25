use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::model::encoder::{backward_items, encode_items_cached, ItemCache};
use crate::model::params::{ModelParams, Trainable};
use crate::model::transformer::{backward_sequence, forward_sequence, Dropout, ItemVectors, SeqCache};
use crate::model::TargetStyle;
use crate::Matrix;

/// One training sequence with its supervised `(position, next item)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<usize>,
    pub targets: Vec<(usize, usize)>,
}

impl Example {
    /// Next-item targets for `window`, whose last item is only ever a target.
    pub fn from_window(window: &[usize], style: TargetStyle) -> Self {
        let input = window[..window.len() - 1].to_vec();
        let targets = match style {
            TargetStyle::AllPositions => window[1..].iter().copied().enumerate().collect(),
            TargetStyle::LastOnly => vec![(input.len() - 1, window[window.len() - 1])],
        };
        Self { input, targets }
    }
}

/// One example per training prefix, using its most recent `max_seq_len + 1` items.
pub fn build_examples(dataset: &InteractionDataset, max_seq_len: usize, style: TargetStyle) -> Vec<Example> {
    dataset
        .training_sequences()
        .map(|seq| Example::from_window(&seq[seq.len().saturating_sub(max_seq_len + 1)..], style))
        .collect()
}

/// Activations kept between [`forward_loss`] and [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    items: ItemCache,
    vectors: ItemVectors,
    seqs: Vec<SeqCache>,
    targets: Vec<Vec<(usize, usize)>>,
    /// Supervised positions in the batch.
    pub count: usize,
    /// Summed (not averaged) loss.
    pub total: f64,
}

pub(crate) fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[target] - lse
}

#[cfg(test)]
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

fn forward_loss_with(
    params: &ModelParams,
    batch: &[Example],
    mut dropout: Option<&mut Dropout>,
) -> Result<(f64, ForwardCache)> {
    if batch.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let (v, items) = encode_items_cached(params)?;
    let vectors = ItemVectors::from_matrix(&v);
    let d = vectors.dim();
    let mut seqs = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    let mut count = 0;
    for (index, ex) in batch.iter().enumerate() {
        check_example(params, ex, index, vectors.count())?;
        let cache = forward_sequence(
            &params.trainable,
            params.dims.heads,
            &vectors,
            &ex.input,
            dropout.as_deref_mut(),
        )?;
        let mut example_loss = 0.0;
        for &(pos, target) in &ex.targets {
            example_loss -= log_softmax_at(&vectors.scores(cache.state(pos, d)), target);
        }
        if !example_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at batch index {index}")));
        }
        total += example_loss;
        count += ex.targets.len();
        seqs.push(cache);
    }
    if count == 0 {
        return Err(Error::Degenerate("batch has no supervised positions".into()));
    }
    let cache = ForwardCache {
        items,
        vectors,
        seqs,
        targets: batch.iter().map(|e| e.targets.clone()).collect(),
        count,
        total,
    };
    Ok((total / count as f64, cache))
}

/// Mean next-item cross-entropy over all supervised positions of the batch,
/// with the softmax taken over every item. Dropout is disabled.
pub fn forward_loss(params: &ModelParams, batch: &[Example]) -> Result<(f64, ForwardCache)> {
    forward_loss_with(params, batch, None)
}

/// Adds the loss gradient of one sequence, scaled by `inv`, into `grad` and
/// `d_items`; returns the summed loss of its supervised positions.
fn accumulate_example(
    params: &ModelParams,
    vectors: &ItemVectors,
    seq: &SeqCache,
    targets: &[(usize, usize)],
    inv: f64,
    grad: &mut Trainable,
    d_items: &mut [f64],
) -> f64 {
    let d = vectors.dim();
    let mut d_out = vec![0.0; seq.len() * d];
    let mut loss = 0.0;
    for &(pos, target) in targets {
        let s = seq.state(pos, d);
        let mut p = vectors.scores(s);
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target_logit = p[target];
        let mut total = 0.0;
        for v in p.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        loss += max + total.ln() - target_logit;
        let scale = inv / total;
        p[target] -= total;
        let ds = &mut d_out[pos * d..(pos + 1) * d];
        for (i, &g) in p.iter().enumerate() {
            let g = g * scale;
            let vi = vectors.item(i);
            let dvi = &mut d_items[i * d..(i + 1) * d];
            for k in 0..d {
                ds[k] += g * vi[k];
                dvi[k] += g * s[k];
            }
        }
    }
    backward_sequence(&params.trainable, params.dims.heads, seq, d_out, grad, d_items);
    loss
}

fn finish_items(
    params: &ModelParams,
    items: &ItemCache,
    n: usize,
    d: usize,
    d_items: Vec<f64>,
    grad: &mut Trainable,
) -> Result<()> {
    let dv = Matrix::from_vec(n, d, d_items)
        .map_err(|_| Error::Numeric("non-finite item gradient".into()))?
        .transpose();
    backward_items(params, items, dv, grad);
    Ok(())
}

/// Gradient of the mean loss for every trainable tensor.
pub fn backward(params: &ModelParams, cache: &ForwardCache) -> Result<Trainable> {
    let (n, d) = (cache.vectors.count(), cache.vectors.dim());
    if cache.seqs.len() != cache.targets.len() || d != params.dims.d_model {
        return Err(Error::Shape("forward cache does not match the parameters".into()));
    }
    let mut grad = params.trainable.zeros_like();
    let mut d_items = vec![0.0; n * d];
    let inv = 1.0 / cache.count as f64;
    for (seq, targets) in cache.seqs.iter().zip(&cache.targets) {
        accumulate_example(params, &cache.vectors, seq, targets, inv, &mut grad, &mut d_items);
    }
    finish_items(params, &cache.items, n, d, d_items, &mut grad)?;
    Ok(grad)
}

/// Summed loss, supervised position count and mean-loss gradient of a batch,
/// one sequence at a time.
pub(crate) fn loss_and_grad(
    params: &ModelParams,
    batch: &[Example],
    mut dropout: Option<&mut Dropout>,
) -> Result<(f64, usize, Trainable)> {
    let count: usize = batch.iter().map(|e| e.targets.len()).sum();
    if count == 0 {
        return Err(Error::Degenerate("batch has no supervised positions".into()));
    }
    let (v, items) = encode_items_cached(params)?;
    let vectors = ItemVectors::from_matrix(&v);
    let (n, d) = (vectors.count(), vectors.dim());
    let mut grad = params.trainable.zeros_like();
    let mut d_items = vec![0.0; n * d];
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for (index, ex) in batch.iter().enumerate() {
        check_example(params, ex, index, n)?;
        let seq = forward_sequence(
            &params.trainable,
            params.dims.heads,
            &vectors,
            &ex.input,
            dropout.as_deref_mut(),
        )?;
        let loss = accumulate_example(params, &vectors, &seq, &ex.targets, inv, &mut grad, &mut d_items);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at batch index {index}")));
        }
        total += loss;
    }
    finish_items(params, &items, n, d, d_items, &mut grad)?;
    Ok((total, count, grad))
}

fn check_example(params: &ModelParams, ex: &Example, index: usize, items: usize) -> Result<()> {
    if ex.input.len() > params.dims.max_seq_len {
        return Err(Error::Shape(format!(
            "example {index} has {} inputs, max_seq_len is {}",
            ex.input.len(),
            params.dims.max_seq_len
        )));
    }
    if let Some(&(pos, target)) = ex.targets.iter().find(|&&(p, t)| p >= ex.input.len() || t >= items) {
        return Err(Error::Shape(format!(
            "example {index} has an invalid target ({pos}, {target})"
        )));
    }
    Ok(())
}
