use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::layers::LayerNormCache;
use crate::model::params::{Block, ModelParams, Trainable};
use crate::Matrix;

/// Item vectors stored one row per item (`|I|×d_model`), the transpose of `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemVectors {
    data: Vec<f64>,
    count: usize,
    dim: usize,
}

impl ItemVectors {
    pub fn from_matrix(v: &Matrix) -> Self {
        Self {
            data: v.transpose().into_vec(),
            count: v.cols(),
            dim: v.rows(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `Vᵀ s`: one score per item.
    pub fn scores(&self, s: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|row| dot(row, s)).collect()
    }
}

/// Inverted dropout driven by a seeded generator.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, len: usize) -> Option<Vec<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        Some(
            (0..len)
                .map(|_| {
                    if self.rng.random::<f64>() < self.rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect(),
        )
    }
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads×L×L` attention weights; entries above the diagonal stay zero.
    attn: Vec<f64>,
    ctx: Vec<f64>,
    attn_mask: Option<Vec<f64>>,
    ln1: LayerNormCache,
    x1: Vec<f64>,
    hidden: Vec<f64>,
    ff_mask: Option<Vec<f64>>,
    ln2: LayerNormCache,
}

/// Forward activations of one sequence.
#[derive(Clone, Debug)]
pub(crate) struct SeqCache {
    pub seq: Vec<usize>,
    input_mask: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
    /// `L×d_model` hidden states of the last block.
    pub output: Vec<f64>,
}

impl SeqCache {
    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn state(&self, t: usize, d: usize) -> &[f64] {
        &self.output[t * d..(t + 1) * d]
    }
}

fn block_forward(
    b: &Block,
    heads: usize,
    x: Vec<f64>,
    len: usize,
    dropout: &mut Option<&mut Dropout>,
) -> (Vec<f64>, BlockCache) {
    let d = b.query.out_dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = b.query.forward_rows(&x, len);
    let k = b.key.forward_rows(&x, len);
    let v = b.value.forward_rows(&x, len);
    let mut attn = vec![0.0; heads * len * len];
    let mut ctx = vec![0.0; len * d];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for t in 0..len {
            let qt = &q[t * d..(t + 1) * d][cols.clone()];
            let row = &mut attn[(h * len + t) * len..(h * len + t + 1) * len];
            let mut max = f64::NEG_INFINITY;
            for s in 0..=t {
                row[s] = scale * dot(qt, &k[s * d..(s + 1) * d][cols.clone()]);
                max = max.max(row[s]);
            }
            let mut total = 0.0;
            for w in &mut row[..=t] {
                *w = (*w - max).exp();
                total += *w;
            }
            let out = &mut ctx[t * d..(t + 1) * d][cols.clone()];
            for s in 0..=t {
                row[s] /= total;
                let vs = &v[s * d..(s + 1) * d][cols.clone()];
                out.iter_mut().zip(vs).for_each(|(o, vv)| *o += row[s] * vv);
            }
        }
    }
    let mut o = b.output.forward_rows(&ctx, len);
    let attn_mask = dropout.as_mut().and_then(|dr| dr.mask(len * d));
    apply_mask(&mut o, &attn_mask);
    o.iter_mut().zip(&x).for_each(|(a, xi)| *a += xi);
    let (x1, ln1) = b.attn_norm.forward(&o, len);

    let mut hidden = b.ff_in.forward_rows(&x1, len);
    hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut f = b.ff_out.forward_rows(&hidden, len);
    let ff_mask = dropout.as_mut().and_then(|dr| dr.mask(len * d));
    apply_mask(&mut f, &ff_mask);
    f.iter_mut().zip(&x1).for_each(|(a, xi)| *a += xi);
    let (y, ln2) = b.ff_norm.forward(&f, len);
    (
        y,
        BlockCache {
            x,
            q,
            k,
            v,
            attn,
            ctx,
            attn_mask,
            ln1,
            x1,
            hidden,
            ff_mask,
            ln2,
        },
    )
}

fn block_backward(b: &Block, heads: usize, c: &BlockCache, dy: &[f64], g: &mut Block) -> Vec<f64> {
    let d = b.query.out_dim();
    let len = c.x.len() / d;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx1 = b.ff_norm.backward(&c.ln2, dy, &mut g.ff_norm);
    let mut df = dx1.clone();
    apply_mask(&mut df, &c.ff_mask);
    let mut dhidden = vec![0.0; len * d];
    b.ff_out.backward_rows(&c.hidden, &df, len, &mut g.ff_out, &mut dhidden);
    for (gh, &h) in dhidden.iter_mut().zip(&c.hidden) {
        if h <= 0.0 {
            *gh = 0.0;
        }
    }
    b.ff_in.backward_rows(&c.x1, &dhidden, len, &mut g.ff_in, &mut dx1);

    let mut dx = b.attn_norm.backward(&c.ln1, &dx1, &mut g.attn_norm);
    let mut dout = dx.clone();
    apply_mask(&mut dout, &c.attn_mask);
    let mut dctx = vec![0.0; len * d];
    b.output.backward_rows(&c.ctx, &dout, len, &mut g.output, &mut dctx);

    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    let mut da = vec![0.0; len];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for t in 0..len {
            let row = &c.attn[(h * len + t) * len..(h * len + t + 1) * len];
            let dct = &dctx[t * d..(t + 1) * d][cols.clone()];
            let mut weighted = 0.0;
            for s in 0..=t {
                da[s] = dot(dct, &c.v[s * d..(s + 1) * d][cols.clone()]);
                weighted += row[s] * da[s];
                let dvs = &mut dv[s * d..(s + 1) * d][cols.clone()];
                dvs.iter_mut().zip(dct).for_each(|(a, g)| *a += row[s] * g);
            }
            for s in 0..=t {
                let ds = row[s] * (da[s] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let ks = &c.k[s * d..(s + 1) * d][cols.clone()];
                let qt = &c.q[t * d..(t + 1) * d][cols.clone()];
                let dqt = &mut dq[t * d..(t + 1) * d][cols.clone()];
                dqt.iter_mut().zip(ks).for_each(|(a, kv)| *a += ds * kv);
                let dks = &mut dk[s * d..(s + 1) * d][cols.clone()];
                dks.iter_mut().zip(qt).for_each(|(a, qv)| *a += ds * qv);
            }
        }
    }
    b.query.backward_rows(&c.x, &dq, len, &mut g.query, &mut dx);
    b.key.backward_rows(&c.x, &dk, len, &mut g.key, &mut dx);
    b.value.backward_rows(&c.x, &dv, len, &mut g.value, &mut dx);
    dx
}

/// Runs the sequence encoder over `seq`, truncated to the most recent `max_seq_len` items.
pub(crate) fn forward_sequence(
    t: &Trainable,
    heads: usize,
    items: &ItemVectors,
    seq: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> Result<SeqCache> {
    let max_len = t.positions.rows();
    if seq.is_empty() {
        return Err(Error::Degenerate("empty sequence".into()));
    }
    if let Some(&bad) = seq.iter().find(|&&i| i >= items.count()) {
        return Err(Error::Shape(format!(
            "item index {bad} out of range for {} items",
            items.count()
        )));
    }
    let seq = &seq[seq.len().saturating_sub(max_len)..];
    let (len, d) = (seq.len(), items.dim());
    let mut x = Vec::with_capacity(len * d);
    for (p, &i) in seq.iter().enumerate() {
        x.extend(items.item(i).iter().zip(t.positions.row(p)).map(|(a, b)| a + b));
    }
    let input_mask = dropout.as_mut().and_then(|dr| dr.mask(len * d));
    apply_mask(&mut x, &input_mask);
    let mut blocks = Vec::with_capacity(t.blocks.len());
    for b in &t.blocks {
        let (y, cache) = block_forward(b, heads, x, len, &mut dropout);
        blocks.push(cache);
        x = y;
    }
    Ok(SeqCache {
        seq: seq.to_vec(),
        input_mask,
        blocks,
        output: x,
    })
}

/// Backpropagates `d_out` (`L×d_model`) into `grad` and into `d_items` (`|I|×d_model`).
pub(crate) fn backward_sequence(
    t: &Trainable,
    heads: usize,
    cache: &SeqCache,
    d_out: Vec<f64>,
    grad: &mut Trainable,
    d_items: &mut [f64],
) {
    let mut dx = d_out;
    for (i, b) in t.blocks.iter().enumerate().rev() {
        dx = block_backward(b, heads, &cache.blocks[i], &dx, &mut grad.blocks[i]);
    }
    apply_mask(&mut dx, &cache.input_mask);
    let d = t.positions.cols();
    for (p, &item) in cache.seq.iter().enumerate() {
        let g = &dx[p * d..(p + 1) * d];
        grad.positions.row_mut(p).iter_mut().zip(g).for_each(|(a, b)| *a += b);
        d_items[item * d..(item + 1) * d]
            .iter_mut()
            .zip(g)
            .for_each(|(a, b)| *a += b);
    }
}

/// User representation: the final-position hidden state, without dropout.
pub fn encode_sequence(params: &ModelParams, items: &ItemVectors, seq: &[usize]) -> Result<Vec<f64>> {
    let cache = forward_sequence(&params.trainable, params.dims.heads, items, seq, None)?;
    let d = items.dim();
    Ok(cache.state(cache.len() - 1, d).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_items, EncoderVariant, TrainConfig, VariantKind};
    use rand::SeedableRng;

    fn params(blocks: usize, heads: usize) -> ModelParams {
        let cfg = TrainConfig {
            d_model: 8,
            heads,
            blocks,
            max_seq_len: 6,
            ..Default::default()
        };
        ModelParams::init(EncoderVariant::new(VariantKind::Id), &cfg, 10, None, 11).unwrap()
    }

    fn items(p: &ModelParams) -> ItemVectors {
        ItemVectors::from_matrix(&encode_items(p).unwrap())
    }

    #[test]
    fn interior_positions_ignore_the_future() {
        let p = params(2, 2);
        let iv = items(&p);
        let a = forward_sequence(&p.trainable, 2, &iv, &[1, 2, 3, 4, 5], None).unwrap();
        for replacement in [0, 7, 9] {
            let b = forward_sequence(&p.trainable, 2, &iv, &[1, 2, replacement, 4, 5], None).unwrap();
            for t in 0..2 {
                assert_eq!(a.state(t, 8), b.state(t, 8));
            }
            if replacement != 3 {
                assert_ne!(a.state(2, 8), b.state(2, 8));
            }
        }
    }

    #[test]
    fn single_item_and_determinism() {
        let p = params(1, 1);
        let iv = items(&p);
        let s1 = encode_sequence(&p, &iv, &[4]).unwrap();
        let s2 = encode_sequence(&p, &iv, &[4]).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(s1, encode_sequence(&p, &iv, &[5]).unwrap());
        let long = [1, 2, 3, 4, 5, 6, 7, 8];
        assert_eq!(
            encode_sequence(&p, &iv, &long).unwrap(),
            encode_sequence(&p, &iv, &long[2..]).unwrap()
        );
    }

    #[test]
    fn rejects_empty_and_unknown_items() {
        let p = params(1, 1);
        let iv = items(&p);
        assert!(matches!(encode_sequence(&p, &iv, &[]), Err(Error::Degenerate(_))));
        assert!(matches!(encode_sequence(&p, &iv, &[10]), Err(Error::Shape(_))));
    }

    #[test]
    fn dropout_rescales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dr = Dropout {
            rate: 0.25,
            rng: &mut rng,
        };
        let m = dr.mask(20_000).unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.03);
        assert!(m.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
    }
}
