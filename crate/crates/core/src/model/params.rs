use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::layers::{LayerNorm, Linear};
use crate::model::{Combine, EncoderVariant, TrainConfig, VariantKind};
use crate::whitening::whiten;
use crate::Matrix;

/// One post-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
}

impl Block {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::init(d, d, rng),
            key: Linear::init_unbiased(d, d, rng),
            value: Linear::init(d, d, rng),
            output: Linear::init(d, d, rng),
            attn_norm: LayerNorm::new(d),
            ff_in: Linear::init(d, d, rng),
            ff_out: Linear::init(d, d, rng),
            ff_norm: LayerNorm::new(d),
        }
    }

    fn zeros_like(&self) -> Self {
        let d = self.attn_norm.gain.len();
        Self {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            output: self.output.zeros_like(),
            attn_norm: LayerNorm::zeros(d),
            ff_in: self.ff_in.zeros_like(),
            ff_out: self.ff_out.zeros_like(),
            ff_norm: LayerNorm::zeros(d),
        }
    }
}

/// Every trainable tensor. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainable {
    /// Projection head layers, input side first.
    pub head: Vec<Linear>,
    /// `2·d_model → d_model` map for the concatenating ensemble.
    pub combine: Option<Linear>,
    /// `d_model×|I|`, one column per item.
    pub id_table: Option<Matrix>,
    /// `max_seq_len×d_model`.
    pub positions: Matrix,
    pub blocks: Vec<Block>,
}

macro_rules! linear_tensors {
    ($out:ident, $names:ident, $lin:expr, $name:expr) => {{
        $out.push($lin.weight.as_slice());
        $names.push(format!("{}.weight", $name));
        if !$lin.bias.is_empty() {
            $out.push(&$lin.bias[..]);
            $names.push(format!("{}.bias", $name));
        }
    }};
}

impl Trainable {
    /// All-zero tensors with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            head: self.head.iter().map(Linear::zeros_like).collect(),
            combine: self.combine.as_ref().map(Linear::zeros_like),
            id_table: self.id_table.as_ref().map(|t| Matrix::zeros(t.rows(), t.cols())),
            positions: Matrix::zeros(self.positions.rows(), self.positions.cols()),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
        }
    }

    /// Tensors in declaration order with their names.
    pub fn named_tensors(&self) -> (Vec<&[f64]>, Vec<String>) {
        let mut out: Vec<&[f64]> = Vec::new();
        let mut names = Vec::new();
        for (i, l) in self.head.iter().enumerate() {
            linear_tensors!(out, names, l, format!("head.{i}"));
        }
        if let Some(c) = &self.combine {
            linear_tensors!(out, names, c, "combine");
        }
        if let Some(t) = &self.id_table {
            out.push(t.as_slice());
            names.push("id_table".into());
        }
        out.push(self.positions.as_slice());
        names.push("positions".into());
        for (i, b) in self.blocks.iter().enumerate() {
            linear_tensors!(out, names, b.query, format!("block.{i}.query"));
            linear_tensors!(out, names, b.key, format!("block.{i}.key"));
            linear_tensors!(out, names, b.value, format!("block.{i}.value"));
            linear_tensors!(out, names, b.output, format!("block.{i}.output"));
            out.push(&b.attn_norm.gain);
            out.push(&b.attn_norm.bias);
            names.push(format!("block.{i}.attn_norm.gain"));
            names.push(format!("block.{i}.attn_norm.bias"));
            linear_tensors!(out, names, b.ff_in, format!("block.{i}.ff_in"));
            linear_tensors!(out, names, b.ff_out, format!("block.{i}.ff_out"));
            out.push(&b.ff_norm.gain);
            out.push(&b.ff_norm.bias);
            names.push(format!("block.{i}.ff_norm.gain"));
            names.push(format!("block.{i}.ff_norm.bias"));
        }
        (out, names)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.named_tensors().0
    }

    /// Mutable tensors, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        fn lin<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut Linear) {
            out.push(l.weight.as_mut_slice());
            if !l.bias.is_empty() {
                out.push(&mut l.bias[..]);
            }
        }
        for l in &mut self.head {
            lin(&mut out, l);
        }
        if let Some(c) = &mut self.combine {
            lin(&mut out, c);
        }
        if let Some(t) = &mut self.id_table {
            out.push(t.as_mut_slice());
        }
        out.push(self.positions.as_mut_slice());
        for b in &mut self.blocks {
            lin(&mut out, &mut b.query);
            lin(&mut out, &mut b.key);
            lin(&mut out, &mut b.value);
            lin(&mut out, &mut b.output);
            out.push(&mut b.attn_norm.gain[..]);
            out.push(&mut b.attn_norm.bias[..]);
            lin(&mut out, &mut b.ff_in);
            lin(&mut out, &mut b.ff_out);
            out.push(&mut b.ff_norm.gain[..]);
            out.push(&mut b.ff_norm.bias[..]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Euclidean norm over all tensors.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale·other`.
    pub fn add_scaled(&mut self, other: &Trainable, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }
}

/// Pre-trained text features: never updated by training.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenText {
    /// Raw `d_t×|I|` embeddings.
    pub raw: Matrix,
    /// Head inputs derived from `raw`: `[X]`, `[Z_G=1]` or `[Z_G=1, Z_G>1]`.
    pub inputs: Vec<Matrix>,
}

impl FrozenText {
    /// Derives the head inputs the variant needs. Whitening statistics are
    /// fitted on every item column of `raw`.
    pub fn prepare(raw: Matrix, variant: &EncoderVariant) -> Result<Self> {
        let inputs = match variant.kind {
            VariantKind::Id => Vec::new(),
            VariantKind::Text | VariantKind::TextPlusId => vec![raw.clone()],
            VariantKind::Whiten => vec![whiten(&raw, variant.method, 1, variant.epsilon)?.matrix],
            VariantKind::WhitenPlus => vec![
                whiten(&raw, variant.method, 1, variant.epsilon)?.matrix,
                whiten(&raw, variant.method, variant.relaxed_groups, variant.epsilon)?.matrix,
            ],
        };
        Ok(Self { raw, inputs })
    }

    pub fn dim(&self) -> usize {
        self.raw.rows()
    }
}

/// Model dimensions that do not change during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    pub d_model: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub item_count: usize,
    pub text_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub variant: EncoderVariant,
    pub dims: ModelDims,
    pub trainable: Trainable,
    pub text: Option<FrozenText>,
}

impl ModelParams {
    /// Random initialization. `text` (`d_t×|I|`) is required by every variant except ID.
    pub fn init(
        variant: EncoderVariant,
        config: &TrainConfig,
        item_count: usize,
        text: Option<&Matrix>,
        seed: u64,
    ) -> Result<Self> {
        variant.validate()?;
        config.validate()?;
        let text = match (variant.kind.uses_text(), text) {
            (true, None) => {
                return Err(Error::Config(format!("variant {} needs text embeddings", variant.kind)));
            }
            (true, Some(t)) => {
                if t.cols() != item_count {
                    return Err(Error::Shape(format!(
                        "text embeddings cover {} items, dataset has {item_count}",
                        t.cols()
                    )));
                }
                Some(FrozenText::prepare(t.clone(), &variant)?)
            }
            (false, _) => None,
        };
        let dims = ModelDims {
            d_model: config.d_model,
            heads: config.heads,
            max_seq_len: config.max_seq_len,
            item_count,
            text_dim: text.as_ref().map_or(0, FrozenText::dim),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trainable = Self::init_trainable(&variant, &dims, config.blocks, &mut rng);
        Ok(Self {
            variant,
            dims,
            trainable,
            text,
        })
    }

    fn init_trainable(variant: &EncoderVariant, dims: &ModelDims, blocks: usize, rng: &mut ChaCha8Rng) -> Trainable {
        let d = dims.d_model;
        let head = if variant.kind.uses_text() {
            let mut layers = Vec::with_capacity(variant.head_depth + 1);
            let mut in_dim = dims.text_dim;
            for _ in 0..variant.head_depth {
                layers.push(Linear::init(d, in_dim, rng));
                in_dim = d;
            }
            layers.push(Linear::init(d, in_dim, rng));
            layers
        } else {
            Vec::new()
        };
        let combine = (variant.kind == VariantKind::WhitenPlus && variant.combine == Combine::Concat)
            .then(|| Linear::init(d, 2 * d, rng));
        let id_table = variant.kind.uses_id_table().then(|| {
            let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
            let data = (0..d * dims.item_count).map(|_| normal.sample(rng)).collect();
            Matrix::from_vec(d, dims.item_count, data).expect("finite init")
        });
        let pos_normal = Normal::new(0.0, 0.02).expect("valid std");
        let positions = Matrix::from_vec(
            dims.max_seq_len,
            d,
            (0..dims.max_seq_len * d).map(|_| pos_normal.sample(rng)).collect(),
        )
        .expect("finite init");
        let blocks = (0..blocks).map(|_| Block::init(d, rng)).collect();
        Trainable {
            head,
            combine,
            id_table,
            positions,
            blocks,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable.parameter_count()
    }

    pub fn blocks(&self) -> usize {
        self.trainable.blocks.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> TrainConfig {
        TrainConfig {
            d_model: 8,
            heads: 2,
            blocks: 1,
            max_seq_len: 6,
            ..Default::default()
        }
    }

    #[test]
    fn tensor_views_agree() {
        let text = Matrix::from_vec(4, 10, (0..40).map(|v| ((v * 7) % 11) as f64).collect()).unwrap();
        for kind in VariantKind::ALL {
            let mut variant = EncoderVariant::new(kind);
            variant.relaxed_groups = 2;
            variant.combine = Combine::Concat;
            let mut p = ModelParams::init(variant, &config(), 10, Some(&text), 1).unwrap();
            let (tensors, names) = p.trainable.named_tensors();
            assert_eq!(tensors.len(), names.len());
            let lens: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
            let lens_mut: Vec<usize> = p.trainable.tensors_mut().iter().map(|t| t.len()).collect();
            assert_eq!(lens, lens_mut);
            assert_eq!(p.trainable.zeros_like().parameter_count(), p.parameter_count());
        }
    }

    #[test]
    fn missing_text_is_a_configuration_error() {
        let err = ModelParams::init(EncoderVariant::new(VariantKind::Whiten), &config(), 10, None, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(ModelParams::init(EncoderVariant::new(VariantKind::Id), &config(), 10, None, 0).is_ok());
    }

    #[test]
    fn whiten_plus_has_one_shared_head() {
        let text = Matrix::from_vec(4, 10, (0..40).map(|v| ((v * 5) % 13) as f64).collect()).unwrap();
        let mut v = EncoderVariant::new(VariantKind::WhitenPlus);
        v.relaxed_groups = 2;
        let p = ModelParams::init(v, &config(), 10, Some(&text), 0).unwrap();
        assert_eq!(p.trainable.head.len(), v.head_depth + 1);
        assert_eq!(p.text.as_ref().unwrap().inputs.len(), 2);
    }
}
