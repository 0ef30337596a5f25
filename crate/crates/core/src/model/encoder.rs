use crate::error::{Error, Result};
use crate::model::layers::Linear;
use crate::model::params::{ModelParams, Trainable};
use crate::model::{Combine, VariantKind};
use crate::Matrix;

/// Layer inputs of one pass through the projection head.
#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    /// `inputs[l]` feeds layer `l`; entries after the first are ReLU outputs.
    inputs: Vec<Matrix>,
}

/// Everything the item-side backward pass needs.
#[derive(Clone, Debug)]
pub struct ItemCache {
    branches: Vec<(HeadCache, Matrix)>,
    /// Stacked head outputs fed to the concatenating combiner.
    concat: Option<Matrix>,
}

fn head_forward(head: &[Linear], x: &Matrix) -> (Matrix, HeadCache) {
    let mut inputs = vec![x.clone()];
    let last = head.len() - 1;
    for (l, layer) in head.iter().enumerate() {
        let mut y = layer.forward_columns(&inputs[l]);
        if l == last {
            return (y, HeadCache { inputs });
        }
        y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        inputs.push(y);
    }
    unreachable!("head has at least one layer")
}

fn head_backward(head: &[Linear], cache: &HeadCache, dy: Matrix, grad: &mut [Linear]) {
    let mut dy = dy;
    for l in (0..head.len()).rev() {
        let dx = head[l].backward_columns(&cache.inputs[l], &dy, &mut grad[l]);
        if l == 0 {
            break;
        }
        let mut dx = dx;
        for (g, &a) in dx.as_mut_slice().iter_mut().zip(cache.inputs[l].as_slice()) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        dy = dx;
    }
}

fn stack_rows(a: &Matrix, b: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), data).expect("finite head outputs")
}

fn missing(what: &str, kind: VariantKind) -> Error {
    Error::Config(format!("variant {kind} requires {what}"))
}

pub(crate) fn encode_items_cached(params: &ModelParams) -> Result<(Matrix, ItemCache)> {
    let kind = params.variant.kind;
    let t = &params.trainable;
    let inputs: &[Matrix] = match (&params.text, kind.uses_text()) {
        (Some(text), true) => &text.inputs,
        (None, true) => return Err(missing("frozen text embeddings", kind)),
        (_, false) => &[],
    };
    let needed = match kind {
        VariantKind::Id => 0,
        VariantKind::WhitenPlus => 2,
        _ => 1,
    };
    if inputs.len() != needed || (needed > 0 && t.head.is_empty()) {
        return Err(missing("a projection head and its text inputs", kind));
    }
    if kind.uses_id_table() && t.id_table.is_none() {
        return Err(missing("an ID embedding table", kind));
    }

    let branches: Vec<(HeadCache, Matrix)> = inputs
        .iter()
        .map(|x| {
            let (y, c) = head_forward(&t.head, x);
            (c, y)
        })
        .collect();
    let mut concat = None;
    let v = match kind {
        VariantKind::Id => t.id_table.clone().expect("checked"),
        VariantKind::Text | VariantKind::Whiten => branches[0].1.clone(),
        VariantKind::TextPlusId => t.id_table.as_ref().expect("checked").add(&branches[0].1),
        VariantKind::WhitenPlus => match (params.variant.combine, &t.combine) {
            (Combine::Sum, _) => branches[0].1.add(&branches[1].1),
            (Combine::Concat, Some(c)) => {
                let stacked = stack_rows(&branches[0].1, &branches[1].1);
                let v = c.forward_columns(&stacked);
                concat = Some(stacked);
                v
            }
            (Combine::Concat, None) => return Err(missing("a combining layer", kind)),
        },
    };
    Ok((v, ItemCache { branches, concat }))
}

/// Item matrix `V` (`d_model×|I|`) for the model's variant.
pub fn encode_items(params: &ModelParams) -> Result<Matrix> {
    Ok(encode_items_cached(params)?.0)
}

/// Backpropagates `dV` into the item-side parameters of `grad`.
pub(crate) fn backward_items(params: &ModelParams, cache: &ItemCache, dv: Matrix, grad: &mut Trainable) {
    let t = &params.trainable;
    if let Some(g) = &mut grad.id_table {
        g.add_assign(&dv);
    }
    match (&t.combine, &cache.concat) {
        (Some(c), Some(stacked)) => {
            let d = dv.rows();
            let dstack = c.backward_columns(stacked, &dv, grad.combine.as_mut().expect("matching grad"));
            let top = dstack.row_block(0, d);
            let bottom = dstack.row_block(d, 2 * d);
            head_backward(&t.head, &cache.branches[0].0, top, &mut grad.head);
            head_backward(&t.head, &cache.branches[1].0, bottom, &mut grad.head);
        }
        _ => {
            for (c, _) in &cache.branches {
                head_backward(&t.head, c, dv.clone(), &mut grad.head);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderVariant, TrainConfig};

    fn config(d: usize) -> TrainConfig {
        TrainConfig {
            d_model: d,
            heads: 1,
            blocks: 1,
            max_seq_len: 4,
            ..Default::default()
        }
    }

    fn text(d: usize, n: usize) -> Matrix {
        Matrix::from_vec(d, n, (0..d * n).map(|v| ((v * 37 % 17) as f64 - 8.0) / 3.0).collect()).unwrap()
    }

    #[test]
    fn id_variant_is_the_table() {
        let p = ModelParams::init(EncoderVariant::new(VariantKind::Id), &config(8), 12, None, 3).unwrap();
        assert_eq!(&encode_items(&p).unwrap(), p.trainable.id_table.as_ref().unwrap());
    }

    #[test]
    fn identity_head_passes_text_through() {
        let mut v = EncoderVariant::new(VariantKind::Text);
        v.head_depth = 0;
        let x = text(4, 9);
        let mut p = ModelParams::init(v, &config(4), 9, Some(&x), 0).unwrap();
        p.trainable.head[0] = Linear {
            weight: Matrix::identity(4),
            bias: vec![0.0; 4],
        };
        assert_eq!(encode_items(&p).unwrap(), x);
    }

    #[test]
    fn equal_branches_double_the_head() {
        let mut v = EncoderVariant::new(VariantKind::WhitenPlus);
        v.relaxed_groups = 2;
        let mut p = ModelParams::init(v, &config(6), 10, Some(&text(4, 10)), 5).unwrap();
        let text = p.text.as_mut().unwrap();
        text.inputs[1] = text.inputs[0].clone();
        let (single, _) = head_forward(&p.trainable.head, &p.text.as_ref().unwrap().inputs[0]);
        assert_eq!(encode_items(&p).unwrap(), single.scale(2.0));
    }

    #[test]
    fn swapping_whitened_inputs_is_exact() {
        let mut v = EncoderVariant::new(VariantKind::WhitenPlus);
        v.relaxed_groups = 2;
        let p = ModelParams::init(v, &config(6), 10, Some(&text(4, 10)), 5).unwrap();
        let mut swapped = p.clone();
        swapped.text.as_mut().unwrap().inputs.swap(0, 1);
        assert_eq!(encode_items(&p).unwrap(), encode_items(&swapped).unwrap());
    }

    #[test]
    fn missing_inputs_are_configuration_errors() {
        let mut p = ModelParams::init(
            EncoderVariant::new(VariantKind::TextPlusId),
            &config(4),
            6,
            Some(&text(4, 6)),
            0,
        )
        .unwrap();
        p.trainable.id_table = None;
        assert!(matches!(encode_items(&p), Err(Error::Config(_))));
        let mut p = ModelParams::init(
            EncoderVariant::new(VariantKind::Text),
            &config(4),
            6,
            Some(&text(4, 6)),
            0,
        )
        .unwrap();
        p.text = None;
        assert!(matches!(encode_items(&p), Err(Error::Config(_))));
    }
}
