use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::loss::{backward, forward_loss, Example};
use crate::model::params::ModelParams;
use crate::model::{EncoderVariant, TrainConfig, VariantKind};
use crate::Matrix;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_MAX_DIM: usize = 16;
/// Scale of the noise added to every parameter so that zero biases do not
/// leave ReLU inputs exactly at the kink.
const JITTER: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over trainable scalars of `|analytic − fd| / max(|analytic|, |fd|, 1e-8)`.
    pub max_relative_error: f64,
    /// Name of the tensor holding the worst scalar.
    pub worst_tensor: String,
    pub scalars_checked: usize,
    /// Whether the frozen text features were left untouched.
    pub frozen_text_unchanged: bool,
}

fn relative_error(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences on a small random
/// model and batch. Dropout is disabled.
///
/// `items` is the catalogue size; text features have 4 dimensions (rounded up
/// to a multiple of the relaxed group count).
pub fn grad_check(variant: EncoderVariant, config: &TrainConfig, items: usize, seed: u64) -> Result<GradCheckReport> {
    if config.d_model > GRAD_CHECK_MAX_DIM || !(2..=GRAD_CHECK_MAX_DIM).contains(&items) {
        return Err(Error::Config(format!(
            "grad_check needs d_model <= {GRAD_CHECK_MAX_DIM} and 2 <= items <= {GRAD_CHECK_MAX_DIM}"
        )));
    }
    let config = TrainConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = variant.kind.uses_text().then(|| {
        let groups = if variant.kind == VariantKind::WhitenPlus {
            variant.relaxed_groups
        } else {
            1
        };
        let dim = groups * 4usize.div_ceil(groups);
        let data = (0..dim * items).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(dim, items, data).expect("finite draws")
    });
    let mut params = ModelParams::init(variant, &config, items, text.as_ref(), seed)?;
    for t in params.trainable.tensors_mut() {
        for v in t.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += JITTER * z;
        }
    }
    let frozen = params.text.clone();

    let batch: Vec<Example> = (0..3)
        .map(|_| {
            let len = rng.random_range(2..=config.max_seq_len + 1);
            let window: Vec<usize> = (0..len).map(|_| rng.random_range(0..items)).collect();
            Example::from_window(&window, config.target_style)
        })
        .collect();

    let (_, cache) = forward_loss(&params, &batch)?;
    let grad = backward(&params, &cache)?;
    let (analytic, names) = grad.named_tensors();
    let analytic: Vec<Vec<f64>> = analytic.into_iter().map(<[f64]>::to_vec).collect();

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (t, (name, grads)) in names.iter().zip(&analytic).enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let original = params.trainable.tensors()[t][k];
            params.trainable.tensors_mut()[t][k] = original + GRAD_CHECK_STEP;
            let plus = forward_loss(&params, &batch)?.0;
            params.trainable.tensors_mut()[t][k] = original - GRAD_CHECK_STEP;
            let minus = forward_loss(&params, &batch)?.0;
            params.trainable.tensors_mut()[t][k] = original;
            let fd = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let err = relative_error(a, fd);
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, name.clone());
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_tensor: worst.1,
        scalars_checked: checked,
        frozen_text_unchanged: params.text == frozen,
    })
}
