use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use whitenseq::diagnostics::format_key_values;
use whitenseq::model::{save_checkpoint, train_with, EncoderVariant, TrainConfig};

use super::{create_dir, echo_config, load_dataset, write};
use crate::config::{KeySpec, Settings};
use crate::svg::{line_chart, Series};
use crate::Common;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub const KEYS: &[KeySpec] = &[
    ("embeddings", None),
    ("sequences", None),
    ("min_interactions", Some("5")),
    ("setting", Some("warm")),
    ("cold_fraction", Some("0.15")),
    ("variant", Some("WHITEN")),
    ("combine", Some("sum")),
    ("head_depth", Some("2")),
    ("method", Some("zca")),
    ("groups", Some("4")),
    ("epsilon", Some("1e-5")),
    ("d_model", Some("64")),
    ("blocks", Some("2")),
    ("heads", Some("2")),
    ("max_seq_len", Some("50")),
    ("batch_size", Some("256")),
    ("learning_rate", Some("0.001")),
    ("weight_decay", Some("0")),
    ("dropout", Some("0.2")),
    ("max_epochs", Some("200")),
    ("patience", Some("10")),
    ("target_style", Some("all_positions")),
    ("seed", None),
    ("out_dir", None),
    ("svg", Some("false")),
];

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also plot the training history.
    #[arg(long)]
    pub svg: bool,
}

pub fn variant_from(s: &Settings) -> Result<EncoderVariant> {
    let mut v = EncoderVariant::new(s.get("variant")?);
    v.combine = s.get("combine")?;
    v.head_depth = s.get("head_depth")?;
    v.method = s.get("method")?;
    v.relaxed_groups = s.get("groups")?;
    v.epsilon = s.get("epsilon")?;
    v.validate()?;
    Ok(v)
}

pub fn train_config_from(s: &Settings) -> Result<TrainConfig> {
    let c = TrainConfig {
        learning_rate: s.get("learning_rate")?,
        weight_decay: s.get("weight_decay")?,
        batch_size: s.get("batch_size")?,
        max_seq_len: s.get("max_seq_len")?,
        d_model: s.get("d_model")?,
        blocks: s.get("blocks")?,
        heads: s.get("heads")?,
        dropout: s.get("dropout")?,
        max_epochs: s.get("max_epochs")?,
        patience: s.get("patience")?,
        seed: s.get("seed")?,
        target_style: s.get("target_style")?,
    };
    c.validate()?;
    Ok(c)
}

pub fn run(a: TrainArgs) -> Result<()> {
    let mut s = Settings::resolve("train", KEYS, a.common.config.as_deref(), &a.common.set)?;
    s.set_opt("seed", a.seed)?;
    s.set_opt("out_dir", a.out_dir.map(|p| p.display().to_string()))?;
    if a.svg {
        s.set("svg", "true".into())?;
    }
    s.check_required()?;
    let variant = variant_from(&s)?;
    let config = train_config_from(&s)?;
    let out = PathBuf::from(s.raw("out_dir")?);
    let data = load_dataset(&s)?;

    create_dir(&out)?;
    echo_config(&out, &s)?;
    let text = variant.kind.uses_text().then_some(&data.text);
    let (params, history) = train_with(&data.dataset, variant, &config, text, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  val N@20 {:.5}  kappa {:.3e}",
            r.epoch, r.loss, r.val_ndcg20, r.condition_number
        );
    })?;
    save_checkpoint(&params, out.join(CHECKPOINT_FILE))?;
    write(&out.join(HISTORY_FILE), &history.to_csv())?;
    let best = history.best();
    let summary = format_key_values(&[
        ("variant", variant.kind.to_string()),
        ("items", data.dataset.item_count.to_string()),
        ("users", data.dataset.users.len().to_string()),
        ("parameters", params.parameter_count().to_string()),
        ("best_epoch", history.best_epoch.to_string()),
        ("stopped_epoch", history.stopped_epoch.to_string()),
        ("best_val_ndcg20", best.val_ndcg20.to_string()),
    ]);
    write(&out.join(SUMMARY_FILE), &summary)?;
    if s.get::<bool>("svg")? {
        let series = |f: fn(&whitenseq::model::EpochRecord) -> f64| {
            history
                .epochs
                .iter()
                .map(|r| (r.epoch as f64, f(r)))
                .collect::<Vec<_>>()
        };
        let loss = line_chart(
            "Training loss",
            "epoch",
            "cross-entropy",
            &[Series {
                label: "loss",
                points: series(|r| r.loss),
            }],
        );
        write(&out.join("loss.svg"), &loss)?;
        let val = line_chart(
            "Validation NDCG@20",
            "epoch",
            "NDCG@20",
            &[Series {
                label: "validation",
                points: series(|r| r.val_ndcg20),
            }],
        );
        write(&out.join("validation.svg"), &val)?;
    }
    println!(
        "best epoch {} (val N@20 {:.5}); wrote {}",
        history.best_epoch,
        best.val_ndcg20,
        out.display()
    );
    Ok(())
}
