use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use whitenseq::data::{gen_anisotropic_embeddings, gen_sequences, EmbeddingFile, SequenceGenConfig};
use whitenseq::diagnostics::{format_key_values, mean_pairwise_cosine};

use super::{create_dir, echo_config, write};
use crate::config::{KeySpec, Settings};
use crate::Common;

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const SEQUENCES_FILE: &str = "sequences.txt";
pub const ID_MAP_FILE: &str = "id_map.tsv";
pub const MANIFEST_FILE: &str = "manifest.txt";

const KEYS: &[KeySpec] = &[
    ("items", Some("500")),
    ("users", Some("2000")),
    ("dim", Some("64")),
    ("target_cosine", Some("0.8")),
    ("mean_len", Some("12")),
    ("beta", Some("4")),
    ("gamma", Some("0.5")),
    ("user_norm", Some("3")),
    ("seed", None),
    ("out_dir", None),
];

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub target_cosine: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run(a: SynthArgs) -> Result<()> {
    let mut s = Settings::resolve("synth", KEYS, a.common.config.as_deref(), &a.common.set)?;
    s.set_opt("items", a.items)?;
    s.set_opt("users", a.users)?;
    s.set_opt("dim", a.dim)?;
    s.set_opt("target_cosine", a.target_cosine)?;
    s.set_opt("seed", a.seed)?;
    s.set_opt("out_dir", a.out_dir.map(|p| p.display().to_string()))?;
    s.check_required()?;

    let seed: u64 = s.get("seed")?;
    let target: f64 = s.get("target_cosine")?;
    let out = PathBuf::from(s.raw("out_dir")?);
    let matrix = gen_anisotropic_embeddings(s.get("items")?, s.get("dim")?, target, seed)?;
    let gen = SequenceGenConfig {
        users: s.get("users")?,
        mean_len: s.get("mean_len")?,
        beta: s.get("beta")?,
        gamma: s.get("gamma")?,
        user_norm: s.get("user_norm")?,
        seed,
    };
    let seqs = gen_sequences(&matrix, &gen)?;
    let mean_cosine = mean_pairwise_cosine(&matrix)?;

    create_dir(&out)?;
    echo_config(&out, &s)?;
    let file = EmbeddingFile {
        tokens: seqs.item_tokens.clone(),
        matrix,
    };
    write(&out.join(EMBEDDINGS_FILE), &file.to_text())?;
    write(&out.join(SEQUENCES_FILE), &seqs.to_text())?;
    write(&out.join(ID_MAP_FILE), &seqs.id_map_text())?;
    let manifest = format_key_values(&[
        ("items", file.item_count().to_string()),
        ("dim", file.dim().to_string()),
        ("users", seqs.users.len().to_string()),
        ("interactions", seqs.interaction_count().to_string()),
        ("seed", seed.to_string()),
        ("target_cosine", target.to_string()),
        ("mean_cosine", mean_cosine.to_string()),
        ("embeddings", EMBEDDINGS_FILE.into()),
        ("sequences", SEQUENCES_FILE.into()),
        ("id_map", ID_MAP_FILE.into()),
    ]);
    write(&out.join(MANIFEST_FILE), &manifest)?;
    println!("wrote {} (mean cosine {mean_cosine:.4})", out.display());
    Ok(())
}
