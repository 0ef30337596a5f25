use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use whitenseq::data::{load_embeddings, EmbeddingFile};
use whitenseq::Matrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_whitenseq"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn whitenseq")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn key_values(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn value(path: &Path, key: &str) -> String {
    key_values(path)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
        .1
}

fn csv_column(path: &Path, col: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

fn small_synth(dir: &Path, name: &str, users: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "synth",
        "--items",
        "40",
        "--users",
        users,
        "--dim",
        "8",
        "--seed",
        "5",
        "--out-dir",
        name,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(name)
}

#[test]
fn synth_defaults_hit_target_cosine() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--seed", "2", "--out-dir", "data"]);
    let data = dir.path().join("data");
    let cos: f64 = value(&data.join("manifest.txt"), "mean_cosine").parse().unwrap();
    assert!((0.78..=0.82).contains(&cos), "{cos}");
    assert_eq!(value(&data.join("manifest.txt"), "items"), "500");
    assert_eq!(value(&data.join("config.txt"), "users"), "2000");
    let id_map = fs::read_to_string(data.join("id_map.tsv")).unwrap();
    assert_eq!(id_map.lines().count(), 500);
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_synth(dir.path(), "a", "120", &[]);
    let b = small_synth(dir.path(), "b", "120", &[]);
    for f in ["embeddings.txt", "sequences.txt", "id_map.tsv", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unwritable_output_fails_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let target = blocker.join("out");
    let out = run(
        dir.path(),
        &[
            "synth",
            "--items",
            "20",
            "--users",
            "10",
            "--dim",
            "4",
            "--seed",
            "1",
            "--out-dir",
            target.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(target.to_str().unwrap()));
}

#[test]
fn missing_seed_and_unknown_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = run(
        dir.path(),
        &["synth", "--seed", "1", "--out-dir", "x", "--set", "colour=red"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn diagnose_whitened_input_has_flat_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let emb = data.join("embeddings.txt");
    ok(
        dir.path(),
        &[
            "whiten",
            "--embeddings",
            emb.to_str().unwrap(),
            "--epsilon",
            "0",
            "--out",
            "w/z.txt",
        ],
    );
    ok(
        dir.path(),
        &["diagnose", "--embeddings", "w/z.txt", "--out-dir", "diag", "--svg"],
    );
    let spectrum = csv_column(&dir.path().join("diag/spectrum.csv"), 1);
    assert_eq!(spectrum.len(), 8);
    assert!(spectrum.iter().all(|&v| v >= 0.99), "{spectrum:?}");
    assert!(dir.path().join("diag/spectrum.svg").exists());
    assert!(dir.path().join("diag/cdf.svg").exists());
    assert!(dir.path().join("diag/config.txt").exists());
}

#[test]
fn diagnose_csvs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let emb = data.join("embeddings.txt");
    ok(
        dir.path(),
        &["diagnose", "--embeddings", emb.to_str().unwrap(), "--out-dir", "diag"],
    );
    let x = load_embeddings(&emb).unwrap().matrix;
    let expected = whitenseq::diagnostics::singular_spectrum(&x)
        .unwrap()
        .normalized_singular_values;
    assert_eq!(csv_column(&dir.path().join("diag/spectrum.csv"), 1), expected);
    let grid = whitenseq::diagnostics::default_cdf_grid(201);
    let cdf = whitenseq::diagnostics::cosine_cdf(&x, &grid).unwrap();
    let fractions: Vec<f64> = cdf.iter().map(|p| p.1).collect();
    assert_eq!(csv_column(&dir.path().join("diag/cdf.csv"), 1), fractions);
    let cos: f64 = value(&dir.path().join("diag/diagnostics.txt"), "mean_cosine")
        .parse()
        .unwrap();
    assert_eq!(cos, whitenseq::diagnostics::mean_pairwise_cosine(&x).unwrap());
}

#[test]
fn diagnose_orthogonal_pair() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("e.txt"), "#embeddings v1 2 2\na\t1\t0\nb\t0\t1\n").unwrap();
    ok(dir.path(), &["diagnose", "--embeddings", "e.txt", "--out-dir", "d"]);
    let cos: f64 = value(&dir.path().join("d/diagnostics.txt"), "mean_cosine")
        .parse()
        .unwrap();
    assert_eq!(cos, 0.0);
}

#[test]
fn diagnose_reports_parse_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("e.txt"), "#embeddings v1 2 2\na\t1\t0\nb\t0\tx\n").unwrap();
    let out = run(dir.path(), &["diagnose", "--embeddings", "e.txt", "--out-dir", "d"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("e.txt:3"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn whitened(dir: &Path, emb: &Path, args: &[&str], out: &str) -> Matrix {
    let mut all = vec!["whiten", "--embeddings", emb.to_str().unwrap(), "--out", out];
    all.extend_from_slice(args);
    ok(dir, &all);
    let file: EmbeddingFile = load_embeddings(dir.join(out)).unwrap();
    file.matrix
}

#[test]
fn whiten_identity_and_group_limit() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let emb = data.join("embeddings.txt");
    whitened(
        dir.path(),
        &emb,
        &["--method", "zca", "--groups", "1", "--epsilon", "0"],
        "z.txt",
    );
    let dev: f64 = value(&dir.path().join("z.txt.stats.txt"), "max_deviation")
        .parse()
        .unwrap();
    assert!(dev <= 1e-8, "{dev}");
    assert_eq!(value(&dir.path().join("z.txt.config.txt"), "method"), "zca");

    let zca = whitened(dir.path(), &emb, &["--method", "zca", "--groups", "8"], "zg.txt");
    let bn = whitened(dir.path(), &emb, &["--method", "bn"], "bn.txt");
    assert!(zca.max_abs_diff(&bn) <= 1e-10);
}

#[test]
fn whiten_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let emb = data.join("embeddings.txt");
    let out = run(
        dir.path(),
        &[
            "whiten",
            "--embeddings",
            emb.to_str().unwrap(),
            "--method",
            "svd",
            "--out",
            "z.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        dir.path(),
        &[
            "whiten",
            "--embeddings",
            emb.to_str().unwrap(),
            "--groups",
            "3",
            "--out",
            "z.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1, 2, 4, 8"));
}

fn write_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    let text = format!(
        "# small run\nembeddings = {}\nsequences = {}\nd_model = 8\nblocks = 1\nheads = 1\ngroups = 2\nbatch_size = 32\nmax_seq_len = 10\n{extra}",
        data.join("embeddings.txt").display(),
        data.join("sequences.txt").display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_with_zero_learning_rate_keeps_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let conf = write_config(dir.path(), &data, "learning_rate = 0\ndropout = 0\nmax_epochs = 3\n");
    ok(
        dir.path(),
        &[
            "train",
            "--config",
            conf.to_str().unwrap(),
            "--seed",
            "1",
            "--out-dir",
            "r",
        ],
    );
    let loss = csv_column(&dir.path().join("r/history.csv"), 1);
    assert_eq!(loss.len(), 3);
    assert!(loss.iter().all(|l| (l - loss[0]).abs() <= 1e-12), "{loss:?}");
}

#[test]
fn train_and_eval_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let conf = write_config(dir.path(), &data, "max_epochs = 3\n");
    for name in ["a", "b"] {
        ok(
            dir.path(),
            &[
                "train",
                "--config",
                conf.to_str().unwrap(),
                "--seed",
                "4",
                "--out-dir",
                name,
            ],
        );
        ok(dir.path(), &["eval", "--run-dir", name]);
    }
    for f in ["history.csv", "checkpoint.bin", "eval_test.txt"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let first = fs::read(dir.path().join("a/eval_test.txt")).unwrap();
    ok(dir.path(), &["eval", "--run-dir", "a"]);
    assert_eq!(fs::read(dir.path().join("a/eval_test.txt")).unwrap(), first);
    assert!(dir.path().join("a/timing.txt").exists());
    assert_eq!(value(&dir.path().join("a/config.txt"), "seed"), "4");
}

#[test]
fn whitened_model_beats_popularity_on_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "400", &["--set", "beta=15"]);
    let conf = write_config(
        dir.path(),
        &data,
        "variant = WHITEN\ndropout = 0\nlearning_rate = 0.005\nmax_epochs = 30\npatience = 30\nd_model = 16\n",
    );
    ok(
        dir.path(),
        &[
            "train",
            "--config",
            conf.to_str().unwrap(),
            "--seed",
            "2",
            "--out-dir",
            "r",
        ],
    );
    ok(
        dir.path(),
        &[
            "eval",
            "--run-dir",
            "r",
            "--split",
            "validation",
            "--k",
            "20",
            "--baseline",
            "popularity",
            "--out-dir",
            "pop",
        ],
    );
    let val = csv_column(&dir.path().join("r/history.csv"), 2);
    let pop: f64 = value(&dir.path().join("pop/eval_validation.txt"), "ndcg@20")
        .parse()
        .unwrap();
    assert!(*val.last().unwrap() > pop, "model {:?} vs popularity {pop}", val.last());
}

#[test]
fn eval_rejects_other_checkpoint_versions() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let conf = write_config(dir.path(), &data, "max_epochs = 1\nvariant = ID\n");
    ok(
        dir.path(),
        &[
            "train",
            "--config",
            conf.to_str().unwrap(),
            "--seed",
            "1",
            "--out-dir",
            "r",
        ],
    );
    let path = dir.path().join("r/checkpoint.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes[8] = 7;
    fs::write(&path, bytes).unwrap();
    let out = run(dir.path(), &["eval", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
}

#[test]
fn report_merges_runs_and_marks_the_best() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "120", &[]);
    let conf = write_config(dir.path(), &data, "max_epochs = 2\n");
    for (name, variant) in [("id", "ID"), ("text", "TEXT"), ("whiten", "WHITEN")] {
        ok(
            dir.path(),
            &[
                "train",
                "--config",
                conf.to_str().unwrap(),
                "--seed",
                "3",
                "--out-dir",
                name,
                "--set",
                &format!("variant={variant}"),
            ],
        );
        ok(dir.path(), &["eval", "--run-dir", name, "--k", "5,10,20"]);
    }
    ok(dir.path(), &["report", "id", "text", "whiten", "--out", "table.csv"]);
    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    let header: Vec<&str> = lines[0].split(',').collect();
    for col in ["R@5", "R@10", "R@20", "N@5", "N@10", "N@20"] {
        assert!(header.contains(&col), "{col}");
    }
    let rows: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    for (c, name) in header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("R@") || h.starts_with("N@"))
    {
        let vals: Vec<f64> = rows
            .iter()
            .map(|r| r[c].trim_end_matches('*').parse().unwrap())
            .collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (r, v) in rows.iter().zip(&vals) {
            assert_eq!(r[c].ends_with('*'), *v == max, "column {name}");
        }
    }
    assert!(dir.path().join("table.csv.config.txt").exists());
}

#[test]
fn cold_setting_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "data", "300", &[]);
    let conf = write_config(
        dir.path(),
        &data,
        "setting = cold\nmax_epochs = 2\nvariant = WHITEN_PLUS\n",
    );
    ok(
        dir.path(),
        &[
            "train",
            "--config",
            conf.to_str().unwrap(),
            "--seed",
            "1",
            "--out-dir",
            "r",
        ],
    );
    ok(dir.path(), &["eval", "--run-dir", "r"]);
    let r10: f64 = value(&dir.path().join("r/eval_test.txt"), "recall@10").parse().unwrap();
    assert!(r10.is_finite());
}
