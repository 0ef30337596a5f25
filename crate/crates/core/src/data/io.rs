//! Text formats for embeddings, interaction sequences and id maps.
//!
//! ```text
//! #embeddings v1 <item_count> <dim>
//! <item_token>\t<f_0>\t...\t<f_{dim-1}>
//! ```
//!
//! Sequence files hold one user per line, `<user_token>\t<item>,<item>,...`,
//! in chronological order. Id maps are `<item_token>\t<dense_index>` lines.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{five_core, RawSequences, UserSequence};
use crate::error::{Error, Result};
use crate::EmbeddingMatrix;

pub const EMBEDDING_MAGIC: &str = "#embeddings";
pub const EMBEDDING_VERSION: &str = "v1";

/// Parsed embedding file: one token and one column per item, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub tokens: Vec<String>,
    /// `dim × item_count`.
    pub matrix: EmbeddingMatrix,
}

impl EmbeddingFile {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn item_count(&self) -> usize {
        self.matrix.cols()
    }

    /// Keeps the given items (indices into this file), in that order.
    pub fn select(&self, items: &[usize]) -> EmbeddingFile {
        EmbeddingFile {
            tokens: items.iter().map(|&i| self.tokens[i].clone()).collect(),
            matrix: self.matrix.select_columns(items),
        }
    }

    pub fn to_text(&self) -> String {
        let (d, n) = self.matrix.shape();
        let mut out = format!("{EMBEDDING_MAGIC} {EMBEDDING_VERSION} {n} {d}\n");
        for (j, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for i in 0..d {
                let _ = write!(out, "\t{}", self.matrix[(i, j)]);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    parse_embeddings(&read_file(path)?, path)
}

/// Parses embedding text; `origin` is only used in error messages.
pub fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingFile> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != EMBEDDING_MAGIC || fields[1] != EMBEDDING_VERSION {
        return Err(err(
            1,
            format!("expected `{EMBEDDING_MAGIC} {EMBEDDING_VERSION} <items> <dim>` header"),
        ));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| err(1, format!("bad item count {:?}", fields[2])))?;
    let dim: usize = fields[3]
        .parse()
        .map_err(|_| err(1, format!("bad dimension {:?}", fields[3])))?;
    if count == 0 || dim == 0 {
        return Err(err(1, "item count and dimension must be positive".into()));
    }

    let mut tokens = Vec::with_capacity(count);
    let mut seen = HashMap::with_capacity(count);
    let mut data = vec![0.0; dim * count];
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let j = tokens.len();
        if j == count {
            return Err(err(lineno, format!("more than the declared {count} items")));
        }
        let mut parts = line.split('\t');
        let token = parts.next().unwrap_or_default().trim();
        if token.is_empty() {
            return Err(err(lineno, "missing item token".into()));
        }
        if seen.insert(token.to_string(), j).is_some() {
            return Err(err(lineno, format!("duplicate item token {token:?}")));
        }
        let mut k = 0;
        for field in parts {
            if k == dim {
                return Err(err(lineno, format!("row has more than {dim} values")));
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("invalid float {field:?}")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value {field:?}")));
            }
            data[k * count + j] = v;
            k += 1;
        }
        if k != dim {
            return Err(err(lineno, format!("row has {k} values, expected {dim}")));
        }
        tokens.push(token.to_string());
    }
    if tokens.len() != count {
        let last = text.lines().count().max(1);
        return Err(err(last, format!("expected {count} item rows, found {}", tokens.len())));
    }
    let matrix = EmbeddingMatrix::from_vec(dim, count, data)?;
    Ok(EmbeddingFile { tokens, matrix })
}

pub fn load_sequences(path: impl AsRef<Path>, vocabulary: &[String], min_length: usize) -> Result<RawSequences> {
    let path = path.as_ref();
    parse_sequences(&read_file(path)?, path, vocabulary, min_length)
}

/// Parses a sequence file against the item vocabulary (usually the embedding
/// file's tokens), applies iterative `min_length`-core filtering, and
/// re-indexes surviving items densely in vocabulary order.
pub fn parse_sequences(text: &str, origin: &Path, vocabulary: &[String], min_length: usize) -> Result<RawSequences> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut users = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (user, items) = line
            .split_once('\t')
            .ok_or_else(|| err(lineno, "expected `<user>\\t<item>,<item>,...`".into()))?;
        let seq = items
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                index
                    .get(tok)
                    .copied()
                    .ok_or_else(|| err(lineno, format!("unknown item token {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        users.push(UserSequence {
            user: user.trim().to_string(),
            items: seq,
        });
    }
    if users.is_empty() {
        return Err(err(1, "no user sequences".into()));
    }
    Ok(five_core(vocabulary, users, min_length))
}

impl RawSequences {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for u in &self.users {
            out.push_str(&u.user);
            out.push('\t');
            let toks: Vec<&str> = u.items.iter().map(|&i| self.item_tokens[i].as_str()).collect();
            out.push_str(&toks.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }

    /// `<item_token>\t<dense_index>` lines.
    pub fn id_map_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.item_tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn save_id_map(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.id_map_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn parses_small_file() {
        let text = "#embeddings v1 2 3\na\t1.5\t-2e-3\t0\nb\t3\t4.25E2\t-7\n";
        let f = parse_embeddings(text, origin()).unwrap();
        assert_eq!(f.tokens, vec!["a", "b"]);
        // reference parse with plain string splitting
        for (j, line) in text.lines().skip(1).enumerate() {
            let vals: Vec<f64> = line.split('\t').skip(1).map(|s| s.parse().unwrap()).collect();
            assert_eq!(f.matrix.column(j), vals);
        }
    }

    #[test]
    fn rejects_malformed() {
        let cases = [
            ("", 1),
            ("#embeddings v1 2 2\n", 1),
            ("#embeddings v1 1 2\na\t1\tNaN\n", 2),
            ("#embeddings v1 1 2\na\t1\n", 2),
            ("#embeddings v1 1 2\na\t1\t2\t3\n", 2),
            ("#embeddings v1 2 1\na\t1\na\t2\n", 3),
            ("#embeddings v2 1 1\na\t1\n", 1),
            ("#embeddings v1 1 1\na\tinf\n", 2),
        ];
        for (text, line) in cases {
            match parse_embeddings(text, origin()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        let msg = parse_embeddings("#embeddings v1 1 2\nx\t1\tnan\n", origin())
            .unwrap_err()
            .to_string();
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn embedding_text_round_trip() {
        let text = "#embeddings v1 2 2\nx\t0.1\t-3.3333333333333335\ny\t1e-300\t12345.678\n";
        let f = parse_embeddings(text, origin()).unwrap();
        assert_eq!(parse_embeddings(&f.to_text(), origin()).unwrap(), f);
    }

    #[test]
    fn sequences_unknown_token() {
        let vocab: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let err = parse_sequences("u1\ta,b\nu2\ta,zz\n", origin(), &vocab, 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
