use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::ModelParams;
use crate::model::{EncoderVariant, TrainConfig};
use crate::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSEQCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn header(params: &ModelParams) -> String {
    let v = &params.variant;
    let d = &params.dims;
    let pairs = [
        ("variant", v.kind.to_string()),
        ("combine", v.combine.to_string()),
        ("head_depth", v.head_depth.to_string()),
        ("method", v.method.to_string()),
        ("relaxed_groups", v.relaxed_groups.to_string()),
        ("epsilon_bits", format!("{:016x}", v.epsilon.to_bits())),
        ("d_model", d.d_model.to_string()),
        ("blocks", params.blocks().to_string()),
        ("heads", d.heads.to_string()),
        ("max_seq_len", d.max_seq_len.to_string()),
        ("item_count", d.item_count.to_string()),
        ("text_dim", d.text_dim.to_string()),
    ];
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn write_floats(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Header, frozen raw text, then every trainable tensor in declaration order.
pub fn write_checkpoint(params: &ModelParams, mut w: impl Write) -> std::io::Result<()> {
    let header = header(params);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    if let Some(text) = &params.text {
        write_floats(&mut w, text.raw.as_slice())?;
    }
    for t in params.trainable.tensors() {
        write_floats(&mut w, t)?;
    }
    w.flush()
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(format!("truncated checkpoint while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn floats(&mut self, out: &mut [f64], what: &str) -> Result<()> {
        let raw = self.take(out.len() * 8, what)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

fn field<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = map.get(key).ok_or_else(|| format_err(format!("header lacks {key}")))?;
    raw.parse()
        .map_err(|_| format_err(format!("bad header value {key}={raw}")))
}

/// Inverse of [`write_checkpoint`]; whitened inputs are re-derived from the stored raw text.
pub fn read_checkpoint(mut r: impl Read) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| format_err(format!("read failed: {e}")))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(format_err("not a checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = c.u32("header length")? as usize;
    let header = std::str::from_utf8(c.take(len, "header")?).map_err(|_| format_err("header is not UTF-8"))?;
    let map: BTreeMap<&str, &str> = header.lines().filter_map(|l| l.split_once('=')).collect();

    let mut variant = EncoderVariant::new(field::<String>(&map, "variant")?.parse()?);
    variant.combine = field::<String>(&map, "combine")?.parse()?;
    variant.head_depth = field(&map, "head_depth")?;
    variant.method = field::<String>(&map, "method")?.parse()?;
    variant.relaxed_groups = field(&map, "relaxed_groups")?;
    let bits = u64::from_str_radix(field::<String>(&map, "epsilon_bits")?.as_str(), 16)
        .map_err(|_| format_err("bad epsilon_bits"))?;
    variant.epsilon = f64::from_bits(bits);
    let config = TrainConfig {
        d_model: field(&map, "d_model")?,
        blocks: field(&map, "blocks")?,
        heads: field(&map, "heads")?,
        max_seq_len: field(&map, "max_seq_len")?,
        ..TrainConfig::default()
    };
    let item_count: usize = field(&map, "item_count")?;
    let text_dim: usize = field(&map, "text_dim")?;

    let text = if text_dim > 0 {
        let mut raw = vec![0.0; text_dim * item_count];
        c.floats(&mut raw, "text embeddings")?;
        Some(Matrix::from_vec(text_dim, item_count, raw).map_err(|e| format_err(e.to_string()))?)
    } else {
        None
    };
    let mut params = ModelParams::init(variant, &config, item_count, text.as_ref(), 0)?;
    for (i, t) in params.trainable.tensors_mut().into_iter().enumerate() {
        c.floats(t, &format!("tensor {i}"))?;
    }
    if c.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Combine, VariantKind};

    fn text() -> Matrix {
        Matrix::from_vec(4, 9, (0..36).map(|v| ((v * 29 % 23) as f64).sin() * 1.7).collect()).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            d_model: 8,
            heads: 2,
            blocks: 2,
            max_seq_len: 5,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_variant() {
        for kind in VariantKind::ALL {
            for combine in [Combine::Sum, Combine::Concat] {
                let mut v = EncoderVariant::new(kind);
                v.relaxed_groups = 2;
                v.combine = combine;
                v.epsilon = 3.3e-5;
                let p = ModelParams::init(v, &config(), 9, Some(&text()), 17).unwrap();
                let mut bytes = Vec::new();
                write_checkpoint(&p, &mut bytes).unwrap();
                let back = read_checkpoint(&bytes[..]).unwrap();
                assert_eq!(back, p);
                let mut again = Vec::new();
                write_checkpoint(&back, &mut again).unwrap();
                assert_eq!(again, bytes);
            }
        }
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let p = ModelParams::init(EncoderVariant::new(VariantKind::Id), &config(), 9, None, 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        let err = read_checkpoint(&wrong[..]).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(read_checkpoint(&b"nonsense"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = ModelParams::init(EncoderVariant::new(VariantKind::Whiten), &config(), 9, Some(&text()), 4).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let missing = load_checkpoint(dir.path().join("absent")).unwrap_err();
        assert!(missing.to_string().contains("absent"));
    }
}
