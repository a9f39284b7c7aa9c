//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DNLUCKPT"  u32 version
//! u32 meta_len  meta_len bytes of JSON metadata
//! u32 tensor_count
//! per tensor: u32 name_len, name bytes, u32 ndim, ndim x u32 dims, f32 payload (row-major)
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::EpochMetrics;
use crate::nlu::{NluConfig, NluModel};
use crate::params::{ParamStore, Tensor};
use crate::rewards::{LmConfig, LstmLm};
use crate::ssg::{SsgConfig, SsgModel};

pub const MAGIC: &[u8; 8] = b"DNLUCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `nlu`, `ssg` or `lm`.
    pub component: String,
    pub config: serde_json::Value,
    pub vocab_hash: String,
    pub epoch: usize,
    pub metrics: Option<EpochMetrics>,
}

pub fn save(path: impl AsRef<Path>, meta: &CheckpointMeta, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(64 + 4 * store.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_u32(&mut buf, json.len());
    buf.extend_from_slice(&json);
    put_u32(&mut buf, store.len());
    for (_, name, t) in store.iter() {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, 2);
        put_u32(&mut buf, t.rows);
        put_u32(&mut buf, t.cols);
        for &x in &t.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn put_u32(buf: &mut Vec<u8>, n: usize) {
    buf.extend_from_slice(&(n as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Reads metadata and named tensors.
pub fn load(path: impl AsRef<Path>) -> Result<(CheckpointMeta, Vec<(String, Tensor)>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = r.u32()?;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [] => (1, 1),
            [a] => (a, 1),
            [a, b] => (a, b),
            _ => return Err(Error::Checkpoint(format!("{name}: {ndim}-d tensors are not supported"))),
        };
        let payload = r.take(4 * rows * cols)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((meta, tensors))
}

/// Copies tensors into `store` by name. Every parameter must be present with
/// the same shape.
pub fn restore(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            store.len(),
            tensors.len()
        )));
    }
    for (name, t) in tensors {
        let id = store.id(&name).ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        let dst = store.get_mut(id);
        if (dst.rows, dst.cols) != (t.rows, t.cols) {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {}x{} does not match {}x{}",
                t.rows, t.cols, dst.rows, dst.cols
            )));
        }
        *dst = t;
    }
    Ok(())
}

fn meta<C: Serialize>(component: &str, config: &C, vocab: &Vocabulary, epoch: usize, metrics: Option<EpochMetrics>) -> CheckpointMeta {
    CheckpointMeta {
        component: component.into(),
        config: serde_json::to_value(config).expect("config serializes"),
        vocab_hash: vocab.hash(),
        epoch,
        metrics,
    }
}

fn open<C: for<'de> Deserialize<'de>>(path: &Path, component: &str, vocab: &Vocabulary) -> Result<(C, Vec<(String, Tensor)>)> {
    let (m, tensors) = load(path)?;
    if m.component != component {
        return Err(Error::Checkpoint(format!("expected a {component} checkpoint, found {}", m.component)));
    }
    if m.vocab_hash != vocab.hash() {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let config = serde_json::from_value(m.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((config, tensors))
}

pub fn save_nlu(path: impl AsRef<Path>, model: &NluModel, epoch: usize, metrics: Option<EpochMetrics>) -> Result<()> {
    save(path, &meta("nlu", &model.config, &model.vocab, epoch, metrics), &model.params)
}

pub fn load_nlu(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<NluModel> {
    let (config, tensors): (NluConfig, _) = open(path.as_ref(), "nlu", &vocab)?;
    let mut m = NluModel::new(config, vocab, 0);
    restore(&mut m.params, tensors)?;
    Ok(m)
}

pub fn save_ssg(path: impl AsRef<Path>, model: &SsgModel, epoch: usize) -> Result<()> {
    save(path, &meta("ssg", &model.config, &model.vocab, epoch, None), &model.params)
}

pub fn load_ssg(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<SsgModel> {
    let (config, tensors): (SsgConfig, _) = open(path.as_ref(), "ssg", &vocab)?;
    let mut m = SsgModel::new(config, vocab, 0);
    restore(&mut m.params, tensors)?;
    Ok(m)
}

pub fn save_lm(path: impl AsRef<Path>, model: &LstmLm) -> Result<()> {
    save(path, &meta("lm", &model.config, &model.vocab, 0, None), &model.params)
}

pub fn load_lm(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<LstmLm> {
    let (config, tensors): (LmConfig, _) = open(path.as_ref(), "lm", &vocab)?;
    let mut m = LstmLm::new(config, vocab, 0);
    restore(&mut m.params, tensors)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::TaggerMode;
    use crate::testutil::{toy_examples, toy_vocab};

    fn tiny() -> NluModel {
        let config = NluConfig {
            mode: TaggerMode::Crf,
            embed_dim: 4,
            hidden: 3,
            tag_embed_dim: 2,
            dropout: 0.0,
        };
        NluModel::new(config, toy_vocab(), 9)
    }

    #[test]
    fn nlu_round_trip_preserves_f32_values_and_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = tiny();
        save_nlu(&path, &m, 3, None).unwrap();
        let back = load_nlu(&path, m.vocab.clone()).unwrap();
        assert_eq!(back.config, m.config);
        for ((_, _, a), (_, _, b)) in m.params.iter().zip(back.params.iter()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        for e in toy_examples() {
            assert_eq!(m.decode_top1(&e.tokens).tags, back.decode_top1(&e.tokens).tags);
        }
        let (meta, _) = load(&path).unwrap();
        assert_eq!((meta.component.as_str(), meta.epoch), ("nlu", 3));
    }

    #[test]
    fn header_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 2, vec![1.0, -2.0]));
        let meta = CheckpointMeta {
            component: "x".into(),
            config: serde_json::Value::Null,
            vocab_hash: String::new(),
            epoch: 0,
            metrics: None,
        };
        save(&path, &meta, &store).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 8..bytes.len() - 4], &1.0f32.to_le_bytes());
        let (_, t) = load(&path).unwrap();
        assert_eq!(t, vec![("w".to_string(), Tensor::from_vec(1, 2, vec![1.0, -2.0]))]);
    }

    #[test]
    fn rejects_corruption_and_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = tiny();
        save_nlu(&path, &m, 0, None).unwrap();
        assert!(load_ssg(&path, m.vocab.clone()).is_err());
        let other = Arc::new(Vocabulary::from_parts(["a".to_string()], ["q".to_string()], ["X".to_string()]));
        assert!(matches!(load_nlu(&path, other), Err(Error::Checkpoint(_))));
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());
        fs::write(&path, b"garbage!garbage").unwrap();
        assert!(load(&path).is_err());
    }
}
