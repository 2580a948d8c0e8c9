use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::Reader;
use crate::error::{ensure, Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{NdArray, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Stage1Video,
    Stage2Waterfall,
    Scratch,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Stage1Video => "stage1-video",
            Stage::Stage2Waterfall => "stage2-waterfall",
            Stage::Scratch => "scratch",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage1-video" => Ok(Stage::Stage1Video),
            "stage2-waterfall" => Ok(Stage::Stage2Waterfall),
            "scratch" => Ok(Stage::Scratch),
            _ => Err(Error::Contract(format!(
                "unknown stage '{s}' (expected stage1-video, stage2-waterfall or scratch)"
            ))),
        }
    }
}

/// Metadata trailer. Mask and shuffle streams are pure functions of
/// (`seed`, epoch, sample), so `seed` and `epoch` are the full RNG state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub stage: Stage,
    pub epoch: usize,
    pub seed: String,
    pub model: ModelConfig,
}

impl CheckpointMeta {
    pub fn new(stage: Stage, epoch: usize, seed: u64, model: ModelConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            stage,
            epoch,
            seed: seed.to_string(),
            model,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<(String, NdArray<f32>)>,
    pub meta: CheckpointMeta,
}

pub fn encode_checkpoint(store: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        ensure!(name.len() <= u16::MAX as usize, Contract, "parameter name too long");
        ensure!(p.value.rank() <= u8::MAX as usize, Contract, "rank too large");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let text = toml::to_string(meta).map_err(|e| Error::Contract(format!("checkpoint metadata: {e}")))?;
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::file(path, msg);
    let mut r = Reader::new(bytes);
    let magic = r.take(4).map_err(bad)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = r.u32().map_err(bad)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32().map_err(bad)? as usize;
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = {
            let b = r.take(2).map_err(bad)?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        };
        let name = String::from_utf8(r.take(len).map_err(bad)?.to_vec())
            .map_err(|_| bad("array name is not UTF-8".into()))?;
        let rank = r.take(1).map_err(bad)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().map_err(bad)? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.f32s(n).map_err(bad)?;
        arrays.push((name, NdArray::from_vec(&shape, data)?));
    }
    let len = r.u32().map_err(bad)? as usize;
    let text = std::str::from_utf8(r.take(len).map_err(bad)?).map_err(|_| bad("metadata is not UTF-8".into()))?;
    let meta: CheckpointMeta = toml::from_str(text).map_err(|e| bad(format!("metadata: {e}")))?;
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { arrays, meta })
}

pub fn save_checkpoint(store: &ParamStore<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(store, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// Every parameter must be present with the same shape, and nothing extra.
    Strict,
    /// Load what matches, keep the fresh initialization for the rest.
    Permissive,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    /// Parameters overwritten from the checkpoint.
    pub loaded: Vec<String>,
    /// Checkpoint arrays not used.
    pub skipped: Vec<String>,
    /// Parameters left at their initial values.
    pub reinitialized: Vec<String>,
}

/// Copies matching arrays of `ckpt` into `store`.
pub fn load_into(ckpt: &Checkpoint, store: &mut ParamStore<f32>, strictness: Strictness) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut used = vec![false; ckpt.arrays.len()];
    let mut updates = Vec::new();
    for (id, p) in store.iter() {
        match ckpt.arrays.iter().position(|(n, _)| *n == p.name) {
            Some(k) if ckpt.arrays[k].1.shape() == p.value.shape() => {
                used[k] = true;
                updates.push((id, k));
                report.loaded.push(p.name.clone());
            }
            Some(k) => {
                if strictness == Strictness::Strict {
                    return Err(Error::Transfer(format!(
                        "'{}' has shape {:?} in the checkpoint but {:?} in the model",
                        p.name,
                        ckpt.arrays[k].1.shape(),
                        p.value.shape()
                    )));
                }
                report.reinitialized.push(p.name.clone());
            }
            None => {
                if strictness == Strictness::Strict {
                    return Err(Error::Transfer(format!("'{}' missing from the checkpoint", p.name)));
                }
                report.reinitialized.push(p.name.clone());
            }
        }
    }
    for (k, (name, _)) in ckpt.arrays.iter().enumerate() {
        if !used[k] {
            if strictness == Strictness::Strict {
                return Err(Error::Transfer(format!("checkpoint array '{name}' has no matching parameter")));
            }
            report.skipped.push(name.clone());
        }
    }
    for (id, k) in updates {
        store.get_mut(id).value = ckpt.arrays[k].1.clone();
    }
    Ok(report)
}

pub fn load_checkpoint(path: &Path, store: &mut ParamStore<f32>, strictness: Strictness) -> Result<(LoadReport, CheckpointMeta)> {
    let ckpt = read_checkpoint(path)?;
    let report = load_into(&ckpt, store, strictness)?;
    Ok((report, ckpt.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaeModel;

    fn model(tokens: usize, seed: u64) -> MaeModel {
        MaeModel::new(ModelConfig::tiny([2, 4, 4], 1, tokens), seed).unwrap()
    }

    #[test]
    fn roundtrip_bitwise() {
        let m = model(8, 1);
        let meta = CheckpointMeta::new(Stage::Scratch, 3, u64::MAX, m.config.clone());
        let bytes = encode_checkpoint(&m.store, &meta).unwrap();
        let ck = decode_checkpoint(&bytes, Path::new("m.dmck")).unwrap();
        assert_eq!(ck.meta, meta);
        let mut other = model(8, 2);
        let rep = load_into(&ck, &mut other.store, Strictness::Strict).unwrap();
        assert_eq!(rep.loaded.len(), m.store.len());
        for ((_, a), (_, b)) in m.store.iter().zip(other.store.iter()) {
            let bits = |x: &NdArray<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn token_mismatch_reinitializes_positions() {
        let src = model(8, 1);
        let meta = CheckpointMeta::new(Stage::Stage1Video, 1, 0, src.config.clone());
        let ck = decode_checkpoint(&encode_checkpoint(&src.store, &meta).unwrap(), Path::new("x")).unwrap();
        let mut dst = model(12, 2);
        let before = dst.store.value(dst.encoder.pos).clone();
        let rep = load_into(&ck, &mut dst.store, Strictness::Permissive).unwrap();
        assert_eq!(rep.reinitialized, vec!["enc.pos", "dec.pos"]);
        assert_eq!(rep.skipped, vec!["enc.pos", "dec.pos"]);
        assert_eq!(rep.loaded.len(), dst.store.len() - 2);
        assert_eq!(dst.store.value(dst.encoder.pos), &before);
        let e = load_into(&ck, &mut dst.store, Strictness::Strict).unwrap_err();
        assert!(matches!(e, Error::Transfer(ref s) if s.contains("enc.pos")), "{e}");
    }

    #[test]
    fn corrupt_files() {
        let m = model(4, 1);
        let meta = CheckpointMeta::new(Stage::Scratch, 0, 0, m.config.clone());
        let bytes = encode_checkpoint(&m.store, &meta).unwrap();
        for cut in [0, 3, 11, bytes.len() / 2, bytes.len() - 1] {
            let e = decode_checkpoint(&bytes[..cut], Path::new("t")).unwrap_err();
            assert!(e.is_data(), "{e}");
        }
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(decode_checkpoint(&b, Path::new("v")).unwrap_err().is_data());
        b = bytes;
        b[0] = b'X';
        assert!(decode_checkpoint(&b, Path::new("v")).unwrap_err().is_data());
    }
}
