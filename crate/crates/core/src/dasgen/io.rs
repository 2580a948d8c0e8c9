use std::fs;
use std::path::Path;

use super::dataset::DatasetManifest;
use super::WaterfallPlot;
use crate::error::{ensure, Error, Result};

pub const WFP_MAGIC: &[u8; 4] = b"WFP1";
pub const MANIFEST_FILE: &str = "manifest.toml";

const HEADER_LEN: usize = 20;

pub fn encode_waterfall(w: &WaterfallPlot) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * w.values.len());
    out.extend_from_slice(WFP_MAGIC);
    out.extend_from_slice(&(w.channels as u32).to_le_bytes());
    out.extend_from_slice(&(w.samples as u32).to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&w.label.map_or(-1i32, |l| l as i32).to_le_bytes());
    for v in &w.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_waterfall(bytes: &[u8], path: &Path) -> Result<WaterfallPlot> {
    let bad = |msg: String| Error::file(path, msg);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != WFP_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let channels = u32::from_le_bytes(word(4)) as usize;
    let samples = u32::from_le_bytes(word(8)) as usize;
    let sample_rate = f32::from_le_bytes(word(12));
    let label = i32::from_le_bytes(word(16));
    let n = channels
        .checked_mul(samples)
        .ok_or_else(|| bad("C·S overflows".into()))?;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, expected {expected} for {channels}×{samples}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let label = match label {
        -1 => None,
        l if l >= 0 => Some(l as usize),
        l => return Err(bad(format!("invalid label {l}"))),
    };
    WaterfallPlot::new(channels, samples, sample_rate, values, label)
        .map_err(|e| bad(e.to_string()))
}

pub fn write_waterfall(path: &Path, w: &WaterfallPlot) -> Result<()> {
    fs::write(path, encode_waterfall(w)).map_err(|e| Error::io(path, e))
}

pub fn read_waterfall(path: &Path) -> Result<WaterfallPlot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_waterfall(&bytes, path)
}

/// Writes one file per sample, then the manifest.
pub fn write_dataset(manifest: &DatasetManifest, samples: &[WaterfallPlot], dir: &Path) -> Result<()> {
    manifest.validate()?;
    ensure!(
        manifest.entries.len() == samples.len(),
        Contract,
        "manifest lists {} samples, {} given",
        manifest.entries.len(),
        samples.len()
    );
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, w) in manifest.entries.iter().zip(samples) {
        write_waterfall(&dir.join(&entry.file), w)?;
    }
    let text = toml::to_string(manifest).map_err(|e| Error::Contract(format!("manifest encoding: {e}")))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<WaterfallPlot>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::file(&path, e.to_string()))?;
    manifest.validate()?;
    let on_disk = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "wfp"))
        .count();
    for entry in &manifest.entries {
        let p = dir.join(&entry.file);
        if !p.is_file() {
            return Err(Error::file(
                p,
                format!(
                    "listed in manifest but missing ({} samples listed, {on_disk} files present)",
                    manifest.entries.len()
                ),
            ));
        }
    }
    ensure!(
        on_disk == manifest.entries.len(),
        Data,
        "{}: manifest lists {} samples but {on_disk} sample files are present",
        dir.display(),
        manifest.entries.len()
    );
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let p = dir.join(&entry.file);
        let w = read_waterfall(&p)?;
        if w.label != Some(entry.label) {
            return Err(Error::file(
                p,
                format!("label {:?} disagrees with manifest label {}", w.label, entry.label),
            ));
        }
        samples.push(w);
    }
    Ok((manifest, samples))
}
