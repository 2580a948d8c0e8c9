//! Binary cache of preprocessed spectrograms, so training can skip the STFT.
//!
//! Layout (little-endian): magic, version, sample count, window, hop, nfft,
//! the four tensor dims, format and normalization codes, then per sample a
//! label (`u32::MAX` when unlabelled) followed by its `f32` values.

use std::fs;
use std::path::Path;

use super::bytes::Reader;
use crate::dasgen::WaterfallPlot;
use crate::error::{ensure, Error, Result};
use crate::stft::{spectrogram, Normalization, SpectroTensor, StftConfig, StftFormat};

pub const CACHE_MAGIC: &[u8; 4] = b"DSPC";
pub const CACHE_VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectroCache {
    pub stft: StftConfig,
    pub labels: Vec<Option<usize>>,
    pub tensors: Vec<SpectroTensor>,
}

impl SpectroCache {
    /// Transforms every waterfall under `stft`.
    pub fn build(samples: &[WaterfallPlot], stft: &StftConfig) -> Result<Self> {
        Ok(Self {
            stft: *stft,
            labels: samples.iter().map(|s| s.label).collect(),
            tensors: samples.iter().map(|s| spectrogram(s, stft)).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

fn format_code(f: StftFormat) -> u8 {
    match f {
        StftFormat::Magnitude => 0,
        StftFormat::MagnitudePhase => 1,
        StftFormat::RealImag => 2,
    }
}

fn norm_code(n: Normalization) -> u8 {
    match n {
        Normalization::None => 0,
        Normalization::LogZScore => 1,
    }
}

pub fn encode_spectro_cache(cache: &SpectroCache) -> Result<Vec<u8>> {
    ensure!(cache.labels.len() == cache.tensors.len(), Contract, "{} labels for {} tensors", cache.labels.len(), cache.tensors.len());
    let first = cache.tensors.first();
    let dims = first.map_or([0; 4], |t| t.dims());
    let format = first.map_or(cache.stft.format, |t| t.format);
    let norm = first.map_or(cache.stft.normalization, |t| t.normalization);
    for t in &cache.tensors {
        ensure!(
            t.dims() == dims && t.format == format && t.normalization == norm,
            Contract,
            "cached tensors must share one shape and format"
        );
    }
    let u32_of = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::Contract(format!("{what} {v} does not fit the cache header")));
    let per = dims.iter().product::<usize>();
    let mut out = Vec::with_capacity(48 + cache.len() * (4 + 4 * per));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(cache.len(), "sample count")?.to_le_bytes());
    for v in [cache.stft.window, cache.stft.hop, cache.stft.nfft] {
        out.extend_from_slice(&u32_of(v, "STFT size")?.to_le_bytes());
    }
    for d in dims {
        out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
    }
    out.push(format_code(format));
    out.push(norm_code(norm));
    for (label, t) in cache.labels.iter().zip(&cache.tensors) {
        let l = match label {
            Some(l) => u32_of(*l, "label").and_then(|v| {
                if v == NO_LABEL {
                    Err(Error::Contract("label collides with the unlabelled marker".into()))
                } else {
                    Ok(v)
                }
            })?,
            None => NO_LABEL,
        };
        out.extend_from_slice(&l.to_le_bytes());
        t.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(out)
}

pub fn decode_spectro_cache(bytes: &[u8], path: &Path) -> Result<SpectroCache> {
    let bad = |msg: String| Error::file(path, msg);
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(bad)? != CACHE_MAGIC {
        return Err(bad("not a spectrogram cache (bad magic)".into()));
    }
    let version = r.u32().map_err(bad)?;
    if version != CACHE_VERSION {
        return Err(bad(format!("unsupported cache version {version}")));
    }
    let mut next = || r.u32().map(|v| v as usize);
    let count = next().map_err(bad)?;
    let (window, hop, nfft) = (next().map_err(bad)?, next().map_err(bad)?, next().map_err(bad)?);
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = next().map_err(bad)?;
    }
    let codes = r.take(2).map_err(bad)?;
    let format = match codes[0] {
        0 => StftFormat::Magnitude,
        1 => StftFormat::MagnitudePhase,
        2 => StftFormat::RealImag,
        c => return Err(bad(format!("unknown format code {c}"))),
    };
    let normalization = match codes[1] {
        0 => Normalization::None,
        1 => Normalization::LogZScore,
        c => return Err(bad(format!("unknown normalization code {c}"))),
    };
    let stft = StftConfig {
        window,
        hop,
        nfft,
        format,
        normalization,
    };
    stft.validate().map_err(|e| bad(format!("header: {e}")))?;
    if count > 0 && (dims[1] == 0 || dims[2] != stft.bins() || dims[3] != format.depth()) {
        return Err(bad(format!("tensor dims {dims:?} disagree with the STFT header")));
    }
    let per = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("dims overflow".into()))?;
    let mut labels = Vec::with_capacity(count.min(1 << 16));
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let l = r.u32().map_err(bad)?;
        labels.push((l != NO_LABEL).then_some(l as usize));
        let values = r.f32s(per).map_err(bad)?;
        tensors.push(SpectroTensor::new(dims, format, normalization, values)?);
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(SpectroCache { stft, labels, tensors })
}

pub fn write_spectro_cache(cache: &SpectroCache, path: &Path) -> Result<()> {
    let bytes = encode_spectro_cache(cache)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_spectro_cache(path: &Path) -> Result<SpectroCache> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spectro_cache(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cfg: &StftConfig, label: Option<usize>, phase: f32) -> SpectroTensor {
        let values = (0..3 * 200).map(|i| (i as f32 * 0.37 + phase).sin()).collect();
        spectrogram(&WaterfallPlot::new(3, 200, 100.0, values, label).unwrap(), cfg).unwrap()
    }

    fn cfg(format: StftFormat) -> StftConfig {
        StftConfig {
            window: 16,
            hop: 16,
            nfft: 32,
            format,
            normalization: Normalization::LogZScore,
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        for format in [StftFormat::Magnitude, StftFormat::MagnitudePhase, StftFormat::RealImag] {
            let c = cfg(format);
            let cache = SpectroCache {
                stft: c,
                labels: vec![Some(2), None, Some(0)],
                tensors: vec![sample(&c, Some(2), 0.0), sample(&c, None, 1.0), sample(&c, Some(0), 2.0)],
            };
            let bytes = encode_spectro_cache(&cache).unwrap();
            let back = decode_spectro_cache(&bytes, Path::new("x")).unwrap();
            assert_eq!(back, cache);
            assert_eq!(encode_spectro_cache(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let c = cfg(StftFormat::Magnitude);
        let cache = SpectroCache {
            stft: c,
            labels: vec![Some(1)],
            tensors: vec![sample(&c, Some(1), 0.0)],
        };
        let bytes = encode_spectro_cache(&cache).unwrap();
        let p = Path::new("x");
        assert!(decode_spectro_cache(&bytes[..bytes.len() - 1], p).unwrap_err().is_data());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_spectro_cache(&extra, p).unwrap_err().is_data());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_spectro_cache(&magic, p).unwrap_err().is_data());
        let mut fmt = bytes;
        fmt[40] = 9;
        assert!(decode_spectro_cache(&fmt, p).unwrap_err().is_data());
    }

    #[test]
    fn mixed_shapes_refused() {
        let c = cfg(StftFormat::Magnitude);
        let other = cfg(StftFormat::RealImag);
        let cache = SpectroCache {
            stft: c,
            labels: vec![None, None],
            tensors: vec![sample(&c, None, 0.0), sample(&other, None, 0.0)],
        };
        assert!(encode_spectro_cache(&cache).is_err());
    }
}
