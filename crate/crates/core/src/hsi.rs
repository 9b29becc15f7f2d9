//! Hyperspectral cubes on disk and in memory: the HSR container, band-sequential
//! raster import, normalization and training-patch extraction.
//!
//! HSR layout (all integers little-endian):
//!
//! ```text
//! "HSR1" | u32 c | u32 h | u32 w | u8 dtype (0 = f32) | 16 reserved bytes
//! c*h*w f32 values, band-major, row-major within a band
//! [ u32 n | n bytes of UTF-8 metadata ]   optional
//! ```
//!
//! Metadata is `key=value` lines; `sensor_id` and `band_stats`
//! (`p2,p98,min,max` per band, `;`-separated) are understood, other keys are
//! kept verbatim.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const HSR_MAGIC: &[u8; 4] = b"HSR1";
const HSR_HEADER: usize = 4 + 12 + 1 + 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandStats {
    pub p2: f64,
    pub p98: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    /// `[c, h, w]`
    pub data: Tensor<f32>,
    pub sensor_id: Option<String>,
    pub band_stats: Option<Vec<BandStats>>,
    pub extra: BTreeMap<String, String>,
}

impl HsiCube {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::dim("HsiCube", data.shape(), &[0, 0, 0]));
        }
        Ok(HsiCube {
            data,
            sensor_id: None,
            band_stats: None,
            extra: BTreeMap::new(),
        })
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Same metadata, new samples.
    pub fn with_data(&self, data: Tensor<f32>) -> Result<Self> {
        let mut c = HsiCube::new(data)?;
        c.sensor_id = self.sensor_id.clone();
        c.band_stats = self.band_stats.clone();
        c.extra = self.extra.clone();
        Ok(c)
    }

    fn metadata_text(&self) -> String {
        let mut s = String::new();
        if let Some(id) = &self.sensor_id {
            s.push_str(&format!("sensor_id={id}\n"));
        }
        if let Some(stats) = &self.band_stats {
            let items: Vec<String> = stats
                .iter()
                .map(|b| format!("{},{},{},{}", b.p2, b.p98, b.min, b.max))
                .collect();
            s.push_str(&format!("band_stats={}\n", items.join(";")));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    fn apply_metadata(&mut self, text: &str) -> Result<()> {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metadata line without '=': {line:?}")))?;
            match k {
                "sensor_id" => self.sensor_id = Some(v.to_string()),
                "band_stats" => {
                    let stats = v
                        .split(';')
                        .map(|item| {
                            let f: Vec<f64> = item
                                .split(',')
                                .map(|x| x.parse::<f64>())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|_| Error::Format(format!("bad band_stats entry {item:?}")))?;
                            if f.len() != 4 {
                                return Err(Error::Format(format!("bad band_stats entry {item:?}")));
                            }
                            Ok(BandStats { p2: f[0], p98: f[1], min: f[2], max: f[3] })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if stats.len() != self.bands() {
                        return Err(Error::Format(format!(
                            "band_stats has {} entries for {} bands",
                            stats.len(),
                            self.bands()
                        )));
                    }
                    self.band_stats = Some(stats);
                }
                _ => {
                    self.extra.insert(k.to_string(), v.to_string());
                }
            }
        }
        Ok(())
    }

    pub fn to_hsr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HSR_HEADER + 4 * self.data.numel());
        out.extend_from_slice(HSR_MAGIC);
        for d in self.data.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.push(0);
        out.extend_from_slice(&[0u8; 16]);
        for v in self.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let meta = self.metadata_text();
        if !meta.is_empty() {
            out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
            out.extend_from_slice(meta.as_bytes());
        }
        out
    }

    pub fn from_hsr_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != HSR_MAGIC {
            return Err(Error::BadMagic { expected: "HSR1" });
        }
        if bytes.len() < HSR_HEADER {
            return Err(Error::Truncated {
                what: "HSR header",
                needed: HSR_HEADER,
                found: bytes.len(),
            });
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        if bytes[16] != 0 {
            return Err(Error::UnknownDtype(bytes[16]));
        }
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Format("HSR dimensions overflow".into()))?;
        let end = HSR_HEADER + 4 * n;
        if bytes.len() < end {
            return Err(Error::Truncated {
                what: "HSR payload",
                needed: end,
                found: bytes.len(),
            });
        }
        let data: Vec<f32> = bytes[HSR_HEADER..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut cube = HsiCube::new(Tensor::new(&[c, h, w], data)?)?;
        let rest = &bytes[end..];
        if !rest.is_empty() {
            if rest.len() < 4 {
                return Err(Error::Truncated {
                    what: "HSR metadata length",
                    needed: end + 4,
                    found: bytes.len(),
                });
            }
            let m = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
            if rest.len() < 4 + m {
                return Err(Error::Truncated {
                    what: "HSR metadata",
                    needed: end + 4 + m,
                    found: bytes.len(),
                });
            }
            let text = std::str::from_utf8(&rest[4..4 + m])
                .map_err(|_| Error::Format("HSR metadata is not UTF-8".into()))?;
            cube.apply_metadata(text)?;
        }
        Ok(cube)
    }
}

pub fn write_hsr(path: impl AsRef<Path>, cube: &HsiCube) -> Result<()> {
    fs::write(path, cube.to_hsr_bytes())?;
    Ok(())
}

pub fn read_hsr(path: impl AsRef<Path>) -> Result<HsiCube> {
    HsiCube::from_hsr_bytes(&fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RasterType {
    U16,
    F32,
}

#[derive(Debug, Default)]
struct BsqHeader {
    fields: BTreeMap<String, String>,
}

impl BsqHeader {
    fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        let mut lines = text.lines();
        while let Some(line) = lines.next() {
            let line = line.trim();
            if line.is_empty() || line.eq_ignore_ascii_case("ENVI") || line.starts_with(';') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Format(format!("header line without '=': {line:?}")));
            };
            let mut value = v.trim().to_string();
            if value.starts_with('{') {
                while !value.contains('}') {
                    match lines.next() {
                        Some(more) => {
                            value.push(' ');
                            value.push_str(more.trim());
                        }
                        None => return Err(Error::Format(format!("unterminated value for {:?}", k.trim()))),
                    }
                }
            }
            fields.insert(k.trim().to_ascii_lowercase(), value);
        }
        Ok(BsqHeader { fields })
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.fields
            .get(key)
            .ok_or_else(|| Error::Format(format!("header is missing {key:?}")))?
            .parse()
            .map_err(|_| Error::Format(format!("header value for {key:?} is not an integer")))
    }

    fn optional_usize(&self, key: &str, default: usize) -> Result<usize> {
        if self.fields.contains_key(key) {
            self.usize(key)
        } else {
            Ok(default)
        }
    }
}

/// Reads a band-sequential raster described by a minimal text header with keys
/// `samples`, `lines`, `bands`, `data type` (4 = 32-bit float, 12 = 16-bit
/// unsigned), `byte order` (0 = little, 1 = big), `interleave` (must be `bsq`)
/// and optionally `header offset`. Other keys are ignored.
pub fn import_bsq(header: impl AsRef<Path>, data: impl AsRef<Path>) -> Result<HsiCube> {
    let hdr = BsqHeader::parse(&fs::read_to_string(header)?)?;
    let bytes = fs::read(data)?;
    bsq_from_parts(&hdr, &bytes)
}

fn bsq_from_parts(hdr: &BsqHeader, bytes: &[u8]) -> Result<HsiCube> {
    let (w, h, c) = (hdr.usize("samples")?, hdr.usize("lines")?, hdr.usize("bands")?);
    let ty = match hdr.usize("data type")? {
        4 => RasterType::F32,
        12 => RasterType::U16,
        other => return Err(Error::Unsupported(format!("data type {other}"))),
    };
    let big = match hdr.optional_usize("byte order", 0)? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("byte order {other}"))),
    };
    if let Some(il) = hdr.fields.get("interleave") {
        if !il.eq_ignore_ascii_case("bsq") {
            return Err(Error::Unsupported(format!("interleave {il}")));
        }
    }
    let offset = hdr.optional_usize("header offset", 0)?;
    let width = if ty == RasterType::U16 { 2 } else { 4 };
    let n = c * h * w;
    let needed = offset + n * width;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: "raster data",
            needed,
            found: bytes.len(),
        });
    }
    let raw = &bytes[offset..needed];
    let data: Vec<f32> = match (ty, big) {
        (RasterType::U16, false) => raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as f32).collect(),
        (RasterType::U16, true) => raw.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32).collect(),
        (RasterType::F32, false) => raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        (RasterType::F32, true) => raw.chunks_exact(4).map(|b| f32::from_be_bytes(b.try_into().unwrap())).collect(),
    };
    HsiCube::new(Tensor::new(&[c, h, w], data)?)
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p / 100 * n)` (1-based, at least 1).
pub fn nearest_rank(sorted: &[f32], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1] as f64
}

/// Per-band 2nd/98th percentiles and extrema over the pooled pixels of every
/// cube.
pub fn percentile_stats(cubes: &[&Tensor<f32>]) -> Result<Vec<BandStats>> {
    let first = cubes.first().ok_or_else(|| Error::Domain("no cubes to normalize".into()))?;
    let c = first.shape()[0];
    if let Some(bad) = cubes.iter().find(|t| t.ndim() != 3 || t.shape()[0] != c) {
        return Err(Error::dim("percentile_stats", bad.shape(), first.shape()));
    }
    (0..c)
        .map(|b| {
            let mut pool: Vec<f32> = cubes
                .iter()
                .flat_map(|t| {
                    let plane = t.shape()[1] * t.shape()[2];
                    t.data()[b * plane..(b + 1) * plane].iter().copied()
                })
                .collect();
            if pool.is_empty() {
                return Err(Error::Domain("empty band".into()));
            }
            pool.sort_by(f32::total_cmp);
            Ok(BandStats {
                p2: nearest_rank(&pool, 2.0),
                p98: nearest_rank(&pool, 98.0),
                min: pool[0] as f64,
                max: *pool.last().unwrap() as f64,
            })
        })
        .collect()
}

/// Clips every band to `[p2, p98]` and maps it affinely onto `[0, 1]`.
/// Constant bands map to 0.5.
pub fn apply_percentile(cube: &Tensor<f32>, stats: &[BandStats]) -> Result<Tensor<f32>> {
    if cube.ndim() != 3 || cube.shape()[0] != stats.len() {
        return Err(Error::dim("apply_percentile", cube.shape(), &[stats.len(), 0, 0]));
    }
    let plane = cube.shape()[1] * cube.shape()[2];
    let mut out = cube.clone();
    for (b, band) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let s = stats[b];
        if s.p98 <= s.p2 {
            log::warn!("band {b} is constant under its percentiles; mapped to 0.5");
            band.fill(0.5);
            continue;
        }
        for v in band {
            let x = (*v as f64).clamp(s.p2, s.p98);
            *v = ((x - s.p2) / (s.p98 - s.p2)) as f32;
        }
    }
    Ok(out)
}

/// Inverse of [`apply_percentile`] for values that were inside the clip range.
pub fn denormalize_percentile(cube: &Tensor<f32>, stats: &[BandStats]) -> Result<Tensor<f32>> {
    if cube.ndim() != 3 || cube.shape()[0] != stats.len() {
        return Err(Error::dim("denormalize_percentile", cube.shape(), &[stats.len(), 0, 0]));
    }
    let plane = cube.shape()[1] * cube.shape()[2];
    let mut out = cube.clone();
    for (b, band) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let s = stats[b];
        for v in band {
            *v = if s.p98 <= s.p2 {
                s.p2 as f32
            } else {
                (*v as f64 * (s.p98 - s.p2) + s.p2) as f32
            };
        }
    }
    Ok(out)
}

/// Percentile statistics pooled over all cubes, applied to each of them.
pub fn normalize_percentile(cubes: &[&Tensor<f32>]) -> Result<(Vec<Tensor<f32>>, Vec<BandStats>)> {
    let stats = percentile_stats(cubes)?;
    let out = cubes.iter().map(|c| apply_percentile(c, &stats)).collect::<Result<_>>()?;
    Ok((out, stats))
}

/// Min-max over the whole cube. Returns the normalized cube and `(min, max)`.
pub fn normalize_global(cube: &Tensor<f32>) -> (Tensor<f32>, (f32, f32)) {
    let min = cube.data().iter().copied().fold(f32::INFINITY, f32::min);
    let max = cube.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(max > min) {
        log::warn!("constant cube; mapped to 0.5");
        return (Tensor::full(cube.shape(), 0.5), (min, max));
    }
    let range = max as f64 - min as f64;
    (cube.map(|v| ((v as f64 - min as f64) / range) as f32), (min, max))
}

/// Non-overlapping `factor x factor` area averaging; trailing rows/columns that
/// do not fill a block are dropped.
pub fn downscale<T: Real>(cube: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (c, h, w) = (cube.shape()[0], cube.shape()[1], cube.shape()[2]);
    if factor <= 1 {
        return cube.clone();
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::from_usize(factor * factor).unwrap();
    Tensor::from_fn(&[c, oh, ow], |i| {
        let (b, r, q) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let mut s = T::zero();
        for a in 0..factor {
            let row = &cube.data()[b * h * w + (r * factor + a) * w + q * factor..][..factor];
            for &v in row {
                s = s + v;
            }
        }
        s * inv
    })
}

/// Spatial window `[c, rows, cols]` starting at `(r, q)`.
pub fn crop<T: Real>(cube: &Tensor<T>, r: usize, q: usize, rows: usize, cols: usize) -> Tensor<T> {
    let (h, w) = (cube.shape()[1], cube.shape()[2]);
    debug_assert!(r + rows <= h && q + cols <= w);
    Tensor::from_fn(&[cube.shape()[0], rows, cols], |i| {
        let (b, rem) = (i / (rows * cols), i % (rows * cols));
        cube.data()[b * h * w + (r + rem / cols) * w + q + rem % cols]
    })
}

/// Central `size x size` window, or the cube itself when it is not larger.
pub fn center_crop<T: Real>(cube: &Tensor<T>, size: usize) -> Tensor<T> {
    let (h, w) = (cube.shape()[1], cube.shape()[2]);
    let (rows, cols) = (size.min(h), size.min(w));
    crop(cube, (h - rows) / 2, (w - cols) / 2, rows, cols)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchConfig {
    pub patch: usize,
    /// `(downscale factor, stride)` per scale.
    pub scales: Vec<(usize, usize)>,
    pub center_crop: Option<usize>,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch: 64,
            scales: vec![(1, 64), (2, 32), (4, 32)],
            center_crop: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub data: Tensor<T>,
    pub image: usize,
    pub scale: usize,
    pub row: usize,
    pub col: usize,
}

/// Grid patches of every configured scale, ordered by (scale, row, col).
pub fn extract_patches<T: Real>(cube: &Tensor<T>, image: usize, cfg: &PatchConfig) -> Vec<Patch<T>> {
    let base = match cfg.center_crop {
        Some(s) => center_crop(cube, s),
        None => cube.clone(),
    };
    let mut out = Vec::new();
    for &(factor, stride) in &cfg.scales {
        let scaled = downscale(&base, factor);
        let (h, w) = (scaled.shape()[1], scaled.shape()[2]);
        if h < cfg.patch || w < cfg.patch {
            log::warn!("image {image}: {h}x{w} at scale 1:{factor} is smaller than the patch; scale skipped");
            continue;
        }
        let stride = stride.max(1);
        for r in (0..=h - cfg.patch).step_by(stride) {
            for q in (0..=w - cfg.patch).step_by(stride) {
                out.push(Patch {
                    data: crop(&scaled, r, q, cfg.patch, cfg.patch),
                    image,
                    scale: factor,
                    row: r,
                    col: q,
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augment {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl Augment {
    pub const ALL: [Augment; 6] = [
        Augment::Identity,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
        Augment::FlipH,
        Augment::FlipV,
    ];

    /// Spatial transform of a `[c, h, w]` cube; rotations are counter-clockwise.
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let at = |b: usize, r: usize, q: usize| x.data()[(b * h + r) * w + q];
        match self {
            Augment::Identity => x.clone(),
            Augment::Rot90 => Tensor::from_fn(&[c, w, h], |i| {
                let (b, r, q) = (i / (w * h), (i / h) % w, i % h);
                at(b, q, w - 1 - r)
            }),
            Augment::Rot180 => Tensor::from_fn(&[c, h, w], |i| {
                let (b, r, q) = (i / (h * w), (i / w) % h, i % w);
                at(b, h - 1 - r, w - 1 - q)
            }),
            Augment::Rot270 => Tensor::from_fn(&[c, w, h], |i| {
                let (b, r, q) = (i / (w * h), (i / h) % w, i % h);
                at(b, h - 1 - q, r)
            }),
            Augment::FlipH => Tensor::from_fn(&[c, h, w], |i| {
                let (b, r, q) = (i / (h * w), (i / w) % h, i % w);
                at(b, r, w - 1 - q)
            }),
            Augment::FlipV => Tensor::from_fn(&[c, h, w], |i| {
                let (b, r, q) = (i / (h * w), (i / w) % h, i % w);
                at(b, h - 1 - r, q)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(c: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[c, h, w], |i| i as f32 * 0.5 - 3.0)
    }

    #[test]
    fn hsr_round_trip_with_metadata() {
        let mut c = HsiCube::new(cube(3, 4, 5)).unwrap();
        c.sensor_id = Some("icvl".into());
        c.band_stats = Some(vec![BandStats { p2: 0.1, p98: 0.9, min: 0.0, max: 1.0 }; 3]);
        c.extra.insert("note".into(), "x".into());
        let back = HsiCube::from_hsr_bytes(&c.to_hsr_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hsr_single_value_and_bit_patterns() {
        let weird = Tensor::new(&[1, 1, 1], vec![f32::from_bits(0x7fc0_1234)]).unwrap();
        let c = HsiCube::new(weird).unwrap();
        let back = HsiCube::from_hsr_bytes(&c.to_hsr_bytes()).unwrap();
        assert_eq!(back.data.data()[0].to_bits(), 0x7fc0_1234);
        assert_eq!(c.to_hsr_bytes().len(), HSR_HEADER + 4);
    }

    #[test]
    fn hsr_errors() {
        let bytes = HsiCube::new(cube(2, 3, 3)).unwrap().to_hsr_bytes();
        assert!(matches!(HsiCube::from_hsr_bytes(b"HSR2abcd"), Err(Error::BadMagic { .. })));
        assert!(matches!(
            HsiCube::from_hsr_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(HsiCube::from_hsr_bytes(&bytes[..10]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[16] = 3;
        assert!(matches!(HsiCube::from_hsr_bytes(&bad), Err(Error::UnknownDtype(3))));
        let mut meta = bytes.clone();
        meta.extend_from_slice(&10u32.to_le_bytes());
        meta.extend_from_slice(b"abc");
        assert!(matches!(HsiCube::from_hsr_bytes(&meta), Err(Error::Truncated { .. })));
    }

    #[test]
    fn header_parsing() {
        let text = "ENVI\nsamples = 3\nlines = 2\nbands = 2\ndata type = 12\nbyte order = 0\ninterleave = bsq\nwavelength = {\n 400.0,\n 410.0}\n";
        let hdr = BsqHeader::parse(text).unwrap();
        assert_eq!(hdr.usize("samples").unwrap(), 3);
        assert!(hdr.fields["wavelength"].contains("410.0"));
        let bytes: Vec<u8> = (0u16..12).flat_map(|v| (v * 1000).to_le_bytes()).collect();
        let c = bsq_from_parts(&hdr, &bytes).unwrap();
        assert_eq!(c.data.shape(), &[2, 2, 3]);
        assert_eq!(c.data.data()[11], 11000.0);
    }

    #[test]
    fn percentile_fixture() {
        let t = Tensor::from_fn(&[1, 1, 101], |i| i as f32);
        let stats = percentile_stats(&[&t]).unwrap();
        assert_eq!((stats[0].p2, stats[0].p98), (2.0, 98.0));
        let n = apply_percentile(&t, &stats).unwrap();
        assert_eq!(n.data()[50], 0.5);
        assert_eq!(n.data()[0], 0.0);
        assert_eq!(n.data()[100], 1.0);
    }

    #[test]
    fn percentiles_pool_images() {
        let a = Tensor::from_fn(&[1, 1, 50], |i| i as f32);
        let b = Tensor::from_fn(&[1, 1, 51], |i| (i + 50) as f32);
        let stats = percentile_stats(&[&a, &b]).unwrap();
        assert_eq!((stats[0].p2, stats[0].p98), (2.0, 98.0));
    }

    #[test]
    fn constant_band_maps_to_half() {
        let t = Tensor::full(&[2, 3, 3], 4.0f32);
        let (n, _) = normalize_percentile(&[&t]).unwrap();
        assert!(n[0].data().iter().all(|&v| v == 0.5));
        let (g, _) = normalize_global(&t);
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn global_uses_joint_extrema() {
        let t = Tensor::new(&[2, 1, 2], vec![0.0, 10.0, 20.0, 40.0]).unwrap();
        let (n, mm) = normalize_global(&t);
        assert_eq!(mm, (0.0, 40.0));
        assert_eq!(n.data(), &[0.0, 0.25, 0.5, 1.0]);
        let (n, _) = normalize_global(&Tensor::new(&[1, 1, 2], vec![0.0, 255.0]).unwrap());
        assert_eq!(n.data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalization_inverts_on_clipped_values() {
        let t = Tensor::from_fn(&[2, 10, 10], |i| ((i * 37) % 101) as f32);
        let stats = percentile_stats(&[&t]).unwrap();
        let clipped = Tensor::from_fn(t.shape(), |i| {
            let s = stats[i / 100];
            (t.data()[i] as f64).clamp(s.p2, s.p98) as f32
        });
        let back = denormalize_percentile(&apply_percentile(&t, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.data().iter().zip(clipped.data()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn patch_grid() {
        let big = Tensor::<f32>::zeros(&[1, 1024, 1024]);
        let cfg = PatchConfig { scales: vec![(1, 64)], ..PatchConfig::default() };
        assert_eq!(extract_patches(&big, 0, &cfg).len(), 256);
        let small = cube(2, 64, 64);
        let p = extract_patches(&small, 3, &PatchConfig::default());
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].image, p[0].scale, p[0].row, p[0].col), (3, 1, 0, 0));
        assert_eq!(p[0].data, small);
    }

    #[test]
    fn patches_stay_in_bounds() {
        let t = cube(2, 150, 130);
        for p in extract_patches(&t, 0, &PatchConfig::default()) {
            let (h, w) = (150 / p.scale, 130 / p.scale);
            assert!(p.row + 64 <= h && p.col + 64 <= w);
        }
    }

    #[test]
    fn downscale_averages() {
        let t = Tensor::new(&[1, 2, 4], vec![1.0f32, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(downscale(&t, 2).data(), &[2.0, 6.0]);
    }

    #[test]
    fn augment_groups() {
        let t = cube(2, 3, 4);
        let mut r = t.clone();
        for _ in 0..4 {
            r = Augment::Rot90.apply(&r);
        }
        assert_eq!(r, t);
        assert_eq!(Augment::FlipH.apply(&Augment::FlipH.apply(&t)), t);
        assert_eq!(Augment::FlipV.apply(&Augment::FlipV.apply(&t)), t);
        assert_eq!(Augment::Rot270.apply(&Augment::Rot90.apply(&t)), t);
        assert_eq!(Augment::Rot90.apply(&Augment::Rot90.apply(&t)), Augment::Rot180.apply(&t));
        let mean = |x: &Tensor<f32>, b: usize| x.data()[b * 12..(b + 1) * 12].iter().sum::<f32>();
        for op in Augment::ALL {
            let a = op.apply(&t);
            for b in 0..2 {
                assert_eq!(mean(&a, b), mean(&t, b));
            }
        }
    }

    #[test]
    fn rot90_is_counter_clockwise() {
        let t = Tensor::new(&[1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Augment::Rot90.apply(&t).data(), &[2.0, 4.0, 1.0, 3.0]);
    }
}
