//! Dataset model: image/mask tensors, PNG ingestion, the line-delimited
//! manifest format, and the deterministic synthetic forgery generator
//! (in [`synth`]).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};

pub mod synth;

/// H×W×3 image with values in [0, 1], row-major, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![T::zero(); height * width * Self::CHANNELS],
        }
    }

    pub fn constant(height: usize, width: usize, v: T) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width * Self::CHANNELS],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize) -> T {
        self.data[(i * self.width + j) * Self::CHANNELS + c]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, c: usize) -> &mut T {
        &mut self.data[(i * self.width + j) * Self::CHANNELS + c]
    }

    /// Rec. 601 luminance, one value per pixel.
    pub fn luminance(&self) -> Vec<T> {
        let (wr, wg, wb) = (sc::<T>(0.299), sc::<T>(0.587), sc::<T>(0.114));
        self.data
            .chunks_exact(3)
            .map(|px| wr * px[0] + wg * px[1] + wb * px[2])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.height * self.width * Self::CHANNELS {
            return Err(Error::ShapeError(format!(
                "image buffer {} does not match {}x{}x3",
                self.data.len(),
                self.height,
                self.width
            )));
        }
        for &v in &self.data {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(Error::ShapeError("image values must be finite in [0,1]".into()));
            }
        }
        Ok(())
    }

    pub fn to_f64(&self) -> ImageTensor<f64> {
        ImageTensor {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.to_f64_s()).collect(),
        }
    }
}

/// H×W binary mask; 1 marks forged pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.width + j]
    }

    pub fn sum(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Mask as a probability map of exact 0.0 / 1.0 values.
    pub fn to_prob<T: Scalar>(&self) -> ProbMap<T> {
        ProbMap {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| if v > 0 { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn complement(&self) -> MaskTensor {
        MaskTensor {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v.min(1)).collect(),
        }
    }
}

/// H×W real-valued prediction map in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ProbMap<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![T::zero(); height * width],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForgeryKind {
    CopyMove,
    Splice,
    Inpaint,
    Pristine,
}

impl ForgeryKind {
    pub const ALL: [ForgeryKind; 4] = [
        ForgeryKind::CopyMove,
        ForgeryKind::Splice,
        ForgeryKind::Inpaint,
        ForgeryKind::Pristine,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ForgeryKind::CopyMove => "copy-move",
            ForgeryKind::Splice => "splice",
            ForgeryKind::Inpaint => "inpaint",
            ForgeryKind::Pristine => "pristine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "copy-move" => Ok(ForgeryKind::CopyMove),
            "splice" => Ok(ForgeryKind::Splice),
            "inpaint" => Ok(ForgeryKind::Inpaint),
            "pristine" => Ok(ForgeryKind::Pristine),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for ForgeryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeryRecord {
    pub image_path: String,
    pub mask_path: String,
    pub forgery_kind: ForgeryKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Val => f.write_str("val"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// Ordered record list; order is the canonical iteration order everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub records: Vec<ForgeryRecord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    version: u32,
    split: Split,
}

impl DatasetManifest {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            records: Vec::new(),
        }
    }

    fn check_no_duplicates(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for rec in &self.records {
            if !seen.insert(rec.image_path.as_str()) {
                return Err(Error::SchemaError(format!(
                    "duplicate image_path in split: {}",
                    rec.image_path
                )));
            }
        }
        Ok(())
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.check_no_duplicates()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = ManifestHeader {
        version: 1,
        split: manifest.split,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for rec in &manifest.records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|_| Error::FileMissing(path.to_path_buf()))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::SchemaError("empty manifest".into()))??;
    let header: ManifestHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::SchemaError(format!("bad header: {e}")))?;
    if header.version != 1 {
        return Err(Error::SchemaError(format!(
            "unsupported manifest version {}",
            header.version
        )));
    }
    let mut manifest = DatasetManifest::new(header.split);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ForgeryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::SchemaError(format!("bad record: {e}")))?;
        manifest.records.push(rec);
    }
    manifest.check_no_duplicates()?;
    Ok(manifest)
}

/// Resolve a record path relative to the manifest's directory.
pub fn resolve_record_path(manifest_path: &Path, record_path: &str) -> PathBuf {
    let p = Path::new(record_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

fn png_reader(path: &Path) -> Result<png::Reader<File>> {
    let file = File::open(path).map_err(|_| Error::FileMissing(path.to_path_buf()))?;
    let decoder = png::Decoder::new(file);
    decoder
        .read_info()
        .map_err(|e| Error::DecodeError(format!("{}: {e}", path.display())))
}

/// Load an 8-bit grayscale or RGB PNG; values scaled by 1/255, grayscale
/// replicated to 3 channels.
pub fn load_image<T: Scalar>(path: &Path) -> Result<ImageTensor<T>> {
    let mut reader = png_reader(path)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::DecodeError(format!(
            "{}: only 8-bit PNG supported",
            path.display()
        )));
    }
    let color = info.color_type;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    reader
        .next_frame(&mut buf)
        .map_err(|e| Error::DecodeError(format!("{}: {e}", path.display())))?;
    let inv = sc::<T>(1.0 / 255.0);
    let mut img = ImageTensor::zeros(height, width);
    match color {
        png::ColorType::Grayscale => {
            for (px, &g) in img.data.chunks_exact_mut(3).zip(buf.iter()) {
                let v = sc::<T>(g as f64) * inv;
                px[0] = v;
                px[1] = v;
                px[2] = v;
            }
        }
        png::ColorType::Rgb => {
            for (px, src) in img.data.chunks_exact_mut(3).zip(buf.chunks_exact(3)) {
                for c in 0..3 {
                    px[c] = sc::<T>(src[c] as f64) * inv;
                }
            }
        }
        other => {
            return Err(Error::DecodeError(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )))
        }
    }
    Ok(img)
}

/// Load an 8-bit grayscale PNG as a binary mask: pixel >= 128 maps to 1.
pub fn load_mask(path: &Path) -> Result<MaskTensor> {
    let mut reader = png_reader(path)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight || info.color_type != png::ColorType::Grayscale {
        return Err(Error::DecodeError(format!(
            "{}: masks must be 8-bit grayscale PNG",
            path.display()
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    reader
        .next_frame(&mut buf)
        .map_err(|e| Error::DecodeError(format!("{}: {e}", path.display())))?;
    Ok(MaskTensor {
        height,
        width,
        data: buf.iter().map(|&v| u8::from(v >= 128)).collect(),
    })
}

/// Pair-time shape check between an image and its mask.
pub fn check_pair<T: Scalar>(img: &ImageTensor<T>, mask: &MaskTensor) -> Result<()> {
    if img.height != mask.height || img.width != mask.width {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.height, img.width, mask.height, mask.width
        )));
    }
    Ok(())
}

pub fn save_image<T: Scalar>(img: &ImageTensor<T>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::CodecError(e.to_string()))?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| {
            (v.to_f64_s().clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::CodecError(e.to_string()))?;
    Ok(())
}

pub fn save_mask(mask: &MaskTensor, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), mask.width as u32, mask.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::CodecError(e.to_string()))?;
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::CodecError(e.to_string()))?;
    Ok(())
}

/// Save a single-channel map as grayscale PNG after affine [min,max] -> [0,255].
pub fn save_map_normalized<T: Scalar>(data: &[T], height: usize, width: usize, path: &Path) -> Result<()> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in data {
        let v = v.to_f64_s();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| (((v.to_f64_s() - lo) / span) * 255.0).round() as u8)
        .collect();
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::CodecError(e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::CodecError(e.to_string()))?;
    Ok(())
}
