//! Degradation grid applied to evaluation inputs before inference: Gaussian
//! noise, baseline JPEG round trips, bilinear resizing, and chained
//! "social network" style recompression. Perturbations touch the image only;
//! ground-truth masks are never noise- or JPEG-perturbed, just resampled
//! geometrically when the resolution changes.

use crate::data::{ImageTensor, MaskTensor};
use crate::error::{Error, Result};
use crate::rng::{mix64, Pcg32};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsnProfile {
    Light,
    Medium,
    Heavy,
}

impl OsnProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(Self::Light),
            "medium" => Ok(Self::Medium),
            "heavy" => Ok(Self::Heavy),
            other => Err(Error::ConfigError(format!("unknown osn profile {other}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Light => "light",
            Self::Medium => "medium",
            Self::Heavy => "heavy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    None,
    GaussianNoise { sigma: f64, seed: u64 },
    Jpeg { quality: u8 },
    Resize { factor: f64 },
    OsnChain { profile: OsnProfile },
}

impl Perturbation {
    /// Report tag; doubles as the grouping key.
    pub fn label(&self) -> String {
        match self {
            Perturbation::None => "none".to_string(),
            Perturbation::GaussianNoise { sigma, .. } => format!("noise{sigma}"),
            Perturbation::Jpeg { quality } => format!("jpeg{quality}"),
            Perturbation::Resize { factor } => format!("resize{factor}"),
            Perturbation::OsnChain { profile } => format!("osn_{}", profile.as_str()),
        }
    }
}

/// Deterministic i.i.d. Gaussian field added per element, then clamped to
/// [0, 1]. The raw (pre-clamp) field is exposed for statistical checks.
pub fn gaussian_field(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = Pcg32::new(seed, 0x9019);
    (0..len).map(|_| sigma * rng.normal()).collect()
}

pub fn add_gaussian_noise<T: Scalar>(img: &ImageTensor<T>, sigma: f64, seed: u64) -> ImageTensor<T> {
    if sigma == 0.0 {
        return img.clone();
    }
    let field = gaussian_field(img.data.len(), sigma, seed);
    ImageTensor {
        height: img.height,
        width: img.width,
        data: img
            .data
            .iter()
            .zip(&field)
            .map(|(&v, &n)| sc::<T>((v.to_f64_s() + n).clamp(0.0, 1.0)))
            .collect(),
    }
}

/// Round-trip through a baseline JPEG codec: 4:2:0 chroma subsampling below
/// quality 95, 4:4:4 at or above.
pub fn jpeg_roundtrip<T: Scalar>(img: &ImageTensor<T>, quality: u8) -> Result<ImageTensor<T>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::ConfigError(format!("jpeg quality {quality} out of [1,100]")));
    }
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.to_f64_s().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut encoded = Vec::new();
    let mut encoder = jpeg_encoder::Encoder::new(&mut encoded, quality);
    encoder.set_sampling_factor(if quality < 95 {
        jpeg_encoder::SamplingFactor::F_2_2
    } else {
        jpeg_encoder::SamplingFactor::F_1_1
    });
    encoder
        .encode(
            &bytes,
            img.width as u16,
            img.height as u16,
            jpeg_encoder::ColorType::Rgb,
        )
        .map_err(|e| Error::CodecError(format!("jpeg encode: {e}")))?;

    let mut decoder = jpeg_decoder::Decoder::new(std::io::Cursor::new(&encoded));
    let decoded = decoder
        .decode()
        .map_err(|e| Error::CodecError(format!("jpeg decode: {e}")))?;
    let info = decoder
        .info()
        .ok_or_else(|| Error::CodecError("jpeg decode produced no info".into()))?;
    if info.pixel_format != jpeg_decoder::PixelFormat::RGB24 {
        return Err(Error::CodecError(format!(
            "unexpected jpeg pixel format {:?}",
            info.pixel_format
        )));
    }
    if (info.width as usize, info.height as usize) != (img.width, img.height) {
        return Err(Error::CodecError("jpeg round trip changed dimensions".into()));
    }
    let inv = sc::<T>(1.0 / 255.0);
    Ok(ImageTensor {
        height: img.height,
        width: img.width,
        data: decoded.iter().map(|&b| sc::<T>(b as f64) * inv).collect(),
    })
}

/// Round `dim * factor` to the nearest integer, then to the nearest multiple
/// of `s` (ties toward the lower multiple).
pub fn resize_target(dim: usize, factor: f64, s: usize) -> usize {
    let raw = (dim as f64 * factor).round() as usize;
    let down = raw / s * s;
    let up = down + s;
    if raw - down <= up - raw {
        down
    } else {
        up
    }
}

fn bilinear_sample<T: Scalar>(img: &ImageTensor<T>, y: f64, x: f64, c: usize) -> f64 {
    let h = img.height as f64;
    let w = img.width as f64;
    let yy = y.clamp(0.0, h - 1.0);
    let xx = x.clamp(0.0, w - 1.0);
    let y0 = yy.floor() as usize;
    let x0 = xx.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let fy = yy - y0 as f64;
    let fx = xx - x0 as f64;
    let v00 = img.at(y0, x0, c).to_f64_s();
    let v01 = img.at(y0, x1, c).to_f64_s();
    let v10 = img.at(y1, x0, c).to_f64_s();
    let v11 = img.at(y1, x1, c).to_f64_s();
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Bilinear image resize and nearest-neighbor mask resize to dimensions
/// rounded to multiples of `s`. Evaluation proceeds at the new resolution.
pub fn resize<T: Scalar>(
    img: &ImageTensor<T>,
    mask: &MaskTensor,
    factor: f64,
    s: usize,
) -> Result<(ImageTensor<T>, MaskTensor)> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::ConfigError(format!("resize factor {factor} out of (0, 1]")));
    }
    let oh = resize_target(img.height, factor, s);
    let ow = resize_target(img.width, factor, s);
    if oh < 2 * s || ow < 2 * s {
        return Err(Error::TooSmall(format!(
            "{}x{} at factor {factor} gives {oh}x{ow}, need at least {}x{}",
            img.height,
            img.width,
            2 * s,
            2 * s
        )));
    }
    if oh == img.height && ow == img.width {
        return Ok((img.clone(), mask.clone()));
    }
    let sy = img.height as f64 / oh as f64;
    let sx = img.width as f64 / ow as f64;
    let mut out = ImageTensor::zeros(oh, ow);
    let mut mout = MaskTensor::zeros(oh, ow);
    for i in 0..oh {
        for j in 0..ow {
            let y = (i as f64 + 0.5) * sy - 0.5;
            let x = (j as f64 + 0.5) * sx - 0.5;
            for c in 0..3 {
                *out.at_mut(i, j, c) = sc::<T>(bilinear_sample(img, y, x, c).clamp(0.0, 1.0));
            }
            let ny = (y.round().max(0.0) as usize).min(mask.height - 1);
            let nx = (x.round().max(0.0) as usize).min(mask.width - 1);
            mout.data[i * ow + j] = mask.at(ny, nx);
        }
    }
    Ok((out, mout))
}

/// Ordered composition of the primitives above per platform profile.
pub fn osn_chain<T: Scalar>(
    img: &ImageTensor<T>,
    mask: &MaskTensor,
    profile: OsnProfile,
    s: usize,
) -> Result<(ImageTensor<T>, MaskTensor)> {
    match profile {
        OsnProfile::Light => Ok((jpeg_roundtrip(img, 90)?, mask.clone())),
        OsnProfile::Medium => {
            let (img, mask) = resize(img, mask, 0.9, s)?;
            Ok((jpeg_roundtrip(&img, 80)?, mask))
        }
        OsnProfile::Heavy => {
            let (img, mask) = resize(img, mask, 0.8, s)?;
            let img = jpeg_roundtrip(&img, 70)?;
            let img = jpeg_roundtrip(&img, 70)?;
            Ok((img, mask))
        }
    }
}

/// Apply a perturbation to an evaluation pair. `s` is the codec downsample
/// factor constraining resized dimensions.
pub fn apply<T: Scalar>(
    p: &Perturbation,
    img: &ImageTensor<T>,
    mask: &MaskTensor,
    s: usize,
) -> Result<(ImageTensor<T>, MaskTensor)> {
    match p {
        Perturbation::None => Ok((img.clone(), mask.clone())),
        Perturbation::GaussianNoise { sigma, seed } => {
            Ok((add_gaussian_noise(img, *sigma, *seed), mask.clone()))
        }
        Perturbation::Jpeg { quality } => Ok((jpeg_roundtrip(img, *quality)?, mask.clone())),
        Perturbation::Resize { factor } => resize(img, mask, *factor, s),
        Perturbation::OsnChain { profile } => osn_chain(img, mask, *profile, s),
    }
}

/// Grid of perturbations; `none` is always included first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerturbationGrid {
    pub noise_sigmas: Vec<f64>,
    pub jpeg_qualities: Vec<u8>,
    pub resize_factors: Vec<f64>,
    pub osn_profiles: Vec<OsnProfile>,
}

impl PerturbationGrid {
    /// Parse a spec string like
    /// `noise=0.1,0.3,0.5;jpeg=70,80,90;resize=0.7,0.8,0.9;osn=light,medium,heavy`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = Self::default();
        for part in spec.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| Error::ConfigError(format!("bad grid component {part}")))?;
            for v in values.split(',') {
                let v = v.trim();
                match key {
                    "noise" => {
                        let sigma: f64 = v
                            .parse()
                            .map_err(|_| Error::ConfigError(format!("bad sigma {v}")))?;
                        if sigma < 0.0 {
                            return Err(Error::ConfigError(format!("negative sigma {v}")));
                        }
                        grid.noise_sigmas.push(sigma);
                    }
                    "jpeg" => {
                        let q: u8 = v
                            .parse()
                            .map_err(|_| Error::ConfigError(format!("bad quality {v}")))?;
                        if !(1..=100).contains(&q) {
                            return Err(Error::ConfigError(format!("quality {q} out of [1,100]")));
                        }
                        grid.jpeg_qualities.push(q);
                    }
                    "resize" => {
                        let f: f64 = v
                            .parse()
                            .map_err(|_| Error::ConfigError(format!("bad factor {v}")))?;
                        if !(f > 0.0 && f <= 1.0) {
                            return Err(Error::ConfigError(format!("factor {f} out of (0,1]")));
                        }
                        grid.resize_factors.push(f);
                    }
                    "osn" => grid.osn_profiles.push(OsnProfile::parse(v)?),
                    other => {
                        return Err(Error::ConfigError(format!("unknown grid key {other}")))
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn standard() -> Self {
        Self {
            noise_sigmas: vec![0.1, 0.3, 0.5],
            jpeg_qualities: vec![70, 80, 90],
            resize_factors: vec![0.7, 0.8, 0.9],
            osn_profiles: vec![OsnProfile::Light, OsnProfile::Medium, OsnProfile::Heavy],
        }
    }

    /// Materialize the cells, `none` first; noise seeds are derived from the
    /// suite seed and the sigma index so reruns are bit-identical.
    pub fn cells(&self, suite_seed: u64) -> Vec<Perturbation> {
        let mut cells = vec![Perturbation::None];
        for (i, &sigma) in self.noise_sigmas.iter().enumerate() {
            cells.push(Perturbation::GaussianNoise {
                sigma,
                seed: mix64(suite_seed ^ ((i as u64 + 1) << 24)),
            });
        }
        for &q in &self.jpeg_qualities {
            cells.push(Perturbation::Jpeg { quality: q });
        }
        for &f in &self.resize_factors {
            cells.push(Perturbation::Resize { factor: f });
        }
        for &p in &self.osn_profiles {
            cells.push(Perturbation::OsnChain { profile: p });
        }
        cells
    }
}

pub fn psnr<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> f64 {
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64_s();
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
