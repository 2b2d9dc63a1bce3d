//! Deterministic synthetic forgery generator.
//!
//! Backgrounds are procedural textures (smooth gradients, soft checker
//! patterns, band-limited noise and per-channel sensor-style micro noise).
//! Forged regions are rectangles or ellipses with exact, unfeathered masks.
//! The donor content differs from the background mainly in its high-frequency
//! statistics, so manipulations stay visible to residual filters even when the
//! low-frequency appearance matches.

use crate::data::{DatasetManifest, ForgeryKind, ForgeryRecord, ImageTensor, MaskTensor, Split};
use crate::error::{Error, Result};
use crate::rng::{mix64, Pcg32};
use crate::scalar::Scalar;
use std::path::Path;

const MIN_REGION_AREA: usize = 16;

#[derive(Debug, Clone, Copy)]
enum RegionShape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    shape: RegionShape,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Region {
    fn contains(&self, i: usize, j: usize) -> bool {
        let dy = (i as f64 + 0.5 - self.cy) / self.ry;
        let dx = (j as f64 + 0.5 - self.cx) / self.rx;
        match self.shape {
            RegionShape::Rect => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            RegionShape::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }

    fn to_mask(&self, height: usize, width: usize) -> MaskTensor {
        let mut mask = MaskTensor::zeros(height, width);
        let i0 = (self.cy - self.ry).floor().max(0.0) as usize;
        let i1 = ((self.cy + self.ry).ceil() as usize).min(height);
        let j0 = (self.cx - self.rx).floor().max(0.0) as usize;
        let j1 = ((self.cx + self.rx).ceil() as usize).min(width);
        for i in i0..i1 {
            for j in j0..j1 {
                if self.contains(i, j) {
                    mask.data[i * width + j] = 1;
                }
            }
        }
        mask
    }
}

/// Sample a region whose clipped pixel area is at least [`MIN_REGION_AREA`].
/// Degenerate draws are resampled internally and never surface.
fn sample_region(rng: &mut Pcg32, height: usize, width: usize) -> (Region, MaskTensor) {
    loop {
        let shape = if rng.uniform() < 0.5 {
            RegionShape::Rect
        } else {
            RegionShape::Ellipse
        };
        let area_frac = rng.range(0.06, 0.30);
        let area = area_frac * (height * width) as f64;
        let aspect = rng.range(0.6, 1.7);
        let (ry, rx) = match shape {
            RegionShape::Rect => {
                // full extents 2ry x 2rx with (2ry)(2rx) = area
                let h = (area * aspect).sqrt();
                (h / 2.0, area / (2.0 * h))
            }
            RegionShape::Ellipse => {
                let ry = (area * aspect / std::f64::consts::PI).sqrt();
                (ry, area / (std::f64::consts::PI * ry))
            }
        };
        if 2.0 * ry + 4.0 >= height as f64 || 2.0 * rx + 4.0 >= width as f64 {
            continue;
        }
        let cy = rng.range(ry + 1.0, height as f64 - ry - 1.0);
        let cx = rng.range(rx + 1.0, width as f64 - rx - 1.0);
        let region = Region { shape, cy, cx, ry, rx };
        let mask = region.to_mask(height, width);
        if mask.sum() >= MIN_REGION_AREA {
            return (region, mask);
        }
    }
}

/// Procedural texture sampled entirely from `rng`, values in [0, 1].
fn texture(rng: &mut Pcg32, height: usize, width: usize) -> Vec<f64> {
    let base = rng.range(0.30, 0.60);

    // low-frequency sinusoids
    let n_waves = rng.range_usize(2, 4);
    let waves: Vec<(f64, f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            (
                rng.range(0.05, 0.16),                     // amplitude
                rng.range(0.5, 3.0) / height as f64,       // fy cycles/px
                rng.range(0.5, 3.0) / width as f64,        // fx cycles/px
                rng.range(0.0, std::f64::consts::TAU),     // phase
            )
        })
        .collect();

    // soft checker
    let period = *rng.pick(&[12.0, 16.0, 24.0, 32.0]);
    let checker_amp = rng.range(0.03, 0.10);
    let (phx, phy) = (rng.range(0.0, std::f64::consts::TAU), rng.range(0.0, std::f64::consts::TAU));

    // band-limited noise: coarse grid, bilinear upsample x4
    let noise_amp = rng.range(0.03, 0.09);
    let gh = height / 4 + 2;
    let gw = width / 4 + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.range(-1.0, 1.0)).collect();

    let mut lum = vec![0.0f64; height * width];
    let w_tau = std::f64::consts::TAU;
    for i in 0..height {
        for j in 0..width {
            let (y, x) = (i as f64, j as f64);
            let mut v = base;
            for &(amp, fy, fx, ph) in &waves {
                v += amp * (w_tau * (fy * y + fx * x) + ph).sin();
            }
            let sy = (w_tau * y / period + phy).sin();
            let sx = (w_tau * x / period + phx).sin();
            v += checker_amp * (3.0 * sy * sx).tanh();

            let gy = y / 4.0;
            let gx = x / 4.0;
            let (iy, ix) = (gy as usize, gx as usize);
            let (fy, fx) = (gy - iy as f64, gx - ix as f64);
            let g00 = grid[iy * gw + ix];
            let g01 = grid[iy * gw + ix + 1];
            let g10 = grid[(iy + 1) * gw + ix];
            let g11 = grid[(iy + 1) * gw + ix + 1];
            let g = g00 * (1.0 - fy) * (1.0 - fx)
                + g01 * (1.0 - fy) * fx
                + g10 * fy * (1.0 - fx)
                + g11 * fy * fx;
            v += noise_amp * g;

            lum[i * width + j] = v;
        }
    }
    lum
}

/// Expand a luminance pattern into RGB with per-channel tint and independent
/// per-channel sensor-style micro noise of the given level, then clamp.
fn colorize(rng: &mut Pcg32, lum: &[f64], height: usize, width: usize, micro_sigma: f64) -> Vec<f64> {
    let tints: [f64; 3] = [rng.range(-0.12, 0.12), rng.range(-0.12, 0.12), rng.range(-0.12, 0.12)];
    let offsets: [f64; 3] = [rng.range(-0.04, 0.04), rng.range(-0.04, 0.04), rng.range(-0.04, 0.04)];
    let mut out = vec![0.0f64; height * width * 3];
    for (p, &v) in lum.iter().enumerate() {
        for c in 0..3 {
            let noise = micro_sigma * rng.normal();
            out[p * 3 + c] = (v * (1.0 + tints[c]) + offsets[c] + noise).clamp(0.0, 1.0);
        }
    }
    out
}

/// Pristine render: luminance pattern plus colorization, returning the
/// luminance plane and the drawn noise level for downstream placement rules.
fn render_pristine(rng: &mut Pcg32, height: usize, width: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let lum = texture(rng, height, width);
    let micro_sigma = rng.range(0.012, 0.045);
    let rgb = colorize(rng, &lum, height, width, micro_sigma);
    (lum, rgb, micro_sigma)
}

/// A donor noise level clearly separated from the background's, so spliced
/// content always differs in its high-frequency statistics.
fn contrasting_sigma(background: f64, rng: &mut Pcg32) -> f64 {
    if background < 0.028 {
        rng.range(0.034, 0.05)
    } else {
        rng.range(0.006, 0.018)
    }
}

/// Separable clamped box blur over an RGB buffer.
fn blur_rgb(data: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = vec![0.0f64; data.len()];
    for i in 0..height {
        for j in 0..width {
            for c in 0..3 {
                let mut acc = 0.0;
                for d in -(radius as isize)..=(radius as isize) {
                    let jj = (j as isize + d).clamp(0, width as isize - 1) as usize;
                    acc += data[(i * width + jj) * 3 + c];
                }
                tmp[(i * width + j) * 3 + c] = acc * norm;
            }
        }
    }
    let mut out = vec![0.0f64; data.len()];
    for i in 0..height {
        for j in 0..width {
            for c in 0..3 {
                let mut acc = 0.0;
                for d in -(radius as isize)..=(radius as isize) {
                    let ii = (i as isize + d).clamp(0, height as isize - 1) as usize;
                    acc += tmp[(ii * width + j) * 3 + c];
                }
                out[(i * width + j) * 3 + c] = acc * norm;
            }
        }
    }
    out
}

/// Generate one (image, mask, record) triple; bit-identical for identical
/// (seed, kind, height, width).
pub fn synthesize_forgery<T: Scalar>(
    seed: u64,
    kind: ForgeryKind,
    height: usize,
    width: usize,
) -> Result<(ImageTensor<T>, MaskTensor, ForgeryRecord)> {
    if height < 32 || width < 32 {
        return Err(Error::ShapeError(format!(
            "synthesis requires height, width >= 32, got {height}x{width}"
        )));
    }
    let mut rng = Pcg32::new(seed, kind as u64 + 1);
    let (lum, mut rgb, micro_sigma) = render_pristine(&mut rng, height, width);

    let mask = match kind {
        ForgeryKind::Pristine => MaskTensor::zeros(height, width),
        ForgeryKind::Splice => {
            let (_, mask) = sample_region(&mut rng, height, width);
            let mut donor_rng = Pcg32::new(mix64(seed ^ 0xd0_0_0_2), kind as u64 + 17);
            let donor_lum = texture(&mut donor_rng, height, width);
            let donor_sigma = contrasting_sigma(micro_sigma, &mut donor_rng);
            let donor_rgb = colorize(&mut donor_rng, &donor_lum, height, width, donor_sigma);
            for p in 0..height * width {
                if mask.data[p] > 0 {
                    rgb[p * 3..p * 3 + 3].copy_from_slice(&donor_rgb[p * 3..p * 3 + 3]);
                }
            }
            mask
        }
        ForgeryKind::Inpaint => {
            let (_, mask) = sample_region(&mut rng, height, width);
            let radius = rng.range_usize(3, 6);
            let blurred = blur_rgb(&rgb, height, width, radius);
            for p in 0..height * width {
                if mask.data[p] > 0 {
                    rgb[p * 3..p * 3 + 3].copy_from_slice(&blurred[p * 3..p * 3 + 3]);
                }
            }
            mask
        }
        ForgeryKind::CopyMove => {
            // Destination region plus a non-overlapping source offset.
            // Placements are resampled until the pasted content differs from
            // what it covers (mean |luminance delta| over the region), so a
            // clone never lands on content identical to its source.
            const MIN_LUM_DELTA: f64 = 0.05;
            let mut attempt = 0;
            let mut best: Option<(f64, MaskTensor, Vec<(usize, [f64; 3])>)> = None;
            loop {
                attempt += 1;
                let (region, mask) = sample_region(&mut rng, height, width);
                let bw = (2.0 * region.rx).ceil() as isize + 2;
                let bh = (2.0 * region.ry).ceil() as isize + 2;
                let horizontal = rng.uniform() < 0.5;
                let (need, span, r) = if horizontal {
                    (bw, width as isize, region.rx)
                } else {
                    (bh, height as isize, region.ry)
                };
                let c = if horizontal { region.cx } else { region.cy };
                let max_pos = span - 1 - (r.ceil() as isize + 1);
                let min_pos = r.ceil() as isize + 1;
                // feasible source centers on the chosen axis, away from the dest
                let lo_room = (c as isize - need) - min_pos;
                let hi_room = max_pos - (c as isize + need);
                if lo_room < 0 && hi_room < 0 {
                    if attempt > 10_000 {
                        return Err(Error::ShapeError(format!(
                            "no feasible copy-move placement in {height}x{width}"
                        )));
                    }
                    continue;
                }
                let go_low = if lo_room >= 0 && hi_room >= 0 {
                    rng.uniform() < 0.5
                } else {
                    lo_room >= 0
                };
                let src_c = if go_low {
                    rng.range(min_pos as f64, (c - need as f64).max(min_pos as f64 + 0.5))
                } else {
                    rng.range((c + need as f64).min(max_pos as f64 - 0.5), max_pos as f64)
                };
                let (dy, dx) = if horizontal {
                    (0.0, src_c - region.cx)
                } else {
                    (src_c - region.cy, 0.0)
                };
                let (dyi, dxi) = (dy.round() as isize, dx.round() as isize);

                // copy source pixels through a buffer so overlap cannot feed back
                let mut ok = true;
                let mut patch: Vec<(usize, [f64; 3])> = Vec::new();
                let mut lum_delta = 0.0;
                for i in 0..height {
                    for j in 0..width {
                        if mask.data[i * width + j] > 0 {
                            let si = i as isize + dyi;
                            let sj = j as isize + dxi;
                            if si < 0 || sj < 0 || si >= height as isize || sj >= width as isize {
                                ok = false;
                                break;
                            }
                            let sp = (si as usize * width + sj as usize) * 3;
                            lum_delta +=
                                (lum[si as usize * width + sj as usize] - lum[i * width + j]).abs();
                            patch.push((i * width + j, [rgb[sp], rgb[sp + 1], rgb[sp + 2]]));
                        }
                    }
                    if !ok {
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                lum_delta /= patch.len() as f64;
                let good_enough = lum_delta >= MIN_LUM_DELTA;
                if best.as_ref().map(|(d, _, _)| lum_delta > *d).unwrap_or(true) {
                    best = Some((lum_delta, mask, patch));
                }
                if good_enough || attempt >= 25 {
                    let (_, mask, patch) = best.take().expect("at least one candidate");
                    for (p, px) in patch {
                        rgb[p * 3..p * 3 + 3].copy_from_slice(&px);
                    }
                    break mask;
                }
            }
        }
    };

    let image = ImageTensor {
        height,
        width,
        data: rgb.iter().map(|&v| T::of_f64(v)).collect(),
    };
    Ok((image, mask, record_for(seed, kind)))
}

fn record_for(seed: u64, kind: ForgeryKind) -> ForgeryRecord {
    ForgeryRecord {
        image_path: format!("img_{seed:08}_{kind}.png"),
        mask_path: format!("mask_{seed:08}_{kind}.png"),
        forgery_kind: kind,
        seed,
    }
}

/// Standalone random region mask; used by codec pretraining to expose the
/// autoencoder to representative binary masks.
pub fn random_region_mask(seed: u64, height: usize, width: usize) -> MaskTensor {
    let mut rng = Pcg32::new(seed, 0xa5c);
    let (_, mask) = sample_region(&mut rng, height, width);
    mask
}

/// Materialize a dataset on disk: PNG pairs plus a manifest. Kinds cycle in
/// the order given; record seeds are `base_seed + index`.
pub fn synthesize_dataset<T: Scalar>(
    out_dir: &Path,
    count: usize,
    size: usize,
    kinds: &[ForgeryKind],
    base_seed: u64,
    split: Split,
) -> Result<DatasetManifest> {
    if kinds.is_empty() {
        return Err(Error::InvalidKind("empty kind list".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = DatasetManifest::new(split);
    for idx in 0..count {
        let seed = base_seed + idx as u64;
        let kind = kinds[idx % kinds.len()];
        let (img, mask, record) = synthesize_forgery::<T>(seed, kind, size, size)?;
        crate::data::save_image(&img, &out_dir.join(&record.image_path))?;
        crate::data::save_mask(&mask, &out_dir.join(&record.mask_path))?;
        manifest.records.push(record);
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    crate::data::write_manifest(&manifest, &manifest_path)?;
    Ok(manifest)
}
