//! High-frequency residual extraction with the three classic 5x5 SRM
//! steganalysis kernels. Residuals are computed on luminance with reflect
//! padding and kept raw: no truncation, no quantization, so gradients can
//! flow through them unchanged.

use crate::data::ImageTensor;
use crate::scalar::{sc, Scalar};

/// Integer tap grid with a rational normalizer; `taps * num / den` is the
/// effective kernel. Every kernel's tap sum is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrmKernel {
    pub taps: [[i32; 5]; 5],
    pub scale_num: i32,
    pub scale_den: i32,
}

impl SrmKernel {
    pub fn tap_sum(&self) -> i32 {
        self.taps.iter().flatten().sum()
    }

    /// Scaled tap sum as an exact rational numerator over `scale_den`.
    pub fn scaled_tap_sum_num(&self) -> i32 {
        self.tap_sum() * self.scale_num
    }
}

/// The three residual kernels with normalizers 1/4, 1/12 and 1/2.
pub fn srm_kernels() -> [SrmKernel; 3] {
    [
        SrmKernel {
            taps: [
                [0, 0, 0, 0, 0],
                [0, -1, 2, -1, 0],
                [0, 2, -4, 2, 0],
                [0, -1, 2, -1, 0],
                [0, 0, 0, 0, 0],
            ],
            scale_num: 1,
            scale_den: 4,
        },
        SrmKernel {
            taps: [
                [-1, 2, -2, 2, -1],
                [2, -6, 8, -6, 2],
                [-2, 8, -12, 8, -2],
                [2, -6, 8, -6, 2],
                [-1, 2, -2, 2, -1],
            ],
            scale_num: 1,
            scale_den: 12,
        },
        SrmKernel {
            taps: [
                [0, 0, 0, 0, 0],
                [0, 0, 0, 0, 0],
                [0, 1, -2, 1, 0],
                [0, 0, 0, 0, 0],
                [0, 0, 0, 0, 0],
            ],
            scale_num: 1,
            scale_den: 2,
        },
    ]
}

/// H×W×3 stack of kernel responses; channel k is kernel k. Values unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTensor<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ResidualTensor<T> {
    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(i * self.width + j) * 3 + k]
    }

    pub fn channel(&self, k: usize) -> Vec<T> {
        self.data.iter().skip(k).step_by(3).copied().collect()
    }
}

#[inline]
fn reflect(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Correlate the luminance plane with each kernel (as printed, no flip),
/// reflect padding of 2 on all sides.
pub fn extract_residuals<T: Scalar>(image: &ImageTensor<T>) -> ResidualTensor<T> {
    let (h, w) = (image.height, image.width);
    let lum = image.luminance();
    let kernels = srm_kernels();
    let scales: Vec<T> = kernels
        .iter()
        .map(|k| sc::<T>(k.scale_num as f64 / k.scale_den as f64))
        .collect();
    let mut out = vec![T::zero(); h * w * 3];
    for i in 0..h {
        for j in 0..w {
            for (k, kernel) in kernels.iter().enumerate() {
                let mut acc = T::zero();
                for di in -2isize..=2 {
                    let row = reflect(i as isize + di, h) * w;
                    let taps = &kernel.taps[(di + 2) as usize];
                    for dj in -2isize..=2 {
                        let tap = taps[(dj + 2) as usize];
                        if tap != 0 {
                            let col = reflect(j as isize + dj, w);
                            acc += sc::<T>(tap as f64) * lum[row + col];
                        }
                    }
                }
                out[(i * w + j) * 3 + k] = acc * scales[k];
            }
        }
    }
    ResidualTensor {
        height: h,
        width: w,
        data: out,
    }
}
