//! Training objective: latent matching (mean squared element difference)
//! plus soft Dice on the decoded probability map, summed with equal weight.

use serde::Serialize;

use crate::codec::LatentTensor;
use crate::data::ProbMap;
use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};

/// Denominator guard added to both numerator and denominator of the Dice
/// ratio; keeps the pristine (all-zero mask, all-zero map) case finite.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub loc: f64,
    pub total: f64,
}

/// Mean of squared element differences. The mean (rather than the raw sum)
/// keeps the loss scale independent of latent size so both objective terms
/// stay commensurate at any resolution.
pub fn latent_matching_loss<T: Scalar>(
    z_target: &LatentTensor<T>,
    z_pred: &LatentTensor<T>,
) -> Result<f64> {
    if z_target.data.len() != z_pred.data.len()
        || z_target.height != z_pred.height
        || z_target.width != z_pred.width
        || z_target.channels != z_pred.channels
    {
        return Err(Error::ShapeError("latent matching shape mismatch".into()));
    }
    let n = z_target.data.len() as f64;
    let mut acc = 0.0;
    for (&a, &b) in z_target.data.iter().zip(&z_pred.data) {
        let d = (a - b).to_f64_s();
        acc += d * d;
    }
    Ok(acc / n)
}

/// d(latent_matching_loss)/d(z_pred).
pub fn latent_matching_grad<T: Scalar>(
    z_target: &LatentTensor<T>,
    z_pred: &LatentTensor<T>,
) -> Vec<T> {
    let scale = sc::<T>(2.0 / z_target.data.len() as f64);
    z_pred
        .data
        .iter()
        .zip(&z_target.data)
        .map(|(&p, &t)| (p - t) * scale)
        .collect()
}

/// Soft Dice loss: 1 - (2·Σ(m∘m̂) + ε) / (Σm + Σm̂ + ε).
pub fn dice_loss<T: Scalar>(truth: &ProbMap<T>, pred: &ProbMap<T>) -> Result<f64> {
    if truth.height != pred.height || truth.width != pred.width {
        return Err(Error::ShapeError("dice shape mismatch".into()));
    }
    let mut inter = 0.0f64;
    let mut mass = 0.0f64;
    for (&m, &p) in truth.data.iter().zip(&pred.data) {
        inter += m.to_f64_s() * p.to_f64_s();
        mass += m.to_f64_s() + p.to_f64_s();
    }
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (mass + DICE_EPS))
}

/// d(dice_loss)/d(pred), elementwise.
pub fn dice_grad<T: Scalar>(truth: &ProbMap<T>, pred: &ProbMap<T>) -> Vec<T> {
    let mut inter = 0.0f64;
    let mut mass = 0.0f64;
    for (&m, &p) in truth.data.iter().zip(&pred.data) {
        inter += m.to_f64_s() * p.to_f64_s();
        mass += m.to_f64_s() + p.to_f64_s();
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = mass + DICE_EPS;
    // loss = 1 - num/den; d/dp_i = (num - 2 m_i den) / den^2
    truth
        .data
        .iter()
        .map(|&m| sc::<T>((num - 2.0 * m.to_f64_s() * den) / (den * den)))
        .collect()
}

pub fn total_loss<T: Scalar>(
    z_target: &LatentTensor<T>,
    z_pred: &LatentTensor<T>,
    truth: &ProbMap<T>,
    pred: &ProbMap<T>,
) -> Result<LossBreakdown> {
    let lm = latent_matching_loss(z_target, z_pred)?;
    let loc = dice_loss(truth, pred)?;
    Ok(LossBreakdown {
        lm,
        loc,
        total: lm + loc,
    })
}
