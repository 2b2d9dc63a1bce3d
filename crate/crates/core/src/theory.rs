//! Numerical verification lab for the three analysis pillars behind the
//! residual-conditioning design:
//!
//! 1. factor-s decimation folds the 2-D spectrum into (1/s²)-scaled sums of
//!    s² shifted replicas;
//! 2. conditioning on an extra variable never decreases mutual information
//!    with the target, and strictly increases it on constructed joints;
//! 3. the variational bound (ELBO) never exceeds the evidence, with equality
//!    exactly when the variational posterior is the true posterior.
//!
//! Everything here works on finite, exactly-enumerable objects in f64, so
//! each claim is machine-checkable without estimation noise.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Pcg32;

// ---------------------------------------------------------------------------
// Spectral folding
// ---------------------------------------------------------------------------

/// N×N complex DFT coefficients, unnormalized forward transform.
#[derive(Debug, Clone)]
pub struct SpectrumGrid {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl SpectrumGrid {
    #[inline]
    pub fn at(&self, k1: usize, k2: usize) -> Complex64 {
        self.data[k1 * self.n + k2]
    }
}

fn dft_1d(input: &[Complex64], out: &mut [Complex64], sign: f64) {
    let n = input.len();
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &v) in input.iter().enumerate() {
            let angle = sign * std::f64::consts::TAU * (k * j % n) as f64 / n as f64;
            acc += v * Complex64::new(angle.cos(), angle.sin());
        }
        *slot = acc;
    }
}

/// Separable 2-D DFT of a real N×N image.
pub fn dft2(image: &[f64], n: usize) -> SpectrumGrid {
    assert_eq!(image.len(), n * n);
    let mut rows = vec![Complex64::new(0.0, 0.0); n * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out_row = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..n {
        for c in 0..n {
            buf[c] = Complex64::new(image[r * n + c], 0.0);
        }
        dft_1d(&buf, &mut out_row, -1.0);
        rows[r * n..(r + 1) * n].copy_from_slice(&out_row);
    }
    let mut data = vec![Complex64::new(0.0, 0.0); n * n];
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = rows[r * n + c];
        }
        dft_1d(&col, &mut out_row, -1.0);
        for r in 0..n {
            data[r * n + c] = out_row[r];
        }
    }
    SpectrumGrid { n, data }
}

/// Inverse 2-D DFT; returns the real part (imaginary parts of a real image's
/// round trip are rounding noise).
pub fn idft2(spectrum: &SpectrumGrid) -> Vec<f64> {
    let n = spectrum.n;
    let mut rows = vec![Complex64::new(0.0, 0.0); n * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out_row = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..n {
        buf.copy_from_slice(&spectrum.data[r * n..(r + 1) * n]);
        dft_1d(&buf, &mut out_row, 1.0);
        rows[r * n..(r + 1) * n].copy_from_slice(&out_row);
    }
    let scale = 1.0 / (n * n) as f64;
    let mut out = vec![0.0; n * n];
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = rows[r * n + c];
        }
        dft_1d(&col, &mut out_row, 1.0);
        for r in 0..n {
            out[r * n + c] = out_row[r].re * scale;
        }
    }
    out
}

/// Top-left-phase decimation x[s·i, s·j].
pub fn decimate(image: &[f64], n: usize, s: usize) -> Vec<f64> {
    let m = n / s;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = image[(s * i) * n + s * j];
        }
    }
    out
}

/// Fold an N-point spectrum to the (N/s)-point grid: (1/s²) times the sum of
/// the s² shifted replicas.
pub fn spectral_fold_predict(spectrum: &SpectrumGrid, s: usize) -> Result<SpectrumGrid> {
    if s == 0 || spectrum.n % s != 0 {
        return Err(Error::DivisibilityError(s, spectrum.n));
    }
    let n = spectrum.n;
    let m = n / s;
    let scale = 1.0 / (s * s) as f64;
    let mut data = vec![Complex64::new(0.0, 0.0); m * m];
    for m1 in 0..m {
        for m2 in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for k1 in 0..s {
                for k2 in 0..s {
                    acc += spectrum.at(m1 + k1 * m, m2 + k2 * m);
                }
            }
            data[m1 * m + m2] = acc * scale;
        }
    }
    Ok(SpectrumGrid { n: m, data })
}

/// Max elementwise |Δ| between the folding prediction and the direct DFT of
/// the decimated image.
pub fn spectral_fold_check(image: &[f64], n: usize, s: usize) -> Result<f64> {
    if s == 0 || n % s != 0 {
        return Err(Error::DivisibilityError(s, n));
    }
    let predicted = spectral_fold_predict(&dft2(image, n), s)?;
    let direct = dft2(&decimate(image, n, s), n / s);
    let mut max_err = 0.0f64;
    for (a, b) in predicted.data.iter().zip(&direct.data) {
        max_err = max_err.max((a - b).norm());
    }
    Ok(max_err)
}

// ---------------------------------------------------------------------------
// Mutual information on finite joints over (Z, F, M)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Z,
    F,
    M,
}

/// Finite joint probability table over (Z, F, M).
#[derive(Debug, Clone)]
pub struct ToyJoint {
    pub dims: [usize; 3],
    pub p: Vec<f64>,
}

impl ToyJoint {
    pub fn new(dims: [usize; 3], p: Vec<f64>) -> Result<Self> {
        if p.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidDistribution(
                "joint table size does not match dims".into(),
            ));
        }
        let mut sum = 0.0;
        for &v in &p {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
        }
        Ok(Self { dims, p })
    }

    #[inline]
    pub fn at(&self, z: usize, f: usize, m: usize) -> f64 {
        self.p[(z * self.dims[1] + f) * self.dims[2] + m]
    }

    fn group_index(&self, vars: &[Var], z: usize, f: usize, m: usize) -> usize {
        let mut idx = 0;
        for &v in vars {
            let (val, dim) = match v {
                Var::Z => (z, self.dims[0]),
                Var::F => (f, self.dims[1]),
                Var::M => (m, self.dims[2]),
            };
            idx = idx * dim + val;
        }
        idx
    }

    fn group_size(&self, vars: &[Var]) -> usize {
        vars.iter()
            .map(|v| match v {
                Var::Z => self.dims[0],
                Var::F => self.dims[1],
                Var::M => self.dims[2],
            })
            .product()
    }
}

/// Plug-in mutual information in bits between two disjoint variable groups;
/// 0·log 0 taken as 0.
pub fn mutual_information(joint: &ToyJoint, vars_a: &[Var], vars_b: &[Var]) -> Result<f64> {
    for a in vars_a {
        if vars_b.contains(a) {
            return Err(Error::InvalidDistribution(
                "variable groups must be disjoint".into(),
            ));
        }
    }
    let (na, nb) = (joint.group_size(vars_a), joint.group_size(vars_b));
    let mut pab = vec![0.0; na * nb];
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    for z in 0..joint.dims[0] {
        for f in 0..joint.dims[1] {
            for m in 0..joint.dims[2] {
                let p = joint.at(z, f, m);
                let ia = joint.group_index(vars_a, z, f, m);
                let ib = joint.group_index(vars_b, z, f, m);
                pab[ia * nb + ib] += p;
                pa[ia] += p;
                pb[ib] += p;
            }
        }
    }
    let mut mi = 0.0;
    for ia in 0..na {
        for ib in 0..nb {
            let p = pab[ia * nb + ib];
            if p > 0.0 {
                mi += p * (p / (pa[ia] * pb[ib])).log2();
            }
        }
    }
    Ok(mi)
}

/// Z and F independent uniform bits, M = Z xor F.
pub fn xor_joint() -> ToyJoint {
    let mut p = vec![0.0; 8];
    for z in 0..2 {
        for f in 0..2 {
            let m = z ^ f;
            p[(z * 2 + f) * 2 + m] = 0.25;
        }
    }
    ToyJoint::new([2, 2, 2], p).expect("xor joint is valid")
}

/// Joint where F is independent of (Z, M); conditioning on it changes nothing.
pub fn irrelevant_f_joint(seed: u64) -> ToyJoint {
    let mut rng = Pcg32::new(seed, 0x1f);
    let dims = [2usize, 2, 2];
    // random p(z, m), uniform independent f
    let mut pzm = [[0.0f64; 2]; 2];
    let mut sum = 0.0;
    for row in pzm.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.range(0.05, 1.0);
            sum += *v;
        }
    }
    let mut p = vec![0.0; 8];
    for z in 0..2 {
        for f in 0..2 {
            for m in 0..2 {
                p[(z * 2 + f) * 2 + m] = pzm[z][m] / sum * 0.5;
            }
        }
    }
    ToyJoint::new(dims, p).expect("valid")
}

/// Random joint where F is a deterministic function of an unobserved detail
/// variable U and the target M, mirroring a residual channel that reacts to
/// boundary structure the latent missed.
pub fn random_structured_joint(seed: u64) -> ToyJoint {
    let mut rng = Pcg32::new(seed, 0x901);
    let (nz, nu, nm, nf) = (3usize, 3usize, 2usize, 3usize);
    // random positive p(z, u, m)
    let mut pzum = vec![0.0; nz * nu * nm];
    let mut sum = 0.0;
    for v in pzum.iter_mut() {
        *v = rng.range(0.01, 1.0);
        sum += *v;
    }
    for v in pzum.iter_mut() {
        *v /= sum;
    }
    // deterministic lookup f = g(u, m)
    let g: Vec<usize> = (0..nu * nm).map(|_| rng.range_usize(0, nf)).collect();
    let mut p = vec![0.0; nz * nf * nm];
    for z in 0..nz {
        for u in 0..nu {
            for m in 0..nm {
                let f = g[u * nm + m];
                p[(z * nf + f) * nm + m] += pzum[(z * nu + u) * nm + m];
            }
        }
    }
    ToyJoint::new([nz, nf, nm], p).expect("valid")
}

/// Mutual information with and without the auxiliary variable:
/// (I(Z;M), I((Z,F);M)) for a seeded structured joint.
pub fn mi_gain_experiment(seed: u64) -> (f64, f64) {
    let joint = random_structured_joint(seed);
    let i_z = mutual_information(&joint, &[Var::Z], &[Var::M]).expect("valid groups");
    let i_zf = mutual_information(&joint, &[Var::Z, Var::F], &[Var::M]).expect("valid groups");
    (i_z, i_zf)
}

// ---------------------------------------------------------------------------
// ELBO on finite toy latent models
// ---------------------------------------------------------------------------

/// Finite latent model: prior p(z) over K states, likelihood p(m|z) rows,
/// variational q(z|m) rows. Natural-log convention.
#[derive(Debug, Clone)]
pub struct ToyLatentModel {
    pub prior: Vec<f64>,
    pub likelihood: Vec<Vec<f64>>, // [K][L]
    pub q: Vec<Vec<f64>>,          // [L][K]
}

fn check_dist(d: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &v in d {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidDistribution(format!("{what}: bad mass {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

impl ToyLatentModel {
    pub fn validate(&self) -> Result<()> {
        check_dist(&self.prior, "prior")?;
        for (i, row) in self.likelihood.iter().enumerate() {
            check_dist(row, &format!("likelihood row {i}"))?;
        }
        for (i, row) in self.q.iter().enumerate() {
            check_dist(row, &format!("q row {i}"))?;
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.prior.len()
    }

    /// log Σ_z p(z) p(m|z), exact.
    pub fn evidence(&self, m: usize) -> f64 {
        let mut s = 0.0;
        for (z, &pz) in self.prior.iter().enumerate() {
            s += pz * self.likelihood[z][m];
        }
        s.ln()
    }

    /// E_q[log p(m|z)] − KL(q(z|m) ‖ p(z)), exact.
    pub fn elbo(&self, m: usize) -> f64 {
        let mut value = 0.0;
        for (z, &qz) in self.q[m].iter().enumerate() {
            if qz > 0.0 {
                value += qz * (self.likelihood[z][m].ln() + (self.prior[z] / qz).ln());
            }
        }
        value
    }

    /// Exact posterior p(z|m).
    pub fn posterior(&self, m: usize) -> Vec<f64> {
        let mut post: Vec<f64> = self
            .prior
            .iter()
            .enumerate()
            .map(|(z, &pz)| pz * self.likelihood[z][m])
            .collect();
        let sum: f64 = post.iter().sum();
        for v in post.iter_mut() {
            *v /= sum;
        }
        post
    }

    /// KL(q(z|m) ‖ p(z|m)), exact.
    pub fn kl_q_posterior(&self, m: usize) -> f64 {
        let post = self.posterior(m);
        let mut kl = 0.0;
        for (z, &qz) in self.q[m].iter().enumerate() {
            if qz > 0.0 {
                kl += qz * (qz / post[z]).ln();
            }
        }
        kl
    }

    /// Replace q with the exact posterior for every observation.
    pub fn with_exact_posterior(mut self) -> Self {
        let l = self.likelihood[0].len();
        self.q = (0..l).map(|m| self.posterior(m)).collect();
        self
    }
}

fn random_simplex(rng: &mut Pcg32, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.range(0.02, 1.0)).collect();
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
    v
}

/// Random finite model with a random (generally wrong) variational q.
pub fn random_model(seed: u64, states: usize, observations: usize) -> ToyLatentModel {
    let mut rng = Pcg32::new(seed, 0xe1b0);
    ToyLatentModel {
        prior: random_simplex(&mut rng, states),
        likelihood: (0..states)
            .map(|_| random_simplex(&mut rng, observations))
            .collect(),
        q: (0..observations)
            .map(|_| random_simplex(&mut rng, states))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Suite driver and report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FoldCase {
    pub seed: u64,
    pub n: usize,
    pub s: usize,
    pub max_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MiCase {
    pub seed: u64,
    pub i_z: f64,
    pub i_zf: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElboCase {
    pub seed: u64,
    pub observation: usize,
    pub evidence: f64,
    pub elbo: f64,
    pub gap: f64,
    pub kl_from_posterior: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub fold_max_err: f64,
    pub mi_gain_min: f64,
    pub xor_gain_bits: f64,
    pub jensen_gap_min: f64,
    pub posterior_equality_max_gap: f64,
    pub kl_decomposition_max_err: f64,
    pub fold_cases: Vec<FoldCase>,
    pub mi_cases: Vec<MiCase>,
    pub elbo_cases: Vec<ElboCase>,
}

pub fn run_theory_suite(seed: u64) -> Result<TheoryReport> {
    // folding: 50 random images x s in {2, 4}
    let n = 16;
    let mut fold_cases = Vec::new();
    let mut fold_max_err = 0.0f64;
    for i in 0..50u64 {
        let mut rng = Pcg32::new(seed ^ i, 0xf01d);
        let image: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
        for s in [2usize, 4] {
            let err = spectral_fold_check(&image, n, s)?;
            fold_max_err = fold_max_err.max(err);
            fold_cases.push(FoldCase {
                seed: seed ^ i,
                n,
                s,
                max_err: err,
            });
        }
    }

    // mutual information gain over 100 structured joints plus the XOR joint
    let mut mi_cases = Vec::new();
    let mut mi_gain_min = f64::INFINITY;
    for i in 0..100u64 {
        let (i_z, i_zf) = mi_gain_experiment(seed ^ (i << 8));
        let gain = i_zf - i_z;
        mi_gain_min = mi_gain_min.min(gain);
        mi_cases.push(MiCase {
            seed: seed ^ (i << 8),
            i_z,
            i_zf,
            gain,
        });
    }
    let xor = xor_joint();
    let xor_i_z = mutual_information(&xor, &[Var::Z], &[Var::M])?;
    let xor_i_zf = mutual_information(&xor, &[Var::Z, Var::F], &[Var::M])?;
    let xor_gain_bits = xor_i_zf - xor_i_z;

    // Jensen gap over 1000 random finite toys; equality when q is the
    // exact posterior; gap equals KL(q ‖ posterior)
    let mut elbo_cases = Vec::new();
    let mut jensen_gap_min = f64::INFINITY;
    let mut posterior_equality_max_gap = 0.0f64;
    let mut kl_decomposition_max_err = 0.0f64;
    for i in 0..1000u64 {
        let model = random_model(seed ^ (i << 16), 3, 3);
        model.validate()?;
        let m = (i % 3) as usize;
        let evidence = model.evidence(m);
        let elbo = model.elbo(m);
        let gap = evidence - elbo;
        jensen_gap_min = jensen_gap_min.min(gap);
        let kl = model.kl_q_posterior(m);
        kl_decomposition_max_err = kl_decomposition_max_err.max((gap - kl).abs());
        elbo_cases.push(ElboCase {
            seed: seed ^ (i << 16),
            observation: m,
            evidence,
            elbo,
            gap,
            kl_from_posterior: kl,
        });

        let exact = model.with_exact_posterior();
        let eq_gap = (exact.evidence(m) - exact.elbo(m)).abs();
        posterior_equality_max_gap = posterior_equality_max_gap.max(eq_gap);
    }

    Ok(TheoryReport {
        fold_max_err,
        mi_gain_min,
        xor_gain_bits,
        jensen_gap_min,
        posterior_equality_max_gap,
        kl_decomposition_max_err,
        fold_cases,
        mi_cases,
        elbo_cases,
    })
}
