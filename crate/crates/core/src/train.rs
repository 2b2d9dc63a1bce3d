//! End-to-end training: frozen codec, trainable mapping networks, dual
//! latent-matching + Dice objective, AdamW with linear warm-up, ablation
//! switches, checkpointing, evaluation and the robustness suite driver.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    hash_str, params_hash, CheckpointManifest, CheckpointReader, CheckpointWriter,
};
use crate::codec::{CodecWeights, LatentTensor, ShapeSpec};
use crate::data::{
    read_manifest, resolve_record_path, ImageTensor, MaskTensor, ProbMap,
};
use crate::error::{Error, Result};
use crate::mapping::{
    FusionCache, FusionHead, LatentMapper, LatentMapperCache, LatentMapperConfig,
    ResidualEncoder, ResidualEncoderCache, ResidualEncoderConfig,
};
use crate::metrics::{self, EvalReport, MetricRecord};
use crate::nn::{AdamW, Param, Params};
use crate::objective::{self, LossBreakdown};
use crate::rng::{mix64, Pcg32};
use crate::robustness::{self, Perturbation, PerturbationGrid};
use crate::scalar::{sc, Scalar};
use crate::srm::extract_residuals;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Zero residual latent; the residual encoder is never run.
    NoSrmFlmm,
    /// Drop the image-latent branch; the decoder sees only the projected
    /// residual latent.
    NoVaeLmm,
    /// Pass the image latent straight to fusion.
    NoLmm,
    /// Use a randomly initialized frozen codec instead of a pretrained one.
    NoCodecPretrain,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoSrmFlmm,
        Ablation::NoVaeLmm,
        Ablation::NoLmm,
        Ablation::NoCodecPretrain,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::NoSrmFlmm => "no_srm_flmm",
            Ablation::NoVaeLmm => "no_vae_lmm",
            Ablation::NoLmm => "no_lmm",
            Ablation::NoCodecPretrain => "no_codec_pretrain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_srm_flmm" => Ok(Ablation::NoSrmFlmm),
            "no_vae_lmm" => Ok(Ablation::NoVaeLmm),
            "no_lmm" => Ok(Ablation::NoLmm),
            "no_codec_pretrain" => Ok(Ablation::NoCodecPretrain),
            other => Err(Error::ConfigError(format!("unknown ablation {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: BTreeSet<Ablation>,
    #[serde(default)]
    pub codec_checkpoint: Option<PathBuf>,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_warmup() -> usize {
    5
}
fn default_batch() -> usize {
    4
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::ConfigError("learning_rate must be > 0".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::ConfigError(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigError("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(json).map_err(|e| Error::ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Architecture description stored alongside the weights so checkpoints are
/// self-contained.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelSpec {
    pub codec: ShapeSpec,
    pub lmm: LatentMapperConfig,
    pub flmm: ResidualEncoderConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let codec = ShapeSpec::default();
        Self {
            codec,
            lmm: LatentMapperConfig::default(),
            flmm: ResidualEncoderConfig {
                patch: codec.downsample,
                out_channels: codec.latent_channels,
                ..Default::default()
            },
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        if self.flmm.patch != self.codec.downsample {
            return Err(Error::ConfigError(format!(
                "residual patch {} must equal codec downsample {} so tokens align with latent cells",
                self.flmm.patch, self.codec.downsample
            )));
        }
        Ok(())
    }
}

/// Trainable mapping networks plus the wiring mode.
pub struct Localizer<T> {
    pub lmm: LatentMapper<T>,
    pub flmm: ResidualEncoder<T>,
    pub fusion: FusionHead<T>,
    pub ablation: BTreeSet<Ablation>,
    pub spec: ModelSpec,
}

pub struct ForwardCaches<T> {
    lmm: Option<LatentMapperCache<T>>,
    flmm: Option<ResidualEncoderCache<T>>,
    fusion: FusionCache<T>,
    dec: crate::codec::DecoderCache<T>,
    z_latent_dims: (usize, usize, usize),
}

pub struct ForwardPass<T> {
    pub z_pred: LatentTensor<T>,
    pub prob: ProbMap<T>,
    pub decoded: ImageTensor<T>,
    caches: ForwardCaches<T>,
}

impl<T: Scalar> Localizer<T> {
    pub fn new(spec: ModelSpec, seed: u64, ablation: BTreeSet<Ablation>) -> Result<Self> {
        spec.validate()?;
        let mut rng = Pcg32::new(seed, 0x10ca1);
        let c = spec.codec.latent_channels;
        let lmm = LatentMapper::new(spec.lmm, c, &mut rng);
        let nominal = (spec.codec.height, spec.codec.width);
        let flmm = ResidualEncoder::new(spec.flmm, nominal, &mut rng);
        let fusion = FusionHead::new(c, spec.flmm.out_channels, &mut rng);
        Ok(Self {
            lmm,
            flmm,
            fusion,
            ablation,
            spec,
        })
    }

    fn ablated(&self, a: Ablation) -> bool {
        self.ablation.contains(&a)
    }

    /// Full differentiable pass: image -> fused latent -> decoded map.
    pub fn forward(
        &self,
        codec: &CodecWeights<T>,
        image: &ImageTensor<T>,
    ) -> Result<ForwardPass<T>> {
        let z_i = codec.encode(image)?;
        let dims = (z_i.height, z_i.width, z_i.channels);

        let (z_mapped, lmm_cache) = if self.ablated(Ablation::NoVaeLmm) {
            (
                LatentTensor::zeros(dims.0, dims.1, dims.2),
                None,
            )
        } else if self.ablated(Ablation::NoLmm) {
            (z_i, None)
        } else {
            let (z, cache) = self.lmm.forward(&z_i)?;
            (z, Some(cache))
        };

        let (z_f, flmm_cache) = if self.ablated(Ablation::NoSrmFlmm) {
            (
                LatentTensor::zeros(dims.0, dims.1, self.spec.flmm.out_channels),
                None,
            )
        } else {
            let residual = extract_residuals(image);
            let (z, cache) = self.flmm.forward(&residual)?;
            (z, Some(cache))
        };

        let (z_pred, fusion_cache) = self.fusion.forward(&z_mapped, &z_f)?;
        let (decoded_data, dec_cache) =
            codec.decoder.forward(&z_pred.data, z_pred.height, z_pred.width);
        let decoded = ImageTensor {
            height: z_pred.height * self.spec.codec.downsample,
            width: z_pred.width * self.spec.codec.downsample,
            data: decoded_data,
        };
        let prob = metrics::channel_mean(&decoded);
        Ok(ForwardPass {
            z_pred,
            prob,
            decoded,
            caches: ForwardCaches {
                lmm: lmm_cache,
                flmm: flmm_cache,
                fusion: fusion_cache,
                dec: dec_cache,
                z_latent_dims: dims,
            },
        })
    }

    /// Accumulate parameter gradients from d(loss)/d(z_pred) and
    /// d(loss)/d(prob map). The codec stays frozen: its decoder only routes
    /// gradients through to the fused latent.
    pub fn backward(
        &mut self,
        codec: &mut CodecWeights<T>,
        pass: &ForwardPass<T>,
        d_z_pred_direct: &[T],
        d_prob: &[T],
    ) {
        // probability map is the channel mean of the decoded image
        let third = sc::<T>(1.0 / 3.0);
        let mut d_decoded = vec![T::zero(); pass.decoded.data.len()];
        for (px, &g) in d_decoded.chunks_exact_mut(3).zip(d_prob.iter()) {
            let v = g * third;
            px[0] = v;
            px[1] = v;
            px[2] = v;
        }
        let d_z_from_dice = codec.decoder.backward(&pass.caches.dec, &d_decoded);
        let mut d_z = d_z_from_dice;
        for (a, &b) in d_z.iter_mut().zip(d_z_pred_direct) {
            *a += b;
        }

        let (d_mapped, d_zf) = self.fusion.backward(&pass.caches.fusion, &d_z);
        if let Some(cache) = &pass.caches.flmm {
            self.flmm.backward(cache, &d_zf);
        }
        if let Some(cache) = &pass.caches.lmm {
            self.lmm.backward(cache, &d_mapped);
        }
        let _ = pass.caches.z_latent_dims;
    }
}

impl<T: Scalar> Params<T> for Localizer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.lmm.visit(f);
        self.flmm.visit(f);
        self.fusion.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.lmm.visit_mut(f);
        self.flmm.visit_mut(f);
        self.fusion.visit_mut(f);
    }
}

/// Linear warm-up: at the t-th completed optimizer step (1-based) the rate is
/// `base * min(1, t / warmup_steps)`, reaching exactly `base` at warm-up end.
pub fn warmup_lr(base: f64, completed_steps: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 || completed_steps >= warmup_steps {
        base
    } else {
        base * completed_steps as f64 / warmup_steps as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogLine {
    pub epoch: usize,
    pub step: usize,
    pub lm: f64,
    pub loc: f64,
    pub total: f64,
    pub lr: f64,
}

pub struct TrainOutcome<T> {
    pub model: Localizer<T>,
    pub codec: CodecWeights<T>,
    pub log: Vec<TrainLogLine>,
    pub epoch_loss: Vec<f64>,
    pub codec_hash: String,
}

struct LoadedPair<T> {
    id: String,
    image: ImageTensor<T>,
    mask: MaskTensor,
}

fn load_pairs<T: Scalar>(manifest_path: &Path) -> Result<Vec<LoadedPair<T>>> {
    let manifest = read_manifest(manifest_path)?;
    let mut pairs = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let image = crate::data::load_image(&resolve_record_path(manifest_path, &rec.image_path))?;
        let mask = crate::data::load_mask(&resolve_record_path(manifest_path, &rec.mask_path))?;
        crate::data::check_pair(&image, &mask)?;
        let id = Path::new(&rec.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rec.image_path.clone());
        pairs.push(LoadedPair { id, image, mask });
    }
    Ok(pairs)
}

/// Resolve the frozen codec for a training run.
fn codec_for_training<T: Scalar>(config: &TrainConfig, spec: &ModelSpec) -> Result<CodecWeights<T>> {
    if config.ablation.contains(&Ablation::NoCodecPretrain) {
        let mut codec = CodecWeights::random(spec.codec, mix64(config.seed ^ 0xbadc0dec))?;
        codec.freeze();
        Ok(codec)
    } else {
        let path = config.codec_checkpoint.as_ref().ok_or_else(|| {
            Error::ConfigError("codec_checkpoint required unless ablation no_codec_pretrain".into())
        })?;
        let stored = CodecWeights::<T>::load_spec(path)?;
        if stored != spec.codec {
            return Err(Error::ConfigError(format!(
                "codec checkpoint geometry {stored:?} does not match model spec {:?}",
                spec.codec
            )));
        }
        CodecWeights::load(path, spec.codec)
    }
}

pub fn train<T: Scalar>(
    config: &TrainConfig,
    spec: &ModelSpec,
    train_manifest: &Path,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    spec.validate()?;
    let pairs = load_pairs::<T>(train_manifest)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("training manifest has no records".into()));
    }

    let mut codec = codec_for_training::<T>(config, spec)?;
    let hash_before = codec.content_hash();

    // latents are fixed under the frozen codec: compute once
    let mut z_images = Vec::with_capacity(pairs.len());
    let mut z_masks = Vec::with_capacity(pairs.len());
    for p in &pairs {
        z_images.push(codec.encode(&p.image)?);
        z_masks.push(codec.encode_mask(&p.mask)?);
    }

    let mut model = Localizer::<T>::new(*spec, config.seed, config.ablation.clone())?;
    let mut opt = AdamW::new(0.01);
    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup_epochs * steps_per_epoch;

    let mut log = Vec::new();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut completed_steps = 0usize;

    for epoch in 0..config.epochs {
        let mut epoch_total = 0.0;
        for (step, batch_indices) in (0..pairs.len())
            .collect::<Vec<_>>()
            .chunks(config.batch_size)
            .enumerate()
        {
            model.zero_grad();
            codec.zero_grad();
            let mut batch_loss = LossBreakdown {
                lm: 0.0,
                loc: 0.0,
                total: 0.0,
            };
            for &i in batch_indices {
                let pass = model.forward(&codec, &pairs[i].image)?;
                let truth_prob = pairs[i].mask.to_prob::<T>();
                let breakdown =
                    objective::total_loss(&z_masks[i], &pass.z_pred, &truth_prob, &pass.prob)?;
                if !breakdown.total.is_finite() {
                    let ids: Vec<&str> =
                        batch_indices.iter().map(|&j| pairs[j].id.as_str()).collect();
                    return Err(Error::NonFiniteLoss(format!(
                        "epoch {epoch} step {step}, batch [{}]",
                        ids.join(", ")
                    )));
                }
                batch_loss.lm += breakdown.lm;
                batch_loss.loc += breakdown.loc;
                batch_loss.total += breakdown.total;

                let d_z = objective::latent_matching_grad(&z_masks[i], &pass.z_pred);
                let d_prob = objective::dice_grad(&truth_prob, &pass.prob);
                model.backward(&mut codec, &pass, &d_z, &d_prob);
            }
            let inv = sc::<T>(1.0 / batch_indices.len() as f64);
            model.visit_mut(&mut |p| {
                for g in p.g.iter_mut() {
                    *g = *g * inv;
                }
            });
            completed_steps += 1;
            let lr = warmup_lr(config.learning_rate, completed_steps, warmup_steps);
            opt.step(&mut model, lr);

            let n = batch_indices.len() as f64;
            batch_loss.lm /= n;
            batch_loss.loc /= n;
            batch_loss.total /= n;
            epoch_total += batch_loss.total;
            log.push(TrainLogLine {
                epoch,
                step,
                lm: batch_loss.lm,
                loc: batch_loss.loc,
                total: batch_loss.total,
                lr,
            });
        }
        epoch_loss.push(epoch_total / steps_per_epoch as f64);
    }

    let hash_after = codec.content_hash();
    if hash_after != hash_before {
        return Err(Error::CodecHashMismatch {
            expected: hash_before,
            actual: hash_after,
        });
    }

    Ok(TrainOutcome {
        model,
        codec,
        log,
        epoch_loss,
        codec_hash: hash_after,
    })
}

/// Probability map for one image under a trained model.
pub fn infer<T: Scalar>(
    codec: &CodecWeights<T>,
    model: &Localizer<T>,
    image: &ImageTensor<T>,
) -> Result<ProbMap<T>> {
    Ok(model.forward(codec, image)?.prob)
}

/// Plain evaluation: per-image metrics at threshold 0.5 plus the aggregate,
/// everything tagged `none`.
pub fn evaluate<T: Scalar>(
    codec: &CodecWeights<T>,
    model: &Localizer<T>,
    manifest_path: &Path,
    config_hash: &str,
) -> Result<EvalReport> {
    let pairs = load_pairs::<T>(manifest_path)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("evaluation manifest has no records".into()));
    }
    let mut records = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let prob = infer(codec, model, &p.image)?;
        records.push(metrics::evaluate_prediction(&p.mask, &prob, &p.id, "none")?);
    }
    EvalReport::build(config_hash, records)
}

/// Robustness suite: every (image, perturbation) cell, inference on the
/// perturbed input, metrics grouped per cell label.
pub fn run_robustness_suite<T: Scalar>(
    codec: &CodecWeights<T>,
    model: &Localizer<T>,
    manifest_path: &Path,
    grid: &PerturbationGrid,
    suite_seed: u64,
    config_hash: &str,
) -> Result<EvalReport> {
    let pairs = load_pairs::<T>(manifest_path)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("robustness manifest has no records".into()));
    }
    let cells = grid.cells(suite_seed);
    let s = model.spec.codec.downsample;
    let mut records: Vec<MetricRecord> = Vec::with_capacity(pairs.len() * cells.len());
    for (idx, p) in pairs.iter().enumerate() {
        for cell in &cells {
            // per-image noise stream
            let cell = match cell {
                Perturbation::GaussianNoise { sigma, seed } => Perturbation::GaussianNoise {
                    sigma: *sigma,
                    seed: mix64(seed ^ (idx as u64 + 1)),
                },
                other => *other,
            };
            let (img, mask) = robustness::apply(&cell, &p.image, &p.mask, s)?;
            let prob = infer(codec, model, &img)?;
            records.push(metrics::evaluate_prediction(
                &mask,
                &prob,
                &p.id,
                &cell.label(),
            )?);
        }
    }
    EvalReport::build(config_hash, records)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub variant: String,
    pub complement_f1: f64,
    pub f1: f64,
    pub iou: f64,
}

/// Train the full model plus each requested ablation variant with an
/// identical seed and budget, then score all of them on the same held-out
/// manifest. Results keep the requested order, full model first.
pub fn run_ablation<T: Scalar>(
    base: &TrainConfig,
    spec: &ModelSpec,
    train_manifest: &Path,
    test_manifest: &Path,
    variants: &[Ablation],
) -> Result<Vec<AblationResult>> {
    let mut results = Vec::with_capacity(variants.len() + 1);
    let run = |label: String, ablation: BTreeSet<Ablation>| -> Result<AblationResult> {
        let mut config = base.clone();
        config.ablation = ablation;
        let outcome = train::<T>(&config, spec, train_manifest)?;
        let report = evaluate(&outcome.codec, &outcome.model, test_manifest, "ablation")?;
        let row = &report.summary["none"];
        Ok(AblationResult {
            variant: label,
            complement_f1: row.f1_complement_max,
            f1: row.f1,
            iou: row.iou,
        })
    };
    results.push(run("full".into(), base.ablation.clone())?);
    for v in variants {
        let mut set = base.ablation.clone();
        set.insert(*v);
        results.push(run(v.as_str().into(), set)?);
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// Model checkpointing (mapping nets + embedded frozen codec)
// ---------------------------------------------------------------------------

pub fn config_hash(config: &TrainConfig, spec: &ModelSpec) -> String {
    let blob = serde_json::to_string(&(config, spec)).expect("config serializes");
    hash_str(&blob)
}

pub fn save_model<T: Scalar>(
    dir: &Path,
    model: &Localizer<T>,
    codec: &CodecWeights<T>,
    config: &TrainConfig,
    spec: &ModelSpec,
    epoch: u32,
    loss_history: Vec<f64>,
) -> Result<()> {
    let mut writer = CheckpointWriter::new();
    writer.add_module(model);
    writer.add_module(codec);
    writer.write(
        dir,
        CheckpointManifest {
            version: 1,
            kind: "model".into(),
            dtype: "f32".into(),
            seed: config.seed,
            config_hash: config_hash(config, spec),
            codec_hash: Some(params_hash(codec)),
            epoch: Some(epoch),
            loss_history,
            ablation: config
                .ablation
                .iter()
                .map(|a| a.as_str().to_string())
                .collect(),
            tensors: vec![],
        },
    )?;
    // architecture sidecar so checkpoints are self-contained
    let spec_json = serde_json::to_string_pretty(spec)?;
    std::fs::write(dir.join("model_spec.json"), spec_json)?;
    Ok(())
}

pub fn load_model<T: Scalar>(dir: &Path) -> Result<(Localizer<T>, CodecWeights<T>, CheckpointManifest)> {
    let spec_path = dir.join("model_spec.json");
    let spec_json = std::fs::read_to_string(&spec_path)
        .map_err(|_| Error::FileMissing(spec_path.clone()))?;
    let spec: ModelSpec = serde_json::from_str(&spec_json)
        .map_err(|e| Error::CheckpointError(format!("bad model_spec.json: {e}")))?;
    let reader = CheckpointReader::open(dir)?;
    if reader.manifest.kind != "model" {
        return Err(Error::CheckpointError(format!(
            "expected model checkpoint, found kind {}",
            reader.manifest.kind
        )));
    }
    let mut ablation = BTreeSet::new();
    for a in &reader.manifest.ablation {
        ablation.insert(Ablation::parse(a)?);
    }
    let mut model = Localizer::<T>::new(spec, reader.manifest.seed, ablation)?;
    let mut cursor = 0usize;
    reader.load_module(&mut model, &mut cursor)?;
    let mut codec = CodecWeights::<T>::random(spec.codec, 0)?;
    reader.load_module(&mut codec, &mut cursor)?;
    codec.freeze();

    let actual = params_hash(&codec);
    if let Some(expected) = &reader.manifest.codec_hash {
        if expected != &actual {
            return Err(Error::CodecHashMismatch {
                expected: expected.clone(),
                actual,
            });
        }
    }
    let manifest = reader.manifest.clone();
    Ok((model, codec, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synthesize_dataset;
    use crate::data::{ForgeryKind, Split};

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            codec: ShapeSpec {
                width: 32,
                height: 32,
                channels: 3,
                downsample: 4,
                latent_channels: 16,
            },
            lmm: LatentMapperConfig {
                blocks: 1,
                width: 8,
            },
            flmm: ResidualEncoderConfig {
                patch: 4,
                dim: 16,
                blocks: 1,
                heads: 2,
                mlp_hidden: 16,
                out_channels: 16,
            },
        }
    }

    fn tiny_dataset(name: &str, count: usize, seed: u64) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "forgeloc-train-{name}-{}-{count}",
            std::process::id()
        ));
        synthesize_dataset::<f32>(
            &dir,
            count,
            32,
            &[ForgeryKind::Splice, ForgeryKind::CopyMove],
            seed,
            Split::Train,
        )
        .unwrap();
        dir.join("manifest.jsonl")
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            warmup_epochs: 1,
            epochs,
            batch_size: 4,
            seed: 11,
            ablation: [Ablation::NoCodecPretrain].into_iter().collect(),
            codec_checkpoint: None,
        }
    }

    #[test]
    fn warmup_schedule_shape() {
        let base = 1e-4;
        let w = 10;
        for t in 1..w {
            let lr = warmup_lr(base, t, w);
            assert!((lr - base * t as f64 / w as f64).abs() < 1e-18);
        }
        assert_eq!(warmup_lr(base, w, w), base);
        assert_eq!(warmup_lr(base, w + 5, w), base);
        assert_eq!(warmup_lr(base, 3, 0), base);
    }

    #[test]
    fn config_json_rejects_unknown_keys_and_bad_values() {
        let ok = TrainConfig::from_json(r#"{"epochs": 10}"#).unwrap();
        assert_eq!(ok.learning_rate, 1e-4);
        assert_eq!(ok.warmup_epochs, 5);
        assert_eq!(ok.batch_size, 4);

        assert!(TrainConfig::from_json(r#"{"epochs": 10, "nope": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"epochs": 10, "learning_rate": 0.0}"#).is_err());
        // warm-up must fit inside the epoch budget
        assert!(TrainConfig::from_json(r#"{"epochs": 2, "warmup_epochs": 5}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"epochs": 3}"#).is_err());
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let manifest = tiny_dataset("det", 8, 100);
        let config = tiny_config(2);
        let spec = tiny_spec();
        let a = train::<f32>(&config, &spec, &manifest).unwrap();
        let b = train::<f32>(&config, &spec, &manifest).unwrap();
        let wa = crate::nn::export_params(&a.model);
        let wb = crate::nn::export_params(&b.model);
        assert_eq!(wa, wb, "same config + seed must give identical weights");
        assert_eq!(a.codec_hash, b.codec_hash);
        assert_eq!(a.log.len(), 2 * 2); // 8 records / batch 4 = 2 steps/epoch
    }

    #[test]
    fn codec_hash_unchanged_by_training() {
        let manifest = tiny_dataset("hash", 8, 200);
        let config = tiny_config(1);
        let spec = tiny_spec();
        let outcome = train::<f32>(&config, &spec, &manifest).unwrap();
        assert_eq!(outcome.codec.content_hash(), outcome.codec_hash);
    }

    #[test]
    fn no_srm_flmm_leaves_flmm_gradients_zero() {
        let manifest = tiny_dataset("abl", 4, 300);
        let mut config = tiny_config(1);
        config.ablation.insert(Ablation::NoSrmFlmm);
        let spec = tiny_spec();
        let pairs = load_pairs::<f64>(&manifest).unwrap();
        let mut codec = codec_for_training::<f64>(&config, &spec).unwrap();
        let mut model =
            Localizer::<f64>::new(spec, config.seed, config.ablation.clone()).unwrap();
        model.zero_grad();
        let pass = model.forward(&codec, &pairs[0].image).unwrap();
        let z_m = codec.encode_mask(&pairs[0].mask).unwrap();
        let truth = pairs[0].mask.to_prob::<f64>();
        let d_z = objective::latent_matching_grad(&z_m, &pass.z_pred);
        let d_prob = objective::dice_grad(&truth, &pass.prob);
        model.backward(&mut codec, &pass, &d_z, &d_prob);
        model.flmm.visit(&mut |p| {
            assert!(p.g.iter().all(|&g| g == 0.0), "{} has gradient", p.name);
        });
        // and the trainable branches do receive gradient
        let mut lmm_norm = 0.0;
        model.lmm.visit(&mut |p| {
            lmm_norm += p.g.iter().map(|g| g * g).sum::<f64>();
        });
        assert!(lmm_norm > 0.0);
    }

    #[test]
    fn infer_output_contract() {
        let manifest = tiny_dataset("infer", 4, 400);
        let config = tiny_config(1);
        let spec = tiny_spec();
        let outcome = train::<f32>(&config, &spec, &manifest).unwrap();
        let pairs = load_pairs::<f32>(&manifest).unwrap();
        let prob = infer(&outcome.codec, &outcome.model, &pairs[0].image).unwrap();
        assert_eq!((prob.height, prob.width), (32, 32));
        assert!(prob.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let again = infer(&outcome.codec, &outcome.model, &pairs[0].image).unwrap();
        assert_eq!(prob.data, again.data);
    }

    #[test]
    fn evaluate_empty_manifest_rejected() {
        let dir = std::env::temp_dir().join(format!("forgeloc-empty-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let manifest = crate::data::DatasetManifest::new(Split::Test);
        let path = dir.join("manifest.jsonl");
        crate::data::write_manifest(&manifest, &path).unwrap();

        let train_manifest = tiny_dataset("empty", 4, 500);
        let config = tiny_config(1);
        let spec = tiny_spec();
        let outcome = train::<f32>(&config, &spec, &train_manifest).unwrap();
        assert!(matches!(
            evaluate(&outcome.codec, &outcome.model, &path, "x"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_codec_hash_guard() {
        let manifest = tiny_dataset("ckpt", 4, 600);
        let config = tiny_config(1);
        let spec = tiny_spec();
        let outcome = train::<f32>(&config, &spec, &manifest).unwrap();
        let dir = std::env::temp_dir().join(format!("forgeloc-model-{}", std::process::id()));
        save_model(
            &dir,
            &outcome.model,
            &outcome.codec,
            &config,
            &spec,
            config.epochs as u32,
            outcome.epoch_loss.clone(),
        )
        .unwrap();
        let (model2, codec2, manifest2) = load_model::<f32>(&dir).unwrap();
        assert_eq!(
            crate::nn::export_params(&outcome.model),
            crate::nn::export_params(&model2)
        );
        assert_eq!(codec2.content_hash(), outcome.codec_hash);
        assert_eq!(manifest2.ablation, vec!["no_codec_pretrain".to_string()]);

        // predictions agree after reload
        let pairs = load_pairs::<f32>(&manifest).unwrap();
        let a = infer(&outcome.codec, &outcome.model, &pairs[1].image).unwrap();
        let b = infer(&codec2, &model2, &pairs[1].image).unwrap();
        assert_eq!(a.data, b.data);

        // corrupt the codec bytes: hash guard must fire
        let weights = dir.join(crate::checkpoint::WEIGHTS_FILE);
        let mut bytes = std::fs::read(&weights).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&weights, bytes).unwrap();
        assert!(matches!(
            load_model::<f32>(&dir),
            Err(Error::CodecHashMismatch { .. })
        ));
    }

    #[test]
    fn full_pipeline_gradients_match_fd_on_8x8() {
        // 8x8 image instance in f64, reduced widths; the loss is the real
        // training objective (latent matching + dice)
        let spec = ModelSpec {
            codec: ShapeSpec {
                width: 8,
                height: 8,
                channels: 3,
                downsample: 4,
                latent_channels: 16,
            },
            lmm: LatentMapperConfig {
                blocks: 1,
                width: 6,
            },
            flmm: ResidualEncoderConfig {
                patch: 4,
                dim: 8,
                blocks: 1,
                heads: 2,
                mlp_hidden: 12,
                out_channels: 8,
            },
        };
        let mut codec = CodecWeights::<f64>::random(spec.codec, 5).unwrap();
        codec.freeze();
        let mut model = Localizer::<f64>::new(spec, 9, BTreeSet::new()).unwrap();
        // nudge the zero-initialized lmm tail so its gradient path is active
        let mut rng = Pcg32::seeded(77);
        model.visit_mut(&mut |p| {
            for v in p.w.iter_mut() {
                *v += rng.range(-0.02, 0.02);
            }
        });

        let (big, mask64, _) =
            synthesize_forgery::<f64>(21, ForgeryKind::Splice, 64, 64).unwrap();
        let mut image = ImageTensor::<f64>::zeros(8, 8);
        let mut mask = MaskTensor::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                for c in 0..3 {
                    *image.at_mut(i, j, c) = big.at(i + 20, j + 20, c);
                }
                mask.data[i * 8 + j] = mask64.at(i + 20, j + 20);
            }
        }
        let z_m = codec.encode_mask(&mask).unwrap();
        let truth = mask.to_prob::<f64>();

        let codec_cell = std::cell::RefCell::new(codec);
        let loss_of = |m: &mut Localizer<f64>| -> f64 {
            let codec = codec_cell.borrow();
            let pass = m.forward(&codec, &image).unwrap();
            objective::total_loss(&z_m, &pass.z_pred, &truth, &pass.prob)
                .unwrap()
                .total
        };
        model.zero_grad();
        {
            let mut codec = codec_cell.borrow_mut();
            codec.zero_grad();
            let pass = model.forward(&codec, &image).unwrap();
            let d_z = objective::latent_matching_grad(&z_m, &pass.z_pred);
            let d_prob = objective::dice_grad(&truth, &pass.prob);
            model.backward(&mut codec, &pass, &d_z, &d_prob);
        }
        let report = crate::nn::grad_check(&mut model, loss_of, 1e-5);
        assert!(
            report.max_rel_err <= 1e-4,
            "pipeline gradcheck failed: {:?}",
            report
        );
    }

    use crate::data::synth::synthesize_forgery;
}
