// Temporary development probe: timing and quality estimates for the
// desk-scale pipeline. Not part of the deliverable surface.

use std::time::Instant;

use forgeloc_core::codec::{pretrain_codec, PretrainConfig, ShapeSpec};
use forgeloc_core::data::synth::synthesize_dataset;
use forgeloc_core::data::{read_manifest, ForgeryKind, Split};
use forgeloc_core::train::{evaluate, train, ModelSpec, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("all");

    let base = std::env::temp_dir().join("forgeloc-probe");
    let train_dir = base.join("train");
    let test_dir = base.join("test");
    let pristine_dir = base.join("pristine");

    let n_train: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let n_pristine: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3);

    let t0 = Instant::now();
    let kinds = [ForgeryKind::Splice, ForgeryKind::CopyMove, ForgeryKind::Inpaint];
    synthesize_dataset::<f32>(&train_dir, n_train, 64, &kinds, 1000, Split::Train).unwrap();
    synthesize_dataset::<f32>(&test_dir, 60, 64, &kinds, 9000, Split::Test).unwrap();
    synthesize_dataset::<f32>(&pristine_dir, n_pristine, 64, &[ForgeryKind::Pristine], 5000, Split::Train)
        .unwrap();
    println!("synthesis: {:.1}s", t0.elapsed().as_secs_f32());

    if mode == "all" || mode == "codec" {
        let t = Instant::now();
        let manifest = read_manifest(&pristine_dir.join("manifest.jsonl")).unwrap();
        let cfg = PretrainConfig {
            epochs: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8),
            seed: 7,
            spec: ShapeSpec::default(),
            ..Default::default()
        };
        let (codec, report) =
            pretrain_codec::<f32>(&manifest, &pristine_dir.join("manifest.jsonl"), &cfg).unwrap();
        println!(
            "codec pretrain ({} imgs, {} epochs): {:.1}s  mae={:.4} mask_acc={:.4}",
            n_pristine,
            cfg.epochs,
            t.elapsed().as_secs_f32(),
            report.holdout_mae,
            report.mask_accuracy
        );
        println!("epoch losses: {:?}", report.epoch_losses);
        codec
            .save(&base.join("codec"), 7, "probe", report.epoch_losses.clone())
            .unwrap();
    }

    if mode == "all" || mode == "train" {
        let t = Instant::now();
        let config = TrainConfig {
            learning_rate: 1e-4,
            warmup_epochs: 1.min(epochs),
            epochs,
            batch_size: 4,
            seed: 3,
            ablation: Default::default(),
            codec_checkpoint: Some(base.join("codec")),
        };
        let spec = ModelSpec::default();
        let outcome = train::<f32>(&config, &spec, &train_dir.join("manifest.jsonl")).unwrap();
        let elapsed = t.elapsed().as_secs_f32();
        let steps = outcome.log.len();
        println!(
            "train ({n_train} imgs, {epochs} epochs, {steps} steps): {elapsed:.1}s  ({:.3}s/step, {:.4}s/img)",
            elapsed / steps as f32,
            elapsed / (n_train * epochs) as f32
        );
        println!("epoch losses: {:?}", outcome.epoch_loss);
        let report = evaluate(
            &outcome.codec,
            &outcome.model,
            &test_dir.join("manifest.jsonl"),
            "probe",
        )
        .unwrap();
        let row = &report.summary["none"];
        println!(
            "eval: cF1={:.4} f1={:.4} iou={:.4}",
            row.f1_complement_max, row.f1, row.iou
        );
    }
}
