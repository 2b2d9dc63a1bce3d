// Temporary development probe: per-epoch F1 trajectory.

use std::collections::BTreeSet;
use std::time::Instant;

use forgeloc_core::codec::CodecWeights;
use forgeloc_core::data::synth::synthesize_dataset;
use forgeloc_core::data::{load_image, load_mask, read_manifest, resolve_record_path, ForgeryKind, Split};
use forgeloc_core::metrics;
use forgeloc_core::nn::{AdamW, Params};
use forgeloc_core::objective;
use forgeloc_core::scalar::sc;
use forgeloc_core::train::{infer, warmup_lr, Localizer, ModelSpec, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let warmup: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let only: Option<ForgeryKind> = args.get(5).map(|s| ForgeryKind::parse(s).unwrap());

    let base = std::env::temp_dir().join("forgeloc-probe");
    let train_dir = base.join(format!("train{n_train}"));
    let test_dir = base.join("testc");
    let kinds: Vec<ForgeryKind> = match only {
        Some(k) => vec![k],
        None => vec![ForgeryKind::Splice, ForgeryKind::CopyMove, ForgeryKind::Inpaint],
    };
    let train_dir = train_dir.join(format!("{:?}", only));
    let test_dir = test_dir.join(format!("{:?}", only));
    synthesize_dataset::<f32>(&train_dir, n_train, 64, &kinds, 1000, Split::Train).unwrap();
    synthesize_dataset::<f32>(&test_dir, 90, 64, &kinds, 9000, Split::Test).unwrap();

    let codec = CodecWeights::<f32>::load_auto(&base.join("codec")).unwrap();
    let spec = ModelSpec::default();
    let config = TrainConfig {
        learning_rate: lr,
        warmup_epochs: warmup,
        epochs,
        batch_size: 4,
        seed: 3,
        ablation: BTreeSet::new(),
        codec_checkpoint: Some(base.join("codec")),
    };

    let tm = train_dir.join("manifest.jsonl");
    let manifest = read_manifest(&tm).unwrap();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for rec in &manifest.records {
        images.push(load_image::<f32>(&resolve_record_path(&tm, &rec.image_path)).unwrap());
        masks.push(load_mask(&resolve_record_path(&tm, &rec.mask_path)).unwrap());
    }
    let z_masks: Vec<_> = masks.iter().map(|m| codec.encode_mask(m).unwrap()).collect();

    let testm = test_dir.join("manifest.jsonl");
    let test_manifest = read_manifest(&testm).unwrap();
    let mut test_pairs = Vec::new();
    for rec in &test_manifest.records {
        test_pairs.push((
            load_image::<f32>(&resolve_record_path(&testm, &rec.image_path)).unwrap(),
            load_mask(&resolve_record_path(&testm, &rec.mask_path)).unwrap(),
            rec.forgery_kind,
        ));
    }

    let mut codec = codec;
    let mut model = Localizer::<f32>::new(spec, config.seed, config.ablation.clone()).unwrap();
    let mut opt = AdamW::new(0.01);
    let steps_per_epoch = images.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup_epochs * steps_per_epoch;
    let mut done = 0usize;

    for epoch in 0..config.epochs {
        let t = Instant::now();
        let mut tot = (0.0, 0.0);
        for batch in (0..images.len()).collect::<Vec<_>>().chunks(config.batch_size) {
            model.zero_grad();
            codec.zero_grad();
            for &i in batch {
                let pass = model.forward(&codec, &images[i]).unwrap();
                let truth = masks[i].to_prob::<f32>();
                let b = objective::total_loss(&z_masks[i], &pass.z_pred, &truth, &pass.prob).unwrap();
                tot.0 += b.lm;
                tot.1 += b.loc;
                let dz = objective::latent_matching_grad(&z_masks[i], &pass.z_pred);
                let dp = objective::dice_grad(&truth, &pass.prob);
                model.backward(&mut codec, &pass, &dz, &dp);
            }
            let inv = sc::<f32>(1.0 / batch.len() as f64);
            model.visit_mut(&mut |p| {
                for g in p.g.iter_mut() {
                    *g *= inv;
                }
            });
            done += 1;
            opt.step(&mut model, warmup_lr(config.learning_rate, done, warmup_steps));
        }
        // quick eval, grouped per forgery kind
        let mut recs = Vec::new();
        let mut lo = 1.0f64;
        let mut hi = 0.0f64;
        for (i, (img, mask, kind)) in test_pairs.iter().enumerate() {
            let prob = infer(&codec, &model, img).unwrap();
            for &v in &prob.data {
                lo = lo.min(v as f64);
                hi = hi.max(v as f64);
            }
            recs.push(
                metrics::evaluate_prediction(mask, &prob, &format!("{i:03}"), kind.as_str())
                    .unwrap(),
            );
        }
        let summary = metrics::aggregate(&recs).unwrap();
        let mean: f64 = recs.iter().map(|r| r.f1_complement_max).sum::<f64>() / recs.len() as f64;
        let per_kind: Vec<String> = summary
            .iter()
            .map(|(k, row)| format!("{k}={:.3}", row.f1_complement_max))
            .collect();
        println!(
            "epoch {epoch:02}: lm={:.4} loc={:.4} | cF1={mean:.4} [{}] prob∈[{lo:.2},{hi:.2}] ({:.0}s)",
            tot.0 / images.len() as f64,
            tot.1 / images.len() as f64,
            per_kind.join(" "),
            t.elapsed().as_secs_f32()
        );
    }
}
