//! Head-only XOR probe on precomputed features (scratch).

use botdna::encoders::{VisionMode, D_MODEL};
use botdna::models::{
    train, Datasets, FusionKind, FusionModel, ModelKind, Sample, SampleInput, TrainConfig,
};
use botdna::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn direction(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..D_MODEL).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn datasets(per_combo: usize, scale: f64, seed: u64) -> Datasets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_t = direction(&mut rng, scale);
    let delta_t = direction(&mut rng, scale);
    let base_v = direction(&mut rng, scale);
    let delta_v = direction(&mut rng, scale);
    let make = |n: usize| -> Vec<Sample> {
        let mut out = Vec::new();
        for i in 0..n {
            let bt = i % 2 == 1;
            let bv = (i / 2) % 2 == 1;
            let label = u8::from(bt ^ bv);
            let sign_t = if bt { 1.0 } else { -1.0 };
            let sign_v = if bv { 1.0 } else { -1.0 };
            let ft: Vec<f64> = base_t.iter().zip(&delta_t).map(|(b, d)| b + sign_t * d).collect();
            let fv: Vec<f64> = base_v.iter().zip(&delta_v).map(|(b, d)| b + sign_v * d).collect();
            out.push(Sample {
                user_id: format!("u{i}"),
                label,
                input: SampleInput::Precomputed {
                    text: Tensor::from_vec(&[1, D_MODEL], ft).unwrap(),
                    vision: Tensor::from_vec(&[1, D_MODEL], fv).unwrap(),
                },
            });
        }
        out
    };
    Datasets {
        train: make(per_combo * 4),
        val: make(8),
        test: make(8),
    }
}

fn main() {
    for scale in [0.05, 0.3, 1.0] {
        for lr in [3e-3, 1e-2, 3e-2] {
            for kind in [
                ModelKind::Fusion(FusionKind::Gmu),
                ModelKind::Fusion(FusionKind::Concat),
                ModelKind::Fusion(FusionKind::CrossModal),
            ] {
                let data = datasets(4, scale, 11);
                let cfg = TrainConfig {
                    lr,
                    max_epochs: 400,
                    batch_size: 8,
                    early_stop_patience: 400,
                    plateau_patience: 400,
                    ..TrainConfig::default()
                };
                let mut model =
                    FusionModel::build_precomputed(kind, VisionMode::AlexnetShape, 0).unwrap();
                let history = train(&mut model, &data.train, &data.val, &cfg, 0).unwrap();
                let (metrics, _) = model.evaluate(&data.test).unwrap();
                let first_good = history
                    .val_loss
                    .iter()
                    .position(|&l| l < 0.1)
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "never".into());
                println!(
                    "scale {scale} lr {lr} {kind}: acc {:.2}, val<0.1 at epoch {first_good}, final val {:.4}",
                    metrics.accuracy,
                    history.val_loss.last().unwrap()
                );
            }
        }
    }
}
