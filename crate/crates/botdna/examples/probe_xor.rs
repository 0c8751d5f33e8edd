//! Scratch sweep for XOR fusion training (not part of the deliverable).

use std::time::Instant;

use botdna::dna::Alphabet;
use botdna::encoders::{TextEncoder, VisionMode};
use botdna::imagify::Palette;
use botdna::models::{
    prepare_toy_data, train, FusionKind, FusionModel, ModelKind, TrainConfig,
};
use botdna::synth::{xor_corpus, SynthSizes};

fn main() {
    let corpus = xor_corpus(
        SynthSizes { train: 32, val: 16, test: 16 },
        64,
        7,
    );
    let text_encoder = TextEncoder::new(0);
    let palette = Palette::default_for(Alphabet::Type3);
    let data = prepare_toy_data(&corpus, Alphabet::Type3, &palette, &text_encoder).unwrap();

    for lr in [3e-2] {
        for seed in [0u64, 1] {
            for kind in [ModelKind::Fusion(FusionKind::Gmu), ModelKind::Fusion(FusionKind::CrossModal)] {
                let cfg = TrainConfig {
                    lr,
                    max_epochs: 80,
                    batch_size: 8,
                    early_stop_patience: 25,
                    plateau_patience: 15,
                    ..TrainConfig::default()
                };
                let t = Instant::now();
                let mut model = FusionModel::build_toy(kind, VisionMode::AlexnetShape, seed).unwrap();
                let history = train(&mut model, &data.train, &data.val, &cfg, seed).unwrap();
                let (metrics, _) = model.evaluate(&data.test).unwrap();
                println!(
                    "lr {lr} seed {seed} {kind}: acc {:.2} ({} epochs, {:?})",
                    metrics.accuracy,
                    history.train_loss.len(),
                    t.elapsed()
                );
            }
        }
    }
}
