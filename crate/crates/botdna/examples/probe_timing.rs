//! Scratch timing probe for the training pipeline (not part of the
//! deliverable surface; run with `cargo run --example probe_timing`).

use std::time::Instant;

use botdna::dna::Alphabet;
use botdna::encoders::{TextEncoder, VisionMode};
use botdna::imagify::Palette;
use botdna::models::{
    prepare_toy_data, train, FusionKind, FusionModel, ModelKind, TrainConfig,
};
use botdna::synth::{learnable_corpus, xor_corpus, SynthSizes};

fn main() {
    let t0 = Instant::now();
    let corpus = learnable_corpus(
        SynthSizes {
            train: 600,
            val: 200,
            test: 200,
        },
        100,
        42,
    );
    println!("corpus generated in {:?}", t0.elapsed());

    let text_encoder = TextEncoder::new(0);
    let palette = Palette::default_for(Alphabet::Type3);
    let t1 = Instant::now();
    let data = prepare_toy_data(&corpus, Alphabet::Type3, &palette, &text_encoder).unwrap();
    println!("data prepared in {:?}", t1.elapsed());

    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let t2 = Instant::now();
    let mut model = FusionModel::build_toy(
        ModelKind::Fusion(FusionKind::Concat),
        VisionMode::Vgg16Shape,
        0,
    )
    .unwrap();
    println!("model built in {:?}", t2.elapsed());

    let t3 = Instant::now();
    let history = train(&mut model, &data.train, &data.val, &cfg, 0).unwrap();
    println!(
        "trained {} epochs in {:?} (chosen {}, early {})",
        history.train_loss.len(),
        t3.elapsed(),
        history.chosen_epoch,
        history.stopped_early
    );
    println!("train losses: {:?}", history.train_loss);
    println!("val losses:   {:?}", history.val_loss);
    let (metrics, confusion) = model.evaluate(&data.test).unwrap();
    println!("test acc {:.4} f1 {:.4} ({confusion:?})", metrics.accuracy, metrics.f1);

    // XOR probe
    let xcorpus = xor_corpus(
        SynthSizes {
            train: 64,
            val: 16,
            test: 16,
        },
        64,
        7,
    );
    let xdata = prepare_toy_data(&xcorpus, Alphabet::Type3, &palette, &text_encoder).unwrap();
    let xcfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 60,
        batch_size: 8,
        early_stop_patience: 12,
        plateau_patience: 8,
        ..TrainConfig::default()
    };
    for kind in [
        ModelKind::Fusion(FusionKind::CrossModal),
        ModelKind::Fusion(FusionKind::Gmu),
        ModelKind::TextOnly,
        ModelKind::VisionOnly,
    ] {
        let t = Instant::now();
        let mut model = FusionModel::build_toy(kind, VisionMode::AlexnetShape, 0).unwrap();
        let history = train(&mut model, &xdata.train, &xdata.val, &xcfg, 0).unwrap();
        let (metrics, _) = model.evaluate(&xdata.test).unwrap();
        println!(
            "XOR {kind}: acc {:.4} after {} epochs in {:?}",
            metrics.accuracy,
            history.train_loss.len(),
            t.elapsed()
        );
    }
}
