//! Diagnoses the XOR stall: trains GMU/CrossModal on (a) frozen
//! toy-encoder features and (b) the full joint pipeline (scratch).

use botdna::dna::Alphabet;
use botdna::encoders::{TextEncoder, VisionMode};
use botdna::imagify::Palette;
use botdna::models::{
    prepare_toy_data, train, Datasets, FusionKind, FusionModel, ModelKind, Sample, SampleInput,
    TrainConfig,
};
use botdna::synth::{xor_corpus, SynthSizes};

fn main() {
    let corpus = xor_corpus(
        SynthSizes {
            train: 32,
            val: 16,
            test: 16,
        },
        64,
        7,
    );
    let text_encoder = TextEncoder::new(0);
    let palette = Palette::default_for(Alphabet::Type3);
    let data = prepare_toy_data(&corpus, Alphabet::Type3, &palette, &text_encoder).unwrap();

    // frozen features: run the init-state toy encoders once per sample
    let frozen_model = FusionModel::build_toy(
        ModelKind::Fusion(FusionKind::CrossModal),
        VisionMode::AlexnetShape,
        0,
    )
    .unwrap();
    let freeze = |samples: &[Sample]| -> Vec<Sample> {
        samples
            .iter()
            .map(|s| {
                let SampleInput::Toy { bags, image } = &s.input else {
                    panic!()
                };
                let vision_enc = botdna::encoders::VisionEncoder::new(VisionMode::AlexnetShape);
                let resized = botdna::imagify::resize_nn(image, 256).unwrap();
                let mut g = botdna::tensor::Graph::new();
                let nodes = frozen_model
                    .text_encoder()
                    .unwrap()
                    .forward(&mut g, &frozen_model.store, bags)
                    .unwrap();
                let img_in = g.input(vision_enc.image_input(&resized).unwrap());
                let vseq = vision_enc
                    .forward_sequence(&mut g, &frozen_model.store, img_in)
                    .unwrap();
                Sample {
                    user_id: s.user_id.clone(),
                    label: s.label,
                    input: SampleInput::Precomputed {
                        text: g.value(nodes.sequence).clone(),
                        vision: g.value(vseq).clone(),
                    },
                }
            })
            .collect()
    };
    let frozen = Datasets {
        train: freeze(&data.train),
        val: freeze(&data.val),
        test: freeze(&data.test),
    };

    for (name, plan) in [("frozen", &frozen), ("joint", &data)] {
        for lr in [1e-3, 3e-3, 1e-2] {
            for kind in [
                ModelKind::Fusion(FusionKind::Gmu),
                ModelKind::Fusion(FusionKind::CrossModal),
            ] {
                let cfg = TrainConfig {
                    lr,
                    max_epochs: 120,
                    batch_size: 8,
                    early_stop_patience: 120,
                    plateau_patience: 120,
                    ..TrainConfig::default()
                };
                let mut model =
                    FusionModel::build_toy(kind, VisionMode::AlexnetShape, 0).unwrap();
                if name == "frozen" {
                    model = FusionModel::build_precomputed(kind, VisionMode::AlexnetShape, 0)
                        .unwrap();
                }
                let history = train(&mut model, &plan.train, &plan.val, &cfg, 0).unwrap();
                let (metrics, _) = model.evaluate(&plan.test).unwrap();
                let sampled: Vec<String> = history
                    .val_loss
                    .iter()
                    .step_by(20)
                    .map(|l| format!("{l:.3}"))
                    .collect();
                println!(
                    "{name} lr {lr} {kind}: acc {:.2}, val curve {}",
                    metrics.accuracy,
                    sampled.join(" ")
                );
            }
        }
    }
}
