//! Multi-seed protocol: train one replica per seed, evaluate on the
//! test split, and report each metric as mean ± population standard
//! deviation in both JSON and a markdown table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{train, Datasets, FusionModel, ModelError, TrainConfig, TrainHistory};
use crate::eval::{aggregate, Confusion, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Metrics,
    pub confusion: Confusion,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub std_convention: String,
    pub config: TrainConfig,
    pub per_seed: Vec<SeedRun>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One table row per model, metrics in percent with two decimals.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "| Architecture | Precision | Recall | F1-score | Accuracy | Specificity |\n\
             |---|---|---|---|---|---|\n| {} |",
            self.model
        ));
        for key in ["precision", "recall", "f1", "accuracy", "specificity"] {
            out.push_str(&format!(
                " {:.2} ± {:.2} |",
                self.mean[key] * 100.0,
                self.std[key] * 100.0
            ));
        }
        out.push('\n');
        out
    }
}

/// Trains one freshly built replica per configured seed and aggregates
/// test metrics. `build` must fully derive the model (including
/// initialization) from the seed it is given.
pub fn run_protocol<F>(
    build: F,
    data: &Datasets,
    cfg: &TrainConfig,
) -> Result<RunReport, ModelError>
where
    F: Fn(u64) -> Result<FusionModel, ModelError>,
{
    if cfg.seeds.is_empty() {
        return Err(ModelError::NoSeeds);
    }
    if data.test.is_empty() {
        return Err(ModelError::EmptySplit("test"));
    }
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    let mut model_name = String::new();
    for &seed in &cfg.seeds {
        let mut model = build(seed)?;
        model_name = model.kind.to_string();
        let history = train(&mut model, &data.train, &data.val, cfg, seed)?;
        let (metrics, confusion) = model.evaluate(&data.test)?;
        per_seed.push(SeedRun {
            seed,
            metrics,
            confusion,
            history,
        });
    }
    let rows: Vec<BTreeMap<String, f64>> =
        per_seed.iter().map(|r| r.metrics.as_map()).collect();
    let (mean, std) = aggregate(&rows)?;
    Ok(RunReport {
        model: model_name,
        std_convention: "population".to_string(),
        config: cfg.clone(),
        per_seed,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{VisionMode, D_MODEL};
    use crate::models::{ModelKind, Sample, SampleInput};
    use crate::tensor::Tensor;

    fn sample(label: u8, x: f64) -> Sample {
        Sample {
            user_id: format!("u-{label}-{x}"),
            label,
            input: SampleInput::Precomputed {
                text: Tensor::filled(&[1, D_MODEL], x),
                vision: Tensor::filled(&[1, D_MODEL], 0.05),
            },
        }
    }

    fn datasets() -> Datasets {
        let gen = |n: usize, spread: f64| -> Vec<Sample> {
            (0..n)
                .map(|i| {
                    let label = (i % 2) as u8;
                    let x = if label == 1 { 0.4 } else { -0.4 };
                    sample(label, x + spread * (i as f64 / n as f64))
                })
                .collect()
        };
        Datasets {
            train: gen(24, 0.05),
            val: gen(8, 0.02),
            test: gen(8, 0.0),
        }
    }

    fn quick_cfg(seeds: Vec<u64>) -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            max_epochs: 6,
            seeds,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_seed_has_zero_std() {
        let data = datasets();
        let report = run_protocol(
            |seed| FusionModel::build_precomputed(ModelKind::TextOnly, VisionMode::Vgg16Shape, seed),
            &data,
            &quick_cfg(vec![0]),
        )
        .unwrap();
        assert_eq!(report.per_seed.len(), 1);
        for std in report.std.values() {
            assert_eq!(*std, 0.0);
        }
    }

    #[test]
    fn aggregates_match_recomputation_from_rows() {
        let data = datasets();
        let report = run_protocol(
            |seed| FusionModel::build_precomputed(ModelKind::TextOnly, VisionMode::Vgg16Shape, seed),
            &data,
            &quick_cfg(vec![0, 1, 2, 3, 4]),
        )
        .unwrap();
        assert_eq!(report.per_seed.len(), 5);
        let rows: Vec<BTreeMap<String, f64>> =
            report.per_seed.iter().map(|r| r.metrics.as_map()).collect();
        let (mean, std) = aggregate(&rows).unwrap();
        for key in mean.keys() {
            assert!((report.mean[key] - mean[key]).abs() < 1e-12);
            assert!((report.std[key] - std[key]).abs() < 1e-12);
        }
    }

    #[test]
    fn rerun_produces_identical_report_bytes() {
        let data = datasets();
        let run = || {
            run_protocol(
                |seed| {
                    FusionModel::build_precomputed(ModelKind::TextOnly, VisionMode::Vgg16Shape, seed)
                },
                &data,
                &quick_cfg(vec![0, 1]),
            )
            .unwrap()
            .to_json()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn markdown_table_has_five_metric_columns() {
        let data = datasets();
        let report = run_protocol(
            |seed| FusionModel::build_precomputed(ModelKind::TextOnly, VisionMode::Vgg16Shape, seed),
            &data,
            &quick_cfg(vec![0]),
        )
        .unwrap();
        let md = report.to_markdown();
        assert!(md.contains("| Architecture | Precision | Recall | F1-score | Accuracy | Specificity |"));
        assert_eq!(md.lines().count(), 3);
        assert!(md.contains('±'));
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let data = datasets();
        let err = run_protocol(
            |seed| FusionModel::build_precomputed(ModelKind::TextOnly, VisionMode::Vgg16Shape, seed),
            &data,
            &quick_cfg(vec![]),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NoSeeds));
    }
}
