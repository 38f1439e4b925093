use aasist_core::model::ModelConfig;
use aasist_core::train::{fit, TrainConfig};

#[test]
fn ablations_and_seeds() {
    let base = TrainConfig::default();
    let mut variants: Vec<(String, TrainConfig)> = vec![
        (
            "no-hetero".into(),
            TrainConfig {
                model: ModelConfig { hetero_attention: false, ..base.model.clone() },
                ..base.clone()
            },
        ),
        (
            "no-stack".into(),
            TrainConfig {
                model: ModelConfig { stack_node: false, ..base.model.clone() },
                ..base.clone()
            },
        ),
        (
            "no-mgo".into(),
            TrainConfig {
                model: ModelConfig { mgo: false, ..base.model.clone() },
                ..base.clone()
            },
        ),
    ];
    variants.push(("seed-2".into(), TrainConfig { seed: 2, ..base.clone() }));
    variants.push(("seed-3".into(), TrainConfig { seed: 3, ..base.clone() }));

    for (name, cfg) in variants {
        let start = std::time::Instant::now();
        let (rec, _params) = fit(cfg).unwrap();
        println!(
            "{name}: {:.1}s  acc {:.4}  loss {:.4}",
            start.elapsed().as_secs_f64(),
            rec.final_accuracy,
            rec.final_mean_loss,
        );
    }
}
