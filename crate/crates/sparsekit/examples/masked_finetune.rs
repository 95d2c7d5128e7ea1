//! Masked sparse fine-tuning on the toy regression task: dense
//! pretraining, one-shot / iterative / layer-wise magnitude pruning to 50%
//! sparsity, and the update-then-resparsify loop that keeps pruned weights
//! at exactly zero.
//!
//! Run with: cargo run --release --example masked_finetune

use sparsekit::dispatch::Registry;
use sparsekit::kernels::GemmTiling;
use sparsekit::train::{
    finetune, run_schedule, synthetic_regression, Mlp, MlpConfig, PruneSchedule, PruneScope,
    TrainerConfig, TrainingLog,
};

fn main() {
    let registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let cfg = MlpConfig {
        samples: 512,
        noise: 0.3,
        seed: 42,
        ..Default::default()
    };
    let data = synthetic_regression::<f64>(&cfg);

    // dense pretraining
    let mut model = Mlp::<f64>::new(&cfg);
    let mut log = TrainingLog::default();
    let mut step = 0;
    let dense_loss =
        finetune(&mut model, &registry, &data, 300, 0.1, "dense", &mut step, &mut log).unwrap();
    println!("dense training: final loss {dense_loss:.5}");
    let snapshot: Vec<_> = model
        .weight_ids()
        .iter()
        .map(|&id| (id, model.graph.parameter_value(id).unwrap().clone()))
        .collect();

    let schedules = [
        ("one-shot", PruneSchedule::OneShot { target: 0.5 }),
        (
            "iterative",
            PruneSchedule::Iterative {
                start: 0.1,
                step: 0.1,
                target: 0.5,
                epochs_per_step: 100,
            },
        ),
        (
            "layer-wise",
            PruneSchedule::LayerWise {
                target: 0.5,
                epochs_per_layer: 100,
            },
        ),
    ];
    let trainer = TrainerConfig {
        lr: 0.1,
        epochs: 500,
        scope: PruneScope::Local,
    };
    for (name, schedule) in schedules {
        for (id, value) in &snapshot {
            model.graph.set_parameter_value(*id, value.clone()).unwrap();
        }
        let log = run_schedule(&mut model, &registry, &data, &schedule, &trainer).unwrap();
        let final_loss = log.final_loss().unwrap();
        println!(
            "{name:<10} -> sparsity {:.2}, {} pruning events, final loss {final_loss:.5} ({:.2}x dense)",
            model.sparsity(),
            log.pruning_events(),
            final_loss / dense_loss
        );
    }

    // pruned coordinates stay exactly zero through updates
    let id = model.weight_ids()[0];
    let zeros_before: usize = model
        .graph
        .parameter_value(id)
        .unwrap()
        .to_dense()
        .as_slice()
        .iter()
        .filter(|v| **v == 0.0)
        .count();
    finetune(&mut model, &registry, &data, 50, 0.1, "extra", &mut step, &mut log).unwrap();
    let zeros_after: usize = model
        .graph
        .parameter_value(id)
        .unwrap()
        .to_dense()
        .as_slice()
        .iter()
        .filter(|v| **v == 0.0)
        .count();
    println!("w1 zero count before/after 50 more steps: {zeros_before}/{zeros_after}");
}
