//! Quick timing/learning probe for the desk-scale synthetic setup.
//! Run with: cargo run --release -p fewshot-core --example desk_probe -- <head> [episodes]

use std::time::Instant;

use fewshot_core::data::{synth_generate, SynthConfig};
use fewshot_core::models::{FewShotModel, Head, ModelConfig};
use fewshot_core::train::{evaluate, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let head = Head::parse(args.get(1).map(|s| s.as_str()).unwrap_or("hybrid")).unwrap();
    let episodes: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);

    let t0 = Instant::now();
    let dataset = synth_generate(&SynthConfig { n_classes: 4, per_class: 100, image_size: 64, seed: 7 }).unwrap();
    println!("dataset built in {:?}", t0.elapsed());

    let mut config = TrainConfig::defaults(head);
    config.seed = 42;
    if head.is_episodic() {
        config.max_episodes = Some(episodes);
        config.max_epochs = None;
        config.eval_interval = 50;
        config.val_episodes = 20;
        config.patience = 1000;
        if head == Head::Matching {
            config.k_shot = 5;
            config.q_query = 10;
        }
    } else {
        config.max_epochs = Some(episodes);
        config.patience = 100;
    }

    let model: FewShotModel<f32> =
        FewShotModel::build(ModelConfig::defaults(head, 64), config.seed).unwrap();
    println!("params: {}", model.store.num_scalars());

    let t1 = Instant::now();
    let outcome = train(&model, &dataset, &config).unwrap();
    println!(
        "train: {:?} for {} steps (best val {:.4} at {})",
        t1.elapsed(),
        outcome.steps_run,
        outcome.best_val_accuracy,
        outcome.best_step
    );
    for rec in outcome.log.iter().filter(|r| r.val_accuracy.is_some()) {
        println!(
            "  step {:>5} loss {:.4} val {:.4} ({} ms)",
            rec.episode,
            rec.train_loss,
            rec.val_accuracy.unwrap(),
            rec.elapsed_ms
        );
    }

    let t2 = Instant::now();
    let report = evaluate(&model, &dataset, fewshot_core::data::Split::Test, 100, &config).unwrap();
    println!(
        "eval(100): {:?}  acc {:.4} P {:.4} R {:.4} F1 {:.4}",
        t2.elapsed(),
        report.accuracy,
        report.precision,
        report.recall,
        report.f1
    );
}
