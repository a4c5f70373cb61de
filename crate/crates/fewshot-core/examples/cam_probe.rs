//! Probe Grad-CAM localization rate vs training budget.
//! Run: cargo run --release -p fewshot-core --example cam_probe -- [episodes]

use fewshot_core::data::{
    class_quadrant, in_quadrant, sample_episode, synth_generate, Split, SynthConfig,
};
use fewshot_core::explain::{compute_cam, prototypes_from_episode, CamMethod, CamRequest};
use fewshot_core::models::{FewShotModel, Head, ModelConfig};
use fewshot_core::rng::Pcg32;
use fewshot_core::train::{train, TrainConfig};

fn main() {
    let episodes: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let dataset =
        synth_generate(&SynthConfig { n_classes: 4, per_class: 400, image_size: 64, seed: 7 }).unwrap();
    let mut config = TrainConfig::defaults(Head::Hybrid);
    config.seed = 99;
    config.max_episodes = Some(episodes);
    config.max_epochs = None;
    config.eval_interval = 50;
    config.val_episodes = 10;
    config.patience = u32::MAX;
    let model: FewShotModel<f32> =
        FewShotModel::build(ModelConfig::defaults(Head::Hybrid, 64), config.seed).unwrap();
    let outcome = train(&model, &dataset, &config).unwrap();
    println!("trained {} episodes, best val {:.4}", outcome.steps_run, outcome.best_val_accuracy);

    for method in [CamMethod::GradCam, CamMethod::GradCamPp] {
        let mut episode_rng = Pcg32::new(707, 1);
        let (mut hits, mut total, mut degenerate) = (0usize, 0usize, 0usize);
        while total < 50 {
            let episode = sample_episode(&dataset, Split::Test, 4, 30, 1, &mut episode_rng).unwrap();
            let protos = prototypes_from_episode(&model, &episode).unwrap();
            for (query, label) in episode.query.iter().take(1) {
                if total >= 50 {
                    break;
                }
                total += 1;
                let request = CamRequest { method, query, target_class: *label, protos: &protos };
                let heatmap = compute_cam(&model, &request).unwrap();
                degenerate += usize::from(heatmap.degenerate);
                let size = 64;
                let (mut by, mut bx, mut best) = (0usize, 0usize, f32::MIN);
                for y in 0..size {
                    for x in 0..size {
                        let v = heatmap.normalized.data()[y * size + x];
                        if v > best {
                            best = v;
                            by = y;
                            bx = x;
                        }
                    }
                }
                let class_global = dataset.class_index(&episode.class_map[*label]).unwrap();
                let hit = in_quadrant(class_quadrant(class_global), by, bx, size);
                hits += usize::from(hit);
                if method == CamMethod::GradCam && std::env::var("CAM_DEBUG").is_ok() {
                    // Pre-ReLU combination: alpha . B per cell, from raw map
                    // internals (approximated by signed recomputation).
                    let q = class_quadrant(class_global);
                    let in_q: Vec<f32> = heatmap
                        .raw
                        .data()
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| in_quadrant(q, i / 8, i % 8, 8))
                        .map(|(_, &v)| v)
                        .collect();
                    let out_q: Vec<f32> = heatmap
                        .raw
                        .data()
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !in_quadrant(q, i / 8, i % 8, 8))
                        .map(|(_, &v)| v)
                        .collect();
                    let maxi = in_q.iter().cloned().fold(f32::MIN, f32::max);
                    let maxo = out_q.iter().cloned().fold(f32::MIN, f32::max);
                    println!(
                        "  q{} deg={} hit={} raw_in_max={maxi:.4e} raw_out_max={maxo:.4e}",
                        q, heatmap.degenerate, hit
                    );
                }
            }
        }
        println!(
            "{}: localization {}/{} = {:.2} ({} degenerate)",
            method.as_str(),
            hits,
            total,
            hits as f64 / total as f64,
            degenerate
        );
    }
}
