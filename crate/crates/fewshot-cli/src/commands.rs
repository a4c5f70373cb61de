//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use fewshot_core::data::{
    nearest_centroid_accuracy, sample_episode, scan_dataset, synth_generate, write_dataset,
    DatasetManifest, Split, SynthConfig,
};
use fewshot_core::explain::{
    compute_cam, overlay_filename, prototypes_from_episode, render_overlay, CamMethod, CamRequest,
    OverlayIndexEntry,
};
use fewshot_core::models::{FewShotModel, Head, ModelConfig};
use fewshot_core::rng::Pcg32;
use fewshot_core::train::{
    evaluate, load_checkpoint, save_checkpoint, train, EpisodeGeometry, TrainConfig,
};

use crate::config::RunConfig;
use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("create {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

/// `prepare`: validate a dataset tree and write its manifest.
pub fn cmd_prepare(root: &Path, image_size: usize, out: Option<&Path>) -> Result<(), CliError> {
    let report = scan_dataset(root, image_size)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let manifest = DatasetManifest::from_dataset(&report.dataset);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| root.join("manifest.json"));
    write_file(&out_path, json.as_bytes())?;
    println!(
        "ok: {} classes, {} samples, hash {}",
        manifest.classes.len(),
        manifest
            .counts
            .values()
            .flat_map(|m| m.values())
            .sum::<usize>(),
        manifest.content_hash
    );
    println!("manifest written to {}", out_path.display());
    Ok(())
}

/// `synth`: generate the synthetic dataset on disk and report separability.
pub fn cmd_synth(
    out: &Path,
    classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<(), CliError> {
    let dataset = synth_generate(&SynthConfig { n_classes: classes, per_class, image_size, seed })?;
    write_dataset(&dataset, out)?;
    let separability = nearest_centroid_accuracy(&dataset);
    println!(
        "wrote {} classes x {per_class} images at {image_size}x{image_size} to {}",
        classes,
        out.display()
    );
    println!("nearest-centroid separability: {separability:.4}");
    Ok(())
}

/// `train`: full run driven by a resolved config.
pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let root = config
        .dataset_root
        .as_ref()
        .ok_or_else(|| CliError::Usage("dataset_root is required for train".into()))?;
    if config.threads > 1 {
        eprintln!(
            "warning: threads = {} requested; kernels are single-threaded, running with 1",
            config.threads
        );
    }
    let report = scan_dataset(root, config.image_size)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let dataset = report.dataset;

    let mut model_config = ModelConfig::defaults(config.head, config.image_size);
    model_config.feature_dim = config.feature_dim;
    model_config.margin = config.margin;
    let model: FewShotModel<f32> = FewShotModel::build(model_config, config.seed)?;
    let train_config = config.train_config();

    println!(
        "training head '{}' ({} parameters) on {} classes",
        config.head.as_str(),
        model.store.num_scalars(),
        dataset.classes().len()
    );
    let outcome = train(&model, &dataset, &train_config)?;
    println!(
        "finished after {} steps; best validation accuracy {:.4} at step {}{}",
        outcome.steps_run,
        outcome.best_val_accuracy,
        outcome.best_step,
        if outcome.stopped_early { " (early stop)" } else { "" }
    );

    let out_dir = &config.output_dir;
    let geometry = EpisodeGeometry {
        n_way: config.num_classes,
        k_shot: config.num_support,
        q_query: config.num_query,
    };
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", out_dir.display())))?;
    save_checkpoint(
        &model,
        geometry,
        config.seed,
        outcome.best_val_accuracy,
        outcome.best_step,
        &ckpt_path,
    )?;
    write_file(&out_dir.join("train_log.jsonl"), outcome.log_jsonl().as_bytes())?;
    write_file(&out_dir.join("config_effective.cfg"), config.dump().as_bytes())?;

    let val_report = evaluate(&model, &dataset, Split::Val, config.eval_episodes, &train_config)?;
    for warning in &val_report.warnings {
        eprintln!("warning: {warning}");
    }
    write_file(&out_dir.join("metrics_val.json"), val_report.to_json().as_bytes())?;
    println!(
        "val over {} episodes: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        val_report.n_episodes,
        val_report.accuracy,
        val_report.precision,
        val_report.recall,
        val_report.f1
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn check_compat(
    manifest: &fewshot_core::train::CheckpointManifest,
    dataset: &fewshot_core::data::FewShotDataset,
) -> Result<(), CliError> {
    if dataset.classes().len() < manifest.n_way {
        return Err(CliError::Data(format!(
            "checkpoint episodes are {}-way but the dataset has only {} classes",
            manifest.n_way,
            dataset.classes().len()
        )));
    }
    Ok(())
}

/// `eval`: metrics over freshly sampled evaluation episodes.
pub fn cmd_eval(
    checkpoint: &Path,
    data_root: &Path,
    split: Split,
    episodes: u64,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (model, manifest) = load_checkpoint(checkpoint)?;
    let report = scan_dataset(data_root, manifest.model.image_size)?;
    check_compat(&manifest, &report.dataset)?;
    let config = TrainConfig {
        seed: seed.unwrap_or(manifest.seed),
        n_way: manifest.n_way,
        k_shot: manifest.k_shot,
        q_query: manifest.q_query,
        margin: manifest.model.margin,
        ..TrainConfig::defaults(manifest.model.head)
    };
    let metrics = evaluate(&model, &report.dataset, split, episodes, &config)?;
    for warning in &metrics.warnings {
        eprintln!("warning: {warning}");
    }
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("metrics_{}.json", split.as_str())));
    write_file(&out_path, metrics.to_json().as_bytes())?;
    println!(
        "{} over {} episodes: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        split.as_str(),
        metrics.n_episodes,
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1
    );
    println!("report written to {}", out_path.display());
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<CamMethod>, CliError> {
    if spec == "all" {
        return Ok(CamMethod::ALL.to_vec());
    }
    spec.split(',')
        .map(|m| CamMethod::parse(m.trim()).map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

/// `explain`: CAM overlays for one test episode.
pub fn cmd_explain(
    checkpoint: &Path,
    data_root: &Path,
    methods_spec: &str,
    out_dir: &Path,
    queries_per_class: usize,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let methods = parse_methods(methods_spec)?;
    let (model, manifest) = load_checkpoint(checkpoint)?;
    if !matches!(manifest.model.head, Head::Hybrid | Head::Proto) {
        return Err(CliError::Runtime(format!(
            "explain requires a hybrid or proto checkpoint (feature-map-exposing encoder); got '{}'",
            manifest.model.head.as_str()
        )));
    }
    let report = scan_dataset(data_root, manifest.model.image_size)?;
    check_compat(&manifest, &report.dataset)?;

    let mut rng = Pcg32::keyed(seed.unwrap_or(manifest.seed), "explain-episode");
    let episode = sample_episode(
        &report.dataset,
        Split::Test,
        manifest.n_way,
        manifest.k_shot,
        queries_per_class,
        &mut rng,
    )?;
    let protos = prototypes_from_episode(&model, &episode)?;

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", out_dir.display())))?;
    let mut index = Vec::new();
    for (query, _label) in &episode.query {
        for &method in &methods {
            for (class_idx, class_name) in episode.class_map.iter().enumerate() {
                let request = CamRequest { method, query, target_class: class_idx, protos: &protos };
                let heatmap = compute_cam(&model, &request)?;
                if heatmap.degenerate {
                    eprintln!(
                        "warning: degenerate (all-zero) {} map for query '{}' class '{class_name}'",
                        method.as_str(),
                        query.id
                    );
                }
                let bytes = render_overlay(&heatmap.normalized, query)?;
                let file = overlay_filename(&query.id, method.as_str(), class_name);
                write_file(&out_dir.join(&file), &bytes)?;
                index.push(OverlayIndexEntry {
                    query_id: query.id.clone(),
                    method: method.as_str().to_string(),
                    class_name: class_name.clone(),
                    file,
                });
            }
        }
    }
    let index_json = serde_json::to_string_pretty(&index).expect("index serialize");
    write_file(&out_dir.join("index.json"), index_json.as_bytes())?;
    println!(
        "wrote {} overlays (+index.json) to {}",
        index.len(),
        out_dir.display()
    );
    Ok(())
}
