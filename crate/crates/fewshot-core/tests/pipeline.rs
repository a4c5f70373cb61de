//! Integration tests across the episode pipeline, heads, the training
//! loops, and explainability.

use fewshot_core::data::{
    sample_episode, synth_generate, EpisodeBatch, Split, SynthConfig, Triplet, TripletBatch,
};
use fewshot_core::explain::{
    cam_class_score, cam_score_from_feature_map, compute_cam, prototypes_from_episode,
    query_logits, weighted_cam_map, CamMethod, CamRequest, PrototypeSet,
};
use fewshot_core::models::{
    matching_forward, proto_classify, proto_episode_logits, relation_forward, siamese_pair_eval,
    FewShotModel, Head, ModelConfig,
};
use fewshot_core::rng::Pcg32;
use fewshot_core::train::{train, train_episodic, train_siamese, TrainConfig};
use fewshot_core::{Graph, Mode, Tensor};

fn tiny_dataset(seed: u64) -> fewshot_core::data::FewShotDataset {
    synth_generate(&SynthConfig { n_classes: 4, per_class: 24, image_size: 16, seed }).unwrap()
}

fn tiny_model<S: fewshot_core::Scalar>(head: Head, seed: u64) -> FewShotModel<S> {
    let mut config = ModelConfig::defaults(head, 16);
    match head {
        Head::Siamese => {
            config.channels = vec![3, 4];
            config.feature_dim = 8;
        }
        Head::Relation => {
            config.channels = vec![2, 2, 4, 4];
            config.feature_dim = 4;
        }
        _ => {
            config.channels = vec![2, 2, 4, 4];
            config.feature_dim = 8;
        }
    }
    FewShotModel::build(config, seed).unwrap()
}

fn zero_params<S: fewshot_core::Scalar>(model: &FewShotModel<S>) {
    for p in model.store.params() {
        p.set(Tensor::zeros(&p.shape()));
    }
}

#[test]
fn paper_episode_geometries() {
    let ds = synth_generate(&SynthConfig { n_classes: 4, per_class: 100, image_size: 8, seed: 2 }).unwrap();
    let mut rng = Pcg32::new(3, 3);
    // 4-way 5-shot 10-query: 20 support + 40 query.
    let ep = sample_episode(&ds, Split::Train, 4, 5, 10, &mut rng).unwrap();
    assert_eq!(ep.support.len(), 20);
    assert_eq!(ep.query.len(), 40);
    // 4-way 30-shot 30-query: 120 + 120.
    let ep = sample_episode(&ds, Split::Train, 4, 30, 30, &mut rng).unwrap();
    assert_eq!(ep.support.len(), 120);
    assert_eq!(ep.query.len(), 120);
}

#[test]
fn hybrid_logits_shape_matches_episode_geometry() {
    let ds = synth_generate(&SynthConfig { n_classes: 4, per_class: 60, image_size: 16, seed: 4 }).unwrap();
    let mut rng = Pcg32::new(5, 1);
    let episode = sample_episode(&ds, Split::Train, 4, 5, 10, &mut rng).unwrap();
    let batch = episode.to_batch::<f32>();
    let model: FewShotModel<f32> = tiny_model(Head::Hybrid, 9);
    let g = Graph::new();
    let scores = model.episode_scores(&g, &batch, Mode::Train).unwrap();
    assert_eq!(g.shape_of(scores), vec![40, 4]);
}

#[test]
fn hybrid_reduces_to_the_prototypical_path() {
    let ds = tiny_dataset(11);
    let mut rng = Pcg32::new(6, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 2, 2, &mut rng).unwrap();
    let batch = episode.to_batch::<f64>();
    let model: FewShotModel<f64> = tiny_model(Head::Hybrid, 21);

    let g = Graph::new();
    let via_head = model.episode_scores(&g, &batch, Mode::Train).unwrap();
    let head_values = g.value(via_head);

    // Fresh graph, same parameters, direct prototypical computation.
    let g2 = Graph::new();
    let direct = proto_episode_logits(&g2, &model.encoder, &batch, Mode::Train).unwrap();
    let direct_values = g2.value(direct);
    assert_eq!(head_values.shape(), direct_values.shape());
    for (a, b) in head_values.data().iter().zip(direct_values.data()) {
        assert_eq!(a.to_bits(), b.to_bits(), "hybrid diverged from the prototypical path");
    }
}

#[test]
fn predictions_invariant_under_increasing_transforms() {
    let logits = Tensor::<f64>::from_fn(&[6, 4], |i| ((i * 37 % 11) as f64) * 0.3 - 1.0);
    let transformed = logits.map(|v| 2.5 * v + 7.0);
    assert_eq!(logits.argmax_rows(), transformed.argmax_rows());
}

#[test]
fn separated_prototypes_drive_loss_to_zero() {
    // Perfectly clustered, far-apart embeddings: cross-entropy ~ 0.
    let g: Graph<f64> = Graph::new();
    let queries = g.leaf(
        Tensor::from_vec(&[2, 2], vec![20.0, 0.0, 0.0, 20.0]),
        false,
    );
    let protos = g.leaf(
        Tensor::from_vec(&[2, 2], vec![20.0, 0.0, 0.0, 20.0]),
        false,
    );
    let (logits, _) = proto_classify(&g, queries, protos).unwrap();
    let loss = g.cross_entropy_from_logits(logits, &[0, 1]).unwrap();
    assert!(g.value(loss).item() < 1e-6);
}

#[test]
fn collapsed_encoders_hit_their_analytic_losses() {
    let ds = tiny_dataset(13);
    let mut rng = Pcg32::new(8, 1);
    let episode = sample_episode(&ds, Split::Train, 4, 2, 2, &mut rng).unwrap();
    let batch = episode.to_batch::<f64>();

    // Matching with a collapsed encoder: uniform attention, scores 1/N,
    // loss ln N.
    let model: FewShotModel<f64> = tiny_model(Head::Matching, 31);
    zero_params(&model);
    let g = Graph::new();
    let loss = model.episode_loss(&g, &batch).unwrap();
    assert!((g.value(loss).item() - 4.0f64.ln()).abs() < 1e-6);

    // Relation with a collapsed module: sigmoid(0) = 0.5 scores, loss ln 2.
    let model: FewShotModel<f64> = tiny_model(Head::Relation, 32);
    zero_params(&model);
    let g = Graph::new();
    let loss = model.episode_loss(&g, &batch).unwrap();
    assert!((g.value(loss).item() - 2.0f64.ln()).abs() < 1e-6);

    // Siamese with a collapsed encoder: every distance 0, loss = margin.
    let model: FewShotModel<f64> = tiny_model(Head::Siamese, 33);
    zero_params(&model);
    let mut trip_rng = Pcg32::new(9, 1);
    let batches =
        fewshot_core::data::triplet_batches(&ds, Split::Train, 4, &mut trip_rng).unwrap();
    let triplets = Triplet::to_batch::<f64>(&batches[0]);
    let g = Graph::new();
    let loss = model.triplet_loss(&g, &triplets).unwrap();
    assert_eq!(g.value(loss).item(), 1.0);
}

#[test]
fn matching_scores_are_row_stochastic_and_attention_uniform_when_collapsed() {
    let ds = tiny_dataset(17);
    let mut rng = Pcg32::new(10, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 2, 2, &mut rng).unwrap();
    let batch = episode.to_batch::<f64>();

    // Random weights: score rows still sum to one (stochastic matrix times
    // one-hot labels).
    let model: FewShotModel<f64> = tiny_model(Head::Matching, 41);
    let g = Graph::new();
    let out = matching_forward(&g, &model.encoder, &batch, Mode::Train).unwrap();
    let scores = g.value(out.scores);
    for row in scores.data().chunks(3) {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "score row sums to {sum}");
    }
    let attention = g.value(out.attention);
    for row in attention.data().chunks(6) {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "attention row sums to {sum}");
    }

    // Collapsed encoder: every attention entry is 1/(N*K).
    zero_params(&model);
    let g = Graph::new();
    let out = matching_forward(&g, &model.encoder, &batch, Mode::Train).unwrap();
    let attention = g.value(out.attention);
    for &a in attention.data() {
        assert!((a - 1.0 / 6.0).abs() < 1e-9);
    }
}

#[test]
fn matching_self_similarity_dominates_with_one_shot() {
    // The query image IS the class-0 support image, so its score for class 0
    // must top the row.
    let ds = tiny_dataset(19);
    let mut rng = Pcg32::new(11, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 1, 1, &mut rng).unwrap();
    let mut batch = episode.to_batch::<f64>();
    let support = batch.support.clone();
    let size = 16;
    // Replace the single query with support sample 0 (class 0).
    batch.query = Tensor::from_vec(
        &[1, 3, size, size],
        support.data()[..3 * size * size].to_vec(),
    );
    batch.query_labels = vec![0];
    batch.q_query = 1;
    // Three queries are required? No: one query row suffices for the check.
    let model: FewShotModel<f64> = tiny_model(Head::Matching, 43);
    let g = Graph::new();
    let out = matching_forward(&g, &model.encoder, &batch, Mode::Train).unwrap();
    let scores = g.value(out.scores);
    let row = &scores.data()[..3];
    assert!(row[0] >= row[1] && row[0] >= row[2], "self-similarity not dominant: {row:?}");
}

#[test]
fn relation_scores_live_strictly_inside_unit_interval() {
    let ds = tiny_dataset(23);
    let mut rng = Pcg32::new(12, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 2, 2, &mut rng).unwrap();
    let batch = episode.to_batch::<f64>();
    let model: FewShotModel<f64> = tiny_model(Head::Relation, 51);
    let g = Graph::new();
    let relation = model.relation.as_ref().unwrap();
    let pair = relation_forward(&g, &model.encoder, relation, &batch, Mode::Train).unwrap();
    let scores = g.value(pair.scores);
    assert_eq!(scores.shape(), &[6, 3]);
    for &s in scores.data() {
        assert!(s > 0.0 && s < 1.0, "relation score {s} outside (0,1)");
    }
    // One-hot targets, one 1 per query row.
    for row in pair.targets.data().chunks(3) {
        assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
    }
}

/// Permute episode classes and check that head scores permute columns.
#[allow(clippy::needless_range_loop)]
fn permuted_batch(batch: &EpisodeBatch<f64>, perm: &[usize]) -> EpisodeBatch<f64> {
    let (n, k, q) = (batch.n_way, batch.k_shot, batch.q_query);
    let img = 3 * 16 * 16;
    let mut support = vec![0.0f64; batch.support.numel()];
    for new_c in 0..n {
        let old_c = perm[new_c];
        for j in 0..k {
            let dst = (new_c * k + j) * img;
            let src = (old_c * k + j) * img;
            support[dst..dst + img].copy_from_slice(&batch.support.data()[src..src + img]);
        }
    }
    let mut query = vec![0.0f64; batch.query.numel()];
    let mut query_labels = vec![0usize; batch.query_labels.len()];
    for new_c in 0..n {
        let old_c = perm[new_c];
        for j in 0..q {
            let dst = (new_c * q + j) * img;
            let src = (old_c * q + j) * img;
            query[dst..dst + img].copy_from_slice(&batch.query.data()[src..src + img]);
            query_labels[new_c * q + j] = new_c;
        }
    }
    EpisodeBatch {
        n_way: n,
        k_shot: k,
        q_query: q,
        support: Tensor::from_vec(batch.support.shape(), support),
        query: Tensor::from_vec(batch.query.shape(), query),
        query_labels,
        class_map: perm.iter().map(|&c| batch.class_map[c].clone()).collect(),
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn class_permutation_permutes_score_columns_for_every_head() {
    let ds = tiny_dataset(29);
    let mut rng = Pcg32::new(13, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 2, 2, &mut rng).unwrap();
    let batch = episode.to_batch::<f64>();
    let perm = [2usize, 0, 1];
    let shuffled = permuted_batch(&batch, &perm);

    for head in [Head::Proto, Head::Hybrid, Head::Matching, Head::Relation] {
        let model: FewShotModel<f64> = tiny_model(head, 61);
        let g = Graph::new();
        let base = g.value(model.episode_scores(&g, &batch, Mode::Train).unwrap());
        let g2 = Graph::new();
        let permuted = g2.value(model.episode_scores(&g2, &shuffled, Mode::Train).unwrap());

        // Query (old class c, index j) moved to row (new class c', j) where
        // perm[c'] = c; its score for old column perm[d] sits in new column d.
        let (n, q) = (3, 2);
        let inv: Vec<usize> = (0..n).map(|c| perm.iter().position(|&p| p == c).unwrap()).collect();
        for old_c in 0..n {
            let new_c = inv[old_c];
            for j in 0..q {
                for old_d in 0..n {
                    let new_d = inv[old_d];
                    let a = base.data()[(old_c * q + j) * n + old_d];
                    let b = permuted.data()[(new_c * q + j) * n + new_d];
                    assert!(
                        (a - b).abs() < 1e-9,
                        "{}: score changed under class permutation: {a} vs {b}",
                        head.as_str()
                    );
                }
            }
        }
    }
}

#[test]
fn siamese_pair_eval_tie_counts_as_incorrect() {
    let model: FewShotModel<f64> = tiny_model(Head::Siamese, 71);
    // Prime batch-norm stats so eval mode works.
    let ds = tiny_dataset(31);
    let mut rng = Pcg32::new(14, 1);
    let batches = fewshot_core::data::triplet_batches(&ds, Split::Train, 4, &mut rng).unwrap();
    let g = Graph::new();
    let warm = Triplet::to_batch::<f64>(&batches[0]);
    model.triplet_loss(&g, &warm).unwrap();

    // positive == negative image => d_pos == d_neg => strict rule fails it.
    let one = batches[0][0].clone();
    let tie = TripletBatch::<f64> {
        anchors: Triplet::to_batch::<f64>(std::slice::from_ref(&one)).anchors,
        positives: Triplet::to_batch::<f64>(std::slice::from_ref(&one)).positives,
        negatives: Triplet::to_batch::<f64>(std::slice::from_ref(&one)).positives,
    };
    let outcomes = siamese_pair_eval(&model.encoder, &tie).unwrap();
    assert_eq!(outcomes, vec![false]);

    // A clearly-closer positive is correct.
    let clear = TripletBatch::<f64> {
        anchors: Triplet::to_batch::<f64>(std::slice::from_ref(&one)).anchors,
        positives: Triplet::to_batch::<f64>(std::slice::from_ref(&one)).anchors,
        negatives: Triplet::to_batch::<f64>(&[one]).negatives,
    };
    let outcomes = siamese_pair_eval(&model.encoder, &clear).unwrap();
    assert_eq!(outcomes, vec![true]);
}

#[test]
fn episodic_training_learns_and_keeps_the_best_weights() {
    let ds = tiny_dataset(37);
    let mut config = TrainConfig::defaults(Head::Proto);
    config.seed = 5;
    config.n_way = 3;
    config.k_shot = 2;
    config.q_query = 1;
    config.max_episodes = Some(60);
    config.max_epochs = None;
    config.eval_interval = 15;
    config.val_episodes = 8;
    config.lr = 1e-3;
    let model: FewShotModel<f32> = tiny_model(Head::Proto, 81);
    let outcome = train_episodic(&model, &ds, &config).unwrap();

    // Loss trends below the collapsed baseline ln 3 within the run.
    let ln_n = 3.0f64.ln();
    let tail_mean: f64 = outcome.log.iter().rev().take(10).map(|r| r.train_loss).sum::<f64>() / 10.0;
    assert!(tail_mean < ln_n, "tail loss {tail_mean} not below ln 3 {ln_n}");

    // Best-checkpoint dominance: the recorded best is the max of the log.
    let max_val = outcome
        .log
        .iter()
        .filter_map(|r| r.val_accuracy)
        .fold(f64::MIN, f64::max);
    assert_eq!(outcome.best_val_accuracy, max_val);

    // Training log has the contract fields.
    let first_line = outcome.log_jsonl().lines().next().unwrap().to_string();
    let value: serde_json::Value = serde_json::from_str(&first_line).unwrap();
    assert!(value.get("episode").is_some());
    assert!(value.get("train_loss").is_some());
    assert!(value.get("elapsed_ms").is_some());
}

#[test]
fn early_stop_halts_within_patience_of_the_best_validation() {
    let ds = tiny_dataset(41);
    let mut config = TrainConfig::defaults(Head::Proto);
    config.seed = 6;
    config.n_way = 3;
    config.k_shot = 2;
    config.q_query = 1;
    config.max_episodes = Some(1000);
    config.max_epochs = None;
    config.eval_interval = 10;
    config.val_episodes = 6;
    config.patience = 1;
    config.lr = 2e-3;
    let model: FewShotModel<f32> = tiny_model(Head::Proto, 91);
    let outcome = train_episodic(&model, &ds, &config).unwrap();
    assert!(outcome.stopped_early, "validation saturates on this data, so patience must trip");
    let vals: Vec<(u64, f64)> = outcome
        .log
        .iter()
        .filter_map(|r| r.val_accuracy.map(|v| (r.episode, v)))
        .collect();
    // The run stops exactly patience validations after the best one, and the
    // best recorded accuracy dominates every later validation.
    let best_pos = vals.iter().position(|&(e, _)| e == outcome.best_step).unwrap();
    assert_eq!(vals.len(), best_pos + 1 + config.patience as usize);
    for &(_, v) in &vals[best_pos + 1..] {
        assert!(v <= outcome.best_val_accuracy);
    }
}

#[test]
fn frozen_model_evaluation_is_constant() {
    // Once weights and running stats are frozen, repeated evaluation over
    // the same fixed seed is identical (what a zero-step run would see).
    let ds = tiny_dataset(43);
    let mut config = TrainConfig::defaults(Head::Siamese);
    config.seed = 7;
    config.max_epochs = Some(2);
    config.patience = 10;
    config.batch_size = 8;
    let model: FewShotModel<f32> = tiny_model(Head::Siamese, 95);
    train_siamese(&model, &ds, &config).unwrap();
    let a = fewshot_core::train::evaluate(&model, &ds, Split::Val, 4, &config).unwrap();
    let b = fewshot_core::train::evaluate(&model, &ds, Split::Val, 4, &config).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.accuracy >= 0.0 && a.accuracy <= 1.0);
}

#[test]
fn cam_score_peaks_when_query_sits_on_the_prototype() {
    let ds = tiny_dataset(47);
    let model: FewShotModel<f32> = tiny_model(Head::Hybrid, 97);
    // Prime batch-norm statistics.
    let mut rng = Pcg32::new(15, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 2, 2, &mut rng).unwrap();
    let batch = episode.to_batch::<f32>();
    let g = Graph::new();
    model.episode_loss(&g, &batch).unwrap();

    let query = &episode.query[0].0;
    // Prototype set whose class-1 prototype IS the query embedding.
    let logits_for = |protos: &PrototypeSet<f32>| query_logits(&model, query, protos).unwrap();
    let g2 = Graph::inference();
    let size = 16;
    let pixels = fewshot_core::data::preprocess::<f32>(query, size);
    let x = g2.leaf(pixels.reshaped(&[1, 3, size, size]).unwrap(), false);
    let out = model.encoder.forward(&g2, x, Mode::Eval).unwrap();
    let own = g2.value(out.embedding);
    let d = own.shape()[1];
    let mut rows = own.data().to_vec();
    rows.extend(own.data().iter().map(|v| v + 3.0)); // a distant second class
    let protos = PrototypeSet {
        prototypes: Tensor::from_vec(&[2, d], rows),
        class_map: vec!["self".into(), "far".into()],
    };
    let logits = logits_for(&protos);
    // Score for the matching class is exactly 0 (the maximum of -d^2).
    assert!(logits.data()[0].abs() < 1e-6);
    assert!(logits.data()[0] > logits.data()[1]);

    // And cam_class_score agrees with the logit ordering.
    let g3 = Graph::new();
    let (s0, _) = cam_class_score(&g3, &model, query, &protos, 0).unwrap();
    let g4 = Graph::new();
    let (s1, _) = cam_class_score(&g4, &model, query, &protos, 1).unwrap();
    assert!(g3.value(s0).item() > g4.value(s1).item());
}

#[test]
fn cam_feature_map_gradient_matches_central_differences() {
    let ds = tiny_dataset(53);
    let model: FewShotModel<f64> = tiny_model(Head::Hybrid, 99);
    let mut rng = Pcg32::new(16, 1);
    let episode = sample_episode(&ds, Split::Train, 3, 2, 1, &mut rng).unwrap();
    // Prime BN stats.
    let batch = episode.to_batch::<f64>();
    let g = Graph::new();
    model.episode_loss(&g, &batch).unwrap();

    let protos = prototypes_from_episode(&model, &episode).unwrap();
    let query = &episode.query[0].0;

    // Analytic gradient at the feature map from the CAM pipeline.
    let g = Graph::new();
    let (score, fm) = cam_class_score(&g, &model, query, &protos, 1).unwrap();
    g.backward(score).unwrap();
    let analytic = g.grad(fm).unwrap();
    let fm_value = g.value(fm);

    // Central differences of the post-feature-map score path.
    let h = 1e-5;
    let eval = |fm_t: &Tensor<f64>| {
        let g = Graph::inference();
        let leaf = g.leaf(fm_t.clone(), false);
        let s = cam_score_from_feature_map(&g, &model, leaf, &protos, 1).unwrap();
        g.value(s).item()
    };
    let mut worst = 0.0f64;
    for i in 0..fm_value.numel() {
        let mut plus = fm_value.data().to_vec();
        plus[i] += h;
        let mut minus = fm_value.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(&Tensor::from_vec(fm_value.shape(), plus))
            - eval(&Tensor::from_vec(fm_value.shape(), minus)))
            / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    assert!(worst < 1e-3, "feature-map gradient mismatch: {worst}");
}

#[test]
fn grad_cam_with_nonnegative_weights_skips_the_relu() {
    // alpha >= 0 and B >= 0 imply heatmap == sum(alpha * B) exactly.
    let grads = Tensor::<f64>::full(&[1, 2, 3, 3], 0.5); // positive => alpha > 0
    let acts = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| (i % 4) as f64 * 0.25);
    let (raw, alphas) = weighted_cam_map(&grads, &acts, false).unwrap();
    assert!(alphas.iter().all(|&a| a >= 0.0));
    for (i, &v) in raw.data().iter().enumerate() {
        let expect: f64 = (0..2).map(|c| alphas[c] * acts.data()[c * 9 + i]).sum();
        assert!((v - expect).abs() < 1e-12);
    }

    // Single channel: the raw map max sits where the activation max sits.
    let one_grads = Tensor::<f64>::full(&[1, 1, 3, 3], 0.7);
    let one_acts = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| f64::from(i == 4) + 0.1);
    let (raw, _) = weighted_cam_map(&one_grads, &one_acts, false).unwrap();
    let argmax = raw
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    assert_eq!(argmax, 4);
}

#[test]
fn explain_rejects_non_exposing_encoders() {
    let model: FewShotModel<f32> = tiny_model(Head::Siamese, 101);
    let ds = tiny_dataset(59);
    // Warm the batch-norm stats so the forward pass reaches the capability
    // check rather than failing on uninitialized running statistics.
    let mut rng = Pcg32::new(18, 1);
    let batches = fewshot_core::data::triplet_batches(&ds, Split::Train, 4, &mut rng).unwrap();
    let g = Graph::new();
    model.triplet_loss(&g, &Triplet::to_batch::<f32>(&batches[0])).unwrap();

    let protos = PrototypeSet {
        prototypes: Tensor::from_vec(&[2, 8], vec![0.0; 16]),
        class_map: vec!["a".into(), "b".into()],
    };
    let query = ds.samples(0, Split::Test)[0].clone();
    let request =
        CamRequest { method: CamMethod::GradCam, query: &query, target_class: 0, protos: &protos };
    let err = compute_cam(&model, &request).unwrap_err();
    assert!(err.to_string().contains("feature map"), "{err}");
}

#[test]
fn training_via_dispatch_matches_head_kind() {
    let ds = tiny_dataset(61);
    // Episodic head through the dispatcher.
    let mut config = TrainConfig::defaults(Head::Proto);
    config.seed = 17;
    config.n_way = 3;
    config.k_shot = 2;
    config.q_query = 1;
    config.max_episodes = Some(10);
    config.max_epochs = None;
    config.eval_interval = 5;
    config.val_episodes = 3;
    let model: FewShotModel<f32> = tiny_model(Head::Proto, 103);
    assert!(train(&model, &ds, &config).is_ok());

    // Wrong pairing is rejected.
    let siamese: FewShotModel<f32> = tiny_model(Head::Siamese, 105);
    assert!(train_episodic(&siamese, &ds, &config).is_err());
}
