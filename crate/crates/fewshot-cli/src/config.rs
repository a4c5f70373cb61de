//! Flat key-value run configuration with per-head defaults.
//!
//! Format: one `key = value` per line, `#` comments, blank lines ignored.
//! Unknown keys are rejected. Environment variables override exactly two
//! keys: `FEWSHOT_OUTPUT_DIR` (output_dir) and `FEWSHOT_THREADS` (threads).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use fewshot_core::models::Head;
use fewshot_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub head: Head,
    pub dataset_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub image_size: usize,
    pub num_classes: usize,
    pub num_support: usize,
    pub num_query: usize,
    pub feature_dim: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub loss_fn: String,
    pub patience: u32,
    pub max_epochs: Option<u64>,
    pub max_episodes: Option<u64>,
    pub eval_interval: u64,
    pub margin: f64,
    pub batch_size: usize,
    pub val_episodes: u32,
    pub eval_episodes: u64,
    pub threads: usize,
}

impl RunConfig {
    /// Per-head defaults: episode geometry, optimizer settings, and budgets
    /// follow each head's standard training recipe.
    pub fn defaults(head: Head) -> RunConfig {
        let train = TrainConfig::defaults(head);
        let loss_fn = match head {
            Head::Siamese => "triplet",
            Head::Relation => "bce",
            _ => "cross_entropy",
        };
        let feature_dim = match head {
            Head::Hybrid => 512,
            _ => 64,
        };
        RunConfig {
            head,
            dataset_root: None,
            output_dir: PathBuf::from("runs").join(head.as_str()),
            seed: 0,
            image_size: 64,
            num_classes: train.n_way,
            num_support: train.k_shot,
            num_query: train.q_query,
            feature_dim,
            optimizer: "adam".to_string(),
            learning_rate: train.lr,
            loss_fn: loss_fn.to_string(),
            patience: train.patience,
            max_epochs: train.max_epochs,
            max_episodes: train.max_episodes,
            eval_interval: train.eval_interval,
            margin: train.margin,
            batch_size: train.batch_size,
            val_episodes: train.val_episodes,
            eval_episodes: 100,
            threads: 1,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            head: self.head,
            n_way: self.num_classes,
            k_shot: self.num_support,
            q_query: self.num_query,
            lr: self.learning_rate,
            max_episodes: self.max_episodes,
            max_epochs: self.max_epochs,
            eval_interval: self.eval_interval,
            patience: self.patience,
            margin: self.margin,
            batch_size: self.batch_size,
            val_episodes: self.val_episodes,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.optimizer != "adam" {
            return Err(CliError::Usage(format!(
                "optimizer '{}' unsupported; the training loop is Adam-based",
                self.optimizer
            )));
        }
        let expected_loss = match self.head {
            Head::Siamese => "triplet",
            Head::Relation => "bce",
            _ => "cross_entropy",
        };
        if self.loss_fn != expected_loss {
            return Err(CliError::Usage(format!(
                "loss_fn '{}' does not match head '{}' (expected '{expected_loss}')",
                self.loss_fn,
                self.head.as_str()
            )));
        }
        if self.threads < 1 {
            return Err(CliError::Usage("threads must be >= 1".to_string()));
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Apply one key. Unknown keys are usage errors.
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |k: &str, v: &str| CliError::Usage(format!("config key '{k}': bad value '{v}'"));
        match key {
            "head" => self.head = Head::parse(value).map_err(|e| CliError::Usage(e.to_string()))?,
            "dataset_root" => self.dataset_root = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "image_size" => self.image_size = value.parse().map_err(|_| bad(key, value))?,
            "num_classes" => self.num_classes = value.parse().map_err(|_| bad(key, value))?,
            "num_support" => self.num_support = value.parse().map_err(|_| bad(key, value))?,
            "num_query" => self.num_query = value.parse().map_err(|_| bad(key, value))?,
            "feature_dim" => self.feature_dim = value.parse().map_err(|_| bad(key, value))?,
            "optimizer" => self.optimizer = value.to_string(),
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key, value))?,
            "loss_fn" => self.loss_fn = value.to_string(),
            "patience" => self.patience = value.parse().map_err(|_| bad(key, value))?,
            "max_epochs" => self.max_epochs = Some(value.parse().map_err(|_| bad(key, value))?),
            "max_episodes" => self.max_episodes = Some(value.parse().map_err(|_| bad(key, value))?),
            "eval_interval" => self.eval_interval = value.parse().map_err(|_| bad(key, value))?,
            "margin" => self.margin = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "val_episodes" => self.val_episodes = value.parse().map_err(|_| bad(key, value))?,
            "eval_episodes" => self.eval_episodes = value.parse().map_err(|_| bad(key, value))?,
            "threads" => self.threads = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(CliError::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Every key in a form the parser accepts back; re-running the dump
    /// reproduces the run.
    pub fn dump(&self) -> String {
        let mut pairs: BTreeMap<&str, String> = BTreeMap::new();
        pairs.insert("head", self.head.as_str().to_string());
        if let Some(root) = &self.dataset_root {
            pairs.insert("dataset_root", root.display().to_string());
        }
        pairs.insert("output_dir", self.output_dir.display().to_string());
        pairs.insert("seed", self.seed.to_string());
        pairs.insert("image_size", self.image_size.to_string());
        pairs.insert("num_classes", self.num_classes.to_string());
        pairs.insert("num_support", self.num_support.to_string());
        pairs.insert("num_query", self.num_query.to_string());
        pairs.insert("feature_dim", self.feature_dim.to_string());
        pairs.insert("optimizer", self.optimizer.clone());
        pairs.insert("learning_rate", format!("{:e}", self.learning_rate));
        pairs.insert("loss_fn", self.loss_fn.clone());
        pairs.insert("patience", self.patience.to_string());
        if let Some(v) = self.max_epochs {
            pairs.insert("max_epochs", v.to_string());
        }
        if let Some(v) = self.max_episodes {
            pairs.insert("max_episodes", v.to_string());
        }
        pairs.insert("eval_interval", self.eval_interval.to_string());
        pairs.insert("margin", self.margin.to_string());
        pairs.insert("batch_size", self.batch_size.to_string());
        pairs.insert("val_episodes", self.val_episodes.to_string());
        pairs.insert("eval_episodes", self.eval_episodes.to_string());
        pairs.insert("threads", self.threads.to_string());
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}

/// Parse the flat key-value document into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Resolve a full config: per-head defaults, then file pairs, then flag
/// overrides, then the two environment overrides.
pub fn resolve(
    file_pairs: &[(String, String)],
    head_flag: Option<&str>,
    seed_flag: Option<u64>,
    out_flag: Option<&str>,
) -> Result<RunConfig, CliError> {
    let head_str = head_flag
        .map(str::to_string)
        .or_else(|| {
            file_pairs
                .iter()
                .find(|(k, _)| k == "head")
                .map(|(_, v)| v.clone())
        })
        .ok_or_else(|| CliError::Usage("no head given (config 'head = ...' or --head)".into()))?;
    let head = Head::parse(&head_str).map_err(|e| CliError::Usage(e.to_string()))?;

    let mut config = RunConfig::defaults(head);
    for (key, value) in file_pairs {
        if key == "head" {
            continue; // already folded into the defaults choice
        }
        config.set(key, value)?;
    }
    if let Some(seed) = seed_flag {
        config.seed = seed;
    }
    if let Some(out) = out_flag {
        config.output_dir = PathBuf::from(out);
    }
    if let Ok(dir) = std::env::var("FEWSHOT_OUTPUT_DIR") {
        if !dir.is_empty() {
            config.output_dir = PathBuf::from(dir);
        }
    }
    if let Ok(threads) = std::env::var("FEWSHOT_THREADS") {
        if !threads.is_empty() {
            config.threads = threads
                .parse()
                .map_err(|_| CliError::Usage(format!("FEWSHOT_THREADS: bad value '{threads}'")))?;
        }
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hybrid_defaults_are_stable() {
        let c = RunConfig::defaults(Head::Hybrid);
        assert_eq!(c.num_classes, 4);
        assert_eq!(c.num_support, 5);
        assert_eq!(c.num_query, 10);
        assert_eq!(c.feature_dim, 512);
        assert_eq!(c.optimizer, "adam");
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.loss_fn, "cross_entropy");
        assert_eq!(c.patience, 10);
        assert_eq!(c.max_epochs, Some(100));
    }

    #[test]
    fn matching_defaults_use_thirty_shot_tasks() {
        let c = RunConfig::defaults(Head::Matching);
        assert_eq!((c.num_classes, c.num_support, c.num_query), (4, 30, 30));
        assert_eq!(c.max_episodes, Some(2000));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let pairs = parse_pairs("head = proto\nbogus_key = 1\n").unwrap();
        let err = resolve(&pairs, None, None, None).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn dump_round_trips_through_the_parser() {
        let pairs = parse_pairs("head = siamese\nseed = 11\nmargin = 0.5\n").unwrap();
        let config = resolve(&pairs, None, None, None).unwrap();
        let dumped = config.dump();
        let reparsed = resolve(&parse_pairs(&dumped).unwrap(), None, None, None).unwrap();
        assert_eq!(reparsed.seed, 11);
        assert_eq!(reparsed.margin, 0.5);
        assert_eq!(reparsed.head, Head::Siamese);
        assert_eq!(reparsed.dump(), dumped);
    }

    #[test]
    fn loss_head_mismatch_is_a_usage_error() {
        let pairs = parse_pairs("head = hybrid\nloss_fn = triplet\n").unwrap();
        let config = resolve(&pairs, None, None, None).unwrap();
        assert!(matches!(config.validate(), Err(CliError::Usage(_))));
    }
}
