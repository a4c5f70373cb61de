//! `fewshot` command-line interface.
//!
//! Subcommands: prepare, synth, train, eval, explain.
//! Exit codes: 0 success, 1 usage, 2 data, 3 runtime.

mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};

use fewshot_core::data::Split;
use fewshot_core::CoreError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Layout(_) | CoreError::Decode { .. } | CoreError::Capacity(_) => {
                CliError::Data(e.to_string())
            }
            CoreError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

const USAGE: &str = "fewshot — few-shot metric learning at desk scale

USAGE:
    fewshot <COMMAND> [OPTIONS]

COMMANDS:
    prepare   Validate a dataset tree and write its manifest
              --root <dir> [--image-size N] [--out <file>]
    synth     Generate the synthetic dataset on disk
              --out <dir> [--classes N] [--per-class N] [--image-size N] [--seed N]
    train     Train a head from a config file
              [--config <file>] [--head H] [--seed N] [--out <dir>]
    eval      Evaluate a checkpoint
              --checkpoint <file> --data <dir> [--split train|val|test]
              [--episodes N] [--seed N] [--out <file>]
    explain   Write CAM overlays for one test episode
              --checkpoint <file> --data <dir> [--methods all|m1,m2]
              [--queries N] [--seed N] [--out <dir>]

Heads: siamese, relation, matching, proto, hybrid.
CAM methods: grad_cam, grad_cam_pp, eigen_cam.
";

/// Minimal flag parser: every option takes one value.
struct Args {
    values: Vec<(String, String)>,
}

impl Args {
    fn parse(raw: &[String]) -> Result<Args, CliError> {
        let mut values = Vec::new();
        let mut i = 0;
        while i < raw.len() {
            let key = &raw[i];
            if !key.starts_with("--") {
                return Err(CliError::Usage(format!("unexpected argument '{key}'")));
            }
            let Some(value) = raw.get(i + 1) else {
                return Err(CliError::Usage(format!("flag '{key}' expects a value")));
            };
            values.push((key[2..].to_string(), value.clone()));
            i += 2;
        }
        Ok(Args { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required flag '--{key}'")))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("flag '--{key}': bad value '{v}'"))),
        }
    }

    fn parse_opt_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("flag '--{key}': bad value '{v}'"))),
        }
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<(), CliError> {
        for (k, _) in &self.values {
            if !allowed.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("unknown flag '--{k}'")));
            }
        }
        Ok(())
    }
}

fn run() -> Result<(), CliError> {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = raw.first() else {
        eprint!("{USAGE}");
        return Err(CliError::Usage("no command given".into()));
    };
    let args = Args::parse(&raw[1..])?;

    match command.as_str() {
        "prepare" => {
            args.reject_unknown(&["root", "image-size", "out"])?;
            let root = PathBuf::from(args.require("root")?);
            let image_size = args.parse_num("image-size", 64usize)?;
            commands::cmd_prepare(&root, image_size, args.get("out").map(Path::new))
        }
        "synth" => {
            args.reject_unknown(&["out", "classes", "per-class", "image-size", "seed"])?;
            let out = PathBuf::from(args.require("out")?);
            let classes = args.parse_num("classes", 4usize)?;
            let per_class = args.parse_num("per-class", 100usize)?;
            let image_size = args.parse_num("image-size", 64usize)?;
            let seed = args.parse_num("seed", 7u64)?;
            commands::cmd_synth(&out, classes, per_class, image_size, seed)
        }
        "train" => {
            args.reject_unknown(&["config", "head", "seed", "out", "data"])?;
            let file_pairs = match args.get("config") {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Usage(format!("config '{path}': {e}")))?;
                    config::parse_pairs(&text)?
                }
                None => Vec::new(),
            };
            let mut run_config = config::resolve(
                &file_pairs,
                args.get("head"),
                args.parse_opt_num("seed")?,
                args.get("out"),
            )?;
            if let Some(data) = args.get("data") {
                run_config.dataset_root = Some(PathBuf::from(data));
            }
            commands::cmd_train(&run_config)
        }
        "eval" => {
            args.reject_unknown(&["checkpoint", "data", "split", "episodes", "seed", "out"])?;
            let checkpoint = PathBuf::from(args.require("checkpoint")?);
            let data = PathBuf::from(args.require("data")?);
            let split = Split::parse(args.get("split").unwrap_or("test"))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let episodes = args.parse_num("episodes", 100u64)?;
            commands::cmd_eval(
                &checkpoint,
                &data,
                split,
                episodes,
                args.parse_opt_num("seed")?,
                args.get("out").map(Path::new),
            )
        }
        "explain" => {
            args.reject_unknown(&["checkpoint", "data", "methods", "queries", "seed", "out"])?;
            let checkpoint = PathBuf::from(args.require("checkpoint")?);
            let data = PathBuf::from(args.require("data")?);
            let methods = args.get("methods").unwrap_or("all");
            let queries = args.parse_num("queries", 2usize)?;
            let out = PathBuf::from(args.get("out").unwrap_or("overlays"));
            commands::cmd_explain(
                &checkpoint,
                &data,
                methods,
                &out,
                queries,
                args.parse_opt_num("seed")?,
            )
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => {
            eprint!("{USAGE}");
            Err(CliError::Usage(format!("unknown command '{other}'")))
        }
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
