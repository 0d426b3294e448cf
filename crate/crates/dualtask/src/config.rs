//! Configuration keys shared by config files and command-line flags.
//!
//! Every key has a default (possibly unset), a kind used to validate values
//! and a help line. Values are resolved as defaults, then the config file,
//! then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use dualtask_core::data::SyntheticSpec;
use dualtask_core::encoding::EncoderConfig;
use dualtask_core::index::Scorer;
use dualtask_core::model::TaskMask;
use dualtask_core::objectives::{ClassificationObjective, LossHyperParams};
use dualtask_core::training::{TrainConfig, ValidationMetric};
use sha2::{Digest, Sha256};

use crate::formats::{data_lines, read_to_string};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Count,
    Integer,
    /// A count that may be 0.
    Count0,
    Real,
    Flag,
    Text,
    Path,
    Choice(&'static [&'static str]),
    /// Comma-separated positive integers.
    Widths,
    /// A count or `none`.
    Patience,
    /// A count or `auto`.
    AutoCount,
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    /// Empty when the key has no default.
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Key {
    Key { name, kind, default, help }
}

pub const OBJECTIVES: &[&str] = &["class-sensitive", "plain-bce"];
pub const TASKS: &[&str] = &["both", "matching", "classification"];
pub const SCORERS: &[&str] = &["combined", "embedding", "concept"];

pub const KEYS: &[Key] = &[
    // training
    key("epochs", Kind::Count, "30", "Training epochs"),
    key("batch_size", Kind::Count, "32", "Pairs per batch"),
    key("lr", Kind::Real, "0.0001", "Adam learning rate"),
    key("margin", Kind::Real, "0.2", "Triplet ranking margin"),
    key("lambda", Kind::Real, "0.2", "Weight of mentioned classes in the class-sensitive loss"),
    key("prediction_clip", Kind::Real, "1e-7", "Clip predictions to [c, 1-c] inside the log"),
    key("seed", Kind::Integer, "0", "Seed for initialization, shuffling and sampling"),
    key("objective", Kind::Choice(OBJECTIVES), "class-sensitive", "Classification loss"),
    key("tasks", Kind::Choice(TASKS), "both", "Which task losses to train"),
    key("patience", Kind::Patience, "5", "Epochs without validation gain before stopping, or none"),
    key("validation_sample", Kind::Count, "100", "Validation pairs sampled from training videos"),
    // encoder
    key("frame_feature_dim", Kind::AutoCount, "auto", "Frame feature size, or auto to read it from the frames"),
    key("word_embedding_dim", Kind::Count, "16", "Word vector size"),
    key("gru_hidden_dim", Kind::Count, "16", "GRU units per direction"),
    key("conv_filter_widths", Kind::Widths, "2,3,4", "Convolution widths"),
    key("conv_filters_per_width", Kind::Count, "16", "Filters per convolution width"),
    key("common_dim", Kind::Count, "64", "Size of the shared space"),
    key("freeze_word_vectors", Kind::Flag, "false", "Keep loaded word vectors fixed"),
    // vocabulary
    key("min_count", Kind::Count, "5", "Minimum number of captions a token must occur in"),
    key("keep_stopwords", Kind::Flag, "false", "Do not remove stopwords from the concept vocabulary"),
    key("stopwords", Kind::Path, "", "Stopword list replacing the built-in English list"),
    // search and interpretation
    key("theta", Kind::Real, "0.3", "Concept weight in fused scores"),
    key("topk", Kind::Count, "1000", "Results written per query"),
    key("scorer", Kind::Choice(SCORERS), "combined", "Score used for ranking"),
    key("concept_depth", Kind::Count, "30", "Decoded concepts inspected per video"),
    key("result_depth", Kind::Count, "10", "Top results considered for pruning"),
    // significance
    key("iterations", Kind::Count, "10000", "Randomization test iterations"),
    key("exact", Kind::Flag, "false", "Enumerate every swap pattern instead of sampling"),
    // synthetic corpus
    key("synthetic_videos", Kind::Count, "200", "Synthetic videos"),
    key("synthetic_concepts", Kind::Count, "12", "Latent concepts"),
    key("synthetic_frame_dim", Kind::Count, "32", "Frame feature size"),
    key("synthetic_frames", Kind::Count, "8", "Frames per video"),
    key("synthetic_captions", Kind::Count, "2", "Captions per video"),
    key("synthetic_min_concepts", Kind::Count, "1", "Fewest concepts per video"),
    key("synthetic_max_concepts", Kind::Count, "4", "Most concepts per video"),
    key("synthetic_noise", Kind::Real, "0.5", "Per-frame noise deviation"),
    key("synthetic_mention_prob", Kind::Real, "1", "Chance a caption names each concept"),
    key("synthetic_text_frames", Kind::Flag, "false", "Write frames as text instead of binary"),
    // inputs and outputs
    key("captions", Kind::Path, "", "Captions file (video_id TAB caption)"),
    key("frames", Kind::Path, "", "Frame features (binary or text)"),
    key("vocab", Kind::Path, "", "Concept vocabulary (token TAB count)"),
    key("text_vocab", Kind::Path, "", "Text vocabulary; built from the captions when absent"),
    key("word_vectors", Kind::Path, "", "Pretrained word vectors (token v1 ... vd)"),
    key("validation_captions", Kind::Path, "", "Captions used for model selection"),
    key("checkpoint", Kind::Path, "", "Model checkpoint"),
    key("index", Kind::Path, "", "Video index"),
    key("run", Kind::Path, "", "Run file"),
    key("run_b", Kind::Path, "", "Second run file"),
    key("judgments", Kind::Path, "", "Judgments (qid video relevance stratum)"),
    key("strata", Kind::Path, "", "Sampling strata (id from to rate)"),
    key("prune_spec", Kind::Path, "", "Keywords per query (qid TAB kw1,kw2)"),
    key("out", Kind::Path, "", "Output file; standard output when absent"),
    key("out_dir", Kind::Path, "", "Output directory"),
    key("tsv", Kind::Path, "", "Also write a tab-separated dump here"),
    key("query", Kind::Text, "", "Query text"),
    key("qid", Kind::Text, "q1", "Id of a query given with --query"),
    key("queries", Kind::Path, "", "Queries file (qid TAB text)"),
    key("videos", Kind::Text, "", "Comma-separated video ids; all when absent"),
    key("tag", Kind::Text, "", "Run tag; derived from the configuration when absent"),
    key("threads", Kind::Count0, "0", "Worker threads, 0 for one per core"),
    key("events", Kind::Path, "", "Append JSON-lines progress events here"),
];

pub fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn check(key: &Key, value: &str) -> Result<()> {
    let bad = || anyhow!("invalid value {value:?} for {}", key.name);
    match key.kind {
        Kind::Count => {
            let n: usize = value.parse().map_err(|_| bad())?;
            ensure!(n > 0, "{} must be at least 1", key.name);
        }
        Kind::Count0 => {
            value.parse::<usize>().map_err(|_| bad())?;
        }
        Kind::Integer => {
            value.parse::<u64>().map_err(|_| bad())?;
        }
        Kind::Real => {
            let x: f64 = value.parse().map_err(|_| bad())?;
            ensure!(x.is_finite(), "{} must be finite", key.name);
        }
        Kind::Flag => {
            parse_flag(value).ok_or_else(bad)?;
        }
        Kind::Text | Kind::Path => {}
        Kind::Choice(options) => ensure!(options.contains(&value), "{} must be one of {}", key.name, options.join(", ")),
        Kind::Widths => {
            parse_widths(value).ok_or_else(bad)?;
        }
        Kind::Patience => ensure!(value == "none" || value.parse::<usize>().is_ok_and(|n| n > 0), bad()),
        Kind::AutoCount => ensure!(value == "auto" || value.parse::<usize>().is_ok_and(|n| n > 0), bad()),
    }
    Ok(())
}

fn parse_flag(value: &str) -> Option<bool> {
    match value {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_widths(value: &str) -> Option<Vec<usize>> {
    let w: Vec<usize> = value.split(',').map(|s| s.trim().parse().ok().filter(|&n| n > 0)).collect::<Option<_>>()?;
    (!w.is_empty()).then_some(w)
}

/// Resolved key values.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        let values = KEYS.iter().filter(|k| !k.default.is_empty()).map(|k| (k.name, k.default.to_string())).collect();
        Self { values }
    }
}

impl Config {
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let key = lookup(name).ok_or_else(|| anyhow!("unknown configuration key {name:?}"))?;
        let value = value.trim();
        check(key, value)?;
        self.values.insert(key.name, value.to_string());
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in data_lines(text) {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{n}: expected key = value", origin.display()))?;
            self.set(k.trim(), v).with_context(|| format!("{}:{n}", origin.display()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&read_to_string(path)?, path)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        debug_assert!(lookup(name).is_some(), "unregistered key {name}");
        self.values.get(name).map(String::as_str)
    }

    fn raw(&self, name: &str) -> Result<&str> {
        self.get(name).ok_or_else(|| anyhow!("--{} is required", flag_name(name)))
    }

    pub fn usize(&self, name: &str) -> Result<usize> {
        Ok(self.raw(name)?.parse()?)
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        Ok(self.raw(name)?.parse()?)
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        Ok(self.raw(name)?.parse()?)
    }

    pub fn flag(&self, name: &str) -> bool {
        self.get(name).and_then(parse_flag).unwrap_or(false)
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.get(name).map(PathBuf::from)
    }

    pub fn require_path(&self, name: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.raw(name)?))
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.get(name)
    }

    pub fn loss(&self) -> Result<LossHyperParams> {
        Ok(LossHyperParams { margin: self.f64("margin")?, lambda: self.f64("lambda")?, prediction_clip: self.f64("prediction_clip")? })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let objective = match self.raw("objective")? {
            "plain-bce" => ClassificationObjective::PlainBce,
            _ => ClassificationObjective::ClassSensitive,
        };
        let tasks = match self.raw("tasks")? {
            "matching" => TaskMask::MATCHING_ONLY,
            "classification" => TaskMask::CLASSIFICATION_ONLY,
            _ => TaskMask::BOTH,
        };
        let patience = match self.raw("patience")? {
            "none" => None,
            n => Some(n.parse()?),
        };
        let config = TrainConfig {
            epochs: self.usize("epochs")?,
            batch_size: self.usize("batch_size")?,
            lr: self.f64("lr")?,
            loss: self.loss()?,
            objective,
            tasks,
            seed: self.u64("seed")?,
            metric: ValidationMetric::MeanReciprocalRank,
            patience,
            validation_sample: self.usize("validation_sample")?,
        };
        config.validate()?;
        Ok(config)
    }

    /// `frame_dim` is used when `frame_feature_dim` is `auto`.
    pub fn encoder_config(&self, vocab_size: usize, frame_dim: usize) -> Result<EncoderConfig> {
        let frame_feature_dim = match self.raw("frame_feature_dim")? {
            "auto" => frame_dim,
            n => {
                let n: usize = n.parse()?;
                ensure!(n == frame_dim, "frame_feature_dim is {n} but the frames have {frame_dim} features");
                n
            }
        };
        let config = EncoderConfig {
            frame_feature_dim,
            word_embedding_dim: self.usize("word_embedding_dim")?,
            gru_hidden_dim: self.usize("gru_hidden_dim")?,
            conv_filter_widths: parse_widths(self.raw("conv_filter_widths")?).expect("checked on set"),
            conv_filters_per_width: self.usize("conv_filters_per_width")?,
            common_dim: self.usize("common_dim")?,
            vocab_size,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec::new(self.u64("seed")?, self.usize("synthetic_videos")?, self.usize("synthetic_concepts")?);
        spec.frame_dim = self.usize("synthetic_frame_dim")?;
        spec.frames_per_video = self.usize("synthetic_frames")?;
        spec.captions_per_video = self.usize("synthetic_captions")?;
        spec.concepts_per_video = (self.usize("synthetic_min_concepts")?, self.usize("synthetic_max_concepts")?);
        spec.noise = self.f64("synthetic_noise")?;
        spec.mention_prob = self.f64("synthetic_mention_prob")?;
        Ok(spec)
    }

    pub fn scorer(&self) -> Result<Scorer> {
        let theta = self.f64("theta")?;
        ensure!((0.0..=1.0).contains(&theta), "theta {theta} outside [0, 1]");
        Ok(match self.raw("scorer")? {
            "embedding" => Scorer::Embedding,
            "concept" => Scorer::Concept,
            _ => Scorer::Combined(theta),
        })
    }

    /// Set keys as `key=value` lines in registry order.
    pub fn lines(&self) -> Vec<String> {
        KEYS.iter().filter_map(|k| self.values.get(k.name).map(|v| format!("{}={v}", k.name))).collect()
    }

    /// Explicit `tag`, or `dt-` and 12 hex digits of a SHA-256 over every
    /// non-path setting.
    pub fn run_tag(&self) -> String {
        if let Some(t) = self.get("tag") {
            return t.to_string();
        }
        let mut h = Sha256::new();
        for k in KEYS.iter().filter(|k| !matches!(k.kind, Kind::Path | Kind::Text) && k.name != "threads") {
            if let Some(v) = self.values.get(k.name) {
                h.update(format!("{}={v}\n", k.name));
            }
        }
        let digest = h.finalize();
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("dt-{hex}")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(self.values.iter().map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone()))).collect())
    }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn check_value(name: &str, value: &str) -> Result<()> {
    match lookup(name) {
        Some(k) => check(k, value),
        None => bail!("unknown configuration key {name:?}"),
    }
}
