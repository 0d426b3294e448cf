//! Argument parsing, configuration resolution and exit codes.

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clap::builder::PossibleValuesParser;
use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::commands;
use crate::config::{flag_name, lookup, Config, Kind, KEYS};
use crate::events::EventLog;

/// Keys accepted by every subcommand.
pub const GLOBAL_KEYS: &[&str] = &["seed", "threads", "events"];

const SYNTHETIC: &[&str] = &[
    "out_dir",
    "synthetic_videos",
    "synthetic_concepts",
    "synthetic_frame_dim",
    "synthetic_frames",
    "synthetic_captions",
    "synthetic_min_concepts",
    "synthetic_max_concepts",
    "synthetic_noise",
    "synthetic_mention_prob",
    "synthetic_text_frames",
];

const TRAIN: &[&str] = &[
    "captions",
    "frames",
    "vocab",
    "text_vocab",
    "min_count",
    "word_vectors",
    "freeze_word_vectors",
    "validation_captions",
    "out",
    "epochs",
    "batch_size",
    "lr",
    "margin",
    "lambda",
    "prediction_clip",
    "objective",
    "tasks",
    "patience",
    "validation_sample",
    "frame_feature_dim",
    "word_embedding_dim",
    "gru_hidden_dim",
    "conv_filter_widths",
    "conv_filters_per_width",
    "common_dim",
];

const SEARCH: &[&str] = &[
    "checkpoint",
    "index",
    "vocab",
    "stopwords",
    "query",
    "qid",
    "queries",
    "scorer",
    "theta",
    "topk",
    "tag",
    "out",
];

/// Subcommand name, description and the keys it takes as flags.
pub const COMMANDS: &[(&str, &str, &[&str])] = &[
    ("gen-synthetic", "Write a seeded synthetic corpus with queries and complete judgments", SYNTHETIC),
    (
        "build-vocab",
        "Build the concept vocabulary from captions",
        &["captions", "min_count", "keep_stopwords", "stopwords", "out"],
    ),
    ("train", "Train the dual-task model and save the best checkpoint", TRAIN),
    ("index", "Encode every video into an embedding and concept probabilities", &["checkpoint", "frames", "vocab", "out", "tsv"]),
    ("search", "Rank the indexed videos for text queries", SEARCH),
    ("bool-search", "Rank the indexed videos for AND/OR/NOT queries", SEARCH),
    ("concepts", "Print the top decoded concepts of indexed videos", &["index", "vocab", "videos", "concept_depth", "out"]),
    (
        "prune",
        "Drop top results whose decoded concepts miss a query keyword",
        &["run", "index", "vocab", "prune_spec", "concept_depth", "result_depth", "judgments", "strata", "out"],
    ),
    ("eval", "Score a run with inferred average precision", &["run", "judgments", "strata", "out"]),
    (
        "sig-test",
        "Paired randomization test between two runs",
        &["run", "run_b", "judgments", "strata", "iterations", "exact", "out"],
    ),
];

fn arg_for(name: &'static str) -> Arg {
    let key = lookup(name).expect("registered key");
    let help = if key.default.is_empty() { key.help.to_string() } else { format!("{} [default: {}]", key.help, key.default) };
    let arg = Arg::new(name).long(flag_name(name)).help(help).action(ArgAction::Set);
    match key.kind {
        Kind::Flag => arg.num_args(0..=1).require_equals(true).default_missing_value("true").value_name("BOOL"),
        Kind::Choice(options) => arg.value_parser(PossibleValuesParser::new(options.iter().copied())),
        Kind::Path => arg.value_name("PATH"),
        Kind::Real => arg.value_name("X").allow_negative_numbers(true),
        Kind::Text => arg.value_name("TEXT"),
        Kind::Widths => arg.value_name("W,W,.."),
        _ => arg.value_name("N"),
    }
}

pub fn command() -> Command {
    let mut cmd = Command::new("dualtask")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Dual-task video retrieval: training, indexing, search and evaluation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("Config file of key = value lines; flags override it"),
        );
    for name in GLOBAL_KEYS {
        cmd = cmd.arg(arg_for(name).global(true));
    }
    for (name, about, keys) in COMMANDS {
        let mut sub = Command::new(*name).about(*about);
        for k in *keys {
            sub = sub.arg(arg_for(k));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Defaults, then `--config`, then flags.
pub fn resolve(matches: &ArgMatches) -> Result<Config> {
    let mut config = Config::default();
    if let Some(path) = matches.get_one::<String>("config") {
        config.apply_file(Path::new(path))?;
    }
    for key in KEYS {
        if let Ok(Some(v)) = matches.try_get_one::<String>(key.name) {
            config.set(key.name, v).with_context(|| format!("--{}", flag_name(key.name)))?;
        }
    }
    Ok(config)
}

/// Marks failures that are bugs or numerical breakdowns rather than bad
/// input.
#[derive(Debug)]
pub struct Internal(pub String);

impl std::fmt::Display for Internal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    let internal = err.chain().any(|e| {
        e.downcast_ref::<Internal>().is_some()
            || matches!(
                e.downcast_ref::<dualtask_core::Error>(),
                Some(dualtask_core::Error::NonFiniteLoss { .. } | dualtask_core::Error::Divergence(_))
            )
    });
    if internal {
        EXIT_INTERNAL
    } else {
        EXIT_USER
    }
}

/// Parses `args` (program name first) and runs the subcommand. Help and
/// version text go to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            write!(out, "{}", e.render())?;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let config = resolve(sub)?;
    let mut events = EventLog::open(config.path("events").as_deref())?;
    events.emit(
        "config",
        serde_json::json!({ "command": name, "tag": config.run_tag(), "config": config.to_json() }),
    )?;
    let threads = config.usize("threads")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Internal(format!("cannot start worker threads: {e}")))?;
    let mut buf = Vec::new();
    let result = pool.install(|| commands::dispatch(name, &config, &mut events, &mut buf));
    out.write_all(&buf)?;
    result
}

/// Runs the process: parses `std::env::args`, prints errors and returns the
/// exit code. Panics map to the internal-error code.
pub fn main_entry() -> i32 {
    let result = std::panic::catch_unwind(|| {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        let r = run(std::env::args_os(), &mut lock);
        let _ = lock.flush();
        r
    });
    match result {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
                return EXIT_USER;
            }
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
        Err(_) => EXIT_INTERNAL,
    }
}
