//! Subcommand implementations.

mod corpus;
mod evaluate;
mod model;
mod retrieval;

use std::io::Write;

use anyhow::{bail, Result};
use dualtask_core::data::{StopwordList, Vocabulary};

use crate::config::Config;
use crate::events::EventLog;
use crate::formats::{text, write_bytes};

pub fn dispatch(name: &str, config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    match name {
        "gen-synthetic" => corpus::gen_synthetic(config, events, out),
        "build-vocab" => corpus::build_vocab(config, events, out),
        "train" => model::train(config, events, out),
        "index" => model::index(config, events, out),
        "search" => retrieval::search(config, events, out, false),
        "bool-search" => retrieval::search(config, events, out, true),
        "concepts" => retrieval::concepts(config, out),
        "prune" => retrieval::prune(config, events, out),
        "eval" => evaluate::eval(config, events, out),
        "sig-test" => evaluate::sig_test(config, events, out),
        other => bail!("unknown command {other}"),
    }
}

/// Writes to `--out` when given, otherwise to `out`.
fn emit(config: &Config, out: &mut dyn Write, text: &str) -> Result<()> {
    match config.path("out") {
        Some(p) => write_bytes(&p, text.as_bytes()),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

/// Stopwords removed from the concept vocabulary and from concept queries.
fn stopwords(config: &Config) -> Result<StopwordList> {
    if config.flag("keep_stopwords") {
        return Ok(StopwordList::empty());
    }
    match config.path("stopwords") {
        Some(p) => text::read_stopwords(&p),
        None => Ok(StopwordList::english()),
    }
}

fn concept_vocab(config: &Config) -> Result<Vocabulary> {
    text::read_vocabulary(&config.require_path("vocab")?)
}
