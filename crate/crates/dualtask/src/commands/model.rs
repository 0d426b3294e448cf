use std::io::Write;

use anyhow::{ensure, Context, Result};
use dualtask_core::data::{build_vocabulary, Dataset, StopwordList};
use dualtask_core::index::build_index;
use dualtask_core::model::DualTaskModel;
use dualtask_core::training::{train_model, ValidationPair};
use serde_json::json;

use super::concept_vocab;
use crate::config::Config;
use crate::events::EventLog;
use crate::formats::{checkpoint, frames, index as index_file, text, write_bytes};

pub fn train(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let out_path = config.require_path("out")?;
    let captions = text::read_captions(&config.require_path("captions")?)?;
    let videos = frames::read_frames(&config.require_path("frames")?)?;
    let frame_dim = frames::common_dim(&videos)?;
    let concepts = concept_vocab(config)?;
    let text_vocab = match config.path("text_vocab") {
        Some(p) => text::read_vocabulary(&p)?,
        None => build_vocabulary(captions.values().flatten().map(String::as_str), config.usize("min_count")?, &StopwordList::empty())
            .context("building the text vocabulary")?,
    };
    let encoder = config.encoder_config(text_vocab.len(), frame_dim)?;
    let train_config = config.train_config()?;

    let validation = match config.path("validation_captions") {
        Some(p) => {
            let caps = text::read_captions(&p)?;
            let mut pairs = Vec::new();
            for (vid, list) in &caps {
                ensure!(videos.contains_key(vid), "validation video {vid} has no frames");
                for c in list {
                    let tokens = text_vocab.encode(c);
                    if !tokens.is_empty() {
                        pairs.push(ValidationPair { video_id: vid.clone(), tokens });
                    }
                }
            }
            ensure!(!pairs.is_empty(), "no validation caption has an in-vocabulary token");
            Some(pairs)
        }
        None => None,
    };
    let dataset = Dataset::new(videos, captions)?;

    let mut model = DualTaskModel::new(encoder, concepts.len(), train_config.seed)?;
    if let Some(p) = config.path("word_vectors") {
        let found = text::load_word_vectors(&p, &text_vocab, &mut model.text.embedding.weights)?;
        log::info!("loaded word vectors for {found} of {} tokens", text_vocab.len());
        model.text.embedding.trainable = !config.flag("freeze_word_vectors");
    } else if config.flag("freeze_word_vectors") {
        log::warn!("freeze_word_vectors without word_vectors keeps the random initialization fixed");
        model.text.embedding.trainable = false;
    }

    let outcome = train_model(model, &train_config, &dataset, &text_vocab, &concepts, validation.as_deref())?;
    let report = &outcome.report;
    if report.dropped_pairs > 0 {
        log::warn!("{} caption pairs had no in-vocabulary token and were skipped", report.dropped_pairs);
    }
    checkpoint::save(&out_path, &outcome.checkpoint)?;
    events.emit(
        "train",
        json!({
            "epoch_losses": report.epoch_losses,
            "validation_scores": report.validation_scores,
            "best_epoch": report.best_epoch,
            "stopped_early": report.stopped_early,
            "dropped_pairs": report.dropped_pairs,
        }),
    )?;
    writeln!(
        out,
        "best epoch {} of {}, validation {:.6}, saved {}",
        report.best_epoch,
        report.validation_scores.len(),
        outcome.checkpoint.validation_score,
        out_path.display()
    )?;
    Ok(())
}

pub fn index(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let out_path = config.require_path("out")?;
    let ck = checkpoint::load(&config.require_path("checkpoint")?)?;
    let concepts = concept_vocab(config)?;
    ck.check_concept_vocab(&concepts)?;
    let videos = frames::read_frames(&config.require_path("frames")?)?;
    let index = build_index(&ck.model, concepts.hash(), videos.iter().map(|(k, v)| (k.as_str(), v)))?;
    let degenerate = index.entries().iter().filter(|e| e.degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} videos have constant frames");
    }
    index_file::save(&out_path, &index)?;
    if let Some(tsv) = config.path("tsv") {
        write_bytes(&tsv, index_file::format_tsv(&index).as_bytes())?;
    }
    events.emit("index", json!({ "videos": index.len(), "degenerate": degenerate }))?;
    writeln!(out, "indexed {} videos into {}", index.len(), out_path.display())?;
    Ok(())
}
