//! `DTCK` checkpoints: encoder configuration, vocabulary hash, the text
//! vocabulary and every parameter block in declared order.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use dualtask_core::data::Vocabulary;
use dualtask_core::encoding::EncoderConfig;
use dualtask_core::layers::BnMode;
use dualtask_core::model::DualTaskModel;
use dualtask_core::params::{BlockKind, Parameters};
use dualtask_core::training::ModelCheckpoint;

use super::binary::{Decoder, Encoder};
use super::{read_bytes, write_bytes};

const MAGIC: &[u8; 4] = b"DTCK";
const VERSION: u32 = 1;

fn kind_code(kind: BlockKind) -> u8 {
    match kind {
        BlockKind::Trainable => 0,
        BlockKind::Frozen => 1,
        BlockKind::Buffer => 2,
    }
}

pub fn encode(ck: &ModelCheckpoint) -> Vec<u8> {
    let m = &ck.model;
    let c = &m.config;
    let mut e = Encoder::new(MAGIC, VERSION);
    for v in [c.frame_feature_dim, c.word_embedding_dim, c.gru_hidden_dim, c.conv_filters_per_width, c.common_dim, c.vocab_size] {
        e.usize(v);
    }
    e.usize(c.conv_filter_widths.len());
    for &w in &c.conv_filter_widths {
        e.usize(w);
    }
    e.u8(m.text.embedding.trainable as u8);
    e.usize(m.concept_count());
    e.u64(ck.concept_vocab_hash);
    e.usize(ck.epoch);
    e.f64(ck.validation_score);
    e.usize(ck.text_vocab.len());
    for (t, n) in ck.text_vocab.entries() {
        e.str(t);
        e.usize(*n);
    }
    let mut blocks = Vec::new();
    m.visit("", &mut |name, kind, v| blocks.push((name.to_string(), kind, v.to_vec())));
    e.usize(blocks.len());
    for (name, kind, v) in &blocks {
        e.str(name);
        e.u8(kind_code(*kind));
        e.usize(v.len());
        e.f64s(v);
    }
    e.finish()
}

/// Rebuilds the model with batch norm in inference mode.
pub fn decode(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let (mut d, version) = Decoder::open(bytes, MAGIC, "checkpoint")?;
    ensure!(version == VERSION, "unsupported checkpoint version {version}");
    let dims: Vec<usize> = (0..6).map(|_| d.usize()).collect::<Result<_>>()?;
    let n_widths = d.usize()?;
    let widths: Vec<usize> = (0..n_widths).map(|_| d.usize()).collect::<Result<_>>()?;
    let config = EncoderConfig {
        frame_feature_dim: dims[0],
        word_embedding_dim: dims[1],
        gru_hidden_dim: dims[2],
        conv_filters_per_width: dims[3],
        common_dim: dims[4],
        vocab_size: dims[5],
        conv_filter_widths: widths,
    };
    let trainable_words = d.u8()? != 0;
    let concepts = d.usize()?;
    let concept_vocab_hash = d.u64()?;
    let epoch = d.usize()?;
    let validation_score = d.f64()?;
    let n_tokens = d.usize()?;
    let entries = (0..n_tokens).map(|_| Ok((d.str()?, d.usize()?))).collect::<Result<Vec<_>>>()?;
    let text_vocab = Vocabulary::from_entries(entries)?;
    ensure!(text_vocab.len() == config.vocab_size, "text vocabulary size disagrees with the encoder config");

    let mut model = DualTaskModel::new(config, concepts, 0)?;
    model.text.embedding.trainable = trainable_words;
    let layout = model.layout();
    let n_blocks = d.usize()?;
    ensure!(n_blocks == layout.len(), "checkpoint has {n_blocks} parameter blocks, the model has {}", layout.len());
    let mut values = Vec::with_capacity(n_blocks);
    for (name, kind, len) in &layout {
        let stored = d.str()?;
        ensure!(&stored == name, "parameter block {stored:?} found where {name:?} was expected");
        ensure!(d.u8()? == kind_code(*kind), "block {name} has the wrong kind");
        let n = d.usize()?;
        ensure!(n == *len, "block {name} holds {n} values, expected {len}");
        values.push(d.f64s(n)?);
    }
    d.finish()?;
    let mut next = values.into_iter();
    model.visit_mut("", &mut |_, _, v| v.copy_from_slice(&next.next().expect("block count checked")));
    model.set_mode(BnMode::Infer);
    Ok(ModelCheckpoint { model, text_vocab, concept_vocab_hash, epoch, validation_score })
}

pub fn save(path: &Path, ck: &ModelCheckpoint) -> Result<()> {
    write_bytes(path, &encode(ck))
}

pub fn load(path: &Path) -> Result<ModelCheckpoint> {
    decode(&read_bytes(path)?).with_context(|| format!("in {}", path.display()))
}
