//! `DTIX` index files and their tab-separated debug export.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use dualtask_core::index::{IndexEntry, VideoIndex};

use super::binary::{Decoder, Encoder};
use super::{read_bytes, write_bytes};

const MAGIC: &[u8; 4] = b"DTIX";
const VERSION: u32 = 1;

pub fn encode(index: &VideoIndex) -> Vec<u8> {
    let mut e = Encoder::new(MAGIC, VERSION);
    e.usize(index.dim());
    e.usize(index.concept_count());
    e.usize(index.len());
    e.u64(index.vocab_hash());
    for entry in index.entries() {
        e.str(&entry.video_id);
        e.u8(entry.degenerate as u8);
        e.f64s(&entry.embedding);
        e.f64s(&entry.concepts);
    }
    e.finish()
}

pub fn decode(bytes: &[u8]) -> Result<VideoIndex> {
    let (mut d, version) = Decoder::open(bytes, MAGIC, "index")?;
    ensure!(version == VERSION, "unsupported index version {version}");
    let (dim, m, n) = (d.usize()?, d.usize()?, d.usize()?);
    let hash = d.u64()?;
    let mut entries = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let video_id = d.str()?;
        let degenerate = d.u8()? != 0;
        let embedding = d.f64s(dim)?;
        let concepts = d.f64s(m)?;
        entries.push(IndexEntry { video_id, embedding, concepts, degenerate });
    }
    d.finish()?;
    Ok(VideoIndex::from_entries(dim, m, hash, entries)?)
}

pub fn save(path: &Path, index: &VideoIndex) -> Result<()> {
    write_bytes(path, &encode(index))
}

pub fn load(path: &Path) -> Result<VideoIndex> {
    decode(&read_bytes(path)?).with_context(|| format!("in {}", path.display()))
}

/// One line per video: id, degenerate flag, comma-joined embedding and
/// comma-joined concept probabilities.
pub fn format_tsv(index: &VideoIndex) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut s = format!(
        "# d={} m={} n={} vocab_hash={:016x}\nvideo_id\tdegenerate\tembedding\tconcepts\n",
        index.dim(),
        index.concept_count(),
        index.len(),
        index.vocab_hash()
    );
    for e in index.entries() {
        writeln!(s, "{}\t{}\t{}\t{}", e.video_id, e.degenerate as u8, join(&e.embedding), join(&e.concepts)).unwrap();
    }
    s
}
