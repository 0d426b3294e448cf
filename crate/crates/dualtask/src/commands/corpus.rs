use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;

use anyhow::{Context, Result};
use dualtask_core::data::{build_vocabulary, generate_synthetic_corpus, SyntheticCorpus};
use dualtask_core::eval::{JudgmentSet, Stratum};
use serde_json::json;

use super::{emit, stopwords};
use crate::config::Config;
use crate::events::EventLog;
use crate::formats::{frames, text, trec, write_bytes};

struct Query {
    id: String,
    text: String,
    relevant: Vec<String>,
    prune: Option<String>,
}

/// One query per concept, one per adjacent concept pair and one Boolean
/// `A AND NOT B` query per adjacent pair.
fn synthetic_queries(corpus: &SyntheticCorpus) -> (Vec<Query>, Vec<Query>) {
    let names = &corpus.concept_names;
    let set = |all: &[usize], none: &[usize]| corpus.videos_with(all, none).into_iter().collect::<Vec<_>>();
    let mut plain = Vec::new();
    let mut boolean = Vec::new();
    for (i, name) in names.iter().enumerate() {
        plain.push(Query { id: format!("s{i:02}"), text: name.clone(), relevant: set(&[i], &[]), prune: None });
    }
    for i in 0..names.len().saturating_sub(1) {
        let (a, b) = (&names[i], &names[i + 1]);
        plain.push(Query {
            id: format!("p{i:02}"),
            text: format!("{a} {b}"),
            relevant: set(&[i, i + 1], &[]),
            prune: Some(format!("{a},{b}")),
        });
        boolean.push(Query {
            id: format!("b{i:02}"),
            text: format!("\"{a}\" AND NOT \"{b}\""),
            relevant: set(&[i], &[i + 1]),
            prune: None,
        });
    }
    (plain, boolean)
}

pub fn gen_synthetic(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let dir = config.require_path("out_dir")?;
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let spec = config.synthetic_spec()?;
    let corpus = generate_synthetic_corpus(&spec)?;
    let data = &corpus.dataset;

    write_bytes(&dir.join("captions.tsv"), text::format_captions(&data.captions).as_bytes())?;
    let frames_name = if config.flag("synthetic_text_frames") { "frames.txt" } else { "frames.dtff" };
    frames::write_frames(&dir.join(frames_name), &data.videos)?;

    let mut truth = String::from("# video_id\tconcepts\n");
    for (v, cs) in &corpus.video_concepts {
        let names: Vec<&str> = cs.iter().map(|&c| corpus.concept_names[c].as_str()).collect();
        writeln!(truth, "{v}\t{}", names.join(",")).unwrap();
    }
    write_bytes(&dir.join("truth.tsv"), truth.as_bytes())?;

    let (plain, boolean) = synthetic_queries(&corpus);
    let n = data.videos.len();
    let stratum = Stratum { id: 1, depth_from: 1, depth_to: n, rate: 1.0 };
    for (file, judgment_file, queries) in
        [("queries.tsv", "judgments.txt", &plain), ("bool_queries.tsv", "bool_judgments.txt", &boolean)]
    {
        let mut s = String::new();
        let mut judgments = BTreeMap::new();
        for q in queries {
            writeln!(s, "{}\t{}", q.id, q.text).unwrap();
            let relevance = data.videos.keys().map(|v| (v.clone(), q.relevant.contains(v))).collect();
            judgments.insert(q.id.clone(), JudgmentSet::complete(q.id.clone(), &relevance));
        }
        write_bytes(&dir.join(file), s.as_bytes())?;
        write_bytes(&dir.join(judgment_file), trec::format_judgments(&judgments).as_bytes())?;
    }
    let mut prune = String::new();
    for q in plain.iter().filter(|q| q.prune.is_some()) {
        writeln!(prune, "{}\t{}", q.id, q.prune.as_deref().unwrap()).unwrap();
    }
    write_bytes(&dir.join("prune.tsv"), prune.as_bytes())?;
    write_bytes(&dir.join("strata.txt"), trec::format_strata(&[stratum]).as_bytes())?;

    events.emit(
        "gen-synthetic",
        json!({ "videos": n, "captions": data.pairs.len(), "concepts": corpus.concept_names.len(), "queries": plain.len() + boolean.len() }),
    )?;
    writeln!(
        out,
        "wrote {n} videos, {} captions and {} queries to {}",
        data.pairs.len(),
        plain.len() + boolean.len(),
        dir.display()
    )?;
    Ok(())
}

pub fn build_vocab(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let captions = text::read_captions(&config.require_path("captions")?)?;
    let stop = stopwords(config)?;
    let min_count = config.usize("min_count")?;
    let vocab = build_vocabulary(captions.values().flatten().map(String::as_str), min_count, &stop)?;
    log::info!("concept vocabulary: {} tokens, hash {:016x}", vocab.len(), vocab.hash());
    events.emit("build-vocab", json!({ "tokens": vocab.len(), "hash": format!("{:016x}", vocab.hash()) }))?;
    emit(config, out, &text::format_vocabulary(&vocab))
}
