use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use anyhow::{bail, ensure, Context, Result};
use dualtask_core::boolean::{eval_boolean, parse_boolean, ProductMaxFusion};
use dualtask_core::eval::RunFile;
use dualtask_core::index::{Fallback, SearchEngine};
use dualtask_core::interpret::{decode_concepts, prune_by_keywords, pruning_report, PruneSpec};
use dualtask_core::{Error, RankedList};
use rayon::prelude::*;
use serde_json::json;

use super::{concept_vocab, emit, stopwords};
use crate::config::Config;
use crate::events::EventLog;
use crate::formats::{checkpoint, index as index_file, text, trec};

/// `--query` with `--qid`, or every line of `--queries`.
fn queries(config: &Config) -> Result<(Vec<(String, String)>, bool)> {
    match (config.text("query"), config.path("queries")) {
        (Some(q), None) => Ok((vec![(config.text("qid").unwrap_or("q1").to_string(), q.to_string())], true)),
        (None, Some(p)) => Ok((text::read_queries(&p)?, false)),
        (Some(_), Some(_)) => bail!("give either --query or --queries, not both"),
        (None, None) => bail!("--query or --queries is required"),
    }
}

fn describe(f: Fallback) -> &'static str {
    match f {
        Fallback::EmbeddingOnly => "no concept token, embedding scores only",
        Fallback::ConceptOnly => "no text-vocabulary token, concept scores only",
    }
}

pub fn search(config: &Config, events: &mut EventLog, out: &mut dyn Write, boolean: bool) -> Result<()> {
    let ck = checkpoint::load(&config.require_path("checkpoint")?)?;
    let index = index_file::load(&config.require_path("index")?)?;
    let concepts = concept_vocab(config)?;
    ck.check_concept_vocab(&concepts)?;
    let stop = stopwords(config)?;
    let engine = SearchEngine::new(&index, &ck.model, &ck.text_vocab, &concepts, &stop)?;
    let scorer = config.scorer()?;
    let topk = config.usize("topk")?;
    let (queries, single) = queries(config)?;

    let results: Vec<Result<(RankedList, Vec<String>)>> = queries
        .par_iter()
        .map(|(qid, q)| {
            let r = if boolean {
                let ast = parse_boolean(q).with_context(|| format!("query {qid}"))?;
                let r = eval_boolean(&engine, qid, &ast, scorer, &ProductMaxFusion)?;
                let notes = r.fallbacks.iter().map(|(leaf, f)| format!("leaf {leaf:?}: {}", describe(*f))).collect();
                (r.list, notes)
            } else {
                let r = engine.search(qid, q, scorer)?;
                (r.list, r.fallback.map(|f| describe(f).to_string()).into_iter().collect())
            };
            Ok(r)
        })
        .collect();

    let tag = config.run_tag();
    let mut run = String::new();
    let (mut written, mut skipped) = (0usize, 0usize);
    for ((qid, _), r) in queries.iter().zip(results) {
        match r {
            Ok((list, notes)) => {
                for n in notes {
                    log::warn!("query {qid}: {n}");
                }
                trec::append_list(&mut run, qid, &list.truncated(topk), &tag);
                written += 1;
            }
            Err(e) if !single && matches!(e.downcast_ref::<Error>(), Some(Error::EmptyQuery)) => {
                log::warn!("query {qid}: no token is in either vocabulary, skipped");
                skipped += 1;
            }
            Err(e) => return Err(e.context(format!("query {qid}"))),
        }
    }
    events.emit(
        if boolean { "bool-search" } else { "search" },
        json!({ "queries": written, "skipped": skipped, "tag": tag }),
    )?;
    emit(config, out, &run)
}

pub fn concepts(config: &Config, out: &mut dyn Write) -> Result<()> {
    let index = index_file::load(&config.require_path("index")?)?;
    let vocab = concept_vocab(config)?;
    ensure!(
        index.vocab_hash() == vocab.hash(),
        Error::VocabularyMismatch { expected: index.vocab_hash(), found: vocab.hash() }
    );
    let depth = config.usize("concept_depth")?;
    let ids: Vec<String> = match config.text("videos") {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => index.entries().iter().map(|e| e.video_id.clone()).collect(),
    };
    let mut s = String::from("# video_id\trank\tconcept\tprobability\n");
    for id in &ids {
        let entry = index.get(id).ok_or_else(|| Error::UnknownVideo(id.clone()))?;
        let decoded = decode_concepts(entry, &vocab, depth)?;
        for (rank, (token, p)) in decoded.concepts.iter().enumerate() {
            writeln!(s, "{id}\t{}\t{token}\t{p}", rank + 1).unwrap();
        }
    }
    emit(config, out, &s)
}

/// Writes the pruned run: kept top results followed by everything below the
/// result depth. With judgments, prints one confusion line per query.
pub fn prune(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let run = trec::read_run(&config.require_path("run")?)?;
    let index = index_file::load(&config.require_path("index")?)?;
    let vocab = concept_vocab(config)?;
    ensure!(
        index.vocab_hash() == vocab.hash(),
        Error::VocabularyMismatch { expected: index.vocab_hash(), found: vocab.hash() }
    );
    let specs = text::read_prune_specs(&config.require_path("prune_spec")?)?;
    let judgments = match (config.path("judgments"), config.path("strata")) {
        (Some(j), Some(s)) => Some(trec::read_judgments(&j, &s)?),
        (None, None) => None,
        _ => bail!("--judgments and --strata go together"),
    };
    ensure!(judgments.is_none() || config.path("out").is_some(), "--out is required when a report is printed");
    let concept_depth = config.usize("concept_depth")?;
    let result_depth = config.usize("result_depth")?;

    let mut pruned = RunFile::new(run.tag.clone());
    let mut report = String::new();
    if judgments.is_some() {
        report.push_str(
            "# qid\trel_kept\tnonrel_kept\trel_removed\tnonrel_removed\tunjudged_kept\tunjudged_removed\tprecision_before\tprecision_after\n",
        );
    }
    let mut removed_total = 0usize;
    for (qid, list) in &run.lists {
        let Some(keywords) = specs.get(qid) else {
            log::warn!("query {qid}: no prune keywords, list kept as is");
            pruned.lists.insert(qid.clone(), list.clone());
            continue;
        };
        let mut spec = PruneSpec::new(keywords.iter().cloned()).with_context(|| format!("query {qid}"))?;
        spec.concept_depth = concept_depth;
        spec.result_depth = result_depth;
        let outcome = prune_by_keywords(list, &index, &spec, &vocab)?;
        let removed: std::collections::BTreeSet<&str> = outcome.removed.video_ids().collect();
        removed_total += removed.len();
        pruned.lists.insert(qid.clone(), list.filtered(|v| !removed.contains(v)));
        if let Some(j) = judgments.as_ref().and_then(|j| j.get(qid)) {
            let r = pruning_report(&outcome.kept, &outcome.removed, &j.judged());
            writeln!(
                report,
                "{qid}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}",
                r.relevant_kept,
                r.nonrelevant_kept,
                r.relevant_removed,
                r.nonrelevant_removed,
                r.unjudged_kept,
                r.unjudged_removed,
                r.precision_before,
                r.precision_after
            )
            .unwrap();
        }
    }
    let unused: BTreeMap<_, _> = specs.iter().filter(|(q, _)| !run.lists.contains_key(*q)).collect();
    for q in unused.keys() {
        log::warn!("prune spec for query {q} has no list in the run");
    }
    events.emit("prune", json!({ "queries": run.lists.len(), "removed": removed_total }))?;
    emit(config, out, &trec::format_run(&pruned))?;
    if judgments.is_some() {
        out.write_all(report.as_bytes())?;
    }
    Ok(())
}
