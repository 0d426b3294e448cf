//! Whitespace-separated run, judgment and strata files.
//!
//! Runs hold `qid Q0 video rank score tag` lines. Judgments hold
//! `qid video relevance stratum` lines with relevance in `{-1, 0, 1}`, and
//! the strata file `id depth_from depth_to rate` lines shared by all queries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dualtask_core::eval::{JudgmentSet, Relevance, RunFile, Stratum};
use dualtask_core::RankedList;

use super::{data_lines, read_to_string};

fn fields<'a>(line: &'a str, n: usize, path: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split_whitespace().collect();
    ensure!(f.len() == n, "{}:{lineno}: expected {n} fields, found {}", path.display(), f.len());
    Ok(f)
}

fn num<T: std::str::FromStr>(s: &str, what: &str, path: &Path, lineno: usize) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.parse().with_context(|| format!("{}:{lineno}: bad {what} {s:?}", path.display()))
}

pub fn format_run(run: &RunFile) -> String {
    let mut s = String::new();
    for (q, list) in &run.lists {
        append_list(&mut s, q, list, &run.tag);
    }
    s
}

/// Appends one query's lines, ranks starting at 1.
pub fn append_list(out: &mut String, qid: &str, list: &RankedList, tag: &str) {
    for (rank, (v, score)) in list.items().iter().enumerate() {
        writeln!(out, "{qid} Q0 {v} {} {score} {tag}", rank + 1).unwrap();
    }
}

/// Lists are re-sorted canonically; the stored rank column is only checked
/// for being a positive integer.
pub fn parse_run(text: &str, path: &Path) -> Result<RunFile> {
    let mut tag: Option<String> = None;
    let mut items: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let f = fields(line, 6, path, n)?;
        let _: usize = num(f[3], "rank", path, n)?;
        let score: f64 = num(f[4], "score", path, n)?;
        ensure!(score.is_finite(), "{}:{n}: non-finite score", path.display());
        match &tag {
            None => tag = Some(f[5].to_string()),
            Some(t) if t != f[5] => bail!("{}:{n}: run tag {} differs from {t}", path.display(), f[5]),
            _ => {}
        }
        items.entry(f[0].to_string()).or_default().push((f[2].to_string(), score));
    }
    let tag = tag.with_context(|| format!("{} holds no run lines", path.display()))?;
    let mut run = RunFile::new(tag.clone());
    for (q, v) in items {
        let list = RankedList::from_scores(q.clone(), tag.clone(), v).with_context(|| format!("{}: query {q}", path.display()))?;
        run.lists.insert(q, list);
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    parse_run(&read_to_string(path)?, path)
}

pub fn parse_strata(text: &str, path: &Path) -> Result<Vec<Stratum>> {
    let mut out = Vec::new();
    for (n, line) in data_lines(text) {
        let f = fields(line, 4, path, n)?;
        out.push(Stratum {
            id: num(f[0], "stratum id", path, n)?,
            depth_from: num(f[1], "depth", path, n)?,
            depth_to: num(f[2], "depth", path, n)?,
            rate: num(f[3], "rate", path, n)?,
        });
    }
    ensure!(!out.is_empty(), "{} defines no strata", path.display());
    Ok(out)
}

pub fn format_strata(strata: &[Stratum]) -> String {
    let mut s = String::new();
    for st in strata {
        writeln!(s, "{} {} {} {}", st.id, st.depth_from, st.depth_to, st.rate).unwrap();
    }
    s
}

/// Every query gets the same strata.
pub fn parse_judgments(text: &str, path: &Path, strata: &[Stratum]) -> Result<BTreeMap<String, JudgmentSet>> {
    let mut per_query: BTreeMap<String, BTreeMap<String, (Relevance, u32)>> = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let f = fields(line, 4, path, n)?;
        let rel = Relevance::from_code(num(f[2], "relevance", path, n)?).with_context(|| format!("{}:{n}", path.display()))?;
        let stratum: u32 = num(f[3], "stratum", path, n)?;
        let prev = per_query.entry(f[0].to_string()).or_default().insert(f[1].to_string(), (rel, stratum));
        ensure!(prev.is_none(), "{}:{n}: video {} judged twice for query {}", path.display(), f[1], f[0]);
    }
    ensure!(!per_query.is_empty(), "{} holds no judgments", path.display());
    per_query
        .into_iter()
        .map(|(q, j)| {
            let set = JudgmentSet::new(q.clone(), j, strata.iter().copied()).with_context(|| format!("{}: query {q}", path.display()))?;
            Ok((q, set))
        })
        .collect()
}

pub fn format_judgments(judgments: &BTreeMap<String, JudgmentSet>) -> String {
    let mut s = String::new();
    for (q, set) in judgments {
        for (v, (rel, stratum)) in set.judgments() {
            writeln!(s, "{q} {v} {} {stratum}", rel.code()).unwrap();
        }
    }
    s
}

pub fn read_judgments(path: &Path, strata_path: &Path) -> Result<BTreeMap<String, JudgmentSet>> {
    let strata = parse_strata(&read_to_string(strata_path)?, strata_path)?;
    parse_judgments(&read_to_string(path)?, path, &strata)
}
