//! Tab-separated text inputs: captions, vocabularies, word vectors, query
//! files and prune specs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dualtask_core::data::{StopwordList, Vocabulary};
use dualtask_core::Tensor2;

use super::{data_lines, read_to_string};

fn split_tab<'a>(line: &'a str, n: usize, path: &Path, lineno: usize) -> Result<&'a str> {
    match line.split_once('\t') {
        Some((a, b)) if !a.is_empty() => Ok(if n == 0 { a } else { b }),
        _ => bail!("{}:{lineno}: expected two tab-separated fields", path.display()),
    }
}

/// `video_id<TAB>caption` lines, captions kept in file order per video.
pub fn read_captions(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = read_to_string(path)?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (n, line) in data_lines(&text) {
        let vid = split_tab(line, 0, path, n)?;
        let caption = split_tab(line, 1, path, n)?.trim();
        ensure!(!caption.is_empty(), "{}:{n}: empty caption", path.display());
        out.entry(vid.to_string()).or_default().push(caption.to_string());
    }
    ensure!(!out.is_empty(), "{} holds no captions", path.display());
    Ok(out)
}

pub fn format_captions(captions: &BTreeMap<String, Vec<String>>) -> String {
    let mut s = String::new();
    for (vid, caps) in captions {
        for c in caps {
            writeln!(s, "{vid}\t{c}").unwrap();
        }
    }
    s
}

/// `token<TAB>count` lines. The file must already be in canonical order.
pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = read_to_string(path)?;
    let mut entries = Vec::new();
    for (n, line) in data_lines(&text) {
        let token = split_tab(line, 0, path, n)?;
        let count: usize = split_tab(line, 1, path, n)?
            .trim()
            .parse()
            .with_context(|| format!("{}:{n}: count is not a non-negative integer", path.display()))?;
        entries.push((token.to_string(), count));
    }
    ensure!(!entries.is_empty(), "{} holds no tokens", path.display());
    let vocab = Vocabulary::from_entries(entries.clone())?;
    ensure!(
        vocab.entries() == entries.as_slice(),
        "{} is not in canonical order (descending count, then token)",
        path.display()
    );
    Ok(vocab)
}

pub fn format_vocabulary(vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for (t, c) in vocab.entries() {
        writeln!(s, "{t}\t{c}").unwrap();
    }
    s
}

/// One stopword per line.
pub fn read_stopwords(path: &Path) -> Result<StopwordList> {
    let text = read_to_string(path)?;
    Ok(StopwordList::from_words(data_lines(&text).map(|(_, l)| l.trim().to_lowercase())))
}

/// Rows of `matrix` for tokens found in `path` (`token v1 ... vk`) are
/// overwritten. A leading `count dim` header line is skipped. Returns how
/// many vocabulary tokens were found.
pub fn load_word_vectors(path: &Path, vocab: &Vocabulary, matrix: &mut Tensor2) -> Result<usize> {
    let text = read_to_string(path)?;
    let dim = matrix.cols();
    let mut found = 0;
    for (n, line) in data_lines(&text) {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if n == 1 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        let Some(row) = vocab.index_of(token) else { continue };
        ensure!(
            values.len() == dim,
            "{}:{n}: vector for {token:?} has {} values, the model uses {dim}",
            path.display(),
            values.len()
        );
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v.parse().with_context(|| format!("{}:{n}: bad number {v:?}", path.display()))?;
            matrix.set(row, j, x);
        }
        found += 1;
    }
    Ok(found)
}

/// `qid<TAB>text` lines in file order; query ids must be unique.
pub fn read_queries(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_to_string(path)?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in data_lines(&text) {
        let qid = split_tab(line, 0, path, n)?;
        let q = split_tab(line, 1, path, n)?.trim();
        ensure!(!q.is_empty(), "{}:{n}: empty query", path.display());
        ensure!(out.iter().all(|(id, _)| id != qid), "{}:{n}: query {qid} listed twice", path.display());
        out.push((qid.to_string(), q.to_string()));
    }
    Ok(out)
}

/// `qid<TAB>keyword1,keyword2,...` lines.
pub fn read_prune_specs(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in data_lines(&text) {
        let qid = split_tab(line, 0, path, n)?;
        let kws: Vec<String> = split_tab(line, 1, path, n)?
            .split(',')
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .collect();
        ensure!(!kws.is_empty(), "{}:{n}: no keywords", path.display());
        ensure!(out.insert(qid.to_string(), kws).is_none(), "{}:{n}: query {qid} listed twice", path.display());
    }
    Ok(out)
}
