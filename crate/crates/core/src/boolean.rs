//! Boolean queries over sub-queries: parsing, per-leaf retrieval and score
//! fusion.
//!
//! Grammar (keywords case-insensitive, `AND` binds tighter than `OR`, `NOT`
//! tightest):
//!
//! ```text
//! expr   := term (OR term)*
//! term   := factor (AND factor)*
//! factor := NOT factor | "(" expr ")" | phrase
//! phrase := "quoted text" | bare words up to the next keyword or parenthesis
//! ```

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::index::{Scorer, SearchEngine, SearchResult, VideoIndex};
use crate::ranking::RankedList;

#[derive(Debug, Clone, PartialEq)]
pub enum BooleanAst {
    Leaf(String),
    /// At least two children, none of them an `And`.
    And(Vec<BooleanAst>),
    /// At least two children, none of them an `Or`.
    Or(Vec<BooleanAst>),
    Not(Box<BooleanAst>),
}

impl BooleanAst {
    pub fn leaf(text: &str) -> Self {
        Self::Leaf(text.to_string())
    }

    /// Leaf texts in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Self::Leaf(t) => out.push(t),
            Self::And(c) | Self::Or(c) => c.iter().for_each(|c| c.collect_leaves(out)),
            Self::Not(c) => c.collect_leaves(out),
        }
    }

    /// The query with operators and quotes removed: leaf texts joined by
    /// spaces.
    pub fn plain_text(&self) -> String {
        self.leaves().join(" ")
    }
}

fn fmt_child(child: &BooleanAst, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match child {
        BooleanAst::And(_) | BooleanAst::Or(_) => write!(f, "({child})"),
        _ => write!(f, "{child}"),
    }
}

/// Canonical text; parsing it yields the same tree.
impl fmt::Display for BooleanAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Leaf(t) => write!(f, "\"{t}\""),
            Self::And(children) => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    match c {
                        BooleanAst::Or(_) => write!(f, "({c})")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                Ok(())
            }
            Self::Or(children) => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
            Self::Not(c) => {
                f.write_str("NOT ")?;
                fmt_child(c, f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    And,
    Or,
    Not,
    Open,
    Close,
    Quoted(String),
    Word(String),
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '(' {
            chars.next();
            out.push((pos, Tok::Open));
        } else if c == ')' {
            chars.next();
            out.push((pos, Tok::Close));
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            let mut closed = false;
            for (_, c) in chars.by_ref() {
                if c == '"' {
                    closed = true;
                    break;
                }
                s.push(c);
            }
            if !closed {
                return Err(Error::Parse {
                    position: pos,
                    message: "unterminated quote".into(),
                });
            }
            out.push((pos, Tok::Quoted(s)));
        } else {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                    break;
                }
                s.push(c);
                chars.next();
            }
            let tok = match s.to_ascii_uppercase().as_str() {
                "AND" => Tok::And,
                "OR" => Tok::Or,
                "NOT" => Tok::Not,
                _ => Tok::Word(s),
            };
            out.push((pos, tok));
        }
    }
    Ok(out)
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, message: &str) -> Result<T> {
        Err(Error::Parse {
            position: self.pos(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<BooleanAst> {
        let mut children = vec![self.term()?];
        while self.peek() == Some(&Tok::Or) {
            self.at += 1;
            children.push(self.term()?);
        }
        Ok(flatten(children, true))
    }

    fn term(&mut self) -> Result<BooleanAst> {
        let mut children = vec![self.factor()?];
        while self.peek() == Some(&Tok::And) {
            self.at += 1;
            children.push(self.factor()?);
        }
        Ok(flatten(children, false))
    }

    fn factor(&mut self) -> Result<BooleanAst> {
        match self.peek().cloned() {
            Some(Tok::Not) => {
                self.at += 1;
                Ok(BooleanAst::Not(Box::new(self.factor()?)))
            }
            Some(Tok::Open) => {
                self.at += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::Close) {
                    return self.err("expected ')'");
                }
                self.at += 1;
                Ok(inner)
            }
            Some(Tok::Quoted(s)) => {
                let phrase = normalize_phrase(&s);
                if phrase.is_empty() {
                    return self.err("empty quoted phrase");
                }
                self.at += 1;
                Ok(BooleanAst::Leaf(phrase))
            }
            Some(Tok::Word(_)) => {
                let mut words = Vec::new();
                while let Some(Tok::Word(w)) = self.peek() {
                    words.push(w.clone());
                    self.at += 1;
                }
                Ok(BooleanAst::Leaf(words.join(" ")))
            }
            Some(Tok::Close) => self.err("unexpected ')'"),
            Some(Tok::And) | Some(Tok::Or) => self.err("operator without left operand"),
            None => self.err("expected an operand at end of input"),
        }
    }
}

fn flatten(children: Vec<BooleanAst>, or: bool) -> BooleanAst {
    if children.len() == 1 {
        return children.into_iter().next().expect("one child");
    }
    let mut flat = Vec::with_capacity(children.len());
    for c in children {
        match (c, or) {
            (BooleanAst::Or(inner), true) | (BooleanAst::And(inner), false) => flat.extend(inner),
            (c, _) => flat.push(c),
        }
    }
    if or {
        BooleanAst::Or(flat)
    } else {
        BooleanAst::And(flat)
    }
}

/// Parses a Boolean query. Errors carry the byte offset of the offending
/// token (the input length at end of input).
pub fn parse_boolean(text: &str) -> Result<BooleanAst> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
        end: text.len(),
    };
    let ast = p.expr()?;
    match p.peek() {
        None => Ok(ast),
        Some(Tok::Close) => p.err("unbalanced ')'"),
        Some(Tok::Open) | Some(Tok::Quoted(_)) | Some(Tok::Not) => p.err("missing operator"),
        Some(_) => p.err("unexpected token"),
    }
}

/// Per-video scores in `[0, 1]`, aligned with the index entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScores {
    scores: Vec<f64>,
}

impl NormalizedScores {
    /// Min-max normalizes `list` over every indexed video; a constant list
    /// maps to 0.5 everywhere.
    pub fn from_list(list: &RankedList, index: &VideoIndex) -> Result<Self> {
        let mut raw = vec![None; index.len()];
        for (v, s) in list.items() {
            let i = index.position(v).ok_or_else(|| Error::UnknownVideo(v.clone()))?;
            raw[i] = Some(*s);
        }
        let raw: Vec<f64> = raw
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::InvalidConfig(format!(
                    "sub-query list misses video {}",
                    index.entries()[i].video_id
                )))
            })
            .collect::<Result<_>>()?;
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scores = if hi > lo {
            raw.iter().map(|s| (s - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; raw.len()]
        };
        Ok(Self { scores })
    }

    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, index: &VideoIndex, video_id: &str) -> Option<f64> {
        index.position(video_id).map(|i| self.scores[i])
    }

    pub fn to_ranked_list(&self, index: &VideoIndex, query_id: &str, scorer: &str) -> Result<RankedList> {
        let items = index
            .entries()
            .iter()
            .zip(&self.scores)
            .map(|(e, s)| (e.video_id.clone(), *s))
            .collect();
        RankedList::from_scores(query_id, scorer, items)
    }
}

/// How operator nodes combine their children's normalized scores.
pub trait FusionStrategy {
    fn and(&self, children: &[f64]) -> f64;
    fn or(&self, children: &[f64]) -> f64;
    fn not(&self, child: f64) -> f64;

    /// Whether `not(not(s)) == s`, letting double negations be skipped
    /// instead of rounded twice.
    fn not_is_involution(&self) -> bool {
        false
    }
}

/// `And` = product, `Or` = max, `Not` = complement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProductMaxFusion;

impl FusionStrategy for ProductMaxFusion {
    fn and(&self, children: &[f64]) -> f64 {
        children.iter().product()
    }

    fn or(&self, children: &[f64]) -> f64 {
        children.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn not(&self, child: f64) -> f64 {
        1.0 - child
    }

    fn not_is_involution(&self) -> bool {
        true
    }
}

/// Result of a Boolean search, with the leaves that needed a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct BooleanResult {
    pub list: RankedList,
    pub fallbacks: Vec<(String, crate::index::Fallback)>,
}

/// Evaluates `ast` with per-leaf retrieval provided by `retrieve`.
pub fn fuse_with<F>(
    ast: &BooleanAst,
    index: &VideoIndex,
    strategy: &dyn FusionStrategy,
    retrieve: &mut F,
) -> Result<NormalizedScores>
where
    F: FnMut(&str) -> Result<NormalizedScores>,
{
    Ok(match ast {
        BooleanAst::Leaf(text) => retrieve(text)?,
        BooleanAst::Not(child) => match &**child {
            BooleanAst::Not(inner) if strategy.not_is_involution() => fuse_with(inner, index, strategy, retrieve)?,
            _ => {
                let c = fuse_with(child, index, strategy, retrieve)?;
                NormalizedScores::from_scores(c.scores.iter().map(|&s| strategy.not(s)).collect())
            }
        },
        BooleanAst::And(children) | BooleanAst::Or(children) => {
            let parts = children
                .iter()
                .map(|c| fuse_with(c, index, strategy, retrieve))
                .collect::<Result<Vec<_>>>()?;
            let is_and = matches!(ast, BooleanAst::And(_));
            let mut buf = vec![0.0; parts.len()];
            let scores = (0..index.len())
                .map(|i| {
                    for (b, p) in buf.iter_mut().zip(&parts) {
                        *b = p.scores[i];
                    }
                    if is_and {
                        strategy.and(&buf)
                    } else {
                        strategy.or(&buf)
                    }
                })
                .collect();
            NormalizedScores::from_scores(scores)
        }
    })
}

fn scorer_name(scorer: Scorer) -> String {
    match scorer {
        Scorer::Embedding => "bool-embedding".into(),
        Scorer::Concept => "bool-concept".into(),
        Scorer::Combined(t) => format!("bool-combined({t})"),
    }
}

/// Retrieves every leaf with `scorer`, normalizes it over the whole index
/// and fuses the scores bottom-up.
pub fn eval_boolean(
    engine: &SearchEngine<'_>,
    query_id: &str,
    ast: &BooleanAst,
    scorer: Scorer,
    strategy: &dyn FusionStrategy,
) -> Result<BooleanResult> {
    let mut fallbacks = Vec::new();
    let mut retrieve = |text: &str| {
        let SearchResult { list, fallback } = engine.search(query_id, text, scorer)?;
        if let Some(f) = fallback {
            fallbacks.push((text.to_string(), f));
        }
        NormalizedScores::from_list(&list, engine.index)
    };
    let fused = fuse_with(ast, engine.index, strategy, &mut retrieve)?;
    let list = fused.to_ranked_list(engine.index, query_id, &scorer_name(scorer))?;
    Ok(BooleanResult { list, fallbacks })
}

/// Removes operator keywords, parentheses and quotes, leaving plain text.
pub fn strip_operators(text: &str) -> String {
    text.split(|c: char| c.is_whitespace() || c == '(' || c == ')' || c == '"')
        .filter(|w| !w.is_empty())
        .filter(|w| !matches!(w.to_ascii_uppercase().as_str(), "AND" | "OR" | "NOT"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The whole query embedded as one vector: operators stripped, then a
/// fused search.
pub fn eval_single_vector(
    engine: &SearchEngine<'_>,
    query_id: &str,
    text: &str,
    theta: f64,
) -> Result<SearchResult> {
    crate::index::search_combined(engine, query_id, &strip_operators(text), theta)
}
