use std::collections::BTreeSet;

use dualtask_core::boolean::{
    eval_boolean, eval_single_vector, fuse_with, parse_boolean, strip_operators, BooleanAst, NormalizedScores,
    ProductMaxFusion,
};
use dualtask_core::data::{build_vocabulary, generate_synthetic_corpus, StopwordList, SyntheticSpec, Vocabulary};
use dualtask_core::encoding::EncoderConfig;
use dualtask_core::index::{build_index, search_combined, IndexEntry, Scorer, SearchEngine, VideoIndex};
use dualtask_core::layers::BnMode;
use dualtask_core::model::DualTaskModel;
use dualtask_core::{Error, RankedList};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    model: DualTaskModel,
    text: Vocabulary,
    concepts: Vocabulary,
    index: VideoIndex,
    stop: StopwordList,
}

impl Fixture {
    fn new() -> Self {
        let corpus = generate_synthetic_corpus(&SyntheticSpec::new(8, 40, 10)).unwrap();
        let stop = StopwordList::english();
        let concepts = build_vocabulary(corpus.dataset.all_captions(), 5, &stop).unwrap();
        let text = build_vocabulary(corpus.dataset.all_captions(), 5, &StopwordList::empty()).unwrap();
        let mut model = DualTaskModel::new(EncoderConfig::desk_scale(text.len()), concepts.len(), 9).unwrap();
        model.set_mode(BnMode::Infer);
        let index = build_index(&model, concepts.hash(), corpus.dataset.videos.iter().map(|(k, v)| (k.as_str(), v))).unwrap();
        Self { model, text, concepts, index, stop }
    }

    fn engine(&self) -> SearchEngine<'_> {
        SearchEngine::new(&self.index, &self.model, &self.text, &self.concepts, &self.stop).unwrap()
    }

    fn eval(&self, query: &str, scorer: Scorer) -> RankedList {
        eval_boolean(&self.engine(), "q", &parse_boolean(query).unwrap(), scorer, &ProductMaxFusion).unwrap().list
    }

    fn word(&self, i: usize) -> &str {
        self.concepts.token(i).unwrap()
    }
}

fn by_video(list: &RankedList) -> Vec<(String, f64)> {
    let mut v = list.items().to_vec();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

fn assert_same_scores(a: &RankedList, b: &RankedList, tol: f64) {
    for ((va, sa), (vb, sb)) in by_video(a).iter().zip(&by_video(b)) {
        assert_eq!(va, vb);
        assert!((sa - sb).abs() <= tol, "{va}: {sa} vs {sb}");
    }
}

#[test]
fn and_or_are_commutative_and_associative() {
    let f = Fixture::new();
    let (a, b, c) = (f.word(0), f.word(1), f.word(2));
    for scorer in [Scorer::Embedding, Scorer::Concept, Scorer::Combined(0.3)] {
        for op in ["AND", "OR"] {
            let ab = f.eval(&format!("\"{a}\" {op} \"{b}\""), scorer);
            let ba = f.eval(&format!("\"{b}\" {op} \"{a}\""), scorer);
            assert_same_scores(&ab, &ba, 1e-15);
            assert_eq!(ab, RankedList::from_scores("q", ab.scorer.clone(), ab.items().to_vec()).unwrap());
            let left = f.eval(&format!("(\"{a}\" {op} \"{b}\") {op} \"{c}\""), scorer);
            let right = f.eval(&format!("\"{a}\" {op} (\"{b}\" {op} \"{c}\")"), scorer);
            assert_same_scores(&left, &right, 1e-12);
        }
    }
}

#[test]
fn not_reverses_the_order() {
    let f = Fixture::new();
    let q = f.word(1);
    let pos = f.eval(&format!("\"{q}\""), Scorer::Combined(0.3));
    let neg = f.eval(&format!("NOT \"{q}\""), Scorer::Combined(0.3));
    for (v, s) in pos.items() {
        assert!((neg.score_of(v).unwrap() - (1.0 - s)).abs() < 1e-15);
    }
    let distinct: BTreeSet<u64> = pos.items().iter().map(|(_, s)| s.to_bits()).collect();
    if distinct.len() == pos.len() {
        assert!(neg.video_ids().eq(pos.video_ids().collect::<Vec<_>>().into_iter().rev()));
    }
}

#[test]
fn fused_lists_cover_the_index_once() {
    let f = Fixture::new();
    let q = format!("\"{}\" AND NOT (\"{}\" OR \"{}\")", f.word(0), f.word(3), f.word(4));
    let list = f.eval(&q, Scorer::Combined(0.3));
    let ids: BTreeSet<&str> = list.video_ids().collect();
    assert_eq!(ids.len(), list.len());
    assert_eq!(list.len(), f.index.len());
    assert!(list.is_canonical());
    assert!(list.items().iter().all(|(_, s)| (0.0..=1.0).contains(s)));
}

#[test]
fn unquoted_words_form_one_leaf() {
    assert_eq!(parse_boolean("red car").unwrap(), BooleanAst::leaf("red car"));
    assert_eq!(
        parse_boolean("red AND car").unwrap(),
        BooleanAst::And(vec![BooleanAst::leaf("red"), BooleanAst::leaf("car")])
    );
    assert_eq!(strip_operators("\"red\" AND (NOT car OR sky)"), "red car sky");
    assert!(matches!(parse_boolean("(a OR b").unwrap_err(), Error::Parse { .. }));
    assert!(matches!(parse_boolean("\"open").unwrap_err(), Error::Parse { .. }));
    assert!(matches!(parse_boolean("").unwrap_err(), Error::Parse { .. }));
}

#[test]
fn plain_query_ranks_like_fused_search() {
    let f = Fixture::new();
    let engine = f.engine();
    let q = format!("{} {}", f.word(0), f.word(2));
    let boolean = f.eval(&q, Scorer::Combined(0.3));
    let plain = search_combined(&engine, "q", &q, 0.3).unwrap().list;
    assert!(boolean.video_ids().eq(plain.video_ids()));
    let single = eval_single_vector(&engine, "q", &format!("\"{}\" AND \"{}\"", f.word(0), f.word(2)), 0.3).unwrap();
    assert_eq!(single.list, plain);
}

fn entry(id: usize) -> IndexEntry {
    IndexEntry { video_id: format!("v{id:02}"), embedding: vec![1.0], concepts: vec![0.5], degenerate: false }
}

#[test]
fn and_is_the_product_of_normalized_leaves() {
    let index = VideoIndex::from_entries(1, 1, 0, (0..20).map(entry).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let raw: Vec<Vec<f64>> = (0..2).map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let normalize = |xs: &[f64]| {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        xs.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<_>>()
    };
    let mut retrieve = |leaf: &str| {
        let which = if leaf == "a" { 0 } else { 1 };
        let list = RankedList::from_scores(
            "q",
            "raw",
            raw[which].iter().enumerate().map(|(i, s)| (format!("v{i:02}"), *s)).collect(),
        )?;
        NormalizedScores::from_list(&list, &index)
    };
    let fused = fuse_with(&parse_boolean("a AND b").unwrap(), &index, &ProductMaxFusion, &mut retrieve).unwrap();
    let (na, nb) = (normalize(&raw[0]), normalize(&raw[1]));
    for i in 0..20 {
        assert!((fused.scores()[i] - na[i] * nb[i]).abs() < 1e-15);
    }
    let fused = fuse_with(&parse_boolean("a OR NOT b").unwrap(), &index, &ProductMaxFusion, &mut retrieve).unwrap();
    for i in 0..20 {
        assert!((fused.scores()[i] - na[i].max(1.0 - nb[i])).abs() < 1e-15);
    }
}

#[test]
fn constant_leaf_normalizes_to_one_half() {
    let index = VideoIndex::from_entries(1, 1, 0, (0..5).map(entry).collect()).unwrap();
    let list = RankedList::from_scores("q", "raw", (0..5).map(|i| (format!("v{i:02}"), 0.3)).collect()).unwrap();
    assert_eq!(NormalizedScores::from_list(&list, &index).unwrap().scores(), [0.5; 5]);
    let short = RankedList::from_scores("q", "raw", vec![("v00".into(), 1.0)]).unwrap();
    assert!(NormalizedScores::from_list(&short, &index).is_err());
}

fn ast() -> impl Strategy<Value = BooleanAst> {
    let leaf = prop::sample::select(vec!["a", "b", "red car", "sky"]).prop_map(BooleanAst::leaf);
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|c| BooleanAst::Not(Box::new(c))),
            prop::collection::vec(inner.clone(), 2..4).prop_map(|c| parse_boolean(&BooleanAst::And(c).to_string()).unwrap()),
            prop::collection::vec(inner, 2..4).prop_map(|c| parse_boolean(&BooleanAst::Or(c).to_string()).unwrap()),
        ]
    })
}

proptest! {
    #[test]
    fn display_round_trips(tree in ast()) {
        let text = tree.to_string();
        let parsed = parse_boolean(&text).unwrap();
        prop_assert_eq!(&parsed, &tree);
        prop_assert_eq!(parsed.leaves(), tree.leaves());
    }
}
