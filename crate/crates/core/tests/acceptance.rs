//! Acceptance gate. Runs every criterion, prints one line each and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use dualtask_core::boolean::{eval_boolean, eval_single_vector, parse_boolean, BooleanAst, ProductMaxFusion};
use dualtask_core::data::{
    build_vocabulary, caption_labels, generate_synthetic_corpus, BatchPlan, Dataset, StopwordList,
    SyntheticCorpus, SyntheticSpec, Vocabulary,
};
use dualtask_core::encoding::{BiGru, ConvPool, EncoderConfig, Gru};
use dualtask_core::eval::{
    average_precision, concept_recall_at_k, inferred_ap, mean, randomization_test, randomization_test_exact,
    sample_judgments, JudgmentSet, Stratum,
};
use dualtask_core::gradcheck::grad_check;
use dualtask_core::index::{
    build_index, combine_scores, score_concept, score_embedding, ConceptQueryVector, IndexEntry, Scorer,
    SearchEngine, VideoIndex,
};
use dualtask_core::interpret::{decode_concepts, prune_by_keywords, pruning_report, PruneSpec};
use dualtask_core::layers::{sigmoid, BatchNorm, BnMode, Linear};
use dualtask_core::model::{DualTaskModel, TaskMask};
use dualtask_core::objectives::{
    class_sensitive_loss, class_sensitive_terms, plain_bce_loss, ranking_loss, ClassificationObjective, LabelVector,
};
use dualtask_core::params::Parameters;
use dualtask_core::training::{train, PreparedData, TrainConfig, Trainer};
use dualtask_core::{RankedList, Tensor2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const CLIP: f64 = 1e-7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

fn randv(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------------------
// 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut checks = 0;
    let mut note = |name: &'static str, err: f64| {
        checks += 1;
        let w = worst.entry(name).or_insert(0.0);
        if err > *w || err.is_nan() {
            *w = err;
        }
    };

    for _ in 0..5 {
        let (out, inp) = (rng.random_range(1..6), rng.random_range(1..6));
        let layer = Linear::init(out, inp, &mut rng);
        let w = randv(out, &mut rng);
        let x = randv(inp, &mut rng);
        note(
            "fc",
            grad_check(
                |x: &[f64]| {
                    let mut g = layer.zeros_like();
                    (dot(&layer.forward(x).unwrap(), &w), layer.backward(x, &w, &mut g))
                },
                &x,
                GRAD_EPS,
            ),
        );
        note(
            "fc",
            grad_check(
                |p: &[f64]| {
                    let mut l = layer.clone();
                    l.load_trainable(p).unwrap();
                    let mut g = l.zeros_like();
                    l.backward(&x, &w, &mut g);
                    (dot(&l.forward(&x).unwrap(), &w), g.flatten_trainable())
                },
                &layer.flatten_trainable(),
                GRAD_EPS,
            ),
        );
    }

    for _ in 0..5 {
        let (b, k) = (rng.random_range(2..7), rng.random_range(1..5));
        let x = randn(b, k, &mut rng);
        let w = randn(b, k, &mut rng);
        let mut bn = BatchNorm::new(k);
        for j in 0..k {
            bn.gamma[j] = rng.random_range(0.5..1.5);
            bn.beta[j] = rng.random_range(-0.5..0.5);
        }
        let run = |bn: &BatchNorm, xt: &Tensor2| {
            let (y, cache) = bn.forward_frozen(xt).unwrap();
            let mut g = bn.zeros_like();
            let dx = bn.backward(&cache, &w, &mut g);
            (dot(y.data(), w.data()), dx, g)
        };
        note(
            "bn-train",
            grad_check(
                |flat: &[f64]| {
                    let (l, dx, _) = run(&bn, &Tensor2::from_vec(b, k, flat.to_vec()).unwrap());
                    (l, dx.into_vec())
                },
                x.data(),
                GRAD_EPS,
            ),
        );
        note(
            "bn-train",
            grad_check(
                |p: &[f64]| {
                    let mut m = bn.clone();
                    m.load_trainable(p).unwrap();
                    let (l, _, g) = run(&m, &x);
                    (l, g.flatten_trainable())
                },
                &bn.flatten_trainable(),
                GRAD_EPS,
            ),
        );
    }

    let z = randv(20, &mut rng).into_iter().map(|v| v * 6.0).collect::<Vec<_>>();
    note(
        "sigmoid",
        grad_check(
            |z: &[f64]| {
                let y: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
                let g = y.iter().map(|y| y * (1.0 - y)).collect();
                (y.iter().sum(), g)
            },
            &z,
            GRAD_EPS,
        ),
    );

    for _ in 0..5 {
        let (inp, hid) = (rng.random_range(1..5), rng.random_range(1..5));
        let gru = Gru::init(inp, hid, &mut rng);
        let w = randv(hid, &mut rng);
        let x = randv(inp, &mut rng);
        let h = randv(hid, &mut rng);
        let mut point = x.clone();
        point.extend(&h);
        note(
            "gru-cell",
            grad_check(
                |v: &[f64]| {
                    let (out, cache) = gru.cell_forward(&v[..inp], &v[inp..]).unwrap();
                    let mut g = gru.zeros_like();
                    let (mut dx, dh) = gru.cell_backward(&cache, &w, &mut g);
                    dx.extend(dh);
                    (dot(&out, &w), dx)
                },
                &point,
                GRAD_EPS,
            ),
        );
        note(
            "gru-cell",
            grad_check(
                |p: &[f64]| {
                    let mut m = gru.clone();
                    m.load_trainable(p).unwrap();
                    let (out, cache) = m.cell_forward(&x, &h).unwrap();
                    let mut g = m.zeros_like();
                    m.cell_backward(&cache, &w, &mut g);
                    (dot(&out, &w), g.flatten_trainable())
                },
                &gru.flatten_trainable(),
                GRAD_EPS,
            ),
        );
    }

    for _ in 0..4 {
        let (t, inp, hid) = (rng.random_range(1..6), rng.random_range(1..4), rng.random_range(1..4));
        let gru = BiGru::init(inp, hid, &mut rng);
        let seq = randn(t, inp, &mut rng);
        let w = randn(t, 2 * hid, &mut rng);
        note(
            "bigru",
            grad_check(
                |flat: &[f64]| {
                    let (out, cache) = gru.forward(&Tensor2::from_vec(t, inp, flat.to_vec()).unwrap()).unwrap();
                    let mut g = gru.zeros_like();
                    (dot(out.data(), w.data()), gru.backward(&cache, &w, &mut g).into_vec())
                },
                seq.data(),
                GRAD_EPS,
            ),
        );
        note(
            "bigru",
            grad_check(
                |p: &[f64]| {
                    let mut m = gru.clone();
                    m.load_trainable(p).unwrap();
                    let (out, cache) = m.forward(&seq).unwrap();
                    let mut g = m.zeros_like();
                    m.backward(&cache, &w, &mut g);
                    (dot(out.data(), w.data()), g.flatten_trainable())
                },
                &gru.flatten_trainable(),
                GRAD_EPS,
            ),
        );
    }

    for _ in 0..4 {
        let (t, ch, f) = (rng.random_range(4..8), rng.random_range(1..4), rng.random_range(1..4));
        let conv = ConvPool::init(ch, &[2, 3], f, &mut rng);
        let seq = randn(t, ch, &mut rng);
        let w = randv(conv.output_dim(), &mut rng);
        note(
            "conv1d-pool",
            grad_check(
                |flat: &[f64]| {
                    let (out, cache) = conv.forward(&Tensor2::from_vec(t, ch, flat.to_vec()).unwrap()).unwrap();
                    let mut g = conv.zeros_like();
                    (dot(&out, &w), conv.backward(&cache, &w, &mut g).into_vec())
                },
                seq.data(),
                GRAD_EPS,
            ),
        );
        note(
            "conv1d-pool",
            grad_check(
                |p: &[f64]| {
                    let mut m = conv.clone();
                    m.load_trainable(p).unwrap();
                    let (out, cache) = m.forward(&seq).unwrap();
                    let mut g = m.zeros_like();
                    m.backward(&cache, &w, &mut g);
                    (dot(&out, &w), g.flatten_trainable())
                },
                &conv.flatten_trainable(),
                GRAD_EPS,
            ),
        );
    }

    for _ in 0..5 {
        let (b, d) = (rng.random_range(2..6), rng.random_range(2..6));
        let mut point = randv(2 * b * d, &mut rng);
        point.iter_mut().for_each(|v| *v *= 2.0);
        note(
            "ranking-loss",
            grad_check(
                |x: &[f64]| {
                    let v = Tensor2::from_vec(b, d, x[..b * d].to_vec()).unwrap();
                    let q = Tensor2::from_vec(b, d, x[b * d..].to_vec()).unwrap();
                    let out = ranking_loss(&v, &q, 0.2).unwrap();
                    let mut g = out.grad_videos.into_vec();
                    g.extend(out.grad_queries.into_vec());
                    (out.loss, g)
                },
                &point,
                GRAD_EPS,
            ),
        );
    }

    for _ in 0..5 {
        let m = rng.random_range(2..12);
        let mut mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.3)).collect();
        mask[0] = true;
        let y = LabelVector::from_bools(mask);
        let logits: Vec<f64> = randv(m, &mut rng).into_iter().map(|v| v * 3.0).collect();
        for lambda in [0.2, 0.5, 0.9] {
            note(
                "class-sensitive-bce",
                grad_check(
                    |z: &[f64]| {
                        let p: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
                        class_sensitive_loss(&p, &y, lambda, CLIP).unwrap()
                    },
                    &logits,
                    GRAD_EPS,
                ),
            );
        }
    }

    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let failed: Vec<String> = worst
        .iter()
        .filter(|(_, e)| !(**e <= GRAD_TOL))
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let pass = failed.is_empty() && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{checks} checks over {} components, max rel err {max:.2e} (tol {GRAD_TOL:.0e}), {:.1}s{}",
            worst.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", over tol: {}", failed.join(" ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut balanced = 0.0f64;
    let mut lambda_one_nonzero = 0usize;
    let mut linear = 0.0f64;
    for _ in 0..200 {
        let half = rng.random_range(1..20);
        let mut mask: Vec<bool> = (0..2 * half).map(|i| i < half).collect();
        mask.shuffle(&mut rng);
        let y = LabelVector::from_bools(mask);
        let pred: Vec<f64> = (0..2 * half).map(|_| rng.random_range(0.001..0.999)).collect();
        let (cs, _) = class_sensitive_loss(&pred, &y, 0.5, CLIP).unwrap();
        let (plain, _) = plain_bce_loss(&pred, &y, CLIP).unwrap();
        balanced = balanced.max((cs - plain).abs());

        let m = rng.random_range(2..30);
        let mut mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.2)).collect();
        mask[0] = true;
        mask[m - 1] = false;
        let y = LabelVector::from_bools(mask);
        let pred: Vec<f64> = (0..m).map(|_| rng.random_range(0.001..0.999)).collect();
        let (_, g) = class_sensitive_loss(&pred, &y, 1.0, CLIP).unwrap();
        lambda_one_nonzero += y.values().iter().zip(&g).filter(|(l, g)| !**l && **g != 0.0).count();

        let (a, b) = class_sensitive_terms(&pred, &y, CLIP).unwrap();
        let lambda = rng.random_range(0.0..=1.0);
        let (l, _) = class_sensitive_loss(&pred, &y, lambda, CLIP).unwrap();
        linear = linear.max((l - (lambda * a + (1.0 - lambda) * b)).abs());
    }
    let pass = balanced <= 1e-9 && lambda_one_nonzero == 0 && linear <= 1e-12;
    outcome(
        pass,
        format!(
            "balanced |cs-bce| {balanced:.1e} (tol 1e-9), nonzero negative grads at lambda=1: {lambda_one_nonzero}, linearity {linear:.1e} (tol 1e-12)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3

fn subset(dataset: &Dataset, ids: &[String]) -> Dataset {
    let keep: BTreeSet<&String> = ids.iter().collect();
    Dataset::new(
        dataset.videos.iter().filter(|(k, _)| keep.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        dataset.captions.iter().filter(|(k, _)| keep.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect(),
    )
    .unwrap()
}

struct DecoderRun {
    recall: f64,
    mean_prob: f64,
}

fn train_decoder(
    objective: ClassificationObjective,
    corpus: &SyntheticCorpus,
    train_set: &Dataset,
    held_out: &[String],
    text: &Vocabulary,
    concepts: &Vocabulary,
    encoder: &EncoderConfig,
) -> DecoderRun {
    let config = TrainConfig {
        epochs: 100,
        lr: 5e-3,
        objective,
        tasks: TaskMask::CLASSIFICATION_ONLY,
        ..TrainConfig::default()
    };
    let model = DualTaskModel::new(encoder.clone(), concepts.len(), config.seed).unwrap();
    let prepared = PreparedData::new(train_set, text, concepts);
    let mut trainer = Trainer::new(model, config.clone()).unwrap();
    for epoch in 0..config.epochs {
        let plan = BatchPlan::new(config.seed, epoch as u64, config.batch_size, prepared.len());
        for batch in plan.batches() {
            let examples: Vec<_> = batch.iter().map(|&i| prepared.example(i)).collect();
            trainer.step(&examples).unwrap();
        }
    }
    trainer.model.set_mode(BnMode::Infer);
    let videos = held_out.iter().map(|v| (v.as_str(), &corpus.dataset.videos[v]));
    let index = build_index(&trainer.model, concepts.hash(), videos).unwrap();
    let mut recall = Vec::new();
    let mut probs = Vec::new();
    for v in held_out {
        let truth: BTreeSet<String> = caption_labels(v, corpus.dataset.captions_of(v), concepts)
            .positives()
            .map(|i| concepts.token(i).unwrap().to_string())
            .collect();
        let entry = index.get(v).unwrap();
        probs.push(mean(entry.concepts.iter().copied()));
        if truth.is_empty() {
            continue;
        }
        let decoded = decode_concepts(entry, concepts, 10).unwrap();
        recall.push(concept_recall_at_k(&decoded, &truth, 10).unwrap());
    }
    DecoderRun {
        recall: mean(recall),
        mean_prob: mean(probs),
    }
}

fn class_sensitive_direction() -> Outcome {
    let start = Instant::now();
    let mut spec = SyntheticSpec::new(3, 250, 600);
    spec.concepts_per_video = (4, 6);
    spec.captions_per_video = 5;
    spec.frame_dim = 256;
    let corpus = generate_synthetic_corpus(&spec).unwrap();
    let ids: Vec<String> = corpus.dataset.videos.keys().cloned().collect();
    let (train_ids, held_out) = ids.split_at(200);
    let train_set = subset(&corpus.dataset, train_ids);
    let concepts = build_vocabulary(train_set.all_captions(), 5, &StopwordList::english()).unwrap();
    let text = build_vocabulary(train_set.all_captions(), 5, &StopwordList::empty()).unwrap();
    let positives = mean(
        train_ids
            .iter()
            .map(|v| caption_labels(v, train_set.captions_of(v), &concepts).positive_count() as f64),
    );
    let mut encoder = EncoderConfig::desk_scale(text.len());
    encoder.frame_feature_dim = spec.frame_dim;

    let sensitive = train_decoder(
        ClassificationObjective::ClassSensitive,
        &corpus,
        &train_set,
        held_out,
        &text,
        &concepts,
        &encoder,
    );
    let plain = train_decoder(
        ClassificationObjective::PlainBce,
        &corpus,
        &train_set,
        held_out,
        &text,
        &concepts,
        &encoder,
    );
    let elapsed = start.elapsed();
    let ratio = sensitive.recall / plain.recall;
    let pass = ratio >= 1.5 && plain.mean_prob < 0.05 && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "{} classes, {positives:.2} positives/video; held-out recall@10 class-sensitive {:.3} vs plain {:.3} (ratio {ratio:.2}, need >= 1.5); plain mean prob {:.4} (need < 0.05); {:.0}s",
            concepts.len(),
            sensitive.recall,
            plain.recall,
            plain.mean_prob,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4, 5, 8 and 9 share one trained toy model

struct Toy {
    corpus: SyntheticCorpus,
    model: DualTaskModel,
    text: Vocabulary,
    concepts: Vocabulary,
    index: VideoIndex,
    stopwords: StopwordList,
    train_time: Duration,
}

impl Toy {
    fn build() -> Self {
        let start = Instant::now();
        let spec = SyntheticSpec::new(11, 200, 40);
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let stopwords = StopwordList::english();
        let concepts = build_vocabulary(corpus.dataset.all_captions(), 5, &stopwords).unwrap();
        let text = build_vocabulary(corpus.dataset.all_captions(), 5, &StopwordList::empty()).unwrap();
        let config = TrainConfig {
            epochs: 20,
            lr: 2e-3,
            patience: None,
            ..TrainConfig::default()
        };
        let out = train(&config, EncoderConfig::desk_scale(text.len()), &corpus.dataset, &text, &concepts, None).unwrap();
        let model = out.checkpoint.model;
        let videos = corpus.dataset.videos.iter().map(|(k, v)| (k.as_str(), v));
        let index = build_index(&model, concepts.hash(), videos).unwrap();
        Self {
            corpus,
            model,
            text,
            concepts,
            index,
            stopwords,
            train_time: start.elapsed(),
        }
    }

    fn engine(&self) -> SearchEngine<'_> {
        SearchEngine::new(&self.index, &self.model, &self.text, &self.concepts, &self.stopwords).unwrap()
    }

    fn name(&self, c: usize) -> &str {
        &self.corpus.concept_names[c]
    }

    /// Single-concept queries with at least one relevant video.
    fn queries(&self) -> Vec<(String, BTreeSet<String>)> {
        (0..self.corpus.concept_names.len())
            .map(|c| (self.name(c).to_string(), self.corpus.videos_with(&[c], &[])))
            .filter(|(_, rel)| !rel.is_empty())
            .collect()
    }
}

fn random_baseline(ids: &[String], relevant: &BTreeSet<String>, rng: &mut ChaCha8Rng) -> f64 {
    let mut order = ids.to_vec();
    let runs = 200;
    let mut total = 0.0;
    for _ in 0..runs {
        order.shuffle(rng);
        let n = order.len();
        let items = order.iter().enumerate().map(|(i, v)| (v.clone(), (n - i) as f64)).collect();
        let list = RankedList::from_scores("random", "random", items).unwrap();
        total += average_precision(&list, relevant).unwrap();
    }
    total / runs as f64
}

fn toy_retrieval(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let engine = toy.engine();
    let ids: Vec<String> = toy.index.entries().iter().map(|e| e.video_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut emb, mut con, mut comb, mut rnd) = (vec![], vec![], vec![], vec![]);
    for (q, rel) in toy.queries() {
        let ap = |scorer| average_precision(&engine.search(&q, &q, scorer).unwrap().list, &rel).unwrap();
        emb.push(ap(Scorer::Embedding));
        con.push(ap(Scorer::Concept));
        comb.push(ap(Scorer::Combined(0.3)));
        rnd.push(random_baseline(&ids, &rel, &mut rng));
    }
    let (emb, con, comb, rnd) = (mean(emb), mean(con), mean(comb), mean(rnd));
    let elapsed = toy.train_time + start.elapsed();
    let first = emb >= 5.0 * rnd;
    let second = comb >= emb.max(con) - 0.01;
    outcome(
        first && second && elapsed < Duration::from_secs(300),
        format!(
            "mAP embedding {emb:.3}, concept {con:.3}, combined(0.3) {comb:.3}, random {rnd:.3}; embedding >= 5x random: {first}; combined >= max - 0.01 ({:.3}): {second}; {:.0}s",
            emb.max(con) - 0.01,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5

fn same_order(a: &RankedList, b: &RankedList) -> bool {
    a.video_ids().eq(b.video_ids())
}

fn fusion_extremes(toy: &Toy) -> Outcome {
    let mut checked = 0;
    let mut mismatches = 0;
    let mut check = |index: &VideoIndex, tau: &[f64], cq: &ConceptQueryVector| {
        let e = score_embedding(index, "q", tau).unwrap();
        let c = score_concept(index, "q", cq).unwrap();
        for (theta, single) in [(0.0, &e), (1.0, &c)] {
            checked += 1;
            if !same_order(&combine_scores(&e, &c, theta, "q").unwrap(), single) {
                mismatches += 1;
            }
        }
    };

    let engine = toy.engine();
    for (q, _) in toy.queries() {
        check(&toy.index, &engine.embed_query(&q).unwrap(), &engine.concept_query(&q).unwrap());
    }
    // sparsified concepts and duplicated embeddings force ties
    let sparse = toy.index.sparsified(2, 0.0);
    for (q, _) in toy.queries().into_iter().take(10) {
        check(&sparse, &engine.embed_query(&q).unwrap(), &engine.concept_query(&q).unwrap());
    }
    let tied: Vec<IndexEntry> = (0..12)
        .map(|i| IndexEntry {
            video_id: format!("v{:02}", 11 - i),
            embedding: vec![(i % 3) as f64, 1.0],
            concepts: vec![(i % 2) as f64 * 0.5 + 0.1, 0.2],
            degenerate: false,
        })
        .collect();
    let tied = VideoIndex::from_entries(2, 2, 0, tied).unwrap();
    check(&tied, &[1.0, 0.0], &ConceptQueryVector::new([0], 2).unwrap());
    outcome(mismatches == 0, format!("{checked} rankings compared, {mismatches} differ"))
}

// ---------------------------------------------------------------------------
// 6

fn brute_force_ap(ids: &[&str], relevant: &BTreeSet<String>) -> f64 {
    let mut sum = 0.0;
    for k in 1..=ids.len() {
        if relevant.contains(ids[k - 1]) {
            let rel_at_k = ids[..k].iter().filter(|v| relevant.contains(**v)).count();
            sum += rel_at_k as f64 / k as f64;
        }
    }
    sum / relevant.len() as f64
}

fn random_list(n: usize, rng: &mut ChaCha8Rng) -> RankedList {
    let items = (0..n).map(|i| (format!("v{i:04}"), rng.random_range(0.0..1.0))).collect();
    RankedList::from_scores("q", "random", items).unwrap()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut ap_mismatch = 0;
    let mut infap_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let list = random_list(n, &mut rng);
        let mut relevant: BTreeSet<String> =
            (0..n).filter(|_| rng.random_bool(0.3)).map(|i| format!("v{i:04}")).collect();
        if rng.random_bool(0.2) {
            relevant.insert("absent".into());
        }
        if relevant.is_empty() {
            relevant.insert(format!("v{:04}", rng.random_range(0..n)));
        }
        let ids: Vec<&str> = list.video_ids().collect();
        let ap = average_precision(&list, &relevant).unwrap();
        if ap != brute_force_ap(&ids, &relevant) {
            ap_mismatch += 1;
        }
        let judged: BTreeMap<String, bool> = ids.iter().map(|v| (v.to_string(), relevant.contains(*v))).collect();
        if relevant.iter().all(|v| judged.contains_key(v)) {
            let full = JudgmentSet::complete("q", &judged);
            infap_err = infap_err.max((inferred_ap(&list, &full).unwrap().value - ap).abs());
        }
    }

    let list = random_list(200, &mut rng);
    let pool: Vec<String> = list.video_ids().map(String::from).collect();
    let relevant: BTreeSet<String> = pool.iter().filter(|_| rng.random_bool(0.15)).cloned().collect();
    let truth = average_precision(&list, &relevant).unwrap();
    let stratum = Stratum {
        id: 1,
        depth_from: 1,
        depth_to: pool.len(),
        rate: 0.5,
    };
    let estimates: Vec<f64> = (0..1000)
        .map(|s| {
            let j = sample_judgments("q", &pool, &relevant, &[stratum], 5000 + s).unwrap();
            inferred_ap(&list, &j).unwrap().value
        })
        .collect();
    let m = mean(estimates.iter().copied());
    let sd = (estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64).sqrt();
    let se = sd / (estimates.len() as f64).sqrt();
    let unbiased = (m - truth).abs() <= 2.0 * se;
    outcome(
        ap_mismatch == 0 && infap_err <= 1e-9 && unbiased,
        format!(
            "AP vs brute force: {ap_mismatch}/1000 differ; |infAP - AP| at rate 1: {infap_err:.1e} (tol 1e-9); rate 0.5: mean {m:.4} vs AP {truth:.4}, |diff| {:.4} vs 2 se {:.4}",
            (m - truth).abs(),
            2.0 * se
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let stat = |mask: u32| {
        let s: f64 = (0..n)
            .map(|i| if mask >> i & 1 == 1 { b[i] - a[i] } else { a[i] - b[i] })
            .sum();
        (s / n as f64).abs()
    };
    let observed = stat(0);
    let hits = (0..1u32 << n).filter(|&m| stat(m) >= observed).count();
    hits as f64 / (1u32 << n) as f64
}

fn randomization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let same: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
    let p_same = randomization_test(&same, &same, 10_000, 1).unwrap();
    let a: Vec<f64> = (0..20).map(|_| rng.random_range(0.5..0.9)).collect();
    let b: Vec<f64> = a.iter().map(|x| x - rng.random_range(0.2..0.4)).collect();
    let p_dom = randomization_test(&a, &b, 10_000, 2).unwrap();
    let a5: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    let b5: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    let exact = randomization_test_exact(&a5, &b5).unwrap();
    let oracle = enumerate_p(&a5, &b5);
    let iters = 100_000;
    let mc = randomization_test(&a5, &b5, iters, 3).unwrap();
    let tol = 4.0 * (oracle * (1.0 - oracle) / iters as f64).sqrt() + 1.0 / iters as f64;
    let pass = p_same == 1.0 && p_dom <= 0.01 && exact == oracle && (mc - oracle).abs() <= tol;
    outcome(
        pass,
        format!(
            "identical p={p_same}; dominated p={p_dom:.5} (need <= 0.01); 5 queries exact {exact:.5} vs enumeration {oracle:.5}, sampled {mc:.5} (tol {tol:.4})"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

fn boolean_algebra(toy: &Toy) -> Outcome {
    let mut problems = Vec::new();
    let leaf = BooleanAst::leaf;
    let grammar = [
        (
            "\"drinking beverage\" AND NOT (\"wine\" OR \"beer\")",
            BooleanAst::And(vec![
                leaf("drinking beverage"),
                BooleanAst::Not(Box::new(BooleanAst::Or(vec![leaf("wine"), leaf("beer")]))),
            ]),
        ),
        ("a OR b AND c", BooleanAst::Or(vec![leaf("a"), BooleanAst::And(vec![leaf("b"), leaf("c")])])),
        ("NOT NOT x", BooleanAst::Not(Box::new(BooleanAst::Not(Box::new(leaf("x")))))),
        ("(a or b) and c", BooleanAst::And(vec![BooleanAst::Or(vec![leaf("a"), leaf("b")]), leaf("c")])),
    ];
    for (text, expected) in &grammar {
        match parse_boolean(text) {
            Ok(ast) if &ast == expected => {
                if parse_boolean(&ast.to_string()).ok().as_ref() != Some(&ast) {
                    problems.push(format!("{text:?} does not round-trip"));
                }
            }
            other => problems.push(format!("{text:?} parsed as {other:?}")),
        }
    }
    if parse_boolean("a AND").is_ok() {
        problems.push("'a AND' accepted".into());
    }

    let engine = toy.engine();
    let fusion = ProductMaxFusion;
    let scorer = Scorer::Combined(0.3);
    let run = |ast: &BooleanAst| eval_boolean(&engine, "q", ast, scorer, &fusion).unwrap().list;
    for (q, _) in toy.queries().into_iter().take(10) {
        let base = run(&leaf(&q));
        let or = run(&BooleanAst::Or(vec![leaf(&q), leaf(&q)]));
        let and = run(&BooleanAst::And(vec![leaf(&q), leaf(&q)]));
        let not_not = run(&BooleanAst::Not(Box::new(BooleanAst::Not(Box::new(leaf(&q))))));
        if or.items() != base.items() {
            problems.push(format!("Or({q},{q}) differs"));
        }
        if !same_order(&and, &base) {
            problems.push(format!("And({q},{q}) reorders"));
        }
        if not_not.items() != base.items() {
            problems.push(format!("Not(Not({q})) differs"));
        }
    }

    // NOT-queries: first concept present, second absent
    let n = toy.corpus.concept_names.len();
    let mut split = [vec![], vec![]];
    let mut single = [vec![], vec![]];
    for c in 0..n {
        let d = (c * 7 + 3) % n;
        let relevant = toy.corpus.videos_with(&[c], &[d]);
        if c == d || relevant.is_empty() || toy.corpus.videos_with(&[c, d], &[]).is_empty() {
            continue;
        }
        let text = format!("\"{}\" AND NOT \"{}\"", toy.name(c), toy.name(d));
        let ast = parse_boolean(&text).unwrap();
        for (slot, theta) in [0.0, 0.3].into_iter().enumerate() {
            let s = Scorer::Combined(theta);
            let fused = eval_boolean(&engine, "q", &ast, s, &fusion).unwrap().list;
            split[slot].push(average_precision(&fused, &relevant).unwrap());
            let flat = eval_single_vector(&engine, "q", &text, theta).unwrap().list;
            single[slot].push(average_precision(&flat, &relevant).unwrap());
        }
    }
    let queries = split[0].len();
    let [s0, s3] = split.map(mean);
    let [f0, f3] = single.map(mean);
    if !(s0 > f0 && s3 > f3) {
        problems.push("split evaluation does not beat the single vector".into());
    }
    outcome(
        problems.is_empty(),
        format!(
            "grammar and laws {}; {queries} NOT-queries mAP single->split: embedding {f0:.3}->{s0:.3}, combined(0.3) {f3:.3}->{s3:.3}",
            if problems.is_empty() { "hold".to_string() } else { problems.join("; ") }
        ),
    )
}

// ---------------------------------------------------------------------------
// 9

fn pruning(toy: &Toy) -> Outcome {
    let engine = toy.engine();
    let n = toy.corpus.concept_names.len();
    let (mut fp, mut fp_removed, mut tp, mut tp_kept) = (0usize, 0usize, 0usize, 0usize);
    let mut oracle_mismatch = 0usize;
    let mut queries = 0;
    for c in 0..n {
        let d = (c * 7 + 3) % n;
        if c == d {
            continue;
        }
        let relevant = toy.corpus.videos_with(&[c, d], &[]);
        if relevant.is_empty() {
            continue;
        }
        queries += 1;
        let text = format!("{} {}", toy.name(c), toy.name(d));
        let list = engine.search("q", &text, Scorer::Embedding).unwrap().list;
        let mut spec = PruneSpec::new([toy.name(c), toy.name(d)]).unwrap();
        spec.concept_depth = 5;
        let out = prune_by_keywords(&list, &toy.index, &spec, &toy.concepts).unwrap();
        for v in out.kept.video_ids() {
            if relevant.contains(v) {
                tp += 1;
                tp_kept += 1;
            } else {
                fp += 1;
            }
        }
        for v in out.removed.video_ids() {
            if relevant.contains(v) {
                tp += 1;
            } else {
                fp += 1;
                fp_removed += 1;
            }
        }

        let judgments: BTreeMap<String, bool> =
            list.truncated(10).video_ids().map(|v| (v.to_string(), relevant.contains(v))).collect();
        let r = pruning_report(&out.kept, &out.removed, &judgments);
        let count = |l: &RankedList, want: bool| l.video_ids().filter(|v| relevant.contains(*v) == want).count();
        let hand = (
            count(&out.kept, true),
            count(&out.kept, false),
            count(&out.removed, true),
            count(&out.removed, false),
        );
        if (r.relevant_kept, r.nonrelevant_kept, r.relevant_removed, r.nonrelevant_removed) != hand
            || r.unjudged_kept + r.unjudged_removed != 0
        {
            oracle_mismatch += 1;
        }
    }
    let fp_rate = fp_removed as f64 / fp.max(1) as f64;
    let tp_rate = tp_kept as f64 / tp.max(1) as f64;
    let pass = fp_rate >= 0.3 && tp_rate >= 0.8 && oracle_mismatch == 0 && fp > 0 && tp > 0;
    outcome(
        pass,
        format!(
            "{queries} two-concept queries, top-10: {fp_removed}/{fp} false positives removed ({:.0}%, need >= 30%), {tp_kept}/{tp} true positives kept ({:.0}%, need >= 80%); report cells differing from hand tabulation: {oracle_mismatch}",
            100.0 * fp_rate,
            100.0 * tp_rate
        ),
    )
}

// ---------------------------------------------------------------------------
// 10

fn vocabulary_rule() -> Outcome {
    let mut problems = Vec::new();
    let mut captions: Vec<String> = Vec::new();
    for i in 0..5 {
        captions.push(format!("a dog runs {}", if i < 4 { "cat" } else { "bird" }));
    }
    captions.push("the the the the the the".into());
    let stop = StopwordList::english();
    let vocab = build_vocabulary(captions.iter().map(String::as_str), 5, &stop).unwrap();
    let tokens: Vec<&str> = vocab.entries().iter().map(|(t, _)| t.as_str()).collect();
    if !vocab.contains("dog") || !vocab.contains("runs") {
        problems.push("count-5 tokens missing".to_string());
    }
    if vocab.contains("cat") {
        problems.push("count-4 token kept".into());
    }
    if vocab.contains("the") || vocab.contains("a") {
        problems.push("stopword kept".into());
    }
    if tokens.len() != 2 {
        problems.push(format!("unexpected tokens {tokens:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let words = ["red", "car", "man", "the", "drives", "fast", "a", "road", "blue", "of"];
    let corpus: Vec<String> = (0..300)
        .map(|_| {
            let len = rng.random_range(1..8);
            (0..len).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let reference = build_vocabulary(corpus.iter().map(String::as_str), 5, &stop).unwrap();
    let mut shuffled = corpus.clone();
    for _ in 0..20 {
        shuffled.shuffle(&mut rng);
        let v = build_vocabulary(shuffled.iter().map(String::as_str), 5, &stop).unwrap();
        if v != reference || v.hash() != reference.hash() {
            problems.push("order-dependent build".into());
            break;
        }
    }
    let again = build_vocabulary(corpus.iter().map(String::as_str), 5, &stop).unwrap();
    if again != reference {
        problems.push("non-deterministic build".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("boundary and stopword cases exact; 20 shuffles of 300 captions give hash {:016x}", reference.hash())
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient suite", gradient_suite()),
        (2, "loss identities", loss_identities()),
    ];
    results.push((3, "class-sensitive vs plain BCE", class_sensitive_direction()));
    let toy = Toy::build();
    results.push((4, "dual-task toy retrieval", toy_retrieval(&toy)));
    results.push((5, "fusion extremes", fusion_extremes(&toy)));
    results.push((6, "metric oracles", metric_oracles()));
    results.push((7, "randomization test", randomization()));
    results.push((8, "boolean algebra", boolean_algebra(&toy)));
    results.push((9, "pruning", pruning(&toy)));
    results.push((10, "vocabulary rule", vocabulary_rule()));

    println!();
    for (id, name, o) in &results {
        println!(
            "criterion {id:>2} {:<30} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!(
        "\nacceptance: {} passed, {failed} failed ({:.0}s)",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
