use std::collections::BTreeMap;

use dualtask_core::data::{
    build_vocabulary, generate_synthetic_corpus, BatchPlan, StopwordList, SyntheticCorpus, SyntheticSpec, Vocabulary,
};
use dualtask_core::encoding::EncoderConfig;
use dualtask_core::model::{DualTaskModel, TaskMask};
use dualtask_core::objectives::ClassificationObjective;
use dualtask_core::params::{BlockKind, Parameters};
use dualtask_core::similarity::cosine_sim;
use dualtask_core::training::{
    mean_reciprocal_rank, train, PreparedData, TrainConfig, Trainer, ValidationPair,
};
use dualtask_core::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Setup {
    corpus: SyntheticCorpus,
    text: Vocabulary,
    concepts: Vocabulary,
}

fn setup(seed: u64, videos: usize, latent: usize) -> Setup {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::new(seed, videos, latent)).unwrap();
    let concepts = build_vocabulary(corpus.dataset.all_captions(), 5, &StopwordList::english()).unwrap();
    let text = build_vocabulary(corpus.dataset.all_captions(), 5, &StopwordList::empty()).unwrap();
    Setup { corpus, text, concepts }
}

fn blocks(model: &DualTaskModel) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    model.visit("", &mut |name, kind, v| {
        if kind == BlockKind::Trainable {
            out.insert(name.to_string(), v.to_vec());
        }
    });
    out
}

fn one_step(s: &Setup, config: TrainConfig) -> (DualTaskModel, DualTaskModel) {
    let model = DualTaskModel::new(EncoderConfig::desk_scale(s.text.len()), s.concepts.len(), 3).unwrap();
    let data = PreparedData::new(&s.corpus.dataset, &s.text, &s.concepts);
    let mut trainer = Trainer::new(model.clone(), config).unwrap();
    let batch: Vec<_> = (0..16).map(|i| data.example(i)).collect();
    assert!(trainer.step(&batch).unwrap().is_finite());
    (model, trainer.model)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let s = setup(2, 20, 8);
    let (before, after) = one_step(&s, TrainConfig { lr: 0.0, ..TrainConfig::default() });
    assert_eq!(before.flatten_trainable(), after.flatten_trainable());
}

#[test]
fn every_trainable_block_moves_except_biases_ahead_of_batch_norm() {
    let s = setup(2, 20, 8);
    let (before, after) = one_step(&s, TrainConfig { lr: 1e-3, ..TrainConfig::default() });
    let (b, a) = (blocks(&before), blocks(&after));
    for (name, old) in &b {
        let moved = old.iter().zip(&a[name]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if name.ends_with("proj.bias") {
            assert!(moved < 1e-8, "{name} moved by {moved:e}");
        } else {
            assert!(moved > 1e-4, "{name} moved by {moved:e}");
        }
    }
}

#[test]
fn single_task_steps_leave_the_other_branch_alone() {
    let s = setup(2, 20, 8);
    let (before, after) = one_step(
        &s,
        TrainConfig { lr: 1e-3, tasks: TaskMask::CLASSIFICATION_ONLY, ..TrainConfig::default() },
    );
    let (b, a) = (blocks(&before), blocks(&after));
    for name in b.keys() {
        if name.starts_with("text.") {
            assert_eq!(b[name], a[name], "{name}");
        }
    }
    assert_ne!(b["visual.proj.weight"], a["visual.proj.weight"]);
    assert_ne!(b["decoder.proj.weight"], a["decoder.proj.weight"]);

    let (before, after) =
        one_step(&s, TrainConfig { lr: 1e-3, tasks: TaskMask::MATCHING_ONLY, ..TrainConfig::default() });
    let (b, a) = (blocks(&before), blocks(&after));
    for name in b.keys().filter(|n| n.starts_with("decoder.")) {
        assert_eq!(b[name], a[name], "{name}");
    }
    assert_ne!(b["text.embedding"], a["text.embedding"]);
}

#[test]
fn training_is_deterministic() {
    let s = setup(4, 30, 10);
    let config = TrainConfig { epochs: 2, lr: 1e-3, batch_size: 8, ..TrainConfig::default() };
    let run = || train(&config, EncoderConfig::desk_scale(s.text.len()), &s.corpus.dataset, &s.text, &s.concepts, None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |m: &DualTaskModel| m.flatten_trainable().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.checkpoint.model), bits(&b.checkpoint.model));
    let other = train(
        &TrainConfig { seed: 1, ..config.clone() },
        EncoderConfig::desk_scale(s.text.len()),
        &s.corpus.dataset,
        &s.text,
        &s.concepts,
        None,
    )
    .unwrap();
    assert_ne!(a.checkpoint.model, other.checkpoint.model);
}

#[test]
fn one_epoch_lowers_the_loss() {
    let s = setup(11, 200, 40);
    for objective in [ClassificationObjective::ClassSensitive, ClassificationObjective::PlainBce] {
        let config = TrainConfig { epochs: 1, lr: 2e-3, objective, patience: None, ..TrainConfig::default() };
        let out = train(&config, EncoderConfig::desk_scale(s.text.len()), &s.corpus.dataset, &s.text, &s.concepts, None).unwrap();
        let r = &out.report;
        assert_eq!(r.epoch_losses.len(), 2);
        assert!(r.epoch_losses[1] < r.epoch_losses[0], "{objective:?}: {:?}", r.epoch_losses);
        assert!(r.batch_losses.iter().all(|l| l.is_finite()));
        // 400 pairs in batches of 32
        assert_eq!(r.batch_losses.len(), BatchPlan::new(0, 0, 32, 400).batches().len());
        assert_eq!(r.validation_scores.len(), 1);
        assert_eq!(out.checkpoint.concept_vocab_hash, s.concepts.hash());
        out.checkpoint.check_concept_vocab(&s.concepts).unwrap();
    }
}

#[test]
fn bad_configs_are_rejected() {
    let s = setup(2, 20, 8);
    let model = DualTaskModel::new(EncoderConfig::desk_scale(s.text.len()), s.concepts.len(), 0).unwrap();
    for config in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 1, ..TrainConfig::default() },
        TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
        TrainConfig { tasks: TaskMask { matching: false, classification: false }, ..TrainConfig::default() },
    ] {
        assert!(matches!(Trainer::new(model.clone(), config).unwrap_err(), Error::InvalidConfig(_)));
    }
    let wrong = EncoderConfig::desk_scale(s.text.len() + 1);
    assert!(train(&TrainConfig::default(), wrong, &s.corpus.dataset, &s.text, &s.concepts, None).is_err());
}

fn mrr_oracle(model: &DualTaskModel, s: &Setup, pairs: &[ValidationPair]) -> f64 {
    let ids: Vec<&str> = {
        let mut v: Vec<&str> = pairs.iter().map(|p| p.video_id.as_str()).collect();
        v.sort();
        v.dedup();
        v
    };
    let phis: Vec<Vec<f64>> = ids.iter().map(|v| model.encode_video(&s.corpus.dataset.videos[*v]).unwrap()).collect();
    let mut total = 0.0;
    for p in pairs {
        let tau = model.encode_query(&p.tokens).unwrap();
        let sims: Vec<f64> = phis.iter().map(|phi| cosine_sim(phi, &tau).unwrap()).collect();
        let own = ids.iter().position(|v| *v == p.video_id).unwrap();
        let better = (0..ids.len()).filter(|&j| sims[j] > sims[own] || (sims[j] == sims[own] && j < own)).count();
        total += 1.0 / (better + 1) as f64;
    }
    total / pairs.len() as f64
}

#[test]
fn mean_reciprocal_rank_matches_brute_force() {
    let s = setup(6, 100, 30);
    let model = DualTaskModel::new(EncoderConfig::desk_scale(s.text.len()), s.concepts.len(), 5).unwrap();
    let data = PreparedData::new(&s.corpus.dataset, &s.text, &s.concepts);
    let pairs = data.sample_validation(100, 0);
    assert_eq!(pairs.len(), 100);
    let got = mean_reciprocal_rank(&model, &s.corpus.dataset.videos, &pairs).unwrap();
    assert!((got - mrr_oracle(&model, &s, &pairs)).abs() < 1e-12);

    let one = &pairs[..1];
    assert_eq!(mean_reciprocal_rank(&model, &s.corpus.dataset.videos, one).unwrap(), 1.0);
    assert!(mean_reciprocal_rank(&model, &s.corpus.dataset.videos, &[]).is_err());
}

#[test]
fn mean_reciprocal_rank_of_unrelated_captions_is_near_chance() {
    let s = setup(6, 100, 30);
    let model = DualTaskModel::new(EncoderConfig::desk_scale(s.text.len()), s.concepts.len(), 5).unwrap();
    let data = PreparedData::new(&s.corpus.dataset, &s.text, &s.concepts);
    let pairs = data.sample_validation(100, 0);
    let n = pairs.len() as f64;
    let harmonic: f64 = (1..=100).map(|k| 1.0 / k as f64).sum();
    let chance = harmonic / n;
    let second: f64 = (1..=100).map(|k| 1.0 / (k * k) as f64).sum::<f64>() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rounds = 20;
    let mut total = 0.0;
    for _ in 0..rounds {
        let mut owners: Vec<String> = pairs.iter().map(|p| p.video_id.clone()).collect();
        owners.shuffle(&mut rng);
        let shuffled: Vec<ValidationPair> = pairs
            .iter()
            .zip(owners)
            .map(|(p, video_id)| ValidationPair { video_id, tokens: p.tokens.clone() })
            .collect();
        total += mean_reciprocal_rank(&model, &s.corpus.dataset.videos, &shuffled).unwrap();
    }
    let mean = total / rounds as f64;
    let se = ((second - chance * chance) / (n * rounds as f64)).sqrt();
    assert!((mean - chance).abs() < 4.0 * se, "{mean} vs {chance} (se {se})");
}
