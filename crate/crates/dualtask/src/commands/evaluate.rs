use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use anyhow::Result;
use dualtask_core::eval::{inferred_ap, mean, randomization_test, randomization_test_exact, JudgmentSet, RunFile};
use serde_json::json;

use super::emit;
use crate::config::Config;
use crate::events::EventLog;
use crate::formats::trec;

fn judgments(config: &Config) -> Result<BTreeMap<String, JudgmentSet>> {
    trec::read_judgments(&config.require_path("judgments")?, &config.require_path("strata")?)
}

/// Inferred AP for every judged query; queries absent from the run score 0.
fn per_query(run: &RunFile, judgments: &BTreeMap<String, JudgmentSet>) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (qid, j) in judgments {
        let value = match run.lists.get(qid) {
            Some(list) => {
                let r = inferred_ap(list, j)?;
                for w in &r.warnings {
                    log::warn!("run {} query {qid}: {w}", run.tag);
                }
                r.value
            }
            None => {
                log::warn!("run {} has no list for judged query {qid}; scored 0", run.tag);
                0.0
            }
        };
        out.insert(qid.clone(), value);
    }
    for qid in run.lists.keys().filter(|q| !judgments.contains_key(*q)) {
        log::info!("query {qid} has no judgments and is not scored");
    }
    Ok(out)
}

pub fn eval(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let run = trec::read_run(&config.require_path("run")?)?;
    let scores = per_query(&run, &judgments(config)?)?;
    let all = mean(scores.values().copied());
    let mut s = String::new();
    for (qid, v) in &scores {
        writeln!(s, "infAP\t{qid}\t{v:.6}").unwrap();
    }
    writeln!(s, "infAP\tall\t{all:.6}").unwrap();
    events.emit("eval", json!({ "tag": run.tag, "queries": scores.len(), "mean_infap": all }))?;
    emit(config, out, &s)
}

pub fn sig_test(config: &Config, events: &mut EventLog, out: &mut dyn Write) -> Result<()> {
    let a = trec::read_run(&config.require_path("run")?)?;
    let b = trec::read_run(&config.require_path("run_b")?)?;
    let judgments = judgments(config)?;
    let sa: Vec<f64> = per_query(&a, &judgments)?.into_values().collect();
    let sb: Vec<f64> = per_query(&b, &judgments)?.into_values().collect();
    let (p, method) = if config.flag("exact") {
        (randomization_test_exact(&sa, &sb)?, "exact".to_string())
    } else {
        let iterations = config.usize("iterations")?;
        (randomization_test(&sa, &sb, iterations, config.u64("seed")?)?, format!("{iterations} iterations"))
    };
    let (ma, mb) = (mean(sa.iter().copied()), mean(sb.iter().copied()));
    let mut s = String::new();
    writeln!(s, "queries\t{}", sa.len()).unwrap();
    writeln!(s, "mean\t{}\t{ma:.6}", a.tag).unwrap();
    writeln!(s, "mean\t{}\t{mb:.6}", b.tag).unwrap();
    writeln!(s, "p_value\t{p:.6}\t{method}").unwrap();
    events.emit("sig-test", json!({ "queries": sa.len(), "mean_a": ma, "mean_b": mb, "p_value": p }))?;
    emit(config, out, &s)
}
