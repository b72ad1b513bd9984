mod common;

use std::collections::BTreeMap;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stanceprobe::bank::synthetic;
use stanceprobe::pipeline::{self, PipelineError, RunOptions};
use stanceprobe::prompting::{derive_opposing, Phase, Stance};
use stanceprobe::provider::{MockPolicy, ProviderConfig};
use stanceprobe::stats::Factor;
use stanceprobe::store::RunStore;
use stanceprobe::QuestionBank;

fn opts(policy: MockPolicy, language: &str, phase: Phase, rounds: u32) -> RunOptions {
    let mut o = RunOptions::new(ProviderConfig::mock(policy), language, phase);
    o.rounds = rounds;
    o.seed = 11;
    o.created = Some("2026-01-01T00:00:00Z".into());
    o
}

fn random_answers(bank: &QuestionBank, rounds: usize, rng: &mut ChaCha8Rng) -> BTreeMap<u32, Vec<i8>> {
    bank.questions()
        .iter()
        .map(|q| (q.id, (0..rounds).map(|_| rng.random_range(-1..=1)).collect()))
        .collect()
}

fn f(s: &str) -> Option<f64> {
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn opposing_stances_follow_initial_biases() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let bank = synthetic::small(12, 3, &["en"]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let answers = random_answers(&bank, 5, &mut rng);
    let policy = common::scripted(&bank, "en", Phase::Initial, &BTreeMap::new(), &answers);
    let init = pipeline::run(&store, &bank, &opts(policy, "en", Phase::Initial, 5)).unwrap();
    let metrics = common::read_metrics(&store.metrics(&init.run_id).unwrap());

    let mut o = opts(MockPolicy::Sycophant, "en", Phase::Opposing, 5);
    o.from_run = Some(init.run_id.clone());
    let opp = pipeline::run(&store, &bank, &o).unwrap();
    let manifest = store.manifest(&opp.run_id).unwrap();
    assert_eq!(manifest.stances.len(), bank.len());
    for (q, row) in &metrics {
        let b: f64 = row["b"].parse().unwrap();
        assert_eq!(manifest.stances[q], derive_opposing(b), "question {q}");
        if b == 0.0 {
            assert_eq!(manifest.stances[q], Stance::Negate);
        }
    }
}

#[test]
fn one_round_leaves_variance_undefined() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let bank = synthetic::small(4, 1, &["en"]);
    let s = pipeline::run(&store, &bank, &opts(MockPolicy::Stubborn, "en", Phase::Initial, 1)).unwrap();
    for row in common::read_metrics(&store.metrics(&s.run_id).unwrap()).values() {
        assert_eq!(row["variance"], "");
        assert_eq!(row["w"], "");
        assert_eq!(row["strong_neutral"], "false");
        assert!(row["b"] == "1" || row["b"] == "-1");
    }
}

#[test]
fn interrupted_run_plans_the_missing_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let bank = synthetic::full_size(&["en"]);
    let mut o = opts(MockPolicy::Stubborn, "en", Phase::Initial, 10);
    o.max_requests = Some(2700);
    let s = pipeline::run(&store, &bank, &o).unwrap();
    assert_eq!(s.sent.ok, 2700);
    assert_eq!(s.missing, 2690);
    assert_eq!(store.resume_plan(&s.run_id).unwrap().len(), 2690);
    o.max_requests = None;
    let s = pipeline::run(&store, &bank, &o).unwrap();
    assert!(s.resumed);
    assert_eq!(s.sent.ok, 2690);
    assert!(store.resume_plan(&s.run_id).unwrap().is_empty());
    assert_eq!(store.responses(&s.run_id).unwrap().len(), 5390);
}

#[test]
fn scripted_mock_must_cover_the_bank() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let bank = synthetic::small(3, 0, &["en"]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let answers = random_answers(&bank, 2, &mut rng);
    let MockPolicy::Scripted { mut outputs } = common::scripted(&bank, "en", Phase::Initial, &BTreeMap::new(), &answers)
    else {
        unreachable!()
    };
    let first = outputs.keys().next().unwrap().clone();
    outputs.remove(&first);
    let err = pipeline::run(&store, &bank, &opts(MockPolicy::Scripted { outputs }, "en", Phase::Initial, 2)).unwrap_err();
    assert!(matches!(err, PipelineError::Provider(_)), "{err}");
    let id = opts(MockPolicy::AlwaysAffirm, "en", Phase::Initial, 2);
    assert!(store.responses(&id.run_id()).unwrap().is_empty());
}

#[test]
fn four_languages_give_a_four_by_four_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path().join("runs"));
    let langs = ["ja", "en", "es", "fr"];
    let bank = synthetic::small(20, 4, &langs);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ids = Vec::new();
    for l in langs {
        let answers = random_answers(&bank, 4, &mut rng);
        let policy = common::scripted(&bank, l, Phase::Initial, &BTreeMap::new(), &answers);
        ids.push(pipeline::run(&store, &bank, &opts(policy, l, Phase::Initial, 4)).unwrap().run_id);
    }
    let out = dir.path().join("analysis");
    pipeline::analyze(&store, &bank, &ids, &[Factor::ResponseCategory], &out).unwrap();
    let text = fs::read_to_string(out.join("correlation_bias.csv")).unwrap();
    let rows: Vec<Vec<String>> = text.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 5);
    for (i, row) in rows.iter().enumerate().skip(1) {
        assert_eq!(row.len(), 5);
        assert_eq!(row[i], "1");
    }
    assert!(!out.join("correlation_shift.csv").exists());
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let (sxx, syy) = (x.iter().map(|a| a * a).sum::<f64>(), y.iter().map(|b| b * b).sum::<f64>());
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn scripted_divergence_matches_recomputation() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path().join("runs"));
    let bank = synthetic::small(30, 5, &["en", "fr"]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a_en = random_answers(&bank, 6, &mut rng);
    let a_fr = random_answers(&bank, 6, &mut rng);
    let mut ids = Vec::new();
    for (l, a) in [("en", &a_en), ("fr", &a_fr)] {
        let p = common::scripted(&bank, l, Phase::Initial, &BTreeMap::new(), a);
        ids.push(pipeline::run(&store, &bank, &opts(p, l, Phase::Initial, 6)).unwrap().run_id);
    }
    let out = dir.path().join("analysis");
    pipeline::analyze(&store, &bank, &ids, &[Factor::ResponseCategory], &out).unwrap();

    let (be, bf) = (common::brute_force(&a_en), common::brute_force(&a_fr));
    let xb: Vec<f64> = be.values().map(|v| v.0).collect();
    let yb: Vec<f64> = bf.values().map(|v| v.0).collect();
    let xw: Vec<f64> = be.values().map(|v| v.2.unwrap()).collect();
    let yw: Vec<f64> = bf.values().map(|v| v.2.unwrap()).collect();
    for (file, x, y) in [("correlation_bias.csv", &xb, &yb), ("correlation_willingness.csv", &xw, &yw)] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        let r: f64 = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert!((r - pearson_oracle(x, y)).abs() < 1e-12, "{file}: {r}");
    }

    // counts per category: affirm, negate, neutral (none scripted), explainer
    let count = |a: &BTreeMap<u32, Vec<i8>>, v: i8| a.values().flatten().filter(|&&x| x == v).count() as f64;
    let table = [
        [count(&a_en, 1), count(&a_en, -1), count(&a_en, 0)],
        [count(&a_fr, 1), count(&a_fr, -1), count(&a_fr, 0)],
    ];
    let total: f64 = table.iter().flatten().sum();
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..3 {
            let e = table[i].iter().sum::<f64>() * (table[0][j] + table[1][j]) / total;
            chi2 += (table[i][j] - e).powi(2) / e;
        }
    }
    let p = ChiSquared::new(2.0).unwrap().sf(chi2);
    let text = fs::read_to_string(out.join("chi_square.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "2");
    assert!((row[3].parse::<f64>().unwrap() - chi2).abs() < 1e-9);
    assert!((row[5].parse::<f64>().unwrap() - p).abs() < 1e-9);
    assert_eq!(row[6], "neutral");
}

#[test]
fn analyze_rejects_foreign_bank() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let bank = synthetic::small(3, 0, &["en"]);
    let s = pipeline::run(&store, &bank, &opts(MockPolicy::AlwaysAffirm, "en", Phase::Initial, 2)).unwrap();
    let other = QuestionBank::sample();
    let err = pipeline::analyze(&store, &other, &[s.run_id], &[], &dir.path().join("a")).unwrap_err();
    assert!(matches!(err, PipelineError::BankMismatch { .. }), "{err}");
}

#[test]
fn explainer_rate_one_is_all_explainers() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path().join("runs"));
    let bank = synthetic::small(5, 1, &["ja"]);
    let s = pipeline::run(&store, &bank, &opts(MockPolicy::ExplainerRate { p: 1.0 }, "ja", Phase::Initial, 3)).unwrap();
    let out = dir.path().join("a");
    pipeline::analyze(&store, &bank, &[s.run_id.clone()], &[], &out).unwrap();
    let text = fs::read_to_string(out.join("unexpected.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), format!("mock-explainer-rate/ja,{},initial,21,0,21", s.run_id));
    for row in common::read_metrics(&store.metrics(&s.run_id).unwrap()).values() {
        assert_eq!(f(&row["b"]), Some(0.0));
        assert_eq!(f(&row["w"]), Some(1.0));
        assert_eq!(row["strong_neutral"], "true");
    }
}
