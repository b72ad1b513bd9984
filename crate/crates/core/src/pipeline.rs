//! End-to-end protocol: run a phase, finalize its metrics, analyze a set of
//! runs and render the report. The command-line front end is a thin layer
//! over these functions.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{load_bank, BankError, QuestionBank};
use crate::classifier::{Category, ClassifyMode, Classification, Lexicon, LexiconError, UnexpectedTally};
use crate::metrics::{
    distribution_summary, merge_run, question_metrics, shift_metrics, split_summary, stance_table,
    AnswerStats, MetricsError,
};
use crate::prompting::{render_initial, render_opposing, Phase, PromptError, Stance, TemplatePair};
use crate::provider::{
    build_provider, run_batch, schedule, AnswerTokens, BatchError, BatchSummary, MockPolicy, Outcome,
    PromptRequest, ProviderConfig, ProviderError, ProviderKind,
};
use crate::report::{render_distributions, slug, split_patterns_csv, Format, ReportError, ResultTable};
use crate::stats::{compare_runs, pearson, Comparison, Factor, RunVectors, StatsError};
use crate::store::{write_atomic, ClassificationRecord, RawResponse, RunManifest, RunStore, StoreError};
use crate::{MergedResult, QuestionMetrics, ShiftMetrics};

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const BANK_FILE: &str = "bank.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("an opposing run needs --from-run naming a complete initial run")]
    MissingFromRun,
    #[error("run {run_id} is incomplete: {missing} (question, round) pairs have no answer")]
    Incomplete { run_id: String, missing: usize },
    #[error("run {run_id} exists with {field} = {existing:?}, requested {requested:?}")]
    ManifestConflict {
        run_id: String,
        field: &'static str,
        existing: String,
        requested: String,
    },
    #[error("run {run_id} was made with bank {found}, expected {expected}")]
    BankMismatch {
        run_id: String,
        expected: String,
        found: String,
    },
    #[error("two runs map to condition {0:?}")]
    DuplicateCondition(String),
    #[error("{dir}: missing {}", missing.join(", "))]
    MissingInputs { dir: PathBuf, missing: Vec<String> },
}

fn file_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Parses `mock:<policy>` or reads a JSON provider config file.
pub fn parse_provider(def: &str) -> Result<ProviderConfig, PipelineError> {
    if let Some(policy) = def.strip_prefix("mock:") {
        return Ok(ProviderConfig::mock(MockPolicy::parse_shorthand(policy)?));
    }
    let path = Path::new(def);
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    Ok(ProviderConfig::from_json(&text)?)
}

fn policy_label(policy: &MockPolicy) -> String {
    serde_json::to_value(policy)
        .ok()
        .and_then(|v| v.get("policy").and_then(|p| p.as_str()).map(str::to_string))
        .unwrap_or_else(|| "mock".into())
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub provider: ProviderConfig,
    /// Defaults to the provider config's model, or `mock-<policy>`.
    pub model: Option<String>,
    pub language: String,
    pub phase: Phase,
    pub rounds: u32,
    pub seed: u64,
    pub from_run: Option<String>,
    pub classify_mode: ClassifyMode,
    pub templates: Option<TemplatePair>,
    pub lexicon: Option<Lexicon>,
    /// Send at most this many requests, leaving the rest for a later resume.
    pub max_requests: Option<usize>,
    /// Manifest timestamp; the current time when unset.
    pub created: Option<String>,
}

impl RunOptions {
    pub fn new(provider: ProviderConfig, language: &str, phase: Phase) -> Self {
        Self {
            provider,
            model: None,
            language: language.to_string(),
            phase,
            rounds: 10,
            seed: 0,
            from_run: None,
            classify_mode: ClassifyMode::default(),
            templates: None,
            lexicon: None,
            max_requests: None,
            created: None,
        }
    }

    pub fn model_name(&self) -> String {
        if let Some(m) = &self.model {
            return m.clone();
        }
        match (&self.provider.kind, &self.provider.mock) {
            (ProviderKind::Mock, Some(p)) => format!("mock-{}", policy_label(p)),
            _ => self.provider.model.clone(),
        }
    }

    pub fn run_id(&self) -> String {
        slug(&format!(
            "{}-{}-{}-s{}",
            self.model_name(),
            self.language,
            self.phase,
            self.seed
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub run_id: String,
    pub resumed: bool,
    pub sent: BatchSummary,
    /// (question, round) pairs still unanswered.
    pub missing: usize,
}

impl RunSummary {
    pub fn complete(&self) -> bool {
        self.missing == 0
    }
}

fn check_field(run_id: &str, field: &'static str, existing: String, requested: String) -> Result<(), PipelineError> {
    if existing == requested {
        Ok(())
    } else {
        Err(PipelineError::ManifestConflict {
            run_id: run_id.to_string(),
            field,
            existing,
            requested,
        })
    }
}

fn check_resumable(m: &RunManifest, fresh: &RunManifest) -> Result<(), PipelineError> {
    let id = &m.run_id;
    check_field(id, "model", m.model.clone(), fresh.model.clone())?;
    check_field(id, "language", m.language.clone(), fresh.language.clone())?;
    check_field(id, "phase", m.phase.to_string(), fresh.phase.to_string())?;
    check_field(id, "n_rounds", m.n_rounds.to_string(), fresh.n_rounds.to_string())?;
    check_field(id, "seed", m.seed.to_string(), fresh.seed.to_string())?;
    check_field(
        id,
        "bank",
        format!("{}@{}", m.bank_name, m.bank_version),
        format!("{}@{}", fresh.bank_name, fresh.bank_version),
    )?;
    check_field(id, "template_version", m.template_version.clone(), fresh.template_version.clone())?;
    check_field(id, "classify_mode", m.classify_mode.to_string(), fresh.classify_mode.to_string())?;
    check_field(
        id,
        "from_run",
        m.from_run.clone().unwrap_or_default(),
        fresh.from_run.clone().unwrap_or_default(),
    )?;
    check_field(
        id,
        "mock_policy",
        format!("{:?}", m.mock_policy),
        format!("{:?}", fresh.mock_policy),
    )
}

/// Answer sums per question from a finalized run's classifications, by id.
pub fn run_stats(store: &RunStore, run_id: &str) -> Result<Vec<(u32, AnswerStats)>, PipelineError> {
    let manifest = store.manifest(run_id)?;
    let records = store.classifications(run_id)?;
    if records.len() != manifest.expected_responses() {
        let missing = store.resume_plan(run_id)?.len();
        return Err(PipelineError::Incomplete {
            run_id: run_id.to_string(),
            missing: missing.max(1),
        });
    }
    let mut by_q: BTreeMap<u32, AnswerStats> = manifest.question_ids.iter().map(|&q| (q, AnswerStats::default())).collect();
    for r in &records {
        by_q.get_mut(&r.question_id)
            .ok_or_else(|| PipelineError::Invalid(format!("run {run_id}: classification for unknown question {}", r.question_id)))?
            .push(r.answer_value)?;
    }
    Ok(by_q.into_iter().collect())
}

fn stance_source(store: &RunStore, bank: &QuestionBank, from_run: &str, language: &str) -> Result<BTreeMap<u32, Stance>, PipelineError> {
    let m = store.manifest(from_run)?;
    if m.phase != Phase::Initial {
        return Err(PipelineError::Invalid(format!("--from-run {from_run} is not an initial-phase run")));
    }
    check_bank(bank, &m)?;
    if m.language != language {
        return Err(PipelineError::Invalid(format!(
            "--from-run {from_run} is in language {:?}, not {language:?}",
            m.language
        )));
    }
    let missing = store.resume_plan(from_run)?.len();
    if missing > 0 {
        return Err(PipelineError::Incomplete {
            run_id: from_run.to_string(),
            missing,
        });
    }
    Ok(stance_table(&run_stats(store, from_run)?)?)
}

fn check_bank(bank: &QuestionBank, m: &RunManifest) -> Result<(), PipelineError> {
    if m.bank_name != bank.name() || m.bank_version != bank.version() {
        return Err(PipelineError::BankMismatch {
            run_id: m.run_id.clone(),
            expected: format!("{}@{}", bank.name(), bank.version()),
            found: format!("{}@{}", m.bank_name, m.bank_version),
        });
    }
    Ok(())
}

fn templates_for(opts: &RunOptions) -> Result<TemplatePair, PipelineError> {
    match &opts.templates {
        Some(t) => Ok(t.clone()),
        None => Ok(TemplatePair::default_for(&opts.language)?),
    }
}

fn lexicon_for(lexicon: Option<&Lexicon>, language: &str) -> Result<Lexicon, PipelineError> {
    match lexicon {
        Some(l) => Ok(l.clone()),
        None => Ok(Lexicon::default_for(language)?),
    }
}

/// Runs (or resumes) one phase for one (model, language) and finalizes it
/// when every (question, round) pair has an answer.
pub fn run(store: &RunStore, bank: &QuestionBank, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    if !bank.has_language(&opts.language) {
        return Err(PipelineError::Invalid(format!(
            "bank {} has no language {:?} (has {})",
            bank.name(),
            opts.language,
            bank.languages().join(", ")
        )));
    }
    if opts.rounds == 0 {
        return Err(PipelineError::Invalid("rounds must be at least 1".into()));
    }
    opts.provider.validate()?;
    let templates = templates_for(opts)?;
    let lexicon = lexicon_for(opts.lexicon.as_ref(), &opts.language)?;
    let run_id = opts.run_id();

    let mut fresh = RunManifest {
        run_id: run_id.clone(),
        model: opts.model_name(),
        provider_kind: opts.provider.kind,
        mock_policy: opts.provider.mock.clone(),
        language: opts.language.clone(),
        phase: opts.phase,
        n_rounds: opts.rounds,
        seed: opts.seed,
        bank_name: bank.name().to_string(),
        bank_version: bank.version().to_string(),
        template_version: templates.version(),
        classify_mode: opts.classify_mode,
        params: opts.provider.params.clone(),
        created: opts
            .created
            .clone()
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        question_ids: bank.questions().iter().map(|q| q.id).collect(),
        from_run: None,
        stances: BTreeMap::new(),
    };
    if opts.phase == Phase::Opposing {
        fresh.from_run = Some(opts.from_run.clone().ok_or(PipelineError::MissingFromRun)?);
    }

    let resumed = store.exists(&run_id);
    let (manifest, mut writer) = if resumed {
        let m = store.manifest(&run_id)?;
        check_resumable(&m, &fresh)?;
        let w = store.writer(&run_id)?;
        (m, w)
    } else {
        if let Some(from) = &fresh.from_run {
            fresh.stances = stance_source(store, bank, from, &opts.language)?;
        }
        let w = store.create(&fresh)?;
        (fresh, w)
    };

    let pending: HashSet<(u32, u32)> = store.resume_plan(&run_id)?.into_iter().collect();
    let template = templates.for_phase(manifest.phase);
    let mut requests = Vec::with_capacity(pending.len());
    for (round, qid) in schedule(&manifest.question_ids, manifest.n_rounds, manifest.seed) {
        if !pending.contains(&(qid, round)) {
            continue;
        }
        let q = bank
            .get(qid)
            .ok_or_else(|| PipelineError::Invalid(format!("question {qid} is not in bank {}", bank.name())))?;
        let (prompt, stance) = match manifest.phase {
            Phase::Initial => (render_initial(q, template)?, None),
            Phase::Opposing => {
                let stance = *manifest
                    .stances
                    .get(&qid)
                    .ok_or_else(|| PipelineError::Invalid(format!("no injected stance for question {qid}")))?;
                (render_opposing(q, template, stance)?, Some(stance))
            }
        };
        requests.push(PromptRequest {
            question_id: qid,
            round,
            phase: manifest.phase,
            language: manifest.language.clone(),
            prompt,
            stance,
        });
    }
    if let Some(limit) = opts.max_requests {
        requests.truncate(limit);
    }

    let provider = build_provider(&opts.provider, AnswerTokens::from_template(template), manifest.seed)?;
    let sent = match run_batch(provider.as_ref(), &requests, opts.provider.max_in_flight, |req, result| {
        let record = match result {
            Ok(c) => RawResponse {
                run_id: run_id.clone(),
                question_id: req.question_id,
                round: req.round,
                prompt: req.prompt.clone(),
                raw_text: c.text,
                latency_ms: c.latency_ms,
                attempts: c.attempts,
                outcome: c.outcome,
                error: None,
            },
            Err(e @ ProviderError::Auth(_)) => return Err(PipelineError::Provider(e)),
            Err(e) => {
                log::warn!("question {} round {}: {e}", req.question_id, req.round);
                RawResponse {
                    run_id: run_id.clone(),
                    question_id: req.question_id,
                    round: req.round,
                    prompt: req.prompt.clone(),
                    raw_text: String::new(),
                    latency_ms: 0,
                    attempts: e.attempts(),
                    outcome: Outcome::Failed,
                    error: Some(e.to_string()),
                }
            }
        };
        writer.append(&record).map_err(PipelineError::from)
    }) {
        Ok(s) => s,
        Err(BatchError::Config(e)) => return Err(e.into()),
        Err(BatchError::Sink(e, _)) => {
            writer.sync()?;
            return Err(e);
        }
    };
    writer.sync()?;

    let missing = store.resume_plan(&run_id)?.len();
    if missing == 0 {
        finalize(store, &run_id, Some(&lexicon))?;
    }
    Ok(RunSummary {
        run_id,
        resumed,
        sent,
        missing,
    })
}

/// Classifies a complete run's responses and writes its classifications and
/// metrics files. Deterministic in the stored responses.
pub fn finalize(store: &RunStore, run_id: &str, lexicon: Option<&Lexicon>) -> Result<(), PipelineError> {
    let manifest = store.manifest(run_id)?;
    let missing = store.resume_plan(run_id)?.len();
    if missing > 0 {
        return Err(PipelineError::Incomplete {
            run_id: run_id.to_string(),
            missing,
        });
    }
    let lexicon = lexicon_for(lexicon, &manifest.language)?;
    let expected: BTreeSet<u32> = manifest.question_ids.iter().copied().collect();
    let records: Vec<ClassificationRecord> = store
        .effective_responses(run_id)?
        .into_iter()
        .filter(|r| expected.contains(&r.question_id) && r.round >= 1 && r.round <= manifest.n_rounds)
        .map(|r| {
            let c = match r.outcome {
                Outcome::Refused => Classification::refusal(),
                _ => lexicon.classify(&r.raw_text, manifest.classify_mode),
            };
            ClassificationRecord::new(r.question_id, r.round, c)
        })
        .collect();
    store.write_classifications(run_id, &records)?;

    let stats = run_stats(store, run_id)?;
    let metrics = question_metrics::<f64>(&stats, manifest.phase)?;
    let shifts: BTreeMap<u32, f64> = match (&manifest.phase, &manifest.from_run) {
        (Phase::Opposing, Some(from)) => {
            let initial = run_stats(store, from)?;
            let derived = stance_table(&initial)?;
            if derived != manifest.stances {
                return Err(PipelineError::Invalid(format!(
                    "run {run_id}: stored stances disagree with those derived from {from}"
                )));
            }
            shift_metrics::<f64>(&initial, &stats)?
                .into_iter()
                .map(|s| (s.question_id, s.shift))
                .collect()
        }
        _ => BTreeMap::new(),
    };
    store.write_metrics(run_id, &metrics_csv(&manifest, &metrics, &shifts))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_csv(m: &RunManifest, metrics: &[QuestionMetrics], shifts: &BTreeMap<u32, f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["question_id", "language", "model", "phase", "b", "variance", "w", "strong_neutral", "s"])
        .expect("in-memory write");
    for q in metrics {
        w.write_record([
            q.question_id.to_string(),
            m.language.clone(),
            m.model.clone(),
            m.phase.to_string(),
            q.bias.to_string(),
            opt(q.variance),
            opt(q.willingness),
            q.strong_neutral.to_string(),
            opt(shifts.get(&q.question_id).copied()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// One (model, language) column: an initial run and optionally its opposing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub model: String,
    pub language: String,
    pub initial_run: String,
    pub opposing_run: Option<String>,
    pub metrics: Vec<QuestionMetrics>,
    pub shifts: Vec<ShiftMetrics>,
    pub merged: Vec<MergedResult>,
    pub unexpected_initial: UnexpectedTally,
    pub unexpected_opposing: Option<UnexpectedTally>,
    /// Initial-phase response counts indexed by category.
    pub categories: [u64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub bank_name: String,
    pub bank_version: String,
    pub factors: Vec<Factor>,
    pub conditions: Vec<Condition>,
    pub comparisons: Vec<Comparison<f64>>,
}

impl Analysis {
    fn vectors(c: &Condition) -> RunVectors<f64> {
        RunVectors {
            label: c.label.clone(),
            bias: c.metrics.iter().map(|m| (m.question_id, m.bias)).collect(),
            willingness: c
                .metrics
                .iter()
                .filter_map(|m| m.willingness.map(|w| (m.question_id, w)))
                .collect(),
            shift: c.shifts.iter().map(|s| (s.question_id, s.shift)).collect(),
            categories: c.categories,
        }
    }
}

fn tally(store: &RunStore, run_id: &str) -> Result<(UnexpectedTally, [u64; 4]), PipelineError> {
    let mut t = UnexpectedTally::default();
    let mut counts = [0u64; 4];
    for r in store.classifications(run_id)? {
        let c = r.classification();
        t.add(&c);
        counts[c.category.index()] += 1;
    }
    Ok((t, counts))
}

/// Metrics, merged results and pairwise statistics for a set of runs.
/// Opposing runs pull in their initial run automatically. Artifacts are
/// written under `out`.
pub fn analyze(
    store: &RunStore,
    bank: &QuestionBank,
    run_ids: &[String],
    factors: &[Factor],
    out: &Path,
) -> Result<Analysis, PipelineError> {
    if run_ids.is_empty() {
        return Err(PipelineError::Invalid("no runs to analyze".into()));
    }
    // initial run id -> optional opposing run id, in first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut pairs: BTreeMap<String, Option<String>> = BTreeMap::new();
    for id in run_ids {
        let m = store.manifest(id)?;
        check_bank(bank, &m)?;
        let (initial, opposing) = match m.phase {
            Phase::Initial => (id.clone(), None),
            Phase::Opposing => (m.from_run.clone().ok_or(PipelineError::MissingFromRun)?, Some(id.clone())),
        };
        let entry = pairs.entry(initial.clone()).or_insert_with(|| {
            order.push(initial.clone());
            None
        });
        if let Some(o) = opposing {
            match entry {
                Some(prev) if *prev != o => return Err(PipelineError::DuplicateCondition(initial)),
                _ => *entry = Some(o),
            }
        }
    }

    let mut conditions = Vec::new();
    let mut labels = BTreeSet::new();
    let mut involved = Vec::new();
    for initial in &order {
        let opposing = pairs[initial].clone();
        let im = store.manifest(initial)?;
        check_bank(bank, &im)?;
        let label = format!("{}/{}", im.model, im.language);
        if !labels.insert(label.clone()) {
            return Err(PipelineError::DuplicateCondition(label));
        }
        let init_stats = run_stats(store, initial)?;
        let opp_stats = match &opposing {
            Some(o) => Some(run_stats(store, o)?),
            None => None,
        };
        let (unexpected_initial, categories) = tally(store, initial)?;
        let unexpected_opposing = match &opposing {
            Some(o) => Some(tally(store, o)?.0),
            None => None,
        };
        let shifts = match &opp_stats {
            Some(s) => shift_metrics::<f64>(&init_stats, s)?,
            None => Vec::new(),
        };
        conditions.push(Condition {
            label,
            model: im.model.clone(),
            language: im.language.clone(),
            initial_run: initial.clone(),
            opposing_run: opposing.clone(),
            metrics: question_metrics::<f64>(&init_stats, Phase::Initial)?,
            shifts,
            merged: merge_run::<f64>(bank, &init_stats, opp_stats.as_deref())?,
            unexpected_initial,
            unexpected_opposing,
            categories,
        });
        involved.push(initial.clone());
        involved.extend(opposing);
    }

    let vectors: Vec<RunVectors<f64>> = conditions.iter().map(Analysis::vectors).collect();
    let mut comparisons = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            comparisons.push(compare_runs(&vectors[i], &vectors[j], factors)?);
        }
    }
    let analysis = Analysis {
        bank_name: bank.name().to_string(),
        bank_version: bank.version().to_string(),
        factors: factors.to_vec(),
        conditions,
        comparisons,
    };

    let mut json = serde_json::to_string_pretty(&analysis).expect("analysis serializes");
    json.push('\n');
    write_atomic(&out.join(ANALYSIS_FILE), json.as_bytes())?;
    write_atomic(&out.join(BANK_FILE), bank.to_json().as_bytes())?;
    for id in &involved {
        write_atomic(&out.join("metrics").join(format!("{id}.csv")), store.metrics(id)?.as_bytes())?;
    }
    write_atomic(&out.join("unexpected.csv"), unexpected_csv(&analysis).as_bytes())?;
    if vectors.len() >= 2 {
        let labels: Vec<String> = vectors.iter().map(|v| v.label.clone()).collect();
        let idx = |l: &str| labels.iter().position(|x| x == l).expect("label from vectors");
        type Pick = fn(&RunVectors<f64>) -> &BTreeMap<u32, f64>;
        type PickR = fn(&crate::stats::CorrelationReport<f64>) -> Option<f64>;
        let metrics: [(&str, Pick, PickR); 3] = [
            ("bias", |v| &v.bias, |r| r.r_bias),
            ("willingness", |v| &v.willingness, |r| r.r_willingness),
            ("shift", |v| &v.shift, |r| r.r_shift),
        ];
        for (name, pick, pick_r) in metrics {
            if name == "shift" && vectors.iter().filter(|v| !v.shift.is_empty()).count() < 2 {
                continue;
            }
            let n = labels.len();
            let mut m = vec![vec![None; n]; n];
            for (i, v) in vectors.iter().enumerate() {
                let x: Vec<f64> = pick(v).values().copied().collect();
                m[i][i] = pearson(&x, &x).ok();
            }
            for c in &analysis.comparisons {
                let (i, j) = (idx(&c.correlation.pair.0), idx(&c.correlation.pair.1));
                m[i][j] = pick_r(&c.correlation);
                m[j][i] = m[i][j];
            }
            write_atomic(&out.join(format!("correlation_{name}.csv")), matrix_csv(&labels, &m).as_bytes())?;
        }
        write_atomic(&out.join("chi_square.csv"), chi_square_csv(&analysis).as_bytes())?;
        for f in factors {
            let n = labels.len();
            let mut m = vec![vec![None; n]; n];
            for c in &analysis.comparisons {
                if let Some(r) = c.chi_square.iter().find(|r| r.factor == *f) {
                    let (i, j) = (idx(&r.pair.0), idx(&r.pair.1));
                    m[i][j] = r.test.map(|t| t.p);
                    m[j][i] = m[i][j];
                }
            }
            write_atomic(&out.join(format!("chi_square_p_{f}.csv")), matrix_csv(&labels, &m).as_bytes())?;
        }
    }
    Ok(analysis)
}

fn matrix_csv(labels: &[String], m: &[Vec<Option<f64>>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (i, row) in m.iter().enumerate() {
        let mut rec = vec![labels[i].clone()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn chi_square_csv(a: &Analysis) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["a", "b", "factor", "chi2", "dof", "p", "dropped"])
        .expect("in-memory write");
    for c in &a.comparisons {
        for r in &c.chi_square {
            let (chi2, dof, p) = match r.test {
                Some(t) => (t.chi2.to_string(), t.dof.to_string(), t.p.to_string()),
                None => ("NA".into(), "NA".into(), "NA".into()),
            };
            w.write_record([
                r.pair.0.clone(),
                r.pair.1.clone(),
                r.factor.to_string(),
                chi2,
                dof,
                p,
                r.dropped.join(";"),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn unexpected_csv(a: &Analysis) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "run_id", "phase", "explainer", "neutral", "total"])
        .expect("in-memory write");
    for c in &a.conditions {
        let mut rows = vec![(c.initial_run.clone(), Phase::Initial, c.unexpected_initial)];
        if let (Some(o), Some(t)) = (&c.opposing_run, c.unexpected_opposing) {
            rows.push((o.clone(), Phase::Opposing, t));
        }
        for (run, phase, t) in rows {
            w.write_record([
                c.label.clone(),
                run,
                phase.to_string(),
                t.explainer.to_string(),
                t.neutral.to_string(),
                t.total.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Loads `analysis.json` and `bank.json` from an analysis directory.
pub fn load_analysis(dir: &Path) -> Result<(Analysis, QuestionBank), PipelineError> {
    let expected = [ANALYSIS_FILE, BANK_FILE];
    let missing: Vec<String> = expected
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingInputs {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let path = dir.join(ANALYSIS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| file_err(&path, e))?;
    let analysis: Analysis = serde_json::from_str(&text).map_err(|e| file_err(&path, e))?;
    let bank = load_bank(&dir.join(BANK_FILE))?;
    Ok((analysis, bank))
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Language of the question text column; English when available.
    pub text_language: Option<String>,
    pub svg: bool,
}

/// Renders report.md, report.html, report.csv and distributions/ under `out`.
/// Returns the files written.
pub fn report(analysis_dir: &Path, out: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>, PipelineError> {
    let (analysis, bank) = load_analysis(analysis_dir)?;
    let language = opts.text_language.clone().unwrap_or_else(|| {
        if bank.has_language("en") {
            "en".into()
        } else {
            bank.languages().first().cloned().unwrap_or_default()
        }
    });
    let columns: Vec<(String, Vec<MergedResult>)> = analysis
        .conditions
        .iter()
        .map(|c| (c.label.clone(), c.merged.clone()))
        .collect();
    let table = ResultTable::build(&bank, &language, &columns)?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, contents: String| -> Result<(), PipelineError> {
        write_atomic(&path, contents.as_bytes())?;
        written.push(path);
        Ok(())
    };

    let mut md = format!(
        "# Results: {} {}\n\n{} merged questions; columns: {}.\n\n",
        bank.name(),
        bank.version(),
        table.rows.len(),
        table.bias_columns.join(", ")
    );
    md.push_str(&table.render(Format::Markdown));
    put(out.join("report.md"), md)?;
    put(out.join("report.html"), table.render(Format::Html))?;
    put(out.join("report.csv"), table.render(Format::Csv))?;

    let dist = out.join("distributions");
    let mut splits = Vec::new();
    for c in &analysis.conditions {
        let shifts = c.opposing_run.as_ref().map(|_| c.shifts.as_slice());
        let summary = distribution_summary(&c.metrics, shifts, None);
        let split = split_summary(&c.merged);
        for (name, contents) in render_distributions(&c.label, &summary, &split, opts.svg) {
            put(dist.join(name), contents)?;
        }
        splits.push((c.label.clone(), split));
    }
    put(dist.join("split_patterns.csv"), split_patterns_csv(&splits))?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankSummary {
    pub name: String,
    pub version: String,
    pub questions: usize,
    pub pairs: usize,
    pub slots: usize,
    pub languages: Vec<String>,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for BankSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} questions, {} merged slots, {} pairs, languages {}",
            self.name,
            self.version,
            self.questions,
            self.slots,
            self.pairs,
            self.languages.join(",")
        )
    }
}

pub fn validate(path: &Path) -> Result<BankSummary, BankError> {
    let bank = load_bank(path)?;
    Ok(summarize(&bank))
}

pub fn summarize(bank: &QuestionBank) -> BankSummary {
    BankSummary {
        name: bank.name().to_string(),
        version: bank.version().to_string(),
        questions: bank.len(),
        pairs: bank.split_pairs().len(),
        slots: bank.merged_numbering().len(),
        languages: bank.languages().to_vec(),
        warnings: bank.warnings().iter().map(|w| w.to_string()).collect(),
    }
}

/// Response category counts of one finalized run.
pub fn category_counts(store: &RunStore, run_id: &str) -> Result<BTreeMap<Category, u64>, PipelineError> {
    let (_, counts) = tally(store, run_id)?;
    Ok(Category::ALL.iter().map(|c| (*c, counts[c.index()])).collect())
}
