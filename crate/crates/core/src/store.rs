//! Append-only run storage.
//!
//! ```text
//! {root}/{run_id}/manifest.json
//!                 responses.jsonl        one RawResponse per line, arrival order
//!                 classifications.jsonl  sorted by (question, round)
//!                 metrics.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{Category, Classification, ClassifyMode};
use crate::prompting::{Phase, Stance};
use crate::provider::{MockPolicy, Outcome, ProviderKind};

pub const MANIFEST: &str = "manifest.json";
pub const RESPONSES: &str = "responses.jsonl";
pub const CLASSIFICATIONS: &str = "classifications.jsonl";
pub const METRICS: &str = "metrics.csv";

/// Everything needed to reproduce a run's prompts. Written once, never edited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model: String,
    pub provider_kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_policy: Option<MockPolicy>,
    pub language: String,
    pub phase: Phase,
    pub n_rounds: u32,
    pub seed: u64,
    pub bank_name: String,
    pub bank_version: String,
    pub template_version: String,
    pub classify_mode: ClassifyMode,
    /// Decoding parameters exactly as sent.
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    pub created: String,
    pub question_ids: Vec<u32>,
    /// Initial run the opposing stances were derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_run: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stances: BTreeMap<u32, Stance>,
}

impl RunManifest {
    pub fn expected_responses(&self) -> usize {
        self.question_ids.len() * self.n_rounds as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub run_id: String,
    pub question_id: u32,
    pub round: u32,
    pub prompt: String,
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RawResponse {
    pub fn key(&self) -> (u32, u32) {
        (self.question_id, self.round)
    }

    /// Ok and refused records are final; failed ones can be superseded.
    pub fn is_final(&self) -> bool {
        self.outcome != Outcome::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub question_id: u32,
    pub round: u32,
    pub category: Category,
    pub answer_value: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_token: Option<String>,
    pub verbose: bool,
}

impl ClassificationRecord {
    pub fn new(question_id: u32, round: u32, c: Classification) -> Self {
        Self {
            question_id,
            round,
            category: c.category,
            answer_value: c.answer_value,
            matched_token: c.matched_token,
            verbose: c.verbose,
        }
    }

    pub fn classification(&self) -> Classification {
        Classification {
            category: self.category,
            answer_value: self.answer_value,
            matched_token: self.matched_token.clone(),
            verbose: self.verbose,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("run {run_id} already has a response for question {question_id} round {round}")]
    Duplicate { run_id: String, question_id: u32, round: u32 },
    #[error("response belongs to run {got}, not {expected}")]
    WrongRun { expected: String, got: String },
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("run {0:?} already exists")]
    Exists(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// A directory of runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.run_dir(run_id).join(MANIFEST).is_file()
    }

    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join(MANIFEST).is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Creates the run directory and manifest, then opens it for appending.
    pub fn create(&self, manifest: &RunManifest) -> Result<RunWriter, StoreError> {
        if self.exists(&manifest.run_id) {
            return Err(StoreError::Exists(manifest.run_id.clone()));
        }
        let dir = self.run_dir(&manifest.run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        json.push('\n');
        write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
        self.writer(&manifest.run_id)
    }

    pub fn manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        let path = self.run_dir(run_id).join(MANIFEST);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownRun(run_id.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Opens an existing run for appending. A torn final line left by a crash
    /// is cut off first.
    pub fn writer(&self, run_id: &str) -> Result<RunWriter, StoreError> {
        self.manifest(run_id)?;
        let path = self.run_dir(run_id).join(RESPONSES);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let complete_len = complete_prefix_len(&mut file).map_err(io_err(&path))?;
        if complete_len < file.metadata().map_err(io_err(&path))?.len() {
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(complete_len).map_err(io_err(&path))?;
        }
        let mut done = BTreeSet::new();
        for r in self.responses(run_id)? {
            if r.is_final() {
                done.insert(r.key());
            }
        }
        Ok(RunWriter {
            run_id: run_id.to_string(),
            path,
            file,
            done,
        })
    }

    /// Every stored record in file order. A torn final line is ignored.
    pub fn responses(&self, run_id: &str) -> Result<Vec<RawResponse>, StoreError> {
        let path = self.run_dir(run_id).join(RESPONSES);
        read_jsonl(&path, true)
    }

    /// One record per (question, round): the final record if there is one,
    /// otherwise the latest failure. Sorted by key.
    pub fn effective_responses(&self, run_id: &str) -> Result<Vec<RawResponse>, StoreError> {
        let mut best: BTreeMap<(u32, u32), RawResponse> = BTreeMap::new();
        for r in self.responses(run_id)? {
            match best.get(&r.key()) {
                Some(prev) if prev.is_final() => {}
                _ => {
                    best.insert(r.key(), r);
                }
            }
        }
        Ok(best.into_values().collect())
    }

    /// (question, round) pairs still lacking an ok or refused record, sorted.
    pub fn resume_plan(&self, run_id: &str) -> Result<Vec<(u32, u32)>, StoreError> {
        let manifest = self.manifest(run_id)?;
        let done: BTreeSet<(u32, u32)> = self
            .responses(run_id)?
            .iter()
            .filter(|r| r.is_final())
            .map(RawResponse::key)
            .collect();
        let mut plan = Vec::new();
        let mut ids = manifest.question_ids.clone();
        ids.sort_unstable();
        for q in ids {
            for round in 1..=manifest.n_rounds {
                if !done.contains(&(q, round)) {
                    plan.push((q, round));
                }
            }
        }
        Ok(plan)
    }

    pub fn is_complete(&self, run_id: &str) -> Result<bool, StoreError> {
        Ok(self.resume_plan(run_id)?.is_empty())
    }

    pub fn write_classifications(
        &self,
        run_id: &str,
        records: &[ClassificationRecord],
    ) -> Result<(), StoreError> {
        let mut sorted = records.to_vec();
        sorted.sort_by_key(|r| (r.question_id, r.round));
        let mut out = String::new();
        for r in &sorted {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        write_atomic(&self.run_dir(run_id).join(CLASSIFICATIONS), out.as_bytes())
    }

    pub fn classifications(&self, run_id: &str) -> Result<Vec<ClassificationRecord>, StoreError> {
        read_jsonl(&self.run_dir(run_id).join(CLASSIFICATIONS), false)
    }

    pub fn write_metrics(&self, run_id: &str, csv: &str) -> Result<(), StoreError> {
        write_atomic(&self.run_dir(run_id).join(METRICS), csv.as_bytes())
    }

    pub fn metrics(&self, run_id: &str) -> Result<String, StoreError> {
        let path = self.run_dir(run_id).join(METRICS);
        fs::read_to_string(&path).map_err(io_err(&path))
    }
}

fn complete_prefix_len(file: &mut File) -> io::Result<u64> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(0);
    }
    let mut pos = len;
    let mut buf = [0u8; 4096];
    while pos > 0 {
        let n = buf.len().min(pos as usize);
        pos -= n as u64;
        file.seek(SeekFrom::Start(pos))?;
        io::Read::read_exact(file, &mut buf[..n])?;
        if let Some(i) = buf[..n].iter().rposition(|&b| b == b'\n') {
            return Ok(pos + i as u64 + 1);
        }
    }
    Ok(0)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, tolerate_torn_tail: bool) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(io_err(path))?;
        if read == 0 {
            break;
        }
        n += 1;
        let terminated = line.ends_with('\n');
        if !terminated && tolerate_torn_tail {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line.trim_end_matches(['\n', '\r'])).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: n,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Appends responses to one run. Each record is flushed before `append` returns.
#[derive(Debug)]
pub struct RunWriter {
    run_id: String,
    path: PathBuf,
    file: File,
    done: BTreeSet<(u32, u32)>,
}

impl RunWriter {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }

    pub fn append(&mut self, response: &RawResponse) -> Result<(), StoreError> {
        if response.run_id != self.run_id {
            return Err(StoreError::WrongRun {
                expected: self.run_id.clone(),
                got: response.run_id.clone(),
            });
        }
        if self.done.contains(&response.key()) {
            return Err(StoreError::Duplicate {
                run_id: self.run_id.clone(),
                question_id: response.question_id,
                round: response.round,
            });
        }
        let mut line = serde_json::to_string(response).expect("response serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        if response.is_final() {
            self.done.insert(response.key());
        }
        Ok(())
    }

    pub fn sync(&self) -> Result<(), StoreError> {
        self.file.sync_data().map_err(io_err(&self.path))
    }
}
