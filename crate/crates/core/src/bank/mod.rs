//! Multilingual binary-choice question battery.
//!
//! Comparison questions ("Is A better than B?") are authored as two directional
//! entries that share a split pair id, one on side `A` and one on side `B`.
//! Ids are authored rather than assigned so that published numbering, with one
//! id skipped per merged pair, can be reproduced exactly.

mod import;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use import::from_csv;

/// Conventional genre for items derived from tasks people tend to delegate to AI.
pub const GENRE_DELEGABLE: &str = "delegable-task";
/// Conventional genre for items drawn from debate topic collections.
pub const GENRE_DEBATE: &str = "debate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitSide {
    A,
    B,
}

impl SplitSide {
    pub fn opposite(self) -> Self {
        match self {
            SplitSide::A => SplitSide::B,
            SplitSide::B => SplitSide::A,
        }
    }
}

impl fmt::Display for SplitSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitSide::A => "A",
            SplitSide::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLink {
    pub pair: u32,
    pub side: SplitSide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: u32,
    pub genre: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitLink>,
    /// Question text keyed by language code.
    pub text: BTreeMap<String, String>,
}

impl Question {
    pub fn text_for(&self, language: &str) -> Option<&str> {
        self.text.get(language).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BankFile {
    name: String,
    version: String,
    languages: Vec<String>,
    questions: Vec<Question>,
}

/// A validated question battery. Read-only after construction.
#[derive(Debug, Clone)]
pub struct QuestionBank {
    file: BankFile,
    index: HashMap<u32, usize>,
    warnings: Vec<BankWarning>,
}

/// One complete split pair, sides as authored.
#[derive(Debug, Clone, Copy)]
pub struct SplitPair<'a> {
    pub pair_id: u32,
    pub a: &'a Question,
    pub b: &'a Question,
}

/// One row of merged results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Single { id: u32 },
    /// `id` is the smaller of the two member ids; the other one is skipped.
    Pair { id: u32, pair_id: u32, a: u32, b: u32 },
}

impl Slot {
    pub fn id(&self) -> u32 {
        match *self {
            Slot::Single { id } | Slot::Pair { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoLanguages,
    DuplicateLanguage(String),
    ZeroId,
    DuplicateId(u32),
    MissingText { id: u32, language: String },
    EmptyText { id: u32, language: String },
    UndeclaredLanguage { id: u32, language: String },
    OrphanSplit { pair: u32, side: SplitSide, id: u32 },
    SameSideTwice { pair: u32, side: SplitSide },
    OverfullPair { pair: u32, members: usize },
    PairGenreMismatch { pair: u32 },
    PairLanguageMismatch { pair: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoLanguages => write!(f, "bank declares no languages"),
            Violation::DuplicateLanguage(l) => write!(f, "language {l:?} declared twice"),
            Violation::ZeroId => write!(f, "question id 0 is not allowed (ids start at 1)"),
            Violation::DuplicateId(id) => write!(f, "duplicate question id {id}"),
            Violation::MissingText { id, language } => {
                write!(f, "question {id} has no text for language {language:?}")
            }
            Violation::EmptyText { id, language } => {
                write!(f, "question {id} has empty text for language {language:?}")
            }
            Violation::UndeclaredLanguage { id, language } => {
                write!(f, "question {id} has text for undeclared language {language:?}")
            }
            Violation::OrphanSplit { pair, side, id } => write!(
                f,
                "split pair {pair}: question {id} is side {side} but no side {} exists",
                side.opposite()
            ),
            Violation::SameSideTwice { pair, side } => {
                write!(f, "split pair {pair}: side {side} appears twice")
            }
            Violation::OverfullPair { pair, members } => {
                write!(f, "split pair {pair} has {members} members, expected 2")
            }
            Violation::PairGenreMismatch { pair } => {
                write!(f, "split pair {pair}: sides have different genres")
            }
            Violation::PairLanguageMismatch { pair } => {
                write!(f, "split pair {pair}: sides have different language sets")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BankWarning {
    UnknownGenre { id: u32, genre: String },
}

impl fmt::Display for BankWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankWarning::UnknownGenre { id, genre } => {
                write!(f, "question {id} uses unconventional genre {genre:?}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed bank file: {0}")]
    Parse(String),
    #[error("invalid question bank:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

impl BankError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            BankError::Invalid(v) => v,
            _ => &[],
        }
    }
}

impl QuestionBank {
    /// Builds and validates a bank. Every violated invariant is reported.
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        languages: Vec<String>,
        questions: Vec<Question>,
    ) -> Result<Self, BankError> {
        Self::from_file(BankFile {
            name: name.into(),
            version: version.into(),
            languages,
            questions,
        })
    }

    fn from_file(file: BankFile) -> Result<Self, BankError> {
        let violations = validate(&file);
        if !violations.is_empty() {
            return Err(BankError::Invalid(violations));
        }
        let index = file
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id, i))
            .collect();
        let warnings = file
            .questions
            .iter()
            .filter(|q| q.genre != GENRE_DELEGABLE && q.genre != GENRE_DEBATE)
            .map(|q| BankWarning::UnknownGenre {
                id: q.id,
                genre: q.genre.clone(),
            })
            .collect();
        Ok(Self {
            file,
            index,
            warnings,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, BankError> {
        let file: BankFile =
            serde_json::from_str(json).map_err(|e| BankError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    /// Canonical JSON: questions in authored order, texts sorted by language code.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.file).expect("bank serializes");
        s.push('\n');
        s
    }

    /// The shipped eight-question sample battery.
    pub fn sample() -> Self {
        Self::from_json(include_str!("../../data/sample_bank.json")).expect("sample bank is valid")
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn version(&self) -> &str {
        &self.file.version
    }

    pub fn languages(&self) -> &[String] {
        &self.file.languages
    }

    pub fn questions(&self) -> &[Question] {
        &self.file.questions
    }

    pub fn len(&self) -> usize {
        self.file.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.questions.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Question> {
        self.index.get(&id).map(|&i| &self.file.questions[i])
    }

    pub fn warnings(&self) -> &[BankWarning] {
        &self.warnings
    }

    pub fn has_language(&self, language: &str) -> bool {
        self.file.languages.iter().any(|l| l == language)
    }

    /// Every complete pair exactly once, in order of first appearance.
    pub fn split_pairs(&self) -> Vec<SplitPair<'_>> {
        let mut order: Vec<u32> = Vec::new();
        let mut sides: HashMap<u32, (Option<&Question>, Option<&Question>)> = HashMap::new();
        for q in &self.file.questions {
            if let Some(link) = q.split {
                let entry = sides.entry(link.pair).or_insert_with(|| {
                    order.push(link.pair);
                    (None, None)
                });
                match link.side {
                    SplitSide::A => entry.0 = Some(q),
                    SplitSide::B => entry.1 = Some(q),
                }
            }
        }
        order
            .into_iter()
            .map(|pair_id| {
                let (a, b) = sides[&pair_id];
                SplitPair {
                    pair_id,
                    a: a.expect("validated pair has side A"),
                    b: b.expect("validated pair has side B"),
                }
            })
            .collect()
    }

    /// One slot per base question; each split pair collapses onto its smaller id.
    pub fn merged_numbering(&self) -> Vec<Slot> {
        let pairs: HashMap<u32, SplitPair<'_>> = self
            .split_pairs()
            .into_iter()
            .map(|p| (p.pair_id, p))
            .collect();
        let mut emitted = std::collections::HashSet::new();
        let mut slots = Vec::with_capacity(self.len() - pairs.len());
        for q in &self.file.questions {
            match q.split {
                None => slots.push(Slot::Single { id: q.id }),
                Some(link) => {
                    if emitted.insert(link.pair) {
                        let p = pairs[&link.pair];
                        slots.push(Slot::Pair {
                            id: p.a.id.min(p.b.id),
                            pair_id: p.pair_id,
                            a: p.a.id,
                            b: p.b.id,
                        });
                    }
                }
            }
        }
        slots
    }
}

fn validate(file: &BankFile) -> Vec<Violation> {
    let mut out = Vec::new();
    if file.languages.is_empty() {
        out.push(Violation::NoLanguages);
    }
    let mut seen_lang = std::collections::HashSet::new();
    for l in &file.languages {
        if !seen_lang.insert(l.as_str()) {
            out.push(Violation::DuplicateLanguage(l.clone()));
        }
    }

    let mut seen_ids = std::collections::HashSet::new();
    for q in &file.questions {
        if q.id == 0 {
            out.push(Violation::ZeroId);
        }
        if !seen_ids.insert(q.id) {
            out.push(Violation::DuplicateId(q.id));
        }
        for l in &file.languages {
            match q.text.get(l) {
                None => out.push(Violation::MissingText {
                    id: q.id,
                    language: l.clone(),
                }),
                Some(t) if t.trim().is_empty() => out.push(Violation::EmptyText {
                    id: q.id,
                    language: l.clone(),
                }),
                Some(_) => {}
            }
        }
        for l in q.text.keys() {
            if !seen_lang.contains(l.as_str()) {
                out.push(Violation::UndeclaredLanguage {
                    id: q.id,
                    language: l.clone(),
                });
            }
        }
    }

    let mut members: BTreeMap<u32, Vec<&Question>> = BTreeMap::new();
    for q in &file.questions {
        if let Some(link) = q.split {
            members.entry(link.pair).or_default().push(q);
        }
    }
    for (pair, qs) in members {
        match qs.as_slice() {
            [only] => {
                let side = only.split.expect("member has link").side;
                out.push(Violation::OrphanSplit {
                    pair,
                    side,
                    id: only.id,
                });
            }
            [x, y] => {
                let (sx, sy) = (x.split.unwrap().side, y.split.unwrap().side);
                if sx == sy {
                    out.push(Violation::SameSideTwice { pair, side: sx });
                }
                if x.genre != y.genre {
                    out.push(Violation::PairGenreMismatch { pair });
                }
                if !x.text.keys().eq(y.text.keys()) {
                    out.push(Violation::PairLanguageMismatch { pair });
                }
            }
            many => out.push(Violation::OverfullPair {
                pair,
                members: many.len(),
            }),
        }
    }
    out
}

/// Reads a bank file. `.csv` files go through the CSV import path.
pub fn load_bank(path: &Path) -> Result<QuestionBank, BankError> {
    let raw = std::fs::read_to_string(path).map_err(|source| BankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "bank".into());
        return from_csv(raw.as_bytes(), &stem, "1");
    }
    QuestionBank::from_json(&raw)
}

pub fn save_bank(bank: &QuestionBank, path: &Path) -> Result<(), BankError> {
    std::fs::write(path, bank.to_json()).map_err(|source| BankError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn q(id: u32, split: Option<(u32, SplitSide)>, langs: &[&str]) -> Question {
        Question {
            id,
            genre: GENRE_DEBATE.into(),
            source: "test".into(),
            split: split.map(|(pair, side)| SplitLink { pair, side }),
            text: langs
                .iter()
                .map(|l| (l.to_string(), format!("question {id} in {l}")))
                .collect(),
        }
    }

    fn langs() -> Vec<String> {
        ["en", "ja", "es", "fr"].iter().map(|s| s.to_string()).collect()
    }

    const ALL: &[&str] = &["en", "ja", "es", "fr"];

    #[test]
    fn sample_bank_shape() {
        let bank = QuestionBank::sample();
        assert_eq!(bank.len(), 8);
        assert_eq!(bank.split_pairs().len(), 2);
        assert_eq!(bank.languages().len(), 4);
        assert_eq!(bank.merged_numbering().len(), 6);
        assert!(bank.warnings().is_empty());
    }

    #[test]
    fn orphan_side_names_pair() {
        let qs = vec![q(4, None, ALL), q(5, Some((77, SplitSide::A)), ALL)];
        let err = QuestionBank::new("t", "1", langs(), qs).unwrap_err();
        assert_eq!(
            err.violations(),
            &[Violation::OrphanSplit {
                pair: 77,
                side: SplitSide::A,
                id: 5
            }]
        );
        assert!(err.to_string().contains("split pair 77"));
    }

    #[test]
    fn every_violation_is_listed() {
        let mut dup = q(1, None, &["en", "ja", "es"]);
        dup.text.insert("de".into(), "x".into());
        let qs = vec![
            q(1, None, ALL),
            dup,
            q(2, Some((1, SplitSide::A)), ALL),
            q(3, Some((1, SplitSide::A)), ALL),
        ];
        let err = QuestionBank::new("t", "1", langs(), qs).unwrap_err();
        let v = err.violations();
        assert!(v.contains(&Violation::DuplicateId(1)));
        assert!(v.contains(&Violation::MissingText {
            id: 1,
            language: "fr".into()
        }));
        assert!(v.contains(&Violation::UndeclaredLanguage {
            id: 1,
            language: "de".into()
        }));
        assert!(v.contains(&Violation::SameSideTwice {
            pair: 1,
            side: SplitSide::A
        }));
    }

    #[test]
    fn pair_genre_must_match() {
        let mut b = q(4, Some((9, SplitSide::B)), ALL);
        b.genre = GENRE_DELEGABLE.into();
        let qs = vec![q(3, Some((9, SplitSide::A)), ALL), b];
        let err = QuestionBank::new("t", "1", langs(), qs).unwrap_err();
        assert_eq!(err.violations(), &[Violation::PairGenreMismatch { pair: 9 }]);
    }

    #[test]
    fn unknown_genre_warns_only() {
        let mut x = q(1, None, ALL);
        x.genre = "trivia".into();
        let bank = QuestionBank::new("t", "1", langs(), vec![x]).unwrap();
        assert_eq!(bank.warnings().len(), 1);
    }

    #[test]
    fn split_pairs_and_numbering() {
        let qs = vec![
            q(1, None, ALL),
            q(2, None, ALL),
            q(3, Some((10, SplitSide::A)), ALL),
            q(4, Some((10, SplitSide::B)), ALL),
            q(5, None, ALL),
            q(6, None, ALL),
            q(7, Some((11, SplitSide::A)), ALL),
            q(8, Some((11, SplitSide::B)), ALL),
        ];
        let bank = QuestionBank::new("t", "1", langs(), qs).unwrap();
        let pairs: Vec<_> = bank
            .split_pairs()
            .iter()
            .map(|p| (p.a.id, p.b.id))
            .collect();
        assert_eq!(pairs, vec![(3, 4), (7, 8)]);
        let ids: Vec<u32> = bank.merged_numbering().iter().map(Slot::id).collect();
        assert_eq!(ids, vec![1, 2, 3, 5, 6, 7]);
    }

    #[test]
    fn no_pairs_identity() {
        let qs = vec![q(1, None, ALL), q(2, None, ALL), q(9, None, ALL)];
        let bank = QuestionBank::new("t", "1", langs(), qs).unwrap();
        assert!(bank.split_pairs().is_empty());
        let ids: Vec<u32> = bank.merged_numbering().iter().map(Slot::id).collect();
        assert_eq!(ids, vec![1, 2, 9]);
    }

    #[test]
    fn pair_459_460_collapses_to_459() {
        let qs = vec![
            q(458, None, ALL),
            q(459, Some((1, SplitSide::A)), ALL),
            q(460, Some((1, SplitSide::B)), ALL),
            q(461, None, ALL),
        ];
        let bank = QuestionBank::new("t", "1", langs(), qs).unwrap();
        let ids: Vec<u32> = bank.merged_numbering().iter().map(Slot::id).collect();
        assert_eq!(ids, vec![458, 459, 461]);
    }

    #[test]
    fn side_b_authored_first_keeps_sides() {
        let qs = vec![
            q(20, Some((5, SplitSide::B)), ALL),
            q(21, Some((5, SplitSide::A)), ALL),
        ];
        let bank = QuestionBank::new("t", "1", langs(), qs).unwrap();
        let p = bank.split_pairs()[0];
        assert_eq!((p.a.id, p.b.id), (21, 20));
        assert_eq!(
            bank.merged_numbering(),
            vec![Slot::Pair {
                id: 20,
                pair_id: 5,
                a: 21,
                b: 20
            }]
        );
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            QuestionBank::from_json("{\"name\": 3"),
            Err(BankError::Parse(_))
        ));
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = load_bank(Path::new("/definitely/not/here.json")).unwrap_err();
        assert!(matches!(err, BankError::Io { .. }));
    }
}
