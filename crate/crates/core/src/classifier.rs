//! Reading raw model output as an answer value.
//!
//! Outputs are normalized (width folding, case folding, punctuation to
//! whitespace, whitespace collapse) and matched against per-language forms.
//! An exact affirm/negate form scores ±1. In lenient mode an output that
//! *starts* with such a form and continues keeps its stance but is flagged
//! verbose; strict mode scores it 0 as an explainer.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Affirm,
    Negate,
    Neutral,
    Explainer,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Affirm,
        Category::Negate,
        Category::Neutral,
        Category::Explainer,
    ];

    pub fn answer_value(self) -> i8 {
        match self {
            Category::Affirm => 1,
            Category::Negate => -1,
            Category::Neutral | Category::Explainer => 0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Affirm => "affirm",
            Category::Negate => "negate",
            Category::Neutral => "neutral",
            Category::Explainer => "explainer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifyMode {
    Strict,
    #[default]
    Lenient,
}

impl fmt::Display for ClassifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifyMode::Strict => "strict",
            ClassifyMode::Lenient => "lenient",
        })
    }
}

impl FromStr for ClassifyMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ClassifyMode::Strict),
            "lenient" => Ok(ClassifyMode::Lenient),
            other => Err(format!("unknown classify mode {other:?} (strict|lenient)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub category: Category,
    pub answer_value: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_token: Option<String>,
    /// The output went beyond the bare one-token answer.
    pub verbose: bool,
}

impl Classification {
    fn new(category: Category, matched_token: Option<String>, verbose: bool) -> Self {
        Self {
            category,
            answer_value: category.answer_value(),
            matched_token,
            verbose,
        }
    }

    /// Reading assigned to a provider-side refusal.
    pub fn refusal() -> Self {
        Self::new(Category::Neutral, None, false)
    }
}

fn is_punctuation(c: char) -> bool {
    if c.is_ascii_punctuation() {
        return true;
    }
    match c {
        // ideographic iteration and kana repeat marks are letters
        '\u{3005}'..='\u{3007}' | '\u{3031}'..='\u{3035}' | '\u{303B}' | '\u{303C}' => false,
        '\u{2000}'..='\u{206F}' | '\u{3000}'..='\u{303F}' | '\u{2E00}'..='\u{2E7F}' => true,
        '¡' | '¿' | '«' | '»' | '·' | '・' | '\u{FF61}'..='\u{FF65}' | '\u{FE10}'..='\u{FE1F}'
        | '\u{FE30}'..='\u{FE4F}' => true,
        _ => false,
    }
}

fn fold_width(c: char) -> char {
    match c {
        '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
        '\u{3000}' => ' ',
        _ => c,
    }
}

/// Canonical form used for matching. Idempotent.
pub fn normalize(raw: &str) -> String {
    let folded: String = raw.chars().map(fold_width).collect::<String>().to_lowercase();
    let spaced: String = folded
        .chars()
        .map(|c| if is_punctuation(c) { ' ' } else { c })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon {language}: form {form:?} is both affirm and negate after normalization")]
    Overlap { language: String, form: String },
    #[error("lexicon {0}: affirm and negate forms must be non-empty")]
    Empty(String),
    #[error("no default lexicon for language {0:?}")]
    NoDefault(String),
    #[error("malformed lexicon file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LexiconDef {
    language: String,
    affirm: Vec<String>,
    negate: Vec<String>,
    #[serde(default)]
    neutral: Vec<String>,
}

/// Per-language answer forms, stored normalized.
#[derive(Debug, Clone)]
pub struct Lexicon {
    def: LexiconDef,
    affirm: HashSet<String>,
    negate: HashSet<String>,
    neutral: HashSet<String>,
    /// Affirm and negate forms, longest first, for prefix matching.
    leading: Vec<(String, Category)>,
}

impl Lexicon {
    pub fn new(
        language: impl Into<String>,
        affirm: Vec<String>,
        negate: Vec<String>,
        neutral: Vec<String>,
    ) -> Result<Self, LexiconError> {
        Self::compile(LexiconDef {
            language: language.into(),
            affirm,
            negate,
            neutral,
        })
    }

    fn compile(def: LexiconDef) -> Result<Self, LexiconError> {
        let set = |forms: &[String]| -> HashSet<String> {
            forms
                .iter()
                .map(|f| normalize(f))
                .filter(|f| !f.is_empty())
                .collect()
        };
        let affirm = set(&def.affirm);
        let negate = set(&def.negate);
        let neutral = set(&def.neutral);
        if affirm.is_empty() || negate.is_empty() {
            return Err(LexiconError::Empty(def.language));
        }
        if let Some(form) = affirm.intersection(&negate).min() {
            return Err(LexiconError::Overlap {
                language: def.language,
                form: form.clone(),
            });
        }
        let mut leading: Vec<(String, Category)> = affirm
            .iter()
            .map(|f| (f.clone(), Category::Affirm))
            .chain(negate.iter().map(|f| (f.clone(), Category::Negate)))
            .collect();
        leading.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            def,
            affirm,
            negate,
            neutral,
            leading,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let def: LexiconDef =
            serde_json::from_str(json).map_err(|e| LexiconError::Parse(e.to_string()))?;
        Self::compile(def)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.def).expect("lexicon serializes")
    }

    pub fn language(&self) -> &str {
        &self.def.language
    }

    /// Adds a form (e.g. a template's answer token) to the affirm or negate set.
    pub fn with_form(mut self, category: Category, form: &str) -> Result<Self, LexiconError> {
        match category {
            Category::Affirm => self.def.affirm.push(form.to_string()),
            Category::Negate => self.def.negate.push(form.to_string()),
            Category::Neutral => self.def.neutral.push(form.to_string()),
            Category::Explainer => return Ok(self),
        }
        Self::compile(self.def)
    }

    pub fn default_for(language: &str) -> Result<Self, LexiconError> {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (affirm, negate, neutral) = match language {
            "en" => (
                v(&["yes"]),
                v(&["no"]),
                v(&["neutral", "neither", "yes and no", "yes or no", "i don't know", "no opinion"]),
            ),
            "ja" => (
                v(&["はい"]),
                v(&["いいえ"]),
                v(&["中立", "どちらとも言えない", "どちらともいえない", "どちらでもない", "わからない", "分からない"]),
            ),
            "es" => (
                v(&["sí", "si"]),
                v(&["no"]),
                v(&["neutral", "ni sí ni no", "ni si ni no", "no lo sé", "no lo se", "no sé", "sin opinión"]),
            ),
            "fr" => (
                v(&["oui"]),
                v(&["non"]),
                v(&["neutre", "ni oui ni non", "je ne sais pas", "sans opinion"]),
            ),
            other => return Err(LexiconError::NoDefault(other.to_string())),
        };
        Self::new(language, affirm, negate, neutral)
    }

    pub fn classify(&self, raw: &str, mode: ClassifyMode) -> Classification {
        classify(raw, self, mode)
    }
}

pub fn classify(raw: &str, lexicon: &Lexicon, mode: ClassifyMode) -> Classification {
    let text = normalize(raw);
    if lexicon.affirm.contains(&text) {
        return Classification::new(Category::Affirm, Some(text), false);
    }
    if lexicon.negate.contains(&text) {
        return Classification::new(Category::Negate, Some(text), false);
    }
    if lexicon.neutral.contains(&text) {
        return Classification::new(Category::Neutral, Some(text), false);
    }
    for (form, category) in &lexicon.leading {
        if text.len() > form.len()
            && text.starts_with(form.as_str())
            && text.as_bytes()[form.len()] == b' '
        {
            let category = match mode {
                ClassifyMode::Lenient => *category,
                ClassifyMode::Strict => Category::Explainer,
            };
            return Classification::new(category, Some(form.clone()), true);
        }
    }
    Classification::new(Category::Explainer, None, !text.is_empty())
}

/// Unexpected-output counts over one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnexpectedTally {
    pub explainer: usize,
    pub neutral: usize,
    pub total: usize,
}

impl UnexpectedTally {
    pub fn add(&mut self, c: &Classification) {
        self.total += 1;
        match c.category {
            Category::Explainer => self.explainer += 1,
            Category::Neutral => self.neutral += 1,
            _ => {}
        }
    }
}

pub fn tally_unexpected<'a>(classifications: impl IntoIterator<Item = &'a Classification>) -> UnexpectedTally {
    let mut t = UnexpectedTally::default();
    for c in classifications {
        t.add(c);
    }
    t
}
