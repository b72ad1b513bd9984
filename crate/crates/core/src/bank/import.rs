use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use super::{BankError, Question, QuestionBank, SplitLink, SplitSide};

#[derive(Debug, Deserialize)]
struct Row {
    id: u32,
    genre: String,
    #[serde(default)]
    source: String,
    #[serde(default)]
    split_pair: Option<u32>,
    #[serde(default)]
    split_side: Option<String>,
    language: String,
    text: String,
}

/// Assembles a bank from one CSV row per (question, language).
///
/// Expected header: `id,genre,source,split_pair,split_side,language,text`.
/// Languages are declared in order of first appearance.
pub fn from_csv<R: Read>(reader: R, name: &str, version: &str) -> Result<QuestionBank, BankError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<u32> = Vec::new();
    let mut questions: BTreeMap<u32, Question> = BTreeMap::new();
    let mut languages: Vec<String> = Vec::new();

    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| BankError::Parse(format!("csv row {}: {e}", line + 2)))?;
        let split = match (row.split_pair, row.split_side.as_deref().map(str::trim)) {
            (None, None | Some("")) => None,
            (Some(pair), Some("A" | "a")) => Some(SplitLink {
                pair,
                side: SplitSide::A,
            }),
            (Some(pair), Some("B" | "b")) => Some(SplitLink {
                pair,
                side: SplitSide::B,
            }),
            _ => {
                return Err(BankError::Parse(format!(
                    "csv row {}: split_pair and split_side (A|B) must be given together",
                    line + 2
                )))
            }
        };
        if !languages.contains(&row.language) {
            languages.push(row.language.clone());
        }
        match questions.get_mut(&row.id) {
            Some(q) => {
                if q.genre != row.genre || q.split != split || q.source != row.source {
                    return Err(BankError::Parse(format!(
                        "csv row {}: question {} disagrees with its earlier rows on genre, source or split",
                        line + 2,
                        row.id
                    )));
                }
                if q.text.insert(row.language.clone(), row.text).is_some() {
                    return Err(BankError::Parse(format!(
                        "csv row {}: question {} has two rows for language {:?}",
                        line + 2,
                        row.id,
                        row.language
                    )));
                }
            }
            None => {
                order.push(row.id);
                questions.insert(
                    row.id,
                    Question {
                        id: row.id,
                        genre: row.genre,
                        source: row.source,
                        split,
                        text: BTreeMap::from([(row.language, row.text)]),
                    },
                );
            }
        }
    }

    let ordered = order
        .into_iter()
        .map(|id| questions.remove(&id).expect("collected id"))
        .collect();
    QuestionBank::new(name, version, languages, ordered)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "\
id,genre,source,split_pair,split_side,language,text
1,debate,src,,,en,Is coffee better than tea?
1,debate,src,,,fr,Le café est-il meilleur que le thé ?
2,debate,src,7,A,en,Is A better than B?
2,debate,src,7,A,fr,A est-il meilleur que B ?
3,debate,src,7,B,en,Is B better than A?
3,debate,src,7,B,fr,B est-il meilleur que A ?
";

    #[test]
    fn csv_assembles_same_structure() {
        let bank = from_csv(CSV.as_bytes(), "csvbank", "2").unwrap();
        assert_eq!(bank.languages(), &["en".to_string(), "fr".to_string()]);
        assert_eq!(bank.len(), 3);
        assert_eq!(bank.split_pairs().len(), 1);
        assert_eq!(bank.get(1).unwrap().text_for("fr"), Some("Le café est-il meilleur que le thé ?"));
        let again = QuestionBank::from_json(&bank.to_json()).unwrap();
        assert_eq!(again.to_json(), bank.to_json());
    }

    #[test]
    fn csv_missing_language_row_fails_validation() {
        let csv = "id,genre,source,split_pair,split_side,language,text\n1,debate,s,,,en,x\n2,debate,s,,,fr,y\n";
        let err = from_csv(csv.as_bytes(), "b", "1").unwrap_err();
        assert_eq!(err.violations().len(), 2);
    }

    #[test]
    fn csv_half_split_link_is_parse_error() {
        let csv = "id,genre,source,split_pair,split_side,language,text\n1,debate,s,4,,en,x\n";
        assert!(matches!(from_csv(csv.as_bytes(), "b", "1"), Err(BankError::Parse(_))));
    }
}
