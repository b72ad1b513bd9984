//! Synthetic batteries with realistic topology and placeholder text.
//!
//! Every generated question carries `source = "synthetic"`. The full-size
//! battery reproduces the published numbering: ids 1..=539, 1..=175 delegable
//! tasks, 176..=539 debate topics, 103 split pairs that collapse to 436 slots.

use std::collections::{BTreeMap, BTreeSet};

use super::{Question, QuestionBank, SplitLink, SplitSide, GENRE_DEBATE, GENRE_DELEGABLE};

pub const FULL_TOTAL: u32 = 539;
pub const FULL_BASE: usize = 436;
pub const FULL_PAIRS: usize = 103;
const DELEGABLE_LAST_ID: u32 = 175;
const DELEGABLE_PAIRS: usize = 6;

/// Pair starts visible in the published result tables (a skipped id follows each).
const KNOWN_PAIR_STARTS: [u32; 9] = [195, 329, 403, 405, 432, 459, 461, 504, 506];
/// Ids that must stay single questions: table boundaries and topics reported on their own.
const KNOWN_SINGLES: &[u32] = &[
    1, 31, 32, 56, 57, 84, 85, 113, 114, 140, 141, 160, 161, 197, 240, 241, 282, 283, 361, 380,
    381, 475, 476, 487, 488, 539,
];

pub const DEFAULT_LANGUAGES: [&str; 4] = ["ja", "en", "es", "fr"];

fn single_text(id: u32, lang: &str) -> String {
    match lang {
        "ja" => format!("合成質問{id}：選択肢{id}を優先すべきですか？"),
        "es" => format!("Pregunta sintética {id}: ¿se debe preferir la opción {id}?"),
        "fr" => format!("Question synthétique {id} : faut-il préférer l'option {id} ?"),
        "en" => format!("Synthetic question {id}: should option {id} be preferred?"),
        other => format!("[{other}] synthetic question {id}"),
    }
}

fn pair_text(pair: u32, side: SplitSide, lang: &str) -> String {
    let (x, y) = match side {
        SplitSide::A => ("A", "B"),
        SplitSide::B => ("B", "A"),
    };
    match lang {
        "ja" => format!("{x}{pair}は{y}{pair}より良いですか？"),
        "es" => format!("¿Es {x}{pair} mejor que {y}{pair}?"),
        "fr" => format!("{x}{pair} est-il meilleur que {y}{pair} ?"),
        "en" => format!("Is {x}{pair} better than {y}{pair}?"),
        other => format!("[{other}] is {x}{pair} better than {y}{pair}?"),
    }
}

fn build(
    name: &str,
    ids: impl IntoIterator<Item = u32>,
    pair_starts: &BTreeSet<u32>,
    genre_of: impl Fn(u32) -> &'static str,
    languages: &[&str],
) -> QuestionBank {
    let mut questions = Vec::new();
    for id in ids {
        let split = if pair_starts.contains(&id) {
            Some(SplitLink {
                pair: id,
                side: SplitSide::A,
            })
        } else if id > 0 && pair_starts.contains(&(id - 1)) {
            Some(SplitLink {
                pair: id - 1,
                side: SplitSide::B,
            })
        } else {
            None
        };
        let text: BTreeMap<String, String> = languages
            .iter()
            .map(|l| {
                let t = match split {
                    Some(link) => pair_text(link.pair, link.side, l),
                    None => single_text(id, l),
                };
                (l.to_string(), t)
            })
            .collect();
        questions.push(Question {
            id,
            genre: genre_of(id).to_string(),
            source: "synthetic".into(),
            split,
            text,
        });
    }
    QuestionBank::new(
        name,
        "synthetic-1",
        languages.iter().map(|s| s.to_string()).collect(),
        questions,
    )
    .expect("synthetic bank is valid by construction")
}

fn place_pairs(
    range: std::ops::RangeInclusive<u32>,
    want: usize,
    taken: &mut BTreeSet<u32>,
    starts: &mut BTreeSet<u32>,
) {
    let blocked: BTreeSet<u32> = KNOWN_SINGLES.iter().copied().collect();
    let mut placed = 0;
    let mut k = *range.start();
    while placed < want && k < *range.end() {
        let free = |i: u32| !taken.contains(&i) && !blocked.contains(&i);
        if free(k) && free(k + 1) {
            taken.insert(k);
            taken.insert(k + 1);
            starts.insert(k);
            placed += 1;
            k += 3;
        } else {
            k += 1;
        }
    }
    assert_eq!(placed, want, "not enough room for split pairs");
}

/// The 539-entry battery: 436 base questions of which 103 are split.
pub fn full_size(languages: &[&str]) -> QuestionBank {
    let mut starts: BTreeSet<u32> = KNOWN_PAIR_STARTS.into_iter().collect();
    let mut taken: BTreeSet<u32> = starts.iter().flat_map(|&s| [s, s + 1]).collect();
    place_pairs(1..=DELEGABLE_LAST_ID, DELEGABLE_PAIRS, &mut taken, &mut starts);
    let debate_extra = FULL_PAIRS - DELEGABLE_PAIRS - KNOWN_PAIR_STARTS.len();
    place_pairs(DELEGABLE_LAST_ID + 1..=FULL_TOTAL, debate_extra, &mut taken, &mut starts);
    build(
        "full-size-synthetic",
        1..=FULL_TOTAL,
        &starts,
        |id| {
            if id <= DELEGABLE_LAST_ID {
                GENRE_DELEGABLE
            } else {
                GENRE_DEBATE
            }
        },
        languages,
    )
}

/// Small battery with `singles` plain questions followed by `pairs` split pairs.
pub fn small(singles: u32, pairs: u32, languages: &[&str]) -> QuestionBank {
    let total = singles + 2 * pairs;
    let starts: BTreeSet<u32> = (0..pairs).map(|p| singles + 1 + 2 * p).collect();
    build("small-synthetic", 1..=total, &starts, |_| GENRE_DEBATE, languages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::Slot;

    #[test]
    fn full_size_counts() {
        let bank = full_size(&DEFAULT_LANGUAGES);
        assert_eq!(bank.len(), 539);
        assert_eq!(bank.split_pairs().len(), 103);
        assert_eq!(bank.merged_numbering().len(), 436);
        let delegable_base = bank
            .merged_numbering()
            .iter()
            .filter(|s| s.id() <= DELEGABLE_LAST_ID)
            .count();
        assert_eq!(delegable_base, 169);
        assert_eq!(436 - delegable_base, 267);
        assert!(bank.warnings().is_empty());
    }

    #[test]
    fn full_size_known_positions() {
        let bank = full_size(&DEFAULT_LANGUAGES);
        let slots = bank.merged_numbering();
        let ids: BTreeSet<u32> = slots.iter().map(Slot::id).collect();
        for skipped in [196, 330, 404, 406, 433, 460, 462, 505, 507] {
            assert!(!ids.contains(&skipped), "{skipped} should be skipped");
        }
        for present in [1, 197, 331, 361, 434, 459, 487, 488, 539] {
            assert!(ids.contains(&present), "{present} should be a slot");
        }
        assert!(bank.get(361).unwrap().split.is_none());
    }

    #[test]
    fn small_bank() {
        let bank = small(4, 2, &["en"]);
        assert_eq!(bank.len(), 8);
        assert_eq!(bank.merged_numbering().len(), 6);
    }
}
