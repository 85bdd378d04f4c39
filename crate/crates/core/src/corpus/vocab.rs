use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabelHierarchy, Sample};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word (lowercased) and character (case kept) vocabularies. Ids 0 and 1 are
/// reserved for padding and unknown entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabEntries", into = "VocabEntries")]
pub struct Vocab {
    pub words: Vec<String>,
    pub chars: Vec<char>,
    word_ids: HashMap<String, usize>,
    char_ids: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabEntries {
    words: Vec<String>,
    chars: Vec<char>,
}

impl From<VocabEntries> for Vocab {
    fn from(v: VocabEntries) -> Self {
        Vocab::from_parts(v.words, v.chars)
    }
}

impl From<Vocab> for VocabEntries {
    fn from(v: Vocab) -> Self {
        VocabEntries {
            words: v.words,
            chars: v.chars,
        }
    }
}

impl Vocab {
    pub fn build(train: &[Sample]) -> Self {
        let words: BTreeSet<String> = train
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.to_lowercase()))
            .collect();
        let chars: BTreeSet<char> = train
            .iter()
            .flat_map(|s| s.tokens.iter().flat_map(|t| t.chars()))
            .collect();
        Self::from_parts(words.into_iter().collect(), chars.into_iter().collect())
    }

    /// `words` and `chars` exclude the two reserved entries.
    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 2)).collect();
        let char_ids = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Vocab {
            words,
            chars,
            word_ids,
            char_ids,
        }
    }

    pub fn word_count(&self) -> usize {
        self.words.len() + 2
    }

    pub fn char_count(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn word_id(&self, token: &str) -> usize {
        self.word_ids.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        token
            .chars()
            .map(|c| self.char_ids.get(&c).copied().unwrap_or(UNK))
            .collect()
    }
}

/// Everything derived from the training split that a model needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub vocab: Vocab,
    pub hierarchy: LabelHierarchy,
    /// Largest number of gold intents on one training utterance.
    pub max_intents: usize,
}

impl Schema {
    pub fn from_train(train: &[Sample], levels: usize) -> Result<Self> {
        let max_intents = train.iter().map(|s| s.intents.len()).max().unwrap_or(0);
        if max_intents == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        Ok(Schema {
            vocab: Vocab::build(train),
            hierarchy: LabelHierarchy::build(train, levels)?,
            max_intents,
        })
    }

    /// Human-readable dump: one entry per line as `<kind>\t<value>`, with
    /// slot labels tagged by level and second-level labels naming their
    /// parent.
    pub fn to_sidecar(&self) -> String {
        let h = &self.hierarchy;
        let mut out = String::new();
        let _ = writeln!(out, "levels\t{}", h.levels());
        let _ = writeln!(out, "max_intents\t{}", self.max_intents);
        for l in &h.intent_labels {
            let _ = writeln!(out, "intent\t{l}");
        }
        for (k, level) in h.slot_levels.iter().enumerate() {
            for (j, l) in level.iter().enumerate() {
                if k == 0 {
                    let _ = writeln!(out, "slot{}\t{l}", k + 1);
                } else {
                    let parent = &h.slot_levels[k - 1][h.parents[k - 1][j]];
                    let _ = writeln!(out, "slot{}\t{l}\tparent={parent}", k + 1);
                }
            }
        }
        for t in &h.tags {
            let _ = writeln!(out, "tag\t{t}");
        }
        for w in &self.vocab.words {
            let _ = writeln!(out, "word\t{w}");
        }
        for c in &self.vocab.chars {
            let _ = writeln!(out, "char\t{}", *c as u32);
        }
        out
    }

    pub fn from_sidecar(text: &str, source: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut levels = None;
        let mut max_intents = None;
        let mut intents = Vec::new();
        let mut by_level: Vec<Vec<String>> = Vec::new();
        let mut words = Vec::new();
        let mut chars = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let kind = fields.next().unwrap_or_default();
            let value = fields
                .next()
                .ok_or_else(|| err(i + 1, "missing value".into()))?;
            let bad_num = |_| err(i + 1, format!("bad number `{value}`"));
            match kind {
                "levels" => levels = Some(value.parse::<usize>().map_err(bad_num)?),
                "max_intents" => max_intents = Some(value.parse::<usize>().map_err(bad_num)?),
                "intent" => intents.push(value.to_string()),
                "tag" => {}
                k if k.starts_with("slot") => {
                    let level: usize = k["slot".len()..]
                        .parse()
                        .map_err(|_| err(i + 1, format!("bad slot level `{k}`")))?;
                    if level == 0 {
                        return Err(err(i + 1, "slot levels start at 1".into()));
                    }
                    if by_level.len() < level {
                        by_level.resize(level, Vec::new());
                    }
                    by_level[level - 1].push(value.to_string());
                }
                "word" => words.push(value.to_string()),
                "char" => {
                    let code = value.parse::<u32>().map_err(bad_num)?;
                    chars.push(
                        char::from_u32(code).ok_or_else(|| err(i + 1, format!("bad char code {code}")))?,
                    );
                }
                other => return Err(err(i + 1, format!("unknown entry kind `{other}`"))),
            }
        }
        let levels = levels.ok_or_else(|| err(0, "missing `levels` entry".into()))?;
        let fine = levels
            .checked_sub(1)
            .and_then(|l| by_level.get(l).cloned())
            .unwrap_or_default();
        Ok(Schema {
            vocab: Vocab::from_parts(words, chars),
            hierarchy: LabelHierarchy::from_labels(
                intents.iter().map(String::as_str),
                fine.iter().map(String::as_str),
                levels,
            )?,
            max_intents: max_intents.ok_or_else(|| err(0, "missing `max_intents` entry".into()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(tokens: &[&str], tags: &[&str], intents: &[&str]) -> Sample {
        Sample::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
            intents.iter().map(|s| s.to_string()),
        )
    }

    fn train() -> Vec<Sample> {
        vec![
            sample(&["Fly", "to", "Boston"], &["O", "O", "B-toloc.city_name"], &["atis_flight"]),
            sample(
                &["fare", "from", "Denver"],
                &["O", "O", "B-fromloc.city_name"],
                &["atis_airfare", "atis_flight"],
            ),
        ]
    }

    #[test]
    fn vocab_lowercases_words_but_not_chars() {
        let v = Vocab::build(&train());
        assert_eq!(v.word_id("BOSTON"), v.word_id("boston"));
        assert_ne!(v.word_id("boston"), UNK);
        assert_eq!(v.word_id("seattle"), UNK);
        assert!(v.chars.contains(&'B'));
        assert_eq!(v.char_ids("Q")[0], UNK);
        for s in train() {
            for t in &s.tokens {
                assert_ne!(v.word_id(t), UNK);
            }
        }
    }

    #[test]
    fn schema_tracks_max_intents() {
        let s = Schema::from_train(&train(), 2).unwrap();
        assert_eq!(s.max_intents, 2);
        assert_eq!(s.hierarchy.slot_levels[0], vec!["fromloc", "toloc"]);
    }

    #[test]
    fn sidecar_round_trips() {
        for levels in [1, 2] {
            let s = Schema::from_train(&train(), levels).unwrap();
            let text = s.to_sidecar();
            assert!(text.contains("intent\tatis_airfare"));
            let back = Schema::from_sidecar(&text, Path::new("mem")).unwrap();
            assert_eq!(back, s);
        }
    }
}
