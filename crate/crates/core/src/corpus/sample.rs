use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One annotated utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<String>,
    pub slot_tags: Vec<String>,
    pub intents: BTreeSet<String>,
}

/// A BIO tag split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Bio<'a> {
    pub fn parse(tag: &'a str) -> Result<Self> {
        if tag == "O" {
            return Ok(Bio::Outside);
        }
        match tag.split_once('-') {
            Some(("B", label)) if !label.is_empty() => Ok(Bio::Begin(label)),
            Some(("I", label)) if !label.is_empty() => Ok(Bio::Inside(label)),
            _ => Err(Error::InvalidTag(tag.to_string())),
        }
    }

    pub fn label(self) -> Option<&'a str> {
        match self {
            Bio::Outside => None,
            Bio::Begin(l) | Bio::Inside(l) => Some(l),
        }
    }
}

impl Sample {
    pub fn new(tokens: Vec<String>, slot_tags: Vec<String>, intents: impl IntoIterator<Item = String>) -> Self {
        Sample {
            tokens,
            slot_tags,
            intents: intents.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Intent labels joined with `#` in sorted order.
    pub fn intent_line(&self) -> String {
        self.intents.iter().cloned().collect::<Vec<_>>().join("#")
    }

    /// Renders the sample as one corpus block (without the separating blank
    /// line).
    pub fn to_block(&self) -> String {
        let mut out = String::new();
        for (tok, tag) in self.tokens.iter().zip(&self.slot_tags) {
            let _ = writeln!(out, "{tok} {tag}");
        }
        let _ = writeln!(out, "{}", self.intent_line());
        out
    }

    /// Fine-grained slot labels mentioned by the tags.
    pub fn slot_labels(&self) -> impl Iterator<Item = &str> {
        self.slot_tags
            .iter()
            .filter_map(|t| Bio::parse(t).ok().and_then(Bio::label))
    }
}

/// Rewrites every `I-x` that does not continue an open `x` span into `B-x`.
/// Returns how many tags changed.
pub fn repair_bio(tags: &mut [String]) -> usize {
    let mut repaired = 0;
    let mut open: Option<String> = None;
    for tag in tags.iter_mut() {
        let parsed = match Bio::parse(tag) {
            Ok(b) => b,
            Err(_) => {
                open = None;
                continue;
            }
        };
        match parsed {
            Bio::Outside => open = None,
            Bio::Begin(l) => open = Some(l.to_string()),
            Bio::Inside(l) => {
                if open.as_deref() != Some(l) {
                    let label = l.to_string();
                    *tag = format!("B-{label}");
                    open = Some(label);
                    repaired += 1;
                }
            }
        }
    }
    repaired
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub samples: Vec<Sample>,
    /// Number of `I-` tags rewritten to `B-` during loading.
    pub repaired_tags: usize,
}

/// Parses corpus text: blank-line separated blocks, one `token tag` line per
/// token (space or tab separated), then one line of `#`-joined intents.
pub fn parse_corpus_str(text: &str, source: &Path) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };

    let flush = |block: &mut Vec<(usize, &str)>, out: &mut ParsedCorpus| -> Result<()> {
        if block.is_empty() {
            return Ok(());
        }
        let (intent_line_no, intent_line) = *block.last().expect("non-empty");
        let intent_fields: Vec<&str> = intent_line.split_whitespace().collect();
        if intent_fields.len() != 1 {
            return Err(err(
                intent_line_no,
                "missing intent line (block must end with a single `#`-joined intent field)".into(),
            ));
        }
        if block.len() < 2 {
            return Err(err(intent_line_no, "block has an intent line but no tokens".into()));
        }
        let mut tokens = Vec::with_capacity(block.len() - 1);
        let mut tags = Vec::with_capacity(block.len() - 1);
        for &(no, line) in &block[..block.len() - 1] {
            let fields: Vec<&str> = line.split([' ', '\t']).filter(|f| !f.is_empty()).collect();
            if fields.len() != 2 {
                return Err(err(
                    no,
                    format!("expected `token tag`, found {} field(s)", fields.len()),
                ));
            }
            Bio::parse(fields[1]).map_err(|e| err(no, e.to_string()))?;
            tokens.push(fields[0].to_string());
            tags.push(fields[1].to_string());
        }
        let intents: BTreeSet<String> = intent_fields[0]
            .split('#')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if intents.is_empty() {
            return Err(err(intent_line_no, "empty intent line".into()));
        }
        out.repaired_tags += repair_bio(&mut tags);
        out.samples.push(Sample {
            tokens,
            slot_tags: tags,
            intents,
        });
        block.clear();
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut block, &mut out)?;
        } else {
            block.push((i + 1, line.trim()));
        }
    }
    flush(&mut block, &mut out)?;
    if out.repaired_tags > 0 {
        log::info!(
            "{}: repaired {} dangling I- tag(s)",
            source.display(),
            out.repaired_tags
        );
    }
    Ok(out)
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
    Ok(parse_corpus_str(&text, path)?.samples)
}

pub fn write_corpus(samples: &[Sample]) -> String {
    samples
        .iter()
        .map(Sample::to_block)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Standard split file names inside a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Dev => "dev.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn path_in(self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "val" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train|dev|test)"))),
        }
    }
}
