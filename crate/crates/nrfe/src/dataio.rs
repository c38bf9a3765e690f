//! Corpus loading, label mapping, deterministic splits, and the reasoning
//! store (JSONL persistence for generated reasoning).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Real,
    Fake,
}

impl BinaryLabel {
    /// Index used for logits/confusion rows: Real = 0, Fake = 1.
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::Real => 0,
            BinaryLabel::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            BinaryLabel::Real
        } else {
            BinaryLabel::Fake
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Real => "real",
            BinaryLabel::Fake => "fake",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Politifact,
    Twitter15,
    Twitter16,
    Synthetic,
}

impl Dataset {
    pub fn default_scheme(self) -> LabelScheme {
        match self {
            Dataset::Politifact => LabelScheme::PolitifactBinary,
            Dataset::Twitter15 | Dataset::Twitter16 => LabelScheme::PaperVerbatim,
            Dataset::Synthetic => LabelScheme::PolitifactBinary,
        }
    }
}

impl std::str::FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "politifact" => Ok(Dataset::Politifact),
            "twitter15" => Ok(Dataset::Twitter15),
            "twitter16" => Ok(Dataset::Twitter16),
            "synthetic" => Ok(Dataset::Synthetic),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// How raw dataset label strings collapse to binary labels.
///
/// `PaperVerbatim` groups non-rumors and false-rumors as real news;
/// `Corrected` instead groups non-rumors with true-rumors. Both are
/// registered because the verbatim grouping reads like a typo, but the
/// default must stay faithful to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    PaperVerbatim,
    Corrected,
    PolitifactBinary,
}

impl std::str::FromStr for LabelScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_verbatim" => Ok(LabelScheme::PaperVerbatim),
            "corrected" => Ok(LabelScheme::Corrected),
            "politifact_binary" => Ok(LabelScheme::PolitifactBinary),
            other => Err(Error::Config(format!("unknown label scheme {other:?}"))),
        }
    }
}

impl LabelScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelScheme::PaperVerbatim => "paper_verbatim",
            LabelScheme::Corrected => "corrected",
            LabelScheme::PolitifactBinary => "politifact_binary",
        }
    }
}

pub fn map_label(raw: &str, scheme: LabelScheme) -> Result<BinaryLabel> {
    let label = match scheme {
        LabelScheme::PaperVerbatim => match raw {
            "non-rumors" | "false-rumors" => Some(BinaryLabel::Real),
            "true-rumors" | "unverified-rumors" => Some(BinaryLabel::Fake),
            _ => None,
        },
        LabelScheme::Corrected => match raw {
            "non-rumors" | "true-rumors" => Some(BinaryLabel::Real),
            "false-rumors" | "unverified-rumors" => Some(BinaryLabel::Fake),
            _ => None,
        },
        LabelScheme::PolitifactBinary => match raw {
            "real" => Some(BinaryLabel::Real),
            "fake" => Some(BinaryLabel::Fake),
            _ => None,
        },
    };
    label.ok_or_else(|| Error::UnknownLabel {
        raw: raw.to_string(),
        scheme: scheme.as_str().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub text: String,
    pub raw_label: String,
    pub label: BinaryLabel,
    pub dataset: Dataset,
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    text: String,
    label: String,
}

#[derive(Serialize)]
struct CorpusLineOut<'a> {
    id: &'a str,
    text: &'a str,
    label: &'a str,
}

pub fn load_corpus(path: &Path, dataset: Dataset, scheme: LabelScheme) -> Result<Vec<NewsItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: e.to_string(),
            })?;
        if rec.text.trim().is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: "empty text".to_string(),
            });
        }
        let label = map_label(&rec.label, scheme)?;
        items.push(NewsItem {
            id: rec.id,
            text: rec.text,
            raw_label: rec.label,
            label,
            dataset,
        });
    }
    Ok(items)
}

pub fn write_corpus(path: &Path, items: &[NewsItem]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&CorpusLineOut {
            id: &item.id,
            text: &item.text,
            label: &item.raw_label,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Deterministic stratified split. The train side takes
/// `round(train_fraction * n_c)` of each class `c`, shuffled under `seed`.
pub fn split_corpus(
    items: &[NewsItem],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<NewsItem>, Vec<NewsItem>)> {
    if items.is_empty() {
        return Err(Error::EmptyInput("split_corpus".to_string()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::BadFraction(train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [BinaryLabel::Real, BinaryLabel::Fake] {
        let mut class_items: Vec<&NewsItem> =
            items.iter().filter(|i| i.label == class).collect();
        class_items.shuffle(&mut rng);
        let n_train = (train_fraction * class_items.len() as f64).round() as usize;
        for (i, item) in class_items.into_iter().enumerate() {
            if i < n_train {
                train.push(item.clone());
            } else {
                test.push(item.clone());
            }
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningKind {
    Positive,
    Negative,
}

impl ReasoningKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningKind::Positive => "positive",
            ReasoningKind::Negative => "negative",
        }
    }
}

/// One persisted reasoning record: the final (R, V) with its rectification
/// trace. `score` must equal the last element of `score_trace`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStoreEntry {
    pub news_id: String,
    pub kind: ReasoningKind,
    #[serde(rename = "reasoning")]
    pub reasoning_text: String,
    pub score: u8,
    pub qualified: bool,
    #[serde(rename = "iterations")]
    pub iterations_used: u32,
    pub score_trace: Vec<u8>,
}

pub fn write_store(path: &Path, entries: &[ReasoningStoreEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert((e.news_id.clone(), e.kind)) {
            return Err(Error::DuplicateEntry {
                news_id: e.news_id.clone(),
                kind: e.kind.as_str().to_string(),
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e)?;
        writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
    }
    Ok(())
}

pub fn append_store(path: &Path, entry: &ReasoningStoreEntry) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let line = serde_json::to_string(entry)?;
    writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<Vec<ReasoningStoreEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ReasoningStoreEntry =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        if entry.score_trace.last() != Some(&entry.score) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "score does not match last trace element".to_string(),
            });
        }
        if !seen.insert((entry.news_id.clone(), entry.kind)) {
            return Err(Error::DuplicateEntry {
                news_id: entry.news_id,
                kind: entry.kind.as_str().to_string(),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, label: BinaryLabel) -> NewsItem {
        NewsItem {
            id: id.to_string(),
            text: format!("news {id}"),
            raw_label: label.as_str().to_string(),
            label,
            dataset: Dataset::Synthetic,
        }
    }

    #[test]
    fn map_label_paper_verbatim() {
        assert_eq!(
            map_label("false-rumors", LabelScheme::PaperVerbatim).unwrap(),
            BinaryLabel::Real
        );
        assert_eq!(
            map_label("non-rumors", LabelScheme::PaperVerbatim).unwrap(),
            BinaryLabel::Real
        );
        assert_eq!(
            map_label("true-rumors", LabelScheme::PaperVerbatim).unwrap(),
            BinaryLabel::Fake
        );
        assert_eq!(
            map_label("unverified-rumors", LabelScheme::PaperVerbatim).unwrap(),
            BinaryLabel::Fake
        );
    }

    #[test]
    fn map_label_corrected_and_politifact() {
        assert_eq!(
            map_label("false-rumors", LabelScheme::Corrected).unwrap(),
            BinaryLabel::Fake
        );
        assert_eq!(
            map_label("real", LabelScheme::PolitifactBinary).unwrap(),
            BinaryLabel::Real
        );
        assert!(map_label("bogus", LabelScheme::Corrected).is_err());
    }

    #[test]
    fn schemes_agree_except_on_rumor_veracity() {
        for raw in ["non-rumors", "unverified-rumors"] {
            assert_eq!(
                map_label(raw, LabelScheme::PaperVerbatim).unwrap(),
                map_label(raw, LabelScheme::Corrected).unwrap()
            );
        }
        for raw in ["true-rumors", "false-rumors"] {
            assert_ne!(
                map_label(raw, LabelScheme::PaperVerbatim).unwrap(),
                map_label(raw, LabelScheme::Corrected).unwrap()
            );
        }
    }

    #[test]
    fn load_corpus_twitter15_example() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","text":"t1","label":"non-rumors"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","text":"t2","label":"true-rumors"}}"#).unwrap();
        writeln!(f, r#"{{"id":"c","text":"t3","label":"false-rumors"}}"#).unwrap();
        let items =
            load_corpus(&path, Dataset::Twitter15, LabelScheme::PaperVerbatim).unwrap();
        assert_eq!(items.len(), 3);
        let labels: Vec<BinaryLabel> = items.iter().map(|i| i.label).collect();
        assert_eq!(
            labels,
            vec![BinaryLabel::Real, BinaryLabel::Fake, BinaryLabel::Real]
        );
    }

    #[test]
    fn load_corpus_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        File::create(&path).unwrap();
        let items =
            load_corpus(&path, Dataset::Synthetic, LabelScheme::PolitifactBinary).unwrap();
        assert!(items.is_empty());
    }

    #[test]
    fn load_corpus_reports_bad_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","text":"t1","label":"real"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","label":"fake"}}"#).unwrap();
        let err = load_corpus(&path, Dataset::Politifact, LabelScheme::PolitifactBinary)
            .unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let items: Vec<NewsItem> = (0..10)
            .map(|i| {
                item(
                    &format!("n{i}"),
                    if i % 2 == 0 {
                        BinaryLabel::Real
                    } else {
                        BinaryLabel::Fake
                    },
                )
            })
            .collect();
        let (tr1, te1) = split_corpus(&items, 0.8, 7).unwrap();
        let (tr2, te2) = split_corpus(&items, 0.8, 7).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len(), 8);
        assert_eq!(te1.len(), 2);
        let mut all: Vec<&str> = tr1.iter().chain(&te1).map(|i| i.id.as_str()).collect();
        all.sort();
        let mut orig: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_is_stratified() {
        let items: Vec<NewsItem> = (0..10)
            .map(|i| {
                item(
                    &format!("n{i}"),
                    if i < 5 { BinaryLabel::Real } else { BinaryLabel::Fake },
                )
            })
            .collect();
        let (train, _) = split_corpus(&items, 0.8, 3).unwrap();
        let real = train.iter().filter(|i| i.label == BinaryLabel::Real).count();
        let fake = train.iter().filter(|i| i.label == BinaryLabel::Fake).count();
        assert_eq!(real, 4);
        assert_eq!(fake, 4);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let items = vec![item("a", BinaryLabel::Real)];
        assert!(split_corpus(&items, 1.0, 0).is_err());
        assert!(split_corpus(&items, 0.0, 0).is_err());
    }

    fn entry(id: &str, kind: ReasoningKind) -> ReasoningStoreEntry {
        ReasoningStoreEntry {
            news_id: id.to_string(),
            kind,
            reasoning_text: "because".to_string(),
            score: 40,
            qualified: true,
            iterations_used: 1,
            score_trace: vec![60, 40],
        }
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let entries = vec![
            entry("a", ReasoningKind::Positive),
            entry("a", ReasoningKind::Negative),
        ];
        write_store(&path, &entries).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn store_empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        write_store(&path, &[]).unwrap();
        assert!(read_store(&path).unwrap().is_empty());
    }

    #[test]
    fn store_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let entries = vec![
            entry("a", ReasoningKind::Positive),
            entry("a", ReasoningKind::Positive),
        ];
        assert!(matches!(
            write_store(&path, &entries),
            Err(Error::DuplicateEntry { .. })
        ));
    }
}
