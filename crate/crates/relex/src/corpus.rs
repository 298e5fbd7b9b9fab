//! Corpus handling: parsing entity-annotated sentences from JSONL, generating
//! labeled entity-pair instances, enforcing the classifier's class set, and
//! assigning stratified cross-validation folds.
//!
//! The wire format is one sentence per line:
//! `{"id", "tokens": [{"text","pos","chunk"}], "entities": [{"start","end","type"}],
//! "relations": [{"arg1","arg2","label"}]}`. Entity `type` is one of
//! `problem`/`treatment`/`test`; relation `label` is one of the eight
//! annotation labels. Parsing then re-serializing yields a canonical file
//! (fixed key order, one record per line).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of classifier classes: five relation types plus `NoRelation`.
pub const NUM_CLASSES: usize = 6;

/// One token with its part-of-speech and chunk tags. Tags are taken verbatim
/// from the input annotations; they are not validated against a closed list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub pos_tag: String,
    pub chunk_tag: String,
}

/// Clinical entity type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Problem,
    Treatment,
    Test,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Problem => "problem",
            EntityType::Treatment => "treatment",
            EntityType::Test => "test",
        }
    }

    fn from_wire(s: &str) -> Option<Self> {
        match s {
            "problem" => Some(EntityType::Problem),
            "treatment" => Some(EntityType::Treatment),
            "test" => Some(EntityType::Test),
            _ => None,
        }
    }
}

/// Inclusive token-index span of an entity mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
}

impl EntitySpan {
    /// Whether `token_idx` lies inside the span.
    pub fn contains(&self, token_idx: usize) -> bool {
        self.start <= token_idx && token_idx <= self.end
    }
}

/// Annotation-space relation label: the eight gold types of the source data.
/// Three of them (`TrWP`, `TrIP`, `TrNAP`) are removed from the task along
/// with their instances and never reach the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GoldLabel {
    TeCP,
    TrCP,
    PIP,
    TrAP,
    TeRP,
    TrWP,
    TrIP,
    TrNAP,
}

impl GoldLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GoldLabel::TeCP => "TeCP",
            GoldLabel::TrCP => "TrCP",
            GoldLabel::PIP => "PIP",
            GoldLabel::TrAP => "TrAP",
            GoldLabel::TeRP => "TeRP",
            GoldLabel::TrWP => "TrWP",
            GoldLabel::TrIP => "TrIP",
            GoldLabel::TrNAP => "TrNAP",
        }
    }

    fn from_wire(s: &str) -> Option<Self> {
        match s {
            "TeCP" => Some(GoldLabel::TeCP),
            "TrCP" => Some(GoldLabel::TrCP),
            "PIP" => Some(GoldLabel::PIP),
            "TrAP" => Some(GoldLabel::TrAP),
            "TeRP" => Some(GoldLabel::TeRP),
            "TrWP" => Some(GoldLabel::TrWP),
            "TrIP" => Some(GoldLabel::TrIP),
            "TrNAP" => Some(GoldLabel::TrNAP),
            _ => None,
        }
    }

    /// Classifier label for retained classes; `None` for the removed ones.
    pub fn relation_label(self) -> Option<RelationLabel> {
        match self {
            GoldLabel::TeCP => Some(RelationLabel::TeCP),
            GoldLabel::TrCP => Some(RelationLabel::TrCP),
            GoldLabel::PIP => Some(RelationLabel::PIP),
            GoldLabel::TrAP => Some(RelationLabel::TrAP),
            GoldLabel::TeRP => Some(RelationLabel::TeRP),
            GoldLabel::TrWP | GoldLabel::TrIP | GoldLabel::TrNAP => None,
        }
    }
}

/// Classifier-space label: the five retained relation types plus
/// `NoRelation` for unannotated entity pairs. Exactly six values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    TeCP,
    TrCP,
    PIP,
    TrAP,
    TeRP,
    NoRelation,
}

impl RelationLabel {
    /// All six classes in class-id order.
    pub const ALL: [RelationLabel; NUM_CLASSES] = [
        RelationLabel::TeCP,
        RelationLabel::TrCP,
        RelationLabel::PIP,
        RelationLabel::TrAP,
        RelationLabel::TeRP,
        RelationLabel::NoRelation,
    ];

    /// The five relation classes, excluding `NoRelation`.
    pub const RELATIONS: [RelationLabel; 5] = [
        RelationLabel::TeCP,
        RelationLabel::TrCP,
        RelationLabel::PIP,
        RelationLabel::TrAP,
        RelationLabel::TeRP,
    ];

    /// Dense class id in `[0, 6)`.
    pub fn class_id(self) -> usize {
        match self {
            RelationLabel::TeCP => 0,
            RelationLabel::TrCP => 1,
            RelationLabel::PIP => 2,
            RelationLabel::TrAP => 3,
            RelationLabel::TeRP => 4,
            RelationLabel::NoRelation => 5,
        }
    }

    pub fn from_class_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::TeCP => "TeCP",
            RelationLabel::TrCP => "TrCP",
            RelationLabel::PIP => "PIP",
            RelationLabel::TrAP => "TrAP",
            RelationLabel::TeRP => "TeRP",
            RelationLabel::NoRelation => "NoRelation",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A gold annotation: an entity-index pair with its annotation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldRelation {
    pub arg1: usize,
    pub arg2: usize,
    pub label: GoldLabel,
}

/// One annotated sentence. Entities are ordered by start index and do not
/// overlap; gold relations reference entity indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
    pub entities: Vec<EntitySpan>,
    pub relations: Vec<GoldRelation>,
}

/// A parsed corpus with unique sentence ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-constructed sentences, running the same
    /// validation as the parser (record numbers stand in for line numbers).
    pub fn from_sentences(sentences: Vec<Sentence>) -> Result<Self, ParseError> {
        let mut corpus = Corpus::default();
        for (i, sentence) in sentences.into_iter().enumerate() {
            corpus.push(sentence, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, sentence: Sentence, line: usize) -> Result<(), ParseError> {
        validate_sentence(&sentence, line)?;
        if self.index.contains_key(&sentence.id) {
            return Err(ParseError::DuplicateSentenceId {
                line,
                id: sentence.id,
            });
        }
        self.index.insert(sentence.id.clone(), self.sentences.len());
        self.sentences.push(sentence);
        Ok(())
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, id: &str) -> Option<&Sentence> {
        self.index.get(id).map(|&i| &self.sentences[i])
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// All classifier instances of the corpus: pair generation per sentence
    /// followed by class-set enforcement, in sentence order.
    pub fn instances(&self) -> Result<Vec<RelationInstance>, CorpusError> {
        let mut all = Vec::new();
        for sentence in &self.sentences {
            all.extend(generate_instances(sentence, &sentence.relations)?);
        }
        Ok(filter_classes(all))
    }
}

/// A labeled entity pair: the classifier's unit of work. Arguments are
/// entity indices with `arg1` starting before `arg2` in the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub sentence_id: String,
    pub arg1: usize,
    pub arg2: usize,
    pub label: RelationLabel,
}

impl RelationInstance {
    /// Stable instance identifier, unique within a corpus.
    pub fn id(&self) -> String {
        format!("{}:{}-{}", self.sentence_id, self.arg1, self.arg2)
    }
}

/// Stratified fold assignment over a set of instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    k: usize,
    assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn fold_of(&self, instance_id: &str) -> Option<usize> {
        self.assignments.get(instance_id).copied()
    }

    /// Index lists `(train, test)` for one fold, in instance-list order.
    pub fn split(&self, instances: &[RelationInstance], fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            match self.fold_of(&inst.id()) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {}
            }
        }
        (train, test)
    }
}

/// Errors rejecting a corpus file. Every variant names the offending line.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: token {index} has empty text")]
    EmptyTokenText { line: usize, index: usize },
    #[error("line {line}: unknown entity type {value:?}")]
    UnknownEntityType { line: usize, value: String },
    #[error("line {line}: entity span has end {end} < start {start}")]
    InvertedSpan { line: usize, start: usize, end: usize },
    #[error("line {line}: entity span {start}..={end} out of range for {len} tokens")]
    SpanOutOfRange {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: entities not ordered by start index")]
    UnorderedEntities { line: usize },
    #[error("line {line}: overlapping entity spans")]
    OverlappingEntities { line: usize },
    #[error("line {line}: duplicate sentence id {id:?}")]
    DuplicateSentenceId { line: usize, id: String },
    #[error("line {line}: unknown relation label {value:?}")]
    UnknownLabel { line: usize, value: String },
    #[error("line {line}: relation references entity index {index}, sentence has {len} entities")]
    RelationArgOutOfRange { line: usize, index: usize, len: usize },
    #[error("line {line}: relation arguments both reference entity {index}")]
    SelfRelation { line: usize, index: usize },
    #[error("line {line}: duplicate relation annotation for entity pair ({a}, {b})")]
    DuplicateRelation { line: usize, a: usize, b: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from instance generation and fold assignment.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("sentence {id:?}: gold pair references entity index {index}, sentence has {len}")]
    MissingEntityIndex {
        id: String,
        index: usize,
        len: usize,
    },
    #[error("sentence {id:?}: duplicate gold annotation for entity pair ({a}, {b})")]
    DuplicateGoldPair {
        id: String,
        a: usize,
        b: usize,
    },
    #[error("fold count {k} must be at least 2")]
    FoldCountTooSmall { k: usize },
    #[error("fold count {k} exceeds instance count {n}")]
    FoldCountExceedsInstances { k: usize, n: usize },
}

// Wire-format records. Field order here defines the canonical key order of
// re-serialized files.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceRecord {
    id: String,
    tokens: Vec<TokenRecord>,
    entities: Vec<EntityRecord>,
    #[serde(default)]
    relations: Vec<RelationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    text: String,
    pos: String,
    chunk: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    etype: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationRecord {
    arg1: usize,
    arg2: usize,
    label: String,
}

fn sentence_from_record(record: SentenceRecord, line: usize) -> Result<Sentence, ParseError> {
    let tokens = record
        .tokens
        .into_iter()
        .map(|t| Token {
            text: t.text,
            pos_tag: t.pos,
            chunk_tag: t.chunk,
        })
        .collect();
    let mut entities = Vec::with_capacity(record.entities.len());
    for e in record.entities {
        let etype = EntityType::from_wire(&e.etype).ok_or_else(|| ParseError::UnknownEntityType {
            line,
            value: e.etype.clone(),
        })?;
        entities.push(EntitySpan {
            start: e.start,
            end: e.end,
            etype,
        });
    }
    let mut relations = Vec::with_capacity(record.relations.len());
    for r in record.relations {
        let label = GoldLabel::from_wire(&r.label).ok_or_else(|| ParseError::UnknownLabel {
            line,
            value: r.label.clone(),
        })?;
        relations.push(GoldRelation {
            arg1: r.arg1,
            arg2: r.arg2,
            label,
        });
    }
    Ok(Sentence {
        id: record.id,
        tokens,
        entities,
        relations,
    })
}

fn sentence_to_record(sentence: &Sentence) -> SentenceRecord {
    SentenceRecord {
        id: sentence.id.clone(),
        tokens: sentence
            .tokens
            .iter()
            .map(|t| TokenRecord {
                text: t.text.clone(),
                pos: t.pos_tag.clone(),
                chunk: t.chunk_tag.clone(),
            })
            .collect(),
        entities: sentence
            .entities
            .iter()
            .map(|e| EntityRecord {
                start: e.start,
                end: e.end,
                etype: e.etype.as_str().to_string(),
            })
            .collect(),
        relations: sentence
            .relations
            .iter()
            .map(|r| RelationRecord {
                arg1: r.arg1,
                arg2: r.arg2,
                label: r.label.as_str().to_string(),
            })
            .collect(),
    }
}

fn validate_sentence(sentence: &Sentence, line: usize) -> Result<(), ParseError> {
    for (index, token) in sentence.tokens.iter().enumerate() {
        if token.text.is_empty() {
            return Err(ParseError::EmptyTokenText { line, index });
        }
    }
    let len = sentence.tokens.len();
    for span in &sentence.entities {
        if span.end < span.start {
            return Err(ParseError::InvertedSpan {
                line,
                start: span.start,
                end: span.end,
            });
        }
        if span.end >= len {
            return Err(ParseError::SpanOutOfRange {
                line,
                start: span.start,
                end: span.end,
                len,
            });
        }
    }
    for pair in sentence.entities.windows(2) {
        if pair[1].start <= pair[0].start {
            return Err(ParseError::UnorderedEntities { line });
        }
        if pair[1].start <= pair[0].end {
            return Err(ParseError::OverlappingEntities { line });
        }
    }
    let n_entities = sentence.entities.len();
    let mut seen_pairs = BTreeSet::new();
    for r in &sentence.relations {
        for index in [r.arg1, r.arg2] {
            if index >= n_entities {
                return Err(ParseError::RelationArgOutOfRange {
                    line,
                    index,
                    len: n_entities,
                });
            }
        }
        if r.arg1 == r.arg2 {
            return Err(ParseError::SelfRelation { line, index: r.arg1 });
        }
        let key = (r.arg1.min(r.arg2), r.arg1.max(r.arg2));
        if !seen_pairs.insert(key) {
            return Err(ParseError::DuplicateRelation {
                line,
                a: key.0,
                b: key.1,
            });
        }
    }
    Ok(())
}

/// Parses a JSONL corpus stream, rejecting the whole file on the first
/// malformed record.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus, ParseError> {
    let mut corpus = Corpus::default();
    for (i, maybe_line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = maybe_line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord =
            serde_json::from_str(&text).map_err(|e| ParseError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        let sentence = sentence_from_record(record, line_no)?;
        corpus.push(sentence, line_no)?;
    }
    Ok(corpus)
}

/// Parses a corpus file from disk.
pub fn parse_corpus_file<P: AsRef<Path>>(path: P) -> Result<Corpus, ParseError> {
    parse_corpus(BufReader::new(File::open(path)?))
}

/// Writes the canonical JSONL form: fixed key order, one record per line,
/// LF endings. Re-serializing a parsed canonical file is byte-identical.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> std::io::Result<()> {
    for sentence in corpus.sentences() {
        let json = serde_json::to_string(&sentence_to_record(sentence))
            .expect("corpus records serialize infallibly");
        writer.write_all(json.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Generates one instance per unordered entity pair of the sentence.
/// Arguments take sentence order. Pairs annotated with a removed class
/// (`TrWP`, `TrIP`, `TrNAP`) are dropped entirely, not relabeled; pairs with
/// no gold annotation become `NoRelation`.
pub fn generate_instances(
    sentence: &Sentence,
    gold: &[GoldRelation],
) -> Result<Vec<RelationInstance>, CorpusError> {
    let n = sentence.entities.len();
    let mut gold_by_pair: BTreeMap<(usize, usize), GoldLabel> = BTreeMap::new();
    for g in gold {
        for index in [g.arg1, g.arg2] {
            if index >= n {
                return Err(CorpusError::MissingEntityIndex {
                    id: sentence.id.clone(),
                    index,
                    len: n,
                });
            }
        }
        let key = (g.arg1.min(g.arg2), g.arg1.max(g.arg2));
        if gold_by_pair.insert(key, g.label).is_some() {
            return Err(CorpusError::DuplicateGoldPair {
                id: sentence.id.clone(),
                a: key.0,
                b: key.1,
            });
        }
    }

    let mut instances = Vec::new();
    for arg1 in 0..n {
        for arg2 in (arg1 + 1)..n {
            let label = match gold_by_pair.get(&(arg1, arg2)) {
                Some(gold_label) => match gold_label.relation_label() {
                    Some(label) => label,
                    // Removed-class pair: drop it.
                    None => continue,
                },
                None => RelationLabel::NoRelation,
            };
            instances.push(RelationInstance {
                sentence_id: sentence.id.clone(),
                arg1,
                arg2,
                label,
            });
        }
    }
    Ok(instances)
}

/// Retains only instances labeled with the closed six-value class set.
/// The removed annotation classes are already dropped during pair generation
/// (where annotation labels are still visible), so on well-formed input this
/// is the identity; it stays in the pipeline as the enforcement point and is
/// idempotent by construction.
pub fn filter_classes(instances: Vec<RelationInstance>) -> Vec<RelationInstance> {
    instances
        .into_iter()
        .filter(|inst| RelationLabel::ALL.contains(&inst.label))
        .collect()
}

/// Assigns instances to `k` folds, stratified by label, deterministic for a
/// fixed seed. Within each class stratum fold sizes differ by at most one.
pub fn split_folds(
    instances: &[RelationInstance],
    k: usize,
    seed: u64,
) -> Result<FoldSplit, CorpusError> {
    if k < 2 {
        return Err(CorpusError::FoldCountTooSmall { k });
    }
    if k > instances.len() {
        return Err(CorpusError::FoldCountExceedsInstances {
            k,
            n: instances.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    for label in RelationLabel::ALL {
        let mut stratum: Vec<&RelationInstance> =
            instances.iter().filter(|inst| inst.label == label).collect();
        stratum.shuffle(&mut rng);
        for (i, inst) in stratum.iter().enumerate() {
            assignments.insert(inst.id(), i % k);
        }
    }
    Ok(FoldSplit { k, assignments })
}
