//! Domain types shared by every stage: myths, stance labels, video records,
//! datasets and the recommendation graph, plus JSON-lines ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors raised while loading or validating domain data.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate video_id {0:?}")]
    DuplicateId(String),
    #[error("missing field {name:?} at line {line}")]
    MissingField { name: String, line: usize },
    #[error("invalid value at line {line}: {message}")]
    InvalidValue { line: usize, message: String },
}

/// Identifier of one myth, `M1` through `M8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MythId(u8);

impl MythId {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 8;

    pub fn new(index: u8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&index).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// All eight myth ids in order.
    pub fn all() -> Vec<MythId> {
        (Self::MIN..=Self::MAX).map(MythId).collect()
    }
}

impl fmt::Display for MythId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("M{}", self.0))
    }
}

impl FromStr for MythId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('M').or_else(|| s.strip_prefix('m')).unwrap_or(s);
        digits
            .parse::<u8>()
            .ok()
            .and_then(MythId::new)
            .ok_or_else(|| format!("invalid myth id {s:?} (expected M1..M8)"))
    }
}

impl Serialize for MythId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MythId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Index(u8),
            Name(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Index(i) => MythId::new(i)
                .ok_or_else(|| serde::de::Error::custom(format!("myth index {i} out of range"))),
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A myth together with the statement handed to the oracle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Myth {
    pub id: MythId,
    pub definition: String,
}

impl Myth {
    pub fn new(id: MythId, definition: impl Into<String>) -> Self {
        Self { id, definition: definition.into() }
    }
}

/// Default myth statements, indexed M1..M8.
pub const DEFAULT_MYTH_DEFINITIONS: [&str; 8] = [
    "MAT is merely replacing one drug with another.",
    "OUD is a self-imposed condition, not a treatable disease.",
    "The ultimate treatment goal for OUD is abstinence from any opioid use.",
    "Only patients with certain characteristics are vulnerable to addiction.",
    "Physical dependence or tolerance is the same as addiction.",
    "Detoxification for OUD is effective.",
    "You should only take medication for a brief period of time.",
    "Kratom is a non-addictive, safe alternative to opioids.",
];

/// The default eight-myth catalog.
pub fn default_myths() -> Vec<Myth> {
    MythId::all()
        .into_iter()
        .zip(DEFAULT_MYTH_DEFINITIONS)
        .map(|(id, text)| Myth::new(id, text))
        .collect()
}

/// Three-way stance of an item toward a myth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StanceLabel {
    Oppose,
    Neither,
    Support,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Oppose, StanceLabel::Neither, StanceLabel::Support];

    /// Position in probability vectors: Oppose=0, Neither=1, Support=2.
    pub fn index(self) -> usize {
        match self {
            StanceLabel::Oppose => 0,
            StanceLabel::Neither => 1,
            StanceLabel::Support => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Signed value on the -1/0/+1 scale.
    pub fn value(self) -> i8 {
        self.index() as i8 - 1
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            -1 => Some(StanceLabel::Oppose),
            0 => Some(StanceLabel::Neither),
            1 => Some(StanceLabel::Support),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StanceLabel::Oppose => "oppose",
            StanceLabel::Neither => "neither",
            StanceLabel::Support => "support",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl Serialize for StanceLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for StanceLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        StanceLabel::from_value(v)
            .ok_or_else(|| serde::de::Error::custom(format!("stance label {v} not in {{-1,0,1}}")))
    }
}

/// Six-way annotation label used by annotators before consolidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RawLabel {
    Oppose,
    Neutral,
    Support,
    Irrelevant,
    Inaccessible,
    NonEnglish,
}

impl RawLabel {
    pub const ALL: [RawLabel; 6] = [
        RawLabel::Oppose,
        RawLabel::Neutral,
        RawLabel::Support,
        RawLabel::Irrelevant,
        RawLabel::Inaccessible,
        RawLabel::NonEnglish,
    ];

    pub fn value(self) -> i8 {
        match self {
            RawLabel::Oppose => -1,
            RawLabel::Neutral => 0,
            RawLabel::Support => 1,
            RawLabel::Irrelevant => 2,
            RawLabel::Inaccessible => 3,
            RawLabel::NonEnglish => 4,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        Self::ALL.into_iter().find(|r| i64::from(r.value()) == v)
    }
}

impl From<StanceLabel> for RawLabel {
    fn from(label: StanceLabel) -> Self {
        match label {
            StanceLabel::Oppose => RawLabel::Oppose,
            StanceLabel::Neither => RawLabel::Neutral,
            StanceLabel::Support => RawLabel::Support,
        }
    }
}

impl Serialize for RawLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for RawLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        RawLabel::from_value(v)
            .ok_or_else(|| serde::de::Error::custom(format!("raw label {v} not in -1..=4")))
    }
}

/// Collapse the annotation scale onto the three stance classes.
///
/// Neutral, irrelevant, inaccessible and non-English all become `Neither`.
pub fn consolidate_raw_label(raw: RawLabel) -> StanceLabel {
    match raw {
        RawLabel::Oppose => StanceLabel::Oppose,
        RawLabel::Support => StanceLabel::Support,
        RawLabel::Neutral | RawLabel::Irrelevant | RawLabel::Inaccessible | RawLabel::NonEnglish => {
            StanceLabel::Neither
        }
    }
}

/// Text metadata of one video plus optional per-myth gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub transcript: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<BTreeMap<MythId, RawLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

impl VideoRecord {
    pub fn new(video_id: impl Into<String>, title: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            title: title.into(),
            description: description.into(),
            transcript: String::new(),
            tags: Vec::new(),
            gold: None,
            topic: None,
            filter: None,
            query: None,
        }
    }

    /// Consolidated gold stance for `myth`, if annotated.
    pub fn gold_stance(&self, myth: MythId) -> Option<StanceLabel> {
        self.gold.as_ref()?.get(&myth).copied().map(consolidate_raw_label)
    }
}

/// Join title, description, transcript and tags with single newlines and keep
/// the first `max_tokens` whitespace-delimited tokens.
pub fn truncate_text(record: &VideoRecord, max_tokens: usize) -> String {
    let max_tokens = max_tokens.max(1);
    let tags = record.tags.join(" ");
    let joined = [
        record.title.as_str(),
        record.description.as_str(),
        record.transcript.as_str(),
        tags.as_str(),
    ]
    .join("\n");
    joined.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

/// An ordered, duplicate-free collection of records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub provenance: String,
    pub records: Vec<VideoRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<VideoRecord>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(DatasetError::DuplicateId(r.video_id.clone()));
            }
        }
        Ok(Self { name: name.into(), provenance: String::new(), records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Map from video id to record, for keyed lookups.
    pub fn index(&self) -> BTreeMap<&str, &VideoRecord> {
        self.records.iter().map(|r| (r.video_id.as_str(), r)).collect()
    }

    /// Consolidated gold labels keyed by (video_id, myth).
    pub fn gold_index(&self) -> BTreeMap<(String, MythId), StanceLabel> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            if let Some(gold) = &r.gold {
                for (&myth, &raw) in gold {
                    out.insert((r.video_id.clone(), myth), consolidate_raw_label(raw));
                }
            }
        }
        out
    }

    /// Write one JSON object per line in record order.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("records always serialize");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

const REQUIRED_RECORD_FIELDS: [&str; 3] = ["video_id", "title", "description"];

/// Load a JSON-lines dataset, preserving file order. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    let mut dataset = parse_dataset(BufReader::new(file))?;
    dataset.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.provenance = path.display().to_string();
    Ok(dataset)
}

/// Parse JSON-lines records from any reader.
pub fn parse_dataset(reader: impl BufRead) -> Result<Dataset, DatasetError> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::ParseError { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| DatasetError::ParseError { line: line_no, message: e.to_string() })?;
        let obj = value
            .as_object()
            .ok_or_else(|| DatasetError::ParseError { line: line_no, message: "expected a JSON object".into() })?;
        for name in REQUIRED_RECORD_FIELDS {
            if !obj.contains_key(name) {
                return Err(DatasetError::MissingField { name: name.to_string(), line: line_no });
            }
        }
        let record: VideoRecord = serde_json::from_value(value)
            .map_err(|e| DatasetError::InvalidValue { line: line_no, message: e.to_string() })?;
        if record.video_id.is_empty() {
            return Err(DatasetError::InvalidValue { line: line_no, message: "empty video_id".into() });
        }
        if !seen.insert(record.video_id.clone()) {
            return Err(DatasetError::DuplicateId(record.video_id));
        }
        records.push(record);
    }
    Ok(Dataset { name: String::new(), provenance: String::new(), records })
}

/// One recommendation: `source` recommended `target` at crawl depth `level`
/// in slot `rank`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecommendationEdge {
    pub source: String,
    pub target: String,
    pub level: u8,
    pub rank: u8,
}

pub const MAX_LEVEL: u8 = 5;
pub const MAX_RANK: u8 = 4;

/// Problems found by [`RecommendationGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum GraphIssue {
    LevelOutOfRange { edge: usize, level: u8 },
    RankOutOfRange { edge: usize, rank: u8 },
    /// Source neither a seed (level 1) nor a target at the previous level.
    OrphanSource { edge: usize, source: String, level: u8 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecommendationGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<RecommendationEdge>,
}

impl RecommendationGraph {
    pub fn from_edges(edges: Vec<RecommendationEdge>) -> Self {
        let nodes = edges.iter().flat_map(|e| [e.source.clone(), e.target.clone()]).collect();
        Self { nodes, edges }
    }

    /// Check level/rank ranges and that every level-L source (L > 1) was a
    /// target at level L-1. When `seeds` is given, level-1 sources must be seeds.
    pub fn validate(&self, seeds: Option<&BTreeSet<String>>) -> Vec<GraphIssue> {
        let mut targets_at: BTreeMap<u8, BTreeSet<&str>> = BTreeMap::new();
        for e in &self.edges {
            targets_at.entry(e.level).or_default().insert(e.target.as_str());
        }
        let mut issues = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if !(1..=MAX_LEVEL).contains(&e.level) {
                issues.push(GraphIssue::LevelOutOfRange { edge: i, level: e.level });
                continue;
            }
            if !(1..=MAX_RANK).contains(&e.rank) {
                issues.push(GraphIssue::RankOutOfRange { edge: i, rank: e.rank });
            }
            let ok = if e.level == 1 {
                seeds.is_none_or(|s| s.contains(&e.source))
            } else {
                targets_at.get(&(e.level - 1)).is_some_and(|t| t.contains(e.source.as_str()))
            };
            if !ok {
                issues.push(GraphIssue::OrphanSource { edge: i, source: e.source.clone(), level: e.level });
            }
        }
        issues
    }
}

/// Load a graph from one JSON edge object per line.
pub fn load_graph(path: impl AsRef<Path>) -> Result<RecommendationGraph, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::ParseError { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let edge: RecommendationEdge = serde_json::from_str(&line)
            .map_err(|e| DatasetError::ParseError { line: i + 1, message: e.to_string() })?;
        edges.push(edge);
    }
    Ok(RecommendationGraph::from_edges(edges))
}
