//! Queries, review comments and gold annotations.
//!
//! A corpus file is newline-delimited JSON. Every line is one object with a
//! `"kind"` discriminator:
//!
//! ```text
//! {"kind":"comment","id":"c1","product_id":"p1","review_id":"r1","text":"Battery lasts all day."}
//! {"kind":"query","id":"q1","product_id":"p1","text":"How is the battery?","category":"Electronics",
//!  "gold_answers":["..."],"reference_kps":["..."],
//!  "gold_clusters":[{"kp_text":"...","member_ids":["c1"]}]}
//! ```
//!
//! Unknown fields are kept in `extra` and written back on serialization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub product_id: String,
    pub review_id: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Comment {
    pub fn new(
        id: impl Into<String>,
        product_id: impl Into<String>,
        review_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            product_id: product_id.into(),
            review_id: review_id.into(),
            text: text.into(),
            extra: Map::new(),
        }
    }
}

/// Comments annotated as supporting the same reference key point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldCluster {
    pub kp_text: String,
    pub member_ids: Vec<String>,
}

impl GoldCluster {
    pub fn prevalence(&self) -> usize {
        self.member_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub product_id: String,
    pub text: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub reference_kps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_clusters: Option<Vec<GoldCluster>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        product_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            product_id: product_id.into(),
            text: text.into(),
            category: String::new(),
            gold_answers: Vec::new(),
            reference_kps: Vec::new(),
            gold_clusters: None,
            extra: Map::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Comment(Comment),
    Query(Query),
}

/// Comments and queries indexed by id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub comments: IndexMap<String, Comment>,
    pub queries: IndexMap<String, Query>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate {kind} id `{id}` (line {line})")]
    DuplicateId {
        kind: &'static str,
        id: String,
        line: usize,
    },
    #[error("dangling references: {}", .ids.join(", "))]
    DanglingReference { ids: Vec<String> },
    #[error("corpus failed validation:\n{}", fmt_violations(.0))]
    Invalid(Vec<Violation>),
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One broken invariant, naming the offending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: &'static str,
    pub id: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} `{}`: {}", self.kind, self.id, self.rule)
    }
}

impl Corpus {
    /// Builds a corpus from parts without validating; duplicate ids keep the last entry.
    pub fn from_parts(
        comments: impl IntoIterator<Item = Comment>,
        queries: impl IntoIterator<Item = Query>,
    ) -> Self {
        Self {
            comments: comments.into_iter().map(|c| (c.id.clone(), c)).collect(),
            queries: queries.into_iter().map(|q| (q.id.clone(), q)).collect(),
        }
    }

    /// Comments of one product, in corpus order.
    pub fn comments_for_product<'a>(
        &'a self,
        product_id: &'a str,
    ) -> impl Iterator<Item = &'a Comment> + 'a {
        self.comments
            .values()
            .filter(move |c| c.product_id == product_id)
    }

    pub fn parse_str(input: &str) -> Result<Self, CorpusError> {
        Self::parse_reader(input.as_bytes())
    }

    fn parse_reader(reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            match record {
                Record::Comment(c) => {
                    if corpus.comments.contains_key(&c.id) {
                        return Err(CorpusError::DuplicateId {
                            kind: "comment",
                            id: c.id,
                            line: line_no,
                        });
                    }
                    corpus.comments.insert(c.id.clone(), c);
                }
                Record::Query(q) => {
                    if corpus.queries.contains_key(&q.id) {
                        return Err(CorpusError::DuplicateId {
                            kind: "query",
                            id: q.id,
                            line: line_no,
                        });
                    }
                    corpus.queries.insert(q.id.clone(), q);
                }
            }
        }
        Ok(corpus)
    }

    /// Comments first, then queries, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let records = self
            .comments
            .values()
            .cloned()
            .map(Record::Comment)
            .chain(self.queries.values().cloned().map(Record::Query));
        for r in records {
            out.push_str(&serde_json::to_string(&r).expect("corpus records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path)?;
    let corpus = Corpus::parse_reader(BufReader::new(file))?;
    check(corpus)
}

/// Validates an in-memory corpus, turning violations into errors.
pub fn check(corpus: Corpus) -> Result<Corpus, CorpusError> {
    let violations = validate_corpus(&corpus);
    if violations.is_empty() {
        return Ok(corpus);
    }
    let dangling: Vec<String> = corpus
        .queries
        .values()
        .flat_map(|q| q.gold_clusters.iter().flatten())
        .flat_map(|g| g.member_ids.iter())
        .filter(|m| !corpus.comments.contains_key(*m))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !dangling.is_empty() {
        return Err(CorpusError::DanglingReference { ids: dangling });
    }
    Err(CorpusError::Invalid(violations))
}

/// Lists every invariant violation; empty iff the corpus is valid.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    for (key, c) in &corpus.comments {
        if key != &c.id {
            out.push(Violation {
                kind: "comment",
                id: c.id.clone(),
                rule: format!("indexed under different id `{key}`"),
            });
        }
        if c.id.is_empty() {
            out.push(Violation {
                kind: "comment",
                id: c.id.clone(),
                rule: "id must be non-empty".into(),
            });
        }
        if c.text.trim().is_empty() {
            out.push(Violation {
                kind: "comment",
                id: c.id.clone(),
                rule: "text must be non-empty".into(),
            });
        }
    }
    for (key, q) in &corpus.queries {
        if key != &q.id {
            out.push(Violation {
                kind: "query",
                id: q.id.clone(),
                rule: format!("indexed under different id `{key}`"),
            });
        }
        if q.text.trim().is_empty() {
            out.push(Violation {
                kind: "query",
                id: q.id.clone(),
                rule: "text must be non-empty".into(),
            });
        }
        let mut seen = HashSet::new();
        for kp in &q.reference_kps {
            if !seen.insert(kp.as_str()) {
                out.push(Violation {
                    kind: "query",
                    id: q.id.clone(),
                    rule: format!("duplicate reference kp `{kp}`"),
                });
            }
        }
        for (gi, g) in q.gold_clusters.iter().flatten().enumerate() {
            let gid = format!("{}#{gi}", q.id);
            if g.member_ids.is_empty() {
                out.push(Violation {
                    kind: "gold_cluster",
                    id: gid.clone(),
                    rule: "member_ids must be non-empty".into(),
                });
            }
            let mut seen = HashSet::new();
            for m in &g.member_ids {
                if !seen.insert(m.as_str()) {
                    out.push(Violation {
                        kind: "gold_cluster",
                        id: gid.clone(),
                        rule: format!("duplicate member id `{m}`"),
                    });
                }
                if !corpus.comments.contains_key(m) {
                    out.push(Violation {
                        kind: "gold_cluster",
                        id: gid.clone(),
                        rule: format!("references unknown comment `{m}`"),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub categories: usize,
    pub queries_per_category: BTreeMap<String, usize>,
    pub total_queries: usize,
    pub total_comments: usize,
    pub mean_comments_per_query: f64,
    pub mean_answers_per_query: f64,
    pub mean_reference_kps_per_query: f64,
    /// Mean gold cluster size, over queries that carry gold clusters.
    pub mean_prevalence_per_kp: Option<f64>,
    pub mean_relevant_comments_per_query: Option<f64>,
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let mut per_cat: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_product: BTreeMap<&str, usize> = BTreeMap::new();
    for c in corpus.comments.values() {
        *per_product.entry(c.product_id.as_str()).or_default() += 1;
    }
    let (mut comments, mut answers, mut kps) = (0, 0, 0);
    let (mut gold_sizes, mut gold_kps, mut gold_queries, mut relevant) = (0, 0, 0, 0);
    for q in corpus.queries.values() {
        *per_cat.entry(q.category.clone()).or_default() += 1;
        comments += per_product.get(q.product_id.as_str()).copied().unwrap_or(0);
        answers += q.gold_answers.len();
        kps += q.reference_kps.len();
        if let Some(gold) = &q.gold_clusters {
            gold_queries += 1;
            gold_kps += gold.len();
            gold_sizes += gold.iter().map(GoldCluster::prevalence).sum::<usize>();
            relevant += gold
                .iter()
                .flat_map(|g| g.member_ids.iter())
                .collect::<HashSet<_>>()
                .len();
        }
    }
    let n = corpus.queries.len();
    StatsReport {
        categories: per_cat.len(),
        queries_per_category: per_cat,
        total_queries: n,
        total_comments: corpus.comments.len(),
        mean_comments_per_query: mean(comments, n),
        mean_answers_per_query: mean(answers, n),
        mean_reference_kps_per_query: mean(kps, n),
        mean_prevalence_per_kp: (gold_kps > 0).then(|| mean(gold_sizes, gold_kps)),
        mean_relevant_comments_per_query: (gold_queries > 0).then(|| mean(relevant, gold_queries)),
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<40} {:>10}", "Product categories", self.categories)?;
        for (cat, n) in &self.queries_per_category {
            writeln!(f, "{:<40} {:>10}", format!("  queries in {cat}"), n)?;
        }
        writeln!(f, "{:<40} {:>10}", "Total queries", self.total_queries)?;
        writeln!(f, "{:<40} {:>10}", "Total comments", self.total_comments)?;
        writeln!(
            f,
            "{:<40} {:>10.2}",
            "Comments per query", self.mean_comments_per_query
        )?;
        writeln!(
            f,
            "{:<40} {:>10.2}",
            "Answers per query", self.mean_answers_per_query
        )?;
        writeln!(
            f,
            "{:<40} {:>10.2}",
            "Reference KPs per query", self.mean_reference_kps_per_query
        )?;
        if let Some(r) = self.mean_relevant_comments_per_query {
            writeln!(f, "{:<40} {:>10.2}", "Relevant comments per query", r)?;
        }
        if let Some(p) = self.mean_prevalence_per_kp {
            writeln!(f, "{:<40} {:>10.2}", "Comments (prevalence) per KP", p)?;
        }
        Ok(())
    }
}
