//! Key point summary generation over opinion clusters.
//!
//! The generator is called once per cluster, largest cluster first. Each call
//! sees the full cluster payload plus every key point accepted so far, and must
//! answer with a single key point labelled by the id of the cluster it
//! summarizes. Stated counts are replaced by the true cluster size afterwards.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::content_hash;
use crate::clustering::{Cluster, ClusterSet};
use crate::corpus::{Comment, Query};
use crate::vectorspace::BackendError;

pub const TEMPLATE_CONTEXT: &str = include_str!("../templates/kpsg_context.txt");
pub const TEMPLATE_TASK: &str = include_str!("../templates/kpsg_task.txt");
pub const TEMPLATE_STEPS: &str = include_str!("../templates/kpsg_steps.txt");
pub const TEMPLATE_RULES: &str = include_str!("../templates/kpsg_rules.txt");
pub const TEMPLATE_POSTPROCESS: &str = include_str!("../templates/postprocess.txt");
pub const TEMPLATE_GEVAL_RELEVANCE: &str = include_str!("../templates/geval_relevance.txt");
pub const TEMPLATE_GEVAL_REDUNDANCY: &str = include_str!("../templates/geval_redundancy.txt");

pub const DEFAULT_VERBS: &[&str] = &[
    "say", "praise", "believe", "suggest", "complain", "mention", "note", "prefer",
];

/// Substitutes `{name}` placeholders in one pass; unknown braces are kept.
pub fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let hit = tail.find('}').and_then(|end| {
            let name = &tail[1..end];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (end, *v))
        });
        match hit {
            Some((end, value)) => {
                out.push_str(value);
                rest = &tail[end + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Serialize)]
struct PayloadEntry<'a> {
    cluster_id: usize,
    comments: Vec<&'a str>,
}

/// The four-part prompt for one step of the generation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDocument {
    /// Context and input structure, task definition, summarization steps,
    /// quantification rules.
    pub parts: [String; 4],
    pub cluster_payload: String,
    pub prior_kps: Vec<String>,
    pub total_kps: usize,
    pub target_cluster: Option<usize>,
    pub correction: Option<String>,
}

impl PromptDocument {
    pub fn render(&self) -> String {
        let titles = [
            "Context and input",
            "Task and output format",
            "Summarization steps",
            "Quantification rules",
        ];
        let mut out = String::new();
        for (i, (title, body)) in titles.iter().zip(&self.parts).enumerate() {
            let _ = writeln!(out, "### {}. {title}\n{}", i + 1, body.trim_end());
            out.push('\n');
        }
        out.push_str("### Key points written so far\n");
        if self.prior_kps.is_empty() {
            out.push_str("(none yet)\n");
        } else {
            for (i, kp) in self.prior_kps.iter().enumerate() {
                let _ = writeln!(out, "{}. {kp}", i + 1);
            }
        }
        out.push('\n');
        let step = self.prior_kps.len() + 1;
        let _ = write!(
            out,
            "### Next\nWrite key point {step} of {}",
            self.total_kps
        );
        if step == 1 {
            out.push_str(", the first key point of the summary");
        }
        if let Some(t) = self.target_cluster {
            let _ = write!(out, ", for cluster [{t}]");
        }
        out.push_str(".\n");
        if let Some(c) = &self.correction {
            let _ = writeln!(out, "\nNote: {c}");
        }
        out
    }
}

/// Serializes clusters for the prompt, largest first (ties by id).
pub fn cluster_payload(clusters: &ClusterSet, comments: &IndexMap<String, Comment>) -> String {
    let entries: Vec<PayloadEntry> = clusters
        .by_size()
        .into_iter()
        .map(|c| PayloadEntry {
            cluster_id: c.id,
            comments: c
                .member_ids
                .iter()
                .map(|id| comments.get(id).map(|c| c.text.as_str()).unwrap_or(""))
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("payload serializes")
}

pub fn build_prompt(
    query: &Query,
    clusters: &ClusterSet,
    comments: &IndexMap<String, Comment>,
    prior_kps: &[String],
) -> PromptDocument {
    let payload = cluster_payload(clusters, comments);
    let n = clusters.clusters.len().to_string();
    let vars = [
        ("question", query.text.as_str()),
        ("n_clusters", n.as_str()),
        ("clusters", payload.as_str()),
    ];
    PromptDocument {
        parts: [
            fill_template(TEMPLATE_CONTEXT, &vars),
            fill_template(TEMPLATE_TASK, &vars),
            fill_template(TEMPLATE_STEPS, &vars),
            fill_template(TEMPLATE_RULES, &vars),
        ],
        cluster_payload: payload,
        prior_kps: prior_kps.to_vec(),
        total_kps: clusters.clusters.len(),
        target_cluster: None,
        correction: None,
    }
}

/// One generation call. `target_*` fields describe the cluster the prompt asks
/// for; remote backends only see `prompt`.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: String,
    pub target_cluster: Option<usize>,
    pub target_comments: Vec<String>,
}

pub trait Generator: Send + Sync {
    fn fingerprint(&self) -> String;
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<G: Generator + ?Sized> Generator for std::sync::Arc<G> {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Replays replies keyed by the SHA-256 of the prompt.
///
/// Transcript files are newline-delimited `{"prompt_sha256": "...", "reply": "..."}`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    replies: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_sha256: String,
    pub reply: String,
}

impl ScriptedGenerator {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            replies: entries
                .into_iter()
                .map(|e| (e.prompt_sha256, e.reply))
                .collect(),
        }
    }

    pub fn from_prompts<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(pairs.into_iter().map(|(p, r)| TranscriptEntry {
            prompt_sha256: prompt_hash(p),
            reply: r.to_string(),
        }))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| BackendError::Unreachable(format!("{}: {e}", path.as_ref().display())))?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| BackendError::Malformed(format!("transcript line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<TranscriptEntry>, _>>()?;
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Generator for ScriptedGenerator {
    fn fingerprint(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let h = prompt_hash(&request.prompt);
        self.replies
            .get(&h)
            .cloned()
            .ok_or(BackendError::NoScriptedReply(h))
    }
}

/// Offline generator: labels the requested cluster and restates its first
/// comment as the key point.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator;

impl Generator for ExtractiveGenerator {
    fn fingerprint(&self) -> String {
        "extractive".into()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let id = request.target_cluster.ok_or_else(|| {
            BackendError::Malformed("extractive mock needs a target cluster".into())
        })?;
        let first = request
            .target_comments
            .first()
            .map(|s| s.trim().trim_end_matches(['.', '!', '?']).trim())
            .unwrap_or("");
        let mut kp = first.to_string();
        if let Some(c) = kp.chars().next() {
            let lower: String = c.to_lowercase().collect();
            kp.replace_range(..c.len_utf8(), &lower);
        }
        let n = request.target_comments.len();
        Ok(format!("[{id}] {}", bullet_body(n, &kp)))
    }
}

/// Wraps a generator and records every prompt/reply pair.
pub struct RecordingGenerator<G> {
    inner: G,
    log: Mutex<Vec<TranscriptEntry>>,
}

impl<G: Generator> RecordingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.log.lock().expect("recording lock").clone()
    }
}

impl<G: Generator> Generator for RecordingGenerator<G> {
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let reply = self.inner.complete(request)?;
        self.log
            .lock()
            .expect("recording lock")
            .push(TranscriptEntry {
                prompt_sha256: prompt_hash(&request.prompt),
                reply: reply.clone(),
            });
        Ok(reply)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    content_hash(&[prompt])
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BulletError {
    #[error("empty bullet")]
    Empty,
    #[error("no prevalence count found in `{0}`")]
    NoCount(String),
    #[error("no key point text in `{0}`")]
    NoKeyPoint(String),
}

/// Parses quantified bullets such as `23 comments praise that <kp>` or
/// `135 of comments believe that <kp>`.
#[derive(Debug, Clone)]
pub struct BulletParser {
    re: Regex,
}

impl Default for BulletParser {
    fn default() -> Self {
        Self::new(DEFAULT_VERBS)
    }
}

impl BulletParser {
    pub fn new<S: AsRef<str>>(verbs: &[S]) -> Self {
        let alts = verbs
            .iter()
            .map(|v| regex::escape(v.as_ref()))
            .collect::<Vec<_>>()
            .join("|");
        let re = Regex::new(&format!(
            r"(?is)^\s*(?:[-+*•]\s*)?(\d+)\s+(?:of\s+)?(?:the\s+)?comments?\s+(?:(?:{alts})(?:e?s)?\s+that\s+)?(.*?)\s*$"
        ))
        .expect("bullet regex compiles");
        Self { re }
    }

    pub fn parse(&self, bullet: &str) -> Result<(String, usize), BulletError> {
        if bullet.trim().is_empty() {
            return Err(BulletError::Empty);
        }
        let caps = self
            .re
            .captures(bullet)
            .ok_or_else(|| BulletError::NoCount(bullet.trim().to_string()))?;
        let count = caps[1]
            .parse()
            .map_err(|_| BulletError::NoCount(bullet.trim().to_string()))?;
        let kp = caps[2].trim();
        if kp.is_empty() {
            return Err(BulletError::NoKeyPoint(bullet.trim().to_string()));
        }
        Ok((kp.to_string(), count))
    }
}

pub fn parse_bullet(bullet: &str) -> Result<(String, usize), BulletError> {
    BulletParser::default().parse(bullet)
}

/// Key point/prevalence pair in the post-processed JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedKp {
    pub key_point: String,
    pub prevalence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexedBulletError {
    pub index: usize,
    pub bullet: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SummaryParse {
    pub preamble: String,
    pub records: Vec<ParsedKp>,
    pub errors: Vec<IndexedBulletError>,
}

fn is_bullet_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with(['-', '+', '*', '•']) || t.starts_with(|c: char| c.is_ascii_digit())
}

/// Splits a bullet summary into key point records. Text before the first
/// bullet is the preamble; bullets that fail to parse are reported with their
/// 0-based bullet index and skipped.
pub fn postprocess_summary(raw: &str) -> SummaryParse {
    postprocess_with(&BulletParser::default(), raw)
}

pub fn postprocess_with(parser: &BulletParser, raw: &str) -> SummaryParse {
    let mut out = SummaryParse::default();
    let mut preamble = Vec::new();
    let mut index = 0;
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if !is_bullet_line(line) {
            if index == 0 {
                preamble.push(line.trim());
            }
            continue;
        }
        match parser.parse(line) {
            Ok((key_point, prevalence)) => out.records.push(ParsedKp {
                key_point,
                prevalence,
            }),
            Err(e) => out.errors.push(IndexedBulletError {
                index,
                bullet: line.trim().to_string(),
                error: e.to_string(),
            }),
        }
        index += 1;
    }
    out.preamble = preamble.join("\n");
    out
}

fn bullet_body(count: usize, kp: &str) -> String {
    if count == 1 {
        format!("1 comment says that {kp}")
    } else {
        format!("{count} comments say that {kp}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpRecord {
    pub key_point: String,
    pub prevalence: usize,
    pub cluster_id: usize,
    pub matched_comment_ids: Vec<String>,
    /// Count stated by the generator, when it gave one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_prevalence: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpSummary {
    pub query_id: String,
    pub preamble: String,
    pub records: Vec<KpRecord>,
    pub raw_generation: String,
}

impl KpSummary {
    /// Bullet text, one `- N comments say that <kp>` line per record.
    pub fn render(&self) -> String {
        render_summary(&self.preamble, &self.records)
    }

    /// The post-processed form: `[{"key_point": ..., "prevalence": ...}]`.
    pub fn parsed(&self) -> Vec<ParsedKp> {
        self.records
            .iter()
            .map(|r| ParsedKp {
                key_point: r.key_point.clone(),
                prevalence: r.prevalence,
            })
            .collect()
    }
}

pub fn render_summary(preamble: &str, records: &[KpRecord]) -> String {
    let mut out = String::new();
    if !preamble.trim().is_empty() {
        out.push_str(preamble.trim());
        out.push('\n');
    }
    for r in records {
        let _ = writeln!(out, "- {}", bullet_body(r.prevalence, &r.key_point));
    }
    out
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("no clusters to summarize")]
    NoClusters,
    #[error("could not parse generation ({reason}): {raw:?}")]
    Parse { raw: String, reason: String },
    #[error("generator labelled cluster {cluster_id} which is {reason}; raw reply {raw:?}")]
    InvalidLabel {
        cluster_id: usize,
        reason: &'static str,
        raw: String,
        completed: Vec<KpRecord>,
    },
    #[error("generator failed after {attempts} attempts with {} key points completed: {source}", .completed.len())]
    Partial {
        attempts: usize,
        completed: Vec<KpRecord>,
        #[source]
        source: BackendError,
    },
    #[error("record labelled cluster {record} repaired against cluster {cluster}")]
    ClusterMismatch { record: usize, cluster: usize },
}

/// Sets prevalence and matched comments from the cluster itself, noting any
/// disagreement with the generated count.
pub fn repair_prevalence(record: &KpRecord, cluster: &Cluster) -> Result<KpRecord, SummarizeError> {
    if record.cluster_id != cluster.id {
        return Err(SummarizeError::ClusterMismatch {
            record: record.cluster_id,
            cluster: cluster.id,
        });
    }
    let size = cluster.len();
    let mut out = record.clone();
    out.prevalence = size;
    out.matched_comment_ids = cluster.member_ids.clone();
    let stated = record.generated_prevalence.unwrap_or(record.prevalence);
    if stated != size {
        out.note = Some(format!(
            "generated count {stated} replaced by cluster size {size}"
        ));
    }
    Ok(out)
}

/// A labelled key point extracted from one generator reply.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledKp {
    pub preamble: String,
    pub cluster_id: usize,
    pub key_point: String,
    pub stated_count: Option<usize>,
}

fn label_regex() -> Regex {
    Regex::new(r"(?i)\[\s*(?:cluster(?:[ _]?id)?\s*[:#=]?\s*)?(\d+)\s*\]").expect("label regex")
}

/// Finds the first line carrying a `[<cluster id>]` label. Non-empty lines
/// before it form the preamble.
pub fn parse_labeled_reply(reply: &str, parser: &BulletParser) -> Result<LabeledKp, String> {
    let re = label_regex();
    let mut preamble = Vec::new();
    for line in reply.lines() {
        let Some(caps) = re.captures(line) else {
            if !line.trim().is_empty() {
                preamble.push(line.trim());
            }
            continue;
        };
        let cluster_id: usize = caps[1]
            .parse()
            .map_err(|_| "cluster label out of range".to_string())?;
        let m = caps.get(0).expect("whole match");
        let rest = format!("{} {}", &line[..m.start()], &line[m.end()..]);
        let rest = rest
            .trim()
            .trim_start_matches(['-', '+', '*', '•', ':'])
            .trim();
        let (key_point, stated_count) = match parser.parse(rest) {
            Ok((kp, n)) => (kp, Some(n)),
            Err(_) => (rest.to_string(), None),
        };
        if key_point.is_empty() {
            return Err("labelled line has no key point".into());
        }
        return Ok(LabeledKp {
            preamble: preamble.join("\n"),
            cluster_id,
            key_point,
            stated_count,
        });
    }
    Err("no cluster-labelled key point".into())
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    /// Extra attempts after a failed generator call.
    pub retries: usize,
    pub max_kps: Option<usize>,
    pub verbs: Vec<String>,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            retries: 2,
            max_kps: None,
            verbs: DEFAULT_VERBS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn call_with_retries(
    client: &dyn Generator,
    request: &GenerationRequest,
    retries: usize,
) -> Result<String, (usize, BackendError)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.complete(request) {
            Ok(r) => return Ok(r),
            Err(e) if attempt > retries => return Err((attempt, e)),
            Err(_) => {}
        }
    }
}

fn finish(
    mut records: Vec<KpRecord>,
    clusters: &ClusterSet,
) -> Result<Vec<KpRecord>, SummarizeError> {
    records = records
        .iter()
        .map(|r| {
            let c = clusters
                .get(r.cluster_id)
                .ok_or(SummarizeError::ClusterMismatch {
                    record: r.cluster_id,
                    cluster: usize::MAX,
                })?;
            repair_prevalence(r, c)
        })
        .collect::<Result<_, _>>()?;
    records.sort_by(|a, b| {
        b.prevalence
            .cmp(&a.prevalence)
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(records)
}

/// Runs the next-key-point loop: one generator call per cluster, each prompt
/// carrying all key points accepted so far.
pub fn generate_summary(
    client: &dyn Generator,
    query: &Query,
    clusters: &ClusterSet,
    comments: &IndexMap<String, Comment>,
    options: &GenerationOptions,
) -> Result<KpSummary, SummarizeError> {
    if clusters.is_empty() {
        return Err(SummarizeError::NoClusters);
    }
    let parser = BulletParser::new(&options.verbs);
    let mut order: Vec<&Cluster> = clusters.by_size();
    if let Some(max) = options.max_kps {
        order.truncate(max.max(1));
    }
    let allowed: BTreeSet<usize> = order.iter().map(|c| c.id).collect();
    let mut done: BTreeSet<usize> = BTreeSet::new();
    let mut records: Vec<KpRecord> = Vec::new();
    let mut prior: Vec<String> = Vec::new();
    let mut replies: Vec<String> = Vec::new();
    let mut preamble = String::new();

    for _ in 0..order.len() {
        let target = order
            .iter()
            .find(|c| !done.contains(&c.id))
            .expect("an uncovered cluster remains");
        let mut doc = build_prompt(query, clusters, comments, &prior);
        doc.total_kps = order.len();
        doc.target_cluster = Some(target.id);
        let mut reprompted = false;
        let accepted = loop {
            let request = GenerationRequest {
                prompt: doc.render(),
                target_cluster: Some(target.id),
                target_comments: target
                    .member_ids
                    .iter()
                    .map(|id| comments.get(id).map(|c| c.text.clone()).unwrap_or_default())
                    .collect(),
            };
            let reply = match call_with_retries(client, &request, options.retries) {
                Ok(r) => r,
                Err((attempts, source)) => {
                    return Err(SummarizeError::Partial {
                        attempts,
                        completed: finish(records, clusters)?,
                        source,
                    })
                }
            };
            let labeled =
                parse_labeled_reply(&reply, &parser).map_err(|reason| SummarizeError::Parse {
                    raw: reply.clone(),
                    reason,
                })?;
            let problem = if !allowed.contains(&labeled.cluster_id) {
                Some("not a cluster of this summary")
            } else if done.contains(&labeled.cluster_id) {
                Some("already summarized")
            } else {
                None
            };
            match problem {
                None => break (labeled, reply),
                Some(reason) if reprompted => {
                    return Err(SummarizeError::InvalidLabel {
                        cluster_id: labeled.cluster_id,
                        reason,
                        raw: reply,
                        completed: finish(records, clusters)?,
                    })
                }
                Some(reason) => {
                    reprompted = true;
                    doc.correction = Some(format!(
                        "your previous answer was labelled [{}], which is {reason}. Label the key point with cluster [{}].",
                        labeled.cluster_id, target.id
                    ));
                }
            }
        };
        let (labeled, reply) = accepted;
        if records.is_empty() && !labeled.preamble.is_empty() {
            preamble = labeled.preamble.clone();
        }
        done.insert(labeled.cluster_id);
        prior.push(labeled.key_point.clone());
        replies.push(reply);
        records.push(KpRecord {
            key_point: labeled.key_point,
            prevalence: labeled.stated_count.unwrap_or(0),
            cluster_id: labeled.cluster_id,
            matched_comment_ids: Vec::new(),
            generated_prevalence: labeled.stated_count,
            note: None,
        });
    }

    Ok(KpSummary {
        query_id: query.id.clone(),
        preamble,
        records: finish(records, clusters)?,
        raw_generation: replies.join("\n"),
    })
}
