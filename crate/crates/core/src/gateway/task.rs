use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Relabel,
    Judge,
    Summarize,
    ClassifySyntactic,
    AssignCluster,
    Embed,
}

impl TaskKind {
    pub fn default_template(self) -> &'static str {
        match self {
            TaskKind::Relabel => "relabel.v1",
            TaskKind::Judge => "judge.v1",
            TaskKind::Summarize => "summarize.v1",
            TaskKind::ClassifySyntactic => "classify_syntactic.v1",
            TaskKind::AssignCluster => "assign_cluster.v1",
            TaskKind::Embed => "embed.v1",
        }
    }
}

/// One piece of evidence shown to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exhibit {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, Value>,
}

impl Exhibit {
    pub fn new(role: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            doc_id: None,
            text: text.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with_doc(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = Some(doc_id.into());
        self
    }

    pub fn with_field(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.fields.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default)]
    pub exhibits: Vec<Exhibit>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
}

impl TaskPayload {
    pub fn with_query(mut self, q: impl Into<String>) -> Self {
        self.query = Some(q.into());
        self
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

/// A unit of external annotation work. `task_id` is the SHA-256 of the
/// canonical JSON of `(kind, template_id, payload)`, so equal tasks share
/// an id and dedupe in the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub kind: TaskKind,
    pub template_id: String,
    pub payload: TaskPayload,
}

#[derive(Serialize)]
struct HashInput<'a> {
    kind: TaskKind,
    template_id: &'a str,
    payload: &'a TaskPayload,
}

impl AnnotationTask {
    pub fn new(kind: TaskKind, payload: TaskPayload) -> Self {
        Self::with_template(kind, kind.default_template(), payload)
    }

    pub fn with_template(kind: TaskKind, template_id: impl Into<String>, payload: TaskPayload) -> Self {
        let template_id = template_id.into();
        let task_id = Self::compute_id(kind, &template_id, &payload);
        Self {
            task_id,
            kind,
            template_id,
            payload,
        }
    }

    pub fn compute_id(kind: TaskKind, template_id: &str, payload: &TaskPayload) -> String {
        // BTreeMap fields give a canonical key order
        let bytes = serde_json::to_vec(&HashInput {
            kind,
            template_id,
            payload,
        })
        .expect("task payload serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// True when `task_id` matches the content.
    pub fn verify(&self) -> bool {
        self.task_id == Self::compute_id(self.kind, &self.template_id, &self.payload)
    }

    pub fn payload_bytes(&self) -> usize {
        serde_json::to_vec(&self.payload).map(|v| v.len()).unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultContent {
    Label { text: String },
    Judgment { answer: bool, reasoning: String },
    Summary { text: String },
    Class { label: String },
    ClusterIndex { index: usize },
    Vector { values: Vec<f32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Live,
    Mock,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub task_id: String,
    pub kind: TaskKind,
    pub content: ResultContent,
    pub provider: Provenance,
}

impl AnnotationResult {
    pub fn judgment(&self) -> Option<bool> {
        match self.content {
            ResultContent::Judgment { answer, .. } => Some(answer),
            _ => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.content {
            ResultContent::Label { text } | ResultContent::Summary { text } => Some(text),
            ResultContent::Class { label } => Some(label),
            _ => None,
        }
    }

    pub fn vector(&self) -> Option<&[f32]> {
        match &self.content {
            ResultContent::Vector { values } => Some(values),
            _ => None,
        }
    }

    pub fn cluster_index(&self) -> Option<usize> {
        match self.content {
            ResultContent::ClusterIndex { index } => Some(index),
            _ => None,
        }
    }
}
