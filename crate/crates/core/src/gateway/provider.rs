use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::task::{AnnotationTask, Provenance, ResultContent, TaskKind};
use super::templates::TemplateStore;
use super::GatewayError;

/// Backend that turns a task into parsed content.
pub trait Provider: Send + Sync {
    fn complete(&self, task: &AnnotationTask) -> Result<ResultContent, GatewayError>;

    fn provenance(&self) -> Provenance;

    /// Whether a failure of this kind is worth retrying.
    fn retryable(&self, err: &GatewayError) -> bool {
        matches!(err, GatewayError::Transport { .. } | GatewayError::Timeout { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL of an OpenAI-style API, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub embed_model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub temperature: Option<f64>,
}

fn default_key_env() -> String {
    "SAE_EMBED_API_KEY".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}

fn parse_err(task: &AnnotationTask, message: impl Into<String>) -> GatewayError {
    GatewayError::Parse {
        task_id: task.task_id.clone(),
        message: message.into(),
    }
}

/// The last line starting with `ANSWER:` decides; anything other than
/// YES/NO there is a parse error.
pub fn parse_judge(text: &str) -> Result<(bool, String), String> {
    let line = text
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.to_ascii_uppercase().starts_with("ANSWER:"))
        .ok_or_else(|| "no ANSWER: line".to_string())?;
    let answer = line["ANSWER:".len()..]
        .trim()
        .trim_end_matches('.')
        .to_ascii_uppercase();
    let reasoning = text
        .lines()
        .filter(|l| !l.trim().to_ascii_uppercase().starts_with("ANSWER:"))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string();
    match answer.as_str() {
        "YES" => Ok((true, reasoning)),
        "NO" => Ok((false, reasoning)),
        other => Err(format!("ANSWER must be YES or NO, got {other:?}")),
    }
}

/// Parses raw model text into the content shape required by `task.kind`.
pub fn parse_completion(task: &AnnotationTask, text: &str) -> Result<ResultContent, GatewayError> {
    let trimmed = text.trim();
    match task.kind {
        TaskKind::Judge => {
            let (answer, reasoning) = parse_judge(text).map_err(|m| parse_err(task, m))?;
            Ok(ResultContent::Judgment { answer, reasoning })
        }
        TaskKind::Relabel => {
            if trimmed.is_empty() {
                return Err(parse_err(task, "empty label"));
            }
            Ok(ResultContent::Label {
                text: trimmed.to_string(),
            })
        }
        TaskKind::Summarize => Ok(ResultContent::Summary {
            text: trimmed.to_string(),
        }),
        TaskKind::ClassifySyntactic => {
            let word = trimmed
                .split_whitespace()
                .last()
                .unwrap_or("")
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_ascii_lowercase();
            match word.as_str() {
                "syntactic" | "semantic" => Ok(ResultContent::Class { label: word }),
                _ => Err(parse_err(
                    task,
                    format!("expected SYNTACTIC or SEMANTIC, got {trimmed:?}"),
                )),
            }
        }
        TaskKind::AssignCluster => {
            let n: Option<usize> = task
                .payload
                .params
                .get("n_clusters")
                .and_then(|v| v.as_u64())
                .map(|v| v as usize);
            let index = trimmed
                .split(|c: char| !c.is_ascii_digit())
                .find(|s| !s.is_empty())
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| parse_err(task, format!("no cluster number in {trimmed:?}")))?;
            if let Some(n) = n {
                if index >= n {
                    return Err(parse_err(task, format!("cluster {index} out of range 0..{n}")));
                }
            }
            Ok(ResultContent::ClusterIndex { index })
        }
        TaskKind::Embed => Err(parse_err(task, "embed results are vectors, not text")),
    }
}

pub(crate) fn normalize(values: &mut [f32]) -> bool {
    let norm = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    for v in values.iter_mut() {
        *v = (*v as f64 / norm) as f32;
    }
    true
}

/// Deterministic, offline provider: every result is a pure function of the
/// task id.
#[derive(Debug, Clone)]
pub struct MockProvider {
    /// Dimension of mock embeddings unless the task sets `params.dim`.
    pub embed_dim: usize,
    /// Upper bound on a per-task sleep derived from the task hash.
    pub max_latency: Option<Duration>,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            max_latency: None,
        }
    }
}

impl MockProvider {
    fn seed(task: &AnnotationTask) -> [u8; 32] {
        let mut seed = [0u8; 32];
        let bytes = hex::decode(&task.task_id).unwrap_or_default();
        for (s, b) in seed.iter_mut().zip(bytes) {
            *s = b;
        }
        seed
    }

    /// Unit vector seeded by the task hash. Uniform cube components then
    /// normalization; only IEEE-exact operations, so bits match everywhere.
    pub fn embed_vector(task: &AnnotationTask, dim: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::from_seed(Self::seed(task));
        loop {
            let mut v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            if normalize(&mut v) {
                return v;
            }
        }
    }
}

impl Provider for MockProvider {
    fn complete(&self, task: &AnnotationTask) -> Result<ResultContent, GatewayError> {
        let seed = Self::seed(task);
        if let Some(max) = self.max_latency {
            let frac = u16::from_le_bytes([seed[30], seed[31]]) as f64 / u16::MAX as f64;
            std::thread::sleep(max.mul_f64(frac));
        }
        let tag = &task.task_id[..8.min(task.task_id.len())];
        let parity = seed[31] & 1 == 0;
        Ok(match task.kind {
            TaskKind::Judge => ResultContent::Judgment {
                answer: parity,
                reasoning: format!("mock judgment {tag}"),
            },
            TaskKind::Relabel => ResultContent::Label {
                text: format!("mock label {tag}"),
            },
            TaskKind::Summarize => ResultContent::Summary {
                text: format!("mock summary of {} exhibits {tag}", task.payload.exhibits.len()),
            },
            TaskKind::ClassifySyntactic => ResultContent::Class {
                label: if parity { "semantic" } else { "syntactic" }.into(),
            },
            TaskKind::AssignCluster => {
                let n = task
                    .payload
                    .params
                    .get("n_clusters")
                    .and_then(|v| v.as_u64())
                    .unwrap_or(1)
                    .max(1);
                let h = u64::from_le_bytes(seed[..8].try_into().unwrap());
                ResultContent::ClusterIndex {
                    index: (h % n) as usize,
                }
            }
            TaskKind::Embed => {
                let dim = task
                    .payload
                    .params
                    .get("dim")
                    .and_then(|v| v.as_u64())
                    .map(|d| d as usize)
                    .unwrap_or(self.embed_dim)
                    .max(1);
                ResultContent::Vector {
                    values: Self::embed_vector(task, dim),
                }
            }
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::Mock
    }
}

/// Chat-completion / embeddings over HTTP.
pub struct HttpProvider {
    config: ProviderConfig,
    templates: TemplateStore,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // never print the key
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

impl HttpProvider {
    pub fn new(config: ProviderConfig, templates: TemplateStore) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok();
        Ok(Self {
            config,
            templates,
            client,
            api_key,
        })
    }

    fn post(
        &self,
        task: &AnnotationTask,
        route: &str,
        body: serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}/{route}", self.config.endpoint.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout {
                    task_id: task.task_id.clone(),
                }
            } else {
                GatewayError::Transport {
                    task_id: task.task_id.clone(),
                    message: e.to_string(),
                }
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GatewayError::Transport {
                task_id: task.task_id.clone(),
                message: format!("HTTP {status}"),
            });
        }
        resp.json()
            .map_err(|e| parse_err(task, format!("response is not JSON: {e}")))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, task: &AnnotationTask) -> Result<ResultContent, GatewayError> {
        let prompt = self.templates.render(task)?;
        if task.kind == TaskKind::Embed {
            let model = self.config.embed_model.as_ref().unwrap_or(&self.config.model);
            let resp = self.post(
                task,
                "embeddings",
                json!({ "model": model, "input": prompt.trim_end() }),
            )?;
            let mut values: Vec<f32> = resp["data"][0]["embedding"]
                .as_array()
                .ok_or_else(|| parse_err(task, "missing data[0].embedding"))?
                .iter()
                .map(|v| v.as_f64().map(|f| f as f32))
                .collect::<Option<_>>()
                .ok_or_else(|| parse_err(task, "non-numeric embedding"))?;
            if !normalize(&mut values) {
                return Err(parse_err(task, "zero embedding"));
            }
            return Ok(ResultContent::Vector { values });
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt }],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        let resp = self.post(task, "chat/completions", body)?;
        let text = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| parse_err(task, "missing choices[0].message.content"))?;
        parse_completion(task, text)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Live
    }
}
