//! Single choke-point for external model services.
//!
//! Every labeling, judging, summarizing, classification, cluster assignment
//! and text-embedding request goes through [`Gateway::submit`] or
//! [`Gateway::submit_batch`]. Results are cached by task id (in memory and,
//! optionally, on disk). The mock provider makes every pipeline runnable
//! offline and deterministic.

mod cache;
mod provider;
mod task;
mod templates;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub use cache::DiskCache;
pub use provider::{parse_completion, parse_judge, HttpProvider, MockProvider, Provider, ProviderConfig};
pub use task::{AnnotationResult, AnnotationTask, Exhibit, Provenance, ResultContent, TaskKind, TaskPayload};
pub use templates::TemplateStore;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("task {task_id}: provider timed out")]
    Timeout { task_id: String },
    #[error("task {task_id}: transport failure: {message}")]
    Transport { task_id: String, message: String },
    #[error("task {task_id}: unparseable provider output: {message}")]
    Parse { task_id: String, message: String },
    #[error("task {task_id}: payload of {size} bytes exceeds budget {budget}")]
    Budget {
        task_id: String,
        size: usize,
        budget: usize,
    },
    #[error("task {task_id}: failed after {attempts} attempts: {last}")]
    Exhausted {
        task_id: String,
        attempts: u32,
        last: Box<GatewayError>,
    },
    #[error("template: {0}")]
    Template(String),
    #[error("provider config: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Maximum serialized payload size in bytes.
    pub payload_budget: usize,
    /// Extra attempts after a retryable failure.
    pub retries: u32,
    pub retry_backoff: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            payload_budget: 256 * 1024,
            retries: 3,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

pub struct Gateway {
    provider: Box<dyn Provider>,
    memory: Mutex<HashMap<String, AnnotationResult>>,
    disk: Option<DiskCache>,
    config: GatewayConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.provenance())
            .field("disk", &self.disk)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, config: GatewayConfig) -> Self {
        Self {
            provider,
            memory: Mutex::new(HashMap::new()),
            disk: None,
            config,
        }
    }

    pub fn mock() -> Self {
        Self::new(Box::new(MockProvider::default()), GatewayConfig::default())
    }

    pub fn with_disk_cache(mut self, cache: DiskCache) -> Self {
        self.disk = Some(cache);
        self
    }

    fn cached(&self, task_id: &str) -> Result<Option<AnnotationResult>, GatewayError> {
        if let Some(r) = self.memory.lock().unwrap().get(task_id) {
            return Ok(Some(r.clone()));
        }
        if let Some(disk) = &self.disk {
            if let Some(r) = disk.get(task_id)? {
                self.memory.lock().unwrap().insert(task_id.to_string(), r.clone());
                return Ok(Some(r));
            }
        }
        Ok(None)
    }

    fn check_content(task: &AnnotationTask, content: &ResultContent) -> Result<(), GatewayError> {
        let bad = |m: &str| GatewayError::Parse {
            task_id: task.task_id.clone(),
            message: m.into(),
        };
        match (task.kind, content) {
            (TaskKind::Embed, ResultContent::Vector { values }) => {
                let norm = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(bad("embedding is not unit-normalized"));
                }
            }
            (TaskKind::Judge, ResultContent::Judgment { .. })
            | (TaskKind::Relabel, ResultContent::Label { .. })
            | (TaskKind::Summarize, ResultContent::Summary { .. })
            | (TaskKind::ClassifySyntactic, ResultContent::Class { .. })
            | (TaskKind::AssignCluster, ResultContent::ClusterIndex { .. }) => {}
            _ => return Err(bad("result shape does not match task kind")),
        }
        Ok(())
    }

    pub fn submit(&self, task: &AnnotationTask) -> Result<AnnotationResult, GatewayError> {
        let size = task.payload_bytes();
        if size > self.config.payload_budget {
            return Err(GatewayError::Budget {
                task_id: task.task_id.clone(),
                size,
                budget: self.config.payload_budget,
            });
        }
        if let Some(mut hit) = self.cached(&task.task_id)? {
            hit.provider = Provenance::Cache;
            return Ok(hit);
        }
        let mut attempt = 0;
        let content = loop {
            attempt += 1;
            match self.provider.complete(task) {
                Ok(c) => break c,
                Err(e) if self.provider.retryable(&e) && attempt <= self.config.retries => {
                    log::warn!("task {}: attempt {attempt} failed: {e}", task.task_id);
                    std::thread::sleep(self.config.retry_backoff * attempt);
                }
                Err(e) if self.provider.retryable(&e) => {
                    return Err(GatewayError::Exhausted {
                        task_id: task.task_id.clone(),
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        };
        Self::check_content(task, &content)?;
        let result = AnnotationResult {
            task_id: task.task_id.clone(),
            kind: task.kind,
            content,
            provider: self.provider.provenance(),
        };
        if let Some(disk) = &self.disk {
            disk.put(&result)?;
        }
        self.memory.lock().unwrap().insert(task.task_id.clone(), result.clone());
        Ok(result)
    }

    /// Results in input order. Identical tasks are dispatched once; at most
    /// `max_in_flight` provider calls run at a time. Failures stay per-slot.
    pub fn submit_batch(
        &self,
        tasks: &[AnnotationTask],
        max_in_flight: usize,
    ) -> Vec<Result<AnnotationResult, GatewayError>> {
        let max_in_flight = max_in_flight.max(1);
        let mut unique: Vec<&AnnotationTask> = Vec::new();
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let slots: Vec<usize> = tasks
            .iter()
            .map(|t| {
                *slot_of.entry(t.task_id.as_str()).or_insert_with(|| {
                    unique.push(t);
                    unique.len() - 1
                })
            })
            .collect();

        let results: Vec<Mutex<Option<Result<AnnotationResult, GatewayError>>>> =
            (0..unique.len()).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = max_in_flight.min(unique.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= unique.len() {
                        break;
                    }
                    let r = self.submit(unique[i]);
                    *results[i].lock().unwrap() = Some(r);
                });
            }
        });
        let results: Vec<Result<AnnotationResult, GatewayError>> = results
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot filled"))
            .collect();
        slots.into_iter().map(|i| results[i].clone()).collect()
    }

    /// Embeds `text` and returns the unit vector.
    pub fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let task = AnnotationTask::new(TaskKind::Embed, TaskPayload::default().with_query(text));
        let r = self.submit(&task)?;
        Ok(r.vector().expect("checked shape").to_vec())
    }
}
