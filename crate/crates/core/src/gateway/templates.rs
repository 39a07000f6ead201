//! Prompt templates, shipped as versioned data files. A template id such as
//! `judge.v1` names `templates/judge.v1.txt`; a directory override lets users
//! edit prompts, and since the id is part of the task hash, a new id never
//! reuses stale cached results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::task::AnnotationTask;
use super::GatewayError;

const BUILTIN: &[(&str, &str)] = &[
    ("relabel.v1", include_str!("../../templates/relabel.v1.txt")),
    ("judge.v1", include_str!("../../templates/judge.v1.txt")),
    ("summarize.v1", include_str!("../../templates/summarize.v1.txt")),
    (
        "classify_syntactic.v1",
        include_str!("../../templates/classify_syntactic.v1.txt"),
    ),
    (
        "assign_cluster.v1",
        include_str!("../../templates/assign_cluster.v1.txt"),
    ),
    ("embed.v1", include_str!("../../templates/embed.v1.txt")),
];

#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    dir: Option<PathBuf>,
}

impl TemplateStore {
    pub fn builtin() -> Self {
        Self { dir: None }
    }

    /// Looks in `dir` first, then falls back to the built-in set.
    pub fn with_dir(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: Some(dir.as_ref().to_path_buf()),
        }
    }

    pub fn get(&self, template_id: &str) -> Result<String, GatewayError> {
        if let Some(dir) = &self.dir {
            let p = dir.join(format!("{template_id}.txt"));
            if p.exists() {
                return std::fs::read_to_string(&p)
                    .map_err(|e| GatewayError::Template(format!("{}: {e}", p.display())));
            }
        }
        BUILTIN
            .iter()
            .find(|(id, _)| *id == template_id)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| GatewayError::Template(format!("unknown template {template_id:?}")))
    }

    pub fn render(&self, task: &AnnotationTask) -> Result<String, GatewayError> {
        let template = self.get(&task.template_id)?;
        let mut exhibits = String::new();
        for (n, ex) in task.payload.exhibits.iter().enumerate() {
            let _ = write!(exhibits, "[{}] ({})", n + 1, ex.role);
            if let Some(id) = &ex.doc_id {
                let _ = write!(exhibits, " {id}");
            }
            let _ = writeln!(exhibits, "\n{}", ex.text);
            for (k, v) in &ex.fields {
                let _ = writeln!(exhibits, "  {k}: {v}");
            }
            exhibits.push('\n');
        }
        let params = serde_json::to_string(&task.payload.params).unwrap_or_default();
        Ok(template
            .replace("{{query}}", task.payload.query.as_deref().unwrap_or(""))
            .replace("{{exhibits}}", exhibits.trim_end())
            .replace("{{params}}", &params))
    }
}
