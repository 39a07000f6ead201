use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::task::AnnotationResult;
use super::GatewayError;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Append-only directory of `<task_id>.json` result records.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    fn path(&self, task_id: &str) -> PathBuf {
        self.dir.join(format!("{task_id}.json"))
    }

    pub fn get(&self, task_id: &str) -> Result<Option<AnnotationResult>, GatewayError> {
        let p = self.path(task_id);
        match fs::read(&p) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| GatewayError::Cache(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Cache(format!("{}: {e}", p.display()))),
        }
    }

    /// Write-temp-then-rename; an existing record is left untouched.
    pub fn put(&self, result: &AnnotationResult) -> Result<(), GatewayError> {
        let target = self.path(&result.task_id);
        if target.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!(
            ".tmp-{}-{}-{}",
            result.task_id,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let bytes = serde_json::to_vec_pretty(result).map_err(|e| GatewayError::Cache(e.to_string()))?;
        let err = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", target.display()));
        fs::write(&tmp, bytes).map_err(err)?;
        fs::rename(&tmp, &target).map_err(err)
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
