//! Service settings and the append-only JSONL logs.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, LineWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const BIND_ENV: &str = "MEDREPLY_BIND";
pub const ARTIFACT_DIR_ENV: &str = "MEDREPLY_ARTIFACT_DIR";

const MIN_BODY_BYTES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub artifact_dir: PathBuf,
    /// Overrides the threshold stored with the artifacts.
    pub threshold_p: Option<f64>,
    /// Overrides the suggestion count stored with the artifacts.
    pub k: Option<usize>,
    /// One JSONL line per /suggest request, including the patient text.
    pub request_log: Option<PathBuf>,
    /// Selection events that carry a session id; never holds patient text.
    pub selection_log: Option<PathBuf>,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            artifact_dir: PathBuf::from("artifacts"),
            threshold_p: None,
            k: None,
            request_log: None,
            selection_log: None,
            max_body_bytes: 64 * 1024,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Config(m));
        if let Some(k) = self.k {
            if k == 0 {
                return bad("k must be at least 1".into());
            }
        }
        if let Some(p) = self.threshold_p {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("threshold_p must lie in [0, 1], got {p}"));
            }
        }
        if self.max_body_bytes < MIN_BODY_BYTES {
            return bad(format!(
                "max_body_bytes must be at least {MIN_BODY_BYTES}, got {}",
                self.max_body_bytes
            ));
        }
        Ok(())
    }

    /// Reads a TOML file; relative log and artifact paths stay relative to
    /// the working directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `MEDREPLY_BIND` and `MEDREPLY_ARTIFACT_DIR` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(bind) = std::env::var(BIND_ENV) {
            self.bind = bind;
        }
        if let Ok(dir) = std::env::var(ARTIFACT_DIR_ENV) {
            self.artifact_dir = PathBuf::from(dir);
        }
        self
    }
}

/// Line-buffered append-only writer shared by request handlers.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    out: Mutex<LineWriter<File>>,
}

impl JsonlLog {
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_owned(),
            out: Mutex::new(LineWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, record: &T) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        out.write_all(&line)
    }
}

/// What the client reports after a suggestion was used or ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub request_id: String,
    /// 1-based rank of the chosen suggestion; `None` when the doctor typed
    /// their own reply.
    #[serde(default)]
    pub chosen_rank: Option<usize>,
    /// Unix milliseconds; filled in by the server when absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub session_id: Option<String>,
}

pub fn read_selection_log(path: &Path) -> Result<Vec<SelectionEvent>, ServiceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| ServiceError::Config(format!("selection log: {e}")))?);
    }
    Ok(events)
}

/// Fraction of events whose chosen rank is at most `k`; `None` for an empty log.
pub fn online_precision_at_k(events: &[SelectionEvent], k: usize) -> Option<f64> {
    if events.is_empty() {
        return None;
    }
    let hits = events.iter().filter(|e| e.chosen_rank.is_some_and(|r| r <= k)).count();
    Some(hits as f64 / events.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ServiceConfig::default().validate().is_ok());
        for cfg in [
            ServiceConfig { k: Some(0), ..Default::default() },
            ServiceConfig { max_body_bytes: 1023, ..Default::default() },
            ServiceConfig { threshold_p: Some(1.5), ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn config_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("service.toml");
        std::fs::write(&path, "bind = \"0.0.0.0:9000\"\nk = 5\nmax_body_bytes = 2048\n").unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        assert_eq!(cfg.k, Some(5));
        assert_eq!(cfg.artifact_dir, PathBuf::from("artifacts"));

        std::fs::write(&path, "bnid = \"x\"\n").unwrap();
        assert!(ServiceConfig::load(&path).is_err());
    }

    #[test]
    fn online_precision() {
        let ev = |r: Option<usize>| SelectionEvent {
            request_id: "r".into(),
            chosen_rank: r,
            timestamp: None,
            session_id: None,
        };
        let events = [ev(Some(1)), ev(Some(3)), ev(None), ev(Some(2))];
        assert_eq!(online_precision_at_k(&events, 3), Some(0.75));
        assert_eq!(online_precision_at_k(&events, 1), Some(0.25));
        assert_eq!(online_precision_at_k(&[], 3), None);
    }

    #[test]
    fn log_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/sel.jsonl");
        let log = JsonlLog::open(&path).unwrap();
        let e = SelectionEvent {
            request_id: "a".into(),
            chosen_rank: Some(2),
            timestamp: Some(7),
            session_id: Some("s".into()),
        };
        log.append(&e).unwrap();
        log.append(&e).unwrap();
        drop(log);
        let again = JsonlLog::open(&path).unwrap();
        again.append(&e).unwrap();
        assert_eq!(read_selection_log(&path).unwrap(), vec![e.clone(), e.clone(), e]);
    }
}
