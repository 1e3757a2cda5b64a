//! Sessions and datasets by id, optionally mirrored to a data directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use scsim_core::Dataset;

use crate::session::Session;
use crate::SessionError;

pub const ENV_DATA_DIR: &str = "SCSIM_DATA_DIR";

/// One writer at a time per session, many readers.
pub type SharedSession = Arc<RwLock<Session>>;

#[derive(Default)]
pub struct Store {
    dir: Option<PathBuf>,
    datasets: BTreeMap<String, Arc<Dataset>>,
    sessions: BTreeMap<String, SharedSession>,
    next: usize,
}

impl Store {
    /// Persists session exports under `dir` when given.
    pub fn new(dir: Option<PathBuf>) -> Result<Self, SessionError> {
        let mut store = Self {
            dir,
            ..Self::default()
        };
        store.load_existing()?;
        Ok(store)
    }

    pub fn from_env() -> Result<Self, SessionError> {
        Self::new(std::env::var_os(ENV_DATA_DIR).map(PathBuf::from))
    }

    fn load_existing(&mut self) -> Result<(), SessionError> {
        let Some(dir) = self.dir.clone() else {
            return Ok(());
        };
        std::fs::create_dir_all(&dir)?;
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            match Session::import(&std::fs::read_to_string(&path)?) {
                Ok(s) => {
                    self.bump(&id);
                    self.sessions.insert(id, Arc::new(RwLock::new(s)));
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(())
    }

    fn bump(&mut self, id: &str) {
        if let Some(n) = id.rsplit('-').next().and_then(|n| n.parse::<usize>().ok()) {
            self.next = self.next.max(n + 1);
        }
    }

    fn fresh_id(&mut self, prefix: &str) -> String {
        let id = format!("{prefix}-{}", self.next);
        self.next += 1;
        id
    }

    pub fn add_dataset(&mut self, dataset: Dataset) -> String {
        let id = self.fresh_id("dataset");
        self.datasets.insert(id.clone(), Arc::new(dataset));
        id
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<Dataset>> {
        self.datasets.get(id).cloned()
    }

    pub fn add_session(&mut self, session: Session) -> Result<String, SessionError> {
        let id = self.fresh_id("session");
        self.persist(&id, &session)?;
        self.sessions.insert(id.clone(), Arc::new(RwLock::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<SharedSession, SessionError> {
        self.sessions
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> impl Iterator<Item = &String> {
        self.sessions.keys()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Writes the session export to `<dir>/<id>.jsonl`; no-op without a directory.
    pub fn persist(&self, id: &str, session: &Session) -> Result<(), SessionError> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!("{id}.jsonl.tmp"));
            std::fs::write(&tmp, session.export()?)?;
            std::fs::rename(tmp, dir.join(format!("{id}.jsonl")))?;
        }
        Ok(())
    }
}
