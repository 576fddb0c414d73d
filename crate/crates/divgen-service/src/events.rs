//! Append-only annotation event log and dataset snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use divgen::pipeline::{Dataset, OosState, Provenance};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ServiceError, ServiceResult};

/// What a human did to one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "snake_case")]
pub enum Action {
    /// Set the current label.
    Relabel(String),
    /// `true` marks the instance out of scope, `false` in scope.
    MarkOos(bool),
    /// Accept the current label as is.
    Confirm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub event_id: u64,
    pub timestamp: String,
    pub instance_id: String,
    #[serde(flatten)]
    pub action: Action,
    pub annotator: String,
}

/// Applies one event to `dataset`. Relabel and confirm make the label a
/// human decision; mark_oos only records scope.
pub fn apply_event(dataset: &mut Dataset, event: &AnnotationEvent) -> ServiceResult<()> {
    let labels = dataset.labels().to_vec();
    let inst = dataset
        .instances
        .iter_mut()
        .find(|i| i.id == event.instance_id)
        .ok_or_else(|| ServiceError::unknown_instance(&event.instance_id))?;
    match &event.action {
        Action::Relabel(label) => {
            if !labels.contains(label) {
                return Err(ServiceError::invalid_label(label));
            }
            inst.current_label = label.clone();
            inst.label_provenance = Provenance::Human;
        }
        Action::MarkOos(flag) => {
            inst.oos_state = if *flag { OosState::OutOfScope } else { OosState::InScope };
        }
        Action::Confirm => inst.label_provenance = Provenance::Human,
    }
    Ok(())
}

/// JSON-lines event log. Every append is flushed and fsynced before it
/// returns.
pub struct EventLog {
    path: PathBuf,
    file: File,
    last_id: u64,
}

impl EventLog {
    /// Opens (creating if needed) and reads back all complete events. A torn
    /// final line left by a crash mid-write is cut off.
    pub fn open(path: &Path) -> ServiceResult<(Self, Vec<AnnotationEvent>)> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        let mut events: Vec<AnnotationEvent> = Vec::new();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                if !line.ends_with('\n') {
                    log::warn!("dropping torn final event line in {}", path.display());
                    break;
                }
                let event: AnnotationEvent = serde_json::from_str(line.trim_end()).map_err(|e| {
                    ServiceError::internal(format!("corrupt event log {}: {e}", path.display()))
                })?;
                if let Some(prev) = events.last() {
                    if event.event_id <= prev.event_id {
                        return Err(ServiceError::internal(format!(
                            "event ids not increasing in {} at {}",
                            path.display(),
                            event.event_id
                        )));
                    }
                }
                events.push(event);
                good_len += n as u64;
            }
        }
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
            file.sync_all()?;
        }
        let last_id = events.last().map_or(0, |e| e.event_id);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                last_id,
            },
            events,
        ))
    }

    pub fn last_id(&self) -> u64 {
        self.last_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Assigns the next id, writes the event durably and returns it.
    pub fn append(&mut self, instance_id: &str, action: Action, annotator: &str) -> ServiceResult<AnnotationEvent> {
        let event = AnnotationEvent {
            event_id: self.last_id + 1,
            timestamp: chrono::Utc::now().to_rfc3339(),
            instance_id: instance_id.to_string(),
            action,
            annotator: annotator.to_string(),
        };
        let mut line = serde_json::to_string(&event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.last_id = event.event_id;
        Ok(event)
    }
}

/// Dataset state after every event up to `last_event_id`, tied to the base
/// dataset it was derived from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_event_id: u64,
    pub base_sha256: String,
    pub dataset: String,
}

pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Snapshot {
    pub fn write(&self, path: &Path) -> ServiceResult<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(serde_json::to_string(self)?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// A readable snapshot, or `None` when missing or unusable.
    pub fn read(path: &Path) -> Option<Self> {
        let text = fs::read_to_string(path).ok()?;
        match serde_json::from_str(&text) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("ignoring unreadable snapshot {}: {e}", path.display());
                None
            }
        }
    }
}
