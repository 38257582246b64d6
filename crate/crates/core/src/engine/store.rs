use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::model::{
    PrimingLink, QueuedPoint, Sprint, SprintId, SprintStatus, SprintSummary, ThreadId,
    ThreadRecord, TickScore, Trial, TrialStatus,
};
use crate::error::{Error, Result};
use crate::hyperband::RungRecord;
use crate::space::SearchSpace;

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventBody {
    ThreadCreated {
        thread: ThreadRecord,
    },
    SpaceCommitted {
        space: SearchSpace,
        #[serde(default)]
        source_sprint: Option<SprintId>,
    },
    SprintCreated {
        sprint: Sprint,
    },
    TrialPrimed {
        sprint: SprintId,
        trial: Trial,
    },
    PrimingLinked {
        sprint: SprintId,
        link: PrimingLink,
        #[serde(default)]
        queued: Vec<QueuedPoint>,
    },
    TrialStarted {
        sprint: SprintId,
        trial: Trial,
    },
    Tick {
        sprint: SprintId,
        trial: u64,
        report: TickScore,
        #[serde(default)]
        rungs: Vec<RungRecord>,
    },
    TrialFinished {
        sprint: SprintId,
        trial: u64,
        status: TrialStatus,
        final_score: Option<f64>,
        epochs: u32,
        #[serde(default)]
        error: Option<String>,
    },
    SprintStatus {
        sprint: SprintId,
        status: SprintStatus,
    },
    SprintSummary {
        summary: SprintSummary,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(rename = "thread_id")]
    pub thread: ThreadId,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Append-only JSON-lines log, one file per thread, plus snapshot files.
/// Without a root directory the log is kept in memory only.
#[derive(Debug, Default)]
pub struct EventLog {
    root: Option<PathBuf>,
    files: HashMap<ThreadId, File>,
    memory: Vec<Event>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog::default()
    }

    /// Opens (creating if needed) a store directory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("threads"))?;
        Ok(EventLog {
            root: Some(root),
            files: HashMap::new(),
            memory: Vec::new(),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn thread_dir(root: &Path, thread: &str) -> PathBuf {
        root.join("threads").join(thread)
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let Some(root) = &self.root else {
            self.memory.push(event.clone());
            return Ok(());
        };
        let file = match self.files.get_mut(&event.thread) {
            Some(f) => f,
            None => {
                let dir = Self::thread_dir(root, &event.thread);
                fs::create_dir_all(dir.join("snapshots"))?;
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("events.jsonl"))?;
                self.files.entry(event.thread.clone()).or_insert(f)
            }
        };
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.flush()?;
        Ok(())
    }

    /// Every event in the store ordered by sequence number. A torn final line
    /// in a thread log is dropped and truncated away; corruption elsewhere is
    /// an error.
    pub fn read_all(&self) -> Result<Vec<Event>> {
        let Some(root) = &self.root else {
            return Ok(self.memory.clone());
        };
        let mut events = Vec::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(root.join("threads"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("events.jsonl").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            events.extend(read_log(&dir.join("events.jsonl"))?);
        }
        events.sort_by_key(|e| e.seq);
        Ok(events)
    }

    /// Writes `value` as `threads/{thread}/snapshots/{name}.json`.
    pub fn write_snapshot<T: Serialize>(&self, thread: &str, name: &str, value: &T) -> Result<()> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let dir = Self::thread_dir(root, thread).join("snapshots");
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!(".{name}.json.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
        fs::rename(tmp, dir.join(format!("{name}.json")))?;
        Ok(())
    }
}

fn read_log(path: &Path) -> Result<Vec<Event>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut offset = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let complete = buf.last() == Some(&b'\n');
        match serde_json::from_slice::<Event>(&buf) {
            Ok(e) if complete => events.push(e),
            parsed => {
                let at_end = reader.fill_buf()?.is_empty();
                if !at_end {
                    let reason = parsed.err().map(|e| e.to_string()).unwrap_or_default();
                    return Err(Error::InvalidArgument(format!(
                        "corrupt event log {} at byte {offset}: {reason}",
                        path.display()
                    )));
                }
                log::warn!("dropping torn final line of {}", path.display());
                OpenOptions::new().write(true).open(path)?.set_len(offset)?;
                break;
            }
        }
        offset += n as u64;
    }
    Ok(events)
}
