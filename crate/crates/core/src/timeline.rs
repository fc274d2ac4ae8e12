//! The shared event timeline.
//!
//! A single append-only log with one total order. Every participant, human or
//! AI, communicates only by appending here and reading from here. Sequence
//! numbers are assigned under the write lock, so concurrent appenders
//! serialize into one contiguous order starting at 1.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use crate::clock::Clock;

/// Position in the total order. The first event has seq 1; 0 means "nothing".
pub type Seq = u64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// The reserved author of `System` events.
    pub fn system() -> Self {
        Self("system".to_string())
    }

    /// Derives a stable id from a display name: lowercase, non-alphanumerics
    /// collapsed to `-`.
    pub fn from_name(name: &str) -> Self {
        Self(slug(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut dash = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Code,
    Document,
}

impl FileKind {
    /// Classifies a filename by extension against a set of code extensions
    /// (given with or without the leading dot, case-insensitive).
    pub fn infer(filename: &str, code_extensions: &[String]) -> Self {
        let ext = match filename.rsplit_once('.') {
            Some((stem, ext)) if !stem.is_empty() => ext.to_ascii_lowercase(),
            _ => return FileKind::Document,
        };
        let is_code = code_extensions
            .iter()
            .any(|e| e.trim_start_matches('.').eq_ignore_ascii_case(&ext));
        if is_code {
            FileKind::Code
        } else {
            FileKind::Document
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Join {
        name: String,
        role_name: String,
    },
    Message {
        text: String,
    },
    TypingStarted {},
    FileCreated {
        filename: String,
        file_kind: FileKind,
        content: String,
    },
    System {
        note: String,
    },
}

impl EventKind {
    pub fn message(text: impl Into<String>) -> Self {
        EventKind::Message { text: text.into() }
    }

    pub fn join(name: impl Into<String>, role_name: impl Into<String>) -> Self {
        EventKind::Join {
            name: name.into(),
            role_name: role_name.into(),
        }
    }

    pub fn file(
        filename: impl Into<String>,
        file_kind: FileKind,
        content: impl Into<String>,
    ) -> Self {
        EventKind::FileCreated {
            filename: filename.into(),
            file_kind,
            content: content.into(),
        }
    }

    /// Message or file: the events that make up a conversational turn.
    pub fn is_turn(&self) -> bool {
        matches!(
            self,
            EventKind::Message { .. } | EventKind::FileCreated { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: Seq,
    pub wall_time: u64,
    pub author: AgentId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimelineError {
    #[error("author `{0}` has not joined the timeline")]
    UnknownAuthor(AgentId),
    #[error("author `{0}` has already joined")]
    AlreadyJoined(AgentId),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("filename is empty")]
    EmptyFilename,
    #[error("file `{0}` already exists")]
    DuplicateFilename(String),
    #[error("join requires a non-empty name and role")]
    EmptyJoin,
    #[error("cursor {cursor} is beyond head {head}")]
    CursorBeyondHead { cursor: Seq, head: Seq },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: AgentId,
    pub name: String,
    pub role_name: String,
}

impl Participant {
    /// `Name (Role)`, the label used in transcripts and prompts.
    pub fn label(&self) -> String {
        format!("{} ({})", self.name, self.role_name)
    }
}

#[derive(Default)]
struct Inner {
    events: Vec<Event>,
    joined: HashSet<AgentId>,
    filenames: HashSet<String>,
}

/// Append-only, totally ordered event log. Share it behind an `Arc`.
pub struct Timeline {
    inner: RwLock<Inner>,
    clock: Arc<dyn Clock>,
    head_tx: watch::Sender<Seq>,
    auto_suffix: bool,
}

impl Timeline {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        let (head_tx, _) = watch::channel(0);
        Self {
            inner: RwLock::new(Inner::default()),
            clock,
            head_tx,
            auto_suffix: true,
        }
    }

    /// Rejects duplicate filenames instead of suffixing them.
    pub fn with_strict_filenames(mut self) -> Self {
        self.auto_suffix = false;
        self
    }

    pub fn append(&self, author: AgentId, kind: EventKind) -> Result<Event, TimelineError> {
        let mut kind = kind;
        match &kind {
            EventKind::Message { text } if text.trim().is_empty() => {
                return Err(TimelineError::EmptyMessage)
            }
            EventKind::FileCreated { filename, .. } if filename.trim().is_empty() => {
                return Err(TimelineError::EmptyFilename)
            }
            EventKind::Join { name, role_name }
                if name.trim().is_empty() || role_name.trim().is_empty() =>
            {
                return Err(TimelineError::EmptyJoin)
            }
            _ => {}
        }

        let mut inner = self.inner.write().expect("timeline lock poisoned");
        match &kind {
            EventKind::Join { .. } => {
                if inner.joined.contains(&author) {
                    return Err(TimelineError::AlreadyJoined(author));
                }
            }
            EventKind::System { .. } => {}
            _ => {
                if !inner.joined.contains(&author) {
                    return Err(TimelineError::UnknownAuthor(author));
                }
            }
        }

        if let EventKind::FileCreated { filename, .. } = &mut kind {
            let unique = unique_filename(&inner.filenames, filename, self.auto_suffix)?;
            *filename = unique;
        }

        let event = Event {
            seq: inner.events.len() as Seq + 1,
            wall_time: self.clock.now_ms(),
            author,
            kind,
        };
        match &event.kind {
            EventKind::Join { .. } => {
                inner.joined.insert(event.author.clone());
            }
            EventKind::FileCreated { filename, .. } => {
                inner.filenames.insert(filename.clone());
            }
            _ => {}
        }
        inner.events.push(event.clone());
        // Published while the write lock is held so subscribers observe heads
        // in append order.
        self.head_tx.send_replace(event.seq);
        Ok(event)
    }

    pub fn read_since(&self, cursor: Seq) -> Result<Vec<Event>, TimelineError> {
        let inner = self.inner.read().expect("timeline lock poisoned");
        let head = inner.events.len() as Seq;
        if cursor > head {
            return Err(TimelineError::CursorBeyondHead { cursor, head });
        }
        Ok(inner.events[cursor as usize..].to_vec())
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.inner
            .read()
            .expect("timeline lock poisoned")
            .events
            .clone()
    }

    pub fn head(&self) -> Seq {
        self.inner
            .read()
            .expect("timeline lock poisoned")
            .events
            .len() as Seq
    }

    pub fn get(&self, seq: Seq) -> Option<Event> {
        let inner = self.inner.read().expect("timeline lock poisoned");
        seq.checked_sub(1)
            .and_then(|i| inner.events.get(i as usize))
            .cloned()
    }

    pub fn is_joined(&self, author: &AgentId) -> bool {
        self.inner
            .read()
            .expect("timeline lock poisoned")
            .joined
            .contains(author)
    }

    /// Receives the head after every append. Combine with `read_since` for a
    /// gap-free feed.
    pub fn subscribe(&self) -> watch::Receiver<Seq> {
        self.head_tx.subscribe()
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn roster(&self) -> Vec<Participant> {
        roster(&self.snapshot())
    }
}

fn unique_filename(
    taken: &HashSet<String>,
    requested: &str,
    auto_suffix: bool,
) -> Result<String, TimelineError> {
    if !taken.contains(requested) {
        return Ok(requested.to_string());
    }
    if !auto_suffix {
        return Err(TimelineError::DuplicateFilename(requested.to_string()));
    }
    // keep the extension last so the file kind is unchanged
    let (stem, ext) = match requested.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => (stem, format!(".{ext}")),
        _ => (requested, String::new()),
    };
    let mut version = 2;
    loop {
        let candidate = format!("{stem}.v{version}{ext}");
        if !taken.contains(&candidate) {
            return Ok(candidate);
        }
        version += 1;
    }
}

/// Participants announced by `Join` events, in join order.
pub fn roster(events: &[Event]) -> Vec<Participant> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Join { name, role_name } => Some(Participant {
                id: e.author.clone(),
                name: name.clone(),
                role_name: role_name.clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Writes events as JSON Lines, one event per line.
pub fn write_jsonl<W: Write>(mut out: W, events: &[Event]) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(events: &[Event]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, events).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Event>, serde_json::Error> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}
