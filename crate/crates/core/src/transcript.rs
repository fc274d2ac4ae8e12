//! Markdown transcripts and their CSV form.
//!
//! A transcript is a sequence of blocks:
//!
//! ```text
//! **Peter (CEO)** 6:35 PM
//! Hello team
//!
//! **Boshen (Product Manager)** 6:36 PM
//! <File: PRD.docx>
//! 1. Introduction
//! ```
//!
//! Body lines that could be mistaken for structure (a leading `**`, a
//! leading `<File:`, or a leading backslash) are escaped with one backslash
//! on render and unescaped on parse.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clock::time_label;
use crate::timeline::{roster, Event, EventKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: String,
    pub role: String,
    pub time_label: String,
    pub message: String,
    pub is_file: bool,
    pub filename: Option<String>,
    /// Trailing text on the header line, e.g. a category tag on a coded
    /// transcript. Not part of the CSV form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

impl Turn {
    pub fn label(&self) -> String {
        format!("{} ({})", self.speaker, self.role)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTranscript {
    pub turns: Vec<Turn>,
    /// Non-blank lines before the first header that were skipped.
    pub skipped_lines: usize,
}

const ESCAPE: char = '\\';
const FILE_OPEN: &str = "<File: ";

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\*\*(?P<name>[^*()\n]+?) \((?P<role>[^*\n]+)\)\*\*(?:[ \t]+(?P<time>\d{1,2}:\d{2}[ \t]*[AaPp][Mm]))?(?P<rest>.*)$",
        )
        .expect("static regex")
    })
}

fn file_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^<File: (?P<name>.+)>$").expect("static regex"))
}

fn needs_escape(line: &str) -> bool {
    line.starts_with("**") || line.starts_with(ESCAPE) || line.starts_with("<File:")
}

fn escape_body(text: &str) -> String {
    text.split('\n')
        .map(|l| {
            if needs_escape(l) {
                format!("{ESCAPE}{l}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn unescape_line(line: &str) -> &str {
    line.strip_prefix(ESCAPE).unwrap_or(line)
}

/// Renders message and file events; joins, typing and system events are
/// left out. Times are shown in UTC.
pub fn render_markdown(events: &[Event]) -> String {
    render_markdown_with_offset(events, 0)
}

pub fn render_markdown_with_offset(events: &[Event], utc_offset_minutes: i32) -> String {
    let people = roster(events);
    let label_of = |e: &Event| {
        people
            .iter()
            .find(|p| p.id == e.author)
            .map(|p| p.label())
            .unwrap_or_else(|| format!("{} (Unknown)", e.author))
    };
    let mut blocks = Vec::new();
    for event in events {
        let body = match &event.kind {
            EventKind::Message { text } => escape_body(text),
            EventKind::FileCreated {
                filename, content, ..
            } => {
                format!("{FILE_OPEN}{filename}>\n{}", escape_body(content))
            }
            _ => continue,
        };
        blocks.push(format!(
            "**{}** {}\n{}\n",
            label_of(event),
            time_label(event.wall_time, utc_offset_minutes),
            body
        ));
    }
    blocks.join("\n")
}

/// Turns straight from events, equivalent to `parse_markdown(render_markdown(..))`.
pub fn turns_from_events(events: &[Event], utc_offset_minutes: i32) -> Vec<Turn> {
    let people = roster(events);
    let mut turns = Vec::new();
    for event in events {
        let (message, filename) = match &event.kind {
            EventKind::Message { text } => (text.clone(), None),
            EventKind::FileCreated {
                filename, content, ..
            } => (content.clone(), Some(filename.clone())),
            _ => continue,
        };
        let (speaker, role) = people
            .iter()
            .find(|p| p.id == event.author)
            .map(|p| (p.name.clone(), p.role_name.clone()))
            .unwrap_or_else(|| (event.author.to_string(), "Unknown".to_string()));
        turns.push(Turn {
            index: turns.len(),
            speaker,
            role,
            time_label: time_label(event.wall_time, utc_offset_minutes),
            message,
            is_file: filename.is_some(),
            filename,
            annotation: None,
        });
    }
    turns
}

fn clean_annotation(rest: &str) -> Option<String> {
    let t = rest
        .trim()
        .trim_start_matches(['[', '(', '{'])
        .trim_end_matches([']', ')', '}'])
        .trim();
    (!t.is_empty()).then(|| t.to_string())
}

pub fn parse_markdown(doc: &str) -> ParsedTranscript {
    let lines: Vec<&str> = doc.split('\n').collect();
    let headers: Vec<(usize, regex::Captures)> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            header_re()
                .captures(l.trim_end_matches('\r'))
                .map(|c| (i, c))
        })
        .collect();

    let first = headers.first().map(|(i, _)| *i).unwrap_or(lines.len());
    let skipped_lines = lines[..first]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .count();
    if skipped_lines > 0 {
        tracing::warn!(
            skipped_lines,
            "skipped content before the first transcript header"
        );
    }

    let mut turns = Vec::with_capacity(headers.len());
    for (n, (start, caps)) in headers.iter().enumerate() {
        let end = headers.get(n + 1).map(|(i, _)| *i).unwrap_or(lines.len());
        let mut body: Vec<&str> = lines[start + 1..end].to_vec();
        while body.last().is_some_and(|l| l.trim().is_empty()) {
            body.pop();
        }

        let mut filename = None;
        if let Some(m) = body.first().and_then(|l| file_marker_re().captures(l)) {
            filename = Some(m["name"].to_string());
            body.remove(0);
        }
        let message = body
            .iter()
            .map(|l| unescape_line(l))
            .collect::<Vec<_>>()
            .join("\n");

        turns.push(Turn {
            index: turns.len(),
            speaker: caps["name"].trim().to_string(),
            role: caps["role"].trim().to_string(),
            time_label: caps
                .name("time")
                .map(|m| m.as_str().to_string())
                .unwrap_or_default(),
            message,
            is_file: filename.is_some(),
            filename,
            annotation: caps.name("rest").and_then(|m| clean_annotation(m.as_str())),
        });
    }
    ParsedTranscript {
        turns,
        skipped_lines,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    index: usize,
    speaker: String,
    role: String,
    time: String,
    message: String,
    is_file: bool,
    filename: String,
}

pub fn to_csv(turns: &[Turn]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if turns.is_empty() {
        w.write_record([
            "index", "speaker", "role", "time", "message", "is_file", "filename",
        ])
        .expect("in-memory write");
    }
    for t in turns {
        w.serialize(CsvRow {
            index: t.index,
            speaker: t.speaker.clone(),
            role: t.role.clone(),
            time: t.time_label.clone(),
            message: t.message.clone(),
            is_file: t.is_file,
            filename: t.filename.clone().unwrap_or_default(),
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn from_csv(text: &str) -> Result<Vec<Turn>, csv::Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<CsvRow>()
        .map(|row| {
            row.map(|row| Turn {
                index: row.index,
                speaker: row.speaker,
                role: row.role,
                time_label: row.time,
                message: row.message,
                is_file: row.is_file,
                filename: (!row.filename.is_empty()).then_some(row.filename),
                annotation: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::{AgentId, FileKind};

    const PM_635: u64 = (18 * 60 + 35) * 60_000;

    fn ev(seq: u64, author: &str, kind: EventKind) -> Event {
        Event {
            seq,
            wall_time: PM_635,
            author: AgentId::new(author),
            kind,
        }
    }

    #[test]
    fn single_message_block() {
        let events = vec![
            ev(1, "peter", EventKind::join("Peter", "CEO")),
            ev(2, "peter", EventKind::TypingStarted {}),
            ev(3, "peter", EventKind::message("Hello team")),
        ];
        assert_eq!(
            render_markdown(&events),
            "**Peter (CEO)** 6:35 PM\nHello team\n"
        );
    }

    #[test]
    fn empty_events_empty_doc() {
        assert_eq!(render_markdown(&[]), "");
        assert!(parse_markdown("").turns.is_empty());
    }

    #[test]
    fn file_block_marker() {
        let events = vec![
            ev(1, "boshen", EventKind::join("Boshen", "Product Manager")),
            ev(
                2,
                "boshen",
                EventKind::file(
                    "PRD_TicTacToeGame.docx",
                    FileKind::Document,
                    "1. Introduction",
                ),
            ),
        ];
        let doc = render_markdown(&events);
        let body = doc.lines().nth(1).unwrap();
        assert_eq!(body, "<File: PRD_TicTacToeGame.docx>");
        let parsed = parse_markdown(&doc).turns;
        assert!(parsed[0].is_file);
        assert_eq!(
            parsed[0].filename.as_deref(),
            Some("PRD_TicTacToeGame.docx")
        );
        assert_eq!(parsed[0].message, "1. Introduction");
    }

    #[test]
    fn header_mimicking_content_survives() {
        let tricky = "**Fake (Role)** 1:00 PM\n\\path\n<File: nope>\nok";
        let events = vec![
            ev(1, "a", EventKind::join("Ann", "QA")),
            ev(2, "a", EventKind::message(tricky)),
            ev(3, "a", EventKind::message("<File: x>")),
        ];
        let turns = parse_markdown(&render_markdown(&events)).turns;
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].message, tricky);
        assert!(!turns[1].is_file);
        assert_eq!(turns[1].message, "<File: x>");
    }

    #[test]
    fn annotations_and_leading_junk() {
        let doc = "# Run 1\nnotes\n\n**Boshen (Product Manager)** 6:35 PM Shows Solidarity\nHello\n\n**Benjamin (Client)** 6:36 PM [Gives Suggestion]\nDo it\n";
        let parsed = parse_markdown(doc);
        assert_eq!(parsed.skipped_lines, 2);
        assert_eq!(parsed.turns.len(), 2);
        assert_eq!(
            parsed.turns[0].annotation.as_deref(),
            Some("Shows Solidarity")
        );
        assert_eq!(
            parsed.turns[1].annotation.as_deref(),
            Some("Gives Suggestion")
        );
        assert_eq!(parsed.turns[1].time_label, "6:36 PM");
        assert_eq!(parsed.turns[1].index, 1);
    }

    #[test]
    fn csv_quoting() {
        let turn = Turn {
            index: 0,
            speaker: "Peter".into(),
            role: "CEO".into(),
            time_label: "6:35 PM".into(),
            message: "Hi, \"team\"\nline two".into(),
            is_file: false,
            filename: None,
            annotation: None,
        };
        let csv = to_csv(std::slice::from_ref(&turn));
        assert!(csv.starts_with("index,speaker,role,time,message,is_file,filename\n"));
        assert!(csv.contains("\"Hi, \"\"team\"\"\nline two\""));
        assert_eq!(from_csv(&csv).unwrap(), vec![turn]);
    }

    #[test]
    fn one_turn_is_two_lines() {
        let turn = Turn {
            index: 0,
            speaker: "A".into(),
            role: "B".into(),
            time_label: "1:00 PM".into(),
            message: "hi".into(),
            is_file: false,
            filename: None,
            annotation: None,
        };
        assert_eq!(to_csv(&[turn]).lines().count(), 2);
        assert_eq!(to_csv(&[]).lines().count(), 1);
    }

    #[test]
    fn turns_from_events_matches_parse() {
        let events = vec![
            ev(1, "a", EventKind::join("Ann", "QA")),
            ev(2, "a", EventKind::message("one")),
            ev(3, "a", EventKind::file("t.py", FileKind::Code, "print(1)")),
        ];
        assert_eq!(
            turns_from_events(&events, 0),
            parse_markdown(&render_markdown(&events)).turns
        );
    }
}
