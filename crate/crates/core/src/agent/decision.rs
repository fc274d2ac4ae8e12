//! The tagged plain-text decision protocol.
//!
//! ```text
//! ACTION: MESSAGE | FILE | NONE
//! REASONING: free text, may span lines
//! CONTENT: free text, may span lines
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Message,
    File,
    None,
}

impl Action {
    fn parse(word: &str) -> Option<Self> {
        match word.trim().to_ascii_uppercase().as_str() {
            "MESSAGE" => Some(Action::Message),
            "FILE" => Some(Action::File),
            "NONE" => Some(Action::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub reasoning: String,
    /// Message body for `Message`, file instructions for `File`, empty for `None`.
    pub content: String,
    /// Set when the completion did not follow the protocol and was
    /// downgraded to `None`.
    #[serde(default)]
    pub malformed: bool,
}

impl Decision {
    pub fn none(reasoning: impl Into<String>) -> Self {
        Self {
            action: Action::None,
            reasoning: reasoning.into(),
            content: String::new(),
            malformed: false,
        }
    }

    fn fallback(raw: &str) -> Self {
        Self {
            malformed: true,
            ..Self::none(raw.trim())
        }
    }
}

/// Strips a case-insensitive `TAG:` prefix, returning the remainder.
fn tagged<'a>(line: &'a str, tag: &str) -> Option<&'a str> {
    let trimmed = line.trim_start();
    let head = trimmed.get(..tag.len())?;
    if !head.eq_ignore_ascii_case(tag) {
        return None;
    }
    trimmed[tag.len()..].trim_start().strip_prefix(':')
}

/// Parses a completion. Never fails: anything off-protocol becomes a
/// `None` decision with the raw text kept as reasoning.
pub fn parse_decision(text: &str) -> Decision {
    let mut lines = text.lines();
    let first = lines.by_ref().find(|l| !l.trim().is_empty());
    let action = match first
        .and_then(|l| tagged(l, "ACTION"))
        .and_then(Action::parse)
    {
        Some(a) => a,
        None => return Decision::fallback(text),
    };

    enum Section {
        Reasoning,
        Content,
    }
    let mut section = Section::Reasoning;
    let mut reasoning: Vec<&str> = Vec::new();
    let mut content: Vec<&str> = Vec::new();
    for line in lines {
        match section {
            Section::Reasoning => {
                if let Some(rest) = tagged(line, "CONTENT") {
                    section = Section::Content;
                    content.push(rest.strip_prefix(' ').unwrap_or(rest));
                } else if let Some(rest) = tagged(line, "REASONING") {
                    reasoning.push(rest.trim_start());
                } else {
                    reasoning.push(line);
                }
            }
            Section::Content => content.push(line),
        }
    }
    let reasoning = reasoning.join("\n").trim().to_string();
    let content = content.join("\n").trim().to_string();

    match action {
        Action::None => Decision::none(reasoning),
        Action::Message | Action::File if content.is_empty() => Decision::fallback(text),
        _ => Decision {
            action,
            reasoning,
            content,
            malformed: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_with_reasoning() {
        let d = parse_decision("ACTION: NONE\nREASONING: waiting for the PRD");
        assert_eq!(d, Decision::none("waiting for the PRD"));
    }

    #[test]
    fn message_with_content() {
        let d = parse_decision("ACTION: MESSAGE\nREASONING: greet\nCONTENT: Hello team");
        assert_eq!(d.action, Action::Message);
        assert_eq!(d.reasoning, "greet");
        assert_eq!(d.content, "Hello team");
        assert!(!d.malformed);
    }

    #[test]
    fn garbage_falls_back() {
        let d = parse_decision("zzz");
        assert_eq!(d.action, Action::None);
        assert_eq!(d.reasoning, "zzz");
        assert!(d.malformed);
        assert!(d.content.is_empty());
    }

    #[test]
    fn empty_text_falls_back() {
        let d = parse_decision("");
        assert!(d.malformed);
        assert_eq!(d.action, Action::None);
    }

    #[test]
    fn multiline_sections_and_leading_blank_lines() {
        let d = parse_decision(
            "\n\n  action: file\nREASONING: time to write\nthe PRD now\nCONTENT:\nFILENAME: PRD.docx\nCover the features.\nREASONING: not a tag here",
        );
        assert_eq!(d.action, Action::File);
        assert_eq!(d.reasoning, "time to write\nthe PRD now");
        assert_eq!(
            d.content,
            "FILENAME: PRD.docx\nCover the features.\nREASONING: not a tag here"
        );
    }

    #[test]
    fn message_without_content_is_malformed() {
        let d = parse_decision("ACTION: MESSAGE\nREASONING: oops");
        assert_eq!(d.action, Action::None);
        assert!(d.malformed);
    }

    #[test]
    fn none_drops_content() {
        let d = parse_decision("ACTION: NONE\nCONTENT: ignored");
        assert_eq!(d.action, Action::None);
        assert!(d.content.is_empty());
        assert!(!d.malformed);
    }

    #[test]
    fn unknown_action_falls_back() {
        let d = parse_decision("ACTION: DANCE\nCONTENT: x");
        assert!(d.malformed);
        assert_eq!(d.reasoning, "ACTION: DANCE\nCONTENT: x");
    }

    #[test]
    fn missing_reasoning_is_fine() {
        let d = parse_decision("ACTION: MESSAGE\nCONTENT: hi");
        assert_eq!(d.reasoning, "");
        assert_eq!(d.content, "hi");
    }
}
