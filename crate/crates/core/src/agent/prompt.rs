//! Prompt assembly for agent decisions and file generation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::assets;
use crate::provider::{ChatMessage, ChatParams, ChatRequest};
use crate::timeline::{AgentId, Event, EventKind, Participant, Seq};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub name: String,
    pub role_name: String,
    #[serde(default)]
    pub persona: String,
    #[serde(default, alias = "is_scripted_human")]
    pub is_human: bool,
}

impl AgentSpec {
    pub fn new(
        name: impl Into<String>,
        role_name: impl Into<String>,
        persona: impl Into<String>,
    ) -> Self {
        let name = name.into();
        Self {
            id: AgentId::from_name(&name),
            name,
            role_name: role_name.into(),
            persona: persona.into(),
            is_human: false,
        }
    }

    pub fn human(name: impl Into<String>, role_name: impl Into<String>) -> Self {
        Self {
            is_human: true,
            ..Self::new(name, role_name, "")
        }
    }

    pub fn label(&self) -> String {
        format!("{} ({})", self.name, self.role_name)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("agent name is empty".into());
        }
        if self.role_name.trim().is_empty() {
            return Err(format!("agent `{}` has an empty role", self.name));
        }
        if self.id.as_str().is_empty() {
            return Err(format!(
                "agent name `{}` has no usable characters",
                self.name
            ));
        }
        if !self.is_human && self.persona.trim().is_empty() {
            return Err(format!("AI agent `{}` has an empty persona", self.name));
        }
        Ok(())
    }
}

/// Shared team conventions, optionally extended with one collaborative move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstitutionalKnowledge {
    pub base: String,
    #[serde(default)]
    pub collaborative_move: Option<String>,
}

impl InstitutionalKnowledge {
    pub fn control() -> Self {
        Self {
            base: assets::knowledge_control().to_string(),
            collaborative_move: None,
        }
    }

    pub fn with_move(mut self, description: impl Into<String>) -> Self {
        self.collaborative_move = Some(description.into());
        self
    }

    /// The move sentence produced from the bundled template.
    pub fn move_sentence(description: &str) -> String {
        assets::knowledge_template().replace(assets::TEMPLATE_PLACEHOLDER, description)
    }

    pub fn render(&self) -> String {
        match &self.collaborative_move {
            Some(m) => format!("{} {}", self.base, Self::move_sentence(m)),
            None => self.base.clone(),
        }
    }
}

pub const PROTOCOL_INSTRUCTIONS: &str = "\
You are a member of a team that communicates only through one shared chat channel. \
Each time you are prompted, read the channel and decide whether to act: send a message, \
create a file, or do nothing.

Reply in exactly this format:
ACTION: MESSAGE | FILE | NONE
REASONING: <your private reasoning, never shown to the team>
CONTENT: <for MESSAGE, the message text; for FILE, instructions for generating the file, \
beginning with a line `FILENAME: <name>`; leave out for NONE>";

pub const NO_ONE_TYPING: &str = "No one is typing.";
pub const NEW_EVENTS_MARKER: &str = "--- new since your last check ---";

#[derive(Debug, Clone, Default)]
pub struct PromptOptions {
    pub params: ChatParams,
    /// Inserts a divider before the first event with seq greater than this.
    pub seen_through: Seq,
    /// Names of human participants, listed only when disclosure is on.
    pub disclosed_humans: Option<Vec<String>>,
}

fn identity(spec: &AgentSpec) -> String {
    format!("You are {}, the {} of the team.", spec.name, spec.role_name)
}

fn labels(events: &[Event]) -> HashMap<AgentId, String> {
    crate::timeline::roster(events)
        .into_iter()
        .map(|p: Participant| (p.id.clone(), p.label()))
        .collect()
}

fn join_names(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

pub fn typing_status_line(typing: &[String]) -> String {
    match typing.len() {
        0 => NO_ONE_TYPING.to_string(),
        1 => format!("{} is typing.", typing[0]),
        _ => format!("{} are typing.", join_names(typing)),
    }
}

/// Renders one event as a chat line; `None` for events that carry no line.
pub fn render_event(event: &Event, label: &str) -> Option<ChatMessage> {
    match &event.kind {
        EventKind::Join { .. } => Some(ChatMessage::new(label, "joined the channel.")),
        EventKind::Message { text } => Some(ChatMessage::new(label, text.clone())),
        EventKind::FileCreated {
            filename, content, ..
        } => Some(ChatMessage::new(
            format!("{label} shared file {filename}"),
            content.clone(),
        )),
        EventKind::System { note } => Some(ChatMessage::new("System", note.clone())),
        EventKind::TypingStarted {} => None,
    }
}

/// Builds the decision request: persona, institutional knowledge and the
/// action protocol in the system prompt; one line per event plus a final
/// typing status line in the message list.
pub fn assemble_prompt(
    spec: &AgentSpec,
    knowledge: &InstitutionalKnowledge,
    events: &[Event],
    typing: &[String],
    options: &PromptOptions,
) -> ChatRequest {
    let mut system = format!(
        "{} {}\n\nInstitutional knowledge:\n{}",
        identity(spec),
        spec.persona,
        knowledge.render()
    );
    if let Some(humans) = &options.disclosed_humans {
        let who = if humans.is_empty() {
            "none".to_string()
        } else {
            join_names(humans)
        };
        system.push_str(&format!("\n\nHuman participants on the team: {who}."));
    }
    system.push_str("\n\n");
    system.push_str(PROTOCOL_INSTRUCTIONS);

    let labels = labels(events);
    let mut messages = Vec::with_capacity(events.len() + 2);
    let mut marked = false;
    for event in events {
        if !marked && options.seen_through > 0 && event.seq > options.seen_through {
            messages.push(ChatMessage::new("", NEW_EVENTS_MARKER));
            marked = true;
        }
        let label = labels
            .get(&event.author)
            .cloned()
            .unwrap_or_else(|| event.author.to_string());
        if let Some(line) = render_event(event, &label) {
            messages.push(line);
        }
    }
    messages.push(ChatMessage::new("", typing_status_line(typing)));

    ChatRequest {
        system_prompt: system,
        messages,
        params: options.params.clone(),
    }
}

pub fn file_generation_prompt(
    spec: &AgentSpec,
    instructions: &str,
    params: &ChatParams,
) -> ChatRequest {
    let system = format!(
        "{} {}\n\nYou decided to create a file for the team. Write the complete contents of the file \
         described by your instructions below. Respond with the file contents only, without commentary.",
        identity(spec),
        spec.persona
    );
    ChatRequest {
        system_prompt: system,
        messages: vec![ChatMessage::new(spec.label(), instructions)],
        params: params.clone(),
    }
}

/// Display names of participants currently typing, in the order they
/// started. A typing event lapses when the same author posts a message or
/// file, or after `expiry_ms`.
pub fn typing_now(
    events: &[Event],
    now_ms: u64,
    expiry_ms: u64,
    exclude: Option<&AgentId>,
) -> Vec<String> {
    let names: HashMap<AgentId, String> = crate::timeline::roster(events)
        .into_iter()
        .map(|p| (p.id, p.name))
        .collect();
    let mut active: Vec<(AgentId, u64)> = Vec::new();
    for event in events {
        match &event.kind {
            EventKind::TypingStarted {} => {
                active.retain(|(a, _)| a != &event.author);
                active.push((event.author.clone(), event.wall_time));
            }
            EventKind::Message { .. } | EventKind::FileCreated { .. } => {
                active.retain(|(a, _)| a != &event.author);
            }
            _ => {}
        }
    }
    active
        .into_iter()
        .filter(|(a, started)| Some(a) != exclude && now_ms < started.saturating_add(expiry_ms))
        .map(|(a, _)| names.get(&a).cloned().unwrap_or_else(|| a.to_string()))
        .collect()
}
