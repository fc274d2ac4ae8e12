//! Autonomous agents.
//!
//! An agent owns a cursor into the timeline. Each [`Agent::step`] checks for
//! events past the cursor; if there are none it returns without touching the
//! provider. Otherwise it catches up on everything missed in one prompt,
//! asks the provider for a decision, and acts on it.

mod decision;
mod prompt;

use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decision::{parse_decision, Action, Decision};
pub use prompt::{
    assemble_prompt, file_generation_prompt, render_event, typing_now, typing_status_line,
    AgentSpec, InstitutionalKnowledge, PromptOptions, NEW_EVENTS_MARKER, NO_ONE_TYPING,
    PROTOCOL_INSTRUCTIONS,
};

use crate::provider::{ChatParams, ChatProvider, ProviderError, Usage};
use crate::timeline::{slug, Event, EventKind, FileKind, Seq, Timeline, TimelineError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningEntry {
    /// Timeline head the decision was made against.
    pub seq_at_decision: Seq,
    pub wall_time: u64,
    #[serde(flatten)]
    pub decision: Decision,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub cursor: Seq,
    pub reasoning_log: Vec<ReasoningEntry>,
    pub consecutive_none: u32,
    pub decision_calls: u64,
    pub file_calls: u64,
    pub failed_calls: u64,
    pub usage: Usage,
    /// Distinct heads seen with cursor < head, recorded before prompting.
    pub observed_heads: Vec<Seq>,
    /// Heads at which a decision call succeeded, in order.
    pub prompted_heads: Vec<Seq>,
}

pub type SharedState = Arc<Mutex<AgentState>>;

#[derive(Debug, Clone)]
pub struct AgentSettings {
    pub pause_range_ms: (u64, u64),
    pub idle_poll_ms: u64,
    pub params: ChatParams,
    pub code_extensions: Vec<String>,
    pub typing_expiry_ms: u64,
    /// `Some` discloses these human names in the system prompt.
    pub disclosed_humans: Option<Vec<String>>,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            pause_range_ms: (3_000, 15_000),
            idle_poll_ms: 1_000,
            params: ChatParams::default(),
            code_extensions: default_code_extensions(),
            typing_expiry_ms: 60_000,
            disclosed_humans: None,
        }
    }
}

pub fn default_code_extensions() -> Vec<String> {
    [
        ".java", ".py", ".js", ".ts", ".rs", ".go", ".c", ".cpp", ".h", ".cs", ".rb", ".kt",
        ".swift",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Events appended by this step, in order.
    pub events: Vec<Event>,
    pub decision: Option<Decision>,
    /// How long the driver should wait before the next step.
    pub pause_ms: u64,
}

pub struct Agent {
    spec: AgentSpec,
    settings: AgentSettings,
    knowledge: Arc<InstitutionalKnowledge>,
    provider: Arc<dyn ChatProvider>,
    rng: ChaCha8Rng,
    state: SharedState,
}

impl Agent {
    pub fn new(
        spec: AgentSpec,
        knowledge: Arc<InstitutionalKnowledge>,
        provider: Arc<dyn ChatProvider>,
        settings: AgentSettings,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            spec,
            settings,
            knowledge,
            provider,
            rng,
            state: Arc::new(Mutex::new(AgentState::default())),
        }
    }

    /// Starts the agent at `cursor`, so only later events trigger a prompt.
    pub fn starting_at(self, cursor: Seq) -> Self {
        self.state.lock().expect("agent state poisoned").cursor = cursor;
        self
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn state(&self) -> SharedState {
        Arc::clone(&self.state)
    }

    pub fn settings(&self) -> &AgentSettings {
        &self.settings
    }

    /// Draws a pause from the configured range.
    pub fn draw_pause(&mut self) -> u64 {
        let (lo, hi) = self.settings.pause_range_ms;
        if hi <= lo {
            lo
        } else {
            self.rng.random_range(lo..=hi)
        }
    }

    pub async fn step(&mut self, timeline: &Timeline) -> Result<StepOutcome, AgentError> {
        let cursor = self.state.lock().expect("agent state poisoned").cursor;
        let history = timeline.snapshot();
        let head = history.len() as Seq;
        if head <= cursor {
            return Ok(StepOutcome {
                events: Vec::new(),
                decision: None,
                pause_ms: self.settings.idle_poll_ms,
            });
        }

        {
            let mut st = self.state.lock().expect("agent state poisoned");
            if st.observed_heads.last() != Some(&head) {
                st.observed_heads.push(head);
            }
        }

        let typing = typing_now(
            &history,
            timeline.now_ms(),
            self.settings.typing_expiry_ms,
            Some(&self.spec.id),
        );
        let options = PromptOptions {
            params: self.settings.params.clone(),
            seen_through: cursor,
            disclosed_humans: self.settings.disclosed_humans.clone(),
        };
        let request = assemble_prompt(&self.spec, &self.knowledge, &history, &typing, &options);
        let response = match self.provider.complete(&request).await {
            Ok(r) => r,
            Err(e) => {
                self.state
                    .lock()
                    .expect("agent state poisoned")
                    .failed_calls += 1;
                return Err(e.into());
            }
        };

        let decision = parse_decision(&response.text);
        if decision.malformed {
            tracing::warn!(agent = %self.spec.id, "completion did not follow the decision protocol");
        }
        {
            let mut st = self.state.lock().expect("agent state poisoned");
            st.cursor = head;
            st.decision_calls += 1;
            st.usage += response.usage;
            st.prompted_heads.push(head);
            st.reasoning_log.push(ReasoningEntry {
                seq_at_decision: head,
                wall_time: timeline.now_ms(),
                decision: decision.clone(),
            });
            if decision.action == Action::None {
                st.consecutive_none += 1;
            } else {
                st.consecutive_none = 0;
            }
        }

        let mut events = Vec::new();
        match decision.action {
            Action::Message => {
                events.push(timeline.append(self.spec.id.clone(), EventKind::TypingStarted {})?);
                events.push(timeline.append(
                    self.spec.id.clone(),
                    EventKind::message(decision.content.clone()),
                )?);
            }
            Action::File => {
                events.push(
                    self.generate_file(timeline, &decision.content, head)
                        .await?,
                );
            }
            Action::None => {}
        }

        Ok(StepOutcome {
            events,
            decision: Some(decision),
            pause_ms: self.draw_pause(),
        })
    }

    /// Second-stage call that turns the agent's own file instructions into
    /// file contents, then appends the file. `seq` names the file when the
    /// instructions carry no `FILENAME:` line.
    pub async fn generate_file(
        &mut self,
        timeline: &Timeline,
        instructions: &str,
        seq: Seq,
    ) -> Result<Event, AgentError> {
        let request = file_generation_prompt(&self.spec, instructions, &self.settings.params);
        let response = match self.provider.complete(&request).await {
            Ok(r) => r,
            Err(e) => {
                self.state
                    .lock()
                    .expect("agent state poisoned")
                    .failed_calls += 1;
                return Err(e.into());
            }
        };
        {
            let mut st = self.state.lock().expect("agent state poisoned");
            st.file_calls += 1;
            st.usage += response.usage;
        }
        let filename = extract_filename(instructions)
            .unwrap_or_else(|| default_filename(&self.spec.role_name, seq));
        let kind = FileKind::infer(&filename, &self.settings.code_extensions);
        let content = strip_code_fence(&response.text);
        Ok(timeline.append(
            self.spec.id.clone(),
            EventKind::file(filename, kind, content),
        )?)
    }
}

/// First `FILENAME: <name>` line in the instructions.
pub fn extract_filename(instructions: &str) -> Option<String> {
    let re = Regex::new(r"(?i)^\s*FILENAME\s*:\s*(\S.*?)\s*$").expect("static regex");
    instructions
        .lines()
        .find_map(|l| re.captures(l).map(|c| c[1].to_string()))
}

pub fn default_filename(role_name: &str, seq: Seq) -> String {
    let role = slug(role_name);
    let role = if role.is_empty() {
        "file".to_string()
    } else {
        role
    };
    format!("{role}-{seq}.txt")
}

/// Removes one enclosing markdown code fence, if the whole text is fenced.
pub fn strip_code_fence(text: &str) -> String {
    let trimmed = text.trim();
    if trimmed.starts_with("```") && trimmed.ends_with("```") && trimmed.len() > 6 {
        let inner = &trimmed[3..trimmed.len() - 3];
        if let Some((_lang, body)) = inner.split_once('\n') {
            return body.trim_end_matches('\n').to_string();
        }
    }
    text.to_string()
}
