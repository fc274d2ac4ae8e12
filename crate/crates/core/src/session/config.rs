//! Session configuration document (TOML or JSON).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::agent::{default_code_extensions, AgentSettings, AgentSpec, InstitutionalKnowledge};
use crate::assets;
use crate::clock::ClockMode;
use crate::coding::IpaCategory;
use crate::provider::{
    ChatParams, ChatProvider, HttpProvider, RetryPolicy, ScriptRule, ScriptedProvider,
    DEFAULT_AGENT_TEMPERATURE,
};
use crate::timeline::AgentId;

/// 2024-01-01 18:35:00 UTC.
pub const DEFAULT_SIM_START_MS: u64 = 1_704_134_100_000;
pub const DEFAULT_SIM_DEADLOCK_CAP_S: f64 = 2_000.0;
pub const DEFAULT_REAL_DEADLOCK_CAP_S: f64 = 1_800.0;
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_NUDGE: &str = "Hello, what is the progress so far?";

fn default_condition() -> String {
    "control".into()
}
fn default_pause_range() -> [f64; 2] {
    [3.0, 15.0]
}
fn one() -> f64 {
    1.0
}
fn default_typing_expiry() -> f64 {
    60.0
}
fn default_failure_budget() -> u32 {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_condition")]
    pub condition_name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clock_mode: ClockMode,
    #[serde(default = "default_pause_range")]
    pub pause_range_s: [f64; 2],
    #[serde(default = "one")]
    pub idle_poll_s: f64,
    /// Simulated-clock start; real runs use the system time.
    #[serde(default)]
    pub start_time_ms: Option<u64>,
    /// Offset applied to transcript time labels.
    #[serde(default)]
    pub utc_offset_minutes: i32,
    #[serde(default)]
    pub code_extensions: Option<Vec<String>>,
    #[serde(default = "default_typing_expiry")]
    pub typing_expiry_s: f64,
    /// Tell agents which participants are human.
    #[serde(default)]
    pub disclose_humans: bool,
    #[serde(default)]
    pub knowledge: KnowledgeConfig,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub human_playbook: Option<HumanPlaybook>,
    #[serde(default)]
    pub termination: TerminationRule,
    /// Session-clock seconds before a run is declared deadlocked.
    #[serde(default)]
    pub deadlock_cap_s: Option<f64>,
    /// Failed provider calls tolerated across the whole session.
    #[serde(default = "default_failure_budget")]
    pub provider_failure_budget: u32,
    /// Directory that relative script paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeConfig {
    pub base: String,
    /// A move description, or `ipa:<n>` for a category's own description.
    #[serde(default)]
    pub collaborative_move: Option<String>,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            base: format!("{}knowledge_control", assets::ASSET_PREFIX),
            collaborative_move: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Http,
    Scripted,
}

fn default_model() -> String {
    "gpt-4".into()
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
    #[serde(default)]
    pub initial_backoff_ms: Option<u64>,
    /// JSON file holding a list of script rules.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Http,
            endpoint: None,
            model: default_model(),
            api_key_env: default_key_env(),
            temperature: None,
            max_tokens: None,
            max_attempts: None,
            initial_backoff_ms: None,
            script: None,
            rules: Vec::new(),
        }
    }
}

impl ProviderConfig {
    pub fn params(&self) -> ChatParams {
        ChatParams {
            temperature: self.temperature.unwrap_or(DEFAULT_AGENT_TEMPERATURE),
            max_tokens: self.max_tokens.unwrap_or(ChatParams::default().max_tokens),
            model_name: self.model.clone(),
        }
    }

    fn script_rules(&self, base_dir: &Path, name: &str) -> Result<Vec<ScriptRule>, SessionError> {
        let mut rules = Vec::new();
        if let Some(path) = &self.script {
            let path = base_dir.join(path);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                SessionError::Config(format!("provider `{name}`: {}: {e}", path.display()))
            })?;
            let loaded: Vec<ScriptRule> = serde_json::from_str(&text).map_err(|e| {
                SessionError::Config(format!("provider `{name}`: {}: {e}", path.display()))
            })?;
            rules.extend(loaded);
        }
        rules.extend(self.rules.iter().cloned());
        Ok(rules)
    }

    /// Builds the provider. `scripted` forces script playback.
    pub fn build(
        &self,
        name: &str,
        base_dir: &Path,
        scripted: bool,
    ) -> Result<Arc<dyn ChatProvider>, SessionError> {
        if scripted || self.kind == ProviderKind::Scripted {
            if self.script.is_none() && self.rules.is_empty() {
                return Err(SessionError::Config(format!(
                    "provider `{name}` has no script"
                )));
            }
            return Ok(Arc::new(ScriptedProvider::new(
                self.script_rules(base_dir, name)?,
            )));
        }
        let key = std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| SessionError::MissingApiKey(self.api_key_env.clone()))?;
        let defaults = RetryPolicy::default();
        let retry = RetryPolicy {
            max_attempts: self.max_attempts.unwrap_or(defaults.max_attempts),
            initial_backoff_ms: self
                .initial_backoff_ms
                .unwrap_or(defaults.initial_backoff_ms),
        };
        let endpoint = self
            .endpoint
            .clone()
            .unwrap_or_else(|| DEFAULT_ENDPOINT.into());
        Ok(Arc::new(
            HttpProvider::new(endpoint, &self.model, Some(key)).with_retry(retry),
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    pub role_name: String,
    /// Persona text, or `asset:<name>`.
    #[serde(default)]
    pub persona: String,
    #[serde(default, alias = "is_scripted_human")]
    pub is_human: bool,
    /// Provider name; defaults to the only configured provider.
    #[serde(default)]
    pub provider: Option<String>,
}

impl AgentConfig {
    pub fn spec(&self) -> Result<AgentSpec, SessionError> {
        let persona =
            assets::resolve(&self.persona).map_err(|e| SessionError::Config(e.to_string()))?;
        let spec = AgentSpec {
            is_human: self.is_human,
            ..AgentSpec::new(&self.name, &self.role_name, persona)
        };
        spec.validate().map_err(SessionError::Config)?;
        Ok(spec)
    }
}

fn default_greet_delay() -> f64 {
    10.0
}
fn default_reply_delay() -> f64 {
    5.0
}
fn default_requirements() -> String {
    format!("{}tictactoe_task", assets::ASSET_PREFIX)
}
fn default_nudge() -> String {
    DEFAULT_NUDGE.into()
}
fn default_stall() -> f64 {
    60.0
}

/// Scripted client behaviour used to standardise the human across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanPlaybook {
    /// Human participant to drive; defaults to the first human in `agents`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_greet_delay")]
    pub greet_delay_s: f64,
    /// Seconds between a trigger and the human's reply to it.
    #[serde(default = "default_reply_delay")]
    pub reply_delay_s: f64,
    #[serde(default = "default_requirements")]
    pub requirements_text: String,
    #[serde(default)]
    pub clarification_answers: Vec<String>,
    #[serde(default = "default_nudge")]
    pub stall_nudge_text: String,
    #[serde(default = "default_stall")]
    pub stall_threshold_s: f64,
}

impl Default for HumanPlaybook {
    fn default() -> Self {
        Self {
            name: None,
            greet_delay_s: default_greet_delay(),
            reply_delay_s: default_reply_delay(),
            requirements_text: default_requirements(),
            clarification_answers: Vec::new(),
            stall_nudge_text: default_nudge(),
            stall_threshold_s: default_stall(),
        }
    }
}

fn default_none_streak() -> u32 {
    2
}
fn default_quiescence() -> f64 {
    30.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationRule {
    #[serde(default = "yes")]
    pub require_code_file: bool,
    #[serde(default = "default_none_streak")]
    pub none_streak: u32,
    #[serde(default = "default_quiescence")]
    pub quiescence_s: f64,
}

impl Default for TerminationRule {
    fn default() -> Self {
        Self {
            require_code_file: true,
            none_streak: default_none_streak(),
            quiescence_s: default_quiescence(),
        }
    }
}

fn secs_to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        serde_json::from_str(text).map_err(|e| SessionError::Config(e.to_string()))
    }

    /// Reads a `.json` or `.toml` file; relative script paths resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        let mut config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_toml(&text)?,
        };
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::Config(m));
        if self.agents.is_empty() {
            return bad("no agents configured".into());
        }
        let mut names = HashSet::new();
        let mut ids = HashSet::new();
        for a in &self.agents {
            let spec = a.spec()?;
            if !names.insert(a.name.to_lowercase()) || !ids.insert(spec.id.clone()) {
                return bad(format!("duplicate agent name `{}`", a.name));
            }
            if !a.is_human {
                self.provider_name_for(a)?;
            }
        }
        let [lo, hi] = self.pause_range_s;
        if !(lo >= 0.0 && lo <= hi) {
            return bad(format!(
                "pause_range_s [{lo}, {hi}] must satisfy 0 <= low <= high"
            ));
        }
        if self.idle_poll_s <= 0.0 {
            return bad("idle_poll_s must be positive".into());
        }
        if self.termination.none_streak < 1 {
            return bad("termination.none_streak must be at least 1".into());
        }
        if self.termination.quiescence_s <= 0.0 {
            return bad("termination.quiescence_s must be positive".into());
        }
        for (name, p) in &self.providers {
            p.params()
                .validate()
                .map_err(|e| SessionError::Config(format!("provider `{name}`: {e}")))?;
        }
        self.knowledge()?;
        if let Some(playbook) = &self.human_playbook {
            self.playbook_human(playbook)?;
            let req = assets::resolve(&playbook.requirements_text)
                .map_err(|e| SessionError::Config(e.to_string()))?;
            if req.trim().is_empty() {
                return bad("human_playbook.requirements_text is empty".into());
            }
            if playbook.stall_threshold_s <= 0.0 {
                return bad("human_playbook.stall_threshold_s must be positive".into());
            }
        }
        Ok(())
    }

    pub fn provider_name_for(&self, agent: &AgentConfig) -> Result<String, SessionError> {
        match &agent.provider {
            Some(p) if self.providers.contains_key(p) => Ok(p.clone()),
            Some(p) => Err(SessionError::Config(format!(
                "agent `{}` uses unknown provider `{p}`",
                agent.name
            ))),
            None if self.providers.len() == 1 => {
                Ok(self.providers.keys().next().cloned().unwrap_or_default())
            }
            None => Err(SessionError::Config(format!(
                "agent `{}` must name one of {} providers",
                agent.name,
                self.providers.len()
            ))),
        }
    }

    pub fn knowledge(&self) -> Result<InstitutionalKnowledge, SessionError> {
        let base = assets::resolve(&self.knowledge.base)
            .map_err(|e| SessionError::Config(e.to_string()))?;
        let mut k = InstitutionalKnowledge {
            base,
            collaborative_move: None,
        };
        if let Some(m) = &self.knowledge.collaborative_move {
            let description = match m.strip_prefix("ipa:") {
                Some(n) => n
                    .trim()
                    .parse::<u8>()
                    .ok()
                    .and_then(IpaCategory::new)
                    .filter(|c| c.is_substantive())
                    .map(|c| c.move_description())
                    .ok_or_else(|| {
                        SessionError::Config(format!("unknown collaborative move `{m}`"))
                    })?,
                None => assets::resolve(m).map_err(|e| SessionError::Config(e.to_string()))?,
            };
            k = k.with_move(description);
        }
        Ok(k)
    }

    /// The participant a playbook drives.
    pub fn playbook_human(&self, playbook: &HumanPlaybook) -> Result<AgentSpec, SessionError> {
        let human = match &playbook.name {
            Some(n) => self.agents.iter().find(|a| a.is_human && a.name == *n),
            None => self.agents.iter().find(|a| a.is_human),
        };
        human
            .ok_or_else(|| {
                SessionError::Config("human_playbook has no matching human participant".into())
            })?
            .spec()
    }

    pub fn deadlock_cap_ms(&self) -> u64 {
        secs_to_ms(self.deadlock_cap_s.unwrap_or(match self.clock_mode {
            ClockMode::Simulated => DEFAULT_SIM_DEADLOCK_CAP_S,
            ClockMode::Real => DEFAULT_REAL_DEADLOCK_CAP_S,
        }))
    }

    pub fn quiescence_ms(&self) -> u64 {
        secs_to_ms(self.termination.quiescence_s)
    }

    pub fn settings_for(&self, params: ChatParams, humans: &[AgentSpec]) -> AgentSettings {
        AgentSettings {
            pause_range_ms: (
                secs_to_ms(self.pause_range_s[0]),
                secs_to_ms(self.pause_range_s[1]),
            ),
            idle_poll_ms: secs_to_ms(self.idle_poll_s).max(1),
            params,
            code_extensions: self
                .code_extensions
                .clone()
                .unwrap_or_else(default_code_extensions),
            typing_expiry_ms: secs_to_ms(self.typing_expiry_s),
            disclosed_humans: self
                .disclose_humans
                .then(|| humans.iter().map(|h| h.name.clone()).collect()),
        }
    }

    pub fn agent_id(&self, name: &str) -> Option<AgentId> {
        self.agents
            .iter()
            .find(|a| a.name == name)
            .map(|a| AgentId::from_name(&a.name))
    }
}

pub(crate) fn ms(s: f64) -> u64 {
    secs_to_ms(s)
}
