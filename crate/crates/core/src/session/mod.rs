//! Running a team: setup from a config document, the scripted client,
//! termination detection, simulated and real-time drivers, and artifacts.

mod config;
mod human;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::future::Future;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

pub use config::{
    AgentConfig, HumanPlaybook, KnowledgeConfig, ProviderConfig, ProviderKind, SessionConfig,
    TerminationRule, DEFAULT_ENDPOINT, DEFAULT_NUDGE, DEFAULT_SIM_START_MS,
};
pub use human::{ScriptedHuman, Utterance, UtteranceKind};

use crate::agent::{
    Agent, AgentError, AgentSpec, AgentState, InstitutionalKnowledge, ReasoningEntry, StepOutcome,
};
use crate::clock::{Clock, ClockMode, SimClock, SystemClock};
use crate::provider::{ChatProvider, Usage};
use crate::timeline::{AgentId, Event, EventKind, FileKind, Timeline, TimelineError};
use crate::transcript;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("config: {0}")]
    Config(String),
    #[error("provider key not set: environment variable {0} is empty or missing")]
    MissingApiKey(String),
    #[error("a participant named `{0}` already exists")]
    DuplicateName(String),
    #[error("session has ended")]
    SessionEnded,
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("`{0}` is not a human participant")]
    NotHuman(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("no termination after {elapsed_ms} ms of session time")]
    Deadlock { elapsed_ms: u64 },
    #[error("provider failure budget exhausted after {failures} failed calls: {last}")]
    ProviderUnavailable { failures: u32, last: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Terminated,
    Deadlock,
    ProviderUnavailable,
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "outcome", rename_all = "snake_case")]
pub enum Status {
    Running,
    Ended(Outcome),
}

/// Coordinator poll interval for both drivers.
pub const TICK_MS: u64 = 1_000;

pub fn check_in_note(quiescence_ms: u64) -> String {
    format!("No new activity for {} seconds.", quiescence_ms / 1000)
}

struct Slot {
    spec: AgentSpec,
    runner: Option<Runner>,
    state: Option<crate::agent::SharedState>,
}

type Runner = Arc<tokio::sync::Mutex<Agent>>;

pub struct Session {
    id: String,
    config: SessionConfig,
    clock_mode: ClockMode,
    timeline: Arc<Timeline>,
    sim_clock: Option<Arc<SimClock>>,
    start_ms: u64,
    knowledge: Arc<InstitutionalKnowledge>,
    providers: BTreeMap<String, Arc<dyn ChatProvider>>,
    slots: RwLock<Vec<Slot>>,
    human: Mutex<Option<ScriptedHuman>>,
    failures: AtomicU32,
    last_failure: Mutex<String>,
    end_ms: AtomicU64,
    status: watch::Sender<Status>,
}

pub struct SessionBuilder {
    config: SessionConfig,
    id: String,
    scripted: bool,
    clock_mode: Option<ClockMode>,
    providers: BTreeMap<String, Arc<dyn ChatProvider>>,
}

impl SessionBuilder {
    /// Plays back provider scripts and switches to the simulated clock.
    pub fn scripted(mut self, yes: bool) -> Self {
        self.scripted = yes;
        self
    }

    pub fn clock_mode(mut self, mode: ClockMode) -> Self {
        self.clock_mode = Some(mode);
        self
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Uses `provider` for the named provider entry instead of building it.
    pub fn provider(mut self, name: impl Into<String>, provider: Arc<dyn ChatProvider>) -> Self {
        self.providers.insert(name.into(), provider);
        self
    }

    pub fn build(self) -> Result<Arc<Session>, SessionError> {
        let config = self.config;
        config.validate()?;
        let clock_mode = self.clock_mode.unwrap_or(if self.scripted {
            ClockMode::Simulated
        } else {
            config.clock_mode
        });
        let (clock, sim_clock): (Arc<dyn Clock>, _) = match clock_mode {
            ClockMode::Simulated => {
                let sim = Arc::new(SimClock::new(
                    config.start_time_ms.unwrap_or(DEFAULT_SIM_START_MS),
                ));
                (sim.clone(), Some(sim))
            }
            ClockMode::Real => (Arc::new(SystemClock), None),
        };
        let start_ms = clock.now_ms();
        let timeline = Arc::new(Timeline::new(clock));

        let mut providers = self.providers;
        for (name, p) in &config.providers {
            if !providers.contains_key(name) {
                providers.insert(
                    name.clone(),
                    p.build(name, &config.base_dir, self.scripted)?,
                );
            }
        }

        let knowledge = Arc::new(config.knowledge()?);
        let specs = config
            .agents
            .iter()
            .map(AgentConfig::spec)
            .collect::<Result<Vec<_>, _>>()?;
        let humans: Vec<AgentSpec> = specs.iter().filter(|s| s.is_human).cloned().collect();
        let mut slots = Vec::new();
        for (i, (ac, spec)) in config.agents.iter().zip(specs).enumerate() {
            let slot = if spec.is_human {
                Slot {
                    spec,
                    runner: None,
                    state: None,
                }
            } else {
                let pname = config.provider_name_for(ac)?;
                let params = config.providers[&pname].params();
                let agent = Agent::new(
                    spec.clone(),
                    Arc::clone(&knowledge),
                    Arc::clone(&providers[&pname]),
                    config.settings_for(params, &humans),
                    agent_rng(config.seed, i),
                );
                Slot {
                    spec,
                    state: Some(agent.state()),
                    runner: Some(Arc::new(tokio::sync::Mutex::new(agent))),
                }
            };
            slots.push(slot);
        }
        for s in &slots {
            timeline.append(
                s.spec.id.clone(),
                EventKind::join(&s.spec.name, &s.spec.role_name),
            )?;
        }

        let human = match &config.human_playbook {
            Some(pb) => Some(
                ScriptedHuman::new(config.playbook_human(pb)?, pb.clone(), start_ms)
                    .map_err(|e| SessionError::Config(e.to_string()))?,
            ),
            None => None,
        };

        let (status, _) = watch::channel(Status::Running);
        Ok(Arc::new(Session {
            id: self.id,
            config,
            clock_mode,
            timeline,
            sim_clock,
            start_ms,
            knowledge,
            providers,
            slots: RwLock::new(slots),
            human: Mutex::new(human),
            failures: AtomicU32::new(0),
            last_failure: Mutex::new(String::new()),
            end_ms: AtomicU64::new(0),
            status,
        }))
    }
}

fn agent_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantInfo {
    pub name: String,
    pub role_name: String,
    pub id: AgentId,
    pub is_human: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub name: String,
    pub role_name: String,
    pub id: AgentId,
    pub is_human: bool,
    pub decision_calls: u64,
    pub file_calls: u64,
    pub failed_calls: u64,
    pub consecutive_none: u32,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub session_id: String,
    pub condition: String,
    pub seed: u64,
    pub clock_mode: ClockMode,
    pub outcome: Option<Outcome>,
    pub start_ms: u64,
    pub end_ms: u64,
    pub duration_s: f64,
    pub event_count: usize,
    pub turn_count: usize,
    pub usage: Usage,
    pub agents: Vec<AgentMeta>,
}

impl Session {
    pub fn builder(config: SessionConfig) -> SessionBuilder {
        SessionBuilder {
            config,
            id: "main".into(),
            scripted: false,
            clock_mode: None,
            providers: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn clock_mode(&self) -> ClockMode {
        self.clock_mode
    }

    pub fn timeline(&self) -> &Arc<Timeline> {
        &self.timeline
    }

    pub fn knowledge(&self) -> &InstitutionalKnowledge {
        &self.knowledge
    }

    pub fn now_ms(&self) -> u64 {
        self.timeline.now_ms()
    }

    pub fn status(&self) -> Status {
        *self.status.borrow()
    }

    pub fn subscribe_status(&self) -> watch::Receiver<Status> {
        self.status.subscribe()
    }

    pub fn is_ended(&self) -> bool {
        matches!(self.status(), Status::Ended(_))
    }

    /// Ends the session once; later calls keep the first outcome.
    pub fn end(&self, outcome: Outcome) -> bool {
        let now = self.now_ms();
        self.status.send_if_modified(|s| {
            if *s == Status::Running {
                *s = Status::Ended(outcome);
                self.end_ms.store(now, Ordering::SeqCst);
                true
            } else {
                false
            }
        })
    }

    pub fn participants(&self) -> Vec<ParticipantInfo> {
        self.slots
            .read()
            .expect("slots poisoned")
            .iter()
            .map(|s| ParticipantInfo {
                name: s.spec.name.clone(),
                role_name: s.spec.role_name.clone(),
                id: s.spec.id.clone(),
                is_human: s.spec.is_human,
            })
            .collect()
    }

    fn find(
        &self,
        name: &str,
    ) -> Option<(AgentSpec, Option<Runner>, Option<crate::agent::SharedState>)> {
        self.slots
            .read()
            .expect("slots poisoned")
            .iter()
            .find(|s| s.spec.name == name || s.spec.id.as_str() == name)
            .map(|s| (s.spec.clone(), s.runner.clone(), s.state.clone()))
    }

    pub fn agent_state(&self, name: &str) -> Option<AgentState> {
        let (_, _, state) = self.find(name)?;
        state.map(|s| s.lock().expect("agent state poisoned").clone())
    }

    pub fn reasoning_log(&self, name: &str) -> Option<Vec<ReasoningEntry>> {
        self.agent_state(name).map(|s| s.reasoning_log)
    }

    fn ai_states(&self) -> Vec<(AgentSpec, crate::agent::SharedState)> {
        self.slots
            .read()
            .expect("slots poisoned")
            .iter()
            .filter_map(|s| s.state.clone().map(|st| (s.spec.clone(), st)))
            .collect()
    }

    /// Adds an AI or human participant to a running session. An AI agent
    /// starts at the current head; its Join is the first event it reacts to.
    pub fn add_agent_live(
        &self,
        spec: AgentSpec,
        provider: Option<&str>,
    ) -> Result<Event, SessionError> {
        if self.is_ended() {
            return Err(SessionError::SessionEnded);
        }
        spec.validate().map_err(SessionError::Config)?;
        let mut slots = self.slots.write().expect("slots poisoned");
        if slots
            .iter()
            .any(|s| s.spec.name.eq_ignore_ascii_case(&spec.name) || s.spec.id == spec.id)
        {
            return Err(SessionError::DuplicateName(spec.name));
        }
        let slot = if spec.is_human {
            Slot {
                spec: spec.clone(),
                runner: None,
                state: None,
            }
        } else {
            let pname = self.default_provider(provider)?;
            let params = self
                .config
                .providers
                .get(&pname)
                .map(ProviderConfig::params)
                .unwrap_or_default();
            let humans: Vec<AgentSpec> = slots
                .iter()
                .filter(|s| s.spec.is_human)
                .map(|s| s.spec.clone())
                .collect();
            let agent = Agent::new(
                spec.clone(),
                Arc::clone(&self.knowledge),
                Arc::clone(&self.providers[&pname]),
                self.config.settings_for(params, &humans),
                agent_rng(self.config.seed, slots.len()),
            )
            .starting_at(self.timeline.head());
            Slot {
                spec: spec.clone(),
                state: Some(agent.state()),
                runner: Some(Arc::new(tokio::sync::Mutex::new(agent))),
            }
        };
        let event = self.timeline.append(
            spec.id.clone(),
            EventKind::join(&spec.name, &spec.role_name),
        )?;
        slots.push(slot);
        Ok(event)
    }

    fn default_provider(&self, requested: Option<&str>) -> Result<String, SessionError> {
        if let Some(p) = requested {
            return if self.providers.contains_key(p) {
                Ok(p.to_string())
            } else {
                Err(SessionError::Config(format!("unknown provider `{p}`")))
            };
        }
        let first_ai = self.config.agents.iter().find(|a| !a.is_human);
        match first_ai {
            Some(a) => self.config.provider_name_for(a),
            None => self
                .providers
                .keys()
                .next()
                .cloned()
                .ok_or_else(|| SessionError::Config("no providers configured".into())),
        }
    }

    fn human_author(&self, name: &str) -> Result<AgentSpec, SessionError> {
        if self.is_ended() {
            return Err(SessionError::SessionEnded);
        }
        let (spec, _, _) = self
            .find(name)
            .ok_or_else(|| SessionError::UnknownParticipant(name.to_string()))?;
        if !spec.is_human {
            return Err(SessionError::NotHuman(name.to_string()));
        }
        Ok(spec)
    }

    /// Appends a message from a human participant.
    pub fn post_human_message(&self, name: &str, text: &str) -> Result<Event, SessionError> {
        let spec = self.human_author(name)?;
        if text.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        Ok(self.timeline.append(spec.id, EventKind::message(text))?)
    }

    pub fn post_typing(&self, name: &str) -> Result<Event, SessionError> {
        let spec = self.human_author(name)?;
        Ok(self.timeline.append(spec.id, EventKind::TypingStarted {})?)
    }

    /// Runs one step of the named AI agent outside any driver.
    pub async fn step_agent(&self, name: &str) -> Result<StepOutcome, SessionError> {
        if self.is_ended() {
            return Err(SessionError::SessionEnded);
        }
        let (_, runner, _) = self
            .find(name)
            .ok_or_else(|| SessionError::UnknownParticipant(name.to_string()))?;
        let runner = runner.ok_or_else(|| SessionError::UnknownParticipant(name.to_string()))?;
        let mut agent = runner.lock().await;
        Ok(agent.step(&self.timeline).await?)
    }

    fn has_code_file(events: &[Event]) -> bool {
        events.iter().any(|e| {
            matches!(
                e.kind,
                EventKind::FileCreated {
                    file_kind: FileKind::Code,
                    ..
                }
            )
        })
    }

    fn streaks_met(&self) -> bool {
        let need = self.config.termination.none_streak;
        self.ai_states()
            .iter()
            .all(|(_, st)| st.lock().expect("agent state poisoned").consecutive_none >= need)
    }

    fn quiet_for(&self, events: &[Event], now: u64) -> u64 {
        now.saturating_sub(events.last().map_or(self.start_ms, |e| e.wall_time))
    }

    /// Code present (when required), every AI agent on its decline streak,
    /// and no event for the quiescence window.
    pub fn termination_holds(&self) -> bool {
        let events = self.timeline.snapshot();
        let rule = &self.config.termination;
        (!rule.require_code_file || Self::has_code_file(&events))
            && self.streaks_met()
            && self.quiet_for(&events, self.now_ms()) >= self.config.quiescence_ms()
    }

    /// When the channel has gone quiet with the work done but some agent
    /// has not yet declined twice, a system note gives every agent one more
    /// event to react to.
    fn maybe_check_in(&self) -> Result<Option<Event>, SessionError> {
        let events = self.timeline.snapshot();
        let rule = &self.config.termination;
        let quiet = self.quiet_for(&events, self.now_ms()) >= self.config.quiescence_ms();
        if quiet && (!rule.require_code_file || Self::has_code_file(&events)) && !self.streaks_met()
        {
            let note = check_in_note(self.config.quiescence_ms());
            return Ok(Some(
                self.timeline
                    .append(AgentId::system(), EventKind::System { note })?,
            ));
        }
        Ok(None)
    }

    fn human_act(&self) -> Result<Option<Event>, SessionError> {
        let mut human = self.human.lock().expect("human poisoned");
        match human.as_mut() {
            Some(h) => Ok(h.act(&self.timeline, self.now_ms())?),
            None => Ok(None),
        }
    }

    /// Counts a failed provider call; `Err` once the budget is spent.
    fn record_failure(&self, err: &SessionError) -> Result<(), SessionError> {
        let failures = self.failures.fetch_add(1, Ordering::SeqCst) + 1;
        *self.last_failure.lock().expect("poisoned") = err.to_string();
        tracing::warn!(failures, "agent step failed: {err}");
        if failures > self.config.provider_failure_budget {
            self.end(Outcome::ProviderUnavailable);
            return Err(SessionError::ProviderUnavailable {
                failures,
                last: err.to_string(),
            });
        }
        Ok(())
    }

    fn check_deadlock(&self) -> Result<(), SessionError> {
        let elapsed_ms = self.now_ms().saturating_sub(self.start_ms);
        if elapsed_ms >= self.config.deadlock_cap_ms() {
            self.end(Outcome::Deadlock);
            return Err(SessionError::Deadlock { elapsed_ms });
        }
        Ok(())
    }

    /// Coordinator work for one tick. `Ok(true)` once the session is over.
    fn coordinate(&self) -> Result<bool, SessionError> {
        if self.is_ended() {
            return Ok(true);
        }
        if self.termination_holds() {
            self.end(Outcome::Terminated);
            return Ok(true);
        }
        self.check_deadlock()?;
        self.human_act()?;
        self.maybe_check_in()?;
        Ok(false)
    }

    fn runner_count(&self) -> usize {
        self.slots.read().expect("slots poisoned").len()
    }

    fn runner_at(&self, index: usize) -> Option<Runner> {
        self.slots
            .read()
            .expect("slots poisoned")
            .get(index)
            .and_then(|s| s.runner.clone())
    }

    pub async fn run(self: &Arc<Self>) -> Result<Outcome, SessionError> {
        match self.clock_mode {
            ClockMode::Simulated => self.run_simulated().await,
            ClockMode::Real => self.run_real(std::future::pending()).await,
        }
    }

    /// Discrete-event loop on the simulated clock. Actors wake in time
    /// order; the coordinator wins ties, then agents in join order.
    pub async fn run_simulated(self: &Arc<Self>) -> Result<Outcome, SessionError> {
        let sim = self.sim_clock.clone().ok_or_else(|| {
            SessionError::Config("simulated driver needs the simulated clock".into())
        })?;
        let mut queue: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
        queue.push(Reverse((sim.now_ms(), 0)));
        let mut scheduled = 0;
        loop {
            while scheduled < self.runner_count() {
                if let Some(runner) = self.runner_at(scheduled) {
                    let delay = runner.lock().await.draw_pause();
                    queue.push(Reverse((sim.now_ms() + delay, scheduled + 1)));
                }
                scheduled += 1;
            }
            let Some(Reverse((at, who))) = queue.pop() else {
                break;
            };
            sim.advance_to(at);
            if who == 0 {
                if self.coordinate()? {
                    break;
                }
                queue.push(Reverse((at + TICK_MS, 0)));
                continue;
            }
            if self.is_ended() {
                break;
            }
            if self.termination_holds() {
                self.end(Outcome::Terminated);
                break;
            }
            let runner = self
                .runner_at(who - 1)
                .expect("scheduled slot has a runner");
            let mut agent = runner.lock().await;
            let next = match agent.step(&self.timeline).await {
                Ok(outcome) => at + outcome.pause_ms,
                Err(e) => {
                    self.record_failure(&SessionError::Agent(e))?;
                    at + agent.settings().idle_poll_ms
                }
            };
            queue.push(Reverse((next, who)));
        }
        Ok(self.outcome())
    }

    /// Real-time driver: one task per AI agent plus a coordinator loop.
    /// Resolving `shutdown` ends the session as interrupted.
    pub async fn run_real(
        self: &Arc<Self>,
        shutdown: impl Future<Output = ()>,
    ) -> Result<Outcome, SessionError> {
        let mut tasks = tokio::task::JoinSet::new();
        let mut spawned = 0;
        let mut ticker = tokio::time::interval(Duration::from_millis(TICK_MS));
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        tokio::pin!(shutdown);
        let result = loop {
            while spawned < self.runner_count() {
                if let Some(runner) = self.runner_at(spawned) {
                    tasks.spawn(Arc::clone(self).agent_loop(runner));
                }
                spawned += 1;
            }
            tokio::select! {
                _ = &mut shutdown => {
                    self.end(Outcome::Interrupted);
                    break Ok(self.outcome());
                }
                _ = ticker.tick() => {}
            }
            match self.coordinate() {
                Ok(true) => break Ok(self.outcome()),
                Ok(false) => {}
                Err(e) => break Err(e),
            }
            if self.failures.load(Ordering::SeqCst) > self.config.provider_failure_budget {
                self.end(Outcome::ProviderUnavailable);
                break Err(SessionError::ProviderUnavailable {
                    failures: self.failures.load(Ordering::SeqCst),
                    last: self.last_failure.lock().expect("poisoned").clone(),
                });
            }
        };
        tasks.abort_all();
        while tasks.join_next().await.is_some() {}
        result
    }

    async fn agent_loop(self: Arc<Self>, runner: Runner) {
        let mut status = self.subscribe_status();
        let mut pause = runner.lock().await.draw_pause();
        loop {
            tokio::select! {
                _ = tokio::time::sleep(Duration::from_millis(pause)) => {}
                _ = status.changed() => {}
            }
            if self.is_ended() || self.termination_holds() {
                return;
            }
            let mut agent = runner.lock().await;
            pause = match agent.step(&self.timeline).await {
                Ok(outcome) => outcome.pause_ms,
                Err(e) => {
                    if self.record_failure(&SessionError::Agent(e)).is_err() {
                        return;
                    }
                    agent.settings().idle_poll_ms
                }
            };
        }
    }

    fn outcome(&self) -> Outcome {
        match self.status() {
            Status::Ended(o) => o,
            Status::Running => Outcome::Interrupted,
        }
    }

    pub fn meta(&self) -> RunMeta {
        let events = self.timeline.snapshot();
        let end_ms = match self.status() {
            Status::Ended(_) => self.end_ms.load(Ordering::SeqCst),
            Status::Running => self.now_ms(),
        };
        let mut total = Usage::default();
        let agents: Vec<AgentMeta> = self
            .participants()
            .into_iter()
            .map(|p| {
                let st = self.agent_state(&p.name).unwrap_or_default();
                total += st.usage;
                AgentMeta {
                    name: p.name,
                    role_name: p.role_name,
                    id: p.id,
                    is_human: p.is_human,
                    decision_calls: st.decision_calls,
                    file_calls: st.file_calls,
                    failed_calls: st.failed_calls,
                    consecutive_none: st.consecutive_none,
                    usage: st.usage,
                }
            })
            .collect();
        RunMeta {
            session_id: self.id.clone(),
            condition: self.config.condition_name.clone(),
            seed: self.config.seed,
            clock_mode: self.clock_mode,
            outcome: match self.status() {
                Status::Ended(o) => Some(o),
                Status::Running => None,
            },
            start_ms: self.start_ms,
            end_ms,
            duration_s: end_ms.saturating_sub(self.start_ms) as f64 / 1000.0,
            event_count: events.len(),
            turn_count: events.iter().filter(|e| e.kind.is_turn()).count(),
            usage: total,
            agents,
        }
    }

    pub fn transcript(&self) -> String {
        transcript::render_markdown_with_offset(
            &self.timeline.snapshot(),
            self.config.utc_offset_minutes,
        )
    }

    /// Writes `timeline.jsonl`, `transcript.md`, `turns.csv`,
    /// `reasoning/<agent>.jsonl` and `meta.json` under `dir`.
    pub fn export(&self, dir: &Path) -> Result<(), SessionError> {
        let events = self.timeline.snapshot();
        std::fs::create_dir_all(dir.join("reasoning"))?;
        std::fs::write(
            dir.join("timeline.jsonl"),
            crate::timeline::to_jsonl(&events),
        )?;
        std::fs::write(
            dir.join("transcript.md"),
            transcript::render_markdown_with_offset(&events, self.config.utc_offset_minutes),
        )?;
        std::fs::write(
            dir.join("turns.csv"),
            transcript::to_csv(&transcript::turns_from_events(
                &events,
                self.config.utc_offset_minutes,
            )),
        )?;
        for (spec, state) in self.ai_states() {
            let log = state
                .lock()
                .expect("agent state poisoned")
                .reasoning_log
                .clone();
            let mut out = String::new();
            for entry in &log {
                out.push_str(&serde_json::to_string(entry).expect("reasoning entry serializes"));
                out.push('\n');
            }
            std::fs::write(
                dir.join("reasoning").join(format!("{}.jsonl", spec.id)),
                out,
            )?;
        }
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        std::fs::write(dir.join("meta.json"), meta + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ScriptRule, ScriptedProvider};

    fn config(extra: &str) -> SessionConfig {
        let text = format!(
            r#"
seed = 1
{extra}
[providers.s]
kind = "scripted"
rules = [{{ response = "ACTION: NONE", repeat = true }}]

[[agents]]
name = "Peter"
role_name = "CEO"
persona = "asset:persona_ceo"

[[agents]]
name = "Benjamin"
role_name = "Client"
is_human = true
"#
        );
        SessionConfig::from_toml(&text).unwrap()
    }

    #[tokio::test]
    async fn minimal_termination() {
        let c = config("[termination]\nrequire_code_file = false\nnone_streak = 1\n");
        let s = Session::builder(c).build().unwrap();
        assert_eq!(s.timeline().head(), 2);
        let outcome = s.run().await.unwrap();
        assert_eq!(outcome, Outcome::Terminated);
        let st = s.agent_state("Peter").unwrap();
        assert_eq!(st.decision_calls, 1);
        assert!(s.meta().duration_s >= 30.0);
    }

    #[tokio::test]
    async fn check_in_lets_streak_reach_two() {
        let c = config("[termination]\nrequire_code_file = false\n");
        let s = Session::builder(c).build().unwrap();
        assert_eq!(s.run().await.unwrap(), Outcome::Terminated);
        let st = s.agent_state("Peter").unwrap();
        assert_eq!(st.decision_calls, 2);
        let notes = s
            .timeline()
            .snapshot()
            .into_iter()
            .filter(|e| matches!(e.kind, EventKind::System { .. }))
            .count();
        assert_eq!(notes, 1);
    }

    #[tokio::test]
    async fn deadlock_without_code() {
        let s = Session::builder(config("deadlock_cap_s = 200"))
            .build()
            .unwrap();
        let err = s.run().await.unwrap_err();
        assert!(matches!(err, SessionError::Deadlock { .. }));
        assert_eq!(s.status(), Status::Ended(Outcome::Deadlock));
    }

    #[tokio::test]
    async fn live_add_and_human_posting() {
        let s = Session::builder(config("")).build().unwrap();
        let join = s
            .add_agent_live(AgentSpec::new("Jeff", "QA", "You test code."), None)
            .unwrap();
        assert!(matches!(join.kind, EventKind::Join { .. }));
        assert_eq!(s.agent_state("Jeff").unwrap().cursor, join.seq - 1);
        assert!(matches!(
            s.add_agent_live(AgentSpec::new("jeff", "QA", "x"), None),
            Err(SessionError::DuplicateName(_))
        ));
        assert!(matches!(
            s.post_human_message("Peter", "hi"),
            Err(SessionError::NotHuman(_))
        ));
        assert!(matches!(
            s.post_human_message("Benjamin", "  "),
            Err(SessionError::EmptyMessage)
        ));
        assert!(matches!(
            s.post_human_message("Nobody", "x"),
            Err(SessionError::UnknownParticipant(_))
        ));
        s.post_human_message("Benjamin", "hello").unwrap();
        s.end(Outcome::Interrupted);
        assert!(matches!(
            s.add_agent_live(AgentSpec::new("Ann", "QA", "x"), None),
            Err(SessionError::SessionEnded)
        ));
        assert!(matches!(
            s.post_human_message("Benjamin", "x"),
            Err(SessionError::SessionEnded)
        ));
    }

    #[tokio::test]
    async fn provider_budget() {
        let c = config("provider_failure_budget = 2\n");
        let s = Session::builder(c)
            .provider("s", Arc::new(ScriptedProvider::new(vec![])))
            .build()
            .unwrap();
        assert!(matches!(
            s.run().await,
            Err(SessionError::ProviderUnavailable { failures: 3, .. })
        ));
    }

    #[tokio::test]
    async fn injected_provider_sees_history() {
        let p = Arc::new(ScriptedProvider::new(vec![ScriptRule::always(
            "ACTION: NONE",
        )]));
        let s = Session::builder(config(""))
            .provider("s", p.clone())
            .build()
            .unwrap();
        s.post_human_message("Benjamin", "Please build it").unwrap();
        s.step_agent("Peter").await.unwrap();
        assert!(p.requests()[0]
            .render_messages()
            .contains("Benjamin (Client): Please build it"));
    }

    #[tokio::test]
    async fn export_writes_artifacts() {
        let c = config("[termination]\nrequire_code_file = false\nnone_streak = 1\n");
        let s = Session::builder(c).build().unwrap();
        s.run().await.unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.export(dir.path()).unwrap();
        for f in [
            "timeline.jsonl",
            "transcript.md",
            "turns.csv",
            "meta.json",
            "reasoning/peter.jsonl",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let meta: RunMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta.outcome, Some(Outcome::Terminated));
    }
}
