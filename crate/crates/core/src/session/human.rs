//! Playbook-driven client.
//!
//! Greets after a delay, posts the requirements once someone answers,
//! answers clarification questions in order, and asks for progress when the
//! channel stalls. It never speaks twice without another participant
//! posting in between.

use serde::{Deserialize, Serialize};

use super::config::{ms, HumanPlaybook};
use crate::agent::AgentSpec;
use crate::assets;
use crate::timeline::{AgentId, Event, EventKind, Timeline, TimelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceKind {
    Greeting,
    Requirements,
    Answer(usize),
    Nudge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub kind: UtteranceKind,
    pub text: String,
    /// Earliest session time the utterance may be posted.
    pub due_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ScriptedHuman {
    spec: AgentSpec,
    playbook: HumanPlaybook,
    requirements: String,
    start_ms: u64,
    greeted: bool,
    requirements_posted: bool,
    answers_used: usize,
}

fn join_names(names: &[String]) -> String {
    match names {
        [] => "everyone".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn is_turn_by(e: &Event, id: &AgentId) -> bool {
    e.kind.is_turn() && e.author == *id
}

impl ScriptedHuman {
    pub fn new(
        spec: AgentSpec,
        playbook: HumanPlaybook,
        start_ms: u64,
    ) -> Result<Self, assets::UnknownAsset> {
        let requirements = assets::resolve(&playbook.requirements_text)?;
        Ok(Self {
            spec,
            playbook,
            requirements,
            start_ms,
            greeted: false,
            requirements_posted: false,
            answers_used: 0,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn answers_used(&self) -> usize {
        self.answers_used
    }

    fn greeting(&self, events: &[Event]) -> String {
        let roster = crate::timeline::roster(events);
        let mut spoken: Vec<String> = Vec::new();
        for e in events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Message { .. }))
        {
            if e.author == self.spec.id {
                continue;
            }
            if let Some(p) = roster.iter().find(|p| p.id == e.author) {
                if !spoken.contains(&p.name) {
                    spoken.push(p.name.clone());
                }
            }
        }
        format!(
            "Hi {}, I'm {}, the {}.",
            join_names(&spoken),
            self.spec.name,
            self.spec.role_name
        )
    }

    /// What the human would say next given `events`, and when. Pure with
    /// respect to the playbook state.
    pub fn next_utterance(&self, events: &[Event]) -> Option<Utterance> {
        let me = &self.spec.id;
        let last_mine = events.iter().rposition(|e| is_turn_by(e, me));
        let since = last_mine.map_or(0, |i| i + 1);
        let others: Vec<&Event> = events[since..]
            .iter()
            .filter(|e| e.kind.is_turn() && e.author != *me && e.author != AgentId::system())
            .collect();
        if last_mine.is_some() && others.is_empty() {
            return None;
        }
        let reply = ms(self.playbook.reply_delay_s);

        if !self.greeted {
            return Some(Utterance {
                kind: UtteranceKind::Greeting,
                text: self.greeting(events),
                due_ms: self.start_ms + ms(self.playbook.greet_delay_s),
            });
        }
        if !self.requirements_posted {
            return others.first().map(|trigger| Utterance {
                kind: UtteranceKind::Requirements,
                text: self.requirements.clone(),
                due_ms: trigger.wall_time + reply,
            });
        }
        if let Some(answer) = self.playbook.clarification_answers.get(self.answers_used) {
            let question = others.iter().find(|e| match &e.kind {
                EventKind::Message { text } => text.contains('?') && text.contains(&self.spec.name),
                _ => false,
            });
            if let Some(q) = question {
                return Some(Utterance {
                    kind: UtteranceKind::Answer(self.answers_used),
                    text: answer.clone(),
                    due_ms: q.wall_time + reply,
                });
            }
        }
        let last = events.last()?;
        Some(Utterance {
            kind: UtteranceKind::Nudge,
            text: self.playbook.stall_nudge_text.clone(),
            due_ms: last.wall_time + ms(self.playbook.stall_threshold_s),
        })
    }

    /// Posts the next utterance if it is due at `now_ms`.
    pub fn act(
        &mut self,
        timeline: &Timeline,
        now_ms: u64,
    ) -> Result<Option<Event>, TimelineError> {
        let events = timeline.snapshot();
        let Some(u) = self.next_utterance(&events) else {
            return Ok(None);
        };
        if u.due_ms > now_ms {
            return Ok(None);
        }
        let event = timeline.append(self.spec.id.clone(), EventKind::message(u.text))?;
        match u.kind {
            UtteranceKind::Greeting => self.greeted = true,
            UtteranceKind::Requirements => self.requirements_posted = true,
            UtteranceKind::Answer(_) => self.answers_used += 1,
            UtteranceKind::Nudge => {}
        }
        Ok(Some(event))
    }
}
