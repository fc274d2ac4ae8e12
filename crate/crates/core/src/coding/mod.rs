//! Interaction coding of transcript turns with Bales' Interaction Process
//! Analysis categories, and agreement metrics between raters.

mod agreement;
mod codes;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use agreement::{cohens_kappa, percent_agreement, AgreementError, AgreementReport};
pub use codes::{read_codes, write_codes, CodesError};

use crate::assets;
use crate::provider::{
    ChatMessage, ChatParams, ChatProvider, ChatRequest, ProviderError,
    DEFAULT_CLASSIFIER_TEMPERATURE,
};
use crate::transcript::Turn;

pub const CATEGORY_COUNT: usize = 13;

const TABLE: [(&str, &str); CATEGORY_COUNT] = [
    (
        "Shows Solidarity",
        "raises other's status, gives help, reward",
    ),
    ("Shows Tension Release", "jokes, laughs, shows satisfaction"),
    (
        "Agrees",
        "shows passive acceptance, understands, concurs, complies",
    ),
    ("Gives Suggestion", "direction, implying autonomy for other"),
    (
        "Gives Opinion",
        "evaluation, analysis, expresses feeling, wish",
    ),
    (
        "Gives Orientation",
        "information, repeats, clarifies, confirms",
    ),
    (
        "Asks for Orientation",
        "information, repetition, confirmation",
    ),
    (
        "Asks for Opinion",
        "evaluation, analysis, expression of feeling",
    ),
    ("Asks for Suggestion", "direction, possible ways of action"),
    (
        "Disagrees",
        "shows passive rejection, formality, withholds help",
    ),
    ("Shows Tension", "asks for help, withdraws out of field"),
    (
        "Shows Antagonism",
        "deflates other's status, defends or asserts self",
    ),
    ("None of the Above", ""),
];

/// One of the twelve interaction categories, or 13 for "None of the Above".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct IpaCategory(u8);

impl IpaCategory {
    pub const NONE_OF_THE_ABOVE: IpaCategory = IpaCategory(13);

    pub fn new(code: u8) -> Option<Self> {
        (1..=CATEGORY_COUNT as u8)
            .contains(&code)
            .then_some(Self(code))
    }

    pub fn all() -> impl Iterator<Item = IpaCategory> {
        (1..=CATEGORY_COUNT as u8).map(IpaCategory)
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn label(self) -> &'static str {
        TABLE[self.index()].0
    }

    pub fn description(self) -> &'static str {
        TABLE[self.index()].1
    }

    pub fn is_substantive(self) -> bool {
        self != Self::NONE_OF_THE_ABOVE
    }

    /// Phrase used as a collaborative move in institutional knowledge,
    /// e.g. `Asks for opinion: evaluation, analysis, expression of feeling`.
    pub fn move_description(self) -> String {
        let mut words = self.label().split(' ');
        let first = words.next().unwrap_or_default().to_string();
        let rest: Vec<String> = words.map(str::to_lowercase).collect();
        let phrase = std::iter::once(first)
            .chain(rest)
            .collect::<Vec<_>>()
            .join(" ");
        if self.description().is_empty() {
            phrase
        } else {
            format!("{phrase}: {}", self.description())
        }
    }
}

impl TryFrom<u8> for IpaCategory {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        IpaCategory::new(code).ok_or_else(|| format!("category {code} outside 1..=13"))
    }
}

impl From<IpaCategory> for u8 {
    fn from(c: IpaCategory) -> u8 {
        c.0
    }
}

impl fmt::Display for IpaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. {}", self.0, self.label())
    }
}

/// Looks a category up by its label, ignoring case.
pub fn category_by_label(label: &str) -> Option<IpaCategory> {
    IpaCategory::all().find(|c| c.label().eq_ignore_ascii_case(label.trim()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rater {
    Llm,
    Human(String),
}

impl fmt::Display for Rater {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rater::Llm => f.write_str("llm"),
            Rater::Human(name) => write!(f, "human:{name}"),
        }
    }
}

impl FromStr for Rater {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "llm" => Ok(Rater::Llm),
            other => match other.strip_prefix("human:") {
                Some(name) if !name.is_empty() => Ok(Rater::Human(name.to_string())),
                _ => Err(format!("unknown rater `{other}`")),
            },
        }
    }
}

impl Serialize for Rater {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rater {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedTurn {
    pub turn_index: usize,
    pub category: IpaCategory,
    pub rater: Rater,
    #[serde(default)]
    pub raw_response: String,
    /// The classifier reply could not be read as a category and 13 was
    /// recorded instead.
    #[serde(default)]
    pub parse_failure: bool,
    #[serde(default)]
    pub speaker: Option<String>,
    #[serde(default)]
    pub role: Option<String>,
}

impl CodedTurn {
    pub fn new(turn_index: usize, category: IpaCategory, rater: Rater) -> Self {
        Self {
            turn_index,
            category,
            rater,
            raw_response: String::new(),
            parse_failure: false,
            speaker: None,
            role: None,
        }
    }

    pub fn with_role(mut self, speaker: impl Into<String>, role: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self.role = Some(role.into());
        self
    }
}

pub const TARGET_MARKER: &str = ">>> TARGET:";

/// Up to two turns either side of `i`, with the target's label prefixed by
/// [`TARGET_MARKER`].
pub fn build_context(turns: &[Turn], i: usize) -> Vec<ChatMessage> {
    assert!(i < turns.len(), "turn index {i} out of range");
    let lo = i.saturating_sub(2);
    let hi = (i + 2).min(turns.len() - 1);
    turns[lo..=hi]
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let label = if lo + k == i {
                format!("{TARGET_MARKER} {}", t.label())
            } else {
                t.label()
            };
            let content = match &t.filename {
                Some(f) => format!("<File: {f}>\n{}", t.message),
                None => t.message.clone(),
            };
            ChatMessage::new(label, content)
        })
        .collect()
}

/// Reads a classifier reply: an integer 1..=13, optionally surrounded by
/// whitespace and followed by one period.
pub fn parse_category(reply: &str) -> Option<IpaCategory> {
    let t = reply.trim();
    let t = t.strip_suffix('.').unwrap_or(t).trim();
    t.parse::<u8>().ok().and_then(IpaCategory::new)
}

pub fn classification_request(turns: &[Turn], i: usize, params: &ChatParams) -> ChatRequest {
    ChatRequest {
        system_prompt: assets::labeling_prompt().to_string(),
        messages: build_context(turns, i),
        params: params.clone(),
    }
}

pub fn classifier_params(model_name: impl Into<String>) -> ChatParams {
    ChatParams {
        temperature: DEFAULT_CLASSIFIER_TEMPERATURE,
        max_tokens: 8,
        model_name: model_name.into(),
    }
}

/// Codes one turn. An unreadable reply is retried once; a second failure
/// records category 13 with `parse_failure` set.
pub async fn classify_turn(
    turns: &[Turn],
    i: usize,
    provider: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<CodedTurn, ProviderError> {
    let request = classification_request(turns, i, params);
    let mut raw = String::new();
    for _ in 0..2 {
        let response = provider.complete(&request).await?;
        if let Some(category) = parse_category(&response.text) {
            return Ok(CodedTurn {
                raw_response: response.text,
                ..CodedTurn::new(i, category, Rater::Llm)
                    .with_role(&turns[i].speaker, &turns[i].role)
            });
        }
        raw = response.text;
    }
    Ok(CodedTurn {
        raw_response: raw,
        parse_failure: true,
        ..CodedTurn::new(i, IpaCategory::NONE_OF_THE_ABOVE, Rater::Llm)
            .with_role(&turns[i].speaker, &turns[i].role)
    })
}

/// Codes every turn in order.
pub async fn classify_all(
    turns: &[Turn],
    provider: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<Vec<CodedTurn>, ProviderError> {
    let mut out = Vec::with_capacity(turns.len());
    for i in 0..turns.len() {
        out.push(classify_turn(turns, i, provider, params).await?);
    }
    Ok(out)
}
