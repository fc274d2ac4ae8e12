//! Code-quality rubric for the tic-tac-toe benchmark and score cards.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FUNCTIONALITY: [&str; 17] = [
    "The code compiles without errors",
    "Uses 'X' and 'O' for the two players",
    "Creates a 3x3 grid",
    "Guides the players through the game",
    "Starts the game by displaying an empty board",
    "Starts the game by assigning 'X' to the first player and 'O' to the second player",
    "Prompts the players to input their moves by specifying the row and column",
    "Handles non-integer input",
    "Ensures that the user input is not out-of-range",
    "Ensures that the user input is not in an already occupied cell",
    "Correct placement of X's and O's according to user input coordinates",
    "Displays the updated board after each move",
    "Displays the final board after the game ends",
    "Detects the winner",
    "Announces the result of game as soon as a player wins",
    "Announces the result of game if it ends in a tie",
    "After the game concludes, asks for new game and if so restarts the game",
];

const QUALITY: [&str; 3] = [
    "Decomposition",
    "Source Code Documentation (general comments, inline comments, etc.)",
    "Supporting material (user instructions, summary, notes, etc.)",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub functionality: Vec<String>,
    pub quality: Vec<String>,
}

impl Default for Rubric {
    fn default() -> Self {
        Self {
            functionality: FUNCTIONALITY.iter().map(|s| s.to_string()).collect(),
            quality: QUALITY.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Rubric {
    /// Criterion ids `F1..Fn` then `Q1..Qm`, with their texts.
    pub fn criteria(&self) -> Vec<(String, &str)> {
        let f = self
            .functionality
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("F{}", i + 1), t.as_str()));
        let q = self
            .quality
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("Q{}", i + 1), t.as_str()));
        f.chain(q).collect()
    }

    pub fn len(&self) -> usize {
        self.functionality.len() + self.quality.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accepts an id (`F12`, `q1`) or the exact criterion text.
    pub fn resolve(&self, key: &str) -> Option<String> {
        let key = key.trim();
        self.criteria()
            .into_iter()
            .find(|(id, text)| id.eq_ignore_ascii_case(key) || *text == key)
            .map(|(id, _)| id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Pass,
    Fail,
    Partial,
    NotAssessed,
}

impl FromStr for Mark {
    type Err = ChecklistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace([' ', '-'], "_")
            .as_str()
        {
            "pass" | "yes" | "y" => Ok(Mark::Pass),
            "fail" | "no" | "n" => Ok(Mark::Fail),
            "partial" => Ok(Mark::Partial),
            "not_assessed" | "na" | "n/a" => Ok(Mark::NotAssessed),
            _ => Err(ChecklistError::UnknownMark(s.to_string())),
        }
    }
}

impl Mark {
    fn symbol(self) -> &'static str {
        match self {
            Mark::Pass => "pass",
            Mark::Fail => "fail",
            Mark::Partial => "partial",
            Mark::NotAssessed => "n/a",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChecklistError {
    #[error("no mark for criterion {0}")]
    MissingCriterion(String),
    #[error("unknown mark `{0}`")]
    UnknownMark(String),
    #[error("unknown criterion `{0}`")]
    UnknownCriterion(String),
    #[error("criterion {0} marked twice")]
    DuplicateCriterion(String),
    #[error("score cards use different rubrics")]
    RubricMismatch,
    #[error("marks file: {0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkInput {
    pub criterion: String,
    pub mark: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub system_name: String,
    pub run_id: String,
    pub rubric: Rubric,
    pub marks: BTreeMap<String, Mark>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl ScoreCard {
    /// Passes in (functionality, quality).
    pub fn totals(&self) -> (usize, usize) {
        let passed = |prefix: char| {
            self.marks
                .iter()
                .filter(|(id, m)| id.starts_with(prefix) && **m == Mark::Pass)
                .count()
        };
        (passed('F'), passed('Q'))
    }
}

pub fn score(
    system_name: &str,
    run_id: &str,
    inputs: &[MarkInput],
    rubric: &Rubric,
) -> Result<ScoreCard, ChecklistError> {
    let mut marks = BTreeMap::new();
    let mut notes = BTreeMap::new();
    for input in inputs {
        let id = rubric
            .resolve(&input.criterion)
            .ok_or_else(|| ChecklistError::UnknownCriterion(input.criterion.clone()))?;
        let mark: Mark = input.mark.parse()?;
        if marks.insert(id.clone(), mark).is_some() {
            return Err(ChecklistError::DuplicateCriterion(id));
        }
        if !input.note.is_empty() {
            notes.insert(id, input.note.clone());
        }
    }
    if let Some((id, _)) = rubric
        .criteria()
        .into_iter()
        .find(|(id, _)| !marks.contains_key(id))
    {
        return Err(ChecklistError::MissingCriterion(id));
    }
    Ok(ScoreCard {
        system_name: system_name.to_string(),
        run_id: run_id.to_string(),
        rubric: rubric.clone(),
        marks,
        notes,
    })
}

/// Reads `criterion,mark[,note]` rows.
pub fn read_marks<R: io::Read>(reader: R) -> Result<Vec<MarkInput>, ChecklistError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| ChecklistError::Input(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        if record.len() < 2 {
            return Err(ChecklistError::Input(format!("short row `{}`", field(0))));
        }
        out.push(MarkInput {
            criterion: field(0),
            mark: field(1),
            note: field(2),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub criterion_id: String,
    pub criterion: String,
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    /// `system_name/run_id` per column.
    pub systems: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    pub pass_totals: Vec<(usize, usize)>,
}

pub fn compare(cards: &[ScoreCard]) -> Result<Comparison, ChecklistError> {
    let Some(first) = cards.first() else {
        return Ok(Comparison {
            systems: vec![],
            rows: Rubric::default()
                .criteria()
                .into_iter()
                .map(|(id, t)| ComparisonRow {
                    criterion_id: id,
                    criterion: t.to_string(),
                    marks: vec![],
                })
                .collect(),
            pass_totals: vec![],
        });
    };
    if cards.iter().any(|c| c.rubric != first.rubric) {
        return Err(ChecklistError::RubricMismatch);
    }
    let rows = first
        .rubric
        .criteria()
        .into_iter()
        .map(|(id, text)| ComparisonRow {
            marks: cards
                .iter()
                .map(|c| c.marks.get(&id).copied().unwrap_or(Mark::NotAssessed))
                .collect(),
            criterion_id: id,
            criterion: text.to_string(),
        })
        .collect();
    Ok(Comparison {
        systems: cards
            .iter()
            .map(|c| format!("{}/{}", c.system_name, c.run_id))
            .collect(),
        rows,
        pass_totals: cards.iter().map(ScoreCard::totals).collect(),
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "criterion".to_string()];
        header.extend(self.systems.iter().cloned());
        let _ = wtr.write_record(&header);
        for row in &self.rows {
            let mut rec = vec![row.criterion_id.clone(), row.criterion.clone()];
            rec.extend(row.marks.iter().map(|m| m.symbol().to_string()));
            let _ = wtr.write_record(&rec);
        }
        String::from_utf8(wtr.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.criterion.len())
            .max()
            .unwrap_or(9)
            .min(60);
        let mut out = String::new();
        let _ = write!(out, "{:<4} {:<width$}", "id", "criterion");
        for s in &self.systems {
            let _ = write!(out, "  {s:>10}");
        }
        out.push('\n');
        for row in &self.rows {
            let text: String = row.criterion.chars().take(width).collect();
            let _ = write!(out, "{:<4} {:<width$}", row.criterion_id, text);
            for m in &row.marks {
                let _ = write!(out, "  {:>10}", m.symbol());
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "{:<4} {:<width$}",
            "", "passed (functionality/quality)"
        );
        for (f, q) in &self.pass_totals {
            let _ = write!(out, "  {:>10}", format!("{f}/{q}"));
        }
        out.push('\n');
        out
    }
}
