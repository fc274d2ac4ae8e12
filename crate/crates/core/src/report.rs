//! Per-condition aggregates, merged categories, differences against a
//! control condition and sequence strips.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coding::{CodedTurn, IpaCategory};

/// A "Gives" category combined with its "Asks for" counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergedCategory {
    Suggestion,
    Opinion,
    Orientation,
}

impl MergedCategory {
    pub const ALL: [MergedCategory; 3] = [Self::Suggestion, Self::Opinion, Self::Orientation];

    /// The (gives, asks for) pair.
    pub fn constituents(self) -> (u8, u8) {
        match self {
            Self::Suggestion => (4, 9),
            Self::Opinion => (5, 8),
            Self::Orientation => (6, 7),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Suggestion => "suggestion",
            Self::Opinion => "opinion",
            Self::Orientation => "orientation",
        }
    }
}

/// Categories that have no gives/asks partner.
pub const UNMERGED: [u8; 6] = [1, 2, 3, 10, 11, 12];

/// Codes from one run of one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedRun {
    pub condition: String,
    pub codes: Vec<CodedTurn>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Count "None of the Above" in proportion denominators.
    pub include_none: bool,
}

pub const UNKNOWN_ROLE: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_name: String,
    pub runs: usize,
    /// Raw counts for every category seen, including 13.
    pub counts: BTreeMap<u8, u64>,
    pub merged_counts: BTreeMap<MergedCategory, u64>,
    pub proportions: BTreeMap<u8, f64>,
    pub role_distributions: BTreeMap<String, BTreeMap<u8, f64>>,
    pub include_none: bool,
}

impl ConditionReport {
    pub fn count(&self, code: u8) -> u64 {
        self.counts.get(&code).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn merged(&self, m: MergedCategory) -> u64 {
        self.merged_counts.get(&m).copied().unwrap_or(0)
    }
}

fn tally<'a>(codes: impl Iterator<Item = &'a CodedTurn>) -> BTreeMap<u8, u64> {
    let mut counts = BTreeMap::new();
    for c in codes {
        *counts.entry(c.category.code()).or_insert(0) += 1;
    }
    counts
}

fn proportions(counts: &BTreeMap<u8, u64>, include_none: bool) -> BTreeMap<u8, f64> {
    let included = |code: u8| include_none || code != IpaCategory::NONE_OF_THE_ABOVE.code();
    let denom: u64 = counts
        .iter()
        .filter(|(&k, _)| included(k))
        .map(|(_, v)| v)
        .sum();
    if denom == 0 {
        return BTreeMap::new();
    }
    counts
        .iter()
        .filter(|(&k, _)| included(k))
        .map(|(&k, &v)| (k, v as f64 / denom as f64))
        .collect()
}

fn merge(counts: &BTreeMap<u8, u64>) -> BTreeMap<MergedCategory, u64> {
    MergedCategory::ALL
        .iter()
        .map(|&m| {
            let (a, b) = m.constituents();
            (
                m,
                counts.get(&a).unwrap_or(&0) + counts.get(&b).unwrap_or(&0),
            )
        })
        .collect()
}

/// One report per condition, in order of first appearance. Turns without a
/// role are grouped under [`UNKNOWN_ROLE`].
pub fn aggregate(runs: &[CodedRun], options: AggregateOptions) -> Vec<ConditionReport> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<&CodedRun>> = BTreeMap::new();
    for run in runs {
        if !grouped.contains_key(run.condition.as_str()) {
            order.push(&run.condition);
        }
        grouped.entry(&run.condition).or_default().push(run);
    }
    order
        .into_iter()
        .map(|name| {
            let group = &grouped[name];
            let all = || group.iter().flat_map(|r| r.codes.iter());
            let counts = tally(all());
            let mut by_role: BTreeMap<String, Vec<&CodedTurn>> = BTreeMap::new();
            for c in all() {
                let role = c.role.clone().unwrap_or_else(|| UNKNOWN_ROLE.to_string());
                by_role.entry(role).or_default().push(c);
            }
            let role_distributions = by_role
                .into_iter()
                .map(|(role, codes)| {
                    (
                        role,
                        proportions(&tally(codes.into_iter()), options.include_none),
                    )
                })
                .collect();
            ConditionReport {
                condition_name: name.to_string(),
                runs: group.len(),
                merged_counts: merge(&counts),
                proportions: proportions(&counts, options.include_none),
                counts,
                role_distributions,
                include_none: options.include_none,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DiffCell {
    Defined {
        percent: f64,
    },
    /// The control count is zero, so no percentage exists.
    UndefinedZeroControl,
}

impl DiffCell {
    pub fn percent(self) -> Option<f64> {
        match self {
            DiffCell::Defined { percent } => Some(percent),
            DiffCell::UndefinedZeroControl => None,
        }
    }
}

pub fn percent_diff(condition: u64, control: u64) -> DiffCell {
    if control == 0 {
        DiffCell::UndefinedZeroControl
    } else {
        DiffCell::Defined {
            percent: 100.0 * (condition as f64 - control as f64) / control as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub category: String,
    pub condition: u64,
    pub control: u64,
    pub diff: DiffCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub condition: String,
    pub control: String,
    pub rows: Vec<DiffRow>,
}

impl DiffReport {
    pub fn row(&self, category: &str) -> Option<&DiffRow> {
        self.rows.iter().find(|r| r.category == category)
    }
}

/// Differences on raw counts over the merged categories and the categories
/// that have no partner.
pub fn diff_vs_control(cond: &ConditionReport, control: &ConditionReport) -> DiffReport {
    let mut rows = Vec::new();
    let mut push = |category: String, a: u64, b: u64| {
        rows.push(DiffRow {
            category,
            condition: a,
            control: b,
            diff: percent_diff(a, b),
        })
    };
    for code in &UNMERGED[..3] {
        push(plain_key(*code), cond.count(*code), control.count(*code));
    }
    for m in MergedCategory::ALL {
        push(m.name().to_string(), cond.merged(m), control.merged(m));
    }
    for code in &UNMERGED[3..] {
        push(plain_key(*code), cond.count(*code), control.count(*code));
    }
    DiffReport {
        condition: cond.condition_name.clone(),
        control: control.condition_name.clone(),
        rows,
    }
}

fn plain_key(code: u8) -> String {
    IpaCategory::new(code)
        .map(|c| c.label().to_lowercase())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripEntry {
    pub turn_index: usize,
    pub category: IpaCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SequenceStrip {
    pub entries: Vec<StripEntry>,
    /// Category counts for the early, middle and late thirds.
    pub terciles: [BTreeMap<u8, u64>; 3],
}

/// Codes ordered by turn. Entry `i` of `n` falls in tercile `floor(3i/n)`.
pub fn sequence_strip(codes: &[CodedTurn]) -> SequenceStrip {
    let mut entries: Vec<StripEntry> = codes
        .iter()
        .map(|c| StripEntry {
            turn_index: c.turn_index,
            category: c.category,
        })
        .collect();
    entries.sort_by_key(|e| e.turn_index);
    let n = entries.len();
    let mut terciles: [BTreeMap<u8, u64>; 3] = Default::default();
    for (i, e) in entries.iter().enumerate() {
        *terciles[3 * i / n].entry(e.category.code()).or_insert(0) += 1;
    }
    SequenceStrip { entries, terciles }
}

pub fn render_condition_text(r: &ConditionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "condition: {} ({} runs, {} turns)",
        r.condition_name,
        r.runs,
        r.total()
    );
    let _ = writeln!(
        out,
        "{:<4}{:<24}{:>7}{:>9}",
        "#", "category", "count", "share"
    );
    for c in IpaCategory::all() {
        let share = r
            .proportions
            .get(&c.code())
            .map(|p| format!("{:.1}%", p * 100.0))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<4}{:<24}{:>7}{:>9}",
            c.code(),
            c.label(),
            r.count(c.code()),
            share
        );
    }
    for m in MergedCategory::ALL {
        let _ = writeln!(
            out,
            "{:<4}{:<24}{:>7}",
            "",
            format!("merged {}", m.name()),
            r.merged(m)
        );
    }
    out
}

pub fn render_diff_text(d: &DiffReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} vs {}", d.condition, d.control);
    let _ = writeln!(
        out,
        "{:<24}{:>10}{:>10}{:>12}",
        "category", "cond", "control", "diff"
    );
    for row in &d.rows {
        let diff = match row.diff {
            DiffCell::Defined { percent } => format!("{percent:+.1}%"),
            DiffCell::UndefinedZeroControl => "undefined".into(),
        };
        let _ = writeln!(
            out,
            "{:<24}{:>10}{:>10}{:>12}",
            row.category, row.condition, row.control, diff
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::Rater;

    fn run(condition: &str, cats: &[u8]) -> CodedRun {
        CodedRun {
            condition: condition.into(),
            codes: cats
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    CodedTurn::new(i, IpaCategory::new(c).unwrap(), Rater::Llm)
                        .with_role("S", "CEO")
                })
                .collect(),
        }
    }

    #[test]
    fn one_run_counts_and_proportions() {
        let r = &aggregate(&[run("control", &[4, 4, 6])], AggregateOptions::default())[0];
        assert_eq!(r.counts, BTreeMap::from([(4, 2), (6, 1)]));
        assert_eq!(r.proportions[&4], 2.0 / 3.0);
        assert_eq!(r.proportions[&6], 1.0 / 3.0);
        assert_eq!(r.role_distributions["CEO"][&4], 2.0 / 3.0);
    }

    #[test]
    fn merged_and_runs() {
        let reports = aggregate(
            &[run("a", &[4, 4, 9]), run("b", &[1]), run("a", &[4])],
            AggregateOptions::default(),
        );
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].condition_name, "a");
        assert_eq!(reports[0].runs, 2);
        assert_eq!(reports[0].merged(MergedCategory::Suggestion), 4);
    }

    #[test]
    fn none_toggle() {
        let runs = [run("a", &[4, 13])];
        let off = &aggregate(
            &runs,
            AggregateOptions {
                include_none: false,
            },
        )[0];
        let on = &aggregate(&runs, AggregateOptions { include_none: true })[0];
        assert_eq!(off.proportions.get(&4), Some(&1.0));
        assert_eq!(on.proportions.get(&4), Some(&0.5));
        assert_eq!(off.counts, on.counts);
    }

    #[test]
    fn all_none_has_no_proportions() {
        let r = &aggregate(&[run("a", &[13, 13])], AggregateOptions::default())[0];
        assert!(r.proportions.is_empty());
        assert_eq!(r.total(), 2);
    }

    #[test]
    fn diffs() {
        let reports = aggregate(
            &[run("c", &[4, 4, 4, 9, 9, 9, 9]), run("k", &[4, 4, 9, 9])],
            AggregateOptions::default(),
        );
        let d = diff_vs_control(&reports[0], &reports[1]);
        assert_eq!(d.rows.len(), 9);
        assert_eq!(
            d.row("suggestion").unwrap().diff,
            DiffCell::Defined { percent: 75.0 }
        );
        assert_eq!(
            d.row("shows solidarity").unwrap().diff,
            DiffCell::UndefinedZeroControl
        );
        let same = diff_vs_control(&reports[0], &reports[0]);
        assert!(same
            .rows
            .iter()
            .filter_map(|r| r.diff.percent())
            .all(|p| p == 0.0));
        assert!(render_diff_text(&d).contains("+75.0%"));
    }

    #[test]
    fn strips() {
        let s = sequence_strip(&run("a", &[4, 6, 6]).codes);
        assert_eq!(s.terciles[0], BTreeMap::from([(4, 1)]));
        assert_eq!(s.terciles[1], BTreeMap::from([(6, 1)]));
        assert_eq!(s.terciles[2], BTreeMap::from([(6, 1)]));
        assert_eq!(sequence_strip(&[]), SequenceStrip::default());
    }
}
