use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CodedTurn, IpaCategory, CATEGORY_COUNT};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgreementError {
    #[error("codings cover different turns ({left} vs {right} turns, or differing indices)")]
    LengthMismatch { left: usize, right: usize },
    #[error("turn {0} is coded more than once by the same rater")]
    DuplicateTurn(usize),
    #[error("no turns to compare")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub percent_agreement: f64,
    pub p_o: f64,
    pub p_e: f64,
    pub kappa: f64,
    /// Both raters used one and the same category throughout, so chance
    /// agreement is 1 and kappa is set by convention.
    pub degenerate: bool,
    /// Rows are the first rater, columns the second, indexed by category - 1.
    pub confusion: Vec<Vec<u64>>,
}

fn align(
    a: &[CodedTurn],
    b: &[CodedTurn],
) -> Result<Vec<(IpaCategory, IpaCategory)>, AgreementError> {
    let index = |codes: &[CodedTurn]| -> Result<BTreeMap<usize, IpaCategory>, AgreementError> {
        let mut map = BTreeMap::new();
        for c in codes {
            if map.insert(c.turn_index, c.category).is_some() {
                return Err(AgreementError::DuplicateTurn(c.turn_index));
            }
        }
        Ok(map)
    };
    let left = index(a)?;
    let right = index(b)?;
    if left.len() != right.len() || !left.keys().eq(right.keys()) {
        return Err(AgreementError::LengthMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    if left.is_empty() {
        return Err(AgreementError::Empty);
    }
    Ok(left.into_values().zip(right.into_values()).collect())
}

pub fn percent_agreement(a: &[CodedTurn], b: &[CodedTurn]) -> Result<f64, AgreementError> {
    let pairs = align(a, b)?;
    let same = pairs.iter().filter(|(x, y)| x == y).count();
    Ok(same as f64 / pairs.len() as f64)
}

pub fn cohens_kappa(a: &[CodedTurn], b: &[CodedTurn]) -> Result<AgreementReport, AgreementError> {
    let pairs = align(a, b)?;
    let n = pairs.len() as u64;
    let mut confusion = vec![vec![0u64; CATEGORY_COUNT]; CATEGORY_COUNT];
    for (x, y) in &pairs {
        confusion[x.index()][y.index()] += 1;
    }
    let trace: u64 = (0..CATEGORY_COUNT).map(|k| confusion[k][k]).sum();
    let chance: u64 = (0..CATEGORY_COUNT)
        .map(|k| {
            let row: u64 = confusion[k].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[k]).sum();
            row * col
        })
        .sum();
    let p_o = trace as f64 / n as f64;
    let p_e = chance as f64 / (n * n) as f64;
    let degenerate = chance == n * n;
    let kappa = if degenerate {
        if trace == n {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(AgreementReport {
        n: pairs.len(),
        percent_agreement: p_o,
        p_o,
        p_e,
        kappa,
        degenerate,
        confusion,
    })
}
