use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;

use super::{kendall_tau_b, EvalError};

/// One rater's level for one element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterAnnotation {
    pub rater_id: String,
    pub element_id: String,
    pub level: SemanticLevel,
}

type Ratings = BTreeMap<String, BTreeMap<String, SemanticLevel>>;

fn by_rater(annotations: &[RaterAnnotation]) -> Result<Ratings, EvalError> {
    let mut out: Ratings = BTreeMap::new();
    for a in annotations {
        if out.entry(a.rater_id.clone()).or_default().insert(a.element_id.clone(), a.level).is_some() {
            return Err(EvalError::DuplicateAnnotation { rater: a.rater_id.clone(), element: a.element_id.clone() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub shared: usize,
    /// Absent when either rater's levels are constant on the shared set.
    pub tau_b: Option<f64>,
}

/// Kendall's tau-b for every pair of raters over their shared elements.
pub fn pairwise_agreement(annotations: &[RaterAnnotation]) -> Result<Vec<RaterAgreement>, EvalError> {
    let ratings = by_rater(annotations)?;
    let raters: Vec<_> = ratings.keys().collect();
    let mut out = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let (x, y): (Vec<usize>, Vec<usize>) = ratings[*a]
                .iter()
                .filter_map(|(el, la)| ratings[*b].get(el).map(|lb| (la.ordinal(), lb.ordinal())))
                .unzip();
            out.push(RaterAgreement {
                rater_a: (*a).clone(),
                rater_b: (*b).clone(),
                shared: x.len(),
                tau_b: kendall_tau_b(&x, &y).ok(),
            });
        }
    }
    Ok(out)
}

/// Raw counts and their row-normalized rates, indexed by level ordinal.
/// Rows without counts stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub raw: [[u64; 4]; 4],
    pub normalized: [[f64; 4]; 4],
}

impl Confusion {
    fn from_raw(raw: [[u64; 4]; 4]) -> Self {
        let mut normalized = [[0.0; 4]; 4];
        for (r, row) in raw.iter().enumerate() {
            let sum: u64 = row.iter().sum();
            if sum > 0 {
                for (c, &v) in row.iter().enumerate() {
                    normalized[r][c] = v as f64 / sum as f64;
                }
            }
        }
        Self { raw, normalized }
    }
}

/// Undirected inter-rater confusion: each rater pair's cross-tabulation
/// plus its transpose, summed over pairs.
pub fn aggregate_confusion(annotations: &[RaterAnnotation]) -> Result<Confusion, EvalError> {
    let ratings = by_rater(annotations)?;
    let raters: Vec<_> = ratings.values().collect();
    let mut raw = [[0u64; 4]; 4];
    let mut overlap = 0;
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            for (el, la) in a.iter() {
                if let Some(lb) = b.get(el) {
                    raw[la.ordinal()][lb.ordinal()] += 1;
                    raw[lb.ordinal()][la.ordinal()] += 1;
                    overlap += 1;
                }
            }
        }
    }
    if overlap == 0 {
        return Err(EvalError::NoOverlap);
    }
    Ok(Confusion::from_raw(raw))
}

/// Directed confusion of a single predictor against every rater: rows are
/// the prediction, columns the raters' levels.
pub fn directional_confusion(
    predictions: &BTreeMap<String, SemanticLevel>,
    annotations: &[RaterAnnotation],
) -> Result<Confusion, EvalError> {
    by_rater(annotations)?;
    let mut raw = [[0u64; 4]; 4];
    let mut overlap = 0;
    for a in annotations {
        if let Some(p) = predictions.get(&a.element_id) {
            raw[p.ordinal()][a.level.ordinal()] += 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return Err(EvalError::NoOverlap);
    }
    Ok(Confusion::from_raw(raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    AFirst,
    BFirst,
    Equal,
}

/// Which of two elements a judge would remove first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub pair_id: String,
    pub level_a: SemanticLevel,
    pub level_b: SemanticLevel,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    /// `percent[r][c]`: share of decisive (r, c) judgments where the
    /// r-level element went first; absent for cells with no decisive
    /// judgments and on the diagonal.
    pub percent: [[Option<f64>; 4]; 4],
    /// Decisive judgments where the row level went first.
    pub wins: [[u64; 4]; 4],
    pub same_level_total: usize,
    pub cross_level_total: usize,
    /// Share of "equal" answers, in percent.
    pub equal_rate_same_level: Option<f64>,
    pub equal_rate_cross_level: Option<f64>,
}

pub fn preference_table(judgments: &[PairJudgment]) -> PreferenceTable {
    let mut wins = [[0u64; 4]; 4];
    let (mut same, mut cross, mut same_eq, mut cross_eq) = (0usize, 0usize, 0usize, 0usize);
    for j in judgments {
        let (a, b) = (j.level_a.ordinal(), j.level_b.ordinal());
        let is_same = a == b;
        if is_same {
            same += 1;
        } else {
            cross += 1;
        }
        match j.choice {
            Choice::Equal if is_same => same_eq += 1,
            Choice::Equal => cross_eq += 1,
            _ if is_same => {}
            Choice::AFirst => wins[a][b] += 1,
            Choice::BFirst => wins[b][a] += 1,
        }
    }
    let mut percent = [[None; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let decisive = wins[r][c] + wins[c][r];
            if r != c && decisive > 0 {
                percent[r][c] = Some(100.0 * wins[r][c] as f64 / decisive as f64);
            }
        }
    }
    let rate = |eq: usize, n: usize| (n > 0).then(|| 100.0 * eq as f64 / n as f64);
    PreferenceTable {
        percent,
        wins,
        same_level_total: same,
        cross_level_total: cross,
        equal_rate_same_level: rate(same_eq, same),
        equal_rate_cross_level: rate(cross_eq, cross),
    }
}
