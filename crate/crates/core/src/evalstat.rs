//! Detection metrics (fake = positive class), the exact two-sided McNemar
//! test, and sequential Elo ratings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub truth: u8,
    pub pred: u8,
    /// Probability of the fake class.
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Confusion {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
        }
    }
}

pub fn confusion_f1(preds: &[Prediction]) -> Result<Confusion> {
    if preds.is_empty() {
        return Err(Error::Contract("confusion matrix of an empty prediction set".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for p in preds {
        match (p.truth, p.pred) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            (0, 0) => tn += 1,
            (t, q) => return Err(Error::Contract(format!("track '{}': labels {t}/{q} not in {{0,1}}", p.id))),
        }
    }
    Ok(Confusion::from_counts(tp, fp, fn_, tn))
}

/// Paired outcome counts: `a` both correct, `b` both wrong, `c` only the
/// first model correct, `d` only the second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McNemar {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub p_value: f64,
}

/// Exact two-sided binomial p-value for `c` vs `d` discordant pairs.
pub fn mcnemar_p(c: usize, d: usize) -> f64 {
    let n = c + d;
    if n == 0 {
        return 1.0;
    }
    let k = c.min(d);
    let tail = if n <= 120 { tail_exact(n, k) } else { tail_log(n, k) };
    (2.0 * tail).min(1.0)
}

/// `P(X ≤ k)` for `X ~ Bin(n, ½)`, summed in integers (`C(n, i) < 2^120`).
fn tail_exact(n: usize, k: usize) -> f64 {
    let mut binom: u128 = 1;
    let mut count: u128 = 0;
    for i in 0..=k {
        if i > 0 {
            binom = binom * (n - i + 1) as u128 / i as u128;
        }
        count += binom;
    }
    count as f64 / 2f64.powi(n as i32)
}

/// Same tail in log space, for `n` beyond the integer range.
fn tail_log(n: usize, k: usize) -> f64 {
    let mut log_binom = 0.0f64;
    let mut terms = Vec::with_capacity(k + 1);
    for i in 0..=k {
        if i > 0 {
            log_binom += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        terms.push(log_binom - n as f64 * std::f64::consts::LN_2);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).exp()
}

pub fn mcnemar_exact(first: &[Prediction], second: &[Prediction]) -> Result<McNemar> {
    if first.len() != second.len() {
        return Err(Error::Contract(format!(
            "prediction sets differ in size: {} vs {}",
            first.len(),
            second.len()
        )));
    }
    let by_id: HashMap<&str, &Prediction> = second.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != second.len() {
        return Err(Error::Contract("duplicate ids in the second prediction set".into()));
    }
    let (mut a, mut b, mut c, mut d) = (0, 0, 0, 0);
    let mut seen = std::collections::HashSet::new();
    for p in first {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Contract(format!("duplicate id '{}' in the first prediction set", p.id)));
        }
        let q = by_id
            .get(p.id.as_str())
            .ok_or_else(|| Error::Contract(format!("id '{}' missing from the second prediction set", p.id)))?;
        if p.truth != q.truth {
            return Err(Error::Contract(format!("id '{}' has different true labels", p.id)));
        }
        match (p.pred == p.truth, q.pred == q.truth) {
            (true, true) => a += 1,
            (false, false) => b += 1,
            (true, false) => c += 1,
            (false, true) => d += 1,
        }
    }
    Ok(McNemar {
        a,
        b,
        c,
        d,
        p_value: mcnemar_p(c, d),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    AWins,
    BWins,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchRecord {
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
}

pub const ELO_K: f64 = 32.0;
pub const ELO_INITIAL: f64 = 1000.0;

/// Sequential Elo over `matches` in order. Ratings are returned in order of
/// each model's first appearance.
pub fn elo_rank(matches: &[MatchRecord], k: f64, initial: f64) -> Result<Vec<(String, f64)>> {
    if matches.is_empty() {
        return Err(Error::Contract("empty match log".into()));
    }
    if !(k > 0.0) {
        return Err(Error::Config(format!("K factor must be positive, got {k}")));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut ratings: Vec<(String, f64)> = Vec::new();
    let mut slot = |name: &str, ratings: &mut Vec<(String, f64)>| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            ratings.push((name.to_string(), initial));
            ratings.len() - 1
        })
    };
    for (i, m) in matches.iter().enumerate() {
        if m.model_a == m.model_b {
            return Err(Error::Contract(format!("match {i}: '{}' plays itself", m.model_a)));
        }
        let ia = slot(&m.model_a, &mut ratings);
        let ib = slot(&m.model_b, &mut ratings);
        let (ra, rb) = (ratings[ia].1, ratings[ib].1);
        let expected_a = 1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0));
        let score_a = if m.outcome == Outcome::AWins { 1.0 } else { 0.0 };
        let delta = k * (score_a - expected_a);
        ratings[ia].1 = ra + delta;
        ratings[ib].1 = rb - delta;
    }
    Ok(ratings)
}

/// Ratings sorted best first (ties by name).
pub fn leaderboard(mut ratings: Vec<(String, f64)>) -> Vec<(String, f64)> {
    ratings.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    ratings
}

fn read_tsv(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path, header)
}

fn parse_tsv(text: &str, path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let err = |line, msg| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(err(1, format!("expected header '{header}'"))),
    }
    let width = header.split('\t').count();
    let mut rows = Vec::new();
    for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cols.len() != width {
            return Err(err(n, format!("expected {width} columns, found {}", cols.len())));
        }
        rows.push((n, cols));
    }
    Ok(rows)
}

pub const PREDICTIONS_HEADER: &str = "id\ttrue\tpred\tscore";
pub const MATCHES_HEADER: &str = "model_a\tmodel_b\toutcome";

pub fn parse_predictions_str(text: &str, path: &Path) -> Result<Vec<Prediction>> {
    let err = |line, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let label = |n, s: &str| match s {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(err(n, format!("label must be 0 or 1, found '{other}'"))),
    };
    parse_tsv(text, path, PREDICTIONS_HEADER)?
        .into_iter()
        .map(|(n, c)| {
            let score: f64 = c[3].parse().map_err(|_| err(n, format!("bad score '{}'", c[3])))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(err(n, format!("score {score} outside [0, 1]")));
            }
            Ok(Prediction {
                id: c[0].clone(),
                truth: label(n, &c[1])?,
                pred: label(n, &c[2])?,
                score,
            })
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions_str(&text, path)
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut s = format!("{PREDICTIONS_HEADER}\n");
    for p in preds {
        let _ = writeln!(s, "{}\t{}\t{}\t{:.6}", p.id, p.truth, p.pred, p.score);
    }
    s
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRecord>> {
    read_tsv(path, MATCHES_HEADER)?
        .into_iter()
        .map(|(n, c)| {
            let outcome = match c[2].as_str() {
                "a_wins" => Outcome::AWins,
                "b_wins" => Outcome::BWins,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n,
                        msg: format!("outcome must be a_wins or b_wins, found '{other}'"),
                    })
                }
            };
            Ok(MatchRecord {
                model_a: c[0].clone(),
                model_b: c[1].clone(),
                outcome,
            })
        })
        .collect()
}
