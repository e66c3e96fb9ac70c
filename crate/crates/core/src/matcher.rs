//! Template/probe comparison: chi-square distance between BSIF histograms
//! and masked fractional Hamming distance between code planes with a
//! search over circular shifts.
//!
//! A shift `s` aligns template column `x` with probe column `x + s`, so a
//! probe that is the template rotated by `k` columns scores best at `s = k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{histogram, normalize_histogram, BsifHistogram};
use crate::error::{Error, Result};
use crate::imgio::{IrisTemplate, IRIS_WIDTH};

/// Column shift corresponding to 11.25 degrees on a 512-column image.
pub const DEFAULT_MAX_SHIFT: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "hist-raw")]
    HistRaw,
    #[serde(rename = "hist-norm")]
    HistNormalized,
    #[serde(rename = "hd-mean")]
    HdMean,
    #[serde(rename = "hd-min")]
    HdMin,
    #[serde(rename = "hd-max")]
    HdMax,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::HistRaw,
        Strategy::HistNormalized,
        Strategy::HdMean,
        Strategy::HdMin,
        Strategy::HdMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::HistRaw => "hist-raw",
            Strategy::HistNormalized => "hist-norm",
            Strategy::HdMean => "hd-mean",
            Strategy::HdMin => "hd-min",
            Strategy::HdMax => "hd-max",
        }
    }

    pub fn is_hamming(self) -> bool {
        matches!(self, Strategy::HdMean | Strategy::HdMin | Strategy::HdMax)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftRange {
    pub max_shift_columns: u32,
}

impl ShiftRange {
    pub fn new(max_shift_columns: u32) -> Result<Self> {
        if max_shift_columns as usize >= IRIS_WIDTH / 2 {
            return Err(Error::InvalidArgument(format!(
                "max shift {max_shift_columns} must be below {}",
                IRIS_WIDTH / 2
            )));
        }
        Ok(ShiftRange { max_shift_columns })
    }

    /// Shifts in evaluation order: 0, -1, +1, -2, +2, ...
    pub fn shifts(&self) -> impl Iterator<Item = i32> {
        let m = self.max_shift_columns as i32;
        std::iter::once(0).chain((1..=m).flat_map(|k| [-k, k]))
    }
}

impl Default for ShiftRange {
    fn default() -> Self {
        ShiftRange {
            max_shift_columns: DEFAULT_MAX_SHIFT,
        }
    }
}

/// Dissimilarity score; smaller means more similar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonScore {
    pub strategy: Strategy,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_shift: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_bits: Option<u64>,
}

/// `1/2 * sum (a_i - b_i)^2 / (a_i + b_i)`, skipping bins where both are zero.
pub fn chi2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::BinMismatch(a.len(), b.len()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .filter(|(x, y)| *x + *y != 0.0)
        .map(|(x, y)| (x - y) * (x - y) / (x + y))
        .sum();
    Ok(0.5 * sum)
}

pub fn chi2_raw(t: &BsifHistogram, p: &BsifHistogram) -> Result<ComparisonScore> {
    if t.bins.len() != p.bins.len() {
        return Err(Error::BinMismatch(t.bins.len(), p.bins.len()));
    }
    let a: Vec<f64> = t.bins.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = p.bins.iter().map(|&v| v as f64).collect();
    Ok(ComparisonScore {
        strategy: Strategy::HistRaw,
        value: chi2_distance(&a, &b)?,
        best_shift: None,
        valid_bits: None,
    })
}

pub fn chi2_normalized(t: &BsifHistogram, p: &BsifHistogram) -> Result<ComparisonScore> {
    if t.bins.len() != p.bins.len() {
        return Err(Error::BinMismatch(t.bins.len(), p.bins.len()));
    }
    Ok(ComparisonScore {
        strategy: Strategy::HistNormalized,
        value: chi2_distance(&normalize_histogram(t)?, &normalize_histogram(p)?)?,
        best_shift: None,
        valid_bits: None,
    })
}

/// Per-filter fractional Hamming distances at one shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDistances {
    pub shift: i32,
    /// Bits valid in both masks after shifting.
    pub valid_bits: u64,
    /// `None` when the masks do not overlap.
    pub distances: Option<Vec<f64>>,
}

fn check_compatible(t: &IrisTemplate, p: &IrisTemplate) -> Result<()> {
    if t.n() != p.n() {
        return Err(Error::InvalidArgument(format!("template has {} planes, probe {}", t.n(), p.n())));
    }
    if !t.mask.same_shape(&p.mask) {
        return Err(Error::Dimensions(format!(
            "template {}x{}, probe {}x{}",
            t.width(),
            t.height(),
            p.width(),
            p.height()
        )));
    }
    Ok(())
}

fn distances_at(t: &IrisTemplate, p: &IrisTemplate, shift: i32) -> ShiftDistances {
    // probe column x + shift lands on template column x
    let k = -i64::from(shift);
    let mask = t.mask.and(&p.mask.shifted(k));
    let valid_bits = mask.count_ones();
    let distances = (valid_bits > 0).then(|| {
        t.planes
            .iter()
            .zip(&p.planes)
            .map(|(ct, cp)| ct.masked_xor_count(&cp.shifted(k), &mask) as f64 / valid_bits as f64)
            .collect()
    });
    ShiftDistances {
        shift,
        valid_bits,
        distances,
    }
}

/// `HD_i = |(c_t XOR c_p(s)) AND m_t AND m_p(s)| / |m_t AND m_p(s)|` for each
/// filter `i`.
pub fn hd_per_filter(t: &IrisTemplate, p: &IrisTemplate, shift: i32) -> Result<ShiftDistances> {
    check_compatible(t, p)?;
    Ok(distances_at(t, p, shift))
}

fn reduce(strategy: Strategy, d: &[f64]) -> f64 {
    match strategy {
        Strategy::HdMean => d.iter().sum::<f64>() / d.len() as f64,
        Strategy::HdMin => d.iter().copied().fold(f64::INFINITY, f64::min),
        Strategy::HdMax => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        _ => unreachable!("not a Hamming strategy"),
    }
}

/// Minimum over shifts of the mean, min or max of the per-filter distances.
/// Shifts without mask overlap are skipped; ties go to the smaller `|shift|`,
/// negative first.
pub fn score_hd(t: &IrisTemplate, p: &IrisTemplate, strategy: Strategy, range: ShiftRange) -> Result<ComparisonScore> {
    Ok(score_hd_all(t, p, &[strategy], range)?.remove(0))
}

/// Like [`score_hd`] for several Hamming strategies, sharing the per-shift work.
pub fn score_hd_all(
    t: &IrisTemplate,
    p: &IrisTemplate,
    strategies: &[Strategy],
    range: ShiftRange,
) -> Result<Vec<ComparisonScore>> {
    check_compatible(t, p)?;
    if let Some(s) = strategies.iter().find(|s| !s.is_hamming()) {
        return Err(Error::InvalidArgument(format!("{s} is not a Hamming strategy")));
    }
    let mut best: Vec<Option<ComparisonScore>> = vec![None; strategies.len()];
    for shift in range.shifts() {
        let sd = distances_at(t, p, shift);
        let Some(d) = sd.distances else { continue };
        for (slot, &strategy) in best.iter_mut().zip(strategies) {
            let value = reduce(strategy, &d);
            if slot.is_none_or(|b| value < b.value) {
                *slot = Some(ComparisonScore {
                    strategy,
                    value,
                    best_shift: Some(shift),
                    valid_bits: Some(sd.valid_bits),
                });
            }
        }
    }
    best.into_iter()
        .map(|b| b.ok_or(Error::NoOverlap(range.max_shift_columns)))
        .collect()
}

/// Something that can be scored: a full template or only its histogram.
#[derive(Debug, Clone, Copy)]
pub enum Comparable<'a> {
    Template(&'a IrisTemplate),
    Histogram(&'a BsifHistogram),
}

impl<'a> From<&'a IrisTemplate> for Comparable<'a> {
    fn from(t: &'a IrisTemplate) -> Self {
        Comparable::Template(t)
    }
}

impl<'a> From<&'a BsifHistogram> for Comparable<'a> {
    fn from(h: &'a BsifHistogram) -> Self {
        Comparable::Histogram(h)
    }
}

fn as_histogram(c: Comparable<'_>) -> Result<std::borrow::Cow<'_, BsifHistogram>> {
    Ok(match c {
        Comparable::Template(t) => std::borrow::Cow::Owned(histogram(t)?),
        Comparable::Histogram(h) => std::borrow::Cow::Borrowed(h),
    })
}

/// Dispatches to the scoring function for `strategy`. Histogram strategies
/// accept templates (their histograms are computed); Hamming strategies
/// require templates.
pub fn score<'a>(
    a: impl Into<Comparable<'a>>,
    b: impl Into<Comparable<'a>>,
    strategy: Strategy,
    range: ShiftRange,
) -> Result<ComparisonScore> {
    let (a, b) = (a.into(), b.into());
    match strategy {
        Strategy::HistRaw => chi2_raw(&*as_histogram(a)?, &*as_histogram(b)?),
        Strategy::HistNormalized => chi2_normalized(&*as_histogram(a)?, &*as_histogram(b)?),
        Strategy::HdMean | Strategy::HdMin | Strategy::HdMax => match (a, b) {
            (Comparable::Template(t), Comparable::Template(p)) => score_hd(t, p, strategy, range),
            _ => Err(Error::NeedsTemplates(strategy.name())),
        },
    }
}

/// All requested strategies for one template pair, computing the histograms
/// and shift search once.
pub fn score_all(t: &IrisTemplate, p: &IrisTemplate, strategies: &[Strategy], range: ShiftRange) -> Result<Vec<ComparisonScore>> {
    let hd: Vec<Strategy> = strategies.iter().copied().filter(|s| s.is_hamming()).collect();
    let mut hd_scores = if hd.is_empty() {
        Vec::new()
    } else {
        score_hd_all(t, p, &hd, range)?
    }
    .into_iter();
    let hists = if strategies.iter().any(|s| !s.is_hamming()) {
        Some((histogram(t)?, histogram(p)?))
    } else {
        None
    };
    strategies
        .iter()
        .map(|&s| match s {
            Strategy::HistRaw => {
                let (a, b) = hists.as_ref().expect("histograms computed");
                chi2_raw(a, b)
            }
            Strategy::HistNormalized => {
                let (a, b) = hists.as_ref().expect("histograms computed");
                chi2_normalized(a, b)
            }
            _ => Ok(hd_scores.next().expect("one score per Hamming strategy")),
        })
        .collect()
}
