//! Evaluation protocol: pair selection, d', EER, grid search over
//! (bank, strategy) cells, bootstrap of d' and a permutation ANOVA between
//! two methods.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::encode_any;
use crate::error::{Error, Result};
use crate::imgio::{DatasetManifest, Eye, FilterBank, IrisTemplate, NormalizedIris};
use crate::matcher::{score_all, ShiftRange, Strategy};
use crate::seeds::{purpose, rng_from};

pub const DEFAULT_BOOTSTRAP_SETS: usize = 30;
pub const DEFAULT_PERMUTATIONS: usize = 100_000;

/// Human-readable statement of how impostor pairs are drawn, embedded in
/// reports.
pub const IMPOSTOR_SCHEME: &str = "one impostor pair per iris: a seeded representative image of the iris \
     paired with a seeded image of a different subject, same sensor when available, no repeated pairs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.iter().chain(&impostor).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateScores("non-finite score".into()));
        }
        Ok(ScoreSet { genuine, impostor })
    }

    pub fn swapped(&self) -> ScoreSet {
        ScoreSet {
            genuine: self.impostor.clone(),
            impostor: self.genuine.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoreSet {
        ScoreSet {
            genuine: self.genuine.iter().map(|&v| f(v)).collect(),
            impostor: self.impostor.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean_g: f64,
    pub mean_i: f64,
    pub var_g: f64,
    pub var_i: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn unbiased_var(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

impl ScoreStats {
    pub fn of(s: &ScoreSet) -> Result<Self> {
        if s.genuine.len() < 2 || s.impostor.len() < 2 {
            return Err(Error::DegenerateScores(format!(
                "need at least 2 scores per class, have {} genuine and {} impostor",
                s.genuine.len(),
                s.impostor.len()
            )));
        }
        let mean_g = mean(&s.genuine);
        let mean_i = mean(&s.impostor);
        Ok(ScoreStats {
            mean_g,
            mean_i,
            var_g: unbiased_var(&s.genuine, mean_g),
            var_i: unbiased_var(&s.impostor, mean_i),
        })
    }
}

/// `|mean_g - mean_i| / sqrt((var_g + var_i) / 2)` with unbiased variances.
pub fn d_prime(s: &ScoreSet) -> Result<f64> {
    let st = ScoreStats::of(s)?;
    let pooled = 0.5 * (st.var_g + st.var_i);
    if pooled <= 0.0 {
        return Err(Error::DegenerateScores("zero pooled variance".into()));
    }
    Ok((st.mean_g - st.mean_i).abs() / pooled.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points at every distinct score, accepting `score <= threshold`.
pub fn roc_points(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(Error::DegenerateScores("empty score class".into()));
    }
    let mut g = s.genuine.clone();
    let mut i = s.impostor.clone();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let (mut gi, mut ii) = (0, 0);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            while gi < g.len() && g[gi] <= t {
                gi += 1;
            }
            while ii < i.len() && i[ii] <= t {
                ii += 1;
            }
            RocPoint {
                threshold: t,
                far: ii as f64 / ni,
                frr: (g.len() - gi) as f64 / ng,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate by linear interpolation between the two operating
/// points that bracket FAR = FRR. The sweep starts from the virtual point
/// FAR = 0, FRR = 1 below the smallest score.
pub fn eer(s: &ScoreSet) -> Result<Eer> {
    let pts = roc_points(s)?;
    let mut prev = RocPoint {
        threshold: pts[0].threshold,
        far: 0.0,
        frr: 1.0,
    };
    for p in pts {
        if p.far >= p.frr {
            let da = prev.far - prev.frr;
            let db = p.far - p.frr;
            let alpha = -da / (db - da);
            return Ok(Eer {
                eer: prev.far + alpha * (p.far - prev.far),
                threshold: prev.threshold + alpha * (p.threshold - prev.threshold),
            });
        }
        prev = p;
    }
    unreachable!("the last operating point has FAR = 1 and FRR = 0")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub d_prime: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

pub fn metrics(s: &ScoreSet) -> Result<Metrics> {
    let e = eer(s)?;
    Ok(Metrics {
        d_prime: d_prime(s)?,
        eer: e.eer,
        eer_threshold: e.threshold,
        genuine_count: s.genuine.len(),
        impostor_count: s.impostor.len(),
    })
}

// ---------------------------------------------------------------------------
// Pairing

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairs {
    pub genuine: Vec<(usize, usize)>,
    pub impostor: Vec<(usize, usize)>,
    /// Iris/sensor groups that could not contribute a genuine pair.
    pub single_image_groups: Vec<String>,
}

impl Pairs {
    /// Record indices referenced by any pair, ascending.
    pub fn used_indices(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .genuine
            .iter()
            .chain(&self.impostor)
            .flat_map(|&(a, b)| [a, b])
            .collect();
        set.into_iter().collect()
    }
}

/// One genuine pair per (subject, eye, sensor) and one impostor pair per
/// iris, all drawn deterministically from `seed`.
pub fn make_pairs(manifest: &DatasetManifest, seed: u64) -> Pairs {
    let recs = &manifest.records;
    let mut groups: BTreeMap<(&str, Eye, &str), Vec<usize>> = BTreeMap::new();
    let mut irises: BTreeMap<(&str, Eye), Vec<usize>> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        groups.entry((&r.subject, r.eye, &r.sensor)).or_default().push(i);
        irises.entry((&r.subject, r.eye)).or_default().push(i);
    }

    let mut pairs = Pairs::default();
    for (g, ((subject, eye, sensor), idx)) in groups.iter().enumerate() {
        if idx.len() < 2 {
            log::warn!("{subject}/{eye:?}/{sensor} has a single image; no genuine pair");
            pairs.single_image_groups.push(format!("{subject}/{eye:?}/{sensor}"));
            continue;
        }
        let mut rng = rng_from(seed, &[purpose::PAIRS, 0, g as u64]);
        let chosen = rand::seq::index::sample(&mut rng, idx.len(), 2);
        pairs.genuine.push((idx[chosen.index(0)], idx[chosen.index(1)]));
    }

    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (k, ((subject, _), idx)) in irises.iter().enumerate() {
        let mut rng = rng_from(seed, &[purpose::PAIRS, 1, k as u64]);
        let rep = idx[rng.random_range(0..idx.len())];
        let free = |j: &usize| {
            recs[*j].subject != *subject && !used.contains(&(rep.min(*j), rep.max(*j)))
        };
        let same_sensor: Vec<usize> = (0..recs.len())
            .filter(|j| recs[*j].sensor == recs[rep].sensor)
            .filter(free)
            .collect();
        let candidates = if same_sensor.is_empty() {
            (0..recs.len()).filter(free).collect()
        } else {
            same_sensor
        };
        if candidates.is_empty() {
            continue;
        }
        let partner = candidates[rng.random_range(0..candidates.len())];
        used.insert((rep.min(partner), rep.max(partner)));
        pairs.impostor.push((rep, partner));
    }
    pairs
}

// ---------------------------------------------------------------------------
// Scoring a bank

/// Encodes the images referenced by `pairs` and scores every pair under each
/// strategy. `images` is indexed like the manifest the pairs came from.
pub fn score_bank(
    images: &[NormalizedIris],
    pairs: &Pairs,
    bank: &FilterBank,
    strategies: &[Strategy],
    range: ShiftRange,
) -> Result<Vec<ScoreSet>> {
    let mut templates: BTreeMap<usize, IrisTemplate> = BTreeMap::new();
    for i in pairs.used_indices() {
        let img = images
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("pair references image {i} of {}", images.len())))?;
        templates.insert(i, encode_any(img, bank)?);
    }
    let score_list = |list: &[(usize, usize)]| -> Result<Vec<Vec<f64>>> {
        list.iter()
            .map(|(a, b)| {
                Ok(score_all(&templates[a], &templates[b], strategies, range)?
                    .into_iter()
                    .map(|s| s.value)
                    .collect())
            })
            .collect()
    };
    let g = score_list(&pairs.genuine)?;
    let im = score_list(&pairs.impostor)?;
    (0..strategies.len())
        .map(|k| ScoreSet::new(g.iter().map(|v| v[k]).collect(), im.iter().map(|v| v[k]).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub bank_index: usize,
    pub n: usize,
    pub l: usize,
    pub bank_fingerprint: String,
    pub strategy: Strategy,
    pub d_prime: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub failure: Option<String>,
}

/// d' descending, EER ascending, then smaller n, smaller l, bank index and
/// strategy. Failed cells sort last.
pub fn rank_cmp(a: &GridCell, b: &GridCell) -> Ordering {
    let key = |c: &GridCell| c.d_prime.zip(c.eer);
    match (key(a), key(b)) {
        (Some((da, ea)), Some((db, eb))) => db.total_cmp(&da).then(ea.total_cmp(&eb)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then(a.n.cmp(&b.n))
    .then(a.l.cmp(&b.l))
    .then(a.bank_index.cmp(&b.bank_index))
    .then(a.strategy.cmp(&b.strategy))
}

/// Evaluates every (bank, strategy) cell on the given pairs and returns the
/// cells ranked by [`rank_cmp`]. A failing cell is recorded, not fatal.
pub fn grid_search(
    images: &[NormalizedIris],
    pairs: &Pairs,
    banks: &[FilterBank],
    strategies: &[Strategy],
    range: ShiftRange,
) -> Vec<GridCell> {
    let mut cells: Vec<GridCell> = banks
        .par_iter()
        .enumerate()
        .flat_map_iter(|(bank_index, bank)| {
            let fp = bank.fingerprint().to_string();
            let scored = score_bank(images, pairs, bank, strategies, range);
            strategies.iter().enumerate().map(move |(k, &strategy)| {
                let mut cell = GridCell {
                    bank_index,
                    n: bank.n(),
                    l: bank.l(),
                    bank_fingerprint: fp.clone(),
                    strategy,
                    d_prime: None,
                    eer: None,
                    eer_threshold: None,
                    failure: None,
                };
                match scored.as_ref().map_err(|e| e.to_string()).and_then(|sets| {
                    metrics(&sets[k]).map_err(|e| e.to_string())
                }) {
                    Ok(m) => {
                        cell.d_prime = Some(m.d_prime);
                        cell.eer = Some(m.eer);
                        cell.eer_threshold = Some(m.eer_threshold);
                    }
                    Err(e) => cell.failure = Some(e),
                }
                cell
            })
        })
        .collect();
    cells.sort_by(rank_cmp);
    cells
}

// ---------------------------------------------------------------------------
// Bootstrap and significance

/// d' of `sets` resamples of `s`; genuine and impostor lists are resampled
/// independently with replacement to their original sizes.
pub fn bootstrap_dprime(s: &ScoreSet, sets: usize, seed: u64) -> Result<Vec<f64>> {
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(Error::DegenerateScores("empty score class".into()));
    }
    (0..sets)
        .map(|k| {
            let mut rng = rng_from(seed, &[purpose::BOOTSTRAP, k as u64]);
            let mut resample = |v: &[f64]| -> Vec<f64> {
                (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect()
            };
            let g = resample(&s.genuine);
            let i = resample(&s.impostor);
            d_prime(&ScoreSet { genuine: g, impostor: i })
        })
        .collect()
}

/// Type-7 sample quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Most extreme values inside the fences.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot_summary(values: &[f64]) -> Result<BoxplotSummary> {
    if values.is_empty() {
        return Err(Error::DegenerateScores("no values to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - 1.5 * iqr;
    let upper_fence = q3 + 1.5 * iqr;
    let inside = || v.iter().copied().filter(|x| (lower_fence..=upper_fence).contains(x));
    Ok(BoxplotSummary {
        median: quantile(&v, 0.5),
        q1,
        q3,
        lower_fence,
        upper_fence,
        lower_whisker: inside().next().unwrap_or(q1),
        upper_whisker: inside().next_back().unwrap_or(q3),
        outliers: v.iter().copied().filter(|x| !(lower_fence..=upper_fence).contains(x)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_statistic: f64,
    pub p_value: f64,
    /// True when every distinct label assignment was enumerated.
    pub exact: bool,
    pub permutations: u64,
}

/// One-way ANOVA F for two groups: the first `na` values against the rest.
/// Infinite when the groups differ and have no spread.
fn two_group_f(values: &[f64], na: usize) -> f64 {
    let (a, b) = values.split_at(na);
    let n = values.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let m = mean(values);
    let between = a.len() as f64 * (ma - m).powi(2) + b.len() as f64 * (mb - m).powi(2);
    let within: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
    if within == 0.0 {
        return if between == 0.0 { 0.0 } else { f64::INFINITY };
    }
    between / (within / (n - 2.0))
}

fn binomial(n: usize, k: usize) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Advances `idx` (strictly increasing, values < n) to the next
/// k-combination in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Two-group one-way ANOVA with a label-permutation p-value. When the
/// number of distinct assignments is at most `permutations` they are all
/// enumerated and `p = #{F >= F_obs} / C(N, na)`; otherwise `permutations`
/// random relabelings give `p = (b + 1) / (permutations + 1)`.
pub fn compare_methods(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<AnovaResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateScores("each group needs at least 2 values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateScores("non-finite value".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let na = a.len();
    let f_obs = two_group_f(&pooled, na);
    if f_obs.is_infinite() {
        return Err(Error::DegenerateScores("zero within-group variance".into()));
    }
    let at_least = |f: f64| f >= f_obs - 1e-9 * f_obs;
    let total = binomial(pooled.len(), na);
    if let Some(total) = total.filter(|&t| t <= permutations as u64) {
        let n = pooled.len();
        let mut idx: Vec<usize> = (0..na).collect();
        let mut buf = vec![0.0; n];
        let mut hits = 0u64;
        loop {
            let mut in_a = vec![false; n];
            for &i in &idx {
                in_a[i] = true;
            }
            let (mut ka, mut kb) = (0, na);
            for (i, &v) in pooled.iter().enumerate() {
                if in_a[i] {
                    buf[ka] = v;
                    ka += 1;
                } else {
                    buf[kb] = v;
                    kb += 1;
                }
            }
            if at_least(two_group_f(&buf, na)) {
                hits += 1;
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
        return Ok(AnovaResult {
            f_statistic: f_obs,
            p_value: hits as f64 / total as f64,
            exact: true,
            permutations: total,
        });
    }
    let mut rng = rng_from(seed, &[purpose::PERMUTATION]);
    let mut buf = pooled.clone();
    let mut hits = 0u64;
    for _ in 0..permutations {
        buf.shuffle(&mut rng);
        if at_least(two_group_f(&buf, na)) {
            hits += 1;
        }
    }
    Ok(AnovaResult {
        f_statistic: f_obs,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        exact: false,
        permutations: permutations as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::ManifestRecord;
    use crate::matcher::Strategy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::new(g.to_vec(), i.to_vec()).unwrap()
    }

    #[test]
    fn dprime_example() {
        let d = d_prime(&set(&[0.2, 0.3], &[0.5, 0.6])).unwrap();
        assert!((d - 4.242640687).abs() < 1e-9, "{d}");
        assert_eq!(d_prime(&set(&[0.1, 0.3], &[0.3, 0.1])).unwrap(), 0.0);
        assert!(matches!(d_prime(&set(&[0.2, 0.2], &[0.5, 0.5])), Err(Error::DegenerateScores(_))));
        assert!(matches!(d_prime(&set(&[0.2], &[0.5, 0.6])), Err(Error::DegenerateScores(_))));
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&set(&[0.1, 0.2], &[0.5, 0.6])).unwrap().eer, 0.0);
        assert_eq!(eer(&set(&[0.1, 0.4], &[0.2, 0.5])).unwrap().eer, 0.5);
        assert!((eer(&set(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0])).unwrap().eer - 0.5).abs() < 1e-15);
        assert_eq!(eer(&set(&[0.3, 0.3], &[0.3])).unwrap().eer, 0.5);
        assert!(eer(&set(&[], &[0.3])).is_err());
    }

    /// Intersection of the DET polyline (virtual start included) with the
    /// diagonal, computed geometrically and independently of `eer`.
    fn eer_oracle(s: &ScoreSet) -> f64 {
        let mut ts: Vec<f64> = s.genuine.iter().chain(&s.impostor).copied().collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut poly = vec![(0.0, 1.0)];
        for t in ts {
            let far = s.impostor.iter().filter(|&&v| v <= t).count() as f64 / s.impostor.len() as f64;
            let frr = s.genuine.iter().filter(|&&v| v > t).count() as f64 / s.genuine.len() as f64;
            poly.push((far, frr));
        }
        for w in poly.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x1 - y1 >= 0.0 {
                // segment point (x0 + a dx, y0 + a dy) with x = y
                let a = (y0 - x0) / ((x1 - x0) - (y1 - y0));
                return x0 + a * (x1 - x0);
            }
        }
        unreachable!()
    }

    #[test]
    fn eer_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let ng = rng.random_range(1..40);
            let ni = rng.random_range(1..40);
            let g: Vec<f64> = (0..ng).map(|_| (rng.random_range(0..30) as f64) / 30.0).collect();
            let i: Vec<f64> = (0..ni).map(|_| (rng.random_range(5..40) as f64) / 30.0).collect();
            let s = set(&g, &i);
            assert!((eer(&s).unwrap().eer - eer_oracle(&s)).abs() <= 1e-9);
        }
    }

    fn manifest(specs: &[(&str, Eye, &str, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for (subject, eye, sensor, count) in specs {
            for k in 0..*count {
                records.push(ManifestRecord {
                    image: format!("{subject}_{eye:?}_{sensor}_{k}.pgm"),
                    mask: format!("{subject}_{eye:?}_{sensor}_{k}_m.pgm"),
                    subject: subject.to_string(),
                    eye: *eye,
                    sensor: sensor.to_string(),
                    iris_id: format!("{subject}_{eye:?}"),
                });
            }
        }
        DatasetManifest::new(records, ".").unwrap()
    }

    #[test]
    fn full_scale_pair_counts() {
        // 453 irises, each imaged by 2 sensors
        let names: Vec<String> = (0..227).map(|s| format!("s{s:03}")).collect();
        let mut specs = Vec::new();
        for (k, name) in names.iter().enumerate() {
            for eye in [Eye::L, Eye::R] {
                if k == 226 && eye == Eye::R {
                    continue;
                }
                for sensor in ["A", "B"] {
                    specs.push((name.as_str(), eye, sensor, 3));
                }
            }
        }
        let m = manifest(&specs);
        let p = make_pairs(&m, 7);
        assert_eq!(p.genuine.len(), 906);
        assert_eq!(p.impostor.len(), 453);
        let recs = &m.records;
        for &(a, b) in &p.genuine {
            assert_ne!(a, b);
            assert_eq!(
                (&recs[a].subject, recs[a].eye, &recs[a].sensor),
                (&recs[b].subject, recs[b].eye, &recs[b].sensor)
            );
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &p.impostor {
            assert_ne!(recs[a].subject, recs[b].subject);
            assert_eq!(recs[a].sensor, recs[b].sensor);
            assert!(seen.insert((a.min(b), a.max(b))));
        }
        assert_eq!(make_pairs(&m, 7), p);
        assert_ne!(make_pairs(&m, 8), p);
    }

    #[test]
    fn single_subject_has_no_impostors() {
        let m = manifest(&[("a", Eye::L, "x", 3), ("a", Eye::R, "x", 1)]);
        let p = make_pairs(&m, 1);
        assert_eq!(p.genuine.len(), 1);
        assert!(p.impostor.is_empty());
        assert_eq!(p.single_image_groups, vec!["a/R/x".to_string()]);
        let s = ScoreSet::new(vec![0.1, 0.2], vec![]).unwrap();
        assert!(metrics(&s).is_err());
    }

    #[test]
    fn ranking_is_total() {
        let cell = |bank_index, n, l, strategy, d: Option<f64>, e: Option<f64>| GridCell {
            bank_index,
            n,
            l,
            bank_fingerprint: String::new(),
            strategy,
            d_prime: d,
            eer: e,
            eer_threshold: e,
            failure: d.is_none().then(|| "x".into()),
        };
        let mut cells = vec![
            cell(0, 5, 7, Strategy::HdMax, None, None),
            cell(1, 8, 7, Strategy::HdMean, Some(3.0), Some(0.0)),
            cell(2, 6, 9, Strategy::HdMean, Some(3.0), Some(0.0)),
            cell(3, 6, 7, Strategy::HdMean, Some(3.0), Some(0.0)),
            cell(4, 5, 7, Strategy::HdMean, Some(3.0), Some(0.1)),
            cell(5, 5, 7, Strategy::HdMean, Some(4.0), Some(0.2)),
        ];
        cells.sort_by(rank_cmp);
        let order: Vec<usize> = cells.iter().map(|c| c.bank_index).collect();
        assert_eq!(order, vec![5, 3, 2, 1, 4, 0]);
    }

    #[test]
    fn bootstrap_counts_and_determinism() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..0.3)).collect();
        let i: Vec<f64> = (0..50).map(|_| rng.random_range(0.4..0.5)).collect();
        let s = set(&g, &i);
        let a = bootstrap_dprime(&s, 30, 9).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, bootstrap_dprime(&s, 30, 9).unwrap());
        assert_eq!(bootstrap_dprime(&s, 1, 9).unwrap(), vec![a[0]]);
        assert_ne!(a, bootstrap_dprime(&s, 30, 10).unwrap());
        assert!(bootstrap_dprime(&set(&[0.1, 0.1], &[0.5, 0.5]), 30, 1).is_err());
    }

    #[test]
    fn boxplot_convention() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let b = boxplot_summary(&v).unwrap();
        assert_eq!(b.median, 5.5);
        assert_eq!(b.q1, 3.25);
        assert_eq!(b.q3, 7.75);
        assert_eq!(b.upper_fence, 7.75 + 1.5 * 4.5);
        assert_eq!(b.upper_whisker, 9.0);
        assert_eq!(b.lower_whisker, 1.0);
        assert_eq!(b.outliers, vec![100.0]);
    }

    /// Independent enumeration of all 2^N label vectors with |A| = na.
    fn permutation_oracle(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let f = |ga: &[f64], gb: &[f64]| {
            let ma = ga.iter().sum::<f64>() / ga.len() as f64;
            let mb = gb.iter().sum::<f64>() / gb.len() as f64;
            let t = pooled.iter().sum::<f64>() / n as f64;
            let ssb = ga.len() as f64 * (ma - t).powi(2) + gb.len() as f64 * (mb - t).powi(2);
            let ssw = ga.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + gb.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
            if ssw == 0.0 { f64::INFINITY } else { ssb * (n as f64 - 2.0) / ssw }
        };
        let f_obs = f(a, b);
        let (mut hits, mut total) = (0u64, 0u64);
        for bits in 0u32..(1 << n) {
            if bits.count_ones() as usize != a.len() {
                continue;
            }
            let ga: Vec<f64> = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| pooled[i]).collect();
            let gb: Vec<f64> = (0..n).filter(|i| bits >> i & 1 == 0).map(|i| pooled[i]).collect();
            total += 1;
            if f(&ga, &gb) >= f_obs * (1.0 - 1e-9) {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn permutation_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let na = rng.random_range(2..=6);
            let nb = rng.random_range(2..=6);
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..2.0)).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.5..2.5)).collect();
            let r = compare_methods(&a, &b, DEFAULT_PERMUTATIONS, 1).unwrap();
            assert!(r.exact);
            assert_eq!(r.p_value, permutation_oracle(&a, &b));
        }
    }

    #[test]
    fn permutation_edge_cases() {
        let a = [1.0, 2.0, 3.0];
        let r = compare_methods(&a, &a, DEFAULT_PERMUTATIONS, 1).unwrap();
        assert_eq!(r.f_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);

        // Complete separation of 3 vs 3: only the observed split and its
        // mirror reach F_obs, so the exact p-value is 2/20.
        let a = [1.0, 1.0 + 1e-9, 1.0 - 1e-9];
        let b = [10.0, 10.0 + 1e-9, 10.0 - 1e-9];
        let r = compare_methods(&a, &b, DEFAULT_PERMUTATIONS, 1).unwrap();
        assert!(r.exact);
        assert_eq!(r.p_value, 0.1);

        // With 30 per group no random relabeling comes close.
        let a: Vec<f64> = (0..30).map(|k| 1.0 + 1e-9 * k as f64).collect();
        let b: Vec<f64> = (0..30).map(|k| 10.0 + 1e-9 * k as f64).collect();
        let r = compare_methods(&a, &b, DEFAULT_PERMUTATIONS, 1).unwrap();
        assert!(!r.exact);
        assert!(r.p_value <= 3.0 / 100_000.0);

        assert!(compare_methods(&[1.0, 1.0], &[2.0, 2.0], 10, 1).is_err());
        assert!(compare_methods(&[1.0], &[2.0, 3.0], 10, 1).is_err());
    }

    #[test]
    fn monte_carlo_approximates_exact() {
        let a = [0.1, 0.5, 0.9, 1.3, 0.7];
        let b = [0.8, 1.2, 1.6, 1.1, 1.9];
        let exact = compare_methods(&a, &b, DEFAULT_PERMUTATIONS, 1).unwrap();
        let mc = compare_methods(&a, &b, 200, 1).unwrap();
        assert!(exact.exact && !mc.exact);
        assert!((exact.p_value - mc.p_value).abs() < 0.15, "{} vs {}", exact.p_value, mc.p_value);
    }

    proptest! {
        #[test]
        fn dprime_invariances(
            g in prop::collection::vec(0.0f64..1.0, 2..20),
            i in prop::collection::vec(0.0f64..1.0, 2..20),
            shift in -10.0f64..10.0,
            scale in 0.01f64..100.0,
        ) {
            let s = ScoreSet::new(g, i).unwrap();
            if let Ok(d) = d_prime(&s) {
                prop_assert_eq!(d_prime(&s.swapped()).unwrap(), d);
                let tol = 1e-9 * d.max(1.0);
                prop_assert!((d_prime(&s.map(|v| v + shift)).unwrap() - d).abs() <= tol);
                prop_assert!((d_prime(&s.map(|v| v * scale)).unwrap() - d).abs() <= tol);
            }
        }

        #[test]
        fn eer_oracle_prop(
            g in prop::collection::vec(0u8..20, 1..15),
            i in prop::collection::vec(0u8..20, 1..15),
        ) {
            let s = ScoreSet::new(g.iter().map(|&v| f64::from(v)).collect(), i.iter().map(|&v| f64::from(v)).collect()).unwrap();
            let e = eer(&s).unwrap();
            prop_assert!((e.eer - eer_oracle(&s)).abs() <= 1e-9);
            prop_assert!((0.0..=1.0).contains(&e.eer));
        }
    }
}
