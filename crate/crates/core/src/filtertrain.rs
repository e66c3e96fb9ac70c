//! ICA filter learning: per-patch DC removal, PCA whitening to `n`
//! dimensions and symmetric FastICA.
//!
//! Moments are taken about zero after DC removal (no per-pixel centring), so
//! the learned filters satisfy `E[y y^T] = I` for responses `y` on the
//! training corpus.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{FilterBank, MAX_FILTERS};
use crate::patches::{PatchSet, STANDARD_SIZES};
use crate::seeds::{self, purpose};

/// Filter counts of the standard training grid.
pub const STANDARD_COUNTS: [usize; 8] = [5, 6, 7, 8, 9, 10, 11, 12];

/// Relative eigenvalue floor below which a whitening direction is unusable.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    LogCosh,
    Cube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub n: usize,
    pub l: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub nonlinearity: Nonlinearity,
}

impl TrainingConfig {
    pub fn new(n: usize, l: usize, seed: u64) -> Self {
        TrainingConfig {
            n,
            l,
            seed,
            max_iterations: 200,
            tolerance: 1e-4,
            nonlinearity: Nonlinearity::LogCosh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 3 || self.l.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("l={} must be odd and >= 3", self.l)));
        }
        if self.n == 0 || self.n > MAX_FILTERS {
            return Err(Error::InvalidArgument(format!("n={} outside [1, {MAX_FILTERS}]", self.n)));
        }
        if self.n > self.l * self.l - 1 {
            return Err(Error::InvalidArgument(format!(
                "n={} exceeds l*l-1={} informative dimensions",
                self.n,
                self.l * self.l - 1
            )));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidArgument("tolerance and max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainingConfig,
    pub patches: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Largest |off-diagonal| of the response second-moment matrix.
    pub max_offdiag_deviation: f64,
    /// Largest |diagonal - 1| of the response second-moment matrix.
    pub max_diag_deviation: f64,
}

/// The 96 `(n, l)` pairs of the standard grid, ordered by `l` then `n`.
pub fn standard_grid() -> Vec<(usize, usize)> {
    STANDARD_SIZES
        .iter()
        .flat_map(|&l| STANDARD_COUNTS.iter().map(move |&n| (n, l)))
        .collect()
}

/// DC-removed training samples and their eigen-decomposed second moment.
/// Reusable across filter counts for one patch side.
pub struct PcaWhitening {
    l: usize,
    samples: DMatrix<f64>,
    /// Eigenvalues, descending.
    eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors as columns.
    eigenvectors: DMatrix<f64>,
}

impl PcaWhitening {
    pub fn fit(patches: &PatchSet) -> Result<Self> {
        let d = patches.side * patches.side;
        let samples = DMatrix::from_fn(patches.len(), d, |s, j| f64::from(patches.patch(s)[j]));
        Self::fit_samples(samples, patches.side)
    }

    /// `samples` holds one flattened `l x l` patch per row.
    pub fn fit_samples(mut samples: DMatrix<f64>, l: usize) -> Result<Self> {
        let d = l * l;
        if samples.ncols() != d {
            return Err(Error::Dimensions(format!("{} columns for l={l}", samples.ncols())));
        }
        if samples.nrows() == 0 {
            return Err(Error::RankDeficient { found: 0, needed: 1 });
        }
        if samples.nrows() < 10 * d {
            warn!("{} patches for l={l}; at least {} recommended", samples.nrows(), 10 * d);
        }
        for mut row in samples.row_iter_mut() {
            let mean = row.sum() / d as f64;
            row.add_scalar_mut(-mean);
        }
        let second = samples.tr_mul(&samples) / samples.nrows() as f64;
        let eig = second.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(PcaWhitening {
            l,
            samples,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn sample_count(&self) -> usize {
        self.samples.nrows()
    }

    fn usable_components(&self) -> usize {
        let max = self.eigenvalues.first().copied().unwrap_or(0.0);
        if !(max > 0.0) {
            return 0;
        }
        self.eigenvalues.iter().take_while(|&&v| v > EIGEN_FLOOR * max).count()
    }

    /// `n x d` whitening matrix: top-`n` eigenvectors scaled by `1/sqrt(lambda)`.
    fn whitening(&self, n: usize) -> Result<DMatrix<f64>> {
        let usable = self.usable_components();
        if usable < n {
            return Err(Error::RankDeficient {
                found: usable,
                needed: n,
            });
        }
        let d = self.l * self.l;
        Ok(DMatrix::from_fn(n, d, |i, j| {
            self.eigenvectors[(j, i)] / self.eigenvalues[i].sqrt()
        }))
    }

    /// Runs FastICA on the whitened samples and returns the filter bank.
    pub fn train(&self, cfg: &TrainingConfig) -> Result<(FilterBank, TrainingReport)> {
        cfg.validate()?;
        if cfg.l != self.l {
            return Err(Error::InvalidArgument(format!(
                "config l={} but patches have side {}",
                cfg.l, self.l
            )));
        }
        let n = cfg.n;
        let whiten = self.whitening(n)?;
        let z = &self.samples * whiten.transpose();
        let (unmix, iterations, converged) = fast_ica(&z, cfg);
        if !converged {
            warn!(
                "FastICA did not converge for n={}, l={} within {} iterations",
                cfg.n, cfg.l, cfg.max_iterations
            );
        }
        let mut filters = unmix * whiten;
        canonicalize_rows(&mut filters);

        let responses = &self.samples * filters.transpose();
        let cov = responses.tr_mul(&responses) / self.samples.nrows() as f64;
        let (max_offdiag_deviation, max_diag_deviation) = identity_deviation(&cov);

        let coeffs: Vec<f64> = filters.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        let bank = FilterBank::new(n, self.l, coeffs, "ica")?;
        Ok((
            bank,
            TrainingReport {
                config: cfg.clone(),
                patches: self.samples.nrows(),
                iterations,
                converged,
                max_offdiag_deviation,
                max_diag_deviation,
            },
        ))
    }
}

/// Learns an `n`-filter bank from `patches`. Non-convergence is reported in
/// the returned report, not as an error.
pub fn train_filters(patches: &PatchSet, cfg: &TrainingConfig) -> Result<(FilterBank, TrainingReport)> {
    cfg.validate()?;
    if patches.side != cfg.l {
        return Err(Error::InvalidArgument(format!(
            "patch side {} does not match l={}",
            patches.side, cfg.l
        )));
    }
    let (mut bank, report) = PcaWhitening::fit(patches)?.train(cfg)?;
    bank.provenance = format!("ica:{}", patches.source_tag);
    Ok((bank, report))
}

/// Outcome of training one grid cell.
pub type TrainedBank = Result<(FilterBank, TrainingReport)>;

/// Trains every `(n, l)` in `grid` for which a patch set of side `l` exists.
///
/// Each configuration gets its own seed derived from `(seed, n, l)`; the
/// PCA step is shared between configurations with the same `l`. Results are
/// returned in grid order.
pub fn train_grid(
    corpora: &std::collections::BTreeMap<usize, PatchSet>,
    grid: &[(usize, usize)],
    seed: u64,
) -> Vec<((usize, usize), TrainedBank)> {
    let mut out = Vec::with_capacity(grid.len());
    let mut sizes: Vec<usize> = grid.iter().map(|&(_, l)| l).collect();
    sizes.dedup();
    let mut results = std::collections::BTreeMap::new();
    for l in sizes {
        let ns: Vec<usize> = grid.iter().filter(|&&(_, gl)| gl == l).map(|&(n, _)| n).collect();
        let pca = match corpora.get(&l) {
            Some(p) => PcaWhitening::fit(p).map(|w| (w, p.source_tag)),
            None => Err(Error::InvalidArgument(format!("no patches of side {l}"))),
        };
        match pca {
            Ok((pca, tag)) => {
                let trained: Vec<_> = ns
                    .par_iter()
                    .map(|&n| {
                        let cfg = TrainingConfig::new(n, l, seeds::derive_seed(seed, &[n as u64, l as u64]));
                        pca.train(&cfg).map(|(mut b, r)| {
                            b.provenance = format!("ica:{tag}");
                            (b, r)
                        })
                    })
                    .collect();
                for (n, r) in ns.into_iter().zip(trained) {
                    results.insert((n, l), r);
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for n in ns {
                    results.insert((n, l), Err(Error::InvalidArgument(msg.clone())));
                }
            }
        }
    }
    for &key in grid {
        let r = results
            .remove(&key)
            .unwrap_or_else(|| Err(Error::InvalidArgument(format!("duplicate grid entry {key:?}"))));
        out.push((key, r));
    }
    out
}

fn fast_ica(z: &DMatrix<f64>, cfg: &TrainingConfig) -> (DMatrix<f64>, usize, bool) {
    let n = z.ncols();
    let samples = z.nrows() as f64;
    let mut rng = seeds::rng_from(cfg.seed, &[purpose::ICA_INIT]);
    let init = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut w = symmetric_decorrelation(&init);
    for it in 1..=cfg.max_iterations {
        // projections, one column per component
        let mut g = z * w.transpose();
        let mut g_prime_mean = DVector::zeros(n);
        for (c, mut col) in g.column_iter_mut().enumerate() {
            let mut acc = 0.0;
            for v in col.iter_mut() {
                let (gv, dv) = match cfg.nonlinearity {
                    Nonlinearity::LogCosh => {
                        let t = v.tanh();
                        (t, 1.0 - t * t)
                    }
                    Nonlinearity::Cube => (*v * *v * *v, 3.0 * *v * *v),
                };
                *v = gv;
                acc += dv;
            }
            g_prime_mean[c] = acc / samples;
        }
        let mut next = g.tr_mul(z) / samples;
        for i in 0..n {
            for j in 0..n {
                next[(i, j)] -= g_prime_mean[i] * w[(i, j)];
            }
        }
        let next = symmetric_decorrelation(&next);
        let lim = (0..n)
            .map(|i| (1.0 - next.row(i).dot(&w.row(i)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if lim < cfg.tolerance {
            return (w, it, true);
        }
    }
    (w, cfg.max_iterations, false)
}

/// `(W W^T)^{-1/2} W`.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (w * w.transpose()).symmetric_eigen();
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

/// Removes residual DC from each filter and flips signs so the coefficient
/// of largest magnitude (first on ties) is non-negative.
fn canonicalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / row.len() as f64;
        row.add_scalar_mut(-mean);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.neg_mut();
        }
    }
}

fn identity_deviation(cov: &DMatrix<f64>) -> (f64, f64) {
    let mut off: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for i in 0..cov.nrows() {
        for j in 0..cov.ncols() {
            if i == j {
                diag = diag.max((cov[(i, j)] - 1.0).abs());
            } else {
                off = off.max(cov[(i, j)].abs());
            }
        }
    }
    (off, diag)
}

/// Second moment `E[y y^T]` of the bank's responses on raw patches.
pub fn response_covariance(bank: &FilterBank, patches: &PatchSet) -> DMatrix<f64> {
    let n = bank.n();
    let mut cov = DMatrix::zeros(n, n);
    let mut y = vec![0.0; n];
    for p in patches.iter() {
        for (yi, f) in y.iter_mut().zip(bank.filters()) {
            *yi = f.iter().zip(p).map(|(c, &v)| c * f64::from(v)).sum();
        }
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += y[i] * y[j];
            }
        }
    }
    cov / patches.len().max(1) as f64
}

/// Largest deviation of a second-moment matrix from the identity.
pub fn max_identity_deviation(cov: &DMatrix<f64>) -> f64 {
    let (a, b) = identity_deviation(cov);
    a.max(b)
}

/// Coefficient sum of each filter.
pub fn filter_dc(bank: &FilterBank) -> Vec<f64> {
    bank.filters().map(|f| f.iter().sum()).collect()
}

/// `n` random orthonormal, zero-sum `l x l` filters (Gram-Schmidt on
/// Gaussian rows against the constant direction).
pub fn random_orthonormal_bank(n: usize, l: usize, seed: u64) -> Result<FilterBank> {
    let d = l * l;
    if n >= d {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {n} zero-sum orthonormal filters in {d} dimensions"
        )));
    }
    let mut rng = seeds::rng_from(seed, &[purpose::RANDOM_BANK, n as u64, l as u64]);
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(d, 1.0 / (d as f64).sqrt())];
    while basis.len() <= n {
        let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        for _ in 0..2 {
            for r in &basis {
                let p = r.dot(&v);
                v.axpy(-p, r, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let mut m = DMatrix::from_fn(n, d, |i, j| basis[i + 1][j]);
    for mut row in m.row_iter_mut() {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.neg_mut();
        }
    }
    let coeffs = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    FilterBank::new(n, l, coeffs, "random-orthonormal")
}
