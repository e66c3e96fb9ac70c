//! BSIF encoding: filter responses, binary code planes, grey-value codes and
//! occlusion-masked histograms.
//!
//! Filters are applied as cross-correlation (no kernel flip). The angular
//! (column) axis wraps around; the radial (row) axis does not, and rows within
//! `l/2` of the top or bottom edge are excluded through the template mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitPlane;
use crate::error::{Error, Result};
use crate::imgio::{FilterBank, IrisTemplate, NormalizedIris};

/// Filters whose coefficient sum is below this fraction of their L1 norm are
/// treated as exactly DC-free.
pub const DC_FREE_TOLERANCE: f64 = 1e-10;

/// Rows `[l/2, height - l/2)` where the full kernel fits radially.
pub fn valid_rows(l: usize, height: usize) -> std::ops::Range<usize> {
    let half = l / 2;
    if height <= 2 * half {
        0..0
    } else {
        half..height - half
    }
}

/// Image rows extended by `l/2` wrapped columns on each side.
struct WrappedRows {
    width: usize,
    ext_width: usize,
    data: Vec<f64>,
}

impl WrappedRows {
    fn new(pixels: &[u8], width: usize, height: usize, l: usize) -> Self {
        let half = l / 2;
        let ext_width = width + l - 1;
        let mut data = Vec::with_capacity(ext_width * height);
        for y in 0..height {
            let row = &pixels[y * width..(y + 1) * width];
            for j in 0..ext_width {
                let x = (j as i64 - half as i64).rem_euclid(width as i64) as usize;
                data.push(f64::from(row[x]));
            }
        }
        WrappedRows {
            width,
            ext_width,
            data,
        }
    }

    fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.ext_width..(y + 1) * self.ext_width]
    }
}

fn filter_dc_term(filter: &[f64]) -> f64 {
    let dc: f64 = filter.iter().sum();
    let l1: f64 = filter.iter().map(|c| c.abs()).sum();
    if dc.abs() <= DC_FREE_TOLERANCE * l1 {
        0.0
    } else {
        dc
    }
}

/// Responses of one filter for the rows in `valid_rows`, row-major with
/// `width` entries per row.
///
/// Each response is evaluated as `sum f * (window - centre) + centre * sum f`,
/// which equals plain cross-correlation and gives exactly zero on flat windows
/// for DC-free filters.
fn correlate(rows: &WrappedRows, pixels: &[u8], filter: &[f64], l: usize, height: usize) -> Vec<f64> {
    let width = rows.width;
    let half = l / 2;
    let dc = filter_dc_term(filter);
    let range = valid_rows(l, height);
    let mut out = vec![0.0; range.len() * width];
    let mut centre = vec![0.0; width];
    for (oy, y) in range.enumerate() {
        for (c, &p) in centre.iter_mut().zip(&pixels[y * width..(y + 1) * width]) {
            *c = f64::from(p);
        }
        let acc = &mut out[oy * width..(oy + 1) * width];
        for v in 0..l {
            let src = rows.row(y + v - half);
            for u in 0..l {
                let coef = filter[v * l + u];
                let window = &src[u..u + width];
                for ((a, &s), &c) in acc.iter_mut().zip(window).zip(&centre) {
                    *a += coef * (s - c);
                }
            }
        }
        if dc != 0.0 {
            for (a, &c) in acc.iter_mut().zip(&centre) {
                *a += c * dc;
            }
        }
    }
    out
}

/// Cross-correlation responses of `filter` over a `width x height` image,
/// wrapping columns. Rows outside [`valid_rows`] are reported as `None`.
pub fn filter_responses(pixels: &[u8], width: usize, height: usize, filter: &[f64], l: usize) -> Vec<Option<f64>> {
    assert_eq!(pixels.len(), width * height);
    assert_eq!(filter.len(), l * l);
    let rows = WrappedRows::new(pixels, width, height, l);
    let resp = correlate(&rows, pixels, filter, l, height);
    let range = valid_rows(l, height);
    let mut out = vec![None; width * height];
    for (oy, y) in range.enumerate() {
        for x in 0..width {
            out[y * width + x] = Some(resp[oy * width + x]);
        }
    }
    out
}

/// Encodes an image of any size; [`encode`] adds the 512x64 check.
pub fn encode_any(image: &NormalizedIris, bank: &FilterBank) -> Result<IrisTemplate> {
    let (width, height, l) = (image.width, image.height, bank.l());
    let range = valid_rows(l, height);
    if range.is_empty() {
        return Err(Error::Dimensions(format!(
            "filter side {l} leaves no valid rows in a {height}-row image"
        )));
    }
    if image.mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let rows = WrappedRows::new(&image.pixels, width, height, l);
    let planes = bank
        .filters()
        .map(|f| {
            let resp = correlate(&rows, &image.pixels, f, l, height);
            let mut plane = BitPlane::new(width, height);
            for (oy, y) in range.clone().enumerate() {
                for x in 0..width {
                    if resp[oy * width + x] > 0.0 {
                        plane.set(x, y, true);
                    }
                }
            }
            plane
        })
        .collect();
    let row_valid = BitPlane::from_fn(width, height, |_, y| range.contains(&y));
    IrisTemplate::new(planes, image.mask.and(&row_valid), bank.fingerprint())
}

/// Computes the `n` binary code planes of a 512x64 image and its trimmed mask.
pub fn encode(image: &NormalizedIris, bank: &FilterBank) -> Result<IrisTemplate> {
    image.require_normalized()?;
    encode_any(image, bank)
}

/// Encodes many images in parallel; output order follows input order.
pub fn encode_batch(images: &[NormalizedIris], bank: &FilterBank) -> Vec<Result<IrisTemplate>> {
    images.par_iter().map(|img| encode(img, bank)).collect()
}

/// Per-pixel code `sum_i c_i * 2^(n-1-i)` (filter 0 is the most significant
/// bit), row-major.
pub fn grey_values(t: &IrisTemplate) -> Vec<u16> {
    let (w, h, n) = (t.width(), t.height(), t.n());
    let mut out = vec![0u16; w * h];
    for (i, plane) in t.planes.iter().enumerate() {
        let bit = 1u16 << (n - 1 - i);
        for y in 0..h {
            for x in 0..w {
                if plane.get(x, y) {
                    out[y * w + x] |= bit;
                }
            }
        }
    }
    out
}

/// Raw `2^n`-bin histogram of BSIF codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsifHistogram {
    pub n: usize,
    pub bins: Vec<u64>,
    pub total: u64,
}

impl BsifHistogram {
    pub fn from_bins(n: usize, bins: Vec<u64>) -> Result<Self> {
        if bins.len() != 1 << n {
            return Err(Error::BinMismatch(bins.len(), 1 << n));
        }
        let total = bins.iter().sum();
        Ok(BsifHistogram { n, bins, total })
    }
}

/// Histogram of grey values over pixels where the template mask is set.
pub fn histogram(t: &IrisTemplate) -> Result<BsifHistogram> {
    if t.mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let codes = grey_values(t);
    let w = t.width();
    let mut bins = vec![0u64; 1 << t.n()];
    for y in 0..t.height() {
        for x in 0..w {
            if t.mask.get(x, y) {
                bins[usize::from(codes[y * w + x])] += 1;
            }
        }
    }
    BsifHistogram::from_bins(t.n(), bins)
}

/// `h_i / sum h`.
pub fn normalize_histogram(h: &BsifHistogram) -> Result<Vec<f64>> {
    if h.total == 0 {
        return Err(Error::ZeroHistogram);
    }
    let total = h.total as f64;
    Ok(h.bins.iter().map(|&b| b as f64 / total).collect())
}
