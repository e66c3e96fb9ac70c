//! Training patch corpus: polar normalization of region-of-interest masks,
//! largest inscribed rectangles, and random square sub-patch sampling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitPlane;
use crate::error::{Error, Result};
use crate::imgio::{DatasetManifest, NormalizedIris, IRIS_HEIGHT, IRIS_WIDTH};
use crate::seeds::{self, purpose};

const PATCH_MAGIC: &[u8; 4] = b"BSP1";

/// Filter sizes of the standard training grid.
pub const STANDARD_SIZES: [usize; 12] = [5, 7, 9, 11, 13, 15, 17, 19, 21, 27, 33, 39];

pub const DEFAULT_PER_REGION_COUNT: usize = 10;

/// Binary region of interest aligned to a source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub grid: BitPlane,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

/// Pupil and iris boundaries in source-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    pub pupil: Circle,
    pub iris: Circle,
}

impl CircleParams {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let all = [
            self.pupil.x,
            self.pupil.y,
            self.pupil.r,
            self.iris.x,
            self.iris.y,
            self.iris.r,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite circle parameter".into()));
        }
        if self.pupil.r <= 0.0 || self.iris.r <= 0.0 || self.pupil.r >= self.iris.r {
            return Err(Error::InvalidArgument(format!(
                "degenerate radii: pupil {} iris {}",
                self.pupil.r, self.iris.r
            )));
        }
        let inside = |c: &Circle| {
            c.x >= 0.0 && c.y >= 0.0 && c.x <= (width - 1) as f64 && c.y <= (height - 1) as f64
        };
        if !inside(&self.pupil) || !inside(&self.iris) {
            return Err(Error::InvalidArgument(format!(
                "circle centre outside the {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// Maps a Cartesian region onto the 512x64 polar grid.
///
/// Column `j` samples angle `2*pi*j/512` (counter-clockwise from the positive
/// x axis, with image rows growing downwards); row `k` samples the fraction
/// `(k + 0.5) / 64` of the way from the pupil boundary to the iris boundary.
/// Sampling is nearest-neighbour; points outside the image read as 0.
pub fn normalize_region(region: &RegionMask, circles: &CircleParams) -> Result<RegionMask> {
    let (w, h) = (region.grid.width(), region.grid.height());
    circles.validate(w, h)?;
    let (p, i) = (circles.pupil, circles.iris);
    let grid = BitPlane::from_fn(IRIS_WIDTH, IRIS_HEIGHT, |j, k| {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / IRIS_WIDTH as f64;
        let (s, c) = theta.sin_cos();
        let (px, py) = (p.x + p.r * c, p.y - p.r * s);
        let (ix, iy) = (i.x + i.r * c, i.y - i.r * s);
        let t = (k as f64 + 0.5) / IRIS_HEIGHT as f64;
        let x = (px + t * (ix - px)).round();
        let y = (py + t * (iy - py)).round();
        x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h && region.grid.get(x as usize, y as usize)
    });
    Ok(RegionMask {
        grid,
        source_id: region.source_id.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Ordering used to pick among candidates: larger area, then smaller row,
    /// then smaller column, then wider.
    fn rank_key(&self) -> (std::cmp::Reverse<usize>, usize, usize, std::cmp::Reverse<usize>) {
        use std::cmp::Reverse;
        (Reverse(self.area()), self.row, self.col, Reverse(self.width))
    }
}

/// Maximal-area axis-aligned rectangle inside the set pixels of `region`.
///
/// Histogram-of-heights sweep, O(width * height). Ties are resolved by
/// smallest row, then smallest column, then largest width.
pub fn largest_inscribed_rectangle(region: &BitPlane) -> Result<Rect> {
    let (w, h) = (region.width(), region.height());
    let mut heights = vec![0usize; w];
    let mut left = vec![0usize; w];
    let mut right = vec![0usize; w];
    let mut stack: Vec<usize> = Vec::with_capacity(w);
    let mut best: Option<Rect> = None;
    for y in 0..h {
        for (x, hx) in heights.iter_mut().enumerate() {
            *hx = if region.get(x, y) { *hx + 1 } else { 0 };
        }
        // nearest strictly lower bar on each side
        stack.clear();
        for x in 0..w {
            while stack.last().is_some_and(|&s| heights[s] >= heights[x]) {
                stack.pop();
            }
            left[x] = stack.last().map_or(0, |&s| s + 1);
            stack.push(x);
        }
        stack.clear();
        for x in (0..w).rev() {
            while stack.last().is_some_and(|&s| heights[s] >= heights[x]) {
                stack.pop();
            }
            right[x] = stack.last().map_or(w - 1, |&s| s - 1);
            stack.push(x);
        }
        for x in 0..w {
            let hx = heights[x];
            if hx == 0 {
                continue;
            }
            let cand = Rect {
                col: left[x],
                row: y + 1 - hx,
                width: right[x] - left[x] + 1,
                height: hx,
            };
            if best.is_none_or(|b| cand.rank_key() < b.rank_key()) {
                best = Some(cand);
            }
        }
    }
    best.ok_or(Error::EmptyRegion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Annotation,
    Gaze,
    Random,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::Annotation => "annotation",
            SourceTag::Gaze => "gaze",
            SourceTag::Random => "random",
        })
    }
}

impl FromStr for SourceTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotation" => Ok(SourceTag::Annotation),
            "gaze" => Ok(SourceTag::Gaze),
            "random" => Ok(SourceTag::Random),
            other => Err(Error::InvalidArgument(format!("unknown patch source {other:?}"))),
        }
    }
}

/// Square `side x side` patches of raw 8-bit intensities, stored back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    pub side: usize,
    pub source_tag: SourceTag,
    data: Vec<u8>,
}

impl PatchSet {
    pub fn new(side: usize, source_tag: SourceTag) -> Self {
        PatchSet {
            side,
            source_tag,
            data: Vec::new(),
        }
    }

    pub fn from_raw(side: usize, source_tag: SourceTag, data: Vec<u8>) -> Result<Self> {
        if side == 0 || !data.len().is_multiple_of(side * side) {
            return Err(Error::InvalidArgument(format!(
                "{} bytes is not a whole number of {side}x{side} patches",
                data.len()
            )));
        }
        Ok(PatchSet {
            side,
            source_tag,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.side * self.side)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[u8] {
        let sz = self.side * self.side;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.side * self.side)
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn extend(&mut self, other: &PatchSet) {
        assert_eq!(self.side, other.side);
        self.data.extend_from_slice(&other.data);
    }

    pub fn push_window(&mut self, image: &NormalizedIris, col: usize, row: usize) {
        for y in row..row + self.side {
            let start = y * image.width + col;
            self.data.extend_from_slice(&image.pixels[start..start + self.side]);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len());
        out.extend_from_slice(PATCH_MAGIC);
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8], source_tag: SourceTag, path: &Path) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: 12,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != PATCH_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
                expected: "BSP1",
            });
        }
        let side = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if side == 0 {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: "zero patch side".into(),
            });
        }
        let expected = 12 + count * side * side;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len(),
            });
        }
        PatchSet::from_raw(side, source_tag, bytes[12..].to_vec())
    }
}

pub fn save_patch_set(set: &PatchSet, path: &Path) -> Result<()> {
    fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_patch_set(path: &Path, source_tag: SourceTag) -> Result<PatchSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PatchSet::from_bytes(&bytes, source_tag, path)
}

/// Draws `count` `l x l` windows with top-left corners uniform over the
/// admissible offsets of `rect` (with replacement). Returns an empty set when
/// `l` exceeds either side of `rect`.
pub fn sample_squares(
    image: &NormalizedIris,
    rect: Rect,
    l: usize,
    count: usize,
    seed: u64,
    source_tag: SourceTag,
) -> Result<PatchSet> {
    if l == 0 || l.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("patch side {l} must be odd")));
    }
    if rect.col + rect.width > image.width || rect.row + rect.height > image.height {
        return Err(Error::Dimensions(format!(
            "rectangle {rect:?} outside the {}x{} image",
            image.width, image.height
        )));
    }
    let mut set = PatchSet::new(l, source_tag);
    if l > rect.width || l > rect.height {
        return Ok(set);
    }
    let mut rng = seeds::rng_from(seed, &[]);
    for _ in 0..count {
        let dx = rng.random_range(0..=rect.width - l);
        let dy = rng.random_range(0..=rect.height - l);
        set.push_window(image, rect.col + dx, rect.row + dy);
    }
    Ok(set)
}

/// A polar region of interest tied to one manifest image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionEntry {
    /// Index into the manifest records (or image list).
    pub image: usize,
    pub region: RegionMask,
    pub source: SourceTag,
    /// Upstream selection flag, e.g. "genuine pair classified correctly".
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub source: Option<SourceTag>,
    pub seed: u64,
    pub per_region_count: usize,
    pub regions_total: usize,
    pub regions_used: usize,
    pub regions_rejected: usize,
    pub regions_empty: usize,
    /// Patch count per side length.
    pub counts: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sets: BTreeMap<usize, PatchSet>,
    pub report: CorpusReport,
}

/// Builds one patch set per side length from already loaded images.
///
/// Regions whose `accepted` flag is false are skipped; all remaining regions
/// must share one source tag.
pub fn build_corpus_from_images(
    images: &[NormalizedIris],
    regions: &[RegionEntry],
    sizes: &[usize],
    per_region_count: usize,
    seed: u64,
) -> Result<Corpus> {
    if let Some(&l) = sizes.iter().find(|&&l| l == 0 || l % 2 == 0) {
        return Err(Error::InvalidArgument(format!("patch side {l} must be odd")));
    }
    let used: Vec<(usize, &RegionEntry)> = regions.iter().enumerate().filter(|(_, r)| r.accepted).collect();
    let source = used.first().map(|(_, r)| r.source);
    if let Some(src) = source {
        if let Some((_, other)) = used.iter().find(|(_, r)| r.source != src) {
            return Err(Error::MixedSources(format!("{src} and {}", other.source)));
        }
    }
    let tag = source.unwrap_or(SourceTag::Random);
    let mut sets: BTreeMap<usize, PatchSet> = sizes.iter().map(|&l| (l, PatchSet::new(l, tag))).collect();
    let mut empty = 0;
    if used.is_empty() {
        warn!("no usable regions; corpus is empty");
    }
    for &(idx, entry) in &used {
        let image = images.get(entry.image).ok_or_else(|| {
            Error::InvalidArgument(format!("region {idx} refers to missing image {}", entry.image))
        })?;
        if !entry.region.grid.same_shape(&image.mask) {
            return Err(Error::Dimensions(format!(
                "region {idx} is {}x{}, image {} is {}x{}",
                entry.region.grid.width(),
                entry.region.grid.height(),
                image.id,
                image.width,
                image.height
            )));
        }
        let rect = match largest_inscribed_rectangle(&entry.region.grid) {
            Ok(r) => r,
            Err(Error::EmptyRegion) => {
                warn!("region {idx} ({}) is empty, skipped", entry.region.source_id);
                empty += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for (&l, set) in sets.iter_mut() {
            let s = seeds::derive_seed(seed, &[purpose::SAMPLE, idx as u64, l as u64]);
            set.extend(&sample_squares(image, rect, l, per_region_count, s, tag)?);
        }
    }
    let report = CorpusReport {
        source,
        seed,
        per_region_count,
        regions_total: regions.len(),
        regions_used: used.len() - empty,
        regions_rejected: regions.len() - used.len(),
        regions_empty: empty,
        counts: sets.iter().map(|(&l, s)| (l, s.len())).collect(),
    };
    Ok(Corpus { sets, report })
}

/// Loads the manifest images referenced by `regions` and builds the corpus.
pub fn build_corpus(
    manifest: &DatasetManifest,
    regions: &[RegionEntry],
    sizes: &[usize],
    per_region_count: usize,
    seed: u64,
    strict: bool,
) -> Result<Corpus> {
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut images = Vec::new();
    let mut remapped = Vec::with_capacity(regions.len());
    for r in regions {
        if r.image >= manifest.records.len() {
            return Err(Error::InvalidArgument(format!("region refers to manifest row {}", r.image)));
        }
        let i = match slot.get(&r.image) {
            Some(&i) => i,
            None if r.accepted => {
                images.push(manifest.load_record(r.image, strict)?);
                slot.insert(r.image, images.len() - 1);
                images.len() - 1
            }
            None => usize::MAX,
        };
        remapped.push(RegionEntry {
            image: i,
            ..r.clone()
        });
    }
    build_corpus_from_images(&images, &remapped, sizes, per_region_count, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn image(w: usize, h: usize) -> NormalizedIris {
        let pixels = (0..w * h).map(|i| ((i * 37) % 256) as u8).collect();
        NormalizedIris::with_full_mask("img", w, h, pixels).unwrap()
    }

    /// Exhaustive O(W^2 H^2) search with prefix sums, same tie rule.
    fn brute_force_rect(grid: &BitPlane) -> Option<Rect> {
        let (w, h) = (grid.width(), grid.height());
        let mut pre = vec![0usize; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                pre[(y + 1) * (w + 1) + x + 1] = usize::from(grid.get(x, y)) + pre[y * (w + 1) + x + 1]
                    + pre[(y + 1) * (w + 1) + x]
                    - pre[y * (w + 1) + x];
            }
        }
        let sum = |x0: usize, y0: usize, x1: usize, y1: usize| {
            pre[y1 * (w + 1) + x1] + pre[y0 * (w + 1) + x0] - pre[y0 * (w + 1) + x1] - pre[y1 * (w + 1) + x0]
        };
        let mut best: Option<Rect> = None;
        for y0 in 0..h {
            for x0 in 0..w {
                for y1 in y0 + 1..=h {
                    for x1 in x0 + 1..=w {
                        let r = Rect { col: x0, row: y0, width: x1 - x0, height: y1 - y0 };
                        if sum(x0, y0, x1, y1) == r.area() && best.is_none_or(|b| r.rank_key() < b.rank_key()) {
                            best = Some(r);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn full_mask_rectangle() {
        let r = largest_inscribed_rectangle(&BitPlane::filled(512, 64)).unwrap();
        assert_eq!(r, Rect { col: 0, row: 0, width: 512, height: 64 });
    }

    #[test]
    fn single_pixel_rectangle() {
        let g = BitPlane::from_fn(20, 20, |x, y| x == 5 && y == 7);
        let r = largest_inscribed_rectangle(&g).unwrap();
        assert_eq!(r, Rect { col: 5, row: 7, width: 1, height: 1 });
    }

    #[test]
    fn empty_region_errors() {
        assert!(matches!(
            largest_inscribed_rectangle(&BitPlane::new(10, 10)),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn rectangle_matches_brute_force_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for density in [0.5, 0.7, 0.85, 0.95] {
            for _ in 0..25 {
                let g = BitPlane::from_fn(20, 20, |_, _| rng.random_bool(density));
                let expected = brute_force_rect(&g);
                assert_eq!(largest_inscribed_rectangle(&g).ok(), expected);
            }
        }
    }

    proptest! {
        #[test]
        fn rectangle_lies_inside_region(w in 1usize..16, h in 1usize..16, bits in proptest::collection::vec(any::<bool>(), 256)) {
            let g = BitPlane::from_fn(w, h, |x, y| bits[y * 16 + x]);
            match largest_inscribed_rectangle(&g) {
                Ok(r) => {
                    for y in r.row..r.row + r.height {
                        for x in r.col..r.col + r.width {
                            prop_assert!(g.get(x, y));
                        }
                    }
                    prop_assert_eq!(Some(r), brute_force_rect(&g));
                }
                Err(_) => prop_assert!(g.is_empty()),
            }
        }
    }

    #[test]
    fn oversized_squares_are_discarded() {
        let img = image(512, 64);
        let rect = Rect { col: 3, row: 4, width: 10, height: 10 };
        let set = sample_squares(&img, rect, 13, 50, 1, SourceTag::Gaze).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn exact_fit_has_one_offset() {
        let img = image(512, 64);
        let rect = Rect { col: 30, row: 10, width: 7, height: 7 };
        let set = sample_squares(&img, rect, 7, 3, 9, SourceTag::Gaze).unwrap();
        assert_eq!(set.len(), 3);
        let mut window = PatchSet::new(7, SourceTag::Gaze);
        window.push_window(&img, 30, 10);
        for p in set.iter() {
            assert_eq!(p, window.patch(0));
        }
    }

    #[test]
    fn even_side_rejected() {
        let img = image(512, 64);
        let rect = Rect { col: 0, row: 0, width: 20, height: 20 };
        assert!(sample_squares(&img, rect, 4, 1, 0, SourceTag::Gaze).is_err());
    }

    /// Chi-square critical value via the Wilson-Hilferty approximation.
    fn chi2_critical_99(df: f64) -> f64 {
        let z = 2.326_347_874;
        let a = 2.0 / (9.0 * df);
        df * (1.0 - a + z * a.sqrt()).powi(3)
    }

    #[test]
    fn offsets_are_uniform() {
        // the top-left pixel of each window encodes its offset as dy * 16 + dx
        let pixels: Vec<u8> = (0..512 * 64)
            .map(|i| {
                let (x, y) = (i % 512, i / 512);
                if x < 16 && y < 16 { (y * 16 + x) as u8 } else { 0 }
            })
            .collect();
        let img = NormalizedIris::with_full_mask("u", 512, 64, pixels).unwrap();
        let rect = Rect { col: 0, row: 0, width: 20, height: 20 };
        let set = sample_squares(&img, rect, 5, 1000, 2024, SourceTag::Random).unwrap();
        assert_eq!(set.len(), 1000);
        let mut counts = vec![0f64; 16 * 16];
        for p in set.iter() {
            let v = p[0] as usize;
            let (dx, dy) = (v % 16, v / 16);
            counts[dy * 16 + dx] += 1.0;
        }
        let expected = 1000.0 / 256.0;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(stat < chi2_critical_99(255.0), "chi2 {stat}");
        // marginals: 15 degrees of freedom, table value 30.578
        for axis in 0..2 {
            let mut m = vec![0f64; 16];
            for dy in 0..16 {
                for dx in 0..16 {
                    m[if axis == 0 { dx } else { dy }] += counts[dy * 16 + dx];
                }
            }
            let stat: f64 = m.iter().map(|c| (c - 62.5).powi(2) / 62.5).sum();
            assert!(stat < 30.578, "marginal chi2 {stat}");
        }
    }

    #[test]
    fn patches_equal_source_windows() {
        let img = image(512, 64);
        let rect = Rect { col: 100, row: 5, width: 40, height: 30 };
        let set = sample_squares(&img, rect, 9, 40, 5, SourceTag::Annotation).unwrap();
        for p in set.iter() {
            // find the window by brute force
            let found = (rect.row..=rect.row + rect.height - 9).any(|y| {
                (rect.col..=rect.col + rect.width - 9).any(|x| {
                    (0..9).all(|v| (0..9).all(|u| p[v * 9 + u] == img.pixel(x + u, y + v)))
                })
            });
            assert!(found);
        }
    }

    fn entry(image: usize, grid: BitPlane, source: SourceTag) -> RegionEntry {
        RegionEntry {
            image,
            region: RegionMask { grid, source_id: format!("r{image}") },
            source,
            accepted: true,
        }
    }

    #[test]
    fn corpus_from_full_region() {
        let imgs = vec![image(512, 64)];
        let regions = vec![entry(0, BitPlane::filled(512, 64), SourceTag::Gaze)];
        let c = build_corpus_from_images(&imgs, &regions, &[5], 10, 3).unwrap();
        assert_eq!(c.sets[&5].len(), 10);
        assert_eq!(c.report.counts[&5], 10);
        assert_eq!(c.sets[&5].source_tag, SourceTag::Gaze);
    }

    #[test]
    fn corpus_without_regions_is_empty() {
        let c = build_corpus_from_images(&[], &[], &[5, 7], 10, 3).unwrap();
        assert!(c.sets.values().all(PatchSet::is_empty));
        assert_eq!(c.report.source, None);
    }

    #[test]
    fn corpus_rejects_mixed_sources_and_shape_mismatch() {
        let imgs = vec![image(512, 64)];
        let regions = vec![
            entry(0, BitPlane::filled(512, 64), SourceTag::Gaze),
            entry(0, BitPlane::filled(512, 64), SourceTag::Annotation),
        ];
        assert!(matches!(
            build_corpus_from_images(&imgs, &regions, &[5], 1, 0),
            Err(Error::MixedSources(_))
        ));
        let regions = vec![entry(0, BitPlane::filled(100, 64), SourceTag::Gaze)];
        assert!(matches!(
            build_corpus_from_images(&imgs, &regions, &[5], 1, 0),
            Err(Error::Dimensions(_))
        ));
    }

    #[test]
    fn rejected_regions_are_skipped() {
        let imgs = vec![image(512, 64)];
        let mut r = entry(0, BitPlane::filled(512, 64), SourceTag::Gaze);
        r.accepted = false;
        let other = entry(0, BitPlane::filled(512, 64), SourceTag::Annotation);
        let c = build_corpus_from_images(&imgs, &[r, other], &[5], 4, 0).unwrap();
        assert_eq!(c.report.source, Some(SourceTag::Annotation));
        assert_eq!(c.report.regions_rejected, 1);
        assert_eq!(c.sets[&5].len(), 4);
    }

    #[test]
    fn corpus_counts_follow_discard_rule() {
        // 100 rectangles with sides between 5 and 60, placed in 512x64 images
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut imgs = Vec::new();
        let mut regions = Vec::new();
        let mut rects = Vec::new();
        for i in 0..100 {
            let w = rng.random_range(5..=60);
            let h = rng.random_range(5..=60);
            let col = rng.random_range(0..=512 - w);
            let row = rng.random_range(0..=64 - h);
            imgs.push(image(512, 64));
            let grid = BitPlane::from_fn(512, 64, |x, y| x >= col && x < col + w && y >= row && y < row + h);
            regions.push(entry(i, grid, SourceTag::Annotation));
            rects.push((w, h));
        }
        let per = 6;
        let c = build_corpus_from_images(&imgs, &regions, &STANDARD_SIZES, per, 5).unwrap();
        for l in STANDARD_SIZES {
            let fitting = rects.iter().filter(|&&(w, h)| w >= l && h >= l).count();
            assert_eq!(c.sets[&l].len(), fitting * per, "l={l}");
            assert!(!c.sets[&l].is_empty());
        }
        // determinism
        let again = build_corpus_from_images(&imgs, &regions, &STANDARD_SIZES, per, 5).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn patch_file_roundtrip() {
        let img = image(512, 64);
        let rect = Rect { col: 0, row: 0, width: 64, height: 64 };
        let set = sample_squares(&img, rect, 5, 7, 1, SourceTag::Gaze).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bsp");
        save_patch_set(&set, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 12 + 7 * 25);
        assert_eq!(load_patch_set(&p, SourceTag::Gaze).unwrap(), set);
    }

    // --- rubber sheet ---------------------------------------------------

    fn circles() -> CircleParams {
        CircleParams {
            pupil: Circle { x: 150.0, y: 150.0, r: 50.0 },
            iris: Circle { x: 150.0, y: 150.0, r: 120.0 },
        }
    }

    /// Independent per-pixel polar transform: for every output cell, walk the
    /// ray parametrically and look the source pixel up directly.
    fn oracle_polar(region: &BitPlane, c: &CircleParams) -> BitPlane {
        let mut out = BitPlane::new(512, 64);
        for j in 0..512 {
            let a = j as f64 * std::f64::consts::TAU / 512.0;
            for k in 0..64 {
                let frac = (2 * k + 1) as f64 / 128.0;
                let r_p = (c.pupil.x + c.pupil.r * a.cos(), c.pupil.y - c.pupil.r * a.sin());
                let r_i = (c.iris.x + c.iris.r * a.cos(), c.iris.y - c.iris.r * a.sin());
                let x = (1.0 - frac) * r_p.0 + frac * r_i.0;
                let y = (1.0 - frac) * r_p.1 + frac * r_i.1;
                let (xi, yi) = (x.round() as i64, y.round() as i64);
                if xi >= 0 && yi >= 0 && (xi as usize) < region.width() && (yi as usize) < region.height() {
                    out.set(j, k, region.get(xi as usize, yi as usize));
                }
            }
        }
        out
    }

    #[test]
    fn rubber_sheet_full_and_empty() {
        let full = RegionMask { grid: BitPlane::filled(300, 300), source_id: "f".into() };
        let out = normalize_region(&full, &circles()).unwrap();
        assert_eq!(out.grid.count_ones(), 512 * 64);
        let empty = RegionMask { grid: BitPlane::new(300, 300), source_id: "e".into() };
        assert!(normalize_region(&empty, &circles()).unwrap().grid.is_empty());
    }

    #[test]
    fn rubber_sheet_half_annulus() {
        // pixels with polar angle in [0, pi) about the centre (y axis pointing up)
        let grid = BitPlane::from_fn(300, 300, |x, y| {
            let (dx, dy) = (x as f64 - 150.0, 150.0 - y as f64);
            let a = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
            a < std::f64::consts::PI
        });
        let region = RegionMask { grid: grid.clone(), source_id: "half".into() };
        let out = normalize_region(&region, &circles()).unwrap();
        assert_eq!(out.grid, oracle_polar(&grid, &circles()));
        for j in 0..512 {
            for k in 0..64 {
                assert_eq!(out.grid.get(j, k), j < 256, "column {j} row {k}");
            }
        }
    }

    #[test]
    fn rubber_sheet_matches_oracle_on_random_regions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = CircleParams {
            pupil: Circle { x: 101.3, y: 97.8, r: 23.5 },
            iris: Circle { x: 99.0, y: 100.2, r: 80.0 },
        };
        let grid = BitPlane::from_fn(200, 190, |_, _| rng.random_bool(0.5));
        let out = normalize_region(&RegionMask { grid: grid.clone(), source_id: "r".into() }, &c).unwrap();
        assert_eq!(out.grid, oracle_polar(&grid, &c));
    }

    #[test]
    fn rubber_sheet_rejects_bad_circles() {
        let region = RegionMask { grid: BitPlane::filled(100, 100), source_id: "x".into() };
        let mut c = circles();
        c.pupil.r = 130.0;
        assert!(normalize_region(&region, &c).is_err());
        let mut c = circles();
        c.pupil.r = 0.0;
        assert!(normalize_region(&region, &c).is_err());
        // centre outside the 100x100 image
        assert!(normalize_region(&region, &circles()).is_err());
    }
}
