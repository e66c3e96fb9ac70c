//! File I/O for normalized iris images, masks, filter banks, templates and
//! dataset manifests.
//!
//! All binary formats are little-endian with a four byte magic:
//!
//! * `BSF1` filter bank: `u32 n`, `u32 l`, `u32 0`, then `n*l*l` `f64`
//!   coefficients, each filter row-major, filter 1 first (most significant bit).
//! * `BST1` template: `u32 n`, `u32 width`, `u32 height`, 32 byte bank
//!   fingerprint, then `n` packed code planes followed by the packed mask.
//!   Planes are row-major with the most significant bit first in each byte.
//!
//! Images are binary PGM (`P5`, 8-bit); masks are PGM (any value above 127 is
//! valid) or PBM (`P4`, a set bit is valid).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::{packed_len, BitPlane};
use crate::error::{Error, Result};

pub const IRIS_WIDTH: usize = 512;
pub const IRIS_HEIGHT: usize = 64;
pub const MAX_FILTERS: usize = 16;
pub const MAX_SIDE: usize = 255;

const BANK_MAGIC: &[u8; 4] = b"BSF1";
const TEMPLATE_MAGIC: &[u8; 4] = b"BST1";
const BANK_HEADER_LEN: usize = 16;
const TEMPLATE_HEADER_LEN: usize = 48;

// ---------------------------------------------------------------------------
// PNM

/// A decoded PGM or PBM raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Raster {
    Gray {
        width: usize,
        height: usize,
        pixels: Vec<u8>,
    },
    Bitmap {
        width: usize,
        height: usize,
        bits: Vec<bool>,
    },
}

impl Raster {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Raster::Gray { width, height, .. } | Raster::Bitmap { width, height, .. } => {
                (*width, *height)
            }
        }
    }

    /// Interprets the raster as a binary mask.
    pub fn to_mask(&self) -> BitPlane {
        match self {
            Raster::Gray {
                width,
                height,
                pixels,
            } => BitPlane::from_fn(*width, *height, |x, y| pixels[y * width + x] > 127),
            Raster::Bitmap {
                width,
                height,
                bits,
            } => BitPlane::from_fn(*width, *height, |x, y| bits[y * width + x]),
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

/// Decodes a binary PGM (`P5`, maxval <= 255) or PBM (`P4`) from memory.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Raster> {
    if bytes.len() < 2 {
        return Err(malformed(path, "file too short"));
    }
    let kind = &bytes[..2];
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.number().ok_or_else(|| malformed(path, "missing width"))?;
    let height = rd.number().ok_or_else(|| malformed(path, "missing height"))?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero dimension"));
    }
    match kind {
        b"P5" => {
            let maxval = rd.number().ok_or_else(|| malformed(path, "missing maxval"))?;
            if maxval == 0 || maxval > 255 {
                return Err(malformed(path, format!("unsupported maxval {maxval}")));
            }
            // exactly one whitespace byte separates the header from the raster
            if rd.pos >= bytes.len() || !bytes[rd.pos].is_ascii_whitespace() {
                return Err(malformed(path, "missing raster separator"));
            }
            let data = &bytes[rd.pos + 1..];
            let expected = width * height;
            if data.len() < expected {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    found: data.len(),
                });
            }
            Ok(Raster::Gray {
                width,
                height,
                pixels: data[..expected].to_vec(),
            })
        }
        b"P4" => {
            if rd.pos >= bytes.len() || !bytes[rd.pos].is_ascii_whitespace() {
                return Err(malformed(path, "missing raster separator"));
            }
            let data = &bytes[rd.pos + 1..];
            let row_bytes = width.div_ceil(8);
            let expected = row_bytes * height;
            if data.len() < expected {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    found: data.len(),
                });
            }
            let mut bits = Vec::with_capacity(width * height);
            for y in 0..height {
                for x in 0..width {
                    bits.push(data[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0);
                }
            }
            Ok(Raster::Bitmap {
                width,
                height,
                bits,
            })
        }
        other => Err(malformed(
            path,
            format!("unsupported PNM type {:?}", String::from_utf8_lossy(other)),
        )),
    }
}

pub fn read_pnm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, pixels)).map_err(|e| Error::io(path, e))
}

/// Writes a mask as a 0/255 PGM.
pub fn write_mask_pgm(path: &Path, mask: &BitPlane) -> Result<()> {
    let (w, h) = (mask.width(), mask.height());
    let pixels: Vec<u8> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| if mask.get(x, y) { 255 } else { 0 })
        .collect();
    write_pgm(path, w, h, &pixels)
}

// ---------------------------------------------------------------------------
// Normalized iris images

/// Whether an image satisfies the pipeline's fixed 512x64 geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageKind {
    Normalized,
    /// Patch-source image of arbitrary size, accepted only in relaxed mode.
    PatchSource,
}

/// Polar iris image (columns = angle, rows = radius) with its occlusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedIris {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub mask: BitPlane,
    pub kind: ImageKind,
}

impl NormalizedIris {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>, mask: BitPlane) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimensions(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if mask.width() != width || mask.height() != height {
            return Err(Error::Dimensions(format!(
                "image {width}x{height}, mask {}x{}",
                mask.width(),
                mask.height()
            )));
        }
        let kind = if width == IRIS_WIDTH && height == IRIS_HEIGHT {
            ImageKind::Normalized
        } else {
            ImageKind::PatchSource
        };
        Ok(NormalizedIris {
            id: id.into(),
            width,
            height,
            pixels,
            mask,
            kind,
        })
    }

    pub fn with_full_mask(id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(id, width, height, pixels, BitPlane::filled(width, height))
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Circular shift of image and mask along the angular axis:
    /// `out(x, y) = self((x - k) mod width, y)`.
    pub fn shift_columns(&self, k: i64) -> NormalizedIris {
        let w = self.width as i64;
        let mut pixels = vec![0u8; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (x as i64 - k).rem_euclid(w) as usize;
                pixels[y * self.width + x] = self.pixels[y * self.width + src];
            }
        }
        NormalizedIris {
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            pixels,
            mask: self.mask.shifted(k),
            kind: self.kind,
        }
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.width != IRIS_WIDTH || self.height != IRIS_HEIGHT {
            return Err(Error::Dimensions(format!(
                "{}: {}x{} image, pipeline requires {IRIS_WIDTH}x{IRIS_HEIGHT}",
                self.id, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Loads an 8-bit PGM image and its mask.
///
/// With `strict` set the image must be 512x64; otherwise other sizes are
/// accepted and tagged [`ImageKind::PatchSource`].
pub fn load_normalized_iris(image_path: &Path, mask_path: &Path, strict: bool) -> Result<NormalizedIris> {
    let (width, height, pixels) = match read_pnm(image_path)? {
        Raster::Gray {
            width,
            height,
            pixels,
        } => (width, height, pixels),
        Raster::Bitmap { .. } => {
            return Err(malformed(image_path, "image must be an 8-bit PGM"));
        }
    };
    let mask_raster = read_pnm(mask_path)?;
    if mask_raster.dims() != (width, height) {
        let (mw, mh) = mask_raster.dims();
        return Err(Error::Dimensions(format!(
            "{}: image {width}x{height}, mask {}: {mw}x{mh}",
            image_path.display(),
            mask_path.display()
        )));
    }
    let id = image_path.to_string_lossy().into_owned();
    let iris = NormalizedIris::new(id, width, height, pixels, mask_raster.to_mask())?;
    if strict {
        iris.require_normalized()?;
    }
    Ok(iris)
}

// ---------------------------------------------------------------------------
// Filter banks

/// SHA-256 digest of a filter bank's canonical serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// `n` real-valued `l x l` filters; filter 0 produces the most significant
/// bit of the BSIF code.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    n: usize,
    l: usize,
    coeffs: Vec<f64>,
    pub provenance: String,
}

impl FilterBank {
    /// `coeffs` holds the filters back to back, each row-major.
    pub fn new(n: usize, l: usize, coeffs: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        validate_bank_dims(n, l)?;
        if coeffs.len() != n * l * l {
            return Err(Error::InvalidBank(format!(
                "{} coefficients for n={n}, l={l}",
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidBank(format!("coefficient {i} is not finite")));
        }
        Ok(FilterBank {
            n,
            l,
            coeffs,
            provenance: provenance.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn filter(&self, i: usize) -> &[f64] {
        let sz = self.l * self.l;
        &self.coeffs[i * sz..(i + 1) * sz]
    }

    pub fn filters(&self) -> impl Iterator<Item = &[f64]> {
        self.coeffs.chunks_exact(self.l * self.l)
    }

    /// Returns a copy with the filters reordered; `order[k]` is the source
    /// index of output filter `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<FilterBank> {
        let mut seen = vec![false; self.n];
        if order.len() != self.n || order.iter().any(|&i| i >= self.n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("not a permutation of the filters".into()));
        }
        let coeffs = order.iter().flat_map(|&i| self.filter(i).iter().copied()).collect();
        FilterBank::new(self.n, self.l, coeffs, self.provenance.clone())
    }

    /// Returns a copy with filter `i` multiplied by `factors[i]`.
    pub fn scaled(&self, factors: &[f64]) -> Result<FilterBank> {
        if factors.len() != self.n {
            return Err(Error::InvalidArgument("one factor per filter required".into()));
        }
        let coeffs = self
            .filters()
            .zip(factors)
            .flat_map(|(f, &a)| f.iter().map(move |c| c * a))
            .collect();
        FilterBank::new(self.n, self.l, coeffs, self.provenance.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BANK_HEADER_LEN + self.coeffs.len() * 8);
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.l as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<FilterBank> {
        if bytes.len() < BANK_HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: BANK_HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != BANK_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
                expected: "BSF1",
            });
        }
        let n = read_u32(bytes, 4) as usize;
        let l = read_u32(bytes, 8) as usize;
        if read_u32(bytes, 12) != 0 {
            return Err(malformed(path, "reserved field is not zero"));
        }
        validate_bank_dims(n, l)?;
        let expected = BANK_HEADER_LEN + n * l * l * 8;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(malformed(path, "trailing bytes after coefficients"));
        }
        let coeffs = bytes[BANK_HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        FilterBank::new(n, l, coeffs, format!("file:{}", path.display()))
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint(Sha256::digest(self.to_bytes()).into())
    }
}

fn validate_bank_dims(n: usize, l: usize) -> Result<()> {
    if n == 0 || n > MAX_FILTERS {
        return Err(Error::InvalidBank(format!("n={n} outside [1, {MAX_FILTERS}]")));
    }
    if l < 3 || l.is_multiple_of(2) || l > MAX_SIDE {
        return Err(Error::InvalidBank(format!(
            "l={l} must be odd and within [3, {MAX_SIDE}]"
        )));
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn save_filter_bank(bank: &FilterBank, path: &Path) -> Result<()> {
    fs::write(path, bank.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_filter_bank(path: &Path) -> Result<FilterBank> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FilterBank::from_bytes(&bytes, path)
}

// ---------------------------------------------------------------------------
// Templates

/// `n` binary code planes plus the validity mask they are compared under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisTemplate {
    pub planes: Vec<BitPlane>,
    pub mask: BitPlane,
    pub bank_fingerprint: Fingerprint,
}

impl IrisTemplate {
    pub fn new(planes: Vec<BitPlane>, mask: BitPlane, bank_fingerprint: Fingerprint) -> Result<Self> {
        let t = IrisTemplate {
            planes,
            mask,
            bank_fingerprint,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.planes.len()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() || self.planes.len() > MAX_FILTERS {
            return Err(Error::InvalidTemplate(format!(
                "{} planes, expected 1..={MAX_FILTERS}",
                self.planes.len()
            )));
        }
        if self.planes.iter().any(|p| !p.same_shape(&self.mask)) {
            return Err(Error::InvalidTemplate("plane and mask shapes differ".into()));
        }
        Ok(())
    }

    /// True when this template was produced by `bank`.
    pub fn matches_bank(&self, bank: &FilterBank) -> bool {
        self.bank_fingerprint == bank.fingerprint()
    }

    pub fn shift_columns(&self, k: i64) -> IrisTemplate {
        IrisTemplate {
            planes: self.planes.iter().map(|p| p.shifted(k)).collect(),
            mask: self.mask.shifted(k),
            bank_fingerprint: self.bank_fingerprint,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (w, h) = (self.width(), self.height());
        let mut out = Vec::with_capacity(TEMPLATE_HEADER_LEN + (self.n() + 1) * packed_len(w, h));
        out.extend_from_slice(TEMPLATE_MAGIC);
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&self.bank_fingerprint.0);
        for p in &self.planes {
            out.extend_from_slice(&p.to_packed_bytes());
        }
        out.extend_from_slice(&self.mask.to_packed_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<IrisTemplate> {
        if bytes.len() < TEMPLATE_HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: TEMPLATE_HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != TEMPLATE_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
                expected: "BST1",
            });
        }
        let n = read_u32(bytes, 4) as usize;
        let w = read_u32(bytes, 8) as usize;
        let h = read_u32(bytes, 12) as usize;
        if n == 0 || n > MAX_FILTERS || w == 0 || h == 0 || w > 1 << 16 || h > 1 << 16 {
            return Err(malformed(path, format!("n={n}, {w}x{h} out of range")));
        }
        let fingerprint = Fingerprint(bytes[16..48].try_into().expect("32-byte slice"));
        let plane_len = packed_len(w, h);
        let expected = TEMPLATE_HEADER_LEN + (n + 1) * plane_len;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(malformed(path, "trailing bytes after mask"));
        }
        let mut sections = bytes[TEMPLATE_HEADER_LEN..]
            .chunks_exact(plane_len)
            .map(|c| BitPlane::from_packed_bytes(w, h, c).expect("section length checked"));
        let planes: Vec<BitPlane> = sections.by_ref().take(n).collect();
        let mask = sections.next().expect("mask section present");
        IrisTemplate::new(planes, mask, fingerprint)
    }
}

pub fn save_template(t: &IrisTemplate, path: &Path) -> Result<()> {
    let bytes = t.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_template(path: &Path) -> Result<IrisTemplate> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    IrisTemplate::from_bytes(&bytes, path)
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Eye {
    L,
    R,
}

/// One manifest row. Paths are kept as written; use
/// [`DatasetManifest::resolve`] to turn them into filesystem paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub mask: String,
    pub subject: String,
    pub eye: Eye,
    pub sensor: String,
    pub iris_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = DatasetManifest {
            records,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        use std::collections::{BTreeMap, BTreeSet};
        let mut images = BTreeSet::new();
        let mut irises: BTreeMap<&str, (&str, Eye)> = BTreeMap::new();
        for (row, r) in self.records.iter().enumerate() {
            if !images.insert(r.image.as_str()) {
                return Err(Error::Manifest(format!("row {}: duplicate image {}", row + 1, r.image)));
            }
            match irises.get(r.iris_id.as_str()) {
                Some(&(subject, eye)) if subject != r.subject || eye != r.eye => {
                    return Err(Error::Manifest(format!(
                        "row {}: iris {} seen with subject {subject}/{eye:?}, now {}/{:?}",
                        row + 1,
                        r.iris_id,
                        r.subject,
                        r.eye
                    )));
                }
                Some(_) => {}
                None => {
                    irises.insert(&r.iris_id, (&r.subject, r.eye));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_record(&self, idx: usize, strict: bool) -> Result<NormalizedIris> {
        let r = &self.records[idx];
        let mut iris = load_normalized_iris(&self.resolve(&r.image), &self.resolve(&r.mask), strict)?;
        iris.id = r.image.clone();
        Ok(iris)
    }

    pub fn subjects(&self) -> std::collections::BTreeSet<&str> {
        self.records.iter().map(|r| r.subject.as_str()).collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .quoting(false)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["image", "mask", "subject", "eye", "sensor", "iris_id"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Manifest(format!(
            "{}: header must be {}",
            path.display(),
            expected.join(",")
        )));
    }
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestRecord>, _>>()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::new(records, base)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    for r in &manifest.records {
        wtr.serialize(r)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
