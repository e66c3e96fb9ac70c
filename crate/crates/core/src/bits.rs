//! Packed binary planes with circular column shifts.
//!
//! Column `x` of a row lives in word `x / 64`, bit `x % 64`. Bits past the
//! row width are always zero so whole-word popcounts stay exact.

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitPlane {
    width: usize,
    height: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitPlane {
    pub fn new(width: usize, height: usize) -> Self {
        let words_per_row = width.div_ceil(64);
        BitPlane {
            width,
            height,
            words_per_row,
            words: vec![0; words_per_row * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        let mut plane = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                plane.set(x, y, true);
            }
        }
        plane
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut plane = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    plane.set(x, y, true);
                }
            }
        }
        plane
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let w = self.words[y * self.words_per_row + x / 64];
        (w >> (x % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        let w = &mut self.words[y * self.words_per_row + x / 64];
        let bit = 1u64 << (x % 64);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn same_shape(&self, other: &BitPlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn and(&self, other: &BitPlane) -> BitPlane {
        assert!(self.same_shape(other), "plane shapes differ");
        BitPlane {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
            ..self.clone()
        }
    }

    /// Complement within the plane's width (padding bits stay zero).
    pub fn not(&self) -> BitPlane {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, !self.get(x, y));
            }
        }
        out
    }

    /// `popcount((self XOR other) AND mask)`.
    pub fn masked_xor_count(&self, other: &BitPlane, mask: &BitPlane) -> u64 {
        assert!(self.same_shape(other) && self.same_shape(mask), "plane shapes differ");
        self.words
            .iter()
            .zip(&other.words)
            .zip(&mask.words)
            .map(|((a, b), m)| u64::from(((a ^ b) & m).count_ones()))
            .sum()
    }

    /// Circular shift along columns: `out(x, y) = self((x - k) mod width, y)`.
    pub fn shifted(&self, k: i64) -> BitPlane {
        let width = self.width;
        if width == 0 {
            return self.clone();
        }
        let k = k.rem_euclid(width as i64) as usize;
        if k == 0 {
            return self.clone();
        }
        let mut out = BitPlane::new(width, self.height);
        for y in 0..self.height {
            let src = &self.words[y * self.words_per_row..(y + 1) * self.words_per_row];
            let dst = &mut out.words[y * self.words_per_row..(y + 1) * self.words_per_row];
            for (wi, slot) in dst.iter_mut().enumerate() {
                let start = wi * 64;
                let len = (width - start).min(64);
                let s = (start + width - k) % width;
                *slot = if s + len <= width {
                    read_bits(src, s, len)
                } else {
                    let first = width - s;
                    read_bits(src, s, first) | (read_bits(src, 0, len - first) << first)
                };
            }
        }
        out
    }

    /// Row-major, most-significant-bit-first packing; the final byte is
    /// zero-padded when `width * height` is not a multiple of 8.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let total = self.width * self.height;
        let mut out = vec![0u8; total.div_ceil(8)];
        let mut idx = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out[idx / 8] |= 0x80 >> (idx % 8);
                }
                idx += 1;
            }
        }
        out
    }

    pub fn from_packed_bytes(width: usize, height: usize, bytes: &[u8]) -> Option<BitPlane> {
        if bytes.len() != packed_len(width, height) {
            return None;
        }
        let mut plane = BitPlane::new(width, height);
        let mut idx = 0;
        for y in 0..height {
            for x in 0..width {
                if bytes[idx / 8] & (0x80 >> (idx % 8)) != 0 {
                    plane.set(x, y, true);
                }
                idx += 1;
            }
        }
        Some(plane)
    }
}

/// Bytes needed to pack a `width x height` plane.
pub fn packed_len(width: usize, height: usize) -> usize {
    (width * height).div_ceil(8)
}

#[inline]
fn read_bits(row: &[u64], start: usize, len: usize) -> u64 {
    debug_assert!((1..=64).contains(&len));
    let w = start / 64;
    let off = start % 64;
    let mut bits = row[w] >> off;
    if off != 0 && off + len > 64 {
        bits |= row[w + 1] << (64 - off);
    }
    if len == 64 {
        bits
    } else {
        bits & ((1u64 << len) - 1)
    }
}
