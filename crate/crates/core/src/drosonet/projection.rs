//! Fixed sparse binary projection and winner-take-all binarization.
//!
//! The projection matrix is stored column-major as packed 64-bit words. Inputs
//! are 8-bit levels, so `x · H` is evaluated exactly in integers by splitting
//! the input into eight bit-planes and summing `popcount(plane & column)`
//! weighted by the plane's bit value.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::InputVector;

/// Number of ones in every projection column: `round(0.1 * d_in)`.
#[inline]
pub fn column_weight(d_in: usize) -> usize {
    (d_in + 5) / 10
}

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Binary `d_in × d_hidden` matrix with exactly [`column_weight`] ones per
/// column.
#[derive(Clone, PartialEq, Eq)]
pub struct SparseProjection {
    d_in: usize,
    d_hidden: usize,
    words_per_col: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for SparseProjection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseProjection")
            .field("d_in", &self.d_in)
            .field("d_hidden", &self.d_hidden)
            .finish_non_exhaustive()
    }
}

impl SparseProjection {
    /// Samples each column's support without replacement.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_hidden: usize, rng: &mut R) -> Self {
        let words_per_col = words_for(d_in);
        let k = column_weight(d_in);
        let mut words = vec![0u64; words_per_col * d_hidden];
        for col in words.chunks_exact_mut(words_per_col) {
            for i in rand::seq::index::sample(rng, d_in, k) {
                col[i / 64] |= 1 << (i % 64);
            }
        }
        SparseProjection {
            d_in,
            d_hidden,
            words_per_col,
            words,
        }
    }

    /// Rebuilds a projection from packed column-major words, checking the
    /// column weight and that padding bits are clear.
    pub fn from_words(d_in: usize, d_hidden: usize, words: Vec<u64>) -> Result<Self> {
        let words_per_col = words_for(d_in);
        if words.len() != words_per_col * d_hidden {
            return Err(Error::format(format!(
                "projection holds {} words, expected {}",
                words.len(),
                words_per_col * d_hidden
            )));
        }
        let k = column_weight(d_in);
        let pad = words_per_col * 64 - d_in;
        let tail_mask = if pad == 0 { 0 } else { !0u64 << (64 - pad) };
        for (j, col) in words.chunks_exact(words_per_col).enumerate() {
            let ones: u32 = col.iter().map(|w| w.count_ones()).sum();
            if ones as usize != k {
                return Err(Error::format(format!(
                    "projection column {j} has {ones} ones, expected {k}"
                )));
            }
            if col[words_per_col - 1] & tail_mask != 0 {
                return Err(Error::format(format!(
                    "projection column {j} sets bits beyond row {d_in}"
                )));
            }
        }
        Ok(SparseProjection {
            d_in,
            d_hidden,
            words_per_col,
            words,
        })
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.d_in
    }

    #[inline]
    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    /// Packed column-major words; column `j` occupies
    /// `words[j * ceil(d_in/64) ..][.. ceil(d_in/64)]`.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[u64] {
        &self.words[j * self.words_per_col..(j + 1) * self.words_per_col]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.column(col)[row / 64] >> (row % 64) & 1 == 1
    }

    pub fn column_popcount(&self, j: usize) -> usize {
        self.column(j).iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `F = x · H` in units of 1/255.
    pub fn project(&self, x: &InputVector) -> Result<Vec<u32>> {
        self.check_input(x)?;
        Ok(self.project_planes(&BitPlanes::new(x)))
    }

    pub fn project_planes(&self, planes: &BitPlanes) -> Vec<u32> {
        debug_assert_eq!(planes.words, self.words_per_col);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("avx512vpopcntdq") {
            // SAFETY: the required CPU features were just detected.
            return unsafe { simd::project_planes(&self.words, self.words_per_col, &planes.data) };
        }
        project_planes_scalar(&self.words, self.words_per_col, &planes.data)
    }

    pub(crate) fn check_input(&self, x: &InputVector) -> Result<()> {
        if x.len() != self.d_in {
            return Err(Error::invalid(format!(
                "input has length {}, projection expects {}",
                x.len(),
                self.d_in
            )));
        }
        Ok(())
    }
}

fn project_planes_scalar(words: &[u64], words_per_col: usize, planes: &[u64]) -> Vec<u32> {
    words
        .chunks_exact(words_per_col)
        .map(|col| {
            let mut acc = [0u32; 8];
            for (&c, plane) in col.iter().zip(planes.as_chunks::<8>().0) {
                for b in 0..8 {
                    acc[b] += (plane[b] & c).count_ones();
                }
            }
            acc.iter().enumerate().map(|(b, &n)| n << b).sum()
        })
        .collect()
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    /// The eight planes of one input word fill one 512-bit register, so a
    /// column word is broadcast, masked against all planes and popcounted at
    /// once. Lane `b` is finally weighted by `2^b`.
    #[target_feature(enable = "avx512f,avx512vpopcntdq")]
    pub(super) unsafe fn project_planes(words: &[u64], words_per_col: usize, planes: &[u64]) -> Vec<u32> {
        assert_eq!(planes.len(), words_per_col * 8);
        let shifts = _mm512_set_epi64(7, 6, 5, 4, 3, 2, 1, 0);
        // Plain loops: closures would not inherit the enabled features.
        let mut regs = Vec::with_capacity(words_per_col);
        for w in 0..words_per_col {
            // SAFETY: `planes` holds `words_per_col * 8` words, checked above.
            regs.push(unsafe { _mm512_loadu_epi64(planes.as_ptr().add(w * 8).cast()) });
        }
        let mut out = Vec::with_capacity(words.len() / words_per_col);
        // Four columns per pass keep four independent dependency chains.
        let mut quads = words.chunks_exact(4 * words_per_col);
        for quad in &mut quads {
            let (c0, rest) = quad.split_at(words_per_col);
            let (c1, rest) = rest.split_at(words_per_col);
            let (c2, c3) = rest.split_at(words_per_col);
            let mut acc = [_mm512_setzero_si512(); 4];
            for w in 0..words_per_col {
                let p = regs[w];
                let h0 = _mm512_popcnt_epi64(_mm512_and_si512(p, _mm512_set1_epi64(c0[w] as i64)));
                let h1 = _mm512_popcnt_epi64(_mm512_and_si512(p, _mm512_set1_epi64(c1[w] as i64)));
                let h2 = _mm512_popcnt_epi64(_mm512_and_si512(p, _mm512_set1_epi64(c2[w] as i64)));
                let h3 = _mm512_popcnt_epi64(_mm512_and_si512(p, _mm512_set1_epi64(c3[w] as i64)));
                acc[0] = _mm512_add_epi64(acc[0], h0);
                acc[1] = _mm512_add_epi64(acc[1], h1);
                acc[2] = _mm512_add_epi64(acc[2], h2);
                acc[3] = _mm512_add_epi64(acc[3], h3);
            }
            for a in acc {
                out.push(_mm512_reduce_add_epi64(_mm512_sllv_epi64(a, shifts)) as u32);
            }
        }
        for col in quads.remainder().chunks_exact(words_per_col) {
            let mut acc = _mm512_setzero_si512();
            for (&p, &c) in regs.iter().zip(col) {
                let hits = _mm512_popcnt_epi64(_mm512_and_si512(p, _mm512_set1_epi64(c as i64)));
                acc = _mm512_add_epi64(acc, hits);
            }
            out.push(_mm512_reduce_add_epi64(_mm512_sllv_epi64(acc, shifts)) as u32);
        }
        out
    }
}

/// Input levels split into eight bit-planes, word-interleaved: the eight
/// planes of word `w` are contiguous.
#[derive(Clone, Debug)]
pub struct BitPlanes {
    words: usize,
    data: Vec<u64>,
}

impl BitPlanes {
    pub fn new(x: &InputVector) -> Self {
        let words = words_for(x.len());
        let mut data = vec![0u64; words * 8];
        for (w, chunk) in x.levels().chunks(64).enumerate() {
            let planes = &mut data[w * 8..w * 8 + 8];
            for (i, &level) in chunk.iter().enumerate() {
                for (b, plane) in planes.iter_mut().enumerate() {
                    *plane |= (((level >> b) & 1) as u64) << i;
                }
            }
        }
        BitPlanes { words, data }
    }
}

/// Binary hidden activation, stored as its ascending list of active units.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HiddenCode {
    len: usize,
    active: Vec<u32>,
}

impl HiddenCode {
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn active(&self) -> &[u32] {
        &self.active
    }

    pub fn count_ones(&self) -> usize {
        self.active.len()
    }

    pub fn get(&self, i: usize) -> bool {
        self.active.binary_search(&(i as u32)).is_ok()
    }

    pub fn to_dense(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len];
        for &i in &self.active {
            out[i as usize] = 1;
        }
        out
    }
}

/// Sets the top half of `values` to one. Ties at the cutoff go to the lower
/// index.
pub fn winner_take_all(values: &[u32]) -> HiddenCode {
    let half = values.len() / 2;
    let mut active = Vec::with_capacity(half);
    if half > 0 {
        let cut = nth_largest(values, half);
        let above = values.iter().filter(|&&v| v > cut).count();
        let mut ties = half - above;
        for (i, &v) in values.iter().enumerate() {
            if v > cut {
                active.push(i as u32);
            } else if v == cut && ties > 0 {
                active.push(i as u32);
                ties -= 1;
            }
        }
    }
    HiddenCode {
        len: values.len(),
        active,
    }
}

/// The `k`-th largest value (1-based) by most-significant-byte-first radix
/// select, skipping bytes above the maximum's leading byte.
fn nth_largest(values: &[u32], mut k: usize) -> u32 {
    debug_assert!(k >= 1 && k <= values.len());
    let max = values.iter().copied().max().unwrap_or(0);
    let top_byte = (32 - max.leading_zeros()).div_ceil(8).max(1);
    let mut prefix = 0u32;
    for byte in (0..top_byte).rev() {
        let shift = byte * 8;
        let high = if shift + 8 >= 32 { 0 } else { u32::MAX << (shift + 8) };
        let mut hist = [0usize; 256];
        for &v in values {
            if v & high == prefix {
                hist[(v >> shift & 0xff) as usize] += 1;
            }
        }
        let mut bin = 255;
        while hist[bin] < k {
            k -= hist[bin];
            bin -= 1;
        }
        prefix |= (bin as u32) << shift;
    }
    prefix
}
