//! Bit-packed storage for quantized feature matrices.
//!
//! Symbols are packed at a runtime-chosen width of
//! `symbol_bits(max_symbol)` bits each. Element `i` occupies bits
//! `[i*bits, (i+1)*bits)` of a little-endian u64 word stream: bit `j` of the
//! stream is bit `j % 64` of word `j / 64`. Packing and unpacking are plain
//! bitwise operations on one or two words, so any element can be read in
//! O(1) without touching its neighbours. With the default 255-bin quantizer
//! (256 symbols including the missing sentinel) each element takes 8 bits,
//! a 4x reduction over 32-bit storage.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quantize::CutMatrix;

/// Fewest bits that can represent every symbol in `0..=max_value`;
/// at least 1.
pub fn symbol_bits(max_value: u32) -> u32 {
    if max_value == 0 {
        1
    } else {
        32 - max_value.leading_zeros()
    }
}

/// Fixed-width bit-packed array of `u32` symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedArray {
    words: Vec<u64>,
    bits: u32,
    len: usize,
}

impl PackedArray {
    /// Supported symbol widths.
    pub const MAX_BITS: u32 = 32;

    /// All-zero array of `len` elements at `bits` per element.
    pub fn zeros(len: usize, bits: u32) -> Result<Self> {
        if bits == 0 || bits > Self::MAX_BITS {
            return Err(Error::Contract(format!(
                "bits per symbol must be in 1..={}, got {bits}",
                Self::MAX_BITS
            )));
        }
        let total_bits = len * bits as usize;
        let words = vec![0u64; total_bits.div_ceil(64)];
        Ok(PackedArray { words, bits, len })
    }

    /// Pack a symbol sequence. Every symbol must fit in `bits`.
    pub fn pack(symbols: &[u32], bits: u32) -> Result<Self> {
        let mut arr = Self::zeros(symbols.len(), bits)?;
        for (i, &s) in symbols.iter().enumerate() {
            arr.set(i, s)?;
        }
        Ok(arr)
    }

    /// Write `symbol` at element `index`.
    pub fn set(&mut self, index: usize, symbol: u32) -> Result<()> {
        if index >= self.len {
            return Err(Error::Contract(format!(
                "packed index {index} out of range for {} elements",
                self.len
            )));
        }
        let mask = self.mask();
        if u64::from(symbol) > mask {
            return Err(Error::Contract(format!(
                "symbol {symbol} does not fit in {} bits",
                self.bits
            )));
        }
        let bits = self.bits as usize;
        let bit = index * bits;
        let (w, off) = (bit >> 6, bit & 63);
        self.words[w] = (self.words[w] & !(mask << off)) | (u64::from(symbol) << off);
        if off + bits > 64 {
            let spill = 64 - off; // how many bits landed in word w
            self.words[w + 1] =
                (self.words[w + 1] & !(mask >> spill)) | (u64::from(symbol) >> spill);
        }
        Ok(())
    }

    /// Read element `index`, checking bounds.
    pub fn read(&self, index: usize) -> Result<u32> {
        if index >= self.len {
            return Err(Error::Contract(format!(
                "packed index {index} out of range for {} elements",
                self.len
            )));
        }
        Ok(self.get(index))
    }

    /// Read element `index`. Panics if out of range; use [`read`](Self::read)
    /// for the checked variant.
    #[inline]
    pub fn get(&self, index: usize) -> u32 {
        let bits = self.bits as usize;
        let bit = index * bits;
        let (w, off) = (bit >> 6, bit & 63);
        let lo = self.words[w] >> off;
        let val = if off + bits > 64 {
            lo | (self.words[w + 1] << (64 - off))
        } else {
            lo
        };
        (val & self.mask()) as u32
    }

    #[inline]
    fn mask(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Buffer size in bytes, padding word included.
    pub fn byte_len(&self) -> usize {
        self.words.len() * 8
    }
}

/// Quantized feature matrix: dense row-major local bin indices, bit-packed,
/// with `sentinel` (= the quantizer's `max_bins`) marking missing entries.
#[derive(Debug, Clone)]
pub struct QuantizedMatrix {
    packed: PackedArray,
    n_rows: usize,
    n_features: usize,
    sentinel: u32,
    cuts: Arc<CutMatrix>,
}

impl QuantizedMatrix {
    pub(crate) fn new(
        packed: PackedArray,
        n_rows: usize,
        n_features: usize,
        sentinel: u32,
        cuts: Arc<CutMatrix>,
    ) -> Self {
        debug_assert_eq!(packed.len(), n_rows * n_features);
        debug_assert_eq!(packed.bits(), symbol_bits(sentinel));
        QuantizedMatrix {
            packed,
            n_rows,
            n_features,
            sentinel,
            cuts,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Symbol marking a missing value; equals the quantizer's `max_bins` and
    /// is the largest symbol the matrix can hold.
    pub fn sentinel(&self) -> u32 {
        self.sentinel
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.packed.bits()
    }

    pub fn cuts(&self) -> &Arc<CutMatrix> {
        &self.cuts
    }

    /// Local bin index of `(row, feature)`, or the sentinel when missing.
    #[inline]
    pub fn symbol(&self, row: usize, feature: usize) -> u32 {
        self.packed.get(row * self.n_features + feature)
    }

    #[inline]
    pub fn is_missing(&self, row: usize, feature: usize) -> bool {
        self.symbol(row, feature) == self.sentinel
    }

    /// Packed buffer size in bytes, padding included.
    pub fn packed_byte_len(&self) -> usize {
        self.packed.byte_len()
    }

    pub fn packed(&self) -> &PackedArray {
        &self.packed
    }

    /// Write the packed stream plus a fixed header to a binary cache file.
    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(40 + self.packed.words.len() * 8);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_features as u64).to_le_bytes());
        buf.extend_from_slice(&self.packed.bits.to_le_bytes());
        buf.extend_from_slice(&self.sentinel.to_le_bytes());
        buf.extend_from_slice(&(self.packed.words.len() as u64).to_le_bytes());
        for w in &self.packed.words {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Load a cache file written by [`write_cache`](Self::write_cache),
    /// re-attaching the cut matrix it was quantized with.
    pub fn read_cache(path: impl AsRef<Path>, cuts: Arc<CutMatrix>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;

        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            let s = buf
                .get(pos..end)
                .ok_or_else(|| Error::Schema(format!("cache file truncated at byte {pos}")))?;
            pos = end;
            Ok(s)
        };
        let magic = take(4)?;
        if magic != CACHE_MAGIC {
            return Err(Error::Schema("bad cache magic".to_string()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::Schema(format!(
                "unsupported cache version {version} (expected {CACHE_VERSION})"
            )));
        }
        let n_rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let n_features = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let bits = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let sentinel = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let n_words = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            words.push(u64::from_le_bytes(take(8)?.try_into().unwrap()));
        }

        if bits != symbol_bits(sentinel) {
            return Err(Error::Schema(format!(
                "cache bits {bits} inconsistent with sentinel {sentinel}"
            )));
        }
        let len = n_rows * n_features;
        if words.len() != (len * bits as usize).div_ceil(64) {
            return Err(Error::Schema("cache word count inconsistent".to_string()));
        }
        if cuts.n_features() != n_features {
            return Err(Error::Schema(format!(
                "cache has {n_features} features but cuts describe {}",
                cuts.n_features()
            )));
        }
        if cuts.max_bins() as u32 != sentinel {
            return Err(Error::Schema(format!(
                "cache sentinel {sentinel} does not match cuts max_bins {}",
                cuts.max_bins()
            )));
        }
        Ok(QuantizedMatrix {
            packed: PackedArray { words, bits, len },
            n_rows,
            n_features,
            sentinel,
            cuts,
        })
    }
}

const CACHE_MAGIC: &[u8; 4] = b"HBQM";
const CACHE_VERSION: u32 = 1;
