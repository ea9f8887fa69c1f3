//! Wide-word, bit-exact primitives.
//!
//! Everything here works MSB-first: bit 0 of a [`WideBits`] word is the most
//! significant bit, so byte 0 of a packet occupies bits 0..8 of word 0 and
//! header offsets taken from protocol RFCs can be used verbatim.

use thiserror::Error;

/// Hard cap on the width of a single bus word.
pub const MAX_WIDTH_BITS: u32 = 4096;
/// Hard cap on transition-key and extracted-field widths.
pub const MAX_KEY_WIDTH_BITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitsError {
    #[error("word width {width} out of range 1..={max}", max = MAX_WIDTH_BITS)]
    WidthOutOfRange { width: u32 },
    #[error("mask width {width} out of range 1..={max}", max = MAX_KEY_WIDTH_BITS)]
    MaskWidthOutOfRange { width: u32 },
    #[error("slice [{offset}, +{width}) out of range for a {word_width}-bit word")]
    SliceOutOfRange {
        offset: u64,
        width: u32,
        word_width: u32,
    },
    #[error("slice width {width} out of range 1..=64")]
    SliceWidthOutOfRange { width: u32 },
    #[error("key end bit {key_end_bit} lies beyond the {header_bits}-bit header")]
    KeyEndBeyondHeader { key_end_bit: u64, header_bits: u64 },
    #[error("bus width must be nonzero")]
    ZeroBusWidth,
    #[error("value 0x{value:x} does not fit in {width} bits")]
    ValueTooWide { value: u64, width: u32 },
}

/// Minimal number of bits needed to represent the value `n`; `numbits(0) = 1`
/// so that degenerate configurations never produce zero-width counters.
pub fn numbits(n: u64) -> u32 {
    if n == 0 {
        1
    } else {
        64 - n.leading_zeros()
    }
}

/// Bytes to bits.
pub fn b2b(bytes: u64) -> u64 {
    bytes * 8
}

/// A value with exactly the `width` least-significant bits set.
pub fn create_mask(width: u32) -> Result<u64, BitsError> {
    if width == 0 || width > MAX_KEY_WIDTH_BITS {
        return Err(BitsError::MaskWidthOutOfRange { width });
    }
    Ok(mask64(width))
}

pub(crate) fn mask64(width: u32) -> u64 {
    debug_assert!((1..=64).contains(&width));
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Right-shift that brings a key ending at `key_end_bit` (MSB-first from the
/// header start) to the least-significant position of the bus word holding
/// it. A key ending exactly on a word boundary yields shift 0.
pub fn shift_def(header_bits: u64, bus_bits: u64, key_end_bit: u64) -> Result<u64, BitsError> {
    if bus_bits == 0 {
        return Err(BitsError::ZeroBusWidth);
    }
    if key_end_bit > header_bits {
        return Err(BitsError::KeyEndBeyondHeader {
            key_end_bit,
            header_bits,
        });
    }
    let rem = key_end_bit % bus_bits;
    Ok(if rem == 0 { 0 } else { bus_bits - rem })
}

/// One beat of the wide data bus: a fixed-width bit vector, MSB first.
///
/// Bits beyond `width` in the backing words are always zero.
#[derive(Clone, PartialEq, Eq)]
pub struct WideBits {
    width: u32,
    words: Vec<u64>,
}

impl WideBits {
    pub fn zero(width: u32) -> Self {
        assert!(
            (1..=MAX_WIDTH_BITS).contains(&width),
            "word width {width} out of range 1..={MAX_WIDTH_BITS}"
        );
        let n = (width as usize).div_ceil(64);
        WideBits {
            width,
            words: vec![0; n],
        }
    }

    /// Builds a word from network-order bytes; byte 0 lands in bits 0..8.
    /// Missing trailing bytes are zero padding.
    pub fn from_bytes(bytes: &[u8], width: u32) -> Self {
        let mut out = Self::zero(width);
        assert!(
            bytes.len() * 8 <= (width as usize).div_ceil(8) * 8,
            "{} bytes do not fit in a {width}-bit word",
            bytes.len()
        );
        for (i, &b) in bytes.iter().enumerate() {
            out.words[i / 8] |= (b as u64) << (56 - 8 * (i % 8));
        }
        out.mask_tail();
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// The bit at MSB-first index `i`.
    pub fn bit(&self, i: u64) -> u64 {
        assert!(i < self.width as u64);
        (self.words[(i / 64) as usize] >> (63 - (i % 64))) & 1
    }

    /// Value of the `width`-bit slice starting at MSB-first bit `offset`.
    pub fn extract(&self, offset: u64, width: u32) -> Result<u64, BitsError> {
        if width == 0 || width > 64 {
            return Err(BitsError::SliceWidthOutOfRange { width });
        }
        if offset + width as u64 > self.width as u64 {
            return Err(BitsError::SliceOutOfRange {
                offset,
                width,
                word_width: self.width,
            });
        }
        let w = width as u64;
        let word = (offset / 64) as usize;
        let bit = offset % 64;
        let val = if bit + w <= 64 {
            (self.words[word] >> (64 - bit - w)) & mask64(width)
        } else {
            let hi_bits = 64 - bit;
            let lo_bits = (w - hi_bits) as u32;
            let hi = self.words[word] & mask64(hi_bits as u32);
            let lo = self.words[word + 1] >> (64 - lo_bits);
            (hi << lo_bits) | lo
        };
        Ok(val)
    }

    /// Logical right shift: the word interpreted as an unsigned integer,
    /// divided by 2^n.
    pub fn shr(&self, n: u64) -> Self {
        let mut out = Self::zero(self.width);
        if n >= self.width as u64 {
            return out;
        }
        let ws = (n / 64) as usize;
        let bs = (n % 64) as u32;
        for j in ws..self.words.len() {
            let src = j - ws;
            let mut v = self.words[src] >> bs;
            if bs > 0 && src >= 1 {
                v |= self.words[src - 1] << (64 - bs);
            }
            out.words[j] = v;
        }
        out.mask_tail();
        out
    }

    /// Logical left shift toward the MSB; bits shifted past bit 0 are lost.
    pub fn shl(&self, n: u64) -> Self {
        let mut out = Self::zero(self.width);
        if n >= self.width as u64 {
            return out;
        }
        let ws = (n / 64) as usize;
        let bs = (n % 64) as u32;
        for j in 0..self.words.len() {
            let src = j + ws;
            let mut v = 0u64;
            if src < self.words.len() {
                v = self.words[src] << bs;
                if bs > 0 && src + 1 < self.words.len() {
                    v |= self.words[src + 1] >> (64 - bs);
                }
            }
            out.words[j] = v;
        }
        out.mask_tail();
        out
    }

    pub fn or(&self, other: &WideBits) -> Self {
        assert_eq!(self.width, other.width, "width mismatch in or");
        let mut out = self.clone();
        for (w, o) in out.words.iter_mut().zip(&other.words) {
            *w |= o;
        }
        out
    }

    /// The least-significant 64 bits (or the whole word when narrower).
    pub fn low_u64(&self) -> u64 {
        if self.width <= 64 {
            self.words[0] >> (64 - self.width)
        } else {
            self.extract(self.width as u64 - 64, 64).unwrap()
        }
    }

    /// Network-order bytes, `ceil(width / 8)` of them.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = (self.width as usize).div_ceil(8);
        (0..n)
            .map(|i| (self.words[i / 8] >> (56 - 8 * (i % 8))) as u8)
            .collect()
    }

    fn mask_tail(&mut self) {
        let rem = self.width % 64;
        if rem != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= !0u64 << (64 - rem);
        }
    }
}

impl std::fmt::Debug for WideBits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WideBits<{}>(0x", self.width)?;
        for b in self.to_bytes() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// Reads a `width_bits` slice out of a byte buffer at an MSB-first bit offset.
pub fn read_bits(bytes: &[u8], offset_bits: u64, width_bits: u32) -> Result<u64, BitsError> {
    if width_bits == 0 || width_bits > 64 {
        return Err(BitsError::SliceWidthOutOfRange { width: width_bits });
    }
    let total = bytes.len() as u64 * 8;
    if offset_bits + width_bits as u64 > total {
        return Err(BitsError::SliceOutOfRange {
            offset: offset_bits,
            width: width_bits,
            word_width: total.min(u32::MAX as u64) as u32,
        });
    }
    let first = (offset_bits / 8) as usize;
    let last = ((offset_bits + width_bits as u64 - 1) / 8) as usize;
    let mut window: u128 = 0;
    for &b in &bytes[first..=last] {
        window = (window << 8) | b as u128;
    }
    let window_bits = ((last - first + 1) * 8) as u64;
    let drop = window_bits - (offset_bits - first as u64 * 8) - width_bits as u64;
    Ok(((window >> drop) & ((1u128 << width_bits) - 1)) as u64)
}

/// Writes `value` into a byte buffer as a `width_bits` slice at an MSB-first
/// bit offset.
pub fn write_bits(
    bytes: &mut [u8],
    offset_bits: u64,
    width_bits: u32,
    value: u64,
) -> Result<(), BitsError> {
    if width_bits == 0 || width_bits > 64 {
        return Err(BitsError::SliceWidthOutOfRange { width: width_bits });
    }
    if width_bits < 64 && (value >> width_bits) != 0 {
        return Err(BitsError::ValueTooWide {
            value,
            width: width_bits,
        });
    }
    let total = bytes.len() as u64 * 8;
    if offset_bits + width_bits as u64 > total {
        return Err(BitsError::SliceOutOfRange {
            offset: offset_bits,
            width: width_bits,
            word_width: total.min(u32::MAX as u64) as u32,
        });
    }
    for k in 0..width_bits as u64 {
        let bit = (value >> (width_bits as u64 - 1 - k)) & 1;
        let pos = offset_bits + k;
        let byte = (pos / 8) as usize;
        let shift = 7 - (pos % 8) as u32;
        if bit == 1 {
            bytes[byte] |= 1 << shift;
        } else {
            bytes[byte] &= !(1 << shift);
        }
    }
    Ok(())
}
