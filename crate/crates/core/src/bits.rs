//! MSB-first bit I/O with unsigned/signed Exp-Golomb codes.
//!
//! `ue(v)` writes `floor(log2(v+1))` zero bits followed by `v+1` in binary.
//! `se(v)` maps `v > 0` to `ue(2v-1)` and `v <= 0` to `ue(-2v)`.

use thiserror::Error;

/// Longest zero prefix accepted by [`BitReader::read_ue`]; keeps `v+1` inside a `u64`.
const MAX_LEADING_ZEROS: u32 = 63;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum BitError {
    #[error("bitstream exhausted at bit {0}")]
    Exhausted(usize),
    #[error("exp-golomb prefix longer than {MAX_LEADING_ZEROS} bits at bit {0}")]
    PrefixTooLong(usize),
}

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    buf: Vec<u8>,
    acc: u8,
    nbits: u8,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn put_bit(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | bit as u8;
        self.nbits += 1;
        if self.nbits == 8 {
            self.buf.push(self.acc);
            self.acc = 0;
            self.nbits = 0;
        }
    }

    /// Writes the low `n` bits of `value`, most significant first.
    pub fn put_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 64);
        for i in (0..n).rev() {
            self.put_bit((value >> i) & 1 == 1);
        }
    }

    pub fn put_ue(&mut self, v: u64) {
        let coded = v as u128 + 1;
        let len = 128 - coded.leading_zeros();
        for _ in 1..len {
            self.put_bit(false);
        }
        for i in (0..len).rev() {
            self.put_bit((coded >> i) & 1 == 1);
        }
    }

    pub fn put_se(&mut self, v: i64) {
        let mapped = if v > 0 { 2 * v as u64 - 1 } else { 2 * v.unsigned_abs() };
        self.put_ue(mapped);
    }

    pub fn bit_len(&self) -> usize {
        self.buf.len() * 8 + self.nbits as usize
    }

    /// Pads the last partial byte with zero bits and returns the buffer.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.buf.push(self.acc << (8 - self.nbits));
        }
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    #[inline]
    pub fn read_bit(&mut self) -> Result<bool, BitError> {
        let byte = *self.data.get(self.pos / 8).ok_or(BitError::Exhausted(self.pos))?;
        let bit = (byte >> (7 - self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_ue(&mut self) -> Result<u64, BitError> {
        let start = self.pos;
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > MAX_LEADING_ZEROS {
                return Err(BitError::PrefixTooLong(start));
            }
        }
        let mut coded: u64 = 1;
        for _ in 0..zeros {
            coded = (coded << 1) | self.read_bit()? as u64;
        }
        Ok(coded - 1)
    }

    pub fn read_se(&mut self) -> Result<i64, BitError> {
        // read_ue yields at most 2^64 - 2, so both arms fit in i64.
        let m = self.read_ue()?;
        Ok(if m & 1 == 1 { (m / 2 + 1) as i64 } else { -((m / 2) as i64) })
    }
}
