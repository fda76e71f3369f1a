//! Carry-less byte-oriented range coder.
//!
//! The coder keeps a 64-bit `low`/`range` pair and emits a byte whenever the
//! top byte of the interval has settled. When the interval straddles a byte
//! boundary but has shrunk below 32 bits, the range is clamped to the nearest
//! boundary instead of propagating a carry, so emitted bytes are never
//! revisited. The decoder runs the identical state machine on `low`/`range`
//! while tracking the incoming code value, which makes encoder and decoder
//! byte-exact mirrors of each other.
//!
//! Symbol statistics are supplied per call as `(cum, freq, total)` integer
//! triples with `total` at most 1 << 16, so `range / total` always stays
//! large enough for every nonzero frequency to get a nonempty sub-interval.

use crate::error::{Error, Result};

/// Mask for the settled-top-byte test.
const TOP: u64 = 1 << 56;
/// Renormalization bound: below this the straddle clamp kicks in.
const BOT: u64 = 1 << 32;

/// Largest allowed cumulative total for a frequency table.
pub const MAX_TOTAL: u32 = 1 << 16;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder::new()
    }
}

impl RangeEncoder {
    pub fn new() -> RangeEncoder {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    /// Narrows the interval to the symbol spanning `[cum, cum + freq)` out of
    /// `total`.
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0, "zero-frequency symbol cannot be coded");
        debug_assert!(cum.checked_add(freq).is_some_and(|end| end <= total));
        debug_assert!(total <= MAX_TOTAL);
        let r = self.range / u64::from(total);
        self.low = self.low.wrapping_add(r * u64::from(cum));
        self.range = r * u64::from(freq);
        self.normalize();
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                // The interval straddles a byte boundary but is small; clamp
                // it to end at the boundary so the settled byte can go out.
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the final interval and returns the byte stream. The eight
    /// trailing bytes pin down `low` so the decoder's lookahead never runs
    /// dry on a well-formed stream.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..8 {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<RangeDecoder<'a>> {
        if data.len() < 8 {
            return Err(Error::codec(format!(
                "coded stream is {} bytes, at least 8 required",
                data.len()
            )));
        }
        let mut dec = RangeDecoder {
            low: 0,
            range: u64::MAX,
            code: 0,
            data,
            pos: 0,
        };
        for _ in 0..8 {
            dec.code = (dec.code << 8) | u64::from(dec.data[dec.pos]);
            dec.pos += 1;
        }
        Ok(dec)
    }

    /// Returns the cumulative-frequency slot the next symbol occupies, in
    /// `[0, total)`. The caller looks up which symbol owns the slot and then
    /// commits with [`RangeDecoder::decode`] using that symbol's entry.
    pub fn target(&mut self, total: u32) -> Result<u32> {
        let r = self.range / u64::from(total);
        let t = self.code.wrapping_sub(self.low) / r;
        if t >= u64::from(total) {
            return Err(Error::codec(
                "coded value outside the frequency table, stream is corrupt".to_string(),
            ));
        }
        Ok(t as u32)
    }

    /// Commits the symbol identified from [`RangeDecoder::target`], mirroring
    /// the encoder's interval update.
    pub fn decode(&mut self, cum: u32, freq: u32, total: u32) -> Result<()> {
        let r = self.range / u64::from(total);
        self.low = self.low.wrapping_add(r * u64::from(cum));
        self.range = r * u64::from(freq);
        self.normalize()
    }

    fn normalize(&mut self) -> Result<()> {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    return Ok(());
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            if self.pos >= self.data.len() {
                return Err(Error::codec(
                    "coded stream ended early, stream is truncated".to_string(),
                ));
            }
            self.code = (self.code << 8) | u64::from(self.data[self.pos]);
            self.pos += 1;
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Bytes consumed so far, including the eight-byte lookahead.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}
