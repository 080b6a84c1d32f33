//! Digital modem, hardware-impaired fading channel and naive receiver.
//!
//! Bits are carried as `u8` values that are either 0 or 1.

mod channel;
mod coding;
mod constellation;
mod receiver;
mod signal;

pub use channel::{
    effective_noise_var, stacked_channel_matrix, stacked_receive, transmit, transmit_with_gains,
    ChannelConfig, Fading, MAX_IMPAIRMENT, TYPICAL_IMPAIRMENT_MAX,
};
pub use coding::{repetition_decode, repetition_encode};
pub use constellation::{gray_decode, gray_encode, ConstellationSpec};
pub use receiver::{bit_error_rate, demodulate_hard, naive_receive, ERASURE_THRESHOLD};
pub use signal::SignalBatch;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("unsupported constellation order {0} (expected 4, 16 or 64)")]
    UnsupportedOrder(usize),
    #[error("bit stream of length {len} is not a multiple of {bits_per_symbol} bits per symbol")]
    Framing { len: usize, bits_per_symbol: usize },
    #[error("invalid channel configuration: {0}")]
    InvalidChannel(String),
    #[error("repetition factor must be odd and at least 1, got {0}")]
    InvalidRepetition(usize),
    #[error("signal batch: {0}")]
    InvalidSignal(String),
}

/// Unpacks a byte stream into bits, most-significant bit first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len() * 8);
    for &b in bytes {
        for k in (0..8).rev() {
            out.push((b >> k) & 1);
        }
    }
    out
}

/// Packs bits (MSB first) into bytes. A trailing partial byte is dropped.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks_exact(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_codec_is_bijective() {
        let all: Vec<u8> = (0..=255).collect();
        let bits = bytes_to_bits(&all);
        assert_eq!(bits.len(), 256 * 8);
        assert_eq!(bits_to_bytes(&bits), all);
    }

    #[test]
    fn msb_first() {
        assert_eq!(bytes_to_bits(&[0b1000_0001]), vec![1, 0, 0, 0, 0, 0, 0, 1]);
    }
}
