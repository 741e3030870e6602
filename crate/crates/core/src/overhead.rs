//! Communication-overhead accounting: bytes per task instance for the
//! fused pipeline versus the unfused concatenation, in exact integer
//! arithmetic.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::encoders::{ImageEncoder, Modality, SpeechEncoder};
use crate::error::{err, Result};
use crate::fbank;
use crate::tasks::TaskSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub task: String,
    /// Rows actually transmitted (1 for fused multi-modal tasks).
    pub fused_rows: usize,
    /// Rows of the unfused concatenation including the task row.
    pub unfused_rows: usize,
    /// Symbol width d.
    pub width: usize,
    pub symbol_bits: usize,
    pub fused_bytes: u64,
    pub unfused_bytes: u64,
}

impl OverheadReport {
    /// Reduction factor as the exact rational `1 / denominator`.
    pub fn ratio(&self) -> (u64, u64) {
        if self.fused_rows == self.unfused_rows {
            (1, 1)
        } else {
            (1, self.unfused_rows as u64)
        }
    }

    pub fn ratio_value(&self) -> f64 {
        let (n, d) = self.ratio();
        n as f64 / d as f64
    }
}

fn bytes_for(rows: usize, width: usize, symbol_bits: usize) -> u64 {
    (rows as u64) * (width as u64) * (symbol_bits as u64) / 8
}

/// Overhead from raw sequence lengths (the arithmetic core).
pub fn overhead_from_lengths(
    task: impl Into<String>,
    lengths: &[usize],
    width: usize,
    symbol_bits: usize,
) -> Result<OverheadReport> {
    if !matches!(symbol_bits, 8 | 16 | 32) {
        return Err(err!(Config, "symbol width must be 8, 16 or 32 bits, got {symbol_bits}"));
    }
    if lengths.is_empty() {
        return Err(err!(Contract, "overhead needs at least one modality length"));
    }
    let unfused_rows: usize = lengths.iter().sum::<usize>() + 1;
    let multimodal = lengths.len() >= 2;
    let fused_rows = if multimodal { 1 } else { unfused_rows };
    Ok(OverheadReport {
        task: task.into(),
        fused_rows,
        unfused_rows,
        width,
        symbol_bits,
        fused_bytes: bytes_for(fused_rows, width, symbol_bits),
        unfused_bytes: bytes_for(unfused_rows, width, symbol_bits),
    })
}

/// Per-modality encoder output length under a model config. Speech uses
/// the task's maximum utterance duration.
pub fn modality_length(cfg: &ModelConfig, task: &TaskSpec, modality: Modality) -> Result<usize> {
    Ok(match modality {
        Modality::Image => ImageEncoder::feature_len(&cfg.image),
        Modality::Text => cfg.text.seq_len,
        Modality::Speech => {
            let samples = task.dataset.speech_symbols * task.dataset.symbol_samples;
            SpeechEncoder::feature_len(fbank::frame_count(&cfg.speech, samples)?)
        }
        Modality::Video => cfg.video.token_count(),
    })
}

/// Overhead report for a registered task.
pub fn overhead(cfg: &ModelConfig, task: &TaskSpec, symbol_bits: usize) -> Result<OverheadReport> {
    let lengths: Vec<usize> = task
        .modalities
        .iter()
        .map(|&m| modality_length(cfg, task, m))
        .collect::<Result<_>>()?;
    overhead_from_lengths(task.name.clone(), &lengths, cfg.compressed_width, symbol_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_arithmetic_reproduces_published_ratio() {
        // Sum of modality lengths + task row = 50, d = 32, 32-bit symbols:
        // 128 bytes fused vs 6400 bytes unfused, a 50x reduction.
        let r = overhead_from_lengths("mm", &[33, 16], 32, 32).unwrap();
        assert_eq!(r.unfused_rows, 50);
        assert_eq!(r.fused_rows, 1);
        assert_eq!(r.fused_bytes, 128);
        assert_eq!(r.unfused_bytes, 6400);
        assert_eq!(r.ratio(), (1, 50));
        assert_eq!(r.unfused_bytes / r.fused_bytes, 50);
    }

    #[test]
    fn single_modal_ratio_is_one() {
        let r = overhead_from_lengths("img", &[16], 32, 32).unwrap();
        assert_eq!(r.ratio(), (1, 1));
        assert_eq!(r.fused_rows, 17); // content rows + task row
        assert_eq!(r.fused_bytes, r.unfused_bytes);
    }

    #[test]
    fn byte_formula_is_exact_integer_arithmetic() {
        for bits in [8usize, 16, 32] {
            let r = overhead_from_lengths("t", &[5, 7], 24, bits).unwrap();
            assert_eq!(r.fused_bytes, (24 * bits / 8) as u64);
            assert_eq!(r.unfused_bytes, (13 * 24 * bits / 8) as u64);
        }
        assert!(overhead_from_lengths("t", &[5], 24, 12).is_err());
    }
}
