//! Task evaluation metrics: accuracy, word accuracy, BLEU, F1, PSNR, and
//! greedy CTC decoding. All metrics are pure functions, deterministic and
//! order-independent over their sample sets.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{err, Result};

/// Exact-match fraction over paired predictions and references.
pub fn accuracy(preds: &[usize], refs: &[usize]) -> Result<f64> {
    if preds.len() != refs.len() {
        return Err(err!(Contract, "{} predictions vs {} references", preds.len(), refs.len()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(refs).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Word-level Levenshtein distance.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = alloc::vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Mean over samples of `1 - edit_distance / |ref|`, clamped to `[0, 1]`.
/// Samples with an empty reference are skipped with a warning.
pub fn word_accuracy(pairs: &[(Vec<u32>, Vec<u32>)]) -> f64 {
    let mut total = 0.0;
    let mut counted = 0usize;
    for (hyp, reference) in pairs {
        if reference.is_empty() {
            log::warn!("word_accuracy: skipping sample with empty reference");
            continue;
        }
        let d = edit_distance(hyp, reference) as f64;
        let acc = (1.0 - d / reference.len() as f64).clamp(0.0, 1.0);
        total += acc;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

fn ngram_counts(tokens: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
    let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU: geometric mean of modified n-gram precisions for
/// n = 1..4 with uniform weights, times the brevity penalty
/// `exp(1 - |ref| / |cand|)` when the candidate is shorter. No smoothing:
/// a zero match at any order gives 0.
pub fn bleu(candidate: &[u32], reference: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(err!(Contract, "BLEU reference must be non-empty"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4usize {
        let cand_counts = ngram_counts(candidate, n);
        let total: usize = cand_counts.values().sum();
        if total == 0 {
            return Ok(0.0); // candidate too short for this order
        }
        let ref_counts = ngram_counts(reference, n);
        let mut matched = 0usize;
        for (gram, &c) in &cand_counts {
            let r = ref_counts.get(gram).copied().unwrap_or(0);
            matched += c.min(r);
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += 0.25 * libm::log(matched as f64 / total as f64);
    }
    let bp = if candidate.len() < reference.len() {
        libm::exp(1.0 - reference.len() as f64 / candidate.len() as f64)
    } else {
        1.0
    };
    Ok(bp * libm::exp(log_sum))
}

/// Mean sentence BLEU over a set of pairs.
pub fn bleu_mean(pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (cand, reference) in pairs {
        total += bleu(cand, reference)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Micro-averaged F1 over all (sample, label) cells.
pub fn micro_f1(preds: &[Vec<bool>], targets: &[Vec<bool>]) -> Result<f64> {
    let (mut tp, mut fp, mut fne) = (0u64, 0u64, 0u64);
    if preds.len() != targets.len() {
        return Err(err!(Contract, "{} predictions vs {} targets", preds.len(), targets.len()));
    }
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(err!(Contract, "label width mismatch: {} vs {}", p.len(), t.len()));
        }
        for (&pi, &ti) in p.iter().zip(t) {
            match (pi, ti) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Macro-averaged F1 over label columns (available behind this separate
/// entry point; the default reporting uses micro).
pub fn macro_f1(preds: &[Vec<bool>], targets: &[Vec<bool>]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(err!(Contract, "{} predictions vs {} targets", preds.len(), targets.len()));
    }
    let Some(width) = targets.first().map(|t| t.len()) else { return Ok(0.0) };
    let mut sum = 0.0;
    for j in 0..width {
        let (mut tp, mut fp, mut fne) = (0u64, 0u64, 0u64);
        for (p, t) in preds.iter().zip(targets) {
            match (p[j], t[j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fne;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(sum / width as f64)
}

/// Peak signal-to-noise ratio in dB:
/// `20 log10(max_val) - 10 log10(MSE)`; `+inf` when MSE is zero.
pub fn psnr(original: &[f64], reconstruction: &[f64], max_val: f64) -> Result<f64> {
    if original.len() != reconstruction.len() || original.is_empty() {
        return Err(err!(
            Contract,
            "psnr over mismatched lengths {} vs {}",
            original.len(),
            reconstruction.len()
        ));
    }
    if !(max_val > 0.0) {
        return Err(err!(Contract, "psnr max_val must be positive"));
    }
    let mse: f64 = original
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / original.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * libm::log10(max_val) - 10.0 * libm::log10(mse))
}

/// Value cap applied to `+inf` PSNR when emitting CSV.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Greedy CTC decoding over per-frame logits `[T, V+1]` (blank = last
/// class): argmax per row, collapse repeats, drop blanks.
pub fn ctc_greedy_decode(logits: &[f64], frames: usize, classes: usize) -> Vec<usize> {
    debug_assert_eq!(logits.len(), frames * classes);
    let blank = classes - 1;
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..frames {
        let row = &logits[t * classes..(t + 1) * classes];
        let arg = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(blank);
        if arg != blank && arg != prev {
            out.push(arg);
        }
        prev = arg;
    }
    out
}
