//! Log-mel filterbank (FBank) front end for the speech encoder.
//!
//! Frames the waveform, applies a Hann window, takes magnitude spectra via
//! a direct DFT (frames are tiny at this scale), and accumulates triangular
//! mel filter energies in log domain.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::SpeechGeometry;
use crate::error::{err, Result};
use crate::tensor::Tensor;

/// Floor applied inside the log so silence maps to a finite constant.
pub const ENERGY_FLOOR: f64 = 1e-10;

const PI: f64 = core::f64::consts::PI;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Triangular mel filter weights over the `frame/2 + 1` DFT bins.
fn mel_filters(geom: &SpeechGeometry) -> Vec<Vec<f64>> {
    let bins = geom.frame / 2 + 1;
    let nyquist = geom.sample_rate / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // filters + 2 edge points, equally spaced in mel.
    let edges: Vec<f64> = (0..geom.filters + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (geom.filters + 1) as f64))
        .collect();
    let bin_hz = geom.sample_rate / geom.frame as f64;
    let mut filters = Vec::with_capacity(geom.filters);
    for f in 0..geom.filters {
        let (lo, center, hi) = (edges[f], edges[f + 1], edges[f + 2]);
        let mut weights = vec![0.0; bins];
        for (b, w) in weights.iter_mut().enumerate() {
            let freq = b as f64 * bin_hz;
            if freq > lo && freq < center {
                *w = (freq - lo) / (center - lo);
            } else if freq >= center && freq < hi {
                *w = (hi - freq) / (hi - center);
            }
        }
        filters.push(weights);
    }
    filters
}

/// Center frequencies of the mel filters, in Hz. The synthetic speech
/// generator places its tones here so each symbol excites one filter.
pub fn center_freqs(geom: &SpeechGeometry) -> Vec<f64> {
    let mel_max = hz_to_mel(geom.sample_rate / 2.0);
    (1..=geom.filters)
        .map(|i| mel_to_hz(mel_max * i as f64 / (geom.filters + 1) as f64))
        .collect()
}

/// Number of frames produced for a waveform of `samples` samples.
pub fn frame_count(geom: &SpeechGeometry, samples: usize) -> Result<usize> {
    if samples < geom.frame {
        return Err(err!(
            Degenerate,
            "waveform of {} samples shorter than one frame ({})",
            samples,
            geom.frame
        ));
    }
    Ok((samples - geom.frame) / geom.hop + 1)
}

/// Log mel-filterbank energies: `[T, filters]`.
pub fn compute_fbank(waveform: &[f64], geom: &SpeechGeometry) -> Result<Tensor> {
    let t_frames = frame_count(geom, waveform.len())?;
    let filters = mel_filters(geom);
    let bins = geom.frame / 2 + 1;
    let window: Vec<f64> = (0..geom.frame)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / geom.frame as f64))
        .collect();

    let mut out = vec![0.0; t_frames * geom.filters];
    let mut power = vec![0.0; bins];
    for t in 0..t_frames {
        let frame = &waveform[t * geom.hop..t * geom.hop + geom.frame];
        for (b, p) in power.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, (&x, &w)) in frame.iter().zip(&window).enumerate() {
                let phase = 2.0 * PI * b as f64 * i as f64 / geom.frame as f64;
                let v = x * w;
                re += v * libm::cos(phase);
                im -= v * libm::sin(phase);
            }
            *p = re * re + im * im;
        }
        for (f, filter) in filters.iter().enumerate() {
            let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            out[t * geom.filters + f] = libm::log(energy.max(ENERGY_FLOOR));
        }
    }
    Tensor::new(vec![t_frames, geom.filters], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> SpeechGeometry {
        SpeechGeometry::default()
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let g = geom();
        let fb = compute_fbank(&vec![0.0; 256], &g).unwrap();
        let floor = libm::log(ENERGY_FLOOR);
        for v in fb.data() {
            assert_eq!(*v, floor);
        }
    }

    #[test]
    fn single_frame_when_waveform_equals_frame() {
        let g = geom();
        let fb = compute_fbank(&vec![0.1; g.frame], &g).unwrap();
        assert_eq!(fb.shape(), &[1, g.filters]);
    }

    #[test]
    fn too_short_waveform_is_degenerate() {
        let g = geom();
        assert!(matches!(
            compute_fbank(&vec![0.0; g.frame - 1], &g),
            Err(crate::Error::Degenerate(_))
        ));
    }

    #[test]
    fn frame_count_arithmetic() {
        let g = geom();
        // (256 - 64) / 16 + 1 = 13
        assert_eq!(frame_count(&g, 256).unwrap(), 13);
    }

    #[test]
    fn tone_at_center_frequency_peaks_its_filter() {
        let g = geom();
        for (f, hz) in center_freqs(&g).iter().enumerate() {
            let wave: alloc::vec::Vec<f64> = (0..g.frame)
                .map(|i| libm::sin(2.0 * PI * hz * i as f64 / g.sample_rate))
                .collect();
            let fb = compute_fbank(&wave, &g).unwrap();
            let row = &fb.data()[..g.filters];
            let max_idx = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(max_idx, f, "tone at {hz:.1} Hz peaked filter {max_idx}, want {f}");
        }
    }
}
