//! Deterministic synthetic dataset generators.
//!
//! Each kind stands in for a full-scale corpus with a construction whose
//! Bayes-optimal accuracy is known: single-modal tasks are nearly
//! noise-free, while `mm_xor` makes the label provably unpredictable from
//! either modality alone (the testbed for the fusion claims).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ImageGeometry, ModelConfig, SpeechGeometry, VideoGeometry};
use crate::encoders::Modality;
use crate::error::{err, Result};
use crate::records::{self, Record};
use crate::rng::ChaCha8Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    ImgClass,
    TextRecon,
    SpeechRec,
    VideoClass,
    MmXor,
    MmMultilabel,
}

impl DatasetKind {
    pub fn index(&self) -> usize {
        match self {
            DatasetKind::ImgClass => 0,
            DatasetKind::TextRecon => 1,
            DatasetKind::SpeechRec => 2,
            DatasetKind::VideoClass => 3,
            DatasetKind::MmXor => 4,
            DatasetKind::MmMultilabel => 5,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Ok(match i {
            0 => DatasetKind::ImgClass,
            1 => DatasetKind::TextRecon,
            2 => DatasetKind::SpeechRec,
            3 => DatasetKind::VideoClass,
            4 => DatasetKind::MmXor,
            5 => DatasetKind::MmMultilabel,
            _ => return Err(err!(Format, "unknown dataset kind index {i}")),
        })
    }

    /// Modalities present in every sample of this kind.
    pub fn modalities(&self) -> &'static [Modality] {
        match self {
            DatasetKind::ImgClass => &[Modality::Image],
            DatasetKind::TextRecon => &[Modality::Text],
            DatasetKind::SpeechRec => &[Modality::Speech],
            DatasetKind::VideoClass => &[Modality::Video],
            DatasetKind::MmXor | DatasetKind::MmMultilabel => &[Modality::Image, Modality::Text],
        }
    }

    /// Class/label count the task head must be configured with.
    pub fn classes(&self, vocab: usize) -> usize {
        match self {
            DatasetKind::ImgClass => 4,
            DatasetKind::TextRecon => vocab,
            DatasetKind::SpeechRec => 4,
            DatasetKind::VideoClass => 4,
            DatasetKind::MmXor => 2,
            DatasetKind::MmMultilabel => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub size: usize,
    pub seed: u64,
    pub image: ImageGeometry,
    /// Token count per text payload; must equal the model's L_T.
    pub text_len: usize,
    /// Token vocabulary (ids 0 and 1 reserved for pad/unknown).
    pub vocab: usize,
    pub speech: SpeechGeometry,
    /// Maximum symbols per utterance (label length U ranges 1..=this).
    pub speech_symbols: usize,
    /// Waveform samples per symbol.
    pub symbol_samples: usize,
    pub video: VideoGeometry,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::ImgClass,
            size: 64,
            seed: 0,
            image: ImageGeometry::default(),
            text_len: 8,
            vocab: 32,
            speech: SpeechGeometry::default(),
            speech_symbols: 4,
            symbol_samples: 128,
            video: VideoGeometry::default(),
        }
    }
}

impl DatasetSpec {
    pub fn default_for(kind: DatasetKind) -> Self {
        DatasetSpec { kind, ..DatasetSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 1 {
            return Err(err!(Config, "dataset size must be >= 1"));
        }
        match self.kind {
            DatasetKind::ImgClass | DatasetKind::MmXor | DatasetKind::MmMultilabel => {
                if self.image.height % 2 != 0 || self.image.width % 2 != 0 {
                    return Err(err!(
                        Config,
                        "image halves/quadrants need even extents, got {}x{}",
                        self.image.height,
                        self.image.width
                    ));
                }
            }
            DatasetKind::VideoClass => {
                self.video.validate()?;
                if self.video.height < 8 || self.video.width < 8 {
                    return Err(err!(Config, "moving-dot video needs at least 8x8 frames"));
                }
            }
            DatasetKind::SpeechRec => {
                if self.speech_symbols < 1 || self.speech_symbols > 4 {
                    return Err(err!(Config, "speech_symbols must be 1..=4"));
                }
                if self.symbol_samples < self.speech.frame {
                    return Err(err!(
                        Config,
                        "symbol_samples {} shorter than one analysis frame {}",
                        self.symbol_samples,
                        self.speech.frame
                    ));
                }
                if self.speech.filters < 4 {
                    return Err(err!(Config, "speech_rec needs at least 4 mel filters"));
                }
            }
            DatasetKind::TextRecon => {}
        }
        if self.kind.modalities().contains(&Modality::Text) && self.vocab < 6 {
            return Err(err!(Config, "text payloads need vocab >= 6 (ids 0/1 reserved)"));
        }
        Ok(())
    }

    /// Reject geometry that disagrees with the model the samples feed.
    pub fn validate_against(&self, model: &ModelConfig, used: &[Modality]) -> Result<()> {
        self.validate()?;
        for m in used {
            if !self.kind.modalities().contains(m) {
                return Err(err!(
                    Config,
                    "dataset kind {:?} has no {} payload",
                    self.kind,
                    m.name()
                ));
            }
            match m {
                Modality::Image => {
                    if self.image != model.image {
                        return Err(err!(
                            Config,
                            "dataset image geometry {:?} != model {:?}",
                            self.image,
                            model.image
                        ));
                    }
                }
                Modality::Text => {
                    if self.text_len != model.text.seq_len || self.vocab > model.text.vocab {
                        return Err(err!(
                            Config,
                            "dataset text (len {}, vocab {}) incompatible with model (L_T {}, vocab {})",
                            self.text_len,
                            self.vocab,
                            model.text.seq_len,
                            model.text.vocab
                        ));
                    }
                }
                Modality::Speech => {
                    if self.speech != model.speech {
                        return Err(err!(
                            Config,
                            "dataset speech geometry differs from the model front end"
                        ));
                    }
                }
                Modality::Video => {
                    if self.video != model.video {
                        return Err(err!(
                            Config,
                            "dataset video geometry {:?} != model {:?}",
                            self.video,
                            model.video
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Class(usize),
    Tokens(Vec<u32>),
    Bits(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Option<Tensor>,
    pub tokens: Option<Vec<u32>>,
    pub waveform: Option<Vec<f64>>,
    pub video: Option<Tensor>,
    pub label: Label,
}

impl Sample {
    fn empty(label: Label) -> Self {
        Sample { image: None, tokens: None, waveform: None, video: None, label }
    }
}

fn noise(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    crate::rng::uniform(rng, -amp, amp)
}

/// Image with one bright quadrant (0=TL, 1=TR, 2=BL, 3=BR).
fn quadrant_image(geom: &ImageGeometry, quadrant: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let (c, h, w) = (geom.channels, geom.height, geom.width);
    let (hh, hw) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for y in 0..h {
            for x in 0..w {
                let q = usize::from(x >= hw) + 2 * usize::from(y >= hh);
                let base = if q == quadrant { 0.9 } else { 0.1 };
                data.push(base + noise(rng, 0.05));
            }
        }
    }
    Tensor::new(alloc::vec![c, h, w], data).expect("quadrant image shape")
}

/// Image with the left (bit = 0) or right (bit = 1) half bright.
fn half_image(geom: &ImageGeometry, bit: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let (c, h, w) = (geom.channels, geom.height, geom.width);
    let hw = w / 2;
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for _y in 0..h {
            for x in 0..w {
                let bright = (x >= hw) == bit;
                data.push(if bright { 0.9 } else { 0.1 } + noise(rng, 0.05));
            }
        }
    }
    Tensor::new(alloc::vec![c, h, w], data).expect("half image shape")
}

/// Image whose top half (bit0) and left half (bit1) brightness are
/// independent.
fn bits_image(geom: &ImageGeometry, top: bool, left: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let (c, h, w) = (geom.channels, geom.height, geom.width);
    let (hh, hw) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.2;
                if top && y < hh {
                    v += 0.3;
                }
                if left && x < hw {
                    v += 0.3;
                }
                data.push(v + noise(rng, 0.05));
            }
        }
    }
    Tensor::new(alloc::vec![c, h, w], data).expect("bits image shape")
}

/// Text payload carrying one information token at position 0.
fn marker_tokens(text_len: usize, marker: u32) -> Vec<u32> {
    let mut t = alloc::vec![0u32; text_len];
    t[0] = marker;
    t
}

fn gen_video(spec: &DatasetSpec, direction: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let g = &spec.video;
    let (c, h, w, frames) = (g.channels, g.height, g.width, g.frames);
    let (vy, vx): (i64, i64) = match direction {
        0 => (0, 1),  // right
        1 => (0, -1), // left
        2 => (1, 0),  // down
        _ => (-1, 0), // up
    };
    let cy = h as i64 / 2 - vy * frames as i64 / 2;
    let cx = w as i64 / 2 - vx * frames as i64 / 2;
    let mut data = alloc::vec![0.0f64; frames * c * h * w];
    for f in 0..frames {
        let py = (cy + vy * f as i64).clamp(1, h as i64 - 2) as usize;
        let px = (cx + vx * f as i64).clamp(1, w as i64 - 2) as usize;
        for cc in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let on_dot = y.abs_diff(py) <= 1 && x.abs_diff(px) <= 1;
                    let v = if on_dot { 0.9 } else { 0.1 } + noise(rng, 0.05);
                    data[((f * c + cc) * h + y) * w + x] = v;
                }
            }
        }
    }
    Tensor::new(alloc::vec![frames, c, h, w], data).expect("video shape")
}

fn gen_waveform(spec: &DatasetSpec, symbols: &[u32], rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Tones sit on mel filter centers so each symbol excites one filter.
    let centers = crate::fbank::center_freqs(&spec.speech);
    let step = centers.len() / 4;
    let tone_hz: Vec<f64> = (0..4).map(|k| centers[k * step + step / 2]).collect();
    let mut wave = Vec::with_capacity(symbols.len() * spec.symbol_samples);
    for &s in symbols {
        let f = tone_hz[s as usize];
        for i in 0..spec.symbol_samples {
            let t = i as f64 / spec.speech.sample_rate;
            wave.push(
                0.8 * libm::sin(2.0 * core::f64::consts::PI * f * t) + 0.05 * crate::rng::normal(rng),
            );
        }
    }
    wave
}

/// Generate the full ordered sample list for a spec. Pure function of the
/// spec: identical specs yield bit-identical datasets.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = crate::rng::rng_from(spec.seed, &[0x5EED_DA7A, spec.kind.index() as u64]);
    let mut out = Vec::with_capacity(spec.size);
    for _ in 0..spec.size {
        let sample = match spec.kind {
            DatasetKind::ImgClass => {
                let label = rng.random_range(0..4usize);
                let mut s = Sample::empty(Label::Class(label));
                s.image = Some(quadrant_image(&spec.image, label, &mut rng));
                s
            }
            DatasetKind::TextRecon => {
                let tokens: Vec<u32> = (0..spec.text_len)
                    .map(|_| rng.random_range(2..spec.vocab as u32))
                    .collect();
                let mut s = Sample::empty(Label::Tokens(tokens.clone()));
                s.tokens = Some(tokens);
                s
            }
            DatasetKind::SpeechRec => {
                let u = rng.random_range(1..=spec.speech_symbols);
                let symbols: Vec<u32> = (0..u).map(|_| rng.random_range(0..4u32)).collect();
                let mut s = Sample::empty(Label::Tokens(symbols.clone()));
                s.waveform = Some(gen_waveform(spec, &symbols, &mut rng));
                s
            }
            DatasetKind::VideoClass => {
                let label = rng.random_range(0..4usize);
                let mut s = Sample::empty(Label::Class(label));
                s.video = Some(gen_video(spec, label, &mut rng));
                s
            }
            DatasetKind::MmXor => {
                let a = rng.random_range(0..2u8) == 1;
                let b = rng.random_range(0..2u8) == 1;
                let mut s = Sample::empty(Label::Class(usize::from(a ^ b)));
                s.image = Some(half_image(&spec.image, a, &mut rng));
                s.tokens = Some(marker_tokens(spec.text_len, if b { 3 } else { 2 }));
                s
            }
            DatasetKind::MmMultilabel => {
                let img0 = rng.random_range(0..2u8) == 1;
                let img1 = rng.random_range(0..2u8) == 1;
                let txt = rng.random_range(0..2u8) == 1;
                let bits =
                    alloc::vec![u8::from(img0), u8::from(img1), u8::from(txt), u8::from(img0 && txt)];
                let mut s = Sample::empty(Label::Bits(bits));
                s.image = Some(bits_image(&spec.image, img0, img1, &mut rng));
                s.tokens = Some(marker_tokens(spec.text_len, if txt { 3 } else { 2 }));
                s
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Deterministic shuffle-split into disjoint, exhaustive train/eval pools.
pub fn split(
    samples: &[Sample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(err!(Config, "train fraction must be in (0, 1), got {train_fraction}"));
    }
    let n = samples.len();
    let n_train = libm::round(n as f64 * train_fraction) as usize;
    if n_train == 0 || n_train == n {
        return Err(err!(
            Config,
            "split of {n} samples at {train_fraction} leaves one side empty"
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng_from(seed, &[0x5917]);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let train = idx[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let eval = idx[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, eval))
}

/// Consecutive non-overlapping batches; the final partial batch is kept.
pub fn batch(pool: &[Sample], batch_size: usize) -> Result<Vec<Vec<Sample>>> {
    if batch_size < 1 {
        return Err(err!(Contract, "batch size must be >= 1"));
    }
    Ok(pool.chunks(batch_size).map(|c| c.to_vec()).collect())
}

// ── binary container ───────────────────────────────────────────────────

fn tensor_record(name: String, t: &Tensor) -> Result<Record> {
    Record::new(name, t.shape().to_vec(), t.data().iter().map(|&v| v as f32).collect())
}

/// Serialize samples with the shared record framing
/// (names `sample/<i>/<field>`).
pub fn export_container(spec: &DatasetSpec, samples: &[Sample]) -> Result<Vec<u8>> {
    let mut recs = Vec::new();
    recs.push(Record::new(
        "__meta",
        alloc::vec![2],
        alloc::vec![spec.kind.index() as f32, samples.len() as f32],
    )?);
    for (i, s) in samples.iter().enumerate() {
        if let Some(img) = &s.image {
            recs.push(tensor_record(format!("sample/{i}/image"), img)?);
        }
        if let Some(tokens) = &s.tokens {
            recs.push(Record::new(
                format!("sample/{i}/tokens"),
                alloc::vec![tokens.len()],
                tokens.iter().map(|&t| t as f32).collect(),
            )?);
        }
        if let Some(w) = &s.waveform {
            recs.push(Record::new(
                format!("sample/{i}/waveform"),
                alloc::vec![w.len()],
                w.iter().map(|&v| v as f32).collect(),
            )?);
        }
        if let Some(v) = &s.video {
            recs.push(tensor_record(format!("sample/{i}/video"), v)?);
        }
        match &s.label {
            Label::Class(c) => recs.push(Record::new(
                format!("sample/{i}/label_class"),
                alloc::vec![1],
                alloc::vec![*c as f32],
            )?),
            Label::Tokens(t) => recs.push(Record::new(
                format!("sample/{i}/label_tokens"),
                alloc::vec![t.len()],
                t.iter().map(|&x| x as f32).collect(),
            )?),
            Label::Bits(b) => recs.push(Record::new(
                format!("sample/{i}/label_bits"),
                alloc::vec![b.len()],
                b.iter().map(|&x| x as f32).collect(),
            )?),
        }
    }
    Ok(records::write_container(records::DATASET_MAGIC, 1, &recs))
}

/// Inverse of [`export_container`] (payloads round through f32).
pub fn import_container(bytes: &[u8]) -> Result<(DatasetKind, Vec<Sample>)> {
    let recs = records::read_container(records::DATASET_MAGIC, 1, bytes)?;
    let meta = recs
        .iter()
        .find(|r| r.name == "__meta")
        .ok_or_else(|| err!(Format, "dataset container missing __meta record"))?;
    if meta.payload.len() != 2 {
        return Err(err!(Format, "malformed __meta record"));
    }
    let kind = DatasetKind::from_index(meta.payload[0] as usize)?;
    let count = meta.payload[1] as usize;
    let mut samples: Vec<Sample> =
        (0..count).map(|_| Sample::empty(Label::Class(0))).collect();
    for r in &recs {
        if r.name == "__meta" {
            continue;
        }
        let mut parts = r.name.split('/');
        let (Some("sample"), Some(idx), Some(field), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err!(Format, "unexpected record name {:?}", r.name));
        };
        let i: usize =
            idx.parse().map_err(|_| err!(Format, "bad sample index in {:?}", r.name))?;
        if i >= count {
            return Err(err!(Format, "sample index {i} out of range ({count} samples)"));
        }
        let as_f64 = || r.payload.iter().map(|&v| v as f64).collect::<Vec<f64>>();
        let as_u32 = || r.payload.iter().map(|&v| v as u32).collect::<Vec<u32>>();
        match field {
            "image" => samples[i].image = Some(Tensor::new(r.extents.clone(), as_f64())?),
            "video" => samples[i].video = Some(Tensor::new(r.extents.clone(), as_f64())?),
            "waveform" => samples[i].waveform = Some(as_f64()),
            "tokens" => samples[i].tokens = Some(as_u32()),
            "label_class" => samples[i].label = Label::Class(r.payload[0] as usize),
            "label_tokens" => samples[i].label = Label::Tokens(as_u32()),
            "label_bits" => {
                samples[i].label = Label::Bits(r.payload.iter().map(|&v| v as u8).collect())
            }
            other => return Err(err!(Format, "unknown sample field {other:?}")),
        }
    }
    Ok((kind, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn img_class_brightest_quadrant_matches_label() {
        let spec = DatasetSpec { size: 32, seed: 3, ..DatasetSpec::default_for(DatasetKind::ImgClass) };
        for s in gen_dataset(&spec).unwrap() {
            let Label::Class(label) = s.label else { panic!("wrong label kind") };
            let img = s.image.unwrap();
            let (h, w) = (spec.image.height, spec.image.width);
            let mut sums = [0.0f64; 4];
            for cc in 0..spec.image.channels {
                for y in 0..h {
                    for x in 0..w {
                        let q = usize::from(x >= w / 2) + 2 * usize::from(y >= h / 2);
                        sums[q] += img.data()[(cc * h + y) * w + x];
                    }
                }
            }
            let brightest =
                sums.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(brightest, label);
        }
    }

    #[test]
    fn mm_xor_truth_table() {
        let spec = DatasetSpec { size: 200, seed: 5, ..DatasetSpec::default_for(DatasetKind::MmXor) };
        for s in gen_dataset(&spec).unwrap() {
            let Label::Class(label) = s.label else { panic!() };
            let img = s.image.unwrap();
            // Recover bit a: right half brighter than left?
            let (h, w) = (spec.image.height, spec.image.width);
            let mut left = 0.0;
            let mut right = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let v = img.data()[y * w + x];
                    if x < w / 2 {
                        left += v;
                    } else {
                        right += v;
                    }
                }
            }
            let a = right > left;
            let b = s.tokens.unwrap()[0] == 3;
            assert_eq!(label, usize::from(a ^ b));
        }
    }

    #[test]
    fn same_spec_twice_is_bit_identical() {
        for kind in [
            DatasetKind::ImgClass,
            DatasetKind::TextRecon,
            DatasetKind::SpeechRec,
            DatasetKind::VideoClass,
            DatasetKind::MmXor,
            DatasetKind::MmMultilabel,
        ] {
            let spec = DatasetSpec { size: 6, seed: 11, ..DatasetSpec::default_for(kind) };
            let a = gen_dataset(&spec).unwrap();
            let b = gen_dataset(&spec).unwrap();
            assert_eq!(a, b, "kind {kind:?} not deterministic");
        }
    }

    #[test]
    fn split_fraction_and_multiset_union() {
        let spec = DatasetSpec { size: 100, seed: 1, ..DatasetSpec::default_for(DatasetKind::TextRecon) };
        let data = gen_dataset(&spec).unwrap();
        let (train, eval) = split(&data, 0.8, 7).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(eval.len(), 20);
        // Union equals the dataset as a multiset (compare sorted token
        // payloads).
        let key = |s: &Sample| s.tokens.clone().unwrap();
        let mut all: alloc::vec::Vec<_> = train.iter().chain(&eval).map(key).collect();
        let mut orig: alloc::vec::Vec<_> = data.iter().map(key).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let spec = DatasetSpec { size: 4, seed: 1, ..DatasetSpec::default_for(DatasetKind::TextRecon) };
        let data = gen_dataset(&spec).unwrap();
        assert!(split(&data, 0.01, 7).is_err());
        assert!(split(&data, 0.999, 7).is_err());
        assert!(split(&data, 1.5, 7).is_err());
    }

    #[test]
    fn different_split_seeds_differ() {
        let spec = DatasetSpec { size: 40, seed: 1, ..DatasetSpec::default_for(DatasetKind::TextRecon) };
        let data = gen_dataset(&spec).unwrap();
        let (a, _) = split(&data, 0.5, 1).unwrap();
        let (b, _) = split(&data, 0.5, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn batches_chunk_in_order() {
        let spec = DatasetSpec { size: 10, seed: 2, ..DatasetSpec::default_for(DatasetKind::TextRecon) };
        let pool = gen_dataset(&spec).unwrap();
        let batches = batch(&pool, 4).unwrap();
        assert_eq!(batches.iter().map(|b| b.len()).collect::<alloc::vec::Vec<_>>(), [4, 4, 2]);
        let flat: alloc::vec::Vec<Sample> = batches.concat();
        assert_eq!(flat, pool);
        assert_eq!(batch(&pool, 100).unwrap().len(), 1);
    }

    #[test]
    fn label_distribution_is_balanced() {
        let spec =
            DatasetSpec { size: 2000, seed: 9, ..DatasetSpec::default_for(DatasetKind::ImgClass) };
        let mut counts = [0usize; 4];
        for s in gen_dataset(&spec).unwrap() {
            let Label::Class(c) = s.label else { panic!() };
            counts[c] += 1;
        }
        for c in counts {
            let frac = c as f64 / 2000.0;
            assert!((frac - 0.25).abs() < 0.05, "class fraction {frac}");
        }
    }

    #[test]
    fn mm_xor_label_is_independent_of_each_modality() {
        let spec = DatasetSpec { size: 2000, seed: 13, ..DatasetSpec::default_for(DatasetKind::MmXor) };
        let data = gen_dataset(&spec).unwrap();
        let mut label_given_b = [[0usize; 2]; 2];
        for s in &data {
            let Label::Class(l) = s.label else { panic!() };
            let b = usize::from(s.tokens.as_ref().unwrap()[0] == 3);
            label_given_b[b][l] += 1;
        }
        for b in 0..2 {
            let total = (label_given_b[b][0] + label_given_b[b][1]) as f64;
            let p1 = label_given_b[b][1] as f64 / total;
            assert!((p1 - 0.5).abs() < 0.06, "P(label=1 | text bit {b}) = {p1}");
        }
    }

    #[test]
    fn container_roundtrip_preserves_structure() {
        for kind in [DatasetKind::SpeechRec, DatasetKind::MmMultilabel, DatasetKind::VideoClass] {
            let spec = DatasetSpec { size: 3, seed: 21, ..DatasetSpec::default_for(kind) };
            let data = gen_dataset(&spec).unwrap();
            let bytes = export_container(&spec, &data).unwrap();
            let (k2, back) = import_container(&bytes).unwrap();
            assert_eq!(k2, kind);
            assert_eq!(back.len(), data.len());
            for (a, b) in data.iter().zip(&back) {
                assert_eq!(a.label, b.label);
                if let (Some(x), Some(y)) = (&a.waveform, &b.waveform) {
                    for (u, v) in x.iter().zip(y) {
                        assert!((u - v).abs() < 1e-6); // f32 rounding
                    }
                }
                assert_eq!(a.tokens, b.tokens);
            }
        }
    }

    #[test]
    fn speech_waveforms_are_ctc_feasible() {
        let spec = DatasetSpec { size: 50, seed: 4, ..DatasetSpec::default_for(DatasetKind::SpeechRec) };
        for s in gen_dataset(&spec).unwrap() {
            let Label::Tokens(sym) = &s.label else { panic!() };
            let frames =
                crate::fbank::frame_count(&spec.speech, s.waveform.as_ref().unwrap().len())
                    .unwrap();
            let rows = crate::encoders::SpeechEncoder::feature_len(frames);
            let repeats = sym.windows(2).filter(|w| w[0] == w[1]).count();
            assert!(rows >= sym.len() + repeats, "rows {rows} for label {sym:?}");
        }
    }

    // Property: generators are pure functions of the spec, and every
    // payload shape matches the declared geometry.
    #[test]
    fn payload_shapes_match_geometry() {
        let mut rng = crate::rng::seeded(31);
        for _ in 0..10 {
            let seed = rng.random_range(0..1_000_000u64);
            let spec =
                DatasetSpec { size: 4, seed, ..DatasetSpec::default_for(DatasetKind::MmMultilabel) };
            for s in gen_dataset(&spec).unwrap() {
                assert_eq!(
                    s.image.as_ref().unwrap().shape(),
                    &[spec.image.channels, spec.image.height, spec.image.width]
                );
                assert_eq!(s.tokens.as_ref().unwrap().len(), spec.text_len);
                let Label::Bits(b) = &s.label else { panic!() };
                assert_eq!(b.len(), 4);
                assert_eq!(b[3], b[0] & b[2]);
            }
        }
    }
}
