//! Model-wide configuration: feature widths, encoder depths, and the
//! per-modality input geometries.

use serde::{Deserialize, Serialize};

use crate::attention::AttnScale;
use crate::error::{err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ImageGeometry {
    fn default() -> Self {
        ImageGeometry { channels: 3, height: 16, width: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextGeometry {
    /// Vocabulary size, including pad id 0 and unknown id 1.
    pub vocab: usize,
    /// Fixed token count after truncation/padding (L_T).
    pub seq_len: usize,
    /// Number of segment embeddings.
    pub segments: usize,
}

impl Default for TextGeometry {
    fn default() -> Self {
        TextGeometry { vocab: 32, seq_len: 8, segments: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechGeometry {
    /// Mel filter count of the filterbank front end.
    pub filters: usize,
    /// Analysis frame length in samples.
    pub frame: usize,
    /// Hop between frames in samples.
    pub hop: usize,
    /// Nominal sample rate in Hz (fixes the mel filter placement).
    pub sample_rate: f64,
    /// Causal convolution kernel width.
    pub kernel_width: usize,
}

impl Default for SpeechGeometry {
    fn default() -> Self {
        SpeechGeometry { filters: 8, frame: 64, hop: 16, sample_rate: 8000.0, kernel_width: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoGeometry {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Tube extent along time (N_f).
    pub tube_frames: usize,
    /// Tube extent along height (h).
    pub tube_height: usize,
    /// Tube extent along width (w).
    pub tube_width: usize,
}

impl Default for VideoGeometry {
    fn default() -> Self {
        VideoGeometry {
            frames: 8,
            channels: 3,
            height: 16,
            width: 16,
            tube_frames: 2,
            tube_height: 8,
            tube_width: 8,
        }
    }
}

impl VideoGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: usize, b: usize| a >= 1 && b >= 1 && a % b == 0;
        if !ok(self.frames, self.tube_frames)
            || !ok(self.height, self.tube_height)
            || !ok(self.width, self.tube_width)
        {
            return Err(err!(
                Config,
                "tube extents {}x{}x{} must exactly divide video extents {}x{}x{}",
                self.tube_frames,
                self.tube_height,
                self.tube_width,
                self.frames,
                self.height,
                self.width
            ));
        }
        if self.channels < 1 {
            return Err(err!(Config, "video needs at least one channel"));
        }
        Ok(())
    }

    /// Tube grid counts (n_f, n_h, n_w).
    pub fn grid(&self) -> (usize, usize, usize) {
        (
            self.frames / self.tube_frames,
            self.height / self.tube_height,
            self.width / self.tube_width,
        )
    }

    /// Token count L_V = n_f * n_h * n_w.
    pub fn token_count(&self) -> usize {
        let (nf, nh, nw) = self.grid();
        nf * nh * nw
    }

    /// Flattened voxel count of one tube.
    pub fn tube_elems(&self) -> usize {
        self.tube_frames * self.channels * self.tube_height * self.tube_width
    }
}

/// Global model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width P shared by all encoders and the fusion module.
    pub width: usize,
    /// Compressed symbol width d emitted by the channel encoder.
    pub compressed_width: usize,
    /// Attention layers per modality encoder (N_enc).
    pub encoder_layers: usize,
    /// Heads per encoder attention layer.
    pub encoder_heads: usize,
    /// Attention layers in the fusion module.
    pub fusion_layers: usize,
    /// Fusion head count; `None` selects 12 when P is divisible by 12 and
    /// falls back to 4 (with a warning) otherwise.
    pub fusion_heads: Option<usize>,
    /// FFN hidden width as a multiple of P.
    pub ffn_factor: usize,
    /// Attention softmax scaling convention.
    pub attn_scale: AttnScale,
    /// Swap the token groupings of the video encoder's two blocks (the
    /// default follows factorized-video-transformer convention: the
    /// spatial block attends among tokens sharing a time index).
    pub video_swap_masks: bool,
    pub image: ImageGeometry,
    pub text: TextGeometry,
    pub speech: SpeechGeometry,
    pub video: VideoGeometry,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 64,
            compressed_width: 32,
            encoder_layers: 2,
            encoder_heads: 4,
            fusion_layers: 6,
            fusion_heads: None,
            ffn_factor: 4,
            attn_scale: AttnScale::SeqWidth,
            video_swap_masks: false,
            image: ImageGeometry::default(),
            text: TextGeometry::default(),
            speech: SpeechGeometry::default(),
            video: VideoGeometry::default(),
        }
    }
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        self.ffn_factor * self.width
    }

    /// Fusion head count after applying the divisibility fallback.
    pub fn resolved_fusion_heads(&self) -> usize {
        match self.fusion_heads {
            Some(h) => h,
            None => {
                if self.width % 12 == 0 {
                    12
                } else {
                    4
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.width % 2 != 0 {
            return Err(err!(Config, "width must be even and >= 2, got {}", self.width));
        }
        if self.compressed_width == 0 || self.compressed_width >= self.width {
            return Err(err!(
                Config,
                "compressed width {} must be in 1..{}",
                self.compressed_width,
                self.width
            ));
        }
        if self.encoder_layers == 0 || self.fusion_layers == 0 {
            return Err(err!(Config, "encoder and fusion depths must be >= 1"));
        }
        if self.encoder_heads == 0 || self.width % self.encoder_heads != 0 {
            return Err(err!(
                Config,
                "width {} not divisible by {} encoder heads",
                self.width,
                self.encoder_heads
            ));
        }
        let fh = self.resolved_fusion_heads();
        if self.fusion_heads.is_none() && self.width % 12 != 0 {
            log::warn!(
                "width {} not divisible by 12; fusion falls back to {} heads",
                self.width,
                fh
            );
        }
        if fh == 0 || self.width % fh != 0 {
            return Err(err!(
                Config,
                "width {} not divisible by {} fusion heads",
                self.width,
                fh
            ));
        }
        if self.ffn_factor == 0 {
            return Err(err!(Config, "ffn_factor must be >= 1"));
        }
        if self.image.channels < 1 || self.image.height < 4 || self.image.width < 4 {
            return Err(err!(
                Config,
                "image geometry {}x{}x{} too small for the two-stage stride-2 encoder",
                self.image.channels,
                self.image.height,
                self.image.width
            ));
        }
        if self.text.vocab < 2 {
            return Err(err!(Config, "text vocab must hold at least pad and unknown ids"));
        }
        if self.text.seq_len < 1 || self.text.segments < 1 {
            return Err(err!(Config, "text seq_len and segments must be >= 1"));
        }
        if self.speech.filters < 2 || self.speech.frame < 2 || self.speech.hop < 1 {
            return Err(err!(Config, "speech front end needs filters >= 2, frame >= 2, hop >= 1"));
        }
        if self.speech.kernel_width < 1 {
            return Err(err!(Config, "speech kernel width must be >= 1"));
        }
        if !(self.speech.sample_rate.is_finite() && self.speech.sample_rate > 0.0) {
            return Err(err!(Config, "speech sample rate must be positive"));
        }
        self.video.validate()?;
        Ok(())
    }
}

/// Stable digest of the configuration, embedded in checkpoints so that a
/// checkpoint cannot silently load into a differently-shaped model.
pub fn config_digest(cfg: &ModelConfig, task_fingerprint: &[u64]) -> u32 {
    let mut bytes = alloc::vec::Vec::new();
    let mut push = |v: u64| bytes.extend_from_slice(&v.to_le_bytes());
    push(cfg.width as u64);
    push(cfg.compressed_width as u64);
    push(cfg.encoder_layers as u64);
    push(cfg.encoder_heads as u64);
    push(cfg.fusion_layers as u64);
    push(cfg.resolved_fusion_heads() as u64);
    push(cfg.ffn_factor as u64);
    push(matches!(cfg.attn_scale, AttnScale::SeqWidth) as u64);
    push(cfg.video_swap_masks as u64);
    push(cfg.image.channels as u64);
    push(cfg.image.height as u64);
    push(cfg.image.width as u64);
    push(cfg.text.vocab as u64);
    push(cfg.text.seq_len as u64);
    push(cfg.text.segments as u64);
    push(cfg.speech.filters as u64);
    push(cfg.speech.frame as u64);
    push(cfg.speech.hop as u64);
    push(cfg.speech.sample_rate.to_bits());
    push(cfg.speech.kernel_width as u64);
    push(cfg.video.frames as u64);
    push(cfg.video.channels as u64);
    push(cfg.video.height as u64);
    push(cfg.video.width as u64);
    push(cfg.video.tube_frames as u64);
    push(cfg.video.tube_height as u64);
    push(cfg.video.tube_width as u64);
    for &f in task_fingerprint {
        push(f);
    }
    crc32fast::hash(&bytes)
}
