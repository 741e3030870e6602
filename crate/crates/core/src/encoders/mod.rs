//! Per-modality semantic encoders.
//!
//! Each encoder maps raw modality data to a feature sequence in
//! `R^{L x P}` tagged with its modality and task. A learned task-embedding
//! row can be appended to any feature sequence to disambiguate tasks that
//! share parameters.

pub mod image;
pub mod speech;
pub mod text;
pub mod video;

pub use image::ImageEncoder;
pub use speech::SpeechEncoder;
pub use text::{tokenize, TextEncoder};
pub use video::VideoEncoder;

use serde::{Deserialize, Serialize};

use crate::error::{err, Result};
use crate::params::{ParamId, Session};
use crate::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
    Speech,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Image, Modality::Text, Modality::Speech, Modality::Video];

    pub fn index(&self) -> usize {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
            Modality::Speech => 2,
            Modality::Video => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Speech => "speech",
            Modality::Video => "video",
        }
    }
}

/// An `L x P` feature sequence on the tape, tagged with provenance.
#[derive(Debug, Clone, Copy)]
pub struct SemanticFeatures {
    pub var: Var,
    pub rows: usize,
    pub modality: Modality,
    pub task_id: usize,
}

/// Append the task-embedding row for `task_id` as the final row:
/// `L` grows by exactly 1.
pub fn append_task_row(
    sess: &mut Session<'_>,
    features: SemanticFeatures,
    task_table: ParamId,
    num_tasks: usize,
) -> Result<SemanticFeatures> {
    if features.task_id >= num_tasks {
        return Err(err!(
            Lookup,
            "task id {} not registered ({} tasks)",
            features.task_id,
            num_tasks
        ));
    }
    let table = sess.p(task_table);
    let row = sess.tape.gather_rows(table, &[features.task_id])?;
    let cat = sess.tape.concat_rows(&[features.var, row])?;
    Ok(SemanticFeatures {
        var: cat,
        rows: features.rows + 1,
        modality: features.modality,
        task_id: features.task_id,
    })
}
