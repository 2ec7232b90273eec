//! Detection similarity: box overlap times class-score cosine times proposal
//! objectness, and the best match over a detector's proposals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, iou};
use crate::types::DetectionVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Multiply by the proposal's objectness. Turn off for detectors without
    /// an objectness head.
    pub use_objectness: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { use_objectness: true }
    }
}

/// Similarity of a proposal to a target, in `[0, 1]`. The target's own
/// objectness is taken to be 1.
pub fn similarity(target: &DetectionVector, proposal: &DetectionVector, cfg: SimilarityConfig) -> Result<f64> {
    if target.class_count() != proposal.class_count() {
        return Err(Error::ClassCountMismatch { expected: target.class_count(), actual: proposal.class_count() });
    }
    let s_loc = iou(&target.bbox, &proposal.bbox);
    if s_loc == 0.0 {
        return Ok(0.0);
    }
    let s_cls = cosine_similarity(&target.scores, &proposal.scores)?;
    let s_obj = if cfg.use_objectness { proposal.objectness } else { 1.0 };
    Ok(s_loc * s_cls * s_obj)
}

/// Best similarity over all proposals; 0 for an empty list.
pub fn max_similarity(target: &DetectionVector, proposals: &[DetectionVector], cfg: SimilarityConfig) -> Result<f64> {
    let mut best = 0.0f64;
    for p in proposals {
        best = best.max(similarity(target, p, cfg)?);
    }
    Ok(best)
}

/// `w[t][i]` = best similarity of target `t` among the proposals for mask `i`.
pub fn pairwise_weights(
    targets: &[DetectionVector],
    proposal_sets: &[Vec<DetectionVector>],
    cfg: SimilarityConfig,
) -> Result<Vec<Vec<f64>>> {
    targets.iter().map(|t| proposal_sets.iter().map(|ps| max_similarity(t, ps, cfg)).collect()).collect()
}
