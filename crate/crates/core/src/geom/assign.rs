use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{iou, iou_matrix, BoundingBox, ClassId, GeomError};
use crate::exec::Exec;

pub const DEFAULT_RPN_FG_IOU: f64 = 0.7;
pub const DEFAULT_RPN_BG_IOU: f64 = 0.3;
pub const PROPOSAL_FG_IOU: f64 = 0.5;
pub const PROPOSAL_BG_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentLabel {
    /// Matched to the ground truth at this index.
    Foreground(usize),
    Background,
    Ignore,
}

impl AssignmentLabel {
    pub fn is_foreground(&self) -> bool {
        matches!(self, AssignmentLabel::Foreground(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalLabel {
    Foreground { gt: usize, class_id: ClassId },
    Background,
    Ignore,
}

/// First index of the maximum; `None` for an empty row.
fn argmax(row: &[f64]) -> Option<(usize, f64)> {
    row.iter()
        .copied()
        .enumerate()
        .fold(None, |best, (j, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((j, v)),
        })
}

pub fn assign_rpn_labels(
    anchors: &[BoundingBox],
    gts: &[BoundingBox],
    fg_iou: f64,
    bg_iou: f64,
) -> Result<Vec<AssignmentLabel>, GeomError> {
    assign_rpn_labels_with(Exec::default(), anchors, gts, fg_iou, bg_iou)
}

/// Labels anchors for objectness training.
///
/// Max-IoU at or above `fg_iou` gives foreground, below `bg_iou` background,
/// anything between is ignored. A ground truth left without a foreground
/// anchor then claims its highest-IoU anchor, skipping anchors that are the
/// sole foreground of another ground truth.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN thresholds are rejected too
pub fn assign_rpn_labels_with(
    exec: Exec,
    anchors: &[BoundingBox],
    gts: &[BoundingBox],
    fg_iou: f64,
    bg_iou: f64,
) -> Result<Vec<AssignmentLabel>, GeomError> {
    if !(fg_iou > bg_iou) {
        return Err(GeomError::InvalidThreshold(format!(
            "foreground IoU {fg_iou} must exceed background IoU {bg_iou}"
        )));
    }
    if gts.is_empty() {
        return Ok(vec![AssignmentLabel::Background; anchors.len()]);
    }
    let overlaps = iou_matrix(exec, anchors, gts);
    let mut labels: Vec<AssignmentLabel> = overlaps
        .iter()
        .map(|row| match argmax(row) {
            Some((j, v)) if v >= fg_iou => AssignmentLabel::Foreground(j),
            Some((_, v)) if v < bg_iou => AssignmentLabel::Background,
            _ => AssignmentLabel::Ignore,
        })
        .collect();

    let mut fg_count = vec![0usize; gts.len()];
    for l in &labels {
        if let AssignmentLabel::Foreground(j) = l {
            fg_count[*j] += 1;
        }
    }
    for j in 0..gts.len() {
        if fg_count[j] > 0 {
            continue;
        }
        let mut candidates: Vec<usize> = (0..anchors.len()).collect();
        candidates.sort_by(|&a, &b| overlaps[b][j].total_cmp(&overlaps[a][j]).then(a.cmp(&b)));
        for i in candidates {
            match labels[i] {
                AssignmentLabel::Foreground(k) if fg_count[k] <= 1 => continue,
                AssignmentLabel::Foreground(k) => fg_count[k] -= 1,
                _ => {}
            }
            labels[i] = AssignmentLabel::Foreground(j);
            fg_count[j] += 1;
            break;
        }
    }
    Ok(labels)
}

/// Draws a balanced training minibatch of anchor indices.
///
/// At most `floor(fg_fraction * batch)` foreground indices are taken, and
/// background fills the remainder. Ignored anchors are never sampled. The
/// result is sorted ascending and depends only on the inputs and `rng_seed`.
pub fn sample_minibatch(
    labels: &[AssignmentLabel],
    batch: usize,
    fg_fraction: f64,
    rng_seed: u64,
) -> Result<Vec<usize>, GeomError> {
    if batch == 0 {
        return Err(GeomError::InvalidThreshold("batch must be positive".into()));
    }
    if !(fg_fraction > 0.0 && fg_fraction < 1.0) {
        return Err(GeomError::InvalidThreshold(format!(
            "foreground fraction {fg_fraction} must lie in (0, 1)"
        )));
    }
    let fg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].is_foreground())
        .collect();
    let bg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == AssignmentLabel::Background)
        .collect();

    let fg_cap = (fg_fraction * batch as f64).floor() as usize;
    let n_fg = fg_cap.min(fg.len());
    let n_bg = (batch - n_fg).min(bg.len());

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked: Vec<usize> = sample(&mut rng, fg.len(), n_fg)
        .into_iter()
        .map(|i| fg[i])
        .chain(sample(&mut rng, bg.len(), n_bg).into_iter().map(|i| bg[i]))
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Labels second-stage proposals against class-tagged ground truths.
pub fn assign_proposal_labels(
    proposals: &[BoundingBox],
    gts: &[(BoundingBox, ClassId)],
) -> Vec<ProposalLabel> {
    proposals
        .iter()
        .map(|p| {
            let row: Vec<f64> = gts.iter().map(|(g, _)| iou(p, g)).collect();
            match argmax(&row) {
                Some((gt, v)) if v >= PROPOSAL_FG_IOU => ProposalLabel::Foreground {
                    gt,
                    class_id: gts[gt].1,
                },
                Some((_, v)) if v >= PROPOSAL_BG_IOU => ProposalLabel::Background,
                _ => ProposalLabel::Ignore,
            }
        })
        .collect()
}
