use crate::error::{Error, Result};
use crate::geometry::IGNORE_LABEL;

/// `C × C` counts, rows indexed by ground truth and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds a matrix from explicit rows (ground truth major).
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix rows must form a square"));
        }
        Ok(Self {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies `cm[gt[i]][pred[i]]`, skipping ignored ground truth.
    ///
    /// Validates the whole batch before touching the counts, so a failed
    /// update leaves the matrix unchanged.
    pub fn update(&mut self, pred: &[i32], gt: &[i32]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
        }
        let c = self.num_classes as i64;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == IGNORE_LABEL {
                continue;
            }
            if !(0..c).contains(&(g as i64)) || !(0..c).contains(&(p as i64)) {
                return Err(Error::param(format!(
                    "point {i}: label pair (gt {g}, pred {p}) outside [0, {c})"
                )));
            }
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g != IGNORE_LABEL {
                self.counts[g as usize * self.num_classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Adds another tracker's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    pub overall_accuracy: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}

/// Overall accuracy, per-class IoU and mIoU. Classes that appear neither in
/// the ground truth nor in the predictions do not enter the mean.
pub fn segmentation_scores(cm: &ConfusionMatrix) -> Result<SegmentationScores> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::param("confusion matrix is empty"));
    }
    let c = cm.num_classes();
    let trace: u64 = (0..c).map(|i| cm.get(i, i)).sum();
    let per_class_iou: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
            let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
            let union = row + col - cm.get(k, k);
            (union > 0).then(|| cm.get(k, k) as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    Ok(SegmentationScores {
        overall_accuracy: trace as f64 / total as f64,
        mean_iou: present.iter().sum::<f64>() / present.len() as f64,
        per_class_iou,
    })
}
