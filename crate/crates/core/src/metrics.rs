//! Segmentation scoring: per-class IoU, mean IoU, mean accuracy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running confusion totals over any number of scored label maps.
#[derive(Debug, Clone)]
pub struct EvalAccum {
    num_classes: usize,
    inter: Vec<u64>,
    pred: Vec<u64>,
    gt: Vec<u64>,
}

impl EvalAccum {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            inter: vec![0; num_classes],
            pred: vec![0; num_classes],
            gt: vec![0; num_classes],
        }
    }

    pub fn update(&mut self, pred: &[i64], gt: &[i64], ignore_index: i64) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::InvalidArg {
                op: "EvalAccum::update",
                msg: format!("{} predictions vs {} labels", pred.len(), gt.len()),
            });
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore_index {
                continue;
            }
            if g < 0 || g as usize >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: g,
                    classes: self.num_classes,
                });
            }
            if p < 0 || p as usize >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: p,
                    classes: self.num_classes,
                });
            }
            self.gt[g as usize] += 1;
            self.pred[p as usize] += 1;
            if p == g {
                self.inter[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let mut per_class_iou = Vec::with_capacity(self.num_classes);
        let mut iou_sum = 0.0;
        let mut iou_n = 0usize;
        let mut acc_sum = 0.0;
        let mut acc_n = 0usize;
        for c in 0..self.num_classes {
            let union = self.pred[c] + self.gt[c] - self.inter[c];
            if union > 0 {
                let iou = self.inter[c] as f64 / union as f64;
                per_class_iou.push(Some(iou));
                iou_sum += iou;
                iou_n += 1;
            } else {
                // Absent from both prediction and ground truth: excluded.
                per_class_iou.push(None);
            }
            if self.gt[c] > 0 {
                acc_sum += self.inter[c] as f64 / self.gt[c] as f64;
                acc_n += 1;
            }
        }
        EvalReport {
            per_class_iou,
            miou: if iou_n > 0 { iou_sum / iou_n as f64 } else { 0.0 },
            mean_acc: if acc_n > 0 { acc_sum / acc_n as f64 } else { 0.0 },
        }
    }
}

/// Scores of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Per-class IoU; `None` if the class appears in neither prediction nor
    /// ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub mean_acc: f64,
}

/// Channel argmax of `[K,H,W]` logits into a label map of length `H*W`.
pub fn argmax_labels(logits: &Tensor) -> Vec<i64> {
    let (k, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let pixels = h * w;
    let data = logits.data();
    let mut out = vec![0i64; pixels];
    for (p, o) in out.iter_mut().enumerate() {
        let mut best = data[p];
        let mut arg = 0usize;
        for c in 1..k {
            let v = data[c * pixels + p];
            if v > best {
                best = v;
                arg = c;
            }
        }
        *o = arg as i64;
    }
    out
}
