use cvf_tensor::Element;

use super::boxes::{decode_box, rotated_iou_bev, Box3D};
use super::sparse::{SparseHeadOutput, BOX_CODE};
use crate::error::{Error, Result};

/// Candidates entering NMS after score filtering, highest scores first.
const PRE_NMS_LIMIT: usize = 4096;

/// Greedy rotated NMS. Boxes are visited by descending score (ties by
/// index); a box is dropped when its BEV IoU with an already kept box of the
/// same class reaches `iou_thresh`. Returns kept indices in visit order.
pub fn nms(boxes: &[Box3D], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| boxes[k].class_id == boxes[i].class_id && rotated_iou_bev(&boxes[k], &boxes[i]) >= iou_thresh);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scores each anchor by its own class logit, decodes those above
/// `score_thresh`, and runs [`nms`]. `anchors` holds the `V·A` anchors of the
/// valid cells in output row order.
pub fn decode_and_nms<T: Element>(
    out: &SparseHeadOutput<T>,
    anchors: &[Box3D],
    score_thresh: f64,
    iou_thresh: f64,
    max_keep: usize,
) -> Result<Vec<Box3D>> {
    for (name, v) in [("score", score_thresh), ("IoU", iou_thresh)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::config(format!("{name} threshold {v} is outside [0, 1]")));
        }
    }
    let shape = out.cls_logits.shape();
    let (v, a, k) = (shape[0], shape[1], shape[2]);
    if anchors.len() != v * a {
        return Err(Error::Contract(format!(
            "{} anchors for {v} cells with {a} anchors each",
            anchors.len()
        )));
    }
    let cls = out.cls_logits.data();
    let mut candidates: Vec<(f64, usize)> = anchors
        .iter()
        .enumerate()
        .map(|(i, anchor)| (sigmoid(cls[i * k + anchor.class_id].to_f64_lossy()), i))
        .filter(|&(s, _)| s >= score_thresh)
        .collect();
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    candidates.truncate(PRE_NMS_LIMIT);

    let reg = out.reg.data();
    let dir = out.dir_logits.data();
    let mut boxes = Vec::with_capacity(candidates.len());
    for &(score, i) in &candidates {
        let mut r = [0.0; BOX_CODE];
        for (c, slot) in r.iter_mut().enumerate() {
            *slot = reg[i * BOX_CODE + c].to_f64_lossy();
        }
        let backwards = dir[i * 2 + 1] > dir[i * 2];
        boxes.push(decode_box(&r, &anchors[i], backwards)?.with_score(score));
    }
    let keep = nms(&boxes, iou_thresh);
    Ok(keep.into_iter().take(max_keep).map(|i| boxes[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_boxes_keep_the_best() {
        let b = Box3D::new([0.0; 3], [1.6, 3.9, 1.5], 0.0, 0);
        let boxes = [b.with_score(0.8), b.with_score(0.9)];
        assert_eq!(nms(&boxes, 0.5), vec![1]);
        let far = Box3D::new([10.0, 0.0, 0.0], [1.6, 3.9, 1.5], 0.0, 0);
        assert_eq!(nms(&[b.with_score(0.8), far.with_score(0.9)], 0.5), vec![1, 0]);
    }
}
