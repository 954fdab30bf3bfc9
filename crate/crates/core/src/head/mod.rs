//! Sparse anchor head: box coding, rotated IoU, target assignment, losses and
//! rotated NMS.

mod anchors;
mod boxes;
mod loss;
mod nms;
mod sparse;

pub use anchors::{assign_targets, cell_anchors, generate_anchors, AnchorClass, AnchorConfig, Assignment};
pub use boxes::{bev_intersection, decode_box, encode_box, iou_3d, normalize_angle, rotated_iou_bev, Box3D};
pub use loss::{build_targets, head_loss, loss_total, HeadTargets, LossBreakdown, LossConfig, LossVars};
pub use nms::{decode_and_nms, nms};
pub use sparse::{HeadVars, SparseHead, SparseHeadOutput, BOX_CODE};
