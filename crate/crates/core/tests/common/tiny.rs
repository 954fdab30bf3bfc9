//! A ten-point model small enough for finite differences over every parameter.

use cvf_core::bev::{BackboneConfig, VoxelGridConfig};
use cvf_core::config::{ModelConfig, SphericalSection};
use cvf_core::data::SceneSample;
use cvf_core::fusion::{FusionStage, FusionStageSpec, PointStreamConfig, RangeStreamConfig, RangeTap};
use cvf_core::geometry::{Point, PointCloud};
use cvf_core::head::{build_targets, head_loss, AnchorClass, AnchorConfig, Box3D, LossConfig};
use cvf_core::model::CvfNet;
use cvf_tensor::gradcheck::{GradCheck, GradCheckReport};
use cvf_tensor::{Tensor, TensorError};

pub fn tiny_model_config() -> ModelConfig {
    let stage = |stage, range_tap, scale| FusionStageSpec {
        stage,
        range_tap,
        scale,
        fusion_mlp_widths: vec![3],
    };
    ModelConfig {
        spherical: SphericalSection {
            h: 8,
            w: 32,
            fov_up_deg: 3.0,
            fov_down_deg: -25.0,
        },
        range_stream: RangeStreamConfig {
            encoder_strides: vec![1, 2, 2],
            encoder_layers_per_block: vec![1, 1, 1],
            decoder_blocks: 2,
            decoder_layers: 1,
            decoder_width: 3,
            growth: 2,
            base_channels: 3,
        },
        point_stream: PointStreamConfig { mlp_widths: vec![4, 3] },
        fusion: vec![
            stage(FusionStage::Early, RangeTap::Encoder(0), 1.0),
            stage(FusionStage::Middle, RangeTap::Decoder(0), 0.5),
            stage(FusionStage::Late, RangeTap::Decoder(1), 1.0),
        ],
        voxel: VoxelGridConfig {
            x_range: (0.0, 6.4),
            y_range: (-3.2, 3.2),
            z_range: (-2.0, 2.0),
            voxel_size: (0.8, 0.8, 1.0),
        },
        pillar_widths: vec![3],
        backbone: BackboneConfig {
            widths: vec![2, 2, 2],
            extra_layers: vec![0, 0, 0],
        },
        head_channels: 3,
        anchors: AnchorConfig {
            classes: vec![AnchorClass {
                name: "Box".into(),
                size: [1.0, 1.6, 1.0],
                z_center: -0.5,
                match_iou_pos: 0.5,
                match_iou_neg: 0.3,
            }],
        },
        ..ModelConfig::default()
    }
}

/// Ten in-view points and one ground-truth box among them.
pub fn tiny_scene() -> SceneSample {
    let points = [
        (1.5, 0.3, -0.4),
        (2.2, -0.9, -0.6),
        (2.9, 1.4, -0.2),
        (3.4, 0.2, -0.9),
        (3.6, -1.8, -0.1),
        (4.1, 2.3, -1.2),
        (4.8, -0.4, -0.7),
        (5.0, 1.1, -1.5),
        (5.5, -2.6, -0.3),
        (6.1, 0.6, -1.0),
    ];
    SceneSample {
        scene_id: "tiny".into(),
        cloud: points
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| Point::new(x, y, z, 0.1 * i as f64))
            .collect::<PointCloud>(),
        gts: vec![Box3D::new([3.5, 0.1, -0.6], [1.0, 1.8, 1.1], 0.3, 0)],
    }
}

/// Finite-difference check of the training loss with respect to every
/// parameter of the tiny model, in double precision.
pub fn pipeline_gradcheck(rel_tol: f64) -> GradCheckReport {
    let cfg = tiny_model_config();
    let mut model = CvfNet::<f64>::new(&cfg, 3).expect("tiny model");
    // Zero biases put empty cells exactly on the ReLU kink, where one-sided
    // and central differences disagree.
    for (k, (_, p)) in model.store.iter_mut().enumerate() {
        if p.value.rank() == 1 {
            for (j, b) in p.value.data_mut().iter_mut().enumerate() {
                *b = 0.05 * ((k * 7 + j) as f64).sin();
            }
        }
    }
    let scene = tiny_scene();
    let loss_cfg = LossConfig::default();
    let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
    let inputs: Vec<Tensor<f64>> = model.store.iter().map(|(_, p)| p.value.clone()).collect();
    let wrap = |e: cvf_core::Error| TensorError::Contract(e.to_string());
    let check = GradCheck {
        rel_tol,
        ..GradCheck::default()
    };
    check
        .run(&inputs, |tape, vars| {
            let mut bound = model.store.bind_frozen(tape);
            for (name, &v) in names.iter().zip(vars) {
                bound.replace(model.store.id_of(name).expect("known parameter"), v);
            }
            let fwd = model.forward(tape, &bound, &scene.cloud).map_err(wrap)?;
            let targets = build_targets(&fwd.anchors, &scene.gts, &cfg.anchors).map_err(wrap)?;
            let loss = head_loss(tape, &fwd.head, &targets, &loss_cfg).map_err(wrap)?;
            Ok(loss.total)
        })
        .expect("gradient check runs")
}
