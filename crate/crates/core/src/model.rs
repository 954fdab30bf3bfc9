//! The full detector: point-range fusion, slice pillars, BEV backbone and
//! sparse head.

use std::time::{Duration, Instant};

use cvf_tensor::{Bound, Element, ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bev::{pool_occupancy, scatter_to_pillars, Backbone, GridDims, PillarMlp};
use crate::config::{InferConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::fusion::PointRangeModule;
use crate::geometry::{build_range_image, PointCloud};
use crate::head::{cell_anchors, decode_and_nms, Box3D, HeadVars, SparseHead};
use crate::nn::Init;

/// Pipeline stages timed by [`CvfNet::forward`] and the benchmark.
pub const STAGES: [&str; 6] = ["projection", "fusion", "scatter", "backbone", "head", "nms"];

#[derive(Clone, Debug)]
pub struct CvfNet<T> {
    pub store: ParamStore<T>,
    pub config: ModelConfig,
    prm: PointRangeModule,
    pillar: PillarMlp,
    backbone: Backbone,
    head: SparseHead,
    dims: GridDims,
}

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub head: HeadVars,
    /// Anchors of the valid cells, in head row order.
    pub anchors: Vec<Box3D>,
    /// Head-resolution grid `(h, w)`.
    pub head_grid: (usize, usize),
    /// `[channels, h, w]` of the range image, the pillar volume
    /// (`[depth, h, w]`) and the backbone output.
    pub range_shape: [usize; 3],
    pub pillar_shape: [usize; 3],
    pub backbone_shape: [usize; 3],
    /// Time spent in the first five [`STAGES`].
    pub timings: [Duration; 5],
}

impl<T: Element> CvfNet<T> {
    /// Builds the network with parameters drawn from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let dims = config.voxel.dims()?;
        let prm = PointRangeModule::new(
            &mut init,
            "prm",
            &config.range_stream,
            &config.point_stream,
            &config.fusion,
            config.input_scale,
        )?;
        let pillar = PillarMlp::new(&mut init, "pillar", dims.d * prm.out_channels(), &config.pillar_widths)?;
        let backbone = Backbone::new(&mut init, "backbone", pillar.out_channels(), &config.backbone)?;
        let head = SparseHead::new(
            &mut init,
            "head",
            backbone.out_channels(),
            config.head_channels,
            &config.anchors,
        )?;
        Ok(Self {
            store,
            config: config.clone(),
            prm,
            pillar,
            backbone,
            head,
            dims,
        })
    }

    pub fn grid_dims(&self) -> GridDims {
        self.dims
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Runs the network on a cloud. Errors with [`Error::EmptyImage`] when no
    /// point projects into the range image.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, cloud: &PointCloud) -> Result<Forward> {
        let mut timings = [Duration::ZERO; 5];
        let mut lap = Instant::now();
        let mut mark = |slot: usize, timings: &mut [Duration; 5]| {
            let now = Instant::now();
            timings[slot] += now - lap;
            lap = now;
        };

        let (img, table) = build_range_image(cloud, &self.config.spherical.to_config())?;
        mark(0, &mut timings);
        let points = self.prm.forward(tape, bound, cloud, &img, &table)?;
        mark(1, &mut timings);
        let vol = scatter_to_pillars(tape, points, cloud, &self.config.voxel)?;
        mark(2, &mut timings);
        let bev = self.pillar.forward(tape, bound, &vol)?;
        let features = self.backbone.forward(tape, bound, bev)?;
        let backbone_shape = match tape.shape(features) {
            &[c, h, w] => [c, h, w],
            other => return Err(Error::Contract(format!("backbone output has shape {other:?}"))),
        };
        mark(3, &mut timings);
        let (hh, hw) = (self.dims.h / 2, self.dims.w / 2);
        let occupancy = pool_occupancy(&vol.occupancy, self.dims.h, self.dims.w);
        let head = self.head.forward(tape, bound, features, &occupancy)?;
        let anchors = head
            .valid_cells
            .iter()
            .flat_map(|&cell| cell_anchors(&self.config.anchors, cell, hw, &self.config.voxel, 2))
            .collect();
        mark(4, &mut timings);
        Ok(Forward {
            head,
            anchors,
            head_grid: (hh, hw),
            range_shape: [img.channels.len() / (img.h * img.w), img.h, img.w],
            pillar_shape: [self.dims.d, self.dims.h, self.dims.w],
            backbone_shape,
            timings,
        })
    }

    /// Inference without gradients. Scenes with nothing in view produce no
    /// detections.
    pub fn detect(&self, cloud: &PointCloud, cfg: &InferConfig) -> Result<Vec<Box3D>> {
        Ok(self.detect_timed(cloud, cfg)?.0)
    }

    /// Detections plus per-stage timings (all six [`STAGES`]).
    pub fn detect_timed(&self, cloud: &PointCloud, cfg: &InferConfig) -> Result<(Vec<Box3D>, [Duration; 6])> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let fwd = match self.forward(&mut tape, &bound, cloud) {
            Ok(f) => f,
            Err(Error::EmptyImage) => return Ok((Vec::new(), [Duration::ZERO; 6])),
            Err(e) => return Err(e),
        };
        let start = Instant::now();
        let out = fwd
            .head
            .materialize(&tape, self.head.anchors_per_cell, self.head.num_classes)?;
        let dets = decode_and_nms(&out, &fwd.anchors, cfg.score_thresh, cfg.nms_iou, cfg.max_keep)?;
        let mut t = [Duration::ZERO; 6];
        t[..5].copy_from_slice(&fwd.timings);
        t[5] = start.elapsed();
        Ok((dets, t))
    }

    pub fn head(&self) -> &SparseHead {
        &self.head
    }
}
