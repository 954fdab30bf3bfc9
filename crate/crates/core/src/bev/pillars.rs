use cvf_tensor::{Bound, Element, Tape, Tensor, Var};
use rand::Rng;

use super::{compute_voxel_index, GridDims, VoxelGridConfig, VoxelIndex};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Init, Mlp};

/// Sparse slice-pillar volume: one feature row per non-empty voxel.
///
/// Row `r` of `features` (`[V, C]`) is the feature of point `winners[r].1`,
/// stored at voxel `winners[r].0`, which lies in BEV column
/// `columns[column_rows[r]]`. Rows are sorted by column, then by slice. The
/// dense `[H·W, D·C]` layout, slice `k` at offsets `k·C..(k+1)·C` and zeros
/// at empty voxels, is recovered by [`PillarVolume::to_dense`].
#[derive(Clone, Debug)]
pub struct PillarVolume {
    pub features: Var,
    pub dims: GridDims,
    pub channels: usize,
    /// Occupied BEV cells (`iy·W + ix`), ascending.
    pub columns: Vec<usize>,
    /// Row-major `[H, W]`.
    pub occupancy: Vec<bool>,
    /// Voxel and source point of each feature row.
    pub winners: Vec<(VoxelIndex, usize)>,
    /// Index into `columns` of each feature row.
    pub column_rows: Vec<usize>,
}

impl PillarVolume {
    pub fn to_dense<T: Element>(&self, tape: &mut Tape<T>) -> Result<Var> {
        let GridDims { h, w, d } = self.dims;
        let slots: Vec<usize> = self.winners.iter().map(|(v, _)| (v.iy * w + v.ix) * d + v.iz).collect();
        let flat = tape.scatter_rows(self.features, &slots, h * w * d)?;
        Ok(tape.reshape(flat, &[h * w, d * self.channels])?)
    }
}

/// Scatters `[N, C]` point features into slice pillars. Points outside the
/// detection range are dropped; when several points share a voxel the one
/// with the highest index is kept.
pub fn scatter_to_pillars<T: Element>(
    tape: &mut Tape<T>,
    point_feats: Var,
    cloud: &PointCloud,
    cfg: &VoxelGridConfig,
) -> Result<PillarVolume> {
    let dims = cfg.dims()?;
    let shape = tape.shape(point_feats).to_vec();
    if shape.len() != 2 || shape[0] != cloud.len() {
        return Err(Error::Contract(format!(
            "point features {shape:?} do not match a cloud of {} points",
            cloud.len()
        )));
    }
    let c = shape[1];

    // (voxel key, point); a stable sort keeps later points after earlier ones
    // within a voxel, so the last entry of each run is the winner.
    let mut keyed: Vec<(usize, usize, VoxelIndex)> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            compute_voxel_index([p.x, p.y, p.z], cfg, dims).map(|v| (((v.iy * dims.w + v.ix) * dims.d + v.iz), i, v))
        })
        .collect();
    keyed.sort_by_key(|&(k, _, _)| k);

    let mut occupancy = vec![false; dims.cells()];
    let mut columns = Vec::new();
    let mut winners = Vec::new();
    let mut column_rows = Vec::new();
    for (j, &(key, i, v)) in keyed.iter().enumerate() {
        if keyed.get(j + 1).is_some_and(|next| next.0 == key) {
            continue;
        }
        let cell = v.iy * dims.w + v.ix;
        if columns.last() != Some(&cell) {
            occupancy[cell] = true;
            columns.push(cell);
        }
        winners.push((v, i));
        column_rows.push(columns.len() - 1);
    }

    let src: Vec<usize> = winners.iter().map(|&(_, i)| i).collect();
    let features = tape.gather_rows(point_feats, &src)?;
    Ok(PillarVolume {
        features,
        dims,
        channels: c,
        columns,
        occupancy,
        winners,
        column_rows,
    })
}

/// Shared per-cell MLP over each column's `D·C` slice vector.
#[derive(Clone, Debug)]
pub struct PillarMlp {
    pub mlp: Mlp,
}

impl PillarMlp {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        slice_features: usize,
        widths: &[usize],
    ) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(init, name, slice_features, widths)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.mlp.out_channels()
    }

    /// `[Cb, H, W]` BEV map. Empty cells all take the MLP's response to a zero
    /// column, so the result equals running the MLP densely over every cell.
    ///
    /// The first layer never builds the `D·C` column vectors: each voxel row
    /// meets only the `C` weight rows of its own slice, and the products are
    /// summed per column.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, vol: &PillarVolume) -> Result<Var> {
        let GridDims { h, w, d } = vol.dims;
        let c = vol.channels;
        let cb = self.out_channels();
        let zero = tape.constant(Tensor::zeros([1, d * c]));
        let empty = self.mlp.forward(tape, bound, zero)?;
        let mut map = tape.broadcast_rows(empty, h * w)?;
        if !vol.columns.is_empty() {
            let (first, rest) = self.mlp.layers.split_first().expect("MLP has a layer");
            if first.cin != d * c {
                return Err(Error::Contract(format!(
                    "pillar MLP expects {} inputs, volume has {d}×{c}",
                    first.cin
                )));
            }
            let weight = bound.var(first.weight_id());
            let no_bias = tape.constant(Tensor::zeros([first.cout]));
            let mut parts = Vec::new();
            let mut targets = Vec::with_capacity(vol.winners.len());
            let mut by_slice = vec![Vec::new(); d];
            for (r, (v, _)) in vol.winners.iter().enumerate() {
                by_slice[v.iz].push(r);
            }
            for (k, rows) in by_slice.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let x = tape.gather_rows(vol.features, rows)?;
                let wk = tape.gather_rows(weight, &(k * c..(k + 1) * c).collect::<Vec<_>>())?;
                parts.push(tape.linear(x, wk, no_bias)?);
                targets.extend(rows.iter().map(|&r| vol.column_rows[r]));
            }
            let stacked = tape.concat(&parts, 0)?;
            let summed = tape.scatter_add_rows(stacked, &targets, vol.columns.len())?;
            let bias = tape.reshape(bound.var(first.bias_id()), &[1, first.cout])?;
            let bias = tape.broadcast_rows(bias, vol.columns.len())?;
            let pre = tape.add(summed, bias)?;
            let mut rows = tape.relu(pre);
            for layer in rest {
                rows = layer.forward(tape, bound, rows)?;
                rows = tape.relu(rows);
            }
            map = tape.scatter_rows_into(map, rows, &vol.columns)?;
        }
        let map = tape.transpose2d(map)?;
        Ok(tape.reshape(map, &[cb, h, w])?)
    }
}
