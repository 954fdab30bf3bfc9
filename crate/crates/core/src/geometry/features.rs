//! Differentiable transfers between per-point features and range-image
//! feature maps, driven by an [`IndexTable`].

use cvf_tensor::{Element, Tape, Var};

use super::IndexTable;
use crate::error::{Error, Result};

impl IndexTable {
    /// Owners of an `hc × wc` downscaled grid: each coarse pixel is owned by
    /// the nearest full-resolution owner that falls into it (ties go to the
    /// lower point index). Sorted by coarse pixel.
    pub fn coarse_owners(&self, hc: usize, wc: usize) -> Result<Vec<(usize, usize)>> {
        if hc == self.h && wc == self.w {
            return Ok(self.owners().collect());
        }
        if hc == 0 || wc == 0 || hc > self.h || wc > self.w || hc * self.w != wc * self.h {
            return Err(Error::config(format!(
                "{hc}x{wc} is not a uniform downscaling of {}x{}",
                self.h, self.w
            )));
        }
        let mut best: Vec<Option<(f64, usize)>> = vec![None; hc * wc];
        for (_, i) in self.owners() {
            let r = self.point_to_pixel[i].expect("owner is projected");
            let cell = (r.v * hc / self.h) * wc + r.u * wc / self.w;
            match best[cell] {
                Some((range, j)) if (range, j) <= (r.range, i) => {}
                _ => best[cell] = Some((r.range, i)),
            }
        }
        Ok(best
            .into_iter()
            .enumerate()
            .filter_map(|(cell, b)| b.map(|(_, i)| (cell, i)))
            .collect())
    }
}

fn check_scale(table: &IndexTable, hc: usize, wc: usize, scale: f64) -> Result<()> {
    let ok = |full: usize, coarse: usize| (full as f64 * scale - coarse as f64).abs() < 1e-9;
    if !(scale > 0.0) || !ok(table.h, hc) || !ok(table.w, wc) {
        return Err(Error::config(format!(
            "feature map {hc}x{wc} does not match scale {scale} of the {}x{} index table",
            table.h, table.w
        )));
    }
    Ok(())
}

/// Samples a `[C, h', w']` map at every point's continuous pixel position
/// (scaled by `scale = h'/h`), giving `[N, C]`. Points outside the image get
/// zero rows.
pub fn point_features_from_range<T: Element>(
    tape: &mut Tape<T>,
    range_feats: Var,
    table: &IndexTable,
    scale: f64,
) -> Result<Var> {
    let shape = tape.shape(range_feats).to_vec();
    if shape.len() != 3 {
        return Err(Error::Contract(format!("range features must be [C, h, w], got {shape:?}")));
    }
    check_scale(table, shape[1], shape[2], scale)?;
    let mut coords = Vec::with_capacity(table.num_points());
    let mut valid = Vec::with_capacity(table.num_points());
    for (i, r) in table.point_to_pixel.iter().enumerate() {
        if let Some(r) = r {
            coords.push((T::from_f64_lossy(r.u_f * scale), T::from_f64_lossy(r.v_f * scale)));
            valid.push(i);
        }
    }
    let sampled = tape.bilinear_sample(range_feats, &coords)?;
    Ok(tape.scatter_rows(sampled, &valid, table.num_points())?)
}

/// Writes each occupied pixel's owner row of `point_feats` into `prev`,
/// leaving unoccupied pixels untouched. `prev` may be a uniformly downscaled
/// map, in which case ownership follows [`IndexTable::coarse_owners`].
pub fn range_features_from_points<T: Element>(
    tape: &mut Tape<T>,
    point_feats: Var,
    table: &IndexTable,
    prev: Var,
) -> Result<Var> {
    let ps = tape.shape(point_feats).to_vec();
    let rs = tape.shape(prev).to_vec();
    if ps.len() != 2 || rs.len() != 3 || ps[1] != rs[0] {
        return Err(Error::Contract(format!(
            "point features {ps:?} and range map {rs:?} disagree on channels"
        )));
    }
    if ps[0] != table.num_points() {
        return Err(Error::Contract(format!(
            "{} point feature rows for an index table over {} points",
            ps[0],
            table.num_points()
        )));
    }
    let (c, hc, wc) = (rs[0], rs[1], rs[2]);
    let owners = table.coarse_owners(hc, wc)?;
    let (cells, points): (Vec<usize>, Vec<usize>) = owners.into_iter().unzip();
    let rows = tape.reshape(prev, &[c, hc * wc])?;
    let rows = tape.transpose2d(rows)?;
    let picked = tape.gather_rows(point_feats, &points)?;
    let rows = tape.scatter_rows_into(rows, picked, &cells)?;
    let out = tape.transpose2d(rows)?;
    Ok(tape.reshape(out, &[c, hc, wc])?)
}
