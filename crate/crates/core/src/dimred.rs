//! Spectral dimension reduction by averaging contiguous band groups.

use crate::error::{Error, Result};
use crate::raster::HsiCube;
use crate::scalar::Real;

pub const DEFAULT_GROUPS: usize = 40;

/// Half-open band ranges of each group: `bands / groups` wide, the last one
/// absorbing the remainder.
pub fn band_groups(bands: usize, groups: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if groups < 1 {
        return Err(Error::param("M", "must be at least 1"));
    }
    if groups > bands {
        return Err(Error::param(
            "M",
            format!("{groups} groups exceed {bands} bands"),
        ));
    }
    let size = bands / groups;
    Ok((0..groups)
        .map(|g| {
            let end = if g + 1 == groups { bands } else { (g + 1) * size };
            g * size..end
        })
        .collect())
}

/// Averages each band group per pixel, producing a cube with `groups` bands.
pub fn reduce_bands<T: Real>(cube: &HsiCube<T>, groups: usize) -> Result<HsiCube<T>> {
    let ranges = band_groups(cube.bands(), groups)?;
    let n = cube.pixels();
    let mut data = vec![T::zero(); n * groups];
    for (g, range) in ranges.iter().enumerate() {
        let out = &mut data[g * n..(g + 1) * n];
        let count = T::of_usize(range.len());
        for p in 0..n {
            let mut acc = T::zero();
            for b in range.clone() {
                acc += cube.band(b)[p];
            }
            out[p] = acc / count;
        }
    }
    HsiCube::new(cube.height(), cube.width(), groups, data)
}
