use crate::raster::HsiCube;
use crate::scalar::Real;

/// Maps each band independently onto [0, 1]; a constant band becomes all zeros.
pub fn normalize_bands<T: Real>(cube: &HsiCube<T>) -> HsiCube<T> {
    let mut out = cube.clone();
    for b in 0..cube.bands() {
        rescale_unit(out.band_mut(b));
    }
    out
}

/// Affine rescale of a slice onto [0, 1] in place; constant input becomes zeros.
pub fn rescale_unit<T: Real>(values: &mut [T]) {
    let (lo, hi) = values
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > T::zero()) {
        values.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    for v in values.iter_mut() {
        // The endpoints land exactly on 0 and 1.
        *v = if *v == hi { T::one() } else { (*v - lo) / range };
    }
}
