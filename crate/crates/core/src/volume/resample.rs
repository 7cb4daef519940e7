use super::Volume;

/// Per-axis interpolation taps for one output coordinate.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w: f64,
}

fn axis_taps(n_in: usize, spacing_in: f64, n_out: usize, spacing_out: f64) -> Vec<Tap> {
    let ratio = spacing_out / spacing_in;
    let max = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            // Output and input grids share the outer edge of the field of view.
            let c = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, max);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap { lo, hi, w: c - lo as f64 }
        })
        .collect()
}

/// Trilinear resampling onto a grid with `target_spacing`.
///
/// Output dims are `round(dims * spacing / target)` (at least 1). Both grids
/// share the outer corner of the field of view, so resampling to the source
/// spacing is the identity. Samples beyond the last voxel center clamp to
/// the edge voxel.
pub fn resample(v: &Volume, target_spacing: [f64; 3]) -> Volume {
    assert!(target_spacing.iter().all(|&t| t > 0.0 && t.is_finite()), "target spacing must be positive");
    let dims = v.dims();
    let spacing = v.spacing();
    let out_dims: [usize; 3] =
        std::array::from_fn(|a| ((dims[a] as f64 * spacing[a] / target_spacing[a]).round() as usize).max(1));
    let taps: [Vec<Tap>; 3] = std::array::from_fn(|a| axis_taps(dims[a], spacing[a], out_dims[a], target_spacing[a]));
    let origin: [f64; 3] = std::array::from_fn(|a| v.origin()[a] + 0.5 * (target_spacing[a] - spacing[a]));

    let src = v.data();
    let (nx, ny) = (dims[0], dims[0] * dims[1]);
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for tz in &taps[2] {
        for ty in &taps[1] {
            let rows = [
                (tz.lo * ny + ty.lo * nx, (1.0 - tz.w) * (1.0 - ty.w)),
                (tz.lo * ny + ty.hi * nx, (1.0 - tz.w) * ty.w),
                (tz.hi * ny + ty.lo * nx, tz.w * (1.0 - ty.w)),
                (tz.hi * ny + ty.hi * nx, tz.w * ty.w),
            ];
            for tx in &taps[0] {
                let mut acc = 0.0f64;
                for &(base, w) in &rows {
                    let a = src[base + tx.lo] as f64;
                    let b = src[base + tx.hi] as f64;
                    acc += w * (a + tx.w * (b - a));
                }
                out.push(acc as f32);
            }
        }
    }
    Volume::new(out_dims, target_spacing, origin, out).expect("resampled geometry is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_preserved() {
        let v = Volume::filled([5, 4, 3], [0.7, 0.9, 2.5], [1.0, 2.0, 3.0], 100.0).unwrap();
        let r = resample(&v, [1.0, 1.0, 3.0]);
        assert_eq!(r.dims(), [4, 4, 3]);
        assert!(r.data().iter().all(|&x| x == 100.0));
    }

    #[test]
    fn midpoint_between_two_voxels() {
        let mut v = Volume::filled([2, 1, 1], [1.0, 1.0, 1.0], [0.0; 3], 0.0).unwrap();
        v.set(1, 0, 0, 100.0);
        let r = resample(&v, [2.0, 1.0, 1.0]);
        assert_eq!(r.dims(), [1, 1, 1]);
        assert_eq!(r.origin(), [0.5, 0.0, 0.0]);
        assert_eq!(r.data(), &[50.0]);
    }

    #[test]
    fn own_spacing_is_identity() {
        let data: Vec<f32> = (0..60).map(|i| (i * 37 % 11) as f32 - 3.5).collect();
        let v = Volume::new([5, 4, 3], [0.3, 0.7, 1.9], [-4.0, 5.0, 6.0], data).unwrap();
        let r = resample(&v, v.spacing());
        assert_eq!(r, v);
    }
}
