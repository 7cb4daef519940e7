use super::{Volume, VolumeError};

fn extract(v: &Volume, offset: [usize; 3], size: [usize; 3]) -> Volume {
    let mut data = Vec::with_capacity(size.iter().product());
    for z in offset[2]..offset[2] + size[2] {
        for y in offset[1]..offset[1] + size[1] {
            let start = v.index(offset[0], y, z);
            data.extend_from_slice(&v.data()[start..start + size[0]]);
        }
    }
    let origin = std::array::from_fn(|a| v.origin()[a] + offset[a] as f64 * v.spacing()[a]);
    Volume::new(size, v.spacing(), origin, data).expect("crop geometry is valid")
}

/// Centered in-plane crop to a square of `side_mm`. The offset is
/// `floor((dims - n) / 2)` on each axis.
pub fn crop_xy(v: &Volume, side_mm: f64) -> Result<Volume, VolumeError> {
    let dims = v.dims();
    let want = [(side_mm / v.spacing()[0]).round() as usize, (side_mm / v.spacing()[1]).round() as usize];
    if want[0] == 0 || want[1] == 0 || want[0] > dims[0] || want[1] > dims[1] {
        return Err(VolumeError::CropExceedsVolume { requested: want, available: [dims[0], dims[1]] });
    }
    let offset = [(dims[0] - want[0]) / 2, (dims[1] - want[1]) / 2, 0];
    Ok(extract(v, offset, [want[0], want[1], dims[2]]))
}

/// Keeps `floor(fraction * dims_z)` central slices (at least one), starting
/// at `floor((dims_z - k) / 2)`.
pub fn crop_z_central(v: &Volume, fraction: f64) -> Volume {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
    let dims = v.dims();
    // Absorbs representation error so that 2/3 of 99 is 66, not 65.
    let k = ((fraction * dims[2] as f64 + 1e-9).floor() as usize).clamp(1, dims[2]);
    let start = (dims[2] - k) / 2;
    extract(v, [0, 0, start], [dims[0], dims[1], k])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product();
        Volume::new(dims, [1.0, 1.0, 3.0], [-256.0, -256.0, 0.0], (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn crop_512_to_192() {
        let v = ramp([512, 512, 1]);
        let c = crop_xy(&v, 192.0).unwrap();
        assert_eq!(c.dims(), [192, 192, 1]);
        assert_eq!(c.get(0, 0, 0), v.get(160, 160, 0));
        assert_eq!(c.origin(), [-96.0, -96.0, 0.0]);
    }

    #[test]
    fn identity_and_oversized_crops() {
        let v = ramp([192, 192, 2]);
        assert_eq!(crop_xy(&v, 192.0).unwrap(), v);
        let small = ramp([100, 100, 1]);
        assert!(matches!(crop_xy(&small, 192.0), Err(VolumeError::CropExceedsVolume { .. })));
    }

    #[test]
    fn central_slice_counts() {
        assert_eq!(crop_z_central(&ramp([1, 1, 99]), 2.0 / 3.0).dims()[2], 66);
        assert_eq!(crop_z_central(&ramp([1, 1, 105]), 2.0 / 3.0).dims()[2], 70);
        let three = ramp([1, 1, 3]);
        assert_eq!(crop_z_central(&three, 1.0), three);
        let c = crop_z_central(&ramp([1, 1, 99]), 2.0 / 3.0);
        assert_eq!(c.data()[0], 16.0);
        assert_eq!(c.origin()[2], 48.0);
    }
}
