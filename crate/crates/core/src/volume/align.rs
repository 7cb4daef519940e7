use super::{Volume, VolumeError, PADDING_HU};

/// In-plane integer translation applied by [`align_center_of_mass`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub shift_x: i64,
    pub shift_y: i64,
}

/// Translates the volume in x/y so the centroid of voxels above
/// `hu_threshold` lands on voxel `(dims_x / 2, dims_y / 2)`. Vacated voxels
/// are filled with air.
pub fn align_center_of_mass(v: &Volume, hu_threshold: f64) -> Result<(Volume, Alignment), VolumeError> {
    let [nx, ny, nz] = v.dims();
    let (mut sx, mut sy, mut count) = (0.0f64, 0.0f64, 0u64);
    for z in 0..nz {
        let plane = v.axial_slice(z);
        for y in 0..ny {
            for (x, &h) in plane[y * nx..(y + 1) * nx].iter().enumerate() {
                if h as f64 > hu_threshold {
                    sx += x as f64;
                    sy += y as f64;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(VolumeError::EmptyBodyMask { threshold: hu_threshold });
    }
    let shift = Alignment {
        shift_x: ((nx / 2) as f64 - sx / count as f64).round() as i64,
        shift_y: ((ny / 2) as f64 - sy / count as f64).round() as i64,
    };
    if shift.shift_x == 0 && shift.shift_y == 0 {
        return Ok((v.clone(), shift));
    }

    let mut out = Volume::filled(v.dims(), v.spacing(), v.origin(), PADDING_HU)?;
    for z in 0..nz {
        for y in 0..ny {
            let sy_src = y as i64 - shift.shift_y;
            if sy_src < 0 || sy_src >= ny as i64 {
                continue;
            }
            for x in 0..nx {
                let sx_src = x as i64 - shift.shift_x;
                if sx_src >= 0 && sx_src < nx as i64 {
                    out.set(x, y, z, v.get(sx_src as usize, sy_src as usize, z));
                }
            }
        }
    }
    Ok((out, shift))
}
