use deepcontrast_core::phantom::{generate_one, PhantomConfig};
use deepcontrast_core::volume::nrrd::{read_nrrd, write_nrrd, write_nrrd_with, NrrdEncoding, NrrdOptions, NrrdType};
use deepcontrast_core::volume::{
    align_center_of_mass, crop_xy, crop_z_central, extract_slice_stack, resample, HuWindow, Volume, VolumeError,
};
use deepcontrast_core::{ExpertLabel, Site};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1000.0f32..1000.0)).collect();
    Volume::new(dims, spacing, [3.0, -7.5, 11.0], data).unwrap()
}

/// Direct trilinear evaluation at a physical point, clamping the continuous
/// index to the source grid.
fn trilinear_oracle(v: &Volume, p: [f64; 3]) -> f64 {
    let dims = v.dims();
    let mut lo = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let c = ((p[a] - v.origin()[a]) / v.spacing()[a]).clamp(0.0, (dims[a] - 1) as f64);
        lo[a] = c.floor() as usize;
        frac[a] = c - lo[a] as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut idx = [0usize; 3];
        let mut w = 1.0;
        for a in 0..3 {
            let up = (corner >> a) & 1 == 1;
            idx[a] = if up { (lo[a] + 1).min(dims[a] - 1) } else { lo[a] };
            w *= if up { frac[a] } else { 1.0 - frac[a] };
        }
        acc += w * v.get(idx[0], idx[1], idx[2]) as f64;
    }
    acc
}

fn check_against_oracle(v: &Volume, target: [f64; 3]) -> f64 {
    let out = resample(v, target);
    let mut worst = 0.0f64;
    let [nx, ny, nz] = out.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = out.voxel_position(x, y, z);
                worst = worst.max((out.get(x, y, z) as f64 - trilinear_oracle(v, p)).abs());
            }
        }
    }
    worst
}

#[test]
fn nrrd_round_trips_and_gzip_twin() {
    let v = Volume::filled([2, 2, 2], [1.0, 1.0, 3.0], [0.0; 3], 100.0).unwrap();
    assert_eq!(read_nrrd(&write_nrrd(&v)).unwrap(), v);

    let r = random_volume([5, 4, 3], [0.7, 0.8, 2.5], 3);
    let raw = read_nrrd(&write_nrrd(&r)).unwrap();
    let gz = NrrdOptions { encoding: NrrdEncoding::Gzip, ..NrrdOptions::default() };
    let zipped = read_nrrd(&write_nrrd_with(&r, &gz)).unwrap();
    assert_eq!(raw, r);
    assert_eq!(zipped, raw);
}

#[test]
fn oblique_directions_are_rejected() {
    let text = "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\n\
                space directions: (1,0.1,0) (0,1,0) (0,0,1)\nspace origin: (0,0,0)\nencoding: raw\nendian: little\n\n";
    let mut bytes = text.as_bytes().to_vec();
    bytes.extend_from_slice(&0f32.to_le_bytes());
    assert!(matches!(read_nrrd(&bytes), Err(VolumeError::UnsupportedNrrdField { .. })));
}

#[test]
fn constant_field_survives_any_spacing() {
    let v = Volume::filled([7, 5, 9], [1.0, 1.0, 3.0], [0.0; 3], 100.0).unwrap();
    for t in [[0.5, 0.5, 1.0], [2.0, 2.0, 3.0], [1.3, 0.7, 4.1]] {
        assert!(resample(&v, t).data().iter().all(|&h| h == 100.0));
    }
}

#[test]
fn own_spacing_is_identity() {
    let v = random_volume([6, 5, 4], [0.9, 1.1, 2.5], 11);
    let out = resample(&v, v.spacing());
    assert_eq!(out.dims(), v.dims());
    assert_eq!(out.origin(), v.origin());
    for (a, b) in out.data().iter().zip(v.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn four_cubed_one_to_two_mm_matches_oracle() {
    for seed in 0..10 {
        let v = random_volume([4, 4, 4], [1.0; 3], seed);
        let out = resample(&v, [2.0; 3]);
        assert_eq!(out.dims(), [2, 2, 2]);
        // f32 storage bounds the comparison, not the interpolation.
        assert!(check_against_oracle(&v, [2.0; 3]) <= 1e-6 * 1000.0, "seed {seed}");
    }
}

#[test]
fn oracle_on_exactly_representable_values() {
    // Integer data and dyadic weights keep every product exact in f32.
    let mut v = random_volume([4, 4, 4], [1.0; 3], 5);
    v.data_mut().iter_mut().for_each(|h| *h = h.round());
    assert!(check_against_oracle(&v, [2.0; 3]) <= 1e-6);
    assert!(check_against_oracle(&v, [0.5, 2.0, 4.0]) <= 1e-6);
}

#[test]
fn midpoint_sample() {
    let v = Volume::new([2, 1, 1], [1.0; 3], [0.0; 3], vec![0.0, 100.0]).unwrap();
    assert_eq!(resample(&v, [2.0, 1.0, 1.0]).data(), &[50.0]);
}

#[test]
fn in_plane_crop_and_origin_bookkeeping() {
    let v = Volume::filled([512, 512, 2], [1.0, 1.0, 3.0], [-256.0, -200.0, 5.0], 0.0).unwrap();
    let c = crop_xy(&v, 192.0).unwrap();
    assert_eq!(c.dims(), [192, 192, 2]);
    assert_eq!(c.origin(), [-256.0 + 160.0, -200.0 + 160.0, 5.0]);

    let same = crop_xy(&c, 192.0).unwrap();
    assert_eq!(same, c);
    let small = Volume::filled([100, 100, 1], [1.0; 3], [0.0; 3], 0.0).unwrap();
    assert!(matches!(crop_xy(&small, 192.0), Err(VolumeError::CropExceedsVolume { .. })));
}

#[test]
fn central_slice_counts_and_idempotence() {
    for (n, want) in [(99, 66), (105, 70), (3, 2)] {
        let v = random_volume([2, 2, n], [1.0, 1.0, 3.0], n as u64);
        let k = crop_z_central(&v, 2.0 / 3.0);
        assert_eq!(k.dims()[2], want);
        let start = (n - want) / 2;
        assert_eq!(k.origin()[2], v.origin()[2] + start as f64 * 3.0);
        assert_eq!(k.get(1, 1, 0), v.get(1, 1, start));
        assert_eq!(crop_z_central(&k, 1.0), k);
    }
    let three = random_volume([1, 1, 3], [1.0; 3], 1);
    assert_eq!(crop_z_central(&three, 1.0), three);
}

#[test]
fn alignment_recovers_phantom_offset() {
    let mut cfg = PhantomConfig::new(Site::Hn, 1, 0.0, 4);
    cfg.dims = [128, 128, 6];
    cfg.noise_sigma_hu = 0.0;
    let p = generate_one(&cfg, 0, ExpertLabel::NonContrast).unwrap();
    let (centered, _) = align_center_of_mass(&p.volume, -300.0).unwrap();

    let [nx, ny, nz] = centered.dims();
    let mut shifted = Volume::filled(centered.dims(), centered.spacing(), centered.origin(), -1024.0).unwrap();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (sx, sy) = (x as i64 - 7, y as i64 + 3);
                if (0..nx as i64).contains(&sx) && (0..ny as i64).contains(&sy) {
                    shifted.set(x, y, z, centered.get(sx as usize, sy as usize, z));
                }
            }
        }
    }
    let (_, a) = align_center_of_mass(&shifted, -300.0).unwrap();
    assert!((a.shift_x + 7).abs() <= 1 && (a.shift_y - 3).abs() <= 1, "{a:?}");
}

#[test]
fn window_mapping() {
    let w = HuWindow::default();
    assert_eq!(w.normalize(-175.0), 0.0);
    assert_eq!(w.normalize(275.0), 1.0);
    assert_eq!(w.normalize(50.0), 0.5);

    let air = Volume::filled([4, 3, 2], [1.0; 3], [0.0; 3], -1024.0).unwrap();
    let s = extract_slice_stack(&air, w, "air");
    assert_eq!((s.len(), s.height, s.width), (2, 3, 4));
    assert!(s.slices.iter().flatten().all(|&x| x == 0.0));
}

fn arb_volume() -> impl Strategy<Value = Volume> {
    (1usize..5, 1usize..5, 1usize..5, prop::array::uniform3(0.3f64..4.0), any::<u64>())
        .prop_map(|(x, y, z, sp, seed)| random_volume([x, y, z], sp, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nrrd_write_read_identity(v in arb_volume(), short in any::<bool>(), gzip in any::<bool>()) {
        let opts = NrrdOptions {
            value_type: if short { NrrdType::Short } else { NrrdType::Float },
            encoding: if gzip { NrrdEncoding::Gzip } else { NrrdEncoding::Raw },
            comments: vec!["fixture".to_string()],
        };
        let mut v = v;
        if short {
            v.data_mut().iter_mut().for_each(|h| *h = h.round());
        }
        prop_assert_eq!(read_nrrd(&write_nrrd_with(&v, &opts)).unwrap(), v);
    }

    #[test]
    fn trilinear_is_bounded_by_neighbours(v in arb_volume(), t in prop::array::uniform3(0.3f64..4.0)) {
        let out = resample(&v, t);
        let dims = v.dims();
        let [nx, ny, nz] = out.dims();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = out.voxel_position(x, y, z);
                    let mut lo = f32::INFINITY;
                    let mut hi = f32::NEG_INFINITY;
                    let base: [usize; 3] = std::array::from_fn(|a| {
                        ((p[a] - v.origin()[a]) / v.spacing()[a]).clamp(0.0, (dims[a] - 1) as f64).floor() as usize
                    });
                    for corner in 0..8 {
                        let i: [usize; 3] =
                            std::array::from_fn(|a| (base[a] + ((corner >> a) & 1)).min(dims[a] - 1));
                        let h = v.get(i[0], i[1], i[2]);
                        lo = lo.min(h);
                        hi = hi.max(h);
                    }
                    let s = out.get(x, y, z);
                    prop_assert!(s >= lo - 1e-3 && s <= hi + 1e-3, "{} outside [{}, {}]", s, lo, hi);
                }
            }
        }
    }
}
