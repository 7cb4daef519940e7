//! Synthetic CT volumes with and without simulated IV contrast.
//!
//! Geometry and HU ranges are test fixtures. Blood pools at 30-60 HU without
//! contrast and rises to 150-300 HU in an opacified arterial phase, so the two
//! vessel ranges never overlap.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{ExpertLabel, Manifest, ManifestRow, Site};
use crate::rng::rng_for;
use crate::volume::nrrd::{write_nrrd_with, NrrdOptions};
use crate::volume::{preprocess_volume, HuWindow, PreprocessConfig, Volume, VolumeError};

pub const AIR_HU: f32 = -1000.0;
/// Bolus string written for contrast phantoms.
pub const SYNTH_BOLUS: &str = "SYNTH OMNI";

const TAG_LABELS: u64 = 0xFA01;
const TAG_SCAN: u64 = 0xFA02;
const TAG_NOISE: u64 = 0xFA03;

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_scans: usize,
    pub contrast_fraction: f64,
    pub site: Site,
    /// `(x, y, z)` voxels.
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Soft tissue is drawn per scan from `body_hu ± body_hu_jitter`.
    pub body_hu: f64,
    pub body_hu_jitter: f64,
    pub vessel_hu_contrast: [f64; 2],
    pub vessel_hu_plain: [f64; 2],
    pub noise_sigma_hu: f64,
    pub vessel_count: [usize; 2],
    pub vessel_radius_mm: [f64; 2],
    pub seed: u64,
}

impl PhantomConfig {
    pub fn new(site: Site, n_scans: usize, contrast_fraction: f64, seed: u64) -> Self {
        let nz = match site {
            Site::Hn => 99,
            Site::Chest => 105,
        };
        PhantomConfig {
            n_scans,
            contrast_fraction,
            site,
            dims: [256, 256, nz],
            spacing_mm: [1.0, 1.0, 3.0],
            body_hu: 40.0,
            body_hu_jitter: 10.0,
            vessel_hu_contrast: [150.0, 300.0],
            vessel_hu_plain: [30.0, 60.0],
            noise_sigma_hu: 15.0,
            vessel_count: [2, 5],
            vessel_radius_mm: [9.0, 15.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.contrast_fraction) {
            return bad(format!("contrast fraction {} outside [0, 1]", self.contrast_fraction));
        }
        if self.dims.contains(&0) || self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("grid {:?} @ {:?} mm", self.dims, self.spacing_mm));
        }
        for (name, [lo, hi]) in [
            ("vessel_hu_contrast", self.vessel_hu_contrast),
            ("vessel_hu_plain", self.vessel_hu_plain),
            ("vessel_radius_mm", self.vessel_radius_mm),
        ] {
            if !(lo <= hi) {
                return bad(format!("{name} range [{lo}, {hi}]"));
            }
        }
        if self.vessel_hu_plain[1] >= self.vessel_hu_contrast[0] {
            return bad("plain and contrast vessel ranges overlap".into());
        }
        if self.vessel_count[0] == 0 || self.vessel_count[0] > self.vessel_count[1] {
            return bad(format!("vessel count range {:?}", self.vessel_count));
        }
        if !(self.noise_sigma_hu >= 0.0) || !(self.body_hu_jitter >= 0.0) || !(self.vessel_radius_mm[0] > 0.0) {
            return bad("negative noise, jitter or radius".into());
        }
        Ok(())
    }

    /// Number of contrast scans: `round(n * fraction)`.
    pub fn n_contrast(&self) -> usize {
        (self.n_scans as f64 * self.contrast_fraction).round() as usize
    }

    pub fn scan_id(&self, index: usize) -> String {
        format!("phantom-{}-{index:04}", self.site)
    }

    /// Labels for every scan index, shuffled by the seed.
    pub fn labels(&self) -> Vec<ExpertLabel> {
        let k = self.n_contrast();
        let mut labels: Vec<ExpertLabel> = (0..self.n_scans).map(|i| ExpertLabel::from_positive(i < k)).collect();
        labels.shuffle(&mut rng_for(self.seed, &[TAG_LABELS]));
        labels
    }
}

/// A cylinder along z whose axis drifts linearly from `start` to `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    /// In-plane world position (mm) of the axis at the first slice.
    pub start_mm: [f64; 2],
    pub end_mm: [f64; 2],
    pub radius_mm: f64,
    pub hu: f64,
}

impl Vessel {
    fn axis_at(&self, t: f64) -> [f64; 2] {
        [
            self.start_mm[0] + t * (self.end_mm[0] - self.start_mm[0]),
            self.start_mm[1] + t * (self.end_mm[1] - self.start_mm[1]),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub scan_id: String,
    pub label: ExpertLabel,
    pub site: Site,
    pub body_hu: f64,
    /// Ellipse center and semi-axes, in mm.
    pub body_center_mm: [f64; 2],
    pub body_axes_mm: [f64; 2],
    pub vessels: Vec<Vessel>,
    pub volume: Volume,
}

impl Phantom {
    pub fn manifest_row(&self) -> ManifestRow {
        ManifestRow {
            scan_id: self.scan_id.clone(),
            path: format!("{}.nrrd", self.scan_id),
            expert_label: self.label,
            bolus_raw: self.label.is_positive().then(|| SYNTH_BOLUS.to_string()),
            site: self.site,
            cohort: "phantom".to_string(),
            artifact_note: None,
        }
    }

    /// 1 inside any vessel, 0 elsewhere, on the phantom's own grid.
    pub fn vessel_mask(&self) -> Volume {
        let mut mask = Volume::filled(self.volume.dims(), self.volume.spacing(), self.volume.origin(), 0.0)
            .expect("phantom geometry is valid");
        paint(&mut mask, &self.vessels, |_| 1.0);
        mask
    }

    /// The vessel mask carried through the same resample and crop as the
    /// image (without alignment), thresholded at 0.5 per output pixel.
    pub fn vessel_mask_stack(&self, cfg: &PreprocessConfig) -> Result<Vec<Vec<bool>>, PhantomError> {
        let cfg = PreprocessConfig { align: false, window: HuWindow { low_hu: 0.0, high_hu: 1.0 }, ..cfg.clone() };
        let stack = preprocess_volume(&self.vessel_mask(), &cfg, &self.scan_id)?;
        Ok(stack.slices.iter().map(|s| s.iter().map(|&v| v >= 0.5).collect()).collect())
    }

    /// Mean HU over the vessel mask.
    pub fn mean_vessel_hu(&self) -> f64 {
        let mask = self.vessel_mask();
        let (mut sum, mut n) = (0.0, 0usize);
        for (&m, &v) in mask.data().iter().zip(self.volume.data()) {
            if m > 0.5 {
                sum += v as f64;
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }
}

/// Sets every voxel inside a vessel to `value(vessel_index)`.
fn paint(v: &mut Volume, vessels: &[Vessel], value: impl Fn(usize) -> f32) {
    let [nx, ny, nz] = v.dims();
    let (sp, org) = (v.spacing(), v.origin());
    for z in 0..nz {
        let t = if nz > 1 { z as f64 / (nz - 1) as f64 } else { 0.0 };
        for (k, vessel) in vessels.iter().enumerate() {
            let [cx, cy] = vessel.axis_at(t);
            let r = vessel.radius_mm;
            let x_lo = (((cx - r - org[0]) / sp[0]).floor().max(0.0)) as usize;
            let x_hi = (((cx + r - org[0]) / sp[0]).ceil().max(0.0) as usize).min(nx - 1);
            let y_lo = (((cy - r - org[1]) / sp[1]).floor().max(0.0)) as usize;
            let y_hi = (((cy + r - org[1]) / sp[1]).ceil().max(0.0) as usize).min(ny - 1);
            for y in y_lo..=y_hi {
                let dy = org[1] + y as f64 * sp[1] - cy;
                for x in x_lo..=x_hi {
                    let dx = org[0] + x as f64 * sp[0] - cx;
                    if dx * dx + dy * dy <= r * r {
                        v.set(x, y, z, value(k));
                    }
                }
            }
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Body ellipse semi-axes and the annulus (around the body center) where
/// vessel axes are placed, per site.
fn site_geometry(site: Site) -> ([f64; 2], [f64; 2]) {
    match site {
        // Neck: compact body, vessels in a ring around the airway.
        Site::Hn => ([70.0, 60.0], [15.0, 45.0]),
        // Chest: wide body, mediastinal vessels closer to the midline.
        Site::Chest => ([120.0, 90.0], [0.0, 45.0]),
    }
}

/// Phantom `index` of the corpus. Each scan draws from its own stream.
pub fn generate_one(cfg: &PhantomConfig, index: usize, label: ExpertLabel) -> Result<Phantom, PhantomError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, &[TAG_SCAN, index as u64]);
    let [nx, ny, nz] = cfg.dims;
    let sp = cfg.spacing_mm;
    let origin = [-(nx as f64) * sp[0] / 2.0, -(ny as f64) * sp[1] / 2.0, 0.0];
    let (axes, ring) = site_geometry(cfg.site);
    let body_center = [rng.random_range(-8.0..=8.0), rng.random_range(-8.0..=8.0)];
    let body_hu = uniform(&mut rng, [cfg.body_hu - cfg.body_hu_jitter, cfg.body_hu + cfg.body_hu_jitter]);
    let hu_range = if label.is_positive() { cfg.vessel_hu_contrast } else { cfg.vessel_hu_plain };

    let count = rng.random_range(cfg.vessel_count[0]..=cfg.vessel_count[1]);
    let mut vessels: Vec<Vessel> = Vec::with_capacity(count);
    for attempt in 0..1000 {
        if vessels.len() == count {
            break;
        }
        let radius = uniform(&mut rng, cfg.vessel_radius_mm);
        let dist = uniform(&mut rng, ring);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let drift = [rng.random_range(-4.0..=4.0), rng.random_range(-4.0..=4.0)];
        let start = [body_center[0] + dist * theta.cos(), body_center[1] + dist * theta.sin()];
        let cand = Vessel {
            start_mm: start,
            end_mm: [start[0] + drift[0], start[1] + drift[1]],
            radius_mm: radius,
            hu: uniform(&mut rng, hu_range),
        };
        // Keep vessels apart (2 mm gap plus drift) so masks stay disjoint;
        // after many rejections accept whatever fits.
        let clear = vessels.iter().all(|o| {
            let d = (o.start_mm[0] - start[0]).hypot(o.start_mm[1] - start[1]);
            d > o.radius_mm + radius + 2.0 + 2.0 * 4.0f64.hypot(4.0)
        });
        if clear || attempt >= 900 {
            vessels.push(cand);
        }
    }

    let mut data = vec![AIR_HU; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            let dy = (origin[1] + y as f64 * sp[1] - body_center[1]) / axes[1];
            for x in 0..nx {
                let dx = (origin[0] + x as f64 * sp[0] - body_center[0]) / axes[0];
                if dx * dx + dy * dy <= 1.0 {
                    data[(z * ny + y) * nx + x] = body_hu as f32;
                }
            }
        }
    }
    let mut volume = Volume::new(cfg.dims, sp, origin, data)?;
    paint(&mut volume, &vessels, |k| vessels[k].hu as f32);
    if cfg.noise_sigma_hu > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma_hu).expect("sigma is finite and non-negative");
        let mut noise_rng = rng_for(cfg.seed, &[TAG_NOISE, index as u64]);
        for v in volume.data_mut() {
            *v += normal.sample(&mut noise_rng) as f32;
        }
    }
    Ok(Phantom {
        scan_id: cfg.scan_id(index),
        label,
        site: cfg.site,
        body_hu,
        body_center_mm: body_center,
        body_axes_mm: axes,
        vessels,
        volume,
    })
}

/// Every phantom of the corpus, generated in parallel.
pub fn generate(cfg: &PhantomConfig) -> Result<Vec<Phantom>, PhantomError> {
    cfg.validate()?;
    let labels = cfg.labels();
    labels.par_iter().enumerate().map(|(i, &l)| generate_one(cfg, i, l)).collect()
}

/// Writes one NRRD per phantom plus `manifest.csv`, generating scans one at a
/// time in parallel so memory stays bounded. `comment` is embedded in every
/// file header. Returns the manifest.
pub fn write_corpus(
    cfg: &PhantomConfig,
    dir: &Path,
    comment: Option<&str>,
    write: &(dyn Fn(&Path, &[u8]) -> std::io::Result<()> + Sync),
) -> Result<Manifest, PhantomError> {
    cfg.validate()?;
    let io = |p: &Path, e: std::io::Error| PhantomError::Io { path: p.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let labels = cfg.labels();
    let mut comments = vec![format!("synthetic phantom, site {}, seed {}", cfg.site, cfg.seed)];
    comments.extend(comment.into_iter().flat_map(str::lines).map(String::from));
    let opts = NrrdOptions { comments, ..NrrdOptions::default() };
    let rows = labels
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            let p = generate_one(cfg, i, l)?;
            let row = p.manifest_row();
            let path = dir.join(&row.path);
            let bytes = write_nrrd_with(&p.volume, &opts);
            write(&path, &bytes).map_err(|e| io(&path, e))?;
            Ok(row)
        })
        .collect::<Result<Vec<_>, PhantomError>>()?;
    let manifest = Manifest::new(rows).expect("phantom scan ids are unique");
    let path = dir.join("manifest.csv");
    write(&path, &manifest.to_csv_bytes_with(comment)).map_err(|e| io(&path, e))?;
    Ok(manifest)
}
