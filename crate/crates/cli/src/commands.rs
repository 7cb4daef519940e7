use std::path::Path;

use deepcontrast_core::eval::{
    evaluate as eval_metrics, patients_from_slices, predict_stack, read_slice_csv, write_slice_csv, BootstrapConfig,
    Level, SlicePrediction,
};
use deepcontrast_core::fsutil::atomic_write;
use deepcontrast_core::gradcam::{gradcam as grad_cam, overlay_png};
use deepcontrast_core::nn::{read_model_file, serialize, ModelMetadata};
use deepcontrast_core::phantom::{write_corpus, PhantomConfig};
use deepcontrast_core::pipeline::{finetune as fine_tune, history_csv, train as fit, Dataset, EpochRecord};
use deepcontrast_core::volume::{preprocess_volume, PreprocessConfig};
use deepcontrast_core::{
    audit as audit_manifest, Manifest, ManifestRow, ModelSpec, Network, RunConfig, Site, SliceStack,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::provenance::{digest_file, digest_path, Provenance};
use crate::scan::{check_dims, load_stack, load_volume};
use crate::{CliError, LevelArg};

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(dir, e))?;
    }
    atomic_write(path, bytes).map_err(|e| CliError::data(path, e))
}

fn write_json(path: &Path, mut body: Value, prov: &Provenance) -> Result<(), CliError> {
    if let Value::Object(map) = &mut body {
        map.insert("provenance".into(), prov.to_json());
    }
    let mut text = serde_json::to_string_pretty(&body).expect("JSON values serialize");
    text.push('\n');
    write(path, text.as_bytes())
}

fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    Manifest::read(path).map_err(|e| CliError::data(path, e))
}

fn load_dataset(dir: &Path) -> Result<(Dataset, Vec<crate::provenance::InputDigest>), CliError> {
    let manifest_path = dir.join("manifest.csv");
    let manifest = read_manifest(&manifest_path)?;
    let ds = Dataset::load(&manifest, dir).map_err(|e| CliError::data(dir, e))?;
    Ok((ds, digest_path(dir)?))
}

fn progress(tag: &str, r: &EpochRecord) {
    eprintln!(
        "{tag} epoch {:>3}  train_loss {:.4}  val_loss {:.4}  train_acc {:.3}  val_acc {:.3}{}",
        r.epoch,
        r.train_loss,
        r.val_loss,
        r.train_acc,
        r.val_acc,
        if r.improved { "  *" } else { "" }
    );
}

pub fn audit(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = read_manifest(manifest_path)?;
    let report = audit_manifest(&manifest, &cfg.vocabulary()).map_err(|e| CliError::data(manifest_path, e))?;
    let mut prov = Provenance::new("audit", cfg).arg("manifest", manifest_path.display()).arg("out", out.display());
    prov.add_inputs([digest_file(manifest_path)?]);
    print!("{}", report.render_table());
    write_json(out, serde_json::to_value(&report).expect("report serializes"), &prov)
}

pub fn preprocess(cfg: &RunConfig, input: &Path, manifest_path: &Path, out: &Path, site: Site) -> Result<(), CliError> {
    let manifest = read_manifest(manifest_path)?;
    let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| r.site == site).collect();
    if rows.is_empty() {
        return Err(CliError::data(manifest_path, format!("no rows for site {site}")));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::data(out, e))?;
    let mut prov = Provenance::new("preprocess", cfg)
        .arg("input", input.display())
        .arg("manifest", manifest_path.display())
        .arg("out", out.display())
        .arg("site", site);
    prov.add_inputs([digest_file(manifest_path)?]);
    let pcfg = &cfg.preprocess;
    let done = rows
        .par_iter()
        .map(|row| {
            let src = input.join(&row.path);
            let (vol, digests) = load_volume(&src)?;
            let stack = preprocess_volume(&vol, pcfg, &row.scan_id)
                .map_err(|e| CliError::data(format!("scan `{}` ({})", row.scan_id, src.display()), e))?;
            let scan_prov = prov.with_inputs(digests.clone());
            stack.write_to_dir(out, scan_prov.to_json()).map_err(|e| CliError::data(out, e))?;
            let row = ManifestRow { path: format!("{}.slst", row.scan_id), ..(*row).clone() };
            Ok((row, stack.len(), digests))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut scans = Vec::new();
    let mut out_rows = Vec::new();
    for (row, count, digests) in done {
        eprintln!("{}: {count} slices", row.scan_id);
        scans.push(json!({"scan_id": row.scan_id, "slices": count}));
        prov.add_inputs(digests);
        out_rows.push(row);
    }
    let out_manifest = Manifest::new(out_rows).map_err(|e| CliError::data(manifest_path, e))?;
    write(&out.join("manifest.csv"), &out_manifest.to_csv_bytes_with(Some(&prov.to_line())))?;
    let summary = json!({"site": site, "preprocess": pcfg, "scans": scans});
    write_json(&out.join("preprocess.json"), summary, &prov)
}

/// Preprocessing settings recorded by `preprocess` in a data directory.
fn recorded_preprocessing(dir: &Path) -> Option<PreprocessConfig> {
    let text = std::fs::read(dir.join("preprocess.json")).ok()?;
    let v: Value = serde_json::from_slice(&text).ok()?;
    serde_json::from_value(v.get("preprocess")?.clone()).ok()
}

fn split(ds: &Dataset, cfg: &RunConfig, dir: &Path) -> Result<(Dataset, Dataset), CliError> {
    ds.split(cfg.train.split_fraction, cfg.seed).map_err(|e| CliError::data(dir, e))
}

fn ids(ds: &Dataset) -> Vec<String> {
    ds.entries().iter().map(|e| e.scan_id.clone()).collect()
}

fn write_model(
    out: &Path,
    net: &Network<f32>,
    metadata: &ModelMetadata,
    history: &[EpochRecord],
    prov: &Provenance,
) -> Result<(), CliError> {
    write(out, &serialize(net, metadata))?;
    let hist = format!("{}.history.csv", out.display());
    let mut text = deepcontrast_core::eval::comment_block(Some(&prov.to_line()));
    text.extend(history_csv(history).into_bytes());
    write(Path::new(&hist), &text)
}

pub fn train(cfg: &RunConfig, config_path: Option<&Path>, data: &Path, out: &Path) -> Result<(), CliError> {
    let (ds, digests) = load_dataset(data)?;
    let (h, w) = ds.slice_dims().ok_or_else(|| CliError::data(data, "no scans"))?;
    if h != w {
        return Err(CliError::data(data, format!("slices are {h}x{w}; the network needs square input")));
    }
    let (tr, va) = split(&ds, cfg, data)?;
    let net = Network::<f32>::new(ModelSpec::simple_cnn(h), cfg.seed).map_err(|e| CliError::data(data, e))?;
    let mut prov = Provenance::new("train", cfg).arg("data", data.display()).arg("out", out.display());
    if let Some(c) = config_path {
        prov = prov.arg("config", c.display());
        prov.add_inputs([digest_file(c)?]);
    }
    prov.add_inputs(digests);
    eprintln!("training on {} scans, validating on {}", tr.len(), va.len());
    let outcome = fit(net, &tr, &va, &cfg.train_config(), |r, _| {
        progress("train", r);
        Ok(())
    })
    .map_err(|e| CliError::data(data, e))?;
    let training = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "epochs_run": outcome.epochs_run,
        "train_scans": ids(&tr),
        "val_scans": ids(&va),
        "history": outcome.history,
    });
    let metadata = ModelMetadata {
        window: ds.entries()[0].stack.normalization,
        preprocessing: recorded_preprocessing(data),
        training,
        provenance: prov.to_json(),
    };
    write_model(out, &outcome.model, &metadata, &outcome.history, &prov)?;
    eprintln!("best epoch {} (val loss {:.5}); wrote {}", outcome.best_epoch, outcome.best_val_loss, out.display());
    Ok(())
}

pub fn finetune(cfg: &RunConfig, model: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let (net, header) = read_model_file(model).map_err(|e| CliError::data(model, e))?;
    let (ds, digests) = load_dataset(data)?;
    let first = ds.entries().first().ok_or_else(|| CliError::data(data, "no scans"))?;
    check_dims(&first.stack, &header, &data.display().to_string())?;
    let (tr, va) = split(&ds, cfg, data)?;
    let mut prov = Provenance::new("finetune", cfg)
        .arg("model", model.display())
        .arg("data", data.display())
        .arg("out", out.display());
    prov.add_inputs([digest_file(model)?]);
    prov.add_inputs(digests);
    let epochs = cfg.finetune_epochs;
    let outcome = fine_tune(net, &tr, &va, &cfg.finetune_config(), epochs, |r, _| {
        progress("finetune", r);
        Ok(())
    })
    .map_err(|e| CliError::data(data, e))?;
    let initial = outcome.initial_val_loss.unwrap_or(f64::NAN);
    eprintln!(
        "{} epochs; validation loss {initial:.5} -> {:.5} (best epoch {})",
        outcome.epochs_run, outcome.best_val_loss, outcome.best_epoch
    );
    let training = json!({
        "base": header.metadata.training,
        "finetune": {
            "epochs": epochs,
            "epochs_run": outcome.epochs_run,
            "lr": cfg.finetune_lr,
            "initial_val_loss": initial,
            "best_val_loss": outcome.best_val_loss,
            "best_epoch": outcome.best_epoch,
            "train_scans": ids(&tr),
            "val_scans": ids(&va),
            "history": outcome.history,
        },
    });
    let metadata = ModelMetadata { training, provenance: prov.to_json(), ..header.metadata };
    write_model(out, &outcome.model, &metadata, &outcome.history, &prov)
}

pub fn predict(
    cfg: &RunConfig,
    model: &Path,
    scan: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (net, header) = read_model_file(model).map_err(|e| CliError::data(model, e))?;
    let mut prov = Provenance::new("predict", cfg).arg("model", model.display()).arg("out", out.display());
    prov.add_inputs([digest_file(model)?]);
    let stacks: Vec<SliceStack> = match (scan, data) {
        (Some(path), _) => {
            prov = prov.arg("scan", path.display());
            let (stack, digests) = load_stack(path, &header, &cfg.preprocess)?;
            prov.add_inputs(digests);
            vec![stack]
        }
        (None, Some(dir)) => {
            prov = prov.arg("data", dir.display());
            let manifest = read_manifest(&dir.join("manifest.csv"))?;
            prov.add_inputs(digest_path(dir)?);
            manifest
                .rows
                .par_iter()
                .map(|r| {
                    let stack = SliceStack::read_from_dir(dir, &r.scan_id)
                        .map_err(|e| CliError::data(format!("scan `{}` in {}", r.scan_id, dir.display()), e))?;
                    check_dims(&stack, &header, &format!("scan `{}`", r.scan_id))?;
                    Ok(stack)
                })
                .collect::<Result<_, CliError>>()?
        }
        (None, None) => return Err(CliError::Usage("one of --scan or --data is required".into())),
    };
    let rows = stacks
        .par_iter()
        .map(|s| {
            let probs =
                predict_stack(&net, s, cfg.predict_batch).map_err(|e| CliError::data(s.source_scan_id.clone(), e))?;
            Ok(probs
                .into_iter()
                .enumerate()
                .map(|(i, p)| SlicePrediction { scan_id: s.source_scan_id.clone(), slice_index: i, probability: p })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?
        .concat();
    write_slice_csv(out, &rows, Some(&prov.to_line())).map_err(|e| CliError::data(out, e))?;
    eprintln!("{} slices from {} scans -> {}", rows.len(), stacks.len(), out.display());
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    preds_path: &Path,
    manifest_path: &Path,
    level: LevelArg,
    bootstrap: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let preds = read_slice_csv(preds_path).map_err(|e| CliError::data(preds_path, e))?;
    let manifest = read_manifest(manifest_path)?;
    if let Some(p) = preds.iter().find(|p| manifest.get(&p.scan_id).is_none()) {
        return Err(CliError::data(
            manifest_path,
            format!("no row for scan `{}` from {}", p.scan_id, preds_path.display()),
        ));
    }
    let label = |id: &str| manifest.get(id).map(|r| r.expert_label);
    let boot = BootstrapConfig { iterations: bootstrap.unwrap_or(cfg.bootstrap), seed: cfg.seed, resample: true };
    let mut prov = Provenance::new("evaluate", cfg)
        .arg("preds", preds_path.display())
        .arg("manifest", manifest_path.display())
        .arg("bootstrap", boot.iterations)
        .arg("out", out.display());
    prov.add_inputs([digest_file(preds_path)?, digest_file(manifest_path)?]);
    let (scores, labels, level, patients) = match level {
        LevelArg::Image => {
            prov = prov.arg("level", "image");
            let labels =
                preds.iter().map(|p| label(&p.scan_id).expect("checked above").is_positive()).collect::<Vec<bool>>();
            (preds.iter().map(|p| p.probability).collect::<Vec<_>>(), labels, Level::Image, None)
        }
        LevelArg::Patient => {
            prov = prov.arg("level", "patient");
            let patients =
                patients_from_slices(&preds, cfg.threshold, &label).map_err(|e| CliError::data(preds_path, e))?;
            let scores = patients.iter().map(|p| p.patient_score).collect();
            let labels = patients.iter().map(|p| p.expert.expect("checked above").is_positive()).collect::<Vec<bool>>();
            (scores, labels, Level::Patient, Some(patients))
        }
    };
    let report =
        eval_metrics(&scores, &labels, level, cfg.threshold, &boot).map_err(|e| CliError::data(preds_path, e))?;
    eprintln!(
        "{} level: n={} auc={:.4} [{:.4}, {:.4}] accuracy={:.4} f1={:.4}",
        if level == Level::Image { "image" } else { "patient" },
        report.n,
        report.auc,
        report.auc_ci95[0],
        report.auc_ci95[1],
        report.accuracy,
        report.f1
    );
    let mut body = serde_json::to_value(&report).expect("report serializes");
    if let (Some(p), Value::Object(map)) = (patients, &mut body) {
        map.insert("patients".into(), serde_json::to_value(p).expect("rows serialize"));
    }
    write_json(out, body, &prov)
}

pub fn gradcam(
    cfg: &RunConfig,
    model: &Path,
    scan: &Path,
    slice: usize,
    out: &Path,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let (net, header) = read_model_file(model).map_err(|e| CliError::data(model, e))?;
    let (stack, digests) = load_stack(scan, &header, &cfg.preprocess)?;
    if slice >= stack.len() {
        return Err(CliError::data(scan, format!("slice {slice} out of range ({} slices)", stack.len())));
    }
    let mut prov = Provenance::new("gradcam", cfg)
        .arg("model", model.display())
        .arg("scan", scan.display())
        .arg("slice", slice)
        .arg("out", out.display());
    prov.add_inputs([digest_file(model)?]);
    prov.add_inputs(digests);
    let img = &stack.slices[slice];
    let map = grad_cam(&net, img).map_err(|e| CliError::data(model, e))?;
    let line = prov.to_json().to_string();
    let png = overlay_png(img, &map, &[("provenance", &line)]).map_err(|e| CliError::data(out, e))?;
    write(out, &png)?;
    if let Some(csv) = csv {
        let mut text = deepcontrast_core::eval::comment_block(Some(&prov.to_line()));
        text.extend(map.raw_csv().into_bytes());
        write(csv, &text)?;
    }
    let (y, x) = map.argmax();
    eprintln!(
        "{}x{} map upsampled to {}x{}; hottest pixel (row {y}, col {x}) -> {}",
        map.raw_height,
        map.raw_width,
        map.height,
        map.width,
        out.display()
    );
    Ok(())
}

pub fn phantom(cfg: &RunConfig, n: usize, frac: f64, site: Site, seed: u64, out: &Path) -> Result<(), CliError> {
    let pcfg = PhantomConfig::new(site, n, frac, seed);
    pcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let prov = Provenance::new("phantom", cfg)
        .arg("n", n)
        .arg("contrast-frac", frac)
        .arg("site", site)
        .arg("seed", seed)
        .arg("out", out.display());
    let manifest = write_corpus(&pcfg, out, Some(&prov.to_line()), &|p, b| atomic_write(p, b))
        .map_err(|e| CliError::data(out, e))?;
    let k = manifest.rows.iter().filter(|r| r.expert_label.is_positive()).count();
    eprintln!("{} phantoms ({k} contrast) -> {}", manifest.len(), out.display());
    Ok(())
}
