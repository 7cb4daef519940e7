//! Criteria that drive the `deepcontrast` binary end to end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use deepcontrast_core::gradcam::{decode_png, gradcam};
use deepcontrast_core::nn::read_model_file;
use deepcontrast_core::phantom::{generate_one, PhantomConfig};
use deepcontrast_core::pipeline::{evaluate_loss, stratified_split, validation_samples, Dataset};
use deepcontrast_core::{ExpertLabel, Manifest, RunConfig, Site, SliceStack};

/// Held-out evaluation uses 96 px input and a higher learning rate than the
/// production default so that training fits the time budget on a desktop CPU.
const ACCEPTANCE_CONFIG: &str = "\
seed = 7
preprocess.output_size = 96
train.lr = 0.0001
train.batch_size = 16
train.slices_per_scan = 12
train.val_slices_per_scan = 4
train.max_epochs = 24
train.patience = 6
finetune.epochs = 10
finetune.lr = 0.00001
eval.bootstrap = 10000
";

const HN_SCANS: usize = 260;
const HN_TRAIN: usize = 200;
const HN_SEED: u64 = 2024;
const CHEST_SCANS: usize = 60;
const CHEST_SEED: u64 = 2025;

pub struct Workspace {
    root: PathBuf,
    _temp: Option<tempfile::TempDir>,
    corpus: Option<Result<(), String>>,
    model: Option<Result<PathBuf, String>>,
}

impl Workspace {
    pub fn new() -> Workspace {
        match std::env::var_os("DEEPCONTRAST_ACCEPTANCE_DIR") {
            Some(dir) => {
                let root = PathBuf::from(dir);
                std::fs::create_dir_all(&root).expect("create acceptance dir");
                Workspace { root, _temp: None, corpus: None, model: None }
            }
            None => {
                let t = tempfile::tempdir().expect("temp dir");
                Workspace { root: t.path().to_path_buf(), _temp: Some(t), corpus: None, model: None }
            }
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Generates the head-and-neck corpus, splits it 200/60 and preprocesses both sides.
    fn corpus(&mut self) -> Result<(), String> {
        if self.corpus.is_none() {
            self.corpus = Some(build_corpus(&self.root));
        }
        self.corpus.clone().unwrap()
    }

    fn trained_model(&mut self) -> Result<PathBuf, String> {
        if self.model.is_none() {
            let r = self.corpus().and_then(|_| {
                let out = self.path("hn.dcmodel");
                run(&self.root, &["train", "--data", "hn-train", "--config", "accept.cfg", "--out", "hn.dcmodel"])?;
                Ok(out)
            });
            self.model = Some(r);
        }
        self.model.clone().unwrap()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepcontrast"))
}

fn run(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = bin().current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        let err = String::from_utf8_lossy(&o.stderr);
        Err(format!("`deepcontrast {}` failed: {}", args.join(" "), err.lines().last().unwrap_or("")))
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_subset(manifest: &Manifest, ids: &[String], path: &Path) -> Result<(), String> {
    let rows = manifest.rows.iter().filter(|r| ids.contains(&r.scan_id)).cloned().collect();
    let sub = Manifest::new(rows).map_err(|e| e.to_string())?;
    std::fs::write(path, sub.to_csv_bytes()).map_err(|e| e.to_string())
}

fn remove_volumes(dir: &Path) -> Result<(), String> {
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|x| x == "nrrd") {
            std::fs::remove_file(&p).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn build_corpus(root: &Path) -> Result<(), String> {
    std::fs::write(root.join("accept.cfg"), ACCEPTANCE_CONFIG).map_err(|e| e.to_string())?;
    let (n, seed) = (HN_SCANS.to_string(), HN_SEED.to_string());
    run(root, &["phantom", "--n", &n, "--contrast-frac", "0.5", "--site", "hn", "--seed", &seed, "--out", "hn"])?;
    let manifest = Manifest::read(&root.join("hn/manifest.csv")).map_err(|e| e.to_string())?;
    let labels: Vec<(String, bool)> =
        manifest.rows.iter().map(|r| (r.scan_id.clone(), r.expert_label.is_positive())).collect();
    let (train, test) =
        stratified_split(&labels, HN_TRAIN as f64 / HN_SCANS as f64, HN_SEED).map_err(|e| e.to_string())?;
    if (train.len(), test.len()) != (HN_TRAIN, HN_SCANS - HN_TRAIN) {
        return Err(format!("split {} / {}", train.len(), test.len()));
    }
    write_subset(&manifest, &train, &root.join("hn/train.csv"))?;
    write_subset(&manifest, &test, &root.join("hn/test.csv"))?;
    for (m, out) in [("hn/train.csv", "hn-train"), ("hn/test.csv", "hn-test")] {
        run(
            root,
            &["preprocess", "--input", "hn", "--manifest", m, "--out", out, "--site", "hn", "--config", "accept.cfg"],
        )?;
    }
    // The raw volumes are large; everything downstream reads the slice stacks.
    remove_volumes(&root.join("hn"))
}

pub fn phantom_end_to_end(ws: &mut Workspace) -> Result<String, String> {
    ws.trained_model()?;
    let root = ws.root.clone();
    run(&root, &["predict", "--model", "hn.dcmodel", "--data", "hn-test", "--out", "hn-test.csv"])?;
    run(
        &root,
        &[
            "evaluate",
            "--preds",
            "hn-test.csv",
            "--manifest",
            "hn/test.csv",
            "--level",
            "patient",
            "--config",
            "accept.cfg",
            "--out",
            "hn-test-patient.json",
        ],
    )?;
    let m = read_json(&root.join("hn-test-patient.json"))?;
    let (auc, acc, n) =
        (m["auc"].as_f64().unwrap_or(0.0), m["accuracy"].as_f64().unwrap_or(0.0), m["n"].as_u64().unwrap_or(0));
    let (_, header) = read_model_file(&root.join("hn.dcmodel")).map_err(|e| e.to_string())?;
    let t = &header.metadata.training;
    let summary = format!(
        "{n} held-out scans: patient AUC {auc:.3} (CI {}), accuracy {acc:.3}; trained {} epochs, best {}",
        m["auc_ci95"], t["epochs_run"], t["best_epoch"]
    );
    if n as usize != HN_SCANS - HN_TRAIN || auc < 0.95 || acc < 0.90 {
        return Err(summary);
    }
    Ok(summary)
}

pub fn fine_tuning(ws: &mut Workspace) -> Result<String, String> {
    ws.trained_model()?;
    let root = ws.root.clone();
    let (n, seed) = (CHEST_SCANS.to_string(), CHEST_SEED.to_string());
    run(
        &root,
        &["phantom", "--n", &n, "--contrast-frac", "0.5", "--site", "chest", "--seed", &seed, "--out", "chest"],
    )?;
    run(
        &root,
        &[
            "preprocess",
            "--input",
            "chest",
            "--manifest",
            "chest/manifest.csv",
            "--out",
            "chest-data",
            "--site",
            "chest",
            "--config",
            "accept.cfg",
        ],
    )?;
    remove_volumes(&root.join("chest"))?;
    run(
        &root,
        &[
            "finetune",
            "--model",
            "hn.dcmodel",
            "--data",
            "chest-data",
            "--config",
            "accept.cfg",
            "--out",
            "chest.dcmodel",
        ],
    )?;

    let (base, _) = read_model_file(&root.join("hn.dcmodel")).map_err(|e| e.to_string())?;
    let (tuned, header) = read_model_file(&root.join("chest.dcmodel")).map_err(|e| e.to_string())?;
    let f = &header.metadata.training["finetune"];
    let epochs = f["epochs_run"].as_u64().unwrap_or(0);
    let history = f["history"].as_array().map_or(0, Vec::len);
    let before = f["initial_val_loss"].as_f64().unwrap_or(f64::NAN);
    let after = f["best_val_loss"].as_f64().unwrap_or(f64::NAN);

    // Recompute on every slice of the validation scans, independent of the
    // per-scan subsample used during training.
    let data = root.join("chest-data");
    let manifest = Manifest::read(&data.join("manifest.csv")).map_err(|e| e.to_string())?;
    let ds = Dataset::load(&manifest, &data).map_err(|e| e.to_string())?;
    let val_ids: Vec<String> = f["val_scans"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    let val = ds.subset(&val_ids).map_err(|e| e.to_string())?;
    let refs = validation_samples(&val, None);
    let (full_before, _) = evaluate_loss(&base, &val, &refs, 32).map_err(|e| e.to_string())?;
    let (full_after, _) = evaluate_loss(&tuned, &val, &refs, 32).map_err(|e| e.to_string())?;

    let summary = format!(
        "{epochs} epochs ({history} recorded) at lr {}; validation loss {before:.4} -> {after:.4}; all {} validation slices {full_before:.4} -> {full_after:.4}",
        f["lr"],
        refs.len()
    );
    if epochs != 10 || history != 10 || !(after <= before) || !(full_after <= full_before) {
        return Err(summary);
    }
    Ok(summary)
}

/// Contrast scans of the held-out split whose middle-slice Grad-CAM argmax
/// falls inside a vessel.
pub fn vessel_hits(ws: &mut Workspace) -> Result<(usize, usize), String> {
    let model = ws.trained_model()?;
    let (net, _) = read_model_file(&model).map_err(|e| e.to_string())?;
    let cfg = RunConfig::from_text(ACCEPTANCE_CONFIG).map_err(|e| e.to_string())?;
    let pcfg = PhantomConfig::new(Site::Hn, HN_SCANS, 0.5, HN_SEED);
    let test = Manifest::read(&ws.path("hn/test.csv")).map_err(|e| e.to_string())?;
    let (mut hits, mut total) = (0, 0);
    for row in test.rows.iter().filter(|r| r.expert_label.is_positive()) {
        let index: usize = row.scan_id.rsplit('-').next().and_then(|s| s.parse().ok()).ok_or("bad scan id")?;
        let phantom = generate_one(&pcfg, index, ExpertLabel::Contrast).map_err(|e| e.to_string())?;
        let masks = phantom.vessel_mask_stack(&cfg.preprocess).map_err(|e| e.to_string())?;
        let stack = SliceStack::read_from_dir(&ws.path("hn-test"), &row.scan_id).map_err(|e| e.to_string())?;
        let mid = stack.len() / 2;
        let map = gradcam(&net, &stack.slices[mid]).map_err(|e| e.to_string())?;
        let (r, c) = map.argmax();
        total += 1;
        if masks[mid][r * map.width + c] {
            hits += 1;
        }
    }
    if total == 0 {
        return Err("no contrast scans in the held-out split".into());
    }
    Ok((hits, total))
}

const SMALL_CONFIG: &str = "\
seed = 3
preprocess.output_size = 48
train.batch_size = 8
train.lr = 0.0005
train.max_epochs = 3
train.patience = 3
train.slices_per_scan = 6
train.val_slices_per_scan = 2
finetune.epochs = 2
eval.bootstrap = 500
";

fn full_run(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("run.cfg"), SMALL_CONFIG).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 10] = [
        &["phantom", "--n", "10", "--contrast-frac", "0.5", "--seed", "11", "--out", "ph"],
        &["audit", "--manifest", "ph/manifest.csv", "--out", "audit.json"],
        &["preprocess", "--input", "ph", "--manifest", "ph/manifest.csv", "--out", "data", "--site", "hn"],
        &["train", "--data", "data", "--out", "m.dcmodel"],
        &["finetune", "--model", "m.dcmodel", "--data", "data", "--out", "f.dcmodel"],
        &["predict", "--model", "f.dcmodel", "--data", "data", "--out", "preds.csv"],
        &["predict", "--model", "f.dcmodel", "--scan", "ph/phantom-hn-0003.nrrd", "--out", "one.csv"],
        &[
            "evaluate",
            "--preds",
            "preds.csv",
            "--manifest",
            "ph/manifest.csv",
            "--level",
            "patient",
            "--out",
            "patient.json",
        ],
        &[
            "evaluate",
            "--preds",
            "preds.csv",
            "--manifest",
            "ph/manifest.csv",
            "--level",
            "image",
            "--out",
            "image.json",
        ],
        &[
            "gradcam",
            "--model",
            "f.dcmodel",
            "--scan",
            "ph/phantom-hn-0003.nrrd",
            "--slice",
            "33",
            "--out",
            "cam.png",
            "--csv",
            "cam.csv",
        ],
    ];
    for args in steps {
        let mut full = vec!["--threads", "1", "--config", "run.cfg"];
        full.extend_from_slice(args);
        run(dir, &full)?;
    }
    Ok(())
}

fn tree(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

pub fn determinism(ws: &mut Workspace) -> Result<String, String> {
    let a = ws.path("determinism-a");
    let b = ws.path("determinism-b");
    for d in [&a, &b] {
        let _ = std::fs::remove_dir_all(d);
        std::fs::create_dir_all(d).map_err(|e| e.to_string())?;
        full_run(d)?;
    }
    let (ta, tb) = (tree(&a)?, tree(&b)?);
    if ta.keys().ne(tb.keys()) {
        return Err(format!(
            "file sets differ: {:?} vs {:?}",
            ta.keys().collect::<Vec<_>>(),
            tb.keys().collect::<Vec<_>>()
        ));
    }
    let bytes: usize = ta.values().map(Vec::len).sum();
    for (path, x) in &ta {
        if x != &tb[path] {
            return Err(format!("{} differs between runs", path.display()));
        }
    }
    let png = |t: &BTreeMap<PathBuf, Vec<u8>>| decode_png(&t[Path::new("cam.png")]).map_err(|e| e.to_string());
    if png(&ta)? != png(&tb)? {
        return Err("cam.png pixels differ".into());
    }
    Ok(format!(
        "{} files ({:.1} MB) byte-identical across two --threads 1 runs, PNG pixels equal",
        ta.len(),
        bytes as f64 / 1e6
    ))
}
