use std::fmt;
use std::path::{Path, PathBuf};

use vst::autodiff::OpKind;
use vst::config::RunConfig;
use vst::data::{encode_png, load_manifest, normalize_depth, quantize_map, read_raster, resize_bilinear, synth, DataError, Preprocessor};
use vst::gradcheck;
use vst::metrics::evaluate;
use vst::model::{count_params, load_checkpoint, Modality, Vst};
use vst::train::{load_dataset, train_to_dir, TrainError};
use vst::Tensor;

use crate::pairing::{keyed_rasters, pair};

/// A failed command and its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config or input files.
    Invalid(String),
    /// Runtime failure.
    Failed(String),
    /// Training produced a NaN or infinity.
    NonFinite(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::NonFinite(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Failed(m) | Failure::NonFinite(m) => f.write_str(m),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(e: impl fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn failed(e: impl fmt::Display) -> Failure {
    Failure::Failed(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn echo_config(cfg: &RunConfig) -> String {
    let text = cfg.to_toml();
    eprintln!("# effective config\n{text}");
    text
}

pub fn train(config: &Path, overrides: &[String], out_dir: &Path, log_every: u64) -> CmdResult {
    let cfg = RunConfig::load(config, overrides).map_err(invalid)?;
    let text = echo_config(&cfg);
    let manifest = load_manifest(&cfg.data.manifest).map_err(invalid)?;
    if manifest.records.is_empty() {
        return Err(invalid(format!("{}: manifest has no records", cfg.data.manifest.display())));
    }
    match (cfg.model.modality, manifest.has_depth()) {
        (Modality::Rgbd, false) => {
            return Err(invalid(format!(
                "{}: rgbd model needs a depth column",
                cfg.data.manifest.display()
            )))
        }
        (Modality::Rgb, true) => eprintln!("warning: rgb model, depth column ignored"),
        _ => {}
    }
    let samples = load_dataset::<f32>(&manifest).map_err(invalid)?;
    let pre = cfg.preprocessor().map_err(invalid)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("config.toml"), text.as_bytes())?;
    let total = cfg.training.total_steps;
    let outcome = train_to_dir(&cfg.model, &cfg.training, pre, &samples, out_dir, |row| {
        if log_every > 0 && (row.step % log_every == 0 || row.step == total) {
            eprintln!(
                "step {}/{total} lr {:.2e} loss {:.5} (sal {:.5} bnd {:.5})",
                row.step, row.lr, row.loss_total, row.loss_sal, row.loss_bnd
            );
        }
    })
    .map_err(|e: TrainError| {
        if e.is_non_finite() {
            Failure::NonFinite(e.to_string())
        } else {
            failed(e)
        }
    })?;
    println!("log {}", outcome.log_path.display());
    println!("checkpoint {}", outcome.final_checkpoint.display());
    Ok(())
}

fn read_input(path: &Path) -> Result<vst::data::Raster, Failure> {
    read_raster(path).map_err(invalid)
}

pub fn infer(checkpoint: &Path, input: &Path, depth: Option<&Path>, out_dir: &Path) -> CmdResult {
    let ckpt = load_checkpoint(checkpoint).map_err(invalid)?;
    let model = ckpt.model().map_err(invalid)?;
    let cfg = model.config().clone();
    let [h, w] = cfg.input_hw;
    let resize = match ckpt.meta.get("data.resize") {
        Some(v) => v
            .parse()
            .map_err(|_| invalid(format!("checkpoint meta data.resize = {v:?} is not a size")))?,
        None => h.max(w),
    };
    let pre = Preprocessor::new(resize, h, w).map_err(invalid)?;
    let image = pre.input(&read_input(input)?.to_rgb::<f32>());
    let depth = match (cfg.modality, depth) {
        (Modality::Rgbd, None) => return Err(invalid("rgbd checkpoint requires --depth")),
        (Modality::Rgbd, Some(p)) => Some(pre.input(&normalize_depth(&read_input(p)?.to_gray::<f32>()))),
        (Modality::Rgb, Some(_)) => {
            eprintln!("warning: rgb checkpoint, --depth ignored");
            None
        }
        (Modality::Rgb, None) => None,
    };
    let pred = model.predict(&ckpt.params, &image, depth.as_ref()).map_err(failed)?;
    let name = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| invalid(format!("{}: no file name", input.display())))?;
    create_dir(out_dir)?;
    for (suffix, map) in [("sal", &pred.maps.saliency), ("bnd", &pred.maps.boundary)] {
        let path = out_dir.join(format!("{name}_{suffix}.png"));
        let bytes = encode_png(&quantize_map(map)).map_err(failed)?;
        write_file(&path, &bytes)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn read_map(path: &Path) -> Result<Tensor<f64>, Failure> {
    Ok(read_raster(path).map_err(invalid)?.to_gray::<f64>())
}

pub fn eval(pred_dir: &Path, gt_dir: &Path, csv: Option<&Path>) -> CmdResult {
    let list = |dir: &Path, suffixes: &[&str], ignore: &[&str]| {
        keyed_rasters(dir, suffixes, ignore).map_err(|e| invalid(format!("{}: {e}", dir.display())))
    };
    let preds = list(pred_dir, &["_sal", "_mask"], &["_bnd", "_depth"])?;
    let gts = list(gt_dir, &["_mask"], &["_bnd", "_depth", "_sal"])?;
    let pairing = pair(&preds, &gts);
    for u in &pairing.unmatched {
        eprintln!("warning: skipped {u}");
    }
    if pairing.pairs.is_empty() {
        return Err(invalid(format!(
            "no name-matched pairs between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let mut maps = Vec::with_capacity(pairing.pairs.len());
    for (name, p, g) in &pairing.pairs {
        let gt = read_map(g)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let mut pred = read_map(p)?;
        if pred.shape() != gt.shape() {
            eprintln!(
                "warning: {} is {:?}, resized to ground truth {:?}",
                p.display(),
                pred.shape(),
                gt.shape()
            );
            pred = resize_bilinear(&pred, gt.shape()[0], gt.shape()[1]);
        }
        maps.push((name.clone(), pred, gt));
    }
    let mut report = evaluate(&maps).map_err(failed)?;
    report.skipped = pairing.unmatched;
    print!("{}", report.table());
    println!("skipped {}", report.skipped.len());
    if let Some(path) = csv {
        write_file(path, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

pub fn inspect(config: Option<&Path>, overrides: &[String]) -> CmdResult {
    let cfg = match config {
        Some(p) => RunConfig::load(p, overrides),
        None => RunConfig::parse("", overrides),
    }
    .map_err(invalid)?;
    echo_config(&cfg);
    let model = Vst::new(&cfg.model).map_err(invalid)?;
    let g = model.grids();
    let m = &cfg.model;
    println!("input {}x{} {}", g.input.0, g.input.1, m.modality);
    let dims = [m.c, m.c, m.d];
    for (i, ((h, w), dim)) in g.encoder.iter().zip(dims).enumerate() {
        println!("encoder T{} {h}x{w} tokens {} dim {dim}", i + 1, h * w);
    }
    let chain: Vec<String> = g.decoder.iter().map(|(h, w)| format!("{h}x{w}")).collect();
    println!("decoder {}", chain.join(" -> "));
    println!("heads {} (token stages {})", m.heads(), m.heads_c());
    println!("parameters");
    for (module, n) in model.param_ledger() {
        println!("  {module:<28} {n:>12}");
    }
    let total = count_params(&cfg.model).map_err(invalid)?;
    println!("total {total} ({})", millions(total));
    Ok(())
}

pub fn gradcheck(seed: u64, precision: u32, components: &[String], fault: Option<&str>) -> CmdResult {
    if precision != 64 {
        return Err(invalid(format!("--precision {precision}: only 64-bit checks are supported")));
    }
    let fault: Option<OpKind> = fault.map(|f| f.parse().map_err(invalid)).transpose()?;
    let all: Vec<&str> = gradcheck::component_names().collect();
    for c in components {
        if !all.contains(&c.as_str()) {
            return Err(invalid(format!("unknown component {c:?}; known: {}", all.join(", "))));
        }
    }
    let selected: Vec<&str> = match components.is_empty() {
        true => all,
        false => all.into_iter().filter(|n| components.iter().any(|c| c == n)).collect(),
    };
    let mut failures = Vec::new();
    for name in selected {
        let r = gradcheck::run_component(name, seed, fault).map_err(failed)?;
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<26} {:.3e}  tol {:.0e}  probes {:>5}  {verdict}",
            r.name, r.report.max_rel_error, r.tolerance, r.report.checked
        );
        if !r.passed() {
            failures.push(r);
        }
    }
    if failures.is_empty() {
        return Ok(());
    }
    let detail: Vec<String> = failures
        .iter()
        .map(|r| {
            format!(
                "{} (rel err {:.3e} at input {} index {}: analytic {:.6e}, numeric {:.6e})",
                r.name, r.report.max_rel_error, r.report.input, r.report.index, r.report.analytic, r.report.numeric
            )
        })
        .collect();
    let cause = match fault {
        Some(op) => format!("; backward of op {op} was corrupted"),
        None => String::new(),
    };
    Err(failed(format!("gradient check failed: {}{cause}", detail.join(", "))))
}

pub fn synth(out_dir: &Path, count: usize, size: usize, seed: u64, depth: bool) -> CmdResult {
    if count == 0 || size < 8 {
        return Err(invalid("--count must be positive and --size at least 8"));
    }
    let manifest: PathBuf = synth::write_synth_dataset(out_dir, count, size, seed, depth).map_err(|e| match e {
        DataError::Io { .. } => failed(e),
        other => invalid(other),
    })?;
    println!("{}", manifest.display());
    Ok(())
}
