//! Command-line front end. Every command writes a [`RunManifest`] beside its
//! outputs; data files depend only on flags, inputs and seeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::freqeval::{convergence_trace, epe_split, frequency_mask, trace_csv};
use crate::gradcheck::{gradcheck, TOLERANCE};
use crate::io::{atomic_write, read_image, read_pfm, synth_pair, write_pfm, write_pfm_image, DisparityMap, SynthSpec};
use crate::params::ParameterStore;
use crate::pipeline::infer;
use crate::tensor::Tensor;
use crate::train::{load_dataset, to_rgb, train_toy};
use crate::wavelet::{build_pyramid, pad_reflect};

#[derive(Parser, Debug)]
#[command(name = "wstereo", version, about = "Wavelet-decomposed iterative stereo matching")]
pub struct Cli {
    /// Worker threads for tensor kernels. Outputs do not depend on it.
    #[arg(long, global = true, env = "WSTEREO_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Pad {
    Reflect,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Haar decomposition of an image into per-level sub-band PFMs.
    Dwt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
        /// Reconstruct from the written bands and report the max abs error.
        #[arg(long)]
        verify: bool,
        /// Pad odd sizes instead of rejecting them.
        #[arg(long, value_enum)]
        pad: Option<Pad>,
    },
    /// Synthetic stereo pair from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a pair directory (or a directory of them) and save weights.
    TrainToy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the model and write one disparity PFM per iteration plus the final one.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config saved next to the weights.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Frequency-split metrics and per-iteration convergence trace.
    Eval {
        /// A disparity PFM or an `infer` output directory.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Image whose edges define the high-frequency region.
        #[arg(long)]
        ref_image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a toy instance.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dwt { .. } => "dwt",
            Command::Synth { .. } => "synth",
            Command::TrainToy { .. } => "train-toy",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written for every command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock seconds per stage.
    pub stage_seconds: IndexMap<String, f64>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

struct Run {
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn new(command: &str, threads: Option<usize>) -> Self {
        Run {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: None,
                seed: None,
                threads,
                inputs: Vec::new(),
                outputs: Vec::new(),
                stage_seconds: IndexMap::new(),
            },
            clock: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(digest(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(digest(path)?);
        Ok(())
    }

    fn config(&mut self, cfg: &ModelConfig) {
        self.manifest.config_hash = Some(cfg.hash());
        self.manifest.seed = Some(cfg.seed);
    }

    /// Close the current stage.
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.manifest.stage_seconds.entry(stage.to_string()).or_insert(0.0) += (now - self.clock).as_secs_f64();
        self.clock = now;
    }

    fn finish(self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest)?;
        atomic_write(path, json.as_bytes())
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p),
        None => Ok(ModelConfig::default()),
    }
}

fn batched_rgb(img: Tensor) -> Result<Tensor> {
    let rgb = to_rgb(img)?;
    let s = rgb.shape().to_vec();
    rgb.reshape([1, s[0], s[1], s[2]])
}

fn squeeze_map(d: &Tensor) -> Result<DisparityMap> {
    let s = d.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok(DisparityMap::dense(d.clone().reshape([h, w])?))
}

fn cmd_dwt(run: &mut Run, input: &Path, levels: usize, out: &Path, verify: bool, pad: Option<Pad>) -> Result<()> {
    run.input(input)?;
    let img = read_image(input)?;
    let s = img.shape().to_vec();
    let mut x = img.reshape([1, s[0], s[1], s[2]])?.cast::<f64>();
    if levels == 0 {
        return Err(Error::Range("--levels must be at least 1".into()));
    }
    if pad == Some(Pad::Reflect) {
        x = pad_reflect(&x, 1 << levels)?;
    }
    run.lap("read");
    let pyr = build_pyramid(&x, levels)?;
    run.lap("decompose");
    std::fs::create_dir_all(out)?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    for (i, b) in pyr.levels.iter().enumerate() {
        for (band, t) in [("ll", &b.ll), ("lh", &b.lh), ("hl", &b.hl), ("hh", &b.hh)] {
            let (_, c, h, w) = t.dims4()?;
            let path = out.join(format!("{stem}.l{}.{band}.pfm", i + 1));
            write_pfm_image(&path, &t.cast::<f32>().reshape([c, h, w])?)?;
            run.output(&path)?;
        }
    }
    run.lap("write");
    if verify {
        let err = pyr.reconstruct()?.max_abs_diff(&x);
        println!("max-abs-err {err:.3e}");
        if !(err < 1e-4) {
            return Err(Error::Numerical {
                stage: "dwt verify".into(),
                msg: format!("reconstruction error {err:e}"),
            });
        }
        run.lap("verify");
    }
    Ok(())
}

fn cmd_synth(run: &mut Run, spec_path: &Path, out: &Path) -> Result<()> {
    run.input(spec_path)?;
    let text = std::fs::read_to_string(spec_path)?;
    let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec_path.display())))?;
    run.manifest.seed = Some(spec.seed);
    let pair = synth_pair(&spec)?;
    run.lap("synthesize");
    std::fs::create_dir_all(out)?;
    let paths = [out.join("left.pfm"), out.join("right.pfm"), out.join("disp.pfm"), out.join("spec.json")];
    write_pfm_image(&paths[0], &pair.left)?;
    write_pfm_image(&paths[1], &pair.right)?;
    write_pfm(&paths[2], &pair.gt)?;
    atomic_write(&paths[3], serde_json::to_string_pretty(&pair.spec)?.as_bytes())?;
    for p in &paths {
        run.output(p)?;
    }
    run.lap("write");
    Ok(())
}

fn cmd_train(run: &mut Run, config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    if let Some(c) = config {
        run.input(c)?;
    }
    let cfg = load_config(config)?;
    run.config(&cfg);
    let samples = load_dataset(data)?;
    run.lap("load");
    let every = (cfg.train.steps / 20).max(1);
    let outcome = train_toy(&samples, &cfg, |step, loss| {
        if step % every == 0 || step + 1 == cfg.train.steps {
            eprintln!("step {step:>5}  loss {loss:.6}");
        }
    })?;
    run.lap("train");
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    outcome.params.save(out)?;
    let csv = sibling(out, "loss.csv");
    atomic_write(&csv, outcome.loss_csv().as_bytes())?;
    let cfg_out = sibling(out, "config.json");
    atomic_write(&cfg_out, cfg.to_json().as_bytes())?;
    for p in [out, &csv, &cfg_out] {
        run.output(p)?;
    }
    run.lap("write");
    Ok(())
}

fn cmd_infer(
    run: &mut Run,
    weights: &Path,
    left: &Path,
    right: &Path,
    iters: Option<usize>,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let saved = sibling(weights, "config.json");
    let config = config.map(Path::to_path_buf).or_else(|| saved.is_file().then_some(saved));
    if let Some(c) = &config {
        run.input(c)?;
    }
    let cfg = load_config(config.as_deref())?;
    run.config(&cfg);
    for p in [weights, left, right] {
        run.input(p)?;
    }
    let params = ParameterStore::load(weights)?;
    let l = batched_rgb(read_image(left)?)?;
    let r = batched_rgb(read_image(right)?)?;
    run.lap("load");
    let result = infer(&params, &cfg, &l, &r, iters.unwrap_or(cfg.n_k_eval))?;
    run.lap("infer");
    run.manifest.stage_seconds.insert("update".into(), result.update_seconds());
    std::fs::create_dir_all(out)?;
    let width = result.disparities.len().to_string().len().max(2);
    for (k, d) in result.disparities.iter().enumerate() {
        let path = out.join(format!("iter_{:0width$}.pfm", k + 1));
        write_pfm(&path, &squeeze_map(d)?)?;
        run.output(&path)?;
    }
    let fin = out.join("final.pfm");
    write_pfm(&fin, &squeeze_map(result.last())?)?;
    run.output(&fin)?;
    run.lap("write");
    Ok(())
}

/// Iteration files of an `infer` directory in order, and the final map.
fn prediction_files(pred: &Path) -> Result<(Vec<PathBuf>, PathBuf)> {
    if pred.is_file() {
        return Ok((vec![pred.to_path_buf()], pred.to_path_buf()));
    }
    let mut iters: Vec<PathBuf> = std::fs::read_dir(pred)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("iter_") && name.ends_with(".pfm")
        })
        .collect();
    iters.sort();
    let fin = pred.join("final.pfm");
    let fin = if fin.is_file() {
        fin
    } else {
        iters
            .last()
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: no disparity files", pred.display())))?
    };
    if iters.is_empty() {
        iters.push(fin.clone());
    }
    Ok((iters, fin))
}

fn cmd_eval(run: &mut Run, pred: &Path, gt: &Path, ref_image: &Path, out: &Path, trace: Option<&Path>) -> Result<()> {
    let (iters, fin) = prediction_files(pred)?;
    for p in iters.iter().chain([&fin, &gt.to_path_buf(), &ref_image.to_path_buf()]) {
        run.input(p)?;
    }
    let gt_map = read_pfm(gt)?;
    let mask = frequency_mask(&read_image(ref_image)?)?;
    let final_pred = read_pfm(&fin)?;
    let per_iter = iters
        .iter()
        .map(|p| read_pfm(p).map(|m| m.values))
        .collect::<Result<Vec<_>>>()?;
    run.lap("load");
    let metrics = epe_split(&final_pred.values, &gt_map.values, &mask, Some(&gt_map.valid))?;
    let rows = convergence_trace(&per_iter, &gt_map.values, &mask, Some(&gt_map.valid))?;
    run.lap("evaluate");
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    atomic_write(out, serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    run.output(out)?;
    if let Some(t) = trace {
        atomic_write(t, trace_csv(&rows).as_bytes())?;
        run.output(t)?;
    }
    run.lap("write");
    println!(
        "epe_total {:.6}  epe_high {}  epe_low {}  d1 {:.3}%",
        metrics.epe_total,
        metrics.epe_high.map_or("n/a".into(), |v| format!("{v:.6}")),
        metrics.epe_low.map_or("n/a".into(), |v| format!("{v:.6}")),
        metrics.d1
    );
    Ok(())
}

fn cmd_gradcheck(run: &mut Run, config: Option<&Path>, seed: u64) -> Result<()> {
    if let Some(c) = config {
        run.input(c)?;
    }
    let cfg = load_config(config)?;
    run.config(&cfg);
    run.manifest.seed = Some(seed);
    let report = gradcheck(&cfg, seed)?;
    run.lap("gradcheck");
    for e in &report.entries {
        println!(
            "{:<28} {:>7} {:+.9e} {:+.9e} {:.2e} {}",
            e.name,
            e.numel,
            e.analytic,
            e.numeric,
            e.rel_err,
            if e.rel_err < TOLERANCE { "ok" } else { "FAIL" }
        );
    }
    println!("max rel err {:.3e} over {} tensors", report.max_rel_err, report.entries.len());
    if !report.passed() {
        let names: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
        return Err(Error::Numerical {
            stage: "gradcheck".into(),
            msg: format!("relative error >= {TOLERANCE:e} for {}", names.join(", ")),
        });
    }
    Ok(())
}

/// Manifest location for a command's outputs.
fn manifest_path(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::Dwt { out, .. } | Command::Synth { out, .. } | Command::Infer { out, .. } => Some(out.join("manifest.json")),
        Command::TrainToy { out, .. } | Command::Eval { out, .. } => Some(sibling(out, "manifest.json")),
        Command::Gradcheck { .. } => None,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut run = Run::new(cli.command.name(), cli.threads);
    match &cli.command {
        Command::Dwt { input, levels, out, verify, pad } => cmd_dwt(&mut run, input, *levels, out, *verify, *pad)?,
        Command::Synth { spec, out } => cmd_synth(&mut run, spec, out)?,
        Command::TrainToy { config, data, out } => cmd_train(&mut run, config.as_deref(), data, out)?,
        Command::Infer {
            weights,
            left,
            right,
            iters,
            out,
            config,
        } => cmd_infer(&mut run, weights, left, right, *iters, out, config.as_deref())?,
        Command::Eval {
            pred,
            gt,
            ref_image,
            out,
            trace,
        } => cmd_eval(&mut run, pred, gt, ref_image, out, trace.as_deref())?,
        Command::Gradcheck { config, seed } => cmd_gradcheck(&mut run, config.as_deref(), *seed)?,
    }
    match manifest_path(&cli.command) {
        Some(p) => run.finish(&p),
        None => {
            println!("{}", serde_json::to_string(&run.manifest)?);
            Ok(())
        }
    }
}

/// Parse `args`, run inside a pool of `--threads` workers, and map the
/// outcome to a process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 3;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 3;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
