use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rcan_core::data::{
    image_to_tensor, read_manifest, read_ppm, tensor_to_image, write_ppm, DegradationSpec, ImageU8,
};
use rcan_core::eval::evaluate;
use rcan_core::gradcheck::suite::{run_suite, CheckResult, TOLERANCE};
use rcan_core::network::{build, infer, load_checkpoint, param_count, save_checkpoint, self_ensemble_forward};
use rcan_core::optim::l1_loss;
use rcan_core::rng::SplitMix64;
use rcan_core::train::{train, FixedPairs, PatchSampler, PatchSource, TrainEvent, TrainOutcome};
use rcan_core::{CaMode, RcanConfig, RcanParams, Real, Tensor4};

use crate::config::RunConfig;

/// `15592355` -> `"15.6 M"`.
pub fn format_millions(n: u64) -> String {
    format!("{:.1} M", n as f64 / 1e6)
}

pub fn params(cfg: &RunConfig, out: &mut dyn Write) -> Result<u64> {
    let n = param_count(&cfg.model)?;
    writeln!(out, "{n} ({})", format_millions(n))?;
    Ok(n)
}

pub fn load_images(manifest: &Path) -> Result<Vec<ImageU8>> {
    let paths = read_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    if paths.is_empty() {
        bail!("manifest {} lists no images", manifest.display());
    }
    paths
        .iter()
        .map(|p| read_ppm(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

/// Fresh random crops, or one fixed batch when `fixed_patches` is set.
pub fn patch_source(cfg: &RunConfig, images: &[ImageU8]) -> Result<Box<dyn PatchSource>> {
    if cfg.fixed_patches > 0 {
        let mut sampler = PatchSampler::new(images, &cfg.degradation, cfg.patch_size, cfg.fixed_patches, false)?;
        let (lr, hr) = sampler.next_batch(&mut SplitMix64::new(cfg.seed))?;
        Ok(Box::new(FixedPairs::from_tensors(lr, hr)))
    } else {
        Ok(Box::new(PatchSampler::new(
            images,
            &cfg.degradation,
            cfg.patch_size,
            cfg.batch_size,
            cfg.augment,
        )?))
    }
}

/// Trains from scratch and writes the final checkpoint (and intermediate
/// ones when `checkpoint_interval` is set). Log lines are `iter loss lr`.
pub fn train_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome> {
    let manifest = cfg.train_manifest.as_deref().context("config does not set `train_manifest`")?;
    let ckpt = cfg.checkpoint.clone().context("config does not set `checkpoint`")?;
    let images = load_images(manifest)?;
    let mut source = patch_source(cfg, &images)?;
    let mut log = match &cfg.log {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating log {}", p.display()))?,
        )),
        None => None,
    };
    let params = build(&cfg.model, cfg.seed)?;
    let outcome = train(&cfg.model, params, source.as_mut(), &cfg.train_options(), &mut |event| {
        match event {
            TrainEvent::Report(r) => {
                let line = r.log_line();
                if let Some(l) = log.as_mut() {
                    writeln!(l, "{line}")?;
                }
                writeln!(out, "{line}")?;
            }
            TrainEvent::Checkpoint { params, .. } => save_checkpoint(params, &cfg.model, &ckpt)?,
        }
        Ok(())
    })?;
    if let Some(mut l) = log {
        l.flush()?;
    }
    let first = outcome.history[0].loss;
    let last = outcome.history[outcome.history.len() - 1].loss;
    writeln!(
        out,
        "final loss {last:.6e} ({:.2}% of initial); checkpoint {}",
        100.0 * last / first,
        ckpt.display()
    )?;
    Ok(outcome)
}

/// Super-resolves one PPM image.
pub fn sr(checkpoint: &Path, input: &Path, output: &Path, ensemble: bool) -> Result<()> {
    let (params, config) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let img = read_ppm(input).with_context(|| format!("reading {}", input.display()))?;
    let x = image_to_tensor(&img);
    let y = if ensemble {
        self_ensemble_forward(&x, &params, &config)?
    } else {
        infer(&x, &params, &config)?
    };
    write_ppm(&tensor_to_image(&y, 0)?, output).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub manifest: &'a Path,
    pub scale: Option<usize>,
    /// `"bi"` or `"bd"`.
    pub degradation: &'a str,
    pub ensemble: bool,
    /// Optional CSV destination.
    pub csv: Option<&'a Path>,
}

/// Prints the text report, optionally writes CSV. Fails if any image could
/// not be evaluated.
pub fn eval(args: &EvalArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let (params, config) = load_checkpoint(args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let scale = args.scale.unwrap_or(config.scale);
    let spec = match args.degradation {
        "bi" => DegradationSpec::bicubic(scale),
        "bd" => DegradationSpec::blur_down(scale),
        other => bail!("unknown degradation `{other}`"),
    };
    let paths = read_manifest(args.manifest).with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let report = evaluate(&params, &config, &paths, &spec, args.ensemble)?;
    write!(out, "{}", report.to_text())?;
    if let Some(p) = args.csv {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if !report.failures.is_empty() {
        bail!("{} of {} images failed", report.failures.len(), paths.len());
    }
    Ok(())
}

/// Layer, block and full-network checks (8×8 input) for each seed.
pub fn gradcheck(model: &RcanConfig, seeds: &[u64], out: &mut dyn Write) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for &seed in seeds {
        let batch = run_suite(model, &[seed])?;
        for r in &batch {
            writeln!(
                out,
                "{:<24} seed {:>3}  max rel err {:.3e}  checked {:>6}  skipped {:>4}  {}",
                r.name,
                r.seed,
                r.max_rel_err,
                r.checked,
                r.skipped,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        results.extend(batch);
    }
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, Real::max);
    writeln!(out, "max relative error {worst:.3e} (tolerance {TOLERANCE:e})")?;
    if results.iter().any(|r| !r.passed()) {
        bail!("gradient check failed");
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub use_lsc: bool,
    pub use_ssc: bool,
    pub use_ca: bool,
    pub initial_loss: Real,
    pub final_loss: Real,
}

impl AblationRow {
    pub fn reduction(&self) -> Real {
        1.0 - self.final_loss / self.initial_loss
    }
}

/// The eight skip-connection / attention combinations in column order:
/// LSC toggles fastest, then SSC, then CA. Disabled attention is the
/// constant scale 1.
pub fn ablation_variants(base: &RcanConfig) -> Vec<RcanConfig> {
    (0..8)
        .map(|i| RcanConfig {
            use_lsc: i & 1 == 1,
            use_ssc: i >> 1 & 1 == 1,
            ca_mode: if i >> 2 & 1 == 1 { CaMode::Learned } else { CaMode::Constant(1.0) },
            ..base.clone()
        })
        .collect()
}

fn probe_loss(x: &Tensor4, y: &Tensor4, params: &RcanParams, config: &RcanConfig) -> Result<Real> {
    Ok(l1_loss(&infer(x, params, config)?, y)?.0)
}

/// Short training runs for each variant. Losses are measured before and
/// after training on one held-out batch drawn from the same images.
pub fn ablate_rows(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let manifest = cfg.train_manifest.as_deref().context("config does not set `train_manifest`")?;
    let images = load_images(manifest)?;
    let mut probe_sampler = PatchSampler::new(&images, &cfg.degradation, cfg.patch_size, cfg.batch_size, false)?;
    let (px, py) = probe_sampler.next_batch(&mut SplitMix64::new(cfg.seed ^ 0xAB1A7E))?;
    ablation_variants(&cfg.model)
        .into_iter()
        .map(|model| {
            let run_cfg = RunConfig {
                model: model.clone(),
                ..cfg.clone()
            };
            let params = build(&model, cfg.seed)?;
            let initial_loss = probe_loss(&px, &py, &params, &model)?;
            let mut source = patch_source(&run_cfg, &images)?;
            let outcome = train(&model, params, source.as_mut(), &run_cfg.train_options(), &mut |_| Ok(()))?;
            Ok(AblationRow {
                use_lsc: model.use_lsc,
                use_ssc: model.use_ssc,
                use_ca: model.ca_mode == CaMode::Learned,
                initial_loss,
                final_loss: probe_loss(&px, &py, &outcome.params, &model)?,
            })
        })
        .collect()
}

pub fn format_ablation(rows: &[AblationRow], steps: u64) -> String {
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut s = format!(
        "short-run L1 training losses after {steps} steps (not benchmark PSNR)\n\
         {:>3}  {:>3}  {:>3}  {:>3}  {:>12}  {:>12}  {:>9}\n",
        "#", "LSC", "SSC", "CA", "initial", "final", "reduction"
    );
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!(
            "{:>3}  {:>3}  {:>3}  {:>3}  {:>12.6e}  {:>12.6e}  {:>8.1}%\n",
            i + 1,
            mark(r.use_lsc),
            mark(r.use_ssc),
            mark(r.use_ca),
            r.initial_loss,
            r.final_loss,
            100.0 * r.reduction()
        ));
    }
    s
}

/// Runs [`ablate_rows`] and prints the grid. Fails if any run diverged.
pub fn ablate(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<AblationRow>> {
    let rows = ablate_rows(cfg)?;
    write!(out, "{}", format_ablation(&rows, cfg.steps))?;
    Ok(rows)
}
