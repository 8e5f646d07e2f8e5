//! Dataset evaluation: degrade each HR image, super-resolve it and score
//! the result on quantised luma.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{degrade, image_to_tensor, read_ppm, tensor_to_image, DegradationSpec, ImageU8};
use crate::error::{Error, Result};
use crate::metrics::{psnr, quantized_y, ssim};
use crate::network::{infer, self_ensemble, RcanConfig, RcanParams};
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEntry {
    pub name: String,
    pub psnr_db: Real,
    pub ssim: Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalFailure {
    pub name: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMeta {
    pub scale: usize,
    pub degradation: String,
    /// Border pixels removed on every side before scoring.
    pub crop: usize,
    pub ensemble: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub meta: EvalMeta,
    /// In manifest order.
    pub entries: Vec<EvalEntry>,
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> Option<Real> {
        self.mean(|e| e.psnr_db)
    }

    pub fn mean_ssim(&self) -> Option<Real> {
        self.mean(|e| e.ssim)
    }

    fn mean(&self, f: impl Fn(&EvalEntry) -> Real) -> Option<Real> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(f).sum::<Real>() / self.entries.len() as Real)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = format!(
            "scale x{}  degradation {}  crop {}  self-ensemble {}\n",
            m.scale,
            m.degradation,
            m.crop,
            if m.ensemble { "on" } else { "off" }
        );
        let width = self.entries.iter().map(|e| e.name.len()).chain([5]).max().unwrap_or(5);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM");
        for e in &self.entries {
            let _ = writeln!(out, "{:<width$}  {:>9.3}  {:>7.4}", e.name, e.psnr_db, e.ssim);
        }
        if let (Some(p), Some(s)) = (self.mean_psnr(), self.mean_ssim()) {
            let _ = writeln!(out, "{:<width$}  {:>9.3}  {:>7.4}", "mean", p, s);
        }
        for f in &self.failures {
            let _ = writeln!(out, "failed {}: {}", f.name, f.error);
        }
        out
    }

    /// `name,psnr_db,ssim` rows, one per evaluated image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.name, e.psnr_db, e.ssim);
        }
        out
    }
}

/// Scores one HR image. `upscale` maps a `1×3×h×w` LR tensor in `[0, 1]`
/// to its `scale×` counterpart.
pub fn evaluate_image<F>(name: &str, hr: &ImageU8, spec: &DegradationSpec, ensemble: bool, upscale: &F) -> Result<EvalEntry>
where
    F: Fn(&Tensor4) -> Result<Tensor4> + Sync,
{
    let (hr, lr) = degrade(hr, spec)?;
    let x = image_to_tensor(&lr);
    let y = if ensemble { self_ensemble(&x, upscale)? } else { upscale(&x)? };
    let s = y.shape();
    if (s.h, s.w) != (hr.height(), hr.width()) {
        return Err(Error::shape(
            "evaluate",
            format!("output {}x{} for {}x{} target", s.h, s.w, hr.height(), hr.width()),
        ));
    }
    let sr = tensor_to_image(&y, 0)?;
    let (ya, yb) = (quantized_y(&sr), quantized_y(&hr));
    Ok(EvalEntry {
        name: name.to_string(),
        psnr_db: psnr(&ya, &yb, spec.scale)?,
        ssim: ssim(&ya.shave(spec.scale)?, &yb.shave(spec.scale)?)?,
    })
}

fn entry_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Evaluates every image with an arbitrary upscaler. Images are processed in
/// parallel; failures are recorded and do not stop the run.
pub fn evaluate_with<F>(paths: &[PathBuf], spec: &DegradationSpec, ensemble: bool, upscale: F) -> Result<EvalReport>
where
    F: Fn(&Tensor4) -> Result<Tensor4> + Sync,
{
    spec.validate()?;
    let results: Vec<(String, Result<EvalEntry>)> = paths
        .par_iter()
        .map(|p| {
            let name = entry_name(p);
            let r = read_ppm(p).and_then(|img| evaluate_image(&name, &img, spec, ensemble, &upscale));
            (name, r)
        })
        .collect();
    let mut report = EvalReport {
        meta: EvalMeta {
            scale: spec.scale,
            degradation: spec.label().to_string(),
            crop: spec.scale,
            ensemble,
        },
        entries: Vec::new(),
        failures: Vec::new(),
    };
    for (name, r) in results {
        match r {
            Ok(e) => report.entries.push(e),
            Err(e) => report.failures.push(EvalFailure {
                name,
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Evaluates a trained network.
pub fn evaluate(
    params: &RcanParams,
    config: &RcanConfig,
    paths: &[PathBuf],
    spec: &DegradationSpec,
    ensemble: bool,
) -> Result<EvalReport> {
    if config.scale != spec.scale {
        return Err(Error::Config(format!(
            "network upscales x{} but the degradation is x{}",
            config.scale, spec.scale
        )));
    }
    evaluate_with(paths, spec, ensemble, |x| infer(x, params, config))
}
