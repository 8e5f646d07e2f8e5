//! Deterministic training loop: L1 loss, Adam, step-halving schedule.

use crate::data::{augment, degrade, image_to_tensor, sample_patch_pair, DegradationSpec, ImageU8, PatchPair};
use crate::error::{Error, Result};
use crate::network::{backward, forward, RcanConfig, RcanParams};
use crate::optim::{adam_step, l1_loss, lr_at, AdamHyper, AdamState};
use crate::rng::SplitMix64;
use crate::tensor::{Real, Shape4, Tensor4};

/// Supplies `(lr, hr)` training batches.
pub trait PatchSource {
    fn next_batch(&mut self, rng: &mut SplitMix64) -> Result<(Tensor4, Tensor4)>;
}

/// Stacks patch pairs into batch tensors with values in `[0, 1]`.
pub fn stack_pairs(pairs: &[PatchPair]) -> Result<(Tensor4, Tensor4)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cannot build an empty batch".into()));
    }
    let stack = |imgs: Vec<&ImageU8>| -> Result<Tensor4> {
        let (h, w) = (imgs[0].height(), imgs[0].width());
        let mut data = Vec::with_capacity(imgs.len() * 3 * h * w);
        for img in &imgs {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::shape("stack_pairs", "patches in a batch differ in size".to_string()));
            }
            data.extend(image_to_tensor(img).into_data());
        }
        Tensor4::from_vec(Shape4::new(imgs.len(), 3, h, w), data)
    };
    Ok((
        stack(pairs.iter().map(|p| &p.lr).collect())?,
        stack(pairs.iter().map(|p| &p.hr).collect())?,
    ))
}

/// The same batch every step.
#[derive(Clone, Debug)]
pub struct FixedPairs {
    lr: Tensor4,
    hr: Tensor4,
}

impl FixedPairs {
    pub fn new(pairs: &[PatchPair]) -> Result<Self> {
        let (lr, hr) = stack_pairs(pairs)?;
        Ok(Self { lr, hr })
    }

    pub fn from_tensors(lr: Tensor4, hr: Tensor4) -> Self {
        Self { lr, hr }
    }
}

impl PatchSource for FixedPairs {
    fn next_batch(&mut self, _rng: &mut SplitMix64) -> Result<(Tensor4, Tensor4)> {
        Ok((self.lr.clone(), self.hr.clone()))
    }
}

/// Random aligned crops from a set of HR images, degraded once up front.
/// Images are visited in a freshly shuffled order each epoch; each crop gets
/// a uniformly drawn dihedral augmentation when enabled.
pub struct PatchSampler {
    images: Vec<(ImageU8, ImageU8)>,
    scale: usize,
    patch_lr: usize,
    batch: usize,
    augment: bool,
    order: Vec<usize>,
    cursor: usize,
}

impl PatchSampler {
    pub fn new(hr_images: &[ImageU8], spec: &DegradationSpec, patch_lr: usize, batch: usize, augment: bool) -> Result<Self> {
        if hr_images.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let images = hr_images.iter().map(|img| degrade(img, spec)).collect::<Result<Vec<_>>>()?;
        for (i, (_, lr)) in images.iter().enumerate() {
            if lr.height() < patch_lr || lr.width() < patch_lr {
                return Err(Error::InvalidArgument(format!(
                    "training image {i} degrades to {}x{}, smaller than the {patch_lr}-pixel patch",
                    lr.height(),
                    lr.width()
                )));
            }
        }
        Ok(Self {
            images,
            scale: spec.scale,
            patch_lr,
            batch,
            augment,
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn next_image(&mut self, rng: &mut SplitMix64) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.images.len()).collect();
            rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

impl PatchSource for PatchSampler {
    fn next_batch(&mut self, rng: &mut SplitMix64) -> Result<(Tensor4, Tensor4)> {
        let mut pairs = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let i = self.next_image(rng);
            let (hr, lr) = &self.images[i];
            let (pair, _) = sample_patch_pair(hr, lr, self.scale, self.patch_lr, rng)?;
            pairs.push(if self.augment { augment(&pair, rng.below(8))? } else { pair });
        }
        stack_pairs(&pairs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: u64,
    pub seed: u64,
    pub hyper: AdamHyper,
    /// Emit a [`TrainEvent::Report`] every this many iterations (0 = never).
    pub report_interval: u64,
    /// Emit a [`TrainEvent::Checkpoint`] every this many iterations (0 = only
    /// at the end).
    pub checkpoint_interval: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            seed: 0,
            hyper: AdamHyper::default(),
            report_interval: 100,
            checkpoint_interval: 0,
        }
    }
}

/// Loss measured at `iter` before that iteration's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub iter: u64,
    pub loss: Real,
    pub lr: Real,
}

impl TrainRecord {
    /// The `iter loss lr` log line.
    pub fn log_line(&self) -> String {
        format!("{} {:.9e} {:e}", self.iter, self.loss, self.lr)
    }
}

pub enum TrainEvent<'a> {
    Report(&'a TrainRecord),
    Checkpoint { iter: u64, params: &'a RcanParams },
}

pub struct TrainOutcome {
    pub params: RcanParams,
    /// One record per iteration `0..=steps`; the last one is measured after
    /// the final update.
    pub history: Vec<TrainRecord>,
}

fn batch_loss(x: &Tensor4, y: &Tensor4, params: &RcanParams, config: &RcanConfig) -> Result<Real> {
    let (pred, _) = forward(x, params, config)?;
    Ok(l1_loss(&pred, y)?.0)
}

/// Runs `opts.steps` Adam updates. Deterministic given `opts.seed`, the
/// initial parameters and the source. Aborts with
/// [`Error::NonFiniteLoss`] if the loss stops being finite.
pub fn train(
    config: &RcanConfig,
    mut params: RcanParams,
    source: &mut dyn PatchSource,
    opts: &TrainOptions,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = SplitMix64::new(opts.seed);
    let mut state = AdamState::new(&params);
    let mut history = Vec::with_capacity(opts.steps as usize + 1);
    let due = |iter: u64, every: u64| every > 0 && iter % every == 0;
    for iter in 0..opts.steps {
        let (x, y) = source.next_batch(&mut rng)?;
        let lr = lr_at(iter, &opts.hyper);
        let (pred, tape) = forward(&x, &params, config)?;
        let (loss, grad) = l1_loss(&pred, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        let (grads, _) = backward(&grad, tape)?;
        let rec = TrainRecord { iter, loss, lr };
        history.push(rec);
        if due(iter, opts.report_interval) {
            observer(TrainEvent::Report(&rec))?;
        }
        adam_step(&mut params, &grads, &mut state, &opts.hyper, lr)?;
        if iter > 0 && due(iter, opts.checkpoint_interval) {
            observer(TrainEvent::Checkpoint { iter, params: &params })?;
        }
    }
    let (x, y) = source.next_batch(&mut rng)?;
    let loss = batch_loss(&x, &y, &params, config)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iter: opts.steps });
    }
    let last = TrainRecord {
        iter: opts.steps,
        loss,
        lr: lr_at(opts.steps, &opts.hyper),
    };
    history.push(last);
    observer(TrainEvent::Report(&last))?;
    observer(TrainEvent::Checkpoint {
        iter: opts.steps,
        params: &params,
    })?;
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::network::build;

    fn fixture(seed: u64) -> FixedPairs {
        let hr = synthetic::scene(16, 16, seed);
        let (hr, lr) = degrade(&hr, &DegradationSpec::bicubic(2)).unwrap();
        FixedPairs::new(&[PatchPair { lr, hr }]).unwrap()
    }

    fn quiet(_: TrainEvent<'_>) -> Result<()> {
        Ok(())
    }

    fn opts(steps: u64) -> TrainOptions {
        TrainOptions {
            steps,
            hyper: AdamHyper {
                lr0: 1e-3,
                ..AdamHyper::default()
            },
            report_interval: 5,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn zero_steps_reports_initial_state() {
        let cfg = RcanConfig::tiny(2);
        let p0 = build(&cfg, 1).unwrap();
        let mut events = Vec::new();
        let out = train(&cfg, p0.clone(), &mut fixture(1), &opts(0), &mut |e| {
            events.push(match e {
                TrainEvent::Report(r) => format!("report {}", r.iter),
                TrainEvent::Checkpoint { iter, .. } => format!("checkpoint {iter}"),
            });
            Ok(())
        })
        .unwrap();
        assert_eq!(out.params, p0);
        assert_eq!(out.history.len(), 1);
        assert_eq!(events, ["report 0", "checkpoint 0"]);
    }

    #[test]
    fn deterministic_and_decreasing() {
        let cfg = RcanConfig::tiny(2);
        let run = || train(&cfg, build(&cfg, 2).unwrap(), &mut fixture(2), &opts(30), &mut quiet).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.len(), 31);
        assert!(a.history[30].loss < a.history[0].loss);
    }

    #[test]
    fn nan_input_aborts_with_iteration() {
        let cfg = RcanConfig::tiny(2);
        let lr = Tensor4::full(Shape4::new(1, 3, 4, 4), Real::NAN);
        let hr = Tensor4::zeros(Shape4::new(1, 3, 8, 8));
        let mut src = FixedPairs::from_tensors(lr, hr);
        let err = train(&cfg, build(&cfg, 0).unwrap(), &mut src, &opts(5), &mut quiet).err().unwrap();
        assert!(matches!(err, Error::NonFiniteLoss { iter: 0 }), "{err}");
    }

    #[test]
    fn sampler_batches() {
        let imgs: Vec<ImageU8> = (0..3).map(|s| synthetic::scene(20, 24, s)).collect();
        let mut s = PatchSampler::new(&imgs, &DegradationSpec::bicubic(2), 6, 4, true).unwrap();
        let mut rng = SplitMix64::new(3);
        let (x, y) = s.next_batch(&mut rng).unwrap();
        assert_eq!(x.shape(), Shape4::new(4, 3, 6, 6));
        assert_eq!(y.shape(), Shape4::new(4, 3, 12, 12));
        let mut s2 = PatchSampler::new(&imgs, &DegradationSpec::bicubic(2), 6, 4, true).unwrap();
        let (x2, _) = s2.next_batch(&mut SplitMix64::new(3)).unwrap();
        assert!(x.bitwise_eq(&x2));
        assert!(PatchSampler::new(&imgs, &DegradationSpec::bicubic(2), 11, 1, false).is_err());
    }
}
