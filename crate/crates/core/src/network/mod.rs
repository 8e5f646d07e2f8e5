//! The full RCAN model:
//!
//! ```text
//! I_LR -> [- mean] -> head conv -> RIR trunk -> upscaler -> reconstruction conv -> [+ mean] -> I_SR
//! ```
//!
//! The upscaler is a cascade of `conv(C -> C·u²) + pixel_shuffle(u)` stages:
//! one stage with `u = scale` for ×2 and ×3, two `u = 2` stages for ×4 and
//! three for ×8.

mod checkpoint;
mod ensemble;

use std::hash::Hasher;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, validate_params, write_checkpoint, CHECKPOINT_VERSION};
pub use ensemble::{self_ensemble, self_ensemble_forward};

use crate::blocks::{rir_apply, rir_backward, rir_forward, CaParams, RcabParams, RgParams, RirParams, RirTape};
use crate::error::{Error, Result};
use crate::layers::{conv2d, conv2d_apply, conv2d_backward, pixel_shuffle, pixel_shuffle_backward, Conv2dParams, ConvTape};
use crate::params::{join, NamedTensor, Params};
use crate::rng::SplitMix64;
use crate::tensor::{Real, Shape4, Tensor4};

/// Number of image channels consumed and produced (RGB).
pub const COLORS: usize = 3;

/// Per-channel RGB mean of the DIV2K training set, in `[0, 1]`.
pub const DIV2K_RGB_MEAN: [Real; 3] = [0.4488, 0.4371, 0.4040];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CaMode {
    Learned,
    /// Fixed scale `α` in place of attention: 1 gives the plain residual
    /// block, 0.1 the constant-rescaling residual block.
    Constant(Real),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcanConfig {
    pub n_groups: usize,
    pub n_blocks: usize,
    pub n_feats: usize,
    pub reduction: usize,
    pub scale: usize,
    pub use_lsc: bool,
    pub use_ssc: bool,
    pub ca_mode: CaMode,
    pub mean_shift: Option<[Real; 3]>,
}

impl Default for RcanConfig {
    /// 10 groups of 20 blocks, 64 features, reduction 16, ×4.
    fn default() -> Self {
        Self {
            n_groups: 10,
            n_blocks: 20,
            n_feats: 64,
            reduction: 16,
            scale: 4,
            use_lsc: true,
            use_ssc: true,
            ca_mode: CaMode::Learned,
            mean_shift: Some(DIV2K_RGB_MEAN),
        }
    }
}

impl RcanConfig {
    /// Two groups of two blocks, 8 features, reduction 4: small enough for
    /// exhaustive gradient checks and desk-scale training.
    pub fn tiny(scale: usize) -> Self {
        Self {
            n_groups: 2,
            n_blocks: 2,
            n_feats: 8,
            reduction: 4,
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_groups == 0 || self.n_blocks == 0 || self.n_feats == 0 {
            return bad("group count, block count and feature width must be positive".into());
        }
        if self.reduction == 0 || self.n_feats % self.reduction != 0 {
            return bad(format!(
                "feature width {} is not divisible by reduction ratio {}",
                self.n_feats, self.reduction
            ));
        }
        if upscale_stages(self.scale).is_none() {
            return bad(format!("scale must be one of 2, 3, 4, 8; got {}", self.scale));
        }
        if let CaMode::Constant(a) = self.ca_mode {
            if !a.is_finite() {
                return bad("constant attention scale must be finite".into());
            }
        }
        if let Some(m) = self.mean_shift {
            if m.iter().any(|v| !v.is_finite()) {
                return bad("mean shift must be finite".into());
            }
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> usize {
        self.n_feats / self.reduction
    }
}

/// Pixel-shuffle factors of the upscaler for a given scale.
pub fn upscale_stages(scale: usize) -> Option<&'static [usize]> {
    match scale {
        2 => Some(&[2]),
        3 => Some(&[3]),
        4 => Some(&[2, 2]),
        8 => Some(&[2, 2, 2]),
        _ => None,
    }
}

/// The parameter set Θ.
///
/// Tensor names: `head.*`, `body.groups.{g}.blocks.{b}.conv1.*`,
/// `….conv2.*`, `….ca.down.*`, `….ca.up.*`, `body.groups.{g}.tail.*`,
/// `body.tail.*`, `upsample.{i}.*`, `tail.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct RcanParams {
    pub head: Conv2dParams,
    pub body: RirParams,
    pub upsample: Vec<Conv2dParams>,
    pub tail: Conv2dParams,
}

impl Params for RcanParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>)) {
        self.head.visit(&join(prefix, "head"), f);
        self.body.visit(&join(prefix, "body"), f);
        for (i, u) in self.upsample.iter().enumerate() {
            u.visit(&join(prefix, &format!("upsample.{i}")), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real])) {
        self.head.visit_mut(&join(prefix, "head"), f);
        self.body.visit_mut(&join(prefix, "body"), f);
        for (i, u) in self.upsample.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("upsample.{i}")), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}

impl RcanParams {
    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: &RcanConfig) -> Result<Self> {
        config.validate()?;
        let c = config.n_feats;
        let ca = || match config.ca_mode {
            CaMode::Learned => CaParams::Learned {
                down: Conv2dParams::zeros(config.bottleneck(), c, 1),
                up: Conv2dParams::zeros(c, config.bottleneck(), 1),
            },
            CaMode::Constant(a) => CaParams::Constant(a),
        };
        let group = || RgParams {
            blocks: (0..config.n_blocks)
                .map(|_| RcabParams {
                    conv1: Conv2dParams::zeros(c, c, 3),
                    conv2: Conv2dParams::zeros(c, c, 3),
                    ca: ca(),
                })
                .collect(),
            tail: Conv2dParams::zeros(c, c, 3),
            use_ssc: config.use_ssc,
        };
        let stages = upscale_stages(config.scale).expect("validated");
        Ok(Self {
            head: Conv2dParams::zeros(c, COLORS, 3),
            body: RirParams {
                groups: (0..config.n_groups).map(|_| group()).collect(),
                tail: Conv2dParams::zeros(c, c, 3),
                use_lsc: config.use_lsc,
            },
            upsample: stages
                .iter()
                .map(|&u| Conv2dParams::zeros(c * u * u, c, 3))
                .collect(),
            tail: Conv2dParams::zeros(COLORS, c, 3),
        })
    }
}

/// Half-width of the uniform initialisation range of a weight tensor with
/// dims `(out, in, k, k)`: `sqrt(6 / (in·k²))`, evaluated in 32-bit.
pub fn init_bound(dims: &[usize]) -> f32 {
    let fan_in: usize = dims[1..].iter().product();
    (6.0f32 / fan_in as f32).sqrt()
}

/// Builds a freshly initialised network.
///
/// Weight tensors are filled in visiting order, each in row-major order,
/// with `w = (2u - 1)·b` computed in 32-bit where `u = rng.next_f32()`,
/// `b = init_bound(dims)` and `rng = SplitMix64::new(seed)`. Biases are zero.
/// All initial values are therefore exactly representable in 32 bits.
pub fn build(config: &RcanConfig, seed: u64) -> Result<RcanParams> {
    let mut params = RcanParams::zeros(config)?;
    let dims: Vec<Vec<usize>> = params.named_tensors().into_iter().map(|t| t.dims).collect();
    let mut rng = SplitMix64::new(seed);
    let mut i = 0;
    params.visit_mut("", &mut |_, values| {
        let d = &dims[i];
        i += 1;
        if d.len() == 4 {
            let b = init_bound(d);
            for v in values.iter_mut() {
                *v = ((2.0 * rng.next_f32() - 1.0) * b) as Real;
            }
        }
    });
    Ok(params)
}

/// Exact number of scalars in [`RcanParams`] for `config`, by layer arithmetic.
pub fn param_count(config: &RcanConfig) -> Result<u64> {
    config.validate()?;
    let conv = |o: usize, i: usize, k: usize| (o * i * k * k + o) as u64;
    let c = config.n_feats;
    let ca = match config.ca_mode {
        CaMode::Learned => conv(config.bottleneck(), c, 1) + conv(c, config.bottleneck(), 1),
        CaMode::Constant(_) => 0,
    };
    let rcab = 2 * conv(c, c, 3) + ca;
    let group = config.n_blocks as u64 * rcab + conv(c, c, 3);
    let trunk = config.n_groups as u64 * group + conv(c, c, 3);
    let upsample: u64 = upscale_stages(config.scale)
        .expect("validated")
        .iter()
        .map(|&u| conv(c * u * u, c, 3))
        .sum();
    Ok(conv(c, COLORS, 3) + trunk + upsample + conv(COLORS, c, 3))
}

fn mean_tensor(n: usize, mean: [Real; 3]) -> Tensor4 {
    Tensor4::from_fn(Shape4::new(n, COLORS, 1, 1), |_, c, _, _| mean[c])
}

fn check_input(x: &Tensor4) -> Result<()> {
    if x.shape().c != COLORS {
        return Err(Error::ChannelMismatch {
            layer: "head".into(),
            expected: COLORS,
            got: x.shape().c,
        });
    }
    Ok(())
}

pub struct RcanTape<'p> {
    head: ConvTape<'p>,
    body: RirTape<'p>,
    upsample: Vec<(ConvTape<'p>, usize)>,
    tail: ConvTape<'p>,
}

impl RcanTape<'_> {
    /// Fingerprint of every ReLU activation pattern in the network.
    pub fn fingerprint(&self, h: &mut impl Hasher) {
        self.body.fingerprint(h);
    }
}

/// Inference without recording a tape. Bit-identical to [`forward`].
pub fn infer(x: &Tensor4, params: &RcanParams, config: &RcanConfig) -> Result<Tensor4> {
    check_input(x)?;
    let stages = upscale_stages(config.scale)
        .ok_or_else(|| Error::Config(format!("unsupported scale {}", config.scale)))?;
    let n = x.shape().n;
    let mut h = match config.mean_shift {
        Some(m) => x.sub(&mean_tensor(n, m))?,
        None => x.clone(),
    };
    h = conv2d_apply(&h, &params.head)?;
    h = rir_apply(&h, &params.body)?;
    for (conv, &u) in params.upsample.iter().zip(stages) {
        h = pixel_shuffle(&conv2d_apply(&h, conv)?, u)?;
    }
    h = conv2d_apply(&h, &params.tail)?;
    match config.mean_shift {
        Some(m) => h.add(&mean_tensor(n, m)),
        None => Ok(h),
    }
}

pub fn forward<'p>(x: &Tensor4, params: &'p RcanParams, config: &RcanConfig) -> Result<(Tensor4, RcanTape<'p>)> {
    check_input(x)?;
    let stages = upscale_stages(config.scale)
        .ok_or_else(|| Error::Config(format!("unsupported scale {}", config.scale)))?;
    if stages.len() != params.upsample.len() {
        return Err(Error::Config(format!(
            "scale {} needs {} upscaling stages, parameters have {}",
            config.scale,
            stages.len(),
            params.upsample.len()
        )));
    }
    let n = x.shape().n;
    let shifted = match config.mean_shift {
        Some(m) => x.sub(&mean_tensor(n, m))?,
        None => x.clone(),
    };
    let (f0, head) = conv2d(&shifted, &params.head)?;
    let (mut h, body) = rir_forward(&f0, &params.body)?;
    let mut upsample = Vec::with_capacity(stages.len());
    for (conv, &u) in params.upsample.iter().zip(stages) {
        let (y, t) = conv2d(&h, conv)?;
        upsample.push((t, u));
        h = pixel_shuffle(&y, u)?;
    }
    let (mut out, tail) = conv2d(&h, &params.tail)?;
    if let Some(m) = config.mean_shift {
        out = out.add(&mean_tensor(n, m))?;
    }
    Ok((
        out,
        RcanTape {
            head,
            body,
            upsample,
            tail,
        },
    ))
}

/// Returns `(grad_params, grad_input)`.
pub fn backward(grad_out: &Tensor4, tape: RcanTape<'_>) -> Result<(RcanParams, Tensor4)> {
    let (mut g, g_tail) = conv2d_backward(grad_out, tape.tail)?;
    let mut g_up = Vec::with_capacity(tape.upsample.len());
    for (t, u) in tape.upsample.into_iter().rev() {
        let gy = pixel_shuffle_backward(&g, u)?;
        let (gi, gp) = conv2d_backward(&gy, t)?;
        g_up.push(gp);
        g = gi;
    }
    g_up.reverse();
    let (g_f0, g_body) = rir_backward(&g, tape.body)?;
    let (g_x, g_head) = conv2d_backward(&g_f0, tape.head)?;
    Ok((
        RcanParams {
            head: g_head,
            body: g_body,
            upsample: g_up,
            tail: g_tail,
        },
        g_x,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(shape: Shape4, seed: u64) -> Tensor4 {
        let mut rng = SplitMix64::new(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.next_f64() as Real)
    }

    #[test]
    fn build_is_deterministic_and_bounded() {
        let cfg = RcanConfig::tiny(2);
        let a = build(&cfg, 42).unwrap();
        let b = build(&cfg, 42).unwrap();
        assert_eq!(a.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, build(&cfg, 43).unwrap());
        for t in a.named_tensors() {
            if t.dims.len() == 4 {
                let bound = init_bound(&t.dims) as Real;
                assert!(t.values.iter().all(|v| v.abs() <= bound), "{}", t.name);
                assert!(t.values.iter().any(|&v| v != 0.0), "{}", t.name);
            } else {
                assert!(t.values.iter().all(|&v| v == 0.0), "{}", t.name);
            }
            assert!(t.values.iter().all(|&v| v as f32 as Real == v));
        }
    }

    #[test]
    fn full_size_head_shape() {
        let p = RcanParams::zeros(&RcanConfig::default()).unwrap();
        assert_eq!(p.head.weight.shape().dims(), [64, 3, 3, 3]);
        match &p.body.groups[0].blocks[0].ca {
            CaParams::Learned { down, .. } => assert_eq!(down.out_channels(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_indivisible_reduction() {
        let cfg = RcanConfig {
            reduction: 3,
            ..RcanConfig::tiny(2)
        };
        assert!(matches!(build(&cfg, 0), Err(Error::Config(_))));
        assert!(param_count(&cfg).is_err());
        let cfg = RcanConfig {
            scale: 5,
            ..RcanConfig::tiny(2)
        };
        assert!(build(&cfg, 0).is_err());
    }

    #[test]
    fn names_are_unique_and_stable() {
        let p = RcanParams::zeros(&RcanConfig::tiny(4)).unwrap();
        let names: Vec<String> = p.named_tensors().into_iter().map(|t| t.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "head.weight");
        assert!(names.contains(&"body.groups.1.blocks.0.ca.down.bias".to_string()));
        assert!(names.contains(&"upsample.1.weight".to_string()));
        assert_eq!(names.last().unwrap(), "tail.bias");
    }

    #[test]
    fn output_shapes() {
        for scale in [2, 3, 4, 8] {
            let cfg = RcanConfig {
                n_groups: 1,
                n_blocks: 1,
                ..RcanConfig::tiny(scale)
            };
            let p = build(&cfg, 1).unwrap();
            let y = infer(&input(Shape4::new(2, 3, 5, 4), 0), &p, &cfg).unwrap();
            assert_eq!(y.shape(), Shape4::new(2, 3, 5 * scale, 4 * scale));
        }
        let cfg = RcanConfig::tiny(4);
        let p = build(&cfg, 1).unwrap();
        let y = infer(&input(Shape4::new(1, 3, 8, 8), 1), &p, &cfg).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 3, 32, 32));
    }

    #[test]
    fn zero_reconstruction_outputs_mean() {
        let cfg = RcanConfig {
            mean_shift: Some([0.1, 0.5, 0.9]),
            ..RcanConfig::tiny(2)
        };
        let mut p = build(&cfg, 3).unwrap();
        p.tail = Conv2dParams::zeros(3, cfg.n_feats, 3);
        let y = infer(&input(Shape4::new(1, 3, 4, 4), 2), &p, &cfg).unwrap();
        for (c, m) in [0.1, 0.5, 0.9].into_iter().enumerate() {
            assert!(y.plane(0, c).iter().all(|&v| v == m));
        }
    }

    #[test]
    fn wrong_channel_count() {
        let cfg = RcanConfig::tiny(2);
        let p = build(&cfg, 0).unwrap();
        let err = infer(&Tensor4::zeros(Shape4::new(1, 1, 4, 4)), &p, &cfg).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { ref layer, .. } if layer == "head"));
    }

    #[test]
    fn forward_matches_infer_and_is_deterministic() {
        let cfg = RcanConfig::tiny(3);
        let p = build(&cfg, 9).unwrap();
        let x = input(Shape4::new(2, 3, 6, 5), 4);
        let (a, _) = forward(&x, &p, &cfg).unwrap();
        let (b, _) = forward(&x, &p, &cfg).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(a.bitwise_eq(&infer(&x, &p, &cfg).unwrap()));
    }

    #[test]
    fn param_count_full_size() {
        // Shape table for G=10, B=20, C=64, r=16, ×4:
        //   head        3x3  3->64          1_792
        //   conv1/conv2 3x3 64->64         36_928 each
        //   CA down     1x1 64->4             260
        //   CA up       1x1  4->64            320
        //   RCAB                           74_436
        //   RG  = 20·74_436 + 36_928     1_525_648
        //   RIR = 10·RG + 36_928        15_293_408
        //   upsample 2 × (3x3 64->256)    295_424
        //   tail        3x3 64->3           1_731
        let count = param_count(&RcanConfig::default()).unwrap();
        assert_eq!(count, 1_792 + 15_293_408 + 295_424 + 1_731);
        assert_eq!(count, 15_592_355);
    }

    #[test]
    fn param_count_unit_config() {
        // head 3·9+1 = 28; RCAB 2·10 + CA (2 + 2) = 24; RG 24 + 10; RIR 34 + 10;
        // upsample 4·9+4 = 40; tail 3·9+3 = 30.
        let cfg = RcanConfig {
            n_groups: 1,
            n_blocks: 1,
            n_feats: 1,
            reduction: 1,
            scale: 2,
            ..RcanConfig::default()
        };
        assert_eq!(param_count(&cfg).unwrap(), 28 + 44 + 40 + 30);
    }

    #[test]
    fn param_count_linear_in_blocks() {
        let base = RcanConfig::tiny(2);
        let one = param_count(&RcanConfig { n_blocks: 1, ..base.clone() }).unwrap();
        let two = param_count(&RcanConfig { n_blocks: 2, ..base.clone() }).unwrap();
        let three = param_count(&RcanConfig { n_blocks: 3, ..base.clone() }).unwrap();
        // one RCAB with C=8, r=4: 2·(576+8) + (16+2) + (16+8)
        let rcab = 2 * 584 + 18 + 24;
        assert_eq!(two - one, rcab * base.n_groups as u64);
        assert_eq!(three - two, two - one);
    }

    #[test]
    fn param_count_matches_allocation() {
        for cfg in [
            RcanConfig::tiny(2),
            RcanConfig::tiny(3),
            RcanConfig { ca_mode: CaMode::Constant(0.1), ..RcanConfig::tiny(8) },
        ] {
            let p = RcanParams::zeros(&cfg).unwrap();
            assert_eq!(p.num_scalars() as u64, param_count(&cfg).unwrap());
        }
    }
}
