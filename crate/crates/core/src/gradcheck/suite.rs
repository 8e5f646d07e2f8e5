//! Gradient checks for every layer and for a full tiny network.
//!
//! Each check wraps a forward computation `θ ↦ y` (where `θ` packs the
//! input and the parameters) in the loss `L = l1(y, target)`. The target is
//! the initial output shifted by random offsets of magnitude `[0.1, 0.5]`, so
//! no residual sits near the `|·|` kink. The analytic gradient from the
//! backward pass is compared with central differences coordinate by
//! coordinate; coordinates whose two difference evaluations take different
//! ReLU branches are skipped and counted.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::{finite_diff_probe, relative_error, Probe, DEFAULT_STEP};
use crate::blocks::{
    ca_backward, ca_forward, rcab_backward, rcab_forward, rg_backward, rg_forward, rir_backward, rir_forward,
    RcabParams, RgParams, RirParams,
};
use crate::error::Result;
use crate::layers::{
    channel_scale, channel_scale_backward, conv2d, conv2d_backward, gap_backward, global_avg_pool, pixel_shuffle,
    pixel_shuffle_backward, relu, relu_backward, sigmoid, sigmoid_backward, Conv2dParams,
};
use crate::network::{backward, build, forward, RcanConfig, RcanParams};
use crate::optim::l1_loss;
use crate::params::Params;
use crate::rng::SplitMix64;
use crate::tensor::{Real, Shape4, Tensor4};

/// Maximum accepted relative error.
pub const TOLERANCE: Real = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: Real,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE && self.checked > 0
    }
}

fn random_tensor(shape: Shape4, rng: &mut SplitMix64, lo: f64, hi: f64) -> Tensor4 {
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(lo, hi) as Real)
}

fn jitter<P: Params>(p: &mut P, rng: &mut SplitMix64, amount: f64) {
    let flat: Vec<Real> = p.flatten().into_iter().map(|v| v + rng.uniform(-amount, amount) as Real).collect();
    p.load_flat(&flat);
}

fn pack(x: &Tensor4, p: &impl Params) -> Vec<Real> {
    let mut theta = x.data().to_vec();
    theta.extend(p.flatten());
    theta
}

fn unpack<P: Params + Clone>(theta: &[Real], shape: Shape4, template: &P) -> (Tensor4, P) {
    let n = shape.len();
    let x = Tensor4::from_vec(shape, theta[..n].to_vec()).expect("packed input");
    let mut p = template.clone();
    p.load_flat(&theta[n..]);
    (x, p)
}

/// Compares analytic and finite-difference gradients of the L1 loss.
///
/// `fwd` returns the output and a branch fingerprint; `bwd` returns the
/// gradient with respect to `θ` given the gradient of the output.
fn run_case(
    name: &str,
    seed: u64,
    theta0: Vec<Real>,
    coords: Option<Vec<usize>>,
    fwd: impl Fn(&[Real]) -> Result<(Tensor4, u64)>,
    bwd: impl Fn(&[Real], &Tensor4) -> Result<Vec<Real>>,
) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed ^ 0x7A5C_E11E);
    let (y0, _) = fwd(&theta0)?;
    let offsets: Vec<Real> = (0..y0.data().len())
        .map(|_| {
            let off = rng.uniform(0.1, 0.5) as Real;
            if rng.next_u64() & 1 == 0 {
                off
            } else {
                -off
            }
        })
        .collect();
    let target = Tensor4::from_vec(y0.shape(), y0.data().iter().zip(&offsets).map(|(v, o)| v + o).collect())?;
    let (_, g_out) = l1_loss(&y0, &target)?;
    let analytic = bwd(&theta0, &g_out)?;
    let coords = coords.unwrap_or_else(|| (0..theta0.len()).collect());
    let probes = finite_diff_probe(
        |theta| {
            let (y, fp) = fwd(theta)?;
            let (loss, g) = l1_loss(&y, &target)?;
            let mut h = DefaultHasher::new();
            h.write_u64(fp);
            for v in g.data() {
                h.write_u8((*v > 0.0) as u8 | (((*v < 0.0) as u8) << 1));
            }
            Ok((loss, h.finish()))
        },
        &theta0,
        DEFAULT_STEP,
        &coords,
    )?;
    let mut result = CheckResult {
        name: name.to_string(),
        seed,
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (&i, probe) in coords.iter().zip(&probes) {
        match probe {
            Probe::Smooth(fd) => {
                result.checked += 1;
                result.max_rel_err = result.max_rel_err.max(relative_error(analytic[i], *fd));
            }
            Probe::Kink => result.skipped += 1,
        }
    }
    Ok(result)
}

fn no_kinks() -> u64 {
    0
}

fn conv_case(seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let shape = Shape4::new(2, 3, 5, 4);
    let x = random_tensor(shape, &mut rng, -1.0, 1.0);
    let p = Conv2dParams::new(
        random_tensor(Shape4::new(4, 3, 3, 3), &mut rng, -0.5, 0.5),
        (0..4).map(|_| rng.uniform(-0.2, 0.2) as Real).collect(),
    )?;
    run_case(
        "conv2d",
        seed,
        pack(&x, &p),
        None,
        |t| {
            let (x, p) = unpack(t, shape, &p);
            Ok((conv2d(&x, &p)?.0, no_kinks()))
        },
        |t, g| {
            let (x, p) = unpack(t, shape, &p);
            let (_, tape) = conv2d(&x, &p)?;
            let (gx, gp) = conv2d_backward(g, tape)?;
            Ok(pack(&gx, &gp))
        },
    )
}

fn relu_case(seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let shape = Shape4::new(1, 2, 4, 4);
    let x = random_tensor(shape, &mut rng, -1.0, 1.0);
    run_case(
        "relu",
        seed,
        x.data().to_vec(),
        None,
        |t| {
            let (y, tape) = relu(&Tensor4::from_vec(shape, t.to_vec())?);
            let mut h = DefaultHasher::new();
            tape.fingerprint(&mut h);
            Ok((y, h.finish()))
        },
        |t, g| {
            let (_, tape) = relu(&Tensor4::from_vec(shape, t.to_vec())?);
            Ok(relu_backward(g, tape)?.into_data())
        },
    )
}

fn sigmoid_case(seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let shape = Shape4::new(1, 3, 3, 3);
    let x = random_tensor(shape, &mut rng, -4.0, 4.0);
    run_case(
        "sigmoid",
        seed,
        x.data().to_vec(),
        None,
        |t| Ok((sigmoid(&Tensor4::from_vec(shape, t.to_vec())?).0, no_kinks())),
        |t, g| {
            let (_, tape) = sigmoid(&Tensor4::from_vec(shape, t.to_vec())?);
            Ok(sigmoid_backward(g, tape)?.into_data())
        },
    )
}

fn gap_case(seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let shape = Shape4::new(2, 3, 4, 3);
    let x = random_tensor(shape, &mut rng, -1.0, 1.0);
    run_case(
        "global_avg_pool",
        seed,
        x.data().to_vec(),
        None,
        |t| Ok((global_avg_pool(&Tensor4::from_vec(shape, t.to_vec())?)?.0, no_kinks())),
        |t, g| {
            let (_, tape) = global_avg_pool(&Tensor4::from_vec(shape, t.to_vec())?)?;
            Ok(gap_backward(g, tape)?.into_data())
        },
    )
}

fn channel_scale_case(seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let xs = Shape4::new(2, 3, 3, 2);
    let ss = Shape4::new(2, 3, 1, 1);
    let mut theta = random_tensor(xs, &mut rng, -1.0, 1.0).into_data();
    theta.extend(random_tensor(ss, &mut rng, 0.0, 1.0).into_data());
    let split = |t: &[Real]| -> Result<(Tensor4, Tensor4)> {
        Ok((
            Tensor4::from_vec(xs, t[..xs.len()].to_vec())?,
            Tensor4::from_vec(ss, t[xs.len()..].to_vec())?,
        ))
    };
    run_case(
        "channel_scale",
        seed,
        theta,
        None,
        |t| {
            let (x, s) = split(t)?;
            Ok((channel_scale(&x, &s)?.0, no_kinks()))
        },
        |t, g| {
            let (x, s) = split(t)?;
            let (_, tape) = channel_scale(&x, &s)?;
            let (gx, gs) = channel_scale_backward(g, tape)?;
            let mut out = gx.into_data();
            out.extend(gs.into_data());
            Ok(out)
        },
    )
}

fn shuffle_case(seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let shape = Shape4::new(1, 8, 2, 3);
    let x = random_tensor(shape, &mut rng, -1.0, 1.0);
    run_case(
        "pixel_shuffle",
        seed,
        x.data().to_vec(),
        None,
        |t| Ok((pixel_shuffle(&Tensor4::from_vec(shape, t.to_vec())?, 2)?, no_kinks())),
        |_, g| Ok(pixel_shuffle_backward(g, 2)?.into_data()),
    )
}

/// Randomised parameters for a tiny network; biases are non-zero too.
fn tiny_params(config: &RcanConfig, seed: u64) -> Result<RcanParams> {
    let mut p = build(config, seed)?;
    jitter(&mut p, &mut SplitMix64::new(seed.wrapping_add(1)), 0.05);
    Ok(p)
}

fn ca_case(seed: u64) -> Result<CheckResult> {
    let cfg = RcanConfig::tiny(2);
    let ca = tiny_params(&cfg, seed)?.body.groups[0].blocks[0].ca.clone();
    let shape = Shape4::new(2, cfg.n_feats, 3, 3);
    let x = random_tensor(shape, &mut SplitMix64::new(seed), -1.0, 1.0);
    run_case(
        "channel_attention",
        seed,
        pack(&x, &ca),
        None,
        |t| {
            let (x, p) = unpack(t, shape, &ca);
            let (_, xh, tape) = ca_forward(&x, &p)?;
            let mut h = DefaultHasher::new();
            tape.fingerprint(&mut h);
            Ok((xh, h.finish()))
        },
        |t, g| {
            let (x, p) = unpack(t, shape, &ca);
            let (_, _, tape) = ca_forward(&x, &p)?;
            let (gx, gp) = ca_backward(g, tape)?;
            Ok(pack(&gx, &gp))
        },
    )
}

fn rcab_case(seed: u64) -> Result<CheckResult> {
    let cfg = RcanConfig::tiny(2);
    let block: RcabParams = tiny_params(&cfg, seed)?.body.groups[0].blocks[0].clone();
    let shape = Shape4::new(1, cfg.n_feats, 4, 4);
    let x = random_tensor(shape, &mut SplitMix64::new(seed), -1.0, 1.0);
    run_case(
        "rcab",
        seed,
        pack(&x, &block),
        None,
        |t| {
            let (x, p) = unpack(t, shape, &block);
            let (y, tape) = rcab_forward(&x, &p)?;
            let mut h = DefaultHasher::new();
            tape.fingerprint(&mut h);
            Ok((y, h.finish()))
        },
        |t, g| {
            let (x, p) = unpack(t, shape, &block);
            let (_, tape) = rcab_forward(&x, &p)?;
            let (gx, gp) = rcab_backward(g, tape)?;
            Ok(pack(&gx, &gp))
        },
    )
}

fn rg_case(seed: u64, use_ssc: bool) -> Result<CheckResult> {
    let cfg = RcanConfig::tiny(2);
    let mut group: RgParams = tiny_params(&cfg, seed)?.body.groups[0].clone();
    group.use_ssc = use_ssc;
    let shape = Shape4::new(1, cfg.n_feats, 4, 4);
    let x = random_tensor(shape, &mut SplitMix64::new(seed), -1.0, 1.0);
    run_case(
        if use_ssc { "residual_group" } else { "residual_group_no_skip" },
        seed,
        pack(&x, &group),
        None,
        |t| {
            let (x, p) = unpack(t, shape, &group);
            let (y, tape) = rg_forward(&x, &p)?;
            let mut h = DefaultHasher::new();
            tape.fingerprint(&mut h);
            Ok((y, h.finish()))
        },
        |t, g| {
            let (x, p) = unpack(t, shape, &group);
            let (_, tape) = rg_forward(&x, &p)?;
            let (gx, gp) = rg_backward(g, tape)?;
            Ok(pack(&gx, &gp))
        },
    )
}

fn rir_case(seed: u64, use_lsc: bool) -> Result<CheckResult> {
    let cfg = RcanConfig::tiny(2);
    let mut trunk: RirParams = tiny_params(&cfg, seed)?.body;
    trunk.use_lsc = use_lsc;
    let shape = Shape4::new(1, cfg.n_feats, 3, 3);
    let x = random_tensor(shape, &mut SplitMix64::new(seed), -1.0, 1.0);
    run_case(
        if use_lsc { "rir" } else { "rir_no_skip" },
        seed,
        pack(&x, &trunk),
        None,
        |t| {
            let (x, p) = unpack(t, shape, &trunk);
            let (y, tape) = rir_forward(&x, &p)?;
            let mut h = DefaultHasher::new();
            tape.fingerprint(&mut h);
            Ok((y, h.finish()))
        },
        |t, g| {
            let (x, p) = unpack(t, shape, &trunk);
            let (_, tape) = rir_forward(&x, &p)?;
            let (gx, gp) = rir_backward(g, tape)?;
            Ok(pack(&gx, &gp))
        },
    )
}

/// Every primitive layer, channel attention and the RCAB at one seed.
pub fn layer_checks(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        conv_case(seed)?,
        relu_case(seed)?,
        sigmoid_case(seed)?,
        gap_case(seed)?,
        channel_scale_case(seed)?,
        shuffle_case(seed)?,
        ca_case(seed)?,
        rcab_case(seed)?,
    ])
}

/// Residual groups and the RIR trunk, with and without their skips.
pub fn block_checks(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        rg_case(seed, true)?,
        rg_case(seed, false)?,
        rir_case(seed, true)?,
        rir_case(seed, false)?,
    ])
}

/// Full-network check on a `1×3×size×size` input. With `sample = None`
/// every input and parameter coordinate is checked; otherwise that many
/// coordinates are drawn at random.
pub fn network_check(config: &RcanConfig, seed: u64, size: usize, sample: Option<usize>) -> Result<CheckResult> {
    let params = tiny_params(config, seed)?;
    let shape = Shape4::new(1, 3, size, size);
    let mut rng = SplitMix64::new(seed.wrapping_mul(31).wrapping_add(7));
    let x = random_tensor(shape, &mut rng, 0.0, 1.0);
    let theta0 = pack(&x, &params);
    let coords = sample.map(|k| (0..k).map(|_| rng.below(theta0.len())).collect());
    run_case(
        "rcan",
        seed,
        theta0,
        coords,
        |t| {
            let (x, p) = unpack(t, shape, &params);
            let (y, tape) = forward(&x, &p, config)?;
            let mut h = DefaultHasher::new();
            tape.fingerprint(&mut h);
            Ok((y, h.finish()))
        },
        |t, g| {
            let (x, p) = unpack(t, shape, &params);
            let (_, tape) = forward(&x, &p, config)?;
            let (gp, gx) = backward(g, tape)?;
            Ok(pack(&gx, &gp))
        },
    )
}

/// Layer, block and exhaustive network checks for each seed.
pub fn run_suite(config: &RcanConfig, seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &seed in seeds {
        out.extend(layer_checks(seed)?);
        out.extend(block_checks(seed)?);
        out.push(network_check(config, seed, 8, None)?);
    }
    Ok(out)
}
