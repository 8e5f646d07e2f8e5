//! Composite blocks: channel attention (CA), the residual channel attention
//! block (RCAB), residual groups (RG) and the residual-in-residual (RIR)
//! trunk.
//!
//! ```text
//! CA:    z = GAP(x);  s = sigmoid(up(relu(down(z))));  x̂ = s · x
//! RCAB:  X = conv2(relu(conv1(F)));  F_out = F + CA(X)
//! RG:    F_g = [F_{g-1} +] tail(RCAB_B(… RCAB_1(F_{g-1})))      short skip
//! RIR:   F_DF = [F_0 +] tail(RG_G(… RG_1(F_0)))                  long skip
//! ```
//!
//! The bracketed skips are controlled by `use_ssc` / `use_lsc`; CA can be
//! replaced by a constant scale for the plain residual-block reductions.

use std::hash::Hasher;

use crate::error::Result;
use crate::layers::{
    channel_scale, channel_scale_apply, channel_scale_backward, conv2d, conv2d_apply,
    conv2d_backward, gap_backward, global_avg_pool, relu, relu_apply, relu_backward, sigmoid,
    sigmoid_apply, sigmoid_backward, ChannelScaleTape, Conv2dParams, ConvTape, GapTape, ReluTape,
    SigmoidTape,
};
use crate::params::{join, NamedTensor, Params};
use crate::tensor::{Real, Shape4, Tensor4};

// ---------------------------------------------------------------------------
// Channel attention
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum CaParams {
    /// Bottleneck gate: `down` is 1x1 `C -> C/r`, `up` is 1x1 `C/r -> C`.
    Learned { down: Conv2dParams, up: Conv2dParams },
    /// Fixed scale `s ≡ α`; no parameters.
    Constant(Real),
}

pub enum CaTape<'p> {
    Learned {
        gap: GapTape,
        down: ConvTape<'p>,
        relu: ReluTape,
        up: ConvTape<'p>,
        gate: SigmoidTape,
        scale: ChannelScaleTape,
    },
    Constant(Real),
}

impl CaTape<'_> {
    pub fn fingerprint(&self, h: &mut impl Hasher) {
        if let CaTape::Learned { relu, .. } = self {
            relu.fingerprint(h);
        }
    }
}

fn constant_scales(x: &Tensor4, alpha: Real) -> Tensor4 {
    let s = x.shape();
    Tensor4::full(Shape4::new(s.n, s.c, 1, 1), alpha)
}

/// Returns `(s, x̂)`.
pub fn ca_apply(x: &Tensor4, p: &CaParams) -> Result<(Tensor4, Tensor4)> {
    match p {
        CaParams::Learned { down, up } => {
            let (z, _) = global_avg_pool(x)?;
            let pre = conv2d_apply(&relu_apply(&conv2d_apply(&z, down)?), up)?;
            let s = sigmoid_apply(&pre);
            let xh = channel_scale_apply(x, &s)?;
            Ok((s, xh))
        }
        CaParams::Constant(alpha) => Ok((constant_scales(x, *alpha), x.scale(*alpha))),
    }
}

pub fn ca_forward<'p>(x: &Tensor4, p: &'p CaParams) -> Result<(Tensor4, Tensor4, CaTape<'p>)> {
    match p {
        CaParams::Learned { down, up } => {
            let (z, gap) = global_avg_pool(x)?;
            let (d, down_t) = conv2d(&z, down)?;
            let (r, relu_t) = relu(&d);
            let (pre, up_t) = conv2d(&r, up)?;
            let (s, gate) = sigmoid(&pre);
            let (xh, scale) = channel_scale(x, &s)?;
            Ok((
                s,
                xh,
                CaTape::Learned {
                    gap,
                    down: down_t,
                    relu: relu_t,
                    up: up_t,
                    gate,
                    scale,
                },
            ))
        }
        CaParams::Constant(alpha) => Ok((
            constant_scales(x, *alpha),
            x.scale(*alpha),
            CaTape::Constant(*alpha),
        )),
    }
}

/// Returns `(grad_x, grad_params)` given the gradient of `x̂`.
pub fn ca_backward(grad_xh: &Tensor4, tape: CaTape<'_>) -> Result<(Tensor4, CaParams)> {
    match tape {
        CaTape::Learned {
            gap,
            down,
            relu,
            up,
            gate,
            scale,
        } => {
            let (mut gx, gs) = channel_scale_backward(grad_xh, scale)?;
            let g_pre = sigmoid_backward(&gs, gate)?;
            let (g_r, g_up) = conv2d_backward(&g_pre, up)?;
            let g_d = relu_backward(&g_r, relu)?;
            let (g_z, g_down) = conv2d_backward(&g_d, down)?;
            gx.add_assign(&gap_backward(&g_z, gap)?)?;
            Ok((
                gx,
                CaParams::Learned {
                    down: g_down,
                    up: g_up,
                },
            ))
        }
        CaTape::Constant(alpha) => Ok((grad_xh.scale(alpha), CaParams::Constant(alpha))),
    }
}

impl Params for CaParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>)) {
        if let CaParams::Learned { down, up } = self {
            down.visit(&join(prefix, "down"), f);
            up.visit(&join(prefix, "up"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real])) {
        if let CaParams::Learned { down, up } = self {
            down.visit_mut(&join(prefix, "down"), f);
            up.visit_mut(&join(prefix, "up"), f);
        }
    }
}

// ---------------------------------------------------------------------------
// RCAB
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RcabParams {
    pub conv1: Conv2dParams,
    pub conv2: Conv2dParams,
    pub ca: CaParams,
}

pub struct RcabTape<'p> {
    conv1: ConvTape<'p>,
    relu: ReluTape,
    conv2: ConvTape<'p>,
    ca: CaTape<'p>,
}

impl RcabTape<'_> {
    pub fn fingerprint(&self, h: &mut impl Hasher) {
        self.relu.fingerprint(h);
        self.ca.fingerprint(h);
    }
}

/// The attention-rescaled residual branch `CA(X)`, without the skip.
pub fn rcab_residual(f_in: &Tensor4, p: &RcabParams) -> Result<Tensor4> {
    let x = conv2d_apply(&relu_apply(&conv2d_apply(f_in, &p.conv1)?), &p.conv2)?;
    Ok(ca_apply(&x, &p.ca)?.1)
}

pub fn rcab_apply(f_in: &Tensor4, p: &RcabParams) -> Result<Tensor4> {
    f_in.add(&rcab_residual(f_in, p)?)
}

pub fn rcab_forward<'p>(f_in: &Tensor4, p: &'p RcabParams) -> Result<(Tensor4, RcabTape<'p>)> {
    let (h1, conv1) = conv2d(f_in, &p.conv1)?;
    let (a, relu_t) = relu(&h1);
    let (x, conv2) = conv2d(&a, &p.conv2)?;
    let (_, xh, ca) = ca_forward(&x, &p.ca)?;
    let out = f_in.add(&xh)?;
    Ok((
        out,
        RcabTape {
            conv1,
            relu: relu_t,
            conv2,
            ca,
        },
    ))
}

pub fn rcab_backward(grad_out: &Tensor4, tape: RcabTape<'_>) -> Result<(Tensor4, RcabParams)> {
    let (g_x, g_ca) = ca_backward(grad_out, tape.ca)?;
    let (g_a, g_conv2) = conv2d_backward(&g_x, tape.conv2)?;
    let g_h = relu_backward(&g_a, tape.relu)?;
    let (mut g_in, g_conv1) = conv2d_backward(&g_h, tape.conv1)?;
    g_in.add_assign(grad_out)?;
    Ok((
        g_in,
        RcabParams {
            conv1: g_conv1,
            conv2: g_conv2,
            ca: g_ca,
        },
    ))
}

impl Params for RcabParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.ca.visit(&join(prefix, "ca"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real])) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.ca.visit_mut(&join(prefix, "ca"), f);
    }
}

// ---------------------------------------------------------------------------
// Residual group
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RgParams {
    pub blocks: Vec<RcabParams>,
    pub tail: Conv2dParams,
    pub use_ssc: bool,
}

pub struct RgTape<'p> {
    blocks: Vec<RcabTape<'p>>,
    tail: ConvTape<'p>,
    use_ssc: bool,
}

impl RgTape<'_> {
    pub fn fingerprint(&self, h: &mut impl Hasher) {
        for b in &self.blocks {
            b.fingerprint(h);
        }
    }
}

pub fn rg_apply(f_prev: &Tensor4, p: &RgParams) -> Result<Tensor4> {
    let mut x = f_prev.clone();
    for block in &p.blocks {
        x = rcab_apply(&x, block)?;
    }
    let t = conv2d_apply(&x, &p.tail)?;
    if p.use_ssc {
        f_prev.add(&t)
    } else {
        Ok(t)
    }
}

pub fn rg_forward<'p>(f_prev: &Tensor4, p: &'p RgParams) -> Result<(Tensor4, RgTape<'p>)> {
    let mut x = f_prev.clone();
    let mut tapes = Vec::with_capacity(p.blocks.len());
    for block in &p.blocks {
        let (y, t) = rcab_forward(&x, block)?;
        tapes.push(t);
        x = y;
    }
    let (t, tail) = conv2d(&x, &p.tail)?;
    let out = if p.use_ssc { f_prev.add(&t)? } else { t };
    Ok((
        out,
        RgTape {
            blocks: tapes,
            tail,
            use_ssc: p.use_ssc,
        },
    ))
}

pub fn rg_backward(grad_out: &Tensor4, tape: RgTape<'_>) -> Result<(Tensor4, RgParams)> {
    let (mut g, g_tail) = conv2d_backward(grad_out, tape.tail)?;
    let mut g_blocks = Vec::with_capacity(tape.blocks.len());
    for t in tape.blocks.into_iter().rev() {
        let (gi, gp) = rcab_backward(&g, t)?;
        g_blocks.push(gp);
        g = gi;
    }
    g_blocks.reverse();
    if tape.use_ssc {
        g.add_assign(grad_out)?;
    }
    Ok((
        g,
        RgParams {
            blocks: g_blocks,
            tail: g_tail,
            use_ssc: tape.use_ssc,
        },
    ))
}

impl Params for RgParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}

// ---------------------------------------------------------------------------
// Residual in residual
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RirParams {
    pub groups: Vec<RgParams>,
    pub tail: Conv2dParams,
    pub use_lsc: bool,
}

pub struct RirTape<'p> {
    groups: Vec<RgTape<'p>>,
    tail: ConvTape<'p>,
    use_lsc: bool,
}

impl RirTape<'_> {
    pub fn fingerprint(&self, h: &mut impl Hasher) {
        for g in &self.groups {
            g.fingerprint(h);
        }
    }
}

pub fn rir_apply(f0: &Tensor4, p: &RirParams) -> Result<Tensor4> {
    let mut x = f0.clone();
    for group in &p.groups {
        x = rg_apply(&x, group)?;
    }
    let t = conv2d_apply(&x, &p.tail)?;
    if p.use_lsc {
        f0.add(&t)
    } else {
        Ok(t)
    }
}

pub fn rir_forward<'p>(f0: &Tensor4, p: &'p RirParams) -> Result<(Tensor4, RirTape<'p>)> {
    let mut x = f0.clone();
    let mut tapes = Vec::with_capacity(p.groups.len());
    for group in &p.groups {
        let (y, t) = rg_forward(&x, group)?;
        tapes.push(t);
        x = y;
    }
    let (t, tail) = conv2d(&x, &p.tail)?;
    let out = if p.use_lsc { f0.add(&t)? } else { t };
    Ok((
        out,
        RirTape {
            groups: tapes,
            tail,
            use_lsc: p.use_lsc,
        },
    ))
}

pub fn rir_backward(grad_out: &Tensor4, tape: RirTape<'_>) -> Result<(Tensor4, RirParams)> {
    let (mut g, g_tail) = conv2d_backward(grad_out, tape.tail)?;
    let mut g_groups = Vec::with_capacity(tape.groups.len());
    for t in tape.groups.into_iter().rev() {
        let (gi, gp) = rg_backward(&g, t)?;
        g_groups.push(gp);
        g = gi;
    }
    g_groups.reverse();
    if tape.use_lsc {
        g.add_assign(grad_out)?;
    }
    Ok((
        g,
        RirParams {
            groups: g_groups,
            tail: g_tail,
            use_lsc: tape.use_lsc,
        },
    ))
}

impl Params for RirParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>)) {
        for (i, g) in self.groups.iter().enumerate() {
            g.visit(&join(prefix, &format!("groups.{i}")), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real])) {
        for (i, g) in self.groups.iter_mut().enumerate() {
            g.visit_mut(&join(prefix, &format!("groups.{i}")), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::SplitMix64;

    fn random(shape: Shape4, rng: &mut SplitMix64) -> Tensor4 {
        Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0) as Real)
    }

    fn random_conv(oc: usize, ic: usize, k: usize, rng: &mut SplitMix64) -> Conv2dParams {
        let w = random(Shape4::new(oc, ic, k, k), rng).scale(0.3);
        let b = (0..oc).map(|_| rng.uniform(-0.1, 0.1) as Real).collect();
        Conv2dParams::new(w, b).unwrap()
    }

    fn learned_ca(c: usize, r: usize, rng: &mut SplitMix64) -> CaParams {
        CaParams::Learned {
            down: random_conv(c / r, c, 1, rng),
            up: random_conv(c, c / r, 1, rng),
        }
    }

    fn random_rcab(c: usize, ca: CaParams, rng: &mut SplitMix64) -> RcabParams {
        RcabParams {
            conv1: random_conv(c, c, 3, rng),
            conv2: random_conv(c, c, 3, rng),
            ca,
        }
    }

    #[test]
    fn zero_gate_weights_halve() {
        let mut rng = SplitMix64::new(1);
        let x = random(Shape4::new(2, 8, 4, 4), &mut rng);
        let p = CaParams::Learned {
            down: Conv2dParams::zeros(2, 8, 1),
            up: Conv2dParams::zeros(8, 2, 1),
        };
        let (s, xh) = ca_apply(&x, &p).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.5));
        assert!(xh.bitwise_eq(&x.scale(0.5)));
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut rng = SplitMix64::new(2);
        let mut p = learned_ca(8, 4, &mut rng);
        if let CaParams::Learned { down, up } = &mut p {
            down.bias.fill(0.0);
            up.bias.fill(0.0);
        }
        let x = Tensor4::zeros(Shape4::new(1, 8, 3, 3));
        assert!(ca_apply(&x, &p).unwrap().1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_one_is_identity() {
        let mut rng = SplitMix64::new(3);
        let x = random(Shape4::new(1, 4, 3, 3), &mut rng);
        let (s, xh) = ca_apply(&x, &CaParams::Constant(1.0)).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
        assert!(xh.bitwise_eq(&x));
    }

    #[test]
    fn learned_scales_strictly_inside_unit_interval() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..10 {
            let x = random(Shape4::new(2, 8, 5, 5), &mut rng).scale(5.0);
            let (s, _) = ca_apply(&x, &learned_ca(8, 2, &mut rng)).unwrap();
            assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn ca_channel_mismatch() {
        let mut rng = SplitMix64::new(5);
        let x = random(Shape4::new(1, 6, 3, 3), &mut rng);
        let err = ca_apply(&x, &learned_ca(8, 4, &mut rng)).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { .. }));
    }

    #[test]
    fn dead_residual_branch() {
        let mut rng = SplitMix64::new(6);
        let x = random(Shape4::new(1, 4, 5, 5), &mut rng);
        let mut p = random_rcab(4, learned_ca(4, 2, &mut rng), &mut rng);
        p.conv2 = Conv2dParams::zeros(4, 4, 3);
        let (y, _) = rcab_forward(&x, &p).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn rcab_constant_modes() {
        let mut rng = SplitMix64::new(7);
        let x = random(Shape4::new(1, 4, 5, 5), &mut rng);
        let mut p = random_rcab(4, CaParams::Constant(1.0), &mut rng);
        let branch = conv2d_apply(&relu_apply(&conv2d_apply(&x, &p.conv1).unwrap()), &p.conv2).unwrap();
        let y1 = rcab_apply(&x, &p).unwrap();
        assert!(y1.bitwise_eq(&x.add(&branch).unwrap()));
        p.ca = CaParams::Constant(0.1);
        let y01 = rcab_apply(&x, &p).unwrap();
        assert!(y01.bitwise_eq(&x.add(&branch.scale(0.1)).unwrap()));
    }

    #[test]
    fn rg_skip_rules() {
        let mut rng = SplitMix64::new(8);
        let c = 4;
        let x = random(Shape4::new(1, c, 4, 4), &mut rng);
        let dead = |rng: &mut SplitMix64| {
            let mut b = random_rcab(c, learned_ca(c, 2, rng), rng);
            b.conv2 = Conv2dParams::zeros(c, c, 3);
            b
        };
        let mut p = RgParams {
            blocks: vec![dead(&mut rng), dead(&mut rng)],
            tail: Conv2dParams::identity(c, 3),
            use_ssc: true,
        };
        assert!(rg_apply(&x, &p).unwrap().bitwise_eq(&x.scale(2.0)));

        p.blocks = vec![random_rcab(c, learned_ca(c, 2, &mut rng), &mut rng)];
        p.tail = Conv2dParams::zeros(c, c, 3);
        assert!(rg_apply(&x, &p).unwrap().bitwise_eq(&x));
        p.use_ssc = false;
        assert!(rg_apply(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rir_skip_rules() {
        let mut rng = SplitMix64::new(9);
        let c = 4;
        let x = random(Shape4::new(1, c, 4, 4), &mut rng);
        let group = |rng: &mut SplitMix64| RgParams {
            blocks: vec![random_rcab(c, learned_ca(c, 2, rng), rng)],
            tail: random_conv(c, c, 3, rng),
            use_ssc: true,
        };
        let mut p = RirParams {
            groups: vec![group(&mut rng), group(&mut rng)],
            tail: Conv2dParams::zeros(c, c, 3),
            use_lsc: true,
        };
        assert!(rir_apply(&x, &p).unwrap().bitwise_eq(&x));

        // LSC on vs off differ by exactly F0.
        p.tail = random_conv(c, c, 3, &mut rng);
        let on = rir_apply(&x, &p).unwrap();
        p.use_lsc = false;
        let off = rir_apply(&x, &p).unwrap();
        assert!(on.bitwise_eq(&x.add(&off).unwrap()));

        // G = 1 with dead blocks, identity group tail and zero RIR tail.
        let mut dead_block = random_rcab(c, learned_ca(c, 2, &mut rng), &mut rng);
        dead_block.conv2 = Conv2dParams::zeros(c, c, 3);
        let single = RirParams {
            groups: vec![RgParams {
                blocks: vec![dead_block],
                tail: Conv2dParams::identity(c, 3),
                use_ssc: true,
            }],
            tail: Conv2dParams::identity(c, 3),
            use_lsc: true,
        };
        // F_1 = 2·F0, F_DF = F0 + F_1 = 3·F0
        let y = rir_apply(&x, &single).unwrap();
        assert!(y.max_abs_diff(&x.scale(3.0)) < 1e-15);
    }

    #[test]
    fn forward_and_apply_agree_bitwise() {
        let mut rng = SplitMix64::new(10);
        let c = 8;
        let x = random(Shape4::new(2, c, 5, 6), &mut rng);
        let p = RirParams {
            groups: (0..2)
                .map(|_| RgParams {
                    blocks: (0..2)
                        .map(|_| random_rcab(c, learned_ca(c, 4, &mut rng), &mut rng))
                        .collect(),
                    tail: random_conv(c, c, 3, &mut rng),
                    use_ssc: true,
                })
                .collect(),
            tail: random_conv(c, c, 3, &mut rng),
            use_lsc: true,
        };
        let (y, _) = rir_forward(&x, &p).unwrap();
        assert!(y.bitwise_eq(&rir_apply(&x, &p).unwrap()));
    }

    #[test]
    fn toggles_change_the_function() {
        let mut rng = SplitMix64::new(11);
        let c = 4;
        let x = random(Shape4::new(1, c, 4, 4), &mut rng);
        let mut p = RirParams {
            groups: vec![RgParams {
                blocks: vec![random_rcab(c, learned_ca(c, 2, &mut rng), &mut rng)],
                tail: random_conv(c, c, 3, &mut rng),
                use_ssc: true,
            }],
            tail: random_conv(c, c, 3, &mut rng),
            use_lsc: true,
        };
        let base = rir_apply(&x, &p).unwrap();
        p.groups[0].use_ssc = false;
        let no_ssc = rir_apply(&x, &p).unwrap();
        assert!(base.max_abs_diff(&no_ssc) > 1e-3);
        p.use_lsc = false;
        let neither = rir_apply(&x, &p).unwrap();
        assert!(no_ssc.max_abs_diff(&neither) > 1e-3);
    }
}
