//! The enhancement network.
//!
//! `enhance` white-balances the image, runs one shared dense encoder over a
//! three-level pyramid, fuses full and quarter resolution with per-head
//! two-way attention, folds in the eighth-resolution stream, and adds a
//! tanh-bounded residual back onto the input.

mod params;

use std::fmt;
use std::str::FromStr;

pub use params::{Bound, Init, Layout, ParamId, ParamSpec, ParamStore};

use crate::color::apply_white_balance;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::tensor::{Real, Shape};

/// Number of dense 3×3 layers after the SpecialConv in the encoder.
pub const DENSE_LAYERS: usize = 6;
/// Pad granularity: the pyramid's coarsest level is 1/8 of full resolution.
pub const PAD_MULTIPLE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResidualTarget {
    /// The input as given, before white balance.
    #[default]
    Original,
    Corrected,
}

impl fmt::Display for ResidualTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualTarget::Original => "original",
            ResidualTarget::Corrected => "corrected",
        })
    }
}

impl FromStr for ResidualTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(ResidualTarget::Original),
            "corrected" => Ok(ResidualTarget::Corrected),
            other => Err(Error::InvalidArgument(format!(
                "residual_target must be original or corrected, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Feature width of every encoder output and of the fusion stages.
    pub cf_channels: usize,
    /// Output channels of each encoder layer before the projection.
    pub growth: usize,
    pub leaky_slope: f64,
    pub safa_heads: usize,
    pub residual_target: ResidualTarget,
    /// Added to the variance inside SpecialConv statistics.
    pub stat_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            cf_channels: 32,
            growth: 16,
            leaky_slope: 0.01,
            safa_heads: 8,
            residual_target: ResidualTarget::Original,
            stat_eps: 1e-5,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.cf_channels == 0 || self.growth == 0 || self.safa_heads == 0 {
            return bad("cf_channels, growth and safa_heads must be positive".into());
        }
        if !self.cf_channels.is_multiple_of(self.safa_heads) {
            return bad(format!(
                "safa_heads {} must divide cf_channels {}",
                self.safa_heads, self.cf_channels
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        if !(self.stat_eps >= 0.0 && self.stat_eps.is_finite()) {
            return bad(format!(
                "stat_eps {} must be finite and >= 0",
                self.stat_eps
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvIds {
    /// Adds a `k×k` conv from `cin` to `cout` channels with a zero bias.
    pub fn add(
        layout: &mut Layout,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        init: Init,
    ) -> Self {
        Self::with_bias(layout, name, cin, cout, k, init, Init::Zeros)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_bias(
        layout: &mut Layout,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        init: Init,
        bias: Init,
    ) -> Self {
        ConvIds {
            weight: layout.add(format!("{name}.weight"), Shape::new(cout, cin, k, k), init),
            bias: layout.add(format!("{name}.bias"), Shape::new(1, cout, 1, 1), bias),
        }
    }

    /// He-initialized conv.
    pub fn he(layout: &mut Layout, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::add(
            layout,
            name,
            cin,
            cout,
            k,
            Init::HeUniform {
                fan_in: cin * k * k,
            },
        )
    }

    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        g.conv2d(x, b.var(self.weight), Some(b.var(self.bias)), stride, pad)
    }
}

/// 3×3 conv whose output channels are scaled by `2·sigmoid(A·[μ;σ] + b)`,
/// with `μ`, `σ` the per-channel statistics of the input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecialConvIds {
    pub conv: ConvIds,
    /// `A` as a 1×1 conv over the `2·cin` statistics.
    pub mult: ConvIds,
}

impl SpecialConvIds {
    pub fn add(layout: &mut Layout, name: &str, cin: usize, cout: usize, zero_conv: bool) -> Self {
        let init = if zero_conv {
            Init::Zeros
        } else {
            Init::HeUniform { fan_in: cin * 9 }
        };
        SpecialConvIds {
            conv: ConvIds::add(layout, &format!("{name}.conv"), cin, cout, 3, init),
            mult: ConvIds::add(
                layout,
                &format!("{name}.mult"),
                2 * cin,
                cout,
                1,
                Init::Zeros,
            ),
        }
    }
}

pub fn special_conv<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &SpecialConvIds,
    x: Var,
    eps: T,
) -> Result<Var> {
    let m = multiplier(g, b, p, x, eps)?;
    let y = p.conv.apply(g, b, x, 1, 1)?;
    g.mul(y, m)
}

/// The `(n, cout, 1, 1)` multiplier of a SpecialConv; each entry lies in `(0, 2)`.
pub fn multiplier<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &SpecialConvIds,
    x: Var,
    eps: T,
) -> Result<Var> {
    let (mu, sigma) = g.channel_stats(x, eps);
    let stats = g.concat(&[mu, sigma])?;
    let logits = p.mult.apply(g, b, stats, 1, 0)?;
    let s = g.sigmoid(logits);
    Ok(g.scale(s, T::lit(2.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UfenIds {
    pub special: SpecialConvIds,
    pub dense: Vec<ConvIds>,
    pub proj: ConvIds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SafaIds {
    /// Two stride-2 3×3 convs taking full resolution down to quarter.
    pub query: [ConvIds; 2],
    pub key: ConvIds,
    /// Per head, a 1×1 conv from the head's `[Q;K]` slice to two logits.
    pub logits: Vec<ConvIds>,
}

/// Full-, quarter- and eighth-resolution views of one padded image.
#[derive(Clone, Copy, Debug)]
pub struct ScalePyramid {
    pub full: Var,
    pub quarter: Var,
    pub eighth: Var,
}

/// Intermediate values of one [`AquaFeat::forward`] pass.
#[derive(Clone, Debug)]
pub struct EnhanceTrace {
    pub pyramid: ScalePyramid,
    /// Encoder outputs for the full, quarter and eighth streams.
    pub streams: [Var; 3],
    /// Per head, the `(n, 2, h, w)` softmax weights over (full, quarter).
    pub safa_weights: Vec<Var>,
    pub fused: Var,
    pub aggregated: Var,
    /// `target + tanh(residual)` before clamping.
    pub preclamp: Var,
    pub output: Var,
}

/// Parameter ids of the enhancer inside a shared [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct AquaFeat {
    pub config: NetConfig,
    pub ufen: UfenIds,
    pub safa: SafaIds,
    pub agg: ConvIds,
    pub out: SpecialConvIds,
    first: ParamId,
    last: ParamId,
}

/// Smallest multiple of [`PAD_MULTIPLE`] that is `>= n`.
pub fn padded_len(n: usize) -> usize {
    n.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE
}

fn check_min_size(h: usize, w: usize) -> Result<()> {
    if h < PAD_MULTIPLE || w < PAD_MULTIPLE {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {PAD_MULTIPLE}x{PAD_MULTIPLE} minimum"
        )));
    }
    Ok(())
}

/// Reflect-pads `x` to multiples of 8 and resamples it to 1/4 and 1/8 scale.
pub fn build_scale_pyramid<T: Real>(g: &mut Graph<T>, x: Var) -> Result<ScalePyramid> {
    let s = g.shape(x);
    check_min_size(s.h(), s.w())?;
    let (ph, pw) = (padded_len(s.h()), padded_len(s.w()));
    let full = if (ph, pw) == (s.h(), s.w()) {
        x
    } else {
        g.reflect_pad(x, ph, pw)?
    };
    let quarter = g.resize(full, ph / 4, pw / 4)?;
    let eighth = g.resize(full, ph / 8, pw / 8)?;
    Ok(ScalePyramid {
        full,
        quarter,
        eighth,
    })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}

impl AquaFeat {
    /// Registers the enhancer's tensors in `layout` under `prefix`.
    pub fn new(config: NetConfig, layout: &mut Layout, prefix: &str) -> Result<Self> {
        config.validate()?;
        let (cf, gr) = (config.cf_channels, config.growth);
        let name = |s: &str| format!("{prefix}{s}");
        let start = layout.len();

        let special = SpecialConvIds::add(layout, &name("ufen.special"), 3, gr, false);
        let dense = (1..=DENSE_LAYERS)
            .map(|i| ConvIds::he(layout, &name(&format!("ufen.dense{i}")), gr * i, gr, 3))
            .collect();
        let proj = ConvIds::he(layout, &name("ufen.proj"), gr * DENSE_LAYERS, cf, 1);
        let ufen = UfenIds {
            special,
            dense,
            proj,
        };

        let d = cf / config.safa_heads;
        let safa = SafaIds {
            query: [
                ConvIds::he(layout, &name("safa.query0"), cf, cf, 3),
                ConvIds::he(layout, &name("safa.query1"), cf, cf, 3),
            ],
            key: ConvIds::he(layout, &name("safa.key"), cf, cf, 1),
            logits: (0..config.safa_heads)
                .map(|h| ConvIds::he(layout, &name(&format!("safa.head{h}")), 2 * d, 2, 1))
                .collect(),
        };
        let agg = ConvIds::he(layout, &name("agg"), 2 * cf, cf, 3);
        let out = SpecialConvIds::add(layout, &name("out"), cf, 3, true);
        Ok(AquaFeat {
            config,
            ufen,
            safa,
            agg,
            out,
            first: ParamId::from_index(start),
            last: ParamId::from_index(layout.len() - 1),
        })
    }

    /// Stand-alone layout holding only the enhancer.
    pub fn standalone(config: NetConfig) -> Result<(Self, Layout)> {
        let mut layout = Layout::new();
        let net = AquaFeat::new(config, &mut layout, "")?;
        Ok((net, layout))
    }

    /// True if `id` belongs to the enhancer.
    pub fn owns(&self, id: ParamId) -> bool {
        (self.first..=self.last).contains(&id)
    }

    fn slope<T: Real>(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    fn eps<T: Real>(&self) -> T {
        T::lit(self.config.stat_eps)
    }

    /// The shared encoder applied to one 3-channel stream.
    pub fn ufen_forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        ensure(s.c() == 3, || {
            format!("encoder expects 3 channels, got {s}")
        })?;
        let p = &self.ufen;
        let first = special_conv(g, b, &p.special, x, self.eps())?;
        let mut outs = vec![g.leaky_relu(first, self.slope())];
        for conv in &p.dense {
            let inp = if outs.len() == 1 {
                outs[0]
            } else {
                g.concat(&outs)?
            };
            let y = conv.apply(g, b, inp, 1, 1)?;
            outs.push(g.leaky_relu(y, self.slope()));
        }
        let cat = g.concat(&outs[1..])?;
        p.proj.apply(g, b, cat, 1, 0)
    }

    /// Fuses full-resolution `f` with quarter-resolution `fq`; also returns
    /// the per-head softmax weights.
    pub fn safa_fuse<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        f: Var,
        fq: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let (sf, sq) = (g.shape(f), g.shape(fq));
        let cf = self.config.cf_channels;
        ensure(sf.h() == 4 * sq.h() && sf.w() == 4 * sq.w(), || {
            format!("attention fusion needs a 4:1 resolution ratio, got {sf} and {sq}")
        })?;
        ensure(sf.c() == cf && sq.c() == cf, || {
            format!("attention fusion expects {cf} channels, got {sf} and {sq}")
        })?;
        ensure(cf.is_multiple_of(self.safa.logits.len()), || {
            format!(
                "{} heads do not divide {cf} channels",
                self.safa.logits.len()
            )
        })?;
        let p = &self.safa;
        let q0 = p.query[0].apply(g, b, f, 2, 1)?;
        let q0 = g.leaky_relu(q0, self.slope());
        let q = p.query[1].apply(g, b, q0, 2, 1)?;
        let k = p.key.apply(g, b, fq, 1, 0)?;
        let d = cf / p.logits.len();
        let mut heads = Vec::with_capacity(p.logits.len());
        let mut weights = Vec::with_capacity(p.logits.len());
        for (h, proj) in p.logits.iter().enumerate() {
            let qh = g.slice_channels(q, h * d, d)?;
            let kh = g.slice_channels(k, h * d, d)?;
            let cat = g.concat(&[qh, kh])?;
            let logits = proj.apply(g, b, cat, 1, 0)?;
            let w = g.softmax(logits, 1)?;
            let w_full = g.slice_channels(w, 0, 1)?;
            let w_quarter = g.slice_channels(w, 1, 1)?;
            let a = g.mul(qh, w_full)?;
            let c = g.mul(kh, w_quarter)?;
            heads.push(g.add(a, c)?);
            weights.push(w);
        }
        Ok((g.concat(&heads)?, weights))
    }

    /// Upsamples the eighth-resolution stream 2×, concatenates it after the
    /// fused map and applies the final 3×3 conv.
    pub fn aggregate_final<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        fused: Var,
        fo: Var,
    ) -> Result<Var> {
        let (sa, so) = (g.shape(fused), g.shape(fo));
        ensure(sa.h() == 2 * so.h() && sa.w() == 2 * so.w(), || {
            format!("aggregation needs a 2:1 resolution ratio, got {sa} and {so}")
        })?;
        let up = g.resize(fo, sa.h(), sa.w())?;
        let cat = g.concat(&[fused, up])?;
        let y = self.agg.apply(g, b, cat, 1, 1)?;
        Ok(g.leaky_relu(y, self.slope()))
    }

    /// `clamp(target + crop(tanh(out_special(upsample(agg)))), 0, 1)`;
    /// returns `(pre-clamp, output)`.
    pub fn residual_output<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        agg: Var,
        target: Var,
    ) -> Result<(Var, Var)> {
        let st = g.shape(target);
        let (ph, pw) = (padded_len(st.h()), padded_len(st.w()));
        let up = g.resize(agg, ph, pw)?;
        let r = special_conv(g, b, &self.out, up, self.eps())?;
        let r = g.tanh(r);
        let r = if (ph, pw) == (st.h(), st.w()) {
            r
        } else {
            g.crop(r, st.h(), st.w())?
        };
        let pre = g.add(target, r)?;
        let out = g.clamp(pre, T::zero(), T::one());
        Ok((pre, out))
    }

    /// Records the whole pipeline for `image` on `g`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        image: &Image,
    ) -> Result<EnhanceTrace> {
        check_min_size(image.height(), image.width())?;
        let corrected = apply_white_balance(image);
        let x = corrected.constant(g);
        let pyramid = build_scale_pyramid(g, x)?;
        let streams = [
            self.ufen_forward(g, b, pyramid.full)?,
            self.ufen_forward(g, b, pyramid.quarter)?,
            self.ufen_forward(g, b, pyramid.eighth)?,
        ];
        let (fused, safa_weights) = self.safa_fuse(g, b, streams[0], streams[1])?;
        let aggregated = self.aggregate_final(g, b, fused, streams[2])?;
        let target = match self.config.residual_target {
            ResidualTarget::Original => image.constant(g),
            ResidualTarget::Corrected => x,
        };
        let (preclamp, output) = self.residual_output(g, b, aggregated, target)?;
        Ok(EnhanceTrace {
            pyramid,
            streams,
            safa_weights,
            fused,
            aggregated,
            preclamp,
            output,
        })
    }

    /// Enhances one image with frozen parameters.
    pub fn enhance(&self, store: &ParamStore<f32>, image: &Image) -> Result<Image> {
        let mut g = Graph::new();
        let b = Bound::frozen(&mut g, store);
        let trace = self.forward(&mut g, &b, image)?;
        Image::from_tensor(g.value(trace.output))
    }
}
