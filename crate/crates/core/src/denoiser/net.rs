//! Conditional U-Net: layout, forward pass with caches, and backward pass.
//!
//! ```text
//! x = concat(y_t, lr_up)
//! h = conv_in(x)
//! down[l]: ResBlock(c_{l-1} -> c_l), keep skip, 2x2 average pool   (l < depth)
//! mid:     ResBlock(c_{depth-1} -> c_depth)
//! up[l]:   nearest 2x upsample, concat skip_l, ResBlock(c_{l+1} + c_l -> c_l)
//! delta = conv_out(silu(norm_out(h)))
//! ```
//!
//! with `c_l = base * 2^l`. Each ResBlock is
//! `conv2(silu(norm2(conv1(silu(norm1(x))) + proj(temb)))) + skip(x)`,
//! where `temb = silu(time_linear(sinusoid(t)))` is shared by all blocks.

use super::layers::*;
use super::scalar::Scalar;
use super::{time_embedding_into, DenoiserConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with standard deviation `1 / sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
struct ResBlockSpec {
    norm1: NormSpec,
    conv1: ConvSpec,
    proj: LinearSpec,
    norm2: NormSpec,
    conv2: ConvSpec,
    skip: Option<ConvSpec>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    time_linear: LinearSpec,
    conv_in: ConvSpec,
    down: Vec<ResBlockSpec>,
    mid: ResBlockSpec,
    /// Indexed by level; executed from the deepest level upwards.
    up: Vec<ResBlockSpec>,
    norm_out: NormSpec,
    conv_out: ConvSpec,
    embed_dim: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
    groups: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) -> ConvSpec {
        let init = if zero { Init::Zeros } else { Init::FanIn(cin * k * k) };
        let weight = self.push(format!("{name}.weight"), vec![cout, cin, k, k], init);
        let bias = self.push(format!("{name}.bias"), vec![cout], Init::Zeros);
        ConvSpec { weight, bias, cin, cout, k }
    }

    fn norm(&mut self, name: &str, channels: usize) -> NormSpec {
        let gamma = self.push(format!("{name}.gamma"), vec![channels], Init::Ones);
        let beta = self.push(format!("{name}.beta"), vec![channels], Init::Zeros);
        NormSpec { gamma, beta, channels, groups: self.groups }
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> LinearSpec {
        let weight = self.push(format!("{name}.weight"), vec![cout, cin], Init::FanIn(cin));
        let bias = self.push(format!("{name}.bias"), vec![cout], Init::Zeros);
        LinearSpec { weight, bias, cin, cout }
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize, embed: usize) -> ResBlockSpec {
        ResBlockSpec {
            norm1: self.norm(&format!("{name}.norm1"), cin),
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3, false),
            proj: self.linear(&format!("{name}.time_proj"), embed, cout),
            norm2: self.norm(&format!("{name}.norm2"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, false),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, false)),
        }
    }
}

impl Layout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let mut b = Builder {
            specs: Vec::new(),
            groups: cfg.norm_groups(),
        };
        let embed = cfg.time_embed_dim;
        let ch = |l: usize| cfg.base_channels << l;
        let time_linear = b.linear("time_linear", embed, embed);
        let conv_in = b.conv("conv_in", cfg.in_channels(), ch(0), 3, false);
        let down = (0..cfg.depth)
            .map(|l| {
                let cin = if l == 0 { ch(0) } else { ch(l - 1) };
                b.res_block(&format!("down{l}"), cin, ch(l), embed)
            })
            .collect();
        let mid = b.res_block("mid", ch(cfg.depth - 1), ch(cfg.depth), embed);
        let up = (0..cfg.depth)
            .map(|l| b.res_block(&format!("up{l}"), ch(l + 1) + ch(l), ch(l), embed))
            .collect();
        let norm_out = b.norm("norm_out", ch(0));
        let conv_out = b.conv("conv_out", ch(0), cfg.out_channels(), 3, true);
        Self {
            specs: b.specs,
            time_linear,
            conv_in,
            down,
            mid,
            up,
            norm_out,
            conv_out,
            embed_dim: embed,
        }
    }

    /// Indices of the output convolution's parameters.
    pub fn output_params(&self) -> [usize; 2] {
        [self.conv_out.weight, self.conv_out.bias]
    }
}

struct ResBlockCache<T> {
    n1: NormCache<T>,
    a1: Vec<T>,
    c1: ConvCache<T>,
    n2: NormCache<T>,
    a2: Vec<T>,
    c2: ConvCache<T>,
    skip: Option<ConvCache<T>>,
}

pub struct ForwardCache<T> {
    embed: Vec<T>,
    time_pre: Vec<T>,
    time_hidden: Vec<T>,
    conv_in: ConvCache<T>,
    down: Vec<ResBlockCache<T>>,
    mid: ResBlockCache<T>,
    up: Vec<ResBlockCache<T>>,
    norm_out: NormCache<T>,
    act_out: Vec<T>,
    conv_out: ConvCache<T>,
    skip_channels: Vec<usize>,
}

fn res_forward<T: Scalar>(
    spec: &ResBlockSpec,
    params: &[Vec<T>],
    x: &Tensor<T>,
    temb: &[T],
) -> (Tensor<T>, ResBlockCache<T>) {
    let (pre1, n1) = norm_forward(&spec.norm1, params, x);
    let act1 = silu_tensor(&pre1);
    let (mut h, c1) = conv_forward(&spec.conv1, params, &act1);
    let shift = linear_forward(&spec.proj, params, temb);
    let hw = h.hw();
    for (row, &s) in h.data.chunks_exact_mut(hw).zip(&shift) {
        row.iter_mut().for_each(|v| *v += s);
    }
    let (pre2, n2) = norm_forward(&spec.norm2, params, &h);
    let act2 = silu_tensor(&pre2);
    let (mut out, c2) = conv_forward(&spec.conv2, params, &act2);
    let skip = match &spec.skip {
        Some(s) => {
            let (sk, cache) = conv_forward(s, params, x);
            out.add_assign(&sk);
            Some(cache)
        }
        None => {
            out.add_assign(x);
            None
        }
    };
    let cache = ResBlockCache {
        n1,
        a1: pre1.data,
        c1,
        n2,
        a2: pre2.data,
        c2,
        skip,
    };
    (out, cache)
}

fn res_backward<T: Scalar>(
    spec: &ResBlockSpec,
    params: &[Vec<T>],
    cache: &ResBlockCache<T>,
    temb: &[T],
    dy: &Tensor<T>,
    grads: &mut [Vec<T>],
    d_temb: &mut [T],
) -> Tensor<T> {
    let mut dskip = match (&spec.skip, &cache.skip) {
        (Some(s), Some(c)) => conv_backward(s, params, c, dy, grads, true).unwrap(),
        _ => dy.clone(),
    };
    let mut d = conv_backward(&spec.conv2, params, &cache.c2, dy, grads, true).unwrap();
    silu_backward(&cache.a2, &mut d.data);
    let dh = norm_backward(&spec.norm2, params, &cache.n2, &d, grads);
    let hw = dh.hw();
    let dshift: Vec<T> = dh
        .data
        .chunks_exact(hw)
        .map(|row| row.iter().copied().sum())
        .collect();
    linear_backward(&spec.proj, params, temb, &dshift, grads, d_temb);
    let mut d = conv_backward(&spec.conv1, params, &cache.c1, &dh, grads, true).unwrap();
    silu_backward(&cache.a1, &mut d.data);
    let dx = norm_backward(&spec.norm1, params, &cache.n1, &d, grads);
    dskip.add_assign(&dx);
    dskip
}

impl Layout {
    /// Returns the predicted residual `delta` (the HR estimate is `lr_up + delta`).
    pub fn forward<T: Scalar>(
        &self,
        params: &[Vec<T>],
        input: &Tensor<T>,
        t: usize,
    ) -> (Tensor<T>, ForwardCache<T>) {
        let mut embed = vec![T::zero(); self.embed_dim];
        time_embedding_into(t, &mut embed);
        let time_pre = linear_forward(&self.time_linear, params, &embed);
        let time_hidden = silu(&time_pre);

        let (mut h, conv_in) = conv_forward(&self.conv_in, params, input);
        let mut skips = Vec::with_capacity(self.down.len());
        let mut down = Vec::with_capacity(self.down.len());
        for spec in &self.down {
            let (out, cache) = res_forward(spec, params, &h, &time_hidden);
            down.push(cache);
            h = avg_pool2(&out);
            skips.push(out);
        }
        let (mut h2, mid) = res_forward(&self.mid, params, &h, &time_hidden);
        let skip_channels = skips.iter().map(|s| s.c).collect();
        let mut up: Vec<Option<ResBlockCache<T>>> = (0..self.up.len()).map(|_| None).collect();
        for l in (0..self.up.len()).rev() {
            let x = concat(&upsample2(&h2), &skips[l]);
            let (out, cache) = res_forward(&self.up[l], params, &x, &time_hidden);
            up[l] = Some(cache);
            h2 = out;
        }
        let (pre, norm_out) = norm_forward(&self.norm_out, params, &h2);
        let act = silu_tensor(&pre);
        let (delta, conv_out) = conv_forward(&self.conv_out, params, &act);
        let cache = ForwardCache {
            embed,
            time_pre,
            time_hidden,
            conv_in,
            down,
            mid,
            up: up.into_iter().map(Option::unwrap).collect(),
            norm_out,
            act_out: pre.data,
            conv_out,
            skip_channels,
        };
        (delta, cache)
    }

    /// Accumulates parameter gradients of `<d_delta, delta>` into `grads`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[Vec<T>],
        cache: &ForwardCache<T>,
        d_delta: &Tensor<T>,
        grads: &mut [Vec<T>],
    ) {
        let mut d_temb = vec![T::zero(); self.embed_dim];
        let temb = &cache.time_hidden;
        let mut d = conv_backward(&self.conv_out, params, &cache.conv_out, d_delta, grads, true).unwrap();
        silu_backward(&cache.act_out, &mut d.data);
        let mut dh = norm_backward(&self.norm_out, params, &cache.norm_out, &d, grads);

        let mut dskips = Vec::with_capacity(self.up.len());
        for l in 0..self.up.len() {
            let dcat = res_backward(&self.up[l], params, &cache.up[l], temb, &dh, grads, &mut d_temb);
            let up_channels = dcat.c - cache.skip_channels[l];
            let (dup, dskip) = split(dcat, up_channels);
            dskips.push(dskip);
            dh = upsample2_backward(&dup);
        }
        dh = res_backward(&self.mid, params, &cache.mid, temb, &dh, grads, &mut d_temb);
        for l in (0..self.down.len()).rev() {
            let mut dout = avg_pool2_backward(&dh);
            dout.add_assign(&dskips[l]);
            dh = res_backward(&self.down[l], params, &cache.down[l], temb, &dout, grads, &mut d_temb);
        }
        conv_backward(&self.conv_in, params, &cache.conv_in, &dh, grads, false);

        silu_backward(&cache.time_pre, &mut d_temb);
        let mut sink = vec![T::zero(); self.embed_dim];
        linear_backward(&self.time_linear, params, &cache.embed, &d_temb, grads, &mut sink);
    }
}
