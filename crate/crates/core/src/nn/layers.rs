use super::tensor::{axpy, dot, Tensor};
use super::{NnError, Result};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

/// Trainable array. A frozen parameter never receives a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub frozen: bool,
}

impl Param {
    fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            value: Tensor::new(shape, values).expect("parameter shape"),
            frozen: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.value.shape
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.value.grad.as_deref()
    }

    /// Gradient buffer for accumulation, or `None` when frozen.
    fn grad_mut(&mut self) -> Option<&mut [f64]> {
        if self.frozen {
            self.value.grad = None;
            return None;
        }
        let n = self.value.values.len();
        Some(self.value.grad.get_or_insert_with(|| vec![0.0; n]))
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        if frozen {
            self.value.grad = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
    },
    #[serde(rename = "avgpool2")]
    AvgPool2,
    #[serde(rename = "globalavgpool")]
    GlobalAvgPool,
    Relu,
    Tanh,
    Dropout {
        p: f64,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { inputs, outputs } => inputs > 0 && outputs > 0,
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => in_channels > 0 && out_channels > 0,
            LayerSpec::Dropout { p } => (0.0..1.0).contains(&p),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidSpec(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// U(-sqrt(6 / fan_in), +) for weights feeding a ReLU.
    HeUniform,
    /// U(-sqrt(6 / (fan_in + fan_out)), +) otherwise.
    XavierUniform,
}

fn init_weights(
    rng: &mut dyn RngCore,
    init: Init,
    fan_in: usize,
    fan_out: usize,
    n: usize,
) -> Vec<f64> {
    let limit = match init {
        Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
        Init::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv3x3(Conv3x3),
    AvgPool2 {
        input_shape: Option<Vec<usize>>,
    },
    GlobalAvgPool {
        input_shape: Option<Vec<usize>>,
    },
    Relu {
        output: Option<Tensor>,
    },
    Tanh {
        output: Option<Tensor>,
    },
    Dropout {
        p: f64,
        mask: Option<Vec<f64>>,
        seen: bool,
    },
}

/// Per-call forward settings.
pub struct ForwardCtx<'a> {
    pub train: bool,
    pub rng: &'a mut dyn RngCore,
}

fn shape_err(expected: impl Into<String>, found: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        expected: expected.into(),
        found: format!("{found:?}"),
    }
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec, init: Init, rng: &mut dyn RngCore) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense {
                weight: Param::new(
                    vec![outputs, inputs],
                    init_weights(rng, init, inputs, outputs, inputs * outputs),
                ),
                bias: Param::new(vec![outputs], vec![0.0; outputs]),
                input: None,
            }),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                let n = out_channels * in_channels * 9;
                Layer::Conv3x3(Conv3x3 {
                    weight: Param::new(
                        vec![out_channels, in_channels, 3, 3],
                        init_weights(rng, init, in_channels * 9, out_channels * 9, n),
                    ),
                    bias: Param::new(vec![out_channels], vec![0.0; out_channels]),
                    input: None,
                })
            }
            LayerSpec::AvgPool2 => Layer::AvgPool2 { input_shape: None },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool { input_shape: None },
            LayerSpec::Relu => Layer::Relu { output: None },
            LayerSpec::Tanh => Layer::Tanh { output: None },
            LayerSpec::Dropout { p } => Layer::Dropout {
                p,
                mask: None,
                seen: false,
            },
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.weight.shape()[1],
                outputs: d.weight.shape()[0],
            },
            Layer::Conv3x3(c) => LayerSpec::Conv3x3 {
                in_channels: c.weight.shape()[1],
                out_channels: c.weight.shape()[0],
            },
            Layer::AvgPool2 { .. } => LayerSpec::AvgPool2,
            Layer::GlobalAvgPool { .. } => LayerSpec::GlobalAvgPool,
            Layer::Relu { .. } => LayerSpec::Relu,
            Layer::Tanh { .. } => LayerSpec::Tanh,
            Layer::Dropout { p, .. } => LayerSpec::Dropout { p: *p },
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv3x3(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv3x3(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.input = None,
            Layer::Conv3x3(c) => c.input = None,
            Layer::AvgPool2 { input_shape } | Layer::GlobalAvgPool { input_shape } => {
                *input_shape = None
            }
            Layer::Relu { output } | Layer::Tanh { output } => *output = None,
            Layer::Dropout { mask, seen, .. } => {
                *mask = None;
                *seen = false;
            }
        }
    }

    pub fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv3x3(c) => c.forward(x),
            Layer::AvgPool2 { input_shape } => {
                let out = avgpool2_forward(&x)?;
                *input_shape = Some(x.shape);
                Ok(out)
            }
            Layer::GlobalAvgPool { input_shape } => {
                let out = global_avgpool_forward(&x)?;
                *input_shape = Some(x.shape);
                Ok(out)
            }
            Layer::Relu { output } => {
                let mut y = x;
                y.values.iter_mut().for_each(|v| *v = v.max(0.0));
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Tanh { output } => {
                let mut y = x;
                y.values.iter_mut().for_each(|v| *v = v.tanh());
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Dropout { p, mask, seen } => {
                *seen = true;
                if !ctx.train || *p == 0.0 {
                    *mask = None;
                    return Ok(x);
                }
                let keep = 1.0 - *p;
                let scale = 1.0 / keep;
                let m: Vec<f64> = (0..x.len())
                    .map(|_| {
                        if ctx.rng.random_bool(keep) {
                            scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut y = x;
                y.values.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                *mask = Some(m);
                Ok(y)
            }
        }
    }

    /// Eval-mode forward that leaves the layer untouched.
    pub fn infer(&self, x: Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.apply(&x),
            Layer::Conv3x3(c) => c.apply(&x),
            Layer::AvgPool2 { .. } => avgpool2_forward(&x),
            Layer::GlobalAvgPool { .. } => global_avgpool_forward(&x),
            Layer::Relu { .. } => {
                let mut y = x;
                y.values.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(y)
            }
            Layer::Tanh { .. } => {
                let mut y = x;
                y.values.iter_mut().for_each(|v| *v = v.tanh());
                Ok(y)
            }
            Layer::Dropout { .. } => Ok(x),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        match self {
            Layer::Dense(d) => d.backward(g, need_input_grad),
            Layer::Conv3x3(c) => c.backward(g, need_input_grad),
            Layer::AvgPool2 { input_shape } => {
                let shape = input_shape.take().ok_or(NnError::NoForwardCache)?;
                Ok(Some(avgpool2_backward(&g, shape)?))
            }
            Layer::GlobalAvgPool { input_shape } => {
                let shape = input_shape.take().ok_or(NnError::NoForwardCache)?;
                let hw = shape[2] * shape[3];
                let inv = 1.0 / hw as f64;
                let mut out = Vec::with_capacity(g.len() * hw);
                for &v in &g.values {
                    out.extend(std::iter::repeat_n(v * inv, hw));
                }
                Ok(Some(Tensor::new(shape, out)?))
            }
            Layer::Relu { output } => {
                let y = output.take().ok_or(NnError::NoForwardCache)?;
                let mut gi = g;
                gi.values.iter_mut().zip(&y.values).for_each(|(gv, yv)| {
                    if *yv <= 0.0 {
                        *gv = 0.0
                    }
                });
                Ok(Some(gi))
            }
            Layer::Tanh { output } => {
                let y = output.take().ok_or(NnError::NoForwardCache)?;
                let mut gi = g;
                gi.values
                    .iter_mut()
                    .zip(&y.values)
                    .for_each(|(gv, yv)| *gv *= 1.0 - yv * yv);
                Ok(Some(gi))
            }
            Layer::Dropout { mask, seen, .. } => {
                if !std::mem::take(seen) {
                    return Err(NnError::NoForwardCache);
                }
                let mut gi = g;
                if let Some(m) = mask.take() {
                    gi.values.iter_mut().zip(&m).for_each(|(gv, s)| *gv *= s);
                }
                Ok(Some(gi))
            }
        }
    }
}

impl Dense {
    fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let y = self.apply(&x)?;
        self.input = Some(x);
        Ok(y)
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (outs, ins) = (self.weight.shape()[0], self.weight.shape()[1]);
        if x.shape.len() != 2 || x.shape[1] != ins {
            return Err(shape_err(format!("[N, {ins}]"), &x.shape));
        }
        let n = x.batch();
        let w = &self.weight.value.values;
        let b = &self.bias.value.values;
        let mut out = vec![0.0; n * outs];
        for (xi, yi) in x.values.chunks_exact(ins).zip(out.chunks_exact_mut(outs)) {
            for (o, y) in yi.iter_mut().enumerate() {
                *y = b[o] + dot(&w[o * ins..(o + 1) * ins], xi);
            }
        }
        Tensor::new(vec![n, outs], out)
    }

    fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let x = self.input.take().ok_or(NnError::NoForwardCache)?;
        let (outs, ins) = (self.weight.shape()[0], self.weight.shape()[1]);
        g.expect_shape(&[x.batch(), outs])?;
        if let Some(gw) = self.weight.grad_mut() {
            for (xi, gi) in x.values.chunks_exact(ins).zip(g.values.chunks_exact(outs)) {
                for (o, &go) in gi.iter().enumerate() {
                    if go != 0.0 {
                        axpy(&mut gw[o * ins..(o + 1) * ins], go, xi);
                    }
                }
            }
        }
        if let Some(gb) = self.bias.grad_mut() {
            for gi in g.values.chunks_exact(outs) {
                gb.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let w = &self.weight.value.values;
        let mut gx = vec![0.0; x.len()];
        for (gxi, gi) in gx.chunks_exact_mut(ins).zip(g.values.chunks_exact(outs)) {
            for (o, &go) in gi.iter().enumerate() {
                if go != 0.0 {
                    axpy(gxi, go, &w[o * ins..(o + 1) * ins]);
                }
            }
        }
        Ok(Some(Tensor::new(x.shape, gx)?))
    }
}

/// Column range `[lo, hi)` of output positions whose tap at offset `d`
/// (-1, 0, +1) stays inside a row of width `w`.
#[inline]
fn tap_range(d: isize, w: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { w - 1 } else { w };
    (lo, hi.max(lo))
}

impl Conv3x3 {
    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        let (oc, ic) = (self.weight.shape()[0], self.weight.shape()[1]);
        if x.shape.len() != 4 || x.shape[1] != ic {
            return Err(shape_err(format!("[N, {ic}, H, W]"), &x.shape));
        }
        Ok((x.shape[0], ic, oc, x.shape[2], x.shape[3]))
    }

    fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let y = self.apply(&x)?;
        self.input = Some(x);
        Ok(y)
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (n, ic, oc, h, w) = self.dims(x)?;
        let hw = h * w;
        let wt = &self.weight.value.values;
        let bias = &self.bias.value.values;
        let mut out = vec![0.0; n * oc * hw];
        for b in 0..n {
            let xin = &x.values[b * ic * hw..(b + 1) * ic * hw];
            for o in 0..oc {
                let plane = &mut out[(b * oc + o) * hw..(b * oc + o + 1) * hw];
                plane.iter_mut().for_each(|v| *v = bias[o]);
                for c in 0..ic {
                    let src = &xin[c * hw..(c + 1) * hw];
                    let k = &wt[(o * ic + c) * 9..(o * ic + c) * 9 + 9];
                    for ky in 0..3isize {
                        let dy = ky - 1;
                        for kx in 0..3isize {
                            let dx = kx - 1;
                            let wv = k[(ky * 3 + kx) as usize];
                            let (x0, x1) = tap_range(dx, w);
                            for y in 0..h {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                                let drow = &mut plane[y * w..(y + 1) * w];
                                let s =
                                    &srow[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                                axpy(&mut drow[x0..x1], wv, s);
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, oc, h, w], out)
    }

    fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let x = self.input.take().ok_or(NnError::NoForwardCache)?;
        let (n, ic, oc, h, w) = self.dims(&x)?;
        g.expect_shape(&[n, oc, h, w])?;
        let hw = h * w;
        if let Some(gb) = self.bias.grad_mut() {
            for b in 0..n {
                for (o, gbo) in gb.iter_mut().enumerate() {
                    *gbo += g.values[(b * oc + o) * hw..(b * oc + o + 1) * hw]
                        .iter()
                        .sum::<f64>();
                }
            }
        }
        if let Some(gw) = self.weight.grad_mut() {
            for b in 0..n {
                for o in 0..oc {
                    let gp = &g.values[(b * oc + o) * hw..(b * oc + o + 1) * hw];
                    for c in 0..ic {
                        let src = &x.values[(b * ic + c) * hw..(b * ic + c + 1) * hw];
                        let k = &mut gw[(o * ic + c) * 9..(o * ic + c) * 9 + 9];
                        for ky in 0..3isize {
                            let dy = ky - 1;
                            for kx in 0..3isize {
                                let dx = kx - 1;
                                let (x0, x1) = tap_range(dx, w);
                                let mut acc = 0.0;
                                for y in 0..h {
                                    let sy = y as isize + dy;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                                    acc += dot(
                                        &gp[y * w + x0..y * w + x1],
                                        &srow[(x0 as isize + dx) as usize
                                            ..(x1 as isize + dx) as usize],
                                    );
                                }
                                k[(ky * 3 + kx) as usize] += acc;
                            }
                        }
                    }
                }
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let wt = &self.weight.value.values;
        let mut gx = vec![0.0; x.len()];
        for b in 0..n {
            for o in 0..oc {
                let gp = &g.values[(b * oc + o) * hw..(b * oc + o + 1) * hw];
                for c in 0..ic {
                    let dst = &mut gx[(b * ic + c) * hw..(b * ic + c + 1) * hw];
                    let k = &wt[(o * ic + c) * 9..(o * ic + c) * 9 + 9];
                    for ky in 0..3isize {
                        let dy = ky - 1;
                        for kx in 0..3isize {
                            let dx = kx - 1;
                            let wv = k[(ky * 3 + kx) as usize];
                            let (x0, x1) = tap_range(dx, w);
                            for y in 0..h {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                                axpy(
                                    &mut drow
                                        [(x0 as isize + dx) as usize..(x1 as isize + dx) as usize],
                                    wv,
                                    &gp[y * w + x0..y * w + x1],
                                );
                            }
                        }
                    }
                }
            }
        }
        Ok(Some(Tensor::new(x.shape, gx)?))
    }
}

fn avgpool2_forward(x: &Tensor) -> Result<Tensor> {
    if x.shape.len() != 4 || !x.shape[2].is_multiple_of(2) || !x.shape[3].is_multiple_of(2) {
        return Err(shape_err("[N, C, H, W] with even H and W", &x.shape));
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for (src, dst) in x
        .values
        .chunks_exact(h * w)
        .zip(out.chunks_exact_mut(oh * ow))
    {
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

fn global_avgpool_forward(x: &Tensor) -> Result<Tensor> {
    if x.shape.len() != 4 {
        return Err(shape_err("[N, C, H, W]", &x.shape));
    }
    let (n, c, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
    let mut out = Vec::with_capacity(n * c);
    for plane in x.values.chunks_exact(hw.max(1)) {
        out.push(plane.iter().sum::<f64>() / hw as f64);
    }
    Tensor::new(vec![n, c], out)
}

fn avgpool2_backward(g: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    g.expect_shape(&[shape[0], shape[1], oh, ow])?;
    let mut out = vec![0.0; shape.iter().product()];
    for (gp, dst) in g
        .values
        .chunks_exact(oh * ow)
        .zip(out.chunks_exact_mut(h * w))
    {
        for y in 0..oh {
            for xx in 0..ow {
                let v = 0.25 * gp[y * ow + xx];
                let i = 2 * y * w + 2 * xx;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + w] = v;
                dst[i + w + 1] = v;
            }
        }
    }
    Tensor::new(shape, out)
}

/// Layer stack evaluated in order.
#[derive(Debug, Clone)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    /// Builds the stack, picking He init for weights that feed a ReLU and
    /// Xavier init for everything else.
    pub fn from_specs(specs: &[LayerSpec], rng: &mut dyn RngCore) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let feeds_relu = specs[i + 1..]
                .iter()
                .find(|s| !matches!(s, LayerSpec::Dropout { .. }))
                .is_some_and(|s| matches!(s, LayerSpec::Relu));
            let init = if feeds_relu {
                Init::HeUniform
            } else {
                Init::XavierUniform
            };
            layers.push(Layer::from_spec(spec, init, rng)?);
        }
        Ok(Self { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params_mut()
            .into_iter()
            .for_each(|p| p.set_frozen(frozen));
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            if !p.frozen {
                p.value.zero_grad();
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn forward(&mut self, x: Tensor, train: bool, rng: &mut dyn RngCore) -> Result<Tensor> {
        let mut ctx = ForwardCtx { train, rng };
        let mut h = x;
        for layer in self.layers.iter_mut() {
            h = layer.forward(h, &mut ctx)?;
        }
        Ok(h)
    }

    /// Eval-mode forward through `&self`; safe to share across threads.
    pub fn infer(&self, x: Tensor) -> Result<Tensor> {
        self.layers.iter().try_fold(x, |h, layer| layer.infer(h))
    }

    /// Backpropagates `g`; skips the input gradient of the first layer
    /// unless `need_input_grad` is set.
    pub fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let mut g = g;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            match layer.backward(g, i > 0 || need_input_grad)? {
                Some(gi) => g = gi,
                None => return Ok(None),
            }
        }
        Ok(need_input_grad.then_some(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn zero_weight_dense_outputs_zero() {
        let mut net = Sequential::from_specs(
            &[LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
            }],
            &mut rng(),
        )
        .unwrap();
        for p in net.params_mut() {
            p.value.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        let y = net.forward(x, false, &mut rng()).unwrap();
        assert!(y.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_dropout_is_identity() {
        let mut d = Layer::from_spec(
            &LayerSpec::Dropout { p: 0.0 },
            Init::XavierUniform,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut r = rng();
        let mut ctx = ForwardCtx {
            train: true,
            rng: &mut r,
        };
        assert_eq!(d.forward(x.clone(), &mut ctx).unwrap(), x);
    }

    #[test]
    fn eval_forward_ignores_rng_state() {
        let specs = [
            LayerSpec::Dense {
                inputs: 4,
                outputs: 8,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Dense {
                inputs: 8,
                outputs: 2,
            },
        ];
        let mut net = Sequential::from_specs(&specs, &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let a = net
            .forward(x.clone(), false, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = net
            .forward(x.clone(), false, &mut ChaCha8Rng::seed_from_u64(77))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(net.infer(x).unwrap(), a);
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut net = Sequential::from_specs(
            &[LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
            }],
            &mut rng(),
        )
        .unwrap();
        let g = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!(matches!(
            net.backward(g, true),
            Err(NnError::NoForwardCache)
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut net = Sequential::from_specs(
            &[LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
            }],
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
        assert!(matches!(
            net.forward(x, false, &mut rng()),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut net = Sequential::from_specs(
            &[LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
            }],
            &mut rng(),
        )
        .unwrap();
        net.set_frozen(true);
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        net.forward(x, true, &mut rng()).unwrap();
        let gi = net
            .backward(Tensor::new(vec![1, 1], vec![1.0]).unwrap(), true)
            .unwrap();
        assert!(gi.is_some());
        assert!(net.params().iter().all(|p| p.grad().is_none()));
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut r = rng();
        let mut layer = Layer::from_spec(
            &LayerSpec::Conv3x3 {
                in_channels: 2,
                out_channels: 3,
            },
            Init::HeUniform,
            &mut r,
        )
        .unwrap();
        let (h, w) = (5, 4);
        let x: Vec<f64> = (0..2 * h * w)
            .map(|i| ((i * 37 % 11) as f64) / 7.0 - 0.6)
            .collect();
        let input = Tensor::new(vec![1, 2, h, w], x.clone()).unwrap();
        let mut ctx = ForwardCtx {
            train: false,
            rng: &mut r,
        };
        let out = layer.forward(input, &mut ctx).unwrap();
        let Layer::Conv3x3(c) = &layer else {
            unreachable!()
        };
        let wt = &c.weight.value.values;
        for o in 0..3 {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = c.bias.value.values[o];
                    for ci in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * 2 + ci) * 9) + (ky * 3 + kx) as usize]
                                    * x[ci * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    let got = out.values[o * h * w + y as usize * w + xx as usize];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_shapes() {
        let x = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let y = avgpool2_forward(&x).unwrap();
        assert_eq!(y.shape, vec![1, 1, 1, 2]);
        assert_eq!(y.values, vec![3.5, 5.5]);
        let odd = Tensor::zeros(vec![1, 1, 3, 4]);
        assert!(avgpool2_forward(&odd).is_err());
    }

    #[test]
    fn init_selection_follows_activation() {
        let specs = [
            LayerSpec::Dense {
                inputs: 600,
                outputs: 10,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 10,
                outputs: 590,
            },
            LayerSpec::Tanh,
        ];
        let net = Sequential::from_specs(&specs, &mut rng()).unwrap();
        let max_abs = |p: &Param| p.value.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ps = net.params();
        assert!(max_abs(ps[0]) <= (6.0f64 / 600.0).sqrt());
        assert!(max_abs(ps[0]) > (6.0f64 / 610.0).sqrt() * 0.9);
        assert!(max_abs(ps[2]) <= (6.0f64 / 600.0).sqrt());
        assert!(ps[1].value.values.iter().all(|&b| b == 0.0));
    }
}
