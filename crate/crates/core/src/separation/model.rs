//! Encoder–decoder separation network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops::{Padding, Real};
use super::tape::{BatchStats, NormMode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::simulator::RfFrame;

/// Architecture of the encoder–decoder. Level `l` works at resolution
/// `2^-l` with `channels[l]` feature maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub channels: Vec<usize>,
    pub convs_per_level: usize,
    /// (receiver, time)
    pub kernel: (usize, usize),
    /// (receiver, time)
    pub dilation: (usize, usize),
    /// (receiver, time)
    pub padding: (Padding, Padding),
    /// Adds the receiver angle as two extra input channels (cos, sin).
    #[serde(default)]
    pub receiver_encoding: bool,
}

impl ArchDescriptor {
    pub fn new(channels: Vec<usize>) -> Self {
        Self {
            channels,
            convs_per_level: 2,
            kernel: (3, 3),
            dilation: (1, 4),
            padding: (Padding::Circular, Padding::Zero),
            receiver_encoding: false,
        }
    }

    /// Three levels with 16/32/64 channels.
    pub fn desk() -> Self {
        Self::new(vec![16, 32, 64])
    }

    pub fn with_receiver_encoding(mut self, on: bool) -> Self {
        self.receiver_encoding = on;
        self
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Total down-sampling between the input and the deepest level.
    pub fn pooling_factor(&self) -> usize {
        1 << (self.levels().saturating_sub(1))
    }

    pub fn input_channels(&self) -> usize {
        if self.receiver_encoding {
            3
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Architecture(m));
        if self.padding != (Padding::Circular, Padding::Zero) {
            return fail(format!(
                "padding must be circular over receivers and zero over time, got {:?}",
                self.padding
            ));
        }
        if self.dilation != (1, 4) {
            return fail(format!("dilation must be (1, 4), got {:?}", self.dilation));
        }
        if self.kernel.0.is_multiple_of(2) || self.kernel.1.is_multiple_of(2) {
            return fail(format!("kernel sizes must be odd, got {:?}", self.kernel));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return fail("at least one level with non-zero channels".into());
        }
        if self.convs_per_level == 0 {
            return fail("each level needs at least one convolution".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerDescriptor {
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        dilation: (usize, usize),
        padding: (Padding, Padding),
        bias: bool,
    },
    Norm {
        channels: usize,
    },
    Relu,
    Tanh,
    MaxPool,
    Upsample,
    /// Concatenate the encoder output of this level.
    ConcatSkip {
        level: usize,
    },
}

/// Parameter indices of one convolution + normalisation stage.
#[derive(Debug, Clone, Copy)]
struct Stage {
    w: usize,
    gamma: usize,
    beta: usize,
    norm: usize,
}

#[derive(Debug, Clone)]
struct Plan {
    enc: Vec<Vec<Stage>>,
    /// `dec[l]` for `l < levels - 1`.
    dec: Vec<Vec<Stage>>,
    out_w: usize,
    out_b: usize,
}

/// Running mean and variance of one normalisation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationModel<F> {
    pub arch: ArchDescriptor,
    pub n_outputs: usize,
    pub params: Vec<Tensor<F>>,
    pub running: Vec<RunningStats<F>>,
}

/// Shapes of every parameter tensor, in storage order, and the execution plan.
fn layout(arch: &ArchDescriptor, p: usize) -> (Vec<[usize; 4]>, Vec<usize>, Plan) {
    let (kh, kw) = arch.kernel;
    let mut shapes = Vec::new();
    let mut norms = Vec::new();
    let stage = |shapes: &mut Vec<[usize; 4]>, norms: &mut Vec<usize>, c_in: usize, c_out: usize| {
        let w = shapes.len();
        shapes.push([c_out, c_in, kh, kw]);
        shapes.push([1, c_out, 1, 1]);
        shapes.push([1, c_out, 1, 1]);
        norms.push(c_out);
        Stage {
            w,
            gamma: w + 1,
            beta: w + 2,
            norm: norms.len() - 1,
        }
    };
    let ch = &arch.channels;
    let mut enc = Vec::new();
    let mut c_in = arch.input_channels();
    for &c in ch {
        let mut level = Vec::new();
        for k in 0..arch.convs_per_level {
            level.push(stage(&mut shapes, &mut norms, if k == 0 { c_in } else { c }, c));
        }
        enc.push(level);
        c_in = c;
    }
    let mut dec = vec![Vec::new(); ch.len() - 1];
    for l in (0..ch.len() - 1).rev() {
        let mut level = Vec::new();
        for k in 0..arch.convs_per_level {
            let c_in = if k == 0 { ch[l + 1] + ch[l] } else { ch[l] };
            level.push(stage(&mut shapes, &mut norms, c_in, ch[l]));
        }
        dec[l] = level;
    }
    let out_w = shapes.len();
    shapes.push([p, ch[0], kh, kw]);
    shapes.push([1, p, 1, 1]);
    (
        shapes,
        norms,
        Plan {
            enc,
            dec,
            out_w,
            out_b: out_w + 1,
        },
    )
}

/// Builds a network with fan-in scaled normal weights, unit norm scales
/// and zero shifts and biases.
pub fn build_model<F: Real>(arch: &ArchDescriptor, n_outputs: usize, seed: u64) -> Result<SeparationModel<F>> {
    arch.validate()?;
    if n_outputs == 0 {
        return Err(Error::Architecture("at least one output channel".into()));
    }
    let (shapes, norms, plan) = layout(arch, n_outputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(shapes.len());
    let mut is_weight = vec![false; shapes.len()];
    let mut is_gamma = vec![false; shapes.len()];
    for s in plan.enc.iter().chain(&plan.dec).flatten() {
        is_weight[s.w] = true;
        is_gamma[s.gamma] = true;
    }
    is_weight[plan.out_w] = true;
    for (i, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let data = if is_weight[i] {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let std = (2.0 / fan_in).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    F::lit(z * std)
                })
                .collect()
        } else if is_gamma[i] {
            vec![F::one(); n]
        } else {
            vec![F::zero(); n]
        };
        params.push(Tensor::from_vec(*shape, data));
    }
    let running = norms
        .iter()
        .map(|&c| RunningStats {
            mean: vec![F::zero(); c],
            var: vec![F::one(); c],
        })
        .collect();
    Ok(SeparationModel {
        arch: arch.clone(),
        n_outputs,
        params,
        running,
    })
}

impl<F: Real> SeparationModel<F> {
    fn plan(&self) -> Plan {
        layout(&self.arch, self.n_outputs).2
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Ordered layer list.
    pub fn layers(&self) -> Vec<LayerDescriptor> {
        let a = &self.arch;
        let conv = |c_in, c_out, bias| LayerDescriptor::Conv {
            c_in,
            c_out,
            kernel: a.kernel,
            dilation: a.dilation,
            padding: a.padding,
            bias,
        };
        let mut out = Vec::new();
        let ch = &a.channels;
        let mut c_in = a.input_channels();
        for (l, &c) in ch.iter().enumerate() {
            if l > 0 {
                out.push(LayerDescriptor::MaxPool);
            }
            for k in 0..a.convs_per_level {
                out.push(conv(if k == 0 { c_in } else { c }, c, false));
                out.push(LayerDescriptor::Norm { channels: c });
                out.push(LayerDescriptor::Relu);
            }
            c_in = c;
        }
        for l in (0..ch.len() - 1).rev() {
            out.push(LayerDescriptor::Upsample);
            out.push(LayerDescriptor::ConcatSkip { level: l });
            for k in 0..a.convs_per_level {
                out.push(conv(if k == 0 { ch[l + 1] + ch[l] } else { ch[l] }, ch[l], false));
                out.push(LayerDescriptor::Norm { channels: ch[l] });
                out.push(LayerDescriptor::Relu);
            }
        }
        out.push(conv(ch[0], self.n_outputs, true));
        out.push(LayerDescriptor::Tanh);
        out
    }

    /// Checks `(R, T)` against the pooling factor.
    pub fn check_input_shape(&self, rows: usize, cols: usize) -> Result<()> {
        let f = self.arch.pooling_factor();
        if !rows.is_multiple_of(f) || !cols.is_multiple_of(f) || rows == 0 || cols == 0 {
            return Err(Error::shape(
                format!("receiver and sample counts divisible by {f}"),
                format!("{rows}x{cols}"),
            ));
        }
        Ok(())
    }

    /// Stacks frames into a `[B, C_in, R, T]` tensor.
    pub fn input_tensor(&self, frames: &[&RfFrame]) -> Result<Tensor<F>> {
        let first = frames.first().ok_or_else(|| Error::Input("empty batch".into()))?;
        let (r, t) = first.samples.dim();
        self.check_input_shape(r, t)?;
        let c = self.arch.input_channels();
        let mut data = Vec::with_capacity(frames.len() * c * r * t);
        for f in frames {
            if f.samples.dim() != (r, t) {
                return Err(Error::shape(format!("{r}x{t}"), format!("{:?}", f.samples.dim())));
            }
            data.extend(f.samples.iter().map(|&v| F::lit(v as f64)));
            if self.arch.receiver_encoding {
                for trig in [f64::cos, f64::sin] {
                    for k in 0..r {
                        let v = F::lit(trig(2.0 * std::f64::consts::PI * k as f64 / r as f64));
                        data.extend(std::iter::repeat_n(v, t));
                    }
                }
            }
        }
        Ok(Tensor::from_vec([frames.len(), c, r, t], data))
    }

    /// Records one evaluation on `tape`. Returns the output variable and,
    /// in training mode, batch statistics per normalisation layer.
    pub fn record(&self, tape: &mut Tape<F>, x: Tensor<F>, training: bool) -> Result<(Var, Vec<BatchStats<F>>)> {
        let [_, c, r, t] = x.shape;
        if c != self.arch.input_channels() {
            return Err(Error::shape(
                format!("{} input channels", self.arch.input_channels()),
                c.to_string(),
            ));
        }
        self.check_input_shape(r, t)?;
        let plan = self.plan();
        let dil = self.arch.dilation;
        let pad = self.arch.padding;
        let mut stats = Vec::new();
        let mut run_stage = |tape: &mut Tape<F>, h: Var, s: &Stage| {
            let w = tape.param(s.w, &self.params[s.w]);
            let g = tape.param(s.gamma, &self.params[s.gamma]);
            let b = tape.param(s.beta, &self.params[s.beta]);
            let y = tape.conv(h, w, None, dil, pad);
            let mode = if training {
                NormMode::Train
            } else {
                let rs = &self.running[s.norm];
                NormMode::Eval {
                    mean: &rs.mean,
                    var: &rs.var,
                }
            };
            let (y, st) = tape.norm(y, g, b, mode);
            if let Some(st) = st {
                stats.push((s.norm, st));
            }
            tape.relu(y)
        };

        let mut h = tape.input(x);
        let mut skips = Vec::new();
        for (l, level) in plan.enc.iter().enumerate() {
            if l > 0 {
                h = tape.max_pool(h);
            }
            for s in level {
                h = run_stage(tape, h, s);
            }
            skips.push(h);
        }
        for l in (0..plan.dec.len()).rev() {
            let up = tape.upsample(h);
            h = tape.concat(up, skips[l]);
            for s in &plan.dec[l] {
                h = run_stage(tape, h, s);
            }
        }
        let w = tape.param(plan.out_w, &self.params[plan.out_w]);
        let b = tape.param(plan.out_b, &self.params[plan.out_b]);
        let y = tape.conv(h, w, Some(b), dil, pad);
        let out = tape.tanh(y);
        stats.sort_by_key(|(i, _)| *i);
        Ok((out, stats.into_iter().map(|(_, s)| s).collect()))
    }

    /// Exponential update of the running statistics.
    pub fn update_running(&mut self, stats: &[BatchStats<F>]) {
        let m = F::lit(NORM_MOMENTUM);
        for (rs, st) in self.running.iter_mut().zip(stats) {
            for (a, b) in rs.mean.iter_mut().zip(&st.mean) {
                *a = (F::one() - m) * *a + m * *b;
            }
            for (a, b) in rs.var.iter_mut().zip(&st.var) {
                *a = (F::one() - m) * *a + m * *b;
            }
        }
    }

    /// Raw `[B, P, R, T]` network output.
    pub fn evaluate(&self, x: Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new(self.params.len());
        let (out, _) = self.record(&mut tape, x, false)?;
        Ok(tape.value(out).clone())
    }

    fn to_frames(&self, input: &RfFrame, out: &Tensor<F>, b: usize) -> Result<Vec<RfFrame>> {
        let mut tx = input.tx_set.clone();
        tx.sort_unstable();
        if tx.len() != self.n_outputs {
            return Err(Error::Input(format!(
                "model separates {} transmitters, frame fired {:?}",
                self.n_outputs, input.tx_set
            )));
        }
        let (r, t) = input.samples.dim();
        Ok(tx
            .iter()
            .enumerate()
            .map(|(p, &id)| {
                let data = out.channel(b, p).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
                let mut f = RfFrame::new(
                    ndarray::Array2::from_shape_vec((r, t), data).expect("channel shape"),
                    input.sampling_rate,
                    vec![id],
                );
                f.t0 = input.t0;
                f
            })
            .collect())
    }

    /// Inference-mode separation of one mixed frame into one frame per
    /// transmitter, in ascending transmitter order.
    pub fn predict(&self, input: &RfFrame) -> Result<Vec<RfFrame>> {
        let out = self.evaluate(self.input_tensor(&[input])?)?;
        self.to_frames(input, &out, 0)
    }

    /// Like [`predict`](Self::predict); in training mode normalisation uses
    /// the statistics of this single frame and updates the running ones.
    pub fn forward(&mut self, input: &RfFrame, training: bool) -> Result<Vec<RfFrame>> {
        if !training {
            return self.predict(input);
        }
        let x = self.input_tensor(&[input])?;
        let mut tape = Tape::new(self.params.len());
        let (out, stats) = self.record(&mut tape, x, true)?;
        let value = tape.value(out).clone();
        self.update_running(&stats);
        self.to_frames(input, &value, 0)
    }

    /// Flattened parameters followed by running statistics, as `f32`.
    pub fn state_vector(&self) -> Vec<f32> {
        let f = |v: &F| v.to_f32().unwrap_or(f32::NAN);
        let mut out: Vec<f32> = self.params.iter().flat_map(|p| p.data.iter().map(f)).collect();
        for rs in &self.running {
            out.extend(rs.mean.iter().map(f));
            out.extend(rs.var.iter().map(f));
        }
        out
    }

    /// Inverse of [`state_vector`](Self::state_vector).
    pub fn from_state_vector(arch: &ArchDescriptor, n_outputs: usize, state: &[f32]) -> Result<Self> {
        let mut model = build_model::<F>(arch, n_outputs, 0)?;
        let expected = model.state_vector().len();
        if state.len() != expected {
            return Err(Error::shape(format!("{expected} values"), state.len().to_string()));
        }
        let mut it = state.iter().map(|&v| F::lit(v as f64));
        for p in &mut model.params {
            for v in &mut p.data {
                *v = it.next().expect("length checked");
            }
        }
        for rs in &mut model.running {
            for v in rs.mean.iter_mut().chain(rs.var.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(model)
    }
}
