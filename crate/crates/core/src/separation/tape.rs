//! Reverse-mode automatic differentiation over the network's layer
//! vocabulary. A [`Tape`] records one forward evaluation; [`Tape::backward`]
//! replays it in reverse.

use super::ops::{conv_backward, conv_forward, ConvGeom, Padding, Real};

/// Dense `[batch, channel, row, col]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: [usize; 4],
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<F>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data length");
        Self { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per `(batch, channel)` plane.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn channel(&self, b: usize, c: usize) -> &[F] {
        let p = self.plane();
        let i = (b * self.shape[1] + c) * p;
        &self.data[i..i + p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch statistics of one normalisation layer, per channel.
#[derive(Debug, Clone)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Unbiased variance, for the running estimate.
    pub var: Vec<F>,
}

pub enum NormMode<'a, F> {
    /// Normalise with batch statistics.
    Train,
    /// Normalise with stored running statistics.
    Eval { mean: &'a [F], var: &'a [F] },
}

enum Op<F> {
    Leaf,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        batch_stats: bool,
    },
    Relu(Var),
    Tanh(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u8>,
    },
    Upsample(Var),
    Concat(Var, Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    n_params: usize,
    scratch: Vec<F>,
}

pub const NORM_EPS: f64 = 1e-5;

impl<F: Real> Tape<F> {
    pub fn new(n_params: usize) -> Self {
        Self {
            nodes: Vec::new(),
            n_params,
            scratch: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, t: &Tensor<F>) -> Var {
        assert!(index < self.n_params, "parameter index out of range");
        self.push(t.clone(), Op::Param(index))
    }

    /// Same-size convolution. `w` is `[c_out, c_in, kh, kw]`, `b` is
    /// `[1, c_out, 1, 1]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, dilation: (usize, usize), padding: (Padding, Padding)) -> Var {
        let xs = self.value(x).shape;
        let ws = self.value(w).shape;
        assert_eq!(xs[1], ws[1], "conv input channels");
        let geom = ConvGeom {
            c_in: ws[1],
            c_out: ws[0],
            kernel: (ws[2], ws[3]),
            dilation,
            padding,
            height: xs[2],
            width: xs[3],
        };
        let mut cols = std::mem::take(&mut self.scratch);
        let data = conv_forward(
            &self.value(x).data,
            &self.value(w).data,
            b.map(|b| self.value(b).data.as_slice()),
            &geom,
            xs[0],
            &mut cols,
        );
        self.scratch = cols;
        self.push(
            Tensor::from_vec([xs[0], ws[0], xs[2], xs[3]], data),
            Op::Conv { x, w, b, geom },
        )
    }

    /// Per-channel normalisation followed by the affine `gamma`, `beta`.
    pub fn norm(&mut self, x: Var, gamma: Var, beta: Var, mode: NormMode<'_, F>) -> (Var, Option<BatchStats<F>>) {
        let t = self.value(x);
        let [nb, nc, _, _] = t.shape;
        let p = t.plane();
        let count = nb * p;
        let n = F::lit(count as f64);
        let eps = F::lit(NORM_EPS);
        let (mean, var_biased, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![F::zero(); nc];
                let mut var = vec![F::zero(); nc];
                for c in 0..nc {
                    let mut s = F::zero();
                    for b in 0..nb {
                        s = s + t.channel(b, c).iter().copied().sum::<F>();
                    }
                    let m = s / n;
                    let mut q = F::zero();
                    for b in 0..nb {
                        q = q + t.channel(b, c).iter().map(|&v| (v - m) * (v - m)).sum::<F>();
                    }
                    mean[c] = m;
                    var[c] = q / n;
                }
                let unbiased = if count > 1 {
                    var.iter().map(|&v| v * n / F::lit((count - 1) as f64)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            NormMode::Eval { mean, var } => (mean.to_vec(), var.to_vec(), None),
        };
        let inv_std: Vec<F> = var_biased.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let g = &self.value(gamma).data;
        let be = &self.value(beta).data;
        let t = self.value(x);
        let mut xhat = vec![F::zero(); t.len()];
        let mut out = vec![F::zero(); t.len()];
        for b in 0..nb {
            for c in 0..nc {
                let off = (b * nc + c) * p;
                for i in off..off + p {
                    let h = (t.data[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + be[c];
                }
            }
        }
        let shape = t.shape;
        let batch_stats = stats.is_some();
        let v = self.push(
            Tensor::from_vec(shape, out),
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        (v, stats)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        // NaN passes through so that divergence surfaces in the loss.
        let data = t.data.iter().map(|&v| if v > F::zero() || v.is_nan() { v } else { F::zero() }).collect();
        let shape = t.shape;
        self.push(Tensor::from_vec(shape, data), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v.tanh()).collect();
        let shape = t.shape;
        self.push(Tensor::from_vec(shape, data), Op::Tanh(x))
    }

    /// 2x2 max pooling, stride 2.
    pub fn max_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [nb, nc, h, w] = t.shape;
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even sizes");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![F::zero(); nb * nc * oh * ow];
        let mut argmax = vec![0u8; out.len()];
        for bc in 0..nb * nc {
            let src = &t.data[bc * h * w..(bc + 1) * h * w];
            for r in 0..oh {
                for c in 0..ow {
                    let mut best = 0u8;
                    let mut bv = src[2 * r * w + 2 * c];
                    for k in 1..4u8 {
                        let v = src[(2 * r + (k as usize >> 1)) * w + 2 * c + (k as usize & 1)];
                        if v > bv {
                            bv = v;
                            best = k;
                        }
                    }
                    let o = bc * oh * ow + r * ow + c;
                    out[o] = bv;
                    argmax[o] = best;
                }
            }
        }
        self.push(Tensor::from_vec([nb, nc, oh, ow], out), Op::MaxPool { x, argmax })
    }

    /// Nearest-neighbour 2x up-sampling.
    pub fn upsample(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [nb, nc, h, w] = t.shape;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![F::zero(); nb * nc * oh * ow];
        for bc in 0..nb * nc {
            let src = &t.data[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for r in 0..oh {
                let srow = &src[(r / 2) * w..(r / 2 + 1) * w];
                for (c, d) in dst[r * ow..(r + 1) * ow].iter_mut().enumerate() {
                    *d = srow[c / 2];
                }
            }
        }
        self.push(Tensor::from_vec([nb, nc, oh, ow], out), Op::Upsample(x))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let [nb, ca, h, w] = ta.shape;
        assert_eq!([nb, h, w], [tb.shape[0], tb.shape[2], tb.shape[3]], "concat shapes");
        let cb = tb.shape[1];
        let p = h * w;
        let mut out = Vec::with_capacity(nb * (ca + cb) * p);
        for bi in 0..nb {
            out.extend_from_slice(&ta.data[bi * ca * p..(bi + 1) * ca * p]);
            out.extend_from_slice(&tb.data[bi * cb * p..(bi + 1) * cb * p]);
        }
        self.push(Tensor::from_vec([nb, ca + cb, h, w], out), Op::Concat(a, b))
    }

    /// Back-propagates `grad` (the gradient of a scalar with respect to
    /// `out`) and returns one gradient per parameter index.
    pub fn backward(&mut self, out: Var, grad: Tensor<F>) -> Vec<Option<Tensor<F>>> {
        assert_eq!(grad.shape, self.value(out).shape, "seed gradient shape");
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(grad.data);
        let mut params: Vec<Option<Tensor<F>>> = (0..self.n_params).map(|_| None).collect();
        let mut cols = std::mem::take(&mut self.scratch);

        fn acc<F: Real>(slot: &mut Option<Vec<F>>, g: Vec<F>) {
            match slot {
                Some(s) => {
                    for (a, b) in s.iter_mut().zip(g) {
                        *a = *a + b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(k) => {
                    let shape = node.value.shape;
                    match &mut params[*k] {
                        Some(t) => {
                            for (a, b) in t.data.iter_mut().zip(g) {
                                *a = *a + b;
                            }
                        }
                        slot => *slot = Some(Tensor::from_vec(shape, g)),
                    }
                }
                Op::Conv { x, w, b, geom } => {
                    let xv = &self.nodes[x.0].value;
                    let need_dx = !matches!(self.nodes[x.0].op, Op::Leaf);
                    let (dx, dw, db) = conv_backward(
                        &xv.data,
                        &self.nodes[w.0].value.data,
                        &g,
                        geom,
                        xv.shape[0],
                        need_dx,
                        &mut cols,
                    );
                    if let Some(dx) = dx {
                        acc(&mut grads[x.0], dx);
                    }
                    acc(&mut grads[w.0], dw);
                    if let Some(b) = b {
                        acc(&mut grads[b.0], db);
                    }
                }
                Op::Norm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let [nb, nc, _, _] = node.value.shape;
                    let p = node.value.plane();
                    let n = F::lit((nb * p) as f64);
                    let gam = &self.nodes[gamma.0].value.data;
                    let mut dgamma = vec![F::zero(); nc];
                    let mut dbeta = vec![F::zero(); nc];
                    for b in 0..nb {
                        for c in 0..nc {
                            let off = (b * nc + c) * p;
                            for j in off..off + p {
                                dbeta[c] = dbeta[c] + g[j];
                                dgamma[c] = dgamma[c] + g[j] * xhat[j];
                            }
                        }
                    }
                    let mut dx = vec![F::zero(); g.len()];
                    for b in 0..nb {
                        for c in 0..nc {
                            let off = (b * nc + c) * p;
                            let k = gam[c] * inv_std[c];
                            if *batch_stats {
                                let m1 = dbeta[c] / n;
                                let m2 = dgamma[c] / n;
                                for j in off..off + p {
                                    dx[j] = k * (g[j] - m1 - xhat[j] * m2);
                                }
                            } else {
                                for j in off..off + p {
                                    dx[j] = k * g[j];
                                }
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[gamma.0], dgamma);
                    acc(&mut grads[beta.0], dbeta);
                }
                Op::Relu(x) => {
                    let y = &node.value.data;
                    let dx = g.iter().zip(y).map(|(&gi, &yi)| if yi > F::zero() { gi } else { F::zero() }).collect();
                    acc(&mut grads[x.0], dx);
                }
                Op::Tanh(x) => {
                    let y = &node.value.data;
                    let dx = g.iter().zip(y).map(|(&gi, &yi)| gi * (F::one() - yi * yi)).collect();
                    acc(&mut grads[x.0], dx);
                }
                Op::MaxPool { x, argmax } => {
                    let [nb, nc, h, w] = self.nodes[x.0].value.shape;
                    let (oh, ow) = (h / 2, w / 2);
                    let mut dx = vec![F::zero(); nb * nc * h * w];
                    for bc in 0..nb * nc {
                        for r in 0..oh {
                            for c in 0..ow {
                                let o = bc * oh * ow + r * ow + c;
                                let k = argmax[o] as usize;
                                dx[bc * h * w + (2 * r + (k >> 1)) * w + 2 * c + (k & 1)] = g[o];
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::Upsample(x) => {
                    let [nb, nc, h, w] = self.nodes[x.0].value.shape;
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut dx = vec![F::zero(); nb * nc * h * w];
                    for bc in 0..nb * nc {
                        for r in 0..oh {
                            for c in 0..ow {
                                let d = &mut dx[bc * h * w + (r / 2) * w + c / 2];
                                *d = *d + g[bc * oh * ow + r * ow + c];
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::Concat(a, b) => {
                    let ca = self.nodes[a.0].value.shape[1];
                    let [nb, cc, h, w] = node.value.shape;
                    let cb = cc - ca;
                    let p = h * w;
                    let mut da = Vec::with_capacity(nb * ca * p);
                    let mut db = Vec::with_capacity(nb * cb * p);
                    for bi in 0..nb {
                        let base = bi * cc * p;
                        da.extend_from_slice(&g[base..base + ca * p]);
                        db.extend_from_slice(&g[base + ca * p..base + cc * p]);
                    }
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
            }
        }
        self.scratch = cols;
        params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n)
                .map(|i| ((((i as u64 + 1) * 2654435761 + seed * 97) % 2001) as f64 / 1000.0) - 1.0005)
                .collect(),
        )
    }

    /// Scalar objective `sum(out * r)` for a fixed random `r`.
    fn check(build: impl Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Var, params: Vec<Tensor<f64>>) {
        let eval = |ps: &[Tensor<f64>]| {
            let mut tape = Tape::new(ps.len());
            let out = build(&mut tape, ps);
            let r = t(tape.value(out).shape, 99);
            let s: f64 = tape.value(out).data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
            (s, tape, out, r)
        };
        let (_, mut tape, out, r) = eval(&params);
        let grads = tape.backward(out, r);
        let h = 1e-6;
        for (k, p) in params.iter().enumerate() {
            let g = grads[k].as_ref().expect("parameter reached");
            for j in 0..p.len() {
                let mut plus = params.clone();
                plus[k].data[j] += h;
                let mut minus = params.clone();
                minus[k].data[j] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = g.data[j];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}[{j}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        check(
            |tape, ps| {
                let x = tape.param(0, &ps[0]);
                let w = tape.param(1, &ps[1]);
                let b = tape.param(2, &ps[2]);
                tape.conv(x, w, Some(b), (1, 4), (Padding::Circular, Padding::Zero))
            },
            vec![t([2, 2, 4, 9], 1), t([3, 2, 3, 3], 2), t([1, 3, 1, 1], 3)],
        );
    }

    #[test]
    fn norm_gradients() {
        for train in [true, false] {
            check(
                move |tape, ps| {
                    let x = tape.param(0, &ps[0]);
                    let g = tape.param(1, &ps[1]);
                    let b = tape.param(2, &ps[2]);
                    let (mean, var) = ([0.1, -0.2], [0.5, 2.0]);
                    let mode = if train {
                        NormMode::Train
                    } else {
                        NormMode::Eval { mean: &mean, var: &var }
                    };
                    tape.norm(x, g, b, mode).0
                },
                vec![t([3, 2, 2, 4], 4), t([1, 2, 1, 1], 5), t([1, 2, 1, 1], 6)],
            );
        }
    }

    #[test]
    fn elementwise_and_resampling_gradients() {
        check(
            |tape, ps| {
                let x = tape.param(0, &ps[0]);
                let y = tape.param(1, &ps[1]);
                let a = tape.tanh(x);
                let p = tape.max_pool(a);
                let u = tape.upsample(p);
                let c = tape.concat(u, y);
                tape.relu(c)
            },
            vec![t([2, 2, 4, 6], 7), t([2, 1, 4, 6], 8)],
        );
    }

    #[test]
    fn norm_train_output_statistics() {
        let mut tape = Tape::new(3);
        let x = tape.param(0, &t([4, 2, 3, 5], 9));
        let g = tape.param(1, &Tensor::from_vec([1, 2, 1, 1], vec![1.0, 1.0]));
        let b = tape.param(2, &Tensor::from_vec([1, 2, 1, 1], vec![0.0, 0.0]));
        let (y, stats) = tape.norm(x, g, b, NormMode::Train);
        assert!(stats.is_some());
        let v = tape.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|bi| v.channel(bi, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
