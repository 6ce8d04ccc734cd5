//! Differentiable primitives: forward constructors and their adjoints.

use super::kernels::{self, axis_split, ConvGeom};
use super::{CustomOp, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const LN_EPS: f64 = 1e-5;
pub const BCE_EPS: f64 = 1e-12;

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, &[axis]));
    }
    Ok(())
}

impl Graph {
    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.shape(a), self.shape(b))?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.shape(a), self.shape(b))?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.shape(a), self.shape(b))?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `a` plus `b` broadcast to `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let target = self.shape(a).to_vec();
        let bb = self.broadcast(b, &target)?;
        self.add(a, bb)
    }

    /// `a` times `b` broadcast to `a`'s shape.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let target = self.shape(a).to_vec();
        let bb = self.broadcast(b, &target)?;
        self.mul(a, bb)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose (expects 2-d)", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let data = kernels::transpose(self.value(a).data(), r, c);
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Right-aligned broadcast (size-1 and missing leading dims expand).
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(a).to_vec();
        let ok = from.len() <= shape.len()
            && from
                .iter()
                .rev()
                .zip(shape.iter().rev())
                .all(|(&f, &t)| f == t || f == 1);
        if !ok || numel(shape) == 0 {
            return Err(Error::shape("broadcast", &from, shape));
        }
        let src = self.value(a).data();
        let data = kernels::broadcast_index(&from, shape)
            .into_iter()
            .map(|i| src[i])
            .collect();
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Broadcast(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::Config("concat of nothing".into()))?)
            .to_vec();
        check_axis("concat", &first, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis("slice", &s, axis)?;
        if len == 0 || start + len > s[axis] {
            return Err(Error::shape("slice", &s, &[start, len]));
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                input: a,
                axis,
                start,
            },
        ))
    }

    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let s = self.shape(a).to_vec();
        check_axis("split", &s, axis)?;
        if sizes.iter().sum::<usize>() != s[axis] {
            return Err(Error::shape("split", &s, sizes));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(a, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis("softmax", &s, axis)?;
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let m = (0..dim).map(|d| src[at(d)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for d in 0..dim {
                    let e = (src[at(d)] - m).exp();
                    data[at(d)] = e;
                    z += e;
                }
                for d in 0..dim {
                    data[at(d)] /= z;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(s, data), Op::Softmax { input: a, axis }))
    }

    /// `log(softmax(a))` along `axis`, computed without forming the softmax.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis("log_softmax", &s, axis)?;
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let m = (0..dim).map(|d| src[at(d)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..dim).map(|d| (src[at(d)] - m).exp()).sum::<f64>().ln();
                for d in 0..dim {
                    data[at(d)] = src[at(d)] - lse;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(s, data), Op::LogSoftmax { input: a, axis }))
    }

    /// Normalize over the last axis, then apply per-channel `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::shape("layernorm", &s, self.shape(gain)));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / c;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(s, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Same-size cross-correlation of `x[c_in×h×w]` with `kernel[c_out×c_in×k×k]`, `k ∈ {1, 3}`.
    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let k = self.shape(kernel).get(2).copied().unwrap_or(0);
        if k != 1 && k != 3 {
            return Err(Error::Config(format!(
                "conv2d supports kernel sizes 1 and 3, got {k}"
            )));
        }
        self.conv2d_strided(x, kernel, 1)
    }

    /// Cross-correlation with an odd kernel, padding `(k-1)/2` and the given stride.
    pub fn conv2d_strided(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sk[1] != sx[0] || sk[2] != sk[3] {
            return Err(Error::shape("conv2d", &sx, &sk));
        }
        let k = sk[2];
        if k % 2 == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv2d needs an odd kernel and positive stride, got k={k} stride={stride}"
            )));
        }
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], k, stride, (k - 1) / 2)
            .ok_or_else(|| Error::shape("conv2d", &sx, &sk))?;
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let c_out = sk[0];
        let data = kernels::matmul(self.value(kernel).data(), &cols, c_out, geom.rows(), geom.cols());
        Ok(self.push(
            Tensor::from_parts(vec![c_out, geom.h_out, geom.w_out], data),
            Op::Conv2d {
                x,
                kernel,
                geom,
                cols,
            },
        ))
    }

    /// Align-corners-false bilinear resize of `x[c×h×w]` to a size no smaller than the input.
    pub fn bilinear_upsample(&mut self, x: Var, th: usize, tw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || th < s[1] || tw < s[2] {
            return Err(Error::shape("bilinear_upsample", &s, &[th, tw]));
        }
        if th == s[1] && tw == s[2] {
            return self.reshape(x, &s);
        }
        let data = kernels::upsample(self.value(x).data(), s[0], s[1], s[2], th, tw);
        Ok(self.push(Tensor::from_parts(vec![s[0], th, tw], data), Op::Upsample(x)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    /// Natural log; the input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Data(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Spatial mean of `x[c×h×w]`, giving `[c]`.
    pub fn global_mean_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("global_mean_pool", &s, &[]));
        }
        let hw = s[1] * s[2];
        let src = self.value(x).data();
        let data = (0..s[0])
            .map(|c| src[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push(Tensor::from_parts(vec![s[0]], data), Op::MeanPool(x)))
    }

    /// Mean binary cross-entropy of probabilities `pred` against soft targets in `[0, 1]`.
    /// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        check_same("bce_loss", self.shape(pred), self.shape(target))?;
        if let Some(bad) = self
            .value(target)
            .data()
            .iter()
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return Err(Error::Data(format!("bce target {bad} outside [0, 1]")));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len() as f64;
        let total: f64 = p
            .iter()
            .zip(t)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::Bce { pred, target }))
    }

    /// Record a caller-defined operation whose forward value is already computed.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    pub(super) fn backward_node(&self, i: usize, gy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let g = gy.data();
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(self.shape(v).to_vec(), data);
        let elementwise = |v: Var, f: &dyn Fn(usize) -> f64| -> Vec<(Var, Tensor)> {
            vec![(v, like(v, (0..g.len()).map(f).collect()))]
        };
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, gy.clone()), (*b, gy.clone())],
            Op::Sub(a, b) => vec![(*a, gy.clone()), (*b, gy.map(|x| -x))],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, like(*a, g.iter().zip(vb).map(|(g, b)| g * b).collect())),
                    (*b, like(*b, g.iter().zip(va).map(|(g, a)| g * a).collect())),
                ]
            }
            Op::Affine(a, s) => vec![(*a, gy.map(|x| x * s))],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let ga = kernels::matmul_nt(g, self.value(*b).data(), m, n, k);
                let gb = kernels::matmul_tn(self.value(*a).data(), g, m, k, n);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Transpose(a) => {
                let s = y.shape();
                vec![(*a, like(*a, kernels::transpose(g, s[0], s[1])))]
            }
            Op::Reshape(a) => vec![(*a, like(*a, g.to_vec()))],
            Op::Broadcast(a) => {
                let from = self.shape(*a);
                let mut acc = vec![0.0; numel(from)];
                for (o, src) in kernels::broadcast_index(from, y.shape()).into_iter().enumerate() {
                    acc[src] += g[o];
                }
                vec![(*a, like(*a, acc))]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(self.shape(*a), g[0]))],
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(y.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.value(*v).len()))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, v) in parts.iter_mut().zip(inputs) {
                        let chunk = self.shape(*v)[*axis] * inner;
                        p.extend_from_slice(&g[off..off + chunk]);
                        off += chunk;
                    }
                }
                inputs.iter().zip(parts).map(|(v, p)| (*v, like(*v, p))).collect()
            }
            Op::Slice { input, axis, start } => {
                let (outer, dim, inner) = axis_split(self.shape(*input), *axis);
                let len = y.shape()[*axis];
                let mut acc = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    acc[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*input, like(*input, acc))]
            }
            Op::Softmax { input, axis } => {
                let (outer, dim, inner) = axis_split(y.shape(), *axis);
                let yv = y.data();
                let mut gx = vec![0.0; yv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |d: usize| (o * dim + d) * inner + i;
                        let dot: f64 = (0..dim).map(|d| g[at(d)] * yv[at(d)]).sum();
                        for d in 0..dim {
                            gx[at(d)] = yv[at(d)] * (g[at(d)] - dot);
                        }
                    }
                }
                vec![(*input, like(*input, gx))]
            }
            Op::LogSoftmax { input, axis } => {
                let (outer, dim, inner) = axis_split(y.shape(), *axis);
                let yv = y.data();
                let mut gx = vec![0.0; yv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |d: usize| (o * dim + d) * inner + i;
                        let total: f64 = (0..dim).map(|d| g[at(d)]).sum();
                        for d in 0..dim {
                            gx[at(d)] = g[at(d)] - yv[at(d)].exp() * total;
                        }
                    }
                }
                vec![(*input, like(*input, gx))]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = self.shape(*gain)[0];
                let gain_v = self.value(*gain).data();
                let rows = xhat.len() / c;
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for r in 0..rows {
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for j in 0..c {
                        let idx = r * c + j;
                        gg[j] += g[idx] * xhat[idx];
                        gb[j] += g[idx];
                        let dxh = g[idx] * gain_v[j];
                        s1 += dxh;
                        s2 += dxh * xhat[idx];
                    }
                    let cf = c as f64;
                    for j in 0..c {
                        let idx = r * c + j;
                        let dxh = g[idx] * gain_v[j];
                        gx[idx] = inv_std[r] / cf * (cf * dxh - s1 - xhat[idx] * s2);
                    }
                }
                vec![(*x, like(*x, gx)), (*gain, like(*gain, gg)), (*bias, like(*bias, gb))]
            }
            Op::Conv2d {
                x,
                kernel,
                geom,
                cols,
            } => {
                let c_out = y.shape()[0];
                let gk = kernels::matmul_nt(g, cols, c_out, geom.cols(), geom.rows());
                let gcols =
                    kernels::matmul_tn(self.value(*kernel).data(), g, c_out, geom.rows(), geom.cols());
                vec![
                    (*x, like(*x, kernels::col2im(&gcols, geom))),
                    (*kernel, like(*kernel, gk)),
                ]
            }
            Op::Upsample(x) => {
                let s = self.shape(*x);
                let ys = y.shape();
                let gx = kernels::upsample_backward(g, s[0], s[1], s[2], ys[1], ys[2]);
                vec![(*x, like(*x, gx))]
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                elementwise(*a, &|i| if av[i] > 0.0 { g[i] } else { 0.0 })
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                elementwise(*a, &|i| g[i] * kernels::gelu_grad(av[i]))
            }
            Op::Sigmoid(a) => {
                let yv = y.data();
                elementwise(*a, &|i| g[i] * yv[i] * (1.0 - yv[i]))
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                elementwise(*a, &|i| g[i] / av[i])
            }
            Op::MeanPool(x) => {
                let s = self.shape(*x);
                let hw = s[1] * s[2];
                let data = (0..s[0] * hw).map(|i| g[i / hw] / hw as f64).collect();
                vec![(*x, like(*x, data))]
            }
            Op::Bce { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = g[0] / p.len() as f64;
                let gp = p
                    .iter()
                    .zip(t)
                    .map(|(&p, &t)| {
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            scale * ((1.0 - t) / (1.0 - p) - t / p)
                        }
                    })
                    .collect();
                let gt = p
                    .iter()
                    .map(|&p| {
                        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        scale * ((1.0 - p).ln() - p.ln())
                    })
                    .collect();
                vec![(*pred, like(*pred, gp)), (*target, like(*target, gt))]
            }
            Op::Custom { inputs, op } => {
                let grads = op.backward(gy)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Config(format!(
                        "custom op {} returned {} adjoints for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                let mut out = Vec::new();
                for (v, gr) in inputs.iter().zip(grads) {
                    if let Some(gr) = gr {
                        check_same("custom adjoint", gr.shape(), self.shape(*v))?;
                        out.push((*v, gr));
                    }
                }
                out
            }
        })
    }
}
