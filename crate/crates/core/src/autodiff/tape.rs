use crate::autodiff::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};
use crate::wavelet::kernel;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Scale(f64),
}

/// Deliberately wrong backward rules, used as negative controls for the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// Uses `s` instead of `s(1-s)` as the sigmoid derivative.
    SigmoidDerivative,
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: f64,
    },
    Sigmoid {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    BroadcastOuter {
        g: Var,
        c: Var,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        axes: Vec<usize>,
    },
    SoftmaxLast {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MeanAxis {
        a: Var,
        pre: usize,
        n: usize,
        post: usize,
    },
    Sum {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    RepeatLeading {
        a: Var,
    },
    PatchMean {
        a: Var,
        batch: usize,
        len: usize,
        ch: usize,
        patch: usize,
    },
    Rope {
        a: Var,
        cos: Vec<f64>,
        sin: Vec<f64>,
        t_len: usize,
        dh: usize,
    },
    DwtBand {
        x: Var,
        taps: Vec<f64>,
        batch: usize,
        len: usize,
        ch: usize,
    },
    Idwt {
        ca: Var,
        cd: Var,
        lo: Vec<f64>,
        hi: Vec<f64>,
        batch: usize,
        n: usize,
        ch: usize,
        target: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of every operation of one forward pass.
///
/// Nodes are appended in execution order, so inputs always precede their
/// consumers and a reverse sweep is a valid topological traversal.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<BackwardFault>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;
const LN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output position of a permutation, the flat input position.
fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(in_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: BackwardFault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor. It is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: t.into_data(),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable copy of `t` regardless of its flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient from the last [`Tape::backward`] call, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ----- linear algebra -------------------------------------------------

    /// `[m,k] · [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Batched product `[N,m,k] · [N,k,n]`, or `[N,m,k] · [N,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok =
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::dim("bmm", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                let ai = &av[i * m * k..(i + 1) * m * k];
                let bi = &bv[i * k * n..(i + 1) * k * n];
                let oi = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    gemm_nt(ai, bi, m, k, n, oi);
                } else {
                    gemm_nn(ai, bi, m, k, n, oi);
                }
            }
        }
        let op = Op::BatchMatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        };
        Ok(self.push(vec![batch, m, n], out, op, &[a, b]))
    }

    // ----- pointwise ------------------------------------------------------

    /// Orders a broadcastable pair so the second shape is a suffix of the first.
    fn broadcast_pair(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if is_suffix(sa, sb) {
            Ok((a, b))
        } else if is_suffix(sb, sa) {
            Ok((b, a))
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(av.len());
        if bv.is_empty() {
            return out;
        }
        for chunk in av.chunks_exact(bv.len()) {
            out.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        out
    }

    /// `a + b`, with trailing-dimension broadcast of the smaller operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.broadcast_pair("add", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, &[a, b]))
    }

    /// `a - b`; `b` may broadcast over leading dimensions of `a`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if !is_suffix(self.shape(a), self.shape(b)) {
            return Err(Error::dim("sub", self.shape(a), self.shape(b)));
        }
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.broadcast_pair("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale { a, s }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid { a }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Tanh { a }, &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Gelu { a }, &[a])
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Tanh => Ok(self.tanh(args[0])),
            Elementwise::Scale(s) => Ok(self.scale(args[0], s)),
        }
    }

    /// `out[..., k] = g[k] * c[...]`: appends a trailing axis of size `len(g)`.
    pub fn broadcast_outer(&mut self, g: Var, c: Var) -> Result<Var> {
        if self.shape(g).len() != 1 {
            return Err(Error::dim("broadcast_outer", self.shape(g), self.shape(c)));
        }
        let d = self.shape(g)[0];
        let (gv, cv) = (self.value(g), self.value(c));
        let mut out = Vec::with_capacity(cv.len() * d);
        for &cval in cv {
            out.extend(gv.iter().map(|gk| gk * cval));
        }
        let mut shape = self.shape(c).to_vec();
        shape.push(d);
        Ok(self.push(shape, out, Op::BroadcastOuter { g, c }, &[g, c]))
    }

    // ----- shape ----------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) || numel(shape) != self.value(a).len() {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a }, &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        let valid = axes.len() == sa.len()
            && axes
                .iter()
                .all(|&ax| ax < sa.len() && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(Error::contract(format!(
                "invalid permutation {axes:?} for shape {sa:?}"
            )));
        }
        let map = permute_map(&sa, axes);
        let av = self.value(a);
        let out = map.iter().map(|&src| av[src]).collect();
        let shape = axes.iter().map(|&ax| sa[ax]).collect();
        Ok(self.push(shape, out, Op::Permute { a, axes: axes.to_vec() }, &[a]))
    }

    /// Tiles a `[1, ...]` tensor to `[times, ...]`.
    pub fn repeat_leading(&mut self, a: Var, times: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa[0] != 1 || times == 0 {
            return Err(Error::contract(format!(
                "repeat_leading needs a leading axis of 1 and times >= 1, got {sa:?} x {times}"
            )));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(av.len() * times);
        for _ in 0..times {
            out.extend_from_slice(av);
        }
        let mut shape = sa;
        shape[0] = times;
        Ok(self.push(shape, out, Op::RepeatLeading { a }, &[a]))
    }

    // ----- reductions and normalization -----------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { a }, &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::contract(format!("axis {axis} out of range for {sa:?}")));
        }
        let pre: usize = sa[..axis].iter().product();
        let n = sa[axis];
        let post: usize = sa[axis + 1..].iter().product();
        let av = self.value(a);
        let mut out = vec![0.0; pre * post];
        for p in 0..pre {
            for i in 0..n {
                let src = &av[(p * n + i) * post..(p * n + i + 1) * post];
                for (o, s) in out[p * post..(p + 1) * post].iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape: Vec<usize> = sa[..axis].iter().chain(&sa[axis + 1..]).copied().collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(shape, out, Op::MeanAxis { a, pre, n, post }, &[a]))
    }

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let d = *self.shape(a).last().expect("non-empty shape");
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push(self.shape(a).to_vec(), out, Op::SoftmaxLast { a }, &[a])
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().expect("non-empty shape");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("layer_norm", &sx, self.shape(gamma)));
        }
        let rows = self.value(x).len() / d;
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        {
            let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + LN_EPS).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gv[j] + bv[j];
                }
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push(sx, out, op, &[x, gamma, beta]))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim("cross_entropy", &s, &[labels.len()]));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::contract(format!("label {bad} out of range for {c} classes")));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / z;
            }
            loss += z.ln() + max - row[labels[i]];
        }
        loss /= b as f64;
        let op = Op::CrossEntropy {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(vec![1], vec![loss], op, &[logits]))
    }

    // ----- domain-specific linear maps ------------------------------------

    /// Means over non-overlapping windows of `patch` steps along axis 1 of a
    /// `[B, L, C]` tensor. The last window may be short; it averages only the
    /// samples it actually covers.
    pub fn patch_mean(&mut self, a: Var, patch: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || patch == 0 {
            return Err(Error::contract(format!(
                "patch_mean needs [B,L,C] and patch >= 1, got {s:?}"
            )));
        }
        let (batch, len, ch) = (s[0], s[1], s[2]);
        let out = patch_mean_values(self.value(a), batch, len, ch, patch);
        let tokens = len.div_ceil(patch);
        let op = Op::PatchMean {
            a,
            batch,
            len,
            ch,
            patch,
        };
        Ok(self.push(vec![batch, tokens, ch], out, op, &[a]))
    }

    /// Rotates consecutive pairs of the last axis of a `[..., T, dh]` tensor
    /// by `positions[t] * 10000^(-2i/dh)`.
    pub fn rope(&mut self, a: Var, positions: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::contract(format!("rope needs [..., T, d_head], got {s:?}")));
        }
        let (t_len, dh) = (s[s.len() - 2], s[s.len() - 1]);
        if dh % 2 != 0 {
            return Err(Error::contract(format!("rope needs an even head dimension, got {dh}")));
        }
        if positions.len() != t_len {
            return Err(Error::dim("rope", &s, &[positions.len()]));
        }
        let (cos, sin) = rope_tables(positions, dh);
        let out = rope_apply(self.value(a), &cos, &sin, t_len, dh, false);
        Ok(self.push(s, out, Op::Rope { a, cos, sin, t_len, dh }, &[a]))
    }

    /// One analysis band (`taps` = low- or high-pass) of a `[B, L, C]` signal.
    pub(crate) fn dwt_band(&mut self, x: Var, taps: &[f64]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] < 2 {
            return Err(Error::contract(format!("dwt needs [B, L>=2, C], got {s:?}")));
        }
        let (batch, len, ch) = (s[0], s[1], s[2]);
        let out = kernel::analyze(self.value(x), batch, len, ch, taps);
        let op = Op::DwtBand {
            x,
            taps: taps.to_vec(),
            batch,
            len,
            ch,
        };
        Ok(self.push(vec![batch, kernel::band_len(len), ch], out, op, &[x]))
    }

    /// Single-level synthesis from an approximation/detail pair.
    pub(crate) fn idwt(&mut self, ca: Var, cd: Var, lo: &[f64], hi: &[f64], target: usize) -> Result<Var> {
        let (sa, sd) = (self.shape(ca).to_vec(), self.shape(cd).to_vec());
        if sa.len() != 3 || sa != sd {
            return Err(Error::dim("idwt", &sa, &sd));
        }
        let (batch, n, ch) = (sa[0], sa[1], sa[2]);
        if target != 2 * n && target + 1 != 2 * n {
            return Err(Error::contract(format!(
                "idwt target length {target} incompatible with band length {n}"
            )));
        }
        let mut out = vec![0.0; batch * target * ch];
        kernel::synthesize_into(self.value(ca), batch, n, ch, lo, target, &mut out);
        kernel::synthesize_into(self.value(cd), batch, n, ch, hi, target, &mut out);
        let op = Op::Idwt {
            ca,
            cd,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            batch,
            n,
            ch,
            target,
        };
        Ok(self.push(vec![batch, target, ch], out, op, &[ca, cd]))
    }

    // ----- reverse sweep --------------------------------------------------

    /// Propagates d(loss)/d(node) to every differentiable node on the tape.
    ///
    /// Gradients from earlier calls are discarded; fan-out contributions are
    /// summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("backward: loss is not on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_deref() else { continue };
            self.backward_node(node, g, before);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = self.nodes.as_slice();
        macro_rules! buf {
            ($v:expr) => {
                grad_buf(nodes, grads, $v)
            };
        }
        let val = |v: Var| nodes[v.0].value.as_slice();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if let Some(ga) = buf!(a) {
                    gemm_nt(g, val(b), m, n, k, ga);
                }
                if let Some(gb) = buf!(b) {
                    gemm_tn(val(a), g, m, k, n, gb);
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (av, bv) = (val(a), val(b));
                if let Some(ga) = buf!(a) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let gai = &mut ga[i * m * k..(i + 1) * m * k];
                        if trans_b {
                            gemm_nn(gi, bi, m, n, k, gai);
                        } else {
                            gemm_nt(gi, bi, m, n, k, gai);
                        }
                    }
                }
                if let Some(gb) = buf!(b) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm_tn(gi, ai, m, n, k, gbi);
                        } else {
                            gemm_tn(ai, gi, m, k, n, gbi);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                if let Some(ga) = buf!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = buf!(b) {
                    let nb = gb.len();
                    for chunk in g.chunks_exact(nb.max(1)) {
                        gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::Sub { a, b } => {
                if let Some(ga) = buf!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = buf!(b) {
                    let nb = gb.len();
                    for chunk in g.chunks_exact(nb.max(1)) {
                        gb.iter_mut().zip(chunk).for_each(|(x, y)| *x -= y);
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (val(a), val(b));
                let nb = bv.len();
                if let Some(ga) = buf!(a) {
                    for (gac, gc) in ga.chunks_exact_mut(nb.max(1)).zip(g.chunks_exact(nb.max(1))) {
                        gac.iter_mut().zip(gc).zip(bv).for_each(|((x, y), w)| *x += y * w);
                    }
                }
                if let Some(gb) = buf!(b) {
                    for (gc, ac) in g.chunks_exact(nb.max(1)).zip(av.chunks_exact(nb.max(1))) {
                        gb.iter_mut().zip(gc).zip(ac).for_each(|((x, y), w)| *x += y * w);
                    }
                }
            }
            &Op::Scale { a, s } => {
                if let Some(ga) = buf!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            &Op::Sigmoid { a } => {
                let faulty = self.fault == Some(BackwardFault::SigmoidDerivative);
                if let Some(ga) = buf!(a) {
                    for ((x, y), s) in ga.iter_mut().zip(g).zip(&node.value) {
                        let d = if faulty { *s } else { s * (1.0 - s) };
                        *x += y * d;
                    }
                }
            }
            &Op::Tanh { a } => {
                if let Some(ga) = buf!(a) {
                    for ((x, y), t) in ga.iter_mut().zip(g).zip(&node.value) {
                        *x += y * (1.0 - t * t);
                    }
                }
            }
            &Op::Gelu { a } => {
                let av = val(a);
                if let Some(ga) = buf!(a) {
                    for ((x, y), &inp) in ga.iter_mut().zip(g).zip(av) {
                        *x += y * gelu_grad(inp);
                    }
                }
            }
            &Op::BroadcastOuter { g: gv, c } => {
                let (gval, cval) = (val(gv), val(c));
                let d = gval.len();
                if let Some(gg) = buf!(gv) {
                    for (chunk, &cv) in g.chunks(d).zip(cval) {
                        for (acc, y) in gg.iter_mut().zip(chunk) {
                            *acc += y * cv;
                        }
                    }
                }
                if let Some(gc) = buf!(c) {
                    for (acc, chunk) in gc.iter_mut().zip(g.chunks(d)) {
                        *acc += chunk.iter().zip(gval).map(|(y, w)| y * w).sum::<f64>();
                    }
                }
            }
            &Op::Reshape { a } => {
                if let Some(ga) = buf!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Permute { a, axes } => {
                let map = permute_map(&nodes[a.0].shape, axes);
                if let Some(ga) = buf!(*a) {
                    for (y, &src) in g.iter().zip(&map) {
                        ga[src] += y;
                    }
                }
            }
            &Op::RepeatLeading { a } => {
                if let Some(ga) = buf!(a) {
                    let n = ga.len();
                    g.iter().enumerate().for_each(|(i, y)| ga[i % n] += y);
                }
            }
            &Op::Sum { a } => {
                if let Some(ga) = buf!(a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::MeanAxis { a, pre, n, post } => {
                if let Some(ga) = buf!(a) {
                    let inv = 1.0 / n as f64;
                    for p in 0..pre {
                        let gsrc = &g[p * post..(p + 1) * post];
                        for i in 0..n {
                            let dst = &mut ga[(p * n + i) * post..(p * n + i + 1) * post];
                            dst.iter_mut().zip(gsrc).for_each(|(x, y)| *x += y * inv);
                        }
                    }
                }
            }
            &Op::SoftmaxLast { a } => {
                let d = *node.shape.last().unwrap();
                if let Some(ga) = buf!(a) {
                    for ((gin, gout), y) in ga.chunks_mut(d).zip(g.chunks(d)).zip(node.value.chunks(d)) {
                        let dot: f64 = gout.iter().zip(y).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            gin[j] += y[j] * (gout[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let gam = val(*gamma).to_vec();
                if let Some(gg) = buf!(*gamma) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = buf!(*beta) {
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(gx) = buf!(*x) {
                    let mut dh = vec![0.0; d];
                    for (r, ((gxr, gr), hr)) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gam[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gxr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, probs, labels } => {
                if let Some(gl) = buf!(*logits) {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let scale = g[0] / b as f64;
                    for i in 0..b {
                        for j in 0..c {
                            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            &Op::PatchMean {
                a,
                batch,
                len,
                ch,
                patch,
            } => {
                if let Some(ga) = buf!(a) {
                    let tokens = len.div_ceil(patch);
                    for b in 0..batch {
                        for t in 0..tokens {
                            let start = t * patch;
                            let end = (start + patch).min(len);
                            let inv = 1.0 / (end - start) as f64;
                            let gsrc = &g[(b * tokens + t) * ch..(b * tokens + t + 1) * ch];
                            for s in start..end {
                                let dst = &mut ga[(b * len + s) * ch..(b * len + s + 1) * ch];
                                dst.iter_mut().zip(gsrc).for_each(|(x, y)| *x += y * inv);
                            }
                        }
                    }
                }
            }
            Op::Rope { a, cos, sin, t_len, dh } => {
                if let Some(ga) = buf!(*a) {
                    let back = rope_apply(g, cos, sin, *t_len, *dh, true);
                    ga.iter_mut().zip(&back).for_each(|(x, y)| *x += y);
                }
            }
            Op::DwtBand {
                x,
                taps,
                batch,
                len,
                ch,
            } => {
                if let Some(gx) = buf!(*x) {
                    kernel::synthesize_into(g, *batch, kernel::band_len(*len), *ch, taps, *len, gx);
                }
            }
            Op::Idwt {
                ca,
                cd,
                lo,
                hi,
                batch,
                n,
                ch,
                target,
            } => {
                let _ = n;
                if let Some(ga) = buf!(*ca) {
                    let back = kernel::analyze(g, *batch, *target, *ch, lo);
                    ga.iter_mut().zip(&back).for_each(|(x, y)| *x += y);
                }
                if let Some(gd) = buf!(*cd) {
                    let back = kernel::analyze(g, *batch, *target, *ch, hi);
                    gd.iter_mut().zip(&back).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
}

/// Gradient buffer of `v`, or None when it needs no gradient.
fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

pub(crate) fn patch_mean_values(x: &[f64], batch: usize, len: usize, ch: usize, patch: usize) -> Vec<f64> {
    let tokens = len.div_ceil(patch);
    let mut out = vec![0.0; batch * tokens * ch];
    for b in 0..batch {
        for t in 0..tokens {
            let start = t * patch;
            let end = (start + patch).min(len);
            let inv = 1.0 / (end - start) as f64;
            let dst = &mut out[(b * tokens + t) * ch..(b * tokens + t + 1) * ch];
            for s in start..end {
                let src = &x[(b * len + s) * ch..(b * len + s + 1) * ch];
                dst.iter_mut().zip(src).for_each(|(o, v)| *o += v * inv);
            }
        }
    }
    out
}

pub(crate) fn rope_tables(positions: &[usize], dh: usize) -> (Vec<f64>, Vec<f64>) {
    let half = dh / 2;
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for i in 0..half {
            let theta = 10000f64.powf(-2.0 * i as f64 / dh as f64);
            let angle = p as f64 * theta;
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    (cos, sin)
}

/// Applies (or, with `inverse`, undoes) the pairwise rotation.
pub(crate) fn rope_apply(x: &[f64], cos: &[f64], sin: &[f64], t_len: usize, dh: usize, inverse: bool) -> Vec<f64> {
    let half = dh / 2;
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut out = vec![0.0; x.len()];
    for (row_idx, (src, dst)) in x.chunks(dh).zip(out.chunks_mut(dh)).enumerate() {
        let t = row_idx % t_len;
        for i in 0..half {
            let (c, s) = (cos[t * half + i], sign * sin[t * half + i]);
            let (x0, x1) = (src[2 * i], src[2 * i + 1]);
            dst[2 * i] = x0 * c - x1 * s;
            dst[2 * i + 1] = x0 * s + x1 * c;
        }
    }
    out
}
