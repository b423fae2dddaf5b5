use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;

use super::{AdError, ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    const POISONED: Var = Var(usize::MAX);
}

type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &mut GradBuf<F>)>;

struct Node<F> {
    value: Arc<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
    param: Option<ParamId>,
}

/// Per-node gradient accumulators used during the backward sweep.
pub(super) struct GradBuf<F> {
    slots: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> GradBuf<F> {
    fn slot(&mut self, var: Var, shape: &[usize]) -> &mut Tensor<F> {
        let entry = &mut self.slots[var.0];
        if entry.is_none() {
            *entry = Some(Tensor::zeros(shape));
        }
        entry.as_mut().unwrap()
    }
}

/// Gradients keyed by parameter, one entry per parameter that appeared on
/// the tape (zeros when the loss did not depend on it).
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    entries: BTreeMap<ParamId, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.entries.iter().map(|(id, t)| (*id, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append-only computation tape. Nodes are created in topological order, so
/// the backward sweep is a single reverse pass.
///
/// The first failed operation poisons the graph: subsequent ops are
/// no-ops returning a sentinel [`Var`], and [`Graph::value`] /
/// [`Graph::backward`] report the original error.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_cache: HashMap<ParamId, Var>,
    err: Option<AdError>,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
            err: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn error(&self) -> Option<&AdError> {
        self.err.as_ref()
    }

    fn fail(&mut self, err: AdError) -> Var {
        if self.err.is_none() {
            self.err = Some(err);
        }
        Var::POISONED
    }

    fn shape_err(&mut self, op: &'static str, detail: String) -> Var {
        self.fail(AdError::ShapeMismatch { op, detail })
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor<F>,
        backward: Option<BackwardFn<F>>,
        param: Option<ParamId>,
    ) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        if !value.is_all_finite() {
            return self.fail(AdError::NonFinite { op });
        }
        self.nodes.push(Node {
            value: Arc::new(value),
            backward,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, var: Var) -> Arc<Tensor<F>> {
        self.nodes[var.0].value.clone()
    }

    /// Forward value of a node, or the first recorded failure.
    pub fn value(&self, var: Var) -> Result<&Tensor<F>, AdError> {
        if let Some(err) = &self.err {
            return Err(err.clone());
        }
        Ok(&self.nodes[var.0].value)
    }

    /// A node with no gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push("constant", value, None, None)
    }

    pub fn scalar(&mut self, value: F) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf for a trainable parameter; repeated requests for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        if let Some(&var) = self.param_cache.get(&id) {
            return var;
        }
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            backward: None,
            param: Some(id),
        });
        let var = Var(self.nodes.len() - 1);
        self.param_cache.insert(id, var);
        var
    }

    fn binary_elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        backward: impl Fn(Arc<Tensor<F>>, Arc<Tensor<F>>) -> BackwardFn<F>,
    ) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let va = self.val(a);
        let vb = self.val(b);
        if va.shape() != vb.shape() {
            return self.shape_err(op, format!("{:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(va.shape(), data);
        let bw = backward(va, vb);
        self.push(op, value, Some(bw), None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(
            "add",
            a,
            b,
            |x, y| x + y,
            |va, _vb| {
                Box::new(move |g, buf| {
                    let ga = buf.slot(a, va.shape());
                    for (gi, &go) in ga.data_mut().iter_mut().zip(g.data()) {
                        *gi += go;
                    }
                    let gb = buf.slot(b, va.shape());
                    for (gi, &go) in gb.data_mut().iter_mut().zip(g.data()) {
                        *gi += go;
                    }
                })
            },
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(
            "sub",
            a,
            b,
            |x, y| x - y,
            |va, _vb| {
                Box::new(move |g, buf| {
                    let ga = buf.slot(a, va.shape());
                    for (gi, &go) in ga.data_mut().iter_mut().zip(g.data()) {
                        *gi += go;
                    }
                    let gb = buf.slot(b, va.shape());
                    for (gi, &go) in gb.data_mut().iter_mut().zip(g.data()) {
                        *gi -= go;
                    }
                })
            },
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(
            "mul",
            a,
            b,
            |x, y| x * y,
            |va, vb| {
                Box::new(move |g, buf| {
                    {
                        let ga = buf.slot(a, va.shape());
                        for i in 0..g.len() {
                            ga.data_mut()[i] += g.data()[i] * vb.data()[i];
                        }
                    }
                    let gb = buf.slot(b, vb.shape());
                    for i in 0..g.len() {
                        gb.data_mut()[i] += g.data()[i] * va.data()[i];
                    }
                })
            },
        )
    }

    /// Multiply by a fixed scalar constant.
    pub fn scale(&mut self, x: Var, c: F) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        let value = vx.map(|v| v * c);
        let shape = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gx = buf.slot(x, &shape);
            for (gi, &go) in gx.data_mut().iter_mut().zip(g.data()) {
                *gi += go * c;
            }
        });
        self.push("scale", value, Some(bw), None)
    }

    /// Broadcast-add a scalar node to every element of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        let vs = self.val(s);
        if vs.len() != 1 {
            return self.shape_err("add_scalar", format!("scalar operand has shape {:?}", vs.shape()));
        }
        let c = vs.data()[0];
        let value = vx.map(|v| v + c);
        let shape = vx.shape().to_vec();
        let s_shape = vs.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            {
                let gx = buf.slot(x, &shape);
                for (gi, &go) in gx.data_mut().iter_mut().zip(g.data()) {
                    *gi += go;
                }
            }
            let gs = buf.slot(s, &s_shape);
            gs.data_mut()[0] += g.data().iter().copied().sum();
        });
        self.push("add_scalar", value, Some(bw), None)
    }

    fn unary_elementwise(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(F) -> F,
        // derivative as a function of (input, output)
        df: impl Fn(F, F) -> F + 'static,
    ) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        let value = vx.map(f);
        let out = Arc::new(value.clone());
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gx = buf.slot(x, vx.shape());
            for i in 0..g.len() {
                gx.data_mut()[i] += g.data()[i] * df(vx.data()[i], out.data()[i]);
            }
        });
        self.push(op, value, Some(bw), None)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary_elementwise("tanh", x, |v| v.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary_elementwise(
            "sigmoid",
            x,
            |v| {
                if v >= F::zero() {
                    F::one() / (F::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (F::one() + e)
                }
            },
            |_, y| y * (F::one() - y),
        )
    }

    /// Exponential linear unit with alpha 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary_elementwise(
            "elu",
            x,
            |v| {
                if v > F::zero() {
                    v
                } else {
                    v.exp() - F::one()
                }
            },
            |v, y| {
                if v > F::zero() {
                    F::one()
                } else {
                    y + F::one()
                }
            },
        )
    }

    /// Matrix-vector product `W x`; `W` is `(m, n)`, `x` has length `n`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vw = self.val(w);
        let vx = self.val(x);
        if vw.rank() != 2 || vx.rank() != 1 || vw.cols() != vx.len() {
            return self.shape_err("matvec", format!("{:?} x {:?}", vw.shape(), vx.shape()));
        }
        let (m, n) = (vw.rows(), vw.cols());
        let mut out = vec![F::zero(); m];
        for i in 0..m {
            let row = &vw.data()[i * n..(i + 1) * n];
            out[i] = row.iter().zip(vx.data()).map(|(&a, &b)| a * b).sum();
        }
        let value = Tensor::vector(out);
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            {
                let gw = buf.slot(w, vw.shape());
                for i in 0..m {
                    let gi = g.data()[i];
                    let grow = &mut gw.data_mut()[i * n..(i + 1) * n];
                    for (gj, &xj) in grow.iter_mut().zip(vx.data()) {
                        *gj += gi * xj;
                    }
                }
            }
            let gx = buf.slot(x, vx.shape());
            for i in 0..m {
                let gi = g.data()[i];
                let row = &vw.data()[i * n..(i + 1) * n];
                for (gj, &wj) in gx.data_mut().iter_mut().zip(row) {
                    *gj += gi * wj;
                }
            }
        });
        self.push("matvec", value, Some(bw), None)
    }

    /// Transposed matrix-vector product `W^T x`; `W` is `(m, n)`, `x` has
    /// length `m`.
    pub fn tmatvec(&mut self, w: Var, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vw = self.val(w);
        let vx = self.val(x);
        if vw.rank() != 2 || vx.rank() != 1 || vw.rows() != vx.len() {
            return self.shape_err("tmatvec", format!("{:?}^T x {:?}", vw.shape(), vx.shape()));
        }
        let (m, n) = (vw.rows(), vw.cols());
        let mut out = vec![F::zero(); n];
        for i in 0..m {
            let xi = vx.data()[i];
            let row = &vw.data()[i * n..(i + 1) * n];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
        let value = Tensor::vector(out);
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            {
                let gw = buf.slot(w, vw.shape());
                for i in 0..m {
                    let xi = vx.data()[i];
                    let grow = &mut gw.data_mut()[i * n..(i + 1) * n];
                    for (gj, &gout) in grow.iter_mut().zip(g.data()) {
                        *gj += xi * gout;
                    }
                }
            }
            let gx = buf.slot(x, vx.shape());
            for i in 0..m {
                let row = &vw.data()[i * n..(i + 1) * n];
                gx.data_mut()[i] += row.iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
            }
        });
        self.push("tmatvec", value, Some(bw), None)
    }

    /// Matrix product `A B`; `A` is `(m, k)`, `B` is `(k, n)`.
    pub fn matmat(&mut self, a: Var, b: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let va = self.val(a);
        let vb = self.val(b);
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return self.shape_err("matmat", format!("{:?} x {:?}", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for l in 0..k {
                let ail = va.data()[i * k + l];
                let brow = &vb.data()[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &blj) in orow.iter_mut().zip(brow) {
                    *o += ail * blj;
                }
            }
        }
        let value = Tensor::from_vec(&[m, n], out);
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            {
                // dA = g B^T
                let ga = buf.slot(a, va.shape());
                for i in 0..m {
                    for l in 0..k {
                        let brow = &vb.data()[l * n..(l + 1) * n];
                        let grow = &g.data()[i * n..(i + 1) * n];
                        ga.data_mut()[i * k + l] +=
                            brow.iter().zip(grow).map(|(&x, &y)| x * y).sum();
                    }
                }
            }
            // dB = A^T g
            let gb = buf.slot(b, vb.shape());
            for i in 0..m {
                for l in 0..k {
                    let ail = va.data()[i * k + l];
                    let grow = &g.data()[i * n..(i + 1) * n];
                    let brow = &mut gb.data_mut()[l * n..(l + 1) * n];
                    for (o, &gij) in brow.iter_mut().zip(grow) {
                        *o += ail * gij;
                    }
                }
            }
        });
        self.push("matmat", value, Some(bw), None)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        if vx.rank() != 2 {
            return self.shape_err("transpose", format!("rank {} input", vx.rank()));
        }
        let (m, n) = (vx.rows(), vx.cols());
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = vx.data()[i * n + j];
            }
        }
        let value = Tensor::from_vec(&[n, m], out);
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gx = buf.slot(x, vx.shape());
            for i in 0..m {
                for j in 0..n {
                    gx.data_mut()[i * n + j] += g.data()[j * m + i];
                }
            }
        });
        self.push("transpose", value, Some(bw), None)
    }

    /// Inner product of two equal-length vectors, yielding a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let va = self.val(a);
        let vb = self.val(b);
        if va.rank() != 1 || vb.rank() != 1 || va.len() != vb.len() {
            return self.shape_err("dot", format!("{:?} . {:?}", va.shape(), vb.shape()));
        }
        let value = Tensor::scalar(va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).sum());
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let go = g.data()[0];
            {
                let ga = buf.slot(a, va.shape());
                for (gi, &y) in ga.data_mut().iter_mut().zip(vb.data()) {
                    *gi += go * y;
                }
            }
            let gb = buf.slot(b, vb.shape());
            for (gi, &x) in gb.data_mut().iter_mut().zip(va.data()) {
                *gi += go * x;
            }
        });
        self.push("dot", value, Some(bw), None)
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        if parts.is_empty() {
            return self.shape_err("concat", "no inputs".to_string());
        }
        let values: Vec<Arc<Tensor<F>>> = parts.iter().map(|&p| self.val(p)).collect();
        for v in &values {
            if v.rank() > 1 {
                return self.shape_err("concat", format!("rank {} input", v.rank()));
            }
        }
        let total: usize = values.iter().map(|v| v.len()).sum();
        let mut out = Vec::with_capacity(total);
        for v in &values {
            out.extend_from_slice(v.data());
        }
        let value = Tensor::vector(out);
        let parts: Vec<Var> = parts.to_vec();
        // Scalar inputs act as length-1 pieces; their gradient slots keep
        // the original rank-0 shape.
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let mut offset = 0;
            for (&p, shape) in parts.iter().zip(&shapes) {
                let gp = buf.slot(p, shape);
                let len = gp.len();
                for (gi, &go) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                    *gi += go;
                }
                offset += len;
            }
        });
        self.push("concat", value, Some(bw), None)
    }

    /// Contiguous sub-vector `x[start .. start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        if vx.rank() != 1 || start + len > vx.len() {
            return self.shape_err(
                "slice",
                format!("[{start}, {}) of shape {:?}", start + len, vx.shape()),
            );
        }
        let value = Tensor::vector(vx.data()[start..start + len].to_vec());
        let full = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gx = buf.slot(x, &full);
            for (gi, &go) in gx.data_mut()[start..start + len].iter_mut().zip(g.data()) {
                *gi += go;
            }
        });
        self.push("slice", value, Some(bw), None)
    }

    /// Single element of a vector as a scalar node.
    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        if vx.rank() != 1 || index >= vx.len() {
            return self.shape_err("pick", format!("index {index} of shape {:?}", vx.shape()));
        }
        let value = Tensor::scalar(vx.data()[index]);
        let shape = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gx = buf.slot(x, &shape);
            gx.data_mut()[index] += g.data()[0];
        });
        self.push("pick", value, Some(bw), None)
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        let value = Tensor::scalar(vx.data().iter().copied().sum());
        let shape = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let go = g.data()[0];
            let gx = buf.slot(x, &shape);
            for gi in gx.data_mut() {
                *gi += go;
            }
        });
        self.push("sum", value, Some(bw), None)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        if rows.is_empty() {
            return self.shape_err("stack_rows", "no inputs".to_string());
        }
        let values: Vec<Arc<Tensor<F>>> = rows.iter().map(|&r| self.val(r)).collect();
        let n = values[0].len();
        for v in &values {
            if v.rank() != 1 || v.len() != n {
                return self.shape_err("stack_rows", format!("row of shape {:?}", v.shape()));
            }
        }
        let mut out = Vec::with_capacity(values.len() * n);
        for v in &values {
            out.extend_from_slice(v.data());
        }
        let value = Tensor::from_vec(&[values.len(), n], out);
        let rows: Vec<Var> = rows.to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            for (i, &r) in rows.iter().enumerate() {
                let gr = buf.slot(r, &[n]);
                for (gi, &go) in gr.data_mut().iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                    *gi += go;
                }
            }
        });
        self.push("stack_rows", value, Some(bw), None)
    }

    /// Column-wise maximum of a matrix (ties resolved to the lowest row, so
    /// forward and backward are deterministic).
    pub fn max_over_rows(&mut self, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        if vx.rank() != 2 || vx.rows() == 0 {
            return self.shape_err("max_over_rows", format!("shape {:?}", vx.shape()));
        }
        let (m, n) = (vx.rows(), vx.cols());
        let mut out = vec![F::zero(); n];
        let mut arg = vec![0usize; n];
        for j in 0..n {
            let mut best = vx.at2(0, j);
            let mut best_i = 0;
            for i in 1..m {
                let v = vx.at2(i, j);
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            out[j] = best;
            arg[j] = best_i;
        }
        let value = Tensor::vector(out);
        let shape = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gx = buf.slot(x, &shape);
            for j in 0..n {
                gx.data_mut()[arg[j] * n + j] += g.data()[j];
            }
        });
        self.push("max_over_rows", value, Some(bw), None)
    }

    /// Numerically stable softmax over a vector.
    pub fn softmax(&mut self, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        if vx.rank() != 1 || vx.is_empty() {
            return self.shape_err("softmax", format!("shape {:?}", vx.shape()));
        }
        let max = vx.data().iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = vx.data().iter().map(|&v| (v - max).exp()).collect();
        let z: F = exps.iter().copied().sum();
        let value = Tensor::vector(exps.iter().map(|&e| e / z).collect());
        let y = Arc::new(value.clone());
        let shape = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let dot: F = g.data().iter().zip(y.data()).map(|(&a, &b)| a * b).sum();
            let gx = buf.slot(x, &shape);
            for i in 0..y.len() {
                gx.data_mut()[i] += y.data()[i] * (g.data()[i] - dot);
            }
        });
        self.push("softmax", value, Some(bw), None)
    }

    /// Numerically stable log-softmax over a vector.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vx = self.val(x);
        if vx.rank() != 1 || vx.is_empty() {
            return self.shape_err("log_softmax", format!("shape {:?}", vx.shape()));
        }
        let max = vx.data().iter().copied().fold(F::neg_infinity(), F::max);
        let z: F = vx.data().iter().map(|&v| (v - max).exp()).sum();
        let lse = max + z.ln();
        let value = vx.map(|v| v - lse);
        let y = Arc::new(value.clone());
        let shape = vx.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gsum: F = g.data().iter().copied().sum();
            let gx = buf.slot(x, &shape);
            for i in 0..y.len() {
                gx.data_mut()[i] += g.data()[i] - y.data()[i].exp() * gsum;
            }
        });
        self.push("log_softmax", value, Some(bw), None)
    }

    /// Cross-entropy `-log softmax(scores)[target]` with the softmax
    /// restricted to positions where `legal` is true. Illegal positions act
    /// as if their score were negative infinity but never materialize as
    /// non-finite values; their gradient is exactly zero.
    pub fn masked_cross_entropy(&mut self, scores: Var, legal: &[bool], target: usize) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vs = self.val(scores);
        if vs.rank() != 1 || vs.len() != legal.len() {
            return self.shape_err(
                "masked_cross_entropy",
                format!("scores {:?} vs mask of {}", vs.shape(), legal.len()),
            );
        }
        if target >= vs.len() || !legal[target] {
            return self.shape_err(
                "masked_cross_entropy",
                format!("target {target} is not a legal position"),
            );
        }
        let mut max = F::neg_infinity();
        for (i, &v) in vs.data().iter().enumerate() {
            if legal[i] && v > max {
                max = v;
            }
        }
        let z: F = vs
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| legal[*i])
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let lse = max + z.ln();
        let value = Tensor::scalar(lse - vs.data()[target]);
        let legal: Vec<bool> = legal.to_vec();
        let shape = vs.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let go = g.data()[0];
            let gx = buf.slot(scores, &shape);
            for i in 0..legal.len() {
                if !legal[i] {
                    continue;
                }
                let p = (vs.data()[i] - lse).exp();
                let delta = if i == target { F::one() } else { F::zero() };
                gx.data_mut()[i] += go * (p - delta);
            }
        });
        self.push("masked_cross_entropy", value, Some(bw), None)
    }

    /// Row `index` of an embedding matrix as a vector node; the gradient
    /// accumulates only into that row.
    pub fn embedding_gather(&mut self, table: Var, index: usize) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        let vt = self.val(table);
        if vt.rank() != 2 || index >= vt.rows() {
            return self.shape_err(
                "embedding_gather",
                format!("row {index} of shape {:?}", vt.shape()),
            );
        }
        let n = vt.cols();
        let value = Tensor::vector(vt.data()[index * n..(index + 1) * n].to_vec());
        let shape = vt.shape().to_vec();
        let bw: BackwardFn<F> = Box::new(move |g, buf| {
            let gt = buf.slot(table, &shape);
            for (gi, &go) in gt.data_mut()[index * n..(index + 1) * n]
                .iter_mut()
                .zip(g.data())
            {
                *gi += go;
            }
        });
        self.push("embedding_gather", value, Some(bw), None)
    }

    /// Inverted dropout: elements are zeroed with probability `rate` and
    /// survivors are scaled by `1/(1-rate)`. `rate` 0 is the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if self.err.is_some() {
            return Var::POISONED;
        }
        if rate == 0.0 {
            return x;
        }
        let len = self.val(x).len();
        let keep = 1.0 - rate;
        let scale = F::from_f64(1.0 / keep);
        let mask: Vec<F> = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    F::zero()
                }
            })
            .collect();
        let shape = self.val(x).shape().to_vec();
        let m = self.constant(Tensor::from_vec(&shape, mask));
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar loss. Returns one gradient per parameter
    /// on the tape; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, AdError> {
        if let Some(err) = &self.err {
            return Err(err.clone());
        }
        let vloss = &self.nodes[loss.0].value;
        if vloss.len() != 1 {
            return Err(AdError::NonScalarLoss { len: vloss.len() });
        }
        let mut buf = GradBuf {
            slots: vec![None; self.nodes.len()],
        };
        buf.slots[loss.0] = Some(Tensor::filled(vloss.shape(), F::one()));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].param.is_some() {
                // Leaf gradient stays in its slot for collection below.
                continue;
            }
            let Some(g) = buf.slots[i].take() else {
                continue;
            };
            if let Some(bw) = &self.nodes[i].backward {
                bw(&g, &mut buf);
            }
        }
        let mut entries = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(id) = node.param {
                let grad = buf.slots[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                entries.insert(id, grad);
            }
        }
        Ok(Gradients { entries })
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}
