use super::{Node, Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Tape {
    /// `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: av.shape.clone(), rhs: bv.shape.clone() });
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&av.data, &bv.data, &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(Error::ShapeMismatch { op, lhs: av.shape.clone(), rhs: bv.shape.clone() });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x + y);
        Ok(self.push(self.value(a).shape.clone(), data, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x - y);
        Ok(self.push(self.value(a).shape.clone(), data, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x * y);
        Ok(self.push(self.value(a).shape.clone(), data, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data.iter().map(|x| x * c).collect();
        self.push(self.value(a).shape.clone(), data, Op::Scale(a, c))
    }

    /// Adds a vector to every row (last-axis broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.numel() != av.cols() {
            return Err(Error::ShapeMismatch { op: "add_row", lhs: av.shape.clone(), rhs: rv.shape.clone() });
        }
        let c = av.cols();
        let data = av.data.iter().enumerate().map(|(i, x)| x + rv.data[i % c]).collect();
        Ok(self.push(av.shape.clone(), data, Op::AddRow(a, row)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data.iter().map(|&x| x.max(0.0)).collect();
        self.push(self.value(a).shape.clone(), data, Op::Relu(a))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
            .collect();
        self.push(self.value(a).shape.clone(), data, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data.iter().map(|x| x.tanh()).collect();
        self.push(self.value(a).shape.clone(), data, Op::Tanh(a))
    }

    /// Softmax along `axis`, stabilised by subtracting the running max.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::InvalidTensor(format!("softmax axis {axis} on rank {}", xv.rank())));
        }
        let (outer, n, inner) = axis_split(&xv.shape, axis);
        let mut out = vec![0.0; xv.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| xv.data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (xv.data[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
        Ok(self.push(xv.shape.clone(), out, Op::Softmax { x, axis }))
    }

    /// Normalises each last-axis row to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        for p in [gain, bias] {
            if self.value(p).numel() != c {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape.clone(),
                    rhs: self.value(p).shape.clone(),
                });
            }
        }
        let (gv, bv) = (&self.value(gain).data, &self.value(bias).data);
        let rows = xv.rows();
        let mut out = vec![0.0; xv.numel()];
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = if is.is_finite() { is } else { 0.0 };
            for j in 0..c {
                let h = (row[j] - mean) * inv_std[r];
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv[j] + bv[j];
            }
        }
        let shape = xv.shape.clone();
        Ok(self.push(shape, out, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// `-log softmax(logits)[target]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        let n = lv.numel();
        if target >= n {
            return Err(Error::IndexOutOfRange { op: "cross_entropy", index: target, len: n });
        }
        let max = lv.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.data.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - lv.data[target];
        let probs = exps.into_iter().map(|e| e / z).collect();
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropy { logits, target, probs }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    /// Row lookup into a `[V×d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::InvalidTensor(format!("gather_rows on shape {:?}", tv.shape)));
        }
        if ids.is_empty() {
            return Err(Error::InvalidTensor("gather_rows with no ids".into()));
        }
        let (v, d) = (tv.shape[0], tv.shape[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IndexOutOfRange { op: "gather_rows", index: id, len: v });
            }
            out.extend_from_slice(&tv.data[id * d..(id + 1) * d]);
        }
        Ok(self.push(vec![ids.len(), d], out, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Stacks 2-D inputs with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidTensor("concat of nothing".into()))?;
        let c = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 2 || pv.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(*first).shape.clone(),
                    rhs: pv.shape.clone(),
                });
            }
            rows += pv.shape[0];
            data.extend_from_slice(&pv.data);
        }
        Ok(self.push(vec![rows, c], data, Op::ConcatRows(parts.to_vec())))
    }

    /// Picks rows of a 2-D tensor; indices may repeat.
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || indices.is_empty() {
            return Err(Error::InvalidTensor(format!("select_rows on shape {:?}", xv.shape)));
        }
        let (r, c) = (xv.shape[0], xv.shape[1]);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::IndexOutOfRange { op: "select_rows", index: i, len: r });
            }
            data.extend_from_slice(&xv.data[i * c..(i + 1) * c]);
        }
        Ok(self.push(vec![indices.len(), c], data, Op::SelectRows { x, indices: indices.to_vec() }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select_rows(x, &idx)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: xv.shape.clone(), rhs: shape.to_vec() });
        }
        let data = xv.data.clone();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x)))
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Local backward rule for node `idx` given its output gradient.
pub(super) fn backward_rule(nodes: &[Node], idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: Var| &nodes[v.0].value;
    let out = &nodes[idx].value;
    match &nodes[idx].op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &bv.data[p * n..(p + 1) * n];
                    da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    let aip = av.data[i * k + p];
                    if aip != 0.0 {
                        for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
            }
            vec![(*a, da), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            vec![(*a, zip_map(g, &bv.data, |x, y| x * y)), (*b, zip_map(g, &av.data, |x, y| x * y))]
        }
        Op::Scale(a, c) => vec![(*a, g.iter().map(|x| x * c).collect())],
        Op::AddRow(a, row) => {
            let c = val(*row).numel();
            let mut dr = vec![0.0; c];
            for (i, gv) in g.iter().enumerate() {
                dr[i % c] += gv;
            }
            vec![(*a, g.to_vec()), (*row, dr)]
        }
        Op::Relu(a) => {
            let av = val(*a);
            vec![(*a, zip_map(g, &av.data, |gv, x| if x > 0.0 { gv } else { 0.0 }))]
        }
        Op::Gelu(a) => {
            let av = val(*a);
            let d = zip_map(g, &av.data, |gv, x| {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
            });
            vec![(*a, d)]
        }
        Op::Tanh(a) => vec![(*a, zip_map(g, &out.data, |gv, y| gv * (1.0 - y * y)))],
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = axis_split(&out.shape, *axis);
            let y = &out.data;
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let dot: f64 = (0..n).map(|j| y[at(j)] * g[at(j)]).sum();
                    for j in 0..n {
                        dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let c = out.cols();
            let rows = out.rows();
            let gv = &val(*gain).data;
            let mut dx = vec![0.0; g.len()];
            let mut dgain = vec![0.0; c];
            let mut dbias = vec![0.0; c];
            for r in 0..rows {
                let gr = &g[r * c..(r + 1) * c];
                let hr = &xhat[r * c..(r + 1) * c];
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for j in 0..c {
                    let dh = gr[j] * gv[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                    dgain[j] += gr[j] * hr[j];
                    dbias[j] += gr[j];
                }
                let nf = c as f64;
                for j in 0..c {
                    let dh = gr[j] * gv[j];
                    dx[r * c + j] = inv_std[r] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                }
            }
            vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
        }
        Op::CrossEntropy { logits, target, probs } => {
            let mut d: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
            d[*target] -= g[0];
            vec![(*logits, d)]
        }
        Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
        Op::Gather { table, ids } => {
            let tv = val(*table);
            let d = tv.shape[1];
            let mut dt = vec![0.0; tv.numel()];
            for (r, &id) in ids.iter().enumerate() {
                for (t, gv) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                    *t += gv;
                }
            }
            vec![(*table, dt)]
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|p| {
                    let n = val(*p).numel();
                    let d = g[offset..offset + n].to_vec();
                    offset += n;
                    (*p, d)
                })
                .collect()
        }
        Op::SelectRows { x, indices } => {
            let xv = val(*x);
            let c = xv.cols();
            let mut dx = vec![0.0; xv.numel()];
            for (r, &i) in indices.iter().enumerate() {
                for (t, gv) in dx[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                    *t += gv;
                }
            }
            vec![(*x, dx)]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Custom { inputs, op } => {
            let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
            op.backward(&ins, out, g)
                .into_iter()
                .zip(inputs)
                .filter_map(|(d, v)| d.map(|d| (*v, d)))
                .collect()
        }
    }
}
