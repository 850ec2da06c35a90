//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for the parameters that were used.
//! Graphs are single-use: build one per forward pass.

use rand::Rng;

use crate::tensor::{dot, Matrix};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// Elementwise product with a constant matrix.
    MulConst(Var, Matrix),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    /// Row-wise softmax over the first `visible[r]` columns; other entries are 0.
    Softmax { x: Var, visible: Vec<usize> },
    /// Row `r` is `table[ids[r]]`, or zeros for `None`.
    Gather { table: Var, ids: Vec<Option<usize>> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    /// `Σ_r weight[r] · −log softmax_masked(logits[r])[target[r]]`, a 1×1 value.
    MaskedNll { logits: Var, probs: Matrix, targets: Vec<Option<usize>>, weights: Vec<f64> },
    SumScalars(Vec<Var>),
}

struct Node {
    /// `None` for parameter nodes, whose value lives in the borrowed store.
    value: Option<Matrix>,
    op: Op,
}

/// A single forward pass over borrowed parameter values.
pub struct Graph<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Parameter `index`; repeated calls share one node.
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_nodes[index] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(index) });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), self.value(a).cols());
        let r = r.row(0).to_vec();
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push(v, Op::Relu(a))
    }

    pub fn mul_const(&mut self, a: Var, m: Matrix) -> Var {
        assert_eq!(self.value(a).shape(), m.shape());
        let mut v = self.value(a).clone();
        for (x, k) in v.data_mut().iter_mut().zip(m.data()) {
            *x *= k;
        }
        self.push(v, Op::MulConst(a, m))
    }

    /// Inverted dropout with keep-probability `1 - p`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        self.mul_const(a, Matrix::from_vec(r, c, mask))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Softmax of each row over its first `visible[r]` entries.
    ///
    /// Masked entries are exactly 0 and never read; a row with nothing
    /// visible is all zeros.
    pub fn softmax_visible(&mut self, x: Var, visible: Vec<usize>) -> Var {
        let xv = self.value(x);
        assert_eq!(visible.len(), xv.rows());
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for (r, &vis) in visible.iter().enumerate() {
            assert!(vis <= xv.cols(), "visible count {vis} exceeds {} columns", xv.cols());
            if vis == 0 {
                continue;
            }
            let row = &xv.row(r)[..vis];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (o, e) in out.row_mut(r)[..vis].iter_mut().zip(&exps) {
                *o = e / z;
            }
        }
        self.push(out, Op::Softmax { x, visible })
    }

    pub fn gather(&mut self, table: Var, ids: Vec<Option<usize>>) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, id) in ids.iter().enumerate() {
            if let Some(i) = id {
                out.row_mut(r).copy_from_slice(t.row(*i));
            }
        }
        self.push(out, Op::Gather { table, ids })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in &parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), rows);
                out.row_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row(r));
                c0 += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts))
    }

    /// Weighted negative log-likelihood of row targets under a masked softmax.
    ///
    /// `mask[r][c] == false` removes class `c` from row `r`'s support. Rows
    /// with `None` target contribute nothing.
    pub fn masked_nll(&mut self, logits: Var, mask: &[Vec<bool>], targets: Vec<Option<usize>>, weights: Vec<f64>) -> Var {
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        assert_eq!(mask.len(), rows);
        assert_eq!(targets.len(), rows);
        assert_eq!(weights.len(), rows);
        let mut probs = Matrix::zeros(rows, cols);
        let mut loss = 0.0;
        for r in 0..rows {
            let Some(t) = targets[r] else { continue };
            assert!(mask[r][t], "target {t} masked out in row {r}");
            let p = masked_softmax(lv.row(r), &mask[r]);
            loss -= weights[r] * p[t].ln();
            probs.row_mut(r).copy_from_slice(&p);
        }
        self.push(Matrix::from_vec(1, 1, vec![loss]), Op::MaskedNll { logits, probs, targets, weights })
    }

    pub fn sum_scalars(&mut self, parts: Vec<Var>) -> Var {
        let s = parts.iter().map(|p| self.value(*p).get(0, 0)).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumScalars(parts))
    }

    /// Back-propagates from a 1×1 node. Returns `(param index, gradient)` pairs.
    pub fn backward(&self, root: Var) -> Vec<(usize, Matrix)> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => out.push((*p, g)),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scaled(*s)),
                Op::Relu(a) => {
                    let mut ga = g;
                    for (gv, y) in ga.data_mut().iter_mut().zip(self.value(Var(i)).data()) {
                        if *y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MulConst(a, m) => {
                    let mut ga = g;
                    for (gv, k) in ga.data_mut().iter_mut().zip(m.data()) {
                        *gv *= k;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (rows, cols) = g.shape();
                    let gam = self.value(*gamma).row(0);
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gb = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let dh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / cols as f64;
                        let mean_dh_h = dot(&dh, hr) / cols as f64;
                        for c in 0..cols {
                            gx.set(r, c, inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h));
                            gg.row_mut(0)[c] += gr[c] * hr[c];
                            gb.row_mut(0)[c] += gr[c];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gb);
                }
                Op::Softmax { x, visible } => {
                    let y = self.value(Var(i));
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for (r, &vis) in visible.iter().enumerate() {
                        if vis == 0 {
                            continue;
                        }
                        let yr = &y.row(r)[..vis];
                        let gr = &g.row(r)[..vis];
                        let s = dot(yr, gr);
                        for c in 0..vis {
                            gx.set(r, c, yr[c] * (gr[c] - s));
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let (tr, tc) = self.shape(*table);
                    let mut gt = Matrix::zeros(tr, tc);
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(i) = id {
                            for (o, v) in gt.row_mut(*i).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SliceCols { x, start } => {
                    let (xr, xc) = self.shape(*x);
                    let mut gx = Matrix::zeros(xr, xc);
                    for r in 0..xr {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let (pr, pc) = self.shape(*p);
                        let mut gp = Matrix::zeros(pr, pc);
                        for r in 0..pr {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + pc]);
                        }
                        c0 += pc;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::MaskedNll { logits, probs, targets, weights } => {
                    let up = g.get(0, 0);
                    let mut gl = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let w = weights[r] * up;
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..probs.cols() {
                            let ind = if c == *t { 1.0 } else { 0.0 };
                            gl.set(r, c, w * (probs.get(r, c) - ind));
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::SumScalars(parts) => {
                    for p in parts {
                        accumulate(&mut grads, *p, g.clone());
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Softmax restricted to entries where `mask` is true; others get 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(v, m)| if *m { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks every parameter entry of `f` against central differences.
    fn check(params: &mut [Matrix], f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |ps: &[Matrix]| {
            let mut g = Graph::new(ps);
            let vars: Vec<Var> = (0..ps.len()).map(|i| g.param(i)).collect();
            let root = f(&mut g, &vars);
            (g.value(root).get(0, 0), g.backward(root))
        };
        let (_, analytic) = eval(params);
        let h = 1e-6;
        for pi in 0..params.len() {
            let ga = analytic.iter().find(|(i, _)| *i == pi).map(|(_, g)| g.clone());
            for k in 0..params[pi].data().len() {
                let orig = params[pi].data()[k];
                params[pi].data_mut()[k] = orig + h;
                let up = eval(params).0;
                params[pi].data_mut()[k] = orig - h;
                let down = eval(params).0;
                params[pi].data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = ga.as_ref().map_or(0.0, |g| g.data()[k]);
                assert!((a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()), "param {pi}[{k}]: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = vec![
            random(3, 4, &mut rng),
            random(4, 4, &mut rng),
            random(1, 4, &mut rng),
            random(1, 4, &mut rng),
            random(2, 4, &mut rng),
        ];
        check(&mut ps, |g, v| {
            let q = g.matmul(v[0], v[1]);
            let q = g.add_row(q, v[2]);
            let s = g.matmul_t(q, v[0]);
            let s = g.scale(s, 0.5);
            let a = g.softmax_visible(s, vec![0, 2, 3]);
            let ctx = g.matmul(a, v[0]);
            let r = g.relu(ctx);
            let r = g.add(r, v[0]);
            let n = g.layer_norm(r, v[3], v[2]);
            let e = g.gather(v[4], vec![Some(1), None, Some(0)]);
            let n = g.add(n, e);
            let left = g.slice_cols(n, 0, 2);
            let right = g.slice_cols(n, 2, 2);
            let n = g.concat_cols(vec![right, left]);
            let mask = vec![vec![true, true, false, true]; 3];
            let l1 = g.masked_nll(n, &mask, vec![Some(0), None, Some(3)], vec![1.0, 1.0, 0.5]);
            let l2 = g.masked_nll(n, &mask, vec![Some(1), Some(1), None], vec![0.3, -0.2, 0.0]);
            g.sum_scalars(vec![l1, l2])
        });
    }

    #[test]
    fn fully_masked_rows_are_zero() {
        let mut g = Graph::new(&[]);
        let x = g.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let s = g.softmax_visible(x, vec![0, 1]);
        assert_eq!(g.value(s).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_excludes_masked() {
        let p = masked_softmax(&[0.0, 100.0, 0.0], &[true, false, true]);
        assert_eq!(p, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn shared_param_nodes_accumulate() {
        let w = [Matrix::from_rows(&[vec![2.0]])];
        let mut g = Graph::new(&w);
        let a = g.param(0);
        let b = g.param(0);
        assert_eq!(a, b);
        let y = g.matmul(a, b);
        let grads = g.backward(y);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].1.get(0, 0), 4.0);
    }
}
