//! Reverse-mode autodiff over [`Mat`] values.
//!
//! A `Graph` is a define-by-run tape: forward calls push nodes, `backward`
//! walks the tape in reverse and accumulates gradients. One graph per
//! example (or small batch) keeps lifetimes trivial; models average
//! per-example gradients outside the tape.

use super::mat::{softmax_rows, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// [n,d] + [1,d] broadcast over rows.
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    SoftmaxRows(usize),
    LayerNormRows {
        x: usize,
        gain: usize,
        offset: usize,
        eps: f64,
    },
    ConcatCols(Vec<usize>),
    /// Rows of `table` selected by index (embedding lookup / row slicing).
    TakeRows {
        x: usize,
        rows: Vec<usize>,
    },
    Transpose(usize),
    /// Elementwise product with a constant mask (inverted dropout).
    MulMask(usize, Vec<f64>),
    /// Mean over rows of -sum_c q_c log softmax(logits)_c with smoothed targets.
    SmoothedCe {
        logits: usize,
        labels: Vec<usize>,
        eps: f64,
    },
}

pub struct Graph {
    vals: Vec<Mat>,
    ops: Vec<Op>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            vals: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, val: Mat, op: Op) -> VarId {
        self.vals.push(val);
        self.ops.push(op);
        VarId(self.vals.len() - 1)
    }

    pub fn leaf(&mut self, val: Mat) -> VarId {
        self.push(val, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Mat {
        &self.vals[id.0]
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.vals[a.0].matmul(&self.vals[b.0]);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let mut v = x.clone();
        v.add_assign(y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn add_row(&mut self, x: VarId, row: VarId) -> VarId {
        let (m, r) = (&self.vals[x.0], &self.vals[row.0]);
        assert_eq!(r.rows, 1, "add_row rhs must be 1xN");
        assert_eq!(m.cols, r.cols, "add_row width mismatch");
        let mut v = m.clone();
        for i in 0..v.rows {
            for (a, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *a += b;
            }
        }
        self.push(v, Op::AddRow(x.0, row.0))
    }

    pub fn scale(&mut self, x: VarId, s: f64) -> VarId {
        let mut v = self.vals[x.0].clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(x.0, s))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let v = self.vals[x.0].map(|a| if a > 0.0 { a } else { 0.0 });
        self.push(v, Op::Relu(x.0))
    }

    pub fn softmax_rows(&mut self, x: VarId) -> VarId {
        let v = softmax_rows(&self.vals[x.0]);
        self.push(v, Op::SoftmaxRows(x.0))
    }

    pub fn layer_norm_rows(&mut self, x: VarId, gain: VarId, offset: VarId, eps: f64) -> VarId {
        let (m, g, o) = (&self.vals[x.0], &self.vals[gain.0], &self.vals[offset.0]);
        assert_eq!(g.rows, 1);
        assert_eq!(o.rows, 1);
        assert_eq!(g.cols, m.cols);
        assert_eq!(o.cols, m.cols);
        let mut v = Mat::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let row = m.row(r);
            let mean = row.iter().sum::<f64>() / m.cols as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / m.cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..m.cols {
                *v.at_mut(r, c) = (row[c] - mean) * inv * g.data[c] + o.data[c];
            }
        }
        self.push(
            v,
            Op::LayerNormRows {
                x: x.0,
                gain: gain.0,
                offset: offset.0,
                eps,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.vals[parts[0].0].rows;
        let total: usize = parts.iter().map(|p| self.vals[p.0].cols).sum();
        let mut v = Mat::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let m = &self.vals[p.0];
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn take_rows(&mut self, x: VarId, rows: &[usize]) -> VarId {
        let m = &self.vals[x.0];
        let mut v = Mat::zeros(rows.len(), m.cols);
        for (i, &r) in rows.iter().enumerate() {
            assert!(r < m.rows, "take_rows index {r} out of range {}", m.rows);
            v.row_mut(i).copy_from_slice(m.row(r));
        }
        self.push(
            v,
            Op::TakeRows {
                x: x.0,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn transpose(&mut self, x: VarId) -> VarId {
        let v = self.vals[x.0].transpose();
        self.push(v, Op::Transpose(x.0))
    }

    /// Inverted dropout: `mask` entries are either 0 or 1/keep_prob.
    pub fn mul_mask(&mut self, x: VarId, mask: Vec<f64>) -> VarId {
        let m = &self.vals[x.0];
        assert_eq!(mask.len(), m.len(), "mask length mismatch");
        let mut v = m.clone();
        for (a, b) in v.data.iter_mut().zip(&mask) {
            *a *= b;
        }
        self.push(v, Op::MulMask(x.0, mask))
    }

    /// Label-smoothing cross-entropy, mean over rows. Output is 1x1.
    pub fn smoothed_ce(&mut self, logits: VarId, labels: &[usize], eps: f64) -> VarId {
        let m = &self.vals[logits.0];
        assert_eq!(m.rows, labels.len(), "smoothed_ce label count mismatch");
        let k = m.cols;
        let p = softmax_rows(m);
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            assert!(y < k, "label out of range");
            let q_other = eps / k as f64;
            let q_true = 1.0 - eps + q_other;
            for c in 0..k {
                let q = if c == y { q_true } else { q_other };
                total -= q * p.at(r, c).max(1e-300).ln();
            }
        }
        let v = Mat::from_vec(1, 1, vec![total / labels.len() as f64]);
        self.push(
            v,
            Op::SmoothedCe {
                logits: logits.0,
                labels: labels.to_vec(),
                eps,
            },
        )
    }

    /// Backpropagate from a scalar root; returns per-node gradients.
    pub fn backward(&self, root: VarId) -> Vec<Option<Mat>> {
        let n = self.vals.len();
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        let root_val = &self.vals[root.0];
        assert_eq!(root_val.shape(), (1, 1), "backward root must be scalar");
        grads[root.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..=root.0).rev() {
            let Some(d) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf => {
                    grads[idx] = Some(d);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = d.matmul(&self.vals[*b].transpose());
                    let db = self.vals[*a].transpose().matmul(&d);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, d.clone());
                    accumulate(&mut grads, *b, d);
                }
                Op::AddRow(x, row) => {
                    let mut dr = Mat::zeros(1, d.cols);
                    for r in 0..d.rows {
                        for (acc, v) in dr.data.iter_mut().zip(d.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                    accumulate(&mut grads, *row, dr);
                }
                Op::Scale(x, s) => {
                    let mut dx = d;
                    dx.scale_assign(*s);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let xv = &self.vals[*x];
                    let mut dx = d;
                    for (g, &v) in dx.data.iter_mut().zip(&xv.data) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &self.vals[idx];
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: f64 = d.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            *dx.at_mut(r, c) = y.at(r, c) * (d.at(r, c) - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNormRows { x, gain, offset, eps } => {
                    let xv = &self.vals[*x];
                    let g = &self.vals[*gain];
                    let dcols = xv.cols as f64;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    let mut dgain = Mat::zeros(1, xv.cols);
                    let mut doffset = Mat::zeros(1, xv.cols);
                    for r in 0..xv.rows {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / dcols;
                        let var =
                            row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / dcols;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|a| (a - mean) * inv).collect();
                        let dy = d.row(r);
                        let dxhat: Vec<f64> =
                            dy.iter().zip(&g.data).map(|(a, b)| a * b).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / dcols;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / dcols;
                        for c in 0..xv.cols {
                            *dx.at_mut(r, c) =
                                inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                            dgain.data[c] += dy[c] * xhat[c];
                            doffset.data[c] += dy[c];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *offset, doffset);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.vals[*p].cols;
                        let mut dp = Mat::zeros(d.rows, w);
                        for r in 0..d.rows {
                            dp.row_mut(r).copy_from_slice(&d.row(r)[off..off + w]);
                        }
                        accumulate(&mut grads, *p, dp);
                        off += w;
                    }
                }
                Op::TakeRows { x, rows } => {
                    let xv = &self.vals[*x];
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for (acc, v) in dx.row_mut(r).iter_mut().zip(d.row(i)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, d.transpose());
                }
                Op::MulMask(x, mask) => {
                    let mut dx = d;
                    for (g, m) in dx.data.iter_mut().zip(mask) {
                        *g *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SmoothedCe { logits, labels, eps } => {
                    let lv = &self.vals[*logits];
                    let k = lv.cols;
                    let p = softmax_rows(lv);
                    let scale = d.at(0, 0) / labels.len() as f64;
                    let q_other = eps / k as f64;
                    let q_true = 1.0 - eps + q_other;
                    let mut dl = Mat::zeros(lv.rows, lv.cols);
                    for (r, &y) in labels.iter().enumerate() {
                        for c in 0..k {
                            let q = if c == y { q_true } else { q_other };
                            *dl.at_mut(r, c) = scale * (p.at(r, c) - q);
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], idx: usize, d: Mat) {
    match &mut grads[idx] {
        Some(g) => g.add_assign(&d),
        slot => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference on one input entry of a scalar-valued graph.
    fn fd_check(build: impl Fn(&mut Graph, &[Mat]) -> VarId, inputs: &[Mat], tol: f64) {
        let mut g = Graph::new();
        let out = build(&mut g, inputs);
        let leaf_ids: Vec<VarId> = (0..inputs.len()).map(VarId).collect();
        let grads = g.backward(out);

        let h = 1e-6;
        for (li, input) in inputs.iter().enumerate() {
            let analytic = grads[leaf_ids[li].0]
                .as_ref()
                .unwrap_or_else(|| panic!("no grad for leaf {li}"));
            for e in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[li].data[e] += h;
                let mut minus = inputs.to_vec();
                minus[li].data[e] -= h;
                let mut gp = Graph::new();
                let op = build(&mut gp, &plus);
                let mut gm = Graph::new();
                let om = build(&mut gm, &minus);
                let num = (gp.value(op).at(0, 0) - gm.value(om).at(0, 0)) / (2.0 * h);
                let a = analytic.data[e];
                let denom = num.abs().max(a.abs()).max(1e-8);
                assert!(
                    ((a - num) / denom).abs() < tol,
                    "leaf {li} entry {e}: analytic {a} vs numeric {num}"
                );
            }
        }
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::gaussian(rows, cols, 0.0, 1.0, &mut rng)
    }

    fn sum_to_scalar(g: &mut Graph, x: VarId) -> VarId {
        // Weighted sum so gradients are not uniform.
        let v = g.value(x).clone();
        let w: Vec<f64> = (0..v.cols).map(|i| 0.3 + 0.1 * i as f64).collect();
        let wt = g.leaf(Mat::from_vec(v.cols, 1, w));
        let prod = g.matmul(x, wt);
        let ones = g.leaf(Mat::from_vec(1, v.rows, vec![1.0; v.rows]));
        g.matmul(ones, prod)
    }

    #[test]
    fn grad_matmul_add_relu() {
        let inputs = vec![rand_mat(3, 4, 1), rand_mat(4, 2, 2), rand_mat(1, 2, 3)];
        fd_check(
            |g, ins| {
                let a = g.leaf(ins[0].clone());
                let b = g.leaf(ins[1].clone());
                let bias = g.leaf(ins[2].clone());
                let mm = g.matmul(a, b);
                let ab = g.add_row(mm, bias);
                let r = g.relu(ab);
                sum_to_scalar(g, r)
            },
            &inputs,
            1e-5,
        );
    }

    #[test]
    fn grad_softmax_layernorm() {
        let inputs = vec![rand_mat(3, 5, 4), rand_mat(1, 5, 5), rand_mat(1, 5, 6)];
        fd_check(
            |g, ins| {
                let x = g.leaf(ins[0].clone());
                let gain = g.leaf(ins[1].clone());
                let off = g.leaf(ins[2].clone());
                let ln = g.layer_norm_rows(x, gain, off, 1e-5);
                let sm = g.softmax_rows(ln);
                sum_to_scalar(g, sm)
            },
            &inputs,
            1e-4,
        );
    }

    #[test]
    fn grad_concat_take_rows_mask() {
        let inputs = vec![rand_mat(4, 3, 7), rand_mat(4, 2, 8)];
        fd_check(
            |g, ins| {
                let a = g.leaf(ins[0].clone());
                let b = g.leaf(ins[1].clone());
                let cat = g.concat_cols(&[a, b]);
                let took = g.take_rows(cat, &[0, 2, 2]);
                let mask: Vec<f64> = (0..15).map(|i| if i % 4 == 0 { 0.0 } else { 1.25 }).collect();
                let masked = g.mul_mask(took, mask);
                sum_to_scalar(g, masked)
            },
            &inputs,
            1e-5,
        );
    }

    #[test]
    fn grad_transpose_attention_pattern() {
        // q k^T / sqrt(d) -> softmax -> context, the attention core.
        let inputs = vec![rand_mat(3, 4, 20), rand_mat(3, 4, 21), rand_mat(3, 4, 22)];
        fd_check(
            |g, ins| {
                let q = g.leaf(ins[0].clone());
                let k = g.leaf(ins[1].clone());
                let v = g.leaf(ins[2].clone());
                let kt = g.transpose(k);
                let scores = g.matmul(q, kt);
                let scaled = g.scale(scores, 0.5);
                let attn = g.softmax_rows(scaled);
                let ctx = g.matmul(attn, v);
                sum_to_scalar(g, ctx)
            },
            &inputs,
            1e-4,
        );
    }

    #[test]
    fn grad_smoothed_ce() {
        let inputs = vec![rand_mat(4, 3, 9)];
        fd_check(
            |g, ins| {
                let logits = g.leaf(ins[0].clone());
                g.smoothed_ce(logits, &[0, 2, 1, 1], 0.15)
            },
            &inputs,
            1e-6,
        );
    }

    #[test]
    fn grad_scale_and_shared_leaf() {
        // A leaf feeding two paths must accumulate both contributions.
        let inputs = vec![rand_mat(2, 2, 10)];
        fd_check(
            |g, ins| {
                let x = g.leaf(ins[0].clone());
                let s = g.scale(x, 2.5);
                let sum = g.add(s, x);
                sum_to_scalar(g, sum)
            },
            &inputs,
            1e-6,
        );
    }
}
