//! Forward and backward passes of the 1-D CNN.
//!
//! Activations are stored channel-last (`[position][channel]`, row-major)
//! so that im2col rows are contiguous copies of the input.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Layer sizes. Convolutions use 'same' padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_len: usize,
    pub conv1_channels: usize,
    pub conv1_width: usize,
    pub conv2_channels: usize,
    pub conv2_width: usize,
    pub stride: usize,
    pub dense1: usize,
    pub dense2: usize,
}

pub const NUM_CLASSES: usize = 2;

impl Architecture {
    /// conv(64, 16, s2) → conv(32, 8, s2) → dense 64 → dense 32 → 2.
    pub fn standard(input_len: usize) -> Self {
        Self {
            input_len,
            conv1_channels: 64,
            conv1_width: 16,
            conv2_channels: 32,
            conv2_width: 8,
            stride: 2,
            dense1: 64,
            dense2: 32,
        }
    }

    /// A model small enough for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_len: 32,
            conv1_channels: 2,
            conv1_width: 16,
            conv2_channels: 2,
            conv2_width: 8,
            stride: 2,
            dense1: 6,
            dense2: 4,
        }
    }

    pub fn conv1_len(&self) -> usize {
        same_padding(self.input_len, self.conv1_width, self.stride).0
    }

    pub fn conv2_len(&self) -> usize {
        same_padding(self.conv1_len(), self.conv2_width, self.stride).0
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_len,
            self.conv1_channels,
            self.conv1_width,
            self.conv2_channels,
            self.conv2_width,
            self.stride,
            self.dense1,
            self.dense2,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("zero dimension in {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn dims(&self) -> [usize; 8] {
        [
            self.input_len,
            self.conv1_channels,
            self.conv1_width,
            self.conv2_channels,
            self.conv2_width,
            self.stride,
            self.dense1,
            self.dense2,
        ]
    }

    pub(crate) fn from_dims(d: [usize; 8]) -> Self {
        Self {
            input_len: d[0],
            conv1_channels: d[1],
            conv1_width: d[2],
            conv2_channels: d[3],
            conv2_width: d[4],
            stride: d[5],
            dense1: d[6],
            dense2: d[7],
        }
    }
}

/// Output length and left padding of a 'same' convolution:
/// `out = ⌈len/stride⌉`, total padding `max((out-1)·stride + width - len, 0)`
/// split with the smaller half on the left.
pub fn same_padding(len: usize, width: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + width).saturating_sub(len);
    (out, total / 2)
}

/// Trainable parameters. Conv weights are `(width·in_channels) × out`,
/// dense weights `in × out`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub bn2_gamma: Vec<f64>,
    pub bn2_beta: Vec<f64>,
    pub dense1_w: Vec<f64>,
    pub dense1_b: Vec<f64>,
    pub dense2_w: Vec<f64>,
    pub dense2_b: Vec<f64>,
    pub dense3_w: Vec<f64>,
    pub dense3_b: Vec<f64>,
}

pub const GROUP_NAMES: [&str; 14] = [
    "conv1_w", "conv1_b", "bn1_gamma", "bn1_beta", "conv2_w", "conv2_b", "bn2_gamma", "bn2_beta",
    "dense1_w", "dense1_b", "dense2_w", "dense2_b", "dense3_w", "dense3_b",
];

impl Params {
    pub fn zeros(a: &Architecture) -> Self {
        let z = |n: usize| vec![0.0; n];
        Self {
            conv1_w: z(a.conv1_width * a.conv1_channels),
            conv1_b: z(a.conv1_channels),
            bn1_gamma: z(a.conv1_channels),
            bn1_beta: z(a.conv1_channels),
            conv2_w: z(a.conv2_width * a.conv1_channels * a.conv2_channels),
            conv2_b: z(a.conv2_channels),
            bn2_gamma: z(a.conv2_channels),
            bn2_beta: z(a.conv2_channels),
            dense1_w: z(a.conv2_channels * a.dense1),
            dense1_b: z(a.dense1),
            dense2_w: z(a.dense1 * a.dense2),
            dense2_b: z(a.dense2),
            dense3_w: z(a.dense2 * NUM_CLASSES),
            dense3_b: z(NUM_CLASSES),
        }
    }

    /// He-uniform weights (`±√(6/fan_in)`), zero biases, unit BN scale.
    pub fn init(a: &Architecture, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(a);
        let mut fill = |w: &mut Vec<f64>, fan_in: usize| {
            let limit = (6.0 / fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            w.iter_mut().for_each(|x| *x = u.sample(rng));
        };
        fill(&mut p.conv1_w, a.conv1_width);
        fill(&mut p.conv2_w, a.conv2_width * a.conv1_channels);
        fill(&mut p.dense1_w, a.conv2_channels);
        fill(&mut p.dense2_w, a.dense1);
        fill(&mut p.dense3_w, a.dense2);
        p.bn1_gamma.fill(1.0);
        p.bn2_gamma.fill(1.0);
        p
    }

    pub fn groups(&self) -> [&Vec<f64>; 14] {
        [
            &self.conv1_w, &self.conv1_b, &self.bn1_gamma, &self.bn1_beta, &self.conv2_w,
            &self.conv2_b, &self.bn2_gamma, &self.bn2_beta, &self.dense1_w, &self.dense1_b,
            &self.dense2_w, &self.dense2_b, &self.dense3_w, &self.dense3_b,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 14] {
        [
            &mut self.conv1_w, &mut self.conv1_b, &mut self.bn1_gamma, &mut self.bn1_beta,
            &mut self.conv2_w, &mut self.conv2_b, &mut self.bn2_gamma, &mut self.bn2_beta,
            &mut self.dense1_w, &mut self.dense1_b, &mut self.dense2_w, &mut self.dense2_b,
            &mut self.dense3_w, &mut self.dense3_b,
        ]
    }

    /// Whether a group is a weight matrix (subject to weight decay).
    pub fn is_weight(group: usize) -> bool {
        matches!(group, 0 | 4 | 8 | 10 | 12)
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// `C (m×n) = A (m×k) · B (k×n) [+ C]`; `ta`/`tb` read the stored matrix
/// as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover the m×k, k×n and m×n extents addressed by
    // these strides, checked above in debug builds.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// im2col for a channel-last input: row `t` holds the `width` input
/// positions feeding output `t`, zero outside the input.
fn im2col(x: &[f64], len: usize, ch: usize, width: usize, stride: usize, col: &mut Vec<f64>) -> usize {
    let (out, pad) = same_padding(len, width, stride);
    col.clear();
    col.resize(out * width * ch, 0.0);
    for t in 0..out {
        let row = &mut col[t * width * ch..(t + 1) * width * ch];
        for j in 0..width {
            let pos = (t * stride + j) as isize - pad as isize;
            if pos >= 0 && (pos as usize) < len {
                let p = pos as usize;
                row[j * ch..(j + 1) * ch].copy_from_slice(&x[p * ch..(p + 1) * ch]);
            }
        }
    }
    out
}

/// Scatter-add of column gradients back onto the input positions.
fn col2im(dcol: &[f64], len: usize, ch: usize, width: usize, stride: usize, dx: &mut [f64]) {
    let (out, pad) = same_padding(len, width, stride);
    for t in 0..out {
        let row = &dcol[t * width * ch..(t + 1) * width * ch];
        for j in 0..width {
            let pos = (t * stride + j) as isize - pad as isize;
            if pos >= 0 && (pos as usize) < len {
                let p = pos as usize;
                for (d, r) in dx[p * ch..(p + 1) * ch].iter_mut().zip(&row[j * ch..(j + 1) * ch]) {
                    *d += r;
                }
            }
        }
    }
}

fn conv_forward(
    x: &[f64],
    len: usize,
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    width: usize,
    stride: usize,
    col: &mut Vec<f64>,
    y: &mut [f64],
) {
    let out = im2col(x, len, cin, width, stride, col);
    matmul(out, width * cin, cout, col, false, w, false, y, false);
    for row in y.chunks_exact_mut(cout) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
}

/// Per-channel batch normalization over all rows of `z` (rows × ch).
struct BnBatch {
    inv_std: Vec<f64>,
}

fn bn_train(z: &[f64], ch: usize, gamma: &[f64], beta: &[f64], eps: f64, xhat: &mut [f64], y: &mut [f64]) -> BnBatch {
    let rows = z.len() / ch;
    let mut mean = vec![0.0; ch];
    for r in z.chunks_exact(ch) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; ch];
    for r in z.chunks_exact(ch) {
        for c in 0..ch {
            let d = r[c] - mean[c];
            var[c] += d * d;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / rows as f64 + eps).sqrt()).collect();
    for ((zr, xr), yr) in z.chunks_exact(ch).zip(xhat.chunks_exact_mut(ch)).zip(y.chunks_exact_mut(ch)) {
        for c in 0..ch {
            xr[c] = (zr[c] - mean[c]) * inv_std[c];
            yr[c] = gamma[c] * xr[c] + beta[c];
        }
    }
    BnBatch { inv_std }
}

/// Returns `dz` in place of `dy`, accumulating `dgamma`/`dbeta`.
fn bn_backward(dy: &mut [f64], xhat: &[f64], ch: usize, gamma: &[f64], bn: &BnBatch, dgamma: &mut [f64], dbeta: &mut [f64]) {
    let rows = (dy.len() / ch) as f64;
    let mut sum_dxhat = vec![0.0; ch];
    let mut sum_dxhat_xhat = vec![0.0; ch];
    for (dr, xr) in dy.chunks_exact(ch).zip(xhat.chunks_exact(ch)) {
        for c in 0..ch {
            dgamma[c] += dr[c] * xr[c];
            dbeta[c] += dr[c];
            let dx = dr[c] * gamma[c];
            sum_dxhat[c] += dx;
            sum_dxhat_xhat[c] += dx * xr[c];
        }
    }
    for (dr, xr) in dy.chunks_exact_mut(ch).zip(xhat.chunks_exact(ch)) {
        for c in 0..ch {
            let dx = dr[c] * gamma[c];
            dr[c] = bn.inv_std[c] / rows * (rows * dx - sum_dxhat[c] - xr[c] * sum_dxhat_xhat[c]);
        }
    }
}

fn dense_forward(x: &[f64], rows: usize, nin: usize, w: &[f64], b: &[f64], nout: usize, y: &mut [f64]) {
    matmul(rows, nin, nout, x, false, w, false, y, false);
    for r in y.chunks_exact_mut(nout) {
        for (v, bias) in r.iter_mut().zip(b) {
            *v += bias;
        }
    }
}

fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries where the activation was clamped.
fn relu_backward(dy: &mut [f64], activated: &[f64]) {
    for (d, a) in dy.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Per-channel sums of pre-normalization activations, for BN population
/// statistics.
#[derive(Clone, Debug, Default)]
pub struct BnMoments {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl BnMoments {
    pub fn new(ch: usize) -> Self {
        Self { count: 0.0, sum: vec![0.0; ch], sum_sq: vec![0.0; ch] }
    }

    fn add(&mut self, z: &[f64], ch: usize) {
        for r in z.chunks_exact(ch) {
            for c in 0..ch {
                self.sum[c] += r[c];
                self.sum_sq[c] += r[c] * r[c];
            }
        }
        self.count += (z.len() / ch) as f64;
    }

    /// Population mean and variance.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count.max(1.0);
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let var = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0))
            .collect();
        (mean, var)
    }
}

/// Output of a training-mode pass over one batch.
pub struct BatchResult {
    /// Mean cross-entropy.
    pub loss: f64,
    pub grads: Params,
    /// Class probabilities, `batch × 2`.
    pub probs: Vec<f64>,
    pub moments1: BnMoments,
    pub moments2: BnMoments,
}

/// Training-mode forward and backward pass (batch statistics in BN).
///
/// `inputs` are already standardized sequences of length
/// `arch.input_len`; `labels` are class indices (0 = LOS, 1 = NLOS).
pub fn forward_backward(
    arch: &Architecture,
    p: &Params,
    inputs: &[&[f64]],
    labels: &[usize],
    bn_eps: f64,
) -> Result<BatchResult> {
    let bsz = inputs.len();
    if bsz == 0 || labels.len() != bsz {
        return Err(Error::Shape(format!("{} inputs for {} labels", bsz, labels.len())));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != arch.input_len) {
        return Err(Error::Shape(format!("input length {} != {}", x.len(), arch.input_len)));
    }
    let (l0, c1, w1) = (arch.input_len, arch.conv1_channels, arch.conv1_width);
    let (l1, c2, w2) = (arch.conv1_len(), arch.conv2_channels, arch.conv2_width);
    let l2 = arch.conv2_len();
    let s = arch.stride;
    let (d1, d2) = (arch.dense1, arch.dense2);

    // conv1
    let mut cols1 = vec![Vec::new(); bsz];
    let mut z1 = vec![0.0; bsz * l1 * c1];
    for b in 0..bsz {
        conv_forward(inputs[b], l0, 1, &p.conv1_w, &p.conv1_b, c1, w1, s, &mut cols1[b], &mut z1[b * l1 * c1..(b + 1) * l1 * c1]);
    }
    let mut moments1 = BnMoments::new(c1);
    moments1.add(&z1, c1);
    let mut xhat1 = vec![0.0; z1.len()];
    let mut a1 = vec![0.0; z1.len()];
    let bn1 = bn_train(&z1, c1, &p.bn1_gamma, &p.bn1_beta, bn_eps, &mut xhat1, &mut a1);
    relu(&mut a1);

    // conv2
    let mut cols2 = vec![Vec::new(); bsz];
    let mut z2 = vec![0.0; bsz * l2 * c2];
    for b in 0..bsz {
        conv_forward(&a1[b * l1 * c1..(b + 1) * l1 * c1], l1, c1, &p.conv2_w, &p.conv2_b, c2, w2, s, &mut cols2[b], &mut z2[b * l2 * c2..(b + 1) * l2 * c2]);
    }
    let mut moments2 = BnMoments::new(c2);
    moments2.add(&z2, c2);
    let mut xhat2 = vec![0.0; z2.len()];
    let mut a2 = vec![0.0; z2.len()];
    let bn2 = bn_train(&z2, c2, &p.bn2_gamma, &p.bn2_beta, bn_eps, &mut xhat2, &mut a2);
    relu(&mut a2);

    // global average pool
    let mut pooled = vec![0.0; bsz * c2];
    for b in 0..bsz {
        for r in a2[b * l2 * c2..(b + 1) * l2 * c2].chunks_exact(c2) {
            for c in 0..c2 {
                pooled[b * c2 + c] += r[c];
            }
        }
    }
    pooled.iter_mut().for_each(|v| *v /= l2 as f64);

    let mut h1 = vec![0.0; bsz * d1];
    dense_forward(&pooled, bsz, c2, &p.dense1_w, &p.dense1_b, d1, &mut h1);
    relu(&mut h1);
    let mut h2 = vec![0.0; bsz * d2];
    dense_forward(&h1, bsz, d1, &p.dense2_w, &p.dense2_b, d2, &mut h2);
    relu(&mut h2);
    let mut logits = vec![0.0; bsz * NUM_CLASSES];
    dense_forward(&h2, bsz, d2, &p.dense3_w, &p.dense3_b, NUM_CLASSES, &mut logits);

    let mut probs = Vec::with_capacity(bsz * NUM_CLASSES);
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; bsz * NUM_CLASSES];
    for b in 0..bsz {
        let row = &logits[b * NUM_CLASSES..(b + 1) * NUM_CLASSES];
        let pr = softmax(row);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[b]];
        for c in 0..NUM_CLASSES {
            let target = if c == labels[b] { 1.0 } else { 0.0 };
            dlogits[b * NUM_CLASSES + c] = (pr[c] - target) / bsz as f64;
        }
        probs.extend(pr);
    }
    loss /= bsz as f64;
    if !loss.is_finite() {
        return Err(Error::Diverged);
    }

    let mut g = Params::zeros(arch);
    // dense3
    matmul(d2, bsz, NUM_CLASSES, &h2, true, &dlogits, false, &mut g.dense3_w, false);
    col_sums(&dlogits, NUM_CLASSES, &mut g.dense3_b);
    let mut dh2 = vec![0.0; bsz * d2];
    matmul(bsz, NUM_CLASSES, d2, &dlogits, false, &p.dense3_w, true, &mut dh2, false);
    relu_backward(&mut dh2, &h2);
    // dense2
    matmul(d1, bsz, d2, &h1, true, &dh2, false, &mut g.dense2_w, false);
    col_sums(&dh2, d2, &mut g.dense2_b);
    let mut dh1 = vec![0.0; bsz * d1];
    matmul(bsz, d2, d1, &dh2, false, &p.dense2_w, true, &mut dh1, false);
    relu_backward(&mut dh1, &h1);
    // dense1
    matmul(c2, bsz, d1, &pooled, true, &dh1, false, &mut g.dense1_w, false);
    col_sums(&dh1, d1, &mut g.dense1_b);
    let mut dpooled = vec![0.0; bsz * c2];
    matmul(bsz, d1, c2, &dh1, false, &p.dense1_w, true, &mut dpooled, false);

    // pool + relu + bn2
    let mut dz2 = vec![0.0; bsz * l2 * c2];
    for b in 0..bsz {
        for r in dz2[b * l2 * c2..(b + 1) * l2 * c2].chunks_exact_mut(c2) {
            for c in 0..c2 {
                r[c] = dpooled[b * c2 + c] / l2 as f64;
            }
        }
    }
    relu_backward(&mut dz2, &a2);
    bn_backward(&mut dz2, &xhat2, c2, &p.bn2_gamma, &bn2, &mut g.bn2_gamma, &mut g.bn2_beta);

    // conv2
    let mut da1 = vec![0.0; bsz * l1 * c1];
    let mut dcol = vec![0.0; l2 * w2 * c1];
    for b in 0..bsz {
        let dzb = &dz2[b * l2 * c2..(b + 1) * l2 * c2];
        matmul(w2 * c1, l2, c2, &cols2[b], true, dzb, false, &mut g.conv2_w, true);
        matmul(l2, c2, w2 * c1, dzb, false, &p.conv2_w, true, &mut dcol, false);
        col2im(&dcol, l1, c1, w2, s, &mut da1[b * l1 * c1..(b + 1) * l1 * c1]);
    }
    col_sums(&dz2, c2, &mut g.conv2_b);
    relu_backward(&mut da1, &a1);
    bn_backward(&mut da1, &xhat1, c1, &p.bn1_gamma, &bn1, &mut g.bn1_gamma, &mut g.bn1_beta);

    // conv1 (no input gradient needed)
    for b in 0..bsz {
        let dzb = &da1[b * l1 * c1..(b + 1) * l1 * c1];
        matmul(w1, l1, c1, &cols1[b], true, dzb, false, &mut g.conv1_w, true);
    }
    col_sums(&da1, c1, &mut g.conv1_b);

    Ok(BatchResult { loss, grads: g, probs, moments1, moments2 })
}

fn col_sums(x: &[f64], n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for r in x.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
}

/// Frozen BN statistics for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub bn1_mean: Vec<f64>,
    pub bn1_var: Vec<f64>,
    pub bn2_mean: Vec<f64>,
    pub bn2_var: Vec<f64>,
}

impl RunningStats {
    pub fn identity(a: &Architecture) -> Self {
        Self {
            bn1_mean: vec![0.0; a.conv1_channels],
            bn1_var: vec![1.0; a.conv1_channels],
            bn2_mean: vec![0.0; a.conv2_channels],
            bn2_var: vec![1.0; a.conv2_channels],
        }
    }
}

fn bn_infer(z: &mut [f64], ch: usize, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) {
    let scale: Vec<f64> = (0..ch).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
    for r in z.chunks_exact_mut(ch) {
        for c in 0..ch {
            r[c] = (r[c] - mean[c]) * scale[c] + beta[c];
        }
    }
}

/// Population BN statistics over `inputs`: layer-1 moments first, then
/// layer-2 moments with layer 1 normalized by its population statistics,
/// matching what inference sees.
pub fn population_stats(arch: &Architecture, p: &Params, inputs: &[&[f64]], bn_eps: f64) -> RunningStats {
    let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);
    let (l1, l2) = (arch.conv1_len(), arch.conv2_len());
    let mut col = Vec::new();
    let mut z1s = Vec::with_capacity(inputs.len());
    let mut m1 = BnMoments::new(c1);
    for x in inputs {
        let mut z1 = vec![0.0; l1 * c1];
        conv_forward(x, arch.input_len, 1, &p.conv1_w, &p.conv1_b, c1, arch.conv1_width, arch.stride, &mut col, &mut z1);
        m1.add(&z1, c1);
        z1s.push(z1);
    }
    let (bn1_mean, bn1_var) = m1.finish();
    let mut m2 = BnMoments::new(c2);
    let mut z2 = vec![0.0; l2 * c2];
    for mut a1 in z1s {
        bn_infer(&mut a1, c1, &p.bn1_gamma, &p.bn1_beta, &bn1_mean, &bn1_var, bn_eps);
        relu(&mut a1);
        conv_forward(&a1, l1, c1, &p.conv2_w, &p.conv2_b, c2, arch.conv2_width, arch.stride, &mut col, &mut z2);
        m2.add(&z2, c2);
    }
    let (bn2_mean, bn2_var) = m2.finish();
    RunningStats { bn1_mean, bn1_var, bn2_mean, bn2_var }
}

/// Inference-mode logits for one standardized sequence.
pub fn forward_infer(arch: &Architecture, p: &Params, stats: &RunningStats, x: &[f64], bn_eps: f64) -> Result<[f64; 2]> {
    if x.len() != arch.input_len {
        return Err(Error::Shape(format!("input length {} != {}", x.len(), arch.input_len)));
    }
    let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);
    let (l1, l2) = (arch.conv1_len(), arch.conv2_len());
    let mut col = Vec::new();
    let mut a1 = vec![0.0; l1 * c1];
    conv_forward(x, arch.input_len, 1, &p.conv1_w, &p.conv1_b, c1, arch.conv1_width, arch.stride, &mut col, &mut a1);
    bn_infer(&mut a1, c1, &p.bn1_gamma, &p.bn1_beta, &stats.bn1_mean, &stats.bn1_var, bn_eps);
    relu(&mut a1);
    let mut a2 = vec![0.0; l2 * c2];
    conv_forward(&a1, l1, c1, &p.conv2_w, &p.conv2_b, c2, arch.conv2_width, arch.stride, &mut col, &mut a2);
    bn_infer(&mut a2, c2, &p.bn2_gamma, &p.bn2_beta, &stats.bn2_mean, &stats.bn2_var, bn_eps);
    relu(&mut a2);
    let mut pooled = vec![0.0; c2];
    for r in a2.chunks_exact(c2) {
        for c in 0..c2 {
            pooled[c] += r[c];
        }
    }
    pooled.iter_mut().for_each(|v| *v /= l2 as f64);
    let mut h1 = vec![0.0; arch.dense1];
    dense_forward(&pooled, 1, c2, &p.dense1_w, &p.dense1_b, arch.dense1, &mut h1);
    relu(&mut h1);
    let mut h2 = vec![0.0; arch.dense2];
    dense_forward(&h1, 1, arch.dense1, &p.dense2_w, &p.dense2_b, arch.dense2, &mut h2);
    relu(&mut h2);
    let mut logits = [0.0; 2];
    dense_forward(&h2, 1, arch.dense2, &p.dense3_w, &p.dense3_b, NUM_CLASSES, &mut logits);
    Ok(logits)
}

/// Random parameters with non-trivial biases and BN affine terms, for
/// gradient checks.
pub fn random_params(arch: &Architecture, rng: &mut Rng) -> Params {
    let mut p = Params::init(arch, rng);
    for (i, g) in p.groups_mut().into_iter().enumerate() {
        if !Params::is_weight(i) {
            let centre = if i == 2 || i == 6 { 1.0 } else { 0.0 };
            g.iter_mut().for_each(|v| *v = centre + rng.random_range(-0.3..0.3));
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand_distr::StandardNormal;

    #[test]
    fn padding_lengths() {
        assert_eq!(same_padding(3276, 16, 2), (1638, 7));
        assert_eq!(same_padding(1638, 8, 2), (819, 3));
        let a = Architecture::standard(3276);
        assert_eq!((a.conv1_len(), a.conv2_len(), a.conv2_channels), (1638, 819, 32));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(4, 1, 2), (2, 0));
    }

    #[test]
    fn matmul_transposes() {
        // A 2×3, B 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        matmul(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // Aᵀ (3×2)ᵀ... use A stored 2×3 as Aᵀ of a 3×2: (Aᵀ)ᵀ·? -> compute Aᵀ·A (3×3)
        let mut d = [0.0; 9];
        matmul(3, 2, 3, &a, true, &a, false, &mut d, false);
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        let mut e = [0.0; 4];
        matmul(2, 3, 2, &a, false, &a, true, &mut e, false);
        assert_eq!(e, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = substream(1, 0);
        let (len, cin, cout, width, stride) = (11, 3, 2, 4, 2);
        let x: Vec<f64> = (0..len * cin).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..width * cin * cout).map(|_| rng.sample(StandardNormal)).collect();
        let b = [0.5, -0.25];
        let (out, pad) = same_padding(len, width, stride);
        let mut y = vec![0.0; out * cout];
        conv_forward(&x, len, cin, &w, &b, cout, width, stride, &mut Vec::new(), &mut y);
        for t in 0..out {
            for o in 0..cout {
                let mut s = b[o];
                for j in 0..width {
                    let p = (t * stride + j) as isize - pad as isize;
                    if p < 0 || p as usize >= len {
                        continue;
                    }
                    for c in 0..cin {
                        s += x[p as usize * cin + c] * w[(j * cin + c) * cout + o];
                    }
                }
                assert!((y[t * cout + o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bn_full_batch_is_standardized() {
        let mut rng = substream(2, 0);
        let ch = 3;
        let z: Vec<f64> = (0..200 * ch).map(|i| 5.0 * rng.sample::<f64, _>(StandardNormal) + i as f64 % 7.0).collect();
        let (mut xhat, mut y) = (vec![0.0; z.len()], vec![0.0; z.len()]);
        bn_train(&z, ch, &[1.0; 3], &[0.0; 3], 0.0, &mut xhat, &mut y);
        let mut m = BnMoments::new(ch);
        m.add(&y, ch);
        let (mean, var) = m.finish();
        for c in 0..ch {
            assert!(mean[c].abs() < 1e-6);
            assert!((var[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_symmetric() {
        assert_eq!(softmax(&[3.3, 3.3]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, -1000.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    fn group_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        if scale < 1e-9 {
            diff
        } else {
            diff / scale
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = Architecture::tiny();
        let mut rng = substream(3, 0);
        let p = random_params(&arch, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..32).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let labels = [0, 1, 1, 0, 1];
        let res = forward_backward(&arch, &p, &inputs, &labels, 1e-5).unwrap();
        let h = 1e-6;
        for gi in 0..14 {
            let n = p.groups()[gi].len();
            let mut numeric = vec![0.0; n];
            for e in 0..n {
                let mut plus = p.clone();
                plus.groups_mut()[gi][e] += h;
                let mut minus = p.clone();
                minus.groups_mut()[gi][e] -= h;
                let lp = forward_backward(&arch, &plus, &inputs, &labels, 1e-5).unwrap().loss;
                let lm = forward_backward(&arch, &minus, &inputs, &labels, 1e-5).unwrap().loss;
                numeric[e] = (lp - lm) / (2.0 * h);
            }
            let err = group_rel_err(res.grads.groups()[gi], &numeric);
            assert!(err < 1e-4, "{}: {err}", GROUP_NAMES[gi]);
        }
    }

    #[test]
    fn inference_matches_training_with_batch_stats() {
        // With running stats equal to a single sample's batch stats the two
        // modes agree.
        let arch = Architecture::tiny();
        let mut rng = substream(4, 0);
        let p = random_params(&arch, &mut rng);
        let x: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let res = forward_backward(&arch, &p, &[&x], &[0], 1e-5).unwrap();
        let (m1, v1) = res.moments1.finish();
        let (m2, v2) = res.moments2.finish();
        let stats = RunningStats { bn1_mean: m1, bn1_var: v1, bn2_mean: m2, bn2_var: v2 };
        let logits = forward_infer(&arch, &p, &stats, &x, 1e-5).unwrap();
        let pr = softmax(&logits);
        assert!((pr[0] - res.probs[0]).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let arch = Architecture::tiny();
        let p = Params::init(&arch, &mut substream(0, 0));
        let x = vec![0.0; 31];
        assert!(matches!(forward_backward(&arch, &p, &[&x], &[0], 1e-5), Err(Error::Shape(_))));
        assert!(forward_infer(&arch, &p, &RunningStats::identity(&arch), &x, 1e-5).is_err());
        assert!(forward_backward(&arch, &p, &[], &[], 1e-5).is_err());
    }
}
