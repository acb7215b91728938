//! Fully-connected ReLU network with explicit forward/backward passes.
//!
//! The network has no biases and scales its output by `sqrt(m)`:
//!
//! ```text
//! f(x) = sqrt(m) * W_L relu(W_{L-1} ... relu(W_1 x))
//! ```
//!
//! `W_1` is `m x d`, the `L-2` middle matrices are `m x m`, and `W_L` is
//! `K x m`. In theory mode (`K = 1`) the first and last matrices are frozen
//! and only middle matrices receive updates; in practical mode everything
//! trains. ReLU derivative at 0 is taken as 0 (strict `g > 0` masks).

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Which training regime the parameters follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Binary output, unit-norm inputs, first/last matrices frozen.
    Theory,
    /// Multiclass, everything trainable.
    Practical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub d: usize,
    pub m: usize,
    /// Number of weight matrices, `>= 2`.
    pub depth: usize,
    pub k: usize,
    pub mode: Mode,
    pub seed: u64,
    pub w1: Matrix,
    pub w_mid: Vec<Matrix>,
    pub w_out: Matrix,
}

/// Borrowed view of one network (trunk + a specific output head).
#[derive(Clone, Copy)]
pub struct NetView<'a> {
    pub w1: &'a Matrix,
    pub w_mid: &'a [Matrix],
    pub w_out: &'a Matrix,
    pub m: usize,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// h_0: the network input.
    pub input: Vec<f64>,
    /// g_1 .. g_{L-1}: pre-activations per hidden layer.
    pub preacts: Vec<Vec<f64>>,
    /// h_1 .. h_{L-1}: post-activation vectors per hidden layer.
    pub hidden: Vec<Vec<f64>>,
    /// D_1 .. D_{L-1}: strict `g > 0` indicator per hidden unit.
    pub masks: Vec<Vec<bool>>,
    /// Length-K output.
    pub output: Vec<f64>,
}

/// One gradient matrix per weight matrix, shape-congruent with its params.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub w1: Matrix,
    pub w_mid: Vec<Matrix>,
    pub w_out: Matrix,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        GradientSet {
            w1: Matrix::zeros(params.m, params.d),
            w_mid: params
                .w_mid
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            w_out: Matrix::zeros(params.k, params.m),
        }
    }

    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        self.w1.add_scaled(&other.w1, scale);
        for (a, b) in self.w_mid.iter_mut().zip(other.w_mid.iter()) {
            a.add_scaled(b, scale);
        }
        self.w_out.add_scaled(&other.w_out, scale);
    }

    pub fn scale(&mut self, s: f64) {
        self.w1.scale(s);
        for w in self.w_mid.iter_mut() {
            w.scale(s);
        }
        self.w_out.scale(s);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w_mid.iter().all(Matrix::is_finite) && self.w_out.is_finite()
    }

    /// Iterate all matrices in layer order W1, mid..., WL.
    pub fn layers(&self) -> impl Iterator<Item = &Matrix> {
        std::iter::once(&self.w1)
            .chain(self.w_mid.iter())
            .chain(std::iter::once(&self.w_out))
    }
}

/// How the scalar/vector network output turns into a loss.
#[derive(Debug, Clone)]
pub enum LossTarget {
    /// Binary logistic loss at label `y` in `{-1, +1}` (theory mode, K = 1).
    Binary { y: f64 },
    /// Softmax cross-entropy against a hard class index.
    Hard(usize),
    /// Softmax cross-entropy against a soft label vector (sums to 1).
    Soft(Vec<f64>),
}

impl NetworkParams {
    pub fn view(&self) -> NetView<'_> {
        NetView {
            w1: &self.w1,
            w_mid: &self.w_mid,
            w_out: &self.w_out,
            m: self.m,
        }
    }

    /// Per-matrix trainability in layer order W1, mid..., WL.
    pub fn trainable_mask(&self) -> Vec<bool> {
        trainable_mask(self.mode, self.depth)
    }
}

pub fn trainable_mask(mode: Mode, depth: usize) -> Vec<bool> {
    let mut mask = vec![true; depth];
    if mode == Mode::Theory {
        mask[0] = false;
        mask[depth - 1] = false;
    }
    mask
}

/// Random initialization: W_1 .. W_{L-1} ~ N(0, 2/m), W_L ~ N(0, 1/m)
/// (variances), deterministic given `seed`.
pub fn init_params(
    d: usize,
    m: usize,
    depth: usize,
    k: usize,
    seed: u64,
    mode: Mode,
) -> Result<NetworkParams> {
    if d < 1 || m < 1 || k < 1 || depth < 2 {
        return Err(Error::Config(format!(
            "invalid network dimensions d={d} m={m} L={depth} K={k} (need d,m,K >= 1, L >= 2)"
        )));
    }
    if mode == Mode::Theory && k != 1 {
        return Err(Error::Config(format!("theory mode requires K = 1, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden_std = (2.0 / m as f64).sqrt();
    let out_std = (1.0 / m as f64).sqrt();

    let w1 = sample_matrix(&mut rng, m, d, hidden_std);
    let w_mid = (0..depth - 2)
        .map(|_| sample_matrix(&mut rng, m, m, hidden_std))
        .collect();
    let w_out = sample_matrix(&mut rng, k, m, out_std);

    Ok(NetworkParams {
        d,
        m,
        depth,
        k,
        mode,
        seed,
        w1,
        w_mid,
        w_out,
    })
}

/// Fresh output head for an extra task, drawn N(0, 1/m) from `seed`.
pub fn init_head(m: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_matrix(&mut rng, k, m, (1.0 / m as f64).sqrt())
}

fn sample_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn forward(view: NetView<'_>, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != view.w1.cols() {
        return Err(Error::shape(view.w1.cols(), x.len(), "forward input"));
    }
    let n_hidden = view.w_mid.len() + 1;
    let mut preacts = Vec::with_capacity(n_hidden);
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut masks = Vec::with_capacity(n_hidden);

    let mut h = x.to_vec();
    let g1 = view.w1.matvec(&h);
    push_relu(&g1, &mut preacts, &mut hidden, &mut masks);
    h = hidden.last().unwrap().clone();
    for w in view.w_mid {
        let g = w.matvec(&h);
        push_relu(&g, &mut preacts, &mut hidden, &mut masks);
        h = hidden.last().unwrap().clone();
    }
    let scale = (view.m as f64).sqrt();
    let mut output = view.w_out.matvec(&h);
    for o in output.iter_mut() {
        *o *= scale;
    }
    Ok(ForwardTrace {
        input: x.to_vec(),
        preacts,
        hidden,
        masks,
        output,
    })
}

fn push_relu(
    g: &[f64],
    preacts: &mut Vec<Vec<f64>>,
    hidden: &mut Vec<Vec<f64>>,
    masks: &mut Vec<Vec<bool>>,
) {
    let mask: Vec<bool> = g.iter().map(|v| *v > 0.0).collect();
    let h: Vec<f64> = g
        .iter()
        .zip(mask.iter())
        .map(|(v, on)| if *on { *v } else { 0.0 })
        .collect();
    preacts.push(g.to_vec());
    hidden.push(h);
    masks.push(mask);
}

/// Binary logistic loss `l(z) = log(1 + e^{-z})`, stable for large |z|.
pub fn softplus_neg(z: f64) -> f64 {
    // max(-z, 0) + log1p(e^{-|z|})
    let a = if -z > 0.0 { -z } else { 0.0 };
    a + (-z.abs()).exp().ln_1p()
}

/// l(y * output) for y in {-1, +1}.
pub fn loss_binary(output: f64, y: f64) -> Result<f64> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::Input(format!("binary label must be +/-1, got {y}")));
    }
    Ok(softplus_neg(y * output))
}

/// d/dz log(1 + e^{-z}) = -1 / (1 + e^z), computed stably.
pub fn loss_binary_dz(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

/// Max-shifted softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const SOFT_LABEL_TOL: f64 = 1e-6;

/// Softmax cross-entropy against a hard or soft label.
pub fn loss_multiclass(logits: &[f64], target: &LossTarget) -> Result<f64> {
    let k = logits.len();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    match target {
        LossTarget::Hard(c) => {
            if *c >= k {
                return Err(Error::Input(format!("class {c} out of range for K={k}")));
            }
            Ok(log_sum - logits[*c])
        }
        LossTarget::Soft(p) => {
            if p.len() != k {
                return Err(Error::shape(k, p.len(), "soft label"));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > SOFT_LABEL_TOL || p.iter().any(|v| *v < 0.0) {
                return Err(Error::Input(format!(
                    "soft label must be nonnegative and sum to 1 (sum = {sum})"
                )));
            }
            Ok(p.iter()
                .zip(logits.iter())
                .map(|(pi, zi)| pi * (log_sum - zi))
                .sum())
        }
        LossTarget::Binary { .. } => Err(Error::Input(
            "binary target passed to multiclass loss".into(),
        )),
    }
}

/// Gradient of the loss at `trace.output`, as dL/d(output_j).
fn output_grad(trace: &ForwardTrace, target: &LossTarget) -> Result<Vec<f64>> {
    match target {
        LossTarget::Binary { y } => {
            if trace.output.len() != 1 {
                return Err(Error::shape(1, trace.output.len(), "binary loss output"));
            }
            if *y != 1.0 && *y != -1.0 {
                return Err(Error::Input(format!("binary label must be +/-1, got {y}")));
            }
            let z = y * trace.output[0];
            Ok(vec![loss_binary_dz(z) * y])
        }
        LossTarget::Hard(c) => {
            let mut g = softmax(&trace.output);
            if *c >= g.len() {
                return Err(Error::Input(format!(
                    "class {c} out of range for K={}",
                    g.len()
                )));
            }
            g[*c] -= 1.0;
            Ok(g)
        }
        LossTarget::Soft(p) => {
            let mut g = softmax(&trace.output);
            if p.len() != g.len() {
                return Err(Error::shape(g.len(), p.len(), "soft label"));
            }
            for (gi, pi) in g.iter_mut().zip(p.iter()) {
                *gi -= pi;
            }
            Ok(g)
        }
    }
}

/// Exact analytic gradients of the loss. Frozen matrices (theory mode:
/// W1 and WL) come back all-zero.
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    target: &LossTarget,
) -> Result<GradientSet> {
    backward_view(params.view(), params.mode, trace, target)
}

/// `backward` over a borrowed view; multi-task head sets use this since
/// they hold no `NetworkParams` of their own.
pub fn backward_view(
    view: NetView<'_>,
    mode: Mode,
    trace: &ForwardTrace,
    target: &LossTarget,
) -> Result<GradientSet> {
    let dout = output_grad(trace, target)?;
    let mut grads = backprop_output(view, trace, &dout)?;
    if mode == Mode::Theory {
        grads.w1.scale(0.0);
        grads.w_out.scale(0.0);
    }
    Ok(grads)
}

/// Backpropagate a gradient `dout` (dL/d output) through the trace without
/// any trainability masking. `dout = [1.0]` gives the gradient of the
/// scalar network output itself, which the linearization probes use.
pub fn backprop_output(
    view: NetView<'_>,
    trace: &ForwardTrace,
    dout: &[f64],
) -> Result<GradientSet> {
    if dout.len() != view.w_out.rows() {
        return Err(Error::shape(view.w_out.rows(), dout.len(), "dout"));
    }
    let n_hidden = trace.hidden.len();
    if n_hidden != view.w_mid.len() + 1
        || trace.input.len() != view.w1.cols()
        || trace.hidden[0].len() != view.w1.rows()
    {
        return Err(Error::shape(
            format!("trace for {} hidden layers, d={}", view.w_mid.len() + 1, view.w1.cols()),
            format!("{} hidden layers, d={}", n_hidden, trace.input.len()),
            "stale trace",
        ));
    }
    let scale = (view.m as f64).sqrt();
    let last_h = &trace.hidden[n_hidden - 1];

    // W_L: dL/dW_L = sqrt(m) * dout h_{L-1}^T
    let mut g_out = Matrix::zeros(view.w_out.rows(), view.w_out.cols());
    g_out.add_outer_scaled(dout, last_h, scale);

    // delta at h_{L-1}
    let scaled_dout: Vec<f64> = dout.iter().map(|v| v * scale).collect();
    let mut delta = view.w_out.matvec_t(&scaled_dout);
    apply_mask(&mut delta, &trace.masks[n_hidden - 1]);

    let mut g_mid: Vec<Matrix> = view
        .w_mid
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    // Middle layers, highest first: W_{l} acts h_{l-1} -> h_l where the
    // mid index i corresponds to layer l = i + 2.
    for i in (0..view.w_mid.len()).rev() {
        let h_prev = &trace.hidden[i]; // h_{l-1} = hidden[i]
        g_mid[i].add_outer_scaled(&delta, h_prev, 1.0);
        delta = view.w_mid[i].matvec_t(&delta);
        apply_mask(&mut delta, &trace.masks[i]);
    }

    let mut g_w1 = Matrix::zeros(view.w1.rows(), view.w1.cols());
    g_w1.add_outer_scaled(&delta, &trace.input, 1.0);

    Ok(GradientSet {
        w1: g_w1,
        w_mid: g_mid,
        w_out: g_out,
    })
}

fn apply_mask(v: &mut [f64], mask: &[bool]) {
    for (x, on) in v.iter_mut().zip(mask.iter()) {
        if !*on {
            *x = 0.0;
        }
    }
}

/// SGD step `W <- W - eta * sum(grads)` on trainable matrices only.
///
/// Aborts (leaving params untouched) if any gradient entry is non-finite.
pub fn apply_update(params: &mut NetworkParams, grads: &[GradientSet], eta: f64) -> Result<()> {
    let mask = params.trainable_mask();
    apply_update_parts(
        &mut params.w1,
        &mut params.w_mid,
        &mut params.w_out,
        &mask,
        grads,
        eta,
    )
}

/// Update on raw matrices; used directly for multi-task head sets.
pub fn apply_update_parts(
    w1: &mut Matrix,
    w_mid: &mut [Matrix],
    w_out: &mut Matrix,
    trainable: &[bool],
    grads: &[GradientSet],
    eta: f64,
) -> Result<()> {
    for g in grads {
        if !g.is_finite() {
            return Err(Error::Numeric(
                "non-finite gradient entry; update aborted".into(),
            ));
        }
        if !g.w1.same_shape(w1)
            || g.w_mid.len() != w_mid.len()
            || !g.w_out.same_shape(w_out)
            || g.w_mid.iter().zip(w_mid.iter()).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::shape("param shapes", "gradient shapes", "apply_update"));
        }
    }
    let depth = w_mid.len() + 2;
    assert_eq!(trainable.len(), depth, "trainable mask length");
    for g in grads {
        if trainable[0] {
            w1.add_scaled(&g.w1, -eta);
        }
        for (i, w) in w_mid.iter_mut().enumerate() {
            if trainable[i + 1] {
                w.add_scaled(&g.w_mid[i], -eta);
            }
        }
        if trainable[depth - 1] {
            w_out.add_scaled(&g.w_out, -eta);
        }
    }
    Ok(())
}

// ----- checkpoint format -----
//
// magic "CSNW" | version u32 | d u32 | m u32 | L u32 | K u32 | mode u8 |
// seed u64 | W1, Wmid..., WL row-major f64, all little-endian.

const CHECKPOINT_MAGIC: &[u8; 4] = b"CSNW";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [params.d, params.m, params.depth, params.k] {
        f.write_all(&(v as u32).to_le_bytes())?;
    }
    f.write_all(&[match params.mode {
        Mode::Theory => 0u8,
        Mode::Practical => 1u8,
    }])?;
    f.write_all(&params.seed.to_le_bytes())?;
    for w in std::iter::once(&params.w1)
        .chain(params.w_mid.iter())
        .chain(std::iter::once(&params.w_out))
    {
        for v in w.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.into_inner()
        .map_err(|e| Error::Storage(format!("checkpoint flush failed: {e}")))?
        .sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let version = read_u32(&mut f, 4)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let d = read_u32(&mut f, 8)? as usize;
    let m = read_u32(&mut f, 12)? as usize;
    let depth = read_u32(&mut f, 16)? as usize;
    let k = read_u32(&mut f, 20)? as usize;
    let mut mode_byte = [0u8; 1];
    f.read_exact(&mut mode_byte)?;
    let mode = match mode_byte[0] {
        0 => Mode::Theory,
        1 => Mode::Practical,
        b => {
            return Err(Error::Parse {
                offset: 24,
                message: format!("unknown mode byte {b}"),
            })
        }
    };
    let mut seed_bytes = [0u8; 8];
    f.read_exact(&mut seed_bytes)?;
    let seed = u64::from_le_bytes(seed_bytes);
    if d < 1 || m < 1 || k < 1 || depth < 2 {
        return Err(Error::Parse {
            offset: 8,
            message: format!("invalid checkpoint dimensions d={d} m={m} L={depth} K={k}"),
        });
    }

    let mut offset = 33usize;
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Matrix> {
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            f.read_exact(&mut buf).map_err(|e| Error::Parse {
                offset,
                message: format!("truncated checkpoint: {e}"),
            })?;
            *v = f64::from_le_bytes(buf);
            offset += 8;
        }
        Ok(Matrix::from_vec(rows, cols, data))
    };
    let w1 = read_matrix(m, d)?;
    let w_mid = (0..depth - 2)
        .map(|_| read_matrix(m, m))
        .collect::<Result<Vec<_>>>()?;
    let w_out = read_matrix(k, m)?;

    Ok(NetworkParams {
        d,
        m,
        depth,
        k,
        mode,
        seed,
        w1,
        w_mid,
        w_out,
    })
}

fn read_u32(f: &mut impl Read, _offset: usize) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
