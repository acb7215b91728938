//! Sequential augmentation pipeline: crops/flips, policy-file op lists,
//! Mixup/CutMix with soft labels, and theory-mode perturbation vectors.
//!
//! Pipeline order is crop/flip -> op list -> (mixup xor cutmix). Theory
//! mode replaces the whole pipeline with an additive perturbation whose
//! squared norm is tracked as a running supremum.
//!
//! Magnitudes in `[0, 1]` map linearly to per-op ranges:
//! rotate +-30 degrees, translate +-0.3 * side, shear +-0.3,
//! brightness/contrast factor 1 +- 0.9, cutout side = magnitude * 0.5 * side.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, norm2_sq};
use crate::replay::{Example, Features};

/// Float image working form, values kept in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct ImgF {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl ImgF {
    pub fn from_u8(h: usize, w: usize, c: usize, data: &[u8]) -> Self {
        ImgF {
            h,
            w,
            c,
            data: data.iter().map(|&v| v as f64).collect(),
        }
    }

    fn clip(&mut self) {
        for v in self.data.iter_mut() {
            *v = v.clamp(0.0, 255.0);
        }
    }

    #[inline]
    fn px(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    fn px_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut f64 {
        &mut self.data[(y * self.w + x) * self.c + ch]
    }
}

/// Augmented features handed onward to the learner.
#[derive(Debug, Clone, PartialEq)]
pub enum AugFeatures {
    Vector(Vec<f64>),
    Image(ImgF),
}

impl AugFeatures {
    pub fn from_example(features: &Features) -> Self {
        match features {
            Features::Vector(v) => AugFeatures::Vector(v.clone()),
            Features::Image { h, w, c, data } => {
                AugFeatures::Image(ImgF::from_u8(*h, *w, *c, data))
            }
        }
    }

    /// Flatten to a plain input vector.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            AugFeatures::Vector(v) => v.clone(),
            AugFeatures::Image(img) => img.data.clone(),
        }
    }
}

/// Batch of augmented inputs with convex-combination soft labels.
#[derive(Debug, Clone)]
pub struct SoftLabeledBatch {
    pub inputs: Vec<AugFeatures>,
    pub labels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropCfg {
    pub enabled: bool,
    pub pad: usize,
}

impl Default for CropCfg {
    fn default() -> Self {
        CropCfg { enabled: false, pad: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipCfg {
    pub enabled: bool,
    pub p: f64,
}

impl Default for FlipCfg {
    fn default() -> Self {
        FlipCfg { enabled: false, p: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixCfg {
    pub enabled: bool,
    pub alpha_mixup: f64,
    pub alpha_cutmix: f64,
    pub p_choose_mixup: f64,
}

impl Default for MixCfg {
    fn default() -> Self {
        MixCfg {
            enabled: false,
            alpha_mixup: 0.1,
            alpha_cutmix: 0.8,
            p_choose_mixup: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbGen {
    /// Uniform on the sphere of radius sqrt(budget).
    Sphere,
    /// Gaussian with total variance `budget`, clipped back to the ball.
    GaussianClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbCfg {
    pub enabled: bool,
    /// Squared-norm budget for each perturbation vector.
    pub budget: f64,
    pub generator: PerturbGen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugPolicy {
    pub crop: CropCfg,
    pub hflip: FlipCfg,
    pub mix: MixCfg,
    /// Path of an op-list policy file; parsed into `oplist` before the
    /// run starts.
    pub file: Option<PathBuf>,
    /// Sub-policies loaded from `file`; one is chosen uniformly per
    /// example. Empty means no op-list stage.
    #[serde(skip)]
    pub oplist: Vec<SubPolicy>,
    pub theory_perturb: Option<PerturbCfg>,
}

impl Default for AugPolicy {
    fn default() -> Self {
        AugPolicy {
            crop: CropCfg::default(),
            hflip: FlipCfg::default(),
            mix: MixCfg::default(),
            file: None,
            oplist: Vec::new(),
            theory_perturb: None,
        }
    }
}

impl AugPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip.p", self.hflip.p),
            ("mix.p_choose_mixup", self.mix.p_choose_mixup),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.mix.enabled && (self.mix.alpha_mixup <= 0.0 || self.mix.alpha_cutmix <= 0.0) {
            return Err(Error::Config("mix alpha values must be > 0".into()));
        }
        if let Some(p) = &self.theory_perturb {
            if p.budget < 0.0 {
                return Err(Error::Config(format!(
                    "perturbation budget must be >= 0, got {}",
                    p.budget
                )));
            }
        }
        Ok(())
    }
}

/// Running supremum of squared perturbation norms over a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub xi_sq_sup: f64,
    pub count: u64,
}

impl PerturbationSpec {
    pub fn record(&mut self, xi: &[f64]) {
        let sq = norm2_sq(xi);
        if sq > self.xi_sq_sup {
            self.xi_sq_sup = sq;
        }
        self.count += 1;
    }
}

// ----- op list (policy file) -----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpName {
    Rotate,
    TranslateX,
    TranslateY,
    ShearX,
    ShearY,
    Brightness,
    Contrast,
    Invert,
    Cutout,
}

impl OpName {
    fn parse(s: &str) -> Option<OpName> {
        Some(match s {
            "rotate" => OpName::Rotate,
            "translate_x" => OpName::TranslateX,
            "translate_y" => OpName::TranslateY,
            "shear_x" => OpName::ShearX,
            "shear_y" => OpName::ShearY,
            "brightness" => OpName::Brightness,
            "contrast" => OpName::Contrast,
            "invert" => OpName::Invert,
            "cutout" => OpName::Cutout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOp {
    pub name: OpName,
    pub probability: f64,
    pub magnitude: f64,
}

/// Two ops applied in order, each with its own probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubPolicy(pub [PolicyOp; 2]);

/// Parse the line-oriented policy format: `op1 p1 m1 ; op2 p2 m2` per
/// sub-policy, `#` starts a comment. Validation is eager: unknown op
/// names or out-of-range values fail here, never mid-stream.
pub fn parse_policy_file(text: &str) -> Result<Vec<SubPolicy>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let halves: Vec<&str> = line.split(';').map(str::trim).collect();
        if halves.len() != 2 {
            return Err(Error::Config(format!(
                "policy line {}: expected two ops separated by ';'",
                lineno + 1
            )));
        }
        let mut ops = [PolicyOp {
            name: OpName::Invert,
            probability: 0.0,
            magnitude: 0.0,
        }; 2];
        for (i, half) in halves.iter().enumerate() {
            let fields: Vec<&str> = half.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "policy line {}: expected `op p m`, got `{half}`",
                    lineno + 1
                )));
            }
            let name = OpName::parse(fields[0]).ok_or_else(|| {
                Error::Config(format!("policy line {}: unknown op `{}`", lineno + 1, fields[0]))
            })?;
            let probability: f64 = fields[1].parse().map_err(|_| {
                Error::Config(format!("policy line {}: bad probability `{}`", lineno + 1, fields[1]))
            })?;
            let magnitude: f64 = fields[2].parse().map_err(|_| {
                Error::Config(format!("policy line {}: bad magnitude `{}`", lineno + 1, fields[2]))
            })?;
            if !(0.0..=1.0).contains(&probability) || !(0.0..=1.0).contains(&magnitude) {
                return Err(Error::Config(format!(
                    "policy line {}: probability and magnitude must be in [0, 1]",
                    lineno + 1
                )));
            }
            ops[i] = PolicyOp { name, probability, magnitude };
        }
        out.push(SubPolicy(ops));
    }
    Ok(out)
}

// ----- mix operators -----

pub fn one_hot(label: u32, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label as usize] = 1.0;
    v
}

/// x = lam*x1 + (1-lam)*x2, y = lam*onehot(y1) + (1-lam)*onehot(y2).
pub fn mixup(
    x1: &AugFeatures,
    y1: u32,
    x2: &AugFeatures,
    y2: u32,
    lam: f64,
    k: usize,
) -> Result<(AugFeatures, Vec<f64>)> {
    let mixed = match (x1, x2) {
        (AugFeatures::Vector(a), AugFeatures::Vector(b)) => {
            if a.len() != b.len() {
                return Err(Error::shape(a.len(), b.len(), "mixup"));
            }
            AugFeatures::Vector(
                a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| lam * p + (1.0 - lam) * q)
                    .collect(),
            )
        }
        (AugFeatures::Image(a), AugFeatures::Image(b)) => {
            if (a.h, a.w, a.c) != (b.h, b.w, b.c) {
                return Err(Error::shape(
                    format!("{}x{}x{}", a.h, a.w, a.c),
                    format!("{}x{}x{}", b.h, b.w, b.c),
                    "mixup",
                ));
            }
            AugFeatures::Image(ImgF {
                h: a.h,
                w: a.w,
                c: a.c,
                data: a
                    .data
                    .iter()
                    .zip(b.data.iter())
                    .map(|(p, q)| lam * p + (1.0 - lam) * q)
                    .collect(),
            })
        }
        _ => return Err(Error::Input("mixup feature kinds differ".into())),
    };
    let mut label = vec![0.0; k];
    label[y1 as usize] += lam;
    label[y2 as usize] += 1.0 - lam;
    Ok((mixed, label))
}

/// Paste a random rectangle of relative area `1 - lam` from `x2` into `x1`.
/// Returns the adjusted lambda (1 - realized box fraction), which also
/// weights the soft label.
pub fn cutmix<R: Rng>(
    x1: &ImgF,
    y1: u32,
    x2: &ImgF,
    y2: u32,
    lam: f64,
    k: usize,
    rng: &mut R,
) -> Result<(ImgF, Vec<f64>, f64)> {
    if (x1.h, x1.w, x1.c) != (x2.h, x2.w, x2.c) {
        return Err(Error::shape(
            format!("{}x{}x{}", x1.h, x1.w, x1.c),
            format!("{}x{}x{}", x2.h, x2.w, x2.c),
            "cutmix",
        ));
    }
    let (h, w) = (x1.h, x1.w);
    let ratio = (1.0 - lam).max(0.0).sqrt();
    let half_h = h as f64 * ratio / 2.0;
    let half_w = w as f64 * ratio / 2.0;
    let cy = rng.gen_range(0..h) as f64 + 0.5;
    let cx = rng.gen_range(0..w) as f64 + 0.5;
    let y0 = ((cy - half_h).round().max(0.0)) as usize;
    let y1b = ((cy + half_h).round() as usize).min(h);
    let x0 = ((cx - half_w).round().max(0.0)) as usize;
    let x1b = ((cx + half_w).round() as usize).min(w);
    let box_area = (y1b - y0) * (x1b - x0);
    let lam_adj = 1.0 - box_area as f64 / (h * w) as f64;

    let mut out = x1.clone();
    for y in y0..y1b {
        for x in x0..x1b {
            for ch in 0..out.c {
                *out.px_mut(y, x, ch) = x2.px(y, x, ch);
            }
        }
    }
    let mut label = vec![0.0; k];
    label[y1 as usize] += lam_adj;
    label[y2 as usize] += 1.0 - lam_adj;
    Ok((out, label, lam_adj))
}

// ----- geometric / photometric ops -----

pub(crate) fn crop_offsets<R: Rng>(rng: &mut R, pad: usize) -> (usize, usize) {
    (rng.gen_range(0..=2 * pad), rng.gen_range(0..=2 * pad))
}

/// Zero-pad by `pad` on all sides, take a random original-size window,
/// then flip horizontally with probability `p_flip`.
pub fn crop_flip<R: Rng>(img: &ImgF, pad: usize, p_flip: f64, rng: &mut R) -> ImgF {
    let mut out = if pad == 0 {
        img.clone()
    } else {
        let (dy, dx) = crop_offsets(rng, pad);
        let mut dst = ImgF {
            h: img.h,
            w: img.w,
            c: img.c,
            data: vec![0.0; img.data.len()],
        };
        for y in 0..img.h {
            // source coordinates in the padded frame
            let sy = y as isize + dy as isize - pad as isize;
            if sy < 0 || sy >= img.h as isize {
                continue;
            }
            for x in 0..img.w {
                let sx = x as isize + dx as isize - pad as isize;
                if sx < 0 || sx >= img.w as isize {
                    continue;
                }
                for ch in 0..img.c {
                    *dst.px_mut(y, x, ch) = img.px(sy as usize, sx as usize, ch);
                }
            }
        }
        dst
    };
    if p_flip > 0.0 && rng.gen_bool(p_flip) {
        out = hflip(&out);
    }
    out
}

pub fn hflip(img: &ImgF) -> ImgF {
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            for ch in 0..img.c {
                *out.px_mut(y, x, ch) = img.px(y, img.w - 1 - x, ch);
            }
        }
    }
    out
}

/// Inverse-mapped affine resample with bilinear interpolation, zero fill.
/// `fwd` is the forward 2x2 matrix [[a, b], [c, d]] about the image center
/// plus a translation (tx, ty) in pixels.
fn affine(img: &ImgF, fwd: [f64; 4], tx: f64, ty: f64) -> ImgF {
    let det = fwd[0] * fwd[3] - fwd[1] * fwd[2];
    // singular transforms only arise from degenerate magnitudes; fall back
    // to identity rather than divide by zero
    if det.abs() < 1e-12 {
        return img.clone();
    }
    let inv = [fwd[3] / det, -fwd[1] / det, -fwd[2] / det, fwd[0] / det];
    let cx = (img.w as f64 - 1.0) / 2.0;
    let cy = (img.h as f64 - 1.0) / 2.0;
    let mut out = ImgF {
        h: img.h,
        w: img.w,
        c: img.c,
        data: vec![0.0; img.data.len()],
    };
    for y in 0..img.h {
        for x in 0..img.w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = inv[0] * dx + inv[1] * dy + cx;
            let sy = inv[2] * dx + inv[3] * dy + cy;
            if sx < -0.5 || sy < -0.5 || sx > img.w as f64 - 0.5 || sy > img.h as f64 - 0.5 {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            for ch in 0..img.c {
                let sample = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy >= img.h as f64 || xx >= img.w as f64 {
                        0.0
                    } else {
                        img.px(yy as usize, xx as usize, ch)
                    }
                };
                let p00 = sample(y0, x0);
                let p01 = sample(y0, x0 + 1.0);
                let p10 = sample(y0 + 1.0, x0);
                let p11 = sample(y0 + 1.0, x0 + 1.0);
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                *out.px_mut(y, x, ch) = top + (bot - top) * fy;
            }
        }
    }
    out
}

fn apply_op<R: Rng>(img: &ImgF, op: &PolicyOp, rng: &mut R) -> ImgF {
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mag = op.magnitude;
    let mut out = match op.name {
        OpName::Rotate => {
            let theta = sign * mag * 30.0_f64.to_radians();
            let (s, c) = theta.sin_cos();
            affine(img, [c, -s, s, c], 0.0, 0.0)
        }
        OpName::TranslateX => affine(img, [1.0, 0.0, 0.0, 1.0], sign * mag * 0.3 * img.w as f64, 0.0),
        OpName::TranslateY => affine(img, [1.0, 0.0, 0.0, 1.0], 0.0, sign * mag * 0.3 * img.h as f64),
        OpName::ShearX => affine(img, [1.0, sign * mag * 0.3, 0.0, 1.0], 0.0, 0.0),
        OpName::ShearY => affine(img, [1.0, 0.0, sign * mag * 0.3, 1.0], 0.0, 0.0),
        OpName::Brightness => {
            let factor = 1.0 + sign * 0.9 * mag;
            let mut out = img.clone();
            for v in out.data.iter_mut() {
                *v *= factor;
            }
            out
        }
        OpName::Contrast => {
            let factor = 1.0 + sign * 0.9 * mag;
            let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
            let mut out = img.clone();
            for v in out.data.iter_mut() {
                *v = mean + factor * (*v - mean);
            }
            out
        }
        OpName::Invert => {
            let mut out = img.clone();
            for v in out.data.iter_mut() {
                *v = 255.0 - *v;
            }
            out
        }
        OpName::Cutout => {
            let side = (mag * 0.5 * img.h.min(img.w) as f64).round() as usize;
            let mut out = img.clone();
            if side > 0 {
                let cy = rng.gen_range(0..img.h);
                let cx = rng.gen_range(0..img.w);
                let y0 = cy.saturating_sub(side / 2);
                let x0 = cx.saturating_sub(side / 2);
                for y in y0..(y0 + side).min(img.h) {
                    for x in x0..(x0 + side).min(img.w) {
                        for ch in 0..img.c {
                            *out.px_mut(y, x, ch) = 0.0;
                        }
                    }
                }
            }
            out
        }
    };
    out.clip();
    out
}

/// Choose one sub-policy uniformly and apply its two ops in order, each
/// firing with its own probability. An empty list is the identity.
pub fn apply_oplist<R: Rng>(img: &ImgF, oplist: &[SubPolicy], rng: &mut R) -> ImgF {
    if oplist.is_empty() {
        return img.clone();
    }
    let sub = &oplist[rng.gen_range(0..oplist.len())];
    let mut out = img.clone();
    for op in &sub.0 {
        if op.probability > 0.0 && rng.gen_bool(op.probability) {
            out = apply_op(&out, op, rng);
        }
    }
    out
}

// ----- theory-mode perturbation -----

/// Draw a perturbation with squared norm at most (sphere: exactly)
/// `budget`, add it to `x`, and record it in `spec`.
pub fn perturb_theory<R: Rng>(
    x: &[f64],
    cfg: &PerturbCfg,
    spec: &mut PerturbationSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if cfg.budget < 0.0 {
        return Err(Error::Config(format!(
            "perturbation budget must be >= 0, got {}",
            cfg.budget
        )));
    }
    let d = x.len();
    let xi: Vec<f64> = if cfg.budget == 0.0 {
        vec![0.0; d]
    } else {
        match cfg.generator {
            PerturbGen::Sphere => {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let n = norm2(&g).max(1e-300);
                let r = cfg.budget.sqrt();
                g.iter().map(|v| v / n * r).collect()
            }
            PerturbGen::GaussianClip => {
                let std = (cfg.budget / d as f64).sqrt();
                let g: Vec<f64> = (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * std
                    })
                    .collect();
                let sq = norm2_sq(&g);
                if sq > cfg.budget {
                    let scale = (cfg.budget / sq).sqrt();
                    g.iter().map(|v| v * scale).collect()
                } else {
                    g
                }
            }
        }
    };
    spec.record(&xi);
    Ok(x.iter().zip(xi.iter()).map(|(a, b)| a + b).collect())
}

// ----- the pipeline -----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKind {
    Mixup,
    Cutmix,
}

pub(crate) fn mix_branch<R: Rng>(rng: &mut R, p_choose_mixup: f64) -> MixKind {
    if rng.gen_bool(p_choose_mixup) {
        MixKind::Mixup
    } else {
        MixKind::Cutmix
    }
}

/// Run the full sequential policy over one update batch.
///
/// All examples must share a task. Mix partners are drawn uniformly from
/// within the (already individually transformed) batch; exactly one of
/// mixup/cutmix fires per example when mixing is enabled. Vector features
/// only support mixup; cutmix needs spatial layout, so vector batches
/// always take the mixup branch.
pub fn augment_pipeline<R: Rng>(
    batch: &[Example],
    policy: &AugPolicy,
    num_classes: usize,
    spec: &mut PerturbationSpec,
    rng: &mut R,
) -> Result<SoftLabeledBatch> {
    if batch.is_empty() {
        return Err(Error::Input("augment_pipeline needs a nonempty batch".into()));
    }
    let task = batch[0].task_id;
    if batch.iter().any(|e| e.task_id != task) {
        return Err(Error::Input("augment_pipeline batch spans tasks".into()));
    }
    for e in batch {
        if e.label as usize >= num_classes {
            return Err(Error::Input(format!(
                "label {} out of range for {} classes",
                e.label, num_classes
            )));
        }
    }

    // theory mode: perturbation only
    if let Some(p) = &policy.theory_perturb {
        if p.enabled {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for e in batch {
                let x = match &e.features {
                    Features::Vector(v) => v,
                    Features::Image { .. } => {
                        return Err(Error::Input(
                            "theory perturbation requires vector features".into(),
                        ))
                    }
                };
                inputs.push(AugFeatures::Vector(perturb_theory(x, p, spec, rng)?));
                labels.push(one_hot(e.label, num_classes));
            }
            return Ok(SoftLabeledBatch { inputs, labels });
        }
    }

    // stage 1+2: per-example geometric/photometric transforms
    let mut transformed: Vec<AugFeatures> = Vec::with_capacity(batch.len());
    for e in batch {
        let f = AugFeatures::from_example(&e.features);
        let f = match f {
            AugFeatures::Image(img) => {
                let img = if policy.crop.enabled || policy.hflip.enabled {
                    let pad = if policy.crop.enabled { policy.crop.pad } else { 0 };
                    let p_flip = if policy.hflip.enabled { policy.hflip.p } else { 0.0 };
                    crop_flip(&img, pad, p_flip, rng)
                } else {
                    img
                };
                let img = apply_oplist(&img, &policy.oplist, rng);
                AugFeatures::Image(img)
            }
            v @ AugFeatures::Vector(_) => {
                if policy.crop.enabled || policy.hflip.enabled || !policy.oplist.is_empty() {
                    return Err(Error::Input(
                        "image augmentations configured for vector features".into(),
                    ));
                }
                v
            }
        };
        transformed.push(f);
    }

    // stage 3: mixup xor cutmix against an in-batch partner
    let mut inputs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for (i, e) in batch.iter().enumerate() {
        if !policy.mix.enabled {
            inputs.push(transformed[i].clone());
            labels.push(one_hot(e.label, num_classes));
            continue;
        }
        let j = rng.gen_range(0..batch.len());
        let partner_label = batch[j].label;
        let vector_batch = matches!(transformed[i], AugFeatures::Vector(_));
        let kind = if vector_batch {
            MixKind::Mixup
        } else {
            mix_branch(rng, policy.mix.p_choose_mixup)
        };
        match kind {
            MixKind::Mixup => {
                let beta = Beta::new(policy.mix.alpha_mixup, policy.mix.alpha_mixup)
                    .map_err(|e| Error::Config(format!("bad mixup alpha: {e}")))?;
                let lam: f64 = beta.sample(rng);
                let (x, y) = mixup(
                    &transformed[i],
                    e.label,
                    &transformed[j],
                    partner_label,
                    lam,
                    num_classes,
                )?;
                inputs.push(x);
                labels.push(y);
            }
            MixKind::Cutmix => {
                let beta = Beta::new(policy.mix.alpha_cutmix, policy.mix.alpha_cutmix)
                    .map_err(|e| Error::Config(format!("bad cutmix alpha: {e}")))?;
                let lam: f64 = beta.sample(rng);
                let (a, b) = match (&transformed[i], &transformed[j]) {
                    (AugFeatures::Image(a), AugFeatures::Image(b)) => (a, b),
                    _ => unreachable!("vector batches never reach cutmix"),
                };
                let (x, y, _) = cutmix(a, e.label, b, partner_label, lam, num_classes, rng)?;
                inputs.push(AugFeatures::Image(x));
                labels.push(y);
            }
        }
    }
    Ok(SoftLabeledBatch { inputs, labels })
}
