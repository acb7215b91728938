//! Linearization probes: Taylor residuals, loss convexity gaps, hidden
//! norm and gradient norm concentration checks, iterate drift, and the
//! computable generalization-bound terms. All probes use exact analytic
//! gradients and are deterministic given their seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{
    backprop_output, forward, loss_binary, loss_binary_dz, GradientSet, Mode, NetView,
    NetworkParams,
};
use crate::stream::TaskHeadSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NtrfProbe {
    /// Neighborhood radius: per-layer Frobenius distance of the probe
    /// perturbation.
    pub omega: f64,
    /// Confidence parameter of the bound, in (0, 1).
    pub delta: f64,
    pub m_sweep: Vec<usize>,
    pub l_sweep: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Stream length used by the bound terms.
    pub n: usize,
    /// Minimum pairwise distance the synthetic data must keep.
    pub lambda_sep: f64,
}

impl NtrfProbe {
    pub fn validate(&self) -> Result<()> {
        if self.omega <= 0.0 {
            return Err(Error::Config(format!("omega must be > 0, got {}", self.omega)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.lambda_sep <= 0.0 {
            return Err(Error::Config(format!(
                "lambda_sep must be > 0, got {}",
                self.lambda_sep
            )));
        }
        if self.m_sweep.is_empty() || self.l_sweep.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep lists and seeds must be nonempty".into()));
        }
        Ok(())
    }
}

/// W'_l = W_l + omega * U_l / ||U_l||_F with Gaussian U_l, so each layer
/// sits exactly on the omega-sphere around W.
pub fn perturb_weights(params: &NetworkParams, omega: f64, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    let bump = |w: &mut Matrix, rng: &mut ChaCha8Rng| {
        let mut u = Matrix::zeros(w.rows(), w.cols());
        for v in u.data_mut() {
            *v = StandardNormal.sample(rng);
        }
        let norm = u.fro_norm().max(1e-300);
        w.add_scaled(&u, omega / norm);
    };
    bump(&mut out.w1, &mut rng);
    for w in out.w_mid.iter_mut() {
        bump(w, &mut rng);
    }
    bump(&mut out.w_out, &mut rng);
    out
}

fn scalar_output(view: NetView<'_>, x: &[f64]) -> Result<(f64, crate::net::ForwardTrace)> {
    let trace = forward(view, x)?;
    if trace.output.len() != 1 {
        return Err(Error::Input(format!(
            "probe requires a scalar output head, got K = {}",
            trace.output.len()
        )));
    }
    Ok((trace.output[0], trace))
}

/// Gradient of the scalar network output with respect to every weight
/// matrix (no trainability masking).
pub fn output_gradient(params: &NetworkParams, x: &[f64]) -> Result<GradientSet> {
    let (_, trace) = scalar_output(params.view(), x)?;
    backprop_output(params.view(), &trace, &[1.0])
}

fn grad_param_dot(g: &GradientSet, a: &NetworkParams, b: &NetworkParams) -> f64 {
    let mut acc = g.w1.fro_dot(&a.w1) - g.w1.fro_dot(&b.w1);
    for (gm, (am, bm)) in g.w_mid.iter().zip(a.w_mid.iter().zip(b.w_mid.iter())) {
        acc += gm.fro_dot(am) - gm.fro_dot(bm);
    }
    acc += g.w_out.fro_dot(&a.w_out) - g.w_out.fro_dot(&b.w_out);
    acc
}

fn check_congruent(w: &NetworkParams, w2: &NetworkParams) -> Result<()> {
    if w.d != w2.d || w.m != w2.m || w.depth != w2.depth || w.k != w2.k {
        return Err(Error::shape(
            format!("d={} m={} L={} K={}", w.d, w.m, w.depth, w.k),
            format!("d={} m={} L={} K={}", w2.d, w2.m, w2.depth, w2.k),
            "probe weight pair",
        ));
    }
    Ok(())
}

/// |f_{W'}(x+xi) - f_W(x+xi) - <grad f_W(x+xi), W' - W>|.
pub fn taylor_residual(
    w: &NetworkParams,
    w2: &NetworkParams,
    x: &[f64],
    xi: &[f64],
) -> Result<f64> {
    check_congruent(w, w2)?;
    if x.len() != xi.len() {
        return Err(Error::shape(x.len(), xi.len(), "perturbation length"));
    }
    let z: Vec<f64> = x.iter().zip(xi.iter()).map(|(a, b)| a + b).collect();
    let (f1, trace) = scalar_output(w.view(), &z)?;
    let (f2, _) = scalar_output(w2.view(), &z)?;
    let g = backprop_output(w.view(), &trace, &[1.0])?;
    let linear = grad_param_dot(&g, w2, w);
    Ok((f2 - f1 - linear).abs())
}

/// First-order difference without the linear correction, for comparison.
pub fn output_difference(w: &NetworkParams, w2: &NetworkParams, x: &[f64], xi: &[f64]) -> Result<f64> {
    check_congruent(w, w2)?;
    let z: Vec<f64> = x.iter().zip(xi.iter()).map(|(a, b)| a + b).collect();
    let (f1, _) = scalar_output(w.view(), &z)?;
    let (f2, _) = scalar_output(w2.view(), &z)?;
    Ok((f2 - f1).abs())
}

/// <grad L(W), W' - W> - (L(W') - L(W)) for the binary logistic loss at
/// label y; near-convexity keeps this below a small positive slack
/// inside the neighborhood.
pub fn convexity_gap(
    w: &NetworkParams,
    w2: &NetworkParams,
    x: &[f64],
    y: f64,
    xi: &[f64],
) -> Result<f64> {
    check_congruent(w, w2)?;
    let z: Vec<f64> = x.iter().zip(xi.iter()).map(|(a, b)| a + b).collect();
    let (f1, trace) = scalar_output(w.view(), &z)?;
    let (f2, _) = scalar_output(w2.view(), &z)?;
    let l1 = loss_binary(f1, y)?;
    let l2 = loss_binary(f2, y)?;
    // dL/df = y * l'(y f)
    let dldf = y * loss_binary_dz(y * f1);
    let g = backprop_output(w.view(), &trace, &[dldf])?;
    let linear = grad_param_dot(&g, w2, w);
    Ok(linear - (l2 - l1))
}

/// Fraction of (input, layer) pairs with ||h_l||^2 inside
/// [1 - ||xi||^2 - eps, 1 + ||xi||^2 + eps], eps = 4 sqrt(L/m).
/// Inputs must be unit-norm; `xi` is added to every input.
pub fn hidden_norm_check(params: &NetworkParams, inputs: &[Vec<f64>], xi: &[f64]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Input("hidden_norm_check needs inputs".into()));
    }
    let xi_sq: f64 = xi.iter().map(|v| v * v).sum();
    let eps = 4.0 * (params.depth as f64 / params.m as f64).sqrt();
    let lo = 1.0 - xi_sq - eps;
    let hi = 1.0 + xi_sq + eps;
    let mut pass = 0usize;
    let mut total = 0usize;
    for x in inputs {
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        if (norm_sq - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "hidden_norm_check requires unit-norm inputs, got ||x||^2 = {norm_sq}"
            )));
        }
        let z: Vec<f64> = x.iter().zip(xi.iter()).map(|(a, b)| a + b).collect();
        let trace = forward(params.view(), &z)?;
        for h in &trace.hidden {
            let sq: f64 = h.iter().map(|v| v * v).sum();
            if sq >= lo && sq <= hi {
                pass += 1;
            }
            total += 1;
        }
    }
    Ok(pass as f64 / total as f64)
}

/// max over inputs and layers of ||grad_{W_l} f||_F / sqrt(m (1 + ||xi||^2)).
pub fn grad_norm_check(params: &NetworkParams, inputs: &[Vec<f64>], xi: &[f64]) -> Result<f64> {
    let xi_sq: f64 = xi.iter().map(|v| v * v).sum();
    let denom = (params.m as f64 * (1.0 + xi_sq)).sqrt();
    let mut worst = 0.0f64;
    for x in inputs {
        let z: Vec<f64> = x.iter().zip(xi.iter()).map(|(a, b)| a + b).collect();
        let (_, trace) = scalar_output(params.view(), &z)?;
        let g = backprop_output(params.view(), &trace, &[1.0])?;
        for layer in g.layers() {
            worst = worst.max(layer.fro_norm() / denom);
        }
    }
    Ok(worst)
}

/// max over layers of ||W_l^{(t)} - W_l^{(0)}||_F between an initial
/// parameter set and a trained trunk/head model.
pub fn iterate_drift(init: &NetworkParams, model: &TaskHeadSet) -> Result<f64> {
    let head = model
        .heads
        .values()
        .next()
        .ok_or_else(|| Error::State("model has no heads".into()))?;
    if init.m != model.m || init.depth != model.depth {
        return Err(Error::shape(
            format!("m={} L={}", init.m, init.depth),
            format!("m={} L={}", model.m, model.depth),
            "iterate_drift",
        ));
    }
    let mut worst = init.w1.fro_dist(&model.w1);
    for (a, b) in init.w_mid.iter().zip(model.w_mid.iter()) {
        worst = worst.max(a.fro_dist(b));
    }
    worst = worst.max(init.w_out.fro_dist(head));
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremTerms {
    /// sqrt(2 log(1/delta) / n): the confidence term.
    pub green: f64,
    /// (1 + Xi)^{3/4} B^{1/2} n / (L^2 log^{3/2} m): growth monitor of
    /// the width-dependent term.
    pub blue_monitor: f64,
    /// Average streaming loss, an informal stand-in for the uncomputed
    /// function-class infimum.
    pub avg_train_loss: f64,
}

pub fn theorem_terms(
    n: usize,
    b: usize,
    depth: usize,
    m: usize,
    xi_sup: f64,
    delta: f64,
    avg_train_loss: f64,
) -> Result<TheoremTerms> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Input(format!("delta must be in (0, 1), got {delta}")));
    }
    if n == 0 || m < 2 {
        return Err(Error::Input(format!("need n >= 1 and m >= 2, got n={n} m={m}")));
    }
    let green = (2.0 * (1.0 / delta).ln() / n as f64).sqrt();
    let blue_monitor = (1.0 + xi_sup).powf(0.75) * (b as f64).sqrt() * n as f64
        / ((depth * depth) as f64 * (m as f64).ln().powf(1.5));
    Ok(TheoremTerms {
        green,
        blue_monitor,
        avg_train_loss,
    })
}

// ----- probe grid -----

/// One grid point of the linearization report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub m: usize,
    pub depth: usize,
    pub omega: f64,
    pub seed: u64,
    pub residual: f64,
    /// |f_{W'} - f_W| without the linear correction.
    pub delta_f: f64,
    pub convexity_gap: f64,
    pub hidden_pass_rate: f64,
    pub grad_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub residual_quarter_omega_shrinks: bool,
    pub residual_below_linear_difference: bool,
    pub gap_quarter_omega_shrinks: bool,
    pub grad_ratio_stable_across_m: bool,
    pub median_residual_by_omega: Vec<(f64, f64)>,
    pub median_gap_by_omega: Vec<(f64, f64)>,
    pub max_grad_ratio_by_m: Vec<(usize, f64)>,
}

pub fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluate every probe at each (m, L, seed) grid point, at both `omega`
/// and `omega / 4`, over `d = 16` unit inputs.
pub fn run_probe_grid(probe: &NtrfProbe) -> Result<Vec<ProbeRow>> {
    probe.validate()?;
    let d = 16;
    let mut rows = Vec::new();
    for &m in &probe.m_sweep {
        for &depth in &probe.l_sweep {
            for &seed in &probe.seeds {
                let params = crate::net::init_params(d, m, depth, 1, seed, Mode::Theory)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                let x = random_unit(d, &mut rng);
                let xi = vec![0.0; d];
                let hidden_inputs: Vec<Vec<f64>> =
                    (0..8).map(|_| random_unit(d, &mut rng)).collect();
                for omega in [probe.omega, probe.omega / 4.0] {
                    let w2 = perturb_weights(&params, omega, seed.wrapping_add(101));
                    rows.push(ProbeRow {
                        m,
                        depth,
                        omega,
                        seed,
                        residual: taylor_residual(&params, &w2, &x, &xi)?,
                        delta_f: output_difference(&params, &w2, &x, &xi)?,
                        convexity_gap: convexity_gap(&params, &w2, &x, 1.0, &xi)?,
                        hidden_pass_rate: hidden_norm_check(&params, &hidden_inputs, &xi)?,
                        grad_ratio: grad_norm_check(&params, &hidden_inputs, &xi)?,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[ProbeRow]) -> Result<ProbeSummary> {
    if rows.is_empty() {
        return Err(Error::Input("no probe rows to summarize".into()));
    }
    let mut omegas: Vec<f64> = rows.iter().map(|r| r.omega).collect();
    omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    omegas.dedup();

    let mut median_residual_by_omega = Vec::new();
    let mut median_gap_by_omega = Vec::new();
    for &omega in &omegas {
        let mut res: Vec<f64> = rows
            .iter()
            .filter(|r| r.omega == omega)
            .map(|r| r.residual)
            .collect();
        let mut gaps: Vec<f64> = rows
            .iter()
            .filter(|r| r.omega == omega)
            .map(|r| r.convexity_gap.abs())
            .collect();
        median_residual_by_omega.push((omega, median(&mut res)));
        median_gap_by_omega.push((omega, median(&mut gaps)));
    }

    let (small_res, big_res) = (
        median_residual_by_omega.first().unwrap().1,
        median_residual_by_omega.last().unwrap().1,
    );
    let (small_gap, big_gap) = (
        median_gap_by_omega.first().unwrap().1,
        median_gap_by_omega.last().unwrap().1,
    );
    // conservative slack relative to the predicted 4^{4/3} and >= 4 factors
    let residual_quarter_omega_shrinks = omegas.len() < 2 || small_res <= big_res / 3.0;
    let gap_quarter_omega_shrinks = omegas.len() < 2 || small_gap <= big_gap / 2.0;

    let mut delta_f_wins = 0usize;
    for r in rows {
        if r.residual <= r.delta_f + 1e-15 {
            delta_f_wins += 1;
        }
    }
    let residual_below_linear_difference = delta_f_wins * 2 > rows.len();

    let mut ms: Vec<usize> = rows.iter().map(|r| r.m).collect();
    ms.sort();
    ms.dedup();
    let max_grad_ratio_by_m: Vec<(usize, f64)> = ms
        .iter()
        .map(|&m| {
            let worst = rows
                .iter()
                .filter(|r| r.m == m)
                .map(|r| r.grad_ratio)
                .fold(0.0f64, f64::max);
            (m, worst)
        })
        .collect();
    let ratios: Vec<f64> = max_grad_ratio_by_m.iter().map(|&(_, v)| v).collect();
    let ratio_max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let ratio_min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let grad_ratio_stable_across_m = ratio_min <= 0.0 || ratio_max / ratio_min <= 3.0;

    Ok(ProbeSummary {
        residual_quarter_omega_shrinks,
        residual_below_linear_difference,
        gap_quarter_omega_shrinks,
        grad_ratio_stable_across_m,
        median_residual_by_omega,
        median_gap_by_omega,
        max_grad_ratio_by_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;

    fn theory_net(d: usize, m: usize, depth: usize, seed: u64) -> NetworkParams {
        init_params(d, m, depth, 1, seed, Mode::Theory).unwrap()
    }

    #[test]
    fn residual_zero_at_identity() {
        let w = theory_net(8, 32, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_unit(8, &mut rng);
        let xi = vec![0.0; 8];
        assert_eq!(taylor_residual(&w, &w, &x, &xi).unwrap(), 0.0);
        assert_eq!(convexity_gap(&w, &w, &x, 1.0, &xi).unwrap(), 0.0);
    }

    #[test]
    fn perturbation_sits_on_per_layer_omega_sphere() {
        let w = theory_net(8, 32, 4, 3);
        let omega = 0.05;
        let w2 = perturb_weights(&w, omega, 9);
        assert!((w.w1.fro_dist(&w2.w1) - omega).abs() < 1e-12);
        for (a, b) in w.w_mid.iter().zip(w2.w_mid.iter()) {
            assert!((a.fro_dist(b) - omega).abs() < 1e-12);
        }
        assert!((w.w_out.fro_dist(&w2.w_out) - omega).abs() < 1e-12);
    }

    #[test]
    fn residual_shrinks_with_omega_both_orderings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xi = vec![0.0; 8];
        let mut at_big = Vec::new();
        let mut at_small = Vec::new();
        for seed in 0..30u64 {
            let w = theory_net(8, 256, 3, seed);
            let x = random_unit(8, &mut rng);
            for (omega, bucket) in [(0.1, &mut at_big), (0.025, &mut at_small)] {
                let w2 = perturb_weights(&w, omega, seed + 500);
                let fwd = taylor_residual(&w, &w2, &x, &xi).unwrap();
                let rev = taylor_residual(&w2, &w, &x, &xi).unwrap();
                assert!(fwd.is_finite() && rev.is_finite());
                bucket.push(fwd);
            }
        }
        let big = median(&mut at_big);
        let small = median(&mut at_small);
        assert!(small < big, "residual must shrink with omega: {small} !< {big}");
    }

    #[test]
    fn residual_beats_uncorrected_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xi = vec![0.0; 8];
        let mut wins = 0;
        let trials = 30;
        for seed in 0..trials {
            let w = theory_net(8, 128, 3, seed);
            let x = random_unit(8, &mut rng);
            let w2 = perturb_weights(&w, 0.05, seed + 900);
            let res = taylor_residual(&w, &w2, &x, &xi).unwrap();
            let diff = output_difference(&w, &w2, &x, &xi).unwrap();
            if res <= diff {
                wins += 1;
            }
        }
        assert!(wins * 2 > trials, "linear term helped only {wins}/{trials} times");
    }

    #[test]
    fn hidden_norms_concentrate_at_width() {
        let w = theory_net(16, 2048, 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs: Vec<Vec<f64>> = (0..100).map(|_| random_unit(16, &mut rng)).collect();
        let rate = hidden_norm_check(&w, &inputs, &vec![0.0; 16]).unwrap();
        assert!(rate >= 0.95, "pass rate {rate}");
    }

    #[test]
    fn hidden_norm_check_rejects_non_unit_inputs() {
        let w = theory_net(4, 32, 3, 8);
        let bad = vec![vec![1.0, 1.0, 0.0, 0.0]];
        assert!(hidden_norm_check(&w, &bad, &[0.0; 4]).is_err());
    }

    #[test]
    fn perturbation_widens_accepted_interval() {
        let w = theory_net(8, 512, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // inputs orthogonal to xi so that ||x + xi||^2 = 1 + ||xi||^2
        // lands exactly on the widened interval's edge region
        let inputs: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let mut v = random_unit(7, &mut rng);
                v.insert(0, 0.0);
                v
            })
            .collect();
        let mut xi = vec![0.0; 8];
        xi[0] = 0.5; // ||xi||^2 = 0.25
        let with_xi = hidden_norm_check(&w, &inputs, &xi).unwrap();
        assert!(with_xi >= 0.9, "widened interval should still pass: {with_xi}");
    }

    #[test]
    fn grad_ratio_zero_input_and_loss_vs_forward() {
        let w = theory_net(8, 64, 3, 11);
        let zero = vec![vec![0.0; 8]];
        // zero input never passes unit-norm checks, so call the gradient
        // probe directly: everything downstream of a zero input is zero
        let ratio = grad_norm_check(&w, &zero, &vec![0.0; 8]).unwrap();
        assert_eq!(ratio, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_unit(8, &mut rng);
        let trace = forward(w.view(), &x).unwrap();
        let g_fwd = backprop_output(w.view(), &trace, &[1.0]).unwrap();
        let dldf = loss_binary_dz(trace.output[0]);
        let g_loss = backprop_output(w.view(), &trace, &[dldf]).unwrap();
        for (a, b) in g_loss.layers().zip(g_fwd.layers()) {
            assert!(a.fro_norm() <= b.fro_norm() + 1e-12);
        }
    }

    #[test]
    fn drift_zero_before_training() {
        let w = theory_net(8, 32, 3, 13);
        let model = TaskHeadSet::from_params(w.clone(), 0);
        assert_eq!(iterate_drift(&w, &model).unwrap(), 0.0);
    }

    #[test]
    fn theorem_terms_oracles() {
        // delta = e^{-2}, n = 2: green = sqrt(2 * 2 / 2) = sqrt(2)
        let t = theorem_terms(2, 4, 3, 256, 0.0, (-2.0f64).exp(), 0.5).unwrap();
        assert!((t.green - 2.0f64.sqrt()).abs() < 1e-12);

        // quadrupling n halves green
        let t4 = theorem_terms(8, 4, 3, 256, 0.0, (-2.0f64).exp(), 0.5).unwrap();
        assert!((t4.green - t.green / 2.0).abs() < 1e-12);

        // blue monitor decreases in m
        let small_m = theorem_terms(100, 4, 3, 64, 0.1, 0.05, 0.5).unwrap();
        let big_m = theorem_terms(100, 4, 3, 4096, 0.1, 0.05, 0.5).unwrap();
        assert!(big_m.blue_monitor < small_m.blue_monitor);

        assert!(theorem_terms(10, 4, 3, 64, 0.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn grid_runs_and_summary_trends_hold_at_small_scale() {
        let probe = NtrfProbe {
            omega: 0.1,
            delta: 0.05,
            m_sweep: vec![64, 256],
            l_sweep: vec![3],
            seeds: (0..10).collect(),
            n: 100,
            lambda_sep: 0.1,
        };
        let rows = run_probe_grid(&probe).unwrap();
        assert_eq!(rows.len(), 2 * 1 * 10 * 2);
        assert!(rows.iter().all(|r| {
            r.residual.is_finite() && r.convexity_gap.is_finite() && r.grad_ratio.is_finite()
        }));
        let summary = summarize(&rows).unwrap();
        assert!(summary.residual_below_linear_difference);
        assert!(summary.grad_ratio_stable_across_m);
    }

    #[test]
    fn probe_validation() {
        let mut p = NtrfProbe {
            omega: 0.1,
            delta: 0.05,
            m_sweep: vec![64],
            l_sweep: vec![3],
            seeds: vec![0],
            n: 10,
            lambda_sep: 0.1,
        };
        assert!(p.validate().is_ok());
        p.delta = 1.0;
        assert!(p.validate().is_err());
        p.delta = 0.5;
        p.omega = 0.0;
        assert!(p.validate().is_err());
    }
}
