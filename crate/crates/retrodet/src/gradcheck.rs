//! Central finite-difference verification of the analytic gradients.
//!
//! The graph output is reduced to a scalar by its mean; analytic gradients
//! come from one backward pass, numeric ones from two perturbed forwards per
//! sampled coordinate. Intended for f64 graphs.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Activations, GradStore, GraphError, OpGraph, OpKind};
use crate::tensor::Tensor5;

/// Coordinates closer than this to a ReLU kink are excluded from the check.
const KINK_TOL: f64 = 1e-6;
/// Sampled coordinates per parameter tensor (all coordinates if fewer).
const COORDS_PER_PARAM: usize = 50;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub epsilon: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel <= self.tolerance)
    }

    pub fn max_rel(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel))
    }

    /// Line-oriented text: one line per parameter tensor.
    pub fn render(&self) -> String {
        let mut out = format!(
            "gradcheck epsilon {:e} tolerance {:e}\n",
            self.epsilon, self.tolerance
        );
        for e in &self.entries {
            out.push_str(&format!(
                "param {} max_rel {:.3e} mean_rel {:.3e} checked {} skipped {}\n",
                e.name, e.max_rel, e.mean_rel, e.checked, e.skipped
            ));
        }
        out.push_str(if self.pass() { "result PASS\n" } else { "result FAIL\n" });
        out
    }
}

fn mean_output(acts: &Activations<f64>) -> f64 {
    // Kahan summation keeps the finite-difference numerator clean enough for
    // the 1e-9 linear-op bound.
    let out = acts.output();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in out.data() {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum / out.len() as f64
}

/// A coordinate sits on a ReLU kink when the perturbation flips the sign of
/// any ReLU pre-activation (or grazes zero) between the two passes; such
/// coordinates have a genuinely non-differentiable loss and are skipped.
fn crosses_relu_kink(g: &OpGraph<f64>, plus: &Activations<f64>, minus: &Activations<f64>) -> bool {
    for node in g.nodes() {
        if matches!(node.op, OpKind::Relu) {
            let src = node.inputs[0];
            let (a, b) = (plus.node_output(src).data(), minus.node_output(src).data());
            for (&p, &m) in a.iter().zip(b) {
                if (p > 0.0) != (m > 0.0) || p.abs() < KINK_TOL && m.abs() < KINK_TOL && p != m {
                    return true;
                }
            }
        }
    }
    false
}

/// Analytic gradients of the mean-output scalar loss.
pub fn mean_loss_grads(g: &OpGraph<f64>, input: &Tensor5<f64>) -> Result<GradStore<f64>, GraphError> {
    let acts = g.forward(input)?;
    let numel = acts.output().len() as f64;
    let lg = Tensor5::new(acts.output().dims(), 1.0 / numel)?;
    g.backward(&acts, &lg)
}

/// Compare a gradient store against central finite differences.
///
/// Split from [`grad_check`] so tests can inject corrupted analytic
/// gradients and watch the comparison fail on the right tensor.
pub fn compare_with_finite_differences(
    g: &mut OpGraph<f64>,
    input: &Tensor5<f64>,
    analytic: &GradStore<f64>,
    epsilon: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for pid in 0..g.params().len() {
        let name = g.params()[pid].name.clone();
        let len = g.params()[pid].value.len();
        let coords: Vec<usize> = if len <= COORDS_PER_PARAM {
            (0..len).collect()
        } else {
            sample(&mut rng, len, COORDS_PER_PARAM).into_vec()
        };
        let mut max_rel = 0.0f64;
        let mut sum_rel = 0.0f64;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for &idx in &coords {
            let orig = g.params()[pid].value.data()[idx];
            g.params_mut()[pid].value.data_mut()[idx] = orig + epsilon;
            let acts_p = g.forward(input)?;
            let lp = mean_output(&acts_p);
            g.params_mut()[pid].value.data_mut()[idx] = orig - epsilon;
            let acts_m = g.forward(input)?;
            let lm = mean_output(&acts_m);
            g.params_mut()[pid].value.data_mut()[idx] = orig;
            if crosses_relu_kink(g, &acts_p, &acts_m) {
                skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic.params[pid].data()[idx];
            // At epsilon 1e-5 the central difference resolves gradients down
            // to roughly the forward pass roundoff / 2 epsilon ~ 1e-11;
            // below 1e-6 the relative comparison would measure FD noise, so
            // the denominator is floored there.
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            sum_rel += rel;
            checked += 1;
        }
        let mean_rel = if checked > 0 { sum_rel / checked as f64 } else { 0.0 };
        entries.push(GradCheckEntry { name, max_rel, mean_rel, checked, skipped });
    }
    Ok(GradCheckReport { entries, tolerance, epsilon })
}

/// Full gradient check of a graph at the given input: analytic backward of
/// the mean-output loss versus central finite differences on a sampled
/// subset of every parameter tensor.
pub fn grad_check(
    g: &mut OpGraph<f64>,
    input: &Tensor5<f64>,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GraphError> {
    let analytic = mean_loss_grads(g, input)?;
    compare_with_finite_differences(g, input, &analytic, epsilon, tolerance, 0x5eed)
}
