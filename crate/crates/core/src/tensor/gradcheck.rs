//! Central finite-difference checks against the reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Elements whose analytic and numeric gradients are both at most this large
/// in magnitude are not compared.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// Rounding budget of one forward evaluation, in units of machine epsilon
/// times the loss magnitude.
const FORWARD_ROUNDING_ULPS: f64 = 32.0;

/// Outcome of a finite-difference comparison.
///
/// A central difference cannot resolve a derivative smaller than its own
/// rounding noise, `ulps * eps_mach * |f| / eps`. Elements above that noise
/// (scaled by the relative tolerance) are compared relatively; elements below
/// it are compared against the noise bound itself.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub noise_limited: usize,
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric| / noise` over noise-limited elements.
    pub max_noise_ratio: f64,
    pub worst: Option<String>,
    tolerance: f64,
}

impl GradCheckReport {
    pub fn new(tolerance: f64) -> Self {
        GradCheckReport { tolerance, ..Self::default() }
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance && self.max_noise_ratio <= 1.0
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, noise: f64) {
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
        if diff.is_nan() {
            self.max_rel_error = f64::INFINITY;
            self.worst = Some(format!("{} analytic={analytic:e} numeric={numeric:e}", label()));
            return;
        }
        if scale <= MAGNITUDE_FLOOR {
            self.skipped += 1;
            return;
        }
        if scale * self.tolerance < noise {
            self.noise_limited += 1;
            let ratio = diff / noise;
            if ratio > self.max_noise_ratio {
                self.max_noise_ratio = ratio;
                if ratio > 1.0 {
                    self.worst = Some(format!("{} analytic={analytic:e} numeric={numeric:e} noise={noise:e}", label()));
                }
            }
            return;
        }
        self.checked += 1;
        let rel = diff / scale;
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some(format!("{} analytic={analytic:e} numeric={numeric:e}", label()));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.noise_limited += other.noise_limited;
        if other.max_rel_error > self.max_rel_error || other.max_noise_ratio > self.max_noise_ratio {
            self.worst = other.worst.or(self.worst.take());
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_noise_ratio = self.max_noise_ratio.max(other.max_noise_ratio);
    }
}

fn fd_noise(plus: f64, minus: f64, eps: f64) -> f64 {
    FORWARD_ROUNDING_ULPS * f64::EPSILON * plus.abs().max(minus.abs()).max(f64::MIN_POSITIVE) / eps
}

/// Relative tolerance used by every finite-difference check in this crate.
pub const REL_TOLERANCE: f64 = 1e-5;

/// Compares gradients of the scalar `f(inputs)` with respect to every element
/// of every input.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport::new(REL_TOLERANCE);
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(|| format!("input {i}[{j}]"), analytic[i][j], numeric, fd_noise(plus, minus, eps));
        }
    }
    Ok(report)
}

/// Compares parameter gradients of the scalar loss `f(store)` for every
/// element of every parameter. The store is perturbed in place and restored.
pub fn check_params<F>(store: &mut ParamStore, f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
    for (id, g) in tape.param_grads() {
        for (a, v) in analytic[id.index()].iter_mut().zip(g) {
            *a += v;
        }
    }
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut report = GradCheckReport::new(REL_TOLERANCE);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for j in 0..store.get(id).numel() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(|| format!("{}[{j}]", store.name(id)), analytic[id.index()][j], numeric, fd_noise(plus, minus, eps));
        }
    }
    Ok(report)
}

/// Reduces a tensor to a scalar through fixed random weights, so a scalar
/// check exercises the whole Jacobian.
pub fn random_projection(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("positive extents")
}

/// `sum(w * out^2)` with fixed positive random weights. Unlike a linear
/// projection the terms cannot cancel, so `|f|` tracks the size of the
/// intermediate sums and the rounding estimate stays honest for deep graphs.
pub fn random_quadratic(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..1.5)).collect())?;
    let w = tape.constant(w);
    let sq = tape.mul(out, out)?;
    let prod = tape.mul(sq, w)?;
    Ok(tape.sum(prod))
}
