//! Dense kernels with reverse-mode gradients, plus a finite-difference
//! gradient checker used to verify every differentiable block.

pub mod tape;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;
use crate::scalar::Scalar;

/// `y = x W (+ b)`, with `b` broadcast over rows.
pub fn affine<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// Deterministic standard-normal tensor.
pub fn randn<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so near-zero gradients are
/// compared on an absolute scale instead of amplifying rounding noise.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub kernel: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} seed={} max_rel_err={:.3e}", self.kernel, self.seed, self.max_rel_error)?;
        if let Some(msg) = &self.failure {
            write!(f, " ({msg})")?;
        }
        Ok(())
    }
}

/// Compare analytic gradients of `build` against central differences.
///
/// Non-scalar outputs are reduced with a fixed random projection derived
/// from `seed`, so every output entry contributes.
pub fn gradcheck<F>(kernel: &str, inputs: &[Tensor<f64>], seed: u64, build: F) -> GradcheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let fail = |msg: String| GradcheckReport {
        kernel: kernel.to_string(),
        seed,
        max_rel_error: f64::INFINITY,
        passed: false,
        failure: Some(msg),
    };

    let eval = |values: &[Tensor<f64>], head: Option<&Tensor<f64>>| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let scalar = match head {
            Some(h) if h.len() > 1 => {
                let h = tape.constant(h.clone().reshape(shape)?);
                let prod = tape.mul(out, h)?;
                let n = tape.value(prod).len() as f64;
                let m = tape.mean_all(prod);
                tape.scale(m, n)
            }
            _ => out,
        };
        Ok((tape, vars, scalar))
    };

    let out_len = match eval(inputs, None) {
        Ok((tape, _, out)) => tape.value(out).len(),
        Err(e) => return fail(format!("forward failed: {e}")),
    };
    let head = (out_len > 1).then(|| randn::<f64>(1, out_len, seed ^ 0x9e37_79b9_7f4a_7c15));
    let head_ref = head.as_ref();

    let (tape, vars, scalar) = match eval(inputs, head_ref) {
        Ok(r) => r,
        Err(e) => return fail(format!("forward failed: {e}")),
    };
    let f0 = tape.value(scalar).item();
    if !f0.is_finite() {
        return fail("non-finite output".into());
    }
    let grads = match tape.backward(scalar) {
        Ok(g) => g,
        Err(e) => return fail(format!("backward failed: {e}")),
    };

    let mut max_err = 0.0f64;
    let mut perturbed = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        if !analytic.all_finite() {
            return fail(format!("non-finite analytic gradient for input {k}"));
        }
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            let mut probe = |delta: f64| -> Result<f64> {
                perturbed[k].data_mut()[i] = orig + delta;
                let (t, _, s) = eval(&perturbed, head_ref)?;
                Ok(t.value(s).item())
            };
            let (plus, minus) = match (probe(GRADCHECK_STEP), probe(-GRADCHECK_STEP)) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => return fail(format!("perturbed forward failed: {e}")),
            };
            perturbed[k].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return fail(format!("non-finite output when perturbing input {k}[{i}]"));
            }
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            max_err = max_err.max((a - numeric).abs() / denom);
        }
    }
    GradcheckReport {
        kernel: kernel.to_string(),
        seed,
        max_rel_error: max_err,
        passed: max_err < GRADCHECK_TOL,
        failure: None,
    }
}

