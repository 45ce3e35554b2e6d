//! Central finite-difference checks of tape gradients, and the fixed suite
//! run by the `gradcheck` subcommand.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::adapter::{FrozenLinear, LoraAdapter, LoranAdapter, WeightUpdate};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Relative discrepancy `|a − n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares the tape gradient of a scalar function of one tensor against
/// central differences with step `h`, returning the worst relative error.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_difference_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Multi-input form of [`finite_difference_check`]; every coordinate of every
/// input is perturbed in turn.
pub fn finite_difference_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.detached())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.detached())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut worst = 0.0f64;
    let mut point: Vec<Tensor> = inputs.iter().map(Tensor::detached).collect();
    for (which, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let original = point[which].data()[i];
            point[which].data_mut()[i] = original + h;
            let plus = eval(&point)?;
            point[which].data_mut()[i] = original - h;
            let minus = eval(&point)?;
            point[which].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Step that resolves the sharpest feature of `f`: `ωh ≤ 1e-3` for Sinter,
/// `βh ≤ 1e-4` for Swish, 1e-4 otherwise.
pub fn suggested_step(f: &Activation) -> f64 {
    match *f {
        Activation::Sinter { omega, .. } => 1e-4f64.min(1e-3 / omega),
        Activation::Swish { beta } => 1e-4 / beta.max(1.0),
        _ => 1e-4,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradcheckScope {
    All,
    Ops,
    Activations,
    Adapters,
    /// Only the Sinter activation and Sinter adapters.
    Sinter,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub name: String,
    pub step: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub scope: GradcheckScope,
    pub tolerance: f64,
    pub cases: Vec<GradcheckCase>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Activations exercised by the suite: the ablation family plus Sinter at the
/// plotted magnitudes and at a low frequency.
pub fn suite_activations() -> Vec<Activation> {
    let mut v = Activation::ablation_family();
    v.push(Activation::Sinter {
        amplitude: 0.5,
        omega: 5e3,
    });
    v.push(Activation::Sinter {
        amplitude: 0.5,
        omega: 3.0,
    });
    v
}

/// Runs the suite. With `inject_fault`, activation cases use a deliberately
/// wrong derivative so the suite must fail.
pub fn run_gradcheck(scope: GradcheckScope, inject_fault: bool) -> Result<GradcheckReport> {
    let mut cases = Vec::new();
    let wants = |s: GradcheckScope| scope == GradcheckScope::All || scope == s;
    let is_sinter = |f: &Activation| matches!(f, Activation::Sinter { .. });

    if wants(GradcheckScope::Ops) {
        cases.extend(op_cases()?);
    }
    for f in suite_activations() {
        if wants(GradcheckScope::Activations) || (scope == GradcheckScope::Sinter && is_sinter(&f))
        {
            cases.push(activation_case(f, inject_fault)?);
        }
    }
    for f in suite_activations() {
        if wants(GradcheckScope::Adapters) || (scope == GradcheckScope::Sinter && is_sinter(&f)) {
            for inside in [true, false] {
                cases.push(adapter_case(f, inside)?);
            }
        }
    }

    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        scope,
        tolerance: GRADCHECK_TOLERANCE,
        passed: cases.iter().all(|c| c.passed),
        cases,
        max_rel_error,
    })
}

fn case(name: String, step: f64, err: f64) -> GradcheckCase {
    GradcheckCase {
        name,
        step,
        max_rel_error: err,
        passed: err < GRADCHECK_TOLERANCE,
    }
}

/// Elementwise maps are checked one scalar at a time, so vanishing
/// derivatives (Swish far left, Sigmoid tails) are not swamped by rounding in
/// a summed loss.
fn activation_case(f: Activation, inject_fault: bool) -> Result<GradcheckCase> {
    let mut rng = SeededRng::new(0x5eed_0001);
    let h = suggested_step(&f);
    let mut worst = 0.0f64;
    for _ in 0..16 {
        let x = Tensor::vector(vec![rng.uniform_in(-2.0, 2.0)])?;
        let w = Tensor::vector(vec![rng.uniform_in(0.5, 1.5)])?;
        let err = finite_difference_check(
            |tape, x| {
                let y = if inject_fault {
                    tape.map_with(x, move |v| f.eval(v), move |v| 1.1 * f.deriv(v) + 0.01)
                } else {
                    tape.map_unary(x, &f)?
                };
                let w = tape.constant(w.clone());
                let wy = tape.hadamard(w, y)?;
                tape.sum(wy)
            },
            &x,
            h,
        )?;
        worst = worst.max(err);
    }
    Ok(case(format!("activation/{f}"), h, worst))
}

fn adapter_case(f: Activation, scale_inside: bool) -> Result<GradcheckCase> {
    let mut rng = SeededRng::new(0x5eed_0002);
    let (d, k, r, n) = (6, 5, 2, 4);
    let layer = FrozenLinear::random(d, k, true, &mut rng);
    let b = Tensor::randn(d, r, 1.0, &mut rng);
    let a = Tensor::randn(r, k, 1.0, &mut rng);
    let x = Tensor::randn(k, n, 1.0, &mut rng);
    let weights = Tensor::uniform(d, n, -1.0, 1.0, &mut rng);
    let loran = LoranAdapter::new(
        LoraAdapter::from_factors(b.clone(), a.clone(), r as f64)?,
        f,
        scale_inside,
    )?;
    let h = suggested_step(&f);
    let err = finite_difference_check_many(
        |tape, vars| {
            let delta = loran.record_delta(tape, vars)?;
            let xv = tape.constant(x.clone());
            let out = layer.forward(tape, xv, Some(delta))?;
            let w = tape.constant(weights.clone());
            let weighted = tape.hadamard(w, out)?;
            tape.sum(weighted)
        },
        &[b, a],
        h,
    )?;
    let placement = if scale_inside { "inside" } else { "outside" };
    Ok(case(format!("adapter/{f}/scale-{placement}"), h, err))
}

fn op_cases() -> Result<Vec<GradcheckCase>> {
    let mut rng = SeededRng::new(0x5eed_0003);
    let h = 1e-4;
    let a = Tensor::uniform(3, 4, -2.0, 2.0, &mut rng);
    let b = Tensor::uniform(4, 2, -2.0, 2.0, &mut rng);
    let c = Tensor::uniform(3, 4, -2.0, 2.0, &mut rng);
    let w32 = Tensor::uniform(3, 2, -1.0, 1.0, &mut rng);
    let w34 = Tensor::uniform(3, 4, -1.0, 1.0, &mut rng);
    let col = Tensor::uniform(3, 1, -2.0, 2.0, &mut rng);
    let col = Tensor::vector(col.into_data())?;
    let logits = Tensor::uniform(5, 3, -2.0, 2.0, &mut rng);
    let labels = [0usize, 2, 1, 1, 0];

    let mut out = Vec::new();
    out.push(case(
        "op/matmul".into(),
        h,
        finite_difference_check_many(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let w = t.constant(w32.clone());
                let y = t.hadamard(w, p)?;
                t.sum(y)
            },
            &[a.clone(), b.clone()],
            h,
        )?,
    ));
    out.push(case(
        "op/add-sub-hadamard-scale".into(),
        h,
        finite_difference_check_many(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(v[0], v[1])?;
                let p = t.hadamard(s, d)?;
                let p = t.scale(p, 0.7)?;
                let w = t.constant(w34.clone());
                let y = t.hadamard(w, p)?;
                t.sum(y)
            },
            &[a.clone(), c.clone()],
            h,
        )?,
    ));
    out.push(case(
        "op/add-column-transpose-mean".into(),
        h,
        finite_difference_check_many(
            |t, v| {
                let y = t.add_column(v[0], v[1])?;
                let y = t.transpose(y)?;
                let w = t.constant(w34.transpose());
                let y = t.hadamard(w, y)?;
                let y = t.hadamard(y, y)?;
                t.mean(y)
            },
            &[a.clone(), col],
            h,
        )?,
    ));
    out.push(case(
        "op/sin-fan-out".into(),
        h,
        finite_difference_check(
            |t, x| {
                let s = t.sin(x);
                let y = t.hadamard(s, x)?;
                let y = t.add(y, x)?;
                t.sum(y)
            },
            &a,
            h,
        )?,
    ));
    out.push(case(
        "op/softmax-cross-entropy".into(),
        h,
        finite_difference_check(|t, x| t.softmax_cross_entropy(x, &labels), &logits, h)?,
    ));
    Ok(out)
}
