//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_KINK_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Points whose nearest ReLU input or pooling tie is closer than this are rejected.
    /// `None` disables the margin test; pattern-crossing detection always runs.
    pub kink_tol: Option<f64>,
    /// Check at most this many randomly chosen coordinates per input tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: DEFAULT_STEP,
            kink_tol: Some(DEFAULT_KINK_TOL),
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates dropped because a ±step probe changed some ReLU sign or pooling winner.
    pub skipped_kinks: usize,
    pub kink_margin: f64,
}

fn evaluate<F>(f: &F, inputs: &[Tensor], track: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = track;
            tape.leaf(t)
        })
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    Ok((tape, vars, out))
}

impl GradCheck {
    pub fn with_step(step: f64) -> Self {
        GradCheck {
            step,
            ..Self::default()
        }
    }

    /// Compares analytic gradients of the scalar `f` with central differences at `inputs`.
    ///
    /// Fails with [`Error::Input`] when the point sits closer than `kink_tol` to a
    /// non-differentiable tie; use [`GradCheck::run_kink_free`] to re-sample.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let (tape, vars, out) = evaluate(&f, inputs, true)?;
        let margin = tape.kink_margin();
        if let Some(tol) = self.kink_tol {
            if margin < tol {
                return Err(Error::Input(format!(
                    "point lies {margin:.3e} from a kink (tolerance {tol:.1e})"
                )));
            }
        }
        let base_pattern = tape.activation_pattern();
        let grads = tape.backward(out)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            skipped_kinks: 0,
            kink_margin: margin,
        };
        let mut probe = inputs.to_vec();
        for (which, var) in vars.iter().enumerate() {
            let analytic = grads.wrt(*var).clone();
            let n = inputs[which].len();
            let order: Vec<usize> = match self.max_coords {
                Some(k) if k < n => sample(&mut rng, n, n).into_vec(),
                _ => (0..n).collect(),
            };
            let budget = self.max_coords.unwrap_or(n);
            let mut done = 0;
            for i in order {
                if done == budget {
                    break;
                }
                let orig = inputs[which].data()[i];
                probe[which].data_mut()[i] = orig + self.step;
                let (tp, _, op) = evaluate(&f, &probe, false)?;
                probe[which].data_mut()[i] = orig - self.step;
                let (tm, _, om) = evaluate(&f, &probe, false)?;
                probe[which].data_mut()[i] = orig;
                if tp.activation_pattern() != base_pattern || tm.activation_pattern() != base_pattern {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * self.step);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(1.0);
                report.max_rel_error = report.max_rel_error.max(rel);
                report.checked += 1;
                done += 1;
            }
        }
        Ok(report)
    }

    /// Draws points from `draw(attempt)` until one clears the kink margin, then checks it.
    pub fn run_kink_free<F, D>(&self, f: F, mut draw: D, max_attempts: usize) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
        D: FnMut(usize) -> Vec<Tensor>,
    {
        let mut last = None;
        for attempt in 0..max_attempts {
            match self.run(&f, &draw(attempt)) {
                Err(Error::Input(msg)) => last = Some(msg),
                other => return other,
            }
        }
        Err(Error::Input(format!(
            "no kink-free point in {max_attempts} draws; last: {}",
            last.unwrap_or_default()
        )))
    }
}

/// Maximum relative error between the tape gradient of scalar `f` at `x` and central
/// differences with step `h`, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let check = GradCheck {
        step: h,
        kink_tol: None,
        max_coords: None,
        seed: 0,
    };
    let report = check.run(|t, v| f(t, v[0]), std::slice::from_ref(x))?;
    Ok(report.max_rel_error)
}
