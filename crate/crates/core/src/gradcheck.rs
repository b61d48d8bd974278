//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub eps: f64,
    /// Check only this many coordinates, drawn with `seed`; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(param index, flat coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::Contract("grad_check function must return a scalar".into()));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function value {v} is not finite")));
    }
    Ok(v)
}

/// Compares the tape gradient of `f` against `(f(p+eps) - f(p-eps)) / 2eps`
/// coordinate by coordinate.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {}", opts.eps)));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::Evaluation("function value is not finite".into()));
    }
    let grads = tape.backward(out)?;

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |c| (p, c)))
        .collect();
    let chosen: Vec<(usize, usize)> = match opts.max_coords {
        Some(n) if n < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: chosen.len(),
        worst: None,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, c) in chosen {
        let analytic = grads.get(vars[p]).map_or(0.0, |g| g.data()[c]);
        let base = params[p].data()[c];
        work[p] = with_coord(&params[p], c, base + opts.eps);
        let plus = evaluate(&f, &work)?;
        work[p] = with_coord(&params[p], c, base - opts.eps);
        let minus = evaluate(&f, &work)?;
        work[p] = params[p].clone();
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((p, c, analytic, numeric));
        }
    }
    Ok(report)
}

fn with_coord(t: &Tensor, c: usize, x: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[c] = x;
    Tensor::from_parts(t.shape().to_vec(), data)
}
