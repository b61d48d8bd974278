//! Training objectives.
//!
//! * Historical contrastive loss: in-batch softmax over every example's
//!   positive plus the example's own negative, which is its semi-hard
//!   historical candidate when it has one and a random easy negative
//!   otherwise.
//! * Pairwise similarity loss: a circle-style soft ranking that pushes
//!   `s_pos > s_hist > s_neg` for every item that has a historical candidate.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub use_hist: bool,
    pub use_pair: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            use_hist: true,
            use_pair: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !self.use_hist && !self.use_pair {
            return Err(Error::Config("at least one loss term must be enabled".into()));
        }
        Ok(())
    }
}

/// Similarities of one mini-batch, as tape nodes.
#[derive(Clone, Debug)]
pub struct BatchSimilarities {
    /// `pos[i]`: context `i` with its own positive (scalar).
    pub pos: Vec<Var>,
    /// `cross[i]`: context `i` with every positive in the batch (length `B`).
    pub cross: Vec<Var>,
    /// Context `i` with its semi-hard candidate; `None` when there is none or
    /// it equals the positive.
    pub semi: Vec<Option<Var>>,
    /// Context `i` with its easy negative (scalar).
    pub easy: Vec<Var>,
}

impl BatchSimilarities {
    /// Builds similarities from encoded contexts and candidates.
    pub fn from_embeddings(
        tape: &mut Tape,
        contexts: &[Var],
        positives: &[Var],
        semi: &[Option<Var>],
        easy: &[Var],
    ) -> Result<Self> {
        let b = contexts.len();
        if b == 0 || positives.len() != b || semi.len() != b || easy.len() != b {
            return Err(dim_err(
                "batch similarities",
                format!(
                    "{} contexts, {} positives, {} semi, {} easy",
                    b,
                    positives.len(),
                    semi.len(),
                    easy.len()
                ),
            ));
        }
        let pmat = tape.stack(positives)?;
        let mut out = Self {
            pos: Vec::with_capacity(b),
            cross: Vec::with_capacity(b),
            semi: Vec::with_capacity(b),
            easy: Vec::with_capacity(b),
        };
        for i in 0..b {
            let row = tape.matmul(pmat, contexts[i])?;
            out.pos.push(tape.pick(row, i)?);
            out.cross.push(row);
            out.semi.push(match semi[i] {
                Some(s) => Some(tape.dot(contexts[i], s)?),
                None => None,
            });
            out.easy.push(tape.dot(contexts[i], easy[i])?);
        }
        Ok(out)
    }

    /// Builds similarities from a `B × B` cross matrix and length-`B` semi and
    /// easy vectors; `semi_mask[i] == false` hides `semi[i]`.
    pub fn from_matrix(tape: &mut Tape, cross: Var, semi: Var, semi_mask: &[bool], easy: Var) -> Result<Self> {
        let b = tape.value(cross).rows();
        let ok = tape.value(cross).shape() == [b, b]
            && tape.value(semi).shape() == [b]
            && tape.value(easy).shape() == [b]
            && semi_mask.len() == b;
        if !ok || b == 0 {
            return Err(dim_err("batch similarities", "expected B×B cross and length-B vectors"));
        }
        let mut out = Self {
            pos: Vec::with_capacity(b),
            cross: Vec::with_capacity(b),
            semi: Vec::with_capacity(b),
            easy: Vec::with_capacity(b),
        };
        for i in 0..b {
            let row = tape.row(cross, i)?;
            out.pos.push(tape.pick(row, i)?);
            out.cross.push(row);
            out.semi.push(if semi_mask[i] { Some(tape.pick(semi, i)?) } else { None });
            out.easy.push(tape.pick(easy, i)?);
        }
        Ok(out)
    }

    pub fn batch_size(&self) -> usize {
        self.pos.len()
    }

    pub fn semi_count(&self) -> usize {
        self.semi.iter().flatten().count()
    }
}

/// `mean_i [ log(Σ_j e^{cross[i,j]} + e^{neg_i}) - cross[i,i] ]`.
pub fn historical_contrastive_loss(tape: &mut Tape, s: &BatchSimilarities) -> Result<Var> {
    let b = s.batch_size();
    let mut terms = Vec::with_capacity(b);
    for i in 0..b {
        let neg = s.semi[i].unwrap_or(s.easy[i]);
        let logits = tape.concat(&[s.cross[i], neg])?;
        let lse = tape.log_sum_exp(logits)?;
        terms.push(tape.sub(lse, s.pos[i])?);
    }
    let all = tape.concat(&terms)?;
    tape.mean(all)
}

/// `log[1 + Σ_i e^{γ(s_neg - s_hist)} + Σ_i e^{γ(s_hist - s_pos)}]` over the
/// items that have a semi-hard candidate; zero when none does.
pub fn pairwise_similarity_loss(tape: &mut Tape, s: &BatchSimilarities, cfg: &LossConfig) -> Result<Var> {
    let mut exponents = Vec::with_capacity(1 + 2 * s.semi_count());
    exponents.push(tape.scalar(0.0));
    for i in 0..s.batch_size() {
        if let Some(hist) = s.semi[i] {
            let a = tape.sub(s.easy[i], hist)?;
            exponents.push(tape.scale(a, cfg.gamma)?);
            let b = tape.sub(hist, s.pos[i])?;
            exponents.push(tape.scale(b, cfg.gamma)?);
        }
    }
    if exponents.len() == 1 {
        return Ok(exponents[0]);
    }
    let all = tape.concat(&exponents)?;
    tape.log_sum_exp(all)
}

/// Unweighted sum of the enabled terms.
pub fn combined_loss(tape: &mut Tape, s: &BatchSimilarities, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    match (cfg.use_hist, cfg.use_pair) {
        (true, true) => {
            let h = historical_contrastive_loss(tape, s)?;
            let p = pairwise_similarity_loss(tape, s, cfg)?;
            tape.add(h, p)
        }
        (true, false) => historical_contrastive_loss(tape, s),
        (false, true) => pairwise_similarity_loss(tape, s, cfg),
        (false, false) => unreachable!("rejected by validate"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheck};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Batch {
        cross: Vec<Vec<f64>>,
        semi: Vec<f64>,
        mask: Vec<bool>,
        easy: Vec<f64>,
    }

    impl Batch {
        fn tensors(&self) -> Vec<Tensor> {
            vec![
                Tensor::from_rows(&self.cross).unwrap(),
                Tensor::vector(self.semi.clone()),
                Tensor::vector(self.easy.clone()),
            ]
        }
    }

    fn sims(t: &mut Tape, b: &Batch, vars: Option<&[Var]>) -> BatchSimilarities {
        let v: Vec<Var> = match vars {
            Some(v) => v.to_vec(),
            None => b.tensors().into_iter().map(|x| t.constant(x)).collect(),
        };
        BatchSimilarities::from_matrix(t, v[0], v[1], &b.mask, v[2]).unwrap()
    }

    fn eval(b: &Batch, f: impl Fn(&mut Tape, &BatchSimilarities) -> Result<Var>) -> f64 {
        let mut t = Tape::new();
        let s = sims(&mut t, b, None);
        let l = f(&mut t, &s).unwrap();
        t.value(l).item()
    }

    fn one(pos: f64, semi: Option<f64>, easy: f64) -> Batch {
        Batch {
            cross: vec![vec![pos]],
            semi: vec![semi.unwrap_or(0.0)],
            mask: vec![semi.is_some()],
            easy: vec![easy],
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, scale: f64) -> Batch {
        Batch {
            cross: (0..b).map(|_| (0..b).map(|_| rng.gen_range(-scale..scale)).collect()).collect(),
            semi: (0..b).map(|_| rng.gen_range(-scale..scale)).collect(),
            mask: (0..b).map(|_| rng.gen_bool(0.6)).collect(),
            easy: (0..b).map(|_| rng.gen_range(-scale..scale)).collect(),
        }
    }

    /// Conventional InfoNCE with in-batch positives plus one easy negative,
    /// written directly over plain floats.
    fn conventional_contrastive(b: &Batch) -> f64 {
        let n = b.cross.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut logits = b.cross[i].clone();
            logits.push(b.easy[i]);
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
            total += -(b.cross[i][i] - m - z.ln());
        }
        total / n as f64
    }

    fn hist(t: &mut Tape, s: &BatchSimilarities) -> Result<Var> {
        historical_contrastive_loss(t, s)
    }

    #[test]
    fn hist_worked_values() {
        let v = eval(&one(2.0, Some(1.0), -3.0), hist);
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.313262).abs() < 1e-6);

        let b = Batch {
            cross: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            semi: vec![1.0, 1.0],
            mask: vec![true, true],
            easy: vec![0.0, 0.0],
        };
        let per_example = ((2.0f64).exp() + 1.0 + 1.0f64.exp()).ln() - 2.0;
        assert!((per_example - 0.407606).abs() < 1e-6);
        assert!((eval(&b, hist) - per_example).abs() < 1e-12);

        let v = eval(&one(0.7, None, 0.7), hist);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hist_uniform_batch_is_log_b_plus_one() {
        for b in [1usize, 2, 8] {
            let batch = Batch {
                cross: vec![vec![0.4; b]; b],
                semi: vec![0.4; b],
                mask: vec![true; b],
                easy: vec![0.4; b],
            };
            assert!((eval(&batch, hist) - ((b + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_worked_values() {
        let cfg = LossConfig::default();
        let pair = |t: &mut Tape, s: &BatchSimilarities| pairwise_similarity_loss(t, s, &cfg);
        let v = eval(&one(1.0, Some(0.5), 0.0), pair);
        assert!((v - (1.0 + 2.0 * (-0.5f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.794377).abs() < 1e-6);
        let raised = eval(&one(2.0, Some(0.5), 0.0), pair);
        assert!((raised - 0.604131).abs() < 1e-6);
        assert!(raised < v);

        for gamma in [0.5, 1.0, 16.0] {
            let cfg = LossConfig { gamma, ..LossConfig::default() };
            let pair = |t: &mut Tape, s: &BatchSimilarities| pairwise_similarity_loss(t, s, &cfg);
            assert!((eval(&one(0.3, Some(0.3), 0.3), pair) - 3f64.ln()).abs() < 1e-12);
        }
        assert_eq!(eval(&one(0.3, None, 0.1), pair), 0.0);
    }

    #[test]
    fn combined_and_ablation_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random_batch(&mut rng, 4, 2.0);
        let cfg = LossConfig::default();
        let both = eval(&b, |t, s| combined_loss(t, s, &cfg));
        let h = eval(&b, hist);
        let p = eval(&b, |t, s| pairwise_similarity_loss(t, s, &cfg));
        assert!((both - (h + p)).abs() < 1e-12);

        let no_pair = LossConfig { use_pair: false, ..cfg.clone() };
        assert_eq!(eval(&b, |t, s| combined_loss(t, s, &no_pair)), h);

        let mut t = Tape::new();
        let s = sims(&mut t, &b, None);
        let none = LossConfig { use_pair: false, use_hist: false, ..cfg.clone() };
        assert!(matches!(combined_loss(&mut t, &s, &none), Err(Error::Config(_))));
        let bad_gamma = LossConfig { gamma: 0.0, ..cfg };
        assert!(matches!(combined_loss(&mut t, &s, &bad_gamma), Err(Error::Config(_))));
    }

    #[test]
    fn no_semi_hard_reduces_to_conventional_contrastive() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for b in [1usize, 2, 8] {
            let mut batch = random_batch(&mut rng, b, 3.0);
            batch.mask = vec![false; b];
            let got = eval(&batch, |t, s| combined_loss(t, s, &LossConfig::default()));
            assert!((got - conventional_contrastive(&batch)).abs() < 1e-10);
        }
    }

    #[test]
    fn pair_is_monotone_in_pos_and_neg() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = LossConfig { gamma: 2.0, ..LossConfig::default() };
        let pair = |t: &mut Tape, s: &BatchSimilarities| pairwise_similarity_loss(t, s, &cfg);
        for _ in 0..50 {
            let mut b = random_batch(&mut rng, 3, 1.0);
            b.mask[0] = true;
            let base = eval(&b, pair);
            assert!(base > 0.0);
            let h = 1e-3;
            let mut up = Batch { cross: b.cross.clone(), semi: b.semi.clone(), mask: b.mask.clone(), easy: b.easy.clone() };
            up.cross[0][0] += h;
            assert!(eval(&up, pair) < base);
            let mut neg = Batch { cross: b.cross.clone(), semi: b.semi.clone(), mask: b.mask.clone(), easy: b.easy.clone() };
            neg.easy[0] += h;
            assert!(eval(&neg, pair) > base);
        }
    }

    #[test]
    fn stable_at_large_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = LossConfig { gamma: 64.0, ..LossConfig::default() };
        for _ in 0..20 {
            let b = random_batch(&mut rng, 8, 1e3);
            let v = eval(&b, |t, s| combined_loss(t, s, &cfg));
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = LossConfig { gamma: 1.5, ..LossConfig::default() };
        for b in [1usize, 2, 8] {
            for _ in 0..5 {
                let mut batch = random_batch(&mut rng, b, 2.0);
                batch.mask[0] = true;
                let mask = batch.mask.clone();
                type F = fn(&mut Tape, &BatchSimilarities, &LossConfig) -> Result<Var>;
                let losses: [F; 3] = [
                    |t, s, _| historical_contrastive_loss(t, s),
                    pairwise_similarity_loss,
                    combined_loss,
                ];
                for loss in losses {
                    let f = |t: &mut Tape, v: &[Var]| {
                        let s = BatchSimilarities::from_matrix(t, v[0], v[1], &mask, v[2])?;
                        loss(t, &s, &cfg)
                    };
                    let r = grad_check(f, &batch.tensors(), &GradCheck::default()).unwrap();
                    assert!(r.max_rel_error < 1e-4, "B={b}: {r:?}");
                }
            }
        }
    }
}
