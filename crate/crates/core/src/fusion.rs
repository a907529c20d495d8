//! Late fusion of the spatial and temporal heads, the training loss, and
//! prediction.
//!
//! The logit vector is the elementwise sum of the two tanh-bounded head
//! outputs; class probabilities come from a softmax over it. The loss is the
//! negative log-softmax of the target class, computed in log space.

use crate::error::Error;
use crate::tensor::{Real, Tape, Var};

/// Skip-connection fusion: logits = spatial head + temporal head.
pub fn fuse(tape: &mut Tape, u_hat: Var, v_hat: Var) -> Result<Var, Error> {
    tape.add(u_hat, v_hat)
}

/// -log softmax(logits)[target], stable via a detached max shift:
/// loss = (m + ln sum exp(x - m)) - x_target.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: usize) -> Result<Var, Error> {
    let n = tape.value(logits).numel();
    if target >= n {
        return Err(Error::Invalid(format!(
            "target {target} out of range for {n} classes"
        )));
    }
    let max = tape
        .value(logits)
        .data()
        .iter()
        .cloned()
        .fold(Real::NEG_INFINITY, Real::max);
    let shifted = tape.add_const(logits, -max)?;
    let exps = tape.exp(shifted)?;
    let total = tape.sum_all(exps)?;
    let log_total = tape.ln(total)?;
    let lse = tape.add_const(log_total, max)?;
    let picked = tape.pick(logits, target)?;
    tape.sub(lse, picked)
}

/// Softmax probabilities of a plain logit slice.
pub fn probabilities(logits: &[Real]) -> Vec<Real> {
    let max = logits.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Class ids sorted by descending logit; ties break toward the lower id.
pub fn ranking(logits: &[Real]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..logits.len()).collect();
    ids.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .expect("logits are finite")
            .then(a.cmp(&b))
    });
    ids
}

/// First k entries of the deterministic ranking.
pub fn predict(logits: &[Real], k: usize) -> Result<Vec<usize>, Error> {
    if k == 0 || k > logits.len() {
        return Err(Error::Invalid(format!(
            "k = {k} outside 1..={}",
            logits.len()
        )));
    }
    Ok(ranking(logits).into_iter().take(k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{Tensor, ROUND_TOL};

    fn logit_var(tape: &mut Tape, values: &[Real]) -> Var {
        tape.var(Tensor::from_vec(&[values.len()], values.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn fuse_additive_identity() {
        let mut tape = Tape::new();
        let u = logit_var(&mut tape, &[0.3, -0.7, 0.2]);
        let z = logit_var(&mut tape, &[0.0, 0.0, 0.0]);
        let y = fuse(&mut tape, u, z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, -0.7, 0.2]);
    }

    #[test]
    fn fuse_opposites_cancel() {
        let mut tape = Tape::new();
        let u = logit_var(&mut tape, &[0.3, -0.7]);
        let v = logit_var(&mut tape, &[-0.3, 0.7]);
        let y = fuse(&mut tape, u, v).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn fuse_hand_sum() {
        let mut tape = Tape::new();
        let u = logit_var(&mut tape, &[0.1, -0.2]);
        let v = logit_var(&mut tape, &[0.3, 0.4]);
        let y = fuse(&mut tape, u, v).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] - 0.4).abs() < 1e-12 && (got[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fuse_length_mismatch() {
        let mut tape = Tape::new();
        let u = logit_var(&mut tape, &[0.1]);
        let v = logit_var(&mut tape, &[0.3, 0.4]);
        assert!(fuse(&mut tape, u, v).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_g() {
        for g in [2usize, 3, 10, 100] {
            let mut tape = Tape::new();
            let logits = logit_var(&mut tape, &vec![0.0; g]);
            let loss = cross_entropy(&mut tape, logits, 0).unwrap();
            assert!(
                (tape.value(loss).item() - (g as Real).ln()).abs() < ROUND_TOL,
                "G = {g}"
            );
        }
    }

    #[test]
    fn cross_entropy_derived_value() {
        // G=3, logits [1,0,0], target 0: -ln(e / (e + 2))
        let mut tape = Tape::new();
        let logits = logit_var(&mut tape, &[1.0, 0.0, 0.0]);
        let loss = cross_entropy(&mut tape, logits, 0).unwrap();
        let e = (1.0 as Real).exp();
        let expected = -(e / (e + 2.0)).ln();
        assert!((tape.value(loss).item() - expected).abs() < ROUND_TOL);
        assert!((tape.value(loss).item() as f64 - 0.551445).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let logits = logit_var(&mut tape, &[0.0, 0.0]);
        assert!(cross_entropy(&mut tape, logits, 2).is_err());
    }

    #[test]
    fn cross_entropy_nonnegative_and_decreasing_in_true_logit() {
        #[cfg(not(feature = "real32"))]
        let (steps, floor) = (30, 1e-8);
        #[cfg(feature = "real32")]
        let (steps, floor) = (12, 1e-4);
        let mut prev = Real::INFINITY;
        for step in 0..steps {
            let mut tape = Tape::new();
            let x = step as Real;
            let logits = logit_var(&mut tape, &[x, 0.0, 0.0]);
            let loss = cross_entropy(&mut tape, logits, 0).unwrap();
            let l = tape.value(loss).item();
            assert!(l >= 0.0);
            assert!(l < prev, "loss must fall as the true logit grows");
            prev = l;
        }
        assert!(prev < floor, "loss must approach 0");
    }

    #[cfg(not(feature = "real32"))]
    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let g = 2 + (seed % 7) as usize;
            let values: Vec<Real> = (0..g).map(|_| rng.normal() * 2.0).collect();
            let target = rng.below(g);
            let mut tape = Tape::new();
            let logits = logit_var(&mut tape, &values);
            let loss = cross_entropy(&mut tape, logits, target).unwrap();
            let grads = tape.backward(loss).unwrap();
            let analytic = tape.grad(&grads, logits);
            let probs = probabilities(&values);
            for i in 0..g {
                let expect = probs[i] - if i == target { 1.0 } else { 0.0 };
                assert!(
                    (analytic.data()[i] - expect).abs() < 1e-10,
                    "seed {seed}: closed-form gradient mismatch"
                );
            }
        }
    }

    #[test]
    fn predict_sorts_descending() {
        assert_eq!(predict(&[0.9, 0.1, 0.5], 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn predict_ties_break_to_lower_id() {
        assert_eq!(predict(&[0.5, 0.5, 0.5], 1).unwrap(), vec![0]);
        assert_eq!(predict(&[0.1, 0.5, 0.5], 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn predict_matches_exhaustive_sort_oracle() {
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let g = 3 + (seed % 10) as usize;
            let logits: Vec<Real> = (0..g).map(|_| rng.normal()).collect();
            // brute-force oracle: repeatedly pull the best remaining id
            let mut remaining: Vec<usize> = (0..g).collect();
            let mut oracle = Vec::new();
            while !remaining.is_empty() {
                let mut best = remaining[0];
                for &id in &remaining {
                    if logits[id] > logits[best] || (logits[id] == logits[best] && id < best) {
                        best = id;
                    }
                }
                oracle.push(best);
                remaining.retain(|&id| id != best);
            }
            for k in 1..=g {
                assert_eq!(predict(&logits, k).unwrap(), oracle[..k].to_vec());
            }
        }
    }

    #[test]
    fn predict_k_out_of_range() {
        assert!(predict(&[0.1, 0.2], 3).is_err());
        assert!(predict(&[0.1, 0.2], 0).is_err());
    }

    #[test]
    fn ranking_invariant_to_constant_shift() {
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let g = 2 + (seed % 8) as usize;
            let logits: Vec<Real> = (0..g).map(|_| rng.normal()).collect();
            let c = rng.range(-10.0, 10.0);
            let shifted: Vec<Real> = logits.iter().map(|&x| x + c).collect();
            assert_eq!(ranking(&logits), ranking(&shifted));
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let logits: Vec<Real> = (0..6).map(|_| rng.normal() * 3.0).collect();
            let p = probabilities(&logits);
            let sum: Real = p.iter().sum();
            assert!(((sum - 1.0) as f64).abs() < 1e-6);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn ranking_is_permutation() {
        let mut rng = Rng::new(78);
        let logits: Vec<Real> = (0..9).map(|_| rng.normal()).collect();
        let mut r = ranking(&logits);
        r.sort();
        assert_eq!(r, (0..9).collect::<Vec<_>>());
    }
}
