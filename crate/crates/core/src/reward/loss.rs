//! Margin ranking loss over a labelled pool and its exact subgradient.
//!
//! For scores `r_1..r_n` listed in label order (index 0 holds rank 1):
//!
//! ```text
//! L = Σ_{i<j} max(0, r_j − r_i + (j − i)·λ)
//! ```
//!
//! A hinge term contributes to the subgradient only when strictly positive.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::encoder::EncodedPair;
use super::model::RewardModel;
use super::RewardError;

fn check_margin(margin: f64) -> Result<(), RewardError> {
    if margin > 0.0 && margin.is_finite() {
        Ok(())
    } else {
        Err(RewardError::Config(format!("margin must be > 0, got {margin}")))
    }
}

pub fn ranking_loss(scores: &[f64], margin: f64) -> Result<f64, RewardError> {
    check_margin(margin)?;
    let mut loss = 0.0;
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            loss += (scores[j] - scores[i] + (j - i) as f64 * margin).max(0.0);
        }
    }
    Ok(loss)
}

/// `∂L/∂r_k` for each score.
pub fn score_gradient(scores: &[f64], margin: f64) -> Vec<f64> {
    let mut g = vec![0.0; scores.len()];
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            if scores[j] - scores[i] + (j - i) as f64 * margin > 0.0 {
                g[j] += 1.0;
                g[i] -= 1.0;
            }
        }
    }
    g
}

/// Gradient over the scorer parameters. `W1` rows are stored only for input
/// features that were non-zero somewhere in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    hidden: usize,
    input_dim: usize,
    pub(crate) w1_rows: BTreeMap<usize, Vec<f64>>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
}

impl Gradient {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self { hidden, input_dim, w1_rows: BTreeMap::new(), b1: vec![0.0; hidden], w2: vec![0.0; hidden], b2: 0.0 }
    }

    pub fn add(&mut self, other: &Gradient) {
        for (f, row) in &other.w1_rows {
            let dst = self.w1_rows.entry(*f).or_insert_with(|| vec![0.0; self.hidden]);
            dst.iter_mut().zip(row).for_each(|(d, s)| *d += s);
        }
        self.b1.iter_mut().zip(&other.b1).for_each(|(d, s)| *d += s);
        self.w2.iter_mut().zip(&other.w2).for_each(|(d, s)| *d += s);
        self.b2 += other.b2;
    }

    /// Dense gradient in the model's flat parameter layout.
    pub fn to_dense(&self) -> Vec<f64> {
        let h = self.hidden;
        let mut v = vec![0.0; self.input_dim * h];
        for (f, row) in &self.w1_rows {
            v[f * h..(f + 1) * h].copy_from_slice(row);
        }
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn is_zero(&self) -> bool {
        self.b2 == 0.0
            && self.b1.iter().chain(&self.w2).all(|x| *x == 0.0)
            && self.w1_rows.values().flatten().all(|x| *x == 0.0)
    }
}

/// Loss and gradient of one pool whose pairs are listed in label order.
pub fn pool_gradient(model: &RewardModel, pairs: &[EncodedPair], margin: f64) -> Result<(f64, Gradient), RewardError> {
    check_margin(margin)?;
    let h = model.hidden();
    let mut grad = Gradient::zeros(model.input_dim(), h);
    let mut scores = Vec::with_capacity(pairs.len());
    let mut acts = Vec::with_capacity(pairs.len());
    for p in pairs {
        model.check_dim(p)?;
        let (r, a) = model.forward(p);
        scores.push(r);
        acts.push(a);
    }
    let loss = ranking_loss(&scores, margin)?;
    let dscore = score_gradient(&scores, margin);
    let w2 = &model.params()[model.w2_offset()..model.b2_offset()];

    for ((pair, act), &g) in pairs.iter().zip(&acts).zip(&dscore) {
        if g == 0.0 {
            continue;
        }
        grad.b2 += g;
        let delta: Vec<f64> = act.iter().zip(w2).map(|(a, w)| g * w * (1.0 - a * a)).collect();
        for k in 0..h {
            grad.w2[k] += g * act[k];
            grad.b1[k] += delta[k];
        }
        for (f, x) in pair.iter() {
            let row = grad.w1_rows.entry(f).or_insert_with(|| vec![0.0; h]);
            row.iter_mut().zip(&delta).for_each(|(r, d)| *r += x * d);
        }
    }
    Ok((loss, grad))
}

/// Sums items pairwise, level by level, in their given order.
pub(crate) fn tree_reduce<T>(mut items: Vec<T>, combine: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Total loss and summed gradient over a batch of pools.
///
/// Pools are evaluated in parallel and reduced pairwise in batch order, so the
/// result does not depend on thread scheduling.
pub fn batch_gradient(
    model: &RewardModel,
    pools: &[&[EncodedPair]],
    margin: f64,
) -> Result<(f64, Gradient), RewardError> {
    check_margin(margin)?;
    let per_pool: Vec<(f64, Gradient)> =
        pools.par_iter().map(|p| pool_gradient(model, p, margin)).collect::<Result<_, _>>()?;
    Ok(tree_reduce(per_pool, |(la, mut ga), (lb, gb)| {
        ga.add(&gb);
        (la + lb, ga)
    })
    .unwrap_or_else(|| (0.0, Gradient::zeros(model.input_dim(), model.hidden()))))
}

pub fn loss_gradient(model: &RewardModel, pools: &[&[EncodedPair]], margin: f64) -> Result<Gradient, RewardError> {
    batch_gradient(model, pools, margin).map(|(_, g)| g)
}

/// Total ranking loss of a batch under `model`.
pub fn batch_loss(model: &RewardModel, pools: &[&[EncodedPair]], margin: f64) -> Result<f64, RewardError> {
    let losses: Vec<f64> = pools
        .par_iter()
        .map(|p| {
            let scores = p.iter().map(|x| model.score(x)).collect::<Result<Vec<_>, _>>()?;
            ranking_loss(&scores, margin)
        })
        .collect::<Result<_, RewardError>>()?;
    Ok(tree_reduce(losses, |a, b| a + b).unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::encoder::EncoderConfig;
    use crate::reward::model::{ModelConfig, ModelMetadata};
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(ranking_loss(&[1.0, 0.5], 0.1).unwrap(), 0.0);
        assert!((ranking_loss(&[0.3, 0.5], 0.1).unwrap() - 0.3).abs() < 1e-12);
        assert!(ranking_loss(&[1.0, 0.9, 0.8], 0.1).unwrap().abs() < 1e-12);
        assert_eq!(ranking_loss(&[0.4], 0.1).unwrap(), 0.0);
        assert_eq!(ranking_loss(&[], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_positive_margin() {
        assert!(matches!(ranking_loss(&[1.0, 0.0], 0.0), Err(RewardError::Config(_))));
        assert!(matches!(ranking_loss(&[1.0, 0.0], -0.1), Err(RewardError::Config(_))));
    }

    #[test]
    fn kink_has_zero_subgradient() {
        // r_2 - r_1 + λ = 0 exactly.
        assert_eq!(score_gradient(&[0.5, 0.25], 0.25), vec![0.0, 0.0]);
        assert_eq!(score_gradient(&[0.3, 0.5], 0.1), vec![-1.0, 1.0]);
    }

    fn small_model(seed: u64) -> RewardModel {
        let cfg = ModelConfig { encoder: EncoderConfig { block_dim: 3, ..Default::default() }, hidden: 2 };
        RewardModel::initialize(&cfg, seed).unwrap()
    }

    #[test]
    fn single_violated_pair_matches_score_difference() {
        let mut m = small_model(1);
        // Non-zero output layer so that W1 receives gradient.
        let (w2, b2) = (m.w2_offset(), m.b2_offset());
        m.params_mut()[w2] = 0.5;
        m.params_mut()[w2 + 1] = -0.25;
        let _ = b2;
        let x1 = EncodedPair::from_dense(&[0.1, 0.0, 0.2, 0.0, 0.0, 0.3, 0.0, 1.0, 0.0]);
        let x2 = EncodedPair::from_dense(&[0.0, 0.4, 0.0, 0.5, 0.0, 0.0, 0.2, 0.0, 0.1]);
        let (r1, r2) = (m.score(&x1).unwrap(), m.score(&x2).unwrap());
        // Order so that the rank-2 candidate outscores the rank-1 candidate.
        let (first, second) = if r2 > r1 { (x1, x2) } else { (x2, x1) };
        let pool = vec![first.clone(), second.clone()];
        let g = loss_gradient(&m, &[&pool], 0.1).unwrap().to_dense();
        let g2 = pool_gradient(&m, &[second], 0.1).unwrap();
        assert!(g2.1.is_zero());
        // ∂(r_2 − r_1)/∂θ via the single-candidate gradient of score.
        let dr = |x: &EncodedPair| {
            let (_, a) = m.forward(x);
            let h = m.hidden();
            let w2v = &m.params()[m.w2_offset()..m.b2_offset()];
            let mut v = vec![0.0; m.params().len()];
            for (f, xv) in x.iter() {
                for k in 0..h {
                    v[f * h + k] = xv * w2v[k] * (1.0 - a[k] * a[k]);
                }
            }
            for k in 0..h {
                v[m.b1_offset() + k] = w2v[k] * (1.0 - a[k] * a[k]);
                v[m.w2_offset() + k] = a[k];
            }
            v[m.b2_offset()] = 1.0;
            v
        };
        let expected: Vec<f64> = dr(&pool[1]).iter().zip(dr(&pool[0])).map(|(a, b)| a - b).collect();
        for (a, b) in g.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn ordered_pools_have_zero_gradient() {
        let m = RewardModel::from_parameters(
            EncoderConfig::default(),
            1,
            1,
            vec![1.0, 0.0, 1.0, 0.0],
            ModelMetadata { seed: 0, margin: 0.1, epochs: 0 },
        )
        .unwrap();
        // tanh(2) − tanh(1) ≈ 0.2024 > 0.1, tanh(1) − tanh(0.2) ≈ 0.5642 > 0.1
        let pool: Vec<_> = [2.0, 1.0, 0.2].iter().map(|x| EncodedPair::from_dense(&[*x])).collect();
        assert!(loss_gradient(&m, &[&pool, &pool], 0.1).unwrap().is_zero());
    }

    #[test]
    fn tree_reduce_order() {
        let s = tree_reduce(vec!["a", "b", "c", "d", "e"].into_iter().map(String::from).collect(), |a, b| {
            format!("({a}{b})")
        });
        assert_eq!(s.unwrap(), "(((ab)(cd))e)");
        assert_eq!(tree_reduce(Vec::<String>::new(), |a, _| a), None);
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_shift_invariant(scores in prop::collection::vec(-3.0f64..3.0, 1..16),
                                                 shift in -5.0f64..5.0) {
            let l = ranking_loss(&scores, 0.1).unwrap();
            prop_assert!(l >= 0.0);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            prop_assert!((ranking_loss(&shifted, 0.1).unwrap() - l).abs() < 1e-9);
        }

        #[test]
        fn zero_iff_margins_hold(scores in prop::collection::vec(-3.0f64..3.0, 1..10)) {
            let l = ranking_loss(&scores, 0.1).unwrap();
            let ok = (0..scores.len()).all(|i| (i + 1..scores.len()).all(|j| scores[i] >= scores[j] + (j - i) as f64 * 0.1));
            prop_assert_eq!(l == 0.0, ok);
        }
    }
}
