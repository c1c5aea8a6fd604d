//! Exponentiated-gradient updates of the group weights used by
//! distributionally robust training.

/// Nonnegative group weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DroState {
    pub lambda: Vec<f64>,
}

impl DroState {
    pub fn uniform(n_groups: usize) -> Self {
        Self {
            lambda: vec![1.0 / n_groups as f64; n_groups],
        }
    }

    /// Largest deviation of the weights from the simplex.
    pub fn simplex_error(&self) -> f64 {
        let sum_err = (self.lambda.iter().sum::<f64>() - 1.0).abs();
        let neg = self.lambda.iter().fold(0.0f64, |m, &l| m.max(-l));
        sum_err.max(neg)
    }
}

/// `λ_k ← λ_k·exp(η·g_k) / Σ_j λ_j·exp(η·g_j)` over the groups with a value.
///
/// Groups whose entry in `g` is `None` keep their weight, and the groups
/// that are updated share the mass they held before. The exponent is shifted
/// by its maximum so large `η·g` cannot overflow.
pub fn dro_update(state: &DroState, g: &[Option<f64>], eta: f64) -> DroState {
    let present: Vec<usize> = (0..state.lambda.len()).filter(|&k| g[k].is_some_and(f64::is_finite)).collect();
    if present.is_empty() || eta == 0.0 {
        return state.clone();
    }
    let first = g[present[0]].unwrap();
    if present.iter().all(|&k| g[k] == Some(first)) {
        return state.clone();
    }
    let mass: f64 = present.iter().map(|&k| state.lambda[k]).sum();
    if !(mass > 0.0) {
        return state.clone();
    }
    let logs: Vec<f64> = present.iter().map(|&k| state.lambda[k].ln() + eta * g[k].unwrap()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let mut lambda = state.lambda.clone();
    for (pos, &k) in present.iter().enumerate() {
        lambda[k] = mass * unnorm[pos] / z;
    }
    let total: f64 = lambda.iter().sum();
    for l in &mut lambda {
        *l /= total;
    }
    DroState { lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_values_and_zero_step_leave_state_unchanged() {
        let s = DroState { lambda: vec![0.2, 0.3, 0.5] };
        assert_eq!(dro_update(&s, &[Some(0.7); 3], 2.0), s);
        assert_eq!(dro_update(&s, &[Some(0.1), Some(5.0), Some(0.3)], 0.0), s);
    }

    #[test]
    fn two_group_closed_form() {
        let s = DroState::uniform(2);
        let e = std::f64::consts::E;
        let out = dro_update(&s, &[Some(1.0), Some(0.0)], 1.0);
        assert!((out.lambda[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((out.lambda[1] - 1.0 / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn absent_groups_are_frozen() {
        let s = DroState { lambda: vec![0.2, 0.3, 0.5] };
        let out = dro_update(&s, &[Some(1.0), None, Some(0.0)], 1.0);
        assert!((out.lambda[1] - 0.3).abs() < 1e-15);
        assert!((out.lambda[0] + out.lambda[2] - 0.7).abs() < 1e-15);
        assert!(out.lambda[0] > 0.2);
    }

    #[test]
    fn huge_exponents_do_not_overflow() {
        let s = DroState::uniform(3);
        let out = dro_update(&s, &[Some(1e6), Some(0.0), Some(-1e6)], 10.0);
        assert!(out.lambda.iter().all(|l| l.is_finite()));
        assert!(out.simplex_error() < 1e-12);
    }

    #[test]
    fn simplex_preserved_over_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let k = rng.random_range(1..6);
            let mut s = DroState::uniform(k);
            for _ in 0..50 {
                let g: Vec<Option<f64>> = (0..k)
                    .map(|_| if rng.random::<f64>() < 0.2 { None } else { Some(rng.random_range(0.0..5.0)) })
                    .collect();
                s = dro_update(&s, &g, rng.random_range(0.0..2.0));
                assert!(s.simplex_error() < 1e-12);
            }
        }
    }
}
