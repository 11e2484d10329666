//! Training losses with their gradients.

use super::tensor::Real;

pub const BCE_CLAMP: f64 = 1e-7;
pub const MAX_POS_WEIGHT: f64 = 100.0;

/// Weighted binary cross-entropy, normalized by the total weight.
///
/// Returns the loss and its gradient with respect to `pred`. Predictions are
/// clamped to `[1e-7, 1 - 1e-7]`; clamped entries get zero gradient.
pub fn bce<T: Real>(pred: &[T], target: &[T], weight: &[T]) -> (T, Vec<T>) {
    assert!(pred.len() == target.len() && pred.len() == weight.len());
    let lo = T::of(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut wsum = T::zero();
    for &w in weight {
        wsum += w;
    }
    if wsum <= T::zero() {
        return (T::zero(), vec![T::zero(); pred.len()]);
    }
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for ((&p, &y), &w) in pred.iter().zip(target).zip(weight) {
        let pc = p.max(lo).min(hi);
        loss += -w * (y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        let g = if p < lo || p > hi { T::zero() } else { w * (pc - y) / (pc * (T::one() - pc)) };
        grad.push(g / wsum);
    }
    (loss / wsum, grad)
}

/// Per-element weights upweighting the positive class by negatives/positives,
/// clamped to `[1, 100]`.
pub fn balanced_weights<T: Real>(target: &[T]) -> Vec<T> {
    let half = T::of(0.5);
    let pos = target.iter().filter(|&&y| y > half).count();
    let neg = target.len() - pos;
    let wp = if pos == 0 { 1.0 } else { (neg as f64 / pos as f64).clamp(1.0, MAX_POS_WEIGHT) };
    let wp = T::of(wp);
    target.iter().map(|&y| if y > half { wp } else { T::one() }).collect()
}

/// `(pred - target)^2` and its derivative in `pred`.
pub fn loss_sq<T: Real>(pred: T, target: T) -> (T, T) {
    let d = pred - target;
    (d * d, d + d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_prediction_costs_ln2() {
        let target = [1.0f64, 0.0, 0.0, 0.0, 0.0, 1.0];
        let pred = [0.5; 6];
        let (l, _) = bce(&pred, &target, &balanced_weights(&target));
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn exact_prediction_costs_nothing() {
        let target = [1.0f64, 0.0, 1.0];
        let pred = [1.0 - 1e-7, 1e-7, 1.0];
        let (l, _) = bce(&pred, &target, &[1.0; 3]);
        assert!(l <= 1e-6);
    }

    #[test]
    fn bce_gradient_matches_central_differences() {
        let pred = [0.1f64, 0.35, 0.5, 0.62, 0.9, 0.27, 0.81, 0.44];
        let target = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let weight = [2.0, 1.0, 1.5, 1.0, 0.5, 3.0, 1.0, 1.0];
        let (_, g) = bce(&pred, &target, &weight);
        let h = 1e-6;
        for i in 0..8 {
            let mut a = pred;
            let mut b = pred;
            a[i] += h;
            b[i] -= h;
            let fd = (bce(&a, &target, &weight).0 - bce(&b, &target, &weight).0) / (2.0 * h);
            assert!((fd - g[i]).abs() / fd.abs().max(1e-12) < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn weights_are_clamped() {
        let mut t = vec![0.0f32; 1000];
        t[0] = 1.0;
        assert_eq!(balanced_weights(&t)[0], 100.0);
        let dense = vec![1.0f32, 1.0, 1.0, 0.0];
        assert_eq!(balanced_weights(&dense), vec![1.0; 4]);
    }

    #[test]
    fn squared_error_examples() {
        assert_eq!(loss_sq(1.5f64, 1.0), (0.25, 1.0));
        assert_eq!(loss_sq(2.0f64, 2.0), (0.0, 0.0));
    }
}
