use crate::numcore::Scalar;

/// BPR loss `-ln σ(s_pos - s_neg)` and its gradients with respect to
/// `(s_pos, s_neg)`, evaluated in softplus form so large margins neither
/// overflow nor lose the tail.
pub fn bpr_loss<T: Scalar>(s_pos: T, s_neg: T) -> (T, T, T) {
    let x = s_pos - s_neg;
    let loss = softplus(-x);
    let g = -sigmoid(-x);
    (loss, g, -g)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_scores_give_ln2() {
        let (l, gp, gn) = bpr_loss(0.3f64, 0.3);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(gp, -0.5);
        assert_eq!(gn, 0.5);
    }

    #[test]
    fn saturation_without_overflow() {
        let (l, gp, _) = bpr_loss(50.0f64, 0.0);
        assert!(l > 0.0 && l < 1e-20);
        assert!(gp < 0.0);
        let (l, gp, _) = bpr_loss(-1000.0f64, 0.0);
        assert!((l - 1000.0).abs() < 1e-9);
        assert!((gp + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_margin() {
        // ln(1 + e^-1)
        let (l, _, _) = bpr_loss(1.0f64, 0.0);
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn shift_invariant_and_negative_gradient(a in -500.0f64..500.0, b in -500.0f64..500.0, c in -100.0f64..100.0) {
            let (l1, g1, _) = bpr_loss(a, b);
            let (l2, g2, _) = bpr_loss(a + c, b + c);
            // the shifted difference is recomputed, so allow rounding of the margin
            let tol = 1e-9 * (1.0 + l1.abs());
            prop_assert!((l1 - l2).abs() <= tol);
            prop_assert!((g1 - g2).abs() <= 1e-9);
            prop_assert!(g1 < 0.0 || (a - b) > 700.0);
            prop_assert!(l1 >= 0.0);
        }
    }
}
