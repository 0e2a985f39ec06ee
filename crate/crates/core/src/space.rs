//! Real ℓ_p^n geometry for 1 < p < ∞.
//!
//! Elements are plain coordinate vectors. The space carries the exponent and
//! supplies norms, norming functionals and the power-type smoothness bound
//! ρ(u) ≤ γ u^q used by every rate estimate in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{GreedyError, Result};

/// A point of the space: its coordinates.
pub type Element = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceLp {
    pub dim: usize,
    pub p: f64,
}

/// Power-type bound ρ(u) ≤ γ u^q on the modulus of smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub gamma: f64,
    pub q: f64,
}

impl SmoothnessParams {
    /// ρ̂(u) = γ u^q.
    pub fn rho(&self, u: f64) -> f64 {
        self.gamma * u.abs().powf(self.q)
    }

    /// The exponent q/(q−1) dual to q. This is the exponent that appears in
    /// every rate bound of the form (1 + Σ t_k^{q'})^{−1/q'}.
    pub fn q_dual(&self) -> f64 {
        self.q / (self.q - 1.0)
    }
}

/// A linear functional on the space, evaluated as a dot product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualFunctional {
    pub coords: Vec<f64>,
}

impl DualFunctional {
    pub fn zero(dim: usize) -> Self {
        DualFunctional { coords: vec![0.0; dim] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.coords.len());
        self.coords.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Norm in ℓ_{p'}, the dual of the given space.
    pub fn dual_norm(&self, space: &SpaceLp) -> f64 {
        lp_norm(&self.coords, space.dual_exponent())
    }
}

impl SpaceLp {
    pub fn new(dim: usize, p: f64) -> Result<Self> {
        if dim == 0 {
            return Err(GreedyError::invalid("dim", "must be at least 1"));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(GreedyError::invalid("p", format!("need 1 < p < inf, got {p}")));
        }
        Ok(SpaceLp { dim, p })
    }

    pub fn is_hilbert(&self) -> bool {
        self.p == 2.0
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(GreedyError::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(())
    }

    /// p' = p/(p−1).
    pub fn dual_exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// ‖x‖_p. Panics in debug builds on a dimension mismatch; see
    /// [`SpaceLp::try_norm`] for the checked version.
    pub fn norm(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        lp_norm(x, self.p)
    }

    pub fn try_norm(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(lp_norm(x, self.p))
    }

    /// The unique norming functional of `f`: F(f) = ‖f‖, ‖F‖_{p'} = 1.
    pub fn norming_functional(&self, f: &[f64]) -> Result<DualFunctional> {
        self.check_dim(f)?;
        let nf = self.norm(f);
        if nf == 0.0 {
            return Err(GreedyError::ZeroVector);
        }
        Ok(self.norming_functional_with_norm(f, nf))
    }

    /// Same as [`SpaceLp::norming_functional`] when ‖f‖ > 0 is already known.
    pub fn norming_functional_with_norm(&self, f: &[f64], nf: f64) -> DualFunctional {
        let pm1 = self.p - 1.0;
        let coords = if self.is_hilbert() {
            f.iter().map(|x| x / nf).collect()
        } else {
            f.iter().map(|x| x.signum() * (x.abs() / nf).powf(pm1)).collect()
        };
        DualFunctional { coords }
    }

    /// (γ, q) with ρ(u) ≤ γu^q: q = 2, γ = (p−1)/2 for p ≥ 2, and q = p,
    /// γ = 1/p for p ≤ 2.
    pub fn smoothness_params(&self) -> SmoothnessParams {
        if self.p >= 2.0 {
            SmoothnessParams { gamma: (self.p - 1.0) / 2.0, q: 2.0 }
        } else {
            SmoothnessParams { gamma: 1.0 / self.p, q: self.p }
        }
    }

    /// Returns `(lhs, rhs)` with lhs = ‖x+uy‖ − ‖x‖ − uF_x(y) and
    /// rhs = 2‖x‖ρ̂(u‖y‖/‖x‖). Expected: 0 ≤ lhs ≤ rhs.
    pub fn smoothness_inequality_check(&self, x: &[f64], y: &[f64], u: f64) -> Result<(f64, f64)> {
        self.check_dim(y)?;
        let fx = self.norming_functional(x)?;
        let nx = self.norm(x);
        let shifted: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + u * b).collect();
        let lhs = self.norm(&shifted) - nx - u * fx.eval(y);
        let rhs = 2.0 * nx * self.smoothness_params().rho(u * self.norm(y) / nx);
        Ok((lhs, rhs))
    }
}

/// ξ = min(2, (θt/γ)^{1/(q−1)}), the positive root of γu^q = θtu clamped to 2.
pub fn xi_solve(params: SmoothnessParams, t: f64, theta: f64) -> f64 {
    (theta * t / params.gamma).powf(1.0 / (params.q - 1.0)).min(2.0)
}

/// ℓ_p norm with max-scaling so tiny and huge vectors do not under/overflow.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m == 0.0 || !m.is_finite() {
            return m;
        }
        if m > 1e-150 && m < 1e150 {
            return x.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        return m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt();
    }
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `a − b`.
pub fn sub(a: &[f64], b: &[f64]) -> Element {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + s·b`.
pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Element {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn scaled(s: f64, a: &[f64]) -> Element {
    a.iter().map(|x| s * x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn norms() {
        let s2 = SpaceLp::new(2, 2.0).unwrap();
        assert_eq!(s2.norm(&[3.0, 4.0]), 5.0);
        assert_eq!(s2.norm(&[0.0, 0.0]), 0.0);
        let s4 = SpaceLp::new(2, 4.0).unwrap();
        assert_abs_diff_eq!(s4.norm(&[1.0, 1.0]), 2f64.powf(0.25), epsilon = 1e-15);
        assert_abs_diff_eq!(s4.norm(&[1.0, 1.0]), 1.189207, epsilon = 1e-6);
        assert!(s4.try_norm(&[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(SpaceLp::new(3, 1.0).is_err());
        assert!(SpaceLp::new(3, f64::INFINITY).is_err());
        assert!(SpaceLp::new(0, 2.0).is_err());
    }

    #[test]
    fn norming_functional_examples() {
        let s2 = SpaceLp::new(2, 2.0).unwrap();
        let f = s2.norming_functional(&[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(f.coords[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(f.coords[1], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(&[3.0, 4.0]), 5.0, epsilon = 1e-14);

        let s4 = SpaceLp::new(2, 4.0).unwrap();
        let f = s4.norming_functional(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.coords[0], 2f64.powf(-0.75), epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(&[1.0, 1.0]), 2f64.powf(0.25), epsilon = 1e-14);

        assert!(matches!(s2.norming_functional(&[0.0, 0.0]), Err(GreedyError::ZeroVector)));
    }

    #[test]
    fn smoothness_table() {
        let p = |p| SpaceLp::new(1, p).unwrap().smoothness_params();
        assert_eq!(p(2.0), SmoothnessParams { gamma: 0.5, q: 2.0 });
        assert_eq!(p(4.0), SmoothnessParams { gamma: 1.5, q: 2.0 });
        let s = p(1.5);
        assert_abs_diff_eq!(s.gamma, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s.q, 1.5);
        assert_eq!(p(3.0).q_dual(), 2.0);
        assert_abs_diff_eq!(p(1.5).q_dual(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn xi_examples() {
        let h = SmoothnessParams { gamma: 0.5, q: 2.0 };
        assert_abs_diff_eq!(xi_solve(h, 1.0, 0.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xi_solve(h, 0.1, 0.25), 0.05, epsilon = 1e-15);
        assert_eq!(xi_solve(SmoothnessParams { gamma: 0.01, q: 2.0 }, 1.0, 0.5), 2.0);
    }

    #[test]
    fn sandwich_examples() {
        let s = SpaceLp::new(2, 2.0).unwrap();
        let (l, r) = s.smoothness_inequality_check(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
        let (l, r) = s.smoothness_inequality_check(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(l, 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn extreme_scales_do_not_underflow() {
        let s = SpaceLp::new(2, 4.0).unwrap();
        let tiny = [1e-120, 1e-120];
        assert_abs_diff_eq!(s.norm(&tiny) / 1e-120, 2f64.powf(0.25), epsilon = 1e-14);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    fn exponent() -> impl Strategy<Value = f64> {
        prop_oneof![Just(1.5), Just(2.0), Just(3.0), Just(4.0), 1.05f64..6.0]
    }

    proptest! {
        #[test]
        fn norming_duality(p in exponent(), f in vec_strategy(5), g in vec_strategy(5)) {
            let s = SpaceLp::new(5, p).unwrap();
            prop_assume!(s.norm(&f) > 1e-6);
            let ff = s.norming_functional(&f).unwrap();
            prop_assert!((ff.eval(&f) - s.norm(&f)).abs() <= 1e-9 * s.norm(&f).max(1.0));
            prop_assert!((ff.dual_norm(&s) - 1.0).abs() <= 1e-9);
            prop_assert!(ff.eval(&g).abs() <= s.norm(&g) * (1.0 + 1e-9) + 1e-12);
            let p_recip = 1.0 / p + 1.0 / s.dual_exponent();
            prop_assert!((p_recip - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn norming_homogeneous(p in exponent(), f in vec_strategy(4), c in 0.01f64..100.0) {
            let s = SpaceLp::new(4, p).unwrap();
            prop_assume!(s.norm(&f) > 1e-6);
            let a = s.norming_functional(&f).unwrap();
            let b = s.norming_functional(&scaled(c, &f)).unwrap();
            for (x, y) in a.coords.iter().zip(&b.coords) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn sandwich_holds(p in exponent(), x in vec_strategy(6), y in vec_strategy(6), u in -5.0f64..5.0) {
            let s = SpaceLp::new(6, p).unwrap();
            prop_assume!(s.norm(&x) > 1e-3);
            let (lhs, rhs) = s.smoothness_inequality_check(&x, &y, u).unwrap();
            prop_assert!(lhs >= -1e-9);
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn xi_root_and_monotone(gamma in 0.01f64..3.0, q in 1.01f64..2.0, t in 0.01f64..1.0, dt in 0.0f64..0.5, theta in 0.01f64..0.5) {
            let sp = SmoothnessParams { gamma, q };
            let u = xi_solve(sp, t, theta);
            prop_assert!(gamma * u.powf(q) <= theta * t * u + 1e-12);
            let t2 = (t + dt).min(1.0);
            prop_assert!(xi_solve(sp, t2, theta) >= u);
        }
    }
}
