//! Curvature-adjusted layer gains.
//!
//! For a layer block with gradient `g` and Hessian block `H`, the Tikhonov
//! surrogate `H~ = H + tau I` gives a strictly convex local model
//! `Q(d) = g.d + d.H~.d / 2` whose minimizer is `d* = -H~^{-1} g` with value
//! `-zeta2 / 2`, where `zeta2 = g.H~^{-1}.g`. The regularization bias of that
//! step is bounded by `tau / lambda_min(H~) * zeta2 / 2`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};

/// Largest block accepted in dense form.
pub const MAX_DENSE_DIM: usize = 512;

const SYMMETRY_RTOL: f64 = 1e-10;

/// Hessian block storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Dense(DMatrix<f64>),
    /// Diagonal approximation (e.g. a diagonal Fisher).
    Diagonal(DVector<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(m) => m.nrows(),
            Hessian::Diagonal(d) => d.len(),
        }
    }

    fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Dense(m) => m * v,
            Hessian::Diagonal(d) => d.component_mul(v),
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Dense(Cholesky<f64, Dyn>),
    Diagonal(DVector<f64>),
}

/// One layer's gradient, Hessian block and Tikhonov shift.
///
/// Construction factorizes `H + tau I` and fails with
/// [`Error::NotPositiveDefinite`] when it is not positive definite.
#[derive(Debug, Clone)]
pub struct LayerCurvature {
    g: DVector<f64>,
    h: Hessian,
    tau: f64,
    factor: Factor,
}

impl LayerCurvature {
    pub fn new(g: DVector<f64>, h: Hessian, tau: f64) -> Result<Self> {
        let p = g.len();
        if p == 0 {
            return Err(invalid("g", "block must have at least one parameter"));
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(invalid("tau", format!("must be finite and >= 0, got {tau}")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let factor = match &h {
            Hessian::Dense(m) => {
                if m.nrows() != p || m.ncols() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "gradient has {p} entries, Hessian is {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if p > MAX_DENSE_DIM {
                    return Err(invalid(
                        "H",
                        format!("dense blocks are limited to {MAX_DENSE_DIM}, got {p}; use a diagonal block"),
                    ));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("Hessian"));
                }
                let scale = m.amax().max(f64::MIN_POSITIVE);
                let asym = (m - m.transpose()).amax();
                if asym > SYMMETRY_RTOL * scale {
                    return Err(invalid("H", format!("not symmetric (max asymmetry {asym:e})")));
                }
                let shifted = m + DMatrix::identity(p, p) * tau;
                Factor::Dense(Cholesky::new(shifted).ok_or(Error::NotPositiveDefinite)?)
            }
            Hessian::Diagonal(d) => {
                if d.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "gradient has {p} entries, Hessian diagonal has {}",
                        d.len()
                    )));
                }
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("Hessian"));
                }
                let shifted = d.add_scalar(tau);
                if shifted.iter().any(|&v| v <= 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                Factor::Diagonal(shifted)
            }
        };
        Ok(Self { g, h, tau, factor })
    }

    pub fn dense(g: Vec<f64>, h: DMatrix<f64>, tau: f64) -> Result<Self> {
        Self::new(DVector::from_vec(g), Hessian::Dense(h), tau)
    }

    pub fn diagonal(g: Vec<f64>, h: Vec<f64>, tau: f64) -> Result<Self> {
        Self::new(DVector::from_vec(g), Hessian::Diagonal(DVector::from_vec(h)), tau)
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn hessian(&self) -> &Hessian {
        &self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Same block with a different shift.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.g.clone(), self.h.clone(), tau)
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Dense(chol) => chol.solve(rhs),
            Factor::Diagonal(d) => rhs.component_div(d),
        }
    }

    /// `H~ v` evaluated from the stored Hessian, not from the factor.
    fn shifted_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.h.mul_vec(v) + v * self.tau
    }

    fn lambda_min(&self) -> f64 {
        match &self.h {
            Hessian::Dense(m) => {
                let p = m.nrows();
                let shifted = m + DMatrix::identity(p, p) * self.tau;
                shifted.symmetric_eigenvalues().min()
            }
            Hessian::Diagonal(d) => d.min() + self.tau,
        }
    }
}

/// Gain, optimal step and regularization-bias diagnostics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    zeta2: f64,
    step: DVector<f64>,
    quad_value: f64,
    bias_lhs: f64,
    bias_rhs: f64,
    lambda_min: f64,
    tau: f64,
}

impl GainReport {
    pub fn zeta2(&self) -> f64 {
        self.zeta2
    }

    /// `d* = -H~^{-1} g`.
    pub fn step(&self) -> &DVector<f64> {
        &self.step
    }

    /// Directly evaluated `g.d* + d*.H~.d* / 2`.
    pub fn quad_value(&self) -> f64 {
        self.quad_value
    }

    /// `tau / 2 * |d*|^2`.
    pub fn bias_lhs(&self) -> f64 {
        self.bias_lhs
    }

    /// `tau / (2 lambda_min(H~)) * zeta2`.
    pub fn bias_rhs(&self) -> f64 {
        self.bias_rhs
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Computes the curvature-adjusted gain of a layer block.
pub fn compute_gain(curv: &LayerCurvature) -> GainReport {
    let g = curv.g();
    let solved = curv.solve(g);
    let zeta2 = g.dot(&solved).max(0.0);
    let step = -solved;
    let quad_value = g.dot(&step) + 0.5 * step.dot(&curv.shifted_mul(&step));
    let lambda_min = curv.lambda_min();
    let tau = curv.tau();
    GainReport {
        zeta2,
        quad_value,
        bias_lhs: 0.5 * tau * step.norm_squared(),
        bias_rhs: tau / (2.0 * lambda_min) * zeta2,
        step,
        lambda_min,
        tau,
    }
}

/// Relative regularization bias `tau / lambda_min(H~)`.
///
/// Lies in `(0, 1]` when `H` is positive semidefinite and `tau > 0`; zero when
/// `tau = 0`.
pub fn bias_ratio(report: &GainReport) -> f64 {
    report.tau / report.lambda_min
}

/// `L(theta + E^T d) - L(theta)` for a step `d` on the coordinates in `selector`.
pub fn realized_decrease<F>(objective: F, theta: &[f64], selector: &[usize], step: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if selector.len() != step.len() {
        return Err(Error::DimensionMismatch(format!(
            "selector has {} indices, step has {} entries",
            selector.len(),
            step.len()
        )));
    }
    let mut seen = vec![false; theta.len()];
    for &i in selector {
        if i >= theta.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: theta.len(),
            });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(invalid("selector", format!("index {i} repeated")));
        }
    }
    let base = objective(theta);
    let mut moved = theta.to_vec();
    for (&i, &d) in selector.iter().zip(step) {
        moved[i] += d;
    }
    let after = objective(&moved);
    if !base.is_finite() || !after.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(after - base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn identity_surrogate() {
        let c = LayerCurvature::dense(vec![3.0, 4.0], DMatrix::zeros(2, 2), 1.0).unwrap();
        let r = compute_gain(&c);
        assert!((r.zeta2() - 25.0).abs() < 1e-12);
        assert!((r.step()[0] + 3.0).abs() < 1e-12);
        assert!((r.step()[1] + 4.0).abs() < 1e-12);
        assert!((bias_ratio(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_inverse() {
        let dense = LayerCurvature::dense(vec![1.0, 2.0], m2(1.0, 0.0, 0.0, 3.0), 1.0).unwrap();
        let diag = LayerCurvature::diagonal(vec![1.0, 2.0], vec![1.0, 3.0], 1.0).unwrap();
        for c in [dense, diag] {
            let r = compute_gain(&c);
            assert!((r.zeta2() - 1.5).abs() < 1e-12);
            assert!((r.lambda_min() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_block_matches_explicit_inverse() {
        // [[2,1],[1,2]]^{-1} = [[2,-1],[-1,2]] / 3
        let c = LayerCurvature::dense(vec![1.0, 1.0], m2(2.0, 1.0, 1.0, 2.0), 0.0).unwrap();
        let r = compute_gain(&c);
        let inv = [[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]];
        let d0 = -(inv[0][0] + inv[0][1]);
        let d1 = -(inv[1][0] + inv[1][1]);
        assert!((r.step()[0] - d0).abs() < 1e-14 && (d0 + 1.0 / 3.0).abs() < 1e-15);
        assert!((r.step()[1] - d1).abs() < 1e-14);
        assert!((r.zeta2() - 2.0 / 3.0).abs() < 1e-14);
        assert!((r.quad_value() + r.zeta2() / 2.0).abs() < 1e-14);
        assert_eq!(bias_ratio(&r), 0.0);
    }

    #[test]
    fn bias_ratio_examples() {
        let r = compute_gain(&LayerCurvature::dense(vec![1.0, 1.0], m2(9.0, 0.0, 0.0, 9.0), 1.0).unwrap());
        assert!((bias_ratio(&r) - 0.1).abs() < 1e-12);
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let r = compute_gain(&LayerCurvature::dense(vec![1.0, 0.0], m2(2.0, 1.0, 1.0, 2.0), 0.5).unwrap());
        assert!((r.lambda_min() - 1.5).abs() < 1e-12);
        assert!((bias_ratio(&r) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_blocks() {
        let indefinite = m2(1.0, 0.0, 0.0, -1.0);
        assert!(matches!(
            LayerCurvature::dense(vec![1.0, 1.0], indefinite.clone(), 0.0),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(LayerCurvature::dense(vec![1.0, 1.0], indefinite, 1.5).is_ok());
        assert!(matches!(
            LayerCurvature::diagonal(vec![1.0], vec![-2.0], 1.0),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(matches!(
            LayerCurvature::dense(vec![1.0], m2(1.0, 0.0, 0.0, 1.0), 0.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            LayerCurvature::dense(vec![1.0, 1.0], m2(1.0, 0.5, 0.0, 1.0), 0.0),
            Err(Error::Invalid { .. })
        ));
        assert!(LayerCurvature::diagonal(vec![], vec![], 1.0).is_err());
        assert!(LayerCurvature::diagonal(vec![1.0], vec![1.0], -1.0).is_err());
    }

    #[test]
    fn zero_gradient_zero_gain() {
        let r = compute_gain(&LayerCurvature::diagonal(vec![0.0; 3], vec![1.0, 2.0, 3.0], 0.1).unwrap());
        assert_eq!(r.zeta2(), 0.0);
    }

    #[test]
    fn curvature_can_reverse_gradient_ranking() {
        // larger gradient in a stiff direction vs smaller gradient in a flat one
        let stiff = compute_gain(&LayerCurvature::diagonal(vec![3.0], vec![100.0], 0.0).unwrap());
        let flat = compute_gain(&LayerCurvature::diagonal(vec![1.0], vec![0.5], 0.0).unwrap());
        assert!(stiff.zeta2() < flat.zeta2());
        // isotropic curvature preserves the gradient-norm ranking
        let a = compute_gain(&LayerCurvature::diagonal(vec![3.0, 1.0], vec![2.0, 2.0], 0.0).unwrap());
        let b = compute_gain(&LayerCurvature::diagonal(vec![1.0, 1.0], vec![2.0, 2.0], 0.0).unwrap());
        assert!(a.zeta2() > b.zeta2());
    }

    #[test]
    fn realized_decrease_basic() {
        let f = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>();
        assert_eq!(realized_decrease(f, &[1.0, 2.0], &[0], &[0.0]).unwrap(), 0.0);
        assert_eq!(realized_decrease(f, &[1.0, 2.0], &[1], &[-2.0]).unwrap(), -4.0);
        assert!(realized_decrease(f, &[1.0], &[3], &[0.0]).is_err());
        assert!(realized_decrease(f, &[1.0, 1.0], &[0, 0], &[0.0, 0.0]).is_err());
        assert!(realized_decrease(f, &[1.0], &[0], &[]).is_err());
        let bad = |_: &[f64]| f64::NAN;
        assert!(matches!(realized_decrease(bad, &[1.0], &[0], &[1.0]), Err(Error::NonFinite(_))));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn block() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, f64)> {
            (1usize..8).prop_flat_map(|p| {
                (
                    Just(p),
                    prop::collection::vec(-1.0f64..1.0, p * p),
                    prop::collection::vec(-2.0f64..2.0, p),
                    0.05f64..2.0,
                )
            })
        }

        proptest! {
            #[test]
            fn surrogate_identity_and_bias_bound((p, m, g, tau) in block()) {
                let m = DMatrix::from_row_slice(p, p, &m);
                let h = m.transpose() * &m;
                let c = LayerCurvature::dense(g.clone(), h, tau).unwrap();
                let r = compute_gain(&c);
                prop_assert!((r.quad_value() + r.zeta2() / 2.0).abs() <= 1e-10 * (1.0 + r.zeta2()));
                prop_assert!(r.bias_lhs() <= r.bias_rhs() + 1e-10 * (1.0 + r.bias_rhs()));
                let ratio = bias_ratio(&r);
                prop_assert!(ratio > 0.0 && ratio <= 1.0 + 1e-12);
                prop_assert_eq!(r.zeta2() == 0.0, g.iter().all(|&v| v == 0.0));
            }
        }
    }
}
