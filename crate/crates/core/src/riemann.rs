//! Interface numerics: straight-line path, DOT flux, path-integrated jump
//! term and the Rusanov flux of the reference scheme.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::system::{Model, UnifiedSystem};

pub use crate::linalg::matrix_abs;

/// Which matrix the DOT dissipation integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dissipation {
    /// `|∂F/∂Q + B(Q)|`: every wave of the unified system is upwinded,
    /// adjoint transport included.
    #[default]
    QuasiLinear,
    /// `|∂F/∂Q|`: only the conservative flux is upwinded.
    FluxJacobian,
}

/// Quadrature on `[0, 1]` for path integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct PathQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for PathQuadrature {
    fn default() -> Self {
        Self::gauss_legendre_3()
    }
}

impl PathQuadrature {
    /// Three-point Gauss-Legendre, exact to degree 5.
    pub fn gauss_legendre_3() -> Self {
        let h = 0.5 * (0.6f64).sqrt();
        Self {
            nodes: vec![0.5 - h, 0.5, 0.5 + h],
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
        }
    }

    pub fn midpoint() -> Self {
        Self {
            nodes: vec![0.5],
            weights: vec![1.0],
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// `Ψ(s) = Q_L + s (Q_R − Q_L)`.
pub fn segment_path(ql: &DVector<f64>, qr: &DVector<f64>, s: f64) -> DVector<f64> {
    ql + (qr - ql) * s
}

/// DOT flux `½(F(Q_L) + F(Q_R)) − η ½ ∫₀¹ |A(Ψ)| Ψ' ds`.
pub fn dot_flux(
    sys: &UnifiedSystem<'_>,
    ql: &DVector<f64>,
    qr: &DVector<f64>,
    eta: f64,
    quad: &PathQuadrature,
) -> Result<DVector<f64>> {
    let jump = qr - ql;
    let mut flux = (sys.flux(ql.as_slice()) + sys.flux(qr.as_slice())) * 0.5;
    if jump.iter().all(|v| *v == 0.0) {
        return Ok(flux);
    }
    let mut avg = DMatrix::zeros(jump.len(), jump.len());
    for (s, w) in quad.iter() {
        avg += sys.dissipation_matrix(segment_path(ql, qr, s).as_slice())? * w;
    }
    flux -= avg * jump * (0.5 * eta);
    Ok(flux)
}

/// Jump term `D̃ = η ½ ∫₀¹ B(Ψ) Ψ' ds`.
pub fn jump_term(
    sys: &UnifiedSystem<'_>,
    ql: &DVector<f64>,
    qr: &DVector<f64>,
    eta: f64,
    quad: &PathQuadrature,
) -> Result<DVector<f64>> {
    let jump = qr - ql;
    let mut out = DVector::zeros(jump.len());
    if jump.iter().all(|v| *v == 0.0) {
        return Ok(out);
    }
    for (s, w) in quad.iter() {
        out += sys.nonconservative(segment_path(ql, qr, s).as_slice())? * &jump * w;
    }
    Ok(out * (0.5 * eta))
}

/// Flux and jump term of one interface, sharing the path evaluations.
pub fn interface_terms(
    sys: &UnifiedSystem<'_>,
    ql: &DVector<f64>,
    qr: &DVector<f64>,
    eta: f64,
    jump_eta: f64,
    quad: &PathQuadrature,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let jump = qr - ql;
    let dim = jump.len();
    let mut flux = (sys.flux(ql.as_slice()) + sys.flux(qr.as_slice())) * 0.5;
    if jump.iter().all(|v| *v == 0.0) {
        return Ok((flux, DVector::zeros(dim)));
    }
    let mut b_avg = DMatrix::zeros(dim, dim);
    let mut abs_avg = DMatrix::zeros(dim, dim);
    for (s, w) in quad.iter() {
        let psi = segment_path(ql, qr, s);
        let bm = sys.nonconservative(psi.as_slice())?;
        abs_avg += sys.dissipation_matrix_with(psi.as_slice(), &bm)? * w;
        b_avg += bm * w;
    }
    flux -= abs_avg * &jump * (0.5 * eta);
    let d = b_avg * jump * (0.5 * jump_eta);
    Ok((flux, d))
}

/// Largest `|λ|` of `∂R/∂U`.
pub fn spectral_radius(model: &dyn Model, u: &[f64], b: &[f64]) -> Result<f64> {
    let speeds = match model.wave_speeds(u, b) {
        Some(v) => v,
        None => crate::linalg::real_eigenvalues(&model.flux_jacobian_state(u, b))?,
    };
    Ok(speeds.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Rusanov flux `½(R_L + R_R) − ½ λ (U_R − U_L)` with `λ` the larger of
/// the two cells' spectral radii.
pub fn rusanov_flux(
    model: &dyn Model,
    ul: &[f64],
    bl: &[f64],
    ur: &[f64],
    br: &[f64],
) -> Result<DVector<f64>> {
    let lambda = spectral_radius(model, ul, bl)?.max(spectral_radius(model, ur, br)?);
    let fl = model.flux(ul, bl);
    let fr = model.flux(ur, br);
    let jump = DVector::from_column_slice(ur) - DVector::from_column_slice(ul);
    Ok((fl + fr) * 0.5 - jump * (0.5 * lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Burgers, ShallowWater};
    use crate::system::MeasurementData;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn quadrature_weights_sum_to_one() {
        let q = PathQuadrature::default();
        assert_abs_diff_eq!(q.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(q.nodes().iter().all(|s| (0.0..=1.0).contains(s)));
        // exact for s^5
        let approx: f64 = q.iter().map(|(s, w)| w * s.powi(5)).sum();
        assert_abs_diff_eq!(approx, 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn segment_path_endpoints_and_midpoint() {
        let a = v(&[0.0, 1.0]);
        let b = v(&[2.0, -1.0]);
        assert_eq!(segment_path(&a, &b, 0.0), a);
        assert_eq!(segment_path(&a, &b, 1.0), b);
        assert_eq!(segment_path(&a, &b, 0.5), v(&[1.0, 0.0]));
    }

    #[test]
    fn burgers_dot_flux_hand_values() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let quad = PathQuadrature::default();
        let f = dot_flux(&sys, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), 1.0, &quad).unwrap();
        assert_abs_diff_eq!(f[0], 0.5, epsilon = 1e-14);
        let f = dot_flux(&sys, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), -1.0, &quad).unwrap();
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn dot_flux_is_consistent() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let q = v(&[0.3, -2.0]);
        let f = dot_flux(&sys, &q, &q, 1.0, &PathQuadrature::default()).unwrap();
        assert_eq!(f, sys.flux(q.as_slice()));
    }

    #[test]
    fn burgers_jump_term_hand_value() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let d = jump_term(&sys, &v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 1.0, &PathQuadrature::default())
            .unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.25, epsilon = 1e-14);
        let zero = jump_term(&sys, &v(&[1.0, 2.0]), &v(&[1.0, 2.0]), 1.0, &PathQuadrature::default())
            .unwrap();
        assert_eq!(zero, DVector::zeros(2));
    }

    #[test]
    fn swe_dissipation_speeds_at_rest() {
        let swe = ShallowWater::new(0.01);
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&swe, &meas);
        let q = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let abs = sys.dissipation_matrix(&q).unwrap();
        let eig = crate::linalg::real_eigenvalues(&abs).unwrap();
        let nonzero: Vec<f64> = eig.into_iter().filter(|l| l.abs() > 1e-9).collect();
        assert!(nonzero.iter().all(|l| (l - 1.0).abs() < 1e-10));
        assert!(!nonzero.is_empty());
    }

    #[test]
    fn rusanov_hand_values() {
        let f = rusanov_flux(&Burgers, &[1.0], &[], &[0.0], &[]).unwrap();
        assert_abs_diff_eq!(f[0], 0.75, epsilon = 1e-15);
        let f = rusanov_flux(&Burgers, &[0.4], &[], &[0.4], &[]).unwrap();
        assert_abs_diff_eq!(f[0], 0.08, epsilon = 1e-15);
        let swe = ShallowWater::new(0.01);
        let f = rusanov_flux(&swe, &[1.0, 0.0], &[0.0], &[1.0, 0.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], 50.0, epsilon = 1e-12);
    }

    #[test]
    fn rusanov_dissipates_more_than_dot_for_burgers_jump() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let central = 0.25;
        let dot = dot_flux(&sys, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), 1.0, &PathQuadrature::default())
            .unwrap()[0];
        let rus = rusanov_flux(&Burgers, &[1.0], &[], &[0.0], &[]).unwrap()[0];
        assert_abs_diff_eq!(dot - central, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(rus - central, 0.5, epsilon = 1e-14);
    }
}
