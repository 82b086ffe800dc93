//! Weighted L2 and negative-order Sobolev norms on gridded fields.
//!
//! The equilibrium weight is a product over slots of
//! `exp(velocity_beta |v|^2 / 2 + confinement_scale A(x))`, which covers the
//! regimes in use: constant weight on tori without velocities, the Gaussian
//! velocity weight for kinetic fields, and the confinement weight on the
//! whole space. Negative Sobolev norms use the coefficient convention
//! `h_hat(k) = (1/L) integral h exp(-2 pi i k x / L) dx` and are defined as
//! `(sum_k (1 + (2 pi k / L)^2)^(-ell) |h_hat(k)|^2)^(1/2)`, truncated at the
//! grid Nyquist mode.

use crate::error::{Error, Result};
use crate::fourier::{wavenumbers, Spectral1d};
use crate::grid::{AxisKind, GridSpec, SignedGridField};
use crate::kernels::Confinement;
use crate::scalar::Scalar;

/// Per-slot weight `exp(velocity_beta |v|^2 / 2 + confinement_scale A(x))`.
#[derive(Debug, Clone, Copy)]
pub struct WeightSpec {
    pub velocity_beta: f64,
    pub confinement_scale: f64,
    pub confinement: Confinement,
}

impl WeightSpec {
    /// Constant weight: periodic position-only fields.
    pub fn uniform() -> Self {
        WeightSpec {
            velocity_beta: 0.0,
            confinement_scale: 0.0,
            confinement: Confinement::None,
        }
    }

    /// Gaussian velocity weight for kinetic fields on tori.
    pub fn kinetic_torus(beta: f64) -> Self {
        WeightSpec {
            velocity_beta: beta,
            confinement_scale: 0.0,
            confinement: Confinement::None,
        }
    }

    /// Confinement weight `exp(A)` for position-only whole-space fields.
    pub fn confined(confinement: Confinement) -> Self {
        WeightSpec {
            velocity_beta: 0.0,
            confinement_scale: 1.0,
            confinement,
        }
    }

    /// Full weight `exp(beta (|v|^2 / 2 + A))` for kinetic whole-space fields.
    pub fn kinetic_confined(beta: f64, confinement: Confinement) -> Self {
        WeightSpec {
            velocity_beta: beta,
            confinement_scale: beta,
            confinement,
        }
    }

    /// Weight at one slot coordinate.
    pub fn slot_weight(&self, spec: &GridSpec, coords: &[f64]) -> f64 {
        let mut vsq = 0.0;
        let mut pos = [0.0f64; 6];
        let mut npos = 0;
        for (axis, &c) in spec.axes.iter().zip(coords) {
            match axis.kind {
                AxisKind::Velocity => vsq += c * c,
                AxisKind::Position => {
                    pos[npos] = c;
                    npos += 1;
                }
            }
        }
        let a = self.confinement.potential(&pos[..npos]);
        (0.5 * self.velocity_beta * vsq + self.confinement_scale * a).exp()
    }
}

/// `(integral h^2 prod_s w(z_s) dz)^(1/2)` by midpoint quadrature.
pub fn weighted_l2<T: Scalar>(field: &SignedGridField<T>, weight: &WeightSpec) -> f64 {
    weighted_l2_squared(field, weight).sqrt()
}

/// Squared weighted L2 norm; exposed because unbiased noise subtraction
/// works at the level of the quadratic form.
pub fn weighted_l2_squared<T: Scalar>(field: &SignedGridField<T>, weight: &WeightSpec) -> f64 {
    let spec = field.spec();
    let order = field.order();
    let per_slot = field.cells_per_slot();
    // per-slot weights are reused across the tensor grid
    let mut w = vec![0.0f64; per_slot];
    let mut coords = vec![0.0f64; spec.axes.len()];
    let mut idx = vec![0usize; spec.axes.len()];
    for (slot, wv) in w.iter_mut().enumerate() {
        spec.unflatten_slot(slot, &mut idx);
        for (a, axis) in spec.axes.iter().enumerate() {
            coords[a] = axis.center(idx[a]);
        }
        *wv = weight.slot_weight(spec, &coords);
    }
    let vol = field.cell_volume();
    let mut acc = 0.0f64;
    let mut cell = vec![0usize; order];
    for (flat, &v) in field.values().iter().enumerate() {
        field.decompose(flat, &mut cell);
        let mut wc = 1.0;
        for &s in &cell {
            wc *= w[s];
        }
        let v = v.as_f64();
        acc += v * v * wc;
    }
    acc * vol
}

/// Negative Sobolev norm of a one-axis periodic field.
pub fn sobolev_neg_norm<T: Scalar + rustfft::FftNum>(
    field: &SignedGridField<T>,
    ell: usize,
) -> Result<f64> {
    sobolev_neg_squared(field, ell).map(f64::sqrt)
}

/// Squared negative Sobolev norm (the quadratic form itself).
pub fn sobolev_neg_squared<T: Scalar + rustfft::FftNum>(
    field: &SignedGridField<T>,
    ell: usize,
) -> Result<f64> {
    let spec = field.spec();
    if field.order() != 1 || spec.axes.len() != 1 {
        return Err(Error::Config(
            "negative Sobolev norm needs a one-axis, order-one field".into(),
        ));
    }
    let axis = &spec.axes[0];
    let n = axis.cells;
    let period = axis.hi - axis.lo;
    let fft = Spectral1d::<T>::new(n);
    let coeffs = fft.forward(field.values());
    let ks = wavenumbers(n, period);
    let mut acc = 0.0f64;
    for (c, &w) in coeffs.iter().zip(&ks) {
        let sym = (1.0 + w * w).powi(-(ell as i32));
        acc += sym * (c.re.as_f64().powi(2) + c.im.as_f64().powi(2));
    }
    Ok(acc)
}

/// A positive-semidefinite quadratic form on gridded fields. Evaluations
/// return `Q(h)`, the squared norm, so that unbiased sampling-noise
/// subtraction can operate on the form directly.
pub trait QuadraticForm<T: Scalar> {
    fn eval(&self, field: &SignedGridField<T>) -> Result<f64>;
    fn label(&self) -> String;
}

/// Weighted L2 form.
#[derive(Debug, Clone, Copy)]
pub struct WeightedL2Form(pub WeightSpec);

impl<T: Scalar> QuadraticForm<T> for WeightedL2Form {
    fn eval(&self, field: &SignedGridField<T>) -> Result<f64> {
        Ok(weighted_l2_squared(field, &self.0))
    }

    fn label(&self) -> String {
        let w = &self.0;
        if w.velocity_beta == 0.0 && w.confinement_scale == 0.0 {
            "l2".into()
        } else {
            format!("l2[vbeta={},ascale={}]", w.velocity_beta, w.confinement_scale)
        }
    }
}

/// Negative Sobolev form of fixed order.
#[derive(Debug, Clone, Copy)]
pub struct SobolevNegForm(pub usize);

impl<T: Scalar + rustfft::FftNum> QuadraticForm<T> for SobolevNegForm {
    fn eval(&self, field: &SignedGridField<T>) -> Result<f64> {
        sobolev_neg_squared(field, self.0)
    }

    fn label(&self) -> String {
        format!("h-{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AxisSpec, GridSpec};

    #[test]
    fn uniform_weight_matches_plain_l2() {
        let spec = GridSpec::torus(64, 1.0).unwrap();
        let f = SignedGridField::<f64>::from_fn(spec, 2, |c| (c[0] - c[1]).sin()).unwrap();
        let a = weighted_l2(&f, &WeightSpec::uniform());
        let b = f.l2_norm();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn gaussian_velocity_weight_closed_form() {
        // integral M^2 exp(beta v^2 / 2) dv = sqrt(beta / (2 pi)) for the
        // Maxwellian M, so the weighted norm is (beta / (2 pi))^(1/4)
        for &beta in &[1.0f64, 2.5] {
            let axis = AxisSpec::velocity(512, -8.0 / beta.sqrt(), 8.0 / beta.sqrt());
            let spec = GridSpec::new(vec![axis]).unwrap();
            let f = SignedGridField::<f64>::from_fn(spec, 1, |c| {
                (beta / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * beta * c[0] * c[0]).exp()
            })
            .unwrap();
            let got = weighted_l2(&f, &WeightSpec::kinetic_torus(beta));
            let want = (beta / (2.0 * std::f64::consts::PI)).powf(0.25);
            assert!((got - want).abs() < 1e-8, "beta = {beta}: {got} vs {want}");
        }
    }

    #[test]
    fn confinement_weight_closed_form() {
        // h = exp(-lambda x^2 / 2) with weight exp(A), A = lambda x^2 / 2:
        // integral h^2 exp(A) = integral exp(-lambda x^2 / 2) = sqrt(2 pi / lambda)
        let lambda = 1.7f64;
        let axis = AxisSpec::position(512, -8.0 / lambda.sqrt(), 8.0 / lambda.sqrt());
        let spec = GridSpec::new(vec![axis]).unwrap();
        let f =
            SignedGridField::<f64>::from_fn(spec, 1, |c| (-0.5 * lambda * c[0] * c[0]).exp())
                .unwrap();
        let got = weighted_l2(
            &f,
            &WeightSpec::confined(Confinement::Quadratic { lambda }),
        );
        let want = (2.0 * std::f64::consts::PI / lambda).sqrt().sqrt();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn product_weight_spans_slots() {
        // order-2 field h(x1, x2) = g(x1) g(x2) factorizes, so the weighted
        // norm is the square of the order-1 norm
        let beta = 1.0;
        let axis = AxisSpec::velocity(256, -8.0, 8.0);
        let spec = GridSpec::new(vec![axis]).unwrap();
        let g = |v: f64| (-0.5 * beta * v * v).exp() * (1.0 + 0.3 * v);
        let f1 = SignedGridField::<f64>::from_fn(spec.clone(), 1, |c| g(c[0])).unwrap();
        let f2 = SignedGridField::<f64>::from_fn(spec, 2, |c| g(c[0]) * g(c[1])).unwrap();
        let w = WeightSpec::kinetic_torus(beta);
        let n1 = weighted_l2(&f1, &w);
        let n2 = weighted_l2(&f2, &w);
        assert!((n2 - n1 * n1).abs() < 1e-10, "{n2} vs {}", n1 * n1);
    }

    #[test]
    fn sobolev_norm_of_a_single_mode() {
        // h = cos(2 pi x) on the unit torus: h_hat(+-1) = 1/2, so the order-1
        // negative norm is (1/2)^(1/2) (1 + 4 pi^2)^(-1/2)
        let spec = GridSpec::torus(256, 1.0).unwrap();
        let f = SignedGridField::<f64>::from_fn(spec, 1, |c| {
            (2.0 * std::f64::consts::PI * c[0]).cos()
        })
        .unwrap();
        let got = sobolev_neg_norm(&f, 1).unwrap();
        let want = 0.5f64.sqrt() / (1.0 + 4.0 * std::f64::consts::PI.powi(2)).sqrt();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // ell = 0 reduces to the plain coefficient norm, 1/sqrt(2)
        let flat = sobolev_neg_norm(&f, 0).unwrap();
        assert!((flat - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sobolev_norm_damps_high_modes_harder() {
        let spec = GridSpec::torus(256, 1.0).unwrap();
        let low = SignedGridField::<f64>::from_fn(spec.clone(), 1, |c| {
            (2.0 * std::f64::consts::PI * c[0]).cos()
        })
        .unwrap();
        let high = SignedGridField::<f64>::from_fn(spec, 1, |c| {
            (2.0 * std::f64::consts::PI * 8.0 * c[0]).cos()
        })
        .unwrap();
        // same L2 size, but the high mode shrinks in the negative norm by
        // (1 + 4 pi^2) / (1 + 256 pi^2), a factor of about 62
        let nl = sobolev_neg_norm(&low, 2).unwrap();
        let nh = sobolev_neg_norm(&high, 2).unwrap();
        let want = nl * (1.0 + 4.0 * std::f64::consts::PI.powi(2))
            / (1.0 + 256.0 * std::f64::consts::PI.powi(2));
        assert!((nh - want).abs() < 1e-12 * nl, "low {nl}, high {nh}, want {want}");
    }

    #[test]
    fn sobolev_norm_rejects_multi_axis_fields() {
        let spec = GridSpec::new(vec![
            AxisSpec::position(16, 0.0, 1.0),
            AxisSpec::position(16, 0.0, 1.0),
        ])
        .unwrap();
        let f = SignedGridField::<f64>::zeros(spec, 1).unwrap();
        assert!(sobolev_neg_norm(&f, 2).is_err());
    }
}
