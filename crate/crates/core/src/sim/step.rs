use nalgebra::DVector;

use crate::calculus::CoefficientField;
use crate::error::{Error, Result};
use crate::interpretation::Interpretation;

/// Scratch buffers for repeated steps of one field.
#[derive(Debug, Clone)]
pub struct Stepper {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    predictor: Vec<f64>,
    midpoint: Vec<f64>,
}

impl Stepper {
    pub fn new(state_dim: usize, noise_dim: usize) -> Self {
        Stepper {
            drift: vec![0.0; state_dim],
            diffusion: vec![0.0; state_dim * noise_dim],
            predictor: vec![0.0; state_dim],
            midpoint: vec![0.0; state_dim],
        }
    }

    pub fn for_field<F: CoefficientField + ?Sized>(field: &F) -> Self {
        Stepper::new(field.state_dim(), field.noise_dim())
    }

    /// `x' = x + b(x) dt + Σ(x) dW` for an Itô-form field.
    pub fn euler<F: CoefficientField + ?Sized>(
        &mut self,
        field: &F,
        x: &[f64],
        dw: &[f64],
        dt: f64,
        out: &mut [f64],
    ) -> Result<()> {
        field.drift_into(x, &mut self.drift)?;
        field.diffusion_into(x, &mut self.diffusion)?;
        advance(x, &self.drift, &self.diffusion, dw, dt, out)
    }

    /// Predictor `x̂ = x + b(x) dt + Σ(x) dW`, then
    /// `x' = x + b(x) dt + Σ((1-α) x + α x̂) dW` for an α-form field.
    pub fn alpha_point<F: CoefficientField + ?Sized>(
        &mut self,
        field: &F,
        alpha: Interpretation,
        x: &[f64],
        dw: &[f64],
        dt: f64,
        out: &mut [f64],
    ) -> Result<()> {
        field.drift_into(x, &mut self.drift)?;
        field.diffusion_into(x, &mut self.diffusion)?;
        let a = alpha.alpha();
        if a == 0.0 {
            return advance(x, &self.drift, &self.diffusion, dw, dt, out);
        }
        advance(x, &self.drift, &self.diffusion, dw, dt, &mut self.predictor)?;
        for ((mid, xi), pi) in self.midpoint.iter_mut().zip(x).zip(&self.predictor) {
            *mid = (1.0 - a) * xi + a * pi;
        }
        field.diffusion_into(&self.midpoint, &mut self.diffusion)?;
        advance(x, &self.drift, &self.diffusion, dw, dt, out)
    }
}

#[inline]
fn advance(x: &[f64], drift: &[f64], diffusion: &[f64], dw: &[f64], dt: f64, out: &mut [f64]) -> Result<()> {
    let m = dw.len();
    for i in 0..x.len() {
        let row = &diffusion[i * m..(i + 1) * m];
        let mut noise = 0.0;
        for k in 0..m {
            noise += row[k] * dw[k];
        }
        let v = x[i] + drift[i] * dt + noise;
        if !v.is_finite() {
            return Err(Error::NonFinite("state after step"));
        }
        out[i] = v;
    }
    Ok(())
}

fn check_dims<F: CoefficientField + ?Sized>(field: &F, x: &[f64], dw: &[f64]) -> Result<()> {
    if x.len() != field.state_dim() {
        return Err(Error::Dimension {
            axis: "state",
            expected: field.state_dim(),
            found: x.len(),
        });
    }
    if dw.len() != field.noise_dim() {
        return Err(Error::Dimension {
            axis: "noise",
            expected: field.noise_dim(),
            found: dw.len(),
        });
    }
    Ok(())
}

/// One Euler–Maruyama step of an Itô-form field.
pub fn euler_step<F: CoefficientField + ?Sized>(field: &F, x: &[f64], dw: &[f64], dt: f64) -> Result<DVector<f64>> {
    check_dims(field, x, dw)?;
    let mut out = DVector::zeros(x.len());
    Stepper::for_field(field).euler(field, x, dw, dt, out.as_mut_slice())?;
    Ok(out)
}

/// One predictor–corrector step evaluating the diffusion at the α-point.
pub fn alpha_point_step<F: CoefficientField + ?Sized>(
    field: &F,
    alpha: Interpretation,
    x: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<DVector<f64>> {
    check_dims(field, x, dw)?;
    let mut out = DVector::zeros(x.len());
    Stepper::for_field(field).alpha_point(field, alpha, x, dw, dt, out.as_mut_slice())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{FnField, ScalarField, ScalarFn};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn deterministic_propagation() {
        let f = ScalarField {
            drift: ScalarFn::constant(0.3),
            diffusion: ScalarFn::constant(0.0),
        };
        let mut x = 1.0;
        for _ in 0..10 {
            x = euler_step(&f, &[x], &[0.7], 0.1).unwrap()[0];
        }
        assert_abs_diff_eq!(x, 1.3, epsilon = 1e-14);
    }

    #[test]
    fn gbm_single_step() {
        let g = ScalarField::gbm(0.0, 0.2);
        assert_abs_diff_eq!(euler_step(&g, &[1.0], &[0.1], 0.01).unwrap()[0], 1.02, epsilon = 1e-15);
        let g = ScalarField::gbm(0.05, 0.2);
        let plain = euler_step(&g, &[1.0], &[0.0], 0.01).unwrap()[0];
        assert_abs_diff_eq!(plain, 1.0005, epsilon = 1e-15);
    }

    #[test]
    fn alpha_zero_matches_euler() {
        let f = FnField::new(
            2,
            2,
            |x| DVector::from_vec(vec![x[1], -x[0]]),
            |x| DMatrix::from_row_slice(2, 2, &[x[0].sin(), 0.1, 0.2, x[1].cos()]),
        );
        let x = [0.4, -0.3];
        let dw = [0.05, -0.02];
        let a = alpha_point_step(&f, Interpretation::ITO, &x, &dw, 0.01).unwrap();
        let b = euler_step(&f, &x, &dw, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_point_on_gbm() {
        // x' = x (1 + mu dt + sigma dW + alpha sigma^2 dW^2)
        let (mu, sigma, a, dt, dw) = (0.05, 0.2, 0.5, 0.01, 0.1);
        let g = ScalarField::gbm(mu, sigma);
        let got = alpha_point_step(&g, Interpretation::new(a).unwrap(), &[2.0], &[dw], dt).unwrap()[0];
        let pred = 2.0 * (1.0 + mu * dt + sigma * dw);
        let expect = 2.0 + 2.0 * mu * dt + sigma * ((1.0 - a) * 2.0 + a * pred) * dw;
        assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_output_is_reported() {
        let f = ScalarField {
            drift: ScalarFn::Exp { scale: 1.0, rate: 1.0 },
            diffusion: ScalarFn::constant(0.0),
        };
        assert!(matches!(
            euler_step(&f, &[800.0], &[0.0], 1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            euler_step(&f, &[0.0, 1.0], &[0.0], 1.0),
            Err(Error::Dimension { axis: "state", .. })
        ));
    }
}
