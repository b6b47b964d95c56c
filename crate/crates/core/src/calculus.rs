//! Drift corrections between stochastic-integral interpretations.
//!
//! For `dX = b(X) dt + Σ(X) ∘_α dW` the same process solves
//! `dX = (b(X) + (α - γ) c(X)) dt + Σ(X) ∘_γ dW` with the correction vector
//!
//! ```text
//! c_i(x) = Σ_{k,j} Σ_jk(x) ∂_j Σ_ik(x)
//! ```
//!
//! The diffusion is never changed by a conversion, only the drift.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::interpretation::Interpretation;
use crate::linalg::CorrelationMatrix;
use crate::market::FactorMarket;

type Scratch = SmallVec<[f64; 32]>;

/// Step used by the central-difference Jacobian at coordinate value `x`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs())
}

/// Scalar coefficient function with an analytic derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    Constant { value: f64 },
    /// `intercept + slope * x`
    Affine { intercept: f64, slope: f64 },
    /// `scale * x^exponent`; non-integer exponents need `x >= 0`.
    Power { scale: f64, exponent: f64 },
    /// `scale * exp(rate * x)`
    Exp { scale: f64, rate: f64 },
}

impl ScalarFn {
    pub fn constant(value: f64) -> Self {
        ScalarFn::Constant { value }
    }

    pub fn linear(slope: f64) -> Self {
        ScalarFn::Affine {
            intercept: 0.0,
            slope,
        }
    }

    pub fn sqrt(scale: f64) -> Self {
        ScalarFn::Power {
            scale,
            exponent: 0.5,
        }
    }

    fn check_power_domain(x: f64, exponent: f64) -> Result<()> {
        if x < 0.0 && exponent.fract() != 0.0 {
            return Err(Error::Domain {
                value: x,
                domain: format!("[0, inf) for exponent {exponent}"),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(match *self {
            ScalarFn::Constant { value } => value,
            ScalarFn::Affine { intercept, slope } => intercept + slope * x,
            ScalarFn::Power { scale, exponent } => {
                Self::check_power_domain(x, exponent)?;
                if exponent == 0.5 {
                    scale * x.sqrt()
                } else {
                    scale * x.powf(exponent)
                }
            }
            ScalarFn::Exp { scale, rate } => scale * (rate * x).exp(),
        })
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        Ok(match *self {
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::Affine { slope, .. } => slope,
            ScalarFn::Power { scale, exponent } => {
                Self::check_power_domain(x, exponent)?;
                if exponent == 0.0 {
                    0.0
                } else if exponent == 0.5 {
                    0.5 * scale / x.sqrt()
                } else {
                    scale * exponent * x.powf(exponent - 1.0)
                }
            }
            ScalarFn::Exp { scale, rate } => scale * rate * (rate * x).exp(),
        })
    }

    /// True when the derivative vanishes identically.
    pub fn is_constant(&self) -> bool {
        match *self {
            ScalarFn::Constant { .. } => true,
            ScalarFn::Affine { slope, .. } => slope == 0.0,
            ScalarFn::Power { scale, exponent } => scale == 0.0 || exponent == 0.0,
            ScalarFn::Exp { scale, rate } => scale == 0.0 || rate == 0.0,
        }
    }
}

/// Drift `b: R^d -> R^d` and diffusion `Σ: R^d -> R^{d×m}` of an SDE.
///
/// Buffers are row-major: the diffusion is `d*m` long with `Σ_ik` at
/// `i*m + k`, and the Jacobian is `d*d*m` long with `∂_j Σ_ik` at
/// `(j*d + i)*m + k`.
pub trait CoefficientField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Central differences unless the field knows its Jacobian analytically.
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        finite_difference_jacobian(self, x, out)
    }

    fn drift(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_state(self, x)?;
        let mut out = DVector::zeros(self.state_dim());
        self.drift_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    fn diffusion(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_state(self, x)?;
        let (d, m) = (self.state_dim(), self.noise_dim());
        let mut buf = vec![0.0; d * m];
        self.diffusion_into(x, &mut buf)?;
        Ok(DMatrix::from_row_slice(d, m, &buf))
    }

    /// One `d×m` matrix per state coordinate `j`, holding `∂_j Σ`.
    fn diffusion_jacobian(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        check_state(self, x)?;
        let (d, m) = (self.state_dim(), self.noise_dim());
        let mut buf = vec![0.0; d * d * m];
        self.jacobian_into(x, &mut buf)?;
        Ok(buf
            .chunks(d * m)
            .map(|c| DMatrix::from_row_slice(d, m, c))
            .collect())
    }
}

fn check_state<F: CoefficientField + ?Sized>(field: &F, x: &[f64]) -> Result<()> {
    if x.len() != field.state_dim() {
        return Err(Error::Dimension {
            axis: "state",
            expected: field.state_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

pub fn finite_difference_jacobian<F: CoefficientField + ?Sized>(
    field: &F,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let (d, m) = (field.state_dim(), field.noise_dim());
    let mut xp: Scratch = x.iter().copied().collect();
    let mut plus: Scratch = SmallVec::from_elem(0.0, d * m);
    let mut minus: Scratch = SmallVec::from_elem(0.0, d * m);
    for j in 0..d {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        field.diffusion_into(&xp, &mut plus)?;
        xp[j] = x[j] - h;
        field.diffusion_into(&xp, &mut minus)?;
        xp[j] = x[j];
        let block = &mut out[j * d * m..(j + 1) * d * m];
        for ((o, p), q) in block.iter_mut().zip(&plus).zip(&minus) {
            *o = (p - q) / (2.0 * h);
        }
    }
    Ok(())
}

fn correction_into<F: CoefficientField + ?Sized>(
    field: &F,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let (d, m) = (field.state_dim(), field.noise_dim());
    let mut sigma: Scratch = SmallVec::from_elem(0.0, d * m);
    let mut jac: Scratch = SmallVec::from_elem(0.0, d * d * m);
    field.diffusion_into(x, &mut sigma)?;
    field.jacobian_into(x, &mut jac)?;
    for (i, ci) in out.iter_mut().enumerate().take(d) {
        let mut acc = 0.0;
        for j in 0..d {
            let djac = &jac[(j * d + i) * m..(j * d + i + 1) * m];
            let sigma_j = &sigma[j * m..(j + 1) * m];
            for k in 0..m {
                acc += sigma_j[k] * djac[k];
            }
        }
        *ci = acc;
    }
    Ok(())
}

/// Drift shift per unit of interpretation difference, `c(x)`.
pub fn correction_vector<F: CoefficientField + ?Sized>(field: &F, x: &[f64]) -> Result<DVector<f64>> {
    check_state(field, x)?;
    let mut out = DVector::zeros(field.state_dim());
    correction_into(field, x, out.as_mut_slice())?;
    Ok(out)
}

/// The same process written under another interpretation.
#[derive(Debug, Clone)]
pub struct Converted<F> {
    inner: F,
    from: Interpretation,
    to: Interpretation,
}

impl<F: CoefficientField> Converted<F> {
    pub fn inner(&self) -> &F {
        &self.inner
    }

    pub fn from(&self) -> Interpretation {
        self.from
    }

    pub fn to(&self) -> Interpretation {
        self.to
    }

    /// Coefficient of `c(x)` added to the original drift.
    pub fn shift(&self) -> f64 {
        self.from.alpha() - self.to.alpha()
    }
}

impl<F: CoefficientField> CoefficientField for Converted<F> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.drift_into(x, out)?;
        let shift = self.shift();
        if shift != 0.0 {
            let mut c: Scratch = SmallVec::from_elem(0.0, out.len());
            correction_into(&self.inner, x, &mut c)?;
            for (o, ci) in out.iter_mut().zip(&c) {
                *o += shift * ci;
            }
        }
        Ok(())
    }

    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.diffusion_into(x, out)
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.jacobian_into(x, out)
    }
}

/// Rewrites an `from`-interpreted field under `to`: drift
/// `b + (from - to) c`, diffusion untouched.
pub fn convert<F: CoefficientField>(field: F, from: Interpretation, to: Interpretation) -> Converted<F> {
    Converted {
        inner: field,
        from,
        to,
    }
}

impl<F: CoefficientField + ?Sized> CoefficientField for &F {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).drift_into(x, out)
    }
    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).diffusion_into(x, out)
    }
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).jacobian_into(x, out)
    }
}

type DriftFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type DiffusionFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Field assembled from closures. Output shapes are checked on every call.
#[derive(Clone)]
pub struct FnField {
    d: usize,
    m: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    jacobian: Option<JacobianFn>,
}

impl std::fmt::Debug for FnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnField")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl FnField {
    pub fn new(
        d: usize,
        m: usize,
        drift: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        diffusion: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        FnField {
            d,
            m,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            jacobian: None,
        }
    }

    /// Supplies `∂_j Σ` for each state coordinate `j`.
    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }
}

impl CoefficientField for FnField {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let b = (self.drift)(x);
        if b.len() != self.d {
            return Err(Error::Dimension {
                axis: "drift",
                expected: self.d,
                found: b.len(),
            });
        }
        out.copy_from_slice(b.as_slice());
        Ok(())
    }

    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = (self.diffusion)(x);
        check_matrix(&s, self.d, self.m, "diffusion")?;
        write_row_major(&s, out);
        Ok(())
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let Some(jac) = &self.jacobian else {
            return finite_difference_jacobian(self, x, out);
        };
        let blocks = jac(x);
        if blocks.len() != self.d {
            return Err(Error::Dimension {
                axis: "jacobian coordinates",
                expected: self.d,
                found: blocks.len(),
            });
        }
        let sz = self.d * self.m;
        for (j, block) in blocks.iter().enumerate() {
            check_matrix(block, self.d, self.m, "jacobian")?;
            write_row_major(block, &mut out[j * sz..(j + 1) * sz]);
        }
        Ok(())
    }
}

fn check_matrix(s: &DMatrix<f64>, d: usize, m: usize, what: &'static str) -> Result<()> {
    if s.nrows() != d {
        return Err(Error::Dimension {
            axis: if what == "diffusion" {
                "diffusion rows"
            } else {
                "jacobian rows"
            },
            expected: d,
            found: s.nrows(),
        });
    }
    if s.ncols() != m {
        return Err(Error::Dimension {
            axis: if what == "diffusion" {
                "diffusion columns"
            } else {
                "jacobian columns"
            },
            expected: m,
            found: s.ncols(),
        });
    }
    Ok(())
}

fn write_row_major(s: &DMatrix<f64>, out: &mut [f64]) {
    let m = s.ncols();
    for i in 0..s.nrows() {
        for k in 0..m {
            out[i * m + k] = s[(i, k)];
        }
    }
}

/// One-dimensional SDE `dX = b(X) dt + s(X) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub drift: ScalarFn,
    pub diffusion: ScalarFn,
}

impl ScalarField {
    /// Geometric Brownian motion `dS = mu S dt + sigma S dW`.
    pub fn gbm(mu: f64, sigma: f64) -> Self {
        ScalarField {
            drift: ScalarFn::linear(mu),
            diffusion: ScalarFn::linear(sigma),
        }
    }
}

impl CoefficientField for ScalarField {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    #[inline]
    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.drift.eval(x[0])?;
        Ok(())
    }

    #[inline]
    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.diffusion.eval(x[0])?;
        Ok(())
    }

    #[inline]
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.diffusion.derivative(x[0])?;
        Ok(())
    }
}

/// Prices with multiplicative noise, `dS = D(S)(mu dt + Γ dW)`. Row `i` of
/// the diffusion depends only on `S_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMultiplicative {
    mu: DVector<f64>,
    gamma: DMatrix<f64>,
}

impl DiagonalMultiplicative {
    pub fn new(mu: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != mu.len() {
            return Err(Error::Dimension {
                axis: "loading rows",
                expected: mu.len(),
                found: gamma.nrows(),
            });
        }
        Ok(DiagonalMultiplicative { mu, gamma })
    }
}

impl CoefficientField for DiagonalMultiplicative {
    fn state_dim(&self) -> usize {
        self.mu.len()
    }

    fn noise_dim(&self) -> usize {
        self.gamma.ncols()
    }

    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i] * self.mu[i];
        }
        Ok(())
    }

    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.noise_dim();
        for i in 0..self.state_dim() {
            for k in 0..m {
                out[i * m + k] = x[i] * self.gamma[(i, k)];
            }
        }
        Ok(())
    }

    fn jacobian_into(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        let (d, m) = (self.state_dim(), self.noise_dim());
        out.fill(0.0);
        for j in 0..d {
            for k in 0..m {
                out[(j * d + j) * m + k] = self.gamma[(j, k)];
            }
        }
        Ok(())
    }
}

/// Itô per-unit drift `mu + alpha * diag(Γ Γ^T)` of a diagonal-multiplicative
/// price system interpreted under `alpha`.
pub fn ito_drift_diagonal_multiplicative(
    mu: &DVector<f64>,
    gamma: &DMatrix<f64>,
    alpha: Interpretation,
) -> Result<DVector<f64>> {
    if mu.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("drift or loading matrix"));
    }
    if gamma.nrows() != mu.len() {
        return Err(Error::Dimension {
            axis: "loading rows",
            expected: mu.len(),
            found: gamma.nrows(),
        });
    }
    let a = alpha.alpha();
    Ok(DVector::from_fn(mu.len(), |i, _| {
        let vii: f64 = gamma.row(i).iter().map(|g| g * g).sum();
        mu[i] + a * vii
    }))
}

/// Loading against independent drivers `B` when `W = C B`: returns `G C`.
pub fn reduce_correlated_noise(g: &DMatrix<f64>, corr: &CorrelationMatrix) -> Result<DMatrix<f64>> {
    if g.ncols() != corr.dim() {
        return Err(Error::Dimension {
            axis: "loading columns",
            expected: corr.dim(),
            found: g.ncols(),
        });
    }
    Ok(g * corr.factor())
}

/// Itô drift of the risky return in a factor-driven market:
/// `mu(x) + alpha * rho * sigma'(x) * nu(x)`.
pub fn effective_drift_factor(market: &FactorMarket, alpha: Interpretation, x: f64) -> Result<f64> {
    market.check_domain(x)?;
    let base = market.mu_fn.eval(x)?;
    if market.rho_corr == 0.0 || alpha.is_ito() {
        return Ok(base);
    }
    let cross = market.sigma_fn.derivative(x)? * market.nu_fn.eval(x)?;
    Ok(base + alpha.alpha() * market.rho_corr * cross)
}

/// Cumulative return `R` and factor `X` of a factor-driven market as one
/// two-dimensional system driven by independent Brownian motions:
///
/// ```text
/// dR = mu(X) dt + sigma(X) ∘ dW^S
/// dX = b(X) dt  + nu(X)    ∘ dW^X,   d<W^S, W^X> = rho dt
/// ```
///
/// The return row depends on the state only through `X`, so converting the
/// system shifts the return drift by `rho * sigma'(X) * nu(X)` per unit of
/// interpretation and the factor drift by `nu(X) * nu'(X)`.
#[derive(Debug, Clone)]
pub struct FactorSystem {
    market: FactorMarket,
    corr: CorrelationMatrix,
}

impl FactorSystem {
    pub fn new(market: FactorMarket) -> Result<Self> {
        let corr = CorrelationMatrix::pair(market.rho_corr)?;
        Ok(FactorSystem { market, corr })
    }

    pub fn market(&self) -> &FactorMarket {
        &self.market
    }

    pub fn correlation(&self) -> &CorrelationMatrix {
        &self.corr
    }
}

impl CoefficientField for FactorSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.market.check_domain(x[1])?;
        out[0] = self.market.mu_fn.eval(x[1])?;
        out[1] = self.market.b_fn.eval(x[1])?;
        Ok(())
    }

    fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.market.check_domain(x[1])?;
        let s = self.market.sigma_fn.eval(x[1])?;
        let n = self.market.nu_fn.eval(x[1])?;
        let c = self.corr.factor();
        out[0] = s * c[(0, 0)];
        out[1] = s * c[(0, 1)];
        out[2] = n * c[(1, 0)];
        out[3] = n * c[(1, 1)];
        Ok(())
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.market.check_domain(x[1])?;
        let ds = self.market.sigma_fn.derivative(x[1])?;
        let dn = self.market.nu_fn.derivative(x[1])?;
        let c = self.corr.factor();
        // ∂_R Σ = 0
        out[..4].fill(0.0);
        out[4] = ds * c[(0, 0)];
        out[5] = ds * c[(0, 1)];
        out[6] = dn * c[(1, 0)];
        out[7] = dn * c[(1, 1)];
        Ok(())
    }
}
