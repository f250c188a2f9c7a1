//! Invertible building blocks: spectral filters and monotone pointwise activations.

pub mod filter;
pub mod pwl;
pub mod residual;

pub use filter::{SpectralFilter, THETA_LIMIT};
pub use pwl::{PreparedPwl, SmoothPwl};
pub use residual::ResidualActivation;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Inverse => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_input: Vec<f64>,
    pub d_params: Vec<f64>,
}

/// A strictly increasing scalar map with a computable inverse.
pub trait ScalarBijection {
    fn eval(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
    fn invert(&self, y: f64) -> Result<f64>;
    fn num_params(&self) -> usize;
    /// Adds `coeff * d eval(s) / d params` into `grad`.
    fn accumulate_param_grad(&self, s: f64, coeff: f64, grad: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationFamily {
    Pwl,
    Residual,
}

impl ActivationFamily {
    pub fn tag(self) -> u8 {
        match self {
            ActivationFamily::Pwl => 1,
            ActivationFamily::Residual => 2,
        }
    }
}

impl fmt::Display for ActivationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationFamily::Pwl => "pwl",
            ActivationFamily::Residual => "residual",
        })
    }
}

impl FromStr for ActivationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pwl" => Ok(ActivationFamily::Pwl),
            "residual" => Ok(ActivationFamily::Residual),
            other => Err(Error::InvalidParameter(format!(
                "unknown activation family '{other}' (expected pwl or residual)"
            ))),
        }
    }
}

/// Pointwise activation applied identically at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Pwl(SmoothPwl),
    Residual(ResidualActivation),
}

/// An activation ready for repeated evaluation.
pub enum Prepared<'a> {
    Pwl(PreparedPwl),
    Residual(&'a ResidualActivation),
}

impl ScalarBijection for Prepared<'_> {
    fn eval(&self, s: f64) -> f64 {
        match self {
            Prepared::Pwl(p) => p.eval(s),
            Prepared::Residual(r) => r.eval(s),
        }
    }

    fn derivative(&self, s: f64) -> f64 {
        match self {
            Prepared::Pwl(p) => p.derivative(s),
            Prepared::Residual(r) => r.derivative(s),
        }
    }

    fn invert(&self, y: f64) -> Result<f64> {
        match self {
            Prepared::Pwl(p) => p.invert(y),
            Prepared::Residual(r) => r.invert(y),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Prepared::Pwl(p) => p.num_params(),
            Prepared::Residual(r) => ScalarBijection::num_params(*r),
        }
    }

    fn accumulate_param_grad(&self, s: f64, coeff: f64, grad: &mut [f64]) {
        match self {
            Prepared::Pwl(p) => p.accumulate_param_grad(s, coeff, grad),
            Prepared::Residual(r) => r.accumulate_param_grad(s, coeff, grad),
        }
    }
}

impl Activation {
    pub fn family(&self) -> ActivationFamily {
        match self {
            Activation::Pwl(_) => ActivationFamily::Pwl,
            Activation::Residual(_) => ActivationFamily::Residual,
        }
    }

    pub fn prepare(&self) -> Prepared<'_> {
        match self {
            Activation::Pwl(p) => Prepared::Pwl(p.prepare()),
            Activation::Residual(r) => Prepared::Residual(r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Activation::Pwl(p) => p.validate(),
            Activation::Residual(r) => r.validate(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Activation::Pwl(p) => p.num_params(),
            Activation::Residual(r) => r.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Activation::Pwl(p) => p.params(),
            Activation::Residual(r) => r.params(),
        }
    }

    pub fn set_params(&mut self, values: &[f64]) {
        match self {
            Activation::Pwl(p) => p.set_params(values),
            Activation::Residual(r) => r.set_params(values),
        }
    }

    /// Projects parameters back onto the set where the map is a bijection
    /// with a well-conditioned inverse.
    pub fn project(&mut self) {
        match self {
            Activation::Pwl(p) => p.enforce_monotone(),
            Activation::Residual(r) => r.spectral_normalize(),
        }
    }

    pub fn forward(&self, f: &Field) -> Field {
        let act = self.prepare();
        let values = f.values().iter().map(|&s| act.eval(s)).collect();
        Field::from_raw(*f.grid(), values)
    }

    pub fn inverse(&self, z: &Field) -> Result<Field> {
        let act = self.prepare();
        let values = z.values().iter().map(|&y| act.invert(y)).collect::<Result<Vec<_>>>()?;
        Field::new(*z.grid(), values)
    }
}
