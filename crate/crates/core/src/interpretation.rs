use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stochastic-integral convention, labelled by the evaluation point `alpha`
/// inside each time step: 0 is Itô, 1/2 Stratonovich, 1 Klimontovich.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Interpretation(f64);

impl Interpretation {
    pub const ITO: Interpretation = Interpretation(0.0);
    pub const STRATONOVICH: Interpretation = Interpretation(0.5);
    pub const KLIMONTOVICH: Interpretation = Interpretation(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::parameter(
                "alpha",
                format!("{alpha} is outside [0, 1]"),
            ));
        }
        Ok(Interpretation(alpha))
    }

    #[inline]
    pub fn alpha(self) -> f64 {
        self.0
    }

    pub fn is_ito(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Interpretation {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        Interpretation::new(alpha)
    }
}

impl From<Interpretation> for f64 {
    fn from(i: Interpretation) -> f64 {
        i.0
    }
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={}", self.0)
    }
}
