//! Weighted average treatment effect targets.
//!
//! Each target is defined by a weight `w(e)` on the propensity score; the
//! doubly robust estimating function also needs its derivative `dw/de`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Ate,
    Att,
    Atc,
    Ato,
}

impl Estimand {
    pub const ALL: [Estimand; 4] = [Estimand::Ate, Estimand::Att, Estimand::Atc, Estimand::Ato];

    /// `(w(e), dw/de)`; `e` must lie strictly inside (0, 1).
    pub fn weight_and_derivative(self, e: f64) -> Result<(f64, f64)> {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::Domain(format!("propensity {e} is outside (0, 1)")));
        }
        Ok(self.weight_unchecked(e))
    }

    #[inline]
    pub(crate) fn weight_unchecked(self, e: f64) -> (f64, f64) {
        match self {
            Estimand::Ate => (1.0, 0.0),
            Estimand::Att => (e, 1.0),
            Estimand::Atc => (1.0 - e, -1.0),
            Estimand::Ato => (e * (1.0 - e), 1.0 - 2.0 * e),
        }
    }

    /// True when `w` is affine in `e`, which is what makes the DR estimating
    /// function unbiased under either working model.
    pub fn linear_in_e(self) -> bool {
        !matches!(self, Estimand::Ato)
    }

    pub fn supports_double_robustness(self) -> bool {
        self.linear_in_e()
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Ate => "ate",
            Estimand::Att => "att",
            Estimand::Atc => "atc",
            Estimand::Ato => "ato",
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "att" => Ok(Estimand::Att),
            "atc" => Ok(Estimand::Atc),
            "ato" => Ok(Estimand::Ato),
            other => Err(Error::InvalidArgument(format!("unknown estimand '{other}'"))),
        }
    }
}
