//! Response families supported at the leaves.

/// Response family of the leaf observations.
///
/// The fitting machinery only needs a leaf estimator with a factored
/// precision summary, so other generalized linear families could be added;
/// these two are the ones that ship.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Independent Gaussian responses with a shared dispersion parameter.
    Gaussian,
    /// Bernoulli responses under the canonical logit link.
    Logistic,
}

impl Family {
    /// Map a linear predictor to the response mean.
    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Logistic => logistic(eta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "linear" => Ok(Family::Gaussian),
            "logistic" | "binomial" | "bernoulli" => Ok(Family::Logistic),
            other => Err(crate::Error::Usage(format!("unknown family '{other}'"))),
        }
    }
}

/// Numerically stable inverse logit.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}
