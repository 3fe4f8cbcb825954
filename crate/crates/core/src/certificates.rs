//! Affine-in-control constraint rows for each barrier-certificate family
//! and for the velocity-tracking Lyapunov constraint.
//!
//! Every row has the shape `c·u + s·δ {≤,≥} rhs` where `δ` is the optional
//! QP slack. Rows whose coefficients are all zero are decided when built:
//! a satisfied row is dropped (`Ok(None)`), a violated one is an error.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{decompose, BarrierChain, GeneratorError, SmoothFunction};
use crate::sde::{SdeModel, Vector};

/// Control coefficients at or below this norm make a high-order row
/// degenerate.
pub const DEGENERATE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("reciprocal barrier undefined at h(x) = {h} (state outside the open safe set)")]
    Boundary { h: f64 },
    #[error("row '{label}' has no control dependence and is violated ({lhs} vs rhs {rhs})")]
    TriviallyInfeasible { label: String, lhs: f64, rhs: f64 },
    #[error("row '{label}' is degenerate: control coefficient {coefficient:e} at state {state:?}")]
    Degenerate {
        label: String,
        coefficient: f64,
        state: Vec<f64>,
    },
    #[error("invalid certificate: {0}")]
    Invalid(String),
}

/// Class-K comparison functions, odd-extended to negative arguments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassKFunction {
    Linear { k: f64 },
    Power { k: f64, exponent: f64 },
    Cubic { k: f64 },
}

impl ClassKFunction {
    pub fn linear(k: f64) -> Self {
        ClassKFunction::Linear { k }
    }

    pub fn validate(&self) -> Result<(), CertificateError> {
        let ok = match *self {
            ClassKFunction::Linear { k } | ClassKFunction::Cubic { k } => k > 0.0 && k.is_finite(),
            ClassKFunction::Power { k, exponent } => {
                k > 0.0 && k.is_finite() && exponent > 0.0 && exponent.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CertificateError::Invalid(format!(
                "{self:?} is not class-K (parameters must be positive)"
            )))
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let magnitude = match *self {
            ClassKFunction::Linear { k } => k * s.abs(),
            ClassKFunction::Power { k, exponent } => k * s.abs().powf(exponent),
            ClassKFunction::Cubic { k } => k * s.abs().powi(3),
        };
        magnitude.copysign(s)
    }

    pub fn linear_gain(&self) -> Option<f64> {
        match *self {
            ClassKFunction::Linear { k } => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
        })
    }
}

/// `control_coeffs·u + slack_coeff·δ {≤,≥} rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    pub label: String,
    pub control_coeffs: Vector,
    pub slack_coeff: f64,
    pub rhs: f64,
    pub sense: Sense,
}

impl AffineConstraint {
    /// Builds a row, resolving it immediately if no variable enters.
    pub fn resolve(
        label: impl Into<String>,
        control_coeffs: Vector,
        slack_coeff: f64,
        rhs: f64,
        sense: Sense,
    ) -> Result<Option<Self>, CertificateError> {
        let label = label.into();
        let finite = control_coeffs.iter().all(|c| c.is_finite()) && slack_coeff.is_finite() && rhs.is_finite();
        if !finite {
            return Err(CertificateError::Invalid(format!(
                "row '{label}' has non-finite coefficients"
            )));
        }
        if slack_coeff == 0.0 && control_coeffs.iter().all(|c| *c == 0.0) {
            let satisfied = match sense {
                Sense::Le => 0.0 <= rhs,
                Sense::Ge => 0.0 >= rhs,
            };
            return if satisfied {
                Ok(None)
            } else {
                Err(CertificateError::TriviallyInfeasible { label, lhs: 0.0, rhs })
            };
        }
        Ok(Some(AffineConstraint {
            label,
            control_coeffs,
            slack_coeff,
            rhs,
            sense,
        }))
    }

    pub fn lhs(&self, u: &Vector, slack: f64) -> f64 {
        self.control_coeffs.dot(u) + self.slack_coeff * slack
    }

    /// Signed margin, nonnegative when satisfied.
    pub fn margin(&self, u: &Vector, slack: f64) -> f64 {
        let lhs = self.lhs(u, slack);
        match self.sense {
            Sense::Le => self.rhs - lhs,
            Sense::Ge => lhs - self.rhs,
        }
    }

    /// Upper-bound form `a·u + s·δ ≤ b`.
    pub fn as_upper_bound(&self) -> (Vector, f64, f64) {
        match self.sense {
            Sense::Le => (self.control_coeffs.clone(), self.slack_coeff, self.rhs),
            Sense::Ge => (-&self.control_coeffs, -self.slack_coeff, -self.rhs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Srcbf,
    Szcbf,
    Scbf,
    HoScbf,
    HoSzcbf,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Srcbf,
        Family::Szcbf,
        Family::Scbf,
        Family::HoScbf,
        Family::HoSzcbf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Srcbf => "srcbf",
            Family::Szcbf => "szcbf",
            Family::Scbf => "scbf",
            Family::HoScbf => "ho_scbf",
            Family::HoSzcbf => "ho_szcbf",
        }
    }

    pub fn is_high_order(&self) -> bool {
        matches!(self, Family::HoScbf | Family::HoSzcbf)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The data a certificate row needs, prepared once per scenario.
#[derive(Debug, Clone)]
pub struct CertificateSpec {
    pub family: Family,
    pub h: SmoothFunction,
    pub chain: Option<BarrierChain>,
    pub alphas: Vec<ClassKFunction>,
    pub gamma: f64,
    /// High-order zeroing form: multiply `α₂` by `h₁` instead of `h`.
    pub ho_szcbf_uses_h1: bool,
    reciprocal: Option<SmoothFunction>,
    ho_szcbf: Option<HoSzcbfFunctions>,
}

impl CertificateSpec {
    /// Reciprocal barrier `B = 1/h` with `α₃(h) = γ·h`.
    pub fn srcbf(h: SmoothFunction, gamma: f64) -> Result<Self, CertificateError> {
        Self::new(Family::Srcbf, h, None, vec![ClassKFunction::linear(gamma)], gamma, false)
    }

    pub fn szcbf(h: SmoothFunction, alpha: ClassKFunction) -> Result<Self, CertificateError> {
        Self::new(Family::Szcbf, h, None, vec![alpha], 1.0, false)
    }

    pub fn scbf(h: SmoothFunction) -> Result<Self, CertificateError> {
        Self::new(Family::Scbf, h, None, vec![], 1.0, false)
    }

    pub fn ho_scbf(chain: BarrierChain) -> Result<Self, CertificateError> {
        let h = chain.level(0).clone();
        Self::new(Family::HoScbf, h, Some(chain), vec![], 1.0, false)
    }

    pub fn ho_szcbf(
        chain: BarrierChain,
        alphas: Vec<ClassKFunction>,
        uses_h1: bool,
    ) -> Result<Self, CertificateError> {
        let h = chain.level(0).clone();
        Self::new(Family::HoSzcbf, h, Some(chain), alphas, 1.0, uses_h1)
    }

    pub fn new(
        family: Family,
        h: SmoothFunction,
        chain: Option<BarrierChain>,
        alphas: Vec<ClassKFunction>,
        gamma: f64,
        ho_szcbf_uses_h1: bool,
    ) -> Result<Self, CertificateError> {
        let expected = match family {
            Family::Srcbf | Family::Szcbf => Some(1),
            Family::Scbf | Family::HoScbf => Some(0),
            Family::HoSzcbf => chain.as_ref().map(|c| c.relative_degree()),
        };
        if family.is_high_order() && chain.is_none() {
            return Err(CertificateError::Invalid(format!("{family} needs a barrier chain")));
        }
        if let Some(n) = expected {
            if alphas.len() != n {
                return Err(CertificateError::Invalid(format!(
                    "{family} takes {n} class-K functions, got {}",
                    alphas.len()
                )));
            }
        }
        for a in &alphas {
            a.validate()?;
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CertificateError::Invalid(format!("gamma must be positive, got {gamma}")));
        }
        let reciprocal = (family == Family::Srcbf).then(|| h.reciprocal());
        let ho_szcbf = if family == Family::HoSzcbf {
            let chain = chain.as_ref().expect("checked above");
            Some(HoSzcbfFunctions::new(chain, &alphas, ho_szcbf_uses_h1)?)
        } else {
            None
        };
        Ok(CertificateSpec {
            family,
            h,
            chain,
            alphas,
            gamma,
            ho_szcbf_uses_h1,
            reciprocal,
            ho_szcbf,
        })
    }

    /// The certificate row at `x`; `Ok(None)` when trivially satisfied.
    pub fn row(&self, model: &SdeModel, x: &Vector) -> Result<Option<AffineConstraint>, CertificateError> {
        match self.family {
            Family::Srcbf => srcbf_row(model, self, x),
            Family::Szcbf => szcbf_row(model, self, x),
            Family::Scbf => scbf_row(model, self, x),
            Family::HoScbf => ho_scbf_row(model, self.chain.as_ref().expect("validated"), x).map(Some),
            Family::HoSzcbf => {
                ho_szcbf_row(model, self.ho_szcbf.as_ref().expect("validated"), x).map(Some)
            }
        }
    }
}

/// Reciprocal-barrier row `A B(x) ≤ α₃(h(x))` with `B = 1/h`.
pub fn srcbf_row(
    model: &SdeModel,
    spec: &CertificateSpec,
    x: &Vector,
) -> Result<Option<AffineConstraint>, CertificateError> {
    let h = spec.h.value(x);
    if !(h > 0.0) {
        return Err(CertificateError::Boundary { h });
    }
    let b = match &spec.reciprocal {
        Some(b) => b.clone(),
        None => spec.h.reciprocal(),
    };
    let dec = decompose(model, &b, x)?;
    let alpha = spec
        .alphas
        .first()
        .copied()
        .unwrap_or(ClassKFunction::linear(spec.gamma));
    AffineConstraint::resolve(
        "srcbf",
        dec.control_part,
        0.0,
        alpha.eval(h) - dec.drift_part,
        Sense::Le,
    )
}

/// Zeroing-barrier row `A h(x) + α(h(x)) ≥ 0`.
pub fn szcbf_row(
    model: &SdeModel,
    spec: &CertificateSpec,
    x: &Vector,
) -> Result<Option<AffineConstraint>, CertificateError> {
    let alpha = spec
        .alphas
        .first()
        .ok_or_else(|| CertificateError::Invalid("szcbf needs one class-K function".into()))?;
    let dec = decompose(model, &spec.h, x)?;
    let h = spec.h.value(x);
    AffineConstraint::resolve(
        "szcbf",
        dec.control_part,
        0.0,
        -dec.drift_part - alpha.eval(h),
        Sense::Ge,
    )
}

/// Row `A h(x) ≥ 0`.
pub fn scbf_row(
    model: &SdeModel,
    spec: &CertificateSpec,
    x: &Vector,
) -> Result<Option<AffineConstraint>, CertificateError> {
    let dec = decompose(model, &spec.h, x)?;
    AffineConstraint::resolve("scbf", dec.control_part, 0.0, -dec.drift_part, Sense::Ge)
}

fn degenerate_check(label: &str, coeffs: &Vector, x: &Vector) -> Result<(), CertificateError> {
    let coefficient = coeffs.norm();
    if !(coefficient > DEGENERATE_TOL) {
        return Err(CertificateError::Degenerate {
            label: label.to_string(),
            coefficient,
            state: x.iter().copied().collect(),
        });
    }
    Ok(())
}

/// Top-of-chain row `A b_{r-1}(x) ≥ 0`.
pub fn ho_scbf_row(
    model: &SdeModel,
    chain: &BarrierChain,
    x: &Vector,
) -> Result<AffineConstraint, CertificateError> {
    let label = format!("ho_scbf[{}]", chain.relative_degree() - 1);
    let dec = decompose(model, chain.top(), x)?;
    degenerate_check(&label, &dec.control_part, x)?;
    Ok(AffineConstraint {
        label,
        control_coeffs: dec.control_part,
        slack_coeff: 0.0,
        rhs: -dec.drift_part,
        sense: Sense::Ge,
    })
}

/// Pre-built functions for the second-order zeroing construction
///
/// ```text
///     h₁ = A h + α₁ h,    h₂ = A h₁ + α₂ h   (or α₂ h₁)
/// ```
///
/// with linear `α₁, α₂`.
#[derive(Debug, Clone)]
pub struct HoSzcbfFunctions {
    pub h: SmoothFunction,
    pub h1: SmoothFunction,
    pub k1: f64,
    pub k2: f64,
    pub uses_h1: bool,
}

impl HoSzcbfFunctions {
    pub fn new(
        chain: &BarrierChain,
        alphas: &[ClassKFunction],
        uses_h1: bool,
    ) -> Result<Self, CertificateError> {
        if chain.relative_degree() != 2 || alphas.len() != 2 {
            return Err(CertificateError::Invalid(format!(
                "high-order zeroing rows are built for relative degree 2 with two gains, got r={} and {} gains",
                chain.relative_degree(),
                alphas.len()
            )));
        }
        let gain = |a: &ClassKFunction| {
            a.linear_gain()
                .ok_or_else(|| CertificateError::Invalid(format!("{a:?} must be linear")))
        };
        let (k1, k2) = (gain(&alphas[0])?, gain(&alphas[1])?);
        Ok(Self::with_gains(chain, k1, k2, uses_h1))
    }

    /// Same as [`HoSzcbfFunctions::new`] but accepts zero gains.
    pub fn with_gains(chain: &BarrierChain, k1: f64, k2: f64, uses_h1: bool) -> Self {
        let h = chain.level(0).clone();
        let h1 = chain.level(1).linear_combination(1.0, &h, k1).renamed("h1");
        HoSzcbfFunctions { h, h1, k1, k2, uses_h1 }
    }
}

/// Row `h₂(x, u) ≥ 0` expanded in `u`.
pub fn ho_szcbf_row(
    model: &SdeModel,
    funcs: &HoSzcbfFunctions,
    x: &Vector,
) -> Result<AffineConstraint, CertificateError> {
    let label = "ho_szcbf[1]";
    let dec = decompose(model, &funcs.h1, x)?;
    degenerate_check(label, &dec.control_part, x)?;
    let anchor = if funcs.uses_h1 {
        funcs.h1.value(x)
    } else {
        funcs.h.value(x)
    };
    Ok(AffineConstraint {
        label: label.to_string(),
        control_coeffs: dec.control_part,
        slack_coeff: 0.0,
        rhs: -dec.drift_part - funcs.k2 * anchor,
        sense: Sense::Ge,
    })
}

/// Lyapunov tracking row `A V(x) ≤ δ` over `(u, δ)`.
pub fn clf_row(
    model: &SdeModel,
    v: &SmoothFunction,
    x: &Vector,
) -> Result<Option<AffineConstraint>, CertificateError> {
    let dec = decompose(model, v, x)?;
    AffineConstraint::resolve("clf", dec.control_part, -1.0, -dec.drift_part, Sense::Le)
}
