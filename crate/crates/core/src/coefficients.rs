//! Drift and noise coefficients, growth-condition checks and the σₙ regularisation.
//!
//! A [`CoefficientSet`] carries the drift factor `b` (so that the reaction term is
//! `a(u) = b(u)u`), the noise amplitude `σ`, and the growth parameters
//! `(θ, r, L_b, l_b, L_σ)` for
//!
//! ```text
//! -l_b(u^θ + 1) ≤ b(u) ≤ L_b,      0 ≤ σ(u) ≤ L_σ(u^r + u).
//! ```

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Probe point used to estimate `lim_{u↓0} γ(u)` for opaque σ.
const GAMMA_ZERO_PROBE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    /// Exponent θ > 0 of the lower drift bound.
    pub theta: f64,
    /// Exponent r ∈ (0, 1] of the noise bound.
    pub r: f64,
    /// Upper drift bound L_b.
    pub upper_b: f64,
    /// Lower drift constant l_b.
    pub lower_b: f64,
    /// Noise constant L_σ.
    pub l_sigma: f64,
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::Config(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!("r must lie in (0, 1], got {}", self.r)));
        }
        for (name, v) in [
            ("L_b", self.upper_b),
            ("l_b", self.lower_b),
            ("L_sigma", self.l_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct CoefficientSet {
    label: String,
    b: ScalarFn,
    sigma: ScalarFn,
    params: GrowthParams,
    gamma_zero: f64,
    /// Closed-form γ, when known, so that u-independent rates are exactly constant.
    gamma_fn: Option<ScalarFn>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("label", &self.label)
            .field("params", &self.params)
            .field("gamma_zero", &self.gamma_zero)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn new(
        label: impl Into<String>,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        params: GrowthParams,
    ) -> Result<Self> {
        params.validate()?;
        let sigma: ScalarFn = Arc::new(sigma);
        let s0 = sigma(0.0);
        if s0 != 0.0 {
            return Err(Error::Config(format!("σ(0) must vanish, got {s0}")));
        }
        let sp = sigma(GAMMA_ZERO_PROBE);
        let gamma_zero = sp * sp / GAMMA_ZERO_PROBE;
        Ok(Self {
            label: label.into(),
            b: Arc::new(b),
            sigma,
            params,
            gamma_zero,
            gamma_fn: None,
        })
    }

    /// Custom coefficients from the small expression grammar in [`crate::expr`].
    pub fn from_expressions(b: &str, sigma: &str, params: GrowthParams) -> Result<Self> {
        let be = Expr::parse(b)?;
        let se = Expr::parse(sigma)?;
        let label = format!("custom(b = {be}, sigma = {se})");
        Self::new(label, move |u| be.eval(u), move |u| se.eval(u), params)
    }

    /// Constant drift `b ≡ β` with no noise.
    pub fn noiseless(beta: f64) -> Self {
        Self::new(
            format!("noiseless(beta = {beta})"),
            move |_| beta,
            |_| 0.0,
            GrowthParams {
                theta: 1.0,
                r: 1.0,
                upper_b: beta.max(0.0),
                lower_b: (-beta).max(0.0),
                l_sigma: 0.0,
            },
        )
        .expect("noiseless coefficients are valid")
    }

    /// Supplies γ in closed form; its value at 0 becomes the `u ↓ 0` limit.
    pub fn with_gamma(mut self, gamma: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.gamma_zero = gamma(0.0);
        self.gamma_fn = Some(Arc::new(gamma));
        self
    }

    /// Overrides the `u ↓ 0` limit of γ used on cells where u vanishes.
    pub fn with_gamma_zero(mut self, g0: f64) -> Self {
        self.gamma_zero = g0;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params(&self) -> &GrowthParams {
        &self.params
    }

    #[inline]
    pub fn b(&self, u: f64) -> f64 {
        (self.b)(u)
    }

    #[inline]
    pub fn sigma(&self, u: f64) -> f64 {
        (self.sigma)(u)
    }

    /// Reaction term `a(u) = b(u)u`.
    #[inline]
    pub fn drift(&self, u: f64) -> f64 {
        self.b(u) * u
    }

    /// `γ(u) = σ(u)²/u · 1{u > 0}`.
    pub fn gamma(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("γ requires u ≥ 0, got {u}")));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        Ok(self.gamma_positive(u))
    }

    /// Branching rate used by the noise step: γ(u) for u > 0 and `lim_{v↓0} γ(v)` at 0.
    ///
    /// The right limit keeps the noise variance `γ·u*` continuous when diffusion moves mass
    /// onto a cell that was empty at the start of the step.
    #[inline]
    pub fn gamma_rate(&self, u: f64) -> f64 {
        if u > 0.0 {
            self.gamma_positive(u)
        } else {
            self.gamma_zero
        }
    }

    #[inline]
    fn gamma_positive(&self, u: f64) -> f64 {
        match &self.gamma_fn {
            Some(g) => g(u),
            None => {
                let s = self.sigma(u);
                s * s / u
            }
        }
    }

    pub fn gamma_zero(&self) -> f64 {
        self.gamma_zero
    }

    /// `σₙ(u) = σ(u)·(u/(u + 1/n))^{1/2}`.
    pub fn regularize_sigma(&self, n: usize, u: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain("regularisation index n must be ≥ 1".into()));
        }
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("σₙ requires u ≥ 0, got {u}")));
        }
        Ok(regularized_sigma(self.sigma(u), n, u))
    }

    /// The coefficient set with σ replaced by σₙ.
    ///
    /// σₙ ≤ min(σ, √(nu)·σ) gives the growth bound `σₙ ≤ √n·L_σ(u^{r+1/2} + u)`.
    pub fn regularized(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("regularisation index n must be ≥ 1".into()));
        }
        let sigma = self.sigma.clone();
        let mut params = self.params;
        if params.r <= 0.5 {
            params.r += 0.5;
            params.l_sigma *= (n as f64).sqrt();
        }
        let mut out = Self::new(
            format!("{}+reg({n})", self.label),
            {
                let b = self.b.clone();
                move |u| b(u)
            },
            move |u| regularized_sigma(sigma(u), n, u),
            params,
        )?;
        if let Some(g) = self.gamma_fn.clone() {
            let m = 1.0 / n as f64;
            out.gamma_fn = Some(Arc::new(move |u| g(u) * u / (u + m)));
        }
        // σ(0) = 0 forces σₙ²(u)/u → 0.
        out.gamma_zero = 0.0;
        Ok(out)
    }

    /// True when σ vanishes on `[0, u_max]` (sampled).
    pub fn is_noiseless(&self, u_max: f64) -> bool {
        (0..=1000).all(|k| self.sigma(u_max * k as f64 / 1000.0) == 0.0)
    }

    /// True when `b ≡ beta` on `[0, u_max]` (sampled).
    pub fn has_constant_drift(&self, beta: f64, u_max: f64) -> bool {
        (0..=1000).all(|k| (self.b(u_max * k as f64 / 1000.0) - beta).abs() <= 1e-12)
    }

    /// Samples the two growth conditions on `[0, u_max]`.
    pub fn validate_growth(&self, u_max: f64, n_samples: usize) -> Result<ValidationReport> {
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(Error::Domain(format!("u_max must be positive, got {u_max}")));
        }
        if n_samples < 100 {
            return Err(Error::Domain(format!(
                "growth validation needs ≥ 100 samples, got {n_samples}"
            )));
        }
        let p = &self.params;
        let mut report = ValidationReport {
            samples: n_samples + 1,
            u_max,
            violation: None,
            min_margin: [f64::INFINITY; 4],
        };
        let tol = |scale: f64| 1e-12 * (1.0 + scale.abs());
        for k in 0..=n_samples {
            let u = u_max * k as f64 / n_samples as f64;
            let b = self.b(u);
            let s = self.sigma(u);
            let lower = -p.lower_b * (u.powf(p.theta) + 1.0);
            let sigma_bound = p.l_sigma * (u.powf(p.r) + u);
            let checks = [
                (GrowthCondition::DriftUpper, p.upper_b - b, b, p.upper_b),
                (GrowthCondition::DriftLower, b - lower, b, lower),
                (GrowthCondition::NoiseNonnegative, s, s, 0.0),
                (GrowthCondition::NoiseUpper, sigma_bound - s, s, sigma_bound),
            ];
            for (slot, (cond, margin, value, bound)) in checks.into_iter().enumerate() {
                let margin = if value.is_finite() { margin } else { f64::NEG_INFINITY };
                report.min_margin[slot] = report.min_margin[slot].min(margin);
                if margin < -tol(bound) && report.violation.is_none() {
                    report.violation = Some(Violation {
                        condition: cond,
                        u,
                        value,
                        bound,
                        margin,
                    });
                }
            }
        }
        Ok(report)
    }
}

#[inline]
fn regularized_sigma(sigma: f64, n: usize, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    sigma * (u / (u + 1.0 / n as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthCondition {
    DriftUpper,
    DriftLower,
    NoiseNonnegative,
    NoiseUpper,
}

impl fmt::Display for GrowthCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GrowthCondition::DriftUpper => "b(u) <= L_b",
            GrowthCondition::DriftLower => "b(u) >= -l_b(u^theta + 1)",
            GrowthCondition::NoiseNonnegative => "sigma(u) >= 0",
            GrowthCondition::NoiseUpper => "sigma(u) <= L_sigma(u^r + u)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: GrowthCondition,
    pub u: f64,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub u_max: f64,
    /// First violated inequality in sampling order.
    pub violation: Option<Violation>,
    /// Smallest sampled margin per condition, in [`GrowthCondition`] order.
    pub min_margin: [f64; 4],
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// The five example families plus the dual of the branching-random-walk limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogId {
    Sbm,
    SteppingStone,
    ContactLimit,
    Kpz,
    Brwre,
    BrwreDual,
}

impl CatalogId {
    pub const ALL: [CatalogId; 6] = [
        CatalogId::Sbm,
        CatalogId::SteppingStone,
        CatalogId::ContactLimit,
        CatalogId::Kpz,
        CatalogId::Brwre,
        CatalogId::BrwreDual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CatalogId::Sbm => "sbm",
            CatalogId::SteppingStone => "stepping_stone",
            CatalogId::ContactLimit => "contact_limit",
            CatalogId::Kpz => "kpz",
            CatalogId::Brwre => "brwre",
            CatalogId::BrwreDual => "brwre_dual",
        }
    }
}

impl fmt::Display for CatalogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CatalogId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CatalogId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown catalog id {s:?}")))
    }
}

/// Family parameters for [`catalog_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyParams {
    /// Constant drift β of the super-Brownian family.
    pub beta: f64,
    /// Growth rate θ of the contact-process limit.
    pub theta: f64,
    /// Mutation rate q of the stepping-stone family.
    pub mutation: f64,
    /// Selection coefficient of the stepping-stone family (must be ≥ 0).
    pub selection: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            theta: 1.0,
            mutation: 0.0,
            selection: 0.0,
        }
    }
}

pub fn catalog(id: CatalogId) -> CoefficientSet {
    catalog_with(id, &FamilyParams::default()).expect("default family parameters are valid")
}

pub fn catalog_with(id: CatalogId, fp: &FamilyParams) -> Result<CoefficientSet> {
    let sqrt_u = |u: f64| u.max(0.0).sqrt();
    let set = match id {
        CatalogId::Sbm => {
            let beta = fp.beta;
            CoefficientSet::new(
                format!("sbm(beta = {beta})"),
                move |_| beta,
                sqrt_u,
                GrowthParams {
                    theta: 1.0,
                    r: 0.5,
                    upper_b: beta.max(0.0),
                    lower_b: (-beta).max(0.0),
                    l_sigma: 1.0,
                },
            )?
            .with_gamma(|_| 1.0)
        }
        CatalogId::SteppingStone => {
            // a(u) = qu + s·u(1 - u), so b(u) = q + s(1 - u) extends continuously to 0.
            let (q, s) = (fp.mutation, fp.selection);
            if q < 0.0 || s < 0.0 {
                return Err(Error::Config(format!(
                    "stepping-stone mutation and selection must be ≥ 0, got q = {q}, s = {s}"
                )));
            }
            CoefficientSet::new(
                format!("stepping_stone(q = {q}, s = {s})"),
                move |u| q + s * (1.0 - u),
                |u| (u * (1.0 - u)).max(0.0).sqrt(),
                GrowthParams {
                    theta: 1.0,
                    r: 0.5,
                    upper_b: q + s,
                    lower_b: s,
                    l_sigma: 1.0,
                },
            )?
            .with_gamma(|u| (1.0 - u).max(0.0))
        }
        CatalogId::ContactLimit => {
            let theta = fp.theta;
            if theta < 0.0 {
                return Err(Error::Config(format!("contact θ must be ≥ 0, got {theta}")));
            }
            CoefficientSet::new(
                format!("contact_limit(theta = {theta})"),
                move |u| theta - u,
                sqrt_u,
                GrowthParams {
                    theta: 1.0,
                    r: 0.5,
                    upper_b: theta,
                    lower_b: 1.0_f64.max(-theta),
                    l_sigma: 1.0,
                },
            )?
            .with_gamma(|_| 1.0)
        }
        CatalogId::Kpz => CoefficientSet::new(
            "kpz",
            |_| 0.0,
            |u| u.max(0.0),
            GrowthParams {
                theta: 1.0,
                r: 1.0,
                upper_b: 0.0,
                lower_b: 0.0,
                l_sigma: 1.0,
            },
        )?
        .with_gamma(|u| u),
        CatalogId::Brwre => CoefficientSet::new(
            "brwre",
            |_| 0.0,
            |u| (u + u * u).max(0.0).sqrt(),
            GrowthParams {
                theta: 1.0,
                r: 0.5,
                upper_b: 0.0,
                lower_b: 0.0,
                l_sigma: 1.0,
            },
        )?
        .with_gamma(|u| 1.0 + u),
        CatalogId::BrwreDual => CoefficientSet::new(
            "brwre_dual",
            |u| -0.5 * u,
            |u| u.max(0.0),
            GrowthParams {
                theta: 1.0,
                r: 1.0,
                upper_b: 0.0,
                lower_b: 0.5,
                l_sigma: 1.0,
            },
        )?
        .with_gamma(|u| u),
    };
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_examples() {
        let sbm = catalog(CatalogId::Sbm);
        for &u in &[1e-6, 0.3, 1.0, 17.0] {
            assert!((sbm.gamma(u).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(sbm.gamma(0.0).unwrap(), 0.0);
        let brwre = catalog(CatalogId::Brwre);
        for &u in &[0.1, 2.0, 9.0] {
            assert!((brwre.gamma(u).unwrap() - (1.0 + u)).abs() < 1e-12);
        }
        for id in CatalogId::ALL {
            assert_eq!(catalog(id).gamma(0.0).unwrap(), 0.0);
        }
        assert!(matches!(sbm.gamma(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma_times_u_is_sigma_squared() {
        for id in CatalogId::ALL {
            let c = catalog(id);
            for k in 1..200 {
                let u = k as f64 * 0.37;
                let s2 = c.sigma(u).powi(2);
                let lhs = c.gamma(u).unwrap() * u;
                assert!((lhs - s2).abs() <= 1e-12 * s2.max(1e-300), "{id} at {u}");
            }
        }
    }

    #[test]
    fn gamma_rate_right_limit() {
        assert_eq!(catalog(CatalogId::Sbm).gamma_rate(0.0), 1.0);
        assert_eq!(catalog(CatalogId::Kpz).gamma_rate(0.0), 0.0);
        let custom =
            CoefficientSet::from_expressions("0", "sqrt(u)", GrowthParams {
                theta: 1.0,
                r: 0.5,
                upper_b: 0.0,
                lower_b: 0.0,
                l_sigma: 1.0,
            })
            .unwrap();
        assert!((custom.gamma_zero() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn catalog_examples() {
        let kpz = catalog(CatalogId::Kpz);
        assert_eq!(kpz.b(2.0), 0.0);
        assert_eq!(kpz.sigma(2.0), 2.0);
        let contact = catalog(CatalogId::ContactLimit);
        assert_eq!(contact.b(3.0), -2.0);
        let dual = catalog(CatalogId::BrwreDual);
        assert_eq!(dual.b(4.0), -2.0);
        assert_eq!(dual.sigma(4.0), 4.0);
        assert_eq!(dual.drift(4.0), -8.0);
        assert!("voter".parse::<CatalogId>().is_err());
        assert_eq!("brwre_dual".parse::<CatalogId>().unwrap(), CatalogId::BrwreDual);
    }

    #[test]
    fn stepping_stone_absorbing_states() {
        let ss = catalog_with(
            CatalogId::SteppingStone,
            &FamilyParams {
                mutation: 0.2,
                selection: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ss.sigma(0.0), 0.0);
        assert_eq!(ss.sigma(1.0), 0.0);
        // continuous extension at 0: b(0) = q + s
        assert!((ss.b(0.0) - 0.7).abs() < 1e-15);
        assert!((ss.drift(0.5) - (0.2 * 0.5 + 0.5 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn every_catalog_family_passes_growth() {
        for id in CatalogId::ALL {
            let rep = catalog(id).validate_growth(100.0, 10_000).unwrap();
            assert!(rep.passed(), "{id}: {:?}", rep.violation);
        }
        let contact = catalog_with(CatalogId::ContactLimit, &FamilyParams {
            theta: 2.5,
            ..Default::default()
        })
        .unwrap();
        assert!(contact.validate_growth(100.0, 1000).unwrap().passed());
    }

    #[test]
    fn growth_detects_exponential_drift() {
        let c = CoefficientSet::new(
            "exp",
            f64::exp,
            |u| u,
            GrowthParams {
                theta: 1.0,
                r: 1.0,
                upper_b: 5.0,
                lower_b: 0.0,
                l_sigma: 1.0,
            },
        )
        .unwrap();
        let rep = c.validate_growth(10.0, 1000).unwrap();
        let v = rep.violation.expect("must fail");
        assert_eq!(v.condition, GrowthCondition::DriftUpper);
        assert!(v.u > 5f64.ln());
        assert!(v.margin < 0.0);
    }

    #[test]
    fn growth_equality_case_passes() {
        let c = CoefficientSet::new(
            "linear",
            |_| 0.0,
            |u| u,
            GrowthParams {
                theta: 1.0,
                r: 1.0,
                upper_b: 0.0,
                lower_b: 0.0,
                l_sigma: 1.0,
            },
        )
        .unwrap();
        assert!(c.validate_growth(100.0, 500).unwrap().passed());
        assert!(c.validate_growth(100.0, 50).is_err());
    }

    #[test]
    fn contact_limit_with_explicit_bounds() {
        let c = catalog(CatalogId::ContactLimit);
        let p = c.params();
        assert_eq!((p.upper_b, p.lower_b, p.theta), (1.0, 1.0, 1.0));
        assert!(c.validate_growth(100.0, 1000).unwrap().passed());
    }

    #[test]
    fn regularize_examples() {
        let sbm = catalog(CatalogId::Sbm);
        assert!((sbm.regularize_sigma(1, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(sbm.regularize_sigma(7, 0.0).unwrap(), 0.0);
        assert!(sbm.regularize_sigma(0, 1.0).is_err());
        assert!(sbm.regularize_sigma(1, -1.0).is_err());

        let c = CoefficientSet::from_expressions("0", "u^0.3", GrowthParams {
            theta: 1.0,
            r: 0.3,
            upper_b: 0.0,
            lower_b: 0.0,
            l_sigma: 1.0,
        })
        .unwrap();
        let target = 2f64.powf(0.3);
        let mut prev = 0.0;
        for n in 1..=4096 {
            let v = c.regularize_sigma(n, 2.0).unwrap();
            assert!(v > prev && v < target);
            prev = v;
        }
        assert!((target - prev) < 1e-3);
    }

    #[test]
    fn regularized_set_satisfies_raised_growth() {
        let c = CoefficientSet::from_expressions("0", "u^0.3 + u", GrowthParams {
            theta: 1.0,
            r: 0.3,
            upper_b: 0.0,
            lower_b: 0.0,
            l_sigma: 1.0,
        })
        .unwrap();
        for n in [1, 2, 8, 64] {
            let reg = c.regularized(n).unwrap();
            assert!((reg.params().r - 0.8).abs() < 1e-15);
            assert!(reg.validate_growth(100.0, 5000).unwrap().passed());
            assert_eq!(reg.gamma_zero(), 0.0);
            // γₙ(u) = σ²/(u + 1/n) is finite near 0
            assert!(reg.gamma(1e-9).unwrap() < 1.0);
        }
    }

    proptest! {
        #[test]
        fn regularization_monotone_and_bounded(u in 0.0f64..50.0, n in 1usize..500) {
            let c = catalog(CatalogId::Brwre);
            let a = c.regularize_sigma(n, u).unwrap();
            let b = c.regularize_sigma(n + 1, u).unwrap();
            prop_assert!(a <= b);
            prop_assert!(b <= c.sigma(u));
            prop_assert!(a >= 0.0);
        }
    }
}
