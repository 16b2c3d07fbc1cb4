//! Rectangle thresholds `(l1, r1) x (l2, r2)` tied to the four Type I error
//! targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::bisect_expanding;

/// Target Type I errors `alpha_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub alpha_00: f64,
    pub alpha_01: f64,
    pub alpha_10: f64,
    pub alpha_11: f64,
}

fn check_prob(name: &str, a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must lie in (0, 1), got {a}")))
    }
}

/// `alpha_11 = 1 - (1 - a01)(1 - a10)/(1 - a00)`.
pub fn induce_fourth_alpha(a00: f64, a01: f64, a10: f64) -> Result<f64> {
    check_prob("alpha_00", a00)?;
    check_prob("alpha_01", a01)?;
    check_prob("alpha_10", a10)?;
    let ratio = (1.0 - a01) * (1.0 - a10) / (1.0 - a00);
    let a11 = 1.0 - ratio;
    if a11 > 0.0 && a11 < 1.0 {
        Ok(a11)
    } else {
        Err(Error::Infeasible(format!(
            "(1-alpha_01)(1-alpha_10)/(1-alpha_00) = {ratio} must lie in (0, 1) for alpha_11 to be a probability"
        )))
    }
}

impl ErrorSpec {
    pub fn new(alpha_00: f64, alpha_01: f64, alpha_10: f64, alpha_11: f64) -> Result<Self> {
        let e = Self {
            alpha_00,
            alpha_01,
            alpha_10,
            alpha_11,
        };
        e.validate()?;
        Ok(e)
    }

    /// Complete three targets with the induced `alpha_11`.
    pub fn from_three(a00: f64, a01: f64, a10: f64) -> Result<Self> {
        let a11 = induce_fourth_alpha(a00, a01, a10)?;
        Self::new(a00, a01, a10, a11)
    }

    /// All four targets equal to `alpha` is infeasible for `alpha > 0`; this
    /// uses `alpha` for the three free targets.
    pub fn uniform(alpha: f64) -> Result<Self> {
        Self::from_three(alpha, alpha, alpha)
    }

    pub fn constraint_residual(&self) -> f64 {
        (1.0 - self.alpha_00) * (1.0 - self.alpha_11) - (1.0 - self.alpha_01) * (1.0 - self.alpha_10)
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("alpha_00", self.alpha_00)?;
        check_prob("alpha_01", self.alpha_01)?;
        check_prob("alpha_10", self.alpha_10)?;
        check_prob("alpha_11", self.alpha_11)?;
        let res = self.constraint_residual();
        if res.abs() > 1e-12 {
            return Err(Error::Infeasible(format!(
                "(1-alpha_00)(1-alpha_11) - (1-alpha_01)(1-alpha_10) = {res:e}"
            )));
        }
        Ok(())
    }

    /// `alpha` indexed by world label `ij`.
    pub fn get(&self, i: u8, j: u8) -> f64 {
        match (i, j) {
            (0, 0) => self.alpha_00,
            (0, 1) => self.alpha_01,
            (1, 0) => self.alpha_10,
            _ => self.alpha_11,
        }
    }

    /// `(1 - alpha_10)/(1 - alpha_00)`.
    pub fn c1(&self) -> f64 {
        (1.0 - self.alpha_10) / (1.0 - self.alpha_00)
    }

    /// `(1 - alpha_01)/(1 - alpha_00)`.
    pub fn c2(&self) -> f64 {
        (1.0 - self.alpha_01) / (1.0 - self.alpha_00)
    }
}

/// Thresholds in log-likelihood units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub l1: f64,
    pub r1: f64,
    pub l2: f64,
    pub r2: f64,
}

impl Rectangle {
    pub fn new(l1: f64, r1: f64, l2: f64, r2: f64) -> Result<Self> {
        let r = Self { l1, r1, l2, r2 };
        r.validate()?;
        Ok(r)
    }

    pub fn square(l: f64, r: f64) -> Result<Self> {
        Self::new(l, r, l, r)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, (l, r)) in [(self.l1, self.r1), (self.l2, self.r2)].into_iter().enumerate() {
            if !(l < 0.0 && 0.0 < r) || !l.is_finite() || !r.is_finite() {
                return Err(Error::Parameter(format!(
                    "rectangle needs l_{0} < 0 < r_{0}, got ({l}, {r})",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            (self.l1, self.r1)
        } else {
            (self.l2, self.r2)
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.l1 <= x && x <= self.r1 && self.l2 <= y && y <= self.r2
    }
}

/// Reading of the coupled `r1`-`r2` relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdVariant {
    /// Denominator `(1 - a01) + (1 - a00 e^{r2})`.
    #[default]
    Printed,
    /// Denominator `(1 - a01) + (1 - a00) e^{r2}`.
    Corrected,
}

impl ThresholdVariant {
    pub fn other(self) -> Self {
        match self {
            ThresholdVariant::Printed => ThresholdVariant::Corrected,
            ThresholdVariant::Corrected => ThresholdVariant::Printed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ThresholdVariant::Printed => "printed",
            ThresholdVariant::Corrected => "corrected",
        }
    }

    fn denominator(self, e: &ErrorSpec, r2: f64) -> f64 {
        match self {
            ThresholdVariant::Printed => (1.0 - e.alpha_01) + (1.0 - e.alpha_00 * r2.exp()),
            ThresholdVariant::Corrected => (1.0 - e.alpha_01) + (1.0 - e.alpha_00) * r2.exp(),
        }
    }

    /// Right-hand side of the coupled relation, `C1 / (e^{r2}/D(r2) - 1)`.
    pub fn coupled_rhs(self, e: &ErrorSpec, r2: f64) -> f64 {
        e.c1() / (r2.exp() / self.denominator(e, r2) - 1.0)
    }
}

/// `(ln((a10 - a00)/(1 - a00)), ln(a10/(1 - a00)))`.
pub fn l1_feasible_interval(a00: f64, a10: f64) -> Result<(f64, f64)> {
    check_prob("alpha_00", a00)?;
    check_prob("alpha_10", a10)?;
    if a10 <= a00 {
        return Err(Error::IntervalUndefined(format!(
            "lower endpoint needs alpha_10 > alpha_00 (got {a10} <= {a00})"
        )));
    }
    Ok((((a10 - a00) / (1.0 - a00)).ln(), (a10 / (1.0 - a00)).ln()))
}

/// `r = -ln(1 - (1 - e^l)/c)`.
pub fn r_from_l(l: f64, c: f64) -> Result<f64> {
    let arg = 1.0 - (1.0 - l.exp()) / c;
    if arg > 0.0 {
        Ok(-arg.ln())
    } else {
        Err(Error::Infeasible(format!(
            "log argument 1 - (1 - e^l)/C = {arg} must be > 0 (l = {l}, C = {c})"
        )))
    }
}

/// `l = ln(1 - c (1 - e^{-r}))`, the inverse of [`r_from_l`].
pub fn l_from_r(r: f64, c: f64) -> Result<f64> {
    let arg = 1.0 - c * (-(-r).exp_m1());
    if arg > 0.0 {
        Ok(arg.ln())
    } else {
        Err(Error::Infeasible(format!(
            "log argument 1 - C (1 - e^-r) = {arg} must be > 0 (r = {r}, C = {c})"
        )))
    }
}

/// Solve the threshold system for a given `l1`.
pub fn solve_rectangle(errors: &ErrorSpec, l1: f64, variant: ThresholdVariant) -> Result<Rectangle> {
    errors.validate()?;
    let (a00, a10) = (errors.alpha_00, errors.alpha_10);
    if a10 < a00 {
        return Err(Error::IntervalUndefined(format!(
            "alpha_10 < alpha_00 ({a10} < {a00}) leaves no admissible l1"
        )));
    }
    let upper = (a10 / (1.0 - a00)).ln();
    let lower = if a10 > a00 {
        ((a10 - a00) / (1.0 - a00)).ln()
    } else {
        f64::NEG_INFINITY
    };
    if !(l1 > lower && l1 < upper) {
        return Err(Error::Infeasible(format!(
            "l1 = {l1} outside the admissible interval ({lower}, {upper})"
        )));
    }
    let r1 = r_from_l(l1, errors.c1())?;
    let target = r1.exp();
    // e^{r1} = C1/(e^{r2}/D - 1)  <=>  e^{r2} = (1 + C1 e^{-r1}) D(r2)
    let t = 1.0 + errors.c1() / target;
    let f = |r2: f64| {
        let scale = r2.exp();
        (scale - t * variant.denominator(errors, r2)) / scale.max(1.0)
    };
    let r2 = bisect_expanding(f, 1e-8, 50.0, 0.0, 12)?;
    let l2 = l_from_r(r2, errors.c2())?;
    Rectangle::new(l1, r1, l2, r2)
}

/// Residuals of the four defining relations at `rect`: the alpha constraint,
/// `r1(l1)`, the coupled `r1`-`r2` relation (in log form) and `r2(l2)`.
pub fn system_residuals(errors: &ErrorSpec, rect: &Rectangle, variant: ThresholdVariant) -> [f64; 4] {
    let eq1 = errors.constraint_residual();
    let eq2 = r_from_l(rect.l1, errors.c1()).map_or(f64::INFINITY, |r| r - rect.r1);
    let eq3 = rect.r1 - variant.coupled_rhs(errors, rect.r2).ln();
    let eq4 = r_from_l(rect.l2, errors.c2()).map_or(f64::INFINITY, |r| r - rect.r2);
    [eq1, eq2, eq3, eq4]
}

/// Square rectangle whose per-coordinate exit probabilities under the
/// drift test give a total error `alpha` in world 00: each side is
/// `ln(p/(1-p))` with `p = sqrt(1 - alpha)`.
pub fn symmetric_rectangle(alpha: f64) -> Result<Rectangle> {
    check_prob("alpha", alpha)?;
    let p = (1.0 - alpha).sqrt();
    let r = (p / (1.0 - p)).ln();
    Rectangle::square(-r, r)
}

/// JSON shape of a solved rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleReport {
    pub l1: f64,
    pub r1: f64,
    pub l2: f64,
    pub r2: f64,
    pub alpha: ErrorSpec,
    pub variant: ThresholdVariant,
    pub residuals: [f64; 4],
}

impl RectangleReport {
    pub fn new(errors: &ErrorSpec, rect: &Rectangle, variant: ThresholdVariant) -> Self {
        Self {
            l1: rect.l1,
            r1: rect.r1,
            l2: rect.l2,
            r2: rect.r2,
            alpha: *errors,
            variant,
            residuals: system_residuals(errors, rect, variant),
        }
    }
}
