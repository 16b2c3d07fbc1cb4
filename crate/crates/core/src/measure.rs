//! Finite-activity jump measures on `(0, inf)`: the base measure `nu`, its
//! linear tilts `(1 + a x) nu(dx)`, and the log-likelihood jump kernel built
//! from them.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_half_line, QuadratureSpec};

/// Shape of the base jump-size density. Always stored with unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDensity {
    /// `exp(-x/scale)/scale`.
    Exponential { scale: f64 },
    /// Piecewise-linear density through `(knots[i], values[i])`, zero outside.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

/// `nu(dx) = intensity * (1 + tilt_a x) * f(x) dx` on `x > 0`, `f` the unit-mass
/// base density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMeasureSpec {
    pub base: BaseDensity,
    /// Expected jumps per unit time before tilting.
    pub intensity: f64,
    pub tilt_a: f64,
}

impl JumpMeasureSpec {
    pub fn exponential(intensity: f64, scale: f64) -> Self {
        Self {
            base: BaseDensity::Exponential { scale },
            intensity,
            tilt_a: 0.0,
        }
    }

    /// Tabulated density; `values` are rescaled to unit mass.
    pub fn tabulated(intensity: f64, knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Parameter(
                "tabulated density needs at least two knots with matching values".into(),
            ));
        }
        if knots[0] < 0.0 || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter(
                "tabulated knots must be nonnegative and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("tabulated density must be nonnegative".into()));
        }
        let mass: f64 = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(k, v)| 0.5 * (k[1] - k[0]) * (v[0] + v[1]))
            .sum();
        if !(mass > 0.0) {
            return Err(Error::Parameter("tabulated density has zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        let spec = Self {
            base: BaseDensity::Tabulated { knots, values },
            intensity,
            tilt_a: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Narrow triangular density of total mass `intensity` centred on `at`.
    pub fn near_point_mass(intensity: f64, at: f64, half_width: f64) -> Result<Self> {
        Self::tabulated(
            intensity,
            vec![at - half_width, at, at + half_width],
            vec![0.0, 1.0, 0.0],
        )
    }

    pub fn with_tilt(mut self, tilt_a: f64) -> Self {
        self.tilt_a = tilt_a;
        self
    }

    pub fn untilted(&self) -> Self {
        self.clone().with_tilt(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.intensity.is_finite() {
            return Err(Error::UnsupportedMeasure(
                "infinite total mass (only compound-Poisson measures are simulated)".into(),
            ));
        }
        if self.intensity < 0.0 {
            return Err(Error::Parameter("jump intensity must be >= 0".into()));
        }
        if !(self.tilt_a >= 0.0) || !self.tilt_a.is_finite() {
            return Err(Error::Parameter("tilt coefficient must be finite and >= 0".into()));
        }
        match &self.base {
            BaseDensity::Exponential { scale } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(Error::Parameter("exponential scale must be > 0".into()));
                }
            }
            BaseDensity::Tabulated { knots, .. } => {
                if knots[0] < 0.0 {
                    return Err(Error::Parameter("tabulated support must lie in [0, inf)".into()));
                }
            }
        }
        Ok(())
    }

    /// Unit-mass base density `f(x)`.
    pub fn base_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match &self.base {
            BaseDensity::Exponential { scale } => (-x / scale).exp() / scale,
            BaseDensity::Tabulated { knots, values } => tabulated_value(knots, values, x),
        }
    }

    /// Density of the (tilted) measure at `x`.
    pub fn density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.intensity * (1.0 + self.tilt_a * x) * self.base_pdf(x)
    }

    fn base_mean(&self) -> f64 {
        match &self.base {
            BaseDensity::Exponential { scale } => *scale,
            BaseDensity::Tabulated { knots, values } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(k, v)| {
                    // exact for a linear density on [k0, k1]
                    let h = k[1] - k[0];
                    h * (v[0] * (2.0 * k[0] + k[1]) + v[1] * (k[0] + 2.0 * k[1])) / 6.0
                })
                .sum(),
        }
    }

    /// Total mass `int (1 + a x) nu(dx)`: the jump rate of the tilted measure.
    pub fn mass(&self) -> f64 {
        self.intensity * (1.0 + self.tilt_a * self.base_mean())
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.base {
            BaseDensity::Exponential { .. } => Vec::new(),
            BaseDensity::Tabulated { knots, .. } => knots.clone(),
        }
    }

    pub fn support_upper(&self) -> Option<f64> {
        match &self.base {
            BaseDensity::Exponential { .. } => None,
            BaseDensity::Tabulated { knots, .. } => knots.last().copied(),
        }
    }

    /// `int h(x) nu(dx)` against the tilted measure.
    pub fn integrate<H: Fn(f64) -> f64>(&self, h: H, quad: &QuadratureSpec) -> Result<f64> {
        if self.intensity == 0.0 {
            return Ok(0.0);
        }
        integrate_half_line(
            |x| h(x) * self.density(x),
            &self.breakpoints(),
            self.support_upper(),
            quad,
        )
    }

    pub fn sampler(&self) -> Result<SizeSampler> {
        self.validate()?;
        Ok(match &self.base {
            BaseDensity::Exponential { scale } => {
                // (1 + a x) e^{-x/s}/s is a mixture of Gamma(1, s) and Gamma(2, s).
                let w_tilt = self.tilt_a * scale;
                SizeSampler::GammaMix {
                    scale: *scale,
                    shapes: [1, 2],
                    p_first: 1.0 / (1.0 + w_tilt),
                }
            }
            BaseDensity::Tabulated { knots, values } => {
                SizeSampler::Panels(PanelSampler::new(knots, values, self.tilt_a))
            }
        })
    }
}

fn tabulated_value(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    if x < knots[0] || x > knots[n - 1] {
        return 0.0;
    }
    let i = match knots.binary_search_by(|k| k.total_cmp(&x)) {
        Ok(i) => return values[i],
        Err(i) => i,
    };
    let (x0, x1) = (knots[i - 1], knots[i]);
    let t = (x - x0) / (x1 - x0);
    values[i - 1] * (1.0 - t) + values[i] * t
}

/// Exact samplers for normalised jump-size laws.
#[derive(Debug, Clone)]
pub enum SizeSampler {
    GammaMix {
        scale: f64,
        shapes: [u32; 2],
        p_first: f64,
    },
    Panels(PanelSampler),
    /// Draw from `inner`, accept with probability `log(1+x)/(x * bias)`.
    LogRejection {
        inner: Box<SizeSampler>,
        /// `true`: `inner` is size-biased, accept with `log(1+x)/x`;
        /// `false`: accept with `log(1+x)/log(1+x_max)`.
        size_biased: bool,
        x_max: f64,
    },
    /// Push draws of `inner` through `x -> log(1 + a x)`.
    LogMap { inner: Box<SizeSampler>, a: f64 },
}

impl SizeSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SizeSampler::GammaMix {
                scale,
                shapes,
                p_first,
            } => {
                let k = if rng.random::<f64>() < *p_first {
                    shapes[0]
                } else {
                    shapes[1]
                };
                let e: f64 = (0..k).map(|_| Distribution::<f64>::sample(&Exp1, rng)).sum::<f64>();
                scale * e
            }
            SizeSampler::Panels(p) => p.sample(rng),
            SizeSampler::LogRejection {
                inner,
                size_biased,
                x_max,
            } => loop {
                let x = inner.sample(rng);
                if x <= 0.0 {
                    continue;
                }
                let p = if *size_biased {
                    x.ln_1p() / x
                } else {
                    x.ln_1p() / x_max.ln_1p()
                };
                if rng.random::<f64>() < p {
                    return x;
                }
            },
            SizeSampler::LogMap { inner, a } => (a * inner.sample(rng)).ln_1p(),
        }
    }
}

/// Rejection sampler for `(1 + a x) * f(x)` with `f` piecewise linear.
#[derive(Debug, Clone)]
pub struct PanelSampler {
    knots: Vec<f64>,
    values: Vec<f64>,
    a: f64,
    cumulative: Vec<f64>,
    bounds: Vec<f64>,
}

impl PanelSampler {
    pub fn new(knots: &[f64], values: &[f64], a: f64) -> Self {
        let mut cumulative = Vec::with_capacity(knots.len());
        let mut bounds = Vec::with_capacity(knots.len());
        let mut acc = 0.0;
        for (k, v) in knots.windows(2).zip(values.windows(2)) {
            let h = k[1] - k[0];
            let lin = |x: f64| v[0] + (v[1] - v[0]) * (x - k[0]) / h;
            let gp = |x: f64| (1.0 + a * x) * lin(x);
            // Simpson is exact for the quadratic integrand
            acc += h / 6.0 * (gp(k[0]) + 4.0 * gp(0.5 * (k[0] + k[1])) + gp(k[1]));
            cumulative.push(acc);
            let mut bound = gp(k[0]).max(gp(k[1]));
            // vertex of (1 + a x)(v0 + s (x - k0))
            let s = (v[1] - v[0]) / h;
            if a != 0.0 && s != 0.0 {
                let xv = 0.5 * (k[0] - v[0] / s - 1.0 / a);
                if xv > k[0] && xv < k[1] {
                    bound = bound.max(gp(xv));
                }
            }
            bounds.push(bound);
        }
        Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            a,
            cumulative,
            bounds,
        }
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * self.total();
        let panel = self
            .cumulative
            .partition_point(|c| *c < u)
            .min(self.cumulative.len() - 1);
        let (x0, x1) = (self.knots[panel], self.knots[panel + 1]);
        loop {
            let x = x0 + (x1 - x0) * rng.random::<f64>();
            let v = rng.random::<f64>() * self.bounds[panel];
            if v <= (1.0 + self.a * x) * tabulated_value(&self.knots, &self.values, x) {
                return x;
            }
        }
    }
}

/// How the log-likelihood jump kernel `K` is built from `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// `K(dx) = a log(1+x) (1 + a x) nu(dx)`.
    #[default]
    DensityTilt,
    /// `K = image of nu under x -> log(1 + a x)`.
    Pushforward,
}

/// The jump kernel `K` of a log-likelihood-ratio process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrJumpKernel {
    /// Untilted base measure `nu`.
    pub nu: JumpMeasureSpec,
    pub a: f64,
    pub mode: KernelMode,
}

impl LlrJumpKernel {
    pub fn new(nu: &JumpMeasureSpec, a: f64, mode: KernelMode) -> Self {
        Self {
            nu: nu.untilted(),
            a,
            mode,
        }
    }

    pub fn zero() -> Self {
        Self {
            nu: JumpMeasureSpec::exponential(0.0, 1.0),
            a: 0.0,
            mode: KernelMode::DensityTilt,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a == 0.0 || self.nu.intensity == 0.0
    }

    /// Density of `K` (density-tilt mode only; pushforward has its own
    /// change of variables).
    pub fn density(&self, y: f64) -> f64 {
        if self.is_zero() || y <= 0.0 {
            return 0.0;
        }
        match self.mode {
            KernelMode::DensityTilt => {
                self.a * y.ln_1p() * (1.0 + self.a * y) * self.nu.density(y)
            }
            KernelMode::Pushforward => {
                // x = (e^y - 1)/a, dx/dy = e^y / a
                let x = y.exp_m1() / self.a;
                if !x.is_finite() {
                    return 0.0;
                }
                self.nu.density(x) * y.exp() / self.a
            }
        }
    }

    /// `int h(y) K(dy)`.
    pub fn integrate<H: Fn(f64) -> f64>(&self, h: H, quad: &QuadratureSpec) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let a = self.a;
        match self.mode {
            KernelMode::DensityTilt => self
                .nu
                .integrate(|x| h(x) * a * x.ln_1p() * (1.0 + a * x), quad),
            KernelMode::Pushforward => self.nu.integrate(|x| h((a * x).ln_1p()), quad),
        }
    }

    /// Integration breakpoints in the `y` variable.
    pub fn breakpoints(&self) -> Vec<f64> {
        let b = self.nu.breakpoints();
        match self.mode {
            KernelMode::DensityTilt => b,
            KernelMode::Pushforward => b.into_iter().map(|x| (self.a * x).ln_1p()).collect(),
        }
    }

    pub fn support_upper(&self) -> Option<f64> {
        let u = self.nu.support_upper();
        match self.mode {
            KernelMode::DensityTilt => u,
            KernelMode::Pushforward => u.map(|x| (self.a * x).ln_1p()),
        }
    }

    pub fn mass(&self, quad: &QuadratureSpec) -> Result<f64> {
        self.integrate(|_| 1.0, quad)
    }

    pub fn mean(&self, quad: &QuadratureSpec) -> Result<f64> {
        self.integrate(|y| y, quad)
    }

    pub fn sampler(&self) -> Result<Option<SizeSampler>> {
        if self.is_zero() {
            return Ok(None);
        }
        Ok(Some(match self.mode {
            KernelMode::Pushforward => SizeSampler::LogMap {
                inner: Box::new(self.nu.sampler()?),
                a: self.a,
            },
            KernelMode::DensityTilt => match &self.nu.base {
                BaseDensity::Exponential { scale } => {
                    // proposal x (1 + a x) e^{-x/s}: Gamma(2, s) / Gamma(3, s) mixture
                    let p_first = 1.0 / (1.0 + 2.0 * self.a * scale);
                    SizeSampler::LogRejection {
                        inner: Box::new(SizeSampler::GammaMix {
                            scale: *scale,
                            shapes: [2, 3],
                            p_first,
                        }),
                        size_biased: true,
                        x_max: f64::INFINITY,
                    }
                }
                BaseDensity::Tabulated { .. } => SizeSampler::LogRejection {
                    inner: Box::new(self.nu.clone().with_tilt(self.a).sampler()?),
                    size_biased: false,
                    x_max: self.nu.support_upper().unwrap_or(f64::INFINITY),
                },
            },
        }))
    }
}
