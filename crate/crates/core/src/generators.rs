//! Infinitesimal generators of the drift-test and jump-test statistics, and
//! a Monte Carlo Dynkin check `(E xi(u_t) - xi(x))/t -> L xi(x)`.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::MeanEstimate;
use crate::error::{ensure, Error, Result};
use crate::levy_sim::sqrt_psd_2x2;
use crate::likelihood::{DriftTestParams, LlrCoefficients, SignConvention};
use crate::measure::{LlrJumpKernel, SizeSampler};
use crate::quadrature::QuadratureSpec;
use crate::rng::stream_rng;

/// A function on the plane with analytic first and second partials.
pub trait TestFunction: Sync {
    fn value(&self, x: [f64; 2]) -> f64;
    fn grad(&self, x: [f64; 2]) -> [f64; 2];
    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2];
}

/// The basis used by the Dynkin suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicTest {
    Const(f64),
    X1,
    X2,
    X1Sq,
    X1X2,
    ExpNegX1,
}

impl BasicTest {
    pub const SUITE: [BasicTest; 5] = [
        BasicTest::X1,
        BasicTest::X2,
        BasicTest::X1Sq,
        BasicTest::X1X2,
        BasicTest::ExpNegX1,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BasicTest::Const(_) => "const",
            BasicTest::X1 => "x1",
            BasicTest::X2 => "x2",
            BasicTest::X1Sq => "x1^2",
            BasicTest::X1X2 => "x1*x2",
            BasicTest::ExpNegX1 => "exp(-x1)",
        }
    }
}

impl TestFunction for BasicTest {
    fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            BasicTest::Const(c) => *c,
            BasicTest::X1 => x[0],
            BasicTest::X2 => x[1],
            BasicTest::X1Sq => x[0] * x[0],
            BasicTest::X1X2 => x[0] * x[1],
            BasicTest::ExpNegX1 => (-x[0]).exp(),
        }
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            BasicTest::Const(_) => [0.0, 0.0],
            BasicTest::X1 => [1.0, 0.0],
            BasicTest::X2 => [0.0, 1.0],
            BasicTest::X1Sq => [2.0 * x[0], 0.0],
            BasicTest::X1X2 => [x[1], x[0]],
            BasicTest::ExpNegX1 => [-(-x[0]).exp(), 0.0],
        }
    }

    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        match self {
            BasicTest::X1Sq => [[2.0, 0.0], [0.0, 0.0]],
            BasicTest::X1X2 => [[0.0, 1.0], [1.0, 0.0]],
            BasicTest::ExpNegX1 => [[(-x[0]).exp(), 0.0], [0.0, 0.0]],
            _ => [[0.0; 2]; 2],
        }
    }
}

/// Linear combination `a f + b g`.
pub struct Combination<'a> {
    pub a: f64,
    pub f: &'a dyn TestFunction,
    pub b: f64,
    pub g: &'a dyn TestFunction,
}

impl TestFunction for Combination<'_> {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.a * self.f.value(x) + self.b * self.g.value(x)
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        let (p, q) = (self.f.grad(x), self.g.grad(x));
        [self.a * p[0] + self.b * q[0], self.a * p[1] + self.b * q[1]]
    }

    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let (p, q) = (self.f.hessian(x), self.g.hessian(x));
        let m = |i: usize, j: usize| self.a * p[i][j] + self.b * q[i][j];
        [[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]]
    }
}

/// Largest relative mismatch between the analytic partials and central
/// differences with step `h`.
pub fn partials_mismatch(f: &dyn TestFunction, x: [f64; 2], h: f64) -> f64 {
    let e = |k: usize, s: f64| {
        let mut y = x;
        y[k] += s;
        y
    };
    let g = f.grad(x);
    let hs = f.hessian(x);
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(a.abs()).max(1.0);
    for k in 0..2 {
        let fd = (f.value(e(k, h)) - f.value(e(k, -h))) / (2.0 * h);
        worst = worst.max(rel(fd, g[k]));
        let gp = f.grad(e(k, h));
        let gm = f.grad(e(k, -h));
        for j in 0..2 {
            let fd2 = (gp[j] - gm[j]) / (2.0 * h);
            worst = worst.max(rel(fd2, hs[k][j]));
        }
    }
    worst
}

fn sign_pow(i: u8) -> f64 {
    if i.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Drift-test generator in world `ij`:
/// `sum_k c_k (d_kk + (-1)^(w_k + 1) d_k)` with `c_k = m_k^2/(2 sigma_k^2)`.
pub fn apply_drift_generator(
    ij: (u8, u8),
    params: &DriftTestParams,
    xi: &dyn TestFunction,
    x: [f64; 2],
) -> Result<f64> {
    apply_drift_generator_with(ij, params, xi, x, SignConvention::Statement)
}

pub fn apply_drift_generator_with(
    ij: (u8, u8),
    params: &DriftTestParams,
    xi: &dyn TestFunction,
    x: [f64; 2],
    convention: SignConvention,
) -> Result<f64> {
    params.validate()?;
    ensure(x.iter().all(|v| v.is_finite()), || "evaluation point must be finite".into())?;
    let g = xi.grad(x);
    let h = xi.hessian(x);
    let worlds = [ij.0, ij.1];
    Ok((0..2)
        .map(|k| params.half_snr(k) * (h[k][k] + convention.factor(worlds[k]) * g[k]))
        .sum())
}

/// `int int h(y1, y2) K1(dy1) K2(dy2)` by nested adaptive quadrature.
pub fn product_integral<H: Fn(f64, f64) -> f64>(
    k1: &LlrJumpKernel,
    k2: &LlrJumpKernel,
    h: H,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if k1.is_zero() || k2.is_zero() {
        return Ok(0.0);
    }
    let m1 = k1.mass(quad)?;
    let inner_quad = QuadratureSpec {
        abs_tol: quad.abs_tol / m1.max(1.0),
        ..*quad
    };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let outer = k1.integrate(
        |y1| match k2.integrate(|y2| h(y1, y2), &inner_quad) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        quad,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    outer
}

/// Nonlocal term `int int (xi(x+y) - xi(x) - y.grad xi(x)/(1+|y|)) dK1 dK2`.
pub fn nonlocal_term(
    k1: &LlrJumpKernel,
    k2: &LlrJumpKernel,
    xi: &dyn TestFunction,
    x: [f64; 2],
    quad: &QuadratureSpec,
) -> Result<f64> {
    let f0 = xi.value(x);
    let g = xi.grad(x);
    let v = product_integral(
        k1,
        k2,
        |y1, y2| {
            let n = y1.hypot(y2);
            xi.value([x[0] + y1, x[1] + y2]) - f0 - (y1 * g[0] + y2 * g[1]) / (1.0 + n)
        },
        quad,
    )?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integrability("nonlocal generator term did not converge".into()))
    }
}

/// Local part of the jump-test generator in world `ij`.
pub fn jump_generator_local(
    ij: (u8, u8),
    rho: f64,
    coeffs: [&LlrCoefficients; 2],
    xi: &dyn TestFunction,
    x: [f64; 2],
) -> f64 {
    let g = xi.grad(x);
    let h = xi.hessian(x);
    let [c1, c2] = coeffs;
    -sign_pow(ij.0) * c1.gamma * g[0] - sign_pow(ij.1) * c2.gamma * g[1]
        + 0.5 * c1.beta * c1.beta * h[0][0]
        + 0.5 * c2.beta * c2.beta * h[1][1]
        + rho * c1.beta * c2.beta * h[0][1]
}

/// Jump-test generator in world `ij`: the local part plus `(-1)^(i+j)` times
/// the nonlocal term.
pub fn apply_jump_generator(
    ij: (u8, u8),
    rho: f64,
    coeffs: [&LlrCoefficients; 2],
    xi: &dyn TestFunction,
    x: [f64; 2],
    quad: &QuadratureSpec,
) -> Result<f64> {
    ensure(rho.abs() <= 1.0, || format!("rho must lie in [-1, 1], got {rho}"))?;
    quad.validate()?;
    let local = jump_generator_local(ij, rho, coeffs, xi, x);
    let nonlocal = nonlocal_term(&coeffs[0].kernel, &coeffs[1].kernel, xi, x, quad)?;
    Ok(local + sign_pow(ij.0 + ij.1) * nonlocal)
}

/// `M = M1 * M2`.
pub fn jump_mass_m(k1: &LlrJumpKernel, k2: &LlrJumpKernel, quad: &QuadratureSpec) -> Result<f64> {
    if k1.is_zero() || k2.is_zero() {
        return Ok(0.0);
    }
    let m = k1.mass(quad)? * k2.mass(quad)?;
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Integrability("jump mass is infinite".into()))
    }
}

/// Jump part of a simulated two-dimensional statistic.
#[derive(Debug, Clone)]
pub enum Jumps2d {
    None,
    /// Independent compound-Poisson parts per coordinate: `(rate, sizes, sign)`.
    Independent([Option<(f64, SizeSampler, f64)>; 2]),
    /// Simultaneous jumps `(y1, y2)` at `rate`, sizes drawn independently.
    Joint { rate: f64, sizes: [SizeSampler; 2], sign: f64 },
}

/// Moments the closed-form second-order terms need.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpMoments {
    /// `int y_k` against the jump measure.
    pub first: [f64; 2],
    /// `int y_k y_l`.
    pub second: [[f64; 2]; 2],
    /// `int (e^{-y_1} - 1)`.
    pub laplace_1: f64,
}

/// A two-dimensional Levy process that can be sampled exactly at a fixed time.
#[derive(Debug, Clone)]
pub struct Levy2d {
    pub drift: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub jumps: Jumps2d,
    pub moments: JumpMoments,
}

impl Levy2d {
    /// `u_t - x`.
    pub fn sample_increment<R: Rng>(&self, chol: &[[f64; 2]; 2], t: f64, rng: &mut R) -> [f64; 2] {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let s = t.sqrt();
        let mut d = [
            self.drift[0] * t + chol[0][0] * z1 * s,
            self.drift[1] * t + (chol[1][0] * z1 + chol[1][1] * z2) * s,
        ];
        let poisson = |rate: f64, rng: &mut R| -> u64 {
            if rate * t > 0.0 {
                Poisson::new(rate * t).expect("positive mean").sample(rng) as u64
            } else {
                0
            }
        };
        match &self.jumps {
            Jumps2d::None => {}
            Jumps2d::Independent(parts) => {
                for (k, part) in parts.iter().enumerate() {
                    if let Some((rate, sizes, sign)) = part {
                        for _ in 0..poisson(*rate, rng) {
                            d[k] += sign * sizes.sample(rng);
                        }
                    }
                }
            }
            Jumps2d::Joint { rate, sizes, sign } => {
                for _ in 0..poisson(*rate, rng) {
                    d[0] += sign * sizes[0].sample(rng);
                    d[1] += sign * sizes[1].sample(rng);
                }
            }
        }
        d
    }

    fn kappa(&self, k: usize) -> f64 {
        self.drift[k] + self.moments.first[k]
    }

    /// `L^2 xi(x)` for the basic functions, from translation invariance.
    pub fn second_order(&self, f: &BasicTest, x: [f64; 2]) -> f64 {
        match f {
            BasicTest::Const(_) | BasicTest::X1 | BasicTest::X2 => 0.0,
            BasicTest::X1Sq => 2.0 * self.kappa(0).powi(2),
            BasicTest::X1X2 => 2.0 * self.kappa(0) * self.kappa(1),
            BasicTest::ExpNegX1 => {
                let psi = -self.drift[0] + 0.5 * self.cov[0][0] + self.moments.laplace_1;
                psi * psi * (-x[0]).exp()
            }
        }
    }
}

/// Observation-driven drift-test statistic in world `ij`: each observation
/// has drift `w_k m_k` and scale `sigma_k`, and `u = (m/sigma^2) z - m^2 t/(2 sigma^2)`.
pub fn drift_dynkin_model(params: &DriftTestParams, ij: (u8, u8)) -> Result<Levy2d> {
    params.validate()?;
    let worlds = [ij.0, ij.1];
    let mut drift = [0.0; 2];
    let mut cov = [[0.0; 2]; 2];
    for k in 0..2 {
        let (m, s) = (params.m[k], params.sigma[k]);
        let mu = f64::from(worlds[k]) * m;
        drift[k] = m / (s * s) * mu - m * m / (2.0 * s * s);
        cov[k][k] = m * m / (s * s);
    }
    Ok(Levy2d {
        drift,
        cov,
        jumps: Jumps2d::None,
        moments: JumpMoments::default(),
    })
}

/// Process whose generator is the jump-test generator in world `ij` for
/// `ij` in {00, 11}: drift `(-1)^(w+1) gamma_k - C_k`, covariance from
/// `beta` and `rho`, and simultaneous jumps from `K1 x K2` at rate `M`.
pub fn jump_dynkin_model(
    coeffs: [&LlrCoefficients; 2],
    ij: (u8, u8),
    rho: f64,
    quad: &QuadratureSpec,
) -> Result<Levy2d> {
    if ij.0 != ij.1 {
        return Err(Error::Precondition(format!(
            "world {}{} carries a negative jump integral and has no process to simulate",
            ij.0, ij.1
        )));
    }
    let (k1, k2) = (&coeffs[0].kernel, &coeffs[1].kernel);
    let worlds = [ij.0, ij.1];
    let cmp: [f64; 2] = [
        product_integral(k1, k2, |a, b| a / (1.0 + a.hypot(b)), quad)?,
        product_integral(k1, k2, |a, b| b / (1.0 + a.hypot(b)), quad)?,
    ];
    let drift = [0, 1].map(|k| -sign_pow(worlds[k]) * coeffs[k].gamma - cmp[k]);
    let (b1, b2) = (coeffs[0].beta, coeffs[1].beta);
    let cov = [[b1 * b1, rho * b1 * b2], [rho * b1 * b2, b2 * b2]];
    let rate = jump_mass_m(k1, k2, quad)?;
    let (jumps, moments) = match (k1.sampler()?, k2.sampler()?) {
        (Some(s1), Some(s2)) if rate > 0.0 => {
            let (m1, m2) = (k1.mass(quad)?, k2.mass(quad)?);
            let e1 = k1.mean(quad)? / m1;
            let e2 = k2.mean(quad)? / m2;
            let q1 = k1.integrate(|y| y * y, quad)? / m1;
            let q2 = k2.integrate(|y| y * y, quad)? / m2;
            let l1 = k1.integrate(|y| (-y).exp(), quad)? / m1;
            let moments = JumpMoments {
                first: [rate * e1, rate * e2],
                second: [[rate * q1, rate * e1 * e2], [rate * e1 * e2, rate * q2]],
                laplace_1: rate * (l1 - 1.0),
            };
            (Jumps2d::Joint { rate, sizes: [s1, s2], sign: 1.0 }, moments)
        }
        _ => (Jumps2d::None, JumpMoments::default()),
    };
    Ok(Levy2d { drift, cov, jumps, moments })
}

/// Monte Carlo Dynkin estimate compared with a generator value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynkinResult {
    /// MC estimate of `(E xi(u_t) - xi(x))/t` minus the generator value.
    pub estimate: f64,
    pub standard_error: f64,
    pub generator: f64,
    /// `t |L^2 xi(x)|`, the size of the first neglected Taylor term (doubled).
    pub bias_allowance: f64,
}

impl DynkinResult {
    pub fn within_band(&self, n_se: f64) -> bool {
        self.estimate.abs() <= n_se * self.standard_error + self.bias_allowance
    }
}

/// Dynkin residuals for several test functions from one shared sample.
pub fn dynkin_residuals(
    model: &Levy2d,
    generator: &[f64],
    fs: &[BasicTest],
    x: [f64; 2],
    t: f64,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<DynkinResult>> {
    ensure(t > 0.0 && t.is_finite(), || format!("t must be > 0, got {t}"))?;
    ensure(n_mc >= 2, || "n_mc must be >= 2".into())?;
    ensure(generator.len() == fs.len(), || "one generator value per function".into())?;
    let chol = sqrt_psd_2x2(model.cov)?;
    const CHUNK: usize = 4096;
    let chunks = n_mc.div_ceil(CHUNK);
    let incs: Vec<[f64; 2]> = (0..chunks as u64)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, c);
            let len = CHUNK.min(n_mc - c as usize * CHUNK);
            (0..len)
                .map(|_| model.sample_increment(&chol, t, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(fs
        .iter()
        .zip(generator)
        .map(|(f, &g)| {
            let f0 = f.value(x);
            let diffs: Vec<f64> = incs
                .iter()
                .map(|d| (f.value([x[0] + d[0], x[1] + d[1]]) - f0) / t)
                .collect();
            let m = MeanEstimate::from_samples(&diffs);
            DynkinResult {
                estimate: m.mean - g,
                standard_error: m.se,
                generator: g,
                bias_allowance: t * model.second_order(f, x).abs(),
            }
        })
        .collect())
}

/// Single-function form of [`dynkin_residuals`].
pub fn dynkin_residual(
    model: &Levy2d,
    generator: f64,
    f: BasicTest,
    x: [f64; 2],
    t: f64,
    n_mc: usize,
    seed: u64,
) -> Result<DynkinResult> {
    Ok(dynkin_residuals(model, &[generator], &[f], x, t, n_mc, seed)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{jump_llr_coefficients, JumpTestParams};
    use crate::measure::JumpMeasureSpec;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn exp_coeffs(a: [f64; 2]) -> [LlrCoefficients; 2] {
        let p = JumpTestParams::new(a, [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        [
            jump_llr_coefficients(&p, 0, 0, &q()).unwrap(),
            jump_llr_coefficients(&p, 1, 0, &q()).unwrap(),
        ]
    }

    #[test]
    fn drift_generator_examples() {
        let p = DriftTestParams::new([1.0, 1.0], [1.0, 1.0]).unwrap();
        let x = [0.3, -0.2];
        assert_eq!(apply_drift_generator((0, 0), &p, &BasicTest::Const(4.0), x).unwrap(), 0.0);
        assert_eq!(apply_drift_generator((0, 0), &p, &BasicTest::X1, x).unwrap(), -0.5);
        // (1/2)(e^{-x} + (+1)(-e^{-x})) = 0
        let v = apply_drift_generator((1, 0), &p, &BasicTest::ExpNegX1, x).unwrap();
        assert!(v.abs() < 1e-12);
        // world 00: (1/2)(e^{-x} + e^{-x}) = e^{-x}
        let v = apply_drift_generator((0, 0), &p, &BasicTest::ExpNegX1, x).unwrap();
        assert!((v - (-0.3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn basic_partials_match_differences() {
        for f in BasicTest::SUITE {
            assert!(partials_mismatch(&f, [0.4, -0.7], 1e-5) < 1e-6, "{}", f.name());
        }
    }

    #[test]
    fn zero_kernel_makes_generator_local() {
        let c = exp_coeffs([1.0, 0.0]);
        let x = [0.1, 0.2];
        let f = BasicTest::X1X2;
        let full = apply_jump_generator((0, 1), 0.0, [&c[0], &c[1]], &f, x, &q()).unwrap();
        let local = jump_generator_local((0, 1), 0.0, [&c[0], &c[1]], &f, x);
        assert_eq!(full, local);
    }

    #[test]
    fn rho_isolates_cross_term() {
        let c = exp_coeffs([1.0, 2.0]);
        let x = [0.1, 0.2];
        let f = BasicTest::X1X2;
        let a = apply_jump_generator((1, 1), 0.0, [&c[0], &c[1]], &f, x, &q()).unwrap();
        let b = apply_jump_generator((1, 1), 0.5, [&c[0], &c[1]], &f, x, &q()).unwrap();
        assert!((b - a - 0.5 * c[0].beta * c[1].beta).abs() < 1e-12);
    }

    // composite 5-point Gauss-Legendre on [0, 40]^2, written independently
    fn gl_oracle<F: Fn(f64, f64) -> f64>(w1: impl Fn(f64) -> f64, w2: impl Fn(f64) -> f64, h: F) -> f64 {
        let nodes = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        let weights = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let width = 0.1;
        let pts: Vec<(f64, f64)> = (0..400)
            .flat_map(|p| {
                let c = (p as f64 + 0.5) * width;
                nodes
                    .iter()
                    .zip(&weights)
                    .map(move |(x, w)| (c + 0.5 * width * x, 0.5 * width * w))
            })
            .collect();
        let mut total = 0.0;
        for &(y1, a1) in &pts {
            let d1 = w1(y1) * a1;
            for &(y2, a2) in &pts {
                total += d1 * w2(y2) * a2 * h(y1, y2);
            }
        }
        total
    }

    #[test]
    fn linear_nonlocal_term_matches_oracle() {
        let c = exp_coeffs([1.0, 1.5]);
        let (k1, k2) = (&c[0].kernel, &c[1].kernel);
        let got = nonlocal_term(k1, k2, &BasicTest::X1, [0.3, 0.1], &q()).unwrap();
        let oracle = gl_oracle(
            |y| k1.density(y),
            |y| k2.density(y),
            |y1, y2| {
                let n = y1.hypot(y2);
                y1 * n / (1.0 + n)
            },
        );
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn jump_mass_examples() {
        let c = exp_coeffs([1.0, 1.0]);
        let zero = LlrJumpKernel::zero();
        assert_eq!(jump_mass_m(&c[0].kernel, &zero, &q()).unwrap(), 0.0);
        // single coordinate mass: int a log(1+x)(1+ax) e^{-x} dx at a=1
        let oracle = gl_oracle(|y| c[0].kernel.density(y), |y| if y < 0.1 { 10.0 } else { 0.0 }, |_, _| 1.0);
        let m1 = c[0].kernel.mass(&q()).unwrap();
        assert!((m1 - oracle).abs() < 1e-8, "{m1} vs {oracle}");
        assert!((jump_mass_m(&c[0].kernel, &c[1].kernel, &q()).unwrap() - m1 * m1).abs() < 1e-12);
    }

    #[test]
    fn generator_is_linear() {
        let c = exp_coeffs([1.0, 0.5]);
        let x = [0.2, -0.4];
        let f = BasicTest::X1Sq;
        let g = BasicTest::ExpNegX1;
        let comb = Combination { a: 2.0, f: &f, b: -3.0, g: &g };
        let lf = apply_jump_generator((0, 0), 0.2, [&c[0], &c[1]], &f, x, &q()).unwrap();
        let lg = apply_jump_generator((0, 0), 0.2, [&c[0], &c[1]], &g, x, &q()).unwrap();
        let lc = apply_jump_generator((0, 0), 0.2, [&c[0], &c[1]], &comb, x, &q()).unwrap();
        assert!((lc - (2.0 * lf - 3.0 * lg)).abs() < 1e-9 * lc.abs().max(1.0));
    }

    #[test]
    fn mixed_worlds_have_no_dynkin_model() {
        let c = exp_coeffs([1.0, 1.0]);
        assert!(jump_dynkin_model([&c[0], &c[1]], (0, 1), 0.0, &q()).is_err());
    }

    #[test]
    fn drift_dynkin_small_sample() {
        let p = DriftTestParams::new([1.0, 2.0], [1.0, 1.5]).unwrap();
        let x = [0.2, -0.1];
        for ij in [(0, 0), (1, 0), (1, 1)] {
            let model = drift_dynkin_model(&p, ij).unwrap();
            let gen: Vec<f64> = BasicTest::SUITE
                .iter()
                .map(|f| apply_drift_generator(ij, &p, f, x).unwrap())
                .collect();
            let res = dynkin_residuals(&model, &gen, &BasicTest::SUITE, x, 1e-3, 20_000, 4).unwrap();
            for (f, r) in BasicTest::SUITE.iter().zip(res) {
                assert!(r.within_band(4.0), "{ij:?} {}: {r:?}", f.name());
            }
        }
    }
}
