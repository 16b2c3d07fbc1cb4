//! Super- and sub-solution envelopes `U_ij >= L_ij` around the probability
//! of a correct decision, and rectangle bounds backed out of them.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::format::num;
use crate::generators::{apply_jump_generator, product_integral, TestFunction};
use crate::likelihood::LlrCoefficients;
use crate::measure::LlrJumpKernel;
use crate::quadrature::QuadratureSpec;
use crate::roots::first_root;
use crate::thresholds::{ErrorSpec, Rectangle};

/// `C_k = int int y_k/(1 + |y|) K1(dy1) K2(dy2)`.
pub fn compensator_constant(
    k1: &LlrJumpKernel,
    k2: &LlrJumpKernel,
    k: usize,
    quad: &QuadratureSpec,
) -> Result<f64> {
    ensure(k < 2, || format!("coordinate must be 0 or 1, got {k}"))?;
    let v = product_integral(
        k1,
        k2,
        |a, b| {
            let y = if k == 0 { a } else { b };
            y / (1.0 + a.hypot(b))
        },
        quad,
    )?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integrability("compensator constant diverges".into()))
    }
}

/// One-dimensional compensator `int y/(1 + y) K(dy)`.
pub fn compensator_constant_1d(k: &LlrJumpKernel, quad: &QuadratureSpec) -> Result<f64> {
    k.integrate(|y| y / (1.0 + y), quad)
}

/// Envelope branch: `+L` under the root gives the lower envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Lower,
    Upper,
}

impl EnvelopeKind {
    fn shift(self, l_const: f64) -> f64 {
        match self {
            EnvelopeKind::Lower => l_const,
            EnvelopeKind::Upper => -l_const,
        }
    }
}

/// Mantissas of a factor and its first two derivatives, sharing one scale
/// `exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Factor {
    log_scale: f64,
    value: f64,
    d1: f64,
    d2: f64,
    continued: bool,
}

impl Factor {
    fn value(&self) -> f64 {
        self.value * self.log_scale.exp()
    }
}

/// `sinh(a)/sinh(b)` as `(mantissa, log_scale)`.
fn sinh_ratio(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let (aa, ab) = (a.abs(), b.abs());
    let sign = a.signum() * b.signum();
    (sign * (-2.0 * aa).exp_m1() / (-2.0 * ab).exp_m1(), aa - ab)
}

/// `cosh(a)/sinh(b)` as `(mantissa, log_scale)`.
fn cosh_sinh_ratio(a: f64, b: f64) -> (f64, f64) {
    let (aa, ab) = (a.abs(), b.abs());
    (b.signum() * (1.0 + (-2.0 * aa).exp()) / -(-2.0 * ab).exp_m1(), aa - ab)
}

/// Factor of one coordinate: `exp(e B) sinh(d s)/sinh(w s)` with `e` and `d`
/// the scaled distances to the one-side and zero-side, `w` the scaled width.
/// Outside `[l, r]` it is 1 past the one-side and 0 past the zero-side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateEnvelope {
    pub beta: f64,
    /// `B` including its `1/beta`.
    pub b: f64,
    pub l: f64,
    pub r: f64,
    /// World digit: 1 puts the one-side at `r`.
    pub world: u8,
}

impl CoordinateEnvelope {
    fn eval(&self, x: f64, shift: f64) -> Factor {
        if x < self.l || x > self.r {
            // past an edge the factor is the exit value
            let one = (x > self.r) == (self.world == 1);
            return Factor {
                log_scale: 0.0,
                value: if one { 1.0 } else { 0.0 },
                d1: 0.0,
                d2: 0.0,
                continued: false,
            };
        }
        let beta = self.beta;
        // e = c0 + c1 x, d = d0 + d1 x in beta units
        let (c0, c1, d0, d1) = if self.world == 0 {
            (-self.l / beta, 1.0 / beta, self.r / beta, -1.0 / beta)
        } else {
            (self.r / beta, -1.0 / beta, -self.l / beta, 1.0 / beta)
        };
        let w = (self.r - self.l) / beta;
        let e_lin = (c0 + c1 * x) * self.b;
        let slope = c1 * self.b;
        let d = d0 + d1 * x;
        let s2 = self.b * self.b + shift;
        let (s, sp, log, continued) = if s2 > 0.0 {
            let s = s2.sqrt();
            let (m, lg) = sinh_ratio(d * s, w * s);
            let (cm, clg) = cosh_sinh_ratio(d * s, w * s);
            // bring the derivative onto the value's scale
            (m, d1 * s * cm * (clg - lg).exp(), lg, false)
        } else if s2 == 0.0 {
            (d / w, d1 / w, 0.0, false)
        } else {
            let om = (-s2).sqrt();
            let den = (w * om).sin();
            ((d * om).sin() / den, d1 * om * (d * om).cos() / den, 0.0, true)
        };
        let spp = d1 * d1 * s2 * s;
        Factor {
            log_scale: e_lin + log,
            value: s,
            d1: slope * s + sp,
            d2: slope * slope * s + 2.0 * slope * sp + spp,
            continued,
        }
    }

    pub fn value(&self, x: f64, shift: f64) -> f64 {
        self.eval(x, shift).value()
    }

    /// `[f, f', f'']` at `x`.
    pub fn derivatives(&self, x: f64, shift: f64) -> [f64; 3] {
        let f = self.eval(x, shift);
        let s = f.log_scale.exp();
        [f.value * s, f.d1 * s, f.d2 * s]
    }

    /// True when `B^2 + shift < 0`.
    pub fn continued(&self, shift: f64) -> bool {
        self.b * self.b + shift < 0.0
    }
}

/// All constants of the envelope construction for one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub c: [f64; 2],
    pub kernels: [LlrJumpKernel; 2],
    /// `M = M1 M2`.
    pub m_mass: f64,
    pub k_bound: f64,
    /// `max(K M, M)` unless overridden.
    pub l_const: f64,
    pub rect: Rectangle,
    pub world: (u8, u8),
}

fn sign_pow(i: u8) -> f64 {
    if i.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// How `K_bound` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KBoundOptions {
    /// Use this value instead of the estimate.
    pub override_value: Option<f64>,
    /// Interior grid points per axis for the estimate.
    pub grid_n: usize,
    /// Sampled jumps for the estimate.
    pub n_jumps: usize,
    pub seed: u64,
}

impl Default for KBoundOptions {
    fn default() -> Self {
        Self {
            override_value: None,
            grid_n: 16,
            n_jumps: 256,
            seed: crate::rng::DEFAULT_SEED,
        }
    }
}

impl EnvelopeParams {
    /// Constants from the coefficient pair; `K_bound` and `L` follow `kopts`.
    pub fn from_coefficients(
        coeffs: [&LlrCoefficients; 2],
        rect: Rectangle,
        world: (u8, u8),
        kopts: &KBoundOptions,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        rect.validate()?;
        ensure(world.0 <= 1 && world.1 <= 1, || "world digits must be 0 or 1".into())?;
        let (k1, k2) = (&coeffs[0].kernel, &coeffs[1].kernel);
        let c = [
            compensator_constant(k1, k2, 0, quad)?,
            compensator_constant(k1, k2, 1, quad)?,
        ];
        let m_mass = crate::generators::jump_mass_m(k1, k2, quad)?;
        let mut p = Self {
            beta: [coeffs[0].beta, coeffs[1].beta],
            gamma: [coeffs[0].gamma, coeffs[1].gamma],
            c,
            kernels: [k1.clone(), k2.clone()],
            m_mass,
            k_bound: 0.0,
            l_const: 0.0,
            rect,
            world,
        };
        p.validate_betas()?;
        p.k_bound = match kopts.override_value {
            Some(k) => k,
            None => estimate_k_bound(&p, kopts)?,
        };
        p.l_const = (p.k_bound * m_mass).max(m_mass);
        Ok(p)
    }

    /// Parameters without jumps: `C = 0`, `M = 0`, `L` given.
    pub fn without_jumps(beta: [f64; 2], gamma: [f64; 2], l_const: f64, rect: Rectangle, world: (u8, u8)) -> Result<Self> {
        let p = Self {
            beta,
            gamma,
            c: [0.0, 0.0],
            kernels: [LlrJumpKernel::zero(), LlrJumpKernel::zero()],
            m_mass: 0.0,
            k_bound: 0.0,
            l_const,
            rect,
            world,
        };
        p.validate_betas()?;
        rect.validate()?;
        Ok(p)
    }

    fn validate_betas(&self) -> Result<()> {
        ensure(self.beta.iter().all(|b| *b != 0.0 && b.is_finite()), || {
            format!("envelopes need nonzero beta, got {:?}", self.beta)
        })
    }

    pub fn with_l_const(mut self, l_const: f64) -> Self {
        self.l_const = l_const;
        self
    }

    pub fn with_world(mut self, world: (u8, u8)) -> Self {
        self.world = world;
        self
    }

    pub fn with_rect(mut self, rect: Rectangle) -> Self {
        self.rect = rect;
        self
    }

    /// `B_ij = [(g1 + (-1)^j C1)/beta1, (g2 + (-1)^i C2)/beta2]`.
    pub fn b(&self) -> [f64; 2] {
        let (i, j) = self.world;
        [
            (self.gamma[0] + sign_pow(j) * self.c[0]) / self.beta[0],
            (self.gamma[1] + sign_pow(i) * self.c[1]) / self.beta[1],
        ]
    }

    pub fn coordinate(&self, k: usize) -> CoordinateEnvelope {
        let (l, r) = self.rect.bounds(k);
        CoordinateEnvelope {
            beta: self.beta[k],
            b: self.b()[k],
            l,
            r,
            world: if k == 0 { self.world.0 } else { self.world.1 },
        }
    }

    pub fn coefficients(&self) -> [LlrCoefficients; 2] {
        [0, 1].map(|k| LlrCoefficients {
            beta: self.beta[k],
            m: 0.0,
            gamma: self.gamma[k],
            kernel: self.kernels[k].clone(),
            k_mass: 0.0,
            sign: 1.0,
        })
    }

    pub fn envelope(&self, kind: EnvelopeKind) -> Envelope<'_> {
        Envelope { params: self, kind }
    }
}

/// Lower and upper envelope at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeValue {
    pub lower: f64,
    pub upper: f64,
    /// The upper envelope used the `sin`-ratio continuation.
    pub upper_continued: bool,
    pub lower_continued: bool,
}

pub fn eval_envelopes(params: &EnvelopeParams, x: f64, y: f64) -> EnvelopeValue {
    let (c1, c2) = (params.coordinate(0), params.coordinate(1));
    let lo = params.l_const;
    EnvelopeValue {
        lower: c1.value(x, lo) * c2.value(y, lo),
        upper: c1.value(x, -lo) * c2.value(y, -lo),
        upper_continued: c1.continued(-lo) || c2.continued(-lo),
        lower_continued: c1.continued(lo) || c2.continued(lo),
    }
}

/// One envelope viewed as a test function.
pub struct Envelope<'a> {
    pub params: &'a EnvelopeParams,
    pub kind: EnvelopeKind,
}

impl Envelope<'_> {
    fn factors(&self, x: [f64; 2]) -> (Factor, Factor) {
        let shift = self.kind.shift(self.params.l_const);
        (
            self.params.coordinate(0).eval(x[0], shift),
            self.params.coordinate(1).eval(x[1], shift),
        )
    }
}

impl TestFunction for Envelope<'_> {
    fn value(&self, x: [f64; 2]) -> f64 {
        let (f, g) = self.factors(x);
        f.value * g.value * (f.log_scale + g.log_scale).exp()
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        let (f, g) = self.factors(x);
        let s = (f.log_scale + g.log_scale).exp();
        [f.d1 * g.value * s, f.value * g.d1 * s]
    }

    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let (f, g) = self.factors(x);
        let s = (f.log_scale + g.log_scale).exp();
        let cross = f.d1 * g.d1 * s;
        [[f.d2 * g.value * s, cross], [cross, f.value * g.d2 * s]]
    }
}

pub fn interior_grid(l: f64, r: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| l + (r - l) * k as f64 / (n + 1) as f64).collect()
}

/// Grid on `[l, r]` with exact endpoints.
pub fn closed_grid(l: f64, r: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k + 1 == n {
                r
            } else {
                l + (r - l) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// `sup (xi(x + y)/xi(x) - 1)` over an interior grid and sampled jumps, with
/// `xi` the `L = 0` envelope of the same world.
pub fn estimate_k_bound(params: &EnvelopeParams, opts: &KBoundOptions) -> Result<f64> {
    let (s1, s2) = match (params.kernels[0].sampler()?, params.kernels[1].sampler()?) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(0.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let jumps: Vec<(f64, f64)> = (0..opts.n_jumps)
        .map(|_| (s1.sample(&mut rng), s2.sample(&mut rng)))
        .collect();
    let reference = params.clone().with_l_const(0.0);
    let xi = reference.envelope(EnvelopeKind::Lower);
    let mut k: f64 = 0.0;
    for x in interior_grid(params.rect.l1, params.rect.r1, opts.grid_n) {
        for y in interior_grid(params.rect.l2, params.rect.r2, opts.grid_n) {
            let base = xi.value([x, y]);
            if base <= 0.0 {
                continue;
            }
            for &(a, b) in &jumps {
                k = k.max(xi.value([x + a, y + b]) / base - 1.0);
            }
        }
    }
    Ok(k)
}

/// Pointwise structure checks over a closed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub world: String,
    pub grid_n: usize,
    pub l_const: f64,
    pub min_lower: f64,
    /// `min (U - L)`.
    pub min_order_gap: f64,
    /// `sup (U - L)`.
    pub gap_sup: f64,
    pub corner_error: f64,
    pub zero_side_max: f64,
    pub upper_continued: bool,
    pub lower_continued: bool,
}

impl GridCheck {
    pub fn ordered(&self, tol: f64) -> bool {
        self.min_lower >= -tol && self.min_order_gap >= -tol
    }
}

/// Corner of world `ij` where the probability of a correct decision is 1.
fn one_corner(p: &EnvelopeParams) -> (f64, f64) {
    let r = p.rect;
    (
        if p.world.0 == 1 { r.r1 } else { r.l1 },
        if p.world.1 == 1 { r.r2 } else { r.l2 },
    )
}

pub fn check_grid(params: &EnvelopeParams, grid_n: usize) -> GridCheck {
    let r = params.rect;
    let xs = closed_grid(r.l1, r.r1, grid_n);
    let ys = closed_grid(r.l2, r.r2, grid_n);
    let (cx, cy) = one_corner(params);
    let zero_x = if params.world.0 == 1 { r.l1 } else { r.r1 };
    let zero_y = if params.world.1 == 1 { r.l2 } else { r.r2 };
    let mut out = GridCheck {
        world: format!("{}{}", params.world.0, params.world.1),
        grid_n,
        l_const: params.l_const,
        min_lower: f64::INFINITY,
        min_order_gap: f64::INFINITY,
        gap_sup: 0.0,
        corner_error: 0.0,
        zero_side_max: 0.0,
        upper_continued: false,
        lower_continued: false,
    };
    for &x in &xs {
        for &y in &ys {
            let v = eval_envelopes(params, x, y);
            out.min_lower = out.min_lower.min(v.lower);
            out.min_order_gap = out.min_order_gap.min(v.upper - v.lower);
            out.gap_sup = out.gap_sup.max(v.upper - v.lower);
            out.upper_continued |= v.upper_continued;
            out.lower_continued |= v.lower_continued;
            if x == zero_x || y == zero_y {
                out.zero_side_max = out.zero_side_max.max(v.lower.abs()).max(v.upper.abs());
            }
        }
    }
    let c = eval_envelopes(params, cx, cy);
    out.corner_error = (c.lower - 1.0).abs().max((c.upper - 1.0).abs());
    out
}

/// Envelope surfaces as `x,y,lower,upper` rows.
pub fn write_grid_csv<W: Write>(params: &EnvelopeParams, grid_n: usize, mut w: W) -> Result<()> {
    let r = params.rect;
    writeln!(w, "x,y,lower,upper")?;
    for x in closed_grid(r.l1, r.r1, grid_n) {
        for y in closed_grid(r.l2, r.r2, grid_n) {
            let v = eval_envelopes(params, x, y);
            writeln!(w, "{},{},{},{}", num(x), num(y), num(v.lower), num(v.upper))?;
        }
    }
    Ok(())
}

/// Residual signs of `L_ij` applied to both envelopes on an interior grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub world: String,
    pub grid_n: usize,
    /// `(positive, negative, zero)` counts for the lower envelope.
    pub lower_counts: [usize; 3],
    pub upper_counts: [usize; 3],
    pub lower_uniform: bool,
    pub upper_uniform: bool,
    /// Largest `|residual - expected|` where an exact value is known
    /// (no jumps: `+L xi` for the lower and `-L xi` for the upper envelope).
    pub max_identity_error: Option<f64>,
}

impl SignReport {
    /// `+1`, `-1` or `0` when mixed.
    pub fn lower_sign(&self) -> i8 {
        pattern(self.lower_counts)
    }

    pub fn upper_sign(&self) -> i8 {
        pattern(self.upper_counts)
    }
}

fn pattern(c: [usize; 3]) -> i8 {
    match c {
        [p, 0, _] if p > 0 => 1,
        [0, n, _] if n > 0 => -1,
        _ => 0,
    }
}

pub fn envelope_pide_sign_check(params: &EnvelopeParams, grid_n: usize, quad: &QuadratureSpec) -> Result<SignReport> {
    ensure(grid_n >= 8, || format!("grid_n must be >= 8, got {grid_n}"))?;
    let coeffs = params.coefficients();
    let no_jumps = params.kernels.iter().any(LlrJumpKernel::is_zero);
    let r = params.rect;
    let points: Vec<[f64; 2]> = interior_grid(r.l1, r.r1, grid_n)
        .into_iter()
        .flat_map(|x| interior_grid(r.l2, r.r2, grid_n).into_iter().map(move |y| [x, y]))
        .collect();
    // (slot, class, identity error) per point and envelope
    let cells: Vec<(usize, usize, f64)> = points
        .par_iter()
        .flat_map_iter(|&pt| {
            [EnvelopeKind::Lower, EnvelopeKind::Upper]
                .into_iter()
                .enumerate()
                .map(move |(slot, kind)| (slot, kind, pt))
        })
        .map(|(slot, kind, pt)| {
            let env = params.envelope(kind);
            let v = env.value(pt);
            let res = apply_jump_generator(params.world, 0.0, [&coeffs[0], &coeffs[1]], &env, pt, quad)?;
            let tol = 1e-9 * v.abs().max(1e-300) + quad.abs_tol;
            let class = if res > tol {
                0
            } else if res < -tol {
                1
            } else {
                2
            };
            let identity = if no_jumps { (res - kind.shift(params.l_const) * v).abs() } else { 0.0 };
            Ok((slot, class, identity))
        })
        .collect::<Result<_>>()?;
    let mut counts = [[0usize; 3]; 2];
    let mut identity: f64 = 0.0;
    for (slot, class, err) in cells {
        counts[slot][class] += 1;
        identity = identity.max(err);
    }
    let uniform = |c: [usize; 3]| pattern(c) != 0;
    Ok(SignReport {
        world: format!("{}{}", params.world.0, params.world.1),
        grid_n,
        lower_counts: counts[0],
        upper_counts: counts[1],
        lower_uniform: uniform(counts[0]),
        upper_uniform: uniform(counts[1]),
        max_identity_error: no_jumps.then_some(identity),
    })
}

/// Bracket and resolution of the scan for thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub r_min: f64,
    pub r_max: f64,
    pub cells: usize,
    pub tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            r_min: 1e-6,
            r_max: 20.0,
            cells: 4000,
            tol: 1e-12,
        }
    }
}

/// Smallest `r` with `factor(0; l, r) = target` for one coordinate.
pub fn solve_r_coordinate(
    base: &CoordinateEnvelope,
    shift: f64,
    target: f64,
    scan: &ScanOptions,
) -> Result<f64> {
    match solve_coordinate(base, shift, target, scan)? {
        Solve::Root(r) => Ok(r),
        other => Err(Error::Infeasible(format!(
            "envelope at the origin never equals {target} for r in [{}, {}] ({})",
            scan.r_min,
            scan.r_max,
            other.label()
        ))),
    }
}

/// Outcome of one threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "r", rename_all = "snake_case")]
pub enum Solve {
    Root(f64),
    /// The envelope stays at or above the target on the whole bracket.
    NonBinding,
    /// The envelope stays below the target on the whole bracket.
    Unreachable,
}

impl Solve {
    pub fn root(self) -> Option<f64> {
        match self {
            Solve::Root(r) => Some(r),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Solve::Root(_) => "root",
            Solve::NonBinding => "non-binding",
            Solve::Unreachable => "unreachable",
        }
    }
}

pub fn solve_coordinate(base: &CoordinateEnvelope, shift: f64, target: f64, scan: &ScanOptions) -> Result<Solve> {
    ensure(base.l < 0.0, || format!("l must be < 0, got {}", base.l))?;
    ensure(target > 0.0 && target < 1.0, || format!("target must lie in (0, 1), got {target}"))?;
    ensure(scan.r_min > 0.0 && scan.r_max > scan.r_min && scan.cells > 0, || {
        format!("bad scan bracket [{}, {}]", scan.r_min, scan.r_max)
    })?;
    let f = |r: f64| {
        let c = CoordinateEnvelope { r, ..*base };
        c.value(0.0, shift) - target
    };
    if let Ok(r) = first_root(f, scan.r_min, scan.r_max, scan.cells, scan.tol) {
        return Ok(Solve::Root(r));
    }
    Ok(if f(scan.r_min) >= 0.0 {
        Solve::NonBinding
    } else {
        Solve::Unreachable
    })
}

/// Per-world search outcomes, `[coordinate 1, coordinate 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCandidates {
    pub world: String,
    pub target: f64,
    pub upper: [Solve; 2],
    pub lower: [Solve; 2],
}

/// Candidate rectangles from the upper and lower envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRectangles {
    /// `None` when some world is unreachable for that envelope.
    pub upper_rect: Option<Rectangle>,
    pub lower_rect: Option<Rectangle>,
    /// Per coordinate the larger `r` of the two candidates.
    pub conservative: Rectangle,
    pub per_world: Vec<WorldCandidates>,
}

/// Largest root across worlds; `None` if any world is unreachable.
fn combine(solves: impl IntoIterator<Item = Solve>, floor: f64) -> Option<f64> {
    let mut r = floor;
    for s in solves {
        match s {
            Solve::Root(x) => r = r.max(x),
            Solve::NonBinding => {}
            Solve::Unreachable => return None,
        }
    }
    Some(r)
}

/// For each world the product target `1 - alpha_ij` is split evenly as
/// `sqrt(1 - alpha_ij)` per coordinate, and each coordinate's `r` is solved
/// at the origin. Across worlds the largest root is kept.
pub fn rectangle_from_envelopes(
    alphas: &ErrorSpec,
    params: &EnvelopeParams,
    l1: f64,
    l2: f64,
    scan: &ScanOptions,
) -> Result<EnvelopeRectangles> {
    alphas.validate()?;
    ensure(l1 < 0.0 && l2 < 0.0, || format!("l1, l2 must be < 0, got ({l1}, {l2})"))?;
    let mut per_world = Vec::new();
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let target = 1.0 - alphas.get(i, j);
        let split = target.sqrt();
        let p = params.clone().with_world((i, j));
        let mut upper = [Solve::Unreachable; 2];
        let mut lower = [Solve::Unreachable; 2];
        for k in 0..2 {
            let mut c = p.coordinate(k);
            c.l = if k == 0 { l1 } else { l2 };
            upper[k] = solve_coordinate(&c, -p.l_const, split, scan)?;
            lower[k] = solve_coordinate(&c, p.l_const, split, scan)?;
        }
        per_world.push(WorldCandidates {
            world: format!("{i}{j}"),
            target,
            upper,
            lower,
        });
    }
    let make = |upper: bool| -> Option<Rectangle> {
        let side = |k: usize| combine(per_world.iter().map(|w| if upper { w.upper[k] } else { w.lower[k] }), scan.r_min);
        Rectangle::new(l1, side(0)?, l2, side(1)?).ok()
    };
    let upper_rect = make(true);
    let lower_rect = make(false);
    let pick = |f: fn(&Rectangle) -> f64| [upper_rect.as_ref().map(f), lower_rect.as_ref().map(f)].into_iter().flatten().reduce(f64::max);
    let (Some(r1), Some(r2)) = (pick(|r| r.r1), pick(|r| r.r2)) else {
        return Err(Error::Infeasible(
            "neither envelope reaches its target in every world for r in the scan bracket".into(),
        ));
    };
    Ok(EnvelopeRectangles {
        upper_rect,
        lower_rect,
        conservative: Rectangle::new(l1, r1, l2, r2)?,
        per_world,
    })
}

/// One-dimensional envelope constants: coordinate 2 is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope1d {
    pub beta: f64,
    pub gamma: f64,
    /// `int y/(1 + y) K(dy)`.
    pub c: f64,
    /// Mass of `K`.
    pub m_mass: f64,
    pub k_bound: f64,
    pub l_const: f64,
    /// World digit of the kept coordinate.
    pub world: u8,
    /// Digit of the dropped coordinate, which fixes the sign on `C`.
    pub other: u8,
}

impl Envelope1d {
    pub fn from_coefficients(coeffs: &LlrCoefficients, world: u8, other: u8, k_bound: f64, quad: &QuadratureSpec) -> Result<Self> {
        ensure(coeffs.beta != 0.0, || "one-dimensional envelope needs nonzero beta".into())?;
        let c = compensator_constant_1d(&coeffs.kernel, quad)?;
        let m_mass = coeffs.kernel.mass(quad)?;
        Ok(Self {
            beta: coeffs.beta,
            gamma: coeffs.gamma,
            c,
            m_mass,
            k_bound,
            l_const: (k_bound * m_mass).max(m_mass),
            world,
            other,
        })
    }

    pub fn b(&self) -> f64 {
        (self.gamma + sign_pow(self.other) * self.c) / self.beta
    }

    pub fn coordinate(&self, l: f64, r: f64) -> CoordinateEnvelope {
        CoordinateEnvelope {
            beta: self.beta,
            b: self.b(),
            l,
            r,
            world: self.world,
        }
    }
}

/// Both candidate thresholds of the one-dimensional reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidates1d {
    pub target: f64,
    /// From `U(0) = target`.
    pub upper: Solve,
    /// From `L(0) = target`.
    pub lower: Solve,
    /// `max` of the available roots.
    pub r: f64,
    pub upper_continued: bool,
}

pub fn rectangle_from_envelopes_1d(env: &Envelope1d, l: f64, target: f64, scan: &ScanOptions) -> Result<Candidates1d> {
    let base = env.coordinate(l, 1.0);
    let upper = solve_coordinate(&base, -env.l_const, target, scan)?;
    let lower = solve_coordinate(&base, env.l_const, target, scan)?;
    let r = [upper.root(), lower.root()]
        .into_iter()
        .flatten()
        .reduce(f64::max)
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "neither envelope equals {target} at the origin (upper {}, lower {})",
                upper.label(),
                lower.label()
            ))
        })?;
    Ok(Candidates1d {
        target,
        upper,
        lower,
        r,
        upper_continued: base.continued(-env.l_const),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::partials_mismatch;
    use crate::likelihood::{jump_llr_coefficients, JumpTestParams};
    use crate::measure::JumpMeasureSpec;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn default_coeffs() -> [LlrCoefficients; 2] {
        let p = JumpTestParams::new([1.0, 1.0], [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        [
            jump_llr_coefficients(&p, 0, 0, &q()).unwrap(),
            jump_llr_coefficients(&p, 1, 0, &q()).unwrap(),
        ]
    }

    fn default_params(world: (u8, u8), l_const: f64) -> EnvelopeParams {
        let c = default_coeffs();
        let kopts = KBoundOptions { override_value: Some(0.0), ..Default::default() };
        EnvelopeParams::from_coefficients([&c[0], &c[1]], Rectangle::square(-1.0, 1.0).unwrap(), world, &kopts, &q())
            .unwrap()
            .with_l_const(l_const)
    }

    #[test]
    fn ratio_helpers_are_stable() {
        let (m, l) = sinh_ratio(800.0, 1000.0);
        assert!((m * l.exp() - (-200f64).exp()).abs() < 1e-100);
        let (m, l) = sinh_ratio(0.5, 1.0);
        assert!((m * l.exp() - 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-15);
        let (m, l) = sinh_ratio(-0.5, -1.0);
        assert!((m * l.exp() - 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-15);
        let (m, l) = cosh_sinh_ratio(0.3, -1.2);
        assert!((m * l.exp() - 0.3f64.cosh() / (-1.2f64).sinh()).abs() < 1e-15);
    }

    #[test]
    fn corner_and_zero_sides() {
        for world in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let p = default_params(world, 0.05);
            let g = check_grid(&p, 17);
            assert!(g.corner_error < 1e-12, "{world:?}: {g:?}");
            assert!(g.zero_side_max < 1e-12, "{world:?}: {g:?}");
            assert!(g.ordered(0.0), "{world:?}: {g:?}");
        }
        let p = default_params((0, 0), 0.05);
        let v = eval_envelopes(&p, -1.0, -1.0);
        assert!((v.lower - 1.0).abs() < 1e-12 && (v.upper - 1.0).abs() < 1e-12);
        assert_eq!(eval_envelopes(&p, 1.0, 0.3).upper, 0.0);
    }

    #[test]
    fn vanishing_l_collapses_envelopes() {
        let p = default_params((1, 0), 1e-14);
        for (x, y) in [(0.0, 0.0), (0.3, -0.5), (-0.7, 0.2)] {
            let v = eval_envelopes(&p, x, y);
            assert!((v.upper - v.lower).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_grows_with_l() {
        let gaps: Vec<f64> = [1e-6, 1e-3, 1e-1]
            .iter()
            .map(|&l| check_grid(&default_params((0, 1), l), 33).gap_sup)
            .collect();
        assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2], "{gaps:?}");
    }

    #[test]
    fn envelope_partials_match_differences() {
        for kind in [EnvelopeKind::Lower, EnvelopeKind::Upper] {
            for world in [(0, 0), (1, 1), (0, 1)] {
                let p = default_params(world, 0.3);
                let e = p.envelope(kind);
                assert!(partials_mismatch(&e, [0.1, -0.35], 1e-5) < 1e-6);
            }
        }
    }

    #[test]
    fn continuation_is_flagged() {
        let p = default_params((0, 0), 50.0);
        let v = eval_envelopes(&p, 0.0, 0.0);
        assert!(v.upper_continued && !v.lower_continued);
    }

    #[test]
    fn no_jump_identity() {
        let rect = Rectangle::new(-1.0, 1.5, -0.8, 1.2).unwrap();
        for world in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let p = EnvelopeParams::without_jumps([0.9, -1.3], [0.2, -0.4], 0.15, rect, world).unwrap();
            let rep = envelope_pide_sign_check(&p, 8, &q()).unwrap();
            assert!(rep.max_identity_error.unwrap() < 1e-8, "{rep:?}");
            assert_eq!(rep.lower_sign(), 1);
            assert_eq!(rep.upper_sign(), -1);
        }
    }

    #[test]
    fn compensator_symmetry_and_zero() {
        let c = default_coeffs();
        let (k1, k2) = (&c[0].kernel, &c[1].kernel);
        let c1 = compensator_constant(k1, k2, 0, &q()).unwrap();
        let c2 = compensator_constant(k1, k2, 1, &q()).unwrap();
        assert!((c1 - c2).abs() < 1e-10);
        assert_eq!(compensator_constant(k1, &LlrJumpKernel::zero(), 0, &q()).unwrap(), 0.0);
    }

    #[test]
    fn compensator_matches_riemann_sum() {
        let c = default_coeffs();
        let (k1, k2) = (&c[0].kernel, &c[1].kernel);
        let got = compensator_constant(k1, k2, 0, &q()).unwrap();
        let n = 2000;
        let h = 50.0 / n as f64;
        let dens: Vec<f64> = (0..n).map(|i| k1.density((i as f64 + 0.5) * h)).collect();
        let mut oracle = 0.0;
        for i in 0..n {
            let y1 = (i as f64 + 0.5) * h;
            for j in 0..n {
                let y2 = (j as f64 + 0.5) * h;
                if y1.hypot(y2) <= 50.0 {
                    oracle += y1 / (1.0 + y1.hypot(y2)) * dens[i] * dens[j] * h * h;
                }
            }
        }
        assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn symmetric_parameters_give_equal_thresholds() {
        let rect = Rectangle::square(-1.0, 1.0).unwrap();
        let p = EnvelopeParams::without_jumps([0.8, 0.8], [0.4, 0.4], 0.01, rect, (0, 0)).unwrap();
        let a = ErrorSpec::uniform(0.05).unwrap();
        let out = rectangle_from_envelopes(&a, &p, -4.0, -4.0, &ScanOptions::default()).unwrap();
        let r = out.conservative;
        assert!((r.r1 - r.r2).abs() < 1e-9, "{r:?}");
        assert!(out.upper_rect.is_some());
        assert_eq!(out.per_world[3].upper[0], Solve::NonBinding);
    }

    #[test]
    fn smaller_alpha_needs_larger_r() {
        let p = default_params((0, 0), 0.05);
        let mut prev = 0.0;
        for alpha in [0.2, 0.1, 0.05, 0.02] {
            let mut c = p.coordinate(0);
            c.l = -4.0;
            let r = solve_r_coordinate(&c, -p.l_const, 1.0 - alpha, &ScanOptions::default()).unwrap();
            assert!(r > prev, "{alpha}: {r} <= {prev}");
            prev = r;
        }
    }

    #[test]
    fn k_bound_estimate_is_positive_with_jumps() {
        let c = default_coeffs();
        let p = EnvelopeParams::from_coefficients(
            [&c[0], &c[1]],
            Rectangle::square(-1.0, 1.0).unwrap(),
            (1, 1),
            &KBoundOptions { grid_n: 6, n_jumps: 32, ..Default::default() },
            &q(),
        )
        .unwrap();
        assert!(p.k_bound > 0.0);
        assert!(p.l_const >= p.m_mass);
    }

    #[test]
    fn sign_check_with_jumps_is_stable_under_refinement() {
        for world in [(0, 0), (0, 1)] {
            let p = default_params(world, 0.5);
            let a = envelope_pide_sign_check(&p, 8, &QuadratureSpec::with_abs_tol(1e-7)).unwrap();
            let b = envelope_pide_sign_check(&p, 8, &q()).unwrap();
            assert_eq!(a.lower_counts, b.lower_counts);
            assert_eq!(a.upper_counts, b.upper_counts);
            assert_eq!(a.lower_counts.iter().sum::<usize>(), 64);
        }
    }
}
