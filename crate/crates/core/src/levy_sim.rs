//! Seeded simulation of one- and two-dimensional Levy processes: drifted
//! Brownian motion plus a compound-Poisson jump part. Jump epochs are drawn
//! exactly and merged into the Euler grid.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::format::num;
use crate::measure::{JumpMeasureSpec, LlrJumpKernel, SizeSampler};
use crate::quadrature::QuadratureSpec;
use crate::rng::{path_stream, stream_rng};

/// Jump part of a Levy triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpLaw {
    #[default]
    None,
    /// Observation jumps drawn from a (possibly tilted) measure.
    Measure { spec: JumpMeasureSpec },
    /// Log-likelihood jumps drawn from a kernel `K`.
    Kernel { kernel: LlrJumpKernel },
}

impl JumpLaw {
    pub fn rate(&self, quad: &QuadratureSpec) -> Result<f64> {
        match self {
            JumpLaw::None => Ok(0.0),
            JumpLaw::Measure { spec } => {
                spec.validate()?;
                Ok(spec.mass())
            }
            JumpLaw::Kernel { kernel } => kernel.mass(quad),
        }
    }

    /// `int y law(dy)`.
    pub fn first_moment(&self, quad: &QuadratureSpec) -> Result<f64> {
        match self {
            JumpLaw::None => Ok(0.0),
            JumpLaw::Measure { spec } => spec.integrate(|x| x, quad),
            JumpLaw::Kernel { kernel } => kernel.mean(quad),
        }
    }

    pub fn sampler(&self) -> Result<Option<SizeSampler>> {
        match self {
            JumpLaw::None => Ok(None),
            JumpLaw::Measure { spec } => {
                if spec.intensity == 0.0 {
                    spec.validate()?;
                    Ok(None)
                } else {
                    spec.sampler().map(Some)
                }
            }
            JumpLaw::Kernel { kernel } => kernel.sampler(),
        }
    }
}

/// Levy triplet `(drift, diffusion variance, jump law)` with the jump sign
/// carried separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyCharacteristics {
    pub drift: f64,
    pub diffusion_var: f64,
    pub jumps: JumpLaw,
    /// +1 or -1.
    pub jump_sign: f64,
}

impl LevyCharacteristics {
    pub fn new(drift: f64, diffusion_var: f64, jumps: JumpLaw, jump_sign: f64) -> Result<Self> {
        let ch = Self {
            drift,
            diffusion_var,
            jumps,
            jump_sign,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn diffusion(drift: f64, diffusion_var: f64) -> Result<Self> {
        Self::new(drift, diffusion_var, JumpLaw::None, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.drift.is_finite(), || "drift must be finite".into())?;
        ensure(self.diffusion_var >= 0.0 && self.diffusion_var.is_finite(), || {
            format!("diffusion variance must be >= 0, got {}", self.diffusion_var)
        })?;
        ensure(self.jump_sign == 1.0 || self.jump_sign == -1.0, || {
            format!("jump sign must be +1 or -1, got {}", self.jump_sign)
        })
    }

    /// `E[u_1 - u_0]`: drift plus the signed mean jump flow.
    pub fn mean_slope(&self, quad: &QuadratureSpec) -> Result<f64> {
        Ok(self.drift + self.jump_sign * self.jumps.first_moment(quad)?)
    }

    pub fn prepare(&self, quad: &QuadratureSpec) -> Result<PreparedLevy> {
        self.validate()?;
        let sampler = self.jumps.sampler()?;
        let rate = if sampler.is_some() {
            self.jumps.rate(quad)?
        } else {
            0.0
        };
        Ok(PreparedLevy {
            drift: self.drift,
            vol: self.diffusion_var.sqrt(),
            sign: self.jump_sign,
            rate,
            sampler,
        })
    }
}

/// Characteristics resolved into what the simulators consume.
#[derive(Debug, Clone)]
pub struct PreparedLevy {
    pub drift: f64,
    pub vol: f64,
    pub sign: f64,
    pub rate: f64,
    pub sampler: Option<SizeSampler>,
}

impl PreparedLevy {
    fn next_epoch<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        if self.rate > 0.0 && self.sampler.is_some() {
            let e: f64 = Exp1.sample(rng);
            t + e / self.rate
        } else {
            f64::INFINITY
        }
    }
}

/// One realised point of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: f64,
    pub x: f64,
    pub jump: bool,
}

/// Streams a 1-D Levy path point by point: grid points `k * dt` plus every
/// jump epoch, so callers can stop at an exit without simulating the rest.
pub struct LevyStepper<'a, R> {
    law: &'a PreparedLevy,
    dt: f64,
    k: u64,
    t: f64,
    x: f64,
    next_jump: f64,
    rng: R,
}

impl<'a, R: Rng> LevyStepper<'a, R> {
    pub fn new(law: &'a PreparedLevy, x0: f64, dt: f64, mut rng: R) -> Self {
        let next_jump = law.next_epoch(0.0, &mut rng);
        Self {
            law,
            dt,
            k: 0,
            t: 0.0,
            x: x0,
            next_jump,
            rng,
        }
    }

    fn diffuse_to(&mut self, target: f64) {
        let h = target - self.t;
        if h > 0.0 {
            let z: f64 = if self.law.vol > 0.0 {
                StandardNormal.sample(&mut self.rng)
            } else {
                0.0
            };
            self.x += self.law.drift * h + self.law.vol * h.sqrt() * z;
        }
        self.t = target;
    }

    pub fn step(&mut self) -> Step {
        let grid = (self.k + 1) as f64 * self.dt;
        if self.next_jump < grid {
            let epoch = self.next_jump;
            self.diffuse_to(epoch);
            let size = self
                .law
                .sampler
                .as_ref()
                .expect("jump epoch without sampler")
                .sample(&mut self.rng);
            self.x += self.law.sign * size;
            self.next_jump = self.law.next_epoch(epoch, &mut self.rng);
            Step {
                t: epoch,
                x: self.x,
                jump: true,
            }
        } else {
            self.diffuse_to(grid);
            self.k += 1;
            Step {
                t: grid,
                x: self.x,
                jump: false,
            }
        }
    }
}

/// Realised 1-D path on a grid that includes its jump epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub dt: f64,
    pub jump_indices: Vec<usize>,
}

impl SamplePath {
    pub fn start(&self) -> f64 {
        self.values[0]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("non-empty path")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_jump(&self, i: usize) -> bool {
        self.jump_indices.binary_search(&i).is_ok()
    }

    pub fn jump_count(&self) -> usize {
        self.jump_indices.len()
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.values.len() {
            return Err(Error::Precondition("path must be non-empty with aligned values".into()));
        }
        if self.times[0] != 0.0 {
            return Err(Error::Precondition("path must start at time 0".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("path times must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,value,is_jump")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{}",
                num(self.times[i]),
                num(self.values[i]),
                u8::from(self.is_jump(i))
            )?;
        }
        Ok(())
    }
}

/// Two paths on one shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath2D {
    pub first: SamplePath,
    pub second: SamplePath,
}

impl SamplePath2D {
    pub fn new(first: SamplePath, second: SamplePath) -> Result<Self> {
        if first.times != second.times {
            return Err(Error::Precondition(
                "2-D path components must share one time grid".into(),
            ));
        }
        first.check_invariants()?;
        Ok(Self { first, second })
    }

    pub fn times(&self) -> &[f64] {
        &self.first.times
    }

    pub fn coordinate(&self, k: usize) -> &SamplePath {
        if k == 0 {
            &self.first
        } else {
            &self.second
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,value,value2,is_jump")?;
        for i in 0..self.first.len() {
            let jump = self.first.is_jump(i) || self.second.is_jump(i);
            writeln!(
                w,
                "{},{},{},{}",
                num(self.first.times[i]),
                num(self.first.values[i]),
                num(self.second.values[i]),
                u8::from(jump)
            )?;
        }
        Ok(())
    }
}

fn check_grid(horizon: f64, dt: f64) -> Result<()> {
    ensure(dt > 0.0 && dt.is_finite(), || format!("dt must be > 0, got {dt}"))?;
    ensure(horizon > 0.0 && horizon.is_finite(), || {
        format!("horizon must be > 0, got {horizon}")
    })?;
    ensure(horizon >= dt, || format!("horizon {horizon} shorter than dt {dt}"))
}

/// Simulate a 1-D Levy path with the given characteristics on `[0, horizon]`.
pub fn simulate_levy_1d<R: Rng>(
    law: &PreparedLevy,
    x0: f64,
    horizon: f64,
    dt: f64,
    rng: R,
) -> Result<SamplePath> {
    check_grid(horizon, dt)?;
    let mut stepper = LevyStepper::new(law, x0, dt, rng);
    let mut path = SamplePath {
        times: vec![0.0],
        values: vec![x0],
        dt,
        jump_indices: Vec::new(),
    };
    loop {
        let s = stepper.step();
        // grid points within rounding of the horizon close the path
        if s.t > horizon * (1.0 + 1e-12) {
            break;
        }
        if s.jump {
            path.jump_indices.push(path.times.len());
        }
        path.times.push(s.t);
        path.values.push(s.x);
        if !s.jump && s.t >= horizon * (1.0 - 1e-12) {
            break;
        }
    }
    Ok(path)
}

/// Euler path `dz = drift dt + vol dW` started at 0.
pub fn simulate_bm_drift(drift: f64, vol: f64, horizon: f64, dt: f64, seed: u64) -> Result<SamplePath> {
    ensure(vol >= 0.0 && vol.is_finite(), || format!("vol must be >= 0, got {vol}"))?;
    let ch = LevyCharacteristics::diffusion(drift, vol * vol)?;
    let law = ch.prepare(&QuadratureSpec::default())?;
    simulate_levy_1d(&law, 0.0, horizon, dt, stream_rng(seed, 0))
}

/// Event-driven compound-Poisson path: the grid is `0`, every jump epoch and
/// the horizon.
pub fn simulate_compound_poisson(spec: &JumpMeasureSpec, horizon: f64, seed: u64) -> Result<SamplePath> {
    spec.validate()?;
    ensure(horizon > 0.0 && horizon.is_finite(), || {
        format!("horizon must be > 0, got {horizon}")
    })?;
    let mut rng = stream_rng(seed, 0);
    let rate = spec.mass();
    let mut path = SamplePath {
        times: vec![0.0],
        values: vec![0.0],
        dt: horizon,
        jump_indices: Vec::new(),
    };
    if rate > 0.0 {
        let sampler = spec.sampler()?;
        let mut t = 0.0;
        let mut x = 0.0;
        loop {
            let e: f64 = Exp1.sample(&mut rng);
            t += e / rate;
            if t >= horizon {
                break;
            }
            x += sampler.sample(&mut rng);
            path.jump_indices.push(path.times.len());
            path.times.push(t);
            path.values.push(x);
        }
    }
    let last = path.terminal();
    path.times.push(horizon);
    path.values.push(last);
    Ok(path)
}

/// Lower-triangular square root of a symmetric nonnegative-definite 2x2 matrix.
pub fn sqrt_psd_2x2(sigma: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[s11, s12], [s21, s22]] = sigma;
    let scale = s11.abs().max(s22.abs()).max(1e-300);
    if (s12 - s21).abs() > 1e-12 * scale {
        return Err(Error::Parameter("diffusion matrix must be symmetric".into()));
    }
    if s11 < 0.0 || s22 < 0.0 {
        return Err(Error::Parameter("diffusion matrix has a negative variance".into()));
    }
    let det = s11 * s22 - s12 * s12;
    if det < -1e-12 * scale * scale {
        return Err(Error::Parameter(format!(
            "diffusion matrix is not positive semidefinite (det = {det})"
        )));
    }
    let l11 = s11.sqrt();
    let l21 = if l11 > 0.0 { s12 / l11 } else { 0.0 };
    if l11 == 0.0 && s12 != 0.0 {
        return Err(Error::Parameter(
            "diffusion matrix is not positive semidefinite (zero variance with covariance)".into(),
        ));
    }
    let l22 = (s22 - l21 * l21).max(0.0).sqrt();
    Ok([[l11, 0.0], [l21, l22]])
}

fn jump_epochs<R: Rng>(law: &PreparedLevy, horizon: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let Some(sampler) = law.sampler.as_ref() else {
        return out;
    };
    if law.rate <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / law.rate;
        if t >= horizon {
            return out;
        }
        out.push((t, law.sign * sampler.sample(rng)));
    }
}

/// Simulate two coordinates with Brownian parts correlated through `chol`
/// (lower-triangular root of the diffusion covariance) and independent jump
/// parts. The grid is the union of `k * dt` and both sets of jump epochs.
pub fn simulate_2d(
    drift: [f64; 2],
    chol: [[f64; 2]; 2],
    jumps: [&PreparedLevy; 2],
    start: [f64; 2],
    horizon: f64,
    dt: f64,
    seed: u64,
    path_index: u64,
) -> Result<SamplePath2D> {
    check_grid(horizon, dt)?;
    let mut gauss = stream_rng(seed, path_stream(path_index, 0));
    let mut events: Vec<(f64, usize, f64)> = Vec::new();
    for (k, law) in jumps.iter().enumerate() {
        let mut rng = stream_rng(seed, path_stream(path_index, 1 + k as u64));
        events.extend(jump_epochs(law, horizon, &mut rng).into_iter().map(|(t, y)| (t, k, y)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let n_grid = ((horizon / dt) * (1.0 - 1e-12)).ceil() as usize;
    let grid = (1..=n_grid).map(|k| (k as f64 * dt).min(horizon));
    let mut times = vec![0.0];
    let mut x = start;
    let mut v1 = vec![x[0]];
    let mut v2 = vec![x[1]];
    let mut jumps1 = Vec::new();
    let mut jumps2 = Vec::new();
    let mut ev = events.into_iter().peekable();
    let mut t = 0.0;
    let mut advance = |t: &mut f64, target: f64, x: &mut [f64; 2]| {
        let h = target - *t;
        if h > 0.0 {
            let z1: f64 = StandardNormal.sample(&mut gauss);
            let z2: f64 = StandardNormal.sample(&mut gauss);
            let sh = h.sqrt();
            x[0] += drift[0] * h + (chol[0][0] * z1) * sh;
            x[1] += drift[1] * h + (chol[1][0] * z1 + chol[1][1] * z2) * sh;
        }
        *t = target;
    };
    for g in grid {
        while let Some(&(te, k, y)) = ev.peek() {
            if te >= g {
                break;
            }
            ev.next();
            if te > t {
                advance(&mut t, te, &mut x);
                times.push(te);
                v1.push(x[0]);
                v2.push(x[1]);
            }
            // simultaneous epochs share one grid point
            let idx = times.len() - 1;
            x[k] += y;
            *if k == 0 { v1.last_mut() } else { v2.last_mut() }.expect("non-empty") = x[k];
            let list = if k == 0 { &mut jumps1 } else { &mut jumps2 };
            if list.last() != Some(&idx) {
                list.push(idx);
            }
        }
        advance(&mut t, g, &mut x);
        times.push(g);
        v1.push(x[0]);
        v2.push(x[1]);
    }
    SamplePath2D::new(
        SamplePath {
            times: times.clone(),
            values: v1,
            dt,
            jump_indices: jumps1,
        },
        SamplePath {
            times,
            values: v2,
            dt,
            jump_indices: jumps2,
        },
    )
}

/// Two-dimensional Levy process with triplet `(mu, sigma, nu_1 x nu_2)`.
pub fn simulate_levy2d(
    mu: [f64; 2],
    sigma: [[f64; 2]; 2],
    specs: [&JumpMeasureSpec; 2],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<SamplePath2D> {
    let chol = sqrt_psd_2x2(sigma)?;
    let quad = QuadratureSpec::default();
    let laws = [
        LevyCharacteristics::new(0.0, 0.0, JumpLaw::Measure { spec: specs[0].clone() }, 1.0)?
            .prepare(&quad)?,
        LevyCharacteristics::new(0.0, 0.0, JumpLaw::Measure { spec: specs[1].clone() }, 1.0)?
            .prepare(&quad)?,
    ];
    simulate_2d(mu, chol, [&laws[0], &laws[1]], [0.0, 0.0], horizon, dt, seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_diffusion_is_constant() {
        let p = simulate_bm_drift(0.0, 0.0, 1.0, 0.01, 1).unwrap();
        assert!(p.values.iter().all(|v| *v == 0.0));
        assert_eq!(p.len(), 101);
        assert!((p.times[100] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_drift_terminal() {
        let p = simulate_bm_drift(1.0, 0.0, 1.0, 0.01, 1).unwrap();
        assert!((p.terminal() - 1.0).abs() < 1e-12);
        p.check_invariants().unwrap();
    }

    #[test]
    fn bad_grid_is_rejected() {
        assert!(simulate_bm_drift(0.0, 1.0, 1.0, 0.0, 1).is_err());
        assert!(simulate_bm_drift(0.0, 1.0, -1.0, 0.1, 1).is_err());
        assert!(simulate_bm_drift(0.0, 1.0, 0.05, 0.1, 1).is_err());
        assert!(simulate_bm_drift(0.0, -1.0, 1.0, 0.1, 1).is_err());
    }

    #[test]
    fn no_jumps_without_intensity() {
        let spec = JumpMeasureSpec::exponential(0.0, 1.0);
        let p = simulate_compound_poisson(&spec, 5.0, 3).unwrap();
        assert_eq!(p.jump_count(), 0);
        assert!(p.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn subordinator_is_nondecreasing() {
        let spec = JumpMeasureSpec::exponential(3.0, 0.5).with_tilt(1.0);
        for seed in 0..20 {
            let p = simulate_compound_poisson(&spec, 10.0, seed).unwrap();
            p.check_invariants().unwrap();
            assert!(p.values.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn infinite_mass_is_unsupported() {
        let spec = JumpMeasureSpec::exponential(f64::INFINITY, 1.0);
        assert!(matches!(
            simulate_compound_poisson(&spec, 1.0, 1),
            Err(Error::UnsupportedMeasure(_))
        ));
    }

    #[test]
    fn pure_drift_2d() {
        let zero = JumpMeasureSpec::exponential(0.0, 1.0);
        let p = simulate_levy2d([1.0, -1.0], [[0.0, 0.0], [0.0, 0.0]], [&zero, &zero], 2.0, 0.01, 5)
            .unwrap();
        assert!((p.first.terminal() - 2.0).abs() < 1e-12);
        assert!((p.second.terminal() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_diffusion_is_proportional() {
        let zero = JumpMeasureSpec::exponential(0.0, 1.0);
        let (s1, s2) = (0.5, 2.0);
        let sigma = [[s1 * s1, s1 * s2], [s1 * s2, s2 * s2]];
        let p = simulate_levy2d([0.0, 0.0], sigma, [&zero, &zero], 1.0, 0.01, 9).unwrap();
        for (a, b) in p.first.increments().iter().zip(p.second.increments()) {
            assert!((b - a * s2 / s1).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn non_psd_sigma_is_rejected() {
        assert!(sqrt_psd_2x2([[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(sqrt_psd_2x2([[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(sqrt_psd_2x2([[-1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn jump_epochs_are_on_the_grid() {
        let spec = JumpMeasureSpec::exponential(5.0, 1.0);
        let p = simulate_levy2d([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [&spec, &spec], 3.0, 0.1, 2)
            .unwrap();
        p.first.check_invariants().unwrap();
        assert!(p.first.jump_count() > 0 && p.second.jump_count() > 0);
        for &i in &p.first.jump_indices {
            assert!(p.first.values[i] - p.first.values[i - 1] > 0.0);
        }
        // grid points plus epochs
        assert!(p.times().len() > 31);
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let spec = JumpMeasureSpec::exponential(2.0, 1.0);
        let a = simulate_levy2d([0.1, 0.2], [[1.0, 0.3], [0.3, 2.0]], [&spec, &spec], 2.0, 0.01, 77).unwrap();
        let b = simulate_levy2d([0.1, 0.2], [[1.0, 0.3], [0.3, 2.0]], [&spec, &spec], 2.0, 0.01, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let p = simulate_bm_drift(0.0, 1.0, 0.1, 0.05, 1).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("time,value,is_jump\n"));
        assert_eq!(s.lines().count(), 1 + p.len());
    }
}
