//! The rectangle decision rule and its Monte Carlo operating characteristics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::levy_sim::{LevyCharacteristics, LevyStepper, PreparedLevy, SamplePath, SamplePath2D, Step};
use crate::likelihood::{drift_llr_for_world, jump_llr_for_world, DriftTestParams, JumpTestParams};
use crate::quadrature::QuadratureSpec;
use crate::rng::{path_stream, stream_rng};
use crate::thresholds::Rectangle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitSide {
    Left,
    Right,
}

impl ExitSide {
    /// Right exit asserts "signal present".
    pub fn digit(self) -> u8 {
        match self {
            ExitSide::Left => 0,
            ExitSide::Right => 1,
        }
    }
}

/// First exit of one coordinate from `[l, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    pub tau: f64,
    pub side: ExitSide,
}

/// Two-letter world label `ij`.
pub fn world_label(i: u8, j: u8) -> String {
    format!("{i}{j}")
}

/// Parse `"00"`, `"01"`, `"10"` or `"11"`.
pub fn parse_world(s: &str) -> Result<(u8, u8)> {
    match s.trim() {
        "00" => Ok((0, 0)),
        "01" => Ok((0, 1)),
        "10" => Ok((1, 0)),
        "11" => Ok((1, 1)),
        other => Err(Error::Parameter(format!("world must be one of 00, 01, 10, 11, got {other:?}"))),
    }
}

/// Result of running the rule on one pair of statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub exits: [Option<Exit>; 2],
}

impl DecisionOutcome {
    pub fn decided(&self) -> bool {
        self.exits.iter().all(Option::is_some)
    }

    pub fn tau_k(&self, k: usize) -> Option<f64> {
        self.exits[k].map(|e| e.tau)
    }

    /// `tau = tau_1 v tau_2`; `None` when either coordinate never left.
    pub fn tau(&self) -> Option<f64> {
        Some(self.tau_k(0)?.max(self.tau_k(1)?))
    }

    /// Digit pair of the decided world.
    pub fn delta(&self) -> Option<(u8, u8)> {
        Some((self.exits[0]?.side.digit(), self.exits[1]?.side.digit()))
    }
}

fn first_exit(path: &SamplePath, l: f64, r: f64) -> Option<Exit> {
    path.times.iter().zip(&path.values).find_map(|(&t, &x)| {
        if x > r {
            Some(Exit { tau: t, side: ExitSide::Right })
        } else if x < l {
            Some(Exit { tau: t, side: ExitSide::Left })
        } else {
            None
        }
    })
}

/// Apply the rule to a realised pair of statistics.
pub fn run_decision(llr2d: &SamplePath2D, rect: &Rectangle) -> Result<DecisionOutcome> {
    rect.validate()?;
    let mut exits = [None, None];
    for (k, exit) in exits.iter_mut().enumerate() {
        let (l, r) = rect.bounds(k);
        let path = llr2d.coordinate(k);
        let x0 = path.start();
        if !(l < x0 && x0 < r) {
            return Err(Error::Precondition(format!(
                "coordinate {} starts at {x0}, outside ({l}, {r})",
                k + 1
            )));
        }
        *exit = first_exit(path, l, r);
    }
    Ok(DecisionOutcome { exits })
}

/// Stream a statistic from 0 until it leaves `[l, r]` or passes `horizon`.
pub fn simulate_exit<R: rand::Rng>(
    law: &PreparedLevy,
    l: f64,
    r: f64,
    dt: f64,
    horizon: f64,
    rng: R,
) -> Option<Exit> {
    run_exit(law, l, r, dt, horizon, rng, |_| {})
}

/// [`simulate_exit`] that also returns the realised path up to the exit.
pub fn trace_exit<R: rand::Rng>(
    law: &PreparedLevy,
    l: f64,
    r: f64,
    dt: f64,
    horizon: f64,
    rng: R,
) -> (Option<Exit>, SamplePath) {
    let mut path = SamplePath {
        times: vec![0.0],
        values: vec![0.0],
        dt,
        jump_indices: Vec::new(),
    };
    let exit = run_exit(law, l, r, dt, horizon, rng, |s| {
        if s.jump {
            path.jump_indices.push(path.times.len());
        }
        path.times.push(s.t);
        path.values.push(s.x);
    });
    (exit, path)
}

fn run_exit<R: rand::Rng>(
    law: &PreparedLevy,
    l: f64,
    r: f64,
    dt: f64,
    horizon: f64,
    rng: R,
    mut visit: impl FnMut(Step),
) -> Option<Exit> {
    let mut stepper = LevyStepper::new(law, 0.0, dt, rng);
    loop {
        let s = stepper.step();
        if s.t > horizon * (1.0 + 1e-12) {
            return None;
        }
        visit(s);
        if s.x > r {
            return Some(Exit { tau: s.t, side: ExitSide::Right });
        }
        if s.x < l {
            return Some(Exit { tau: s.t, side: ExitSide::Left });
        }
    }
}

/// `P(hit r before l)` from 0 for Brownian motion with the given drift and
/// variance rate.
pub fn exit_probability_oracle_1d(drift: f64, variance: f64, l: f64, r: f64) -> Result<f64> {
    ensure(l < 0.0 && 0.0 < r, || format!("need l < 0 < r, got ({l}, {r})"))?;
    ensure(variance >= 0.0, || format!("variance must be >= 0, got {variance}"))?;
    if variance == 0.0 {
        return match drift.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => Ok(1.0),
            Some(std::cmp::Ordering::Less) => Ok(0.0),
            _ => Err(Error::Parameter("zero drift and zero variance never exit".into())),
        };
    }
    if drift == 0.0 {
        return Ok(-l / (r - l));
    }
    let theta = 2.0 * drift / variance;
    if theta < 0.0 {
        // reflect x -> -x
        return Ok(1.0 - exit_probability_oracle_1d(-drift, variance, -r, -l)?);
    }
    // (s(0) - s(l))/(s(r) - s(l)) with s(x) = e^{-theta x}, scaled by e^{theta l}
    Ok((theta * l).exp_m1() / (-theta * (r - l)).exp_m1())
}

/// Which statistic is simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSpec {
    Drift { params: DriftTestParams },
    Jump { params: JumpTestParams },
}

impl TestSpec {
    /// Characteristics of coordinate `k` under true world digit `w`.
    pub fn characteristics(&self, k: usize, w: u8, quad: &QuadratureSpec) -> Result<LevyCharacteristics> {
        match self {
            TestSpec::Drift { params } => drift_llr_for_world(params, k, w),
            TestSpec::Jump { params } => jump_llr_for_world(params, k, w, quad),
        }
    }
}

/// Default step: `1e-3 * min_k (r_k - l_k)^2 / max_k diffusion_k`.
pub fn default_dt(rect: &Rectangle, chars: &[LevyCharacteristics; 2]) -> f64 {
    let w = (rect.r1 - rect.l1).min(rect.r2 - rect.l2);
    let v = chars[0].diffusion_var.max(chars[1].diffusion_var);
    if v > 0.0 {
        1e-3 * w * w / v
    } else {
        1e-3 * w * w
    }
}

/// Monte Carlo job description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub world: (u8, u8),
    pub test: TestSpec,
    pub rect: Rectangle,
    pub n_paths: usize,
    /// `None` selects [`default_dt`].
    pub dt: Option<f64>,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default)]
    pub quad: QuadratureSpec,
}

/// Rate estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub p: f64,
    pub se: f64,
}

impl RateEstimate {
    pub fn from_counts(hits: usize, n: usize) -> Self {
        if n == 0 {
            return Self { p: f64::NAN, se: f64::NAN };
        }
        let p = hits as f64 / n as f64;
        Self {
            p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Self { mean, se: f64::NAN };
        }
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Aggregate operating characteristics of the rule in one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingStats {
    pub world: String,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    /// `P(delta != world)`; no-decision paths count in the denominator only.
    pub alpha_hat: RateEstimate,
    /// Fraction of paths deciding each world `00, 01, 10, 11`.
    pub delta_freq: [f64; 4],
    /// Per-coordinate right-exit frequency.
    pub right_exit: [RateEstimate; 2],
    pub mean_tau: MeanEstimate,
    pub mean_tau1: MeanEstimate,
    /// `E(tau_1 v tau_2) - E(tau_1)` from paired differences.
    pub gap: MeanEstimate,
    pub no_decision: RateEstimate,
}

/// Simulate `n_paths` statistic pairs in one world and aggregate.
pub fn monte_carlo_operating_stats(cfg: &McConfig) -> Result<OperatingStats> {
    ensure(cfg.n_paths >= 100, || format!("n_paths must be >= 100, got {}", cfg.n_paths))?;
    ensure(cfg.world.0 <= 1 && cfg.world.1 <= 1, || "world digits must be 0 or 1".into())?;
    ensure(cfg.horizon > 0.0 && cfg.horizon.is_finite(), || {
        format!("horizon must be > 0, got {}", cfg.horizon)
    })?;
    cfg.rect.validate()?;
    let chars = [
        cfg.test.characteristics(0, cfg.world.0, &cfg.quad)?,
        cfg.test.characteristics(1, cfg.world.1, &cfg.quad)?,
    ];
    let dt = cfg.dt.unwrap_or_else(|| default_dt(&cfg.rect, &chars));
    ensure(dt > 0.0 && dt.is_finite(), || format!("dt must be > 0, got {dt}"))?;
    let laws = [chars[0].prepare(&cfg.quad)?, chars[1].prepare(&cfg.quad)?];
    let rect = cfg.rect;

    let outcomes: Vec<DecisionOutcome> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut exits = [None, None];
            for (k, exit) in exits.iter_mut().enumerate() {
                let (l, r) = rect.bounds(k);
                let rng = stream_rng(cfg.seed, path_stream(p, k as u64));
                *exit = simulate_exit(&laws[k], l, r, dt, cfg.horizon, rng);
            }
            DecisionOutcome { exits }
        })
        .collect();

    let n = outcomes.len();
    let undecided = outcomes.iter().filter(|o| !o.decided()).count();
    if 2 * undecided > n {
        return Err(Error::HorizonTooShort(format!(
            "{undecided} of {n} paths did not decide before horizon {}; increase the horizon",
            cfg.horizon
        )));
    }
    let mut delta_counts = [0usize; 4];
    let mut taus = Vec::with_capacity(n);
    let mut tau1s = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for o in &outcomes {
        if let (Some((a, b)), Some(tau), Some(t1)) = (o.delta(), o.tau(), o.tau_k(0)) {
            delta_counts[(2 * a + b) as usize] += 1;
            taus.push(tau);
            tau1s.push(t1);
            gaps.push(tau - t1);
        }
    }
    let truth = (2 * cfg.world.0 + cfg.world.1) as usize;
    let decided = n - undecided;
    let wrong = decided - delta_counts[truth];
    let right_exit = [0, 1].map(|k| {
        let hits = outcomes
            .iter()
            .filter(|o| o.exits[k].is_some_and(|e| e.side == ExitSide::Right))
            .count();
        RateEstimate::from_counts(hits, n)
    });
    Ok(OperatingStats {
        world: world_label(cfg.world.0, cfg.world.1),
        n_paths: n,
        dt,
        horizon: cfg.horizon,
        alpha_hat: RateEstimate::from_counts(wrong, n),
        delta_freq: delta_counts.map(|c| c as f64 / n as f64),
        right_exit,
        mean_tau: MeanEstimate::from_samples(&taus),
        mean_tau1: MeanEstimate::from_samples(&tau1s),
        gap: MeanEstimate::from_samples(&gaps),
        no_decision: RateEstimate::from_counts(undecided, n),
    })
}

/// One-dimensional exit statistics: right-exit rate, mean exit time and
/// censored fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitStats1d {
    pub n_paths: usize,
    pub dt: f64,
    pub right_exit: RateEstimate,
    pub mean_tau: MeanEstimate,
    pub no_decision: RateEstimate,
}

pub fn monte_carlo_exit_1d(
    law: &PreparedLevy,
    l: f64,
    r: f64,
    n_paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<ExitStats1d> {
    ensure(l < 0.0 && 0.0 < r, || format!("need l < 0 < r, got ({l}, {r})"))?;
    ensure(n_paths > 0, || "n_paths must be > 0".into())?;
    ensure(dt > 0.0 && horizon > 0.0, || "dt and horizon must be > 0".into())?;
    let exits: Vec<Option<Exit>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_exit(law, l, r, dt, horizon, stream_rng(seed, path_stream(p, 0))))
        .collect();
    let right = exits.iter().filter(|e| e.is_some_and(|e| e.side == ExitSide::Right)).count();
    let none = exits.iter().filter(|e| e.is_none()).count();
    let taus: Vec<f64> = exits.iter().flatten().map(|e| e.tau).collect();
    Ok(ExitStats1d {
        n_paths,
        dt,
        right_exit: RateEstimate::from_counts(right, n_paths),
        mean_tau: MeanEstimate::from_samples(&taus),
        no_decision: RateEstimate::from_counts(none, n_paths),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_path(slope: f64, n: usize, dt: f64) -> SamplePath {
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let values = times.iter().map(|t| slope * t).collect();
        SamplePath { times, values, dt, jump_indices: vec![] }
    }

    #[test]
    fn linear_crossings() {
        let rect = Rectangle::square(-1.0, 1.0).unwrap();
        let up = SamplePath2D::new(linear_path(1.0, 300, 0.01), linear_path(1.0, 300, 0.01)).unwrap();
        let o = run_decision(&up, &rect).unwrap();
        assert_eq!(o.delta(), Some((1, 1)));
        assert!((o.tau().unwrap() - 1.0).abs() <= 0.01 + 1e-12);
        let mixed = SamplePath2D::new(linear_path(-1.0, 300, 0.01), linear_path(1.0, 300, 0.01)).unwrap();
        assert_eq!(run_decision(&mixed, &rect).unwrap().delta(), Some((0, 1)));
    }

    #[test]
    fn delta_digit_follows_its_coordinate() {
        let rect = Rectangle::square(-1.0, 1.0).unwrap();
        let a = linear_path(-2.0, 300, 0.01);
        let b = linear_path(0.7, 300, 0.01);
        let ab = run_decision(&SamplePath2D::new(a.clone(), b.clone()).unwrap(), &rect).unwrap();
        let ba = run_decision(&SamplePath2D::new(b, a).unwrap(), &rect).unwrap();
        let (x, y) = ab.delta().unwrap();
        assert_eq!(ba.delta().unwrap(), (y, x));
    }

    #[test]
    fn start_outside_is_rejected() {
        let rect = Rectangle::square(-1.0, 1.0).unwrap();
        let mut p = linear_path(1.0, 10, 0.1);
        for v in &mut p.values {
            *v += 5.0;
        }
        let pair = SamplePath2D::new(p.clone(), p).unwrap();
        assert!(matches!(run_decision(&pair, &rect), Err(Error::Precondition(_))));
    }

    #[test]
    fn no_exit_is_undecided() {
        let rect = Rectangle::square(-1.0, 1.0).unwrap();
        let flat = linear_path(0.0, 10, 0.1);
        let o = run_decision(&SamplePath2D::new(flat.clone(), flat).unwrap(), &rect).unwrap();
        assert!(!o.decided());
        assert_eq!(o.tau(), None);
    }

    #[test]
    fn oracle_examples() {
        let p1 = exit_probability_oracle_1d(0.5, 1.0, -1.0, 1.0).unwrap();
        assert!((p1 - 0.731_058_578_630_004_9).abs() < 1e-12);
        let p0 = exit_probability_oracle_1d(-0.5, 1.0, -1.0, 1.0).unwrap();
        assert!((p0 - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((exit_probability_oracle_1d(0.0, 2.0, -1.0, 3.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(exit_probability_oracle_1d(1.0, 0.0, -1.0, 1.0).unwrap(), 1.0);
        assert_eq!(exit_probability_oracle_1d(-1.0, 0.0, -1.0, 1.0).unwrap(), 0.0);
        // large drift stays finite
        let p = exit_probability_oracle_1d(500.0, 1.0, -2.0, 3.0).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn world_parsing() {
        assert_eq!(parse_world("10").unwrap(), (1, 0));
        assert!(parse_world("2").is_err());
    }

    #[test]
    fn too_few_paths_is_rejected() {
        let cfg = McConfig {
            world: (0, 0),
            test: TestSpec::Drift { params: DriftTestParams::new([1.0, 1.0], [1.0, 1.0]).unwrap() },
            rect: Rectangle::square(-1.0, 1.0).unwrap(),
            n_paths: 0,
            dt: None,
            horizon: 10.0,
            seed: 1,
            quad: QuadratureSpec::default(),
        };
        assert!(matches!(monte_carlo_operating_stats(&cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn frozen_coordinate_never_decides() {
        let cfg = McConfig {
            world: (0, 0),
            test: TestSpec::Drift { params: DriftTestParams::new([0.0, 1.0], [1.0, 1.0]).unwrap() },
            rect: Rectangle::square(-1.0, 1.0).unwrap(),
            n_paths: 200,
            dt: Some(0.01),
            horizon: 5.0,
            seed: 1,
            quad: QuadratureSpec::default(),
        };
        assert!(matches!(monte_carlo_operating_stats(&cfg), Err(Error::HorizonTooShort(_))));
    }

    #[test]
    fn world_00_error_rate_is_near_oracle() {
        let rect = crate::thresholds::symmetric_rectangle(0.05).unwrap();
        let params = DriftTestParams::new([1.0, 1.0], [1.0, 1.0]).unwrap();
        let cfg = McConfig {
            world: (0, 0),
            test: TestSpec::Drift { params },
            rect,
            n_paths: 4000,
            dt: None,
            horizon: 200.0,
            seed: 5,
            quad: QuadratureSpec::default(),
        };
        let s = monte_carlo_operating_stats(&cfg).unwrap();
        let q = exit_probability_oracle_1d(-0.5, 1.0, rect.l1, rect.r1).unwrap();
        let exact = 1.0 - (1.0 - q) * (1.0 - q);
        assert!((exact - 0.05).abs() < 1e-12);
        // discrete monitoring only lowers the wrong-exit rate slightly
        assert!((s.alpha_hat.p - exact).abs() < 3.0 * s.alpha_hat.se + 0.005, "{:?}", s.alpha_hat);
        assert_eq!(s.no_decision.p, 0.0);
    }

    #[test]
    fn parallel_runs_are_reproducible() {
        let cfg = McConfig {
            world: (1, 0),
            test: TestSpec::Drift { params: DriftTestParams::new([1.0, 2.0], [1.0, 1.0]).unwrap() },
            rect: Rectangle::square(-1.0, 1.0).unwrap(),
            n_paths: 500,
            dt: None,
            horizon: 100.0,
            seed: 9,
            quad: QuadratureSpec::default(),
        };
        let a = monte_carlo_operating_stats(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| monte_carlo_operating_stats(&cfg).unwrap());
        assert_eq!(a, b);
    }
}
