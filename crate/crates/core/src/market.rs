//! Barndorff-Nielsen and Shephard (BN-S) model with mixed subordinators,
//! price ingestion, parameter fitting and the crude-oil decision experiment.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{simulate_exit, trace_exit, ExitSide, MeanEstimate, RateEstimate};
use crate::error::{ensure, Error, Result};
use crate::format::num;
use crate::likelihood::{index_for_world, jump_llr_characteristics, jump_llr_coefficients, JumpTestParams, LlrCoefficientsRecord};
use crate::measure::{JumpMeasureSpec, KernelMode, SizeSampler};
use crate::quadrature::QuadratureSpec;
use crate::rng::{path_stream, stream_rng};
use crate::supersub::{rectangle_from_envelopes_1d, Candidates1d, Envelope1d, ScanOptions};

/// Parameters of the mixed BN-S model. `z_spec` and `zb_spec` are the Levy
/// measures of the background driving subordinators `Z` and `Z^(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnsParams {
    pub mu: f64,
    pub beta: f64,
    /// Jump leverage, `<= 0`.
    pub rho: f64,
    pub lambda: f64,
    /// Weight of `Z` in the log-price.
    pub theta: f64,
    /// Weight of `Z` in the variance.
    pub theta_prime: f64,
    pub sigma0_sq: f64,
    #[serde(default = "default_s0")]
    pub s0: f64,
    pub z_spec: JumpMeasureSpec,
    pub zb_spec: JumpMeasureSpec,
}

fn default_s0() -> f64 {
    1.0
}

impl BnsParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.lambda > 0.0 && self.lambda.is_finite(), || format!("lambda must be > 0, got {}", self.lambda))?;
        ensure(self.rho <= 0.0, || format!("rho must be <= 0, got {}", self.rho))?;
        for (name, w) in [("theta", self.theta), ("theta_prime", self.theta_prime)] {
            ensure((0.0..=1.0).contains(&w), || format!("{name} must lie in [0, 1], got {w}"))?;
        }
        ensure(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite(), || {
            format!("sigma0_sq must be > 0, got {}", self.sigma0_sq)
        })?;
        ensure(self.s0 > 0.0, || format!("s0 must be > 0, got {}", self.s0))?;
        ensure(self.mu.is_finite() && self.beta.is_finite(), || "mu and beta must be finite".into())?;
        self.z_spec.validate()?;
        self.zb_spec.validate()?;
        ensure(
            self.zb_spec.mass() > self.z_spec.mass() || (self.z_spec.mass() == 0.0 && self.zb_spec.mass() == 0.0),
            || {
                format!(
                    "Z^(b) must have greater intensity than Z ({} <= {})",
                    self.zb_spec.mass(),
                    self.z_spec.mass()
                )
            },
        )
    }

    /// `lambda * (theta' E[Z_1] + (1 - theta') E[Z^(b)_1])`, the long-run
    /// inflow rate of the variance.
    pub fn variance_inflow(&self, quad: &QuadratureSpec) -> Result<f64> {
        let m = self.z_spec.integrate(|x| x, quad)?;
        let mb = self.zb_spec.integrate(|x| x, quad)?;
        Ok(self.lambda * (self.theta_prime * m + (1.0 - self.theta_prime) * mb))
    }

    /// `E[sigma_T^2]` from the linear moment equation.
    pub fn mean_variance(&self, t: f64, quad: &QuadratureSpec) -> Result<f64> {
        let decay = (-self.lambda * t).exp();
        Ok(self.sigma0_sq * decay + self.variance_inflow(quad)? * (-(-self.lambda * t).exp_m1()) / self.lambda)
    }
}

/// Simulated BN-S paths on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnsPath {
    pub times: Vec<f64>,
    pub price: Vec<f64>,
    pub x: Vec<f64>,
    pub variance: Vec<f64>,
}

impl BnsPath {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,price,x,variance")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{},{}",
                num(self.times[k]),
                num(self.price[k]),
                num(self.x[k]),
                num(self.variance[k])
            )?;
        }
        Ok(())
    }
}

/// Jumps of a time-changed subordinator over one step.
struct Clock {
    rate: f64,
    sampler: Option<SizeSampler>,
}

impl Clock {
    fn new(spec: &JumpMeasureSpec, lambda: f64) -> Result<Self> {
        let rate = lambda * spec.mass();
        let sampler = if rate > 0.0 { Some(spec.sampler()?) } else { None };
        Ok(Self { rate, sampler })
    }

    /// `(sum of sizes, sum of sizes discounted to the step end)`.
    fn step<R: Rng>(&self, dt: f64, lambda: f64, rng: &mut R) -> (f64, f64) {
        let Some(sampler) = &self.sampler else {
            return (0.0, 0.0);
        };
        let n = Poisson::new(self.rate * dt).map(|p| p.sample(rng) as u64).unwrap_or(0);
        let mut raw = 0.0;
        let mut decayed = 0.0;
        for _ in 0..n {
            let y = sampler.sample(rng);
            let u: f64 = rng.random();
            raw += y;
            decayed += y * (-lambda * dt * u).exp();
        }
        (raw, decayed)
    }
}

fn check_grid(horizon: f64, dt: f64) -> Result<usize> {
    ensure(horizon > 0.0 && horizon.is_finite(), || format!("horizon must be > 0, got {horizon}"))?;
    ensure(dt > 0.0 && dt <= horizon, || format!("dt must lie in (0, horizon], got {dt}"))?;
    Ok((horizon / dt).round().max(1.0) as usize)
}

/// Euler scheme for `X` with the variance decayed exactly between steps:
/// `dX = (mu + beta s^2) dt + s dW + rho (theta dZ + (1 - theta) dZ^(b))`,
/// `ds^2 = -lambda s^2 dt + theta' dZ + (1 - theta') dZ^(b)`, both clocks
/// running at `lambda t`. `W`, `Z` and `Z^(b)` use separate RNG streams.
pub fn simulate_bns(params: &BnsParams, horizon: f64, dt: f64, seed: u64) -> Result<BnsPath> {
    params.validate()?;
    let n = check_grid(horizon, dt)?;
    let lam = params.lambda;
    let z = Clock::new(&params.z_spec, lam)?;
    let zb = Clock::new(&params.zb_spec, lam)?;
    let mut rw = stream_rng(seed, path_stream(0, 0));
    let mut rz = stream_rng(seed, path_stream(0, 1));
    let mut rzb = stream_rng(seed, path_stream(0, 2));
    let decay = (-lam * dt).exp();
    let mut out = start_path(params, n);
    let (mut x, mut v) = (0.0, params.sigma0_sq);
    for k in 1..=n {
        let g: f64 = StandardNormal.sample(&mut rw);
        let (dz, dz_v) = z.step(dt, lam, &mut rz);
        let (dzb, dzb_v) = zb.step(dt, lam, &mut rzb);
        x += (params.mu + params.beta * v) * dt
            + (v * dt).sqrt() * g
            + params.rho * (params.theta * dz + (1.0 - params.theta) * dzb);
        v = v * decay + params.theta_prime * dz_v + (1.0 - params.theta_prime) * dzb_v;
        push(&mut out, params, k as f64 * dt, x, v);
    }
    Ok(out)
}

/// The single-subordinator scheme; agrees with [`simulate_bns`] bit for bit
/// when `theta = theta' = 1`.
pub fn simulate_bns_classical(params: &BnsParams, horizon: f64, dt: f64, seed: u64) -> Result<BnsPath> {
    params.validate()?;
    let n = check_grid(horizon, dt)?;
    let lam = params.lambda;
    let z = Clock::new(&params.z_spec, lam)?;
    let mut rw = stream_rng(seed, path_stream(0, 0));
    let mut rz = stream_rng(seed, path_stream(0, 1));
    let decay = (-lam * dt).exp();
    let mut out = start_path(params, n);
    let (mut x, mut v) = (0.0, params.sigma0_sq);
    for k in 1..=n {
        let g: f64 = StandardNormal.sample(&mut rw);
        let (dz, dz_v) = z.step(dt, lam, &mut rz);
        x += (params.mu + params.beta * v) * dt + (v * dt).sqrt() * g + params.rho * dz;
        v = v * decay + dz_v;
        push(&mut out, params, k as f64 * dt, x, v);
    }
    Ok(out)
}

fn start_path(params: &BnsParams, n: usize) -> BnsPath {
    let mut p = BnsPath {
        times: Vec::with_capacity(n + 1),
        price: Vec::with_capacity(n + 1),
        x: Vec::with_capacity(n + 1),
        variance: Vec::with_capacity(n + 1),
    };
    push(&mut p, params, 0.0, 0.0, params.sigma0_sq);
    p
}

fn push(p: &mut BnsPath, params: &BnsParams, t: f64, x: f64, v: f64) {
    p.times.push(t);
    p.x.push(x);
    p.variance.push(v);
    p.price.push(params.s0 * x.exp());
}

/// Terminal `sigma^2` and jump contribution to `X` over many paths, one
/// stream family per path.
pub fn simulate_bns_terminal(params: &BnsParams, horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let n = check_grid(horizon, dt)?;
    let lam = params.lambda;
    let z = Clock::new(&params.z_spec, lam)?;
    let zb = Clock::new(&params.zb_spec, lam)?;
    let decay = (-lam * dt).exp();
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rz = stream_rng(seed, path_stream(p, 1));
            let mut rzb = stream_rng(seed, path_stream(p, 2));
            let (mut jx, mut v) = (0.0, params.sigma0_sq);
            for _ in 0..n {
                let (dz, dz_v) = z.step(dt, lam, &mut rz);
                let (dzb, dzb_v) = zb.step(dt, lam, &mut rzb);
                jx += params.rho * (params.theta * dz + (1.0 - params.theta) * dzb);
                v = v * decay + params.theta_prime * dz_v + (1.0 - params.theta_prime) * dzb_v;
            }
            (v, jx)
        })
        .collect())
}

/// Daily closing prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub close: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    date: String,
    close: String,
}

impl PriceSeries {
    /// Sorted, validated series from `(date, close)` pairs.
    pub fn new(mut rows: Vec<(NaiveDate, f64)>) -> Result<Self> {
        rows.sort_by_key(|r| r.0);
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parameter(format!("duplicate date {}", w[0].0)));
            }
        }
        ensure(rows.iter().all(|r| r.1 > 0.0 && r.1.is_finite()), || "prices must be > 0".into())?;
        Ok(Self {
            dates: rows.iter().map(|r| r.0).collect(),
            close: rows.iter().map(|r| r.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close.is_empty()
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.close.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.close.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `date,close` with shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "close"])?;
        for (d, c) in self.dates.iter().zip(&self.close) {
            out.write_record([d.format("%Y-%m-%d").to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parse a `date,close` CSV with ISO dates. Row numbers in errors count the
/// header as row 1.
pub fn load_prices(path: &Path) -> Result<PriceSeries> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open prices {}: {e}", path.display())))?;
    read_prices(file)
}

pub fn read_prices<R: std::io::Read>(input: R) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["date", "close"] {
        return Err(Error::Load {
            row: 1,
            msg: format!("expected header date,close, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (idx, rec) in rdr.deserialize::<PriceRow>().enumerate() {
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::Load { row, msg: e.to_string() })?;
        let date = NaiveDate::parse_from_str(&rec.date, "%Y-%m-%d")
            .map_err(|e| Error::Load { row, msg: format!("bad date {:?}: {e}", rec.date) })?;
        let close: f64 = rec
            .close
            .parse()
            .map_err(|_| Error::Load { row, msg: format!("bad price {:?}", rec.close) })?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(Error::Load { row, msg: format!("price must be > 0, got {close}") });
        }
        if let Some(first) = seen.insert(date, row) {
            return Err(Error::Load { row, msg: format!("duplicate date {date} (first at row {first})") });
        }
        rows.push((date, close));
    }
    PriceSeries::new(rows)
}

/// Which increments the moments are taken on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnConvention {
    /// `p_{t+1} - p_t`, in price units.
    #[default]
    PriceDifference,
    /// `ln(p_{t+1}/p_t)`.
    LogReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Per day.
    pub mu_hat: f64,
    /// Per square-root day.
    pub sigma_hat: f64,
    pub convention: ReturnConvention,
    pub n_returns: usize,
    /// `sigma_hat == 0`.
    pub degenerate: bool,
}

impl FitResult {
    /// Fit supplied directly, e.g. from published statistics.
    pub fn given(mu_hat: f64, sigma_hat: f64) -> Result<Self> {
        ensure(sigma_hat > 0.0 && sigma_hat.is_finite(), || format!("sigma_hat must be > 0, got {sigma_hat}"))?;
        Ok(Self {
            mu_hat,
            sigma_hat,
            convention: ReturnConvention::PriceDifference,
            n_returns: 0,
            degenerate: false,
        })
    }
}

pub const MIN_RETURNS: usize = 30;

/// Sample mean and sample standard deviation of the daily increments.
pub fn fit_parameters(series: &PriceSeries, convention: ReturnConvention) -> Result<FitResult> {
    let d = match convention {
        ReturnConvention::PriceDifference => series.differences(),
        ReturnConvention::LogReturn => series.log_returns(),
    };
    if d.len() < MIN_RETURNS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_RETURNS} returns, got {}",
            d.len()
        )));
    }
    let est = MeanEstimate::from_samples(&d);
    let sigma_hat = est.se * (d.len() as f64).sqrt();
    Ok(FitResult {
        mu_hat: est.mean,
        sigma_hat,
        convention,
        n_returns: d.len(),
        degenerate: sigma_hat == 0.0,
    })
}

/// Mean absolute move beyond `k * sigma_hat`, in units of `sigma_hat`.
/// Returns 0 when no move exceeds the threshold.
pub fn heuristic_a(series: &PriceSeries, fit: &FitResult, k: f64) -> Result<f64> {
    ensure(fit.sigma_hat > 0.0, || "heuristic a needs sigma_hat > 0".into())?;
    let d = match fit.convention {
        ReturnConvention::PriceDifference => series.differences(),
        ReturnConvention::LogReturn => series.log_returns(),
    };
    let big: Vec<f64> = d
        .iter()
        .map(|x| (x - fit.mu_hat).abs())
        .filter(|x| *x > k * fit.sigma_hat)
        .collect();
    if big.is_empty() {
        return Ok(0.0);
    }
    Ok(big.iter().sum::<f64>() / big.len() as f64 / fit.sigma_hat)
}

/// How the tolerance `alpha0` enters the envelope target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaWiring {
    /// `alpha0` is an error level: target `1 - alpha0`.
    #[default]
    Error,
    /// `alpha0` is a confidence level: target `alpha0`.
    Confidence,
}

impl AlphaWiring {
    pub fn target(self, alpha0: f64) -> f64 {
        match self {
            AlphaWiring::Error => 1.0 - alpha0,
            AlphaWiring::Confidence => alpha0,
        }
    }
}

/// Settings of the one-dimensional decision experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OilConfig {
    pub a: f64,
    pub alpha0: f64,
    pub l: f64,
    pub n_runs: usize,
    pub horizon: f64,
    /// `None` picks `1e-3 (r - l)^2 / beta^2`.
    pub dt: Option<f64>,
    pub seed: u64,
    pub nu: JumpMeasureSpec,
    pub kernel_mode: KernelMode,
    /// `K` in `L = max(K M, M)`.
    pub k_bound: f64,
    pub wiring: AlphaWiring,
    /// True world of the simulated statistic.
    pub world: u8,
    pub scan: ScanOptions,
    pub quad: QuadratureSpec,
}

impl Default for OilConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            alpha0: 0.9,
            l: -0.03,
            n_runs: 30,
            horizon: 100.0,
            dt: None,
            seed: crate::rng::DEFAULT_SEED,
            nu: JumpMeasureSpec::exponential(1.0, 1.0),
            kernel_mode: KernelMode::default(),
            k_bound: 1.0,
            wiring: AlphaWiring::default(),
            world: 0,
            scan: ScanOptions::default(),
            quad: QuadratureSpec::default(),
        }
    }
}

/// One simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    /// `"right"`, `"left"` or `"none"`.
    pub side: &'static str,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitCounts {
    pub right: usize,
    pub left: usize,
    pub none: usize,
}

/// Constants used by the one-dimensional envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeAudit {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "M")]
    pub m_mass: f64,
    #[serde(rename = "K_bound")]
    pub k_bound: f64,
    #[serde(rename = "L")]
    pub l_const: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OilReport {
    pub fit: FitResult,
    pub config: OilConfig,
    pub coefficients: LlrCoefficientsRecord,
    pub envelope: Option<EnvelopeAudit>,
    pub r_candidates: Option<Candidates1d>,
    pub r: Option<f64>,
    pub dt: Option<f64>,
    pub exits: ExitCounts,
    pub right_exit: RateEstimate,
    /// The statistic is identically zero.
    pub degenerate: bool,
    pub notes: Vec<String>,
    pub outcomes: Vec<RunOutcome>,
}

/// Builds the jump-test statistic from `(a, sigma_hat, nu)`, reads `r` off
/// the one-dimensional envelopes with the max rule, and counts exits of
/// `n_runs` simulated statistics from `[l, r]`.
pub fn run_oil_experiment(fit: &FitResult, cfg: &OilConfig) -> Result<OilReport> {
    ensure(fit.sigma_hat > 0.0, || "fit is degenerate: sigma_hat = 0".into())?;
    ensure(cfg.a >= 0.0 && cfg.a.is_finite(), || format!("a must be >= 0, got {}", cfg.a))?;
    ensure(cfg.alpha0 > 0.0 && cfg.alpha0 < 1.0, || format!("alpha0 must lie in (0, 1), got {}", cfg.alpha0))?;
    ensure(cfg.l < 0.0, || format!("l must be < 0, got {}", cfg.l))?;
    ensure(cfg.world <= 1, || format!("world must be 0 or 1, got {}", cfg.world))?;
    ensure(cfg.n_runs > 0, || "n_runs must be > 0".into())?;
    ensure(cfg.horizon > 0.0, || "horizon must be > 0".into())?;
    let params = JumpTestParams::new([cfg.a, cfg.a], [fit.sigma_hat, fit.sigma_hat], cfg.nu.clone())?
        .with_kernel_mode(cfg.kernel_mode);
    let i = index_for_world(cfg.world);
    let coeffs = jump_llr_coefficients(&params, 0, i, &cfg.quad)?;
    let target = cfg.wiring.target(cfg.alpha0);
    let mut notes = Vec::new();
    let degenerate = coeffs.beta == 0.0 && coeffs.gamma == 0.0 && coeffs.kernel.is_zero();
    if degenerate {
        notes.push("statistic is identically zero: no run can decide".into());
        return Ok(OilReport {
            fit: fit.clone(),
            config: cfg.clone(),
            coefficients: coeffs.record(),
            envelope: None,
            r_candidates: None,
            r: None,
            dt: None,
            exits: ExitCounts { right: 0, left: 0, none: cfg.n_runs },
            right_exit: RateEstimate::from_counts(0, cfg.n_runs),
            degenerate,
            notes,
            outcomes: (0..cfg.n_runs).map(|run| RunOutcome { run, side: "none", tau: None }).collect(),
        });
    }
    let env = Envelope1d::from_coefficients(&coeffs, 1, 0, cfg.k_bound, &cfg.quad)?;
    let cands = rectangle_from_envelopes_1d(&env, cfg.l, target, &cfg.scan)?;
    for (name, s) in [("upper", cands.upper), ("lower", cands.lower)] {
        if s.root().is_none() {
            notes.push(format!("{name} envelope has no root: {}", s.label()));
        }
    }
    if cands.upper_continued {
        notes.push("upper envelope uses the sin-ratio continuation".into());
    }
    let r = cands.r;
    let chars = jump_llr_characteristics(&coeffs, i)?;
    let law = chars.prepare(&cfg.quad)?;
    let dt = cfg.dt.unwrap_or_else(|| {
        let w = r - cfg.l;
        1e-3 * w * w / chars.diffusion_var.max(1e-300)
    });
    ensure(dt > 0.0 && dt.is_finite(), || format!("dt must be > 0, got {dt}"))?;
    let outcomes: Vec<RunOutcome> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let rng = stream_rng(cfg.seed, path_stream(run as u64, 0));
            match simulate_exit(&law, cfg.l, r, dt, cfg.horizon, rng) {
                Some(e) => RunOutcome {
                    run,
                    side: match e.side {
                        ExitSide::Right => "right",
                        ExitSide::Left => "left",
                    },
                    tau: Some(e.tau),
                },
                None => RunOutcome { run, side: "none", tau: None },
            }
        })
        .collect();
    let count = |s: &str| outcomes.iter().filter(|o| o.side == s).count();
    let exits = ExitCounts { right: count("right"), left: count("left"), none: count("none") };
    if exits.none > 0 {
        notes.push(format!("{} runs censored at horizon {}", exits.none, cfg.horizon));
    }
    Ok(OilReport {
        fit: fit.clone(),
        config: cfg.clone(),
        coefficients: coeffs.record(),
        envelope: Some(EnvelopeAudit {
            b: env.b(),
            c: env.c,
            m_mass: env.m_mass,
            k_bound: env.k_bound,
            l_const: env.l_const,
            target,
        }),
        r_candidates: Some(cands),
        r: Some(r),
        dt: Some(dt),
        exits,
        right_exit: RateEstimate::from_counts(exits.right, cfg.n_runs),
        degenerate,
        notes,
        outcomes,
    })
}

/// Re-simulates the runs of `report` and writes `run,time,value,is_jump`.
pub fn write_oil_paths<W: Write>(fit: &FitResult, cfg: &OilConfig, report: &OilReport, mut w: W) -> Result<()> {
    writeln!(w, "run,time,value,is_jump")?;
    let (Some(r), Some(dt)) = (report.r, report.dt) else {
        return Ok(());
    };
    let params = JumpTestParams::new([cfg.a, cfg.a], [fit.sigma_hat, fit.sigma_hat], cfg.nu.clone())?
        .with_kernel_mode(cfg.kernel_mode);
    let i = index_for_world(cfg.world);
    let law = jump_llr_characteristics(&jump_llr_coefficients(&params, 0, i, &cfg.quad)?, i)?.prepare(&cfg.quad)?;
    for run in 0..cfg.n_runs {
        let rng = stream_rng(cfg.seed, path_stream(run as u64, 0));
        let (_, path) = trace_exit(&law, cfg.l, r, dt, cfg.horizon, rng);
        for k in 0..path.len() {
            writeln!(w, "{run},{},{},{}", num(path.times[k]), num(path.values[k]), u8::from(path.is_jump(k)))?;
        }
    }
    Ok(())
}

/// Envelope candidates only, without simulation.
pub fn oil_candidates(fit: &FitResult, cfg: &OilConfig) -> Result<Candidates1d> {
    let params = JumpTestParams::new([cfg.a, cfg.a], [fit.sigma_hat, fit.sigma_hat], cfg.nu.clone())?
        .with_kernel_mode(cfg.kernel_mode);
    let coeffs = jump_llr_coefficients(&params, 0, index_for_world(cfg.world), &cfg.quad)?;
    let env = Envelope1d::from_coefficients(&coeffs, 1, 0, cfg.k_bound, &cfg.quad)?;
    rectangle_from_envelopes_1d(&env, cfg.l, cfg.wiring.target(cfg.alpha0), &cfg.scan)
}

/// Exponential `nu` fitted so that the candidate pair matches `targets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intensity: f64,
    pub scale: f64,
    /// `(max - t_max)^2 + (min - t_min)^2`.
    pub residual: f64,
    pub candidates: [f64; 2],
}

fn pair_residual(fit: &FitResult, cfg: &OilConfig, intensity: f64, scale: f64, targets: [f64; 2]) -> Option<(f64, [f64; 2])> {
    let c = OilConfig { nu: JumpMeasureSpec::exponential(intensity, scale), ..cfg.clone() };
    let cand = oil_candidates(fit, &c).ok()?;
    let (u, l) = (cand.upper.root()?, cand.lower.root()?);
    let (hi, lo) = (u.max(l), u.min(l));
    Some(((hi - targets[0]).powi(2) + (lo - targets[1]).powi(2), [hi, lo]))
}

/// Log-grid search over `(intensity, scale)` followed by shrinking local
/// grids around the five best grid points.
pub fn calibrate_exponential_nu(fit: &FitResult, cfg: &OilConfig, targets: [f64; 2]) -> Result<Calibration> {
    let cfg = OilConfig { scan: ScanOptions { cells: 800, ..cfg.scan }, ..cfg.clone() };
    let eval = |li: f64, ls: f64| {
        pair_residual(fit, &cfg, 10f64.powf(li), 10f64.powf(ls), targets).map(|(res, c)| (li, ls, res, c))
    };
    let grid: Vec<(f64, f64)> = (0..=70)
        .flat_map(|gi| (0..=50).map(move |gs| (-3.0 + 0.1 * gi as f64, -3.0 + 0.1 * gs as f64)))
        .collect();
    let mut coarse: Vec<(f64, f64, f64, [f64; 2])> = grid.par_iter().filter_map(|&(li, ls)| eval(li, ls)).collect();
    coarse.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut best: Option<(f64, f64, f64, [f64; 2])> = None;
    for start in coarse.into_iter().take(5) {
        let mut local = start;
        let mut step = 0.05;
        for _ in 0..16 {
            for di in -2..=2 {
                for ds in -2..=2 {
                    if let Some(c) = eval(local.0 + step * di as f64, local.1 + step * ds as f64) {
                        if c.2 < local.2 {
                            local = c;
                        }
                    }
                }
            }
            step *= 0.5;
        }
        if best.is_none_or(|b| local.2 < b.2) {
            best = Some(local);
        }
    }
    let (li, ls, residual, candidates) =
        best.ok_or_else(|| Error::Infeasible("no exponential measure yields both candidates".into()))?;
    Ok(Calibration { intensity: 10f64.powf(li), scale: 10f64.powf(ls), residual, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DEFAULT_SEED;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn bns(theta: f64, theta_prime: f64) -> BnsParams {
        BnsParams {
            mu: 0.01,
            beta: -0.5,
            rho: -0.3,
            lambda: 2.0,
            theta,
            theta_prime,
            sigma0_sq: 0.04,
            s0: 90.0,
            z_spec: JumpMeasureSpec::exponential(1.0, 0.05),
            zb_spec: JumpMeasureSpec::exponential(3.0, 0.02),
        }
    }

    #[test]
    fn validation() {
        assert!(bns(0.5, 0.5).validate().is_ok());
        assert!(BnsParams { rho: 0.1, ..bns(0.5, 0.5) }.validate().is_err());
        assert!(BnsParams { lambda: 0.0, ..bns(0.5, 0.5) }.validate().is_err());
        assert!(bns(1.2, 0.5).validate().is_err());
        let swapped = BnsParams { z_spec: bns(0.0, 0.0).zb_spec, zb_spec: bns(0.0, 0.0).z_spec, ..bns(0.5, 0.5) };
        assert!(swapped.validate().is_err());
    }

    #[test]
    fn unit_weights_reduce_to_classical() {
        let p = bns(1.0, 1.0);
        let a = simulate_bns(&p, 2.0, 0.01, 7).unwrap();
        let b = simulate_bns_classical(&p, 2.0, 0.01, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_jumps_gives_deterministic_variance() {
        let p = BnsParams {
            beta: 0.0,
            z_spec: JumpMeasureSpec::exponential(0.0, 1.0),
            zb_spec: JumpMeasureSpec::exponential(0.0, 1.0),
            ..bns(0.5, 0.5)
        };
        let out = simulate_bns(&p, 3.0, 0.001, 1).unwrap();
        let t = *out.times.last().unwrap();
        let exact = p.sigma0_sq * (-p.lambda * t).exp();
        assert!((out.variance.last().unwrap() - exact).abs() < 1e-10);
        assert!((out.price[0] - 90.0).abs() < 1e-12);
    }

    #[test]
    fn variance_stays_positive() {
        let out = simulate_bns(&bns(0.3, 0.7), 5.0, 0.01, 3).unwrap();
        assert!(out.variance.iter().all(|v| *v > 0.0));
        assert!(out.price.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn mean_terminal_variance_matches_moment_equation() {
        let p = bns(0.4, 0.3);
        let t = 1.5;
        let sims = simulate_bns_terminal(&p, t, 0.01, 10_000, DEFAULT_SEED).unwrap();
        let v: Vec<f64> = sims.iter().map(|s| s.0).collect();
        let est = MeanEstimate::from_samples(&v);
        let exact = p.mean_variance(t, &q()).unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.se, "{} vs {exact} (se {})", est.mean, est.se);
    }

    #[test]
    fn price_parsing_examples() {
        let s = read_prices("date,close\n2020-01-02,50\n2020-01-03,50\n".as_bytes()).unwrap();
        assert_eq!(s.log_returns(), vec![0.0]);
        let s = read_prices("date,close\n2020-01-02,100\n2020-01-03,110\n".as_bytes()).unwrap();
        assert!((s.log_returns()[0] - 1.1f64.ln()).abs() < 1e-15);
        assert!((s.log_returns()[0] - 0.095310).abs() < 1e-6);
        let shuffled = read_prices("date,close\n2020-01-03,110\n2020-01-02,100\n".as_bytes()).unwrap();
        assert_eq!(s, shuffled);
    }

    #[test]
    fn price_errors_carry_rows() {
        let cases = [
            ("date,close\n2020-01-02,100\n2020-01-03,-1\n", 3),
            ("date,close\n2020-01-02,100\n2020-01-02,101\n", 3),
            ("date,close\n2020-01-02,100\nnot-a-date,5\n", 3),
            ("date,close\n2020-01-02,abc\n", 2),
        ];
        for (text, row) in cases {
            match read_prices(text.as_bytes()) {
                Err(Error::Load { row: got, .. }) => assert_eq!(got, row, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(read_prices("day,price\n".as_bytes()), Err(Error::Load { row: 1, .. })));
    }

    fn series(prices: &[f64]) -> PriceSeries {
        let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        PriceSeries::new(
            prices
                .iter()
                .enumerate()
                .map(|(k, p)| (d0 + chrono::Days::new(k as u64), *p))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fit_examples() {
        let flat = series(&[80.0; 40]);
        let f = fit_parameters(&flat, ReturnConvention::PriceDifference).unwrap();
        assert_eq!((f.mu_hat, f.sigma_hat, f.degenerate), (0.0, 0.0, true));
        let line: Vec<f64> = (1..=40).map(|t| t as f64).collect();
        let f = fit_parameters(&series(&line), ReturnConvention::PriceDifference).unwrap();
        assert!((f.mu_hat - 1.0).abs() < 1e-12 && f.sigma_hat < 1e-12);
        assert!(matches!(
            fit_parameters(&series(&line[..20]), ReturnConvention::PriceDifference),
            Err(Error::Precondition(_))
        ));
        let f = fit_parameters(&series(&line), ReturnConvention::LogReturn).unwrap();
        assert!(f.mu_hat > 0.0 && f.sigma_hat > 0.0);
    }

    #[test]
    fn fit_recovers_random_walk() {
        let mut rng = stream_rng(11, 0);
        let mut p = vec![1000.0];
        for _ in 0..1200 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let last = *p.last().unwrap();
            p.push(last + 0.02 + 11.0 * z);
        }
        let f = fit_parameters(&series(&p), ReturnConvention::PriceDifference).unwrap();
        let n = 1200f64;
        assert!((f.mu_hat - 0.02).abs() < 3.0 * 11.0 / n.sqrt());
        assert!((f.sigma_hat - 11.0).abs() < 3.0 * 11.0 / (2.0 * n).sqrt());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = series(&[91.37, 92.0000001, 1.0 / 3.0, 88.5]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = read_prices(buf.as_slice()).unwrap();
        assert_eq!(s, back);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn heuristic_a_counts_large_moves() {
        let mut p = vec![100.0; 41];
        for (k, v) in p.iter_mut().enumerate() {
            *v += if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        p[20] = 130.0;
        let s = series(&p);
        let f = fit_parameters(&s, ReturnConvention::PriceDifference).unwrap();
        assert!(heuristic_a(&s, &f, 2.0).unwrap() > 2.0);
    }

    #[test]
    fn zero_a_never_decides() {
        let fit = FitResult::given(0.0238, 11.419).unwrap();
        let cfg = OilConfig { a: 0.0, ..Default::default() };
        let rep = run_oil_experiment(&fit, &cfg).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.exits, ExitCounts { right: 0, left: 0, none: 30 });
    }

    #[test]
    fn experiment_is_deterministic() {
        let fit = FitResult::given(0.0238, 11.419).unwrap();
        let cfg = OilConfig { a: 19.0, n_runs: 8, ..Default::default() };
        let a = run_oil_experiment(&fit, &cfg).unwrap();
        let b = run_oil_experiment(&fit, &cfg).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.exits.right + a.exits.left + a.exits.none, 8);
        let mut buf = Vec::new();
        write_oil_paths(&fit, &cfg, &a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for o in &a.outcomes {
            let last = text.lines().rfind(|l| l.starts_with(&format!("{},", o.run))).unwrap();
            let tau: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
            assert!((tau - o.tau.unwrap()).abs() <= 1e-9 * tau.max(1.0));
        }
        let c = a.r_candidates.unwrap();
        assert_eq!(Some(c.r), [c.upper.root(), c.lower.root()].into_iter().flatten().reduce(f64::max));
    }
}
