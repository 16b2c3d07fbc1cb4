//! Subcommands behind the `levy-sprt` binary. Each command reads a
//! [`Config`], renders its outputs in memory and writes them together with a
//! `manifest.json` that echoes the resolved configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::decision::{monte_carlo_operating_stats, parse_world, McConfig, TestSpec};
use crate::error::{Error, Result};
use crate::format::{num, round_json};
use crate::levy_sim::{simulate_compound_poisson, simulate_levy2d, simulate_levy_1d, JumpLaw, LevyCharacteristics};
use crate::likelihood::{jump_llr_coefficients, DriftTestParams, JumpTestParams};
use crate::market::{
    calibrate_exponential_nu, fit_parameters, load_prices, run_oil_experiment, simulate_bns, simulate_bns_classical,
    write_oil_paths, AlphaWiring, BnsParams, FitResult, OilConfig, ReturnConvention,
};
use crate::measure::{JumpMeasureSpec, KernelMode};
use crate::quadrature::QuadratureSpec;
use crate::rng::{stream_rng, DEFAULT_SEED};
use crate::supersub::{check_grid, envelope_pide_sign_check, write_grid_csv, EnvelopeParams, KBoundOptions};
use crate::thresholds::{solve_rectangle, symmetric_rectangle, ErrorSpec, Rectangle, RectangleReport, ThresholdVariant};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LEVY_SPRT_OUT_DIR";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Thresholds,
    Montecarlo,
    Envelopes,
    Oil,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Thresholds => "thresholds",
            Command::Montecarlo => "montecarlo",
            Command::Envelopes => "envelopes",
            Command::Oil => "oil",
        }
    }
}

/// Output directory from the flag, then the environment, then `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Rendered files plus manifest flags.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub flags: BTreeMap<String, Value>,
}

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        round_json(&mut v);
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    fn csv(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub flags: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Formats {
    json: bool,
    csv: bool,
}

fn formats(cfg: &Config) -> Result<Formats> {
    let list: Vec<String> = cfg.get_list("formats", "json,csv")?;
    let mut f = Formats { json: false, csv: false };
    for s in list {
        match s.as_str() {
            "json" => f.json = true,
            "csv" => f.csv = true,
            other => return Err(Error::Config(format!("unknown format {other:?} (json, csv)"))),
        }
    }
    if !(f.json || f.csv) {
        return Err(Error::Config("formats must name json or csv".into()));
    }
    Ok(f)
}

/// Runs `command`, then writes its outputs and manifest into `out_dir`.
pub fn run(command: Command, cfg: &Config, out_dir: &Path) -> Result<Manifest> {
    let outputs = execute(command, cfg)?;
    cfg.reject_unused()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        config: cfg.resolved(),
        outputs: outputs.files.iter().map(|f| f.0.clone()).collect(),
        flags: outputs.flags.clone(),
    };
    std::fs::create_dir_all(out_dir)?;
    for (name, bytes) in &outputs.files {
        std::fs::write(out_dir.join(name), bytes)?;
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out_dir.join(MANIFEST), text)?;
    Ok(manifest)
}

/// Re-runs the command recorded in a manifest.
pub fn rerun(manifest: &Manifest, out_dir: &Path) -> Result<Manifest> {
    let cfg = Config::from_map(manifest.config.clone());
    run(manifest.command, &cfg, out_dir)
}

pub fn execute(command: Command, cfg: &Config) -> Result<Outputs> {
    match command {
        Command::Simulate => cmd_simulate(cfg),
        Command::Thresholds => cmd_thresholds(cfg),
        Command::Montecarlo => cmd_montecarlo(cfg),
        Command::Envelopes => cmd_envelopes(cfg),
        Command::Oil => cmd_oil(cfg),
    }
}

fn seed(cfg: &Config) -> Result<u64> {
    cfg.get_or("seed", DEFAULT_SEED)
}

fn measure(cfg: &Config, prefix: &str, intensity: f64, scale: f64) -> Result<JumpMeasureSpec> {
    let kind = cfg.get_str(&format!("{prefix}.kind"), "exponential");
    let intensity = cfg.get_or(&format!("{prefix}.intensity"), intensity)?;
    let spec = match kind.as_str() {
        "exponential" => JumpMeasureSpec::exponential(intensity, cfg.get_or(&format!("{prefix}.scale"), scale)?),
        "point_mass" => JumpMeasureSpec::near_point_mass(
            intensity,
            cfg.require(&format!("{prefix}.at"))?,
            cfg.get_or(&format!("{prefix}.half_width"), 1e-3)?,
        )?,
        other => return Err(Error::Config(format!("{prefix}.kind must be exponential or point_mass, got {other:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn kernel_mode(cfg: &Config) -> Result<KernelMode> {
    match cfg.get_str("kernel_mode", "density_tilt").as_str() {
        "density_tilt" => Ok(KernelMode::DensityTilt),
        "pushforward" => Ok(KernelMode::Pushforward),
        other => Err(Error::Config(format!("kernel_mode must be density_tilt or pushforward, got {other:?}"))),
    }
}

fn jump_test(cfg: &Config) -> Result<JumpTestParams> {
    let a = [cfg.get_or("a1", 1.0)?, cfg.get_or("a2", 1.0)?];
    let sigma = [cfg.get_or("sigma1", 1.0)?, cfg.get_or("sigma2", 1.0)?];
    Ok(JumpTestParams::new(a, sigma, measure(cfg, "nu", 1.0, 1.0)?)?.with_kernel_mode(kernel_mode(cfg)?))
}

fn quad(cfg: &Config) -> Result<QuadratureSpec> {
    let q = QuadratureSpec::with_abs_tol(cfg.get_or("quad.abs_tol", QuadratureSpec::default().abs_tol)?);
    q.validate()?;
    Ok(q)
}

fn cmd_simulate(cfg: &Config) -> Result<Outputs> {
    let process = cfg.get_str("process", "bm");
    let seed = seed(cfg)?;
    let horizon: f64 = cfg.get_or("horizon", 1.0)?;
    let mut out = Outputs::default();
    formats(cfg)?;
    match process.as_str() {
        "bm" | "levy" => {
            let dt: f64 = cfg.get_or("dt", 1e-3)?;
            let drift: f64 = cfg.get_or("drift", 0.0)?;
            let vol: f64 = cfg.get_or("vol", 1.0)?;
            let jumps = if process == "levy" {
                JumpLaw::Measure { spec: measure(cfg, "nu", 1.0, 1.0)? }
            } else {
                JumpLaw::None
            };
            let ch = LevyCharacteristics::new(drift, vol * vol, jumps, 1.0)?;
            let law = ch.prepare(&quad(cfg)?)?;
            let path = simulate_levy_1d(&law, 0.0, horizon, dt, stream_rng(seed, 0))?;
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            out.csv("path.csv", buf);
        }
        "compound_poisson" => {
            let path = simulate_compound_poisson(&measure(cfg, "nu", 1.0, 1.0)?, horizon, seed)?;
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            out.csv("path.csv", buf);
        }
        "levy2d" => {
            let dt: f64 = cfg.get_or("dt", 1e-3)?;
            let mu = [cfg.get_or("mu1", 0.0)?, cfg.get_or("mu2", 0.0)?];
            let s12: f64 = cfg.get_or("sigma12", 0.0)?;
            let sigma = [[cfg.get_or("sigma11", 1.0)?, s12], [s12, cfg.get_or("sigma22", 1.0)?]];
            let n1 = measure(cfg, "nu1", 1.0, 1.0)?;
            let n2 = measure(cfg, "nu2", 1.0, 1.0)?;
            let path = simulate_levy2d(mu, sigma, [&n1, &n2], horizon, dt, seed)?;
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            out.csv("path2d.csv", buf);
        }
        "bns" | "bns_classical" => {
            let dt: f64 = cfg.get_or("dt", 1e-3)?;
            let p = BnsParams {
                mu: cfg.get_or("mu", 0.0)?,
                beta: cfg.get_or("beta", 0.0)?,
                rho: cfg.get_or("rho", -0.1)?,
                lambda: cfg.get_or("lambda", 1.0)?,
                theta: cfg.get_or("theta", 0.5)?,
                theta_prime: cfg.get_or("theta_prime", 0.5)?,
                sigma0_sq: cfg.get_or("sigma0_sq", 0.04)?,
                s0: cfg.get_or("s0", 100.0)?,
                z_spec: measure(cfg, "z", 1.0, 0.05)?,
                zb_spec: measure(cfg, "zb", 5.0, 0.01)?,
            };
            let path = if process == "bns" {
                simulate_bns(&p, horizon, dt, seed)?
            } else {
                simulate_bns_classical(&p, horizon, dt, seed)?
            };
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            out.csv("bns.csv", buf);
        }
        other => {
            return Err(Error::Config(format!(
                "process must be bm, levy, compound_poisson, levy2d, bns or bns_classical, got {other:?}"
            )))
        }
    }
    Ok(out)
}

fn variant(cfg: &Config) -> Result<ThresholdVariant> {
    match cfg.get_str("variant", "printed").as_str() {
        "printed" => Ok(ThresholdVariant::Printed),
        "corrected" => Ok(ThresholdVariant::Corrected),
        other => Err(Error::Config(format!("variant must be printed or corrected, got {other:?}"))),
    }
}

fn cmd_thresholds(cfg: &Config) -> Result<Outputs> {
    let fmt = formats(cfg)?;
    let mut out = Outputs::default();
    match cfg.get_str("mode", "symmetric").as_str() {
        "symmetric" => {
            let alphas: Vec<f64> = cfg.get_list("alpha", "0.05")?;
            if alphas.is_empty() {
                return Err(Error::Config("alpha list is empty".into()));
            }
            let rows: Vec<(f64, Rectangle)> = alphas
                .iter()
                .map(|&a| symmetric_rectangle(a).map(|r| (a, r)))
                .collect::<Result<_>>()?;
            let mut sorted = rows.clone();
            sorted.sort_by(|x, y| y.0.total_cmp(&x.0));
            let monotone = sorted.windows(2).all(|w| w[1].1.r1 > w[0].1.r1);
            out.flags.insert("monotone_in_alpha".into(), json!(monotone));
            if fmt.json {
                let table: Vec<Value> =
                    rows.iter().map(|(a, r)| json!({"alpha": a, "l1": r.l1, "r1": r.r1, "l2": r.l2, "r2": r.r2})).collect();
                out.json("thresholds.json", &json!({"mode": "symmetric", "rectangles": table, "monotone_in_alpha": monotone}))?;
            }
            if fmt.csv {
                let mut text = String::from("alpha,l1,r1,l2,r2\n");
                for (a, r) in &rows {
                    text += &format!("{},{},{},{},{}\n", num(*a), num(r.l1), num(r.r1), num(r.l2), num(r.r2));
                }
                out.csv("thresholds.csv", text.into_bytes());
            }
        }
        "system" => {
            let a00: f64 = cfg.require("alpha00")?;
            let a01: f64 = cfg.require("alpha01")?;
            let a10: f64 = cfg.require("alpha10")?;
            let errors = match cfg.get_opt::<f64>("alpha11")? {
                Some(a11) => ErrorSpec::new(a00, a01, a10, a11)?,
                None => ErrorSpec::from_three(a00, a01, a10)?,
            };
            let l1: f64 = cfg.require("l1")?;
            let v = variant(cfg)?;
            let rect = solve_rectangle(&errors, l1, v)?;
            let report = RectangleReport::new(&errors, &rect, v);
            if fmt.json {
                out.json("thresholds.json", &report)?;
            }
            if fmt.csv {
                let text = format!(
                    "l1,r1,l2,r2,alpha00,alpha01,alpha10,alpha11\n{},{},{},{},{},{},{},{}\n",
                    num(rect.l1),
                    num(rect.r1),
                    num(rect.l2),
                    num(rect.r2),
                    num(errors.alpha_00),
                    num(errors.alpha_01),
                    num(errors.alpha_10),
                    num(errors.alpha_11)
                );
                out.csv("thresholds.csv", text.into_bytes());
            }
        }
        other => return Err(Error::Config(format!("mode must be symmetric or system, got {other:?}"))),
    }
    Ok(out)
}

fn test_spec(cfg: &Config) -> Result<TestSpec> {
    match cfg.get_str("test", "drift").as_str() {
        "drift" => Ok(TestSpec::Drift {
            params: DriftTestParams::new(
                [cfg.get_or("m1", 1.0)?, cfg.get_or("m2", 1.0)?],
                [cfg.get_or("sigma1", 1.0)?, cfg.get_or("sigma2", 1.0)?],
            )?,
        }),
        "jump" => Ok(TestSpec::Jump { params: jump_test(cfg)? }),
        other => Err(Error::Config(format!("test must be drift or jump, got {other:?}"))),
    }
}

fn rectangle(cfg: &Config, alpha: f64) -> Result<Rectangle> {
    let sym = symmetric_rectangle(alpha)?;
    Rectangle::new(
        cfg.get_or("l1", sym.l1)?,
        cfg.get_or("r1", sym.r1)?,
        cfg.get_or("l2", sym.l2)?,
        cfg.get_or("r2", sym.r2)?,
    )
}

fn cmd_montecarlo(cfg: &Config) -> Result<Outputs> {
    let fmt = formats(cfg)?;
    let world = parse_world(&cfg.get_str("world", "00"))?;
    let test = test_spec(cfg)?;
    let alpha: f64 = cfg.get_or("alpha", 0.05)?;
    let rect = rectangle(cfg, alpha)?;
    let n_paths: usize = cfg.get_or("n_paths", 20_000)?;
    let dt: Option<f64> = cfg.get_opt("dt")?;
    let horizon: f64 = cfg.get_or("horizon", 100.0)?;
    let seed = seed(cfg)?;
    let quad = quad(cfg)?;
    let gap_levels: Vec<f64> = cfg.get_list("gap_levels", "")?;
    let mc = McConfig { world, test: test.clone(), rect, n_paths, dt, horizon, seed, quad };
    let stats = monte_carlo_operating_stats(&mc)?;
    let mut out = Outputs::default();
    if fmt.json {
        out.json("stats.json", &json!({"rect": rect, "stats": stats}))?;
    }
    if fmt.csv {
        let text = format!(
            "world,n_paths,dt,alpha_hat,alpha_se,mean_tau,mean_tau_se,gap,gap_se,no_decision\n{},{},{},{},{},{},{},{},{},{}\n",
            stats.world,
            stats.n_paths,
            num(stats.dt),
            num(stats.alpha_hat.p),
            num(stats.alpha_hat.se),
            num(stats.mean_tau.mean),
            num(stats.mean_tau.se),
            num(stats.gap.mean),
            num(stats.gap.se),
            num(stats.no_decision.p)
        );
        out.csv("stats.csv", text.into_bytes());
    }
    if !gap_levels.is_empty() {
        let mut rows = Vec::new();
        for &a in &gap_levels {
            let rect = symmetric_rectangle(a)?;
            let s = monte_carlo_operating_stats(&McConfig { rect, ..mc.clone() })?;
            rows.push((a, s));
        }
        let mut by_alpha = rows.iter().map(|(a, s)| (*a, s.gap)).collect::<Vec<_>>();
        by_alpha.sort_by(|x, y| y.0.total_cmp(&x.0));
        let decreasing = by_alpha.windows(2).all(|w| w[1].1.mean < w[0].1.mean);
        let separated = by_alpha.windows(2).all(|w| w[1].1.mean + w[1].1.se < w[0].1.mean - w[0].1.se);
        out.flags.insert("gap_decreasing".into(), json!(decreasing));
        out.flags.insert("gap_bands_separated".into(), json!(separated));
        let mut text = String::from("alpha,gap,gap_se,mean_tau,mean_tau1\n");
        for (a, s) in &rows {
            text += &format!(
                "{},{},{},{},{}\n",
                num(*a),
                num(s.gap.mean),
                num(s.gap.se),
                num(s.mean_tau.mean),
                num(s.mean_tau1.mean)
            );
        }
        out.csv("gap.csv", text.into_bytes());
    }
    Ok(out)
}

fn cmd_envelopes(cfg: &Config) -> Result<Outputs> {
    let fmt = formats(cfg)?;
    let quad = quad(cfg)?;
    let params = jump_test(cfg)?;
    let rect = Rectangle::new(
        cfg.get_or("l1", -1.0)?,
        cfg.get_or("r1", 1.0)?,
        cfg.get_or("l2", -1.0)?,
        cfg.get_or("r2", 1.0)?,
    )?;
    let grid_n: usize = cfg.get_or("grid_n", 64)?;
    if grid_n < 2 {
        return Err(Error::Config(format!("grid_n must be >= 2, got {grid_n}")));
    }
    let l_const: Option<f64> = cfg.get_opt("l_const")?;
    let kopts = KBoundOptions { override_value: cfg.get_opt("k_bound")?, seed: seed(cfg)?, ..Default::default() };
    let sweep: Vec<f64> = cfg.get_list("l_sweep", "1e-6,1e-3,1e-1")?;
    let sign_grid: usize = cfg.get_or("sign_check_grid", 0)?;
    let c1 = jump_llr_coefficients(&params, 0, 0, &quad)?;
    let c2 = jump_llr_coefficients(&params, 1, 0, &quad)?;
    let mut worlds = Vec::new();
    let mut any_continued = false;
    let mut all_monotone = true;
    let mut out = Outputs::default();
    for world in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
        let mut p = EnvelopeParams::from_coefficients([&c1, &c2], rect, world, &kopts, &quad)?;
        if let Some(l) = l_const {
            p = p.with_l_const(l);
        }
        let check = check_grid(&p, grid_n);
        any_continued |= check.upper_continued || check.lower_continued;
        let gaps: Vec<f64> = sweep.iter().map(|&l| check_grid(&p.clone().with_l_const(l), grid_n).gap_sup).collect();
        let mut order: Vec<(f64, f64)> = sweep.iter().copied().zip(gaps.iter().copied()).collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0));
        let monotone = order.windows(2).all(|w| w[1].1 >= w[0].1);
        all_monotone &= monotone;
        let signs = if sign_grid == 0 {
            Value::Null
        } else if check.ordered(0.0) {
            serde_json::to_value(envelope_pide_sign_check(&p, sign_grid, &quad)?)?
        } else {
            json!({"skipped": "envelopes are not ordered on the grid"})
        };
        let label = format!("{}{}", world.0, world.1);
        if fmt.csv {
            let mut buf = Vec::new();
            write_grid_csv(&p, grid_n, &mut buf)?;
            out.csv(&format!("envelope_{label}.csv"), buf);
        }
        worlds.push(json!({
            "world": label,
            "B": p.b(),
            "C": p.c,
            "M": p.m_mass,
            "K_bound": p.k_bound,
            "L": p.l_const,
            "check": check,
            "l_sweep": sweep.iter().zip(&gaps).map(|(l, g)| json!({"L": l, "gap_sup": g})).collect::<Vec<_>>(),
            "gap_monotone": monotone,
            "sign_check": signs,
        }));
    }
    out.flags.insert("continuation".into(), json!(any_continued));
    out.flags.insert("gap_monotone".into(), json!(all_monotone));
    if fmt.json {
        out.json("envelopes.json", &json!({"rect": rect, "grid_n": grid_n, "worlds": worlds}))?;
    }
    Ok(out)
}

fn cmd_oil(cfg: &Config) -> Result<Outputs> {
    let fmt = formats(cfg)?;
    let convention = match cfg.get_str("convention", "price_difference").as_str() {
        "price_difference" => ReturnConvention::PriceDifference,
        "log_return" => ReturnConvention::LogReturn,
        other => return Err(Error::Config(format!("convention must be price_difference or log_return, got {other:?}"))),
    };
    let prices = cfg.get_str("prices", "");
    let fit = if prices.is_empty() {
        FitResult::given(cfg.require("mu")?, cfg.require("sigma")?)?
    } else {
        fit_parameters(&load_prices(Path::new(&prices))?, convention)?
    };
    let wiring = match cfg.get_str("wiring", "error").as_str() {
        "error" => AlphaWiring::Error,
        "confidence" => AlphaWiring::Confidence,
        other => return Err(Error::Config(format!("wiring must be error or confidence, got {other:?}"))),
    };
    let defaults = OilConfig::default();
    let oil = OilConfig {
        a: cfg.require("a")?,
        alpha0: cfg.get_or("alpha0", defaults.alpha0)?,
        l: cfg.get_or("l", defaults.l)?,
        n_runs: cfg.get_or("n_runs", defaults.n_runs)?,
        horizon: cfg.get_or("horizon", defaults.horizon)?,
        dt: cfg.get_opt("dt")?,
        seed: seed(cfg)?,
        nu: measure(cfg, "nu", 1.0, 1.0)?,
        kernel_mode: kernel_mode(cfg)?,
        k_bound: cfg.get_or("k_bound", defaults.k_bound)?,
        wiring,
        world: cfg.get_or("world", defaults.world)?,
        scan: defaults.scan,
        quad: quad(cfg)?,
    };
    let targets: Vec<f64> = cfg.get_list("calibrate_targets", "")?;
    let write_paths: bool = cfg.get_or("paths", false)?;
    let report = run_oil_experiment(&fit, &oil)?;
    let mut out = Outputs::default();
    let calibration = match targets.as_slice() {
        [] => None,
        [hi, lo] => Some(calibrate_exponential_nu(&fit, &oil, [*hi, *lo])?),
        _ => return Err(Error::Config("calibrate_targets needs two values".into())),
    };
    out.flags.insert("degenerate".into(), json!(report.degenerate));
    if fmt.json {
        out.json(
            "oil.json",
            &json!({
                "fit": report.fit,
                "coefficients": report.coefficients,
                "envelope": report.envelope,
                "r_candidates": report.r_candidates,
                "r": report.r,
                "dt": report.dt,
                "exits": report.exits,
                "right_exit": report.right_exit,
                "degenerate": report.degenerate,
                "notes": report.notes,
                "outcomes": report.outcomes,
                "calibration": calibration,
                "seed": oil.seed,
            }),
        )?;
    }
    if fmt.csv {
        let mut text = String::from("run,side,tau\n");
        for o in &report.outcomes {
            text += &format!("{},{},{}\n", o.run, o.side, o.tau.map_or_else(String::new, num));
        }
        out.csv("oil_runs.csv", text.into_bytes());
    }
    if write_paths {
        let mut buf = Vec::new();
        write_oil_paths(&fit, &oil, &report, &mut buf)?;
        out.csv("oil_paths.csv", buf);
    }
    Ok(out)
}
