//! Adaptive 21-point Gauss-Kronrod quadrature on finite panels and on the
//! half line, with an `x = c/u` substitution for the tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Tolerance and panel limits for every quadrature in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of panels per adaptive call.
    pub max_panels: usize,
    /// Map `[c, inf)` with `x = c/u`. When off, `x = c + u/(1-u)` is used.
    pub tail_substitution: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_panels: 2000,
            tail_substitution: true,
        }
    }
}

impl QuadratureSpec {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || self.rel_tol < 0.0 || self.max_panels == 0 {
            return Err(Error::Parameter(format!(
                "quadrature tolerance must be > 0 (got abs_tol={}, rel_tol={})",
                self.abs_tol, self.rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut gauss = 0.0;
    let mut kronrod = fc * WGK[10];
    for j in 0..5 {
        let k = 2 * j + 1;
        let dx = half * XGK[k];
        let s = f(center - dx) + f(center + dx);
        gauss += WG[j] * s;
        kronrod += WGK[k] * s;
    }
    for j in 0..5 {
        let k = 2 * j;
        let dx = half * XGK[k];
        kronrod += WGK[k] * (f(center - dx) + f(center + dx));
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    Panel { a, b, value, err }
}

/// Integrate `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    integrate_with_tol(&f, a, b, spec, spec.abs_tol)
}

fn integrate_with_tol<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
    abs_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut panels = vec![gk21(f, a, b)];
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Integrability(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if err <= abs_tol.max(spec.rel_tol * total.abs()) {
            return Ok(total);
        }
        if panels.len() >= spec.max_panels {
            return Err(Error::Integrability(format!(
                "quadrature on [{a}, {b}] did not converge: error {err:e} after {} panels",
                panels.len()
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .expect("non-empty");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // panel cannot be split further in floating point
            return Err(Error::Integrability(format!(
                "quadrature panel [{}, {}] underflowed",
                p.a, p.b
            )));
        }
        panels.push(gk21(f, p.a, mid));
        panels.push(gk21(f, mid, p.b));
    }
}

/// Integrate `f` over `(0, upper)` (or `(0, inf)` when `upper` is `None`),
/// splitting at `breaks`. The point 1 is always a break; the last panel on an
/// unbounded domain goes through the tail substitution.
pub fn integrate_half_line<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    upper: Option<f64>,
    spec: &QuadratureSpec,
) -> Result<f64> {
    spec.validate()?;
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .chain(std::iter::once(1.0))
        .filter(|&b| b > 0.0 && b.is_finite() && upper.is_none_or(|u| b < u))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(0.0);
    edges.extend(cuts);
    if let Some(u) = upper {
        if u <= 0.0 {
            return Ok(0.0);
        }
        edges.push(u);
    }
    let pieces = edges.len();
    let tol = spec.abs_tol / pieces as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += integrate_with_tol(&f, w[0], w[1], spec, tol)?;
    }
    if upper.is_none() {
        let c = *edges.last().expect("non-empty");
        let tail = if spec.tail_substitution {
            integrate_with_tol(
                &|u: f64| {
                    let x = c / u;
                    f(x) * c / (u * u)
                },
                0.0,
                1.0,
                spec,
                tol,
            )?
        } else {
            integrate_with_tol(
                &|u: f64| {
                    let s = 1.0 - u;
                    f(c + u / s) / (s * s)
                },
                0.0,
                1.0,
                spec,
                tol,
            )?
        };
        total += tail;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let spec = QuadratureSpec::default();
        let v = integrate(|x| x.powi(7) - 3.0 * x * x, 0.0, 2.0, &spec).unwrap();
        assert!((v - (32.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn exponential_half_line() {
        let spec = QuadratureSpec::default();
        let v = integrate_half_line(|x| x * (-x).exp(), &[], None, &spec).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        let spec_alt = QuadratureSpec {
            tail_substitution: false,
            ..spec
        };
        let v = integrate_half_line(|x| x * (-x).exp(), &[], None, &spec_alt).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kink_at_one() {
        let spec = QuadratureSpec::default();
        let v = integrate_half_line(|x| x.min(1.0) * (-x).exp(), &[], None, &spec).unwrap();
        // int_0^1 x e^-x + int_1^inf e^-x = 1 - 2/e + 1/e
        assert!((v - (1.0 - 1.0 / std::f64::consts::E)).abs() < 1e-10);
    }

    #[test]
    fn divergent_integral_is_reported() {
        let spec = QuadratureSpec::default();
        let err = integrate_half_line(|x| 1.0 / x, &[], None, &spec).unwrap_err();
        assert!(matches!(err, Error::Integrability(_)));
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let spec = QuadratureSpec::with_abs_tol(0.0);
        assert!(integrate_half_line(|x| x, &[], Some(1.0), &spec).is_err());
    }
}
