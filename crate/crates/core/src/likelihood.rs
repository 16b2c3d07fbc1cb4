//! Log-likelihood-ratio characteristics for the drift test and the jump-size
//! test, one coordinate at a time.
//!
//! Index `i` is the hypothesis index used by the generator formulas. The statistic
//! `u = log dP1/dP0` simulated under true world `w` uses `i = 1 - w`; see
//! [`index_for_world`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::levy_sim::{JumpLaw, LevyCharacteristics, SamplePath};
use crate::measure::{JumpMeasureSpec, KernelMode, LlrJumpKernel};
use crate::quadrature::QuadratureSpec;

fn sign_pow(i: u8) -> f64 {
    if i.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn check_index(i: u8) -> Result<()> {
    ensure(i <= 1, || format!("hypothesis index must be 0 or 1, got {i}"))
}

/// Proof index producing `log dP1/dP0` under true world `w`.
pub fn index_for_world(w: u8) -> u8 {
    1 - w.min(1)
}

/// Which sign is put on first-order drift terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `(-1)^i` as in the characteristics of the proofs.
    #[default]
    Proof,
    /// `(-1)^(i+1)` as in the generator statements.
    Statement,
}

impl SignConvention {
    pub fn factor(self, i: u8) -> f64 {
        match self {
            SignConvention::Proof => sign_pow(i),
            SignConvention::Statement => -sign_pow(i),
        }
    }
}

/// Drift alternatives `m_k` and diffusion scales `sigma_k` for two coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftTestParams {
    pub m: [f64; 2],
    pub sigma: [f64; 2],
}

impl DriftTestParams {
    pub fn new(m: [f64; 2], sigma: [f64; 2]) -> Result<Self> {
        let p = Self { m, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..2 {
            ensure(self.sigma[k] > 0.0 && self.sigma[k].is_finite(), || {
                format!("sigma_{} must be > 0, got {}", k + 1, self.sigma[k])
            })?;
            ensure(self.m[k].is_finite(), || format!("m_{} must be finite", k + 1))?;
        }
        Ok(())
    }

    /// `m_k^2 / (2 sigma_k^2)`.
    pub fn half_snr(&self, k: usize) -> f64 {
        let r = self.m[k] / self.sigma[k];
        0.5 * r * r
    }
}

/// Drift `(-1)^i m^2/(2 sigma^2)`, diffusion `m^2/sigma^2`, no jumps.
pub fn drift_llr_characteristics(params: &DriftTestParams, k: usize, i: u8) -> Result<LevyCharacteristics> {
    drift_llr_characteristics_with(params, k, i, SignConvention::Proof)
}

pub fn drift_llr_characteristics_with(
    params: &DriftTestParams,
    k: usize,
    i: u8,
    convention: SignConvention,
) -> Result<LevyCharacteristics> {
    params.validate()?;
    check_index(i)?;
    ensure(k < 2, || format!("coordinate must be 0 or 1, got {k}"))?;
    let c = params.half_snr(k);
    LevyCharacteristics::diffusion(convention.factor(i) * c, 2.0 * c)
}

/// Drift-test statistic `log dP1/dP0` for coordinate `k` under true world `w`.
pub fn drift_llr_for_world(params: &DriftTestParams, k: usize, w: u8) -> Result<LevyCharacteristics> {
    drift_llr_characteristics(params, k, index_for_world(w))
}

/// Pathwise statistic `u_t = (m/sigma^2) z_t - m^2 t/(2 sigma^2)` from an
/// observation path started at 0.
pub fn drift_llr_from_observation(obs: &SamplePath, m: f64, sigma: f64) -> Result<SamplePath> {
    ensure(sigma > 0.0 && sigma.is_finite(), || format!("sigma must be > 0, got {sigma}"))?;
    let s2 = sigma * sigma;
    let z0 = obs.start();
    let values = obs
        .times
        .iter()
        .zip(&obs.values)
        .map(|(t, z)| (m / s2) * (z - z0) - m * m / (2.0 * s2) * t)
        .collect();
    Ok(SamplePath {
        times: obs.times.clone(),
        values,
        dt: obs.dt,
        jump_indices: obs.jump_indices.clone(),
    })
}

/// Tilt alternatives `a_k`, diffusion scales and the shared base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTestParams {
    pub a: [f64; 2],
    pub sigma: [f64; 2],
    pub nu: [JumpMeasureSpec; 2],
    #[serde(default)]
    pub kernel_mode: KernelMode,
}

impl JumpTestParams {
    /// Identical base measure on both coordinates.
    pub fn new(a: [f64; 2], sigma: [f64; 2], nu: JumpMeasureSpec) -> Result<Self> {
        Self::with_measures(a, sigma, [nu.clone(), nu])
    }

    pub fn with_measures(a: [f64; 2], sigma: [f64; 2], nu: [JumpMeasureSpec; 2]) -> Result<Self> {
        let p = Self {
            a,
            sigma,
            nu: [nu[0].untilted(), nu[1].untilted()],
            kernel_mode: KernelMode::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_kernel_mode(mut self, mode: KernelMode) -> Self {
        self.kernel_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..2 {
            ensure(self.a[k] >= 0.0 && self.a[k].is_finite(), || {
                format!("a_{} must be >= 0, got {}", k + 1, self.a[k])
            })?;
            ensure(self.sigma[k] > 0.0 && self.sigma[k].is_finite(), || {
                format!("sigma_{} must be > 0, got {}", k + 1, self.sigma[k])
            })?;
            self.nu[k].validate()?;
        }
        Ok(())
    }
}

/// Coefficients of one coordinate's jump-test statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrCoefficients {
    pub beta: f64,
    pub m: f64,
    pub gamma: f64,
    pub kernel: LlrJumpKernel,
    pub k_mass: f64,
    /// Jump sign `(-1)^(i+1)` for the index the record was built with.
    pub sign: f64,
}

/// Flat audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrCoefficientsRecord {
    pub beta: f64,
    pub m: f64,
    pub gamma: f64,
    #[serde(rename = "K_mass")]
    pub k_mass: f64,
    pub sign: f64,
}

impl LlrCoefficients {
    pub fn zero() -> Self {
        Self {
            beta: 0.0,
            m: 0.0,
            gamma: 0.0,
            kernel: LlrJumpKernel::zero(),
            k_mass: 0.0,
            sign: 1.0,
        }
    }

    pub fn record(&self) -> LlrCoefficientsRecord {
        LlrCoefficientsRecord {
            beta: self.beta,
            m: self.m,
            gamma: self.gamma,
            k_mass: self.k_mass,
            sign: self.sign,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.m.is_finite() && self.gamma.is_finite() && self.k_mass.is_finite()
    }
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integrability(format!("{name} integral diverges")))
    }
}

/// `beta`, `m`, `gamma` and `K` for coordinate `k` with index `i`.
pub fn jump_llr_coefficients(
    params: &JumpTestParams,
    k: usize,
    i: u8,
    quad: &QuadratureSpec,
) -> Result<LlrCoefficients> {
    params.validate()?;
    quad.validate()?;
    check_index(i)?;
    ensure(k < 2, || format!("coordinate must be 0 or 1, got {k}"))?;
    let a = params.a[k];
    let sigma = params.sigma[k];
    let nu = &params.nu[k];
    let sign = -sign_pow(i);
    if a == 0.0 || nu.intensity == 0.0 {
        return Ok(LlrCoefficients { sign, ..LlrCoefficients::zero() });
    }
    let beta = finite(
        "beta",
        -a * nu.integrate(|x| x.min(1.0) * x / sigma, quad)?,
    )?;
    let m = finite(
        "m",
        a * nu.integrate(|x| if x > 1.0 { x } else { 0.0 }, quad)?,
    )?;
    let correction = finite(
        "gamma",
        a * nu.integrate(
            |x| {
                if x <= 1.0 {
                    let l = x.ln_1p();
                    l * l - x
                } else {
                    0.0
                }
            },
            quad,
        )?,
    )?;
    let gamma = m - 0.5 * beta * beta + correction;
    let kernel = LlrJumpKernel::new(nu, a, params.kernel_mode);
    let k_mass = finite("K mass", kernel.mass(quad)?)?;
    Ok(LlrCoefficients {
        beta,
        m,
        gamma,
        kernel,
        k_mass,
        sign,
    })
}

/// Drift `(-1)^i gamma`, diffusion `beta^2`, jumps `(-1)^(i+1) K`.
pub fn jump_llr_characteristics(coeffs: &LlrCoefficients, i: u8) -> Result<LevyCharacteristics> {
    check_index(i)?;
    ensure(coeffs.is_finite(), || "coefficients must be finite".into())?;
    let jumps = if coeffs.kernel.is_zero() {
        JumpLaw::None
    } else {
        JumpLaw::Kernel {
            kernel: coeffs.kernel.clone(),
        }
    };
    LevyCharacteristics::new(
        sign_pow(i) * coeffs.gamma,
        coeffs.beta * coeffs.beta,
        jumps,
        -sign_pow(i),
    )
}

/// Jump-test statistic for coordinate `k` under true world `w`.
pub fn jump_llr_for_world(
    params: &JumpTestParams,
    k: usize,
    w: u8,
    quad: &QuadratureSpec,
) -> Result<LevyCharacteristics> {
    let i = index_for_world(w);
    let c = jump_llr_coefficients(params, k, i, quad)?;
    jump_llr_characteristics(&c, i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_sim::simulate_levy_1d;
    use crate::rng::stream_rng;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn drift_characteristics_examples() {
        let p = DriftTestParams::new([1.0, 2.0], [1.0, 1.0]).unwrap();
        let c = drift_llr_characteristics(&p, 0, 1).unwrap();
        assert_eq!(c.drift, -0.5);
        assert_eq!(c.diffusion_var, 1.0);
        let c = drift_llr_characteristics(&p, 1, 0).unwrap();
        assert_eq!(c.drift, 2.0);
        assert_eq!(c.diffusion_var, 4.0);
        assert!(matches!(c.jumps, JumpLaw::None));
    }

    #[test]
    fn statement_convention_flips_sign() {
        let p = DriftTestParams::new([1.5, 1.0], [0.7, 1.0]).unwrap();
        for i in 0..2 {
            let a = drift_llr_characteristics_with(&p, 0, i, SignConvention::Proof).unwrap();
            let b = drift_llr_characteristics_with(&p, 0, i, SignConvention::Statement).unwrap();
            assert_eq!(a.drift, -b.drift);
        }
    }

    #[test]
    fn zero_sigma_is_rejected() {
        assert!(DriftTestParams::new([1.0, 1.0], [0.0, 1.0]).is_err());
        let obs = crate::levy_sim::simulate_bm_drift(0.0, 1.0, 1.0, 0.1, 1).unwrap();
        assert!(drift_llr_from_observation(&obs, 1.0, 0.0).is_err());
    }

    #[test]
    fn llr_from_zero_and_signal_observation() {
        let zero = crate::levy_sim::simulate_bm_drift(0.0, 0.0, 1.0, 0.01, 1).unwrap();
        let u = drift_llr_from_observation(&zero, 1.0, 1.0).unwrap();
        for (t, v) in u.times.iter().zip(&u.values) {
            assert!((v + t / 2.0).abs() < 1e-14);
        }
        let signal = crate::levy_sim::simulate_bm_drift(1.0, 0.0, 1.0, 0.01, 1).unwrap();
        let u = drift_llr_from_observation(&signal, 1.0, 1.0).unwrap();
        for (t, v) in u.times.iter().zip(&u.values) {
            assert!((v - t / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn null_coordinate_has_zero_coefficients() {
        let p = JumpTestParams::new([0.0, 1.0], [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        let c = jump_llr_coefficients(&p, 0, 0, &q()).unwrap();
        assert_eq!((c.beta, c.m, c.gamma, c.k_mass), (0.0, 0.0, 0.0, 0.0));
        let ch = jump_llr_characteristics(&c, 1).unwrap();
        assert_eq!(ch.drift, 0.0);
        assert_eq!(ch.diffusion_var, 0.0);
        assert!(matches!(ch.jumps, JumpLaw::None));
    }

    #[test]
    fn exponential_beta_matches_oracle() {
        // -(int_0^1 x^2 e^-x dx + int_1^inf x e^-x dx) = -(2 - 3/e)
        const BETA: f64 = -0.896_361_676_485_673;
        let p = JumpTestParams::new([1.0, 1.0], [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        let c = jump_llr_coefficients(&p, 0, 0, &q()).unwrap();
        assert!((c.beta - BETA).abs() < 1e-8, "{}", c.beta);
        assert!((c.m - 2.0 / std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn near_point_mass_coefficients() {
        let nu = JumpMeasureSpec::near_point_mass(1.0, 2.0, 1e-3).unwrap();
        let p = JumpTestParams::new([1.0, 1.0], [1.0, 1.0], nu).unwrap();
        let c = jump_llr_coefficients(&p, 0, 0, &q()).unwrap();
        assert!((c.m - 2.0).abs() < 1e-6);
        assert!((c.beta + 2.0).abs() < 1e-6);
    }

    #[test]
    fn characteristics_flip_with_index() {
        let p = JumpTestParams::new([1.0, 1.0], [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        let c = jump_llr_coefficients(&p, 0, 0, &q()).unwrap();
        let c0 = jump_llr_characteristics(&c, 0).unwrap();
        let c1 = jump_llr_characteristics(&c, 1).unwrap();
        assert_eq!(c0.drift, -c1.drift);
        assert_eq!(c0.diffusion_var, c1.diffusion_var);
        assert_eq!(c0.jump_sign, -c1.jump_sign);
    }

    #[test]
    fn coefficients_are_monotone_in_a() {
        let nu = JumpMeasureSpec::exponential(1.0, 0.7);
        let mut prev: Option<LlrCoefficients> = None;
        for a in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let p = JumpTestParams::new([a, a], [1.0, 1.0], nu.clone()).unwrap();
            let c = jump_llr_coefficients(&p, 0, 0, &q()).unwrap();
            if let Some(pr) = prev {
                assert!(c.beta < pr.beta);
                assert!(c.m > pr.m);
                assert!(c.k_mass > pr.k_mass);
            }
            prev = Some(c);
        }
    }

    #[test]
    fn record_serialises_expected_keys() {
        let p = JumpTestParams::new([1.0, 1.0], [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        let c = jump_llr_coefficients(&p, 1, 1, &q()).unwrap();
        let v = serde_json::to_value(c.record()).unwrap();
        for key in ["beta", "m", "gamma", "K_mass", "sign"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn jump_llr_mean_slope_matches_simulation() {
        let p = JumpTestParams::new([1.0, 1.0], [1.0, 1.0], JumpMeasureSpec::exponential(1.0, 1.0)).unwrap();
        let c = jump_llr_coefficients(&p, 0, 0, &q()).unwrap();
        for i in 0..2u8 {
            let ch = jump_llr_characteristics(&c, i).unwrap();
            let slope = ch.mean_slope(&q()).unwrap();
            let law = ch.prepare(&q()).unwrap();
            let n = 10_000;
            let horizon = 1.0;
            let ends: Vec<f64> = (0..n)
                .map(|s| {
                    simulate_levy_1d(&law, 0.0, horizon, 0.05, stream_rng(3, s))
                        .unwrap()
                        .terminal()
                })
                .collect();
            let mean = ends.iter().sum::<f64>() / n as f64;
            let var = ends.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - slope * horizon).abs() < 3.0 * se, "i={i} mean={mean} slope={slope} se={se}");
        }
    }
}
