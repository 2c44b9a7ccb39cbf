//! Large-system predictions.
//!
//! For `K, N -> inf` at fixed load `alpha = K/N`, the MMSE output SINR of a user
//! received with power `P_k` approaches the root of
//!
//! ```text
//! gamma = P_k / (N0/2 + alpha E[P P_k / (P_k + P gamma)])
//! ```
//!
//! where the expectation runs over the received powers of the interferers.
//! Sorted squared gains are replaced by the quantiles `F^{-1}((K-i)/K)`, which
//! turns the power-control fixed point and the per-user profiles into a handful
//! of scalar equations.
//!
//! Every function takes the quantile vector sorted strongest first, as returned
//! by [`crate::channel::sorted_gain_quantiles`].

use crate::error::{Error, Result};
use crate::model::{efficiency, efficiency_derivative, SystemConfig};
use crate::roots;

const REL_TOL: f64 = 1e-15;

/// Population description used by every prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaInputs {
    /// Load `K/N`.
    pub alpha: f64,
    /// `N0/2`.
    pub noise_var: f64,
    pub gamma_target: f64,
    pub p_max: f64,
    /// `F^{-1}((K-i)/K)` for `i = 1..K`, nonincreasing.
    pub quantiles: Vec<f64>,
    /// `R L / M`.
    pub throughput_scale: f64,
    pub packet_len: u32,
}

impl LsaInputs {
    /// Inputs for `cfg` with the target SINR of its packet length.
    pub fn new(cfg: &SystemConfig, quantiles: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let inputs = Self {
            alpha: cfg.load(),
            noise_var: cfg.noise_var(),
            gamma_target: crate::game::target_sinr(cfg.packet_len)?,
            p_max: cfg.p_max,
            quantiles,
            throughput_scale: cfg.throughput_scale(),
            packet_len: cfg.packet_len,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("noise_var", self.noise_var),
            ("gamma_target", self.gamma_target),
            ("p_max", self.p_max),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.quantiles.is_empty() {
            return Err(Error::InvalidConfig("empty quantile vector".into()));
        }
        if self.quantiles.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
            return Err(Error::InvalidConfig(
                "quantiles must be finite and nonnegative".into(),
            ));
        }
        if self.quantiles.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "quantiles must be sorted strongest first".into(),
            ));
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.quantiles.len()
    }

    /// `N = K/alpha` as a real number.
    pub fn processing_gain(&self) -> f64 {
        self.users() as f64 / self.alpha
    }

    /// Largest load at which a common target SINR is reachable.
    pub fn load_limit(&self) -> f64 {
        1.0 + 1.0 / self.gamma_target
    }

    fn check_load(&self) -> Result<()> {
        if self.alpha >= self.load_limit() {
            return Err(Error::InfeasibleLoad {
                alpha: self.alpha,
                limit: self.load_limit(),
            });
        }
        Ok(())
    }

    fn utility(&self, power: f64, sinr: f64) -> f64 {
        self.throughput_scale * efficiency(sinr, self.packet_len) / power
    }
}

/// Per-rank prediction, strongest user first.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaPrediction {
    /// Transmit powers, W.
    pub powers: Vec<f64>,
    pub sinrs: Vec<f64>,
    /// bit/J.
    pub utilities: Vec<f64>,
    /// Users transmitting at the power cap.
    pub u2: usize,
    /// Common received power of the users meeting the target.
    pub receive_power: f64,
}

/// Large-system SINR of a user received with power `p_received` among
/// interferers whose received powers are `interferers`.
pub fn asymptotic_sinr(p_received: f64, inputs: &LsaInputs, interferers: &[f64]) -> Result<f64> {
    if !(p_received > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "received power {p_received} must be > 0"
        )));
    }
    let s2 = inputs.noise_var;
    let a = if interferers.is_empty() {
        0.0
    } else {
        inputs.alpha / interferers.len() as f64
    };
    // gamma * denominator is increasing in gamma; the root lies below the noise-only SINR
    let g = |gamma: f64| {
        let load: f64 = interferers
            .iter()
            .map(|&p| gamma * p * p_received / (p_received + p * gamma))
            .sum();
        gamma * s2 + a * load - p_received
    };
    let hi = p_received / s2;
    roots::bisect(g, 0.0, hi, REL_TOL)
}

/// Common received power giving every user the target SINR when nobody is capped.
pub fn equal_receive_power(inputs: &LsaInputs) -> Result<f64> {
    inputs.check_load()?;
    let g = inputs.gamma_target;
    Ok(g * inputs.noise_var / (1.0 - inputs.alpha * g / (1.0 + g)))
}

/// Transmit power of a user with squared gain `h_sq` under equal received powers.
pub fn equal_power_pc(inputs: &LsaInputs, h_sq: f64) -> Result<f64> {
    if !(h_sq > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "squared gain {h_sq} must be > 0"
        )));
    }
    Ok(equal_receive_power(inputs)? / h_sq)
}

/// Number of quantile users whose equal-received-power transmit power exceeds the cap.
pub fn estimate_u2(inputs: &LsaInputs) -> Result<usize> {
    let pr = equal_receive_power(inputs)?;
    Ok(inputs
        .quantiles
        .iter()
        .filter(|&&q| {
            let required = if q > 0.0 { pr / q } else { f64::INFINITY };
            required > inputs.p_max
        })
        .count())
}

/// Received powers `p_max F^{-1}` of the `u2` weakest quantile users.
fn capped_received(inputs: &LsaInputs, u2: usize) -> &[f64] {
    &inputs.quantiles[inputs.users() - u2..]
}

/// Left-hand side of the target equation for received power `p` with `u2` capped users.
pub fn receive_power_sinr(inputs: &LsaInputs, u2: usize, p: f64) -> f64 {
    let n = inputs.processing_gain();
    let g = inputs.gamma_target;
    let u1 = (inputs.users() - u2) as f64;
    let capped: f64 = capped_received(inputs, u2)
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| {
            let c = inputs.p_max * q;
            p * c / (p + c * g)
        })
        .sum();
    n * p / (n * inputs.noise_var + u1 * p / (1.0 + g) + capped)
}

/// Received power of the users meeting the target when `u2` weak users are capped.
///
/// With no capped users this is exactly [`equal_receive_power`].
pub fn solve_receive_power(inputs: &LsaInputs, u2: usize) -> Result<f64> {
    let k = inputs.users();
    if u2 > k {
        return Err(Error::InvalidConfig(format!("u2 = {u2} exceeds K = {k}")));
    }
    if u2 == 0 {
        return equal_receive_power(inputs);
    }
    let n = inputs.processing_gain();
    let g = inputs.gamma_target;
    let u1 = (k - u2) as f64;
    if n - g * u1 / (1.0 + g) <= 0.0 {
        return Err(Error::TargetUnreachable(format!(
            "{u1} users at target exceed what N = {n} dimensions support"
        )));
    }
    let caps: Vec<f64> = capped_received(inputs, u2)
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| inputs.p_max * q)
        .collect();
    // convex in p, negative at zero and eventually increasing
    let f = |p: f64| {
        let capped: f64 = caps.iter().map(|&c| p * c / (p + c * g)).sum();
        n * p - g * (n * inputs.noise_var + u1 * p / (1.0 + g) + capped)
    };
    let start = g * inputs.noise_var;
    roots::bisect_increasing(f, 0.0, start, f64::MAX, REL_TOL)
}

/// Transmit power from the distributed rule, using only the user's own squared gain.
pub fn distributed_power(inputs: &LsaInputs, h_sq_own: f64) -> Result<f64> {
    if !(h_sq_own >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "squared gain {h_sq_own} must be >= 0"
        )));
    }
    let u2 = estimate_u2(inputs)?;
    let pk = solve_receive_power(inputs, u2)?;
    Ok(capped_power(pk, h_sq_own, inputs.p_max))
}

fn capped_power(received: f64, q: f64, p_max: f64) -> f64 {
    if q > 0.0 {
        (received / q).min(p_max)
    } else {
        p_max
    }
}

/// SINR of capped sorted user `i` (0-based) transmitting `power`, against
/// `u1` users at `pk` and the capped users in `capped` (indices into the quantiles).
fn capped_sinr(
    inputs: &LsaInputs,
    i: usize,
    power: f64,
    pk: f64,
    capped: std::ops::Range<usize>,
) -> Result<f64> {
    let x = power * inputs.quantiles[i];
    if x == 0.0 {
        return Ok(0.0);
    }
    let n = inputs.processing_gain();
    let u1 = (inputs.users() - capped.len()) as f64;
    let others: Vec<f64> = capped
        .filter(|&j| j != i)
        .map(|j| inputs.p_max * inputs.quantiles[j])
        .collect();
    let g = |xi: f64| {
        let load = u1 / n * x * pk * xi / (x + pk * xi)
            + others
                .iter()
                .map(|&c| x * c * xi / (x + c * xi))
                .sum::<f64>()
                / n;
        xi * inputs.noise_var + load - x
    };
    roots::bisect(g, 0.0, x / inputs.noise_var, REL_TOL)
        .map_err(|_| Error::ProfileNonConvergence { index: i })
}

/// Power, SINR and utility profile with MMSE receivers and fixed random codes.
pub fn profile_mmse(inputs: &LsaInputs) -> Result<LsaPrediction> {
    inputs.validate()?;
    let k = inputs.users();
    let u2 = estimate_u2(inputs)?;
    let pk = solve_receive_power(inputs, u2)?;
    let powers: Vec<f64> = inputs
        .quantiles
        .iter()
        .map(|&q| capped_power(pk, q, inputs.p_max))
        .collect();
    let mut sinrs = vec![inputs.gamma_target; k];
    for (i, sinr) in sinrs.iter_mut().enumerate().skip(k - u2) {
        *sinr = capped_sinr(inputs, i, powers[i], pk, k - u2..k)?;
    }
    Ok(finish(inputs, powers, sinrs, u2, pk))
}

/// Profile when codes are orthogonal: every user sees only noise.
pub fn profile_orthogonal(inputs: &LsaInputs) -> Result<LsaPrediction> {
    inputs.validate()?;
    let pr = inputs.gamma_target * inputs.noise_var;
    let powers: Vec<f64> = inputs
        .quantiles
        .iter()
        .map(|&q| capped_power(pr, q, inputs.p_max))
        .collect();
    let sinrs = powers
        .iter()
        .zip(&inputs.quantiles)
        .map(|(&p, &q)| p * q / inputs.noise_var)
        .collect();
    let u2 = count_capped(&powers, inputs.p_max);
    Ok(finish(inputs, powers, sinrs, u2, pr))
}

/// Received power at which WBE codes give every user the SINR `gamma` at load `alpha`.
///
/// Below unit load WBE codes are orthogonal and the unit-load value applies.
pub fn wbe_receive_power(gamma: f64, alpha: f64, noise_var: f64) -> Result<f64> {
    let alpha = alpha.max(1.0);
    let limit = 1.0 + 1.0 / gamma;
    if alpha >= limit {
        return Err(Error::InfeasibleLoad { alpha, limit });
    }
    Ok(gamma * noise_var / (1.0 - gamma * (alpha - 1.0)))
}

/// Oversaturated profile: equal received powers and WBE codes, everyone at target.
///
/// A zero quantile cannot be served and is placed at `p_max`.
pub fn profile_wbe(inputs: &LsaInputs) -> Result<LsaPrediction> {
    inputs.validate()?;
    let pr = wbe_receive_power(inputs.gamma_target, inputs.alpha, inputs.noise_var)?;
    let powers: Vec<f64> = inputs
        .quantiles
        .iter()
        .map(|&q| if q > 0.0 { pr / q } else { inputs.p_max })
        .collect();
    let sinrs = vec![inputs.gamma_target; inputs.users()];
    let u2 = count_capped(&powers, inputs.p_max);
    Ok(finish(inputs, powers, sinrs, u2, pr))
}

/// Common SINR maximising the sum utility under equal received powers and WBE codes.
/// Loads below one behave as unit load (orthogonal codes).
pub fn social_optimum_sinr(alpha: f64, packet_len: u32) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("load {alpha} must be > 0")));
    }
    if packet_len < 2 {
        return Err(Error::InvalidConfig(
            "packet length must be at least 2".into(),
        ));
    }
    let m = f64::from(packet_len);
    let alpha = alpha.max(1.0);
    // gamma f'/f [1 - gamma (alpha - 1)] = 1 with f'/f = M / (e^gamma - 1);
    // the left side starts at M > 1 and ends below 1, crossing it once
    let g = |gamma: f64| gamma.exp_m1() - m * gamma * (1.0 - gamma * (alpha - 1.0));
    let gamma = roots::bisect_increasing(g, 1e-12, 1.0, 1e4, REL_TOL)
        .map_err(|_| Error::NoRoot(format!("no social optimum at load {alpha}")))?;
    if alpha >= 1.0 + 1.0 / gamma {
        return Err(Error::InfeasibleLoad {
            alpha,
            limit: 1.0 + 1.0 / gamma,
        });
    }
    Ok(gamma)
}

/// Residual `gamma f'(gamma) [1 - gamma (alpha - 1)] - f(gamma)`.
pub fn social_residual(gamma: f64, alpha: f64, packet_len: u32) -> f64 {
    let alpha = alpha.max(1.0);
    gamma * efficiency_derivative(gamma, packet_len) * (1.0 - gamma * (alpha - 1.0))
        - efficiency(gamma, packet_len)
}

/// Social-optimum profile: every user at the social SINR with WBE codes.
///
/// Fails when a user with positive gain would need more than `p_max`; a zero
/// quantile is placed at `p_max`.
pub fn profile_social(inputs: &LsaInputs) -> Result<LsaPrediction> {
    inputs.validate()?;
    let gamma = social_optimum_sinr(inputs.alpha, inputs.packet_len)?;
    let pr = wbe_receive_power(gamma, inputs.alpha, inputs.noise_var)?;
    let mut powers = Vec::with_capacity(inputs.users());
    for (i, &q) in inputs.quantiles.iter().enumerate() {
        let p = if q > 0.0 { pr / q } else { inputs.p_max };
        if p > inputs.p_max {
            return Err(Error::TargetUnreachable(format!(
                "sorted user {} needs {p:e} W above the cap",
                i + 1
            )));
        }
        powers.push(p);
    }
    let sinrs = vec![gamma; inputs.users()];
    let u2 = count_capped(&powers, inputs.p_max);
    Ok(finish(inputs, powers, sinrs, u2, pr))
}

/// Profile of the plain equal-received-power rule, ignoring capped users when
/// setting the received power. SINRs come from the large-system fixed point
/// over the resulting received powers.
pub fn profile_equal_power(inputs: &LsaInputs) -> Result<LsaPrediction> {
    inputs.validate()?;
    let pr = equal_receive_power(inputs)?;
    let powers: Vec<f64> = inputs
        .quantiles
        .iter()
        .map(|&q| capped_power(pr, q, inputs.p_max))
        .collect();
    let received: Vec<f64> = powers
        .iter()
        .zip(&inputs.quantiles)
        .map(|(p, q)| p * q)
        .collect();
    let sinrs = received
        .iter()
        .map(|&p| {
            if p > 0.0 {
                asymptotic_sinr(p, inputs, &received)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let u2 = count_capped(&powers, inputs.p_max);
    Ok(finish(inputs, powers, sinrs, u2, pr))
}

fn count_capped(powers: &[f64], p_max: f64) -> usize {
    powers.iter().filter(|&&p| p >= p_max).count()
}

fn finish(
    inputs: &LsaInputs,
    powers: Vec<f64>,
    sinrs: Vec<f64>,
    u2: usize,
    receive_power: f64,
) -> LsaPrediction {
    let utilities = powers
        .iter()
        .zip(&sinrs)
        .map(|(&p, &g)| inputs.utility(p, g))
        .collect();
    LsaPrediction {
        powers,
        sinrs,
        utilities,
        u2,
        receive_power,
    }
}
