//! Synchronous CDMA uplink signal model.
//!
//! The received chip vector for one symbol is `r = S P^{1/2} H b + n` with unit-norm
//! spreading codes in the columns of `S`, diagonal transmit powers `P`, real channel
//! gains `H` and white noise of variance `N0/2` per chip. Everything here is a pure
//! function of its inputs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the Euclidean norm of every spreading code.
pub const CODE_NORM_TOL: f64 = 1e-9;

/// Global constants of one uplink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Processing gain `N` (chips per symbol).
    pub processing_gain: usize,
    /// Number of active users `K`.
    pub users: usize,
    /// Noise power spectral density `N0` in W/Hz. Formulas use `N0/2`.
    pub noise_psd: f64,
    /// Packet length `M` in symbols.
    pub packet_len: u32,
    /// Information symbols per packet `L <= M`.
    pub info_len: u32,
    /// Common symbol rate `R` in symbols/s.
    pub rate: f64,
    /// Per-user transmit power cap in W.
    pub p_max: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            processing_gain: 16,
            users: 8,
            noise_psd: 1e-9,
            packet_len: 120,
            info_len: 120,
            rate: 1e5,
            p_max: crate::units::dbw_to_watts(-25.0),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.processing_gain == 0 {
            return bad("processing gain must be at least 1");
        }
        if self.users == 0 {
            return bad("at least one user is required");
        }
        if self.packet_len == 0 || self.info_len == 0 {
            return bad("packet and information lengths must be positive");
        }
        if self.info_len > self.packet_len {
            return bad("information length exceeds packet length");
        }
        for (name, v) in [
            ("noise_psd", self.noise_psd),
            ("rate", self.rate),
            ("p_max", self.p_max),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Per-chip noise variance `N0/2`.
    pub fn noise_var(&self) -> f64 {
        0.5 * self.noise_psd
    }

    /// Load `K/N`.
    pub fn load(&self) -> f64 {
        self.users as f64 / self.processing_gain as f64
    }

    /// `R L / M`, the throughput of an error-free packet stream.
    pub fn throughput_scale(&self) -> f64 {
        self.rate * f64::from(self.info_len) / f64::from(self.packet_len)
    }

    pub fn with_users(mut self, users: usize) -> Self {
        self.users = users;
        self
    }
}

/// Full game state: powers, channel gains, spreading codes and receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub powers: DVector<f64>,
    pub gains: DVector<f64>,
    /// `N x K`, unit-norm columns.
    pub codes: DMatrix<f64>,
    /// `N x K`, one linear receive filter per user.
    pub receivers: DMatrix<f64>,
}

impl NetworkState {
    /// State with matched-filter receivers (`D = S`).
    pub fn new(powers: DVector<f64>, gains: DVector<f64>, codes: DMatrix<f64>) -> Self {
        let receivers = codes.clone();
        Self {
            powers,
            gains,
            codes,
            receivers,
        }
    }

    pub fn users(&self) -> usize {
        self.codes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.codes.nrows()
    }

    /// Received powers `p_k h_k^2`.
    pub fn received_powers(&self) -> DVector<f64> {
        self.powers
            .component_mul(&self.gains.component_mul(&self.gains))
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        let k = self.users();
        let n = self.dim();
        let bad = |m: String| Err(Error::InvalidState(m));
        if self.powers.len() != k || self.gains.len() != k {
            return bad(format!(
                "{} powers and {} gains for {k} codes",
                self.powers.len(),
                self.gains.len()
            ));
        }
        if self.receivers.shape() != (n, k) {
            return bad(format!(
                "receiver matrix is {:?}, expected {:?}",
                self.receivers.shape(),
                (n, k)
            ));
        }
        for (i, c) in self.codes.column_iter().enumerate() {
            let norm = c.norm();
            if (norm - 1.0).abs() > CODE_NORM_TOL {
                return bad(format!("code {i} has norm {norm}"));
            }
        }
        for (i, &p) in self.powers.iter().enumerate() {
            if !(0.0..=cfg.p_max).contains(&p) {
                return bad(format!("power {p} of user {i} outside [0, {}]", cfg.p_max));
            }
        }
        for (i, &h) in self.gains.iter().enumerate() {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("gain {h} of user {i} is not positive"));
            }
        }
        Ok(())
    }

    fn check_user(&self, k: usize) -> Result<()> {
        if k >= self.users() {
            return Err(Error::UserIndex {
                index: k,
                users: self.users(),
            });
        }
        Ok(())
    }
}

/// Per-user equilibrium summary returned by the games.
#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub state: NetworkState,
    pub sinrs: DVector<f64>,
    pub utilities: DVector<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// `sum_k w_k s_k s_k^T + noise_var I` for arbitrary per-code weights.
pub fn weighted_covariance(
    codes: &DMatrix<f64>,
    weights: &DVector<f64>,
    noise_var: f64,
) -> DMatrix<f64> {
    let n = codes.nrows();
    let mut scaled = codes.clone();
    for (mut col, &w) in scaled.column_iter_mut().zip(weights.iter()) {
        col *= w;
    }
    let mut m = &scaled * codes.transpose();
    // symmetrise against round-off so the factorisation sees an exactly symmetric matrix
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
        m[(i, i)] += noise_var;
    }
    m
}

/// Data covariance `M = S H P H^T S^T + (N0/2) I`.
pub fn covariance(state: &NetworkState, cfg: &SystemConfig) -> DMatrix<f64> {
    weighted_covariance(&state.codes, &state.received_powers(), cfg.noise_var())
}

pub(crate) fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or(Error::NotPositiveDefinite)
}

/// SINR of user `k` at the output of its current receiver.
pub fn sinr(state: &NetworkState, cfg: &SystemConfig, k: usize) -> Result<f64> {
    state.check_user(k)?;
    let d = state.receivers.column(k);
    let dd = d.norm_squared();
    if dd == 0.0 {
        return Err(Error::ZeroReceiver(k));
    }
    let received = state.received_powers();
    let proj = state.codes.tr_mul(&d);
    let signal = received[k] * proj[k] * proj[k];
    let interference: f64 = (0..state.users())
        .filter(|&i| i != k)
        .map(|i| received[i] * proj[i] * proj[i])
        .sum();
    Ok(signal / (cfg.noise_var() * dd + interference))
}

/// Mean square error `E{(b_k - d_k^T r)^2}` of user `k`.
pub fn mse(state: &NetworkState, cfg: &SystemConfig, k: usize) -> Result<f64> {
    state.check_user(k)?;
    let m = covariance(state, cfg);
    Ok(mse_with_covariance(state, &m, k))
}

pub(crate) fn mse_with_covariance(state: &NetworkState, m: &DMatrix<f64>, k: usize) -> f64 {
    let d = state.receivers.column(k);
    let quad = (m * d).dot(&d);
    let amp = state.powers[k].sqrt() * state.gains[k];
    1.0 + quad - 2.0 * amp * d.dot(&state.codes.column(k))
}

/// Linear MMSE receiver `sqrt(p_k) h_k M^{-1} s_k`.
pub fn mmse_receiver(state: &NetworkState, cfg: &SystemConfig, k: usize) -> Result<DVector<f64>> {
    state.check_user(k)?;
    if state.powers[k] <= 0.0 {
        return Err(Error::InactiveUser(k));
    }
    let chol = factor(covariance(state, cfg))?;
    let amp = state.powers[k].sqrt() * state.gains[k];
    Ok(chol.solve(&state.codes.column(k).into_owned()) * amp)
}

/// SINR of user `k` under its MMSE receiver,
/// `p_k h_k^2 s_k^T (M - p_k h_k^2 s_k s_k^T)^{-1} s_k`.
pub fn sinr_mmse(state: &NetworkState, cfg: &SystemConfig, k: usize) -> Result<f64> {
    state.check_user(k)?;
    let received = state.received_powers();
    let mut weights = received.clone();
    weights[k] = 0.0;
    let interference = factor(weighted_covariance(&state.codes, &weights, cfg.noise_var()))?;
    let s = state.codes.column(k).into_owned();
    Ok(received[k] * interference.solve(&s).dot(&s))
}

/// MMSE SINRs of all users from one factorisation of `M`, using
/// `t / (1 - t)` with `t = p_k h_k^2 s_k^T M^{-1} s_k`.
pub fn sinr_mmse_all(state: &NetworkState, cfg: &SystemConfig) -> Result<DVector<f64>> {
    let chol = factor(covariance(state, cfg))?;
    let received = state.received_powers();
    let solved = chol.solve(&state.codes);
    Ok(DVector::from_iterator(
        state.users(),
        (0..state.users()).map(|k| {
            let t = received[k] * solved.column(k).dot(&state.codes.column(k));
            t / (1.0 - t)
        }),
    ))
}

/// Standard Gaussian tail `Q(x)`.
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Probability that an uncoded BPSK packet of `m` symbols is received error-free.
pub fn packet_success(gamma: f64, m: u32) -> f64 {
    // Q(sqrt(2 gamma)) = erfc(sqrt(gamma)) / 2
    let q = 0.5 * libm::erfc(gamma.max(0.0).sqrt());
    (1.0 - q).powi(m as i32)
}

/// Efficiency function `f(gamma) = (1 - e^{-gamma})^M`.
pub fn efficiency(gamma: f64, m: u32) -> f64 {
    (-(-gamma.max(0.0)).exp_m1()).powi(m as i32)
}

/// `f'(gamma) = M e^{-gamma} (1 - e^{-gamma})^{M-1}`.
pub fn efficiency_derivative(gamma: f64, m: u32) -> f64 {
    let g = gamma.max(0.0);
    f64::from(m) * (-g).exp() * (-(-g).exp_m1()).powi(m as i32 - 1)
}

/// Bits delivered per Joule, `R (L/M) f(gamma) / p`.
pub fn utility(p: f64, gamma: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::ZeroPowerUtility);
    }
    Ok(cfg.throughput_scale() * efficiency(gamma, cfg.packet_len) / p)
}
