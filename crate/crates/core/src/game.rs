//! Non-cooperative energy-efficiency games.
//!
//! Every user maximises its bits per Joule `R (L/M) f(gamma_k) / p_k`. At fixed
//! receivers and codes the own SINR is linear in the own power, so the best
//! response is the power reaching the target SINR `gamma_bar` (root of
//! `f(gamma) = gamma f'(gamma)`), or `p_max` when that is not enough.
//!
//! With matched filters or MMSE receivers the equilibrium is found by
//! alternating the receiver update with target-SINR power control run to its
//! fixed point. The full game interleaves one sweep of code and receiver
//! updates with one power-control step per round.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sinr, sinr_mmse_all, utility, GameOutcome, NetworkState, SystemConfig};
use crate::roots;
use crate::tmse::{self, TmseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GameVariant {
    /// Power control with conventional matched filters, `d_k = s_k`.
    PowerOnlyMf,
    /// Power control with MMSE receivers.
    PowerMmse,
    /// Power, MMSE receivers and spreading codes.
    FullCrossLayer,
    MulticellPowerMmse,
    MulticellFull,
}

impl GameVariant {
    pub const ALL: [GameVariant; 5] = [
        GameVariant::PowerOnlyMf,
        GameVariant::PowerMmse,
        GameVariant::FullCrossLayer,
        GameVariant::MulticellPowerMmse,
        GameVariant::MulticellFull,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            GameVariant::PowerOnlyMf => "POWER_ONLY_MF",
            GameVariant::PowerMmse => "POWER_MMSE",
            GameVariant::FullCrossLayer => "FULL_CROSS_LAYER",
            GameVariant::MulticellPowerMmse => "MULTICELL_POWER_MMSE",
            GameVariant::MulticellFull => "MULTICELL_FULL",
        }
    }

    pub fn is_multicell(self) -> bool {
        matches!(
            self,
            GameVariant::MulticellPowerMmse | GameVariant::MulticellFull
        )
    }

    /// Single-cell game the variant reduces to with one access point.
    pub fn single_cell(self) -> GameVariant {
        match self {
            GameVariant::MulticellPowerMmse => GameVariant::PowerMmse,
            GameVariant::MulticellFull => GameVariant::FullCrossLayer,
            v => v,
        }
    }

    fn uses_mmse(self) -> bool {
        !matches!(self, GameVariant::PowerOnlyMf)
    }
}

impl fmt::Display for GameVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for GameVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GameVariant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown game variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameConfig {
    /// Relative SINR shortfall tolerated for users below the cap at termination.
    pub target_sinr_tol: f64,
    /// Relative power change between outer rounds that ends the game.
    pub power_tol: f64,
    /// Budget of outer rounds; a round of the full game is a single code sweep.
    pub outer_max_iters: usize,
    pub inner_max_iters: usize,
    /// Relative power change that ends one power-control phase.
    pub inner_tol: f64,
    pub tmse: TmseConfig,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            target_sinr_tol: 1e-6,
            power_tol: 1e-6,
            outer_max_iters: 20_000,
            inner_max_iters: 10_000,
            inner_tol: 1e-8,
            tmse: TmseConfig::default(),
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.target_sinr_tol > 0.0
            && self.power_tol > 0.0
            && self.inner_tol > 0.0
            && self.outer_max_iters > 0
            && self.inner_max_iters > 0
            && self.tmse.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "game tolerances and budgets must be positive".into(),
            ))
        }
    }
}

/// Target SINR: the positive root of `f(gamma) = gamma f'(gamma)` for
/// `f(gamma) = (1 - e^{-gamma})^M`, equivalently `e^gamma - 1 = M gamma`.
pub fn target_sinr(packet_len: u32) -> Result<f64> {
    if packet_len < 2 {
        return Err(Error::InvalidConfig(format!(
            "packet length {packet_len} has no positive target SINR"
        )));
    }
    let m = f64::from(packet_len);
    // e^g - 1 - M g is convex with its minimum at ln M, so the positive root lies above it
    let g = |x: f64| x.exp_m1() - m * x;
    let lo = m.ln();
    roots::bisect_increasing(g, lo, 2.0 * lo, f64::MAX, 1e-15)
}

/// Initial transmit power of every game run.
pub fn initial_power(cfg: &SystemConfig) -> f64 {
    cfg.p_max / 100.0
}

/// SINRs of all users at the state's current receivers.
pub fn current_sinrs(state: &NetworkState, cfg: &SystemConfig) -> Result<DVector<f64>> {
    (0..state.users())
        .map(|k| sinr(state, cfg, k))
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// One target-SINR update `p_k <- min(p_max, p_k gamma_bar / gamma_k)`.
pub fn power_control_step(
    state: &NetworkState,
    cfg: &SystemConfig,
    gamma_target: f64,
) -> Result<DVector<f64>> {
    let sinrs = current_sinrs(state, cfg)?;
    scale_powers(&state.powers, &sinrs, gamma_target, cfg.p_max)
}

fn scale_powers(
    powers: &DVector<f64>,
    sinrs: &DVector<f64>,
    gamma_target: f64,
    p_max: f64,
) -> Result<DVector<f64>> {
    let mut next = powers.clone();
    for (k, p) in next.iter_mut().enumerate() {
        let g = sinrs[k];
        if *p > 0.0 && !(g > 0.0) {
            return Err(Error::DegenerateSinr(k));
        }
        if *p > 0.0 {
            *p = (*p * gamma_target / g).min(p_max);
        }
    }
    Ok(next)
}

fn relative_change(old: &DVector<f64>, new: &DVector<f64>) -> f64 {
    old.iter()
        .zip(new.iter())
        .map(|(&a, &b)| ((b - a) / a).abs())
        .fold(0.0, f64::max)
}

/// Power control to its fixed point at fixed codes. MMSE receivers are
/// re-derived from the current powers at every step.
fn power_phase(
    state: &mut NetworkState,
    cfg: &SystemConfig,
    mmse: bool,
    gamma_target: f64,
    gcfg: &GameConfig,
) -> Result<()> {
    for _ in 0..gcfg.inner_max_iters {
        let sinrs = if mmse {
            sinr_mmse_all(state, cfg)?
        } else {
            current_sinrs(state, cfg)?
        };
        let next = scale_powers(&state.powers, &sinrs, gamma_target, cfg.p_max)?;
        let change = relative_change(&state.powers, &next);
        state.powers = next;
        if change < gcfg.inner_tol {
            break;
        }
    }
    if mmse {
        state.receivers = tmse::receiver_sweep(state, cfg)?;
    }
    Ok(())
}

/// Receiver phase followed by power control run to its fixed point, repeated
/// until the powers settle.
fn alternating(
    state: &NetworkState,
    cfg: &SystemConfig,
    variant: GameVariant,
    gamma_target: f64,
    gcfg: &GameConfig,
) -> Result<(NetworkState, usize, bool)> {
    let mut st = state.clone();
    for round in 1..=gcfg.outer_max_iters {
        let before = st.powers.clone();
        if variant.uses_mmse() {
            st.receivers = tmse::receiver_sweep(&st, cfg)?;
        } else {
            st.receivers = st.codes.clone();
        }
        power_phase(&mut st, cfg, variant.uses_mmse(), gamma_target, gcfg)?;
        if relative_change(&before, &st.powers) < gcfg.power_tol {
            return Ok((st, round, true));
        }
    }
    Ok((st, gcfg.outer_max_iters, false))
}

/// Full game: every round is one sweep of code updates and MMSE receivers
/// followed by one power-control step.
///
/// Running the TMSE iterations and the power control each to their own fixed
/// point can cycle in overloaded systems, where the code structure optimal for
/// one power vector moves many users across the cap. Interleaving single
/// steps settles on a point that is a fixed point of both maps. The powers are
/// then polished to the power-control fixed point at the final codes.
fn interleaved(
    state: &NetworkState,
    cfg: &SystemConfig,
    gamma_target: f64,
    gcfg: &GameConfig,
) -> Result<(NetworkState, usize, bool)> {
    let mut sw = tmse::TmseSweeper::new(state.clone(), cfg, &gcfg.tmse)?;
    sw.sweep_receivers()?;
    let mut rounds = 0;
    let mut settled = false;
    while rounds < gcfg.outer_max_iters {
        rounds += 1;
        let before = sw.state.clone();
        sw.update_codes()?;
        let sinrs = sinr_mmse_all(&sw.state, cfg)?;
        sw.state.powers = scale_powers(&sw.state.powers, &sinrs, gamma_target, cfg.p_max)?;
        sw.sweep_receivers()?;
        let moved = (&sw.state.codes - &before.codes).amax();
        if relative_change(&before.powers, &sw.state.powers) < gcfg.power_tol
            && moved <= gcfg.tmse.code_tol
        {
            settled = true;
            break;
        }
    }
    let mut st = sw.state;
    power_phase(&mut st, cfg, true, gamma_target, gcfg)?;
    Ok((st, rounds, settled))
}

/// Plays a single-cell game from `state` until the powers settle.
pub fn run_game(
    state: &NetworkState,
    cfg: &SystemConfig,
    variant: GameVariant,
    gcfg: &GameConfig,
) -> Result<GameOutcome> {
    if variant.is_multicell() {
        return Err(Error::InvalidConfig(format!(
            "{variant} needs the multi-cell driver"
        )));
    }
    cfg.validate()?;
    gcfg.validate()?;
    state.validate(cfg)?;
    if let Some(k) = state.powers.iter().position(|&p| p <= 0.0) {
        return Err(Error::InactiveUser(k));
    }
    let gamma_target = target_sinr(cfg.packet_len)?;
    let (st, rounds, converged) = match variant {
        GameVariant::FullCrossLayer => interleaved(state, cfg, gamma_target, gcfg)?,
        _ => alternating(state, cfg, variant, gamma_target, gcfg)?,
    };
    let sinrs = current_sinrs(&st, cfg)?;
    let converged = converged
        && meets_target(
            &st.powers,
            &sinrs,
            gamma_target,
            cfg.p_max,
            gcfg.target_sinr_tol,
        );
    let utilities = utilities(&st.powers, &sinrs, cfg)?;
    Ok(GameOutcome {
        state: st,
        sinrs,
        utilities,
        iterations_used: rounds,
        converged,
    })
}

/// Every user either transmits at the cap or is within `tol` of the target.
pub fn meets_target(
    powers: &DVector<f64>,
    sinrs: &DVector<f64>,
    gamma_target: f64,
    p_max: f64,
    tol: f64,
) -> bool {
    powers
        .iter()
        .zip(sinrs.iter())
        .all(|(&p, &g)| p >= p_max || (g / gamma_target - 1.0).abs() <= tol)
}

pub(crate) fn utilities(
    powers: &DVector<f64>,
    sinrs: &DVector<f64>,
    cfg: &SystemConfig,
) -> Result<DVector<f64>> {
    powers
        .iter()
        .zip(sinrs.iter())
        .map(|(&p, &g)| utility(p, g, cfg))
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// Largest relative utility gain any user obtains by moving alone to one of
/// `points` powers `p_max j / points`.
///
/// Codes and the other users' strategies stay frozen. Users with matched
/// filters keep `d_k = s_k`; otherwise the deviating user keeps an MMSE
/// receiver, so its SINR is `p h^2 s^T M_k^{-1} s` with `M_k` excluding itself.
pub fn nash_probe(
    outcome: &GameOutcome,
    cfg: &SystemConfig,
    variant: GameVariant,
    points: usize,
) -> Result<f64> {
    let st = &outcome.state;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..st.users() {
        let base = outcome.utilities[k];
        let mut dev = st.clone();
        for j in 1..=points {
            let p = cfg.p_max * j as f64 / points as f64;
            dev.powers[k] = p;
            let g = if variant.uses_mmse() {
                crate::model::sinr_mmse(&dev, cfg, k)?
            } else {
                sinr(&dev, cfg, k)?
            };
            let u = utility(p, g, cfg)?;
            worst = worst.max((u - base) / base);
        }
    }
    Ok(worst)
}
