//! Multi-cell games.
//!
//! Access point `b` observes `r_b = sum_k sqrt(p_k) h_{b,k} s_k b_k + n_b`, and
//! user `k` is decoded at its assigned access point `a(k)` with covariance
//! `M_a = sum_j p_j h_{a,j}^2 s_j s_j^T + (N0/2) I`. With one access point the
//! games are exactly the single-cell ones.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{self, meets_target, target_sinr, GameConfig, GameVariant};
use crate::model::{
    factor, sinr, sinr_mmse, utility, weighted_covariance, NetworkState, SystemConfig,
    CODE_NORM_TOL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiCellState {
    pub num_aps: usize,
    /// `B x K`, amplitude gain of user `k` at access point `b`.
    pub gains: DMatrix<f64>,
    /// Serving access point of every user (0-based).
    pub assignment: Vec<usize>,
    pub powers: DVector<f64>,
    pub codes: DMatrix<f64>,
    pub receivers: DMatrix<f64>,
}

impl MultiCellState {
    /// State with matched-filter receivers.
    pub fn new(
        gains: DMatrix<f64>,
        assignment: Vec<usize>,
        powers: DVector<f64>,
        codes: DMatrix<f64>,
    ) -> Self {
        Self {
            num_aps: gains.nrows(),
            gains,
            assignment,
            powers,
            receivers: codes.clone(),
            codes,
        }
    }

    pub fn users(&self) -> usize {
        self.codes.ncols()
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        let k = self.users();
        if self.num_aps == 0 || self.gains.shape() != (self.num_aps, k) {
            return Err(Error::InvalidState(format!(
                "gain matrix {:?} does not match {} access points and {k} users",
                self.gains.shape(),
                self.num_aps
            )));
        }
        if self.assignment.len() != k {
            return Err(Error::InvalidState(
                "one access point per user is required".into(),
            ));
        }
        if let Some(&a) = self.assignment.iter().find(|&&a| a >= self.num_aps) {
            return Err(Error::InvalidState(format!(
                "assignment {a} beyond {} access points",
                self.num_aps
            )));
        }
        if self.gains.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidState(
                "gains must be positive and finite".into(),
            ));
        }
        self.view(0).validate(cfg)
    }

    /// The network as seen by access point `b`.
    pub fn view(&self, b: usize) -> NetworkState {
        NetworkState {
            powers: self.powers.clone(),
            gains: self.gains.row(b).transpose(),
            codes: self.codes.clone(),
            receivers: self.receivers.clone(),
        }
    }

    /// Amplitude gain of every user at its own access point.
    pub fn own_gains(&self) -> DVector<f64> {
        DVector::from_fn(self.users(), |k, _| self.gains[(self.assignment[k], k)])
    }

    fn own_amplitude(&self, k: usize) -> f64 {
        self.powers[k].sqrt() * self.gains[(self.assignment[k], k)]
    }

    fn from_single(&self, st: NetworkState) -> Self {
        Self {
            num_aps: self.num_aps,
            gains: self.gains.clone(),
            assignment: self.assignment.clone(),
            powers: st.powers,
            codes: st.codes,
            receivers: st.receivers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiCellOutcome {
    pub state: MultiCellState,
    pub sinrs: DVector<f64>,
    pub utilities: DVector<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

fn covariance_at(st: &MultiCellState, cfg: &SystemConfig, b: usize) -> DMatrix<f64> {
    let g = st.gains.row(b).transpose();
    let w = st.powers.component_mul(&g.component_mul(&g));
    weighted_covariance(&st.codes, &w, cfg.noise_var())
}

/// SINR of every user at its assigned access point under the current receivers.
pub fn multicell_sinrs(st: &MultiCellState, cfg: &SystemConfig) -> Result<DVector<f64>> {
    let views: Vec<NetworkState> = (0..st.num_aps).map(|b| st.view(b)).collect();
    (0..st.users())
        .map(|k| sinr(&views[st.assignment[k]], cfg, k))
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// MMSE receivers `sqrt(p_k) h_{a(k),k} M_{a(k)}^{-1} s_k`.
pub fn multicell_receivers(st: &MultiCellState, cfg: &SystemConfig) -> Result<DMatrix<f64>> {
    if let Some(k) = st.powers.iter().position(|&p| p <= 0.0) {
        return Err(Error::InactiveUser(k));
    }
    let mut d = DMatrix::zeros(st.codes.nrows(), st.users());
    for b in 0..st.num_aps {
        let users: Vec<usize> = (0..st.users()).filter(|&k| st.assignment[k] == b).collect();
        if users.is_empty() {
            continue;
        }
        let chol = factor(covariance_at(st, cfg, b))?;
        for k in users {
            let col = chol.solve(&st.codes.column(k).into_owned()) * st.own_amplitude(k);
            d.set_column(k, &col);
        }
    }
    Ok(d)
}

/// MMSE SINRs at the assigned access points from one factorisation per access point.
fn mmse_sinrs(st: &MultiCellState, cfg: &SystemConfig) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(st.users());
    for b in 0..st.num_aps {
        let users: Vec<usize> = (0..st.users()).filter(|&k| st.assignment[k] == b).collect();
        if users.is_empty() {
            continue;
        }
        let chol = factor(covariance_at(st, cfg, b))?;
        for k in users {
            let s = st.codes.column(k).into_owned();
            let h = st.gains[(b, k)];
            let t = st.powers[k] * h * h * chol.solve(&s).dot(&s);
            out[k] = t / (1.0 - t);
        }
    }
    Ok(out)
}

/// Code fixed point `s_k = d_k / |d_k|` with `d_k` the MMSE receiver at `a(k)`,
/// users updated in index order with the freshest covariance.
fn code_phase(st: &mut MultiCellState, cfg: &SystemConfig, gcfg: &GameConfig) -> Result<()> {
    for _ in 0..gcfg.tmse.max_iters {
        let mut moved = 0.0f64;
        for k in 0..st.users() {
            let b = st.assignment[k];
            let chol = factor(covariance_at(st, cfg, b))?;
            let d = chol.solve(&st.codes.column(k).into_owned());
            let s = &d / d.norm();
            moved = moved.max((&s - st.codes.column(k)).amax());
            st.codes.set_column(k, &s);
        }
        if moved <= gcfg.tmse.code_tol {
            break;
        }
    }
    st.receivers = multicell_receivers(st, cfg)?;
    Ok(())
}

fn power_phase(
    st: &mut MultiCellState,
    cfg: &SystemConfig,
    gamma_target: f64,
    gcfg: &GameConfig,
) -> Result<()> {
    for _ in 0..gcfg.inner_max_iters {
        let sinrs = mmse_sinrs(st, cfg)?;
        let mut change = 0.0f64;
        for k in 0..st.users() {
            if !(sinrs[k] > 0.0) {
                return Err(Error::DegenerateSinr(k));
            }
            let next = (st.powers[k] * gamma_target / sinrs[k]).min(cfg.p_max);
            change = change.max(((next - st.powers[k]) / st.powers[k]).abs());
            st.powers[k] = next;
        }
        if change < gcfg.inner_tol {
            break;
        }
    }
    st.receivers = multicell_receivers(st, cfg)?;
    Ok(())
}

/// Plays a multi-cell game. With one access point the single-cell game of the
/// matching variant is played on the same state.
pub fn run_game_multicell(
    state: &MultiCellState,
    cfg: &SystemConfig,
    variant: GameVariant,
    gcfg: &GameConfig,
) -> Result<MultiCellOutcome> {
    if !variant.is_multicell() {
        return Err(Error::InvalidConfig(format!(
            "{variant} is not a multi-cell game"
        )));
    }
    cfg.validate()?;
    gcfg.validate()?;
    state.validate(cfg)?;
    if variant == GameVariant::MulticellFull && state.users() > cfg.processing_gain {
        return Err(Error::OutsideScope(format!(
            "code optimisation with K = {} > N = {} users is outside the multi-cell fixed-point result",
            state.users(),
            cfg.processing_gain
        )));
    }
    if state.num_aps == 1 {
        let single = game::run_game(&state.view(0), cfg, variant.single_cell(), gcfg)?;
        return Ok(MultiCellOutcome {
            state: state.from_single(single.state),
            sinrs: single.sinrs,
            utilities: single.utilities,
            iterations_used: single.iterations_used,
            converged: single.converged,
        });
    }
    if let Some(k) = state.powers.iter().position(|&p| p <= 0.0) {
        return Err(Error::InactiveUser(k));
    }
    let gamma_target = target_sinr(cfg.packet_len)?;
    let mut st = state.clone();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < gcfg.outer_max_iters {
        rounds += 1;
        let before = st.powers.clone();
        if variant == GameVariant::MulticellFull {
            code_phase(&mut st, cfg, gcfg)?;
        }
        power_phase(&mut st, cfg, gamma_target, gcfg)?;
        let change = before
            .iter()
            .zip(st.powers.iter())
            .map(|(&a, &b)| ((b - a) / a).abs())
            .fold(0.0, f64::max);
        if change < gcfg.power_tol {
            converged = true;
            break;
        }
    }
    for c in st.codes.column_iter() {
        debug_assert!((c.norm() - 1.0).abs() < CODE_NORM_TOL);
    }
    let sinrs = multicell_sinrs(&st, cfg)?;
    converged &= meets_target(
        &st.powers,
        &sinrs,
        gamma_target,
        cfg.p_max,
        gcfg.target_sinr_tol,
    );
    let utilities = game::utilities(&st.powers, &sinrs, cfg)?;
    Ok(MultiCellOutcome {
        state: st,
        sinrs,
        utilities,
        iterations_used: rounds,
        converged,
    })
}

/// Largest relative utility gain from a unilateral move to one of `points`
/// powers `p_max j / points`, SINR measured at the serving access point with
/// the deviating user's MMSE receiver.
pub fn nash_probe_multicell(
    outcome: &MultiCellOutcome,
    cfg: &SystemConfig,
    points: usize,
) -> Result<f64> {
    let st = &outcome.state;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..st.users() {
        let base = outcome.utilities[k];
        let mut dev = st.view(st.assignment[k]);
        for j in 1..=points {
            let p = cfg.p_max * j as f64 / points as f64;
            dev.powers[k] = p;
            let u = utility(p, sinr_mmse(&dev, cfg, k)?, cfg)?;
            worst = worst.max((u - base) / base);
        }
    }
    Ok(worst)
}
