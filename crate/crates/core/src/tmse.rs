//! Total-MSE minimisation over spreading codes and linear receivers.
//!
//! One sweep recomputes every MMSE receiver from the current codes and then
//! replaces each code by the minimiser of the total MSE on the unit sphere with
//! the receivers held fixed:
//!
//! ```text
//! d_i = sqrt(p_i) h_i M^{-1} s_i
//! s_i = sqrt(p_i) h_i (p_i h_i^2 D D^T + mu_i I)^+ d_i,   mu_i such that |s_i| = 1
//! ```
//!
//! With `D` fixed the total MSE separates across codes, so each code update is
//! exact and the objective is nonincreasing step by step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{covariance, factor, mse_with_covariance, NetworkState, SystemConfig};
use crate::roots;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmseConfig {
    pub max_iters: usize,
    /// Relative TMSE decrease below which a sweep counts as converged.
    pub tmse_tol: f64,
    /// Largest entrywise code change a converged sweep may still make.
    pub code_tol: f64,
    /// Allowed deviation of `|s_k|` from one after the multiplier search.
    pub mu_tol: f64,
    /// Eigenvalues below `pseudo_rank_tol * lambda_max` are treated as zero.
    pub pseudo_rank_tol: f64,
}

impl Default for TmseConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tmse_tol: 1e-10,
            code_tol: 1e-10,
            mu_tol: 1e-10,
            pseudo_rank_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmseResult {
    pub codes: DMatrix<f64>,
    pub receivers: DMatrix<f64>,
    /// TMSE with MMSE receivers: the starting point, then one entry per sweep.
    pub tmse_trace: Vec<f64>,
    pub converged: bool,
}

/// Sum of the per-user MSEs.
pub fn tmse(state: &NetworkState, cfg: &SystemConfig) -> f64 {
    let m = covariance(state, cfg);
    (0..state.users())
        .map(|k| mse_with_covariance(state, &m, k))
        .sum()
}

/// MMSE receivers of every user for the current codes and powers.
pub fn receiver_sweep(state: &NetworkState, cfg: &SystemConfig) -> Result<DMatrix<f64>> {
    if let Some(k) = state.powers.iter().position(|&p| p <= 0.0) {
        return Err(Error::InactiveUser(k));
    }
    let chol = factor(covariance(state, cfg))?;
    let mut d = chol.solve(&state.codes);
    for (k, mut col) in d.column_iter_mut().enumerate() {
        col *= state.powers[k].sqrt() * state.gains[k];
    }
    Ok(d)
}

/// `|s(mu)|` for `s(mu) = amplitude * sum_i z(lambda_i, mu) u_i (u_i^T d)`.
pub fn code_norm(eigvals: &[f64], projections: &[f64], amplitude: f64, mu: f64) -> f64 {
    eigvals
        .iter()
        .zip(projections)
        .map(|(&l, &c)| {
            let den = l + mu;
            let z = if den != 0.0 { 1.0 / den } else { 0.0 };
            let v = amplitude * c * z;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Multiplier `mu` giving a unit-norm code.
///
/// `eigvals` are the eigenvalues of `p_k h_k^2 D D^T` and `projections` the
/// components `u_i^T d_k` of the receiver in that eigenbasis; `amplitude` is
/// `sqrt(p_k) h_k`. The norm decreases monotonically from infinity at the
/// pole `-lambda_low` (smallest eigenvalue carrying energy) to zero, so the
/// root is bracketed first and then bisected.
pub fn mu_search(
    eigvals: &[f64],
    projections: &[f64],
    amplitude: f64,
    tcfg: &TmseConfig,
) -> Result<f64> {
    let (pole, lo, hi) = mu_bracket(eigvals, projections, amplitude)?;
    debug_assert!(lo > pole);
    let mu = roots::bisect(
        |mu| 1.0 - code_norm(eigvals, projections, amplitude, mu),
        lo,
        hi,
        1e-15,
    )?;
    let norm = code_norm(eigvals, projections, amplitude, mu);
    if (norm - 1.0).abs() > tcfg.mu_tol {
        return Err(Error::NoRoot(format!(
            "multiplier search stalled at |s| = {norm}"
        )));
    }
    Ok(mu)
}

/// Pole and bracket `[lo, hi]` of the multiplier search, with `|s(lo)| > 1 > |s(hi)|`.
pub fn mu_bracket(eigvals: &[f64], projections: &[f64], amplitude: f64) -> Result<(f64, f64, f64)> {
    let cmax = projections.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    if !(cmax > 0.0) || amplitude == 0.0 {
        return Err(Error::CodeUpdateUndefined);
    }
    let cnorm = projections.iter().map(|c| c * c).sum::<f64>().sqrt();
    let lambda_low = eigvals
        .iter()
        .zip(projections)
        .filter(|(_, c)| c.abs() > 1e-12 * cmax)
        .map(|(&l, _)| l)
        .fold(f64::INFINITY, f64::min);
    let pole = -lambda_low;
    let norm_at = |mu: f64| code_norm(eigvals, projections, amplitude, mu);

    // |s(pole + t)| <= amplitude |c| / t, so t = amplitude |c| already gives |s| <= 1
    let mut width = amplitude.abs() * cnorm;
    while norm_at(pole + width) >= 1.0 {
        width *= 2.0;
    }
    let hi = pole + width;
    let mut off = width;
    let mut lo = hi;
    for _ in 0..2200 {
        off *= 0.5;
        let cand = pole + off;
        if cand <= pole {
            break;
        }
        if norm_at(cand) > 1.0 {
            lo = cand;
            break;
        }
    }
    if lo >= hi {
        return Err(Error::NoRoot(
            "no lower bracket for the code multiplier".into(),
        ));
    }
    Ok((pole, lo, hi))
}

/// Eigendecomposition of `D D^T`, shared by every code update of a sweep.
#[derive(Debug, Clone)]
pub struct ReceiverSpectrum {
    eigvals: Vec<f64>,
    eigvecs: DMatrix<f64>,
}

impl ReceiverSpectrum {
    pub fn new(receivers: &DMatrix<f64>, pseudo_rank_tol: f64) -> Self {
        let gram = receivers * receivers.transpose();
        let eig = SymmetricEigen::new(gram);
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
        let cutoff = pseudo_rank_tol * lmax;
        let eigvals = eig
            .eigenvalues
            .iter()
            .map(|&l| if l < cutoff { 0.0 } else { l })
            .collect();
        Self {
            eigvals,
            eigvecs: eig.eigenvectors,
        }
    }

    /// Norm-constrained TMSE minimiser for one user given its receiver.
    pub fn code(
        &self,
        d_k: &DVector<f64>,
        p_k: f64,
        h_k: f64,
        tcfg: &TmseConfig,
    ) -> Result<DVector<f64>> {
        if d_k.iter().all(|&x| x == 0.0) {
            return Err(Error::CodeUpdateUndefined);
        }
        let weight = p_k * h_k * h_k;
        let amplitude = p_k.sqrt() * h_k;
        let lambdas: Vec<f64> = self.eigvals.iter().map(|&l| weight * l).collect();
        let proj = self.eigvecs.tr_mul(d_k);
        let proj = proj.as_slice();
        let mu = mu_search(&lambdas, proj, amplitude, tcfg)?;
        let coeffs = DVector::from_iterator(
            lambdas.len(),
            lambdas.iter().zip(proj).map(|(&l, &c)| {
                let den = l + mu;
                if den != 0.0 {
                    amplitude * c / den
                } else {
                    0.0
                }
            }),
        );
        let s = &self.eigvecs * coeffs;
        let norm = s.norm();
        Ok(s / norm)
    }
}

/// Single-user code update `sqrt(p_k) h_k (p_k h_k^2 D D^T + mu I)^+ d_k`, unit norm.
pub fn code_update(
    d_k: &DVector<f64>,
    receivers: &DMatrix<f64>,
    p_k: f64,
    h_k: f64,
    tcfg: &TmseConfig,
) -> Result<DVector<f64>> {
    ReceiverSpectrum::new(receivers, tcfg.pseudo_rank_tol).code(d_k, p_k, h_k, tcfg)
}

/// Step-by-step driver of the alternating iterations.
#[derive(Debug, Clone)]
pub struct TmseSweeper<'a> {
    pub state: NetworkState,
    cfg: &'a SystemConfig,
    tcfg: &'a TmseConfig,
    spectrum: Option<ReceiverSpectrum>,
}

impl<'a> TmseSweeper<'a> {
    pub fn new(state: NetworkState, cfg: &'a SystemConfig, tcfg: &'a TmseConfig) -> Result<Self> {
        if let Some(k) = state.powers.iter().position(|&p| p <= 0.0) {
            return Err(Error::InactiveUser(k));
        }
        Ok(Self {
            state,
            cfg,
            tcfg,
            spectrum: None,
        })
    }

    pub fn sweep_receivers(&mut self) -> Result<()> {
        self.state.receivers = receiver_sweep(&self.state, self.cfg)?;
        self.spectrum = None;
        Ok(())
    }

    pub fn update_code(&mut self, k: usize) -> Result<()> {
        let spectrum = self.spectrum.get_or_insert_with(|| {
            ReceiverSpectrum::new(&self.state.receivers, self.tcfg.pseudo_rank_tol)
        });
        let d = self.state.receivers.column(k).into_owned();
        let s = spectrum.code(&d, self.state.powers[k], self.state.gains[k], self.tcfg)?;
        self.state.codes.set_column(k, &s);
        Ok(())
    }

    pub fn update_codes(&mut self) -> Result<()> {
        for k in 0..self.state.users() {
            self.update_code(k)?;
        }
        Ok(())
    }

    pub fn tmse(&self) -> f64 {
        tmse(&self.state, self.cfg)
    }
}

/// Runs sweeps until the relative TMSE decrease drops below `tmse_tol` and no
/// code entry moves by more than `code_tol`.
///
/// The TMSE decrease alone is a weak test: it is quadratic in the distance to
/// the fixed point and reaches round-off while the codes are still moving.
///
/// The returned receivers are the MMSE receivers of the returned codes.
pub fn optimize(state: &NetworkState, cfg: &SystemConfig, tcfg: &TmseConfig) -> Result<TmseResult> {
    let mut sw = TmseSweeper::new(state.clone(), cfg, tcfg)?;
    sw.sweep_receivers()?;
    let mut trace = vec![sw.tmse()];
    let mut converged = false;
    for _ in 0..tcfg.max_iters {
        let before = sw.state.codes.clone();
        sw.update_codes()?;
        sw.sweep_receivers()?;
        let t = sw.tmse();
        let prev = *trace.last().unwrap();
        trace.push(t);
        let moved = (&sw.state.codes - before).amax();
        if prev - t <= tcfg.tmse_tol * prev && moved <= tcfg.code_tol {
            converged = true;
            break;
        }
    }
    Ok(TmseResult {
        codes: sw.state.codes,
        receivers: sw.state.receivers,
        tmse_trace: trace,
        converged,
    })
}

/// `max |S^T S - I|`.
pub fn orthogonality_residual(codes: &DMatrix<f64>) -> f64 {
    let g = codes.tr_mul(codes);
    let k = g.nrows();
    (g - DMatrix::identity(k, k)).amax()
}

/// `max |S H P H^T S^T - (sum_k p_k h_k^2 / N) I|`, relative to `sum_k p_k h_k^2 / N`.
///
/// For equal received powers `P_R` the reference level is `P_R K / N`.
pub fn wbe_residual(state: &NetworkState) -> f64 {
    let w = state.received_powers();
    let n = state.dim();
    let level = w.sum() / n as f64;
    let m = crate::model::weighted_covariance(&state.codes, &w, 0.0);
    (m - DMatrix::identity(n, n) * level).amax() / level
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeStructure {
    Orthogonal,
    WelchBoundEquality,
    Other,
}

/// Limiting structure of a code set, at relative tolerance `tol`.
pub fn classify(state: &NetworkState, tol: f64) -> CodeStructure {
    if state.users() <= state.dim() && orthogonality_residual(&state.codes) < tol {
        CodeStructure::Orthogonal
    } else if wbe_residual(state) < tol {
        CodeStructure::WelchBoundEquality
    } else {
        CodeStructure::Other
    }
}
