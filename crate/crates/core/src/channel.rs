//! Channel realizations and the distribution of squared channel gains.
//!
//! Users are dropped at distances uniform on `[r_a, r_b]`; the amplitude gain is
//! Rayleigh with mean `d^{-n/2}` (so `1/d` for the default exponent 2).
//! The squared gain is then `w d^{-n}` with `w` exponential of mean `4/pi`.
//!
//! The CDF of the squared gain is approximated by collapsing the distance
//! density onto `P` points `d_i = r_a + i (r_b - r_a)/P`:
//!
//! ```text
//! F(x) = 1 - (1/P) sum_i exp(-x d_i^n / w_mean)
//! ```
//!
//! which is strictly increasing and inverted by bisection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::roots;

/// Mean of the squared amplitude of a Rayleigh variable with unit mean.
pub const FADING_POWER: f64 = 4.0 / std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Minimum distance to the access point, m.
    pub r_a: f64,
    /// Maximum distance to the access point, m.
    pub r_b: f64,
    pub path_loss_exp: f64,
    /// Number of distance points in the discretised CDF.
    pub partitions: usize,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            r_a: 10.0,
            r_b: 1000.0,
            path_loss_exp: 2.0,
            partitions: 200,
            seed: 0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_a > 0.0 && self.r_b > self.r_a && self.r_b.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "distances need 0 < r_a < r_b, got [{}, {}]",
                self.r_a, self.r_b
            )));
        }
        if !(2.0..=5.0).contains(&self.path_loss_exp) {
            return Err(Error::InvalidConfig(format!(
                "path-loss exponent {} outside [2, 5]",
                self.path_loss_exp
            )));
        }
        if self.partitions < 2 {
            return Err(Error::InvalidConfig(
                "at least two CDF partitions are required".into(),
            ));
        }
        Ok(())
    }

    /// Discretisation points `r_a + i (r_b - r_a)/P`, `i = 1..P`.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let step = (self.r_b - self.r_a) / self.partitions as f64;
        (1..=self.partitions).map(move |i| self.r_a + i as f64 * step)
    }

    /// Mean Rayleigh amplitude at distance `d`.
    pub fn mean_gain(&self, d: f64) -> f64 {
        d.powf(-0.5 * self.path_loss_exp)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// One drop of `K` users with their starting spreading codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// Amplitude gains `h_k`.
    pub gains: DVector<f64>,
    pub distances: DVector<f64>,
    /// `N x K` with entries `+-1/sqrt(N)`.
    pub codes: DMatrix<f64>,
}

/// Drop for trial number `trial`; the same `(seed, trial)` always gives the same drop.
pub fn sample(model: &ChannelModel, cfg: &SystemConfig, trial: u64) -> Realization {
    let mut rng = model.rng(trial);
    let k = cfg.users;
    let distances = DVector::from_fn(k, |_, _| uniform_distance(model, &mut rng));
    let gains = DVector::from_fn(k, |i, _| rayleigh(&mut rng, model.mean_gain(distances[i])));
    let codes = random_codes(&mut rng, cfg.processing_gain, k);
    Realization {
        gains,
        distances,
        codes,
    }
}

/// Drop seen by several access points.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCellRealization {
    /// `B x K`, amplitude gain of user `k` at access point `b`.
    pub gains: DMatrix<f64>,
    /// `B x K` distances.
    pub distances: DMatrix<f64>,
    pub codes: DMatrix<f64>,
    /// Strongest access point of every user (0-based).
    pub assignment: Vec<usize>,
}

/// Multi-cell drop: every user has an independent distance and fading
/// coefficient towards each access point and is served by the strongest one.
///
/// Row 0 and the codes are exactly the single-cell drop of the same trial.
pub fn sample_multicell(
    model: &ChannelModel,
    cfg: &SystemConfig,
    num_aps: usize,
    trial: u64,
) -> Result<MultiCellRealization> {
    if num_aps == 0 {
        return Err(Error::InvalidConfig(
            "at least one access point is required".into(),
        ));
    }
    let k = cfg.users;
    let first = sample(model, cfg, trial);
    let mut gains = DMatrix::zeros(num_aps, k);
    let mut distances = DMatrix::zeros(num_aps, k);
    gains.set_row(0, &first.gains.transpose());
    distances.set_row(0, &first.distances.transpose());
    for b in 1..num_aps {
        let mut rng = model.rng(trial ^ ((b as u64) << 40));
        for j in 0..k {
            let d = uniform_distance(model, &mut rng);
            distances[(b, j)] = d;
            gains[(b, j)] = rayleigh(&mut rng, model.mean_gain(d));
        }
    }
    let assignment = (0..k).map(|j| gains.column(j).imax()).collect();
    Ok(MultiCellRealization {
        gains,
        distances,
        codes: first.codes,
        assignment,
    })
}

fn uniform_distance<R: Rng>(model: &ChannelModel, rng: &mut R) -> f64 {
    model.r_a + (model.r_b - model.r_a) * rng.random::<f64>()
}

/// Rayleigh variate with the given mean, by inversion.
pub fn rayleigh<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    let scale = mean * (2.0 / std::f64::consts::PI).sqrt();
    // 1 - U lies in (0, 1], so the logarithm is finite
    let u = 1.0 - rng.random::<f64>();
    scale * (-2.0 * u.ln()).sqrt()
}

/// `n x k` matrix with independent equiprobable entries `+-1/sqrt(n)`.
pub fn random_codes<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    let a = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, k, |_, _| if rng.random_bool(0.5) { a } else { -a })
}

/// `(1/P) sum_i exp(-x d_i^n / w_mean)`, the complementary CDF.
fn survival(model: &ChannelModel, x: f64) -> f64 {
    let n = model.path_loss_exp;
    model
        .nodes()
        .map(|d| (-x * d.powf(n) / FADING_POWER).exp())
        .sum::<f64>()
        / model.partitions as f64
}

/// Discretised CDF of the squared channel gain.
pub fn cdf_sq_gain(model: &ChannelModel, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (1.0 - survival(model, x)).clamp(0.0, 1.0)
}

/// Exact CDF of the squared gain for path-loss exponent 2 (no discretisation).
pub fn cdf_sq_gain_exact(model: &ChannelModel, x: f64) -> Result<f64> {
    if model.path_loss_exp != 2.0 {
        return Err(Error::OutsideScope(
            "closed-form CDF needs path-loss exponent 2".into(),
        ));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let t = (x / FADING_POWER).sqrt();
    let span = model.r_b - model.r_a;
    let tail = 0.5 * (libm::erfc(model.r_a * t) - libm::erfc(model.r_b * t));
    Ok(1.0 - std::f64::consts::PI.sqrt() / (t * span) * tail)
}

/// Inverse of [`cdf_sq_gain`].
///
/// The complementary CDF is solved for directly in `x` rather than in
/// `z = exp(-x)`: for small `y` the root sits at `z` within a few ulps of 1.
pub fn inv_cdf_sq_gain(model: &ChannelModel, y: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&y) {
        return Err(Error::QuantileLevel(y));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let target = 1.0 - y;
    // every node is at least d_1 away, so the survival at hi is below exp(-hi d_1^n / w)
    let d1 = model.nodes().next().unwrap_or(model.r_b);
    let hi = -target.ln() * FADING_POWER / d1.powf(model.path_loss_exp);
    roots::bisect(|x| target - survival(model, x), 0.0, hi, 1e-15)
}

/// `F^{-1}((K - l)/K)` for `l = 1..K`: strongest user first, last entry 0.
pub fn sorted_gain_quantiles(model: &ChannelModel, k: usize) -> Result<Vec<f64>> {
    (1..=k)
        .map(|l| inv_cdf_sq_gain(model, (k - l) as f64 / k as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, k: usize) -> SystemConfig {
        SystemConfig {
            processing_gain: n,
            users: k,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = ChannelModel {
            seed: 11,
            ..Default::default()
        };
        let c = cfg(16, 8);
        assert_eq!(sample(&m, &c, 3), sample(&m, &c, 3));
        assert_ne!(sample(&m, &c, 3).gains, sample(&m, &c, 4).gains);
    }

    #[test]
    fn realization_shapes_and_ranges() {
        let m = ChannelModel::default();
        let r = sample(&m, &cfg(16, 40), 0);
        assert_eq!(r.codes.shape(), (16, 40));
        for col in r.codes.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-15);
            assert!(col.iter().all(|&x| (x.abs() - 0.25).abs() < 1e-16));
        }
        assert!(r.distances.iter().all(|&d| (10.0..=1000.0).contains(&d)));
        assert!(r.gains.iter().all(|&h| h > 0.0 && h.is_finite()));
    }

    #[test]
    fn rayleigh_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 37.0;
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rayleigh(&mut rng, 1.0 / d)).sum::<f64>() / n as f64;
        assert!((mean * d - 1.0).abs() < 0.01);
    }

    #[test]
    fn cdf_limits() {
        let m = ChannelModel::default();
        assert_eq!(cdf_sq_gain(&m, 0.0), 0.0);
        assert!(cdf_sq_gain(&m, 1e3) > 1.0 - 1e-15);
        assert_eq!(inv_cdf_sq_gain(&m, 0.0).unwrap(), 0.0);
        assert_eq!(inv_cdf_sq_gain(&m, 1.0), Err(Error::QuantileLevel(1.0)));
        assert!(inv_cdf_sq_gain(&m, -0.1).is_err());
    }

    #[test]
    fn cdf_against_direct_sum() {
        // hand-written sum over the 4 nodes 10 + 2.5 i of a small model
        let m = ChannelModel {
            r_a: 10.0,
            r_b: 20.0,
            partitions: 4,
            ..Default::default()
        };
        let x = 3e-3;
        let direct = 1.0
            - [12.5f64, 15.0, 17.5, 20.0]
                .iter()
                .map(|d| (-x * d * d * std::f64::consts::PI / 4.0).exp())
                .sum::<f64>()
                / 4.0;
        assert!((cdf_sq_gain(&m, x) - direct).abs() < 1e-15);
    }

    #[test]
    fn exact_cdf_against_quadrature() {
        // fine midpoint rule over the distance density
        let m = ChannelModel::default();
        for x in [1e-7, 1e-5, 1e-3] {
            let steps = 200_000;
            let h = (m.r_b - m.r_a) / steps as f64;
            let s: f64 = (0..steps)
                .map(|i| {
                    let d = m.r_a + (i as f64 + 0.5) * h;
                    (-x * d * d / FADING_POWER).exp()
                })
                .sum::<f64>()
                * h
                / (m.r_b - m.r_a);
            assert!((cdf_sq_gain_exact(&m, x).unwrap() - (1.0 - s)).abs() < 1e-9);
        }
        let m4 = ChannelModel {
            path_loss_exp: 4.0,
            ..Default::default()
        };
        assert!(cdf_sq_gain_exact(&m4, 1.0).is_err());
    }

    #[test]
    fn round_trip_on_grid() {
        let m = ChannelModel::default();
        for i in 1..100 {
            let y = i as f64 / 100.0;
            let x = inv_cdf_sq_gain(&m, y).unwrap();
            assert!((cdf_sq_gain(&m, x) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn quantiles_shape() {
        let m = ChannelModel::default();
        assert_eq!(sorted_gain_quantiles(&m, 1).unwrap(), vec![0.0]);
        let q = sorted_gain_quantiles(&m, 50).unwrap();
        assert_eq!(q.len(), 50);
        assert!(q.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(q[49], 0.0);
    }

    #[test]
    fn multicell_row_zero_is_single_cell() {
        let m = ChannelModel {
            seed: 5,
            ..Default::default()
        };
        let c = cfg(8, 6);
        let single = sample(&m, &c, 2);
        let multi = sample_multicell(&m, &c, 3, 2).unwrap();
        assert_eq!(multi.gains.row(0).transpose(), single.gains);
        assert_eq!(multi.codes, single.codes);
        for (j, &a) in multi.assignment.iter().enumerate() {
            assert!(multi
                .gains
                .column(j)
                .iter()
                .all(|&g| g <= multi.gains[(a, j)]));
        }
        let one = sample_multicell(&m, &c, 1, 2).unwrap();
        assert!(one.assignment.iter().all(|&a| a == 0));
        assert!(sample_multicell(&m, &c, 0, 2).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(ChannelModel::default().validate().is_ok());
        let bad = ChannelModel {
            r_b: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChannelModel {
            partitions: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(a in 0.0f64..1e-2, b in 0.0f64..1e-2, n in 2.0f64..5.0) {
            let m = ChannelModel { path_loss_exp: n, ..Default::default() };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (flo, fhi) = (cdf_sq_gain(&m, lo), cdf_sq_gain(&m, hi));
            prop_assert!(flo <= fhi);
            prop_assert!((0.0..=1.0).contains(&flo) && (0.0..=1.0).contains(&fhi));
        }

        #[test]
        fn inverse_is_monotone_and_exact(y1 in 0.001f64..0.999, y2 in 0.001f64..0.999) {
            let m = ChannelModel::default();
            let (x1, x2) = (inv_cdf_sq_gain(&m, y1).unwrap(), inv_cdf_sq_gain(&m, y2).unwrap());
            prop_assert!((cdf_sq_gain(&m, x1) - y1).abs() < 1e-9);
            if y1 < y2 {
                prop_assert!(x1 < x2);
            }
        }
    }
}
