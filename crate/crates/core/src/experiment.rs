//! Configuration-driven Monte Carlo experiments and their CSV tables.
//!
//! Trial `t` of a given `K` always uses the channel drop `(seed, t)`, so every
//! game variant and every power rule in one run sees the same users, gains and
//! starting codes. Runs are sequential and bit-reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelModel};
use crate::error::{Error, Result};
use crate::game::{self, GameConfig, GameVariant};
use crate::lsa::{self, LsaInputs};
use crate::model::{
    efficiency, packet_success, sinr_mmse_all, utility, NetworkState, SystemConfig,
};
use crate::multicell::{self, MultiCellState};
use crate::units;

/// Overrides `output_path` when set.
pub const OUTPUT_DIR_ENV: &str = "EECDMA_OUTPUT_DIR";

pub const SWEEP_HEADER: [&str; 8] = [
    "experiment",
    "K",
    "variant",
    "mean_utility_bpj",
    "mean_tx_power_w",
    "mean_sinr_db",
    "frac_at_pmax",
    "trials",
];
pub const PROFILE_HEADER: [&str; 6] = [
    "rank",
    "quantile_gain",
    "power_w",
    "sinr_db",
    "utility_bpj",
    "method",
];
pub const EFFICIENCY_HEADER: [&str; 3] = ["gamma", "packet_success", "efficiency"];

/// Distributed power rule driven by the large-system received-power estimate.
pub const LSA_DISTRIBUTED: &str = "LSA_DISTRIBUTED";
/// Equal received power for everyone, ignoring users stuck at the cap.
pub const EQUAL_POWER_PC: &str = "EQUAL_POWER_PC";
/// Large-system profile evaluated at the sorted-gain quantiles.
pub const LSA_PREDICTION: &str = "LSA_PREDICTION";
/// Equal-SINR social optimum with WBE codes.
pub const SOCIAL_OPTIMUM: &str = "SOCIAL_OPTIMUM";

/// Relative slack below `p_max` still counted as transmitting at the cap.
const CAP_SLACK: f64 = 1e-9;
const EFFICIENCY_GRID_STEP: f64 = 0.05;
const EFFICIENCY_GRID_POINTS: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Experiment {
    FigEfficiency,
    GameSweep,
    PowerProfile,
    LsaSweep,
    OversatUtility,
}

impl Experiment {
    pub fn tag(self) -> &'static str {
        match self {
            Experiment::FigEfficiency => "FIG_EFFICIENCY",
            Experiment::GameSweep => "GAME_SWEEP",
            Experiment::PowerProfile => "POWER_PROFILE",
            Experiment::LsaSweep => "LSA_SWEEP",
            Experiment::OversatUtility => "OVERSAT_UTILITY",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, Experiment::GameSweep | Experiment::LsaSweep)
    }

    pub fn is_profile(self) -> bool {
        matches!(self, Experiment::PowerProfile | Experiment::OversatUtility)
    }

    fn file_stem(self) -> String {
        self.tag().to_ascii_lowercase()
    }
}

/// One experiment, read from a flat TOML file. Every key except `experiment`
/// has a default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub processing_gain: usize,
    pub packet_len: u32,
    pub info_len: u32,
    /// Symbols/s.
    pub rate: f64,
    /// W/Hz.
    pub noise_psd: f64,
    pub p_max_dbw: f64,
    pub r_a: f64,
    pub r_b: f64,
    pub path_loss_exp: f64,
    pub partitions: usize,
    pub num_aps: usize,
    pub variants: Vec<GameVariant>,
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Output directory.
    pub output_path: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let cfg = SystemConfig::default();
        let model = ChannelModel::default();
        Self {
            experiment: Experiment::GameSweep,
            processing_gain: cfg.processing_gain,
            packet_len: cfg.packet_len,
            info_len: cfg.info_len,
            rate: cfg.rate,
            noise_psd: cfg.noise_psd,
            p_max_dbw: -25.0,
            r_a: model.r_a,
            r_b: model.r_b,
            path_loss_exp: model.path_loss_exp,
            partitions: model.partitions,
            num_aps: 1,
            variants: vec![
                GameVariant::PowerOnlyMf,
                GameVariant::PowerMmse,
                GameVariant::FullCrossLayer,
            ],
            k_values: vec![4, 8, 12, 16, 20, 24],
            trials: 200,
            seed: model.seed,
            output_path: PathBuf::from("results"),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        if !table.contains_key("experiment") {
            return Err(Error::InvalidConfig("missing key `experiment`".into()));
        }
        let spec: Self = table
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn system(&self, users: usize) -> SystemConfig {
        SystemConfig {
            processing_gain: self.processing_gain,
            users,
            noise_psd: self.noise_psd,
            packet_len: self.packet_len,
            info_len: self.info_len,
            rate: self.rate,
            p_max: units::dbw_to_watts(self.p_max_dbw),
        }
    }

    pub fn channel(&self) -> ChannelModel {
        ChannelModel {
            r_a: self.r_a,
            r_b: self.r_b,
            path_loss_exp: self.path_loss_exp,
            partitions: self.partitions,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.system(1).validate()?;
        self.channel().validate()?;
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.num_aps == 0 {
            return bad("num_aps must be at least 1".into());
        }
        if self.experiment == Experiment::FigEfficiency {
            return Ok(());
        }
        if self.k_values.is_empty() {
            return bad("k_values must not be empty".into());
        }
        if self.k_values.contains(&0) {
            return bad("every K must be at least 1".into());
        }
        if self.experiment.is_profile() && self.k_values.len() != 1 {
            return bad(format!(
                "{} needs exactly one K, got {:?}",
                self.experiment.tag(),
                self.k_values
            ));
        }
        if self.variants.is_empty() && self.experiment != Experiment::LsaSweep {
            return bad("variants must not be empty".into());
        }
        Ok(())
    }
}

/// Output directory: the environment override if set, else `output_path`.
pub fn output_dir(spec: &ExperimentSpec) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| spec.output_path.clone())
}

/// Averages over trials for one `(K, variant)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub users: usize,
    /// Game variant tag or power-rule name.
    pub variant: String,
    /// bit/J.
    pub mean_utility: f64,
    /// W.
    pub mean_tx_power: f64,
    /// Linear.
    pub mean_sinr: f64,
    pub frac_at_pmax: f64,
    pub trials: usize,
}

/// User averages of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialStats {
    pub mean_utility: f64,
    pub mean_tx_power: f64,
    pub mean_sinr: f64,
    pub frac_at_pmax: f64,
}

impl TrialStats {
    pub fn from_users(
        powers: &[f64],
        sinrs: &[f64],
        utilities: &[f64],
        p_max: f64,
    ) -> Result<Self> {
        let k = powers.len();
        if k == 0 || sinrs.len() != k || utilities.len() != k {
            return Err(Error::InvalidState(
                "per-user vectors must be nonempty and of equal length".into(),
            ));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
        let capped = powers
            .iter()
            .filter(|&&p| p >= p_max * (1.0 - CAP_SLACK))
            .count();
        Ok(Self {
            mean_utility: mean(utilities),
            mean_tx_power: mean(powers),
            mean_sinr: mean(sinrs),
            frac_at_pmax: capped as f64 / k as f64,
        })
    }
}

/// Arithmetic means over trials.
pub fn aggregate(
    experiment: Experiment,
    users: usize,
    variant: &str,
    trials: &[TrialStats],
) -> Result<ResultRow> {
    if trials.is_empty() {
        return Err(Error::InvalidState("no trials to aggregate".into()));
    }
    let n = trials.len() as f64;
    let mean = |f: fn(&TrialStats) -> f64| trials.iter().map(f).sum::<f64>() / n;
    Ok(ResultRow {
        experiment,
        users,
        variant: variant.to_string(),
        mean_utility: mean(|t| t.mean_utility),
        mean_tx_power: mean(|t| t.mean_tx_power),
        mean_sinr: mean(|t| t.mean_sinr),
        frac_at_pmax: mean(|t| t.frac_at_pmax),
        trials: trials.len(),
    })
}

fn failed_row(experiment: Experiment, users: usize, variant: &str) -> ResultRow {
    ResultRow {
        experiment,
        users,
        variant: variant.to_string(),
        mean_utility: f64::NAN,
        mean_tx_power: f64::NAN,
        mean_sinr: f64::NAN,
        frac_at_pmax: f64::NAN,
        trials: 0,
    }
}

/// Per-rank averages, strongest user first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    /// 1-based.
    pub rank: usize,
    /// Squared-gain quantile of this rank.
    pub quantile_gain: f64,
    pub power: f64,
    /// Linear.
    pub sinr: f64,
    pub utility: f64,
    pub method: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyRow {
    pub gamma: f64,
    pub packet_success: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Efficiency(Vec<EfficiencyRow>),
    Sweep(Vec<ResultRow>),
    Profile(Vec<ProfileRow>),
}

impl Table {
    pub fn len(&self) -> usize {
        match self {
            Table::Efficiency(r) => r.len(),
            Table::Sweep(r) => r.len(),
            Table::Profile(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res = match self {
            Table::Efficiency(rows) => w.write_record(EFFICIENCY_HEADER).and_then(|_| {
                rows.iter().try_for_each(|r| {
                    w.write_record([
                        r.gamma.to_string(),
                        r.packet_success.to_string(),
                        r.efficiency.to_string(),
                    ])
                })
            }),
            Table::Sweep(rows) => w.write_record(SWEEP_HEADER).and_then(|_| {
                rows.iter().try_for_each(|r| {
                    w.write_record([
                        r.experiment.tag().to_string(),
                        r.users.to_string(),
                        r.variant.clone(),
                        r.mean_utility.to_string(),
                        r.mean_tx_power.to_string(),
                        units::linear_to_db(r.mean_sinr).to_string(),
                        r.frac_at_pmax.to_string(),
                        r.trials.to_string(),
                    ])
                })
            }),
            Table::Profile(rows) => w.write_record(PROFILE_HEADER).and_then(|_| {
                rows.iter().try_for_each(|r| {
                    w.write_record([
                        r.rank.to_string(),
                        r.quantile_gain.to_string(),
                        r.power.to_string(),
                        units::linear_to_db(r.sinr).to_string(),
                        r.utility.to_string(),
                        r.method.clone(),
                    ])
                })
            }),
        };
        res.and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Io(format!("cannot write CSV: {e}")))
    }
}

/// A computation that failed for one row; the row is written as NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    #[serde(rename = "K")]
    pub users: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Computation {
    pub table: Table,
    pub errors: Vec<RowError>,
    /// Games that hit their iteration budget.
    pub nonconverged_games: usize,
}

/// Runs the experiment in memory.
pub fn compute(spec: &ExperimentSpec) -> Result<Computation> {
    spec.validate()?;
    let mut run = Runner {
        spec,
        gcfg: GameConfig::default(),
        errors: Vec::new(),
        nonconverged: 0,
    };
    let table = match spec.experiment {
        Experiment::FigEfficiency => Table::Efficiency(efficiency_table(spec.packet_len)),
        Experiment::GameSweep | Experiment::LsaSweep => Table::Sweep(run.sweep()?),
        Experiment::PowerProfile | Experiment::OversatUtility => Table::Profile(run.profile()?),
    };
    Ok(Computation {
        table,
        errors: run.errors,
        nonconverged_games: run.nonconverged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub computation: Computation,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'static str,
    seed: u64,
    csv: String,
    rows: usize,
    nonconverged_games: usize,
    errors: &'a [RowError],
    spec: &'a ExperimentSpec,
    version: &'static str,
    timestamp_unix_s: u64,
}

/// Runs the experiment and writes `<stem>.csv` and `<stem>.manifest.json` into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunReport> {
    let io = |what: &str, p: &Path, e: std::io::Error| {
        Error::Io(format!("cannot {what} {}: {e}", p.display()))
    };
    fs::create_dir_all(out_dir).map_err(|e| io("create", out_dir, e))?;
    let computation = compute(spec)?;
    let stem = spec.experiment.file_stem();
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let manifest_path = out_dir.join(format!("{stem}.manifest.json"));

    let file = fs::File::create(&csv_path).map_err(|e| io("create", &csv_path, e))?;
    computation.table.write_csv(file)?;

    let manifest = Manifest {
        experiment: spec.experiment.tag(),
        seed: spec.seed,
        csv: format!("{stem}.csv"),
        rows: computation.table.len(),
        nonconverged_games: computation.nonconverged_games,
        errors: &computation.errors,
        spec,
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(format!("cannot encode manifest: {e}")))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| io("write", &manifest_path, e))?;
    Ok(RunReport {
        computation,
        csv_path,
        manifest_path,
    })
}

/// Packet success rate and efficiency function on `gamma = 0, 0.05, ..., 20`.
pub fn efficiency_table(packet_len: u32) -> Vec<EfficiencyRow> {
    (0..EFFICIENCY_GRID_POINTS)
        .map(|i| {
            let gamma = i as f64 * EFFICIENCY_GRID_STEP;
            EfficiencyRow {
                gamma,
                packet_success: packet_success(gamma, packet_len),
                efficiency: efficiency(gamma, packet_len),
            }
        })
        .collect()
}

/// Per-user outcome of one trial under one game or power rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Play {
    /// Amplitude gain towards the serving access point.
    pub gains: DVector<f64>,
    pub powers: DVector<f64>,
    pub sinrs: DVector<f64>,
    pub utilities: DVector<f64>,
    pub converged: bool,
}

impl Play {
    pub fn stats(&self, p_max: f64) -> Result<TrialStats> {
        TrialStats::from_users(
            self.powers.as_slice(),
            self.sinrs.as_slice(),
            self.utilities.as_slice(),
            p_max,
        )
    }
}

/// Plays `variant` on trial `trial` from the common starting power.
pub fn play_game(
    model: &ChannelModel,
    cfg: &SystemConfig,
    num_aps: usize,
    variant: GameVariant,
    trial: u64,
    gcfg: &GameConfig,
) -> Result<Play> {
    let p0 = DVector::from_element(cfg.users, game::initial_power(cfg));
    if variant.is_multicell() {
        let r = channel::sample_multicell(model, cfg, num_aps, trial)?;
        let st = MultiCellState::new(r.gains, r.assignment, p0, r.codes);
        let out = multicell::run_game_multicell(&st, cfg, variant, gcfg)?;
        Ok(Play {
            gains: out.state.own_gains(),
            powers: out.state.powers,
            sinrs: out.sinrs,
            utilities: out.utilities,
            converged: out.converged,
        })
    } else {
        let r = channel::sample(model, cfg, trial);
        let st = NetworkState::new(p0, r.gains, r.codes);
        let out = game::run_game(&st, cfg, variant, gcfg)?;
        Ok(Play {
            gains: out.state.gains,
            powers: out.state.powers,
            sinrs: out.sinrs,
            utilities: out.utilities,
            converged: out.converged,
        })
    }
}

/// Applies a per-user power rule (`LSA_DISTRIBUTED` or `EQUAL_POWER_PC`) on
/// trial `trial` with MMSE receivers and the starting random codes.
pub fn play_power_rule(
    model: &ChannelModel,
    cfg: &SystemConfig,
    inputs: &LsaInputs,
    rule: &str,
    trial: u64,
) -> Result<Play> {
    let r = channel::sample(model, cfg, trial);
    let powers = match rule {
        LSA_DISTRIBUTED => {
            let pk = lsa::solve_receive_power(inputs, lsa::estimate_u2(inputs)?)?;
            r.gains.map(|h| cap_power(pk, h * h, cfg.p_max))
        }
        EQUAL_POWER_PC => {
            let pr = lsa::equal_receive_power(inputs)?;
            r.gains.map(|h| cap_power(pr, h * h, cfg.p_max))
        }
        other => {
            return Err(Error::InvalidConfig(format!("unknown power rule {other}")));
        }
    };
    let st = NetworkState::new(powers, r.gains, r.codes);
    let sinrs = sinr_mmse_all(&st, cfg)?;
    let utilities = per_user_utility(&st.powers, &sinrs, cfg)?;
    Ok(Play {
        gains: st.gains,
        powers: st.powers,
        sinrs,
        utilities,
        converged: true,
    })
}

/// Social optimum on trial `trial`: every user at the common social SINR with
/// WBE codes. Fails if any user would need more than `p_max`.
pub fn play_social(model: &ChannelModel, cfg: &SystemConfig, trial: u64) -> Result<Play> {
    let r = channel::sample(model, cfg, trial);
    let gamma = lsa::social_optimum_sinr(cfg.load(), cfg.packet_len)?;
    let pr = lsa::wbe_receive_power(gamma, cfg.load(), cfg.noise_var())?;
    let powers = r.gains.map(|h| pr / (h * h));
    if let Some(k) = powers.iter().position(|&p| !(p <= cfg.p_max)) {
        return Err(Error::TargetUnreachable(format!(
            "social optimum needs {:e} W for user {k}, above the cap",
            powers[k]
        )));
    }
    let sinrs = DVector::from_element(cfg.users, gamma);
    let utilities = per_user_utility(&powers, &sinrs, cfg)?;
    Ok(Play {
        gains: r.gains,
        powers,
        sinrs,
        utilities,
        converged: true,
    })
}

fn cap_power(received: f64, h_sq: f64, p_max: f64) -> f64 {
    if h_sq > 0.0 {
        (received / h_sq).min(p_max)
    } else {
        p_max
    }
}

fn per_user_utility(
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

/// Per-rank samples over trials, users sorted by gain, strongest first.
#[derive(Debug, Clone)]
pub struct RankAverage {
    /// `[power, sinr, utility]` per trial, each of length `K`.
    samples: Vec<[Vec<f64>; 3]>,
    users: usize,
}

impl RankAverage {
    pub fn new(users: usize) -> Self {
        Self {
            samples: Vec::new(),
            users,
        }
    }

    pub fn add(&mut self, play: &Play) {
        let mut order: Vec<usize> = (0..play.gains.len()).collect();
        order.sort_by(|&a, &b| play.gains[b].total_cmp(&play.gains[a]));
        let pick = |v: &DVector<f64>| order.iter().map(|&k| v[k]).collect::<Vec<_>>();
        self.samples
            .push([pick(&play.powers), pick(&play.sinrs), pick(&play.utilities)]);
    }

    /// Mean transmit power per rank.
    pub fn powers(&self) -> Vec<f64> {
        self.means(0)
    }

    pub fn sinrs(&self) -> Vec<f64> {
        self.means(1)
    }

    pub fn utilities(&self) -> Vec<f64> {
        self.means(2)
    }

    /// Per-rank median utility. Sorted squared gains converge in probability to
    /// their quantiles, while the mean of the strong order statistics is pulled
    /// up by the heavy upper tail.
    pub fn median_utilities(&self) -> Vec<f64> {
        (0..self.users)
            .map(|r| {
                let mut v: Vec<f64> = self.samples.iter().map(|s| s[2][r]).collect();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    0.5 * (v[m - 1] + v[m])
                }
            })
            .collect()
    }

    fn means(&self, field: usize) -> Vec<f64> {
        let n = self.samples.len() as f64;
        (0..self.users)
            .map(|r| self.samples.iter().map(|s| s[field][r]).sum::<f64>() / n)
            .collect()
    }

    fn rows(&self, quantiles: &[f64], method: &str) -> Vec<ProfileRow> {
        let (p, g, u) = (self.powers(), self.sinrs(), self.utilities());
        (0..quantiles.len())
            .map(|i| ProfileRow {
                rank: i + 1,
                quantile_gain: quantiles[i],
                power: p[i],
                sinr: g[i],
                utility: u[i],
                method: method.to_string(),
            })
            .collect()
    }
}

fn failed_profile(quantiles: &[f64], method: &str) -> Vec<ProfileRow> {
    (0..quantiles.len())
        .map(|i| ProfileRow {
            rank: i + 1,
            quantile_gain: quantiles[i],
            power: f64::NAN,
            sinr: f64::NAN,
            utility: f64::NAN,
            method: method.to_string(),
        })
        .collect()
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    gcfg: GameConfig,
    errors: Vec<RowError>,
    nonconverged: usize,
}

enum Method {
    Game(GameVariant),
    Rule(&'static str),
    Social,
}

impl Method {
    fn name(&self) -> &str {
        match self {
            Method::Game(v) => v.tag(),
            Method::Rule(r) => r,
            Method::Social => SOCIAL_OPTIMUM,
        }
    }
}

impl Runner<'_> {
    fn trial_plays(
        &mut self,
        cfg: &SystemConfig,
        method: &Method,
        mut sink: impl FnMut(&Play) -> Result<()>,
    ) -> Result<()> {
        let model = self.spec.channel();
        let inputs = match method {
            Method::Rule(_) => Some(LsaInputs::new(
                cfg,
                channel::sorted_gain_quantiles(&model, cfg.users)?,
            )?),
            _ => None,
        };
        for t in 0..self.spec.trials as u64 {
            let play = match method {
                Method::Game(v) => play_game(&model, cfg, self.spec.num_aps, *v, t, &self.gcfg)?,
                Method::Rule(r) => play_power_rule(&model, cfg, inputs.as_ref().unwrap(), r, t)?,
                Method::Social => play_social(&model, cfg, t)?,
            };
            if !play.converged {
                self.nonconverged += 1;
            }
            sink(&play)?;
        }
        Ok(())
    }

    fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self
            .spec
            .variants
            .iter()
            .map(|&v| Method::Game(v))
            .collect();
        match self.spec.experiment {
            Experiment::LsaSweep | Experiment::PowerProfile => {
                m.push(Method::Rule(LSA_DISTRIBUTED));
                m.push(Method::Rule(EQUAL_POWER_PC));
            }
            Experiment::OversatUtility => m.push(Method::Social),
            _ => {}
        }
        m
    }

    fn record(&mut self, users: usize, method: &str, e: &Error) {
        self.errors.push(RowError {
            users,
            method: method.to_string(),
            message: e.to_string(),
        });
    }

    fn sweep(&mut self) -> Result<Vec<ResultRow>> {
        let exp = self.spec.experiment;
        let mut rows = Vec::new();
        for &k in &self.spec.k_values {
            let cfg = self.spec.system(k);
            for method in self.methods() {
                let mut stats = Vec::with_capacity(self.spec.trials);
                let res = self.trial_plays(&cfg, &method, |p| {
                    stats.push(p.stats(cfg.p_max)?);
                    Ok(())
                });
                let row = match res.and_then(|_| aggregate(exp, k, method.name(), &stats)) {
                    Ok(row) => row,
                    Err(e) => {
                        self.record(k, method.name(), &e);
                        failed_row(exp, k, method.name())
                    }
                };
                rows.push(row);
            }
        }
        Ok(rows)
    }

    fn profile(&mut self) -> Result<Vec<ProfileRow>> {
        let k = self.spec.k_values[0];
        let cfg = self.spec.system(k);
        let quantiles = channel::sorted_gain_quantiles(&self.spec.channel(), k)?;
        let mut rows = Vec::new();
        for method in self.methods() {
            let mut acc = RankAverage::new(k);
            match self.trial_plays(&cfg, &method, |p| {
                acc.add(p);
                Ok(())
            }) {
                Ok(()) => rows.extend(acc.rows(&quantiles, method.name())),
                Err(e) => {
                    self.record(k, method.name(), &e);
                    rows.extend(failed_profile(&quantiles, method.name()));
                }
            }
        }
        if self.spec.experiment == Experiment::OversatUtility {
            let predicted = LsaInputs::new(&cfg, quantiles.clone()).and_then(|inp| {
                if k > cfg.processing_gain {
                    lsa::profile_wbe(&inp)
                } else {
                    lsa::profile_orthogonal(&inp)
                }
            });
            match predicted {
                Ok(pr) => rows.extend((0..k).map(|i| ProfileRow {
                    rank: i + 1,
                    quantile_gain: quantiles[i],
                    power: pr.powers[i],
                    sinr: pr.sinrs[i],
                    utility: pr.utilities[i],
                    method: LSA_PREDICTION.to_string(),
                })),
                Err(e) => {
                    self.record(k, LSA_PREDICTION, &e);
                    rows.extend(failed_profile(&quantiles, LSA_PREDICTION));
                }
            }
        }
        Ok(rows)
    }
}

/// Large-system profiles for every `K` of `spec`, independent of its
/// `experiment` field: random codes with MMSE receivers (`LSA_MMSE_K<K>`) and
/// optimal codes, orthogonal or WBE (`LSA_OPTIMAL_CODES_K<K>`). Infeasible
/// profiles are NaN.
pub fn lsa_predict(spec: &ExperimentSpec) -> Result<Vec<ProfileRow>> {
    let model = spec.channel();
    let mut rows = Vec::new();
    for &k in &spec.k_values {
        let cfg = spec.system(k);
        let inputs = LsaInputs::new(&cfg, channel::sorted_gain_quantiles(&model, k)?)?;
        let codes = if k > cfg.processing_gain {
            lsa::profile_wbe(&inputs)
        } else {
            lsa::profile_orthogonal(&inputs)
        };
        for (name, pred) in [
            ("LSA_MMSE", lsa::profile_mmse(&inputs)),
            ("LSA_OPTIMAL_CODES", codes),
        ] {
            let method = format!("{name}_K{k}");
            match pred {
                Ok(pr) => rows.extend((0..k).map(|i| ProfileRow {
                    rank: i + 1,
                    quantile_gain: inputs.quantiles[i],
                    power: pr.powers[i],
                    sinr: pr.sinrs[i],
                    utility: pr.utilities[i],
                    method: method.clone(),
                })),
                Err(_) => rows.extend(failed_profile(&inputs.quantiles, &method)),
            }
        }
    }
    Ok(rows)
}
