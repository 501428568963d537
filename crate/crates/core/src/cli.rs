//! Command-line front end: configuration loading, subcommand dispatch and
//! result files.
//!
//! Configuration is TOML with one table per section (`[device]`,
//! `[alice]`, `[hom.scan]`, ...). Unknown keys are rejected and every
//! nested invariant is checked at load time. All randomness derives from
//! the single `seed` through [`derive_seed`] with the module names listed
//! next to each call.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adaptive_optics::{run_ao_loop, AoConfig};
use crate::channel::{sample_fading, FadingSeries, TurbulenceParams};
use crate::decoy::{analyze, evaluate, DeviceParams, SourceParams, DEFAULT_N_CUT};
use crate::error::{check_range, Error, Result};
use crate::hom::{simulate_hom_scan, HomScanConfig, HomScanResult};
use crate::optimizer::{evaluate_candidate, optimize, OptimizationProblem};
use crate::postselect::{generate_slot_records, run_tradeoff, SlotAggregate, SlotModel, TradeoffConfig};
use crate::seed::derive_seed;
use crate::sync::{simulate_offset, ClockModel, SyncBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyrateSection {
    /// Mode overlap of the interfering pulses.
    pub xi: f64,
}

impl Default for KeyrateSection {
    fn default() -> Self {
        Self { xi: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub xi: f64,
    pub mu_max: f64,
    pub tolerance: f64,
    pub max_evals: usize,
    pub restarts: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let p = OptimizationProblem::default();
        Self {
            xi: p.xi,
            mu_max: p.mu_max,
            tolerance: p.tolerance,
            max_evals: p.max_evals,
            restarts: p.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomSection {
    /// Log-intensity standard deviation of both links for the scan.
    pub scintillation_sigma: f64,
    pub slots: usize,
    /// Ratio threshold of the filtered scan.
    pub threshold: f64,
    #[serde(default)]
    pub scan: HomScanConfig,
}

impl Default for HomSection {
    fn default() -> Self {
        Self {
            scintillation_sigma: 0.514,
            slots: 200_000,
            threshold: 0.98,
            scan: HomScanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostselectSection {
    pub scintillation_sigma: f64,
    pub slots: usize,
    pub pulses_per_slot: f64,
    pub xi: f64,
    #[serde(default)]
    pub tradeoff: TradeoffConfig,
}

impl Default for PostselectSection {
    fn default() -> Self {
        Self {
            scintillation_sigma: 0.985,
            slots: 1_000_000,
            pulses_per_slot: 6.05e5,
            xi: 1.0,
            tradeoff: TradeoffConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoSection {
    pub n_screens: usize,
    /// Aperture diameter over Fried parameter; overrides `link_a.fried_r0`.
    pub d_over_r0: f64,
    #[serde(default)]
    pub loop_config: AoConfig,
}

impl Default for AoSection {
    fn default() -> Self {
        Self {
            n_screens: 20,
            d_over_r0: 4.0,
            loop_config: AoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    pub duration: f64,
    #[serde(default)]
    pub clock: ClockModel,
    #[serde(default)]
    pub budget: SyncBudget,
}

impl Default for SyncSection {
    fn default() -> Self {
        Self {
            duration: 3600.0,
            clock: ClockModel::default(),
            budget: SyncBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub slots: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { slots: 100_000 }
    }
}

fn default_link_b() -> TurbulenceParams {
    TurbulenceParams {
        mean_loss_db: 20.0,
        ..TurbulenceParams::default()
    }
}

/// Everything a run needs. `device`, `alice` and `bob` are required, the
/// remaining sections default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub device: DeviceParams,
    pub alice: SourceParams,
    pub bob: SourceParams,
    #[serde(default)]
    pub link_a: TurbulenceParams,
    #[serde(default = "default_link_b")]
    pub link_b: TurbulenceParams,
    #[serde(default)]
    pub keyrate: KeyrateSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub hom: HomSection,
    #[serde(default)]
    pub postselect: PostselectSection,
    #[serde(default)]
    pub ao: AoSection,
    #[serde(default)]
    pub sync: SyncSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.alice.validate()?;
        self.bob.validate()?;
        self.link_a.validate()?;
        self.link_b.validate()?;
        check_range("keyrate.xi", self.keyrate.xi, 0.0, 1.0)?;
        self.optimization_problem().validate()?;
        check_range("hom.scintillation_sigma", self.hom.scintillation_sigma, 0.0, 10.0)?;
        check_range("hom.threshold", self.hom.threshold, 0.0, 1.0)?;
        if self.hom.slots == 0 {
            return Err(Error::domain("hom.slots", "must be at least 1"));
        }
        check_range("postselect.scintillation_sigma", self.postselect.scintillation_sigma, 0.0, 10.0)?;
        if self.postselect.slots == 0 {
            return Err(Error::domain("postselect.slots", "must be at least 1"));
        }
        self.slot_model().validate()?;
        check_range("postselect.tradeoff.key_threshold", self.postselect.tradeoff.key_threshold, 0.0, 1.0)?;
        if self.postselect.tradeoff.thresholds.is_empty() {
            return Err(Error::domain("postselect.tradeoff.thresholds", "empty grid"));
        }
        for &t in &self.postselect.tradeoff.thresholds {
            check_range("postselect.tradeoff.thresholds", t, 0.0, 1.0)?;
        }
        if !(self.ao.d_over_r0 > 0.0) {
            return Err(Error::domain("ao.d_over_r0", "must be positive"));
        }
        self.ao.loop_config.spgd.validate()?;
        self.sync.clock.validate()?;
        self.sync.budget.validate()?;
        if self.simulate.slots == 0 {
            return Err(Error::domain("simulate.slots", "must be at least 1"));
        }
        Ok(())
    }

    pub fn optimization_problem(&self) -> OptimizationProblem {
        OptimizationProblem {
            device: self.device,
            xi: self.optimizer.xi,
            mu_max: self.optimizer.mu_max,
            tolerance: self.optimizer.tolerance,
            max_evals: self.optimizer.max_evals,
            restarts: self.optimizer.restarts,
            seed: derive_seed(self.seed, "optimizer", 0),
            start_alice: self.alice,
            start_bob: self.bob,
        }
    }

    pub fn slot_model(&self) -> SlotModel {
        SlotModel {
            alice: self.alice,
            bob: self.bob,
            device: self.device,
            xi: self.postselect.xi,
            pulses_per_slot: self.postselect.pulses_per_slot,
        }
    }
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    if text.trim().is_empty() {
        return Err(Error::Config("configuration is empty".into()));
    }
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().replace('\n', " | ")))?;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Parser)]
#[command(name = "fsmdi", about = "Free-space MDI-QKD simulator", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write CSV outputs (default: both CSV and JSON).
    #[arg(long, global = true)]
    pub csv: bool,
    /// Write JSON outputs (default: both CSV and JSON).
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key rate at the configured source parameters.
    Keyrate,
    /// Optimize both sources.
    Optimize {
        /// Also evaluate the published source parameters.
        #[arg(long)]
        compare_table1: bool,
    },
    /// Two-pulse interference delay scan, unfiltered and thresholded.
    Hom,
    /// Threshold sweep over synthetic slot records.
    Postselect,
    /// SPGD fiber-coupling correction over random screens.
    AoDemo,
    /// Clock offset with and without feedback, plus the budget arithmetic.
    SyncDemo,
    /// Fading, post-selection and key rate end to end.
    Simulate,
}

struct Output {
    dir: PathBuf,
    csv: bool,
    json: bool,
}

impl Output {
    fn write(&self, name: &str, body: &[u8]) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::Io(format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        if self.json {
            self.write(name, s.as_bytes())?;
        }
        print!("{s}");
        Ok(())
    }

    fn csv<F>(&self, name: &str, header: &[&str], fill: F) -> Result<()>
    where
        F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
    {
        if !self.csv {
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let run = |w: &mut csv::Writer<Vec<u8>>| -> std::result::Result<(), csv::Error> {
            w.write_record(header)?;
            fill(w)
        };
        run(&mut w).map_err(|e| Error::Io(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &bytes)
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Independent fading series for both links at scintillation `sigma`.
pub fn fading_pair(cfg: &RunConfig, sigma: f64, slots: usize, module: &str) -> Result<(FadingSeries, FadingSeries)> {
    let la = TurbulenceParams {
        scintillation_sigma: sigma,
        ..cfg.link_a
    };
    let lb = TurbulenceParams {
        scintillation_sigma: sigma,
        ..cfg.link_b
    };
    Ok((
        sample_fading(&la, slots, derive_seed(cfg.seed, module, 0))?,
        sample_fading(&lb, slots, derive_seed(cfg.seed, module, 1))?,
    ))
}

#[derive(Serialize)]
struct HomSummary {
    unfiltered: HomScanResult,
    filtered: HomScanResult,
    threshold: f64,
}

#[derive(Serialize)]
struct OptimizeSummary {
    alice: SourceParams,
    bob: SourceParams,
    rate_per_pulse: f64,
    start_rate_per_pulse: f64,
    evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    table1_rate_per_pulse: Option<f64>,
}

#[derive(Serialize)]
struct SyncSummary {
    product: f64,
    product_well_below_limit: bool,
    phase_reference_error: f64,
    free_running_std: f64,
    corrected_std: f64,
}

fn hom_csv(out: &Output, name: &str, r: &HomScanResult) -> Result<()> {
    out.csv(name, &["delay_ps", "coincidences"], |w| {
        for (d, c) in r.delays.iter().zip(&r.coincidences) {
            w.write_record([format!("{}", (d * 1e12).round()), c.to_string()])?;
        }
        Ok(())
    })
}

/// Executes one subcommand on a validated configuration.
pub fn run(command: &Command, cfg: &RunConfig, out_dir: &Path, csv: bool, json: bool) -> Result<()> {
    let (csv, json) = if csv || json { (csv, json) } else { (true, true) };
    let out = Output {
        dir: out_dir.to_path_buf(),
        csv,
        json,
    };
    match command {
        Command::Keyrate => {
            let r = evaluate(&cfg.alice, &cfg.bob, &cfg.device, cfg.keyrate.xi)?;
            out.json("keyrate.json", &r)
        }
        Command::Optimize { compare_table1 } => {
            let r = optimize(&cfg.optimization_problem())?;
            let table1 = compare_table1.then(|| {
                evaluate_candidate(&SourceParams::TABLE1_ALICE, &SourceParams::TABLE1_BOB, &cfg.device, cfg.optimizer.xi)
                    .rate
            });
            out.json(
                "optimize.json",
                &OptimizeSummary {
                    alice: r.alice,
                    bob: r.bob,
                    rate_per_pulse: r.rate,
                    start_rate_per_pulse: r.start_rate,
                    evaluations: r.evaluations,
                    table1_rate_per_pulse: table1,
                },
            )
        }
        Command::Hom => {
            let (fa, fb) = fading_pair(cfg, cfg.hom.scintillation_sigma, cfg.hom.slots, "hom-fading")?;
            let mut scan = cfg.hom.scan.clone();
            scan.duration_slots = cfg.hom.slots;
            scan.ratio_threshold = None;
            let seed = derive_seed(cfg.seed, "hom", 0);
            let unfiltered = simulate_hom_scan(&fa, &fb, &cfg.sync.budget, &scan, seed)?;
            scan.ratio_threshold = Some(cfg.hom.threshold);
            let filtered = simulate_hom_scan(&fa, &fb, &cfg.sync.budget, &scan, derive_seed(cfg.seed, "hom", 1))?;
            hom_csv(&out, "hom.csv", &unfiltered)?;
            hom_csv(&out, "hom_filtered.csv", &filtered)?;
            out.json(
                "hom.json",
                &HomSummary {
                    unfiltered,
                    filtered,
                    threshold: cfg.hom.threshold,
                },
            )
        }
        Command::Postselect => {
            let (fa, fb) = fading_pair(cfg, cfg.postselect.scintillation_sigma, cfg.postselect.slots, "postselect-fading")?;
            let rep = run_tradeoff(
                &fa,
                &fb,
                &cfg.slot_model(),
                &cfg.postselect.tradeoff,
                derive_seed(cfg.seed, "postselect", 0),
            )?;
            out.csv(
                "postselect.csv",
                &["threshold", "retained_fraction", "qber_zz", "qber_xx", "rate_valid", "rate_overall"],
                |w| {
                    for r in &rep.sweep {
                        w.write_record([
                            r.threshold.to_string(),
                            num(r.retained_fraction),
                            num(r.qber_zz),
                            num(r.qber_xx),
                            num(r.rate_per_pulse_valid),
                            num(r.rate_per_pulse_overall),
                        ])?;
                    }
                    Ok(())
                },
            )?;
            out.json("postselect.json", &rep)
        }
        Command::AoDemo => {
            let link = TurbulenceParams {
                fried_r0: cfg.link_a.aperture_diameter / cfg.ao.d_over_r0,
                ..cfg.link_a
            };
            let rep = run_ao_loop(&link, &cfg.ao.loop_config, cfg.ao.n_screens, derive_seed(cfg.seed, "ao", 0))?;
            out.csv("ao.csv", &["screen_index", "eff_before", "eff_after", "improvement_db"], |w| {
                for s in &rep.screens {
                    w.write_record([
                        s.screen_index.to_string(),
                        num(s.eff_before),
                        num(s.eff_after),
                        num(s.improvement_db),
                    ])?;
                }
                Ok(())
            })?;
            out.json("ao.json", &rep)
        }
        Command::SyncDemo => {
            let s = simulate_offset(&cfg.sync.clock, cfg.sync.duration, derive_seed(cfg.seed, "sync", 0))?;
            out.csv("sync.csv", &["t", "free_running", "corrected"], |w| {
                for i in 0..s.t.len() {
                    w.write_record([num(s.t[i]), num(s.free_running[i]), num(s.corrected[i])])?;
                }
                Ok(())
            })?;
            let (product, ok) = cfg.sync.budget.product();
            out.json(
                "sync.json",
                &SyncSummary {
                    product,
                    product_well_below_limit: ok,
                    phase_reference_error: cfg.sync.budget.phase_error(),
                    free_running_std: s.free_std(),
                    corrected_std: s.residual_std(),
                },
            )
        }
        Command::Simulate => simulate(cfg, &out),
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    slots: usize,
    mean_transmittance_a: f64,
    mean_transmittance_b: f64,
    tradeoff: crate::postselect::TradeoffReport,
    all_slots: crate::decoy::KeyRateReport,
}

fn simulate(cfg: &RunConfig, out: &Output) -> Result<()> {
    let n = cfg.simulate.slots;
    let (fa, fb) = fading_pair(cfg, cfg.postselect.scintillation_sigma, n, "simulate-fading")?;
    out.csv("fading.csv", &["slot_index", "transmittance_a", "transmittance_b"], |w| {
        for (i, (a, b)) in fa.transmittances.iter().zip(&fb.transmittances).enumerate() {
            w.write_record([i.to_string(), num(*a), num(*b)])?;
        }
        Ok(())
    })?;
    let model = cfg.slot_model();
    let seed = derive_seed(cfg.seed, "simulate", 0);
    let tradeoff = run_tradeoff(&fa, &fb, &model, &cfg.postselect.tradeoff, seed)?;
    let mut all = SlotAggregate::default();
    for r in generate_slot_records(&fa, &fb, &model, seed)? {
        all.add(&r);
    }
    let all_slots = analyze(&cfg.alice, &cfg.bob, &cfg.device, &all.statistics(&model.sent_per_slot()), DEFAULT_N_CUT)?;
    out.csv(
        "postselect.csv",
        &["threshold", "retained_fraction", "qber_zz", "qber_xx", "rate_valid", "rate_overall"],
        |w| {
            for r in &tradeoff.sweep {
                w.write_record([
                    r.threshold.to_string(),
                    num(r.retained_fraction),
                    num(r.qber_zz),
                    num(r.qber_xx),
                    num(r.rate_per_pulse_valid),
                    num(r.rate_per_pulse_overall),
                ])?;
            }
            Ok(())
        },
    )?;
    out.json(
        "simulate.json",
        &SimulateSummary {
            slots: n,
            mean_transmittance_a: fa.mean(),
            mean_transmittance_b: fb.mean(),
            tradeoff,
            all_slots,
        },
    )
}

/// Exit status for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

/// One-line JSON error record.
pub fn error_record(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

/// Parses arguments, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = (|| {
        let path = cli
            .common
            .config
            .as_deref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut cfg = load_config(path)?;
        if let Some(s) = cli.common.seed {
            cfg.seed = s;
        }
        run(&cli.command, &cfg, &cli.common.out, cli.common.csv, cli.common.json)
    })();
    match result {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUNDLED: &str = include_str!("../configs/table1.cfg");

    #[test]
    fn bundled_config_loads() {
        let c = parse_config(BUNDLED).unwrap();
        assert_eq!(c.alice.mu_z, 0.335);
        assert_eq!(c.bob.mu_z, 0.488);
        assert_eq!(c.alice.p_z, 0.498);
        assert_eq!(c.bob.p_z, 0.504);
    }

    #[test]
    fn probability_simplex_violation_rejected() {
        let bad = BUNDLED.replacen("p_z = 0.498", "p_z = 0.398", 1);
        let e = parse_config(&bad).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("sum to 1"), "{e}");
    }

    #[test]
    fn empty_and_unknown_keys_rejected() {
        assert!(matches!(parse_config(" \n"), Err(Error::Config(_))));
        let bad = BUNDLED.replacen("[device]", "[device]\nbogus = 1", 1);
        let e = parse_config(&bad).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn error_record_is_one_line() {
        let r = error_record(&Error::Config("a\nb".into()));
        assert!(!r.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&r).unwrap();
        assert_eq!(v["error"]["kind"], "config");
    }
}
