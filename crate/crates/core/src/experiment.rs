//! Monte-Carlo experiment driver: configuration, seeding, parallel trials and
//! result files.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::alternating::{inject_truth, run_alternating_map, AlternatingConfig, Variant};
use crate::ep::{EpConfig, VrPrior};
use crate::error::{Error, Result};
use crate::geometry::{fresnel_distance, ArrayConfig};
use crate::grid::{build_fixed_grid, PolarGrid};
use crate::ifvbi::IfvbiConfig;
use crate::metrics::{nmse, vr_error_rate};
use crate::omp::{run_subarray_omp, OmpConfig};
use crate::priors::{calibrate_markov, HierarchicalPriorParams, Markov2DParams};
use crate::refine::GridRefineConfig;
use crate::scene::{observe, sample_scene, ChannelScene, GainLaw, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub m_x: usize,
    pub m_z: usize,
    pub k_x: usize,
    pub k_z: usize,
    pub carrier_hz: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self { m_x: 64, m_z: 8, k_x: 8, k_z: 2, carrier_hz: 30e9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub m1: usize,
    pub m2: usize,
    pub n_r: usize,
    /// `r_min` in units of the Fresnel distance.
    pub r_min_fresnel: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { m1: 32, m2: 8, n_r: 4, r_min_fresnel: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub paths: usize,
    pub kappa: f64,
    pub p10_x: f64,
    pub p10_z: f64,
    pub gain_law: GainLaw,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { paths: 4, kappa: 0.5, p10_x: 0.2, p10_z: 0.2, gain_law: GainLaw::ComplexGaussian }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSection {
    pub outer_iters: usize,
    pub ifvbi: IfvbiConfig,
    pub ep: EpConfig,
    pub refine: GridRefineConfig,
    pub omp: OmpConfig,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        Self {
            outer_iters: 30,
            ifvbi: IfvbiConfig::default(),
            ep: EpConfig::default(),
            refine: GridRefineConfig::default(),
            omp: OmpConfig::default(),
        }
    }
}

/// Full experiment description. Every section has defaults (the desk-scale
/// setup), so a TOML file only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub array: ArraySection,
    pub grid: GridSection,
    pub scene: SceneSection,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub variants: Vec<Variant>,
    pub algorithm: AlgorithmSection,
    pub output: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// When false, `wall_ms` is written as 0 so reruns are byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            array: ArraySection::default(),
            grid: GridSection::default(),
            scene: SceneSection::default(),
            snr_db: vec![-4.0],
            trials: 50,
            base_seed: 0,
            variants: Variant::ALL.to_vec(),
            algorithm: AlgorithmSection::default(),
            output: PathBuf::from("results.csv"),
            threads: 0,
            record_timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid.m1", self.grid.m1),
            ("grid.m2", self.grid.m2),
            ("grid.n_r", self.grid.n_r),
            ("scene.paths", self.scene.paths),
            ("trials", self.trials),
            ("algorithm.outer_iters", self.algorithm.outer_iters),
            ("algorithm.ifvbi.max_iter", self.algorithm.ifvbi.max_iter),
            ("algorithm.ep.iterations", self.algorithm.ep.iterations),
            ("algorithm.ep.bp_sweeps", self.algorithm.ep.bp_sweeps),
            ("algorithm.omp.max_atoms", self.algorithm.omp.max_atoms),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("snr_db needs at least one finite value".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("at least one variant is required".into()));
        }
        if !(self.grid.r_min_fresnel > 1.0) {
            return Err(Error::InvalidArgument("grid.r_min_fresnel must exceed 1".into()));
        }
        let eta = self.algorithm.ep.damping;
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidArgument("damping must lie in (0, 1)".into()));
        }
        self.algorithm.refine.validate()?;
        self.prepare().map(|_| ())
    }

    /// Builds the array, grid, priors and per-variant settings.
    pub fn prepare(&self) -> Result<Prepared> {
        let a = &self.array;
        let array = ArrayConfig::new(a.m_x, a.m_z, a.k_x, a.k_z, a.carrier_hz)?;
        let r_min = self.grid.r_min_fresnel * fresnel_distance(&array);
        let grid = build_fixed_grid(&array, self.grid.m1, self.grid.m2, self.grid.n_r, r_min)?;
        let markov = calibrate_markov(self.scene.kappa, self.scene.p10_x, self.scene.p10_z)?;
        let priors = HierarchicalPriorParams::with_defaults(grid.len(), self.scene.paths);
        let alg = &self.algorithm;
        let base = AlternatingConfig {
            outer_iters: alg.outer_iters,
            ifvbi: alg.ifvbi.clone(),
            ep: alg.ep.clone(),
            refine: alg.refine.clone(),
            refine_grid: true,
            update_vr: true,
            vr_prior: VrPrior::Markov2D(markov),
        };
        Ok(Prepared { array, grid, markov, priors, base, omp: alg.omp.clone() })
    }

    pub fn summary_path(&self) -> PathBuf {
        self.output.with_extension("summary.csv")
    }

    pub fn traces_path(&self) -> PathBuf {
        self.output.with_extension("traces.csv")
    }

    /// Hash of the settings that determine the results; the output path and
    /// thread count are left out.
    fn digest(&self) -> String {
        let canon = Self { output: PathBuf::new(), threads: 0, ..self.clone() };
        hex::encode(Sha256::digest(canon.to_toml().as_bytes()))
    }
}

/// Everything a trial needs that does not depend on the seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub array: ArrayConfig,
    pub grid: PolarGrid,
    pub markov: Markov2DParams,
    pub priors: HierarchicalPriorParams,
    pub base: AlternatingConfig,
    pub omp: OmpConfig,
}

/// Scene seed of trial `t`.
pub fn scene_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed.wrapping_add(trial as u64)
}

/// Noise seed derived from the scene seed. It does not depend on the SNR, so
/// the SNR sweep rescales one noise draw per trial.
pub fn noise_seed(scene_seed: u64) -> u64 {
    scene_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub variant: Variant,
    pub snr_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub scene_hash: String,
    pub nmse: f64,
    pub vr_error_rate: f64,
    pub nmse_trace: Vec<f64>,
    pub vr_trace: Vec<f64>,
    pub iterations_run: usize,
    pub wall_ms: f64,
    /// Set when the trial aborted; the metrics are NaN then.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub nmse: f64,
    pub vr_error_rate: f64,
    pub nmse_trace: Vec<f64>,
    pub vr_trace: Vec<f64>,
    pub iterations_run: usize,
    pub h_hat: Vec<Complex64>,
}

/// Runs one variant on one observation.
pub fn run_variant(
    prep: &Prepared,
    variant: Variant,
    scene: &ChannelScene,
    obs: &Observation,
) -> Result<TrialOutcome> {
    if variant == Variant::SubarrayOmp {
        let out = run_subarray_omp(&prep.array, &obs.y, &prep.grid, obs.noise_precision, &prep.omp)?;
        let n = nmse(&out.h_hat, &scene.h)?;
        let e = vr_error_rate(scene, &out.masks);
        return Ok(TrialOutcome {
            nmse: n,
            vr_error_rate: e,
            nmse_trace: vec![n],
            vr_trace: vec![e],
            iterations_run: 1,
            h_hat: out.h_hat,
        });
    }
    let mut grid = prep.grid.clone();
    if variant == Variant::GenieAided {
        inject_truth(&mut grid, scene);
    }
    let alg = prep.base.for_variant(variant);
    let out = run_alternating_map(&prep.array, &obs.y, grid, &prep.priors, &alg, Some(scene))?;
    Ok(TrialOutcome {
        nmse: nmse(&out.h_hat, &scene.h)?,
        vr_error_rate: vr_error_rate(scene, &out.masks),
        nmse_trace: out.nmse_trace,
        vr_trace: out.vr_trace,
        iterations_run: out.iterations_run,
        h_hat: out.h_hat,
    })
}

/// Scene and observation of `(trial, snr)`; identical for every variant.
pub fn trial_data(cfg: &ExperimentConfig, prep: &Prepared, trial: usize, snr_db: f64) -> Result<(ChannelScene, Observation)> {
    let seed = scene_seed(cfg.base_seed, trial);
    let scene = sample_scene(&prep.array, &prep.grid, cfg.scene.paths, cfg.scene.gain_law, &prep.markov, seed)?;
    let obs = observe(&scene, snr_db, noise_seed(seed))?;
    Ok((scene, obs))
}

pub fn run_trial(cfg: &ExperimentConfig, prep: &Prepared, variant: Variant, snr_db: f64, trial: usize) -> TrialResult {
    let seed = scene_seed(cfg.base_seed, trial);
    let start = Instant::now();
    let mut scene_hash = String::new();
    let outcome = trial_data(cfg, prep, trial, snr_db).and_then(|(scene, obs)| {
        scene_hash = scene.hash();
        run_variant(prep, variant, &scene, &obs)
    });
    let wall_ms = if cfg.record_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    match outcome {
        Ok(o) => TrialResult {
            variant,
            snr_db,
            trial,
            seed,
            scene_hash,
            nmse: o.nmse,
            vr_error_rate: o.vr_error_rate,
            nmse_trace: o.nmse_trace,
            vr_trace: o.vr_trace,
            iterations_run: o.iterations_run,
            wall_ms,
            error: None,
        },
        Err(e) => TrialResult {
            variant,
            snr_db,
            trial,
            seed,
            scene_hash,
            nmse: f64::NAN,
            vr_error_rate: f64::NAN,
            nmse_trace: vec![],
            vr_trace: vec![],
            iterations_run: 0,
            wall_ms,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub variant: Variant,
    pub snr_db: f64,
    pub trials: usize,
    pub aborted: usize,
    pub mean_nmse: f64,
    pub mean_vr_error_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn aborted(&self) -> usize {
        self.trials.iter().filter(|t| t.error.is_some()).count()
    }

    pub fn aggregate(&self, variant: Variant, snr_db: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant && a.snr_db == snr_db)
    }
}

/// Runs every `(variant, snr, trial)` without touching the file system.
/// Results come back in `(variant, snr, trial)` order whatever the thread
/// count.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prep = cfg.prepare()?;
    let mut tasks = Vec::new();
    for &v in &cfg.variants {
        for &snr in &cfg.snr_db {
            for t in 0..cfg.trials {
                tasks.push((v, snr, t));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let trials: Vec<TrialResult> =
        pool.install(|| tasks.par_iter().map(|&(v, snr, t)| run_trial(cfg, &prep, v, snr, t)).collect());
    let aggregates = aggregate(cfg, &trials);
    Ok(ExperimentReport { trials, aggregates })
}

fn aggregate(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &v in &cfg.variants {
        for &snr in &cfg.snr_db {
            let rows: Vec<&TrialResult> = trials.iter().filter(|t| t.variant == v && t.snr_db == snr).collect();
            let ok: Vec<&&TrialResult> = rows.iter().filter(|t| t.error.is_none()).collect();
            let mean = |f: fn(&TrialResult) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|t| f(t)).sum::<f64>() / ok.len() as f64
                }
            };
            out.push(Aggregate {
                variant: v,
                snr_db: snr,
                trials: rows.len(),
                aborted: rows.len() - ok.len(),
                mean_nmse: mean(|t| t.nmse),
                mean_vr_error_rate: mean(|t| t.vr_error_rate),
            });
        }
    }
    out
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("output directory {} does not exist", dir.display()),
            )));
        }
    }
    Ok(File::create(path)?)
}

/// Runs the experiment and writes the per-trial file, the aggregate file
/// (`<out>.summary.csv`) and the trace file (`<out>.traces.csv`). Output paths
/// are opened before any trial runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut files = [create(&cfg.output)?, create(&cfg.summary_path())?, create(&cfg.traces_path())?];
    let report = run_trials(cfg)?;
    let [main, summary, traces] = &mut files;
    main.write_all(render_trials(cfg, &report).as_bytes())?;
    summary.write_all(render_summary(cfg, &report).as_bytes())?;
    traces.write_all(render_traces(&report).as_bytes())?;
    Ok(report)
}

fn metadata(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("# snr: ||h||^2/M over noise variance per antenna\n");
    s.push_str("# ground truth: exact spherical steering; estimators: Fresnel dictionary\n");
    s.push_str(&format!("# trials_per_point: {}\n", cfg.trials));
    s.push_str("# aggregate: arithmetic mean over non-aborted trials\n");
    s.push_str(&format!("# config_sha256: {}\n", cfg.digest()));
    s
}

fn csv_string<F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>>(f: F) -> String {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w).expect("writing to memory");
        w.flush().expect("writing to memory");
    }
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn render_trials(cfg: &ExperimentConfig, report: &ExperimentReport) -> String {
    let mut s = metadata(cfg);
    for t in report.trials.iter().filter(|t| t.error.is_some()) {
        s.push_str(&format!(
            "# aborted variant={} snr_db={} trial={} seed={}: {}\n",
            t.variant,
            t.snr_db,
            t.trial,
            t.seed,
            t.error.as_deref().unwrap_or_default().replace('\n', " ")
        ));
    }
    s + &csv_string(|w| {
        w.write_record([
            "variant", "snr_db", "trial", "seed", "scene_hash", "nmse", "vr_error_rate", "iterations_run", "wall_ms",
        ])?;
        for t in &report.trials {
            w.write_record([
                t.variant.name().to_string(),
                t.snr_db.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.scene_hash.clone(),
                t.nmse.to_string(),
                t.vr_error_rate.to_string(),
                t.iterations_run.to_string(),
                format!("{:.3}", t.wall_ms),
            ])?;
        }
        Ok(())
    })
}

pub fn render_summary(cfg: &ExperimentConfig, report: &ExperimentReport) -> String {
    metadata(cfg)
        + &csv_string(|w| {
            w.write_record(["variant", "snr_db", "trials", "aborted", "mean_nmse", "mean_nmse_db", "mean_vr_error_rate"])?;
            for a in &report.aggregates {
                w.write_record([
                    a.variant.name().to_string(),
                    a.snr_db.to_string(),
                    a.trials.to_string(),
                    a.aborted.to_string(),
                    a.mean_nmse.to_string(),
                    (10.0 * a.mean_nmse.log10()).to_string(),
                    a.mean_vr_error_rate.to_string(),
                ])?;
            }
            Ok(())
        })
}

pub fn render_traces(report: &ExperimentReport) -> String {
    csv_string(|w| {
        w.write_record(["variant", "snr_db", "trial", "iteration", "nmse", "vr_error_rate"])?;
        for t in &report.trials {
            for (i, (n, e)) in t.nmse_trace.iter().zip(&t.vr_trace).enumerate() {
                w.write_record([
                    t.variant.name().to_string(),
                    t.snr_db.to_string(),
                    t.trial.to_string(),
                    (i + 1).to_string(),
                    n.to_string(),
                    e.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}
