//! Experiment configs, seed fan-out and CSV/JSON output.
//!
//! An [`ExperimentConfig`] names one of four experiments. Each expands into
//! a few arms (a network size plus an optional teacher), and each arm runs
//! once per seed. Output layout under `output_dir`:
//!
//! ```text
//! <arm>/seed_<s>.csv         per-epoch curve of one run
//! <arm>/ledger_seed_<s>.json privacy ledger (private arms only)
//! <arm>/summary.json         pointwise median, p15 and p85 across seeds
//! teacher.json               best 64-hidden policy (teacher_vs_small only)
//! ```
//!
//! Seed `s` of every arm trains from the streams of
//! `derive_seed(master_seed, "seed", s)`, so a run depends on its own seed
//! value and never on its position in the seed list.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{Budget, BudgetError, KSchedule, PricingConfig};
use crate::env::Layout;
use crate::nn::{Checkpoint, NetError, PolicyNet, DEFAULT_ETA};
use crate::ppo::{PpoConfig, PpoError};
use crate::privacy::{lipschitz_upper_bound, Head, MechanismConfig};
use crate::rng::derive_seed;
use crate::student::{
    run_scratch, run_student, EpochRow, KickstartConfig, KickstartSetup, PrivacySetup, RunOutcome,
    RunSpec,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment {0} needs a teacher checkpoint")]
    MissingCheckpoint(String),
    #[error("{path}: epochs {found:?} do not line up with {expected:?}")]
    MisalignedEpochs {
        path: PathBuf,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no seed CSV found in {0}")]
    NoRuns(PathBuf),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    /// large and small networks trained from scratch
    TeacherVsSmall,
    /// a small student kickstarted by the exact teacher policy
    KickstartNoprivacy,
    /// privacy-aware students under several vanishing coefficients
    PrivateKickstart,
    /// privacy-aware against privacy-unaware (`λ = 0`) students
    PrivacyUnaware,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::TeacherVsSmall => "teacher_vs_small",
            ExperimentId::KickstartNoprivacy => "kickstart_noprivacy",
            ExperimentId::PrivateKickstart => "private_kickstart",
            ExperimentId::PrivacyUnaware => "privacy_unaware",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub layout: Layout,
    /// probability floor of every policy head
    pub eta: f64,
    pub ppo: PpoConfig,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub teacher_checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub kickstart: KickstartConfig,
    pub k0: f64,
    /// one student arm per coefficient
    pub vanish_c: Vec<f64>,
    pub k_min: f64,
    pub eps_max: f64,
    pub delta_max: f64,
    /// slack τ of the restricted simplex
    pub tau: f64,
    /// adjacency radius of the observation space
    pub b: f64,
    /// Lipschitz constant of the teacher; bounded from its weights when absent
    pub lipschitz: Option<f64>,
    pub delta_accuracy: f64,
    pub confidence: f64,
    /// add a from-scratch arm with the student network
    pub include_scratch: bool,
    /// threads for the seed fan-out; 0 uses every available core
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentId::TeacherVsSmall,
            master_seed: 0,
            seeds: (0..30).collect(),
            epochs: 100,
            layout: Layout::default(),
            eta: DEFAULT_ETA,
            ppo: PpoConfig::default(),
            teacher_hidden: vec![64, 64],
            student_hidden: vec![32, 32],
            teacher_checkpoint: None,
            kickstart: KickstartConfig::default(),
            k0: 5.0,
            vanish_c: vec![0.1, 0.3],
            k_min: 0.01,
            eps_max: 1e6,
            delta_max: 1e6,
            tau: 1e-3,
            b: 0.01,
            lipschitz: None,
            delta_accuracy: 0.02,
            confidence: 0.95,
            include_scratch: true,
            workers: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Who teaches an arm, if anyone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmTeacher {
    None,
    Exact { lambda: f64 },
    Private { lambda: f64, vanish_c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub hidden: Vec<usize>,
    pub teacher: ArmTeacher,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |s: &str| Err(ExperimentError::InvalidConfig(s.into()));
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.teacher_hidden.is_empty() || self.student_hidden.is_empty() {
            return bad("hidden layer lists must be non-empty");
        }
        self.layout
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        self.ppo.validate()?;
        self.kickstart.validate()?;
        for &c in &self.vanish_c {
            KSchedule::new(self.k0, c, self.k_min)?;
        }
        Ok(())
    }

    /// The arms of this experiment, in output order.
    pub fn arms(&self) -> Vec<Arm> {
        let student = |name: String, teacher| Arm {
            name,
            hidden: self.student_hidden.clone(),
            teacher,
        };
        let lambda = self.kickstart.lambda;
        let mut arms = match self.experiment {
            ExperimentId::TeacherVsSmall => {
                return vec![
                    Arm {
                        name: "teacher".into(),
                        hidden: self.teacher_hidden.clone(),
                        teacher: ArmTeacher::None,
                    },
                    student("small".into(), ArmTeacher::None),
                ];
            }
            ExperimentId::KickstartNoprivacy => {
                vec![student("kickstart".into(), ArmTeacher::Exact { lambda: 0.0 })]
            }
            ExperimentId::PrivateKickstart => self
                .vanish_c
                .iter()
                .map(|&c| student(format!("private_c{c}"), ArmTeacher::Private { lambda, vanish_c: c }))
                .collect(),
            ExperimentId::PrivacyUnaware => self
                .vanish_c
                .iter()
                .flat_map(|&c| {
                    [
                        student(format!("aware_c{c}"), ArmTeacher::Private { lambda, vanish_c: c }),
                        student(
                            format!("unaware_c{c}"),
                            ArmTeacher::Private {
                                lambda: 0.0,
                                vanish_c: c,
                            },
                        ),
                    ]
                })
                .collect(),
        };
        if self.include_scratch {
            arms.push(student("scratch".into(), ArmTeacher::None));
        }
        arms
    }

    pub fn run_spec(&self, hidden: &[usize]) -> RunSpec {
        RunSpec {
            layout: self.layout.clone(),
            hidden: hidden.to_vec(),
            eta: self.eta,
            ppo: self.ppo,
            epochs: self.epochs,
        }
    }

    /// The kickstart setup of `arm`, or `None` for a scratch arm.
    pub fn setup(&self, arm: &Arm, teacher: Option<&PolicyNet>) -> Result<Option<KickstartSetup>, ExperimentError> {
        let (lambda, privacy) = match arm.teacher {
            ArmTeacher::None => return Ok(None),
            ArmTeacher::Exact { lambda } => (lambda, None),
            ArmTeacher::Private { lambda, vanish_c } => (lambda, Some(vanish_c)),
        };
        let teacher = teacher.ok_or_else(|| ExperimentError::MissingCheckpoint(self.experiment.name().into()))?;
        let privacy = match privacy {
            None => None,
            Some(c) => {
                let lipschitz = self.lipschitz.unwrap_or_else(|| {
                    lipschitz_upper_bound(&teacher.mlp, Head::FlooredSoftmax { eta: teacher.eta })
                });
                Some(PrivacySetup {
                    schedule: KSchedule::new(self.k0, c, self.k_min)?,
                    budget: Budget {
                        eps_max: self.eps_max,
                        delta_max: self.delta_max,
                    },
                    pricing: PricingConfig {
                        template: MechanismConfig {
                            k: self.k0,
                            eta: teacher.eta,
                            tau: self.tau,
                            b: self.b,
                            lipschitz,
                            m: teacher.m(),
                        },
                        delta_accuracy: self.delta_accuracy,
                        confidence: self.confidence,
                    },
                })
            }
        };
        Ok(Some(KickstartSetup {
            teacher: teacher.clone(),
            privacy,
            kickstart: KickstartConfig {
                lambda,
                ..self.kickstart
            },
        }))
    }

    fn worker_count(&self) -> usize {
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let w = if self.workers == 0 { available } else { self.workers };
        w.clamp(1, self.seeds.len())
    }
}

/// One seed of one arm.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub arm: Arm,
    /// in seed-list order
    pub runs: Vec<SeedRun>,
    pub summary: CurveSummary,
}

/// Runs every seed of `arm`, fanning seeds out over worker threads.
pub fn run_arm(cfg: &ExperimentConfig, arm: &Arm, teacher: Option<&PolicyNet>) -> Result<ArmResult, ExperimentError> {
    let spec = cfg.run_spec(&arm.hidden);
    let setup = cfg.setup(arm, teacher)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutcome, PpoError>>>> =
        Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..cfg.worker_count() {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let run_seed = derive_seed(cfg.master_seed, "seed", seed);
                let result = match &setup {
                    Some(s) => run_student(&spec, s, run_seed),
                    None => run_scratch(&spec, run_seed),
                };
                slots.lock().expect("worker panicked")[i] = Some(result);
            });
        }
    });
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for (slot, &seed) in slots.into_inner().expect("worker panicked").into_iter().zip(&cfg.seeds) {
        let outcome = slot.expect("every seed is claimed by a worker")?;
        runs.push(SeedRun { seed, outcome });
    }
    let curves: Vec<&[EpochRow]> = runs.iter().map(|r| r.outcome.rows.as_slice()).collect();
    let summary = summarize_rows(&arm.name, &curves);
    Ok(ArmResult {
        arm: arm.clone(),
        runs,
        summary,
    })
}

/// Runs a whole experiment and writes its outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ArmResult>, ExperimentError> {
    cfg.validate()?;
    let arms = cfg.arms();
    let needs_teacher = arms.iter().any(|a| a.teacher != ArmTeacher::None);
    let teacher = if needs_teacher {
        let path = cfg
            .teacher_checkpoint
            .as_ref()
            .filter(|p| p.exists())
            .ok_or_else(|| ExperimentError::MissingCheckpoint(cfg.experiment.name().into()))?;
        Some(Checkpoint::load(path)?.into_policy()?)
    } else {
        None
    };
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let mut results = Vec::with_capacity(arms.len());
    for arm in &arms {
        let result = run_arm(cfg, arm, teacher.as_ref())?;
        write_arm(&cfg.output_dir, &result)?;
        results.push(result);
    }
    if cfg.experiment == ExperimentId::TeacherVsSmall {
        if let Some(best) = best_run(&results[0].runs) {
            Checkpoint::from_policy(&best.outcome.agent.policy).save(&cfg.output_dir.join("teacher.json"))?;
        }
    }
    Ok(results)
}

fn write_arm(root: &Path, result: &ArmResult) -> Result<(), ExperimentError> {
    let dir = root.join(&result.arm.name);
    fs::create_dir_all(&dir)?;
    for run in &result.runs {
        write_curve(&dir.join(format!("seed_{}.csv", run.seed)), &run.outcome.rows)?;
        if let Some(ledger) = &run.outcome.ledger {
            fs::write(dir.join(format!("ledger_seed_{}.json", run.seed)), ledger.to_json()?)?;
        }
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;
    Ok(())
}

/// The run with the highest [`final_return`]; ties go to the smaller seed.
pub fn best_run(runs: &[SeedRun]) -> Option<&SeedRun> {
    let score = |r: &SeedRun| final_return(&r.outcome.rows, 10).unwrap_or(f64::NEG_INFINITY);
    runs.iter().fold(None, |best: Option<&SeedRun>, r| match best {
        Some(b) if score(b) > score(r) || (score(b) == score(r) && b.seed < r.seed) => Some(b),
        _ => Some(r),
    })
}

/// Mean of `mean_return` over the last `window` epochs that have one.
pub fn final_return(rows: &[EpochRow], window: usize) -> Option<f64> {
    let tail = &rows[rows.len().saturating_sub(window)..];
    let vals: Vec<f64> = tail.iter().filter_map(|r| r.mean_return).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn write_curve(path: &Path, rows: &[EpochRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<EpochRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Nearest-rank percentile: the smallest sample with at least `p`% of the
/// samples at or below it.
pub fn nearest_rank(xs: &[f64], p: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Pointwise spread of the per-epoch median return across seeds. Epochs in
/// which no seed finished an episode hold `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub name: String,
    pub seeds: usize,
    pub epoch: Vec<usize>,
    pub env_steps: Vec<usize>,
    pub median: Vec<Option<f64>>,
    pub p15: Vec<Option<f64>>,
    pub p85: Vec<Option<f64>>,
}

impl CurveSummary {
    /// Environment steps at the first epoch whose median reaches `threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<usize> {
        self.median
            .iter()
            .position(|m| m.is_some_and(|m| m >= threshold))
            .map(|i| self.env_steps[i])
    }
}

/// Summary of aligned curves; the first curve fixes the epoch axis.
pub fn summarize_rows(name: &str, curves: &[&[EpochRow]]) -> CurveSummary {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let mut s = CurveSummary {
        name: name.to_string(),
        seeds: curves.len(),
        epoch: Vec::with_capacity(len),
        env_steps: Vec::with_capacity(len),
        median: Vec::with_capacity(len),
        p15: Vec::with_capacity(len),
        p85: Vec::with_capacity(len),
    };
    for e in 0..len {
        let vals: Vec<f64> = curves.iter().filter_map(|c| c[e].median_return).collect();
        s.epoch.push(curves[0][e].epoch);
        s.env_steps.push(curves[0][e].env_steps);
        s.median.push(nearest_rank(&vals, 50.0));
        s.p15.push(nearest_rank(&vals, 15.0));
        s.p85.push(nearest_rank(&vals, 85.0));
    }
    s
}

/// Reads every `seed_*.csv` in `dir` and summarizes them.
pub fn summarize(dir: &Path) -> Result<CurveSummary, ExperimentError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ExperimentError::NoRuns(dir.to_path_buf()));
    }
    let curves = paths.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>, _>>()?;
    let expected: Vec<usize> = curves[0].iter().map(|r| r.epoch).collect();
    for (path, curve) in paths.iter().zip(&curves) {
        let found: Vec<usize> = curve.iter().map(|r| r.epoch).collect();
        if found != expected {
            return Err(ExperimentError::MisalignedEpochs {
                path: path.clone(),
                expected,
                found,
            });
        }
    }
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("runs");
    let refs: Vec<&[EpochRow]> = curves.iter().map(|c| c.as_slice()).collect();
    Ok(summarize_rows(name, &refs))
}
