//! The optimization loop: trial evaluation, successive-halving brackets,
//! surrogate-guided proposals, ensemble construction and run artifacts.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deadline::Deadline;
use crate::ensemble::{ensemble_select, Candidate, EnsembleMember, EnsembleModel, DEFAULT_ENSEMBLE_SIZE};
use crate::error::{Error, Result};
use crate::fidelity::{promote, sh_schedule, truncate, window_length, BudgetSpec};
use crate::metalearn::{build_prior, normalized_tails, KbConfig, KbEntry, KnowledgeBase, PriorModel, PriorOptions, SourceWeight};
use crate::metrics::{panel_loss, LossKind};
use crate::pipeline::{template_defaults, template_space, Fault, Pipeline};
use crate::series::{load_dataset, temporal_holdout, Forecast, PanelDataset, TemporalSplit};
use crate::space::{ConfigSpace, Configuration};
use crate::surrogate::{HistoryPoint, ProposalOptions, Proposer, Surrogate, TrialHistory};

/// Loss assigned to failed trials before any trial has succeeded.
pub const DEFAULT_PENALTY: f64 = 1e6;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "CHRONO_WORKERS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    TemplatesOnly,
    TemplatesMf,
    TemplatesWs,
    #[default]
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::TemplatesOnly,
        AblationMode::TemplatesMf,
        AblationMode::TemplatesWs,
        AblationMode::Full,
    ];

    pub fn multi_fidelity(self) -> bool {
        matches!(self, AblationMode::TemplatesMf | AblationMode::Full)
    }

    pub fn warm_start(self) -> bool {
        matches!(self, AblationMode::TemplatesWs | AblationMode::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::TemplatesOnly => "templates_only",
            AblationMode::TemplatesMf => "templates_mf",
            AblationMode::TemplatesWs => "templates_ws",
            AblationMode::Full => "full",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub time_budget_s: f64,
    pub grace_period_s: f64,
    pub seed: u64,
    pub metric: LossKind,
    pub mode: AblationMode,
    /// Prior confidence, in trials.
    pub beta: f64,
    /// Configurations kept per dataset in the knowledge base.
    pub n_c: usize,
    /// Closest datasets used for the prior.
    pub n_d: usize,
    /// Tail length compared between datasets.
    pub tail_length: usize,
    pub eta: usize,
    pub b_min: f64,
    pub l_min: usize,
    pub ensemble_size: usize,
    pub workers: usize,
    /// Stop after this many trials even if time remains.
    pub max_trials: Option<usize>,
    /// Per-trial wall-time cap on top of the run deadline.
    pub trial_timeout_s: Option<f64>,
    pub initial_design: usize,
    /// Configurations entering each successive-halving bracket.
    pub bracket_size: usize,
    #[serde(skip)]
    pub faults: BTreeMap<usize, Fault>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let budget = BudgetSpec::default();
        let prior = PriorOptions::default();
        Self {
            time_budget_s: 300.0,
            grace_period_s: 60.0,
            seed: 0,
            metric: LossKind::Mase,
            mode: AblationMode::Full,
            beta: crate::surrogate::DEFAULT_BETA,
            n_c: 10,
            n_d: prior.n_d,
            tail_length: prior.h,
            eta: budget.eta,
            b_min: budget.b_min,
            l_min: budget.l_min,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            workers: 1,
            max_trials: None,
            trial_timeout_s: None,
            initial_design: 10,
            bracket_size: 9,
            faults: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_budget_s > 0.0) {
            return Err(Error::InvalidConfig("time budget must be positive".into()));
        }
        if !(self.grace_period_s >= 0.0 && self.grace_period_s <= self.time_budget_s) {
            return Err(Error::InvalidConfig("grace period must lie between 0 and the time budget".into()));
        }
        if self.workers == 0 || self.ensemble_size == 0 || self.initial_design == 0 || self.bracket_size == 0 {
            return Err(Error::InvalidConfig(
                "workers, ensemble size, initial design and bracket size must be positive".into(),
            ));
        }
        if self.n_c == 0 || self.n_d == 0 || self.tail_length == 0 {
            return Err(Error::InvalidConfig("n_c, n_d and the tail length must be positive".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        if self.trial_timeout_s.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidConfig("trial timeout must be positive".into()));
        }
        self.budget_spec().validate()
    }

    pub fn budget_spec(&self) -> BudgetSpec {
        BudgetSpec {
            b_min: self.b_min,
            b_max: 1.0,
            eta: self.eta,
            l_min: self.l_min,
        }
    }

    pub fn prior_options(&self) -> PriorOptions {
        PriorOptions {
            n_d: self.n_d,
            h: self.tail_length,
            ..Default::default()
        }
    }

    /// Applies [`WORKERS_ENV`] if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            self.workers = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
    TimedOut,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
            TrialStatus::TimedOut => "timed_out",
        }
    }
}

/// One line of `trials.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: Configuration,
    pub encoded: Vec<f64>,
    pub budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rung: Option<usize>,
    pub status: TrialStatus,
    /// Validation loss; set exactly when the trial succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// Loss the optimizer used in place of a failed trial's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    /// Training observations handed to the pipeline.
    pub observations: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    /// The loss the optimizer sees: the validation loss or the penalty.
    pub fn objective(&self) -> f64 {
        self.loss.or(self.penalty).unwrap_or(DEFAULT_PENALTY)
    }
}

/// One line of `timings.jsonl`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub trial: usize,
    pub wall_ms: u64,
}

/// Result of fitting and scoring one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub status: TrialStatus,
    pub loss: Option<f64>,
    pub forecasts: Option<Vec<Forecast>>,
    pub observations: usize,
    pub error: Option<String>,
    pub wall_ms: u64,
}

/// Fits `config` on the training part of `split` truncated to `budget` and
/// scores its validation forecasts. Errors, panics, non-finite output and
/// deadline breaches are reported in the outcome, never raised.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_trial(
    config: &Configuration,
    budget: f64,
    split: &TemporalSplit,
    metric: LossKind,
    spec: &BudgetSpec,
    seed: u64,
    deadline: &Deadline,
    fault: Option<Fault>,
) -> TrialOutcome {
    let started = Instant::now();
    let train = truncate(split.train(), budget, spec.l_min);
    let observations = train.observation_count();
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<(f64, Vec<Forecast>)> {
        let pipeline = Pipeline::from_config(config, split.train().seasonal_period())?;
        let fitted = pipeline.fit_with_fault(&train, seed, deadline, fault)?;
        deadline.check()?;
        let forecasts = fitted.predict(split.validation_horizon())?;
        let loss = panel_loss(metric, split, &forecasts)?.value;
        if !loss.is_finite() {
            return Err(Error::Numerical("validation loss is not finite".into()));
        }
        Ok((loss, forecasts))
    }));
    let wall_ms = started.elapsed().as_millis() as u64;
    let (status, loss, forecasts, error) = match result {
        Ok(Ok((loss, fc))) => (TrialStatus::Ok, Some(loss), Some(fc), None),
        Ok(Err(Error::DeadlineExceeded)) => (TrialStatus::TimedOut, None, None, Some(Error::DeadlineExceeded.to_string())),
        Ok(Err(e)) => (TrialStatus::Failed, None, None, Some(e.to_string())),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (TrialStatus::Failed, None, None, Some(format!("panic: {msg}")))
        }
    };
    TrialOutcome {
        status,
        loss,
        forecasts,
        observations,
        error,
        wall_ms,
    }
}

/// Per-trial seed derived from the run seed.
pub fn trial_seed(run_seed: u64, task: usize) -> u64 {
    let mut z = run_seed ^ (task as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Summary written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub mode: AblationMode,
    pub seed: u64,
    pub metric: LossKind,
    pub space_version: String,
    pub n_trials: usize,
    pub status_counts: BTreeMap<String, usize>,
    /// Best successful loss at the highest budget evaluated.
    pub best_loss: Option<f64>,
    pub best_trial: Option<usize>,
    pub ensemble_validation_loss: Option<f64>,
    /// `(trial, multiplicity)`.
    pub ensemble_members: Vec<(usize, usize)>,
    pub fidelity_active: bool,
    pub warm_started: bool,
    pub prior_sources: Vec<SourceWeight>,
    pub observations_consumed: usize,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trials: Vec<TrialRecord>,
    pub timings: Vec<TrialTiming>,
    /// `None` when every trial failed or no member could be refitted.
    pub ensemble: Option<EnsembleModel>,
    pub report: RunReport,
}

struct Task {
    id: usize,
    config: Configuration,
    budget: f64,
    bracket: Option<usize>,
    rung: Option<usize>,
}

struct Optimizer<'a> {
    space: ConfigSpace,
    split: &'a TemporalSplit,
    cfg: &'a RunConfig,
    spec: BudgetSpec,
    prior: Option<PriorModel>,
    history: TrialHistory,
    records: Vec<TrialRecord>,
    timings: Vec<TrialTiming>,
    forecasts: Vec<Option<Vec<Forecast>>>,
    queue: VecDeque<Configuration>,
    rng: ChaCha8Rng,
    next_task: usize,
    run_end: Instant,
    grace_end: Instant,
}

impl Optimizer<'_> {
    fn remaining(&self) -> usize {
        self.cfg
            .max_trials
            .map_or(usize::MAX, |m| m.saturating_sub(self.records.len()))
    }

    fn can_start(&self) -> bool {
        self.remaining() > 0 && Instant::now() < self.run_end
    }

    fn next_config(&mut self, pending: &[Configuration]) -> Result<Configuration> {
        while let Some(c) = self.queue.pop_front() {
            if !self.history.contains(&c) && !pending.contains(&c) {
                return Ok(c);
            }
        }
        let surrogate = Surrogate::fit_history(&self.space, &self.history, self.rng.random())?;
        let proposer = Proposer {
            space: &self.space,
            surrogate: surrogate.as_ref(),
            history: &self.history,
            prior: self.prior.as_ref(),
            pending,
            options: ProposalOptions {
                beta: self.cfg.beta,
                ..Default::default()
            },
        };
        Ok(proposer.propose(&mut self.rng))
    }

    fn penalty(&self) -> f64 {
        self.records
            .iter()
            .filter_map(|r| r.loss)
            .reduce(f64::max)
            .map_or(DEFAULT_PENALTY, |w| 2.0 * w)
    }

    /// Evaluates `tasks` on the worker pool and records them in task
    /// order. Tasks not started before the run deadline are dropped.
    /// Returns the record indices.
    fn run_batch(&mut self, mut tasks: Vec<Task>) -> Result<Vec<usize>> {
        tasks.truncate(self.remaining());
        let encoded = tasks
            .iter()
            .map(|t| self.space.encode(&t.config))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<Mutex<Option<TrialOutcome>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
        let cursor = AtomicUsize::new(0);
        let work = || loop {
            let i = cursor.fetch_add(1, Ordering::SeqCst);
            let Some(task) = tasks.get(i) else { break };
            let now = Instant::now();
            if now >= self.run_end {
                break;
            }
            let mut deadline = Deadline::at(self.grace_end);
            if let Some(t) = self.cfg.trial_timeout_s {
                deadline = deadline.min(Deadline::at(now + Duration::from_secs_f64(t)));
            }
            let outcome = evaluate_trial(
                &task.config,
                task.budget,
                self.split,
                self.cfg.metric,
                &self.spec,
                trial_seed(self.cfg.seed, task.id),
                &deadline,
                self.cfg.faults.get(&task.id).copied(),
            );
            *results[i].lock().expect("result slot") = Some(outcome);
        };
        let workers = self.cfg.workers.min(tasks.len()).max(1);
        if workers == 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        let mut indices = Vec::new();
        for ((task, enc), slot) in tasks.into_iter().zip(encoded).zip(results) {
            let Some(outcome) = slot.into_inner().expect("result slot") else {
                continue;
            };
            let penalty = (outcome.status != TrialStatus::Ok).then(|| self.penalty());
            let index = self.records.len();
            let record = TrialRecord {
                trial: index,
                config: task.config,
                encoded: enc,
                budget: task.budget,
                bracket: task.bracket,
                rung: task.rung,
                status: outcome.status,
                loss: outcome.loss,
                penalty,
                observations: outcome.observations,
                seed: trial_seed(self.cfg.seed, task.id),
                error: outcome.error,
            };
            log::info!(
                "trial {index} [{}] budget {:.3} objective {:.6}",
                record.status.as_str(),
                record.budget,
                record.objective()
            );
            self.history.push(HistoryPoint {
                config: record.config.clone(),
                budget: record.budget,
                loss: record.objective(),
                ok: record.status == TrialStatus::Ok,
            });
            self.timings.push(TrialTiming {
                trial: index,
                wall_ms: outcome.wall_ms,
            });
            self.forecasts.push(outcome.forecasts);
            self.records.push(record);
            indices.push(index);
        }
        Ok(indices)
    }

    fn task(&mut self, config: Configuration, budget: f64, bracket: Option<usize>, rung: Option<usize>) -> Task {
        let id = self.next_task;
        self.next_task += 1;
        Task {
            id,
            config,
            budget,
            bracket,
            rung,
        }
    }

    fn run_single_budget(&mut self) -> Result<()> {
        while self.can_start() {
            let k = self.cfg.workers.min(self.remaining()).max(1);
            let mut configs = Vec::with_capacity(k);
            for _ in 0..k {
                let c = self.next_config(&configs)?;
                configs.push(c);
            }
            let tasks = configs.into_iter().map(|c| self.task(c, 1.0, None, None)).collect();
            if self.run_batch(tasks)?.is_empty() {
                break;
            }
        }
        Ok(())
    }

    fn run_brackets(&mut self) -> Result<()> {
        let mut bracket = 0;
        while self.can_start() {
            let rungs = sh_schedule(&self.spec, self.cfg.bracket_size)?;
            let mut configs: Vec<Configuration> = Vec::with_capacity(rungs[0].survivors);
            for _ in 0..rungs[0].survivors {
                let c = self.next_config(&configs)?;
                configs.push(c);
            }
            for (j, rung) in rungs.iter().enumerate() {
                if !self.can_start() {
                    return Ok(());
                }
                let n = configs.len();
                let tasks = configs
                    .iter()
                    .cloned()
                    .map(|c| self.task(c, rung.budget, Some(bracket), Some(j)))
                    .collect();
                let done = self.run_batch(tasks)?;
                if done.len() < n {
                    return Ok(());
                }
                if let Some(next) = rungs.get(j + 1) {
                    let losses: Vec<f64> = done.iter().map(|&i| self.records[i].objective()).collect();
                    configs = promote(&losses, next.survivors)
                        .into_iter()
                        .map(|i| self.records[done[i]].config.clone())
                        .collect();
                }
            }
            bracket += 1;
        }
        Ok(())
    }
}

/// Whether any training series is long enough for budgets to shorten it.
pub fn fidelity_active(train: &PanelDataset, spec: &BudgetSpec) -> bool {
    train
        .series()
        .iter()
        .any(|s| window_length(spec.b_min, s.len(), spec.l_min) < s.len())
}

/// Initial configurations: the template defaults, then prior (or uniform)
/// samples, without duplicates.
pub fn initial_design<R: Rng + ?Sized>(
    space: &ConfigSpace,
    prior: Option<&PriorModel>,
    size: usize,
    rng: &mut R,
) -> Vec<Configuration> {
    let mut out: Vec<Configuration> = template_defaults(space).into_iter().take(size).collect();
    let mut attempts = 0;
    while out.len() < size && attempts < 100 * size {
        attempts += 1;
        let c = match prior {
            Some(p) => p.sample(rng),
            None => space.sample(rng),
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Runs the search on `dataset`. Warm-starting modes take their prior from
/// `kb`, leaving out any entry named like the dataset.
pub fn optimize(dataset: &PanelDataset, cfg: &RunConfig, kb: Option<&KnowledgeBase>) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let run_end = started + Duration::from_secs_f64(cfg.time_budget_s);
    let grace_end = run_end + Duration::from_secs_f64(cfg.grace_period_s);
    let space = template_space();
    let split = temporal_holdout(dataset, dataset.horizon())?;
    let spec = cfg.budget_spec();

    let mut prior = None;
    let mut prior_sources = Vec::new();
    if cfg.mode.warm_start() {
        match kb {
            Some(kb) => {
                if let Some((p, sources)) = build_prior(kb, &space, dataset, Some(dataset.name()), &cfg.prior_options())? {
                    prior = Some(p);
                    prior_sources = sources;
                } else {
                    log::warn!("knowledge base has no entries besides `{}`; running without a prior", dataset.name());
                }
            }
            None if cfg.mode == AblationMode::TemplatesWs => {
                return Err(Error::InvalidConfig("warm starting needs a knowledge base".into()))
            }
            None => log::warn!("no knowledge base given; running without warm starting"),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let queue = initial_design(&space, prior.as_ref(), cfg.initial_design, &mut rng).into();
    let use_fidelity = cfg.mode.multi_fidelity() && fidelity_active(split.train(), &spec);
    if cfg.mode.multi_fidelity() && !use_fidelity {
        log::info!("every series is within the minimum window length; evaluating at full budget only");
    }

    let mut opt = Optimizer {
        space: space.clone(),
        split: &split,
        cfg,
        spec,
        prior,
        history: TrialHistory::default(),
        records: Vec::new(),
        timings: Vec::new(),
        forecasts: Vec::new(),
        queue,
        rng,
        next_task: 0,
        run_end,
        grace_end,
    };
    if use_fidelity {
        opt.run_brackets()?;
    } else {
        opt.run_single_budget()?;
    }
    let warm_started = opt.prior.is_some();
    let Optimizer {
        records,
        timings,
        forecasts,
        ..
    } = opt;

    let mut report = RunReport {
        dataset: dataset.name().to_string(),
        mode: cfg.mode,
        seed: cfg.seed,
        metric: cfg.metric,
        space_version: space.version(),
        n_trials: records.len(),
        status_counts: status_counts(&records),
        best_loss: None,
        best_trial: None,
        ensemble_validation_loss: None,
        ensemble_members: Vec::new(),
        fidelity_active: use_fidelity,
        warm_started,
        prior_sources,
        observations_consumed: records.iter().map(|r| r.observations).sum(),
        wall_time_s: 0.0,
        error: None,
    };

    let top = top_budget(&records);
    let pool: Vec<Candidate> = records
        .iter()
        .zip(&forecasts)
        .filter(|(r, _)| r.status == TrialStatus::Ok && Some(r.budget) == top)
        .filter_map(|(r, f)| f.clone().map(|forecasts| Candidate { id: r.trial, forecasts }))
        .collect();
    if let Some(best) = pool.iter().min_by(|a, b| {
        records[a.id]
            .objective()
            .total_cmp(&records[b.id].objective())
            .then(a.id.cmp(&b.id))
    }) {
        report.best_trial = Some(best.id);
        report.best_loss = records[best.id].loss;
    }

    let ensemble = if pool.is_empty() {
        report.error = Some(Error::AllTrialsFailed.to_string());
        None
    } else {
        let selection = ensemble_select(&pool, &split, cfg.ensemble_size, cfg.metric)?;
        report.ensemble_validation_loss = Some(selection.loss);
        report.ensemble_members = selection.members.clone();
        let full = split.reconstruct()?;
        let mut members = Vec::new();
        for (trial, multiplicity) in &selection.members {
            let r = &records[*trial];
            let fitted = Pipeline::from_config(&r.config, full.seasonal_period())
                .and_then(|p| p.fit(&full, r.seed, &Deadline::none()));
            match fitted {
                Ok(pipeline) => members.push(EnsembleMember {
                    trial: *trial,
                    multiplicity: *multiplicity,
                    config: r.config.clone(),
                    validation_loss: r.objective(),
                    pipeline,
                }),
                Err(e) => log::warn!("dropping ensemble member from trial {trial}: refit failed: {e}"),
            }
        }
        if members.is_empty() {
            report.error = Some("no ensemble member could be refitted".into());
            None
        } else {
            Some(EnsembleModel {
                dataset: dataset.name().to_string(),
                space_version: space.version(),
                metric: cfg.metric,
                horizon: dataset.horizon(),
                series_ids: dataset.series().iter().map(|s| s.series_id().to_string()).collect(),
                validation_loss: selection.loss,
                members,
            })
        }
    };
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(RunOutcome {
        trials: records,
        timings,
        ensemble,
        report,
    })
}

fn status_counts(records: &[TrialRecord]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = [TrialStatus::Ok, TrialStatus::Failed, TrialStatus::TimedOut]
        .iter()
        .map(|s| (s.as_str().to_string(), 0))
        .collect();
    for r in records {
        *counts.entry(r.status.as_str().to_string()).or_default() += 1;
    }
    counts
}

/// Highest budget among successful trials.
pub fn top_budget(records: &[TrialRecord]) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.status == TrialStatus::Ok)
        .map(|r| r.budget)
        .reduce(f64::max)
}

/// Knowledge-base entry for a finished run: the best `n_c` successful
/// configurations at the highest budget and the dataset's normalized tails.
pub fn kb_entry(dataset: &PanelDataset, trials: &[TrialRecord], n_c: usize, h: usize) -> KbEntry {
    let top = top_budget(trials);
    let mut configs: Vec<KbConfig> = Vec::new();
    let mut ok: Vec<&TrialRecord> = trials
        .iter()
        .filter(|r| r.status == TrialStatus::Ok && Some(r.budget) == top)
        .collect();
    ok.sort_by(|a, b| a.objective().total_cmp(&b.objective()).then(a.trial.cmp(&b.trial)));
    for r in ok {
        if configs.len() == n_c {
            break;
        }
        if !configs.iter().any(|c| c.assignments == r.config) {
            configs.push(KbConfig {
                assignments: r.config.clone(),
                loss: r.objective(),
            });
        }
    }
    KbEntry {
        name: dataset.name().to_string(),
        tails: normalized_tails(dataset, h),
        configs,
    }
}

/// Where a run's dataset came from; written to `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_path: Option<PathBuf>,
    pub space_version: String,
    pub config: RunConfig,
}

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const REPORT_FILE: &str = "report.json";
pub const RUN_FILE: &str = "run.json";
pub const KB_FILE: &str = "kb.json";

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Writes the trial log, timings, report, run manifest, a single-entry
/// knowledge base and (when one was built) the ensemble into `dir`.
pub fn write_artifacts(
    dir: impl AsRef<Path>,
    dataset: &PanelDataset,
    outcome: &RunOutcome,
    manifest: &RunManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(TRIALS_FILE), &outcome.trials)?;
    write_jsonl(&dir.join(TIMINGS_FILE), &outcome.timings)?;
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    std::fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(manifest)? + "\n")?;
    let mut kb = KnowledgeBase::new(&template_space());
    kb.add(
        kb_entry(dataset, &outcome.trials, manifest.config.n_c, manifest.config.tail_length),
        manifest.config.n_c,
    );
    kb.save(dir.join(KB_FILE))?;
    if let Some(e) = &outcome.ensemble {
        e.save(dir.join(ENSEMBLE_FILE))?;
    }
    Ok(())
}

/// Optimizes and writes artifacts. A run in which every trial failed still
/// writes its trial log before returning the error.
pub fn fit_to_dir(
    dataset: &PanelDataset,
    cfg: &RunConfig,
    kb: Option<&KnowledgeBase>,
    paths: Option<(&Path, &Path)>,
    out: impl AsRef<Path>,
) -> Result<RunOutcome> {
    let outcome = optimize(dataset, cfg, kb)?;
    let manifest = RunManifest {
        dataset: dataset.name().to_string(),
        data_path: paths.map(|p| absolute(p.0)),
        meta_path: paths.map(|p| absolute(p.1)),
        space_version: outcome.report.space_version.clone(),
        config: cfg.clone(),
    };
    write_artifacts(out, dataset, &outcome, &manifest)?;
    if outcome.ensemble.is_none() {
        return Err(Error::AllTrialsFailed);
    }
    Ok(outcome)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Builds a knowledge base from run directories, merging into `base`.
/// Each run's dataset is reloaded for its tails.
pub fn build_priors(run_dirs: &[PathBuf], base: Option<KnowledgeBase>, n_c: usize, h: usize) -> Result<KnowledgeBase> {
    let space = template_space();
    let mut kb = base.unwrap_or_else(|| KnowledgeBase::new(&space));
    kb.check_version(&space)?;
    for dir in run_dirs {
        let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(RUN_FILE))?)?;
        if manifest.space_version != kb.space_version {
            return Err(Error::VersionMismatch {
                expected: kb.space_version.clone(),
                found: manifest.space_version,
            });
        }
        let (Some(data), Some(meta)) = (&manifest.data_path, &manifest.meta_path) else {
            return Err(Error::InvalidArgument(format!(
                "run `{}` does not record its dataset files",
                dir.display()
            )));
        };
        let dataset = load_dataset(data, meta)?.with_name(manifest.dataset.clone());
        let trials = read_trials(dir.join(TRIALS_FILE))?;
        kb.add(kb_entry(&dataset, &trials, n_c, h), n_c);
    }
    Ok(kb)
}

/// Outer holdout evaluation: the last `H` observations are hidden from the
/// search and used to score the ensemble and a seasonal-naive baseline.
#[derive(Clone, Debug)]
pub struct HoldoutResult {
    pub loss: f64,
    pub baseline_loss: f64,
    pub outcome: RunOutcome,
}

pub fn holdout_evaluation(dataset: &PanelDataset, cfg: &RunConfig, kb: Option<&KnowledgeBase>) -> Result<HoldoutResult> {
    let outer = temporal_holdout(dataset, dataset.horizon())?;
    let outcome = optimize(outer.train(), cfg, kb)?;
    let ensemble = outcome.ensemble.as_ref().ok_or(Error::AllTrialsFailed)?;
    let forecasts = ensemble.forecast(outer.validation_horizon())?;
    let loss = panel_loss(cfg.metric, &outer, &forecasts)?.value;
    let baseline = Pipeline {
        transforms: Vec::new(),
        reducer: None,
        forecaster: crate::forecasters::Forecaster::SeasonalNaive {
            period: dataset.seasonal_period(),
        },
    }
    .fit(outer.train(), 0, &Deadline::none())?
    .predict(outer.validation_horizon())?;
    let baseline_loss = panel_loss(cfg.metric, &outer, &baseline)?.value;
    Ok(HoldoutResult {
        loss,
        baseline_loss,
        outcome,
    })
}
