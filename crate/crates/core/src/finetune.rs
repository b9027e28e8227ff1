//! Step-2 fine-tuning: a trial loop with escalating simulation budgets.
//!
//! Each trial trains the surrogate on the archive, compiles it into a
//! feasibility program with the specification's output intervals, and
//! simulates the solver's proposal (or a random in-box point when no
//! feasible solution is found). Between trials the incumbent is replaced
//! by the archived design with the least fractional deviation and the
//! sampling box is rebuilt around it. Targets with a tightening step are
//! ratcheted each time the specification is met.

use crate::milp::{self, SolveBudget, SolveStatus};
use crate::sampling::{perturbation_box, random_point, Hyperbox, Interval, SobolSequence, scale_to_box};
use crate::simulator::DesignProblem;
use crate::surrogate::{self, init_params, MlpParams, MlpSpec, Normalizer, TrainConfig};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("design specification must contain at least one constraint")]
    EmptySpec,
    #[error("specification references output index {0} beyond the output recipe")]
    BadOutputIndex(usize),
    #[error("tightening target must point at an at-least or at-most constraint")]
    BadTarget,
    #[error("surrogate failure: {0}")]
    Surrogate(#[from] surrogate::SurrogateError),
    #[error("sampling failure: {0}")]
    Sampling(#[from] crate::sampling::SamplingError),
}

/// Direction of one output constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    AtLeast(f64),
    AtMost(f64),
    Within(f64, f64),
}

impl ConstraintKind {
    pub fn interval(&self) -> Interval {
        match *self {
            ConstraintKind::AtLeast(v) => Interval::new(v, f64::INFINITY),
            ConstraintKind::AtMost(v) => Interval::new(f64::NEG_INFINITY, v),
            ConstraintKind::Within(lo, hi) => Interval::new(lo, hi),
        }
    }

    pub fn satisfied(&self, value: f64) -> bool {
        let iv = self.interval();
        value >= iv.lo && value <= iv.hi
    }

    /// The violated endpoint for a given observation, if any.
    fn violated_bound(&self, value: f64) -> Option<f64> {
        let iv = self.interval();
        if value < iv.lo {
            Some(iv.lo)
        } else if value > iv.hi {
            Some(iv.hi)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConstraint {
    pub name: String,
    pub output_index: usize,
    pub kind: ConstraintKind,
    pub hard: bool,
}

/// Optimization target: the indexed constraint ratchets by `step` each
/// time the whole specification is met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRule {
    pub constraint_index: usize,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpecification {
    pub constraints: Vec<OutputConstraint>,
    pub target: Option<TargetRule>,
}

impl DesignSpecification {
    pub fn validate(&self, n_outputs: usize) -> Result<(), FinetuneError> {
        if self.constraints.is_empty() {
            return Err(FinetuneError::EmptySpec);
        }
        for c in &self.constraints {
            if c.output_index >= n_outputs {
                return Err(FinetuneError::BadOutputIndex(c.output_index));
            }
        }
        if let Some(t) = &self.target {
            if t.step < 0.0 || t.constraint_index >= self.constraints.len() {
                return Err(FinetuneError::BadTarget);
            }
            if matches!(self.constraints[t.constraint_index].kind, ConstraintKind::Within(..)) {
                return Err(FinetuneError::BadTarget);
            }
        }
        Ok(())
    }

    pub fn satisfied(&self, outputs: &[f64]) -> bool {
        self.constraints
            .iter()
            .all(|c| c.kind.satisfied(outputs[c.output_index]))
    }

    pub fn hard_satisfied(&self, outputs: &[f64]) -> bool {
        self.constraints
            .iter()
            .filter(|c| c.hard)
            .all(|c| c.kind.satisfied(outputs[c.output_index]))
    }

    /// Native-unit output intervals, one per output dimension.
    pub fn output_intervals(&self, n_outputs: usize) -> Vec<Option<Interval>> {
        let mut out: Vec<Option<Interval>> = vec![None; n_outputs];
        for c in &self.constraints {
            let iv = c.kind.interval();
            out[c.output_index] = Some(match out[c.output_index] {
                None => iv,
                Some(prev) => prev.intersect(&iv),
            });
        }
        out
    }

    /// Value of the target constraint's threshold, if a target exists.
    pub fn target_value(&self, outputs: &[f64]) -> Option<f64> {
        self.target
            .as_ref()
            .map(|t| outputs[self.constraints[t.constraint_index].output_index])
    }

    /// Whether larger target observations are better.
    pub fn target_maximizes(&self) -> Option<bool> {
        self.target.as_ref().map(|t| {
            matches!(self.constraints[t.constraint_index].kind, ConstraintKind::AtLeast(_))
        })
    }
}

/// Sum of fractional deviations of violated constraints: each violated
/// entry contributes `|obs - bound| / |bound|` against its violated
/// endpoint (absolute deviation when the bound is zero).
pub fn fractional_deviation(outputs: &[f64], spec: &DesignSpecification) -> f64 {
    let mut total = 0.0;
    for c in &spec.constraints {
        let obs = outputs[c.output_index];
        if let Some(bound) = c.kind.violated_bound(obs) {
            let dev = (obs - bound).abs();
            total += if bound == 0.0 { dev } else { dev / bound.abs() };
        }
    }
    total
}

/// Ratchet the target constraint by its step in the improving
/// direction. Hard constraints are untouched.
pub fn tighten_goal(spec: &DesignSpecification, step: f64) -> DesignSpecification {
    let mut out = spec.clone();
    if let Some(t) = &spec.target {
        let c = &mut out.constraints[t.constraint_index];
        c.kind = match c.kind {
            ConstraintKind::AtLeast(v) => ConstraintKind::AtLeast(v * (1.0 + step)),
            ConstraintKind::AtMost(v) => ConstraintKind::AtMost(v * (1.0 - step)),
            within => within,
        };
    }
    out
}

/// Provenance of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ga,
    Init,
    MilpProposed,
    RandomFallback,
}

/// Raw design input of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignInput {
    Chromosome(String),
    Values(Vec<f64>),
}

/// One evaluated design: the unit of the append-only run log. `seq` is
/// a logical timestamp (monotone per run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub schema: u32,
    pub seq: u64,
    pub phase: Phase,
    pub trial: usize,
    pub generation: Option<usize>,
    pub input: DesignInput,
    pub outputs: Option<Vec<f64>>,
    pub objectives: Option<Vec<f64>>,
    pub valid: bool,
    pub cache_hit: bool,
    pub predicted: Option<Vec<f64>>,
    pub deviation: Option<f64>,
}

pub const RECORD_SCHEMA: u32 = 1;

/// Append-only archive of simulation records plus an optional streaming
/// sink (one JSON object per line).
pub struct Archive {
    records: Vec<SimulationRecord>,
    sink: Option<Box<dyn FnMut(&SimulationRecord)>>,
    next_seq: u64,
}

impl Archive {
    pub fn new() -> Self {
        Self { records: Vec::new(), sink: None, next_seq: 0 }
    }

    pub fn with_sink(sink: Box<dyn FnMut(&SimulationRecord)>) -> Self {
        Self { records: Vec::new(), sink: Some(sink), next_seq: 0 }
    }

    pub fn push(&mut self, mut record: SimulationRecord) -> u64 {
        record.seq = self.next_seq;
        self.next_seq += 1;
        if let Some(sink) = &mut self.sink {
            sink(&record);
        }
        self.records.push(record);
        self.records.last().unwrap().seq
    }

    pub fn records(&self) -> &[SimulationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Default for Archive {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Total trials T.
    pub trials: usize,
    /// Proposal budget of trial 1 (initialization samples excluded).
    pub first_trial_budget: usize,
    /// Proposal budget of trials 2..T.
    pub later_trial_budget: usize,
    /// Sobol samples used to initialize the surrogate in trial 1.
    pub init_samples: usize,
    /// Perturbation fraction for boxes built around incumbents.
    pub box_fraction: f64,
    /// Use the full catalog range for trial 1 instead of a perturbation
    /// box around the coarse design.
    pub initial_box_full: bool,
    pub hidden_layers: Vec<usize>,
    pub train: TrainConfigSer,
    pub milp_node_limit: usize,
    /// Wall-clock limit in seconds (0 = unlimited).
    pub time_limit_s: u64,
}

/// Serializable mirror of [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigSer {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
}

impl From<&TrainConfigSer> for TrainConfig {
    fn from(c: &TrainConfigSer) -> Self {
        TrainConfig {
            learning_rate: c.learning_rate,
            max_iters: c.max_iters,
            tolerance: c.tolerance,
            patience: c.patience,
            min_learning_rate: c.min_learning_rate,
        }
    }
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            trials: 3,
            first_trial_budget: 200,
            later_trial_budget: 500,
            init_samples: 10,
            box_fraction: 0.7,
            initial_box_full: false,
            hidden_layers: vec![100],
            train: TrainConfigSer {
                learning_rate: t.learning_rate,
                max_iters: t.max_iters,
                tolerance: t.tolerance,
                patience: t.patience,
                min_learning_rate: t.min_learning_rate,
            },
            milp_node_limit: 400,
            time_limit_s: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FinetuneStatus {
    Success,
    BestEffort,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub status: FinetuneStatus,
    /// Index into the archive of the returned record.
    pub record_seq: u64,
    pub trials_run: usize,
    pub post_init_simulations: usize,
    /// Specification in force at the end (tightened if a target exists).
    pub final_spec: DesignSpecification,
    /// Trained surrogate from the last retraining, with its normalizer.
    pub model: Option<(MlpParams, Normalizer)>,
}

struct TrialState {
    incumbent: Vec<f64>,
    incumbent_deviation: f64,
    box_: Hyperbox,
    params: Option<MlpParams>,
    success_seqs: Vec<u64>,
}

fn catalog_limits(problem: &DesignProblem) -> Hyperbox {
    let template = problem.template.as_ref().expect("fine-tuning needs a template");
    Hyperbox::new(
        template
            .slots
            .iter()
            .map(|&(kind, _, _)| problem.catalog.entry(kind).range)
            .collect(),
    )
    .expect("catalog ranges are valid")
}

/// Simulate one point, push the record, and report (outputs, seq).
fn simulate_and_log(
    problem: &DesignProblem,
    spec: &DesignSpecification,
    archive: &mut Archive,
    point: &[f64],
    phase: Phase,
    trial: usize,
    predicted: Option<Vec<f64>>,
) -> (Option<Vec<f64>>, u64) {
    let outputs = problem.outputs_for_values(point);
    let deviation = outputs.as_ref().map(|o| fractional_deviation(o, spec));
    let record = SimulationRecord {
        schema: RECORD_SCHEMA,
        seq: 0,
        phase,
        trial,
        generation: None,
        input: DesignInput::Values(point.to_vec()),
        outputs: outputs.clone(),
        objectives: None,
        valid: outputs.is_some(),
        cache_hit: false,
        predicted,
        deviation,
    };
    let seq = archive.push(record);
    (outputs, seq)
}

/// Rows usable for surrogate training: valid, vector-input records of
/// matching dimension.
fn training_rows(archive: &Archive, dim: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in archive.records() {
        if !r.valid {
            continue;
        }
        let DesignInput::Values(v) = &r.input else { continue };
        let Some(outputs) = &r.outputs else { continue };
        if v.len() == dim {
            xs.push(v.clone());
            ys.push(outputs.clone());
        }
    }
    (xs, ys)
}

/// Train (warm start) on the archive and propose the next point: the
/// feasibility program's solution when one exists, a uniform random
/// point otherwise.
#[allow(clippy::too_many_arguments)]
fn propose_next(
    problem: &DesignProblem,
    spec: &DesignSpecification,
    cfg: &FinetuneConfig,
    state: &mut TrialState,
    archive: &Archive,
    rng: &mut ChaCha8Rng,
    normalizer_out: &mut Option<Normalizer>,
) -> Result<(Vec<f64>, Phase, Option<Vec<f64>>), FinetuneError> {
    let dim = state.incumbent.len();
    let (xs, ys) = training_rows(archive, dim);
    if xs.is_empty() {
        return Ok((random_point(&state.box_, rng), Phase::RandomFallback, None));
    }
    let normalizer = Normalizer::from_observations(&state.box_, &ys)?;
    let n = xs.len();
    let xn: Vec<f64> = xs.iter().flat_map(|r| normalizer.normalize_input(r)).collect();
    let yn: Vec<f64> = ys.iter().flat_map(|r| normalizer.normalize_output(r)).collect();
    let xn = Array2::from_shape_vec((n, dim), xn).expect("row-major");
    let yn = Array2::from_shape_vec((n, ys[0].len()), yn).expect("row-major");

    let spec_dims = MlpSpec::new(dim, cfg.hidden_layers.clone(), ys[0].len())
        .expect("positive layer widths");
    let params = match state.params.take() {
        Some(p) if p.spec() == spec_dims => p,
        _ => init_params(&spec_dims, rng.gen()),
    };
    let trained = match surrogate::train(params, &xn, &yn, &cfg.train.into_config()) {
        Ok(report) => report.params,
        // re-initialize on divergence and keep going
        Err(surrogate::SurrogateError::NonFiniteLoss(_)) => init_params(&spec_dims, rng.gen()),
        Err(e) => return Err(e.into()),
    };

    let intervals: Vec<Option<Interval>> = spec
        .output_intervals(problem.outputs.len())
        .into_iter()
        .enumerate()
        .map(|(k, iv)| iv.map(|iv| normalizer.normalize_output_interval(k, iv)))
        .collect();
    let program = milp::encode(&trained, &Hyperbox::unit(dim), &intervals);
    let result = milp::solve(
        &program,
        SolveBudget { max_nodes: cfg.milp_node_limit, time_limit: None },
    );
    state.params = Some(trained.clone());
    *normalizer_out = Some(normalizer.clone());

    match result.status {
        SolveStatus::Feasible(xn_point) => {
            let native = normalizer.denormalize_input(&xn_point);
            let predicted =
                normalizer.denormalize_output(&surrogate::forward(&trained, &xn_point));
            Ok((native, Phase::MilpProposed, Some(predicted)))
        }
        SolveStatus::Infeasible | SolveStatus::BudgetExceeded => {
            Ok((random_point(&state.box_, rng), Phase::RandomFallback, None))
        }
    }
}

impl TrainConfigSer {
    fn into_config(&self) -> TrainConfig {
        self.into()
    }
}

/// Replace the incumbent with the trial's least-deviation design, if it
/// improves on the incumbent, and rebuild the perturbation box.
fn replace_incumbent(
    state: &mut TrialState,
    archive: &Archive,
    trial: usize,
    cfg: &FinetuneConfig,
    limits: &Hyperbox,
) -> Result<(), FinetuneError> {
    let mut best: Option<(f64, &SimulationRecord)> = None;
    for r in archive.records() {
        if r.trial != trial || !r.valid {
            continue;
        }
        let Some(dev) = r.deviation else { continue };
        // strict inequality keeps the earliest record on ties
        if best.map_or(true, |(d, _)| dev < d) {
            best = Some((dev, r));
        }
    }
    if let Some((dev, record)) = best {
        if dev <= state.incumbent_deviation {
            if let DesignInput::Values(v) = &record.input {
                state.incumbent = v.clone();
                state.incumbent_deviation = dev;
            }
        }
    }
    state.box_ = perturbation_box(&state.incumbent, cfg.box_fraction, limits)?;
    Ok(())
}

/// Run the fine-tuning loop (the step-2 procedure).
pub fn run_finetune(
    problem: &DesignProblem,
    coarse: &[f64],
    spec_input: &DesignSpecification,
    cfg: &FinetuneConfig,
    archive: &mut Archive,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneOutcome, FinetuneError> {
    spec_input.validate(problem.outputs.len())?;
    let limits = catalog_limits(problem);
    let start = Instant::now();
    let time_limit = (cfg.time_limit_s > 0).then(|| Duration::from_secs(cfg.time_limit_s));
    let out_of_time = |start: &Instant| time_limit.map_or(false, |l| start.elapsed() > l);

    let mut spec = spec_input.clone();
    let initial_box = if cfg.initial_box_full {
        limits.clone()
    } else {
        perturbation_box(coarse, cfg.box_fraction, &limits)?
    };
    let mut state = TrialState {
        incumbent: coarse.to_vec(),
        incumbent_deviation: f64::INFINITY,
        box_: initial_box,
        params: None,
        success_seqs: Vec::new(),
    };
    let mut post_init = 0usize;
    let mut trials_run = 0usize;
    let mut normalizer: Option<Normalizer> = None;

    'trials: for trial in 1..=cfg.trials.max(1) {
        trials_run = trial;
        // initialization: Sobol points in the current box (init_samples in
        // trial 1, a single point afterwards)
        let n_init = if trial == 1 { cfg.init_samples } else { 1 };
        let mut sobol = SobolSequence::new(state.box_.dim())?;
        for _ in 0..n_init {
            let point = scale_to_box(&sobol.next_point(), &state.box_);
            let (outputs, seq) =
                simulate_and_log(problem, &spec, archive, &point, Phase::Init, trial, None);
            if let Some(outputs) = outputs {
                if spec.satisfied(&outputs) {
                    state.success_seqs.push(seq);
                    match &spec.target {
                        Some(t) => spec = tighten_goal(&spec, t.step),
                        None => break 'trials,
                    }
                }
            }
            if out_of_time(&start) {
                break 'trials;
            }
        }

        // proposal loop
        let budget = if trial == 1 { cfg.first_trial_budget } else { cfg.later_trial_budget };
        for _ in 0..budget {
            let (point, phase, predicted) =
                propose_next(problem, &spec, cfg, &mut state, archive, rng, &mut normalizer)?;
            let (outputs, seq) =
                simulate_and_log(problem, &spec, archive, &point, phase, trial, predicted);
            post_init += 1;
            if let Some(outputs) = outputs {
                if spec.satisfied(&outputs) {
                    state.success_seqs.push(seq);
                    match &spec.target {
                        Some(t) => spec = tighten_goal(&spec, t.step),
                        None => break 'trials,
                    }
                }
            }
            if out_of_time(&start) {
                break 'trials;
            }
        }

        if trial < cfg.trials {
            replace_incumbent(&mut state, archive, trial, cfg, &limits)?;
        }
    }

    let model = match (&state.params, &normalizer) {
        (Some(p), Some(n)) => Some((p.clone(), n.clone())),
        _ => None,
    };

    // success: any record that met the specification in force at its time
    if !state.success_seqs.is_empty() {
        let seq = pick_success(&state.success_seqs, archive, &spec);
        return Ok(FinetuneOutcome {
            status: FinetuneStatus::Success,
            record_seq: seq,
            trials_run,
            post_init_simulations: post_init,
            final_spec: spec,
            model,
        });
    }

    // failure: prefer hard-satisfying records with the best target value,
    // else the minimal fractional deviation
    let mut best: Option<(bool, f64, u64)> = None; // (hard_ok, key, seq); lower key wins
    for r in archive.records() {
        let (Some(outputs), DesignInput::Values(_)) = (&r.outputs, &r.input) else { continue };
        let hard_ok = spec.hard_satisfied(outputs);
        let key = match (hard_ok, spec.target_value(outputs), spec.target_maximizes()) {
            (true, Some(v), Some(maximize)) => {
                if maximize {
                    -v
                } else {
                    v
                }
            }
            _ => r.deviation.unwrap_or(f64::INFINITY),
        };
        let better = match &best {
            None => true,
            // strict comparisons keep the earliest record on ties
            Some((bh, bk, _)) => hard_ok > *bh || (hard_ok == *bh && key < *bk),
        };
        if better {
            best = Some((hard_ok, key, r.seq));
        }
    }
    let record_seq = best.map(|(_, _, s)| s).unwrap_or(0);
    Ok(FinetuneOutcome {
        status: FinetuneStatus::BestEffort,
        record_seq,
        trials_run,
        post_init_simulations: post_init,
        final_spec: spec,
        model,
    })
}

/// Among success records pick the best target value (latest spec), or
/// the earliest success when there is no target.
fn pick_success(seqs: &[u64], archive: &Archive, spec: &DesignSpecification) -> u64 {
    if spec.target.is_none() {
        return seqs[0];
    }
    let maximize = spec.target_maximizes().unwrap_or(false);
    let mut best = seqs[0];
    let mut best_v = f64::NEG_INFINITY;
    for &seq in seqs {
        let r = &archive.records()[seq as usize];
        let Some(outputs) = &r.outputs else { continue };
        let Some(v) = spec.target_value(outputs) else { continue };
        let score = if maximize { v } else { -v };
        if score > best_v {
            best_v = score;
            best = seq;
        }
    }
    best
}
