//! Run orchestration: executes the requested mode, streams the
//! simulation log, and writes plot data, the final design, and a
//! summary report.
//!
//! Everything written under the output directory is a deterministic
//! function of the configuration and seed; wall-clock timing goes to
//! stdout only.

use crate::config::{Mode, ResolvedRun, RunConfig};
use crate::problems::{BenchmarkProblem, ProblemKind};
use anyhow::{anyhow, bail, Context, Result};
use dispatch_core::finetune::{
    fractional_deviation, Archive, DesignInput, DesignSpecification, FinetuneOutcome,
    FinetuneStatus, Phase, SimulationRecord, RECORD_SCHEMA,
};
use dispatch_core::moo::{
    evolve, ComponentSpace, EvolveResult, Genome, InitialFill, SearchSpace,
};
use dispatch_core::netlist::{decode, ComponentKind, Netlist};
use dispatch_core::sampling::Hyperbox;
use dispatch_core::simulator::{simulate, DesignProblem, ObjectiveTerm};
use dispatch_core::surrogate::save_checkpoint;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// All specification constraints met.
    Success,
    /// Loop exhausted; best-effort design returned.
    BestEffort,
    /// Search-only mode completed (no specification gate).
    SearchCompleted,
    /// Sanity problem matched its analytic oracle.
    SanityPassed,
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::BestEffort => 2,
            _ => 0,
        }
    }
}

pub struct RunOutcome {
    pub status: RunStatus,
    pub out_dir: PathBuf,
    pub summary: String,
}

type SharedWriter = Rc<RefCell<BufWriter<File>>>;

fn open_log(out_dir: &Path) -> Result<(Archive, SharedWriter)> {
    let path = out_dir.join("simulation_log.jsonl");
    let writer: SharedWriter = Rc::new(RefCell::new(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    )));
    let sink_writer = writer.clone();
    let archive = Archive::with_sink(Box::new(move |record: &SimulationRecord| {
        let line = serde_json::to_string(record).expect("record serializes");
        let mut w = sink_writer.borrow_mut();
        writeln!(w, "{line}").expect("log write");
    }));
    Ok((archive, writer))
}

fn objective_labels(problem: &DesignProblem) -> Vec<String> {
    problem
        .objectives
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            ObjectiveTerm::MagnitudeDeviation { .. } => "magnitude_dev".into(),
            ObjectiveTerm::PhaseDeviation { .. } => "phase_dev".into(),
            ObjectiveTerm::ActiveComponentCount => "active_components".into(),
            ObjectiveTerm::PenalizedRatio { .. } => format!("penalized_ratio_{i}"),
        })
        .collect()
}

/// Execute one configured run.
pub fn run(config: &RunConfig, out_flag: Option<&Path>) -> Result<RunOutcome> {
    let resolved = config.resolve()?;
    let out_dir = crate::config::resolve_out_dir(out_flag, config);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let body = || run_in_pool(&resolved, &out_dir);
    match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?
            .install(body),
        None => body(),
    }
}

fn run_in_pool(resolved: &ResolvedRun, out_dir: &Path) -> Result<RunOutcome> {
    let config = &resolved.config;
    let bench = &resolved.bench;

    if bench.kind == ProblemKind::Sanity {
        let summary = run_sanity(bench, out_dir)?;
        write_summary(out_dir, &summary)?;
        return Ok(RunOutcome {
            status: RunStatus::SanityPassed,
            out_dir: out_dir.to_path_buf(),
            summary,
        });
    }

    let (mut archive, writer) = open_log(out_dir)?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ga_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut ft_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let outcome = match config.mode {
        Mode::ArchitectureSearch => {
            let (result, netlist) = ga_architecture(bench, &mut archive, &mut ga_rng)?;
            write_generation_csv(out_dir, bench, &result)?;
            finish_search(bench, out_dir, config, &result, netlist, &archive)?
        }
        Mode::ComponentSelection => {
            let (result, netlist) = ga_components(bench, &mut archive, &mut ga_rng)?;
            write_generation_csv(out_dir, bench, &result)?;
            finish_search(bench, out_dir, config, &result, netlist, &archive)?
        }
        Mode::FinetuneOnly => {
            let (problem, coarse) = finetune_problem(bench, config)?;
            finetune_mode(bench, &problem, &coarse, out_dir, config, &mut archive, &mut ft_rng)?
        }
        Mode::Full => {
            let (ga_result, _netlist) = ga_architecture(bench, &mut archive, &mut ga_rng)?;
            write_generation_csv(out_dir, bench, &ga_result)?;
            let (problem, coarse) = match &config.netlist_override {
                Some(path) => problem_from_netlist_file(bench, path)?,
                None => {
                    let Genome::Chromosome(chromosome) = &ga_result.selected.genome else {
                        bail!("architecture search must select a chromosome");
                    };
                    let netlist =
                        decode(chromosome, &bench.problem.catalog, &bench.problem.scaffold);
                    problem_from_netlist(bench, &netlist)?
                }
            };
            finetune_mode(bench, &problem, &coarse, out_dir, config, &mut archive, &mut ft_rng)?
        }
    };

    writer.borrow_mut().flush()?;
    write_summary(out_dir, &outcome.summary)?;
    Ok(outcome)
}

/// Evaluator wrapper capturing the output quantities of each distinct
/// simulation for the log.
struct LoggedEvaluator<'a> {
    problem: &'a DesignProblem,
    outputs: Mutex<HashMap<Vec<u64>, Option<Vec<f64>>>>,
}

impl<'a> LoggedEvaluator<'a> {
    fn new(problem: &'a DesignProblem) -> Self {
        Self { problem, outputs: Mutex::new(HashMap::new()) }
    }

    fn evaluate(&self, genome: &Genome) -> dispatch_core::simulator::ObjectiveVector {
        let eval = match genome {
            Genome::Chromosome(c) => self.problem.evaluate_chromosome_full(c),
            Genome::Components(v) => self.problem.evaluate_values_full(&v.0),
        };
        self.outputs.lock().unwrap().insert(genome.cache_key(), eval.outputs);
        eval.objectives
    }

    fn outputs_of(&self, genome: &Genome) -> Option<Vec<f64>> {
        self.outputs
            .lock()
            .unwrap()
            .get(&genome.cache_key())
            .cloned()
            .flatten()
    }
}

fn log_ga_records(
    bench: &BenchmarkProblem,
    result: &EvolveResult,
    evaluator: &LoggedEvaluator,
    archive: &mut Archive,
) {
    for rec in &result.evaluations {
        let outputs = evaluator.outputs_of(&rec.genome);
        let input = match &rec.genome {
            Genome::Chromosome(c) => DesignInput::Chromosome(c.to_string()),
            Genome::Components(v) => DesignInput::Values(v.0.clone()),
        };
        let deviation = match (&bench.spec, &outputs) {
            (Some(spec), Some(o)) => Some(fractional_deviation(o, spec)),
            _ => None,
        };
        archive.push(SimulationRecord {
            schema: RECORD_SCHEMA,
            seq: 0,
            phase: Phase::Ga,
            trial: 0,
            generation: Some(rec.generation),
            input,
            outputs,
            objectives: Some(rec.objectives.values.clone()),
            valid: rec.objectives.valid,
            cache_hit: rec.cache_hit,
            predicted: None,
            deviation,
        });
    }
}

fn ga_architecture(
    bench: &BenchmarkProblem,
    archive: &mut Archive,
    rng: &mut ChaCha8Rng,
) -> Result<(EvolveResult, Netlist)> {
    let problem = &bench.problem;
    let evaluator = LoggedEvaluator::new(problem);
    let seeds: Vec<Genome> = bench.seeds.iter().cloned().map(Genome::Chromosome).collect();
    let result = evolve(
        &bench.ga,
        seeds,
        InitialFill::RandomArchitecture {
            catalog: &problem.catalog,
            scaffold: &problem.scaffold,
            max_components: bench.max_components,
        },
        &SearchSpace::Architecture { catalog: &problem.catalog, scaffold: &problem.scaffold },
        &|g| evaluator.evaluate(g),
        rng,
    );
    log_ga_records(bench, &result, &evaluator, archive);
    let Genome::Chromosome(chromosome) = &result.selected.genome else {
        bail!("architecture search must select a chromosome");
    };
    let netlist = decode(chromosome, &problem.catalog, &problem.scaffold);
    Ok((result, netlist))
}

fn ga_components(
    bench: &BenchmarkProblem,
    archive: &mut Archive,
    rng: &mut ChaCha8Rng,
) -> Result<(EvolveResult, Netlist)> {
    let problem = &bench.problem;
    let template = problem
        .template
        .as_ref()
        .ok_or_else(|| anyhow!("component selection needs a circuit template"))?;
    let ranges = Hyperbox::new(
        template
            .slots
            .iter()
            .map(|&(kind, _, _)| problem.catalog.entry(kind).range)
            .collect(),
    )?;
    let space = ComponentSpace::from_sobol(&ranges, bench.component_space_samples);
    let evaluator = LoggedEvaluator::new(problem);
    let result = evolve(
        &bench.ga,
        Vec::new(),
        InitialFill::SobolComponents(&space),
        &SearchSpace::Components(&space),
        &|g| evaluator.evaluate(g),
        rng,
    );
    log_ga_records(bench, &result, &evaluator, archive);
    let Genome::Components(values) = &result.selected.genome else {
        bail!("component selection must select a value vector");
    };
    let netlist = problem.netlist_for_values(&values.0);
    Ok((result, netlist))
}

fn write_generation_csv(
    out_dir: &Path,
    bench: &BenchmarkProblem,
    result: &EvolveResult,
) -> Result<()> {
    let labels = objective_labels(&bench.problem);
    // scale reference: the seed design's objectives (first logged record)
    let scale: Option<Vec<f64>> = if bench.seeds.is_empty() {
        None
    } else {
        result.evaluations.first().map(|r| r.objectives.values.clone())
    };
    let mut text = String::from("generation,evaluations");
    for l in &labels {
        write!(text, ",mean_{l}")?;
    }
    for l in &labels {
        write!(text, ",best_{l}")?;
    }
    if scale.is_some() {
        for l in &labels {
            write!(text, ",scaled_mean_{l}")?;
        }
    }
    text.push('\n');
    for g in &result.log.generations {
        write!(text, "{},{}", g.generation, g.evaluations)?;
        for v in &g.mean_objectives {
            write!(text, ",{v}")?;
        }
        for v in &g.best_objectives {
            write!(text, ",{v}")?;
        }
        if let Some(scale) = &scale {
            for (v, s) in g.mean_objectives.iter().zip(scale) {
                write!(text, ",{}", v / s)?;
            }
        }
        text.push('\n');
    }
    std::fs::write(out_dir.join("generations.csv"), text)?;
    Ok(())
}

fn finish_search(
    bench: &BenchmarkProblem,
    out_dir: &Path,
    config: &RunConfig,
    result: &EvolveResult,
    netlist: Netlist,
    archive: &Archive,
) -> Result<RunOutcome> {
    std::fs::write(out_dir.join("final_design.netlist"), netlist.to_text())?;
    let curve = simulate(&netlist, &bench.problem.sweep)
        .map_err(|e| anyhow!("selected design does not simulate: {e}"))?;
    std::fs::write(out_dir.join("response.csv"), curve.to_csv())?;

    let mut summary = String::new();
    writeln!(summary, "problem: {}", bench.name)?;
    writeln!(summary, "mode: {}", mode_name(config.mode))?;
    writeln!(summary, "seed: {}", config.seed)?;
    writeln!(summary, "status: search_completed")?;
    writeln!(summary, "{}", phase_counts(archive))?;
    writeln!(summary, "generations: {}", result.log.generations.len())?;
    let labels = objective_labels(&bench.problem);
    for (l, v) in labels.iter().zip(&result.selected.objectives.values) {
        writeln!(summary, "selected_{l}: {v}")?;
    }
    let outputs = bench.problem.outputs_for_curve(&curve);
    for (q, v) in bench.problem.outputs.iter().zip(&outputs) {
        writeln!(summary, "selected_{}: {v}", q.label())?;
    }
    if let Some(spec) = &bench.spec {
        writeln!(summary, "{}", spec_check(spec, &outputs))?;
    }
    writeln!(summary, "final_design:")?;
    write!(summary, "{}", netlist.to_text())?;

    Ok(RunOutcome {
        status: RunStatus::SearchCompleted,
        out_dir: out_dir.to_path_buf(),
        summary,
    })
}

/// Template and coarse values for fine-tuning the bundled problem.
fn finetune_problem(
    bench: &BenchmarkProblem,
    config: &RunConfig,
) -> Result<(DesignProblem, Vec<f64>)> {
    if let Some(path) = &config.netlist_override {
        return problem_from_netlist_file(bench, path);
    }
    let coarse = bench
        .coarse
        .clone()
        .ok_or_else(|| anyhow!("problem {} has no coarse design", bench.name))?;
    let problem = bench.problem.clone();
    if problem.template.is_none() {
        bail!("problem {} has no circuit template for fine-tuning", bench.name);
    }
    Ok((problem, coarse))
}

fn problem_from_netlist_file(
    bench: &BenchmarkProblem,
    path: &Path,
) -> Result<(DesignProblem, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading netlist override {}", path.display()))?;
    let netlist = Netlist::parse(&text)?;
    problem_from_netlist(bench, &netlist)
}

/// Derive the fine-tuning template from a concrete netlist: each
/// passive component becomes a tunable slot, its value the coarse
/// starting point (clamped into the catalog's continuous range).
fn problem_from_netlist(
    bench: &BenchmarkProblem,
    netlist: &Netlist,
) -> Result<(DesignProblem, Vec<f64>)> {
    let mut problem = bench.problem.clone();
    let mut slots = Vec::new();
    let mut coarse = Vec::new();
    let mut amplitude = problem.scaffold.ac_amplitude;
    let mut max_node = 0usize;
    for c in &netlist.components {
        max_node = max_node.max(c.node_a).max(c.node_b);
        if c.kind == ComponentKind::VoltageSource {
            amplitude = c.value;
            continue;
        }
        slots.push((c.kind, c.node_a, c.node_b));
        let range = problem.catalog.entry(c.kind).range;
        coarse.push(range.clamp(c.value));
    }
    if slots.is_empty() {
        bail!("netlist has no tunable components");
    }
    problem.scaffold.source_node = netlist.source_node;
    problem.scaffold.output_node = netlist.output_node;
    problem.scaffold.ground_node = netlist.ground_node;
    problem.scaffold.ac_amplitude = amplitude;
    problem.scaffold.max_nodes = problem.scaffold.max_nodes.max(max_node + 1);
    problem.template = Some(dispatch_core::simulator::CircuitTemplate { slots });
    Ok((problem, coarse))
}

fn finetune_mode(
    bench: &BenchmarkProblem,
    problem: &DesignProblem,
    coarse: &[f64],
    out_dir: &Path,
    config: &RunConfig,
    archive: &mut Archive,
    rng: &mut ChaCha8Rng,
) -> Result<RunOutcome> {
    let spec = bench
        .spec
        .clone()
        .ok_or_else(|| anyhow!("problem {} has no design specification", bench.name))?;
    let outcome = dispatch_core::finetune::run_finetune(
        problem,
        coarse,
        &spec,
        &bench.finetune,
        archive,
        rng,
    )?;

    write_finetune_csv(out_dir, problem, &spec, archive)?;
    if let Some((params, normalizer)) = &outcome.model {
        let mut w = BufWriter::new(File::create(out_dir.join("surrogate.ckpt"))?);
        save_checkpoint(&mut w, params, normalizer)?;
    }

    let record = archive
        .records()
        .get(outcome.record_seq as usize)
        .ok_or_else(|| anyhow!("outcome record missing from archive"))?
        .clone();
    let DesignInput::Values(values) = &record.input else {
        bail!("fine-tune outcome must be a value vector");
    };
    let netlist = problem.netlist_for_values(values);
    std::fs::write(out_dir.join("final_design.netlist"), netlist.to_text())?;
    let curve = simulate(&netlist, &problem.sweep)
        .map_err(|e| anyhow!("final design does not simulate: {e}"))?;
    std::fs::write(out_dir.join("response.csv"), curve.to_csv())?;

    let status = match outcome.status {
        FinetuneStatus::Success => RunStatus::Success,
        FinetuneStatus::BestEffort => RunStatus::BestEffort,
    };
    let summary = finetune_summary(bench, problem, config, &outcome, &record, archive, &netlist)?;
    Ok(RunOutcome { status, out_dir: out_dir.to_path_buf(), summary })
}

fn finetune_summary(
    bench: &BenchmarkProblem,
    problem: &DesignProblem,
    config: &RunConfig,
    outcome: &FinetuneOutcome,
    record: &SimulationRecord,
    archive: &Archive,
    netlist: &Netlist,
) -> Result<String> {
    let mut summary = String::new();
    writeln!(summary, "problem: {}", bench.name)?;
    writeln!(summary, "mode: {}", mode_name(config.mode))?;
    writeln!(summary, "seed: {}", config.seed)?;
    let status = match outcome.status {
        FinetuneStatus::Success => "success",
        FinetuneStatus::BestEffort => "best_effort",
    };
    writeln!(summary, "status: {status}")?;
    writeln!(summary, "{}", phase_counts(archive))?;
    writeln!(summary, "trials_run: {}", outcome.trials_run)?;
    writeln!(summary, "post_init_simulations: {}", outcome.post_init_simulations)?;
    if let Some(outputs) = &record.outputs {
        for (q, v) in problem.outputs.iter().zip(outputs) {
            writeln!(summary, "final_{}: {v}", q.label())?;
        }
        writeln!(summary, "{}", spec_check(&outcome.final_spec, outputs))?;
    }
    if let Some(dev) = record.deviation {
        writeln!(summary, "final_fractional_deviation: {dev}")?;
    }
    writeln!(summary, "final_design:")?;
    write!(summary, "{}", netlist.to_text())?;
    Ok(summary)
}

fn write_finetune_csv(
    out_dir: &Path,
    problem: &DesignProblem,
    spec: &DesignSpecification,
    archive: &Archive,
) -> Result<()> {
    let mut text = String::new();
    for c in &spec.constraints {
        let iv = c.kind.interval();
        writeln!(
            text,
            "# constraint {} in [{}, {}]{}",
            c.name,
            iv.lo,
            iv.hi,
            if c.hard { " hard" } else { "" }
        )?;
    }
    let labels: Vec<String> = problem.outputs.iter().map(|q| q.label()).collect();
    let dim = problem.template.as_ref().map(|t| t.slots.len()).unwrap_or(0);
    write!(text, "seq,trial,phase")?;
    for d in 0..dim {
        write!(text, ",x{d}")?;
    }
    for l in &labels {
        write!(text, ",predicted_{l}")?;
    }
    for l in &labels {
        write!(text, ",simulated_{l}")?;
    }
    writeln!(text, ",deviation")?;
    for r in archive.records() {
        if r.phase == Phase::Ga {
            continue;
        }
        let DesignInput::Values(values) = &r.input else { continue };
        write!(text, "{},{},{}", r.seq, r.trial, phase_name(r.phase))?;
        for v in values {
            write!(text, ",{v}")?;
        }
        for i in 0..labels.len() {
            match &r.predicted {
                Some(p) => write!(text, ",{}", p[i])?,
                None => write!(text, ",")?,
            }
        }
        for i in 0..labels.len() {
            match &r.outputs {
                Some(o) => write!(text, ",{}", o[i])?,
                None => write!(text, ",")?,
            }
        }
        match r.deviation {
            Some(d) => writeln!(text, ",{d}")?,
            None => writeln!(text, ",")?,
        }
    }
    std::fs::write(out_dir.join("finetune.csv"), text)?;
    Ok(())
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Ga => "ga",
        Phase::Init => "init",
        Phase::MilpProposed => "milp_proposed",
        Phase::RandomFallback => "random_fallback",
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::ArchitectureSearch => "architecture_search",
        Mode::ComponentSelection => "component_selection",
        Mode::FinetuneOnly => "finetune_only",
        Mode::Full => "full",
    }
}

fn phase_counts(archive: &Archive) -> String {
    let mut counts = [0usize; 4];
    let mut cache_hits = 0usize;
    for r in archive.records() {
        let slot = match r.phase {
            Phase::Ga => 0,
            Phase::Init => 1,
            Phase::MilpProposed => 2,
            Phase::RandomFallback => 3,
        };
        if r.cache_hit {
            cache_hits += 1;
        } else {
            counts[slot] += 1;
        }
    }
    format!(
        "samples_by_phase: ga={} init={} milp_proposed={} random_fallback={} (cache_hits={})\ntotal_simulations: {}",
        counts[0],
        counts[1],
        counts[2],
        counts[3],
        cache_hits,
        counts.iter().sum::<usize>()
    )
}

fn spec_check(spec: &DesignSpecification, outputs: &[f64]) -> String {
    let mut text = String::from("constraints:");
    for c in &spec.constraints {
        let iv = c.kind.interval();
        let v = outputs[c.output_index];
        let ok = c.kind.satisfied(v);
        let hard = if c.hard { "hard" } else { "target" };
        let _ = write!(
            text,
            "\n  {} in [{}, {}] ({hard}): {v} {}",
            c.name,
            iv.lo,
            iv.hi,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    text
}

fn write_summary(out_dir: &Path, summary: &str) -> Result<()> {
    std::fs::write(out_dir.join("summary.txt"), summary)?;
    Ok(())
}

/// Simulate the sanity problem's RC design and compare against the
/// closed-form first-order response at every sweep point.
fn run_sanity(bench: &BenchmarkProblem, out_dir: &Path) -> Result<String> {
    let values = bench.coarse.clone().expect("sanity problem has fixed values");
    let problem = &bench.problem;
    let netlist = problem.netlist_for_values(&values);
    std::fs::write(out_dir.join("final_design.netlist"), netlist.to_text())?;
    let curve = simulate(&netlist, &problem.sweep)?;
    std::fs::write(out_dir.join("response.csv"), curve.to_csv())?;

    let (r, c) = (values[0], values[1]);
    let mut max_rel: f64 = 0.0;
    for (i, &f) in problem.sweep.points().iter().enumerate() {
        let expected = Complex64::new(1.0, 0.0)
            / Complex64::new(1.0, 2.0 * std::f64::consts::PI * f * r * c);
        let rel = (curve.gain()[i] - expected).norm() / expected.norm();
        max_rel = max_rel.max(rel);
    }
    if max_rel >= 1e-9 {
        bail!("sanity check failed: max relative error {max_rel} vs analytic response");
    }
    let mut summary = String::new();
    writeln!(summary, "problem: {}", bench.name)?;
    writeln!(summary, "status: sanity_passed")?;
    writeln!(summary, "max_relative_error: {max_rel}")?;
    writeln!(summary, "sweep_points: {}", problem.sweep.len())?;
    Ok(summary)
}
