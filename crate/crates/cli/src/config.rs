//! Run configuration: JSON files with partial overrides on top of the
//! bundled problem defaults. Unknown keys are rejected.

use crate::problems::{self, BenchmarkProblem};
use anyhow::{bail, Context, Result};
use dispatch_core::moo::GaConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ArchitectureSearch,
    ComponentSelection,
    FinetuneOnly,
    Full,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GaOverrides {
    pub population_size: Option<usize>,
    pub max_generations: Option<usize>,
    pub tournament_size: Option<usize>,
    pub mutation_rate: Option<f64>,
    pub crossover_probability: Option<f64>,
    pub metric_index: Option<usize>,
    pub metric_threshold: Option<f64>,
    pub stagnation_window: Option<usize>,
    pub max_evaluations: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FinetuneOverrides {
    pub trials: Option<usize>,
    pub first_trial_budget: Option<usize>,
    pub later_trial_budget: Option<usize>,
    pub init_samples: Option<usize>,
    pub box_fraction: Option<f64>,
    pub initial_box_full: Option<bool>,
    pub hidden_layers: Option<Vec<usize>>,
    pub milp_node_limit: Option<usize>,
    pub time_limit_s: Option<u64>,
    pub learning_rate: Option<f64>,
    pub max_train_iters: Option<usize>,
}

/// One run: problem id, mode, seed, and optional overrides. All
/// randomness in a run flows from `seed`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Replacement netlist applied before fine-tuning (the manual
    /// simplification hook).
    #[serde(default)]
    pub netlist_override: Option<PathBuf>,
    #[serde(default)]
    pub ga: Option<GaOverrides>,
    #[serde(default)]
    pub finetune: Option<FinetuneOverrides>,
}

fn default_seed() -> u64 {
    0
}

impl RunConfig {
    /// Resolve against the bundled problem, apply overrides, validate.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let mut bench = problems::lookup(&self.problem)?;
        if let Some(o) = &self.ga {
            apply_ga(&mut bench.ga, o);
        }
        if let Some(o) = &self.finetune {
            apply_finetune(&mut bench.finetune, o);
        }
        bench.ga.validate().map_err(|e| anyhow::anyhow!("ga config: {e}"))?;
        bench
            .problem
            .catalog
            .validate()
            .with_context(|| "component catalog")?;
        if let Some(spec) = &bench.spec {
            spec.validate(bench.problem.outputs.len())
                .with_context(|| "design specification")?;
        }
        if matches!(self.mode, Mode::FinetuneOnly)
            && bench.coarse.is_none()
            && self.netlist_override.is_none()
        {
            bail!("mode finetune_only needs a problem with a coarse design or a netlist_override");
        }
        Ok(ResolvedRun { config: self.clone(), bench })
    }
}

fn apply_ga(ga: &mut GaConfig, o: &GaOverrides) {
    if let Some(v) = o.population_size {
        ga.population_size = v;
    }
    if let Some(v) = o.max_generations {
        ga.max_generations = v;
    }
    if let Some(v) = o.tournament_size {
        ga.tournament_size = v;
    }
    if let Some(v) = o.mutation_rate {
        ga.mutation_rate = v;
    }
    if let Some(v) = o.crossover_probability {
        ga.crossover_probability = v;
    }
    if let Some(v) = o.metric_index {
        ga.metric_index = v;
    }
    if o.metric_threshold.is_some() {
        ga.stopping.metric_threshold = o.metric_threshold;
    }
    if o.stagnation_window.is_some() {
        ga.stopping.stagnation_window = o.stagnation_window;
    }
    if o.max_evaluations.is_some() {
        ga.stopping.max_evaluations = o.max_evaluations;
    }
}

fn apply_finetune(ft: &mut dispatch_core::finetune::FinetuneConfig, o: &FinetuneOverrides) {
    if let Some(v) = o.trials {
        ft.trials = v;
    }
    if let Some(v) = o.first_trial_budget {
        ft.first_trial_budget = v;
    }
    if let Some(v) = o.later_trial_budget {
        ft.later_trial_budget = v;
    }
    if let Some(v) = o.init_samples {
        ft.init_samples = v;
    }
    if let Some(v) = o.box_fraction {
        ft.box_fraction = v;
    }
    if let Some(v) = o.initial_box_full {
        ft.initial_box_full = v;
    }
    if let Some(v) = &o.hidden_layers {
        ft.hidden_layers = v.clone();
    }
    if let Some(v) = o.milp_node_limit {
        ft.milp_node_limit = v;
    }
    if let Some(v) = o.time_limit_s {
        ft.time_limit_s = v;
    }
    if let Some(v) = o.learning_rate {
        ft.train.learning_rate = v;
    }
    if let Some(v) = o.max_train_iters {
        ft.train.max_iters = v;
    }
}

pub struct ResolvedRun {
    pub config: RunConfig,
    pub bench: BenchmarkProblem,
}

/// Parse and validate a config file. Parse failures carry line/column
/// diagnostics from the JSON reader.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    config.resolve()?;
    Ok(config)
}

/// Output directory resolution order: --out flag, config `out_dir`,
/// `DISPATCH_OUT`, then `./dispatch-out`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.out_dir {
        return p.clone();
    }
    if let Ok(p) = std::env::var("DISPATCH_OUT") {
        return PathBuf::from(p);
    }
    PathBuf::from("dispatch-out")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn bundled_lowpass_config_parses() {
        let f = write_temp(
            r#"{"problem": "lowpass-arch", "mode": "architecture_search", "seed": 7}"#,
        );
        let cfg = load_config(f.path()).unwrap();
        assert_eq!(cfg.seed, 7);
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.bench.ga.population_size, 50);
        assert_eq!(resolved.bench.ga.max_generations, 100);
        assert_eq!(resolved.bench.ga.tournament_size, 10);
    }

    #[test]
    fn odd_population_is_rejected() {
        let f = write_temp(
            r#"{"problem": "lowpass-arch", "mode": "architecture_search",
                "ga": {"population_size": 51}}"#,
        );
        let err = load_config(f.path()).unwrap_err();
        assert!(err.to_string().contains("even"), "{err}");
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let f = write_temp("");
        let err = load_config(f.path()).unwrap_err();
        assert!(format!("{err:#}").contains("parsing config"), "{err:#}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_temp(
            r#"{"problem": "lowpass-arch", "mode": "full", "surprise": 1}"#,
        );
        let err = load_config(f.path()).unwrap_err();
        assert!(format!("{err:#}").contains("surprise"), "{err:#}");
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig {
            problem: "lowpass-tune".into(),
            mode: Mode::FinetuneOnly,
            seed: 1,
            out_dir: None,
            workers: None,
            netlist_override: None,
            ga: None,
            finetune: Some(FinetuneOverrides {
                trials: Some(1),
                first_trial_budget: Some(25),
                hidden_layers: Some(vec![32]),
                ..FinetuneOverrides::default()
            }),
        };
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.bench.finetune.trials, 1);
        assert_eq!(resolved.bench.finetune.first_trial_budget, 25);
        assert_eq!(resolved.bench.finetune.hidden_layers, vec![32]);
        // untouched default
        assert_eq!(resolved.bench.finetune.later_trial_budget, 500);
    }
}
