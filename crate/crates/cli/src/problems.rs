//! Bundled benchmark problems. Each is self-contained: catalog,
//! scaffold, sweep, objective recipe, output specification, and seed
//! designs, runnable with no external data.

use anyhow::{bail, Result};
use dispatch_core::finetune::{
    ConstraintKind, DesignSpecification, FinetuneConfig, OutputConstraint, TrainConfigSer,
};
use dispatch_core::moo::{GaConfig, StoppingRule};
use dispatch_core::netlist::{
    CatalogEntry, Chromosome, ComponentCatalog, ComponentKind, Gene, Origin, Scaffold,
};
use dispatch_core::sampling::Interval;
use dispatch_core::simulator::{
    CircuitTemplate, DesignProblem, FrequencySweep, ObjectiveTerm, OutputQuantity, ResponseCurve,
};

/// How `run` treats the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Two-step search problem.
    Search,
    /// Simulator regression check against the analytic response.
    Sanity,
}

pub struct BenchmarkProblem {
    pub name: &'static str,
    pub kind: ProblemKind,
    pub problem: DesignProblem,
    pub ga: GaConfig,
    pub finetune: FinetuneConfig,
    pub spec: Option<DesignSpecification>,
    pub seeds: Vec<Chromosome>,
    /// Default coarse design for finetune-only runs.
    pub coarse: Option<Vec<f64>>,
    pub max_components: usize,
    /// Sobol discretization depth for component-selection mode.
    pub component_space_samples: usize,
}

pub fn builtin_names() -> &'static [&'static str] {
    &["lowpass-arch", "lowpass-tune", "rc-sanity"]
}

pub fn lookup(name: &str) -> Result<BenchmarkProblem> {
    match name {
        "lowpass-arch" => Ok(lowpass_arch()),
        "lowpass-tune" => Ok(lowpass_tune()),
        "rc-sanity" => Ok(rc_sanity()),
        other => bail!(
            "unknown problem {other:?}; bundled problems: {}",
            builtin_names().join(", ")
        ),
    }
}

fn lowpass_catalog() -> ComponentCatalog {
    ComponentCatalog {
        resistor: CatalogEntry {
            values: vec![1.0, 10.0, 600.0, 1200.0],
            range: Interval::new(400.0, 800.0),
        },
        capacitor: CatalogEntry {
            values: vec![1e-12, 119.37e-9, 155.12e-9, 1e-5],
            range: Interval::new(0.01e-6, 1e-6),
        },
        inductor: CatalogEntry {
            values: vec![1e-6, 15.24e-3, 61.86e-3, 1e-2],
            range: Interval::new(1e-6, 1e-1),
        },
    }
}

fn lowpass_scaffold() -> Scaffold {
    Scaffold {
        max_nodes: 5,
        source_node: 1,
        output_node: 2,
        ground_node: 0,
        ac_amplitude: 1.0,
    }
}

fn lowpass_outputs() -> Vec<OutputQuantity> {
    vec![
        OutputQuantity::GainDb,
        OutputQuantity::BandwidthHz,
        OutputQuantity::ResponseDbAt(200.0),
        OutputQuantity::ResponseDbAt(500.0),
        OutputQuantity::ResponseDbAt(2000.0),
    ]
}

fn lowpass_spec() -> DesignSpecification {
    DesignSpecification {
        constraints: vec![
            OutputConstraint {
                name: "gain_db".into(),
                output_index: 0,
                kind: ConstraintKind::Within(-0.92, 0.83),
                hard: true,
            },
            OutputConstraint {
                name: "bandwidth_hz".into(),
                output_index: 1,
                kind: ConstraintKind::Within(990.0, 1010.0),
                hard: true,
            },
        ],
        target: None,
    }
}

fn lowpass_problem(template: Option<CircuitTemplate>) -> DesignProblem {
    let sweep = FrequencySweep::log_spaced(10.0, 1e6, 200).expect("valid sweep");
    let ideal = ResponseCurve::first_order_lowpass(&sweep, 1000.0);
    DesignProblem {
        scaffold: lowpass_scaffold(),
        catalog: lowpass_catalog(),
        sweep,
        ideal,
        objectives: vec![
            ObjectiveTerm::MagnitudeDeviation { passband_edge_hz: 1000.0, w_pass: 40.0, w_stop: 1.0 },
            ObjectiveTerm::PhaseDeviation { passband_edge_hz: 1000.0, w_pass: 40.0, w_stop: 1.0 },
            ObjectiveTerm::ActiveComponentCount,
        ],
        objective_scale: None,
        template,
        outputs: lowpass_outputs(),
    }
}

/// Butterworth low-pass seed: series 600-ohm resistor and 61.86 mH
/// inductor into a 155.12 nF shunt capacitor, padded to ten genes with
/// inactive self-loop resistors.
fn butterworth_seed(max_components: usize) -> Chromosome {
    let mut genes = vec![
        Gene { kind: ComponentKind::Resistor, node_a: 1, node_b: 3, value_index: 2, active: true },
        Gene { kind: ComponentKind::Inductor, node_a: 3, node_b: 2, value_index: 2, active: true },
        Gene { kind: ComponentKind::Capacitor, node_a: 2, node_b: 0, value_index: 2, active: true },
    ];
    while genes.len() < max_components {
        genes.push(Gene {
            kind: ComponentKind::Resistor,
            node_a: 4,
            node_b: 4,
            value_index: 0,
            active: false,
        });
    }
    Chromosome { genes, origin: Origin::Seed }
}

fn default_train() -> TrainConfigSer {
    TrainConfigSer {
        learning_rate: 1e-4,
        max_iters: 100_000,
        tolerance: 1e-9,
        patience: 400,
        min_learning_rate: 1e-6,
    }
}

/// Architecture search for a unity-gain 1 kHz low-pass filter: 50
/// individuals over 100 generations, up to 5 nodes and 10 components.
fn lowpass_arch() -> BenchmarkProblem {
    let max_components = 10;
    BenchmarkProblem {
        name: "lowpass-arch",
        kind: ProblemKind::Search,
        problem: lowpass_problem(None),
        ga: GaConfig {
            population_size: 50,
            max_generations: 100,
            tournament_size: 10,
            mutation_rate: 0.1,
            crossover_probability: 0.9,
            metric_index: 0,
            stopping: StoppingRule::default(),
        },
        finetune: FinetuneConfig {
            trials: 3,
            first_trial_budget: 200,
            later_trial_budget: 500,
            init_samples: 10,
            box_fraction: 0.7,
            initial_box_full: false,
            hidden_layers: vec![100],
            train: default_train(),
            milp_node_limit: 400,
            time_limit_s: 0,
        },
        spec: Some(lowpass_spec()),
        seeds: vec![butterworth_seed(max_components)],
        coarse: None,
        max_components,
        component_space_samples: 250,
    }
}

/// Fine-tuning of the fixed RC low-pass over the continuous ranges
/// R in [400, 800] ohm, C in [0.01, 1] uF, starting from the coarse
/// design (660 ohm, 0.24 uF).
fn lowpass_tune() -> BenchmarkProblem {
    let template = CircuitTemplate {
        slots: vec![(ComponentKind::Resistor, 1, 2), (ComponentKind::Capacitor, 2, 0)],
    };
    BenchmarkProblem {
        name: "lowpass-tune",
        kind: ProblemKind::Search,
        problem: lowpass_problem(Some(template)),
        ga: GaConfig {
            population_size: 30,
            max_generations: 100,
            tournament_size: 10,
            mutation_rate: 0.1,
            crossover_probability: 0.9,
            metric_index: 0,
            stopping: StoppingRule {
                metric_threshold: None,
                stagnation_window: Some(50),
                max_evaluations: None,
            },
        },
        finetune: FinetuneConfig {
            trials: 3,
            first_trial_budget: 200,
            later_trial_budget: 500,
            init_samples: 10,
            box_fraction: 0.7,
            initial_box_full: true,
            hidden_layers: vec![100],
            train: default_train(),
            milp_node_limit: 400,
            time_limit_s: 0,
        },
        spec: Some(lowpass_spec()),
        seeds: vec![],
        coarse: Some(vec![660.0, 0.24e-6]),
        max_components: 10,
        component_space_samples: 250,
    }
}

/// Analytic-oracle regression problem: the bundled RC divider must
/// match the closed-form first-order response at every sweep point.
fn rc_sanity() -> BenchmarkProblem {
    let template = CircuitTemplate {
        slots: vec![(ComponentKind::Resistor, 1, 2), (ComponentKind::Capacitor, 2, 0)],
    };
    BenchmarkProblem {
        name: "rc-sanity",
        kind: ProblemKind::Sanity,
        problem: lowpass_problem(Some(template)),
        ga: GaConfig {
            population_size: 2,
            max_generations: 1,
            tournament_size: 1,
            mutation_rate: 0.1,
            crossover_probability: 0.9,
            metric_index: 0,
            stopping: StoppingRule::default(),
        },
        finetune: FinetuneConfig::default(),
        spec: None,
        seeds: vec![],
        coarse: Some(vec![600.0, 265.258e-9]),
        max_components: 2,
        component_space_samples: 16,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dispatch_core::netlist::{active_count, decode, postprocess};
    use dispatch_core::simulator::{metrics, simulate};

    #[test]
    fn butterworth_seed_is_simulatable_and_close() {
        let b = lowpass_arch();
        let seed = &b.seeds[0];
        assert_eq!(active_count(seed), 3);
        // the seed already satisfies terminal connectivity
        let repaired = postprocess(seed.clone(), &b.problem.scaffold);
        assert_eq!(&repaired, seed);
        let netlist = decode(seed, &b.problem.catalog, &b.problem.scaffold);
        let curve = simulate(&netlist, &b.problem.sweep).unwrap();
        let m = metrics(&curve, 3);
        let bw = m.bandwidth_hz.expect("seed has a corner");
        assert!((500.0..3000.0).contains(&bw), "seed bandwidth {bw}");
    }

    #[test]
    fn bundled_problems_validate() {
        for name in builtin_names() {
            let b = lookup(name).unwrap();
            b.ga.validate().unwrap();
            b.problem.catalog.validate().unwrap();
            if let Some(spec) = &b.spec {
                spec.validate(b.problem.outputs.len()).unwrap();
            }
        }
        assert!(lookup("no-such-problem").is_err());
    }

    #[test]
    fn coarse_design_meets_spec_window() {
        // (660 ohm, 0.24 uF) sits inside the gain/bandwidth windows; the
        // fine-tuning acceptance run starts from it.
        let b = lowpass_tune();
        let outputs = b.problem.outputs_for_values(&[660.0, 0.24e-6]).unwrap();
        let spec = b.spec.unwrap();
        assert!(spec.satisfied(&outputs), "outputs {outputs:?}");
    }
}
