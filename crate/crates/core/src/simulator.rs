//! Linear AC circuit simulation and objective evaluation.
//!
//! The simulator assembles the complex nodal admittance system of a
//! netlist at each sweep frequency (modified nodal analysis: nodal KCL
//! rows plus one augmentation row per ideal source) and solves it by
//! Gaussian elimination with partial pivoting. The transfer function is
//! `H(f) = V(output) / V(source)`.

use crate::netlist::{active_count, decode, Chromosome, Component, ComponentCatalog, ComponentKind, Netlist, Scaffold};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Sentinel objective value for invalid simulations. Any value that
/// dominates all achievable objectives under non-dominated ranking works.
pub const BIG: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("frequency sweep requires 0 < f_min <= f_max and count >= 1")]
    BadSweep,
    #[error("penalized ratio requires reference > 0 and alpha >= 0")]
    BadReference,
    #[error("component values must be positive, got {0}")]
    NonPositiveValue(f64),
}

/// Log-spaced frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySweep {
    points: Vec<f64>,
}

impl FrequencySweep {
    pub fn log_spaced(f_min: f64, f_max: f64, count: usize) -> Result<Self, SimulatorError> {
        if !(f_min > 0.0) || f_max < f_min || count == 0 {
            return Err(SimulatorError::BadSweep);
        }
        let points = if count == 1 {
            vec![f_min]
        } else {
            let (l0, l1) = (f_min.log10(), f_max.log10());
            (0..count)
                .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / (count - 1) as f64))
                .collect()
        };
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn f_min(&self) -> f64 {
        self.points[0]
    }

    pub fn f_max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Complex gain per sweep frequency with derived magnitude (dB) and
/// unwrapped phase (degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCurve {
    freqs: Vec<f64>,
    gain: Vec<Complex64>,
    mag_db: Vec<f64>,
    phase_deg: Vec<f64>,
}

impl ResponseCurve {
    pub fn from_gains(sweep: &FrequencySweep, gain: Vec<Complex64>) -> Self {
        assert_eq!(sweep.len(), gain.len(), "gain/sweep length mismatch");
        let mag_db: Vec<f64> = gain.iter().map(|h| 20.0 * h.norm().log10()).collect();
        let mut phase_deg: Vec<f64> = gain.iter().map(|h| h.arg().to_degrees()).collect();
        // Unwrap in index order so the phase is continuous across the sweep.
        for i in 1..phase_deg.len() {
            let mut p = phase_deg[i];
            while p - phase_deg[i - 1] > 180.0 {
                p -= 360.0;
            }
            while p - phase_deg[i - 1] < -180.0 {
                p += 360.0;
            }
            phase_deg[i] = p;
        }
        Self {
            freqs: sweep.points().to_vec(),
            gain,
            mag_db,
            phase_deg,
        }
    }

    /// Analytic single-pole low-pass response `1 / (1 + j f/f_c)`.
    pub fn first_order_lowpass(sweep: &FrequencySweep, f_c: f64) -> Self {
        let gain = sweep
            .points()
            .iter()
            .map(|&f| Complex64::new(1.0, 0.0) / Complex64::new(1.0, f / f_c))
            .collect();
        Self::from_gains(sweep, gain)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn gain(&self) -> &[Complex64] {
        &self.gain
    }

    pub fn magnitude_db(&self) -> &[f64] {
        &self.mag_db
    }

    pub fn phase_deg(&self) -> &[f64] {
        &self.phase_deg
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    fn interpolate(&self, values: &[f64], f: f64) -> f64 {
        let fs = &self.freqs;
        if f <= fs[0] {
            return values[0];
        }
        if f >= fs[fs.len() - 1] {
            return values[values.len() - 1];
        }
        let i = fs.partition_point(|&x| x < f);
        if fs[i] == f {
            return values[i];
        }
        let (f0, f1) = (fs[i - 1], fs[i]);
        let t = (f.log10() - f0.log10()) / (f1.log10() - f0.log10());
        values[i - 1] + t * (values[i] - values[i - 1])
    }

    /// Magnitude in dB at `f`, log-linearly interpolated.
    pub fn response_db_at(&self, f: f64) -> f64 {
        self.interpolate(&self.mag_db, f)
    }

    /// Unwrapped phase in degrees at `f`, log-linearly interpolated.
    pub fn phase_deg_at(&self, f: f64) -> f64 {
        self.interpolate(&self.phase_deg, f)
    }

    /// CSV rows `frequency_hz,mag_db,phase_deg`, with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz,mag_db,phase_deg\n");
        for i in 0..self.len() {
            out.push_str(&format!("{},{},{}\n", self.freqs[i], self.mag_db[i], self.phase_deg[i]));
        }
        out
    }
}

/// Scalar summary of a response curve.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub dc_gain_db: f64,
    /// Lowest frequency where the magnitude first drops 3 dB below the
    /// dc gain, log-linearly interpolated; `None` when the curve never
    /// crosses within the sweep.
    pub bandwidth_hz: Option<f64>,
    pub component_count: usize,
    curve: ResponseCurve,
}

impl Metrics {
    pub fn phase_at(&self, f: f64) -> f64 {
        self.curve.phase_deg_at(f)
    }

    pub fn response_at(&self, f: f64) -> f64 {
        self.curve.response_db_at(f)
    }

    /// Bandwidth, with the sweep maximum standing in when no crossing
    /// was found.
    pub fn bandwidth_or_max(&self) -> f64 {
        self.bandwidth_hz
            .unwrap_or_else(|| *self.curve.freqs().last().unwrap())
    }
}

/// Extract metrics from a curve. `component_count` is carried through
/// for objective recipes that reference it.
pub fn metrics(curve: &ResponseCurve, component_count: usize) -> Metrics {
    let mag = curve.magnitude_db();
    let dc_gain_db = mag[0];
    let target = dc_gain_db - 3.0;
    let mut bandwidth_hz = None;
    for i in 1..mag.len() {
        if mag[i] < target {
            let (m0, m1) = (mag[i - 1], mag[i]);
            let t = (target - m0) / (m1 - m0);
            let lf = curve.freqs()[i - 1].log10()
                + t * (curve.freqs()[i].log10() - curve.freqs()[i - 1].log10());
            bandwidth_hz = Some(10f64.powf(lf));
            break;
        }
    }
    Metrics {
        dc_gain_db,
        bandwidth_hz,
        component_count,
        curve: curve.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    Magnitude,
    Phase,
}

/// Weighted sum of absolute deviations from an ideal curve, with
/// separate passband and stopband weights.
pub fn weighted_deviation(
    obs: &ResponseCurve,
    ideal: &ResponseCurve,
    passband_edge_hz: f64,
    w_pass: f64,
    w_stop: f64,
    mode: DeviationMode,
) -> f64 {
    assert_eq!(obs.freqs(), ideal.freqs(), "curves must share the sweep");
    let (a, b) = match mode {
        DeviationMode::Magnitude => (obs.magnitude_db(), ideal.magnitude_db()),
        DeviationMode::Phase => (obs.phase_deg(), ideal.phase_deg()),
    };
    obs.freqs()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&f, (&x, &y))| {
            let w = if f <= passband_edge_hz { w_pass } else { w_stop };
            w * (x - y).abs()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyDirection {
    AboveIsBad,
    BelowIsBad,
}

/// Ratio objective with a linear penalty on constraint violation:
/// `measured/reference + alpha * |measured - reference| / reference`
/// when the measurement violates `direction`, plain ratio otherwise.
pub fn penalized_ratio(
    measured: f64,
    reference: f64,
    alpha: f64,
    direction: PenaltyDirection,
) -> Result<f64, SimulatorError> {
    if !(reference > 0.0) || alpha < 0.0 {
        return Err(SimulatorError::BadReference);
    }
    let violated = match direction {
        PenaltyDirection::AboveIsBad => measured > reference,
        PenaltyDirection::BelowIsBad => measured < reference,
    };
    let mut value = measured / reference;
    if violated {
        value += alpha * (measured - reference).abs() / reference;
    }
    Ok(value)
}

/// Objective vector in minimization sense. Invalid simulations carry
/// the [`BIG`] sentinel in every entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub values: Vec<f64>,
    pub valid: bool,
}

/// Result of one scored simulation: the objective vector plus the
/// output-quantity vector (absent for invalid circuits).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objectives: ObjectiveVector,
    pub outputs: Option<Vec<f64>>,
}

impl ObjectiveVector {
    pub fn invalid(len: usize) -> Self {
        Self {
            values: vec![BIG; len],
            valid: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Scalar quantity extracted from a response curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputQuantity {
    GainDb,
    BandwidthHz,
    ResponseDbAt(f64),
    PhaseDegAt(f64),
}

impl OutputQuantity {
    pub fn label(&self) -> String {
        match self {
            OutputQuantity::GainDb => "gain_db".into(),
            OutputQuantity::BandwidthHz => "bandwidth_hz".into(),
            OutputQuantity::ResponseDbAt(f) => format!("response_db_{f}hz"),
            OutputQuantity::PhaseDegAt(f) => format!("phase_deg_{f}hz"),
        }
    }
}

/// One term of an objective recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveTerm {
    MagnitudeDeviation {
        passband_edge_hz: f64,
        w_pass: f64,
        w_stop: f64,
    },
    PhaseDeviation {
        passband_edge_hz: f64,
        w_pass: f64,
        w_stop: f64,
    },
    ActiveComponentCount,
    PenalizedRatio {
        quantity: OutputQuantity,
        reference: f64,
        alpha: f64,
        direction: PenaltyDirection,
    },
}

/// Fixed architecture whose component values come from an input vector,
/// used in component-selection and fine-tuning modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitTemplate {
    pub slots: Vec<(ComponentKind, usize, usize)>,
}

/// Everything needed to score a design: scaffold, catalog, sweep, the
/// target response, the objective recipe, and the output quantities the
/// fine-tuning surrogate learns.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub scaffold: Scaffold,
    pub catalog: ComponentCatalog,
    pub sweep: FrequencySweep,
    pub ideal: ResponseCurve,
    pub objectives: Vec<ObjectiveTerm>,
    /// Optional per-channel divisors (e.g. the seed design's objectives).
    pub objective_scale: Option<Vec<f64>>,
    pub template: Option<CircuitTemplate>,
    pub outputs: Vec<OutputQuantity>,
}

impl DesignProblem {
    pub fn netlist_for_values(&self, values: &[f64]) -> Netlist {
        let template = self.template.as_ref().expect("problem has no circuit template");
        assert_eq!(values.len(), template.slots.len(), "value/template arity mismatch");
        let mut components: Vec<Component> = template
            .slots
            .iter()
            .zip(values)
            .map(|(&(kind, a, b), &value)| Component {
                kind,
                node_a: a,
                node_b: b,
                value,
            })
            .collect();
        components.push(Component {
            kind: ComponentKind::VoltageSource,
            node_a: self.scaffold.source_node,
            node_b: self.scaffold.ground_node,
            value: self.scaffold.ac_amplitude,
        });
        Netlist {
            components,
            source_node: self.scaffold.source_node,
            output_node: self.scaffold.output_node,
            ground_node: self.scaffold.ground_node,
        }
    }

    pub fn evaluate_netlist(&self, netlist: &Netlist, active: usize) -> ObjectiveVector {
        self.evaluate_netlist_full(netlist, active).objectives
    }

    /// Objectives plus the output-quantity vector from one simulation.
    pub fn evaluate_netlist_full(&self, netlist: &Netlist, active: usize) -> Evaluation {
        let curve = match simulate(netlist, &self.sweep) {
            Ok(c) => c,
            Err(_) => {
                return Evaluation {
                    objectives: ObjectiveVector::invalid(self.objectives.len()),
                    outputs: None,
                }
            }
        };
        let mut values = Vec::with_capacity(self.objectives.len());
        for term in &self.objectives {
            let v = match term {
                ObjectiveTerm::MagnitudeDeviation { passband_edge_hz, w_pass, w_stop } => {
                    weighted_deviation(&curve, &self.ideal, *passband_edge_hz, *w_pass, *w_stop, DeviationMode::Magnitude)
                }
                ObjectiveTerm::PhaseDeviation { passband_edge_hz, w_pass, w_stop } => {
                    weighted_deviation(&curve, &self.ideal, *passband_edge_hz, *w_pass, *w_stop, DeviationMode::Phase)
                }
                ObjectiveTerm::ActiveComponentCount => active as f64,
                ObjectiveTerm::PenalizedRatio { quantity, reference, alpha, direction } => {
                    let measured = self.output_value(&curve, *quantity);
                    match penalized_ratio(measured, *reference, *alpha, *direction) {
                        Ok(v) => v,
                        Err(_) => {
                            return Evaluation {
                                objectives: ObjectiveVector::invalid(self.objectives.len()),
                                outputs: None,
                            }
                        }
                    }
                }
            };
            values.push(v);
        }
        if let Some(scale) = &self.objective_scale {
            for (v, s) in values.iter_mut().zip(scale) {
                *v /= s;
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Evaluation {
                objectives: ObjectiveVector::invalid(self.objectives.len()),
                outputs: None,
            };
        }
        Evaluation {
            objectives: ObjectiveVector { values, valid: true },
            outputs: Some(self.outputs_for_curve(&curve)),
        }
    }

    /// Score a (post-processed) chromosome.
    pub fn evaluate_chromosome(&self, chromosome: &Chromosome) -> ObjectiveVector {
        self.evaluate_chromosome_full(chromosome).objectives
    }

    pub fn evaluate_chromosome_full(&self, chromosome: &Chromosome) -> Evaluation {
        let netlist = decode(chromosome, &self.catalog, &self.scaffold);
        self.evaluate_netlist_full(&netlist, active_count(chromosome))
    }

    /// Score a component-value vector against the circuit template.
    pub fn evaluate_values(&self, values: &[f64]) -> ObjectiveVector {
        self.evaluate_values_full(values).objectives
    }

    pub fn evaluate_values_full(&self, values: &[f64]) -> Evaluation {
        let netlist = self.netlist_for_values(values);
        self.evaluate_netlist_full(&netlist, values.len())
    }

    fn output_value(&self, curve: &ResponseCurve, q: OutputQuantity) -> f64 {
        match q {
            OutputQuantity::GainDb => curve.magnitude_db()[0],
            OutputQuantity::BandwidthHz => metrics(curve, 0).bandwidth_or_max(),
            OutputQuantity::ResponseDbAt(f) => curve.response_db_at(f),
            OutputQuantity::PhaseDegAt(f) => curve.phase_deg_at(f),
        }
    }

    /// The output-quantity vector for a curve, in recipe order.
    pub fn outputs_for_curve(&self, curve: &ResponseCurve) -> Vec<f64> {
        self.outputs.iter().map(|&q| self.output_value(curve, q)).collect()
    }

    /// Simulate a value vector and extract the output quantities.
    /// `None` when the circuit is invalid.
    pub fn outputs_for_values(&self, values: &[f64]) -> Option<Vec<f64>> {
        let netlist = self.netlist_for_values(values);
        simulate(&netlist, &self.sweep)
            .ok()
            .map(|curve| self.outputs_for_curve(&curve))
    }
}

/// Node voltages and source branch currents at one frequency.
#[derive(Debug, Clone)]
pub struct NodalSolution {
    voltages: Vec<(usize, Complex64)>,
    /// Current each source delivers into its `node_a` terminal.
    pub source_currents: Vec<Complex64>,
}

impl NodalSolution {
    /// Voltage at `node`; ground reads zero, absent nodes read `None`.
    pub fn voltage(&self, node: usize) -> Option<Complex64> {
        if node == 0 {
            return Some(Complex64::new(0.0, 0.0));
        }
        self.voltages.iter().find(|(n, _)| *n == node).map(|(_, v)| *v)
    }
}

fn admittance(c: &Component, omega: f64) -> Complex64 {
    match c.kind {
        ComponentKind::Resistor => Complex64::new(1.0 / c.value, 0.0),
        ComponentKind::Capacitor => Complex64::new(0.0, omega * c.value),
        ComponentKind::Inductor => Complex64::new(0.0, -1.0 / (omega * c.value)),
        ComponentKind::VoltageSource => unreachable!("sources are stamped via augmentation rows"),
    }
}

/// Solve the nodal system of `netlist` at frequency `f`.
pub fn nodal_solution(netlist: &Netlist, f: f64) -> Result<NodalSolution, SimulatorError> {
    for c in &netlist.components {
        if !(c.value > 0.0) {
            return Err(SimulatorError::NonPositiveValue(c.value));
        }
    }
    let omega = 2.0 * PI * f;

    // Node ids in first-appearance order, ground excluded.
    let mut nodes: Vec<usize> = Vec::new();
    let node_index = |nodes: &mut Vec<usize>, n: usize| -> Option<usize> {
        if n == netlist.ground_node {
            return None;
        }
        match nodes.iter().position(|&x| x == n) {
            Some(i) => Some(i),
            None => {
                nodes.push(n);
                Some(nodes.len() - 1)
            }
        }
    };
    let mut passives = Vec::new();
    let mut sources = Vec::new();
    for c in &netlist.components {
        let ia = node_index(&mut nodes, c.node_a);
        let ib = node_index(&mut nodes, c.node_b);
        if c.kind == ComponentKind::VoltageSource {
            sources.push((ia, ib, c.value));
        } else {
            passives.push((ia, ib, admittance(c, omega)));
        }
    }
    if sources.is_empty() {
        return Err(SimulatorError::InvalidCircuit("no source".into()));
    }
    let n = nodes.len();
    let dim = n + sources.len();
    let mut a = vec![Complex64::new(0.0, 0.0); dim * dim];
    let mut b = vec![Complex64::new(0.0, 0.0); dim];
    for &(ia, ib, y) in &passives {
        if let Some(i) = ia {
            a[i * dim + i] += y;
        }
        if let Some(j) = ib {
            a[j * dim + j] += y;
        }
        if let (Some(i), Some(j)) = (ia, ib) {
            a[i * dim + j] -= y;
            a[j * dim + i] -= y;
        }
    }
    for (k, &(ia, ib, amplitude)) in sources.iter().enumerate() {
        let row = n + k;
        if let Some(i) = ia {
            a[row * dim + i] += 1.0;
            a[i * dim + row] += 1.0;
        }
        if let Some(j) = ib {
            a[row * dim + j] -= 1.0;
            a[j * dim + row] -= 1.0;
        }
        b[row] = Complex64::new(amplitude, 0.0);
    }

    let x = solve_dense(&mut a, &mut b, dim)
        .ok_or_else(|| SimulatorError::InvalidCircuit(format!("singular system at {f} Hz")))?;

    Ok(NodalSolution {
        voltages: nodes.iter().enumerate().map(|(i, &node)| (node, x[i])).collect(),
        // The augmentation variable is the current into the source's
        // positive terminal; negate to read delivered current.
        source_currents: (0..sources.len()).map(|k| -x[n + k]).collect(),
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(a: &mut [Complex64], b: &mut [Complex64], dim: usize) -> Option<Vec<Complex64>> {
    let scale = a
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = scale * 1e-13;
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r, &s| a[r * dim + col].norm().total_cmp(&a[s * dim + col].norm()))
            .unwrap();
        if a[pivot_row * dim + col].norm() <= tol {
            return None;
        }
        if pivot_row != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot_row * dim + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * dim + col];
        for row in col + 1..dim {
            let factor = a[row * dim + col] / pivot;
            if factor.norm() == 0.0 {
                continue;
            }
            for j in col..dim {
                let v = a[col * dim + j];
                a[row * dim + j] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); dim];
    for row in (0..dim).rev() {
        let mut acc = b[row];
        for j in row + 1..dim {
            acc -= a[row * dim + j] * x[j];
        }
        x[row] = acc / a[row * dim + row];
    }
    Some(x)
}

/// Simulate the netlist across the sweep and report the transfer
/// function at the output node.
pub fn simulate(netlist: &Netlist, sweep: &FrequencySweep) -> Result<ResponseCurve, SimulatorError> {
    let amplitude = netlist
        .components
        .iter()
        .find(|c| c.kind == ComponentKind::VoltageSource)
        .map(|c| c.value)
        .ok_or_else(|| SimulatorError::InvalidCircuit("no source".into()))?;
    let mut gain = Vec::with_capacity(sweep.len());
    for &f in sweep.points() {
        let sol = nodal_solution(netlist, f)?;
        let v_out = sol.voltage(netlist.output_node).ok_or_else(|| {
            SimulatorError::InvalidCircuit(format!(
                "output node {} is not connected",
                netlist.output_node
            ))
        })?;
        gain.push(v_out / amplitude);
    }
    Ok(ResponseCurve::from_gains(sweep, gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{Gene, Origin};

    fn rc_netlist(r: f64, c: f64) -> Netlist {
        Netlist {
            components: vec![
                Component { kind: ComponentKind::Resistor, node_a: 1, node_b: 2, value: r },
                Component { kind: ComponentKind::Capacitor, node_a: 2, node_b: 0, value: c },
                Component { kind: ComponentKind::VoltageSource, node_a: 1, node_b: 0, value: 1.0 },
            ],
            source_node: 1,
            output_node: 2,
            ground_node: 0,
        }
    }

    fn analytic_rc(f: f64, r: f64, c: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(1.0, 2.0 * PI * f * r * c)
    }

    #[test]
    fn rc_lowpass_at_cutoff() {
        let sweep = FrequencySweep::log_spaced(1000.0, 1000.0, 1).unwrap();
        let curve = simulate(&rc_netlist(600.0, 265.258e-9), &sweep).unwrap();
        let mag = curve.magnitude_db()[0];
        let phase = curve.phase_deg()[0];
        assert!((mag - (-3.0103)).abs() < 1e-3, "mag {mag}");
        assert!((phase - (-45.0)).abs() < 1e-3, "phase {phase}");
        assert!((curve.gain()[0].norm() - 1.0 / 2f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn rc_matches_analytic_to_1e9() {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 200).unwrap();
        let (r, c) = (600.0, 265.258e-9);
        let curve = simulate(&rc_netlist(r, c), &sweep).unwrap();
        for (i, &f) in sweep.points().iter().enumerate() {
            let expected = analytic_rc(f, r, c);
            let rel = (curve.gain()[i] - expected).norm() / expected.norm();
            assert!(rel < 1e-9, "f={f} rel={rel}");
        }
    }

    #[test]
    fn resistive_divider_is_half() {
        let netlist = Netlist {
            components: vec![
                Component { kind: ComponentKind::Resistor, node_a: 1, node_b: 2, value: 1000.0 },
                Component { kind: ComponentKind::Resistor, node_a: 2, node_b: 0, value: 1000.0 },
                Component { kind: ComponentKind::VoltageSource, node_a: 1, node_b: 0, value: 1.0 },
            ],
            source_node: 1,
            output_node: 2,
            ground_node: 0,
        };
        let sweep = FrequencySweep::log_spaced(10.0, 1e5, 5).unwrap();
        let curve = simulate(&netlist, &sweep).unwrap();
        for &m in curve.magnitude_db() {
            assert!((m - (-6.0206)).abs() < 1e-4, "mag {m}");
        }
    }

    #[test]
    fn floating_output_is_invalid() {
        let netlist = Netlist {
            components: vec![
                Component { kind: ComponentKind::Resistor, node_a: 1, node_b: 3, value: 100.0 },
                Component { kind: ComponentKind::Resistor, node_a: 3, node_b: 0, value: 100.0 },
                Component { kind: ComponentKind::VoltageSource, node_a: 1, node_b: 0, value: 1.0 },
            ],
            source_node: 1,
            output_node: 2,
            ground_node: 0,
        };
        let sweep = FrequencySweep::log_spaced(10.0, 1e5, 3).unwrap();
        assert!(matches!(
            simulate(&netlist, &sweep),
            Err(SimulatorError::InvalidCircuit(_))
        ));
    }

    #[test]
    fn floating_island_is_singular() {
        let netlist = Netlist {
            components: vec![
                Component { kind: ComponentKind::Resistor, node_a: 1, node_b: 2, value: 100.0 },
                Component { kind: ComponentKind::Resistor, node_a: 2, node_b: 0, value: 100.0 },
                Component { kind: ComponentKind::Resistor, node_a: 3, node_b: 4, value: 50.0 },
                Component { kind: ComponentKind::VoltageSource, node_a: 1, node_b: 0, value: 1.0 },
            ],
            source_node: 1,
            output_node: 2,
            ground_node: 0,
        };
        let sweep = FrequencySweep::log_spaced(10.0, 1e5, 3).unwrap();
        assert!(simulate(&netlist, &sweep).is_err());
    }

    #[test]
    fn kcl_holds_at_every_node() {
        let netlist = rc_netlist(600.0, 265.258e-9);
        for f in [10.0, 1000.0, 123456.0] {
            let sol = nodal_solution(&netlist, f).unwrap();
            let omega = 2.0 * PI * f;
            // Net current into ground through passives vs source current.
            let mut into_ground = Complex64::new(0.0, 0.0);
            let mut max_branch = 0.0f64;
            for c in &netlist.components {
                if c.kind == ComponentKind::VoltageSource {
                    continue;
                }
                let va = sol.voltage(c.node_a).unwrap();
                let vb = sol.voltage(c.node_b).unwrap();
                let i_ab = admittance(c, omega) * (va - vb);
                max_branch = max_branch.max(i_ab.norm());
                if c.node_b == 0 {
                    into_ground += i_ab;
                }
                if c.node_a == 0 {
                    into_ground -= i_ab;
                }
            }
            let residual = (into_ground - sol.source_currents[0]).norm() / max_branch;
            assert!(residual < 1e-9, "f={f} residual={residual}");
        }
    }

    #[test]
    fn first_order_magnitude_is_monotone() {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 200).unwrap();
        let curve = simulate(&rc_netlist(600.0, 265.258e-9), &sweep).unwrap();
        for w in curve.magnitude_db().windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn bandwidth_of_analytic_first_order() {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 200).unwrap();
        let curve = ResponseCurve::first_order_lowpass(&sweep, 1000.0);
        let m = metrics(&curve, 2);
        let bw = m.bandwidth_hz.unwrap();
        assert!((995.0..=1005.0).contains(&bw), "bw {bw}");
        assert!(m.dc_gain_db.abs() < 1e-3);
    }

    #[test]
    fn flat_curve_has_no_bandwidth() {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 50).unwrap();
        let curve = ResponseCurve::from_gains(&sweep, vec![Complex64::new(1.0, 0.0); 50]);
        assert_eq!(metrics(&curve, 1).bandwidth_hz, None);
    }

    #[test]
    fn coarse_design_bandwidth_near_reported_value() {
        // 600-ohm resistor with two parallel capacitors (119.37n + 155.12n).
        let netlist = Netlist {
            components: vec![
                Component { kind: ComponentKind::Resistor, node_a: 1, node_b: 2, value: 600.0 },
                Component { kind: ComponentKind::Capacitor, node_a: 2, node_b: 0, value: 119.37e-9 },
                Component { kind: ComponentKind::Capacitor, node_a: 2, node_b: 0, value: 155.12e-9 },
                Component { kind: ComponentKind::VoltageSource, node_a: 1, node_b: 0, value: 1.0 },
            ],
            source_node: 1,
            output_node: 2,
            ground_node: 0,
        };
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 200).unwrap();
        let curve = simulate(&netlist, &sweep).unwrap();
        let m = metrics(&curve, 3);
        let bw = m.bandwidth_hz.unwrap();
        assert!((960.0..=972.0).contains(&bw), "bw {bw}");
        assert!(m.dc_gain_db.abs() < 0.01, "gain {}", m.dc_gain_db);
        // phase near -46 degrees around the corner
        let ph = m.phase_at(1000.0);
        assert!((ph - (-46.0)).abs() < 1.0, "phase {ph}");
    }

    #[test]
    fn weighted_deviation_cases() {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 100).unwrap();
        let ideal = ResponseCurve::first_order_lowpass(&sweep, 1000.0);
        assert_eq!(
            weighted_deviation(&ideal, &ideal, 1000.0, 40.0, 1.0, DeviationMode::Magnitude),
            0.0
        );
        // +1 dB at exactly one stopband point
        let bump = 10f64.powf(1.0 / 20.0);
        let mut gains = ideal.gain().to_vec();
        let stop_idx = sweep.points().iter().position(|&f| f > 1000.0).unwrap();
        gains[stop_idx] *= bump;
        let obs = ResponseCurve::from_gains(&sweep, gains);
        let d = weighted_deviation(&obs, &ideal, 1000.0, 40.0, 1.0, DeviationMode::Magnitude);
        assert!((d - 1.0).abs() < 1e-9, "stopband deviation {d}");
        // +1 dB at exactly one passband point, weight 40
        let mut gains = ideal.gain().to_vec();
        gains[0] *= bump;
        let obs = ResponseCurve::from_gains(&sweep, gains);
        let d = weighted_deviation(&obs, &ideal, 1000.0, 40.0, 1.0, DeviationMode::Magnitude);
        assert!((d - 40.0).abs() < 1e-8, "passband deviation {d}");
    }

    #[test]
    fn penalized_ratio_cases() {
        let r = 19.2;
        assert_eq!(penalized_ratio(r, r, 15.0, PenaltyDirection::AboveIsBad).unwrap(), 1.0);
        let v = penalized_ratio(1.1 * r, r, 15.0, PenaltyDirection::AboveIsBad).unwrap();
        assert!((v - 2.6).abs() < 1e-9, "{v}");
        let v = penalized_ratio(0.9 * r, r, 15.0, PenaltyDirection::AboveIsBad).unwrap();
        assert!((v - 0.9).abs() < 1e-12, "{v}");
        assert_eq!(
            penalized_ratio(1.0, 0.0, 15.0, PenaltyDirection::AboveIsBad),
            Err(SimulatorError::BadReference)
        );
    }

    fn lowpass_problem() -> DesignProblem {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 200).unwrap();
        let ideal = ResponseCurve::first_order_lowpass(&sweep, 1000.0);
        DesignProblem {
            scaffold: Scaffold {
                max_nodes: 5,
                source_node: 1,
                output_node: 2,
                ground_node: 0,
                ac_amplitude: 1.0,
            },
            catalog: crate::netlist::tests::lowpass_catalog(),
            sweep,
            ideal,
            objectives: vec![
                ObjectiveTerm::MagnitudeDeviation { passband_edge_hz: 1000.0, w_pass: 40.0, w_stop: 1.0 },
                ObjectiveTerm::PhaseDeviation { passband_edge_hz: 1000.0, w_pass: 40.0, w_stop: 1.0 },
                ObjectiveTerm::ActiveComponentCount,
            ],
            objective_scale: None,
            template: Some(CircuitTemplate {
                slots: vec![
                    (ComponentKind::Resistor, 1, 2),
                    (ComponentKind::Capacitor, 2, 0),
                ],
            }),
            outputs: vec![
                OutputQuantity::GainDb,
                OutputQuantity::BandwidthHz,
                OutputQuantity::ResponseDbAt(200.0),
                OutputQuantity::ResponseDbAt(500.0),
                OutputQuantity::ResponseDbAt(2000.0),
            ],
        }
    }

    #[test]
    fn evaluate_scales_to_unity_on_self() {
        let mut problem = lowpass_problem();
        let seed = problem.evaluate_values(&[600.0, 265.258e-9]);
        assert!(seed.valid);
        problem.objective_scale = Some(seed.values.clone());
        let scaled = problem.evaluate_values(&[600.0, 265.258e-9]);
        for v in &scaled.values {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn evaluate_invalid_chromosome_is_sentinel() {
        let problem = lowpass_problem();
        // single gene touching neither source nor output
        let c = Chromosome {
            genes: vec![Gene {
                kind: ComponentKind::Resistor,
                node_a: 3,
                node_b: 4,
                value_index: 0,
                active: true,
            }],
            origin: Origin::Random,
        };
        let obj = problem.evaluate_chromosome(&c);
        assert!(!obj.valid);
        assert_eq!(obj.values, vec![BIG; 3]);
    }

    #[test]
    fn evaluate_ideal_response_zeroes_deviation_channels() {
        let problem = lowpass_problem();
        // An exact first-order RC at f_c = 1 kHz: R = 600, C = 1/(2 pi 1000 * 600)
        let c = 1.0 / (2.0 * PI * 1000.0 * 600.0);
        let obj = problem.evaluate_values(&[600.0, c]);
        assert!(obj.valid);
        assert!(obj.values[0] < 1e-6, "magnitude channel {}", obj.values[0]);
        assert!(obj.values[1] < 1e-4, "phase channel {}", obj.values[1]);
        assert_eq!(obj.values[2], 2.0);
    }

    #[test]
    fn interpolation_hits_grid_and_midpoints() {
        let sweep = FrequencySweep::log_spaced(10.0, 1e6, 201).unwrap();
        let curve = ResponseCurve::first_order_lowpass(&sweep, 1000.0);
        // 1000 Hz is a grid point of the 201-point sweep over 5 decades.
        let exact = curve.response_db_at(1000.0);
        assert!((exact - (-3.0103)).abs() < 1e-4, "{exact}");
        // interpolation between grid points stays close to the analytic curve
        let f: f64 = 1500.0;
        let analytic = -10.0 * (1.0 + (f / 1000.0) * (f / 1000.0)).log10();
        assert!((curve.response_db_at(f) - analytic).abs() < 0.01);
    }

    #[test]
    fn sweep_validation() {
        assert!(FrequencySweep::log_spaced(0.0, 10.0, 5).is_err());
        assert!(FrequencySweep::log_spaced(10.0, 5.0, 5).is_err());
        assert!(FrequencySweep::log_spaced(10.0, 10.0, 0).is_err());
        let s = FrequencySweep::log_spaced(10.0, 1e6, 200).unwrap();
        assert!(s.points().windows(2).all(|w| w[1] > w[0]));
    }
}
