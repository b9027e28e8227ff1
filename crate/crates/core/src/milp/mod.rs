//! Big-M encoding of a trained ReLU network into a mixed-integer linear
//! feasibility program, and a depth-first branch-and-bound solver over
//! the neuron indicator binaries.
//!
//! Each unstable hidden neuron contributes one continuous post-activation
//! variable `h`, one binary indicator (0 = active, 1 = inactive), and the
//! big-M constraint block
//!
//! ```text
//!   h >= z,   h <= z + Q d,   h >= 0,   h <= Q (1 - d)
//! ```
//!
//! where `z` is the neuron's pre-activation as an affine expression and
//! `Q` exceeds the largest possible magnitude of `z` over the input box
//! (computed per neuron by interval propagation). Neurons whose
//! pre-activation interval does not straddle zero are eliminated before
//! encoding: stably-active ones pass their affine form through, stably
//! inactive ones become the zero form.

pub mod lp;

use crate::sampling::{Hyperbox, Interval};
use crate::surrogate::{forward, MlpParams};
use lp::{LinearProgram, LpOutcome, RowOp};
use std::time::{Duration, Instant};

/// Relative margin applied on top of the propagated magnitude bound.
const Q_MARGIN: f64 = 1e-3;

/// Default feasibility tolerance for point verification, in normalized
/// output units.
pub const EPS_FEAS: f64 = 1e-6;

/// Pre-activation intervals per layer (hidden layers then output).
#[derive(Debug, Clone)]
pub struct LayerBounds {
    pub pre_activation: Vec<Vec<Interval>>,
}

impl LayerBounds {
    /// Output-layer bounds (last entry).
    pub fn output(&self) -> &[Interval] {
        self.pre_activation.last().unwrap()
    }

    /// Big-M constant for a hidden neuron.
    pub fn big_m(&self, layer: usize, neuron: usize) -> f64 {
        let iv = self.pre_activation[layer][neuron];
        iv.lo.abs().max(iv.hi.abs()) * (1.0 + Q_MARGIN)
    }
}

/// Interval arithmetic layer by layer: pre-activation bounds from
/// weighted sums of post-activation bounds, post-activation bounds
/// clipped at zero.
pub fn propagate_bounds(params: &MlpParams, input_box: &Hyperbox) -> LayerBounds {
    let mut post: Vec<Interval> = input_box.dims().to_vec();
    let mut pre_activation = Vec::with_capacity(params.layer_count());
    let last = params.layer_count() - 1;
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut layer = Vec::with_capacity(w.nrows());
        for (row, &bias) in w.outer_iter().zip(b.iter()) {
            let mut lo = bias;
            let mut hi = bias;
            for (&wj, iv) in row.iter().zip(&post) {
                if wj >= 0.0 {
                    lo += wj * iv.lo;
                    hi += wj * iv.hi;
                } else {
                    lo += wj * iv.hi;
                    hi += wj * iv.lo;
                }
            }
            layer.push(Interval::new(lo, hi));
        }
        post = if l < last {
            layer.iter().map(|iv| Interval::new(iv.lo.max(0.0), iv.hi.max(0.0))).collect()
        } else {
            layer.clone()
        };
        pre_activation.push(layer);
    }
    LayerBounds { pre_activation }
}

/// Affine expression over the program's continuous variables.
#[derive(Debug, Clone)]
struct AffineForm {
    coeffs: Vec<(usize, f64)>,
    constant: f64,
}

impl AffineForm {
    fn var(idx: usize) -> Self {
        Self { coeffs: vec![(idx, 1.0)], constant: 0.0 }
    }

    fn zero() -> Self {
        Self { coeffs: Vec::new(), constant: 0.0 }
    }

    /// Weighted sum of forms plus a bias.
    fn combine(weights: &[f64], forms: &[AffineForm], bias: f64) -> Self {
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        let mut constant = bias;
        for (&w, form) in weights.iter().zip(forms) {
            if w == 0.0 {
                continue;
            }
            constant += w * form.constant;
            for &(j, c) in &form.coeffs {
                *acc.entry(j).or_insert(0.0) += w * c;
            }
        }
        Self {
            coeffs: acc.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub stable_active: usize,
    pub stable_inactive: usize,
    pub unstable: usize,
}

/// Linear constraints, binary neuron indicators, input box, and output
/// intervals, ready for branch-and-bound.
pub struct FeasibilityProgram {
    base: LinearProgram,
    input_cols: Vec<usize>,
    delta_cols: Vec<usize>,
    delta_labels: Vec<(usize, usize)>,
    h_labels: Vec<(usize, usize)>,
    params: MlpParams,
    output_intervals: Vec<Option<Interval>>,
    pub stats: EncodeStats,
}

impl FeasibilityProgram {
    pub fn binary_count(&self) -> usize {
        self.delta_cols.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_cols.len()
    }

    /// Fix an indicator before solving (used for activation-pattern
    /// probes; 0 = active, 1 = inactive).
    pub fn fix_indicator(&mut self, index: usize, value: bool) {
        let col = self.delta_cols[index];
        let v = if value { 1.0 } else { 0.0 };
        self.base.lower[col] = v;
        self.base.upper[col] = v;
    }
}

/// Compile the network, input box, and output intervals into a
/// feasibility program. `output_intervals[k] = None` leaves output `k`
/// unconstrained; infinite endpoints are allowed.
pub fn encode(
    params: &MlpParams,
    input_box: &Hyperbox,
    output_intervals: &[Option<Interval>],
) -> FeasibilityProgram {
    let spec = params.spec();
    assert_eq!(input_box.dim(), spec.input_dim, "input box dimension mismatch");
    assert_eq!(output_intervals.len(), spec.output_dim, "output interval arity mismatch");

    let bounds = propagate_bounds(params, input_box);
    let mut lp = LinearProgram::default();
    let input_cols: Vec<usize> = input_box
        .dims()
        .iter()
        .map(|iv| lp.add_var(iv.lo, iv.hi))
        .collect();

    let mut forms: Vec<AffineForm> = input_cols.iter().map(|&c| AffineForm::var(c)).collect();
    let mut delta_cols = Vec::new();
    let mut delta_labels = Vec::new();
    let mut h_labels = Vec::new();
    let mut stats = EncodeStats::default();

    let hidden_layers = params.layer_count() - 1;
    for l in 0..hidden_layers {
        let w = &params.weights[l];
        let b = &params.biases[l];
        let mut next_forms = Vec::with_capacity(w.nrows());
        for j in 0..w.nrows() {
            let pre = AffineForm::combine(w.row(j).as_slice().unwrap(), &forms, b[j]);
            let iv = bounds.pre_activation[l][j];
            if iv.lo > 0.0 {
                // stably active: the ReLU is the identity here
                stats.stable_active += 1;
                next_forms.push(pre);
            } else if iv.hi <= 0.0 {
                stats.stable_inactive += 1;
                next_forms.push(AffineForm::zero());
            } else {
                stats.unstable += 1;
                let q = bounds.big_m(l, j);
                let h = lp.add_var(0.0, iv.hi.max(0.0));
                let d = lp.add_var(0.0, 1.0);
                h_labels.push((l, j));
                delta_cols.push(d);
                delta_labels.push((l, j));
                // h >= z  <=>  z - h <= 0
                let mut row = pre.coeffs.clone();
                row.push((h, -1.0));
                lp.add_row(row, RowOp::Le, -pre.constant);
                // h <= z + Q d  <=>  h - z - Q d <= 0
                let mut row: Vec<(usize, f64)> =
                    pre.coeffs.iter().map(|&(c, a)| (c, -a)).collect();
                row.push((h, 1.0));
                row.push((d, -q));
                lp.add_row(row, RowOp::Le, pre.constant);
                // h <= Q (1 - d)
                lp.add_row(vec![(h, 1.0), (d, q)], RowOp::Le, q);
                next_forms.push(AffineForm::var(h));
            }
        }
        forms = next_forms;
    }

    // output layer: affine, then interval rows
    let w = &params.weights[hidden_layers];
    let b = &params.biases[hidden_layers];
    for k in 0..w.nrows() {
        let Some(iv) = output_intervals[k] else { continue };
        let out = AffineForm::combine(w.row(k).as_slice().unwrap(), &forms, b[k]);
        if iv.hi.is_finite() {
            lp.add_row(out.coeffs.clone(), RowOp::Le, iv.hi - out.constant);
        }
        if iv.lo.is_finite() {
            lp.add_row(out.coeffs.clone(), RowOp::Ge, iv.lo - out.constant);
        }
    }

    FeasibilityProgram {
        base: lp,
        input_cols,
        delta_cols,
        delta_labels,
        h_labels,
        params: params.clone(),
        output_intervals: output_intervals.to_vec(),
        stats,
    }
}

/// Exact forward pass check: true iff every constrained output lies in
/// its interval inflated by `eps`.
pub fn verify_feasible(
    params: &MlpParams,
    point: &[f64],
    output_intervals: &[Option<Interval>],
    eps: f64,
) -> bool {
    let out = forward(params, point);
    out.iter().zip(output_intervals).all(|(&y, iv)| match iv {
        Some(iv) => y >= iv.lo - eps && y <= iv.hi + eps,
        None => true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    /// A satisfying input point, in the encoded (normalized) space.
    Feasible(Vec<f64>),
    Infeasible,
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub nodes: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveBudget {
    pub max_nodes: usize,
    pub time_limit: Option<Duration>,
}

impl Default for SolveBudget {
    fn default() -> Self {
        Self { max_nodes: 2000, time_limit: None }
    }
}

/// Depth-first branch and bound on fractional indicators: branch
/// variable is the most fractional, the inactive (`d = 0`) branch is
/// explored first, and every candidate point is verified by an exact
/// forward pass before being returned.
pub fn solve(program: &FeasibilityProgram, budget: SolveBudget) -> SolveResult {
    let start = Instant::now();
    let k = program.delta_cols.len();
    let mut nodes = 0usize;
    let mut degraded = false;
    let mut stack: Vec<Vec<Option<bool>>> = vec![vec![None; k]];

    while let Some(assignment) = stack.pop() {
        if nodes >= budget.max_nodes {
            return SolveResult { status: SolveStatus::BudgetExceeded, nodes, elapsed: start.elapsed() };
        }
        if let Some(limit) = budget.time_limit {
            if start.elapsed() > limit {
                return SolveResult { status: SolveStatus::BudgetExceeded, nodes, elapsed: start.elapsed() };
            }
        }
        nodes += 1;

        let mut node_lp = program.base.clone();
        for (i, a) in assignment.iter().enumerate() {
            if let Some(v) = a {
                let col = program.delta_cols[i];
                let val = if *v { 1.0 } else { 0.0 };
                node_lp.lower[col] = val;
                node_lp.upper[col] = val;
            }
        }

        match lp::solve_feasibility(&node_lp) {
            LpOutcome::Infeasible => continue,
            LpOutcome::Numerical => {
                degraded = true;
                continue;
            }
            LpOutcome::Feasible(x) => {
                let input: Vec<f64> = program.input_cols.iter().map(|&c| x[c]).collect();
                if verify_feasible(&program.params, &input, &program.output_intervals, EPS_FEAS) {
                    return SolveResult {
                        status: SolveStatus::Feasible(input),
                        nodes,
                        elapsed: start.elapsed(),
                    };
                }
                // branch on the most fractional unfixed indicator
                let mut branch: Option<(usize, f64)> = None;
                for (i, a) in assignment.iter().enumerate() {
                    if a.is_some() {
                        continue;
                    }
                    let v = x[program.delta_cols[i]];
                    let frac = v.min(1.0 - v);
                    if branch.map_or(true, |(_, f)| frac > f) {
                        branch = Some((i, frac));
                    }
                }
                match branch {
                    Some((i, _)) => {
                        let mut one = assignment.clone();
                        one[i] = Some(true);
                        let mut zero = assignment;
                        zero[i] = Some(false);
                        stack.push(one);
                        stack.push(zero); // popped first: inactive branch leads
                    }
                    None => {
                        // fully fixed yet the exact check failed: the LP point
                        // sits on a numerical boundary
                        degraded = true;
                    }
                }
            }
        }
    }

    let status = if degraded { SolveStatus::BudgetExceeded } else { SolveStatus::Infeasible };
    SolveResult { status, nodes, elapsed: start.elapsed() }
}

/// Write the program in LP text format for cross-checking with external
/// solvers.
pub fn write_lp_format<W: std::io::Write>(
    program: &FeasibilityProgram,
    w: &mut W,
) -> std::io::Result<()> {
    let name_of = |col: usize| -> String {
        if let Some(i) = program.input_cols.iter().position(|&c| c == col) {
            return format!("x{i}");
        }
        if let Some(i) = program.delta_cols.iter().position(|&c| c == col) {
            let (l, j) = program.delta_labels[i];
            return format!("d_{l}_{j}");
        }
        if let Some(i) = program
            .h_labels
            .iter()
            .enumerate()
            .position(|(i, _)| program.base_h_col(i) == col)
        {
            let (l, j) = program.h_labels[i];
            return format!("h_{l}_{j}");
        }
        format!("v{col}")
    };

    writeln!(
        w,
        "\\* ReLU network feasibility: {} binaries, {} stable-active, {} stable-inactive *\\",
        program.stats.unstable, program.stats.stable_active, program.stats.stable_inactive
    )?;
    writeln!(w, "Minimize\n obj: 0 x0")?;
    writeln!(w, "Subject To")?;
    for (i, row) in program.base.rows.iter().enumerate() {
        let mut line = format!(" c{i}:");
        for &(col, a) in &row.coeffs {
            let sign = if a >= 0.0 { "+" } else { "-" };
            line.push_str(&format!(" {sign} {} {}", a.abs(), name_of(col)));
        }
        let op = match row.op {
            RowOp::Le => "<=",
            RowOp::Ge => ">=",
            RowOp::Eq => "=",
        };
        writeln!(w, "{line} {op} {}", row.rhs)?;
    }
    writeln!(w, "Bounds")?;
    for col in 0..program.base.num_vars() {
        let (lo, hi) = (program.base.lower[col], program.base.upper[col]);
        if hi.is_finite() {
            writeln!(w, " {} <= {} <= {}", lo, name_of(col), hi)?;
        } else {
            writeln!(w, " {} >= {}", name_of(col), lo)?;
        }
    }
    if !program.delta_cols.is_empty() {
        writeln!(w, "Binaries")?;
        let names: Vec<String> = program
            .delta_labels
            .iter()
            .map(|&(l, j)| format!("d_{l}_{j}"))
            .collect();
        writeln!(w, " {}", names.join(" "))?;
    }
    writeln!(w, "End")
}

impl FeasibilityProgram {
    fn base_h_col(&self, h_index: usize) -> usize {
        // h and delta variables are allocated pairwise after the inputs
        self.input_cols.len() + 2 * h_index
    }
}
