//! ReLU multilayer perceptron surrogate: initialization, forward pass,
//! full-batch mean-squared-error training with adaptive-moment gradient
//! descent, and range normalization.
//!
//! Training is full batch: the datasets here are at most a few thousand
//! points and full-batch gradients keep retraining deterministic.

use crate::sampling::{Hyperbox, Interval};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("mlp spec dimensions must all be >= 1")]
    BadSpec,
    #[error("training loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("normalizer range degenerate in dimension {0}")]
    DegenerateRange(usize),
    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),
}

/// Network shape: ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self, SurrogateError> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(SurrogateError::BadSpec);
        }
        Ok(Self { input_dim, hidden, output_dim })
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

/// Weights and biases, one pair per layer. `weights[i]` has shape
/// `(fan_out, fan_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    pub fn spec(&self) -> MlpSpec {
        let input_dim = self.weights[0].ncols();
        let hidden = self.weights[..self.weights.len() - 1]
            .iter()
            .map(|w| w.nrows())
            .collect();
        let output_dim = self.weights.last().unwrap().nrows();
        MlpSpec { input_dim, hidden, output_dim }
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Fan-in-scaled symmetric initialization, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.widths();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        // Uniform(-limit, limit) with limit = sqrt(6 / fan_in) has
        // variance 2 / fan_in.
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    MlpParams { weights, biases }
}

/// Forward pass: alternating affine and ReLU, final affine without ReLU.
pub fn forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut a = Array1::from_vec(x.to_vec());
    let last = params.layer_count() - 1;
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = w.dot(&a) + b;
        if i < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        a = z;
    }
    a.to_vec()
}

/// Forward pass keeping per-layer pre-activations (used by the encoder
/// and by backpropagation).
pub fn forward_trace(params: &MlpParams, x: &[f64]) -> (Vec<Array1<f64>>, Vec<f64>) {
    let mut pre = Vec::with_capacity(params.layer_count());
    let mut a = Array1::from_vec(x.to_vec());
    let last = params.layer_count() - 1;
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let z = w.dot(&a) + b;
        pre.push(z.clone());
        a = if i < last { z.mapv(|v| v.max(0.0)) } else { z };
    }
    (pre, a.to_vec())
}

/// Training hyperparameters. `max_iters` is the gradient-step budget;
/// the rate halves whenever the best loss fails to improve by
/// `tolerance` for `patience` consecutive steps, and training stops
/// once the rate falls below `min_learning_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_iters: 100_000,
            tolerance: 1e-9,
            patience: 400,
            min_learning_rate: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: MlpParams,
    pub best_loss: f64,
    pub iterations: usize,
}

/// Mean-squared error over all samples and output dimensions.
pub fn mse_loss(params: &MlpParams, xs: &Array2<f64>, ys: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in xs.outer_iter().zip(ys.outer_iter()) {
        let out = forward(params, x.as_slice().unwrap());
        acc += out
            .iter()
            .zip(y.iter())
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>();
    }
    acc / (xs.nrows() * ys.ncols()) as f64
}

/// Full-batch MSE gradient via backpropagation.
pub fn mse_gradient(
    params: &MlpParams,
    xs: &Array2<f64>,
    ys: &Array2<f64>,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let layers = params.layer_count();
    let mut gw: Vec<Array2<f64>> = params.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut gb: Vec<Array1<f64>> = params.biases.iter().map(|b| Array1::zeros(b.len())).collect();
    let n = xs.nrows();
    let scale = 2.0 / (n * ys.ncols()) as f64;
    for (x, y) in xs.outer_iter().zip(ys.outer_iter()) {
        // forward, keeping activations
        let mut acts: Vec<Array1<f64>> = vec![x.to_owned()];
        let mut pres: Vec<Array1<f64>> = Vec::with_capacity(layers);
        for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let z = w.dot(acts.last().unwrap()) + b;
            pres.push(z.clone());
            acts.push(if i < layers - 1 { z.mapv(|v| v.max(0.0)) } else { z });
        }
        // backward
        let mut delta: Array1<f64> = (acts.last().unwrap() - &y.to_owned()).mapv(|v| scale * v);
        for i in (0..layers).rev() {
            if i < layers - 1 {
                // gate by ReLU activity of this layer's pre-activation
                delta = delta * pres[i].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            }
            let a_prev = &acts[i];
            let outer = delta
                .view()
                .insert_axis(Axis(1))
                .dot(&a_prev.view().insert_axis(Axis(0)));
            gw[i] += &outer;
            gb[i] += &delta;
            if i > 0 {
                delta = params.weights[i].t().dot(&delta);
            }
        }
    }
    (gw, gb)
}

/// Full-batch adaptive-moment training. Returns the best-loss
/// parameters seen, never the final iterate.
pub fn train(
    params: MlpParams,
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<TrainReport, SurrogateError> {
    if xs.nrows() == 0 {
        return Err(SurrogateError::EmptyDataset);
    }
    assert_eq!(xs.nrows(), ys.nrows(), "x/y row mismatch");

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut p = params;
    let mut mw: Vec<Array2<f64>> = p.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut vw: Vec<Array2<f64>> = mw.clone();
    let mut mb: Vec<Array1<f64>> = p.biases.iter().map(|b| Array1::zeros(b.len())).collect();
    let mut vb: Vec<Array1<f64>> = mb.clone();

    let mut best = p.clone();
    let mut best_loss = mse_loss(&p, xs, ys);
    let mut lr = cfg.learning_rate;
    let mut since_improve = 0usize;
    let mut iterations = 0usize;

    for t in 1..=cfg.max_iters {
        iterations = t;
        let (gw, gb) = mse_gradient(&p, xs, ys);
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..p.layer_count() {
            mw[i] = &mw[i] * BETA1 + &gw[i] * (1.0 - BETA1);
            vw[i] = &vw[i] * BETA2 + &gw[i].mapv(|g| g * g) * (1.0 - BETA2);
            let step = (&mw[i] / bc1) / ((&vw[i] / bc2).mapv(f64::sqrt) + EPS);
            p.weights[i] = &p.weights[i] - &(step * lr);

            mb[i] = &mb[i] * BETA1 + &gb[i] * (1.0 - BETA1);
            vb[i] = &vb[i] * BETA2 + &gb[i].mapv(|g| g * g) * (1.0 - BETA2);
            let step = (&mb[i] / bc1) / ((&vb[i] / bc2).mapv(f64::sqrt) + EPS);
            p.biases[i] = &p.biases[i] - &(step * lr);
        }
        let loss = mse_loss(&p, xs, ys);
        if !loss.is_finite() {
            return Err(SurrogateError::NonFiniteLoss(t));
        }
        if loss < best_loss - cfg.tolerance {
            best_loss = loss;
            best = p.clone();
            since_improve = 0;
        } else {
            if loss < best_loss {
                best_loss = loss;
                best = p.clone();
            }
            since_improve += 1;
            if since_improve >= cfg.patience {
                lr *= 0.5;
                since_improve = 0;
                if lr < cfg.min_learning_rate {
                    break;
                }
            }
        }
    }
    Ok(TrainReport { params: best, best_loss, iterations })
}

/// Affine map between native units and `[0, 1]` per dimension. The map
/// does not saturate: out-of-range values land outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub input: Vec<Interval>,
    pub output: Vec<Interval>,
}

impl Normalizer {
    /// Input ranges from the component box; output ranges as running
    /// min/max over the observed output rows.
    pub fn from_observations(
        input_box: &Hyperbox,
        outputs: &[Vec<f64>],
    ) -> Result<Self, SurrogateError> {
        let dim_out = outputs.first().map(|r| r.len()).unwrap_or(0);
        let mut output = vec![Interval::new(f64::INFINITY, f64::NEG_INFINITY); dim_out];
        for row in outputs {
            for (iv, &v) in output.iter_mut().zip(row) {
                iv.lo = iv.lo.min(v);
                iv.hi = iv.hi.max(v);
            }
        }
        // Guard near-constant outputs: widen to a tiny symmetric band so
        // the affine map stays invertible.
        for iv in output.iter_mut() {
            let width = iv.hi - iv.lo;
            let floor = 1e-9 * iv.lo.abs().max(iv.hi.abs()).max(1.0);
            if width < floor {
                let mid = 0.5 * (iv.lo + iv.hi);
                iv.lo = mid - 0.5 * floor;
                iv.hi = mid + 0.5 * floor;
            }
        }
        let n = Self { input: input_box.dims().to_vec(), output };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        for (i, iv) in self.input.iter().chain(&self.output).enumerate() {
            if !(iv.hi > iv.lo) {
                return Err(SurrogateError::DegenerateRange(i));
            }
        }
        Ok(())
    }

    fn map(ranges: &[Interval], point: &[f64], to_unit: bool) -> Vec<f64> {
        assert_eq!(ranges.len(), point.len(), "normalizer dimension mismatch");
        ranges
            .iter()
            .zip(point)
            .map(|(iv, &v)| {
                if to_unit {
                    (v - iv.lo) / iv.width()
                } else {
                    iv.lo + v * iv.width()
                }
            })
            .collect()
    }

    pub fn normalize_input(&self, point: &[f64]) -> Vec<f64> {
        Self::map(&self.input, point, true)
    }

    pub fn denormalize_input(&self, point: &[f64]) -> Vec<f64> {
        Self::map(&self.input, point, false)
    }

    pub fn normalize_output(&self, point: &[f64]) -> Vec<f64> {
        Self::map(&self.output, point, true)
    }

    pub fn denormalize_output(&self, point: &[f64]) -> Vec<f64> {
        Self::map(&self.output, point, false)
    }

    /// Map a native output interval into normalized space. Infinite
    /// endpoints pass through.
    pub fn normalize_output_interval(&self, dim: usize, iv: Interval) -> Interval {
        let r = &self.output[dim];
        let f = |v: f64| {
            if v.is_finite() {
                (v - r.lo) / r.width()
            } else {
                v
            }
        };
        Interval::new(f(iv.lo), f(iv.hi))
    }
}

const CHECKPOINT_MAGIC: &str = "dispatch-mlp-v1";

/// Write a model checkpoint: spec, normalizer ranges, then row-major
/// weight and bias arrays. Floats round-trip exactly.
pub fn save_checkpoint<W: Write>(
    w: &mut W,
    params: &MlpParams,
    normalizer: &Normalizer,
) -> std::io::Result<()> {
    let spec = params.spec();
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    let hidden: Vec<String> = spec.hidden.iter().map(|h| h.to_string()).collect();
    writeln!(w, "spec {} [{}] {}", spec.input_dim, hidden.join(","), spec.output_dim)?;
    for iv in &normalizer.input {
        writeln!(w, "norm_in {:?} {:?}", iv.lo, iv.hi)?;
    }
    for iv in &normalizer.output {
        writeln!(w, "norm_out {:?} {:?}", iv.lo, iv.hi)?;
    }
    for (i, (wt, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        writeln!(w, "layer {} {} {}", i, wt.nrows(), wt.ncols())?;
        for row in wt.outer_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
        let cells: Vec<String> = b.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "bias {}", cells.join(" "))?;
    }
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<R: BufRead>(r: R) -> Result<(MlpParams, Normalizer), SurrogateError> {
    let err = |m: &str| SurrogateError::Checkpoint(m.to_string());
    let mut lines = r.lines().map_while(Result::ok);
    if lines.next().as_deref() != Some(CHECKPOINT_MAGIC) {
        return Err(err("bad magic"));
    }
    let spec_line = lines.next().ok_or_else(|| err("missing spec"))?;
    let parts: Vec<&str> = spec_line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "spec" {
        return Err(err("malformed spec line"));
    }
    let input_dim: usize = parts[1].parse().map_err(|_| err("bad input dim"))?;
    let hidden: Vec<usize> = parts[2]
        .trim_matches(['[', ']'])
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| err("bad hidden dim")))
        .collect::<Result<_, _>>()?;
    let output_dim: usize = parts[3].parse().map_err(|_| err("bad output dim"))?;
    let spec = MlpSpec::new(input_dim, hidden, output_dim).map_err(|_| err("bad spec"))?;

    let parse_floats = |s: &str| -> Result<Vec<f64>, SurrogateError> {
        s.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad float {t}"))))
            .collect()
    };

    let mut input = Vec::new();
    let mut output = Vec::new();
    let mut pending: Option<String> = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("norm_in ") {
            let v = parse_floats(rest)?;
            input.push(Interval::new(v[0], v[1]));
        } else if let Some(rest) = line.strip_prefix("norm_out ") {
            let v = parse_floats(rest)?;
            output.push(Interval::new(v[0], v[1]));
        } else {
            pending = Some(line);
            break;
        }
    }
    let normalizer = Normalizer { input, output };

    let widths = spec.widths();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for layer in 0..widths.len() - 1 {
        let header = pending
            .take()
            .or_else(|| lines.next())
            .ok_or_else(|| err("missing layer header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "layer" {
            return Err(err("malformed layer header"));
        }
        let rows: usize = h[2].parse().map_err(|_| err("bad layer rows"))?;
        let cols: usize = h[3].parse().map_err(|_| err("bad layer cols"))?;
        if rows != widths[layer + 1] || cols != widths[layer] {
            return Err(err("layer shape mismatch"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| err("missing weight row"))?;
            let vals = parse_floats(&line)?;
            if vals.len() != cols {
                return Err(err("weight row arity"));
            }
            data.extend(vals);
        }
        weights.push(Array2::from_shape_vec((rows, cols), data).map_err(|_| err("weight shape"))?);
        let bias_line = lines.next().ok_or_else(|| err("missing bias"))?;
        let rest = bias_line.strip_prefix("bias ").ok_or_else(|| err("malformed bias"))?;
        let vals = parse_floats(rest)?;
        if vals.len() != rows {
            return Err(err("bias arity"));
        }
        biases.push(Array1::from_vec(vals));
    }
    Ok((MlpParams { weights, biases }, normalizer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> MlpSpec {
        MlpSpec::new(2, vec![8, 4], 2).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let spec = toy_spec();
        let a = init_params(&spec, 7);
        let b = init_params(&spec, 7);
        assert_eq!(a, b);
        assert!(a.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        assert_ne!(a, init_params(&spec, 8));
    }

    #[test]
    fn init_weight_variance_close_to_2_over_fanin() {
        let spec = MlpSpec::new(100, vec![100], 1).unwrap();
        let p = init_params(&spec, 3);
        let w = &p.weights[0];
        let n = w.len() as f64;
        let mean: f64 = w.iter().sum::<f64>() / n;
        let var: f64 = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let expected = 2.0 / 100.0;
        assert!(
            (var - expected).abs() < 0.2 * expected,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn forward_identity_through_active_relu() {
        let params = MlpParams {
            weights: vec![
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            ],
            biases: vec![Array1::zeros(1), Array1::zeros(1)],
        };
        assert_eq!(forward(&params, &[0.5]), vec![0.5]);
        // Dead ReLU: negative input clamps to zero; output is final bias.
        assert_eq!(forward(&params, &[-0.5]), vec![0.0]);
    }

    #[test]
    fn forward_zero_weights_yields_bias() {
        let mut params = init_params(&toy_spec(), 1);
        for w in params.weights.iter_mut() {
            w.fill(0.0);
        }
        params.biases[2].fill(0.25);
        for x in [[0.1, 0.9], [0.7, 0.3]] {
            assert_eq!(forward(&params, &x), vec![0.25, 0.25]);
        }
    }

    #[test]
    fn forward_is_piecewise_affine() {
        // For a fixed activation pattern the map is affine: the midpoint of
        // two nearby points maps to the midpoint of their outputs.
        let params = init_params(&MlpSpec::new(2, vec![16, 8], 3).unwrap(), 5);
        let a = [0.40, 0.60];
        let b = [0.401, 0.601];
        let mid = [0.4005, 0.6005];
        let (pa, _) = forward_trace(&params, &a);
        let (pb, _) = forward_trace(&params, &b);
        let same_pattern = pa
            .iter()
            .zip(&pb)
            .take(2)
            .all(|(za, zb)| za.iter().zip(zb.iter()).all(|(x, y)| (*x > 0.0) == (*y > 0.0)));
        assert!(same_pattern, "points must share an activation pattern");
        let fa = forward(&params, &a);
        let fb = forward(&params, &b);
        let fm = forward(&params, &mid);
        for i in 0..fa.len() {
            assert!((0.5 * (fa[i] + fb[i]) - fm[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn train_learns_linear_function() {
        let xs = Array2::from_shape_vec((2, 1), vec![0.2, 0.8]).unwrap();
        let ys = Array2::from_shape_vec((2, 1), vec![0.4, 1.6]).unwrap();
        let spec = MlpSpec::new(1, vec![8], 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            max_iters: 20_000,
            ..TrainConfig::default()
        };
        let report = train(init_params(&spec, 11), &xs, &ys, &cfg).unwrap();
        assert!(report.best_loss < 1e-6, "loss {}", report.best_loss);
    }

    #[test]
    fn train_memorizes_single_pair() {
        let xs = Array2::from_shape_vec((1, 2), vec![0.3, 0.7]).unwrap();
        let ys = Array2::from_shape_vec((1, 1), vec![0.9]).unwrap();
        let spec = MlpSpec::new(2, vec![8], 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            max_iters: 10_000,
            ..TrainConfig::default()
        };
        let report = train(init_params(&spec, 2), &xs, &ys, &cfg).unwrap();
        assert!(report.best_loss < 1e-8, "loss {}", report.best_loss);
        assert!(report.params.all_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..5 {
            let spec = MlpSpec::new(2, vec![5, 3], 2).unwrap();
            let mut params = init_params(&spec, 100 + trial);
            // shift biases so ReLUs are not sitting exactly at zero
            for b in params.biases.iter_mut() {
                b.mapv_inplace(|_| rng.gen_range(-0.2..0.2));
            }
            let xs = Array2::from_shape_fn((4, 2), |_| rng.gen_range(0.0..1.0));
            let ys = Array2::from_shape_fn((4, 2), |_| rng.gen_range(0.0..1.0));
            let (gw, gb) = mse_gradient(&params, &xs, &ys);
            let h = 1e-5;
            let mut max_rel: f64 = 0.0;
            for layer in 0..params.layer_count() {
                for idx in 0..params.weights[layer].len() {
                    let orig = params.weights[layer].as_slice().unwrap()[idx];
                    params.weights[layer].as_slice_mut().unwrap()[idx] = orig + h;
                    let up = mse_loss(&params, &xs, &ys);
                    params.weights[layer].as_slice_mut().unwrap()[idx] = orig - h;
                    let dn = mse_loss(&params, &xs, &ys);
                    params.weights[layer].as_slice_mut().unwrap()[idx] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let an = gw[layer].as_slice().unwrap()[idx];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
                for idx in 0..params.biases[layer].len() {
                    let orig = params.biases[layer][idx];
                    params.biases[layer][idx] = orig + h;
                    let up = mse_loss(&params, &xs, &ys);
                    params.biases[layer][idx] = orig - h;
                    let dn = mse_loss(&params, &xs, &ys);
                    params.biases[layer][idx] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let rel =
                        (fd - gb[layer][idx]).abs() / fd.abs().max(gb[layer][idx].abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
            }
            assert!(max_rel < 1e-4, "trial {trial}: max rel err {max_rel}");
        }
    }

    #[test]
    fn training_does_not_raise_best_loss() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs = Array2::from_shape_fn((12, 2), |_| rng.gen_range(0.0..1.0));
        let ys = xs.map_axis(Axis(1), |r| r[0] * 0.5 + r[1] * r[1]);
        let ys = ys.insert_axis(Axis(1));
        let spec = MlpSpec::new(2, vec![10], 1).unwrap();
        let p0 = init_params(&spec, 3);
        let l0 = mse_loss(&p0, &xs, &ys);
        let cfg = TrainConfig { learning_rate: 0.005, max_iters: 2_000, ..TrainConfig::default() };
        let r1 = train(p0, &xs, &ys, &cfg).unwrap();
        assert!(r1.best_loss <= l0);
        // warm start continues from where it left off
        let r2 = train(r1.params.clone(), &xs, &ys, &cfg).unwrap();
        assert!(r2.best_loss <= r1.best_loss + 1e-12);
    }

    #[test]
    fn normalizer_round_trip_and_validation() {
        let b = Hyperbox::new(vec![Interval::new(400.0, 800.0)]).unwrap();
        let n = Normalizer::from_observations(&b, &[vec![990.0], vec![1010.0]]).unwrap();
        assert_eq!(n.normalize_input(&[600.0]), vec![0.5]);
        assert_eq!(n.denormalize_output(&[0.5]), vec![1000.0]);
        let x = [437.5];
        let rt = n.denormalize_input(&n.normalize_input(&x));
        assert!((rt[0] - x[0]).abs() < 1e-12);
        // affine, not saturating
        assert!(n.normalize_input(&[900.0])[0] > 1.0);
    }

    #[test]
    fn normalizer_widens_constant_outputs() {
        let b = Hyperbox::new(vec![Interval::new(0.0, 1.0)]).unwrap();
        let n = Normalizer::from_observations(&b, &[vec![5.0], vec![5.0]]).unwrap();
        assert!(n.output[0].width() > 0.0);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let spec = MlpSpec::new(2, vec![7, 3], 5).unwrap();
        let params = init_params(&spec, 123);
        let b =
            Hyperbox::new(vec![Interval::new(400.0, 800.0), Interval::new(1e-8, 1e-6)]).unwrap();
        let normalizer = Normalizer::from_observations(&b, &[vec![1.0; 5], vec![2.0; 5]]).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &params, &normalizer).unwrap();
        let (p2, n2) = load_checkpoint(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(params, p2);
        assert_eq!(normalizer, n2);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let r = std::io::BufReader::new("not a checkpoint".as_bytes());
        assert!(matches!(load_checkpoint(r), Err(SurrogateError::Checkpoint(_))));
    }
}
