//! Deterministic low-discrepancy sampling and value boxes.
//!
//! The Sobol sequence uses the published Joe-Kuo direction numbers
//! (new-joe-kuo-6 ordering) bundled as a plain-text asset, one line per
//! dimension in the form `d s a m_1 ... m_s`. The all-zeros point at
//! index 0 is skipped: zero-valued components are not simulatable.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// Bits of resolution per coordinate; indices up to 2^32 - 1 are supported.
const SOBOL_BITS: usize = 32;

const DIRECTION_TABLE: &str = include_str!("../data/new-joe-kuo-6.txt");

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("box dimension {dim}: lower bound {lo} exceeds upper bound {hi}")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("box must have at least one dimension")]
    EmptyBox,
    #[error("sobol sequence supports at most {max} dimensions, requested {requested}")]
    DimensionUnsupported { requested: usize, max: usize },
    #[error("perturbation fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("nominal value {value} in dimension {dim} lies outside its limits")]
    NominalOutsideLimits { dim: usize, value: f64 },
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

/// Axis-aligned box: one `[lo, hi]` interval per dimension, native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    dims: Vec<Interval>,
}

impl Hyperbox {
    pub fn new(dims: Vec<Interval>) -> Result<Self, SamplingError> {
        if dims.is_empty() {
            return Err(SamplingError::EmptyBox);
        }
        for (i, iv) in dims.iter().enumerate() {
            if iv.lo > iv.hi {
                return Err(SamplingError::InvalidBounds {
                    dim: i,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(Self { dims })
    }

    /// Unit hypercube `[0, 1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self::new(vec![Interval::new(0.0, 1.0); dim]).expect("dim > 0")
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims.len()
            && point.iter().zip(&self.dims).all(|(x, iv)| iv.contains(*x))
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(|iv| 0.5 * (iv.lo + iv.hi)).collect()
    }
}

/// Affine map of a unit-hypercube point into `box`.
pub fn scale_to_box(point: &[f64], b: &Hyperbox) -> Vec<f64> {
    assert_eq!(point.len(), b.dim(), "point/box dimension mismatch");
    point
        .iter()
        .zip(b.dims())
        .map(|(u, iv)| iv.lo + u * iv.width())
        .collect()
}

/// Box spanning `fraction` below and above each nominal value, clipped to `limits`.
pub fn perturbation_box(
    nominal: &[f64],
    fraction: f64,
    limits: &Hyperbox,
) -> Result<Hyperbox, SamplingError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SamplingError::BadFraction(fraction));
    }
    assert_eq!(nominal.len(), limits.dim(), "nominal/limits dimension mismatch");
    let mut dims = Vec::with_capacity(nominal.len());
    for (i, (&v, limit)) in nominal.iter().zip(limits.dims()).enumerate() {
        if !limit.contains(v) {
            return Err(SamplingError::NominalOutsideLimits { dim: i, value: v });
        }
        let a = v * (1.0 - fraction);
        let b = v * (1.0 + fraction);
        dims.push(Interval::new(a.min(b), a.max(b)).intersect(limit));
    }
    Hyperbox::new(dims)
}

/// Uniform draw from `box`, one value per dimension.
pub fn random_point(b: &Hyperbox, rng: &mut impl Rng) -> Vec<f64> {
    b.dims()
        .iter()
        .map(|iv| iv.lo + rng.gen::<f64>() * iv.width())
        .collect()
}

struct DirectionEntry {
    degree: usize,
    a: u32,
    m: Vec<u32>,
}

fn direction_table() -> &'static Vec<DirectionEntry> {
    static TABLE: OnceLock<Vec<DirectionEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        DIRECTION_TABLE
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|line| {
                let mut it = line.split_whitespace();
                let _d: usize = it.next().unwrap().parse().unwrap();
                let degree: usize = it.next().unwrap().parse().unwrap();
                let a: u32 = it.next().unwrap().parse().unwrap();
                let m: Vec<u32> = it.map(|t| t.parse().unwrap()).collect();
                assert_eq!(m.len(), degree, "malformed direction-number line: {line}");
                DirectionEntry { degree, a, m }
            })
            .collect()
    })
}

fn direction_numbers(dim_index: usize) -> [u32; SOBOL_BITS] {
    let mut v = [0u32; SOBOL_BITS];
    if dim_index == 0 {
        // First dimension is the van der Corput sequence in base 2.
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (31 - i);
        }
        return v;
    }
    let entry = &direction_table()[dim_index - 1];
    let s = entry.degree;
    for i in 0..s.min(SOBOL_BITS) {
        v[i] = entry.m[i] << (31 - i);
    }
    for i in s..SOBOL_BITS {
        v[i] = v[i - s] ^ (v[i - s] >> s);
        for k in 0..s - 1 {
            if (entry.a >> k) & 1 != 0 {
                v[i] ^= v[i - s + 1 + k];
            }
        }
    }
    v
}

/// Sobol sequence state: emits successive points of the d-dimensional
/// sequence in Gray-code order. Clone to fork parallel consumers.
#[derive(Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; SOBOL_BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self, SamplingError> {
        let max = direction_table().len() + 1;
        if dim == 0 || dim > max {
            return Err(SamplingError::DimensionUnsupported {
                requested: dim,
                max,
            });
        }
        Ok(Self {
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            index: 0,
        })
    }

    /// Restart the sequence at an arbitrary raw index. The next call to
    /// [`next_point`](Self::next_point) returns the point at `index + 1`.
    pub fn from_index(dim: usize, index: u64) -> Result<Self, SamplingError> {
        let mut seq = Self::new(dim)?;
        assert!(index < 1 << SOBOL_BITS, "index exceeds sequence period");
        let gray = index ^ (index >> 1);
        for (state, dirs) in seq.state.iter_mut().zip(&seq.directions) {
            for (bit, &v) in dirs.iter().enumerate() {
                if (gray >> bit) & 1 != 0 {
                    *state ^= v;
                }
            }
        }
        seq.index = index;
        Ok(seq)
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Raw index of the most recently emitted point (0 = none yet).
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Next point of the sequence, each coordinate in `[0, 1)`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let flip = self.index.trailing_ones() as usize;
        assert!(flip < SOBOL_BITS, "sobol sequence exhausted");
        for (state, dirs) in self.state.iter_mut().zip(&self.directions) {
            *state ^= dirs[flip];
        }
        self.index += 1;
        self.state
            .iter()
            .map(|&x| x as f64 / (1u64 << 32) as f64)
            .collect()
    }
}
