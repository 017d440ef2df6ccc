//! The biased-assimilation update map and trajectory simulation.
//!
//! One synchronous step sends every interior coordinate to
//!
//! ```text
//!            w_ii x_i + x_i^b_i s_i
//! x_i' = ------------------------------------------------
//!        w_ii + x_i^b_i s_i + (1 - x_i)^b_i (d_i - s_i)
//! ```
//!
//! where `s_i = Σ_j w_ij x_j` is the evidence node `i` receives and `d_i`
//! its total incoming weight. Coordinates equal to 0 or 1 are left alone.
//!
//! The kernel works on a split representation that carries `x` and `1 - x`
//! side by side. The opposite-side evidence `d_i - s_i` is accumulated as
//! `Σ_j w_ij (1 - x_j)`, which makes the mirror map `x -> 1 - x` commute
//! with a step bit for bit (see [`SplitState`]).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Interaction, Layer, WeightedGraph};
use crate::schedule::SwitchingSchedule;

/// Per-node bias exponents `b_i > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector(Vec<f64>);

impl BiasVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("bias vector is empty"));
        }
        if let Some(b) = values.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::invalid(format!("bias must be finite and > 0, got {b}")));
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize, b: f64) -> Result<Self> {
        Self::new(vec![b; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// The common exponent when every node shares it.
    pub fn uniform_value(&self) -> Option<f64> {
        let b = self.0[0];
        self.0.iter().all(|&v| v == b).then_some(b)
    }
}

/// Opinion vector in `[0, 1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionState(Vec<f64>);

impl OpinionState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("opinion state is empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "opinion of node {} is {v}, outside [0, 1]",
                i + 1
            )));
        }
        Ok(Self(values))
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn centroid(n: usize) -> Self {
        Self(vec![0.5; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `1 - x`, coordinate-wise.
    pub fn mirrored(&self) -> Self {
        Self(self.0.iter().map(|v| 1.0 - v).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Opinion vector stored as the pair `(x, 1 - x)`.
///
/// Both halves are updated by the same arithmetic with their roles swapped,
/// so swapping `lo` and `hi` before a step gives exactly the swapped result.
/// This keeps coordinates near 1 as precise as coordinates near 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SplitState {
    pub fn from_state(x: &OpinionState) -> Self {
        Self {
            lo: x.0.clone(),
            hi: x.0.iter().map(|v| 1.0 - v).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }

    pub fn to_state(&self) -> OpinionState {
        OpinionState(self.lo.clone())
    }

    pub fn swapped(&self) -> Self {
        Self {
            lo: self.hi.clone(),
            hi: self.lo.clone(),
        }
    }
}

/// `x^b` with `0^b = 0` and exact small integer powers.
#[inline]
pub(crate) fn bias_pow(x: f64, b: f64) -> f64 {
    if b == 1.0 {
        x
    } else if b == 2.0 {
        x * x
    } else if b == 3.0 {
        x * x * x
    } else {
        x.powf(b)
    }
}

#[inline]
fn update_node(layer: &Layer<'_>, i: usize, b: f64, lo: &[f64], hi: &[f64]) -> Result<(f64, f64)> {
    let (x, y) = (lo[i], hi[i]);
    let nbrs = &layer.neighbors[i];
    if x == 0.0 || y == 0.0 || nbrs.is_empty() {
        return Ok((x, y));
    }
    let (mut toward_one, mut toward_zero) = (0.0, 0.0);
    for &(j, w) in nbrs {
        toward_one += w * lo[j];
        toward_zero += w * hi[j];
    }
    let w = layer.self_weights[i];
    let up = w * x + bias_pow(x, b) * toward_one;
    let down = w * y + bias_pow(y, b) * toward_zero;
    let den = up + down;
    if den == 0.0 {
        return Err(Error::DegenerateNode { node: i });
    }
    Ok((up / den, down / den))
}

/// One synchronous step of the split state into `out`.
pub fn step_split_into<I: Interaction + ?Sized>(
    src: &I,
    bias: &BiasVector,
    state: &SplitState,
    t: u64,
    out: &mut SplitState,
) -> Result<()> {
    let layer = src.layer(t);
    for i in 0..state.n() {
        let (lo, hi) = update_node(&layer, i, bias.get(i), &state.lo, &state.hi)?;
        out.lo[i] = lo;
        out.hi[i] = hi;
    }
    Ok(())
}

fn check_dims<I: Interaction + ?Sized>(src: &I, bias: &BiasVector, n: usize) -> Result<()> {
    if src.node_count() != n || bias.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: network has {} nodes, bias {}, state {n}",
            src.node_count(),
            bias.len()
        )));
    }
    Ok(())
}

/// One step under the interaction layer in force at time `t`.
pub fn step<I: Interaction + ?Sized>(
    src: &I,
    bias: &BiasVector,
    x: &OpinionState,
    t: u64,
) -> Result<OpinionState> {
    check_dims(src, bias, x.len())?;
    let layer = src.layer(t);
    let hi: Vec<f64> = x.0.iter().map(|v| 1.0 - v).collect();
    let next = (0..x.len())
        .map(|i| update_node(&layer, i, bias.get(i), &x.0, &hi).map(|(lo, _)| lo))
        .collect::<Result<Vec<_>>>()?;
    Ok(OpinionState(next))
}

pub fn step_static(graph: &WeightedGraph, bias: &BiasVector, x: &OpinionState) -> Result<OpinionState> {
    step(graph, bias, x, 0)
}

pub fn step_switching(
    sched: &SwitchingSchedule,
    bias: &BiasVector,
    x: &OpinionState,
    t: u64,
) -> Result<OpinionState> {
    step(sched, bias, x, t)
}

/// `s_i = Σ_j w_ij x_j`.
pub fn external_evidence(graph: &WeightedGraph, x: &OpinionState, i: usize) -> f64 {
    graph.neighbors(i).iter().map(|&(j, w)| w * x.get(j)).sum()
}

/// The evidence fraction `s_i / d_i` at which an interior opinion `x` with
/// bias `b` stays put: `(1-x)^(b-1) / (x^(b-1) + (1-x)^(b-1))`.
pub fn invariance_potential(x: f64, b: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("invariance potential needs x in (0, 1), got {x}")));
    }
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::Domain(format!("bias must be > 0, got {b}")));
    }
    let e = b - 1.0;
    let a = (1.0 - x).powf(e);
    Ok(a / (x.powf(e) + a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Drift {
    Increase,
    Fixed,
    Decrease,
}

/// Relative tolerance for calling an evidence fraction equal to the
/// invariance potential.
pub const DRIFT_TOLERANCE: f64 = 1e-12;

/// Direction node `i` moves in one step, from comparing `s_i / d_i` with the
/// invariance potential.
pub fn drift_sign(graph: &WeightedGraph, bias: &BiasVector, x: &OpinionState, i: usize) -> Result<Drift> {
    let xi = x.get(i);
    let potential = invariance_potential(xi, bias.get(i))?;
    let d = graph.degree(i);
    if d <= 0.0 {
        return Err(Error::Domain(format!("node {} has no neighbors", i + 1)));
    }
    let ratio = external_evidence(graph, x, i) / d;
    let gap = ratio - potential;
    Ok(if gap.abs() <= DRIFT_TOLERANCE * potential {
        Drift::Fixed
    } else if gap > 0.0 {
        Drift::Increase
    } else {
        Drift::Decrease
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// Fingerprint of the graph or schedule that generated the run.
    pub source: u64,
    pub bias: Vec<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<OpinionState>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn initial(&self) -> &OpinionState {
        &self.states[0]
    }

    pub fn last(&self) -> &OpinionState {
        self.states.last().expect("trajectory is never empty")
    }

    /// `max_i x_i(t)` for every stored `t`.
    pub fn max_curve(&self) -> Vec<f64> {
        self.states.iter().map(OpinionState::max).collect()
    }

    /// CSV with header `t,x_1,...,x_n`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states[0].len();
        let mut line = String::from("t");
        for i in 1..=n {
            write!(line, ",x_{i}").unwrap();
        }
        writeln!(out, "{line}")?;
        for (t, s) in self.states.iter().enumerate() {
            line.clear();
            write!(line, "{t}").unwrap();
            for v in s.values() {
                write!(line, ",{v:.16e}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`Trajectory::write_csv`]. Metadata is not
    /// part of the file and comes back empty.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let cols = header.trim().split(',').count();
        if cols < 2 || !header.starts_with("t,") {
            return Err(Error::Parse(format!("bad trajectory header `{header}`")));
        }
        let mut states = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != cols {
                return Err(Error::Parse(format!("row {row} has {} fields, expected {cols}", fields.len())));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad time `{}`", fields[0])))?;
            if t != states.len() {
                return Err(Error::Parse(format!("expected t = {}, got {t}", states.len())));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            states.push(OpinionState::new(values)?);
        }
        if states.is_empty() {
            return Err(Error::Parse("trajectory has no rows".into()));
        }
        Ok(Self {
            states,
            meta: TrajectoryMeta {
                source: 0,
                bias: Vec::new(),
                seed: None,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    pub horizon: usize,
    /// Stop once successive states differ by less than this in max-norm.
    /// Zero disables early stopping.
    pub early_stop_eps: f64,
    /// Recorded in the trajectory metadata only.
    pub seed: Option<u64>,
}

impl SimulateOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            early_stop_eps: 0.0,
            seed: None,
        }
    }
}

/// Anything that can drive a simulation and identify itself.
pub trait Fingerprint {
    fn fingerprint(&self) -> u64;
}

impl Fingerprint for WeightedGraph {
    fn fingerprint(&self) -> u64 {
        WeightedGraph::fingerprint(self)
    }
}

impl Fingerprint for SwitchingSchedule {
    fn fingerprint(&self) -> u64 {
        SwitchingSchedule::fingerprint(self)
    }
}

pub fn simulate<I: Interaction + Fingerprint + ?Sized>(
    src: &I,
    bias: &BiasVector,
    x0: &OpinionState,
    opts: &SimulateOptions,
) -> Result<Trajectory> {
    check_dims(src, bias, x0.len())?;
    let mut states = Vec::with_capacity(opts.horizon + 1);
    states.push(x0.clone());
    for t in 0..opts.horizon {
        let current = states.last().unwrap();
        let next = step(src, bias, current, t as u64)?;
        let stop = opts.early_stop_eps > 0.0 && next.max_abs_diff(current) < opts.early_stop_eps;
        states.push(next);
        if stop {
            break;
        }
    }
    Ok(Trajectory {
        states,
        meta: TrajectoryMeta {
            source: src.fingerprint(),
            bias: bias.values().to_vec(),
            seed: opts.seed,
        },
    })
}
