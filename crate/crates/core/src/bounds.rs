//! Exponential polarization envelopes.
//!
//! When every opinion starts below 1/2 the maximum opinion obeys
//! `max_i x_i(t) <= (1 - α/2)^⌊t/T⌋ · max_j x_j(0)` with
//!
//! ```text
//! α = min_k  d_k / (w_kk + d_k) · [ (1 - m)^b_k - m^b_k ],   m = max_j x_j(0)
//! ```
//!
//! (`T = 1` for a static graph). For a switching schedule `d_k` and `w_kk`
//! are replaced by the weight floor `c` and the self-weight cap. The upper
//! side is the mirror image under `x -> 1 - x`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{bias_pow, simulate, BiasVector, OpinionState, SimulateOptions, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{random_connected, RandomGraphParams, WeightedGraph};
use crate::schedule::{validate_schedule, SwitchingSchedule};
use crate::seeding::stream_rng;

/// Absolute slack on envelope comparisons.
pub const ENVELOPE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// Opinions polarized toward 0.
    Lower,
    /// Opinions polarized toward 1.
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeParams {
    pub side: Side,
    /// `α` (lower) or `β` (upper), in `(0, 1]`.
    pub rate: f64,
    /// `max_j x_j(0)` for the lower side, `min_j x_j(0)` for the upper side.
    pub initial_extreme: f64,
    /// Activity window `T`; 1 for a static graph.
    pub period: usize,
}

impl EnvelopeParams {
    /// Picks the side from `x0` and computes `α` or `β` for a static graph.
    pub fn for_graph(graph: &WeightedGraph, bias: &BiasVector, x0: &OpinionState) -> Result<Self> {
        let (side, rate, initial_extreme) = match polarization_side(x0)? {
            Side::Lower => (Side::Lower, compute_alpha(graph, bias, x0)?, x0.max()),
            Side::Upper => (Side::Upper, compute_beta(graph, bias, x0)?, x0.min()),
        };
        Ok(Self {
            side,
            rate,
            initial_extreme,
            period: 1,
        })
    }

    /// Same as [`EnvelopeParams::for_graph`] with `α*`/`β*` and `T` from the
    /// schedule.
    pub fn for_schedule(sched: &SwitchingSchedule, bias: &BiasVector, x0: &OpinionState) -> Result<Self> {
        let (side, rate, initial_extreme) = match polarization_side(x0)? {
            Side::Lower => (Side::Lower, compute_alpha_star(sched, bias, x0)?, x0.max()),
            Side::Upper => (Side::Upper, compute_beta_star(sched, bias, x0)?, x0.min()),
        };
        Ok(Self {
            side,
            rate,
            initial_extreme,
            period: sched.period(),
        })
    }

    /// `(1 - rate/2)^⌊t/T⌋` times the initial distance to the boundary.
    pub fn bound(&self, t: usize) -> f64 {
        let gap = match self.side {
            Side::Lower => self.initial_extreme,
            Side::Upper => 1.0 - self.initial_extreme,
        };
        let windows = (t / self.period) as i32;
        (1.0 - self.rate / 2.0).powi(windows) * gap
    }
}

/// Lower if every opinion is below 1/2, upper if every opinion is above.
pub fn polarization_side(x0: &OpinionState) -> Result<Side> {
    if x0.max() < 0.5 {
        Ok(Side::Lower)
    } else if x0.min() > 0.5 {
        Ok(Side::Upper)
    } else {
        Err(Error::NotPolarized(format!(
            "opinions span [{}, {}], which touches 1/2",
            x0.min(),
            x0.max()
        )))
    }
}

fn rate_from(
    bias: &BiasVector,
    extreme: f64,
    mut coupling: impl FnMut(usize) -> Result<f64>,
) -> Result<f64> {
    let mut rate = f64::INFINITY;
    for k in 0..bias.len() {
        let b = bias.get(k);
        let spread = bias_pow(1.0 - extreme, b) - bias_pow(extreme, b);
        rate = rate.min(coupling(k)? * spread);
    }
    Ok(rate)
}

fn check_lengths(n: usize, bias: &BiasVector, x0: &OpinionState) -> Result<()> {
    if bias.len() != n || x0.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: network has {n} nodes, bias {}, state {}",
            bias.len(),
            x0.len()
        )));
    }
    Ok(())
}

fn below_half(x0: &OpinionState) -> Result<f64> {
    let m = x0.max();
    if m < 0.5 {
        Ok(m)
    } else {
        Err(Error::NotPolarized(format!("max opinion {m} is not below 1/2")))
    }
}

/// Contraction rate `α` for a static graph.
pub fn compute_alpha(graph: &WeightedGraph, bias: &BiasVector, x0: &OpinionState) -> Result<f64> {
    check_lengths(graph.n(), bias, x0)?;
    let m = below_half(x0)?;
    rate_from(bias, m, |k| {
        let d = graph.degree(k);
        if d <= 0.0 {
            return Err(Error::invalid(format!("node {} has no neighbors", k + 1)));
        }
        Ok(d / (graph.self_weight(k) + d))
    })
}

/// `β(x0) = α(1 - x0)`.
pub fn compute_beta(graph: &WeightedGraph, bias: &BiasVector, x0: &OpinionState) -> Result<f64> {
    if x0.min() <= 0.5 {
        return Err(Error::NotPolarized(format!("min opinion {} is not above 1/2", x0.min())));
    }
    compute_alpha(graph, bias, &x0.mirrored())
}

/// Contraction rate `α*` for a switching schedule; the schedule must satisfy
/// the activity assumptions over a full cycle.
pub fn compute_alpha_star(sched: &SwitchingSchedule, bias: &BiasVector, x0: &OpinionState) -> Result<f64> {
    check_lengths(sched.n(), bias, x0)?;
    let m = below_half(x0)?;
    let report = validate_schedule(sched, sched.full_check_horizon())?;
    if let Some(c) = report.first_failure() {
        let (t, i) = c.first_violation.expect("failed clause has a witness");
        return Err(Error::InvalidSchedule(format!("{} fails at t = {t}, node {}", c.clause, i + 1)));
    }
    let c = sched.weight_floor();
    rate_from(bias, m, |k| Ok(c / (sched.self_weight_caps()[k] + c)))
}

/// `β*(x0) = α*(1 - x0)`.
pub fn compute_beta_star(sched: &SwitchingSchedule, bias: &BiasVector, x0: &OpinionState) -> Result<f64> {
    if x0.min() <= 0.5 {
        return Err(Error::NotPolarized(format!("min opinion {} is not above 1/2", x0.min())));
    }
    compute_alpha_star(sched, bias, &x0.mirrored())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub t: usize,
    /// `max_i x_i(t)` (lower) or `max_i |x_i(t) - 1|` (upper).
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub params: EnvelopeParams,
    pub rows: Vec<EnvelopeRow>,
    pub passed: bool,
    pub first_failure: Option<usize>,
    /// Smallest `bound - observed` over the run.
    pub worst_slack: f64,
}

impl EnvelopeReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,observed,bound,pass")?;
        for r in &self.rows {
            writeln!(out, "{},{:.16e},{:.16e},{}", r.t, r.observed, r.bound, r.pass)?;
        }
        Ok(())
    }
}

/// Compares a stored trajectory against the envelope, step by step.
pub fn check_envelope(traj: &Trajectory, params: &EnvelopeParams) -> Result<EnvelopeReport> {
    if params.period == 0 || !(params.rate > 0.0 && params.rate <= 1.0) {
        return Err(Error::invalid(format!(
            "envelope needs T >= 1 and rate in (0, 1], got T = {} and rate {}",
            params.period, params.rate
        )));
    }
    let x0 = traj.initial();
    let (expected, polarized) = match params.side {
        Side::Lower => (x0.max(), params.initial_extreme < 0.5),
        Side::Upper => (x0.min(), params.initial_extreme > 0.5),
    };
    if !polarized || expected != params.initial_extreme {
        return Err(Error::invalid(format!(
            "{:?} envelope with initial extreme {} does not match the trajectory's initial extreme {expected}",
            params.side, params.initial_extreme
        )));
    }

    let mut rows = Vec::with_capacity(traj.states.len());
    let mut worst_slack = f64::INFINITY;
    let mut first_failure = None;
    for (t, state) in traj.states.iter().enumerate() {
        let observed = match params.side {
            Side::Lower => state.max(),
            Side::Upper => 1.0 - state.min(),
        };
        let bound = params.bound(t);
        let slack = bound - observed;
        worst_slack = worst_slack.min(slack);
        let pass = slack >= -ENVELOPE_SLACK;
        if !pass && first_failure.is_none() {
            first_failure = Some(t);
        }
        rows.push(EnvelopeRow {
            t,
            observed,
            bound,
            pass,
        });
    }
    Ok(EnvelopeReport {
        params: *params,
        passed: first_failure.is_none(),
        first_failure,
        rows,
        worst_slack,
    })
}

/// Randomized check of the static-graph envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepConfig {
    pub cases: usize,
    pub horizon: usize,
    pub max_nodes: usize,
    /// Initial opinions are drawn uniformly from `[0, max_initial]`.
    pub max_initial: f64,
    /// Bias exponents are drawn uniformly from `(0, max_bias]`.
    pub max_bias: f64,
    pub graph: RandomGraphParams,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            cases: 200,
            horizon: 300,
            max_nodes: 20,
            max_initial: 0.45,
            max_bias: 4.0,
            graph: RandomGraphParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCase {
    pub case: usize,
    pub n: usize,
    pub rate: f64,
    pub envelope_passed: bool,
    pub first_failure: Option<usize>,
    pub worst_slack: f64,
    /// `max_i x_i(t)` never increased.
    pub monotone: bool,
    pub final_max: f64,
    pub initial_max: f64,
}

impl SweepCase {
    pub fn ok(&self) -> bool {
        self.envelope_passed && self.monotone && self.final_max < self.initial_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSummary {
    pub cases: usize,
    pub failures: usize,
    pub worst_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub summary: SweepSummary,
    pub config: SweepConfig,
    pub details: Vec<SweepCase>,
}

/// Random connected graphs with random weights, biases and polarized
/// initial opinions; each run is checked against its envelope.
pub fn envelope_sweep(config: &SweepConfig) -> Result<SweepReport> {
    if config.max_nodes < 2 || !(config.max_initial < 0.5) || !(config.max_bias > 0.0) {
        return Err(Error::invalid("sweep needs max_nodes >= 2, max_initial < 1/2, max_bias > 0"));
    }
    let details = (0..config.cases)
        .into_par_iter()
        .map(|case| {
            let mut rng = stream_rng(config.seed, &[case as u64]);
            let n = rng.gen_range(2..=config.max_nodes);
            let graph = random_connected(n, &config.graph, &mut rng)?;
            let bias = BiasVector::new(
                (0..n)
                    .map(|_| config.max_bias - rng.gen_range(0.0..config.max_bias))
                    .collect(),
            )?;
            let x0 = OpinionState::new((0..n).map(|_| rng.gen_range(0.0..=config.max_initial)).collect())?;
            let opts = SimulateOptions {
                seed: Some(config.seed),
                ..SimulateOptions::new(config.horizon)
            };
            let traj = simulate(&graph, &bias, &x0, &opts)?;
            let params = EnvelopeParams::for_graph(&graph, &bias, &x0)?;
            let report = check_envelope(&traj, &params)?;
            let curve = traj.max_curve();
            Ok(SweepCase {
                case,
                n,
                rate: params.rate,
                envelope_passed: report.passed,
                first_failure: report.first_failure,
                worst_slack: report.worst_slack,
                monotone: curve.windows(2).all(|w| w[1] <= w[0]),
                final_max: *curve.last().unwrap(),
                initial_max: curve[0],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = SweepSummary {
        cases: details.len(),
        failures: details.iter().filter(|c| !c.ok()).count(),
        worst_slack: details.iter().map(|c| c.worst_slack).fold(f64::INFINITY, f64::min),
    };
    Ok(SweepReport {
        summary,
        config: *config,
        details,
    })
}
