//! Randomized local-stability testing of equilibria.
//!
//! Around an equilibrium `e`, each trial draws a start point whose
//! coordinates lie within `radius` of `e` (clipped to `[0, 1]`), runs the map
//! for `horizon` steps and watches the Euclidean distance to `e`. The
//! equilibrium is declared unstable as soon as one trial's distance exceeds
//! `blowup` times its own starting distance; otherwise it is stable.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{step, step_split_into, BiasVector, OpinionState, SplitState};
use crate::equilibria::{residual, vertex_state, GraphSummary, EQUILIBRIUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::seeding::stream_rng;

/// Largest node count accepted by [`vertex_scan`].
pub const MAX_SCAN_NODES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityProtocol {
    pub trials: usize,
    /// Per-coordinate perturbation half-width.
    pub radius: f64,
    pub horizon: u64,
    pub blowup: f64,
    pub seed: u64,
    /// Give the mirror vertex `1 - X` the negated perturbations of `X`.
    pub mirrored_sampling: bool,
    /// Stop a trial at its first violation.
    pub early_exit: bool,
}

impl Default for StabilityProtocol {
    fn default() -> Self {
        Self {
            trials: 100,
            radius: 0.015,
            horizon: 10_000,
            blowup: 3.0,
            seed: 0,
            mirrored_sampling: true,
            early_exit: true,
        }
    }
}

impl StabilityProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0
            || self.horizon == 0
            || !(self.radius > 0.0 && self.radius.is_finite())
            || !(self.blowup > 0.0 && self.blowup.is_finite())
        {
            return Err(Error::invalid(format!("stability protocol must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub trial: usize,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub point: Vec<f64>,
    pub verdict: Stability,
    pub first_violation: Option<Violation>,
    /// Largest `distance(t) / distance(0)` seen over all trials.
    pub max_distance_ratio: f64,
    /// The point's residual exceeded the equilibrium tolerance.
    pub residual_warning: bool,
}

/// Per-coordinate distance to `e`, measured on whichever half of the split
/// state is closer to the reference so that mirrored runs agree exactly.
#[inline]
fn distance(state: &SplitState, eq: &[f64], eq_hi: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..eq.len() {
        let d = if eq[i] <= 0.5 {
            state.lo[i] - eq[i]
        } else {
            state.hi[i] - eq_hi[i]
        };
        sum += d * d;
    }
    sum.sqrt()
}

struct TrialOutcome {
    violation: Option<u64>,
    max_ratio: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    graph: &WeightedGraph,
    bias: &BiasVector,
    eq: &[f64],
    eq_hi: &[f64],
    protocol: &StabilityProtocol,
    key: u64,
    trial: usize,
    sign: f64,
) -> Result<TrialOutcome> {
    let n = eq.len();
    let mut rng = stream_rng(protocol.seed, &[key, trial as u64]);
    let r = protocol.radius;
    let mut state = SplitState {
        lo: vec![0.0; n],
        hi: vec![0.0; n],
    };
    let start = loop {
        for i in 0..n {
            let delta = sign * rng.gen_range(-r..=r);
            state.lo[i] = (eq[i] + delta).clamp(0.0, 1.0);
            state.hi[i] = (eq_hi[i] - delta).clamp(0.0, 1.0);
        }
        let d = distance(&state, eq, eq_hi);
        if d > 0.0 {
            break d;
        }
    };

    let limit = protocol.blowup * start;
    let mut next = state.clone();
    let mut violation = None;
    let mut max_ratio = 1.0_f64;
    for t in 1..=protocol.horizon {
        step_split_into(graph, bias, &state, t - 1, &mut next)?;
        let d = distance(&next, eq, eq_hi);
        max_ratio = max_ratio.max(d / start);
        if d > limit && violation.is_none() {
            violation = Some(t);
            if protocol.early_exit {
                break;
            }
        }
        if next == state {
            // fixed point reached; the rest of the run is constant
            break;
        }
        std::mem::swap(&mut state, &mut next);
    }
    Ok(TrialOutcome {
        violation,
        max_ratio,
    })
}

fn run_trials(
    graph: &WeightedGraph,
    bias: &BiasVector,
    eq: &OpinionState,
    protocol: &StabilityProtocol,
    key: u64,
    sign: f64,
) -> Result<StabilityVerdict> {
    let eq_vals = eq.values();
    let eq_hi: Vec<f64> = eq_vals.iter().map(|v| 1.0 - v).collect();
    let mut first_violation = None;
    let mut max_distance_ratio = 1.0_f64;
    for trial in 0..protocol.trials {
        let out = run_trial(graph, bias, eq_vals, &eq_hi, protocol, key, trial, sign)?;
        max_distance_ratio = max_distance_ratio.max(out.max_ratio);
        if let Some(t) = out.violation {
            first_violation = Some(Violation { trial, t });
            if protocol.early_exit {
                break;
            }
        }
    }
    let residual_warning = match bias.uniform_value() {
        Some(b) => residual(graph, b, eq)?.max_abs > EQUILIBRIUM_TOLERANCE,
        None => step(graph, bias, eq, 0)?.max_abs_diff(eq) > EQUILIBRIUM_TOLERANCE,
    };
    Ok(StabilityVerdict {
        point: eq_vals.to_vec(),
        verdict: if first_violation.is_some() {
            Stability::Unstable
        } else {
            Stability::Stable
        },
        first_violation,
        max_distance_ratio,
        residual_warning,
    })
}

fn check_inputs(graph: &WeightedGraph, bias: &BiasVector, eq: &OpinionState) -> Result<()> {
    if graph.n() != bias.len() || graph.n() != eq.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: graph {}, bias {}, point {}",
            graph.n(),
            bias.len(),
            eq.len()
        )));
    }
    Ok(())
}

/// Randomized stability verdict for one equilibrium.
pub fn randomized_stability_test(
    graph: &WeightedGraph,
    bias: &BiasVector,
    eq: &OpinionState,
    protocol: &StabilityProtocol,
) -> Result<StabilityVerdict> {
    protocol.validate()?;
    check_inputs(graph, bias, eq)?;
    run_trials(graph, bias, eq, protocol, 0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelStats {
    pub k: usize,
    pub total: usize,
    pub stable: usize,
    pub p_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VertexVerdict {
    /// Bit `i - 1` holds node `i`.
    pub mask: u64,
    pub k: usize,
    pub verdict: Stability,
    pub first_violation_t: Option<u64>,
    pub max_distance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub graph: GraphSummary,
    pub b: f64,
    pub protocol: StabilityProtocol,
    pub levels: Vec<LevelStats>,
    pub vertices: Vec<VertexVerdict>,
}

impl ScanReport {
    pub fn level(&self, k: usize) -> &LevelStats {
        &self.levels[k]
    }

    /// `k,total,stable,p_k`
    pub fn write_levels_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,total,stable,p_k")?;
        for l in &self.levels {
            writeln!(out, "{},{},{},{:?}", l.k, l.total, l.stable, l.p_k)?;
        }
        Ok(())
    }

    /// `bitmask,k,verdict,first_violation_t`
    pub fn write_vertices_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bitmask,k,verdict,first_violation_t")?;
        for v in &self.vertices {
            let verdict = match v.verdict {
                Stability::Stable => "stable",
                Stability::Unstable => "unstable",
            };
            let t = v.first_violation_t.map(|t| t.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{verdict},{t}", v.mask, v.k)?;
        }
        Ok(())
    }
}

/// Randomized stability test on every vertex of `{0,1}^n`, aggregated by the
/// number of ones.
pub fn vertex_scan(graph: &WeightedGraph, b: f64, protocol: &StabilityProtocol) -> Result<ScanReport> {
    protocol.validate()?;
    let n = graph.n();
    if n > MAX_SCAN_NODES {
        return Err(Error::invalid(format!(
            "vertex scan enumerates 2^n points; n = {n} exceeds the cap of {MAX_SCAN_NODES}"
        )));
    }
    let bias = BiasVector::uniform(n, b)?;
    let full = (1u64 << n) - 1;
    let vertices = (0..=full)
        .into_par_iter()
        .map(|mask| {
            let (key, sign) = if protocol.mirrored_sampling && (full ^ mask) < mask {
                (full ^ mask, -1.0)
            } else {
                (mask, 1.0)
            };
            let v = run_trials(graph, &bias, &vertex_state(n, mask), protocol, key, sign)?;
            Ok(VertexVerdict {
                mask,
                k: mask.count_ones() as usize,
                verdict: v.verdict,
                first_violation_t: v.first_violation.map(|f| f.t),
                max_distance_ratio: v.max_distance_ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut levels: Vec<LevelStats> = (0..=n)
        .map(|k| LevelStats {
            k,
            total: 0,
            stable: 0,
            p_k: 0.0,
        })
        .collect();
    for v in &vertices {
        levels[v.k].total += 1;
        if v.verdict == Stability::Stable {
            levels[v.k].stable += 1;
        }
    }
    for l in &mut levels {
        l.p_k = l.stable as f64 / l.total as f64;
    }
    Ok(ScanReport {
        graph: GraphSummary {
            kind: graph.kind(),
            n,
            self_weight: graph.self_weights().to_vec(),
        },
        b,
        protocol: *protocol,
        levels,
        vertices,
    })
}

/// Finite-difference Jacobian of one step at `point`. Central differences
/// where both neighbors stay in `[0, 1]`, one-sided into the box otherwise.
pub fn fd_jacobian(
    graph: &WeightedGraph,
    bias: &BiasVector,
    point: &OpinionState,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::invalid(format!("step h must lie in [1e-8, 1e-4], got {h}")));
    }
    check_inputs(graph, bias, point)?;
    let n = point.len();
    let mut jac = DMatrix::zeros(n, n);
    let base = step(graph, bias, point, 0)?;
    for j in 0..n {
        let xj = point.get(j);
        let shifted = |delta: f64| -> Result<OpinionState> {
            let mut v = point.values().to_vec();
            v[j] = xj + delta;
            step(graph, bias, &OpinionState::new(v)?, 0)
        };
        let column: Vec<f64> = if xj - h >= 0.0 && xj + h <= 1.0 {
            let (p, m) = (shifted(h)?, shifted(-h)?);
            (0..n).map(|i| (p.get(i) - m.get(i)) / (2.0 * h)).collect()
        } else if xj + h <= 1.0 {
            let p = shifted(h)?;
            (0..n).map(|i| (p.get(i) - base.get(i)) / h).collect()
        } else {
            let m = shifted(-h)?;
            (0..n).map(|i| (base.get(i) - m.get(i)) / h).collect()
        };
        for (i, v) in column.into_iter().enumerate() {
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SpectralEstimate {
    Converged { radius: f64, iterations: usize },
    /// Power iteration did not settle (e.g. several dominant eigenvalues of
    /// equal modulus that are not a `±λ` pair).
    Indeterminate { last_estimate: f64 },
}

impl SpectralEstimate {
    pub fn value(&self) -> Option<f64> {
        match self {
            SpectralEstimate::Converged { radius, .. } => Some(*radius),
            SpectralEstimate::Indeterminate { .. } => None,
        }
    }
}

pub const SPECTRAL_TOLERANCE: f64 = 1e-10;
pub const SPECTRAL_MAX_ITERATIONS: usize = 10_000;

/// Dominant eigenvalue modulus by power iteration on `A²`, which also
/// settles when the dominant eigenvalues are a `±λ` pair.
pub fn spectral_radius(matrix: &DMatrix<f64>) -> Result<SpectralEstimate> {
    if !matrix.is_square() || matrix.nrows() == 0 {
        return Err(Error::invalid(format!(
            "spectral radius needs a non-empty square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let n = matrix.nrows();
    // fixed irregular start vector, unlikely to be orthogonal to anything
    let mut v = nalgebra::DVector::from_iterator(n, (0..n).map(|i| 1.0 + 0.5 * ((i + 1) as f64).sin()));
    v /= v.norm();
    let mut prev = f64::NAN;
    for it in 1..=SPECTRAL_MAX_ITERATIONS {
        let u = matrix * (matrix * &v);
        let norm = u.norm();
        if norm == 0.0 {
            return Ok(SpectralEstimate::Converged {
                radius: 0.0,
                iterations: it,
            });
        }
        let est = norm.sqrt();
        if (est - prev).abs() <= SPECTRAL_TOLERANCE * est.max(1.0) {
            return Ok(SpectralEstimate::Converged {
                radius: est,
                iterations: it,
            });
        }
        prev = est;
        v = u / norm;
    }
    Ok(SpectralEstimate::Indeterminate { last_estimate: prev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_graph, GraphKind};

    fn quick(trials: usize, horizon: u64) -> StabilityProtocol {
        StabilityProtocol {
            trials,
            horizon,
            ..StabilityProtocol::default()
        }
    }

    #[test]
    fn defaults_match_protocol() {
        let p = StabilityProtocol::default();
        assert_eq!((p.trials, p.radius, p.horizon, p.blowup), (100, 0.015, 10_000, 3.0));
        assert!(StabilityProtocol { trials: 0, ..p }.validate().is_err());
        assert!(StabilityProtocol { radius: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn centroid_is_unstable() {
        for kind in [GraphKind::Complete, GraphKind::Star, GraphKind::Cycle] {
            let g = make_graph(kind, 5, 1.0).unwrap();
            let bias = BiasVector::uniform(5, 2.0).unwrap();
            let v = randomized_stability_test(&g, &bias, &OpinionState::centroid(5), &quick(20, 2000)).unwrap();
            assert_eq!(v.verdict, Stability::Unstable, "{kind}");
            assert!(!v.residual_warning);
        }
    }

    #[test]
    fn zero_vertex_is_stable() {
        let g = make_graph(GraphKind::Cycle, 10, 1.0).unwrap();
        let bias = BiasVector::uniform(10, 3.0).unwrap();
        let v = randomized_stability_test(&g, &bias, &OpinionState::constant(10, 0.0).unwrap(), &quick(20, 10_000))
            .unwrap();
        assert_eq!(v.verdict, Stability::Stable);
        assert!(v.max_distance_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn non_equilibrium_is_flagged() {
        let g = make_graph(GraphKind::Cycle, 4, 1.0).unwrap();
        let bias = BiasVector::uniform(4, 2.0).unwrap();
        let x = OpinionState::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let v = randomized_stability_test(&g, &bias, &x, &quick(2, 10)).unwrap();
        assert!(v.residual_warning);
    }

    #[test]
    fn early_exit_agrees_with_full_run() {
        let g = make_graph(GraphKind::Star, 5, 1.0).unwrap();
        let bias = BiasVector::uniform(5, 3.0).unwrap();
        let x = OpinionState::centroid(5);
        let fast = randomized_stability_test(&g, &bias, &x, &quick(5, 3000)).unwrap();
        let slow = randomized_stability_test(&g, &bias, &x, &StabilityProtocol { early_exit: false, ..quick(5, 3000) })
            .unwrap();
        assert_eq!(fast.verdict, slow.verdict);
        assert_eq!(fast.first_violation.unwrap().trial, 0);
        // the full run reports the last violating trial, the fast run the first
        assert_eq!(
            slow.first_violation.map(|v| v.t).is_some(),
            fast.first_violation.map(|v| v.t).is_some()
        );
    }

    #[test]
    fn small_scan_is_symmetric_and_deterministic() {
        let g = make_graph(GraphKind::Cycle, 4, 1.0).unwrap();
        let p = quick(10, 2000);
        let a = vertex_scan(&g, 3.0, &p).unwrap();
        let b = vertex_scan(&g, 3.0, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.levels.iter().map(|l| l.total).sum::<usize>(), 16);
        for v in &a.vertices {
            let m = a.vertices[(15 ^ v.mask) as usize];
            assert_eq!(v.verdict, m.verdict);
            assert_eq!(v.first_violation_t, m.first_violation_t);
            assert_eq!(v.max_distance_ratio, m.max_distance_ratio);
        }
        let mut csv = Vec::new();
        a.write_levels_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("k,total,stable,p_k\n0,1,1,1.0\n"));
    }

    #[test]
    fn scan_cap() {
        let g = make_graph(GraphKind::Cycle, 21, 1.0).unwrap();
        assert!(vertex_scan(&g, 3.0, &quick(1, 1)).is_err());
    }

    #[test]
    fn spectral_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(spectral_radius(&id).unwrap().value(), Some(1.0));
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap().value(), Some(0.0));
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = spectral_radius(&swap).unwrap().value().unwrap();
        assert!((r - 1.0).abs() < 1e-10);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((spectral_radius(&m).unwrap().value().unwrap() - 3.0).abs() < 1e-8);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
        // rotation by a generic angle: complex pair, power iteration on A² still
        // sees an orthogonal map, so the modulus settles at 1
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((spectral_radius(&rot).unwrap().value().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jacobian_at_centroid_of_complete_graph() {
        let g = make_graph(GraphKind::Complete, 3, 1.0).unwrap();
        let bias = BiasVector::uniform(3, 1.0).unwrap();
        let jac = fd_jacobian(&g, &bias, &OpinionState::centroid(3), 1e-6).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((jac[(i, j)] - jac[(j, i)]).abs() < 1e-8);
                if i != j {
                    assert!((jac[(i, j)] - jac[(0, 1)]).abs() < 1e-8);
                }
            }
            assert!((jac[(i, i)] - jac[(0, 0)]).abs() < 1e-8);
        }
        let rho = spectral_radius(&jac).unwrap().value().unwrap();
        assert!(rho > 1.0, "rho = {rho}");
        assert!(fd_jacobian(&g, &bias, &OpinionState::centroid(3), 1e-2).is_err());
    }

    #[test]
    fn jacobian_at_zero_vertex_is_contracting() {
        let g = make_graph(GraphKind::Cycle, 6, 1.0).unwrap();
        let bias = BiasVector::uniform(6, 2.0).unwrap();
        let jac = fd_jacobian(&g, &bias, &OpinionState::constant(6, 0.0).unwrap(), 1e-7).unwrap();
        // x_i' ≈ w x_i / (w + d) near 0 when b > 1
        for i in 0..6 {
            assert!((jac[(i, i)] - 1.0 / 3.0).abs() < 1e-5, "{}", jac[(i, i)]);
            for j in 0..6 {
                if i != j {
                    assert!(jac[(i, j)].abs() < 1e-5);
                }
            }
        }
        assert!(spectral_radius(&jac).unwrap().value().unwrap() < 1.0);
    }
}
