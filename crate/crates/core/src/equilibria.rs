//! Equilibria of the update map under a uniform bias exponent.
//!
//! With a common exponent `b`, a state `x` is a fixed point exactly when
//! every component of the polynomial map
//!
//! ```text
//! p_i(x) = x_i^b (x_i - 1) s_i + x_i (1 - x_i)^b (d_i - s_i)
//! ```
//!
//! vanishes. This module evaluates `p`, builds the closed-form interior
//! families known for complete, star and cycle graphs, enumerates the
//! vertices of `{0,1}^n`, and runs a damped-Newton grid search that serves
//! as an independent numeric oracle for those families.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{bias_pow, OpinionState};
use crate::error::{Error, Result};
use crate::graph::{GraphKind, WeightedGraph};

/// Absolute tolerance on `max_i |p_i|` for calling a state an equilibrium.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub p: Vec<f64>,
    pub max_abs: f64,
}

fn check_bias(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("bias must be finite and > 0, got {b}")))
    }
}

fn residual_values(graph: &WeightedGraph, b: f64, x: &[f64], out: &mut [f64]) {
    for (i, p) in out.iter_mut().enumerate() {
        let xi = x[i];
        let s: f64 = graph.neighbors(i).iter().map(|&(j, w)| w * x[j]).sum();
        let d = graph.degree(i);
        *p = bias_pow(xi, b) * (xi - 1.0) * s + xi * bias_pow(1.0 - xi, b) * (d - s);
    }
}

/// Evaluates `p(x)`.
pub fn residual(graph: &WeightedGraph, b: f64, x: &OpinionState) -> Result<Residual> {
    check_bias(b)?;
    if x.len() != graph.n() {
        return Err(Error::invalid(format!(
            "state has {} coordinates, graph has {} nodes",
            x.len(),
            graph.n()
        )));
    }
    let mut p = vec![0.0; graph.n()];
    residual_values(graph, b, x.values(), &mut p);
    let max_abs = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(Residual { p, max_abs })
}

pub fn is_equilibrium(graph: &WeightedGraph, b: f64, x: &OpinionState) -> Result<bool> {
    Ok(residual(graph, b, x)?.max_abs <= EQUILIBRIUM_TOLERANCE)
}

/// Closed-form families of interior equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// `(1/2, ..., 1/2)`, any graph, any `b`.
    Centroid,
    /// Star, `b = 1`: hub at 1/2, leaves summing to `(n-1)/2`.
    StarHyperplane,
    /// Star, `b = 2`: `(a, ..., a, 1-a)`.
    StarLine,
    /// Cycle, `b = 1`, `n ≡ 0 (mod 4)`: `(a1, a2, 1-a1, 1-a2, ...)`.
    CycleMod4,
    /// Cycle, `b = 2`, even `n`: `(a, 1-a, a, 1-a, ...)`.
    CycleAlternating,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 5] = [
        FamilyKind::Centroid,
        FamilyKind::StarHyperplane,
        FamilyKind::StarLine,
        FamilyKind::CycleMod4,
        FamilyKind::CycleAlternating,
    ];
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyKind::Centroid => "centroid",
            FamilyKind::StarHyperplane => "star-hyperplane",
            FamilyKind::StarLine => "star-line",
            FamilyKind::CycleMod4 => "cycle-mod4",
            FamilyKind::CycleAlternating => "cycle-alternating",
        };
        f.write_str(s)
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Parse(format!("unknown equilibrium family `{s}`")))
    }
}

/// A closed-form family bound to a node count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EquilibriumFamily {
    pub kind: FamilyKind,
    pub n: usize,
}

impl EquilibriumFamily {
    /// Checks that the family exists for this `n` and `b`.
    pub fn new(kind: FamilyKind, n: usize, b: f64) -> Result<Self> {
        check_bias(b)?;
        let ok = match kind {
            FamilyKind::Centroid => n >= 2,
            FamilyKind::StarHyperplane => n >= 2 && b == 1.0,
            FamilyKind::StarLine => n >= 2 && b == 2.0,
            FamilyKind::CycleMod4 => n >= 4 && n.is_multiple_of(4) && b == 1.0,
            FamilyKind::CycleAlternating => n >= 4 && n.is_multiple_of(2) && b == 2.0,
        };
        if !ok {
            return Err(Error::invalid(format!("no {kind} family for n = {n}, b = {b}")));
        }
        Ok(Self { kind, n })
    }

    pub fn graph_kind(&self) -> Option<GraphKind> {
        match self.kind {
            FamilyKind::Centroid => None,
            FamilyKind::StarHyperplane | FamilyKind::StarLine => Some(GraphKind::Star),
            FamilyKind::CycleMod4 | FamilyKind::CycleAlternating => Some(GraphKind::Cycle),
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            FamilyKind::Centroid => 0,
            FamilyKind::StarHyperplane => self.n - 2,
            FamilyKind::StarLine | FamilyKind::CycleAlternating => 1,
            FamilyKind::CycleMod4 => 2,
        }
    }

    pub fn describe(&self) -> String {
        let n = self.n;
        match self.kind {
            FamilyKind::Centroid => "x_i = 1/2 for all i".into(),
            FamilyKind::StarHyperplane => {
                format!("x_{n} = 1/2, x_1 + ... + x_{} = {}/2, leaves in (0,1)", n - 1, n - 1)
            }
            FamilyKind::StarLine => format!("x_1 = ... = x_{} = a, x_{n} = 1 - a, a in (0,1)", n - 1),
            FamilyKind::CycleMod4 => "(a1, a2, 1-a1, 1-a2, ...) repeating every 4 nodes, a1, a2 in (0,1)".into(),
            FamilyKind::CycleAlternating => "(a, 1-a, a, 1-a, ...), a in (0,1)".into(),
        }
    }

    /// The member with the given free parameters.
    pub fn member(&self, params: &[f64]) -> Result<OpinionState> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "{} family takes {} parameters, got {}",
                self.kind,
                self.param_count(),
                params.len()
            )));
        }
        if let Some(p) = params.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::OutOfFamily(format!("parameter {p} is outside (0, 1)")));
        }
        let n = self.n;
        let x: Vec<f64> = match self.kind {
            FamilyKind::Centroid => vec![0.5; n],
            FamilyKind::StarHyperplane => {
                let last = (n - 1) as f64 / 2.0 - params.iter().sum::<f64>();
                if !(last > 0.0 && last < 1.0) {
                    return Err(Error::OutOfFamily(format!(
                        "leaf {} would be {last}, outside (0, 1)",
                        n - 1
                    )));
                }
                params.iter().copied().chain([last, 0.5]).collect()
            }
            FamilyKind::StarLine => {
                let a = params[0];
                (0..n).map(|i| if i + 1 < n { a } else { 1.0 - a }).collect()
            }
            FamilyKind::CycleMod4 => {
                let (a1, a2) = (params[0], params[1]);
                (0..n)
                    .map(|i| match i % 4 {
                        0 => a1,
                        1 => a2,
                        2 => 1.0 - a1,
                        _ => 1.0 - a2,
                    })
                    .collect()
            }
            FamilyKind::CycleAlternating => {
                let a = params[0];
                (0..n).map(|i| if i % 2 == 0 { a } else { 1.0 - a }).collect()
            }
        };
        OpinionState::new(x)
    }

    /// Uniform parameters in `(0, 1)`, redrawn until the member is valid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> OpinionState {
        loop {
            let params: Vec<f64> = (0..self.param_count())
                .map(|_| loop {
                    let v: f64 = rng.gen();
                    if v > 0.0 {
                        break v;
                    }
                })
                .collect();
            if let Ok(x) = self.member(&params) {
                return x;
            }
        }
    }

    /// The family's closure as an affine set `offset + span(basis)`.
    fn affine(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut offset = DVector::zeros(n);
        let cols = match self.kind {
            FamilyKind::Centroid => {
                offset.fill(0.5);
                0
            }
            FamilyKind::StarHyperplane => {
                offset.fill(0.5);
                n - 2
            }
            FamilyKind::StarLine => {
                offset[n - 1] = 1.0;
                1
            }
            FamilyKind::CycleMod4 => {
                for i in 0..n {
                    if i % 4 >= 2 {
                        offset[i] = 1.0;
                    }
                }
                2
            }
            FamilyKind::CycleAlternating => {
                for i in (1..n).step_by(2) {
                    offset[i] = 1.0;
                }
                1
            }
        };
        let mut basis = DMatrix::zeros(n, cols);
        match self.kind {
            FamilyKind::Centroid => {}
            FamilyKind::StarHyperplane => {
                for c in 0..cols {
                    basis[(c, c)] = 1.0;
                    basis[(n - 2, c)] = -1.0;
                }
            }
            FamilyKind::StarLine => {
                for i in 0..n - 1 {
                    basis[(i, 0)] = 1.0;
                }
                basis[(n - 1, 0)] = -1.0;
            }
            FamilyKind::CycleMod4 => {
                for i in 0..n {
                    let (col, sign) = match i % 4 {
                        0 => (0, 1.0),
                        1 => (1, 1.0),
                        2 => (0, -1.0),
                        _ => (1, -1.0),
                    };
                    basis[(i, col)] = sign;
                }
            }
            FamilyKind::CycleAlternating => {
                for i in 0..n {
                    basis[(i, 0)] = if i % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
        }
        (offset, basis)
    }

    /// Euclidean distance from `x` to the affine hull of the family.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let (offset, basis) = self.affine();
        let v = DVector::from_column_slice(x) - offset;
        if basis.ncols() == 0 {
            return v.norm();
        }
        let coeffs = basis
            .clone()
            .svd(true, true)
            .solve(&v, 1e-14)
            .expect("svd computed with u and v");
        (v - basis * coeffs).norm()
    }
}

/// Convenience wrapper for [`EquilibriumFamily::member`].
pub fn family_members(kind: FamilyKind, n: usize, b: f64, params: &[f64]) -> Result<OpinionState> {
    EquilibriumFamily::new(kind, n, b)?.member(params)
}

/// Interior-equilibrium families that make up the complete interior set for
/// a named topology, or `None` when no closed form is known for `(kind, n, b)`.
pub fn closed_form_families(kind: GraphKind, n: usize, b: f64) -> Option<Vec<FamilyKind>> {
    let fams = match kind {
        GraphKind::Complete if n >= 3 && (b <= 1.0 || b == 2.0) => vec![FamilyKind::Centroid],
        GraphKind::Star if b == 1.0 => vec![FamilyKind::StarHyperplane],
        GraphKind::Star if b == 2.0 => vec![FamilyKind::StarLine],
        GraphKind::Star => vec![FamilyKind::Centroid],
        GraphKind::Cycle if b == 1.0 && n.is_multiple_of(4) => vec![FamilyKind::CycleMod4],
        GraphKind::Cycle if b == 2.0 && n.is_multiple_of(2) => vec![FamilyKind::CycleAlternating],
        GraphKind::Cycle if b == 1.0 || b == 2.0 => vec![FamilyKind::Centroid],
        _ => return None,
    };
    Some(fams)
}

/// Vertex `mask` of `{0,1}^n`; bit `i` is node `i`.
pub fn vertex_state(n: usize, mask: u64) -> OpinionState {
    OpinionState::new((0..n).map(|i| ((mask >> i) & 1) as f64).collect()).expect("0/1 entries")
}

/// Bitmasks of `{0,1}^n` in increasing order, optionally only those with
/// exactly `k` ones.
pub fn enumerate_vertices(n: usize, k: Option<usize>) -> Result<impl Iterator<Item = u64>> {
    if n > 63 {
        return Err(Error::invalid(format!("cannot enumerate 2^{n} vertices")));
    }
    if let Some(k) = k {
        if k > n {
            return Err(Error::invalid(format!("level {k} exceeds n = {n}")));
        }
    }
    Ok((0..1u64 << n).filter(move |m| k.is_none_or(|k| m.count_ones() as usize == k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchConfig {
    pub grid_step: f64,
    /// Converged when `max_i |p_i| <= refine_tol`.
    pub refine_tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Accepted points keep every coordinate in `(margin, 1 - margin)`.
    pub boundary_margin: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.05,
            refine_tol: 1e-12,
            max_iterations: 200,
            max_halvings: 40,
            boundary_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub point: Vec<f64>,
    pub residual: f64,
    pub seed_count: usize,
}

fn jacobian(graph: &WeightedGraph, b: f64, x: &[f64]) -> DMatrix<f64> {
    let n = graph.n();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = x[i];
        let s: f64 = graph.neighbors(i).iter().map(|&(j, w)| w * x[j]).sum();
        let d = graph.degree(i);
        let up = bias_pow(xi, b);
        let down = bias_pow(1.0 - xi, b);
        let coupling = up * (xi - 1.0) - xi * down;
        for &(j, w) in graph.neighbors(i) {
            jac[(i, j)] = w * coupling;
        }
        let dup = b * xi.powf(b - 1.0) * (xi - 1.0) + up;
        let ddown = down - b * xi * (1.0 - xi).powf(b - 1.0);
        jac[(i, i)] = dup * s + ddown * (d - s);
    }
    jac
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}

/// Damped Newton from one seed. Returns the point and its residual on
/// convergence.
fn newton(graph: &WeightedGraph, b: f64, seed: &[f64], cfg: &SearchConfig) -> Option<(Vec<f64>, f64)> {
    let n = seed.len();
    let mut x = seed.to_vec();
    let mut r = vec![0.0; n];
    residual_values(graph, b, &x, &mut r);
    let mut trial = vec![0.0; n];
    let mut trial_r = vec![0.0; n];
    let mut converged = false;
    // a few extra steps after reaching the tolerance tighten the clusters
    let mut polish = 10;

    for _ in 0..cfg.max_iterations {
        if max_abs(&r) <= cfg.refine_tol {
            converged = true;
            if polish == 0 {
                break;
            }
            polish -= 1;
        }
        let jac = jacobian(graph, b, &x);
        if jac.iter().any(|v| !v.is_finite()) {
            break;
        }
        let rhs = DVector::from_column_slice(&r);
        let svd = jac.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let Ok(delta) = svd.solve(&rhs, cutoff) else {
            break;
        };
        let current = norm2(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            for i in 0..n {
                trial[i] = x[i] - lambda * delta[i];
            }
            // stay strictly inside: boundary points are discarded anyway and
            // the derivative of x^b blows up there for b < 1
            if trial.iter().all(|v| *v > 0.0 && *v < 1.0) {
                residual_values(graph, b, &trial, &mut trial_r);
                if norm2(&trial_r) < current {
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut r, &mut trial_r);
    }
    let res = max_abs(&r);
    (converged || res <= cfg.refine_tol).then_some((x, res))
}

/// Interior grid values `step, 2 step, ...` strictly below 1.
fn grid_values(step: f64) -> Vec<f64> {
    (1..)
        .map(|k| k as f64 * step)
        .take_while(|v| *v < 1.0 - 1e-9)
        .collect()
}

/// Greedy max-norm clustering in input order; cells of side `radius` keep
/// the neighbor lookup local.
fn cluster_points(points: Vec<(Vec<f64>, f64)>, radius: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (point, res) in points {
        let cell: Vec<i64> = point.iter().map(|v| (v / radius).floor() as i64).collect();
        let mut found = None;
        let dim = cell.len();
        let mut offset = vec![-1i64; dim];
        'search: loop {
            let key: Vec<i64> = cell.iter().zip(&offset).map(|(c, o)| c + o).collect();
            if let Some(ids) = cells.get(&key) {
                for &id in ids {
                    let dist = clusters[id]
                        .point
                        .iter()
                        .zip(&point)
                        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    if dist <= radius {
                        found = Some(id);
                        break 'search;
                    }
                }
            }
            let mut k = 0;
            loop {
                if k == dim {
                    break 'search;
                }
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
                k += 1;
            }
        }
        match found {
            Some(id) => clusters[id].seed_count += 1,
            None => {
                cells.entry(cell).or_default().push(clusters.len());
                clusters.push(Cluster {
                    point,
                    residual: res,
                    seed_count: 1,
                });
            }
        }
    }
    clusters
}

/// Damped-Newton search for interior equilibria seeded from every interior
/// grid point. Seeds that fail to converge or end near the boundary are
/// dropped.
pub fn numeric_search(graph: &WeightedGraph, b: f64, cfg: &SearchConfig) -> Result<Vec<Cluster>> {
    check_bias(b)?;
    if !(cfg.grid_step > 0.0 && cfg.grid_step <= 0.5) {
        return Err(Error::invalid(format!("grid step must lie in (0, 0.5], got {}", cfg.grid_step)));
    }
    if !(cfg.refine_tol > 0.0) {
        return Err(Error::invalid("refine tolerance must be positive"));
    }
    let n = graph.n();
    let values = grid_values(cfg.grid_step);
    let per_axis = values.len();
    let total = (per_axis as f64).powi(n as i32);
    if total > 5e7 {
        return Err(Error::invalid(format!(
            "{total:.0} seeds for n = {n} at grid step {}; use a coarser grid",
            cfg.grid_step
        )));
    }
    let total = total as usize;
    let margin = cfg.boundary_margin;

    let found: Vec<Option<(Vec<f64>, f64)>> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let seed: Vec<f64> = (0..n)
                .map(|_| {
                    let v = values[idx % per_axis];
                    idx /= per_axis;
                    v
                })
                .collect();
            newton(graph, b, &seed, cfg)
                .filter(|(x, _)| x.iter().all(|v| *v > margin && *v < 1.0 - margin))
        })
        .collect();
    Ok(cluster_points(found.into_iter().flatten().collect(), 10.0 * cfg.refine_tol))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledMember {
    pub point: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyCheck {
    pub family: FamilyKind,
    pub description: String,
    pub samples: Vec<SampledMember>,
    pub max_sample_residual: f64,
    /// Largest distance from a search cluster to this family, when a search ran.
    pub max_cluster_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphSummary {
    pub kind: GraphKind,
    pub n: usize,
    pub self_weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriaReport {
    pub graph: GraphSummary,
    pub b: f64,
    /// False when the interior set for this topology and `b` has no known
    /// closed form; the centroid is still listed.
    pub closed_form: bool,
    pub note: Option<String>,
    pub family_checks: Vec<FamilyCheck>,
    pub search: Option<SearchConfig>,
    pub clusters: Option<Vec<Cluster>>,
    /// Largest distance from any cluster to the union of the listed families.
    pub max_cluster_distance: Option<f64>,
}

/// Families with sampled members and residuals, plus optional search results
/// checked against them.
pub fn equilibria_report<R: Rng + ?Sized>(
    graph: &WeightedGraph,
    b: f64,
    samples: usize,
    search: Option<&SearchConfig>,
    rng: &mut R,
) -> Result<EquilibriaReport> {
    check_bias(b)?;
    let n = graph.n();
    let known = closed_form_families(graph.kind(), n, b);
    let kinds = known.clone().unwrap_or_else(|| vec![FamilyKind::Centroid]);
    let clusters = search.map(|cfg| numeric_search(graph, b, cfg)).transpose()?;

    let mut checks = Vec::new();
    for kind in kinds {
        let family = EquilibriumFamily::new(kind, n, b)?;
        let count = if family.param_count() == 0 { 1 } else { samples };
        let members = (0..count)
            .map(|_| {
                let x = family.sample(rng);
                let res = residual(graph, b, &x)?;
                Ok(SampledMember {
                    point: x.into_inner(),
                    residual: res.max_abs,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_sample_residual = members.iter().map(|m| m.residual).fold(0.0, f64::max);
        let max_cluster_distance = clusters.as_ref().map(|cs| {
            cs.iter()
                .map(|c| family.distance(&c.point))
                .fold(0.0, f64::max)
        });
        checks.push(FamilyCheck {
            family: kind,
            description: family.describe(),
            samples: members,
            max_sample_residual,
            max_cluster_distance,
        });
    }

    let max_cluster_distance = clusters.as_ref().map(|cs| {
        let fams: Vec<_> = checks
            .iter()
            .map(|c| EquilibriumFamily::new(c.family, n, b).expect("validated above"))
            .collect();
        cs.iter()
            .map(|c| {
                fams.iter()
                    .map(|f| f.distance(&c.point))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    });

    Ok(EquilibriaReport {
        graph: GraphSummary {
            kind: graph.kind(),
            n,
            self_weight: graph.self_weights().to_vec(),
        },
        b,
        closed_form: known.is_some(),
        note: known
            .is_none()
            .then(|| "no closed form known for this topology and bias; centroid only".to_string()),
        family_checks: checks,
        search: search.copied(),
        clusters,
        max_cluster_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_static, BiasVector};
    use crate::graph::make_graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(v: &[f64]) -> OpinionState {
        OpinionState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn centroid_and_vertices_have_zero_residual() {
        for kind in [GraphKind::Complete, GraphKind::Star, GraphKind::Cycle] {
            let g = make_graph(kind, 5, 0.7).unwrap();
            for b in [0.5, 1.0, 2.0, 3.3] {
                assert_eq!(residual(&g, b, &OpinionState::centroid(5)).unwrap().max_abs, 0.0);
                for mask in enumerate_vertices(5, None).unwrap() {
                    assert_eq!(residual(&g, b, &vertex_state(5, mask)).unwrap().max_abs, 0.0);
                }
            }
        }
    }

    #[test]
    fn star_line_residual() {
        let g = make_graph(GraphKind::Star, 4, 1.0).unwrap();
        let r = residual(&g, 2.0, &state(&[0.3, 0.3, 0.3, 0.7])).unwrap();
        assert!(r.max_abs <= 1e-15, "{r:?}");
    }

    #[test]
    fn family_member_examples() {
        let x = family_members(FamilyKind::StarLine, 5, 2.0, &[0.2]).unwrap();
        assert_eq!(x.values(), &[0.2, 0.2, 0.2, 0.2, 0.8]);
        let x = family_members(FamilyKind::CycleAlternating, 6, 2.0, &[0.4]).unwrap();
        assert_eq!(x.values(), &[0.4, 0.6, 0.4, 0.6, 0.4, 0.6]);
        let x = family_members(FamilyKind::CycleMod4, 8, 1.0, &[0.3, 0.9]).unwrap();
        let expected = [0.3, 0.9, 0.7, 0.1, 0.3, 0.9, 0.7, 0.1];
        for (a, e) in x.values().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        let x = family_members(FamilyKind::StarHyperplane, 5, 1.0, &[0.9, 0.1, 0.8]).unwrap();
        assert!((x.get(3) - 0.2).abs() < 1e-15);
        assert_eq!(x.get(4), 0.5);
    }

    #[test]
    fn family_errors() {
        assert!(matches!(
            family_members(FamilyKind::StarLine, 5, 2.0, &[1.0]),
            Err(Error::OutOfFamily(_))
        ));
        assert!(matches!(
            family_members(FamilyKind::StarHyperplane, 5, 1.0, &[0.9, 0.9, 0.9]),
            Err(Error::OutOfFamily(_))
        ));
        assert!(family_members(FamilyKind::StarLine, 5, 1.0, &[0.3]).is_err());
        assert!(family_members(FamilyKind::CycleMod4, 6, 1.0, &[0.3, 0.2]).is_err());
        assert!(family_members(FamilyKind::CycleAlternating, 5, 2.0, &[0.3]).is_err());
        assert!(family_members(FamilyKind::CycleMod4, 8, 1.0, &[0.3]).is_err());
    }

    #[test]
    fn sampled_members_are_equilibria_and_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cases = [
            (GraphKind::Star, 6, 1.0, FamilyKind::StarHyperplane),
            (GraphKind::Star, 7, 2.0, FamilyKind::StarLine),
            (GraphKind::Cycle, 8, 1.0, FamilyKind::CycleMod4),
            (GraphKind::Cycle, 6, 2.0, FamilyKind::CycleAlternating),
        ];
        for (gk, n, b, fk) in cases {
            let g = make_graph(gk, n, 1.0).unwrap();
            let fam = EquilibriumFamily::new(fk, n, b).unwrap();
            let bias = BiasVector::uniform(n, b).unwrap();
            for _ in 0..50 {
                let x = fam.sample(&mut rng);
                assert!(residual(&g, b, &x).unwrap().max_abs <= 1e-12);
                assert!(step_static(&g, &bias, &x).unwrap().max_abs_diff(&x) <= 1e-10);
                assert!(fam.distance(x.values()) < 1e-12);
            }
        }
    }

    #[test]
    fn family_distance() {
        let fam = EquilibriumFamily::new(FamilyKind::StarLine, 4, 2.0).unwrap();
        assert!(fam.distance(&[0.3, 0.3, 0.3, 0.7]) < 1e-15);
        // (0.3, 0.3, 0.3, 0.8) projects onto a = 0.275
        let d = fam.distance(&[0.3, 0.3, 0.3, 0.8]);
        assert!((d - (3.0 * 0.025f64.powi(2) + 0.075f64.powi(2)).sqrt()).abs() < 1e-12);
        let c = EquilibriumFamily::new(FamilyKind::Centroid, 3, 1.7).unwrap();
        assert!((c.distance(&[0.5, 0.5, 0.6]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn vertex_counts() {
        let zero: Vec<_> = enumerate_vertices(10, Some(0)).unwrap().collect();
        assert_eq!(zero, vec![0]);
        assert_eq!(enumerate_vertices(10, Some(5)).unwrap().count(), 252);
        assert_eq!(enumerate_vertices(3, None).unwrap().count(), 8);
        assert!(enumerate_vertices(3, Some(4)).is_err());
        let total: usize = (0..=10)
            .map(|k| enumerate_vertices(10, Some(k)).unwrap().count())
            .sum();
        assert_eq!(total, 1024);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = make_graph(GraphKind::Cycle, 5, 0.3).unwrap();
        let x = [0.2, 0.7, 0.45, 0.9, 0.33];
        for b in [0.5, 1.0, 2.0, 3.7] {
            let jac = jacobian(&g, b, &x);
            let h = 1e-6;
            for j in 0..5 {
                let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                xp[j] += h;
                xm[j] -= h;
                let (mut rp, mut rm) = (vec![0.0; 5], vec![0.0; 5]);
                residual_values(&g, b, &xp, &mut rp);
                residual_values(&g, b, &xm, &mut rm);
                for i in 0..5 {
                    let fd = (rp[i] - rm[i]) / (2.0 * h);
                    assert!((fd - jac[(i, j)]).abs() < 1e-8, "b={b} ({i},{j}) {fd} vs {}", jac[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn search_complete_three() {
        let g = make_graph(GraphKind::Complete, 3, 1.0).unwrap();
        let clusters = numeric_search(&g, 1.0, &SearchConfig::default()).unwrap();
        assert_eq!(clusters.len(), 1, "{clusters:?}");
        assert!(clusters[0].point.iter().all(|v| (v - 0.5).abs() < 1e-8));
    }

    #[test]
    fn clustering_merges_nearby_points() {
        let pts = vec![
            (vec![0.5, 0.5], 0.0),
            (vec![0.5 + 1e-12, 0.5], 0.0),
            (vec![0.3, 0.7], 0.0),
            (vec![0.5, 0.5 - 5e-12], 0.0),
        ];
        let cs = cluster_points(pts, 1e-11);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].seed_count, 3);
        assert_eq!(cs[1].seed_count, 1);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(closed_form_families(GraphKind::Complete, 4, 0.5), Some(vec![FamilyKind::Centroid]));
        assert_eq!(closed_form_families(GraphKind::Complete, 4, 3.0), None);
        assert_eq!(closed_form_families(GraphKind::Star, 4, 3.0), Some(vec![FamilyKind::Centroid]));
        assert_eq!(closed_form_families(GraphKind::Cycle, 8, 1.0), Some(vec![FamilyKind::CycleMod4]));
        assert_eq!(closed_form_families(GraphKind::Cycle, 6, 1.0), Some(vec![FamilyKind::Centroid]));
        assert_eq!(closed_form_families(GraphKind::Cycle, 6, 3.0), None);
        assert_eq!(closed_form_families(GraphKind::Custom, 6, 1.0), None);
    }

    #[test]
    fn family_kind_names_round_trip() {
        for k in FamilyKind::ALL {
            assert_eq!(k.to_string().parse::<FamilyKind>().unwrap(), k);
        }
    }
}
