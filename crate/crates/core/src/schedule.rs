//! Time-varying directed interaction schedules.
//!
//! A schedule is a finite cycle of directed snapshots replayed periodically:
//! the snapshot in force at time `t` is `snapshots[t % cycle_len]`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{parse_weighted_pair, Interaction, Layer, WeightedGraph};

/// Directed arcs active at one time step. `in_arcs[i]` holds `(j, w_ij)`
/// for arcs `j -> i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    self_weights: Vec<f64>,
    in_arcs: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
}

impl Snapshot {
    /// `arcs` are 0-based `(from, to, weight)` triples.
    pub fn new(n: usize, arcs: &[(usize, usize, f64)], self_weights: Vec<f64>) -> Result<Self> {
        if self_weights.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} self-weights, got {}",
                self_weights.len()
            )));
        }
        if let Some(w) = self_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("self-weight must be finite and >= 0, got {w}")));
        }
        let mut in_arcs = vec![Vec::new(); n];
        for &(from, to, w) in arcs {
            if from >= n || to >= n {
                return Err(Error::invalid(format!(
                    "arc ({}, {}) references a node outside 1..={n}",
                    from + 1,
                    to + 1
                )));
            }
            if from == to {
                return Err(Error::invalid(format!("self-loop arc at node {}", to + 1)));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!("arc weight must be finite and > 0, got {w}")));
            }
            if in_arcs[to].iter().any(|&(j, _)| j == from) {
                return Err(Error::invalid(format!("duplicate arc ({}, {})", from + 1, to + 1)));
            }
            in_arcs[to].push((from, w));
        }
        for list in &mut in_arcs {
            list.sort_by_key(|&(j, _)| j);
        }
        let degrees = in_arcs
            .iter()
            .map(|l| l.iter().map(|&(_, w)| w).sum())
            .collect();
        Ok(Self {
            self_weights,
            in_arcs,
            degrees,
        })
    }

    /// Every undirected edge becomes two arcs.
    pub fn from_graph(graph: &WeightedGraph) -> Self {
        let mut arcs = Vec::with_capacity(2 * graph.edges().len());
        for &(i, j, w) in graph.edges() {
            arcs.push((i, j, w));
            arcs.push((j, i, w));
        }
        Self::new(graph.n(), &arcs, graph.self_weights().to_vec()).expect("graph is valid")
    }

    pub fn n(&self) -> usize {
        self.self_weights.len()
    }

    pub fn self_weights(&self) -> &[f64] {
        &self.self_weights
    }

    pub fn in_arcs(&self, i: usize) -> &[(usize, f64)] {
        &self.in_arcs[i]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn layer(&self) -> Layer<'_> {
        Layer {
            self_weights: &self.self_weights,
            neighbors: &self.in_arcs,
            degrees: &self.degrees,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    n: usize,
    snapshots: Vec<Snapshot>,
    period: usize,
    weight_floor: f64,
    self_weight_caps: Vec<f64>,
}

impl SwitchingSchedule {
    /// `period` is the activity window `T`, `weight_floor` the constant `c`.
    pub fn new(
        n: usize,
        snapshots: Vec<Snapshot>,
        period: usize,
        weight_floor: f64,
        self_weight_caps: Vec<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("schedule needs at least 2 nodes, got {n}")));
        }
        if snapshots.is_empty() {
            return Err(Error::invalid("schedule needs at least one snapshot"));
        }
        if let Some(s) = snapshots.iter().find(|s| s.n() != n) {
            return Err(Error::invalid(format!(
                "snapshot has {} nodes, schedule has {n}",
                s.n()
            )));
        }
        if period == 0 {
            return Err(Error::invalid("activity window T must be positive"));
        }
        if !(weight_floor.is_finite() && weight_floor > 0.0) {
            return Err(Error::invalid(format!("weight floor c must be > 0, got {weight_floor}")));
        }
        if self_weight_caps.len() != n
            || self_weight_caps.iter().any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::invalid("self-weight caps must be n finite values >= 0"));
        }
        Ok(Self {
            n,
            snapshots,
            period,
            weight_floor,
            self_weight_caps,
        })
    }

    /// The static graph replayed forever, with `c = min_i d_i` and caps
    /// equal to the graph's self-weights.
    pub fn constant(graph: &WeightedGraph, period: usize) -> Result<Self> {
        let floor = graph.degrees().iter().copied().fold(f64::INFINITY, f64::min);
        Self::new(
            graph.n(),
            vec![Snapshot::from_graph(graph)],
            period,
            floor,
            graph.self_weights().to_vec(),
        )
    }

    /// Node `i` (0-based) receives one arc from node `i + 1 mod n` at the
    /// times `t ≡ i (mod T)`.
    pub fn round_robin(n: usize, period: usize, arc_weight: f64, self_weight: f64) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("activity window T must be positive"));
        }
        let snapshots = (0..period)
            .map(|slot| {
                let arcs: Vec<_> = (0..n)
                    .filter(|i| i % period == slot)
                    .map(|i| ((i + 1) % n, i, arc_weight))
                    .collect();
                Snapshot::new(n, &arcs, vec![self_weight; n])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, snapshots, period, arc_weight, vec![self_weight; n])
    }

    /// Round-robin activation with random sources and weights: in slot
    /// `i mod T` node `i` hears from a uniformly chosen other node with weight
    /// in `[c, 2c]`; self-weights are drawn from `[0, cap]`.
    pub fn random_round_robin<R: Rng + ?Sized>(
        n: usize,
        period: usize,
        weight_floor: f64,
        self_weight_cap: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n < 2 || period == 0 {
            return Err(Error::invalid("need n >= 2 and T >= 1"));
        }
        let snapshots = (0..period)
            .map(|slot| {
                let arcs: Vec<_> = (0..n)
                    .filter(|i| i % period == slot)
                    .map(|i| {
                        let mut from = rng.gen_range(0..n - 1);
                        if from >= i {
                            from += 1;
                        }
                        (from, i, rng.gen_range(weight_floor..=2.0 * weight_floor))
                    })
                    .collect();
                let self_weights = (0..n).map(|_| rng.gen_range(0.0..=self_weight_cap)).collect();
                Snapshot::new(n, &arcs, self_weights)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, snapshots, period, weight_floor, vec![self_weight_cap; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn weight_floor(&self) -> f64 {
        self.weight_floor
    }

    pub fn self_weight_caps(&self) -> &[f64] {
        &self.self_weight_caps
    }

    pub fn cycle_len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshot(&self, t: u64) -> &Snapshot {
        &self.snapshots[(t % self.snapshots.len() as u64) as usize]
    }

    /// Horizon over which every periodic window has been seen once.
    pub fn full_check_horizon(&self) -> u64 {
        (self.snapshots.len() + self.period) as u64
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::graph::Fnv1a::default();
        h.write_u64(self.n as u64);
        h.write_u64(self.period as u64);
        h.write_u64(self.weight_floor.to_bits());
        for s in &self.snapshots {
            for (i, list) in s.in_arcs.iter().enumerate() {
                for &(j, w) in list {
                    h.write_u64(i as u64);
                    h.write_u64(j as u64);
                    h.write_u64(w.to_bits());
                }
            }
            for w in &s.self_weights {
                h.write_u64(w.to_bits());
            }
        }
        h.finish()
    }

    /// Parses the schedule file format (TOML).
    ///
    /// ```toml
    /// n = 3
    /// period = 3            # activity window T
    /// weight_floor = 1.0    # c
    /// self_weight_cap = 1.0 # or self_weight_caps = [...]
    /// cycle_length = 3      # optional, defaults to last t + 1
    ///
    /// [[snapshots]]
    /// t = 0
    /// arcs = ["2 1 1.0"]    # from to weight, 1-based
    /// self_weight = 1.0     # or self_weights = [...]
    /// ```
    ///
    /// Times missing from the list are snapshots with no arcs and zero
    /// self-weights.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScheduleFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.build()
    }

    pub fn to_toml_string(&self) -> String {
        let file = ScheduleFile {
            n: self.n,
            period: self.period,
            weight_floor: self.weight_floor,
            self_weight_cap: None,
            self_weight_caps: Some(self.self_weight_caps.clone()),
            cycle_length: Some(self.snapshots.len()),
            snapshots: self
                .snapshots
                .iter()
                .enumerate()
                .map(|(t, s)| SnapshotEntry {
                    t: t as u64,
                    arcs: s
                        .in_arcs
                        .iter()
                        .enumerate()
                        .flat_map(|(i, l)| {
                            l.iter().map(move |&(j, w)| format!("{} {} {:?}", j + 1, i + 1, w))
                        })
                        .collect(),
                    self_weight: None,
                    self_weights: Some(s.self_weights.clone()),
                })
                .collect(),
        };
        toml::to_string(&file).expect("schedule file serializes")
    }
}

impl Interaction for SwitchingSchedule {
    fn node_count(&self) -> usize {
        self.n
    }

    fn layer(&self, t: u64) -> Layer<'_> {
        self.snapshot(t).layer()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Clause {
    /// `w_ii(t) <= cap_i`
    SelfWeightCap,
    /// `d_i(t) >= c` whenever `d_i(t) > 0`
    WeightFloor,
    /// every window of `T` steps gives each node positive total degree
    ActivityWindow,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::SelfWeightCap => f.write_str("(i) self-weight cap"),
            Clause::WeightFloor => f.write_str("(ii) weight floor"),
            Clause::ActivityWindow => f.write_str("(iii) activity window"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClauseResult {
    pub clause: Clause,
    pub passed: bool,
    /// First failing `(t, node)`, node 0-based. For the activity window `t`
    /// is the window start.
    pub first_violation: Option<(u64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub horizon: u64,
    pub clauses: [ClauseResult; 3],
}

impl ScheduleReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, clause: Clause) -> &ClauseResult {
        self.clauses
            .iter()
            .find(|c| c.clause == clause)
            .expect("all clauses present")
    }

    pub fn first_failure(&self) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| !c.passed)
    }
}

/// Checks the three activity assumptions on `[0, horizon]`.
pub fn validate_schedule(sched: &SwitchingSchedule, horizon: u64) -> Result<ScheduleReport> {
    let period = sched.period as u64;
    if horizon < period {
        return Err(Error::invalid(format!(
            "horizon {horizon} is shorter than the activity window T = {period}"
        )));
    }
    let n = sched.n;
    let mut cap = None;
    let mut floor = None;
    for t in 0..=horizon {
        let snap = sched.snapshot(t);
        for i in 0..n {
            if cap.is_none() && snap.self_weights[i] > sched.self_weight_caps[i] {
                cap = Some((t, i));
            }
            let d = snap.degrees[i];
            if floor.is_none() && d > 0.0 && d < sched.weight_floor {
                floor = Some((t, i));
            }
        }
        if cap.is_some() && floor.is_some() {
            break;
        }
    }

    let mut window = None;
    'outer: for start in 0..=(horizon + 1 - period) {
        for i in 0..n {
            let total: f64 = (start..start + period)
                .map(|s| sched.snapshot(s).degrees[i])
                .sum();
            if total <= 0.0 {
                window = Some((start, i));
                break 'outer;
            }
        }
    }

    let result = |clause, v: Option<(u64, usize)>| ClauseResult {
        clause,
        passed: v.is_none(),
        first_violation: v,
    };
    Ok(ScheduleReport {
        horizon,
        clauses: [
            result(Clause::SelfWeightCap, cap),
            result(Clause::WeightFloor, floor),
            result(Clause::ActivityWindow, window),
        ],
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    n: usize,
    period: usize,
    weight_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_weight_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_weight_caps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cycle_length: Option<usize>,
    snapshots: Vec<SnapshotEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotEntry {
    t: u64,
    #[serde(default)]
    arcs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_weights: Option<Vec<f64>>,
}

impl ScheduleFile {
    fn build(self) -> Result<SwitchingSchedule> {
        let n = self.n;
        let caps = match (self.self_weight_cap, self.self_weight_caps) {
            (Some(c), None) => vec![c; n],
            (None, Some(cs)) => cs,
            _ => return Err(Error::Parse("give exactly one of self_weight_cap(s)".into())),
        };
        let last = self.snapshots.iter().map(|s| s.t).max();
        let len = match (self.cycle_length, last) {
            (Some(l), Some(m)) if (l as u64) <= m => {
                return Err(Error::Parse(format!(
                    "snapshot at t = {m} lies outside cycle_length {l}"
                )))
            }
            (Some(l), _) => l,
            (None, Some(m)) => m as usize + 1,
            (None, None) => return Err(Error::Parse("schedule has no snapshots".into())),
        };
        let mut slots: Vec<Option<Snapshot>> = vec![None; len];
        for entry in self.snapshots {
            let self_weights = match (entry.self_weight, entry.self_weights) {
                (Some(w), None) => vec![w; n],
                (None, Some(ws)) => ws,
                (None, None) => vec![0.0; n],
                _ => return Err(Error::Parse("give either self_weight or self_weights".into())),
            };
            let arcs = entry
                .arcs
                .iter()
                .map(|l| parse_weighted_pair(l, n))
                .collect::<Result<Vec<_>>>()?;
            let slot = &mut slots[entry.t as usize];
            if slot.is_some() {
                return Err(Error::Parse(format!("duplicate snapshot at t = {}", entry.t)));
            }
            *slot = Some(Snapshot::new(n, &arcs, self_weights)?);
        }
        let snapshots = slots
            .into_iter()
            .map(|s| match s {
                Some(s) => Ok(s),
                None => Snapshot::new(n, &[], vec![0.0; n]),
            })
            .collect::<Result<Vec<_>>>()?;
        SwitchingSchedule::new(n, snapshots, self.period, self.weight_floor, caps)
    }
}
