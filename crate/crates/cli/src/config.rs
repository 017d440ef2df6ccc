//! Experiment configuration files (TOML).
//!
//! Input paths inside the file are resolved against the file's own
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use biasdyn::dynamics::{BiasVector, OpinionState};
use biasdyn::equilibria::{EquilibriumFamily, FamilyKind, SearchConfig};
use biasdyn::graph::{make_graph, GraphKind, WeightedGraph};
use biasdyn::schedule::SwitchingSchedule;
use biasdyn::seeding::stream_rng;
use biasdyn::stability::StabilityProtocol;
use rand::Rng;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: Option<GraphSection>,
    pub schedule: Option<ScheduleSection>,
    pub bias: Option<BiasSection>,
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub equilibria: EquilibriaSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub self_weight: Option<f64>,
    /// Graph file; excludes the other keys.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub file: Option<PathBuf>,
    /// `round-robin` or `random-round-robin`.
    pub generator: Option<String>,
    pub n: Option<usize>,
    pub period: Option<usize>,
    pub arc_weight: Option<f64>,
    pub self_weight: Option<f64>,
    pub weight_floor: Option<f64>,
    pub self_weight_cap: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSection {
    pub b: Option<f64>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub values: Option<Vec<f64>>,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub seed: Option<u64>,
    pub family: Option<String>,
    pub params: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub early_stop_eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub trials: Option<usize>,
    pub radius: Option<f64>,
    pub horizon: Option<u64>,
    pub blowup: Option<f64>,
    pub mirrored_sampling: Option<bool>,
    pub early_exit: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaSection {
    pub search: Option<bool>,
    pub grid_step: Option<f64>,
    pub refine_tol: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A static graph or a switching schedule.
pub enum Network {
    Graph(WeightedGraph),
    Schedule(SwitchingSchedule),
}

impl Network {
    pub fn n(&self) -> usize {
        match self {
            Network::Graph(g) => g.n(),
            Network::Schedule(s) => s.n(),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: Self =
            toml::from_str(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `--seed` if given, else `[run].seed`, else 0.
    pub fn master_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.run.seed).unwrap_or(0)
    }

    pub fn graph(&self) -> Result<WeightedGraph, CliError> {
        let g = self.graph.as_ref().ok_or_else(|| usage("config has no [graph] section"))?;
        if let Some(file) = &g.file {
            if g.kind.is_some() || g.n.is_some() || g.self_weight.is_some() {
                return Err(usage("[graph] takes either `file` or kind/n/self_weight"));
            }
            return Ok(WeightedGraph::from_toml_str(&read(&self.resolve(file))?)?);
        }
        let kind: GraphKind = g.kind.as_deref().ok_or_else(|| usage("[graph] needs `kind` or `file`"))?.parse()?;
        let n = g.n.ok_or_else(|| usage("[graph] needs `n`"))?;
        Ok(make_graph(kind, n, g.self_weight.unwrap_or(1.0))?)
    }

    /// The schedule when a `[schedule]` section exists, otherwise the graph.
    pub fn network(&self, master_seed: u64) -> Result<Network, CliError> {
        let Some(s) = &self.schedule else {
            return Ok(Network::Graph(self.graph()?));
        };
        if self.graph.is_some() {
            return Err(usage("give either [graph] or [schedule], not both"));
        }
        if let Some(file) = &s.file {
            if s.generator.is_some() {
                return Err(usage("[schedule] takes either `file` or `generator`"));
            }
            return Ok(Network::Schedule(SwitchingSchedule::from_toml_str(&read(&self.resolve(file))?)?));
        }
        let n = s.n.ok_or_else(|| usage("[schedule] generator needs `n`"))?;
        let period = s.period.ok_or_else(|| usage("[schedule] generator needs `period`"))?;
        let sched = match s.generator.as_deref() {
            Some("round-robin") => SwitchingSchedule::round_robin(
                n,
                period,
                s.arc_weight.unwrap_or(1.0),
                s.self_weight.unwrap_or(1.0),
            )?,
            Some("random-round-robin") => {
                let seed = s.seed.unwrap_or(master_seed);
                SwitchingSchedule::random_round_robin(
                    n,
                    period,
                    s.weight_floor.unwrap_or(1.0),
                    s.self_weight_cap.unwrap_or(1.0),
                    &mut stream_rng(seed, &[0x5c4e]),
                )?
            }
            Some(other) => return Err(usage(format!("unknown schedule generator `{other}`"))),
            None => return Err(usage("[schedule] needs `file` or `generator`")),
        };
        Ok(Network::Schedule(sched))
    }

    pub fn bias(&self, n: usize) -> Result<BiasVector, CliError> {
        let b = self.bias.as_ref().ok_or_else(|| usage("config has no [bias] section"))?;
        match (b.b, &b.values) {
            (Some(b), None) => Ok(BiasVector::uniform(n, b)?),
            (None, Some(v)) => {
                if v.len() != n {
                    return Err(usage(format!("[bias] has {} values for {n} nodes", v.len())));
                }
                Ok(BiasVector::new(v.clone())?)
            }
            _ => Err(usage("[bias] needs exactly one of `b` or `values`")),
        }
    }

    /// The common bias exponent; commands on equilibria need one.
    pub fn uniform_bias(&self, n: usize) -> Result<f64, CliError> {
        self.bias(n)?
            .uniform_value()
            .ok_or_else(|| usage("this command needs a single bias exponent `b`"))
    }

    pub fn initial(&self, n: usize, master_seed: u64) -> Result<OpinionState, CliError> {
        let init = self.initial.as_ref().ok_or_else(|| usage("config has no [initial] section"))?;
        let explicit = init.values.is_some();
        let random = init.low.is_some() || init.high.is_some();
        let family = init.family.is_some();
        if [explicit, random, family].iter().filter(|v| **v).count() != 1 {
            return Err(usage("[initial] needs exactly one of `values`, `low`/`high`, or `family`"));
        }
        if let Some(v) = &init.values {
            if v.len() != n {
                return Err(usage(format!("[initial] has {} values for {n} nodes", v.len())));
            }
            return Ok(OpinionState::new(v.clone())?);
        }
        if random {
            let (low, high) = (init.low.unwrap_or(0.0), init.high.unwrap_or(1.0));
            if !(0.0 <= low && low <= high && high <= 1.0) {
                return Err(usage(format!("[initial] needs 0 <= low <= high <= 1, got {low}, {high}")));
            }
            let mut rng = stream_rng(init.seed.unwrap_or(master_seed), &[0x1417]);
            return Ok(OpinionState::new((0..n).map(|_| rng.gen_range(low..=high)).collect())?);
        }
        let kind: FamilyKind = init.family.as_deref().unwrap_or_default().parse()?;
        let b = self.uniform_bias(n)?;
        let params = init.params.clone().unwrap_or_default();
        Ok(EquilibriumFamily::new(kind, n, b)?.member(&params)?)
    }

    pub fn stability_protocol(&self, master_seed: u64) -> StabilityProtocol {
        let s = &self.stability;
        let d = StabilityProtocol::default();
        StabilityProtocol {
            trials: s.trials.unwrap_or(d.trials),
            radius: s.radius.unwrap_or(d.radius),
            horizon: s.horizon.unwrap_or(d.horizon),
            blowup: s.blowup.unwrap_or(d.blowup),
            seed: master_seed,
            mirrored_sampling: s.mirrored_sampling.unwrap_or(d.mirrored_sampling),
            early_exit: s.early_exit.unwrap_or(d.early_exit),
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        let d = SearchConfig::default();
        SearchConfig {
            grid_step: self.equilibria.grid_step.unwrap_or(d.grid_step),
            refine_tol: self.equilibria.refine_tol.unwrap_or(d.refine_tol),
            ..d
        }
    }

    /// `--out-dir` if given, else `[output].dir`, else `./out`. Output
    /// paths are relative to the working directory.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.output.dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.clone(),
            (None, None) => PathBuf::from("out"),
        }
    }
}
