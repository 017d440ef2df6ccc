use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use biasdyn::bounds::{check_envelope, EnvelopeParams};
use biasdyn::dynamics::{simulate as run_dynamics, SimulateOptions, Trajectory};
use biasdyn::equilibria::equilibria_report;
use biasdyn::graph::GraphKind;
use biasdyn::seeding::stream_rng;
use biasdyn::stability::vertex_scan;
use serde::Serialize;

use crate::config::{ExperimentConfig, Network};
use crate::{CliError, Common};

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    out_dir: PathBuf,
}

fn setup(common: &Common) -> Result<Context, CliError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cfg.master_seed(common.seed);
    let out_dir = cfg.out_dir(common.out_dir.as_deref());
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
    Ok(Context { cfg, seed, out_dir })
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Usage(format!("cannot write {}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut out).and_then(|_| out.flush()).map_err(io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_with(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)
    })
}

fn run(net: &Network, ctx: &Context, horizon: Option<usize>) -> Result<Trajectory, CliError> {
    let n = net.n();
    let bias = ctx.cfg.bias(n)?;
    let x0 = ctx.cfg.initial(n, ctx.seed)?;
    let opts = SimulateOptions {
        horizon: horizon.or(ctx.cfg.run.horizon).unwrap_or(100),
        early_stop_eps: ctx.cfg.run.early_stop_eps.unwrap_or(0.0),
        seed: Some(ctx.seed),
    };
    Ok(match net {
        Network::Graph(g) => run_dynamics(g, &bias, &x0, &opts)?,
        Network::Schedule(s) => run_dynamics(s, &bias, &x0, &opts)?,
    })
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    n: usize,
    steps: usize,
    seed: u64,
    source_fingerprint: u64,
    bias: &'a [f64],
    final_state: &'a [f64],
    max_coordinate_curve: Vec<f64>,
}

pub fn simulate(common: &Common, horizon: Option<usize>) -> Result<(), CliError> {
    let ctx = setup(common)?;
    let net = ctx.cfg.network(ctx.seed)?;
    let traj = run(&net, &ctx, horizon)?;
    write_with(&ctx.out_dir.join("trajectory.csv"), |out| traj.write_csv(out))?;
    let summary = SimulateSummary {
        n: net.n(),
        steps: traj.horizon(),
        seed: ctx.seed,
        source_fingerprint: traj.meta.source,
        bias: &traj.meta.bias,
        final_state: traj.last().values(),
        max_coordinate_curve: traj.max_curve(),
    };
    write_json(&ctx.out_dir.join("summary.json"), &summary)?;
    println!("simulated {} steps; results in {}", traj.horizon(), ctx.out_dir.display());
    Ok(())
}

pub fn verify_bounds(common: &Common, horizon: Option<usize>, trajectory: Option<&Path>) -> Result<(), CliError> {
    let ctx = setup(common)?;
    let net = ctx.cfg.network(ctx.seed)?;
    let traj = match trajectory {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let traj = Trajectory::read_csv(BufReader::new(file))?;
            if traj.initial().len() != net.n() {
                return Err(CliError::Usage(format!(
                    "trajectory has {} nodes, network has {}",
                    traj.initial().len(),
                    net.n()
                )));
            }
            traj
        }
        None => run(&net, &ctx, horizon)?,
    };
    let bias = ctx.cfg.bias(net.n())?;
    let params = match &net {
        Network::Graph(g) => EnvelopeParams::for_graph(g, &bias, traj.initial())?,
        Network::Schedule(s) => EnvelopeParams::for_schedule(s, &bias, traj.initial())?,
    };
    let report = check_envelope(&traj, &params)?;
    write_with(&ctx.out_dir.join("envelope.csv"), |out| report.write_csv(out))?;

    #[derive(Serialize)]
    struct Verdict<'a> {
        passed: bool,
        params: &'a EnvelopeParams,
        steps: usize,
        first_failure: Option<usize>,
        worst_slack: f64,
    }
    write_json(
        &ctx.out_dir.join("verdict.json"),
        &Verdict {
            passed: report.passed,
            params: &report.params,
            steps: traj.horizon(),
            first_failure: report.first_failure,
            worst_slack: report.worst_slack,
        },
    )?;
    match report.first_failure {
        None => {
            println!(
                "envelope holds for all {} steps (rate {:e}, T = {}, smallest slack {:e})",
                traj.horizon(),
                params.rate,
                params.period,
                report.worst_slack
            );
            Ok(())
        }
        Some(t) => {
            let row = &report.rows[t];
            Err(CliError::Failed(format!(
                "envelope violated at t = {t}: observed {:e} > bound {:e}",
                row.observed, row.bound
            )))
        }
    }
}

pub fn equilibria(common: &Common, search: bool) -> Result<(), CliError> {
    let ctx = setup(common)?;
    let graph = ctx.cfg.graph()?;
    if graph.kind() == GraphKind::Custom {
        return Err(CliError::Usage(
            "equilibria needs a named topology (complete, star or cycle)".into(),
        ));
    }
    let b = ctx.cfg.uniform_bias(graph.n())?;
    let search = (search || ctx.cfg.equilibria.search.unwrap_or(false)).then(|| ctx.cfg.search_config());
    let samples = ctx.cfg.equilibria.samples.unwrap_or(5);
    let mut rng = stream_rng(ctx.seed, &[0xe9]);
    let report = equilibria_report(&graph, b, samples, search.as_ref(), &mut rng)?;
    write_json(&ctx.out_dir.join("equilibria.json"), &report)?;
    for check in &report.family_checks {
        println!(
            "{}: {} (max sample residual {:e})",
            check.family, check.description, check.max_sample_residual
        );
    }
    if let Some(note) = &report.note {
        println!("note: {note}");
    }
    if let (Some(clusters), Some(d)) = (&report.clusters, report.max_cluster_distance) {
        println!("search: {} clusters, farthest {d:e} from the families above", clusters.len());
    }
    Ok(())
}

pub fn stability_scan(
    common: &Common,
    horizon: Option<u64>,
    trials: Option<usize>,
    radius: Option<f64>,
    blowup: Option<f64>,
) -> Result<(), CliError> {
    let ctx = setup(common)?;
    let graph = ctx.cfg.graph()?;
    let b = ctx.cfg.uniform_bias(graph.n())?;
    let mut protocol = ctx.cfg.stability_protocol(ctx.seed);
    protocol.horizon = horizon.unwrap_or(protocol.horizon);
    protocol.trials = trials.unwrap_or(protocol.trials);
    protocol.radius = radius.unwrap_or(protocol.radius);
    protocol.blowup = blowup.unwrap_or(protocol.blowup);
    let report = vertex_scan(&graph, b, &protocol)?;
    write_json(&ctx.out_dir.join("scan.json"), &report)?;
    write_with(&ctx.out_dir.join("pk.csv"), |out| report.write_levels_csv(out))?;
    write_with(&ctx.out_dir.join("vertices.csv"), |out| report.write_vertices_csv(out))?;
    println!("k  stable/total  p(k)");
    for l in &report.levels {
        println!("{:<2} {:>5}/{:<6} {:.4}", l.k, l.stable, l.total, l.p_k);
    }
    Ok(())
}
