//! The `stiefel` command line tool. Each subcommand reads datasets and a
//! JSON config, writes JSON/CSV results plus a manifest into `--out`, and
//! draws randomness from per-task streams of one master seed so that output
//! is identical across runs and thread counts.

pub mod config;
pub mod dataset;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::inference::{
    bayes_factor_two_sample, posterior_mean_f, posterior_mode, relative_error, simulate_data, PosteriorChain,
};
use crate::matfn::{self, ConcVector};
use crate::priors::check_posterior_propriety;
use crate::samplers::{gibbs_ccpc, gibbs_jcpc};
use crate::stiefel::{MLParams, StiefelPoint};
use config::{from_rows, to_rows, Estimator, ResolvedPrior, RunConfig};
use dataset::{read_dataset, write_dataset, Dataset};

#[derive(Debug, Parser)]
#[command(name = "stiefel", version, about = "Bayesian inference for matrix Langevin data on Stiefel manifolds")]
pub struct Cli {
    /// master seed; overrides the config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// log 0F1(n/2, D^2/4) and h(d)
    Hypergeom {
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        d: Vec<f64>,
        /// truncation error of the two-column series
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Draw a matrix Langevin dataset
    Sample {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        d: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// JSON with "m" (n x p rows), "d" and "v" (p x p rows); defaults to
        /// canonical frames
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run the Gibbs sampler on a dataset
    Fit { data: PathBuf },
    /// Closed-form posterior mode under a joint prior
    Mode { data: PathBuf },
    /// Two-sample Bayes factor
    Test { data1: PathBuf, data2: PathBuf },
    /// Repeated-sampling error study
    Simulate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Hypergeom { .. } => "hypergeom",
            Command::Sample { .. } => "sample",
            Command::Fit { .. } => "fit",
            Command::Mode { .. } => "mode",
            Command::Test { .. } => "test",
            Command::Simulate => "simulate",
        }
    }
}

/// Independent stream `task` of the master seed.
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(task);
    r
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    command: &'static str,
    args: Vec<String>,
}

impl Ctx {
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    fn create(&self, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
        std::fs::create_dir_all(&self.out)?;
        Ok(std::io::BufWriter::new(std::fs::File::create(self.out.join(name))?))
    }

    fn manifest(&self, inputs: &[&Path]) -> Result<()> {
        let m = json!({
            "tool": "stiefel",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "args": self.args,
            "seed": self.cfg.seed,
            "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "config": self.cfg,
        });
        self.write_json("manifest.json", &m)?;
        Ok(())
    }
}

fn mat_json(a: &DMatrix<f64>) -> Value {
    json!(to_rows(a))
}

fn load_data(path: &Path) -> Result<Dataset> {
    let d = read_dataset(path)?;
    if d.points.is_empty() {
        return Err(Error::Invalid(format!("{}: no observations", path.display())));
    }
    Ok(d)
}

/// Parse, run and report; the return value is the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Shape(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = Ctx {
        cfg,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("stiefel_out")),
        command: cli.command.name(),
        args,
    };
    match &cli.command {
        Command::Hypergeom { n, d, eps } => cmd_hypergeom(&ctx, *n, d, *eps, cli.out.is_some()),
        Command::Sample { n, d, count, params } => cmd_sample(&ctx, *n, d, *count, params.as_deref()),
        Command::Fit { data } => cmd_fit(&ctx, data),
        Command::Mode { data } => cmd_mode(&ctx, data),
        Command::Test { data1, data2 } => cmd_test(&ctx, data1, data2),
        Command::Simulate => cmd_simulate(&ctx),
    }
}

fn cmd_hypergeom(ctx: &Ctx, n: usize, d: &[f64], eps: Option<f64>, save: bool) -> Result<()> {
    let mut ctl = ctx.cfg.series;
    if let Some(e) = eps {
        ctl.eps = e;
    }
    ctl.validate()?;
    if d.is_empty() || n < d.len() {
        return Err(Error::Domain(format!("need n >= p >= 1, got n={n}, p={}", d.len())));
    }
    if d.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("concentrations must be finite and nonnegative: {d:?}")));
    }
    let u: Vec<f64> = d.iter().map(|x| 0.25 * x * x).collect();
    let general = matfn::log_0f1_general(n as f64 / 2.0, &u, &ctl)?;
    let h = if d.iter().all(|&x| x == 0.0) { vec![0.0; d.len()] } else { matfn::h(n, d, &ctl)? };
    let mut out = std::io::stdout().lock();
    writeln!(out, "log_0f1 = {}", general.value.ln())?;
    writeln!(out, "h = {}", h.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", "))?;
    if d.len() >= 3 {
        writeln!(
            out,
            "stabilized = {} (degree {}, last-window relative contribution {:.3e})",
            general.stabilized, general.degree, general.diagnostic
        )?;
    }
    if save {
        ctx.write_json(
            "hypergeom.json",
            &json!({
                "n": n, "d": d, "log_0f1": general.value.ln(), "h": h,
                "degree": general.degree, "diagnostic": general.diagnostic, "stabilized": general.stabilized,
            }),
        )?;
        ctx.manifest(&[])?;
    }
    Ok(())
}

fn read_params(path: &Path) -> Result<MLParams> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        m: Vec<Vec<f64>>,
        d: Vec<f64>,
        v: Vec<Vec<f64>>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let raw: Raw = serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let m = StiefelPoint::new(from_rows(&raw.m, "m")?)?;
    let n = m.n();
    MLParams::new(m, ConcVector::new(raw.d, n)?, StiefelPoint::new(from_rows(&raw.v, "v")?)?)
}

fn cmd_sample(ctx: &Ctx, n: Option<usize>, d: &[f64], count: usize, params: Option<&Path>) -> Result<()> {
    let theta = match (params, n) {
        (Some(p), _) => read_params(p)?,
        (None, Some(n)) => {
            let p = d.len();
            if p == 0 || n < p {
                return Err(Error::Domain(format!("need n >= p >= 1, got n={n}, p={p}")));
            }
            MLParams::new(
                StiefelPoint::new(DMatrix::identity(n, p))?,
                ConcVector::new(d.to_vec(), n)?,
                StiefelPoint::new(DMatrix::identity(p, p))?,
            )?
        }
        (None, None) => return Err(Error::Invalid("give --n and --d, or --params".into())),
    };
    if count == 0 {
        return Err(Error::Domain("--count must be positive".into()));
    }
    let data = simulate_data(&theta, count, &mut task_rng(ctx.cfg.seed, 0))?;
    std::fs::create_dir_all(&ctx.out)?;
    let path = ctx.out.join("data.csv");
    write_dataset(&path, &data)?;
    ctx.write_json(
        "truth.json",
        &json!({"m": mat_json(theta.m().matrix()), "d": theta.d().as_slice(), "v": mat_json(theta.v().matrix()), "f": mat_json(&theta.f())}),
    )?;
    ctx.manifest(params.into_iter().collect::<Vec<_>>().as_slice())?;
    println!("wrote {count} draws to {}", path.display());
    Ok(())
}

fn chain_summary(c: &PosteriorChain) -> Value {
    let k = c.len() as f64;
    let p = c.draws.first().map_or(0, |d| d.d.len());
    let mean_d: Vec<f64> = (0..p).map(|j| c.draws.iter().map(|d| d.d[j]).sum::<f64>() / k).collect();
    json!({
        "draws": c.len(),
        "acceptance_rate": c.meta.acceptance_rate(),
        "proposals": c.meta.proposals,
        "concentration_draws": c.meta.concentration_draws,
        "mean_d": mean_d,
        "seed_stream": c.meta.seed,
    })
}

fn run_chains(ctx: &Ctx, data: &[StiefelPoint], prior: &ResolvedPrior, stream0: u64) -> Result<Vec<PosteriorChain>> {
    let gibbs = ctx.cfg.gibbs();
    (0..ctx.cfg.mcmc.chains as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = task_rng(ctx.cfg.seed, stream0 + k);
            let mut chain = match prior {
                ResolvedPrior::Joint(s) => gibbs_jcpc(data, &s.prior, &gibbs, &mut rng),
                ResolvedPrior::Product(p) => gibbs_ccpc(data, p, &gibbs, &mut rng),
            }?;
            chain.meta.seed = Some(stream0 + k);
            Ok(chain)
        })
        .collect()
}

fn pooled(chains: &[PosteriorChain]) -> PosteriorChain {
    let mut all = chains[0].clone();
    for c in &chains[1..] {
        all.draws.extend(c.draws.iter().cloned());
        all.log_kernels.extend(&c.log_kernels);
        all.log_likelihoods.extend(&c.log_likelihoods);
        all.meta.proposals += c.meta.proposals;
        all.meta.concentration_draws += c.meta.concentration_draws;
    }
    all
}

fn cmd_fit(ctx: &Ctx, path: &Path) -> Result<()> {
    let ds = load_data(path)?;
    let ctl = ctx.cfg.series;
    let prior = ctx.cfg.prior.resolve(&ds.points, ds.n, ds.p, &ctl)?;
    let (prior_json, propriety, mode) = match &prior {
        ResolvedPrior::Joint(s) => {
            let report = check_posterior_propriety(&s.prior, &ds.points);
            if !report.is_proper() {
                return Err(Error::Improper(format!(
                    "posterior is not proper: {} (posterior nu = {}, ||Psi||_2 = {:.6}, sample-size rule satisfied: {})",
                    report.notes.join("; "),
                    report.nu_post,
                    report.psi_norm,
                    report.sample_size_rule
                )));
            }
            let mode = posterior_mode(&s.prior, &ds.points, &ctl)?;
            (
                json!({"type": "jcpd", "nu": s.prior.nu(), "psi": mat_json(s.prior.psi()), "warnings": s.warnings}),
                serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?,
                json!({"m": mat_json(mode.m.matrix()), "d": mode.d, "v": mat_json(mode.v.matrix()), "f": mat_json(&mode.f()), "warnings": mode.warnings}),
            )
        }
        ResolvedPrior::Product(p) => (
            serde_json::to_value(p).map_err(|e| Error::Io(e.to_string()))?,
            json!({"status": "product prior: propriety follows from the concentration prior"}),
            Value::Null,
        ),
    };
    let chains = run_chains(ctx, &ds.points, &prior, 0)?;
    for (k, c) in chains.iter().enumerate() {
        let name = if chains.len() == 1 { "trace.csv".to_string() } else { format!("trace_chain{k}.csv") };
        c.write_csv(ctx.create(&name)?)?;
    }
    let all = pooled(&chains);
    let fhat = posterior_mean_f(&all)?;
    let result = json!({
        "n": ds.n, "p": ds.p, "n_obs": ds.points.len(),
        "dataset_warnings": ds.warnings,
        "prior": prior_json,
        "propriety": propriety,
        "posterior_mode": mode,
        "posterior_mean_f": {"mean": mat_json(&fhat.mean), "sd": mat_json(&fhat.sd)},
        "chains": chains.iter().map(chain_summary).collect::<Vec<_>>(),
        "acceptance_rate": all.meta.acceptance_rate(),
    });
    let out = ctx.write_json("fit.json", &result)?;
    ctx.manifest(&[path])?;
    println!("acceptance rate {:.4}; results in {}", all.meta.acceptance_rate(), out.display());
    Ok(())
}

fn cmd_mode(ctx: &Ctx, path: &Path) -> Result<()> {
    let ds = load_data(path)?;
    let ctl = ctx.cfg.series;
    let sel = ctx.cfg.prior.resolve_joint(&ds.points, ds.n, ds.p, &ctl)?;
    let report = check_posterior_propriety(&sel.prior, &ds.points);
    let mode = posterior_mode(&sel.prior, &ds.points, &ctl)?;
    let result = json!({
        "n": ds.n, "p": ds.p, "n_obs": ds.points.len(),
        "m": mat_json(mode.m.matrix()), "d": mode.d, "v": mat_json(mode.v.matrix()), "f": mat_json(&mode.f()),
        "warnings": mode.warnings.iter().chain(&sel.warnings).chain(&ds.warnings).collect::<Vec<_>>(),
        "propriety": report,
    });
    ctx.write_json("mode.json", &result)?;
    ctx.manifest(&[path])?;
    println!("d = {}", mode.d.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn cmd_test(ctx: &Ctx, p1: &Path, p2: &Path) -> Result<()> {
    let a = load_data(p1)?;
    let b = load_data(p2)?;
    if (a.n, a.p) != (b.n, b.p) {
        return Err(Error::Shape(format!(
            "datasets live on different manifolds: V({},{}) and V({},{})",
            a.n, a.p, b.n, b.p
        )));
    }
    let mut rng = task_rng(ctx.cfg.seed, 0);
    let res = bayes_factor_two_sample(&a.points, &b.points, ctx.cfg.test.prior_strength_frac, &ctx.cfg.gibbs(), &mut rng)?;
    ctx.write_json("test.json", &res)?;
    ctx.manifest(&[p1, p2])?;
    println!("log B01 = {}", res.log_bayes_factor);
    println!("HME unstable: {}", res.hme_unstable);
    println!("{}", res.decision_note);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Replicate {
    n_obs: usize,
    replicate: usize,
    d_true: Vec<f64>,
    relative_error: f64,
    acceptance_rate: Option<f64>,
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let sc = &ctx.cfg.simulate;
    sc.validate()?;
    let ctl = ctx.cfg.series;
    let gibbs = ctx.cfg.gibbs();
    let laws = sc
        .d_law
        .iter()
        .map(|g| Gamma::new(g.shape, 1.0 / g.rate).map_err(|e| Error::Domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> =
        sc.sizes.iter().enumerate().flat_map(|(i, _)| (0..sc.replicates).map(move |r| (i, r))).collect();
    let reps = tasks
        .par_iter()
        .map(|&(i, r)| {
            let n_obs = sc.sizes[i];
            let mut rng = task_rng(ctx.cfg.seed, (i * sc.replicates + r) as u64);
            let mut d: Vec<f64> = laws.iter().zip(&sc.d_law).map(|(g, law)| law.scale * g.sample(&mut rng)).collect();
            d.sort_by(|a, b| b.total_cmp(a));
            let truth = sc.truth(d.clone())?;
            let data = simulate_data(&truth, n_obs, &mut rng)?;
            let (fhat, acc) = match sc.estimator {
                Estimator::PosteriorMode => {
                    let sel = ctx.cfg.prior.resolve_joint(&data, sc.n, sc.p, &ctl)?;
                    (posterior_mode(&sel.prior, &data, &ctl)?.f(), None)
                }
                Estimator::PosteriorMean => {
                    let chain = match ctx.cfg.prior.resolve(&data, sc.n, sc.p, &ctl)? {
                        ResolvedPrior::Joint(s) => gibbs_jcpc(&data, &s.prior, &gibbs, &mut rng)?,
                        ResolvedPrior::Product(p) => gibbs_ccpc(&data, &p, &gibbs, &mut rng)?,
                    };
                    (posterior_mean_f(&chain)?.mean, Some(chain.meta.acceptance_rate()))
                }
            };
            Ok(Replicate { n_obs, replicate: r, d_true: d, relative_error: relative_error(&fhat, &truth.f())?, acceptance_rate: acc })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_writer(ctx.create("errors.csv")?);
    let mut header = vec!["n_obs".to_string(), "replicate".into()];
    header.extend((1..=sc.p).map(|j| format!("d_true_{j}")));
    header.push("relative_error".into());
    w.write_record(&header).map_err(crate::samplers::csv_err)?;
    for r in &reps {
        let mut rec = vec![r.n_obs.to_string(), r.replicate.to_string()];
        rec.extend(r.d_true.iter().map(|x| format!("{x:e}")));
        rec.push(format!("{:e}", r.relative_error));
        w.write_record(&rec).map_err(crate::samplers::csv_err)?;
    }
    w.flush()?;

    let mut summary = Vec::new();
    let mut s = csv::Writer::from_writer(ctx.create("summary.csv")?);
    s.write_record(["n_obs", "replicates", "mean_relative_error", "sd_relative_error"]).map_err(crate::samplers::csv_err)?;
    for &n_obs in &sc.sizes {
        let errs: Vec<f64> = reps.iter().filter(|r| r.n_obs == n_obs).map(|r| r.relative_error).collect();
        let k = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / k;
        let sd = if errs.len() > 1 { (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() } else { 0.0 };
        s.write_record([n_obs.to_string(), errs.len().to_string(), format!("{mean:e}"), format!("{sd:e}")])
            .map_err(crate::samplers::csv_err)?;
        println!("N = {n_obs}: mean relative error {mean:.4} (sd {sd:.4}, {} replicates)", errs.len());
        summary.push(json!({"n_obs": n_obs, "mean": mean, "sd": sd}));
    }
    s.flush()?;
    ctx.write_json("simulate.json", &json!({"scenario": sc, "summary": summary, "replicates": reps}))?;
    ctx.manifest(&[])?;
    Ok(())
}
