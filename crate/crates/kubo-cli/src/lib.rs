//! Command-line front end: configuration, run orchestration and output.

pub mod config;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kubo::cheb2d::{coeffs_of_F, tau_for_eps, truncation_set_rate};
use kubo::confunc::{decay_rates, ConductivityParams, DecayRates};
use kubo::kpm::{OpCounters, Variant};
use kubo::quadrature::{integrate_with, IntegralSettings, LocalEvaluator, Method};
use kubo::C64;
use serde_json::{json, Value};

use config::{KPoles, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<kubo::Error> for CliError {
    fn from(e: kubo::Error) -> Self {
        match e {
            kubo::Error::Invalid(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "kubo", version, about = "Local and integrated Kubo conductivity of twisted bilayers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decay rates and class of the conductivity function.
    Rates(Common),
    /// Chebyshev coefficients of the conductivity function.
    Coeffs(Common),
    /// Local conductivity at a single configuration.
    SigmaLocal(Common),
    /// Conductivity integrated over configuration space.
    SigmaIntegrate(Common),
    /// Operation counts and timings over a parameter sweep.
    Bench(Common),
}

#[derive(Debug, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub efermi: Option<f64>,
    #[arg(long)]
    pub r: Option<u32>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Removed pole pairs: an integer or `auto`.
    #[arg(long)]
    pub k: Option<KPoles>,
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Shift `b` as `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    pub b: Option<Vec<f64>>,
    #[arg(long)]
    pub layer: Option<u8>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Half-widths for a convergence study; errors are relative to the largest.
    #[arg(long, value_delimiter = ',')]
    pub r_sweep: Option<Vec<u32>>,
    /// Write the local Hamiltonian in Matrix Market format.
    #[arg(long)]
    pub export_matrix: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Format>,
}

impl Common {
    /// File values (or defaults) with flags applied on top, revalidated.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let p = &mut c.params;
        if let Some(v) = self.beta {
            p.beta = v;
        }
        if let Some(v) = self.eta {
            p.eta = v;
        }
        if let Some(v) = self.omega {
            p.omega = v;
        }
        if let Some(v) = self.efermi {
            p.e_fermi = v;
        }
        let r = &mut c.run;
        if let Some(v) = self.method {
            r.method = v;
        }
        if self.r.is_some() {
            r.r = self.r;
        }
        if let Some(v) = self.q {
            r.q = v;
        }
        if let Some(v) = self.eps {
            r.eps = v;
        }
        if self.kmax.is_some() {
            r.kmax = self.kmax;
        }
        if let Some(v) = self.k {
            r.k_poles = v;
        }
        if let Some(v) = self.group {
            r.group_size = v;
        }
        if self.threads.is_some() {
            r.threads = self.threads;
        }
        if let Some(b) = &self.b {
            r.b = [b[0], b[1]];
        }
        if let Some(v) = self.layer {
            r.layer = v;
        }
        let b = &mut c.bench;
        if let Some(v) = &self.betas {
            b.betas = v.clone();
        }
        if let Some(v) = &self.etas {
            b.etas = v.clone();
        }
        if let Some(v) = &self.methods {
            b.methods = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Runs one subcommand, writing to `--out` or stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (common, text) = match &cli.command {
        Command::Rates(c) => (c, cmd_rates(&c.resolve()?)?),
        Command::Coeffs(c) => (c, cmd_coeffs(&c.resolve()?, c.format.unwrap_or(Format::Csv))?),
        Command::SigmaLocal(c) => {
            let cfg = c.resolve()?;
            let text = match &c.r_sweep {
                Some(rs) => cmd_r_sweep(&cfg, rs)?,
                None => cmd_sigma_local(&cfg, c.export_matrix.as_deref())?,
            };
            (c, text)
        }
        Command::SigmaIntegrate(c) => (c, cmd_sigma_integrate(&c.resolve()?, c.format.unwrap_or(Format::Json))?),
        Command::Bench(c) => (c, cmd_bench(&c.resolve()?)?),
    };
    match &common.out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

fn c64(z: C64) -> Value {
    json!([z.re, z.im])
}

/// Entries in xx, xy, yx, yy order.
fn tensor_json(s: &[[C64; 2]; 2]) -> Value {
    json!([c64(s[0][0]), c64(s[0][1]), c64(s[1][0]), c64(s[1][1])])
}

fn params_json(p: &ConductivityParams) -> Value {
    json!({"beta": p.beta, "eta": p.eta, "omega": p.omega, "e_fermi": p.e_fermi})
}

fn counters_json(c: &OpCounters) -> Value {
    json!({
        "matvecs": c.matvecs,
        "inner_products": c.inner_products,
        "resolvent_solves": c.resolvent_solves,
        "peak_cached_vectors": c.peak_cached_vectors,
    })
}

fn rates_json(r: &DecayRates) -> Value {
    json!({
        "alpha_max": r.alpha_max,
        "alpha_min": r.alpha_min,
        "alpha_diag": r.alpha_diag,
        "alpha_anti": r.alpha_anti,
        "x_star": c64(r.x_star),
    })
}

pub fn settings(cfg: &RunConfig, method: Method) -> IntegralSettings {
    let r = &cfg.run;
    IntegralSettings {
        method,
        r: r.r.unwrap_or(1),
        q: r.q,
        eps: r.eps,
        kmax: r.kmax,
        k_poles: match r.k_poles {
            KPoles::Auto => None,
            KPoles::Fixed(k) => Some(k),
        },
        group_size: r.group_size,
        resolvent_tol: r.resolvent_tol,
        variant: Variant::Standard,
        threads: r.threads,
    }
}

/// Half-width used when none is configured on the dense path.
pub const EXACT_DEFAULT_R: u32 = 3;

/// Evaluator with `r` set from the config or the truncation set.
fn evaluator(cfg: &RunConfig, method: Method) -> Result<LocalEvaluator, CliError> {
    let geom = cfg.geometry()?;
    let mut ev = LocalEvaluator::new(&geom, &cfg.model()?, &cfg.params()?, &settings(cfg, method))?;
    let r = cfg.run.r.or(ev.recommended_r()).unwrap_or(EXACT_DEFAULT_R);
    ev.set_r(r)?;
    Ok(ev)
}

fn effective_r(cfg: &RunConfig, ev: &LocalEvaluator) -> u32 {
    cfg.run.r.or(ev.recommended_r()).unwrap_or(EXACT_DEFAULT_R)
}

/// The series' own recommendation, or the rate set's on the dense path.
fn r_recommended(ev: &LocalEvaluator, rates: &DecayRates, eps: f64) -> Result<u32, CliError> {
    match ev.recommended_r() {
        Some(r) => Ok(r),
        None => Ok(truncation_set_rate(rates, tau_for_eps(rates, eps)?)?.recommended_r()),
    }
}

fn kept_coefficients(ev: &LocalEvaluator) -> usize {
    match (ev.index_set(), ev.pole_expansion()) {
        (Some(k), _) => k.len(),
        (_, Some(p)) => p.kept_coefficients(),
        _ => 0,
    }
}

pub fn cmd_rates(cfg: &RunConfig) -> Result<String, CliError> {
    let p = cfg.params()?;
    let rates = decay_rates(&p, 1);
    let tau = tau_for_eps(&rates, cfg.run.eps)?;
    let set = truncation_set_rate(&rates, tau)?;
    Ok(pretty(&json!({
        "params": params_json(&p),
        "rates": rates_json(&rates),
        "alpha_max": rates.alpha_max,
        "alpha_min": rates.alpha_min,
        "alpha_diag": rates.alpha_diag,
        "alpha_anti": rates.alpha_anti,
        "x_star": c64(rates.x_star),
        "class": rates.klass.to_string(),
        "eps": cfg.run.eps,
        "tau": tau,
        "rate_set_size": set.len(),
        "r_recommended": set.recommended_r(),
    })))
}

pub const COEFF_THRESHOLDS: [f64; 2] = [1e-3, 1e-6];

pub fn cmd_coeffs(cfg: &RunConfig, format: Format) -> Result<String, CliError> {
    let p = cfg.params()?;
    let kmax = cfg.run.kmax.unwrap_or(128);
    let c = coeffs_of_F(&p, kmax)?;
    let scale = c.iter().map(|(_, _, v)| v.norm()).fold(0.0, f64::max);
    let norm = |v: C64| if scale > 0.0 { v.norm() / scale } else { 0.0 };
    match format {
        Format::Csv => {
            let mut s = String::from("k1,k2,re,im,normalized_abs\n");
            for (k1, k2, v) in c.iter() {
                s.push_str(&format!("{k1},{k2},{:e},{:e},{:e}\n", v.re, v.im, norm(v)));
            }
            Ok(s)
        }
        Format::Json => {
            let counts: Vec<Value> = COEFF_THRESHOLDS
                .iter()
                .map(|&t| json!({"threshold": t, "count": c.iter().filter(|&(_, _, v)| norm(v) > t).count()}))
                .collect();
            Ok(pretty(&json!({
                "params": params_json(&p),
                "kmax": kmax,
                "total": c.iter().count(),
                "max_abs": scale,
                "counts_above": counts,
            })))
        }
    }
}

pub fn cmd_sigma_local(cfg: &RunConfig, export: Option<&std::path::Path>) -> Result<String, CliError> {
    let method = cfg.run.method;
    let geom = cfg.geometry()?;
    let ev = evaluator(cfg, method)?;
    let p = *ev.params();
    let r = effective_r(cfg, &ev);
    let shift = cfg.shift();
    if let Some(path) = export {
        let s = ev.system(&geom, shift)?;
        let f = std::fs::File::create(path)?;
        s.h.write_matrix_market(std::io::BufWriter::new(f))?;
    }
    let n = ev.system(&geom, shift)?.dim();
    let (sigma, counters) = ev.evaluate(&geom, shift)?;
    let rates = decay_rates(&p, 1);
    let warnings = ev.pole_expansion().map(|x| x.warnings.clone()).unwrap_or_default();
    Ok(pretty(&json!({
        "method": method,
        "params": params_json(&p),
        "r": r,
        "b": cfg.run.b,
        "layer": cfg.run.layer,
        "n": n,
        "sigma": tensor_json(&sigma),
        "counters": counters_json(&counters),
        "rates": rates_json(&rates),
        "class": rates.klass.to_string(),
        "r_recommended": r_recommended(&ev, &rates, cfg.run.eps)?,
        "kept_coefficients": kept_coefficients(&ev),
        "dropped_mass": ev.dropped_mass(),
        "warnings": warnings,
    })))
}

/// CSV of `sigma(r)` and its normwise error against the largest `r`.
pub fn cmd_r_sweep(cfg: &RunConfig, rs: &[u32]) -> Result<String, CliError> {
    let geom = cfg.geometry()?;
    let mut ev = evaluator(cfg, cfg.run.method)?;
    let r_ref = *rs.iter().max().ok_or_else(|| CliError::Config("r_sweep: empty list".into()))?;
    ev.set_r(r_ref)?;
    let (reference, _) = ev.evaluate(&geom, cfg.shift())?;
    let ref_norm = reference.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut s = String::from("r,n,sigma_xx_re,sigma_xx_im,abs_error,rel_error\n");
    for &r in rs {
        ev.set_r(r)?;
        let n = ev.system(&geom, cfg.shift())?.dim();
        let (sigma, _) = ev.evaluate(&geom, cfg.shift())?;
        let err = sigma
            .iter()
            .flatten()
            .zip(reference.iter().flatten())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let rel = if ref_norm > 0.0 { err / ref_norm } else { err };
        s.push_str(&format!("{r},{n},{:e},{:e},{err:e},{rel:e}\n", sigma[0][0].re, sigma[0][0].im));
    }
    Ok(s)
}

pub fn cmd_sigma_integrate(cfg: &RunConfig, format: Format) -> Result<String, CliError> {
    let geom = cfg.geometry()?;
    let ev = evaluator(cfg, cfg.run.method)?;
    let t = Instant::now();
    let res = integrate_with(&geom, &ev, cfg.run.q, cfg.run.threads)?;
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    match format {
        Format::Json => {
            let nodes: Vec<Value> = res
                .nodes
                .iter()
                .map(|n| {
                    json!({
                        "layer": n.layer.index() + 1,
                        "b": n.b,
                        "weight": n.weight,
                        "sigma": tensor_json(&n.sigma),
                        "counters": counters_json(&n.counters),
                        "wall_ms": n.wall_ms,
                    })
                })
                .collect();
            Ok(pretty(&json!({
                "method": cfg.run.method,
                "params": params_json(ev.params()),
                "r": effective_r(cfg, &ev),
                "q": cfg.run.q,
                "nu": res.nu,
                "sigma": tensor_json(&res.sigma),
                "counters": counters_json(&res.counters),
                "wall_ms": wall_ms,
                "nodes": nodes,
            })))
        }
        Format::Csv => {
            let mut s = String::from(
                "layer,bx,by,weight,xx_re,xx_im,xy_re,xy_im,yx_re,yx_im,yy_re,yy_im,matvecs,inner_products,solves,wall_ms\n",
            );
            for n in &res.nodes {
                s.push_str(&format!("{},{:e},{:e},{:e}", n.layer.index() + 1, n.b[0], n.b[1], n.weight));
                for z in n.sigma.iter().flatten() {
                    s.push_str(&format!(",{:e},{:e}", z.re, z.im));
                }
                let c = &n.counters;
                s.push_str(&format!(
                    ",{},{},{},{:.3}\n",
                    c.matvecs, c.inner_products, c.resolvent_solves, n.wall_ms
                ));
            }
            Ok(s)
        }
    }
}

pub const BENCH_HEADER: &str =
    "method,beta,eta,n,matvecs,inner_products,solves,wall_ms,sigma_re,sigma_im,kept_coefficients";

/// One row per (method, beta, eta); counts are totals over all quadrature
/// nodes and `n` is the node count.
pub fn cmd_bench(cfg: &RunConfig) -> Result<String, CliError> {
    let geom = cfg.geometry()?;
    let model = cfg.model()?;
    let mut s = format!("{BENCH_HEADER}\n");
    let b = &cfg.bench;
    for &method in &b.methods {
        for &beta in &b.betas {
            for &eta in &b.etas {
                let mut c = cfg.clone();
                c.params.beta = beta;
                c.params.eta = eta;
                c.validate()?;
                let p = c.params()?;
                let mut ev = LocalEvaluator::new(&geom, &model, &p, &settings(&c, method))?;
                ev.set_r(effective_r(&c, &ev))?;
                let t = Instant::now();
                let res = integrate_with(&geom, &ev, c.run.q, c.run.threads)?;
                let wall_ms = t.elapsed().as_secs_f64() * 1e3;
                let m = serde_json::to_value(method).expect("method serializes");
                let tot = &res.counters;
                let xx = res.sigma[0][0];
                s.push_str(&format!(
                    "{},{beta},{eta},{},{},{},{},{wall_ms:.3},{:e},{:e},{}\n",
                    m.as_str().unwrap_or_default(),
                    res.nodes.len(),
                    tot.matvecs,
                    tot.inner_products,
                    tot.resolvent_solves,
                    xx.re,
                    xx.im,
                    kept_coefficients(&ev),
                ));
            }
        }
    }
    Ok(s)
}
