//! Command-line front end: config ingestion, orchestration of solves,
//! envelopes, checks, and simulations, and CSV/JSON artifact emission.
//!
//! One JSON config document drives every command; CLI flags override config
//! keys (flag > config > default). Exit codes: 0 ok, 2 not converged,
//! 3 incompatible inputs, 4 bad initial state, 5 unsupported, 1 other errors.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::envelope::{
    check_conditions, compare_fields, verify_viscosity, CheckConfig, EnvelopeComponent,
    EnvelopeField, FieldSource, Verdict,
};
use crate::error::{DgError, Result};
use crate::games::{
    make_p1, make_p2, make_p3, p1_reduced_value, DampingKind, P1Params, P2Params, P3Oracle,
    P3Params,
};
use crate::grid::{Grid, Projection};
use crate::model::GameSpec;
use crate::solver::{solve, OptimizationOrder, SolveResult, SolverConfig, SweepMode};
use crate::synthesis::{simulate, Outcome, Policy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;
pub const EXIT_BAD_INITIAL_STATE: i32 = 4;
pub const EXIT_UNSUPPORTED: i32 = 5;

/// Game family selection and parameters, as stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum GameConfig {
    P1 {
        m: usize,
        alpha: Vec<f64>,
        beta: f64,
        r: f64,
    },
    P2 {
        m: usize,
        alpha: f64,
        beta: Vec<f64>,
        c_d: f64,
        damping: String,
    },
    P3 {
        alpha: f64,
    },
}

/// Full run configuration. Round-trips losslessly through JSON; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub game: Option<GameConfig>,
    /// Solve box, one `(lo, hi)` per axis (a single entry replicates).
    pub bounds: Vec<(f64, f64)>,
    /// Nodes per axis (a single entry replicates).
    pub res: Vec<usize>,
    /// Envelope/check query box over the full state; empty derives from
    /// `bounds`.
    pub query_bounds: Vec<(f64, f64)>,
    pub query_res: Vec<usize>,
    pub solver: SolverConfig,
    pub check: CheckConfig,
    /// Active-set equality tolerance; 0 derives `2 h` from the solve grid.
    pub tol_eq: f64,
    /// Control samples per control dimension.
    pub control_res: usize,
    /// Target thickening for point-capture families; 0 derives the grid
    /// spacing.
    pub eps_target: f64,
    /// Select one reduced game by target id.
    pub reduced: Option<usize>,
    pub points: Vec<Vec<f64>>,
    /// Simulation step; 0 derives half the solve spacing.
    pub dt: f64,
    pub t_max: f64,
    /// `envelope` (default), `full`, or `reduced` (with `reduced` set).
    pub policy: String,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            game: None,
            bounds: vec![(-2.0, 2.0)],
            res: vec![41],
            query_bounds: Vec::new(),
            query_res: Vec::new(),
            solver: SolverConfig::default(),
            check: CheckConfig::default(),
            tol_eq: 0.0,
            control_res: 21,
            eps_target: 0.0,
            reduced: None,
            points: Vec::new(),
            dt: 0.0,
            t_max: 20.0,
            policy: "envelope".into(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dgsolve", version, about = "Differential game solver and decomposition checker")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Solve one game (full or reduced) and dump the value grid.
    Solve(CommonArgs),
    /// Solve all reduced games and emit the lower envelope, crossing set,
    /// and active map.
    Envelope(CommonArgs),
    /// Test the decomposition conditions and viscosity inequalities.
    Check(CommonArgs),
    /// Roll out closed-loop play from an initial state.
    Simulate(CommonArgs),
    /// Print closed-form oracle values.
    Oracle(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Game family: p1 | p2 | p3.
    #[arg(long)]
    game: Option<String>,
    /// Evader bound(s), comma-separated for p1.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Pursuer bound(s), comma-separated for p2.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    /// Capture radius (p1).
    #[arg(long)]
    r: Option<f64>,
    /// Damping saturation (p2).
    #[arg(long)]
    c_d: Option<f64>,
    /// Damping kind: clamp | linear (p2).
    #[arg(long)]
    damping: Option<String>,
    /// Solve box: lo:hi[,lo:hi...].
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Nodes per axis: n[,n...].
    #[arg(long)]
    res: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    query_bounds: Option<String>,
    #[arg(long)]
    query_res: Option<String>,
    /// Solver sup-norm tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Isaacs order: upper | lower.
    #[arg(long)]
    order: Option<String>,
    /// Sweep mode: gauss-seidel | jacobi.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    time_step: Option<f64>,
    /// Reduced game selector (target id).
    #[arg(long)]
    reduced: Option<usize>,
    /// State point x1,x2,...; repeatable.
    #[arg(long = "point", allow_hyphen_values = true)]
    points: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    control_res: Option<usize>,
    #[arg(long)]
    eps_target: Option<f64>,
    #[arg(long)]
    tol_eq: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    /// Policy source for simulate: envelope | full | reduced.
    #[arg(long)]
    policy: Option<String>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| DgError::InvalidParameter(format!("bad {what} entry: {p}")))
        })
        .collect()
}

fn parse_bounds(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let mut it = pair.split(':');
            let lo = it.next().unwrap_or("").trim();
            let hi = it.next().ok_or_else(|| {
                DgError::InvalidParameter(format!("bounds entry {pair} needs lo:hi"))
            })?;
            let lo: f64 = lo
                .parse()
                .map_err(|_| DgError::InvalidParameter(format!("bad bound {lo}")))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .map_err(|_| DgError::InvalidParameter(format!("bad bound {hi}")))?;
            Ok((lo, hi))
        })
        .collect()
}

impl CommonArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str::<RunConfig>(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(game) = &self.game {
            cfg.game = Some(self.game_from_flags(game)?);
        } else if cfg.game.is_some() {
            self.apply_game_overrides(cfg.game.as_mut().unwrap())?;
        }
        if let Some(b) = &self.bounds {
            cfg.bounds = parse_bounds(b)?;
        }
        if let Some(r) = &self.res {
            cfg.res = parse_list(r, "res")?;
        }
        if let Some(b) = &self.query_bounds {
            cfg.query_bounds = parse_bounds(b)?;
        }
        if let Some(r) = &self.query_res {
            cfg.query_res = parse_list(r, "query-res")?;
        }
        if let Some(t) = self.tol {
            cfg.solver.tolerance = t;
        }
        if let Some(n) = self.max_iters {
            cfg.solver.max_iterations = n;
        }
        if let Some(o) = &self.order {
            cfg.solver.order = match o.as_str() {
                "upper" => OptimizationOrder::Upper,
                "lower" => OptimizationOrder::Lower,
                other => {
                    return Err(DgError::InvalidParameter(format!("unknown order {other}")))
                }
            };
        }
        if let Some(s) = &self.sweep {
            cfg.solver.sweep_mode = match s.as_str() {
                "jacobi" => SweepMode::Jacobi,
                "gauss-seidel" | "gs" => SweepMode::GaussSeidel,
                other => {
                    return Err(DgError::InvalidParameter(format!("unknown sweep {other}")))
                }
            };
        }
        if let Some(h) = self.time_step {
            cfg.solver.time_step = h;
        }
        if let Some(j) = self.reduced {
            cfg.reduced = Some(j);
        }
        if !self.points.is_empty() {
            cfg.points = self
                .points
                .iter()
                .map(|p| parse_list(p, "point"))
                .collect::<Result<_>>()?;
        }
        if let Some(t) = self.threads {
            cfg.solver.threads = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = self.out {
            cfg.out = o;
        }
        if let Some(n) = self.control_res {
            cfg.control_res = n;
        }
        if let Some(e) = self.eps_target {
            cfg.eps_target = e;
        }
        if let Some(t) = self.tol_eq {
            cfg.tol_eq = t;
        }
        if let Some(d) = self.dt {
            cfg.dt = d;
        }
        if let Some(t) = self.t_max {
            cfg.t_max = t;
        }
        if let Some(p) = &self.policy {
            cfg.policy = p.clone();
        }
        cfg.check.seed = cfg.seed;
        Ok(cfg)
    }

    fn game_from_flags(&self, family: &str) -> Result<GameConfig> {
        let alpha_list = || -> Result<Vec<f64>> {
            match &self.alpha {
                Some(a) => parse_list(a, "alpha"),
                None => Ok(vec![0.5, 0.5]),
            }
        };
        let alpha_scalar = || -> Result<f64> {
            match &self.alpha {
                Some(a) => a
                    .parse()
                    .map_err(|_| DgError::InvalidParameter(format!("bad alpha {a}"))),
                None => Ok(0.4),
            }
        };
        match family {
            "p1" => {
                let alpha = alpha_list()?;
                let beta = match &self.beta {
                    Some(b) => b
                        .parse()
                        .map_err(|_| DgError::InvalidParameter(format!("bad beta {b}")))?,
                    None => 1.0,
                };
                Ok(GameConfig::P1 {
                    m: self.m.unwrap_or(alpha.len()),
                    alpha,
                    beta,
                    r: self.r.unwrap_or(0.1),
                })
            }
            "p2" => {
                let beta = match &self.beta {
                    Some(b) => parse_list(b, "beta")?,
                    None => vec![1.0, 1.0],
                };
                Ok(GameConfig::P2 {
                    m: self.m.unwrap_or(beta.len()),
                    alpha: alpha_scalar()?,
                    beta,
                    c_d: self.c_d.unwrap_or(0.2),
                    damping: self.damping.clone().unwrap_or_else(|| "clamp".into()),
                })
            }
            "p3" => Ok(GameConfig::P3 {
                alpha: match &self.alpha {
                    Some(a) => a
                        .parse()
                        .map_err(|_| DgError::InvalidParameter(format!("bad alpha {a}")))?,
                    None => 0.5,
                },
            }),
            other => Err(DgError::Unsupported(format!("unknown game family {other}"))),
        }
    }

    fn apply_game_overrides(&self, game: &mut GameConfig) -> Result<()> {
        match game {
            GameConfig::P1 { m, alpha, beta, r } => {
                if let Some(a) = &self.alpha {
                    *alpha = parse_list(a, "alpha")?;
                    *m = alpha.len();
                }
                if let Some(b) = &self.beta {
                    *beta = b
                        .parse()
                        .map_err(|_| DgError::InvalidParameter(format!("bad beta {b}")))?;
                }
                if let Some(rr) = self.r {
                    *r = rr;
                }
                if let Some(mm) = self.m {
                    *m = mm;
                }
            }
            GameConfig::P2 {
                m,
                alpha,
                beta,
                c_d,
                damping,
            } => {
                if let Some(a) = &self.alpha {
                    *alpha = a
                        .parse()
                        .map_err(|_| DgError::InvalidParameter(format!("bad alpha {a}")))?;
                }
                if let Some(b) = &self.beta {
                    *beta = parse_list(b, "beta")?;
                    *m = beta.len();
                }
                if let Some(c) = self.c_d {
                    *c_d = c;
                }
                if let Some(d) = &self.damping {
                    *damping = d.clone();
                }
                if let Some(mm) = self.m {
                    *m = mm;
                }
            }
            GameConfig::P3 { alpha } => {
                if let Some(a) = &self.alpha {
                    *alpha = a
                        .parse()
                        .map_err(|_| DgError::InvalidParameter(format!("bad alpha {a}")))?;
                }
            }
        }
        Ok(())
    }
}

/// A constructed family with everything the commands need.
pub struct GameBundle {
    pub full: GameSpec,
    pub reduced: Vec<GameSpec>,
    pub projections: Vec<Projection>,
    pub oracle: Option<P3Oracle>,
    pub p1_params: Option<P1Params>,
}

/// Build the family. `grid_h` resolves grid-coupled defaults (target
/// thickening for point-capture targets).
pub fn build_bundle(cfg: &RunConfig, grid_h: f64) -> Result<GameBundle> {
    let game = cfg
        .game
        .as_ref()
        .ok_or_else(|| DgError::InvalidParameter("no game configured (use --game)".into()))?;
    match game {
        GameConfig::P1 { m, alpha, beta, r } => {
            if *m != alpha.len() {
                return Err(DgError::InvalidParameter(format!(
                    "p1: m = {m} but {} alpha entries",
                    alpha.len()
                )));
            }
            let mut params = P1Params::new(alpha.clone(), *beta, *r);
            params.control_res = cfg.control_res;
            params.enforce_capture = alpha.iter().any(|&a| a > 0.0);
            let fam = make_p1(&params)?;
            let m = params.m;
            let projections = (0..m).map(|i| Projection::Coords(vec![i, m])).collect();
            Ok(GameBundle {
                full: fam.full,
                reduced: fam.reduced,
                projections,
                oracle: None,
                p1_params: Some(params),
            })
        }
        GameConfig::P2 {
            m,
            alpha,
            beta,
            c_d,
            damping,
        } => {
            let kind = match damping.as_str() {
                "clamp" => DampingKind::Clamp,
                "linear" => DampingKind::Linear,
                other => {
                    return Err(DgError::InvalidParameter(format!(
                        "unknown damping kind {other}"
                    )))
                }
            };
            let params = P2Params {
                m: *m,
                alpha: *alpha,
                betas: beta.clone(),
                damping: kind,
                c_d: *c_d,
                enforce_constraints: kind == DampingKind::Clamp,
                control_res: cfg.control_res,
            };
            let fam = make_p2(&params)?;
            for w in &fam.warnings {
                eprintln!("warning: {w}");
            }
            Ok(GameBundle {
                full: fam.full,
                reduced: fam.reduced_relative,
                projections: fam
                    .relative_projections
                    .into_iter()
                    .map(Projection::Linear)
                    .collect(),
                oracle: None,
                p1_params: None,
            })
        }
        GameConfig::P3 { alpha } => {
            let eps = if cfg.eps_target > 0.0 {
                cfg.eps_target
            } else {
                grid_h
            };
            let fam = make_p3(
                &P3Params::new(*alpha)
                    .with_eps_target(eps)
                    .with_control_res(cfg.control_res),
            )?;
            Ok(GameBundle {
                full: fam.full,
                reduced: fam.reduced,
                projections: vec![Projection::Coords(vec![0, 1]), Projection::Coords(vec![0, 2])],
                oracle: Some(fam.oracle),
                p1_params: None,
            })
        }
    }
}

fn expand_bounds(bounds: &[(f64, f64)], dim: usize) -> Result<Vec<(f64, f64)>> {
    if bounds.len() == dim {
        Ok(bounds.to_vec())
    } else if bounds.len() == 1 {
        Ok(vec![bounds[0]; dim])
    } else {
        Err(DgError::DimensionMismatch {
            expected: dim,
            got: bounds.len(),
        })
    }
}

fn expand_res(res: &[usize], dim: usize) -> Result<Vec<usize>> {
    if res.len() == dim {
        Ok(res.to_vec())
    } else if res.len() == 1 {
        Ok(vec![res[0]; dim])
    } else {
        Err(DgError::DimensionMismatch {
            expected: dim,
            got: res.len(),
        })
    }
}

fn solve_grid(cfg: &RunConfig, dim: usize) -> Result<Grid> {
    Grid::new(
        &expand_bounds(&cfg.bounds, dim)?,
        &expand_res(&cfg.res, dim)?,
    )
}

fn grid_spacing_hint(cfg: &RunConfig) -> f64 {
    // spacing of the first axis; enough to resolve grid-coupled defaults
    if cfg.bounds.is_empty() || cfg.res.is_empty() || cfg.res[0] < 2 {
        return 0.05;
    }
    let (lo, hi) = cfg.bounds[0];
    (hi - lo) / (cfg.res[0] - 1) as f64
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    config: &'a RunConfig,
    versions: serde_json::Value,
    wall_ms: f64,
    converged: Option<bool>,
    notes: Vec<String>,
}

fn write_meta(cfg: &RunConfig, command: &str, t0: Instant, converged: Option<bool>, notes: Vec<String>) -> Result<()> {
    let meta = Meta {
        command,
        config: cfg,
        versions: serde_json::json!({ "dgsolve": env!("CARGO_PKG_VERSION") }),
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        converged,
        notes,
    };
    let path = cfg.out.join("meta.json");
    fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn write_convergence(path: &Path, result: &SolveResult) -> Result<()> {
    let mut w = fs::File::create(path)?;
    for rec in &result.log {
        writeln!(w, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}

fn solve_reduced_components(
    cfg: &RunConfig,
    bundle: &GameBundle,
) -> Result<(Vec<SolveResult>, EnvelopeField, f64)> {
    let dim = bundle.reduced[0].state_dim();
    let grid = solve_grid(cfg, dim)?;
    let h = grid.max_spacing();
    let mut results = Vec::new();
    let mut components = Vec::new();
    for (spec, proj) in bundle.reduced.iter().zip(&bundle.projections) {
        let res = solve(spec, &grid, &cfg.solver)?;
        components.push(EnvelopeComponent::from_solve(spec, proj.clone(), &res)?);
        results.push(res);
    }
    let tol_eq = if cfg.tol_eq > 0.0 {
        cfg.tol_eq
    } else {
        crate::envelope::auto_tol_eq(h)
    };
    let env = EnvelopeField::new(bundle.full.state_dim(), components, tol_eq)?;
    Ok((results, env, h))
}

fn query_grid(cfg: &RunConfig, full_dim: usize) -> Result<Grid> {
    let bounds = if cfg.query_bounds.is_empty() {
        expand_bounds(&cfg.bounds[..1.min(cfg.bounds.len())], full_dim)?
    } else {
        expand_bounds(&cfg.query_bounds, full_dim)?
    };
    let res = if cfg.query_res.is_empty() {
        vec![cfg.res.first().copied().unwrap_or(41).min(41); full_dim]
    } else {
        expand_res(&cfg.query_res, full_dim)?
    };
    Grid::new(&bounds, &res)
}

fn cmd_solve(cfg: &RunConfig) -> Result<i32> {
    let t0 = Instant::now();
    let bundle = build_bundle(cfg, grid_spacing_hint(cfg))?;
    let spec = match cfg.reduced {
        Some(id) => bundle
            .reduced
            .iter()
            .find(|s| s.targets()[0].id == id)
            .ok_or_else(|| DgError::InvalidParameter(format!("no reduced game with target id {id}")))?,
        None => &bundle.full,
    };
    let grid = solve_grid(cfg, spec.state_dim())?;
    fs::create_dir_all(&cfg.out)?;
    let result = solve(spec, &grid, &cfg.solver)?;
    let mut f = fs::File::create(cfg.out.join("value.csv"))?;
    result.field.write_csv(&mut f)?;
    write_convergence(&cfg.out.join("convergence.jsonl"), &result)?;
    let notes = if result.converged {
        vec![]
    } else {
        vec!["NOT_CONVERGED".to_string()]
    };
    write_meta(cfg, "solve", t0, Some(result.converged), notes)?;
    println!(
        "solved {} on {} nodes: {} after {} iterations (sup change {:.3e})",
        spec.name,
        grid.len(),
        if result.converged { "converged" } else { "NOT_CONVERGED" },
        result.iterations,
        result.final_change
    );
    Ok(if result.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_envelope(cfg: &RunConfig) -> Result<i32> {
    let t0 = Instant::now();
    let bundle = build_bundle(cfg, grid_spacing_hint(cfg))?;
    fs::create_dir_all(&cfg.out)?;
    let (results, env, _h) = solve_reduced_components(cfg, &bundle)?;
    let all_converged = results.iter().all(|r| r.converged);
    let query = query_grid(cfg, bundle.full.state_dim())?;

    // envelope.csv: time-scale envelope over the query grid
    let mut f = fs::File::create(cfg.out.join("envelope.csv"))?;
    let dim = query.dim();
    let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    writeln!(f, "{},value,mask", header.join(","))?;
    let mut x = vec![0.0; dim];
    for i in 0..query.len() {
        query.node_coords(i, &mut x);
        let mask = if env.in_any_target(&x) { "TARGET" } else { "INTERIOR" };
        for xi in &x {
            write!(f, "{xi:.16e},")?;
        }
        writeln!(f, "{:.16e},{mask}", env.value(&x))?;
    }

    let active_map = env.active_map(&query);
    let mut f = fs::File::create(cfg.out.join("sigma.csv"))?;
    writeln!(f, "{},active", header.join(","))?;
    let mut sigma_count = 0usize;
    for (i, active) in active_map.iter().enumerate() {
        if active.len() >= 2 {
            query.node_coords(i, &mut x);
            for xi in &x {
                write!(f, "{xi:.16e},")?;
            }
            let ids: Vec<String> = active.iter().map(|id| id.to_string()).collect();
            writeln!(f, "{}", ids.join("|"))?;
            sigma_count += 1;
        }
    }

    let mut f = fs::File::create(cfg.out.join("active.csv"))?;
    writeln!(f, "{},argmin", header.join(","))?;
    for i in 0..query.len() {
        query.node_coords(i, &mut x);
        for xi in &x {
            write!(f, "{xi:.16e},")?;
        }
        if env.in_any_target(&x) {
            writeln!(f, "TARGET")?;
        } else {
            writeln!(f, "{}", env.argmin_id(&x))?;
        }
    }

    write_meta(
        cfg,
        "envelope",
        t0,
        Some(all_converged),
        if all_converged { vec![] } else { vec!["NOT_CONVERGED".into()] },
    )?;
    println!(
        "envelope of {} components over {} query nodes; {} crossing nodes",
        env.components().len(),
        query.len(),
        sigma_count
    );
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_check(cfg: &RunConfig) -> Result<i32> {
    let t0 = Instant::now();
    let bundle = build_bundle(cfg, grid_spacing_hint(cfg))?;
    fs::create_dir_all(&cfg.out)?;
    let (results, env, h) = solve_reduced_components(cfg, &bundle)?;
    let all_converged = results.iter().all(|r| r.converged);
    let mut check_cfg = cfg.check.clone();
    if check_cfg.tol_numeric == 0.0 {
        check_cfg.tol_numeric = 2.0 * h;
    }
    let query = query_grid(cfg, bundle.full.state_dim())?;
    let points: Vec<Vec<f64>> = if cfg.points.is_empty() {
        env.sigma_set(&query)
    } else {
        cfg.points.clone()
    };

    let mut f = fs::File::create(cfg.out.join("conditions.jsonl"))?;
    let mut counts = (0usize, 0usize, 0usize); // holds, violated, inconclusive
    for p in &points {
        let report = check_conditions(&env, &bundle.full, p, &check_cfg)?;
        match report.verdict {
            Verdict::Holds => counts.0 += 1,
            Verdict::Violated => counts.1 += 1,
            Verdict::Inconclusive => counts.2 += 1,
        }
        writeln!(f, "{}", serde_json::to_string(&report)?)?;
        if cfg.points.len() <= 8 && !cfg.points.is_empty() {
            println!(
                "point {:?}: verdict {:?}, residual_C {:.4}, residual_E {:.4}",
                p, report.verdict, report.residual_c, report.residual_e
            );
        }
    }

    let visc = verify_viscosity(&env, &bundle.full, &query, &check_cfg)?;
    let mut f = fs::File::create(cfg.out.join("viscosity.csv"))?;
    visc.write_csv(&mut f)?;

    write_meta(cfg, "check", t0, Some(all_converged), vec![])?;
    println!(
        "conditions at {} points: {} HOLDS, {} VIOLATED, {} INCONCLUSIVE",
        points.len(),
        counts.0,
        counts.1,
        counts.2
    );
    println!(
        "viscosity: {} smooth, {} kinks, {} skipped; {} subsolution / {} supersolution violations",
        visc.smooth_checked, visc.kink_checked, visc.skipped, visc.sub_violations, visc.super_violations
    );
    Ok(EXIT_OK)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let t0 = Instant::now();
    let bundle = build_bundle(cfg, grid_spacing_hint(cfg))?;
    fs::create_dir_all(&cfg.out)?;
    let x0 = cfg
        .points
        .first()
        .ok_or_else(|| DgError::InvalidParameter("simulate needs --point".into()))?
        .clone();

    // reduced-game rollout when requested explicitly
    if cfg.policy == "reduced" {
        let id = cfg.reduced.ok_or_else(|| {
            DgError::InvalidParameter("--policy reduced needs --reduced <id>".into())
        })?;
        let spec = bundle
            .reduced
            .iter()
            .find(|s| s.targets()[0].id == id)
            .ok_or_else(|| DgError::InvalidParameter(format!("no reduced game with target id {id}")))?;
        if spec.in_any_target(&x0) {
            eprintln!("initial state is inside the target");
            return Ok(EXIT_BAD_INITIAL_STATE);
        }
        let grid = solve_grid(cfg, spec.state_dim())?;
        let res = solve(spec, &grid, &cfg.solver)?;
        let dt = if cfg.dt > 0.0 { cfg.dt } else { grid.max_spacing() / 2.0 };
        let traj = simulate(spec, &Policy::Feedback(&res.field), &x0, dt, cfg.t_max)?;
        return finish_simulate(cfg, spec, traj, t0);
    }

    if bundle.full.in_any_target(&x0) {
        eprintln!("initial state is inside the target");
        return Ok(EXIT_BAD_INITIAL_STATE);
    }
    match cfg.policy.as_str() {
        "envelope" => {
            let (_results, env, h) = solve_reduced_components(cfg, &bundle)?;
            let dt = if cfg.dt > 0.0 { cfg.dt } else { h / 2.0 };
            let traj = simulate(&bundle.full, &Policy::Feedback(&env), &x0, dt, cfg.t_max)?;
            finish_simulate(cfg, &bundle.full, traj, t0)
        }
        "full" => {
            let grid = solve_grid(cfg, bundle.full.state_dim())?;
            let res = solve(&bundle.full, &grid, &cfg.solver)?;
            let dt = if cfg.dt > 0.0 { cfg.dt } else { grid.max_spacing() / 2.0 };
            let traj = simulate(&bundle.full, &Policy::Feedback(&res.field), &x0, dt, cfg.t_max)?;
            finish_simulate(cfg, &bundle.full, traj, t0)
        }
        other => Err(DgError::Unsupported(format!("unknown policy {other}"))),
    }
}

fn finish_simulate(cfg: &RunConfig, spec: &GameSpec, traj: crate::synthesis::Trajectory, t0: Instant) -> Result<i32> {
    let mut f = fs::File::create(cfg.out.join("trajectory.csv"))?;
    traj.write_csv(&mut f, spec)?;
    match &traj.outcome {
        Outcome::Captured { target_id, tau } => println!("CAPTURED j={target_id} tau={tau:.6}"),
        Outcome::Timeout => println!("TIMEOUT"),
    }
    write_meta(cfg, "simulate", t0, None, vec![])?;
    Ok(EXIT_OK)
}

fn cmd_oracle(cfg: &RunConfig) -> Result<i32> {
    let game = cfg
        .game
        .as_ref()
        .ok_or_else(|| DgError::InvalidParameter("no game configured".into()))?;
    let point = cfg
        .points
        .first()
        .ok_or_else(|| DgError::InvalidParameter("oracle needs --point".into()))?;
    match game {
        GameConfig::P3 { alpha } => {
            if point.len() != 3 {
                return Err(DgError::DimensionMismatch {
                    expected: 3,
                    got: point.len(),
                });
            }
            let oracle = P3Oracle::new(*alpha)?;
            let v = oracle.values(point);
            println!(
                "{}",
                serde_json::json!({
                    "u2": v.u2,
                    "u3": v.u3,
                    "envelope": v.envelope,
                    "true_u": v.true_u,
                    "in_D": v.in_d,
                })
            );
            Ok(EXIT_OK)
        }
        GameConfig::P1 { m, alpha, beta, r } => {
            let params = P1Params::new(alpha.clone(), *beta, *r);
            if point.len() == 2 {
                let i = cfg.reduced.map(|id| id - 1).unwrap_or(0);
                if i >= *m {
                    return Err(DgError::InvalidParameter(format!("no evader {i}")));
                }
                let value = p1_reduced_value(&params, i, point[0], point[1]);
                println!("{}", serde_json::json!({ "value": value }));
                Ok(EXIT_OK)
            } else if point.len() == m + 1 {
                let values: Vec<f64> = (0..*m)
                    .map(|i| p1_reduced_value(&params, i, point[i], point[*m]))
                    .collect();
                let envelope = values.iter().cloned().fold(f64::INFINITY, f64::min);
                println!(
                    "{}",
                    serde_json::json!({ "values": values, "envelope": envelope })
                );
                Ok(EXIT_OK)
            } else {
                Err(DgError::DimensionMismatch {
                    expected: m + 1,
                    got: point.len(),
                })
            }
        }
        GameConfig::P2 { .. } => {
            eprintln!("no closed-form oracle for family p2");
            Ok(EXIT_UNSUPPORTED)
        }
    }
}

fn error_code(e: &DgError) -> i32 {
    match e {
        DgError::DimensionMismatch { .. } | DgError::Incompatible(_) => EXIT_INCOMPATIBLE,
        DgError::PointInTarget => EXIT_BAD_INITIAL_STATE,
        DgError::Unsupported(_) => EXIT_UNSUPPORTED,
        _ => EXIT_ERROR,
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version printing
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let (name, args) = match cli.command {
        Cmd::Solve(a) => ("solve", a),
        Cmd::Envelope(a) => ("envelope", a),
        Cmd::Check(a) => ("check", a),
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::Oracle(a) => ("oracle", a),
    };
    let cfg = match args.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    let result = match name {
        "solve" => cmd_solve(&cfg),
        "envelope" => cmd_envelope(&cfg),
        "check" => cmd_check(&cfg),
        "simulate" => cmd_simulate(&cfg),
        "oracle" => cmd_oracle(&cfg),
        _ => unreachable!(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

/// Comparison statistics between a solved full field and an envelope,
/// exposed for programmatic use of the CLI flow.
pub fn compare_full_vs_envelope(
    full: &crate::grid::ValueField,
    full_spec: &GameSpec,
    env: &EnvelopeField,
    query: &Grid,
) -> crate::envelope::FieldStats {
    let time_field = crate::solver::to_time_field(full);
    let src = FieldSource {
        field: &time_field,
        spec: Some(full_spec),
    };
    compare_fields(&src, env, query, None)
}
