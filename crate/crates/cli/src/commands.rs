//! One function per subcommand: read inputs, solve, collect results and CSV
//! artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use congested_transport::beckmann::{
    cell_magnitude, coarse_w1, read_scalar_field, reconstruct_trajectories, solve_beckmann_with, solve_dual_quadratic,
    write_scalar_field, write_vector_field, BeckmannError, BeckmannOptions, Grid, ScalarField, TrajectoryOptions,
};
use congested_transport::kantorovich::{
    hotelling_demands, hotelling_recover_prices, parse_cost_csv, solve_discrete_ot, DiscreteMeasure, PowerCost,
};
use congested_transport::network::DEFAULT_PATH_CAP;
use congested_transport::urbanplan::{
    minimize_with_atomic_g, solve_p_nu_with, solve_quadratic_city_with, AtomicOptions, CityNu, CityOptions,
    CitySolution, ConcentrationSpec, InteractionKernel, PnuOptions, SpreadSpec, UrbanError,
};
use congested_transport::wardrop::{
    load_network, parse_demand, solve_fixed_demand, solve_variable_demand, verify_wardrop, CongestionSpec, DemandSpec,
    SolverOptions,
};

use crate::{read_input, Common, Outcome, Produced};

fn csv_line(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

fn parse_h(words: &[String]) -> Result<CongestionSpec> {
    let text = words.join(" ");
    text.parse::<CongestionSpec>().map_err(|e| anyhow!("--H '{text}': {e}"))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WardropArgs {
    #[command(flatten)]
    pub common: Common,
    /// Network file (`nodes`, `edge`, `source`, `dest` lines).
    #[arg(long)]
    pub net: PathBuf,
    /// Demand file (`demand` lines, or `mu` and `nu` lines).
    #[arg(long)]
    pub demand: PathBuf,
    /// Congestion cost for edges without their own, e.g. `affine_power 1 2`.
    #[arg(long = "H", num_args = 1.., default_value = "quadratic")]
    pub h: Vec<String>,
    /// Plain Frank-Wolfe steps only.
    #[arg(long)]
    pub plain: bool,
}

impl WardropArgs {
    pub fn inputs(&self) -> Vec<PathBuf> {
        vec![self.net.clone(), self.demand.clone()]
    }
}

pub(crate) fn wardrop(a: &WardropArgs) -> Result<Produced> {
    let (net, costs) = load_network(&read_input(&a.net)?, parse_h(&a.h)?)?;
    let demand = parse_demand(&read_input(&a.demand)?, &net)?;
    let mut opts = SolverOptions::new(a.common.tol, a.common.max_iter);
    opts.away_steps = !a.plain;
    let res = match &demand {
        DemandSpec::Fixed(g) => solve_fixed_demand(&net, &costs, g, &opts)?,
        DemandSpec::Marginals { mu, nu } => solve_variable_demand(&net, &costs, mu, nu, &opts)?,
    };
    let check = verify_wardrop(&net, &costs, &res, DEFAULT_PATH_CAP);

    let mut flows = String::new();
    csv_line(
        &mut flows,
        &["edge", "tail", "head", "flow", "unit_cost"].map(String::from),
    );
    for (e, &(t, h)) in net.edges().iter().enumerate() {
        csv_line(
            &mut flows,
            &[
                e.to_string(),
                net.label(t).to_string(),
                net.label(h).to_string(),
                res.flows.0[e].to_string(),
                res.xi.0[e].to_string(),
            ],
        );
    }
    let mut coupling = String::new();
    csv_line(&mut coupling, &["source", "dest", "demand"].map(String::from));
    for ((s, d), v) in res.coupling.indexed_iter() {
        csv_line(
            &mut coupling,
            &[
                net.label(net.sources()[s]).to_string(),
                net.label(net.dests()[d]).to_string(),
                v.to_string(),
            ],
        );
    }
    let mut files = vec![("flows.csv".to_string(), flows), ("coupling.csv".to_string(), coupling)];

    let verification = match &check {
        Ok(rep) => {
            let mut paths = String::new();
            csv_line(
                &mut paths,
                &["source", "dest", "edges", "flow", "length"].map(String::from),
            );
            for p in &rep.path_flows {
                let edges: Vec<String> = p.edges.iter().map(|e| e.to_string()).collect();
                csv_line(
                    &mut paths,
                    &[
                        net.label(net.sources()[p.source_pos]).to_string(),
                        net.label(net.dests()[p.dest_pos]).to_string(),
                        edges.join(" "),
                        p.flow.to_string(),
                        p.length.to_string(),
                    ],
                );
            }
            files.push(("paths.csv".to_string(), paths));
            json!({
                "max_excess": rep.max_excess,
                "worst_pair": rep.worst_pair,
                "decomposition_residual": rep.residual,
                "used_paths": rep.path_flows.len(),
            })
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    let results = json!({
        "objective": res.objective,
        "relative_gap": res.relative_gap,
        "iterations": res.iterations,
        "verification": verification,
        "coupling": res.coupling.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    });
    Ok(Produced {
        outcome: Outcome::from_flag(res.converged),
        results,
        files,
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OtArgs {
    #[command(flatten)]
    pub common: Common,
    /// Source points (`point <x> [<y> ...] <weight>` lines).
    #[arg(long)]
    pub mu: PathBuf,
    /// Target points.
    #[arg(long)]
    pub nu: PathBuf,
    /// Ground cost `|x - y|^p`, given as `lp <p>`.
    #[arg(long, num_args = 2, value_names = ["KIND", "P"], default_values = ["lp", "1"])]
    pub metric: Vec<String>,
    /// Dense cost matrix CSV; overrides `--metric`.
    #[arg(long)]
    pub cost: Option<PathBuf>,
}

impl OtArgs {
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.mu.clone(), self.nu.clone()];
        v.extend(self.cost.clone());
        v
    }

    fn exponent(&self) -> Result<f64> {
        match self.metric.as_slice() {
            [kind, p] if kind == "lp" => {
                let p: f64 = p.parse().with_context(|| format!("bad exponent '{p}'"))?;
                if !(p >= 1.0) {
                    bail!("metric exponent must be at least 1, got {p}");
                }
                Ok(p)
            }
            other => bail!("unknown metric {other:?}; expected `lp <p>`"),
        }
    }
}

pub(crate) fn ot(a: &OtArgs) -> Result<Produced> {
    let mu = DiscreteMeasure::parse(&read_input(&a.mu)?).context("source points")?;
    let nu = DiscreteMeasure::parse(&read_input(&a.nu)?).context("target points")?;
    let p = a.exponent()?;
    let cost = match &a.cost {
        Some(path) => parse_cost_csv(&read_input(path)?)?,
        None => {
            if mu.dim() != nu.dim() {
                bail!(
                    "source points are {}-dimensional, target points {}-dimensional",
                    mu.dim(),
                    nu.dim()
                );
            }
            PowerCost::new(p).matrix(&mu, &nu)
        }
    };
    let sol = solve_discrete_ot(&mu, &nu, &cost)?;

    let mut plan = String::new();
    csv_line(&mut plan, &["source", "target", "mass"].map(String::from));
    for ((i, j), &g) in sol.plan.indexed_iter() {
        if g > 0.0 {
            csv_line(&mut plan, &[i.to_string(), j.to_string(), g.to_string()]);
        }
    }
    let mut pots = String::new();
    csv_line(&mut pots, &["side", "index", "potential"].map(String::from));
    for (k, v) in sol.potentials.phi.iter().enumerate() {
        csv_line(&mut pots, &["source".into(), k.to_string(), v.to_string()]);
    }
    for (k, v) in sol.potentials.psi.iter().enumerate() {
        csv_line(&mut pots, &["target".into(), k.to_string(), v.to_string()]);
    }
    let mut results = json!({
        "value": sol.value,
        "dual_value": sol.dual_value,
        "duality_gap": sol.duality_gap(),
        "dual_infeasibility": sol.dual_infeasibility(&cost),
        "pivots": sol.pivots,
    });
    if a.cost.is_none() {
        results["wasserstein"] = json!(sol.value.max(0.0).powf(1.0 / p));
    }
    Ok(Produced {
        outcome: Outcome::Converged,
        results,
        files: vec![("plan.csv".into(), plan), ("potentials.csv".into(), pots)],
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BeckmannArgs {
    #[command(flatten)]
    pub common: Common,
    /// Source density CSV.
    #[arg(long)]
    pub mu: PathBuf,
    /// Target density CSV.
    #[arg(long)]
    pub nu: PathBuf,
    /// Grid sidecar (`grid <nx> <ny> <h>`).
    #[arg(long)]
    pub grid: PathBuf,
    /// Congestion cost of the flux magnitude.
    #[arg(long = "H", num_args = 1.., default_value = "quadratic")]
    pub h: Vec<String>,
    /// Solve the quadratic case through the Poisson equation instead.
    #[arg(long)]
    pub poisson: bool,
    /// Particles to advect through the flow; 0 skips the reconstruction.
    #[arg(long, default_value_t = 0)]
    pub particles: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
}

impl BeckmannArgs {
    pub fn inputs(&self) -> Vec<PathBuf> {
        vec![self.mu.clone(), self.nu.clone(), self.grid.clone()]
    }
}

fn read_field(path: &Path, sidecar: &str) -> Result<(Grid, ScalarField)> {
    read_scalar_field(&read_input(path)?, sidecar).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn beckmann(a: &BeckmannArgs, threads: usize) -> Result<Produced> {
    let sidecar = read_input(&a.grid)?;
    let (grid, mu) = read_field(&a.mu, &sidecar)?;
    let (_, nu) = read_field(&a.nu, &sidecar)?;
    let spec = parse_h(&a.h)?;
    if a.poisson && spec != CongestionSpec::Quadratic {
        bail!("--poisson needs --H quadratic");
    }

    let (v, mut results, outcome) = if a.poisson {
        let q = solve_dual_quadratic(&mu, &nu, &grid)?;
        let (u_csv, _) = write_scalar_field(&q.u, &grid);
        (
            q.v,
            json!({ "cost": q.cost, "potential_csv_rows": u_csv.lines().count() }),
            Outcome::Converged,
        )
    } else {
        let mut opts = BeckmannOptions::new(a.common.tol);
        opts.max_iter = a.common.max_iter;
        let (sol, outcome) = match solve_beckmann_with(&mu, &nu, &[spec], &grid, &opts) {
            Ok(s) => (s, Outcome::Converged),
            Err(BeckmannError::NoConvergence(s)) => (*s, Outcome::NotConverged),
            Err(e) => return Err(e.into()),
        };
        let r = json!({
            "cost": sol.cost,
            "dual_value": sol.dual_value,
            "gap": sol.gap(),
            "div_residual": sol.div_residual,
            "residual": sol.residual,
            "iterations": sol.iterations,
        });
        (sol.v, r, outcome)
    };
    let (vx, vy, side) = write_vector_field(&v, &grid);
    let (mag, _) = write_scalar_field(&cell_magnitude(&v, &grid), &grid);
    let mut files = vec![
        ("vx.csv".to_string(), vx),
        ("vy.csv".to_string(), vy),
        ("magnitude.csv".to_string(), mag),
        ("grid.txt".to_string(), side),
    ];

    if a.particles > 0 {
        let mut topts = TrajectoryOptions::new(a.particles, a.steps, a.common.seed);
        topts.threads = threads;
        let tr = reconstruct_trajectories(&v, &mu, &nu, &grid, &topts)?;
        let coarse = (grid.nx.min(grid.ny) / 4).max(1);
        let w_end = coarse_w1(&tr.endpoints, &tr.weights, &nu, &grid, coarse)?;
        let intensity_l1 = tr.intensity.l1_distance(&cell_magnitude(&v, &grid), &grid);
        results["trajectories"] = json!({
            "particles": a.particles,
            "steps": a.steps,
            "coarse_bins": coarse,
            "endpoint_w1": w_end,
            "intensity_l1": intensity_l1,
            "floor_hits": tr.floor_hits,
            "reflections": tr.reflections,
        });
        let mut pts = String::new();
        csv_line(
            &mut pts,
            &["start_x", "start_y", "mid_x", "mid_y", "end_x", "end_y", "weight"].map(String::from),
        );
        for k in 0..tr.starts.len() {
            let (s, m, e) = (tr.starts[k], tr.midpoints[k], tr.endpoints[k]);
            csv_line(
                &mut pts,
                &[s[0], s[1], m[0], m[1], e[0], e[1], tr.weights[k]].map(|x| x.to_string()),
            );
        }
        files.push(("particles.csv".to_string(), pts));
        let (inten, _) = write_scalar_field(&tr.intensity, &grid);
        files.push(("intensity.csv".to_string(), inten));
    }
    Ok(Produced {
        outcome,
        results,
        files,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

fn default_p() -> f64 {
    2.0
}

fn default_k_max() -> usize {
    3
}

fn default_atoms() -> usize {
    12
}

/// Problem file of the `city` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityConfig {
    #[serde(default = "default_p")]
    pub p: f64,
    pub spread: SpreadSpec,
    #[serde(default)]
    pub concentration: Option<ConcentrationSpec>,
    #[serde(default)]
    pub lambda: Option<f64>,
    pub grid: GridSpec,
    /// Overrides `--tol`.
    #[serde(default)]
    pub tol: Option<f64>,
    /// Fixed services; relative paths resolve against the config file.
    #[serde(default)]
    pub services: Option<PathBuf>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_atoms")]
    pub atoms_per_side: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CityArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON problem file.
    #[arg(long)]
    pub config: PathBuf,
}

impl CityArgs {
    pub fn inputs(&self) -> Vec<PathBuf> {
        vec![self.config.clone()]
    }
}

fn services_csv(nu: &DiscreteMeasure) -> String {
    let mut s = String::new();
    csv_line(&mut s, &["x", "y", "weight"].map(String::from));
    for (p, w) in nu.points().zip(nu.weights()) {
        csv_line(&mut s, &[p[0], p[1], *w].map(|x| x.to_string()));
    }
    s
}

fn city_files(sol: &CitySolution, grid: &Grid) -> Result<Vec<(String, String)>> {
    let (mu, side) = write_scalar_field(&sol.mu, grid);
    let (pot, _) = write_scalar_field(&sol.potential, grid);
    let mut files = vec![
        ("mu.csv".to_string(), mu),
        ("potential.csv".to_string(), pot),
        ("grid.txt".to_string(), side),
    ];
    match &sol.nu {
        CityNu::Atoms(m) => files.push(("services.csv".to_string(), services_csv(m))),
        CityNu::Density(f) => files.push(("services.csv".to_string(), write_scalar_field(f, grid).0)),
    }
    Ok(files)
}

fn solution_json(sol: &CitySolution) -> Value {
    json!({
        "value": sol.value,
        "terms": sol.terms,
        "multiplier": sol.multiplier,
        "residual": sol.residual,
        "dual_gap": sol.dual_gap,
        "iterations": sol.iterations,
        "history": sol.history,
    })
}

pub(crate) fn city(a: &CityArgs, threads: usize) -> Result<Produced> {
    let cfg: CityConfig = serde_json::from_str(&read_input(&a.config)?).context("parsing the city config")?;
    let grid = Grid::new(cfg.grid.nx, cfg.grid.ny, cfg.grid.h)?;
    let tol = cfg.tol.unwrap_or(a.common.tol);
    if !(tol > 0.0) {
        bail!("tol must be positive, got {tol}");
    }

    let (mode, run) = if let Some(path) = &cfg.services {
        let path = match a.config.parent() {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.clone(),
        };
        let nu = DiscreteMeasure::parse(&read_input(&path)?).context("services")?;
        let mut o = PnuOptions::new(tol);
        o.max_iter = a.common.max_iter;
        (
            "fixed_services",
            solve_p_nu_with(&nu, cfg.p, &cfg.spread, &grid, &o).map(|s| (s, Value::Null)),
        )
    } else {
        match &cfg.concentration {
            Some(conc @ ConcentrationSpec::Atomic(_)) => {
                let mut o = AtomicOptions::new(cfg.k_max, tol);
                o.threads = threads;
                let r = minimize_with_atomic_g(cfg.p, &cfg.spread, conc, &grid, &o).map(|(s, rep)| {
                    let extra = json!({
                        "sweep": rep.sweep,
                        "best_k": rep.best_k,
                        "catchments_connected": rep.catchments_connected,
                    });
                    (s, extra)
                });
                ("atomic", r)
            }
            other => {
                let lambda = match (other, cfg.lambda) {
                    (_, Some(l)) => l,
                    (Some(ConcentrationSpec::Interaction(InteractionKernel::Power { c, q })), None) if *q == 2.0 => *c,
                    _ => bail!("the quadratic city needs `lambda` or an interaction kernel with q = 2"),
                };
                if cfg.p != 2.0 || cfg.spread != SpreadSpec::Quadratic {
                    bail!("the quadratic city needs p = 2 and the quadratic spread");
                }
                let mut o = CityOptions::new(tol);
                o.atoms_per_side = cfg.atoms_per_side;
                o.max_outer = a.common.max_iter.min(o.max_outer.max(a.common.max_iter));
                let r = solve_quadratic_city_with(lambda, &grid, &o).map(|(s, rep)| (s, json!(rep)));
                ("quadratic_city", r)
            }
        }
    };
    let (sol, extra, outcome) = match run {
        Ok((s, extra)) => (s, extra, Outcome::Converged),
        Err(UrbanError::NoConvergence(s)) => (*s, Value::Null, Outcome::NotConverged),
        Err(e) => return Err(e.into()),
    };
    let mut results = solution_json(&sol);
    results["mode"] = json!(mode);
    results["resolved_problem"] = json!(cfg);
    if !extra.is_null() {
        results["report"] = extra;
    }
    let files = city_files(&sol, &grid)?;
    Ok(Produced {
        outcome,
        results,
        files,
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HotellingArgs {
    #[command(flatten)]
    pub common: Common,
    /// Firm locations (`point` lines; weights are ignored).
    #[arg(long)]
    pub firms: PathBuf,
    /// Consumer distribution.
    #[arg(long)]
    pub consumers: PathBuf,
    /// Comma-separated prices, one per firm.
    #[arg(long, conflicts_with = "demands", required_unless_present = "demands")]
    pub prices: Option<String>,
    /// Comma-separated demands, one per firm.
    #[arg(long)]
    pub demands: Option<String>,
    /// Access cost exponent.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
}

impl HotellingArgs {
    pub fn inputs(&self) -> Vec<PathBuf> {
        vec![self.firms.clone(), self.consumers.clone()]
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad {what} '{t}'")))
        .collect()
}

pub(crate) fn hotelling(a: &HotellingArgs) -> Result<Produced> {
    let firms_m = DiscreteMeasure::parse(&read_input(&a.firms)?).context("firms")?;
    let firms: Vec<Vec<f64>> = firms_m.points().map(|p| p.to_vec()).collect();
    let consumers = DiscreteMeasure::parse(&read_input(&a.consumers)?).context("consumers")?;
    let cost = PowerCost::new(a.p);

    let (prices, assign) = match (&a.prices, &a.demands) {
        (Some(p), _) => {
            let prices = parse_list(p, "price")?;
            let assign = hotelling_demands(&firms, &prices, &consumers, cost)?;
            (Some(prices), assign)
        }
        (None, Some(d)) => {
            let demands = parse_list(d, "demand")?;
            let rec = hotelling_recover_prices(&firms, &demands, &consumers, cost)?;
            (None, hotelling_demands(&firms, &rec, &consumers, cost)?)
        }
        (None, None) => bail!("give --prices or --demands"),
    };
    let recovered = hotelling_recover_prices(&firms, &assign.demands, &consumers, cost)?;
    let round_trip = prices.as_ref().map(|p| {
        p.iter()
            .zip(&recovered)
            .map(|(a, b)| ((a - p[0]) - (b - recovered[0])).abs())
            .fold(0.0, f64::max)
    });
    let again = hotelling_demands(&firms, &recovered, &consumers, cost)?;

    let mut out = String::new();
    let _ = writeln!(out, "consumer,firm");
    for (k, f) in assign.firm_of.iter().enumerate() {
        let _ = writeln!(out, "{k},{f}");
    }
    let results = json!({
        "prices": prices,
        "demands": assign.demands,
        "recovered_prices": recovered,
        "round_trip_error": round_trip,
        "assignment_reproduced": again.firm_of == assign.firm_of,
    });
    Ok(Produced {
        outcome: Outcome::Converged,
        results,
        files: vec![("assignment.csv".into(), out)],
    })
}
