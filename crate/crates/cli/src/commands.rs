use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use alpha_merton::calculus::{
    convert as convert_field, correction_vector, effective_drift_factor, DiagonalMultiplicative,
};
use alpha_merton::eval::{compare_interpretations, perturbation_study, ComparisonTable};
use alpha_merton::market::{feller_check, geometric, heston_ito_form, Market};
use alpha_merton::policy::{solve_constant_vol, solve_factor, solve_heston, Policy};
use alpha_merton::sim::simulate_wealth;
use alpha_merton::{CoefficientField, Interpretation, PathEnsemble, ScalarField, ScalarFn};
use clap::Args;

use crate::config::ExperimentConfig;
use crate::format::{csv_number, csv_opt, Json};
use crate::{Failure, Global};

pub const VERSION: &str = concat!("alpha-merton ", env!("CARGO_PKG_VERSION"));

/// Interpretations on the α axis of `alpha_weight.csv`.
const ALPHA_SWEEP_POINTS: usize = 21;
/// Variance grid of `heston_policy.csv`.
const HESTON_GRID: (f64, f64, usize) = (1e-3, 1.0, 50);

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Interpretation the coefficients are written in.
    #[arg(long)]
    from: f64,
    /// Target interpretation.
    #[arg(long)]
    to: f64,
    /// Inline one-dimensional field, e.g.
    /// `{"drift": {"type": "affine", "intercept": 0, "slope": 0.08}, "diffusion": {"type": "affine", "intercept": 0, "slope": 0.2}}`.
    #[arg(long)]
    coeffs: Option<String>,
    /// Evaluation grid `lo:hi:n` (evenly spaced, inclusive).
    #[arg(long, default_value = "0.5:2:4")]
    grid: String,
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Failure::usage("--config is required for this command"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let (Some(seed), Some(sim)) = (g.seed, cfg.sim.as_mut()) {
        sim.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: Option<&ExperimentConfig>) -> Option<PathBuf> {
    g.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.outputs.dir.clone()))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(e, dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::io(e, &path))
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Failure::usage(format!("grid must look like lo:hi:n, got {text:?}"));
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    Ok((0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect())
}

/// The SDE whose interpretation `convert` changes for a configured market:
/// prices for constant-vol markets, the factor otherwise.
fn market_field(market: &Market) -> Box<dyn CoefficientField> {
    match market {
        Market::ConstantVol(m) if m.n_assets() == 1 && m.gamma[0].len() == 1 => {
            Box::new(ScalarField::gbm(m.mu[0], m.gamma[0][0]))
        }
        Market::ConstantVol(m) => Box::new(
            DiagonalMultiplicative::new(m.mu_vector(), m.gamma_matrix()).expect("validated market"),
        ),
        Market::Factor(m) => Box::new(ScalarField {
            drift: m.b_fn,
            diffusion: m.nu_fn,
        }),
        Market::Heston(m) => Box::new(ScalarField {
            drift: ScalarFn::Affine {
                intercept: m.kappa * m.long_run_mean,
                slope: -m.kappa,
            },
            diffusion: ScalarFn::sqrt(m.xi),
        }),
    }
}

pub fn convert(g: &Global, args: &ConvertArgs) -> Result<(), Failure> {
    let from = Interpretation::new(args.from).map_err(Failure::from_core)?;
    let to = Interpretation::new(args.to).map_err(Failure::from_core)?;
    let grid = parse_grid(&args.grid)?;
    let field: Box<dyn CoefficientField> = match &args.coeffs {
        Some(text) => Box::new(
            serde_json::from_str::<ScalarField>(text)
                .map_err(|e| Failure::validation(format!("invalid --coeffs: {e}")))?,
        ),
        None => market_field(&load_config(g)?.market),
    };
    let csv = convert_report(&*field, from, to, &grid).map_err(Failure::from_core)?;
    print!("{csv}");
    if let Some(dir) = &g.out {
        write_file(dir, "convert.csv", csv.as_bytes())?;
    }
    Ok(())
}

/// Every state coordinate is set to the grid value.
fn convert_report(
    field: &dyn CoefficientField,
    from: Interpretation,
    to: Interpretation,
    grid: &[f64],
) -> alpha_merton::Result<String> {
    let d = field.state_dim();
    let converted = convert_field(field, from, to);
    let shift = converted.shift();
    let cols = ["drift", "correction", "shift", "converted_drift", "shift_per_unit"];
    let mut header = vec!["x".to_string()];
    for c in cols {
        if d == 1 {
            header.push(c.to_string());
        } else {
            header.extend((1..=d).map(|i| format!("{c}_{i}")));
        }
    }
    let mut out = header.join(",") + "\n";
    for &x in grid {
        let state = vec![x; d];
        let b = field.drift(&state)?;
        let c = correction_vector(field, &state)?;
        let s = &c * shift;
        let bt = converted.drift(&state)?;
        let per_unit: Vec<String> = s
            .iter()
            .map(|v| if x != 0.0 { csv_number(v / x) } else { String::new() })
            .collect();
        let mut row = vec![csv_number(x)];
        for v in [&b, &c, &s, &bt] {
            row.extend(v.iter().map(|&y| csv_number(y)));
        }
        row.extend(per_unit);
        out += &(row.join(",") + "\n");
    }
    Ok(out)
}

fn resolved_config(cfg: &ExperimentConfig) -> Json {
    Json::from_value(&serde_json::to_value(cfg).expect("config serializes"))
}

fn solve_policy(market: &Market, rho: f64, alpha: Interpretation) -> alpha_merton::Result<Policy> {
    match market {
        Market::ConstantVol(m) => Ok(solve_constant_vol(m, rho, alpha)?.0),
        Market::Factor(m) => solve_factor(m, rho, alpha),
        Market::Heston(m) => solve_heston(m, rho, alpha),
    }
}

fn solve_entry(cfg: &ExperimentConfig, alpha: Interpretation) -> alpha_merton::Result<Json> {
    let rho = cfg.rho;
    let mut pairs: Vec<(&str, Json)> = vec![("alpha", Json::Num(alpha.alpha()))];
    match &cfg.market {
        Market::ConstantVol(m) => {
            let (policy, value) = solve_constant_vol(m, rho, alpha)?;
            pairs.push(("consumption_fraction", Json::Num(policy.consumption_fraction)));
            pairs.push(("weights", Json::nums(&policy.constant_weights().unwrap())));
            pairs.push(("beta0", Json::Num(value.beta0)));
            pairs.push(("value_at_a0", Json::Num(value.value(cfg.a0, 0.0))));
        }
        Market::Factor(m) => {
            let policy = solve_factor(m, rho, alpha)?;
            pairs.push(("consumption_fraction", Json::Num(policy.consumption_fraction)));
            pairs.push(("effective_drift_at_x0", Json::Num(effective_drift_factor(m, alpha, m.x0)?)));
            pairs.push(("weight_at_x0", Json::Num(policy.rule.weight_at(m.x0)?)));
        }
        Market::Heston(m) => {
            let policy = solve_heston(m, rho, alpha)?;
            let (mu_eff, cir) = heston_ito_form(m, alpha);
            let feller = feller_check(&cir);
            pairs.push(("consumption_fraction", Json::Num(policy.consumption_fraction)));
            pairs.push(("effective_drift", Json::Num(mu_eff)));
            pairs.push(("theta_alpha", Json::Num(cir.theta_alpha)));
            pairs.push(("pi_times_v", Json::Num(mu_eff - m.r)));
            pairs.push(("weight_at_v0", Json::Num(policy.rule.weight_at(m.v0)?)));
            pairs.push((
                "feller",
                Json::obj([("pass", Json::Bool(feller.pass)), ("margin", Json::Num(feller.margin))]),
            ));
        }
    }
    Ok(Json::obj(pairs))
}

pub fn solve(g: &Global) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let results = cfg
        .interpretations()?
        .into_iter()
        .map(|a| solve_entry(&cfg, a))
        .collect::<alpha_merton::Result<Vec<_>>>()
        .map_err(Failure::from_core)?;
    let doc = Json::obj([
        ("version", Json::Str(VERSION.into())),
        ("command", Json::Str("solve".into())),
        ("config", resolved_config(&cfg)),
        ("results", Json::Arr(results)),
    ]);
    let text = doc.render();
    print!("{text}");
    if let Some(dir) = out_dir(g, Some(&cfg)) {
        write_file(&dir, "solve.json", text.as_bytes())?;
    }
    Ok(())
}

fn verify_csv(table: &ComparisonTable, heston: bool) -> String {
    let n = table.rows.iter().map(|r| r.weights.len()).max().unwrap_or(0);
    let mut header = vec!["alpha".to_string()];
    header.extend((1..=n).map(|i| format!("weight_{i}")));
    header.extend(["beta0", "J_closed", "J_mc", "J_se", "hjb_residual", "pass"].map(String::from));
    if heston {
        header.extend(["feller_pass", "feller_margin"].map(String::from));
    }
    header.push("warnings".into());
    let mut out = header.join(",") + "\n";
    for row in &table.rows {
        let mut cells = vec![csv_number(row.alpha)];
        cells.extend((0..n).map(|i| csv_opt(row.weights.get(i).copied())));
        cells.extend([
            csv_opt(row.beta0),
            csv_opt(row.j_closed),
            csv_opt(row.j_mc),
            csv_opt(row.j_se),
            csv_opt(row.hjb_residual),
            row.pass().to_string(),
        ]);
        if heston {
            cells.push(row.feller.map(|f| f.pass.to_string()).unwrap_or_default());
            cells.push(csv_opt(row.feller.map(|f| f.margin)));
        }
        cells.push(row_warnings(row).join(";"));
        out += &(cells.join(",") + "\n");
    }
    out
}

fn row_warnings(row: &alpha_merton::ComparisonRow) -> Vec<&'static str> {
    let mut w = Vec::new();
    if row.se_too_wide {
        w.push("se_too_wide");
    }
    if row.short_horizon_warning {
        w.push("short_horizon");
    }
    if !row.tail_exact && row.error.is_none() {
        w.push("approximate_tail");
    }
    if row.flagged_paths > 0 {
        w.push("flagged_paths");
    }
    if row.feller.is_some_and(|f| !f.pass) {
        w.push("feller_violated");
    }
    w
}

fn verify_text(table: &ComparisonTable, cfg: &ExperimentConfig) -> String {
    let sim = cfg.sim.as_ref().unwrap();
    let mut s = String::new();
    let _ = writeln!(s, "{VERSION}  verify  market={}", table.market);
    let _ = writeln!(
        s,
        "rho={}  a0={}  T={}  dt={}  n_paths={}  seed={}  scheme={:?}",
        cfg.rho, cfg.a0, sim.horizon, sim.dt, sim.n_paths, sim.seed, sim.scheme
    );
    let _ = writeln!(
        s,
        "{:>6} {:>24} {:>14} {:>14} {:>14} {:>11} {:>11} {:>5}",
        "alpha", "weights", "beta0", "J_closed", "J_mc", "J_se", "hjb_rel", "pass"
    );
    let fmt = |x: Option<f64>, p: usize| x.map_or("-".to_string(), |v| format!("{v:.p$}"));
    let fmt_e = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2e}"));
    for row in &table.rows {
        let weights: Vec<String> = row.weights.iter().map(|w| format!("{w:.4}")).collect();
        let _ = writeln!(
            s,
            "{:>6.3} {:>24} {:>14} {:>14} {:>14} {:>11} {:>11} {:>5}",
            row.alpha,
            weights.join(" "),
            fmt(row.beta0, 6),
            fmt(row.j_closed, 6),
            fmt(row.j_mc, 6),
            fmt_e(row.j_se),
            fmt_e(row.hjb_residual),
            if row.pass() { "ok" } else { "FAIL" }
        );
        if let Some(f) = row.feller {
            let _ = writeln!(s, "       feller: pass={} margin={:.6}", f.pass, f.margin);
        }
        if row.truncation_fraction > 0.0 || row.flagged_paths > 0 {
            let _ = writeln!(
                s,
                "       truncation fraction {:.3e}, flagged paths {}",
                row.truncation_fraction, row.flagged_paths
            );
        }
        let warnings = row_warnings(row);
        if !warnings.is_empty() {
            let _ = writeln!(s, "       warnings: {}", warnings.join(", "));
        }
        if let Some(e) = &row.error {
            let _ = writeln!(s, "       error: {e}");
        }
        if let (Some(j), Some(mc), Some(se)) = (row.j_closed, row.j_mc, row.j_se) {
            if row.mc_pass == Some(false) {
                let _ = writeln!(s, "       |J_mc - J_closed| = {:.3e} > 3 SE = {:.3e}", (mc - j).abs(), 3.0 * se);
            }
        }
    }
    let passed = table.rows.iter().filter(|r| r.pass()).count();
    let _ = writeln!(s, "{passed}/{} rows pass", table.rows.len());
    s
}

fn ensemble_csv(e: &PathEnsemble) -> String {
    let mut out = String::from("path_id,time");
    for i in 1..=e.dim() {
        let _ = write!(out, ",state_{i}");
    }
    out.push('\n');
    for p in 0..e.n_paths() {
        let id = e.path_ids()[p];
        for (t, &time) in e.times().iter().enumerate() {
            let _ = write!(out, "{id},{}", csv_number(time));
            for v in e.state(p, t) {
                let _ = write!(out, ",{}", csv_number(*v));
            }
            out.push('\n');
        }
    }
    out
}

fn export_ensembles(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let sim = cfg.require_sim()?;
    for alpha in cfg.interpretations()? {
        let policy = solve_policy(&cfg.market, cfg.rho, alpha).map_err(Failure::from_core)?;
        let e = simulate_wealth(&cfg.market, alpha, &policy, cfg.a0, sim).map_err(Failure::from_core)?;
        let stem = format!("ensemble_alpha_{}", alpha.alpha());
        if cfg.outputs.ensemble_csv {
            write_file(dir, &format!("{stem}.csv"), ensemble_csv(&e).as_bytes())?;
        }
        if cfg.outputs.ensemble_summary {
            let mut buf = Vec::new();
            e.summary().write_binary(&mut buf).expect("in-memory write");
            write_file(dir, &format!("{stem}.ames"), &buf)?;
        }
    }
    Ok(())
}

pub fn verify(g: &Global) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let sim = cfg.require_sim()?;
    let alphas = cfg.interpretations()?;
    let table = compare_interpretations(&cfg.market, &alphas, cfg.rho, cfg.a0, sim).map_err(Failure::from_core)?;
    let dir = out_dir(g, Some(&cfg)).unwrap_or_else(|| PathBuf::from("."));
    let heston = matches!(cfg.market, Market::Heston(_));
    let report = verify_text(&table, &cfg);
    write_file(&dir, "verify.csv", verify_csv(&table, heston).as_bytes())?;
    write_file(&dir, "verify.txt", report.as_bytes())?;
    if cfg.outputs.ensemble_csv || cfg.outputs.ensemble_summary {
        export_ensembles(&cfg, &dir)?;
    }
    print!("{report}");
    let failed: Vec<String> = table
        .rows
        .iter()
        .filter(|r| !r.pass())
        .map(|r| r.alpha.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!("rows failed for alpha = {}", failed.join(", "))))
    }
}

fn weights_at_reference(market: &Market, policy: &Policy) -> alpha_merton::Result<Vec<f64>> {
    match (policy.constant_weights(), market) {
        (Some(w), _) => Ok(w),
        (None, Market::Factor(m)) => Ok(vec![policy.rule.weight_at(m.x0)?]),
        (None, Market::Heston(m)) => Ok(vec![policy.rule.weight_at(m.v0)?]),
        (None, Market::ConstantVol(_)) => unreachable!("constant-vol policies have constant weights"),
    }
}

pub fn plotdata(g: &Global) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let dir = out_dir(g, Some(&cfg)).unwrap_or_else(|| PathBuf::from("."));
    let core = |e| Failure::from_core(e);

    let mut sweep = String::new();
    for k in 0..ALPHA_SWEEP_POINTS {
        let alpha = Interpretation::new(k as f64 / (ALPHA_SWEEP_POINTS - 1) as f64).unwrap();
        let policy = solve_policy(&cfg.market, cfg.rho, alpha).map_err(core)?;
        let w = weights_at_reference(&cfg.market, &policy).map_err(core)?;
        if k == 0 {
            sweep += "alpha";
            for i in 1..=w.len() {
                let _ = write!(sweep, ",weight_{i}");
            }
            sweep.push('\n');
        }
        sweep += &csv_number(alpha.alpha());
        for v in w {
            let _ = write!(sweep, ",{}", csv_number(v));
        }
        sweep.push('\n');
    }
    write_file(&dir, "alpha_weight.csv", sweep.as_bytes())?;
    let mut written = vec!["alpha_weight.csv"];

    if let Market::Heston(m) = &cfg.market {
        let mut csv = String::from("alpha,v,pi_star,pi_times_v\n");
        let (lo, hi, n) = HESTON_GRID;
        for alpha in cfg.interpretations()? {
            let policy = solve_heston(m, cfg.rho, alpha).map_err(core)?;
            for v in geometric(lo, hi, n) {
                let pi = policy.rule.weight_at(v).map_err(core)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    csv_number(alpha.alpha()),
                    csv_number(v),
                    csv_number(pi),
                    csv_number(pi * v)
                );
            }
        }
        write_file(&dir, "heston_policy.csv", csv.as_bytes())?;
        written.push("heston_policy.csv");
    }

    if let Some(sim) = &cfg.sim {
        let alpha = cfg.interpretations()?[0];
        let policy = solve_policy(&cfg.market, cfg.rho, alpha).map_err(core)?;
        let study = perturbation_study(&cfg.market, alpha, &policy, &cfg.perturbation_deltas, sim, cfg.rho, cfg.a0)
            .map_err(core)?;
        let mut csv = String::from("alpha,delta,utility,standard_error\n");
        for p in &study.points {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                csv_number(alpha.alpha()),
                csv_number(p.delta),
                csv_number(p.estimate.point_estimate),
                csv_number(p.estimate.standard_error)
            );
        }
        write_file(&dir, "perturbation.csv", csv.as_bytes())?;
        written.push("perturbation.csv");
    }
    for name in written {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}
