use crate::config::RunConfig;
use crate::{classify, Cli, CliError, Command};
use anyhow::{anyhow, Context};
use crystalflow::dynamics::{plane_current, SymbolTable};
use crystalflow::estimator::{
    compare, AnalyticTargets, EnsembleResult, VerdictReport,
};
use crystalflow::halfspace::{analytic_report_halfspace, HalfSpaceEvolver};
use crystalflow::limits::{
    analytic_report, window_entries, LimitReport, WindowEntry,
};
use crystalflow::measures::{split_seed, LayoutSampler};
use crystalflow::snapshot;
use crystalflow::spectral::{validate_conditions, ConditionReport, DispersionData, SpectralOptions};
use crystalflow::{Dispersion, Real};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

type CliResult = Result<(), CliError>;

pub fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Compare { results, limits } => return cmd_compare(&cli, results, limits),
        Command::Current { input, axis, time } => {
            return cmd_current(&cli, input, *axis, *time)
        }
        Command::Evolve { input, time, output } => {
            return cmd_evolve(&cli, input, *time, output.clone())
        }
        _ => {}
    }
    let config = load_config(&cli)?;
    install_workers(&cli, &config);
    match &cli.command {
        Command::Dispersion => cmd_dispersion(&cli, &config),
        Command::Limits => cmd_limits(&cli, &config),
        Command::Sample { output, index } => cmd_sample(&cli, &config, output.clone(), *index),
        Command::Simulate => cmd_simulate(&cli, &config),
        Command::Halfspace => cmd_halfspace(&cli, &config),
        _ => unreachable!(),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config(anyhow!("--config PATH is required")))?;
    RunConfig::load(path).map_err(CliError::config)
}

fn install_workers(cli: &Cli, config: &RunConfig) {
    let workers = cli.workers.unwrap_or(config.ensemble.workers);
    if workers > 0 {
        // ignore failure if a pool already exists (tests, repeated calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn out_dir(cli: &Cli, config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))
        .map_err(CliError::other)?;
    Ok(dir)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value)
        .context("serializing JSON")
        .map_err(CliError::other)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::other)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(CliError::other)?;
    Ok(std::io::BufWriter::new(file))
}

fn wants(config: &RunConfig, format: &str) -> bool {
    config.output.formats.iter().any(|f| f == format)
}

fn build_dispersion(config: &RunConfig, g: usize) -> Result<Dispersion, CliError> {
    let v = config.interaction().map_err(CliError::config)?;
    DispersionData::build(&v, g, SpectralOptions::default()).map_err(classify)
}

// ---------------------------------------------------------------------------
// dispersion

#[derive(Serialize)]
struct ConditionsArtifact {
    generated_unix_ms: u64,
    config_echo: RunConfig,
    report: ConditionReport,
    max_group_velocity: f64,
}

fn cmd_dispersion(cli: &Cli, config: &RunConfig) -> CliResult {
    let dir = out_dir(cli, config)?;
    let v = config.interaction().map_err(CliError::config)?;
    let dispersion = build_dispersion(config, config.grid.g)?;
    let report = validate_conditions(&v, &dispersion);

    if wants(config, "csv") {
        let mut out = csv_writer(&dir.join("bands.csv"))?;
        let d = config.model.d;
        let mut header: Vec<String> = (1..=d).map(|a| format!("theta_{a}")).collect();
        header.extend(["sigma".into(), "omega".into(), "r".into()]);
        header.extend((1..=d).map(|a| format!("v_{a}")));
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for (idx, point) in dispersion.iter_points() {
            let theta = dispersion.grid().theta::<Real>(idx);
            for (sigma, band) in point.bands.iter().enumerate() {
                let mut row: Vec<String> = theta.iter().map(|t| t.to_string()).collect();
                row.push((sigma + 1).to_string());
                row.push(band.omega.to_string());
                row.push(band.multiplicity.to_string());
                row.extend(band.velocity.iter().map(|v| v.to_string()));
                writeln!(out, "{}", row.join(",")).map_err(io_err)?;
            }
        }
    }
    if wants(config, "json") {
        write_json(
            &dir.join("conditions.json"),
            &ConditionsArtifact {
                generated_unix_ms: now_ms(),
                config_echo: config.clone(),
                report: report.clone(),
                max_group_velocity: dispersion.max_velocity(),
            },
        )?;
    }
    if !report.e3_ok {
        return Err(CliError::validation(anyhow!(
            "E3 violated: min symbol eigenvalue {} at theta = {:?}",
            report.min_symbol_eigenvalue,
            report.min_symbol_eigenvalue_theta
        )));
    }
    println!(
        "dispersion: {} bands tabulated on a {}^{} grid; C0 suspected: {}, E6 divergent: {}",
        dispersion.iter_points().map(|(_, p)| p.bands.len()).max().unwrap_or(0),
        config.grid.g,
        config.model.d,
        report.c0_suspected,
        report.e6_divergent,
    );
    Ok(())
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::other(e.into())
}

// ---------------------------------------------------------------------------
// limits

#[derive(Serialize, Deserialize)]
pub struct LimitsArtifact {
    pub generated_unix_ms: u64,
    pub config_echo: RunConfig,
    pub report: LimitReport,
    pub q_window: Vec<WindowEntry>,
}

type DiagRows = Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>;

fn compute_limits(config: &RunConfig) -> Result<(LimitsArtifact, DiagRows), CliError> {
    let v = config.interaction().map_err(CliError::config)?;
    let layout = config.reservoir_layout(&v).map_err(CliError::config)?;
    let fine = build_dispersion(config, config.grid.g)?;
    let coarse = build_dispersion(config, config.grid.g / 2)?;
    let (report, cov) = if config.layout.half_space {
        analytic_report_halfspace(&v, &layout, &fine, &coarse, &config.grid.x1_values)
            .map_err(classify)?
    } else {
        analytic_report(&v, &layout, &fine, &coarse).map_err(classify)?
    };
    let artifact = LimitsArtifact {
        generated_unix_ms: now_ms(),
        config_echo: config.clone(),
        report,
        q_window: window_entries(&cov, config.grid.window),
    };
    Ok((artifact, cov.diagonal_rows()))
}

fn cmd_limits(cli: &Cli, config: &RunConfig) -> CliResult {
    let dir = out_dir(cli, config)?;
    let (artifact, diag_rows) = compute_limits(config)?;

    if wants(config, "csv") {
        let mut out = csv_writer(&dir.join("qhat_diag.csv"))?;
        let d = config.model.d;
        let n = config.model.n;
        let mut header: Vec<String> = (1..=d).map(|a| format!("theta_{a}")).collect();
        header.extend((1..=n).map(|c| format!("q00_{c}")));
        header.extend((1..=n).map(|c| format!("q11_{c}")));
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for (theta, q00, q11) in &diag_rows {
            let mut row: Vec<String> = theta.iter().map(|t| t.to_string()).collect();
            row.extend(q00.iter().map(|v| v.to_string()));
            row.extend(q11.iter().map(|v| v.to_string()));
            writeln!(out, "{}", row.join(",")).map_err(io_err)?;
        }
    }
    if wants(config, "csv") {
        let n2 = 2 * config.model.n;
        let mut out = csv_writer(&dir.join("q_window.csv"))?;
        let d = config.model.d;
        let mut header: Vec<String> = (1..=d).map(|a| format!("x_{a}")).collect();
        header.extend(["row".into(), "col".into(), "value".into()]);
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for entry in &artifact.q_window {
            for r in 0..n2 {
                for c in 0..n2 {
                    let mut row: Vec<String> =
                        entry.x.iter().map(|x| x.to_string()).collect();
                    row.push(r.to_string());
                    row.push(c.to_string());
                    row.push(entry.q[r * n2 + c].to_string());
                    writeln!(out, "{}", row.join(",")).map_err(io_err)?;
                }
            }
        }

        if let Some(profile) = &artifact.report.halfspace_profile {
            let mut out = csv_writer(&dir.join("profile.csv"))?;
            writeln!(out, "x_1,axis,J_analytic,J_empirical,SE").map_err(io_err)?;
            for entry in &profile.entries {
                for (axis0, value) in entry.current.iter().enumerate() {
                    writeln!(out, "{},{},{},,", entry.x1, axis0 + 1, value).map_err(io_err)?;
                }
            }
        }
    }
    if wants(config, "json") {
        write_json(&dir.join("limits.json"), &artifact)?;
    }
    println!(
        "limits: J = {:?} (error est {:?}), K = {}",
        artifact.report.current,
        artifact.report.current_error_estimate,
        artifact.report.kinetic_temperature
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sample / evolve / current

fn cmd_sample(cli: &Cli, config: &RunConfig, output: Option<PathBuf>, index: u64) -> CliResult {
    let dir = out_dir(cli, config)?;
    let v = config.interaction().map_err(CliError::config)?;
    let layout = config.reservoir_layout(&v).map_err(CliError::config)?;
    let shape = config.lattice_shape().map_err(CliError::config)?;
    let sampler = LayoutSampler::new(&layout, &shape).map_err(classify)?;
    let master = cli.seed.unwrap_or(config.ensemble.seed);
    let field = sampler.draw(split_seed(master, index)).map_err(classify)?;
    let path = output.unwrap_or_else(|| dir.join("sample.crfs"));
    snapshot::save(&field, &path).map_err(classify)?;
    println!("sample: wrote {} (member {index}, seed {master})", path.display());
    Ok(())
}

fn cmd_evolve(cli: &Cli, input: &Path, time: f64, output: Option<PathBuf>) -> CliResult {
    let config = load_config(cli)?;
    install_workers(cli, &config);
    let dir = out_dir(cli, &config)?;
    let v = config.interaction().map_err(CliError::config)?;
    let field = snapshot::load::<Real>(input).map_err(classify)?;
    let evolved = if field.half_space() {
        let evolver = HalfSpaceEvolver::new(&v, field.shape()).map_err(classify)?;
        evolver.evolve(&field, time).map_err(classify)?
    } else {
        let table = SymbolTable::new(&v, field.shape()).map_err(classify)?;
        crystalflow::dynamics::evolve(&field, &table, time).map_err(classify)?
    };
    let path = output.unwrap_or_else(|| dir.join("evolved.crfs"));
    snapshot::save(&evolved, &path).map_err(classify)?;
    println!("evolve: t = {time}, wrote {}", path.display());
    Ok(())
}

fn cmd_current(cli: &Cli, input: &Path, axis: usize, time: f64) -> CliResult {
    let config = load_config(cli)?;
    let dir = out_dir(cli, &config)?;
    let v = config.interaction().map_err(CliError::config)?;
    let field = snapshot::load::<Real>(input).map_err(classify)?;
    if axis == 0 || axis > field.shape().dim() {
        return Err(CliError::config(anyhow!(
            "axis {axis} out of range 1..={}",
            field.shape().dim()
        )));
    }
    let mut out = csv_writer(&dir.join("current.csv"))?;
    writeln!(out, "t,axis,plane,J,SE").map_err(io_err)?;
    for cut in 0..field.shape().dims()[axis - 1] {
        let j = if field.half_space() {
            crystalflow::halfspace::halfspace_longitudinal_current(&field, &v, cut)
                .map_err(classify)?
        } else {
            plane_current(&field, &v, axis - 1, cut).map_err(classify)?
        };
        writeln!(out, "{time},{axis},{cut},{j},").map_err(io_err)?;
    }
    println!("current: wrote {}", dir.join("current.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate / halfspace / compare

#[derive(Serialize, Deserialize)]
pub struct ResultsArtifact {
    pub generated_unix_ms: u64,
    pub config_echo: RunConfig,
    pub result: EnsembleResult,
    pub verdict: Option<VerdictReport>,
}

/// Assemble the analytic targets matching an ensemble result.
fn targets_for(
    result: &EnsembleResult,
    limits: &LimitsArtifact,
    functional: bool,
) -> AnalyticTargets {
    if result.half_space {
        let profile = limits.report.halfspace_profile.as_ref().map(|p| {
            p.entries
                .iter()
                .flat_map(|e| {
                    result.profile_currents.first().into_iter().flat_map(move |probes| {
                        probes
                            .iter()
                            .filter(move |probe| probe.x1 == e.x1)
                            .map(move |probe| {
                                (probe.axis, e.x1, e.current[probe.axis - 1])
                            })
                    })
                })
                .collect::<Vec<_>>()
        });
        AnalyticTargets {
            profile,
            longitudinal_zero: true,
            gaussianity: functional,
            ..Default::default()
        }
    } else {
        let current = result.currents.first().map(|probes| {
            probes
                .iter()
                .map(|p| limits.report.current[p.axis - 1])
                .collect()
        });
        let n2 = 2 * limits.config_echo.model.n;
        let covariance = Some(
            result
                .pair_offsets
                .iter()
                .filter_map(|offset| {
                    limits
                        .q_window
                        .iter()
                        .find(|w| &w.x == offset)
                        .map(|w| (offset.clone(), w.q.clone()))
                })
                .collect::<Vec<(Vec<i64>, Vec<f64>)>>(),
        )
        .filter(|v: &Vec<(Vec<i64>, Vec<f64>)>| !v.is_empty() && n2 > 0);
        AnalyticTargets {
            current,
            kinetic: Some(limits.report.kinetic_temperature),
            covariance,
            gaussianity: functional,
            ..Default::default()
        }
    }
}

fn run_and_compare(cli: &Cli, config: &RunConfig, half_space: bool) -> CliResult {
    if config.layout.half_space != half_space {
        return Err(CliError::config(anyhow!(
            "layout.half_space = {} does not match the subcommand (use `{}`)",
            config.layout.half_space,
            if config.layout.half_space { "halfspace" } else { "simulate" }
        )));
    }
    let dir = out_dir(cli, config)?;
    let v = config.interaction().map_err(CliError::config)?;
    let layout = config.reservoir_layout(&v).map_err(CliError::config)?;
    let ensemble = config
        .ensemble_config(cli.seed, cli.override_horizon)
        .map_err(CliError::config)?;

    let (limits, _) = compute_limits(config)?;
    let dispersion_vmax = {
        let disp = build_dispersion(config, config.grid.g.min(256))?;
        disp.max_velocity()
    };
    let result = crystalflow::estimator::run_ensemble(&v, &layout, &ensemble, dispersion_vmax)
        .map_err(classify)?;

    let last = result.times.len() - 1;
    let verdict = if config.compare.enabled {
        let targets = targets_for(&result, &limits, ensemble.functional_probe);
        Some(
            compare(&result, last, &targets, config.policy())
                .map_err(classify)?,
        )
    } else {
        None
    };

    let artifact = ResultsArtifact {
        generated_unix_ms: now_ms(),
        config_echo: config.clone(),
        result,
        verdict,
    };
    if wants(config, "json") {
        write_json(&dir.join("results.json"), &artifact)?;
        write_json(&dir.join("limits.json"), &limits)?;
    }
    if wants(config, "csv") {
        write_results_csv(&dir, &artifact, &limits)?;
    }

    if let Some(verdict) = &artifact.verdict {
        for row in &verdict.rows {
            println!(
                "{}: empirical {} ± {} vs analytic {} ({})",
                row.name,
                row.empirical,
                row.se,
                row.analytic,
                if row.pass { "pass" } else { "FAIL" }
            );
        }
        if !verdict.pass {
            return Err(CliError::comparison(anyhow!(
                "{} of {} observables outside tolerance",
                verdict.rows.iter().filter(|r| !r.pass).count(),
                verdict.rows.len()
            )));
        }
    }
    println!(
        "{}: {} samples, t = {:?}, done",
        if half_space { "halfspace" } else { "simulate" },
        artifact.result.samples,
        artifact.result.times
    );
    Ok(())
}

fn cmd_simulate(cli: &Cli, config: &RunConfig) -> CliResult {
    run_and_compare(cli, config, false)
}

fn cmd_halfspace(cli: &Cli, config: &RunConfig) -> CliResult {
    run_and_compare(cli, config, true)
}

fn write_results_csv(dir: &Path, artifact: &ResultsArtifact, limits: &LimitsArtifact) -> CliResult {
    let result = &artifact.result;
    let mut out = csv_writer(&dir.join("results.csv"))?;
    writeln!(out, "observable,time,axis,x1,offset,entry,estimate,se,analytic").map_err(io_err)?;
    for (ti, &t) in result.times.iter().enumerate() {
        for probe in &result.currents[ti] {
            let analytic = limits.report.current.get(probe.axis - 1).copied();
            writeln!(
                out,
                "current,{t},{},,,,{},{},{}",
                probe.axis,
                probe.estimate.mean,
                probe.estimate.se,
                analytic.map_or(String::new(), |a| a.to_string())
            )
            .map_err(io_err)?;
        }
        for probe in &result.longitudinal_currents[ti] {
            writeln!(
                out,
                "longitudinal_current,{t},1,{},,,{},{},0",
                probe.cuts[0], probe.estimate.mean, probe.estimate.se
            )
            .map_err(io_err)?;
        }
        for probe in &result.profile_currents[ti] {
            let analytic = limits.report.halfspace_profile.as_ref().and_then(|p| {
                p.entries
                    .iter()
                    .find(|e| e.x1 == probe.x1)
                    .map(|e| e.current[probe.axis - 1])
            });
            writeln!(
                out,
                "profile_current,{t},{},{},,,{},{},{}",
                probe.axis,
                probe.x1,
                probe.estimate.mean,
                probe.estimate.se,
                analytic.map_or(String::new(), |a| a.to_string())
            )
            .map_err(io_err)?;
        }
        for (x1, est) in &result.wall_energy[ti] {
            writeln!(out, "wall_energy,{t},,{x1},,,{},{},", est.mean, est.se).map_err(io_err)?;
        }
        if let Some(k) = &result.kinetic[ti] {
            writeln!(
                out,
                "kinetic,{t},,,,,{},{},{}",
                k.mean, k.se, limits.report.kinetic_temperature
            )
            .map_err(io_err)?;
        }
        if let Some(k) = &result.kurtosis[ti] {
            writeln!(out, "kurtosis,{t},,,,,{},{},3", k.kurtosis, k.se).map_err(io_err)?;
        }
        for (oi, offset) in result.pair_offsets.iter().enumerate() {
            let est = &result.covariance[ti][oi];
            let target = limits.q_window.iter().find(|w| &w.x == offset);
            for entry in 0..est.mean.len() {
                writeln!(
                    out,
                    "covariance,{t},,,{},{},{},{},{}",
                    offset
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                    entry,
                    est.mean[entry],
                    est.se[entry],
                    target.map_or(String::new(), |w| w.q[entry].to_string())
                )
                .map_err(io_err)?;
            }
        }
    }

    // half-space profile in the documented profile.csv column layout
    if let Some(profile) = &limits.report.halfspace_profile {
        let mut out = csv_writer(&dir.join("profile.csv"))?;
        writeln!(out, "x_1,axis,J_analytic,J_empirical,SE").map_err(io_err)?;
        let ti = result.times.len() - 1;
        for entry in &profile.entries {
            for (axis0, value) in entry.current.iter().enumerate() {
                let emp = result.profile_currents[ti]
                    .iter()
                    .find(|p| p.x1 == entry.x1 && p.axis == axis0 + 1);
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    entry.x1,
                    axis0 + 1,
                    value,
                    emp.map_or(String::new(), |p| p.estimate.mean.to_string()),
                    emp.map_or(String::new(), |p| p.estimate.se.to_string()),
                )
                .map_err(io_err)?;
            }
        }
    }
    Ok(())
}

fn cmd_compare(cli: &Cli, results_path: &Path, limits_path: &Path) -> CliResult {
    let results_text = std::fs::read_to_string(results_path)
        .with_context(|| format!("reading {}", results_path.display()))
        .map_err(CliError::other)?;
    let limits_text = std::fs::read_to_string(limits_path)
        .with_context(|| format!("reading {}", limits_path.display()))
        .map_err(CliError::other)?;
    let results: ResultsArtifact = serde_json::from_str(&results_text)
        .context("parsing results artifact")
        .map_err(CliError::config)?;
    let limits: LimitsArtifact = serde_json::from_str(&limits_text)
        .context("parsing limits artifact")
        .map_err(CliError::config)?;

    let config = &results.config_echo;
    let functional = results.result.kurtosis.iter().any(|k| k.is_some());
    let targets = targets_for(&results.result, &limits, functional);
    let last = results.result.times.len() - 1;
    let verdict = compare(&results.result, last, &targets, config.policy()).map_err(classify)?;

    let dir = out_dir(cli, config)?;
    write_json(
        &dir.join("verdict.json"),
        &serde_json::json!({
            "generated_unix_ms": now_ms(),
            "config_echo": config,
            "verdict": verdict,
        }),
    )?;
    for row in &verdict.rows {
        println!(
            "{}: empirical {} ± {} vs analytic {} ({})",
            row.name,
            row.empirical,
            row.se,
            row.analytic,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    if !verdict.pass {
        return Err(CliError::comparison(anyhow!("comparison failed")));
    }
    println!("compare: all {} observables within tolerance", verdict.rows.len());
    Ok(())
}
