use std::io::Write;

use excursion_core::field::BuiltModel;
use excursion_core::geometry::{enumerate_faces, Face, RectDomain, MAX_ENUM_DIM};
use excursion_core::mc::{mc_run, McReport, McSpec};
use excursion_core::mec::{
    excursion_prob_mu, laplace_closed_form, laplace_inputs, mean_euler_characteristic, Method, MecResult,
};
use excursion_core::quad::QuadSpec;
use excursion_core::validation::{validate, ValidationReport, ValidationSpec};
use excursion_core::Error;
use serde_json::json;

use crate::config::{RunConfig, RunMethod};
use crate::CliError;

/// Everything a command needs, resolved from config and flags.
pub struct Run {
    pub config: RunConfig,
    pub model: BuiltModel,
    pub domain: RectDomain,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self, Error> {
        let domain = config.domain()?;
        let model = config.field.build()?;
        if model.as_model().dim() != domain.dim() {
            return Err(Error::Config(format!(
                "field has dimension {} but the domain has {}",
                model.as_model().dim(),
                domain.dim()
            )));
        }
        Ok(Self { config, model, domain })
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn braces<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let v: Vec<String> = items.into_iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", v.join(","))
}

pub fn faces(domain: &RectDomain, out: &mut dyn Write) -> Result<(), CliError> {
    if domain.dim() > MAX_ENUM_DIM {
        return Err(Error::Capability(format!(
            "face enumeration supports dimension up to {MAX_ENUM_DIM}, got {}",
            domain.dim()
        ))
        .into());
    }
    for face in enumerate_faces(domain) {
        let sigma = braces(face.sigma().iter().map(|j| j + 1));
        let eps = braces(face.epsilon().iter().map(|(j, b)| format!("{}:{b}", j + 1)));
        let cone = braces(face.outward_cone().constraints.iter().map(|(j, s)| {
            format!("y{}{}0", j + 1, if *s > 0 { ">=" } else { "<=" })
        }));
        writeln!(out, "{}\tk={}\tsigma={sigma}\tepsilon={eps}\tcone={cone}", face.label(), face.k())?;
    }
    Ok(())
}

fn analytic_rows(run: &Run, method: Method, levels: &[f64], spec: &QuadSpec) -> Result<Vec<MecResult>, Error> {
    let model = run.model.as_model();
    let seed = run.config.seed;
    match method {
        Method::MuApprox => levels.iter().map(|&u| excursion_prob_mu(model, &run.domain, u, spec)).collect(),
        Method::MeanEc => levels
            .iter()
            .map(|&u| mean_euler_characteristic(model, &run.domain, u, spec, seed))
            .collect(),
        Method::Laplace => {
            let inputs = laplace_inputs(model, &run.domain)?;
            levels
                .iter()
                .map(|&u| laplace_closed_form(model, &run.domain, u, &inputs, seed))
                .collect()
        }
    }
}

/// One CSV row per level: level, method, total, one column per face, err_est.
pub fn compute(run: &Run, out: &mut dyn Write, report: Option<&mut dyn Write>) -> Result<(), CliError> {
    let levels = run.config.levels()?;
    let method = match run.config.method()? {
        RunMethod::Mc => return mc(run, out, report),
        RunMethod::Analytic(m) => m,
    };
    let spec = run.config.quad_spec()?;
    let rows = analytic_rows(run, method, &levels, &spec)?;
    if run.domain.dim() > MAX_ENUM_DIM {
        return Err(Error::Capability("too many faces to tabulate".into()).into());
    }
    let faces: Vec<Face> = enumerate_faces(&run.domain);

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["level".to_string(), "method".into(), "total".into()];
    header.extend(faces.iter().map(|f| f.label()));
    header.push("err_est".into());
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![num(r.u), method.to_string(), num(r.total)];
        rec.extend(faces.iter().map(|f| num(r.contribution(f).unwrap_or(0.0))));
        rec.push(num(r.err_est));
        w.write_record(&rec)?;
    }
    w.flush()?;
    for r in &rows {
        for warning in &r.warnings {
            eprintln!("warning: u = {}: {warning}", r.u);
        }
    }

    if let Some(rep) = report {
        let doc = json!({
            "command": "compute",
            "method": method.to_string(),
            "seed": run.config.seed,
            "rows": rows.iter().map(|r| json!({
                "level": r.u,
                "total": r.total,
                "err_est": r.err_est,
                "per_face": r.per_face.iter().map(|c| json!({
                    "face": c.face.label(),
                    "value": c.value,
                    "err_est": c.err_est,
                })).collect::<Vec<_>>(),
                "warnings": r.warnings,
            })).collect::<Vec<_>>(),
        });
        serde_json::to_writer_pretty(&mut *rep, &doc).map_err(std::io::Error::other)?;
        writeln!(rep)?;
    }
    Ok(())
}

fn mc_report(run: &Run) -> Result<McReport, Error> {
    let levels = run.config.levels()?;
    let mc = &run.config.mc;
    if mc.reps < 100 {
        return Err(Error::Config(format!("Monte Carlo needs at least 100 replicates, got {}", mc.reps)));
    }
    let spec = McSpec {
        points_per_axis: mc.grid,
        reps: mc.reps,
        seed: run.config.seed,
        dual_resolution: mc.dual_resolution,
        euler: run.domain.dim() <= 3,
    };
    mc_run(run.model.as_model(), &run.domain, &levels, &spec)
}

pub fn mc(run: &Run, out: &mut dyn Write, report: Option<&mut dyn Write>) -> Result<(), CliError> {
    let r = mc_report(run)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "level",
        "p_hat",
        "stderr",
        "mean_chi",
        "chi_stderr",
        "grid",
        "reps",
        "p_hat_fine",
        "stderr_fine",
        "fine_grid",
        "bias_flag",
    ])?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let fine = r.fine_points_per_axis.map(|g| g.to_string()).unwrap_or_default();
    for l in &r.levels {
        w.write_record([
            num(l.u),
            num(l.p_hat),
            num(l.stderr),
            opt(l.mean_chi),
            opt(l.chi_stderr),
            r.points_per_axis.to_string(),
            r.reps.to_string(),
            num(l.p_hat_fine),
            num(l.stderr_fine),
            fine.clone(),
            l.bias_flag.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(rep) = report {
        let doc = json!({
            "command": "mc",
            "seed": run.config.seed,
            "grid": r.points_per_axis,
            "fine_grid": r.fine_points_per_axis,
            "reps": r.reps,
            "rows": r.levels.iter().map(|l| json!({
                "level": l.u,
                "p_hat": l.p_hat,
                "stderr": l.stderr,
                "p_hat_fine": l.p_hat_fine,
                "stderr_fine": l.stderr_fine,
                "bias_flag": l.bias_flag,
                "mean_chi": l.mean_chi,
                "chi_stderr": l.chi_stderr,
            })).collect::<Vec<_>>(),
        });
        serde_json::to_writer_pretty(&mut *rep, &doc).map_err(std::io::Error::other)?;
        writeln!(rep)?;
    }
    Ok(())
}

pub fn validate_cmd(run: &Run, out: &mut dyn Write) -> Result<ValidationReport, CliError> {
    let spec = ValidationSpec {
        seed: run.config.seed,
        ..ValidationSpec::default()
    };
    let report = validate(run.model.as_model(), &run.domain, &spec);
    for c in &report.checks {
        let status = match (c.passed, c.informational) {
            (true, _) => "PASS",
            (false, true) => "INFO",
            (false, false) => "FAIL",
        };
        write!(
            out,
            "{status:<4}  {:<12}  {:<28}  measured={:<12.4e}  tol={:.1e}",
            c.suite, c.name, c.measured, c.tolerance
        )?;
        if !c.detail.is_empty() {
            write!(out, "  {}", c.detail)?;
        }
        writeln!(out)?;
    }
    let failed = report.failures().count();
    writeln!(out, "{} checks, {failed} failed", report.checks.len())?;
    Ok(report)
}
