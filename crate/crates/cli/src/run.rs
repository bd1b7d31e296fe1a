//! The scenario pipeline: validate, solve, extract the free boundary, run
//! the requested analyses and write CSVs plus a manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use obstacle_core::blowup::{blowup_ladder, BlowupLadder};
use obstacle_core::classifier::{
    auto_ladder, classify_point, normalize_at, smoothfit_report, write_diagnoses_csv, ClassifyError, ClassifyOptions,
    PointDiagnosis, PointLabel, RadiusLadder, SmoothFitReport, M_AGREEMENT, THETA_JUMP, UNRESOLVED_BAND,
};
use obstacle_core::closed_forms::ClosedForm;
use obstacle_core::coefficients::validate;
use obstacle_core::energetics::{energy_trace, EnergyTrace, TRUNCATION_SIGMAS};
use obstacle_core::finance::{exercise_boundary_report, ExerciseReport, FinanceError};
use obstacle_core::free_boundary::{extract, FreeBoundarySet, UtProbe};
use obstacle_core::grid::{Field, FieldSurface, GridSpec, Point};
use obstacle_core::lcp::{solve_parabolic, solve_with_data, SolveConfig, SolveError};
use obstacle_core::profile::{profile_for, PROFILE_TOL};

use crate::config::{ConfigError, Data, FinanceScenario, ManifestSection, PdeScenario, Resolved, ScenarioConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Hypothesis(_) => 3,
            RunError::NonConvergence(_) => 4,
            RunError::Io { .. } => 5,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        RunError::Io { path: path.to_path_buf(), source }
    }
}

fn solve_error(e: SolveError) -> RunError {
    match e {
        SolveError::NonConvergence { .. } => RunError::NonConvergence(e.to_string()),
        SolveError::Validation(msg) => RunError::Hypothesis(format!("[coefficients] {msg}")),
        SolveError::Config(msg) => ConfigError::new("[solver]", msg).into(),
        SolveError::Assembly { .. } => ConfigError::new("[grid]", e).into(),
        SolveError::NegativeData { .. } | SolveError::Data { .. } => ConfigError::new("[initial]/[boundary]", e).into(),
        SolveError::Coefficients(_) | SolveError::Grid(_) => ConfigError::new("[coefficients]", e).into(),
    }
}

fn finance_error(e: FinanceError) -> RunError {
    match e {
        FinanceError::Solve(s) => solve_error(s),
        FinanceError::ZeroRate => RunError::Hypothesis(format!("[finance] rate: {e}")),
        e => ConfigError::new("[finance]", e).into(),
    }
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), RunError> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| RunError::io(path, e))
}

/// Everything a run produced, for callers that want more than the files.
#[derive(Debug)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub outputs: Vec<String>,
    pub summary: Vec<(String, String)>,
    pub pde: Option<PdeOutcome>,
    pub finance: Option<FinanceOutcome>,
}

#[derive(Debug)]
pub struct PdeOutcome {
    pub field: Field,
    pub gamma: FreeBoundarySet,
    pub diagnoses: Vec<PointDiagnosis>,
    pub ladders: Vec<BlowupLadder>,
    pub traces: Vec<EnergyTrace>,
    pub smooth_fit: Option<SmoothFitReport>,
}

#[derive(Debug)]
pub struct FinanceOutcome {
    pub report: ExerciseReport,
    pub long: Option<ExerciseReport>,
}

struct Sink {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Sink {
    fn write(&mut self, file: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), RunError> {
        write_atomic(&self.dir.join(file), body)?;
        self.outputs.push(file.to_string());
        Ok(())
    }
}

/// Runs one scenario into `out_root/<name>`. `source` is recorded in the
/// manifest and supplies the default name.
pub fn run_scenario(cfg: &ScenarioConfig, source: &str, out_root: &Path) -> Result<RunOutcome, RunError> {
    let resolved = cfg.resolve()?;
    let solver = cfg.solver.to_config()?;
    let name = match &cfg.output.name {
        Some(n) => n.clone(),
        None => default_name(source),
    };
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(ConfigError::new("[output] name", format!("`{name}` is not a plain directory name")).into());
    }
    let dir = out_root.join(&name);
    fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
    let mut sink = Sink { dir: dir.clone(), outputs: Vec::new() };
    let mut summary = Vec::new();
    let mut tolerances = BTreeMap::new();
    tolerances.insert("solver_tol".to_string(), solver.tol);
    tolerances.insert("theta_jump".to_string(), THETA_JUMP);
    tolerances.insert("unresolved_band".to_string(), UNRESOLVED_BAND);
    tolerances.insert("m_agreement".to_string(), M_AGREEMENT);
    tolerances.insert("truncation_sigmas".to_string(), TRUNCATION_SIGMAS);
    tolerances.insert("profile_tol".to_string(), PROFILE_TOL);

    let (pde, finance) = match resolved {
        Resolved::Pde(p) => {
            let out = run_pde(cfg, &p, &solver, &mut sink, &mut summary, &mut tolerances)?;
            (Some(out), None)
        }
        Resolved::Finance(f) => (None, Some(run_finance(&f, &solver, &mut sink, &mut summary)?)),
    };

    sink.write("summary.csv", |w| {
        writeln!(w, "key,value")?;
        for (k, v) in &summary {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    })?;

    let mut echo = cfg.clone();
    echo.output.name = Some(name.clone());
    echo.manifest = Some(ManifestSection {
        version: format!("obstacle-lab {} / obstacle-core {}", env!("CARGO_PKG_VERSION"), obstacle_core::VERSION),
        source: source.to_string(),
        outputs: sink.outputs.clone(),
        tolerances,
    });
    let text = echo.to_toml();
    sink.write("manifest.toml", |w| w.write_all(text.as_bytes()))?;
    log::info!("{name}: wrote {} files to {}", sink.outputs.len(), dir.display());
    Ok(RunOutcome { name, dir, outputs: sink.outputs, summary, pde, finance })
}

fn default_name(source: &str) -> String {
    let s = source.strip_prefix("demo:").unwrap_or(source);
    Path::new(s).file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn push(summary: &mut Vec<(String, String)>, key: impl Into<String>, value: impl ToString) {
    summary.push((key.into(), value.to_string()));
}

/// Nearest extracted point in the parabolic metric, within three cells.
fn snap(gamma: &FreeBoundarySet, g: &GridSpec, p: Point, key: &str) -> Result<Point, RunError> {
    let reach = 3.0 * g.h().max(g.tau().sqrt());
    let best = gamma
        .points
        .iter()
        .map(|q| (((q.x - p.x).powi(2) + (q.t - p.t).abs()).sqrt(), q))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((d, q)) if d <= reach => Ok(Point::new(q.x, q.t)),
        _ => {
            Err(ConfigError::new(key, format!("no free-boundary point within {reach:.3e} of ({}, {})", p.x, p.t))
                .into())
        }
    }
}

fn solve_pde(p: &PdeScenario, solver: &SolveConfig) -> Result<Field, RunError> {
    let g = &p.grid;
    match &p.data {
        Data::Expressions { initial, left, right } => solve_parabolic(&p.coeffs, g, initial, left, right, solver),
        Data::ClosedForm(form) => {
            let init: Vec<f64> = (0..g.nx).map(|i| form.eval(g.x(i), g.t_min)).collect();
            let edges: Vec<(f64, f64)> =
                (0..g.nt).map(|n| (form.eval(g.x_min, g.t(n)), form.eval(g.x_max, g.t(n)))).collect();
            solve_with_data(&p.coeffs, g, &init, |n| edges[n], solver)
        }
    }
    .map_err(solve_error)
}

fn analysis_error(key: &str, e: impl std::fmt::Display) -> RunError {
    ConfigError::new(key, e).into()
}

fn run_pde(
    cfg: &ScenarioConfig,
    p: &PdeScenario,
    solver: &SolveConfig,
    sink: &mut Sink,
    summary: &mut Vec<(String, String)>,
    tolerances: &mut BTreeMap<String, f64>,
) -> Result<PdeOutcome, RunError> {
    let report = validate(&p.coeffs, &p.grid).map_err(|e| ConfigError::new("[coefficients]", e))?;
    if let Some(msg) = report.failure() {
        return Err(RunError::Hypothesis(format!("[coefficients] {msg}")));
    }
    push(summary, "min_a", fmt(report.min_a()));
    push(summary, "min_f", fmt(report.min_f()));
    let u = solve_pde(p, solver)?;
    let g = *u.grid();
    push(summary, "min_u", fmt(u.min()));
    let gamma = extract(&u, &p.coeffs, cfg.analysis.zero_tol).map_err(|e| analysis_error("[analysis] zero_tol", e))?;
    tolerances.insert("zero_tol".into(), gamma.zero_tol);
    push(summary, "gamma_points", gamma.len());
    if cfg.output.write_field {
        sink.write("field.csv", |w| u.write_csv(w).map_err(io::Error::other))?;
    }
    if cfg.output.write_gamma {
        sink.write("gamma.csv", |w| gamma.write_csv(w))?;
    }

    let a = &cfg.analysis;
    let mut out = PdeOutcome {
        field: u.clone(),
        gamma,
        diagnoses: Vec::new(),
        ladders: Vec::new(),
        traces: Vec::new(),
        smooth_fit: None,
    };

    if let Some(sf) = &a.smooth_fit {
        tolerances.insert("ut_tol".into(), sf.ut_tol);
        let rep =
            smoothfit_report(&u, &out.gamma, &RadiusLadder::GridMultiples(sf.radius_multiples.clone()), sf.ut_tol)
                .map_err(|e| analysis_error("[analysis.smooth_fit]", e))?;
        let nr = rep.points.first().map_or(0, |p| p.jumps.len());
        sink.write("smoothfit.csv", |w| {
            write!(w, "t,x,slice")?;
            for k in 0..nr {
                write!(w, ",jump_r{}", k + 1)?;
            }
            writeln!(w)?;
            for p in &rep.points {
                write!(w, "{},{},{}", fmt(p.point.t), fmt(p.point.x), p.slice)?;
                for j in &p.jumps {
                    write!(w, ",{}", fmt(j.1))?;
                }
                writeln!(w)?;
            }
            Ok(())
        })?;
        push(summary, "smoothfit_global_max_jump", fmt(rep.global_max_jump));
        push(summary, "smoothfit_bad_slice_fraction", fmt(rep.bad_slice_fraction));
        let bad: Vec<String> = rep.bad_slices.iter().map(|n| fmt(g.t(*n))).collect();
        push(summary, "smoothfit_bad_slice_times", bad.join(";"));
        push(summary, "smoothfit_min_ut", fmt(rep.min_ut));
        push(summary, "smoothfit_monotone_in_time", rep.monotone_in_time);
        out.smooth_fit = Some(rep);
    }

    if let Some(e) = &a.energy {
        for (k, &[x, t]) in e.points.iter().enumerate() {
            let key = format!("[analysis.energy] points[{k}]");
            let p0 = Point::new(x, t);
            let norm = normalize_at(&u, &p.coeffs, p0).map_err(|err| analysis_error(&key, err))?;
            let times = match &e.times {
                Some(ts) => ts.clone(),
                None => auto_ladder(norm.field.grid(), 6).map_err(|err| analysis_error(&key, err))?,
            };
            let surf = FieldSurface::new(norm.field).map_err(|err| analysis_error(&key, err))?;
            let trace =
                energy_trace(&surf, Point::new(0.0, 0.0), &times, &e.phi_m).map_err(|err| analysis_error(&key, err))?;
            sink.write(&format!("energy_{k}.csv"), |w| trace.write_csv(w))?;
            push(summary, format!("energy_{k}_e0"), fmt(trace.e0));
            push(summary, format!("energy_{k}_max_increase"), fmt(trace.max_increase()));
            out.traces.push(trace);
        }
    }

    if let Some(b) = &a.blowup {
        let ref_box = GridSpec::new(-b.x_half, b.x_half, b.nx, b.t_min, b.t_max, b.nt)
            .map_err(|e| analysis_error("[analysis.blowup]", e))?;
        for (k, &[x, t]) in b.points.iter().enumerate() {
            let key = format!("[analysis.blowup] points[{k}]");
            let p0 = if b.snap { snap(&out.gamma, &g, Point::new(x, t), &key)? } else { Point::new(x, t) };
            let ladder = if b.normalize {
                let norm = normalize_at(&u, &p.coeffs, p0).map_err(|err| analysis_error(&key, err))?;
                let surf = FieldSurface::new(norm.field).map_err(|err| analysis_error(&key, err))?;
                blowup_ladder(&surf, Point::new(0.0, 0.0), &b.eps, &ref_box)
            } else {
                let surf = FieldSurface::new(u.clone()).map_err(|err| analysis_error(&key, err))?;
                blowup_ladder(&surf, p0, &b.eps, &ref_box)
            }
            .map_err(|err| analysis_error(&key, err))?;
            sink.write(&format!("ladder_{k}.csv"), |w| ladder.write_csv(w))?;
            push(summary, format!("ladder_{k}_point"), format!("{};{}", fmt(p0.x), fmt(p0.t)));
            push(summary, format!("ladder_{k}_defect_decreasing"), ladder.defect_strictly_decreasing());
            if let Some(r) = ladder.rungs.last() {
                push(summary, format!("ladder_{k}_final_label"), r.matched.label);
                push(summary, format!("ladder_{k}_final_distance"), fmt(r.matched.distance));
            }
            out.ladders.push(ladder);
        }
    }

    if let Some(c) = &a.classify {
        tolerances.insert("phi_tol".into(), c.phi_tol);
        tolerances.insert("tail_tol".into(), c.tail_tol);
        let probe = UtProbe::new(&u, out.gamma.zero_tol).map_err(|e| analysis_error("[analysis.classify]", e))?;
        let opts = ClassifyOptions {
            t_ladder: c.t_ladder.clone(),
            radii: c.radii.clone(),
            phi_tol: c.phi_tol,
            tail_tol: c.tail_tol,
            ladder_len: c.ladder_len,
        };
        for (k, &[x, t]) in c.points.iter().enumerate() {
            let key = format!("[analysis.classify] points[{k}]");
            let p0 = if c.snap { snap(&out.gamma, &g, Point::new(x, t), &key)? } else { Point::new(x, t) };
            let d = classify_point(&u, &probe, &p.coeffs, p0, &opts)
                .map_err(|err: ClassifyError| analysis_error(&key, err))?;
            push(summary, format!("point_{k}"), format!("{};{}", fmt(d.point.x), fmt(d.point.t)));
            push(summary, format!("point_{k}_label"), d.label);
            push(summary, format!("point_{k}_e0"), fmt(d.e0));
            if let Some(m) = d.m_hat {
                push(summary, format!("point_{k}_m_hat"), fmt(m));
            }
            push(summary, format!("point_{k}_liminf_inf"), fmt(d.liminf.final_inf()));
            push(summary, format!("point_{k}_liminf_pass"), d.liminf.pass);
            if d.label == PointLabel::Unresolved {
                log::warn!("{key}: energy {} falls in the unresolved band", d.e0);
            }
            out.diagnoses.push(d);
        }
        sink.write("diagnoses.csv", |w| write_diagnoses_csv(&out.diagnoses, w))?;
    }

    if let Some(pt) = &a.portrait {
        let pg = GridSpec::new(pt.x_min, pt.x_max, pt.nx, pt.t_min, pt.t_max, pt.nt)
            .map_err(|e| analysis_error("[analysis.portrait]", e))?;
        let forms = [
            ("v_plus".to_string(), ClosedForm::v_plus()),
            ("v_minus".to_string(), ClosedForm::v_minus()),
            (format!("v_m{}", pt.m), ClosedForm::v_m(pt.m).map_err(|e| analysis_error("[analysis.portrait] m", e))?),
            ("v_m-1".to_string(), ClosedForm::v_m(-1.0).map_err(|e| analysis_error("[analysis.portrait]", e))?),
            ("v_m0".to_string(), ClosedForm::v_m(0.0).map_err(|e| analysis_error("[analysis.portrait]", e))?),
        ];
        for (label, form) in &forms {
            let f = form.field(&pg).map_err(|e| analysis_error("[analysis.portrait]", e))?;
            sink.write(&format!("portrait_{label}.csv"), |w| f.write_csv(w).map_err(io::Error::other))?;
        }
        for &m in &pt.profiles {
            let prof = profile_for(m).map_err(|e| analysis_error("[analysis.portrait] profiles", e))?;
            sink.write(&format!("profile_m{m}.csv"), |w| prof.write_csv(w))?;
            push(summary, format!("profile_m{m}_c_m"), fmt(prof.c_m));
        }
    }
    Ok(out)
}

fn run_finance(
    f: &FinanceScenario,
    solver: &SolveConfig,
    sink: &mut Sink,
    summary: &mut Vec<(String, String)>,
) -> Result<FinanceOutcome, RunError> {
    let report = exercise_boundary_report(&f.scenario, &f.analysis, solver).map_err(finance_error)?;
    sink.write("field.csv", |w| report.u.write_csv(w).map_err(io::Error::other))?;
    sink.write("gamma.csv", |w| report.gamma.write_csv(w))?;
    sink.write("boundary.csv", |w| report.write_csv(w))?;
    finance_summary(&report, "", summary);
    let long = match &f.long {
        Some((scn, opts, tol)) => {
            let rep = exercise_boundary_report(scn, opts, solver).map_err(finance_error)?;
            sink.write("boundary_long.csv", |w| rep.write_csv(w))?;
            finance_summary(&rep, "long_", summary);
            if let Some(e) = rep.perpetual_rel_error {
                push(summary, "long_perpetual_within_tol", e.abs() <= *tol);
            }
            Some(rep)
        }
        None => None,
    };
    Ok(FinanceOutcome { report, long })
}

fn finance_summary(r: &ExerciseReport, prefix: &str, summary: &mut Vec<(String, String)>) {
    push(summary, format!("{prefix}min_ut"), fmt(r.min_ut));
    push(summary, format!("{prefix}max_jump"), fmt(r.max_jump));
    push(summary, format!("{prefix}max_jump_all"), fmt(r.max_jump_all));
    push(summary, format!("{prefix}window_start"), fmt(r.window_start));
    push(summary, format!("{prefix}boundary_monotone"), r.boundary_monotone);
    push(summary, format!("{prefix}price_monotone"), r.price_monotone);
    push(summary, format!("{prefix}exercise_region_exact"), r.exercise_region_exact);
    if let Some(b) = r.boundary.last() {
        push(summary, format!("{prefix}s_star_at_maturity"), fmt(b.s_star));
    }
    if let Some(p) = r.perpetual {
        push(summary, format!("{prefix}perpetual_level"), fmt(p));
    }
    if let Some(e) = r.perpetual_rel_error {
        push(summary, format!("{prefix}perpetual_rel_error"), fmt(e));
    }
}
