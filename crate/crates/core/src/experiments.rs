//! Experiment drivers: the single-cylinder manufactured test (A) and the
//! four-cylinder far-field test (B), with table and field output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector2;

use crate::analytic::ManufacturedSolution;
use crate::assembly::{
    condense_and_solve, relative_errors, DiscreteSolution, Discretization, StokesProblem, VectorFn,
};
use crate::error::Error;
use crate::geometry::{build_cartesian_cut_mesh, Circle, Point2};
use crate::spaces::EnrichmentConfig;

/// Centres and radii of the four-cylinder layout.
pub const TEST_B_CYLINDERS: [(f64, f64, f64); 4] =
    [(0.4, 0.275, 0.01), (0.2, 0.25, 0.02), (0.7, 0.5, 0.075), (0.3, 0.75, 0.015)];

/// Samples per side of the field dump grid.
pub const FIELD_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    A,
    B,
}

impl FromStr for TestKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "A" | "a" => Ok(TestKind::A),
            "B" | "b" => Ok(TestKind::B),
            other => Err(Error::Config(format!("unknown test '{other}' (expected A or B)"))),
        }
    }
}

/// Exact solution used by test A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionKind {
    /// Cylinder pair plus smooth part, with its body force.
    Manufactured,
    /// Cylinder pair alone, zero body force.
    Cylinder,
}

impl FromStr for SolutionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "manufactured" => Ok(SolutionKind::Manufactured),
            "cylinder" => Ok(SolutionKind::Cylinder),
            other => Err(Error::Config(format!("unknown solution '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub test: TestKind,
    pub k: usize,
    pub gamma: f64,
    /// Cylinder radius of test A.
    pub radius: f64,
    pub meshes: Vec<usize>,
    /// Output directory.
    pub out: PathBuf,
    /// Reference mesh of test B.
    pub reference: usize,
    pub solution: SolutionKind,
    pub dump_fields: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test: TestKind::A,
            k: 0,
            gamma: 0.2,
            radius: 0.1,
            meshes: vec![4, 8, 16, 32],
            out: PathBuf::from("."),
            reference: 60,
            solution: SolutionKind::Manufactured,
            dump_fields: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

pub fn parse_mesh_list(value: &str) -> Result<Vec<usize>, Error> {
    let meshes = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse::<usize>("meshes", s))
        .collect::<Result<Vec<_>, _>>()?;
    if meshes.is_empty() {
        return Err(Error::Config("empty mesh list".into()));
    }
    Ok(meshes)
}

impl ExperimentConfig {
    /// Default configuration of a test.
    pub fn for_test(test: TestKind) -> Self {
        match test {
            TestKind::A => Self::default(),
            TestKind::B => Self { test, k: 1, gamma: 0.1, meshes: vec![10, 20, 30], ..Self::default() },
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        match key.trim() {
            "test" => self.test = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "meshes" => self.meshes = parse_mesh_list(value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "reference" => self.reference = parse(key, value)?,
            "solution" => self.solution = parse(key, value)?,
            "dump_fields" => self.dump_fields = Some(PathBuf::from(value.trim())),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; `#` starts a comment. A `test`
    /// key selects that test's defaults before the other keys apply.
    pub fn parse_text(text: &str) -> Result<Self, Error> {
        let mut pairs = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", line_no + 1)))?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let test = match pairs.iter().rev().find(|(k, _)| k == "test") {
            Some((_, v)) => v.parse()?,
            None => TestKind::A,
        };
        let mut cfg = Self::for_test(test);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::parse_text(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.meshes.is_empty() {
            return Err(Error::Config("no meshes configured".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if !(self.radius > 0.0 && self.radius < 0.5) {
            return Err(Error::Config(format!("radius must lie in (0, 0.5), got {}", self.radius)));
        }
        Ok(())
    }

    /// Name of the emitted table.
    pub fn table_name(&self) -> String {
        match self.test {
            TestKind::A => format!("test_a_k{}_gamma{}_R{}.dat", self.k, self.gamma, self.radius),
            TestKind::B => format!("test_b_k{}_gamma{}.dat", self.k, self.gamma),
        }
    }
}

/// One mesh of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub title: String,
    pub subdivisions: usize,
    pub mesh_size: f64,
    pub cells: usize,
    pub internal_edges: usize,
    pub dofs: usize,
    /// Test A: L2, energy, pressure. Test B: H1, pressure.
    pub errors: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Saddle-point health of a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub divergence_residual: f64,
    pub velocity_norm: f64,
    pub pressure_integral: f64,
    pub pressure_norm: f64,
    pub h1_seminorm: f64,
}

impl SolveDiagnostics {
    pub fn of(disc: &Discretization<'_>, sol: &DiscreteSolution) -> Self {
        Self {
            divergence_residual: sol.divergence_residual(disc),
            velocity_norm: sol.velocity_norm(),
            pressure_integral: sol.pressure_integral(disc),
            pressure_norm: sol.pressure_norm(),
            h1_seminorm: sol.reconstruction_h1(disc),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub test: TestKind,
    pub rows: Vec<ReportRow>,
    /// Test B reference `(pressure L2 norm, velocity H1 seminorm)`.
    pub reference: Option<(f64, f64)>,
}

pub fn table_header(test: TestKind) -> &'static str {
    match test {
        TestKind::A => "MeshTitle MeshSize NbCells NbInternalEdges DOFs L2Error EnergyError PressureError",
        TestKind::B => "MeshTitle MeshSize NbCells NbInternalEdges DOFs H1Error PressureError",
    }
}

impl ErrorReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(table_header(self.test));
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{} {:.16e} {} {} {}", r.title, r.mesh_size, r.cells, r.internal_edges, r.dofs);
            for e in &r.errors {
                let _ = write!(s, " {e:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn emit_table(report: &ErrorReport, path: &Path) -> Result<(), Error> {
    if report.rows.is_empty() {
        return Err(Error::Config("empty report".into()));
    }
    std::fs::write(path, report.to_table()).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Samples `x y u_x u_y p mask` on a uniform grid of cell midpoints.
pub fn field_dump(disc: &Discretization<'_>, sol: &DiscreteSolution, samples: usize) -> String {
    let mut s = String::with_capacity(samples * samples * 64);
    for j in 0..samples {
        for i in 0..samples {
            let x = Point2::new((i as f64 + 0.5) / samples as f64, (j as f64 + 0.5) / samples as f64);
            match sol.evaluate(disc, x) {
                Some((u, p)) => {
                    let _ = writeln!(s, "{:.10e} {:.10e} {:.10e} {:.10e} {:.10e} 1", x.x, x.y, u.x, u.y, p);
                }
                None => {
                    let _ = writeln!(s, "{:.10e} {:.10e} 0 0 0 0", x.x, x.y);
                }
            }
        }
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Problem of test A on an `n x n` mesh.
pub fn test_a_problem(cfg: &ExperimentConfig, n: usize) -> Result<(StokesProblem, ManufacturedSolution), Error> {
    let circle = Circle::new(Point2::new(0.5, 0.5), cfg.radius)?;
    let mesh = build_cartesian_cut_mesh(n, &[circle])?;
    let exact = match cfg.solution {
        SolutionKind::Manufactured => ManufacturedSolution::new(circle),
        SolutionKind::Cylinder => ManufacturedSolution::cylinder_only(circle),
    };
    let force: VectorFn = Arc::new(move |x| exact.body_force(x));
    let g: VectorFn = Arc::new(move |x| exact.velocity(x));
    let problem = StokesProblem::new(mesh, cfg.k, EnrichmentConfig::new(cfg.gamma, vec![circle]), force, g)
        .with_probe(Arc::new(move |x| exact.velocity(x).norm_squared()))
        .with_probe(Arc::new(move |x| exact.pressure(x).powi(2)))
        .with_face_probe(Arc::new(move |x| exact.velocity(x).norm_squared()));
    Ok((problem, exact))
}

/// Problem of test B on an `n x n` mesh.
pub fn test_b_problem(k: usize, gamma: f64, n: usize) -> Result<StokesProblem, Error> {
    let circles = TEST_B_CYLINDERS
        .iter()
        .map(|&(x, y, r)| Circle::new(Point2::new(x, y), r))
        .collect::<Result<Vec<_>, _>>()?;
    let mesh = build_cartesian_cut_mesh(n, &circles)?;
    let force: VectorFn = Arc::new(|_| Vector2::zeros());
    // Unit flow on the square, no slip on the cylinders.
    let g: VectorFn = Arc::new(move |x: Point2| {
        let on_square = x.x.min(x.y).min(1.0 - x.x).min(1.0 - x.y) < 1e-12;
        if on_square {
            Vector2::new(1.0, 0.0)
        } else {
            Vector2::zeros()
        }
    });
    Ok(StokesProblem::new(mesh, k, EnrichmentConfig::new(gamma, circles), force, g))
}

fn row(index: usize, n: usize, disc: &Discretization<'_>, errors: Vec<f64>, diagnostics: SolveDiagnostics) -> ReportRow {
    let mesh = disc.mesh();
    ReportRow {
        title: format!("Mesh{}", index + 1),
        subdivisions: n,
        mesh_size: mesh.h,
        cells: mesh.elements.len(),
        internal_edges: mesh.num_internal_faces(),
        dofs: disc.dofs.dofs(),
        errors,
        diagnostics,
    }
}

fn with_mesh<T>(n: usize, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| Error::Config(format!("mesh n = {n}: {e}")))
}

pub fn run_test_a(cfg: &ExperimentConfig) -> Result<ErrorReport, Error> {
    let mut rows = Vec::new();
    for (i, &n) in cfg.meshes.iter().enumerate() {
        let (problem, exact) = with_mesh(n, test_a_problem(cfg, n))?;
        let disc = with_mesh(n, Discretization::new(&problem))?;
        let sol = with_mesh(n, condense_and_solve(&disc))?;
        let u = move |x: Point2| exact.velocity(x);
        let p = move |x: Point2| exact.pressure(x);
        let err = relative_errors(&disc, &sol, &u, &p);
        rows.push(row(i, n, &disc, vec![err.l2, err.energy, err.pressure], SolveDiagnostics::of(&disc, &sol)));
        if i + 1 == cfg.meshes.len() {
            if let Some(path) = &cfg.dump_fields {
                write_file(path, &field_dump(&disc, &sol, FIELD_SAMPLES))?;
            }
        }
    }
    Ok(ErrorReport { test: TestKind::A, rows, reference: None })
}

pub fn run_test_b(cfg: &ExperimentConfig) -> Result<ErrorReport, Error> {
    let reference = {
        let problem = with_mesh(cfg.reference, test_b_problem(1, 0.2, cfg.reference))?;
        let disc = with_mesh(cfg.reference, Discretization::new(&problem))?;
        let sol = with_mesh(cfg.reference, condense_and_solve(&disc))?;
        (sol.pressure_norm(), sol.reconstruction_h1(&disc))
    };
    let mut rows = Vec::new();
    for (i, &n) in cfg.meshes.iter().enumerate() {
        let problem = with_mesh(n, test_b_problem(cfg.k, cfg.gamma, n))?;
        let disc = with_mesh(n, Discretization::new(&problem))?;
        let sol = with_mesh(n, condense_and_solve(&disc))?;
        if i + 1 == cfg.meshes.len() {
            if let Some(path) = &cfg.dump_fields {
                write_file(path, &field_dump(&disc, &sol, FIELD_SAMPLES))?;
            }
        }
        // The reference configuration itself carries no information.
        if n == cfg.reference && cfg.k == 1 && cfg.gamma == 0.2 {
            continue;
        }
        let d = SolveDiagnostics::of(&disc, &sol);
        let errors = vec![(d.h1_seminorm - reference.1).abs(), (d.pressure_norm - reference.0).abs()];
        rows.push(row(i, n, &disc, errors, d));
    }
    Ok(ErrorReport { test: TestKind::B, rows, reference: Some(reference) })
}

/// Runs the configured test and writes its table into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<(ErrorReport, PathBuf), Error> {
    cfg.validate()?;
    let report = match cfg.test {
        TestKind::A => run_test_a(cfg)?,
        TestKind::B => run_test_b(cfg)?,
    };
    std::fs::create_dir_all(&cfg.out)
        .map_err(|source| Error::Io { path: cfg.out.display().to_string(), source })?;
    let path = cfg.out.join(cfg.table_name());
    emit_table(&report, &path)?;
    Ok((report, path))
}
