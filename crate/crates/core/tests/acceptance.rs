//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use hho_core::analytic::{stream_zeta1, CylinderSolution, FnVectorField, SmoothVectorFunction, VectorFunction};
use hho_core::assembly::{condense_and_solve, solve_uncondensed, Discretization};
use hho_core::experiments::{
    run_test_a, test_a_problem, test_b_problem, ExperimentConfig, SolutionKind, SolveDiagnostics,
};
use hho_core::geometry::FaceGeometry;
use hho_core::quadrature::face_rule;
use hho_core::spaces::{face_spanning, tabulate, weight_rows};
use hho_core::{build_cartesian_cut_mesh, Circle, Point2};
use nalgebra::{DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// A non-solenoidal smooth field plus the cylinder velocity.
fn test_field(
    circle: Circle,
) -> FnVectorField<impl Fn(Point2) -> Vector2<f64>, impl Fn(Point2) -> Matrix2<f64>> {
    let s = CylinderSolution::new(circle);
    FnVectorField {
        value: move |x: Point2| {
            let u = s.velocity(x).unwrap_or_else(|_| Vector2::zeros());
            u + Vector2::new((3.0 * x.x).sin() * (2.0 * x.y).cos(), (x.x * x.y).exp())
        },
        gradient: move |x: Point2| {
            let g = s.velocity_gradient(x).unwrap_or_else(|_| Matrix2::zeros());
            let e = (x.x * x.y).exp();
            g + Matrix2::new(
                3.0 * (3.0 * x.x).cos() * (2.0 * x.y).cos(),
                -2.0 * (3.0 * x.x).sin() * (2.0 * x.y).sin(),
                x.y * e,
                x.x * e,
            )
        },
    }
}

fn commutation() -> Outcome {
    let mut worst_r: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for k in [0, 1] {
        for gamma in [0.0, 0.2] {
            let cfg = ExperimentConfig { k, gamma, ..ExperimentConfig::default() };
            let (problem, _) = test_a_problem(&cfg, 16).map_err(|e| e.to_string())?;
            // Rules must also resolve the test field itself.
            let w = Arc::new(test_field(problem.mesh.cylinders[0]));
            let (w1, w2, w3) = (w.clone(), w.clone(), w.clone());
            let problem = problem
                .with_probe(Arc::new(move |x| w1.value(x).norm_squared()))
                .with_probe(Arc::new(move |x| w2.gradient(x).norm_squared()))
                .with_face_probe(Arc::new(move |x| w3.value(x).norm_squared()));
            let disc = Discretization::new(&problem).map_err(|e| e.to_string())?;
            let v = &*w;
            for (e, ctx) in disc.elements.iter().enumerate() {
                let iv = ctx.interpolate(&disc.faces, |x| v.value(x));
                let ops = &disc.operators[e];
                let rv = &ops.reconstruction * &iv;
                let ep = ctx.elliptic_project(v).map_err(|e| e.to_string())?;
                worst_r = worst_r.max((&rv - &ep).norm() / ep.norm());
                let div = ctx.project_pressure(|x| v.gradient(x).trace());
                let dv = &ops.divergence * &iv;
                worst_d = worst_d.max((&dv - &div).norm() / div.norm());
            }
        }
    }
    check(
        worst_r < 1e-9 && worst_d < 1e-9,
        format!("max relative residual: reconstruction {worst_r:.2e}, divergence {worst_d:.2e}"),
    )
}

fn stabilization_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for k in [0, 1] {
        let cfg = ExperimentConfig { k, gamma: 0.2, ..ExperimentConfig::default() };
        let (problem, _) = test_a_problem(&cfg, 16).map_err(|e| e.to_string())?;
        let disc = Discretization::new(&problem).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(2024 + k as u64);
        // Half the sample from enriched elements, half from anywhere.
        let enriched: Vec<usize> =
            (0..disc.elements.len()).filter(|&e| !disc.elements[e].active_cylinders.is_empty()).collect();
        let picks: Vec<usize> = (0..25)
            .map(|i| {
                if i % 2 == 0 {
                    enriched[rng.gen_range(0..enriched.len())]
                } else {
                    rng.gen_range(0..disc.elements.len())
                }
            })
            .collect();
        for e in picks {
            let ctx = &disc.elements[e];
            let s = &disc.operators[e].stabilization;
            let s_norm = s.norm();
            for i in 0..ctx.recon_dim() {
                let mut c = DVector::zeros(ctx.recon_dim());
                c[i] = 1.0;
                let iw = ctx.interpolate(&disc.faces, |x| {
                    let v = ctx.spaces.recon.evaluate(&c, x);
                    Vector2::new(v[0], v[1])
                });
                worst = worst.max((s * &iw).norm() / (s_norm * iw.norm()));
            }
            count += 1;
        }
    }
    check(worst < 1e-10, format!("{count} elements, max |S I(w)| / (|S| |I(w)|) = {worst:.2e}"))
}

fn exactness(diags: &mut Vec<(String, SolveDiagnostics)>) -> Outcome {
    let cfg = ExperimentConfig {
        k: 0,
        gamma: 10.0,
        meshes: vec![8],
        solution: SolutionKind::Cylinder,
        ..ExperimentConfig::default()
    };
    let r = run_test_a(&cfg).map_err(|e| e.to_string())?;
    let e = &r.rows[0].errors;
    diags.push(("exactness n=8".into(), r.rows[0].diagnostics));
    check(e.iter().all(|&v| v < 1e-8), format!("E0 {:.2e}, Ea {:.2e}, Ep {:.2e}", e[0], e[1], e[2]))
}

fn slope(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn convergence(diags: &mut Vec<(String, SolveDiagnostics)>) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [0usize, 1] {
        let cfg = ExperimentConfig { k, gamma: 0.2, meshes: vec![4, 8, 16, 32], ..ExperimentConfig::default() };
        let r = run_test_a(&cfg).map_err(|e| e.to_string())?;
        let h: Vec<f64> = r.rows.iter().map(|r| r.mesh_size).collect();
        let ea: Vec<f64> = r.rows.iter().map(|r| r.errors[1]).collect();
        let ep: Vec<f64> = r.rows.iter().map(|r| r.errors[2]).collect();
        let (sa, sp) = (slope(&h, &ea), slope(&h, &ep));
        ok &= sa >= k as f64 + 1.0 - 0.2 && sp >= k as f64 + 1.0 - 0.3;
        detail.push(format!("k={k}: energy slope {sa:.3}, pressure slope {sp:.3}"));
        for row in &r.rows {
            diags.push((format!("test A k={k} n={}", row.subdivisions), row.diagnostics));
        }
    }
    check(ok, detail.join("; "))
}

fn enrichment_gain(diags: &mut Vec<(String, SolveDiagnostics)>) -> Outcome {
    let mut ea = Vec::new();
    for gamma in [0.2, 0.0] {
        let cfg = ExperimentConfig { k: 0, gamma, radius: 0.01, meshes: vec![16], ..ExperimentConfig::default() };
        let r = run_test_a(&cfg).map_err(|e| e.to_string())?;
        ea.push(r.rows[0].errors[1]);
        diags.push((format!("R=0.01 gamma={gamma}"), r.rows[0].diagnostics));
    }
    check(ea[0] <= 0.5 * ea[1], format!("enriched Ea {:.3e}, non-enriched Ea {:.3e}", ea[0], ea[1]))
}

fn saddle_health(diags: &[(String, SolveDiagnostics)]) -> Outcome {
    let mut worst_div: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for (_, d) in diags {
        worst_div = worst_div.max(d.divergence_residual / d.velocity_norm);
        worst_mean = worst_mean.max(d.pressure_integral.abs() / d.pressure_norm);
    }
    check(
        worst_div < 1e-10 && worst_mean < 1e-10 && !diags.is_empty(),
        format!(
            "{} solves, max |b(u,q)|/|u| {worst_div:.2e}, max |int p|/|p| {worst_mean:.2e}",
            diags.len()
        ),
    )
}

fn condensation(diags: &mut Vec<(String, SolveDiagnostics)>) -> Outcome {
    let cfg = ExperimentConfig { k: 1, gamma: 0.2, ..ExperimentConfig::default() };
    let (problem, _) = test_a_problem(&cfg, 4).map_err(|e| e.to_string())?;
    let disc = Discretization::new(&problem).map_err(|e| e.to_string())?;
    let a = condense_and_solve(&disc).map_err(|e| e.to_string())?;
    let b = solve_uncondensed(&disc).map_err(|e| e.to_string())?;
    let mut diff: f64 = 0.0;
    for (x, y) in a.faces.iter().zip(&b.faces).chain(a.cells.iter().zip(&b.cells)).chain(a.pressures.iter().zip(&b.pressures)) {
        diff = diff.max((x - y).amax());
    }
    diags.push(("condensation n=4".into(), SolveDiagnostics::of(&disc, &a)));
    diags.push(("uncondensed n=4".into(), SolveDiagnostics::of(&disc, &b)));
    check(diff < 1e-10, format!("max coefficient difference {diff:.2e}"))
}

/// Rank of a face spanning set from a singular value decomposition on a
/// fine rule.
fn face_rank(mesh: &hho_core::Mesh, f: usize, k: usize, enrichment: &hho_core::spaces::EnrichmentConfig) -> usize {
    let face = &mesh.faces[f];
    let (spanning, _) = face_spanning(mesh, face, k, enrichment);
    let rule = face_rule(face, 60);
    let mut t = tabulate(&spanning, &rule.points);
    weight_rows(&mut t, &rule.weights, 2);
    let norms: Vec<f64> = t.column_iter().map(|c| c.norm()).collect();
    let largest = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    let cols: Vec<usize> = (0..t.ncols()).filter(|&j| norms[j] > 1e-13 * largest).collect();
    let m = faer::Mat::from_fn(t.nrows(), cols.len(), |i, j| t[(i, cols[j])] / norms[cols[j]]);
    let sv = m.singular_values().expect("svd");
    let top = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > 1e-8 * top).count()
}

fn dof_accounting() -> Outcome {
    let mut configs: Vec<(String, hho_core::assembly::StokesProblem)> = Vec::new();
    for (k, gamma) in [(0, 0.0), (0, 0.2), (1, 0.2)] {
        for n in [4, 8, 16] {
            let cfg = ExperimentConfig { k, gamma, ..ExperimentConfig::default() };
            let (p, _) = test_a_problem(&cfg, n).map_err(|e| e.to_string())?;
            configs.push((format!("A k={k} gamma={gamma} n={n}"), p));
        }
    }
    for n in [10, 20] {
        configs.push((format!("B n={n}"), test_b_problem(1, 0.1, n).map_err(|e| e.to_string())?));
    }
    let square = build_cartesian_cut_mesh(4, &[]).map_err(|e| e.to_string())?;
    let mut mismatches = Vec::new();
    let mut grown = 0;
    for (name, p) in &configs {
        let disc = Discretization::new(p).map_err(|e| e.to_string())?;
        let mut expected = p.mesh.elements.len();
        for (f, face) in p.mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                continue;
            }
            let dim = face_rank(&p.mesh, f, p.k, &p.enrichment);
            let base = match face.geometry {
                FaceGeometry::Segment { .. } => 2 * (p.k + 1),
                FaceGeometry::Arc { .. } => 2 * (2 * p.k + 3),
            };
            if dim > base {
                grown += 1;
            }
            expected += dim;
        }
        if disc.dofs.dofs() != expected {
            mismatches.push(format!("{name}: {} vs {expected}", disc.dofs.dofs()));
        }
    }
    let sp = hho_core::assembly::StokesProblem::new(
        square,
        0,
        hho_core::spaces::EnrichmentConfig::none(),
        std::sync::Arc::new(|_| Vector2::zeros()),
        std::sync::Arc::new(|_| Vector2::zeros()),
    );
    let square_dofs = Discretization::new(&sp).map_err(|e| e.to_string())?.dofs.dofs();
    if square_dofs != 64 {
        mismatches.push(format!("plain 4x4 square: {square_dofs} vs 64"));
    }
    check(
        mismatches.is_empty() && grown > 0,
        format!("{} meshes, {grown} enriched faces with grown dimension; mismatches: {mismatches:?}", configs.len() + 1),
    )
}

fn analytic_oracles() -> Outcome {
    let circle = Circle::new(Point2::new(0.5, 0.5), 0.1).map_err(|e| e.to_string())?;
    let s = CylinderSolution::new(circle);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut res, mut div, mut slip, mut bih): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..100 {
        let r = 0.1 * rng.gen_range(1.05..6.0);
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = circle.center + r * Vector2::new(t.cos(), t.sin());
        let u = |q: Point2| s.velocity(q).unwrap();
        let pr = |q: Point2| s.pressure(q).unwrap();
        // Stokes residual with a five-point Laplacian.
        let h = 2e-4 * r;
        let ex = Vector2::new(h, 0.0);
        let ey = Vector2::new(0.0, h);
        let lap = (u(p + ex) + u(p - ex) + u(p + ey) + u(p - ey) - 4.0 * u(p)) / (h * h);
        let grad_p = Vector2::new((pr(p + ex) - pr(p - ex)) / (2.0 * h), (pr(p + ey) - pr(p - ey)) / (2.0 * h));
        res = res.max((-lap + grad_p).norm() / (1.0 + lap.norm()));
        let hd = 1e-6;
        let dx = Vector2::new(hd, 0.0);
        let dy = Vector2::new(0.0, hd);
        let d = (u(p + dx).x - u(p - dx).x + u(p + dy).y - u(p - dy).y) / (2.0 * hd);
        div = div.max(d.abs());
        slip = slip.max(u(circle.point_at(t)).norm());
        // Thirteen-point biharmonic of the stream function.
        let psi = |q: Point2| {
            let d = q - circle.center;
            stream_zeta1(d.norm(), 0.1, 1.0).unwrap() * d.y.atan2(d.x).sin()
        };
        let hb = 0.003 * r;
        let bx = Vector2::new(hb, 0.0);
        let by = Vector2::new(0.0, hb);
        let l = |q: Point2| (psi(q + bx) + psi(q - bx) + psi(q + by) + psi(q - by) - 4.0 * psi(q)) / (hb * hb);
        let b = (l(p + bx) + l(p - bx) + l(p + by) + l(p - by) - 4.0 * l(p)) / (hb * hb);
        bih = bih.max(b.abs() * r.powi(3));
    }
    check(
        res < 1e-5 && div < 1e-6 && slip < 1e-12 && bih < 1e-3,
        format!("Stokes residual {res:.1e}, divergence {div:.1e}, wall velocity {slip:.1e}, scaled biharmonic {bih:.1e}"),
    )
}

fn main() -> ExitCode {
    let mut diags = Vec::new();
    let mut lines: Vec<(usize, bool, String)> = Vec::new();
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let tag = if ok { "PASS" } else { "FAIL" };
        lines.push((id, ok, format!("{tag} criterion {id} ({name}, {secs:.1}s): {detail}")));
    };
    report(1, "commutation", &mut commutation);
    report(2, "stabilisation consistency", &mut stabilization_consistency);
    report(3, "enrichment exactness", &mut || exactness(&mut diags));
    report(4, "convergence order", &mut || convergence(&mut diags));
    report(5, "enrichment gain", &mut || enrichment_gain(&mut diags));
    report(7, "static condensation", &mut || condensation(&mut diags));
    // Runs last so that it sees every solve above.
    report(6, "saddle-point health", &mut || saddle_health(&diags));
    report(8, "DOF accounting", &mut dof_accounting);
    report(9, "analytic solution", &mut analytic_oracles);
    lines.sort_by_key(|l| l.0);
    for (_, _, line) in &lines {
        println!("{line}");
    }
    if lines.iter().all(|l| l.1) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
