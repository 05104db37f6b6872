use std::sync::Arc;

use hho_core::assembly::{condense_and_solve, relative_errors, Discretization, StokesProblem, VectorFn};
use hho_core::experiments::{
    emit_table, run, run_test_a, run_test_b, test_a_problem, ExperimentConfig, TestKind,
};
use hho_core::geometry::BoundaryKind;
use hho_core::Point2;
use nalgebra::Vector2;

#[test]
fn relative_errors_are_scale_invariant() {
    let cfg = ExperimentConfig { k: 1, ..ExperimentConfig::default() };
    let (p, exact) = test_a_problem(&cfg, 8).unwrap();
    let scaled = StokesProblem {
        force: Arc::new(move |x| 10.0 * exact.body_force(x)) as VectorFn,
        dirichlet: Arc::new(move |x| 10.0 * exact.velocity(x)) as VectorFn,
        ..p.clone()
    };
    let u = move |x: Point2| exact.velocity(x);
    let pr = move |x: Point2| exact.pressure(x);
    let u10 = move |x: Point2| 10.0 * exact.velocity(x);
    let p10 = move |x: Point2| 10.0 * exact.pressure(x);
    let d1 = Discretization::new(&p).unwrap();
    let d2 = Discretization::new(&scaled).unwrap();
    let e1 = relative_errors(&d1, &condense_and_solve(&d1).unwrap(), &u, &pr);
    let e2 = relative_errors(&d2, &condense_and_solve(&d2).unwrap(), &u10, &p10);
    assert!((e1.l2 - e2.l2).abs() < 1e-9);
    assert!((e1.energy - e2.energy).abs() < 1e-9);
    assert!((e1.pressure - e2.pressure).abs() < 1e-9);
}

#[test]
fn test_a_errors_decrease_and_dofs_grow() {
    let cfg = ExperimentConfig { k: 1, meshes: vec![4, 8, 16], ..ExperimentConfig::default() };
    let r = run_test_a(&cfg).unwrap();
    for w in r.rows.windows(2) {
        assert!(w[1].dofs > w[0].dofs);
        for i in 0..3 {
            assert!(w[1].errors[i] < w[0].errors[i]);
        }
    }
}

#[test]
fn enrichment_beats_polynomials_for_a_small_cylinder() {
    let mut energy = Vec::new();
    for gamma in [0.0, 0.1, 0.2] {
        let cfg = ExperimentConfig { gamma, radius: 0.01, meshes: vec![8, 16], ..ExperimentConfig::default() };
        energy.push(run_test_a(&cfg).unwrap().rows.iter().map(|r| r.errors[1]).collect::<Vec<_>>());
    }
    for enriched in &energy[1..] {
        for (m, e) in enriched.iter().enumerate() {
            assert!(*e < energy[0][m]);
        }
    }
}

#[test]
fn test_b_against_coarse_reference() {
    let cfg = ExperimentConfig { meshes: vec![10, 20], reference: 30, ..ExperimentConfig::for_test(TestKind::B) };
    let enriched = run_test_b(&cfg).unwrap();
    let plain = run_test_b(&ExperimentConfig { gamma: 0.0, ..cfg.clone() }).unwrap();
    let (p_ref, u_ref) = enriched.reference.unwrap();
    assert!(p_ref > 10.0 && u_ref > 4.0);
    assert_eq!(enriched.rows.len(), 2);
    assert!(enriched.rows[1].errors[0] <= plain.rows[1].errors[0]);
    let table = enriched.to_table();
    assert!(table.starts_with("MeshTitle MeshSize NbCells NbInternalEdges DOFs H1Error PressureError\n"));

    // The reference configuration itself is left out of the table.
    let same = run_test_b(&ExperimentConfig { k: 1, gamma: 0.2, meshes: vec![10, 30], ..cfg }).unwrap();
    assert_eq!(same.rows.len(), 1);
}

#[test]
fn cylinder_walls_carry_zero_velocity() {
    let p = hho_core::experiments::test_b_problem(0, 0.1, 10).unwrap();
    let disc = Discretization::new(&p).unwrap();
    let sol = condense_and_solve(&disc).unwrap();
    for (f, face) in p.mesh.faces.iter().enumerate() {
        match face.boundary {
            BoundaryKind::Cylinder(_) => assert_eq!(sol.faces[f].amax(), 0.0),
            BoundaryKind::Square => assert!(sol.faces[f].amax() > 0.0),
            BoundaryKind::Internal => {}
        }
    }
}

#[test]
fn tables_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { meshes: vec![4, 8], out: dir.path().to_path_buf(), ..ExperimentConfig::default() };
    let (_, path) = run(&cfg).unwrap();
    let first = std::fs::read(&path).unwrap();
    let (report, _) = run(&cfg).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 3);
    assert!(emit_table(&report, &dir.path().join("missing").join("x.dat")).is_err());
}

#[test]
fn zero_data_gives_zero_solution() {
    let cfg = ExperimentConfig::default();
    let (p, _) = test_a_problem(&cfg, 8).unwrap();
    let zero: VectorFn = Arc::new(|_| Vector2::zeros());
    let p = StokesProblem { force: zero.clone(), dirichlet: zero, ..p };
    let disc = Discretization::new(&p).unwrap();
    let sol = condense_and_solve(&disc).unwrap();
    assert!(sol.velocity_norm() < 1e-12 && sol.pressure_norm() < 1e-12);
}
