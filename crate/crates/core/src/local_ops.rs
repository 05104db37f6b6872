//! Element-level operators: reconstruction, divergence, stabilisation, the
//! local bilinear forms, the interpolator and the elliptic projector.
//!
//! All bases are L2-orthonormal under the quadrature rules stored with them,
//! so mass matrices are identities and L2 projections are plain moments.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::analytic::SmoothVectorFunction;
use crate::error::{Error, SolveError};
use crate::geometry::{Element, Mesh, Orientation, Point2};
use crate::quadrature::{select_rule, Domain, QuadratureRule};
use crate::spaces::{
    element_spanning, face_spanning, spanning_gram, EnrichmentConfig, FunctionSpace, ScalarField,
    TraceField, VectorField, PRUNE_TOLERANCE,
};

/// Scalar integrands added to the rule-selection probes.
pub type Probe<'a> = &'a (dyn Fn(Point2) -> f64 + Sync);

/// Base quadrature degree for polynomial integrands.
pub fn base_degree(k: usize) -> usize {
    2 * (k + 2)
}

/// Base quadrature degree when enrichment fields are involved.
pub fn enriched_base_degree(k: usize) -> usize {
    2 * (k + 2) + 4
}

/// Face space with its rule and tabulated basis.
#[derive(Debug, Clone)]
pub struct FaceData {
    pub face: usize,
    pub rule: QuadratureRule,
    pub space: FunctionSpace<TraceField>,
    /// Basis values at the rule points, row `2 q + c`.
    pub values: DMatrix<f64>,
}

impl FaceData {
    pub fn new(
        mesh: &Mesh,
        face: usize,
        k: usize,
        enrichment: &EnrichmentConfig,
        probes: &[Probe<'_>],
    ) -> Result<Self, Error> {
        let f = &mesh.faces[face];
        let (spanning, leading) = face_spanning(mesh, f, k, enrichment);
        let enriched = spanning.iter().any(|t| t.is_enrichment());
        let base = if enriched { enriched_base_degree(k) } else { base_degree(k) };
        // Enough points to resolve the rank of the spanning set.
        let base = base.max(spanning.len() + 2);
        let rule = select_rule(
            Domain::Face(f),
            |rule| {
                let g = spanning_gram(&spanning, rule);
                let mut v: Vec<f64> = g.iter().copied().collect();
                v.extend(probes.iter().map(|p| rule.integrate(p)));
                v
            },
            base,
        )?;
        let location = format!("face {face}");
        let space = FunctionSpace::new(spanning, leading, &rule, PRUNE_TOLERANCE, &location, "face")?;
        let values = space.values(&rule.points);
        Ok(Self { face, rule, space, values })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// L2 projection of `v` onto the face space.
    pub fn project(&self, v: impl Fn(Point2) -> Vector2<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (q, (x, w)) in self.rule.iter().enumerate() {
            let val = v(x);
            for i in 0..self.dim() {
                out[i] += w * (val.x * self.values[(2 * q, i)] + val.y * self.values[(2 * q + 1, i)]);
            }
        }
        out
    }
}

/// Sizes and offsets of the local unknowns `(v_T, v_F1, ..., v_Fm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDofLayout {
    pub cell: usize,
    pub faces: Vec<usize>,
    pub face_offsets: Vec<usize>,
    pub pressure: usize,
}

impl LocalDofLayout {
    pub fn new(cell: usize, faces: Vec<usize>, pressure: usize) -> Self {
        let mut face_offsets = Vec::with_capacity(faces.len());
        let mut offset = cell;
        for &d in &faces {
            face_offsets.push(offset);
            offset += d;
        }
        Self { cell, faces, face_offsets, pressure }
    }

    /// Total velocity unknowns.
    pub fn velocity(&self) -> usize {
        self.cell + self.faces.iter().sum::<usize>()
    }
}

/// Element spaces.
#[derive(Debug, Clone)]
pub struct LocalSpaces {
    pub recon: FunctionSpace<VectorField>,
    pub cell: FunctionSpace<VectorField>,
    pub pressure: FunctionSpace<ScalarField>,
}

#[derive(Debug, Clone)]
pub struct LocalFace {
    pub face: usize,
    pub orientation: Orientation,
    /// Reconstruction basis values at the face rule points, row `2 q + c`.
    pub recon_values: DMatrix<f64>,
    /// `(grad b) n_TF` at the face rule points.
    pub recon_normal_derivatives: DMatrix<f64>,
    /// `q n_TF` at the face rule points.
    pub pressure_normal: DMatrix<f64>,
}

/// Per-element spaces and tabulations.
#[derive(Debug, Clone)]
pub struct ElementContext {
    pub element: usize,
    pub k: usize,
    pub h: f64,
    pub rule: QuadratureRule,
    pub spaces: LocalSpaces,
    pub layout: LocalDofLayout,
    pub active_cylinders: Vec<usize>,
    pub recon_values: DMatrix<f64>,
    /// Row `4 q + 2 i + j` holds `d b_i / d x_j`.
    pub recon_gradients: DMatrix<f64>,
    pub recon_laplacians: DMatrix<f64>,
    pub cell_values: DMatrix<f64>,
    pub pressure_values: DMatrix<f64>,
    pub pressure_gradients: DMatrix<f64>,
    pub faces: Vec<LocalFace>,
}

/// `a^T diag(w (x) 1_rank) b`.
fn weighted_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &[f64], rank: usize) -> DMatrix<f64> {
    let mut bw = b.clone();
    for (q, w) in weights.iter().enumerate() {
        for c in 0..rank {
            bw.row_mut(rank * q + c).scale_mut(*w);
        }
    }
    a.transpose() * bw
}

/// Integral of each basis function, per component: `(rank x dim)`.
fn basis_means(values: &DMatrix<f64>, weights: &[f64], rank: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rank, values.ncols());
    for (q, w) in weights.iter().enumerate() {
        for c in 0..rank {
            for i in 0..values.ncols() {
                out[(c, i)] += w * values[(rank * q + c, i)];
            }
        }
    }
    out
}

fn solve_dense(m: DMatrix<f64>, rhs: DMatrix<f64>, element: usize, what: &str) -> Result<DMatrix<f64>, Error> {
    let lu = m.lu();
    lu.solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| SolveError::SingularLocal { element, detail: what.into() }.into())
}

impl ElementContext {
    pub fn new(
        mesh: &Mesh,
        element: &Element,
        k: usize,
        enrichment: &EnrichmentConfig,
        face_data: &[FaceData],
        probes: &[Probe<'_>],
    ) -> Result<Self, Error> {
        let spanning = element_spanning(element, k, enrichment);
        let active = enrichment.active(element);
        let base = if active.is_empty() { base_degree(k) } else { enriched_base_degree(k) };
        let rule = if active.is_empty() && probes.is_empty() {
            Domain::Element(mesh, element).rule(base)
        } else {
            select_rule(
                Domain::Element(mesh, element),
                |rule| {
                    let mut v: Vec<f64> = Vec::new();
                    v.extend(spanning_gram(&spanning.recon.0, rule).iter());
                    v.extend(spanning_gram(&spanning.cell.0, rule).iter());
                    v.extend(spanning_gram(&spanning.pressure.0, rule).iter());
                    for f in &spanning.recon.0 {
                        v.push(rule.integrate(|x| f.gradient(x).norm_squared()));
                    }
                    v.extend(probes.iter().map(|p| rule.integrate(p)));
                    v
                },
                base,
            )?
        };
        let location = format!("element {}", element.id);
        let recon =
            FunctionSpace::new(spanning.recon.0, spanning.recon.1, &rule, PRUNE_TOLERANCE, &location, "reconstruction")?;
        let cell = FunctionSpace::new(spanning.cell.0, spanning.cell.1, &rule, PRUNE_TOLERANCE, &location, "element")?;
        let pressure =
            FunctionSpace::new(spanning.pressure.0, spanning.pressure.1, &rule, PRUNE_TOLERANCE, &location, "pressure")?;

        let pts = &rule.points;
        let recon_values = recon.values(pts);
        let recon_gradients = recon.gradients(pts);
        let recon_laplacians = recon.laplacians(pts);
        let cell_values = cell.values(pts);
        let pressure_values = pressure.values(pts);
        let pressure_gradients = pressure.gradients(pts);

        let mut faces = Vec::with_capacity(element.faces.len());
        for &(f, orientation) in &element.faces {
            let fd = &face_data[f];
            let fpts = &fd.rule.points;
            let nf = fpts.len();
            let values = recon.values(fpts);
            let grads = recon.gradients(fpts);
            let pvals = pressure.values(fpts);
            let mut normal_derivatives = DMatrix::zeros(2 * nf, recon.dim());
            let mut pressure_normal = DMatrix::zeros(2 * nf, pressure.dim());
            for (q, &x) in fpts.iter().enumerate() {
                let n = mesh.outward_normal(f, orientation, x);
                for i in 0..recon.dim() {
                    for c in 0..2 {
                        normal_derivatives[(2 * q + c, i)] =
                            grads[(4 * q + 2 * c, i)] * n.x + grads[(4 * q + 2 * c + 1, i)] * n.y;
                    }
                }
                for m in 0..pressure.dim() {
                    pressure_normal[(2 * q, m)] = pvals[(q, m)] * n.x;
                    pressure_normal[(2 * q + 1, m)] = pvals[(q, m)] * n.y;
                }
            }
            faces.push(LocalFace {
                face: f,
                orientation,
                recon_values: values,
                recon_normal_derivatives: normal_derivatives,
                pressure_normal,
            });
        }
        let layout = LocalDofLayout::new(
            cell.dim(),
            element.faces.iter().map(|&(f, _)| face_data[f].dim()).collect(),
            pressure.dim(),
        );
        Ok(Self {
            element: element.id,
            k,
            h: element.diameter,
            rule,
            spaces: LocalSpaces { recon, cell, pressure },
            layout,
            active_cylinders: active,
            recon_values,
            recon_gradients,
            recon_laplacians,
            cell_values,
            pressure_values,
            pressure_gradients,
            faces,
        })
    }

    pub fn recon_dim(&self) -> usize {
        self.spaces.recon.dim()
    }

    /// Stiffness `int grad b_i : grad b_j` of the reconstruction space.
    pub fn stiffness(&self) -> DMatrix<f64> {
        weighted_inner(&self.recon_gradients, &self.recon_gradients, &self.rule.weights, 4)
    }

    /// Bordered matrix `[G M^T; M 0]` with the vector mean constraint.
    fn bordered(&self) -> DMatrix<f64> {
        let nr = self.recon_dim();
        let g = self.stiffness();
        let m = basis_means(&self.recon_values, &self.rule.weights, 2);
        let mut k = DMatrix::zeros(nr + 2, nr + 2);
        k.view_mut((0, 0), (nr, nr)).copy_from(&g);
        k.view_mut((nr, 0), (2, nr)).copy_from(&m);
        k.view_mut((0, nr), (nr, 2)).copy_from(&m.transpose());
        k
    }

    /// Reconstruction matrix `R` (recon dim x local velocity dim).
    pub fn reconstruction_matrix(&self, face_data: &[FaceData]) -> Result<DMatrix<f64>, Error> {
        let nr = self.recon_dim();
        let n = self.layout.velocity();
        let mut rhs = DMatrix::zeros(nr + 2, n);
        let nt = self.layout.cell;
        let cell_block = -weighted_inner(&self.recon_laplacians, &self.cell_values, &self.rule.weights, 2);
        rhs.view_mut((0, 0), (nr, nt)).copy_from(&cell_block);
        let means = basis_means(&self.cell_values, &self.rule.weights, 2);
        rhs.view_mut((nr, 0), (2, nt)).copy_from(&means);
        for (j, lf) in self.faces.iter().enumerate() {
            let fd = &face_data[lf.face];
            let block = weighted_inner(&lf.recon_normal_derivatives, &fd.values, &fd.rule.weights, 2);
            rhs.view_mut((0, self.layout.face_offsets[j]), (nr, fd.dim())).copy_from(&block);
        }
        let x = solve_dense(self.bordered(), rhs, self.element, "reconstruction")?;
        Ok(x.rows(0, nr).into_owned())
    }

    /// Divergence matrix `D` (pressure dim x local velocity dim).
    pub fn divergence_matrix(&self, face_data: &[FaceData]) -> DMatrix<f64> {
        let nq = self.layout.pressure;
        let mut d = DMatrix::zeros(nq, self.layout.velocity());
        let cell_block = -weighted_inner(&self.pressure_gradients, &self.cell_values, &self.rule.weights, 2);
        d.view_mut((0, 0), (nq, self.layout.cell)).copy_from(&cell_block);
        for (j, lf) in self.faces.iter().enumerate() {
            let fd = &face_data[lf.face];
            let block = weighted_inner(&lf.pressure_normal, &fd.values, &fd.rule.weights, 2);
            d.view_mut((0, self.layout.face_offsets[j]), (nq, fd.dim())).copy_from(&block);
        }
        d
    }

    /// Differences `v_T - Pi_T R v` and `v_F - Pi_F R v` as matrices.
    pub fn stabilization_residuals(&self, face_data: &[FaceData], r: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let n = self.layout.velocity();
        let mut out = Vec::with_capacity(1 + self.faces.len());
        let p_t = weighted_inner(&self.cell_values, &self.recon_values, &self.rule.weights, 2);
        let mut delta = -(&p_t * r);
        for i in 0..self.layout.cell {
            delta[(i, i)] += 1.0;
        }
        out.push(delta);
        for (j, lf) in self.faces.iter().enumerate() {
            let fd = &face_data[lf.face];
            let p_f = weighted_inner(&fd.values, &lf.recon_values, &fd.rule.weights, 2);
            let mut delta = -(&p_f * r);
            let off = self.layout.face_offsets[j];
            for i in 0..fd.dim() {
                delta[(i, off + i)] += 1.0;
            }
            debug_assert_eq!(delta.ncols(), n);
            out.push(delta);
        }
        out
    }

    /// Stabilisation matrix with the projectors onto the element and face spaces.
    pub fn stabilization_matrix(&self, face_data: &[FaceData], r: &DMatrix<f64>) -> DMatrix<f64> {
        let res = self.stabilization_residuals(face_data, r);
        let mut s = res[0].transpose() * &res[0] / (self.h * self.h);
        for d in &res[1..] {
            s += d.transpose() * d / self.h;
        }
        s
    }

    pub fn operators(&self, face_data: &[FaceData]) -> Result<LocalOperators, Error> {
        let r = self.reconstruction_matrix(face_data)?;
        let d = self.divergence_matrix(face_data);
        let s = self.stabilization_matrix(face_data, &r);
        let g = self.stiffness();
        let mut a = r.transpose() * &g * &r + &s;
        // Remove rounding asymmetry.
        a = 0.5 * (&a + a.transpose());
        let b = -&d;
        Ok(LocalOperators { reconstruction: r, divergence: d, stabilization: s, stiffness: g, a, b })
    }

    /// Local interpolant of `v`: moments against the element and face bases.
    pub fn interpolate(&self, face_data: &[FaceData], v: impl Fn(Point2) -> Vector2<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.velocity());
        out.rows_mut(0, self.layout.cell).copy_from(&self.project_cell(&v));
        for (j, lf) in self.faces.iter().enumerate() {
            let fd = &face_data[lf.face];
            out.rows_mut(self.layout.face_offsets[j], fd.dim()).copy_from(&fd.project(&v));
        }
        out
    }

    fn project_vector(&self, values: &DMatrix<f64>, v: impl Fn(Point2) -> Vector2<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(values.ncols());
        for (q, (x, w)) in self.rule.iter().enumerate() {
            let val = v(x);
            for i in 0..values.ncols() {
                out[i] += w * (val.x * values[(2 * q, i)] + val.y * values[(2 * q + 1, i)]);
            }
        }
        out
    }

    /// L2 projection onto the element velocity space.
    pub fn project_cell(&self, v: impl Fn(Point2) -> Vector2<f64>) -> DVector<f64> {
        self.project_vector(&self.cell_values, v)
    }

    /// L2 projection onto the reconstruction space.
    pub fn project_recon(&self, v: impl Fn(Point2) -> Vector2<f64>) -> DVector<f64> {
        self.project_vector(&self.recon_values, v)
    }

    /// L2 projection onto the pressure space.
    pub fn project_pressure(&self, p: impl Fn(Point2) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.pressure);
        for (q, (x, w)) in self.rule.iter().enumerate() {
            let val = p(x);
            for m in 0..self.layout.pressure {
                out[m] += w * val * self.pressure_values[(q, m)];
            }
        }
        out
    }

    /// Elliptic projection onto the reconstruction space with mean closure.
    pub fn elliptic_project(&self, v: &dyn SmoothVectorFunction) -> Result<DVector<f64>, Error> {
        let nr = self.recon_dim();
        let mut rhs = DMatrix::zeros(nr + 2, 1);
        for (q, (x, w)) in self.rule.iter().enumerate() {
            let g: Matrix2<f64> = v.gradient(x);
            let val = v.value(x);
            for i in 0..nr {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += g[(a, b)] * self.recon_gradients[(4 * q + 2 * a + b, i)];
                    }
                }
                rhs[(i, 0)] += w * s;
            }
            rhs[(nr, 0)] += w * val.x;
            rhs[(nr + 1, 0)] += w * val.y;
        }
        let x = solve_dense(self.bordered(), rhs, self.element, "elliptic projection")?;
        Ok(x.view((0, 0), (nr, 1)).column(0).into_owned())
    }

    /// Load vector `int f . b_l` on the element velocity space.
    pub fn load(&self, f: impl Fn(Point2) -> Vector2<f64>) -> DVector<f64> {
        self.project_cell(f)
    }

    /// `int q` for every pressure basis function.
    pub fn pressure_means(&self) -> DVector<f64> {
        basis_means(&self.pressure_values, &self.rule.weights, 1).row(0).transpose()
    }
}

/// Local matrices of one element.
#[derive(Debug, Clone)]
pub struct LocalOperators {
    pub reconstruction: DMatrix<f64>,
    pub divergence: DMatrix<f64>,
    pub stabilization: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Builds every face space of a mesh.
pub fn build_face_data(
    mesh: &Mesh,
    k: usize,
    enrichment: &EnrichmentConfig,
    probes: &[Probe<'_>],
) -> Result<Vec<FaceData>, Error> {
    (0..mesh.faces.len()).map(|f| FaceData::new(mesh, f, k, enrichment, probes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{CylinderSolution, FnVectorField, VectorFunction};
    use crate::geometry::{build_cartesian_cut_mesh, Circle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    struct Setup {
        mesh: Mesh,
        faces: Vec<FaceData>,
        enrichment: EnrichmentConfig,
        k: usize,
    }

    fn setup(n: usize, k: usize, gamma: f64) -> Setup {
        let c = Circle::new(Point2::new(0.5, 0.5), 0.1).unwrap();
        let mesh = build_cartesian_cut_mesh(n, &[c]).unwrap();
        let enrichment = EnrichmentConfig::new(gamma, vec![c]);
        let faces = build_face_data(&mesh, k, &enrichment, &[]).unwrap();
        Setup { mesh, faces, enrichment, k }
    }

    impl Setup {
        fn context(&self, e: usize) -> ElementContext {
            ElementContext::new(&self.mesh, &self.mesh.elements[e], self.k, &self.enrichment, &self.faces, &[])
                .unwrap()
        }
    }

    fn smooth_field(a: f64, b: f64) -> FnVectorField<impl Fn(Point2) -> Vector2<f64>, impl Fn(Point2) -> Matrix2<f64>> {
        FnVectorField {
            value: move |x: Point2| Vector2::new((a * x.x).sin() * (b * x.y).cos(), (a * x.y + b * x.x).exp()),
            gradient: move |x: Point2| {
                let e = (a * x.y + b * x.x).exp();
                Matrix2::new(
                    a * (a * x.x).cos() * (b * x.y).cos(),
                    -b * (a * x.x).sin() * (b * x.y).sin(),
                    b * e,
                    a * e,
                )
            },
        }
    }

    #[test]
    fn layout_counts() {
        let s = setup(4, 0, 0.0);
        let ctx = s.context(0);
        assert_eq!(ctx.recon_dim(), 6);
        assert_eq!(ctx.layout.cell, 2);
        assert_eq!(ctx.layout.pressure, 1);
        assert_eq!(ctx.layout.velocity(), 2 + 4 * 2);
    }

    #[test]
    fn projector_invariance_and_least_squares_oracle() {
        let s = setup(8, 1, 0.2);
        let sol = CylinderSolution::new(s.mesh.cylinders[0]);
        for e in [0usize, 27, 30] {
            let ctx = s.context(e);
            // Every basis function of the reconstruction space is reproduced.
            for i in 0..ctx.recon_dim() {
                let mut c = DVector::zeros(ctx.recon_dim());
                c[i] = 1.0;
                let space = ctx.spaces.recon.clone();
                let cc = c.clone();
                let f = FnVectorField {
                    value: |x: Point2| {
                        let v = space.evaluate(&cc, x);
                        Vector2::new(v[0], v[1])
                    },
                    gradient: |x: Point2| space.evaluate_gradient(&cc, x),
                };
                let p = ctx.elliptic_project(&f).unwrap();
                assert!((p - c).norm() < 1e-11);
            }
            if !ctx.active_cylinders.is_empty() {
                let p = ctx.elliptic_project(&sol).unwrap();
                let direct = ctx.project_recon(|x| sol.velocity_unchecked(x));
                assert!((p - &direct).norm() < 1e-9 * direct.norm());
            }
            // Independent normal equations: least squares of the gradient
            // plus the mean, solved through a QR factorisation.
            let f = smooth_field(PI, 2.0);
            let p = ctx.elliptic_project(&f).unwrap();
            let nq = ctx.rule.len();
            let nr = ctx.recon_dim();
            let mut a = DMatrix::zeros(4 * nq + 2, nr);
            let mut b = DVector::zeros(4 * nq + 2);
            for (q, (x, w)) in ctx.rule.iter().enumerate() {
                let g = f.gradient(x);
                for r in 0..4 {
                    b[4 * q + r] = w.sqrt() * g[(r / 2, r % 2)];
                    for i in 0..nr {
                        a[(4 * q + r, i)] = w.sqrt() * ctx.recon_gradients[(4 * q + r, i)];
                    }
                }
            }
            // Heavily weighted mean rows act as the constraint.
            let big = 1e6;
            let means = basis_means(&ctx.recon_values, &ctx.rule.weights, 2);
            for c in 0..2 {
                let target: f64 = ctx.rule.iter().map(|(x, w)| w * VectorFunction::value(&f, x)[c]).sum();
                b[4 * nq + c] = big * target;
                for i in 0..nr {
                    a[(4 * nq + c, i)] = big * means[(c, i)];
                }
            }
            let oracle = a.svd(true, true).solve(&b, 1e-14).unwrap();
            assert!((p - &oracle).norm() < 1e-7 * oracle.norm(), "element {e}");
        }
    }

    #[test]
    fn interpolating_constants() {
        let s = setup(8, 1, 0.2);
        let c = Vector2::new(0.3, -1.2);
        for e in [0usize, 27] {
            let ctx = s.context(e);
            let iv = ctx.interpolate(&s.faces, |_| c);
            let r = ctx.reconstruction_matrix(&s.faces).unwrap();
            let rv = &r * &iv;
            let x = ctx.rule.points[0];
            let val = ctx.spaces.recon.evaluate(&rv, x);
            assert!((val[0] - c.x).abs() < 1e-10 && (val[1] - c.y).abs() < 1e-10, "element {e}: {val:?}");
            let ops = ctx.operators(&s.faces).unwrap();
            assert!((&ops.a * &iv).norm() < 1e-10 * ops.a.norm() * iv.norm());
            assert!((&ops.divergence * &iv).norm() < 1e-11 * iv.norm() * ops.divergence.norm());
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        let s = setup(8, 0, 0.0);
        for e in [0usize, 27, 30] {
            let ctx = s.context(e);
            let iv = ctx.interpolate(&s.faces, |x| Vector2::new(x.x, 0.0));
            let d = ctx.divergence_matrix(&s.faces) * iv;
            let one = ctx.project_pressure(|_| 1.0);
            assert!((d - one).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_of_a_is_constants() {
        let s = setup(8, 1, 0.2);
        for e in [0usize, 27] {
            let ctx = s.context(e);
            let ops = ctx.operators(&s.faces).unwrap();
            let eig = ops.a.clone().symmetric_eigen();
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let top = ev[ev.len() - 1];
            assert!(ev[0] > -1e-12 * top);
            assert!(ev[1] < 1e-11 * top);
            assert!(ev[2] > 1e-9 * top, "{ev:?}");
        }
    }

    #[test]
    fn random_dof_vector_against_reassembly() {
        // Re-derive R and S on a finer rule from the defining identities.
        let s = setup(8, 1, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for e in [0usize, 27, 30] {
            let ctx = s.context(e);
            let ops = ctx.operators(&s.faces).unwrap();
            let v = DVector::from_fn(ctx.layout.velocity(), |_, _| rng.gen_range(-1.0..1.0));
            let rv = &ops.reconstruction * &v;
            let elem = &s.mesh.elements[e];
            let fine = Domain::Element(&s.mesh, elem).rule(ctx.rule.degree + 4);
            let vt = v.rows(0, ctx.layout.cell).into_owned();
            let cell_at = |x: Point2| {
                let a = ctx.spaces.cell.evaluate(&vt, x);
                Vector2::new(a[0], a[1])
            };
            // Integration by parts identity for every w in the space.
            for i in 0..ctx.recon_dim() {
                let mut wc = DVector::zeros(ctx.recon_dim());
                wc[i] = 1.0;
                let lhs = fine.integrate(|x| {
                    let gr = ctx.spaces.recon.evaluate_gradient(&rv, x);
                    let gw = ctx.spaces.recon.evaluate_gradient(&wc, x);
                    gr.component_mul(&gw).sum()
                });
                let lap_w = |x: Point2| {
                    let span = &ctx.spaces.recon.coefficients * &wc;
                    ctx.spaces
                        .recon
                        .spanning
                        .iter()
                        .enumerate()
                        .map(|(j, f)| span[j] * f.laplacian(x))
                        .sum::<Vector2<f64>>()
                };
                let mut rhs = -fine.integrate(|x| cell_at(x).dot(&lap_w(x)));
                for (j, &(f, o)) in elem.faces.iter().enumerate() {
                    let fd = &s.faces[f];
                    let frule = crate::quadrature::face_rule(&s.mesh.faces[f], fd.rule.degree + 4);
                    let vf = v.rows(ctx.layout.face_offsets[j], fd.dim()).into_owned();
                    rhs += frule.integrate(|x| {
                        let a = fd.space.evaluate(&vf, x);
                        let n = s.mesh.outward_normal(f, o, x);
                        let gw = ctx.spaces.recon.evaluate_gradient(&wc, x);
                        Vector2::new(a[0], a[1]).dot(&(gw * n))
                    });
                }
                assert!((lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()), "element {e} basis {i}: {lhs} vs {rhs}");
            }
            // Stabilisation equals the norm of v - I R v.
            let rv_field = |x: Point2| {
                let a = ctx.spaces.recon.evaluate(&rv, x);
                Vector2::new(a[0], a[1])
            };
            let irv = ctx.interpolate(&s.faces, rv_field);
            let diff = &v - &irv;
            let mut norm = diff.rows(0, ctx.layout.cell).norm_squared() / (ctx.h * ctx.h);
            for (j, &d) in ctx.layout.faces.iter().enumerate() {
                norm += diff.rows(ctx.layout.face_offsets[j], d).norm_squared() / ctx.h;
            }
            let sv = v.dot(&(&ops.stabilization * &v));
            assert!((sv - norm).abs() < 1e-9 * norm.max(1.0), "{sv} vs {norm}");
        }
    }
}
