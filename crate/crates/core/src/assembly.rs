//! Global saddle-point system, static condensation and error metrics.
//!
//! Uncondensed unknown ordering: internal face velocities, element
//! velocities, pressures, then the multiplier of the zero-mean constraint.
//! Condensed ordering: internal face velocities, one pressure per element,
//! multiplier.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, SolveError};
use crate::geometry::{Mesh, Point2};
use crate::local_ops::{ElementContext, FaceData, LocalOperators, Probe};
use crate::spaces::EnrichmentConfig;

pub type VectorFn = Arc<dyn Fn(Point2) -> Vector2<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;

/// Stokes problem `-nu Lap u + grad p = f`, `div u = 0`, `u = g` on the boundary.
#[derive(Clone)]
pub struct StokesProblem {
    pub mesh: Mesh,
    pub k: usize,
    pub enrichment: EnrichmentConfig,
    pub viscosity: f64,
    pub force: VectorFn,
    pub dirichlet: VectorFn,
    /// Extra integrands used when choosing element quadrature rules.
    pub probes: Vec<ScalarFn>,
    /// Extra integrands used when choosing face quadrature rules.
    pub face_probes: Vec<ScalarFn>,
}

impl fmt::Debug for StokesProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StokesProblem")
            .field("elements", &self.mesh.elements.len())
            .field("k", &self.k)
            .field("enrichment", &self.enrichment)
            .field("viscosity", &self.viscosity)
            .field("probes", &self.probes.len())
            .field("face_probes", &self.face_probes.len())
            .finish()
    }
}

impl StokesProblem {
    pub fn new(mesh: Mesh, k: usize, enrichment: EnrichmentConfig, force: VectorFn, dirichlet: VectorFn) -> Self {
        Self { mesh, k, enrichment, viscosity: 1.0, force, dirichlet, probes: Vec::new(), face_probes: Vec::new() }
    }

    pub fn with_viscosity(mut self, viscosity: f64) -> Result<Self, Error> {
        if !(viscosity > 0.0 && viscosity.is_finite()) {
            return Err(Error::Config(format!("viscosity must be positive, got {viscosity}")));
        }
        self.viscosity = viscosity;
        Ok(self)
    }

    pub fn with_probe(mut self, probe: ScalarFn) -> Self {
        self.probes.push(probe);
        self
    }

    pub fn with_face_probe(mut self, probe: ScalarFn) -> Self {
        self.face_probes.push(probe);
        self
    }
}

/// Global numbering of the discrete unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDofMap {
    /// Offset of each internal face; `None` on the boundary.
    pub face_offsets: Vec<Option<usize>>,
    pub face_dims: Vec<usize>,
    pub cell_offsets: Vec<usize>,
    pub cell_dims: Vec<usize>,
    pub pressure_offsets: Vec<usize>,
    pub pressure_dims: Vec<usize>,
    pub num_face_dofs: usize,
    pub num_cell_dofs: usize,
    pub num_pressure_dofs: usize,
}

impl GlobalDofMap {
    pub fn new(mesh: &Mesh, faces: &[FaceData], elements: &[ElementContext]) -> Self {
        let mut face_offsets = Vec::with_capacity(faces.len());
        let mut num_face_dofs = 0;
        for (f, fd) in mesh.faces.iter().zip(faces) {
            if f.is_boundary() {
                face_offsets.push(None);
            } else {
                face_offsets.push(Some(num_face_dofs));
                num_face_dofs += fd.dim();
            }
        }
        let face_dims = faces.iter().map(|f| f.dim()).collect();
        let mut cell_offsets = Vec::with_capacity(elements.len());
        let mut pressure_offsets = Vec::with_capacity(elements.len());
        let (mut nc, mut np) = (0, 0);
        for ctx in elements {
            cell_offsets.push(nc);
            pressure_offsets.push(np);
            nc += ctx.layout.cell;
            np += ctx.layout.pressure;
        }
        Self {
            face_offsets,
            face_dims,
            cell_offsets,
            cell_dims: elements.iter().map(|c| c.layout.cell).collect(),
            pressure_offsets,
            pressure_dims: elements.iter().map(|c| c.layout.pressure).collect(),
            num_face_dofs,
            num_cell_dofs: nc,
            num_pressure_dofs: np,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.cell_offsets.len()
    }

    /// Reported degrees of freedom: one pressure per element plus the
    /// internal face velocities.
    pub fn dofs(&self) -> usize {
        self.num_elements() + self.num_face_dofs
    }

    /// Size of the condensed system, multiplier included.
    pub fn condensed_size(&self) -> usize {
        self.dofs() + 1
    }

    /// Size of the uncondensed system, multiplier included.
    pub fn full_size(&self) -> usize {
        self.num_face_dofs + self.num_cell_dofs + self.num_pressure_dofs + 1
    }
}

/// Local unknown either mapped to a global index or fixed by boundary data.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Free(usize),
    Fixed(f64),
}

/// Spaces, local operators and boundary data for a problem.
pub struct Discretization<'a> {
    pub problem: &'a StokesProblem,
    pub faces: Vec<FaceData>,
    pub elements: Vec<ElementContext>,
    pub operators: Vec<LocalOperators>,
    pub dofs: GlobalDofMap,
    /// Projection of the Dirichlet data on boundary faces.
    pub boundary_values: Vec<Option<DVector<f64>>>,
}

impl<'a> Discretization<'a> {
    pub fn new(problem: &'a StokesProblem) -> Result<Self, Error> {
        let mesh = &problem.mesh;
        let g = problem.dirichlet.clone();
        let g_sq = move |x: Point2| g(x).norm_squared();
        let mut face_probes: Vec<Probe<'_>> = problem.face_probes.iter().map(|p| p.as_ref() as Probe<'_>).collect();
        let interior_count = face_probes.len();
        face_probes.push(&g_sq);
        // The data probe only matters on the boundary.
        let faces = (0..mesh.faces.len())
            .map(|f| {
                let probes = if mesh.faces[f].is_boundary() { &face_probes[..] } else { &face_probes[..interior_count] };
                FaceData::new(mesh, f, problem.k, &problem.enrichment, probes)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let force = problem.force.clone();
        let f_sq = move |x: Point2| force(x).norm_squared();
        let mut probes: Vec<Probe<'_>> = vec![&f_sq];
        for p in &problem.probes {
            probes.push(p.as_ref());
        }
        let mut elements = Vec::with_capacity(mesh.elements.len());
        let mut operators = Vec::with_capacity(mesh.elements.len());
        for e in &mesh.elements {
            let ctx = ElementContext::new(mesh, e, problem.k, &problem.enrichment, &faces, &probes)?;
            operators.push(ctx.operators(&faces)?);
            elements.push(ctx);
        }
        let dofs = GlobalDofMap::new(mesh, &faces, &elements);
        let boundary_values = mesh
            .faces
            .iter()
            .zip(&faces)
            .map(|(f, fd)| f.is_boundary().then(|| fd.project(|x| (problem.dirichlet)(x))))
            .collect();
        Ok(Self { problem, faces, elements, operators, dofs, boundary_values })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.problem.mesh
    }

    /// Local saddle-point matrix `[nu A, B^T; B, 0]` of an element.
    pub fn local_matrix(&self, e: usize) -> DMatrix<f64> {
        let ops = &self.operators[e];
        let nv = ops.a.nrows();
        let nq = ops.b.nrows();
        let mut l = DMatrix::zeros(nv + nq, nv + nq);
        l.view_mut((0, 0), (nv, nv)).copy_from(&(self.problem.viscosity * &ops.a));
        l.view_mut((nv, 0), (nq, nv)).copy_from(&ops.b);
        l.view_mut((0, nv), (nv, nq)).copy_from(&ops.b.transpose());
        l
    }

    /// Local right-hand side: the load on the element velocity.
    pub fn local_rhs(&self, e: usize) -> DVector<f64> {
        let ctx = &self.elements[e];
        let mut r = DVector::zeros(ctx.layout.velocity() + ctx.layout.pressure);
        let load = ctx.load(|x| (self.problem.force)(x));
        r.rows_mut(0, ctx.layout.cell).copy_from(&load);
        r
    }

    /// Local face slots in the uncondensed numbering (cell slots handled separately).
    fn face_slots(&self, e: usize, out: &mut Vec<Slot>) {
        let ctx = &self.elements[e];
        for lf in &ctx.faces {
            match (self.dofs.face_offsets[lf.face], &self.boundary_values[lf.face]) {
                (Some(off), _) => out.extend((0..self.dofs.face_dims[lf.face]).map(|i| Slot::Free(off + i))),
                (None, Some(g)) => out.extend(g.iter().map(|&v| Slot::Fixed(v))),
                (None, None) => unreachable!("boundary face without data"),
            }
        }
    }

    fn full_slots(&self, e: usize) -> Vec<Slot> {
        let ctx = &self.elements[e];
        let d = &self.dofs;
        let mut slots = Vec::with_capacity(ctx.layout.velocity() + ctx.layout.pressure);
        let cell0 = d.num_face_dofs + d.cell_offsets[e];
        slots.extend((0..ctx.layout.cell).map(|i| Slot::Free(cell0 + i)));
        self.face_slots(e, &mut slots);
        let p0 = d.num_face_dofs + d.num_cell_dofs + d.pressure_offsets[e];
        slots.extend((0..ctx.layout.pressure).map(|i| Slot::Free(p0 + i)));
        slots
    }

    /// `int q_m` on element `e`, keeping only the constant mode. The other
    /// basis functions are orthogonal to constants by construction.
    fn multiplier_weight(&self, e: usize) -> f64 {
        self.elements[e].pressure_means()[0]
    }
}

/// Sparse matrix as accumulated triplets.
#[derive(Debug, Clone, Default)]
pub struct SparseSystem {
    pub size: usize,
    pub entries: BTreeMap<(usize, usize), f64>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    fn new(size: usize) -> Self {
        Self { size, entries: BTreeMap::new(), rhs: vec![0.0; size] }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            *self.entries.entry((i, j)).or_insert(0.0) += v;
        }
    }

    /// Scatters a local matrix and rhs, moving fixed columns to the rhs.
    fn scatter(&mut self, slots: &[Slot], m: &DMatrix<f64>, r: &DVector<f64>) {
        for (a, sa) in slots.iter().enumerate() {
            let Slot::Free(i) = *sa else { continue };
            self.rhs[i] += r[a];
            for (b, sb) in slots.iter().enumerate() {
                match *sb {
                    Slot::Free(j) => self.add(i, j, m[(a, b)]),
                    Slot::Fixed(v) => self.rhs[i] -= m[(a, b)] * v,
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for (&(i, j), &v) in &self.entries {
            m[(i, j)] = v;
        }
        m
    }

    /// Sparse LU solve.
    pub fn solve(&self) -> Result<DVector<f64>, SolveError> {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            self.entries.iter().map(|(&(i, j), &v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.size, self.size, &triplets)
            .map_err(|e| SolveError::Global(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| SolveError::Global(format!("{e:?}")))?;
        let b = Mat::from_fn(self.size, 1, |i, _| self.rhs[i]);
        let x = lu.solve(&b);
        let x = DVector::from_fn(self.size, |i, _| x[(i, 0)]);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite("global solution".into()));
        }
        Ok(x)
    }
}

/// Discrete velocity and pressure with the reconstructed velocity.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    /// Coefficients on every face, boundary faces included.
    pub faces: Vec<DVector<f64>>,
    pub cells: Vec<DVector<f64>>,
    pub pressures: Vec<DVector<f64>>,
    /// Reconstructed velocity coefficients per element.
    pub reconstructions: Vec<DVector<f64>>,
    pub multiplier: f64,
}

impl DiscreteSolution {
    /// Local velocity vector `(u_T, u_F1, ...)` of element `e`.
    pub fn local_velocity(&self, disc: &Discretization<'_>, e: usize) -> DVector<f64> {
        let ctx = &disc.elements[e];
        let mut v = DVector::zeros(ctx.layout.velocity());
        v.rows_mut(0, ctx.layout.cell).copy_from(&self.cells[e]);
        for (j, lf) in ctx.faces.iter().enumerate() {
            v.rows_mut(ctx.layout.face_offsets[j], ctx.layout.faces[j]).copy_from(&self.faces[lf.face]);
        }
        v
    }

    /// Euclidean norm of all velocity coefficients.
    pub fn velocity_norm(&self) -> f64 {
        let s: f64 = self.faces.iter().chain(&self.cells).map(|v| v.norm_squared()).sum();
        s.sqrt()
    }

    /// L2 norm of the pressure (bases are orthonormal).
    pub fn pressure_norm(&self) -> f64 {
        self.pressures.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt()
    }

    /// `int_Omega p_h`.
    pub fn pressure_integral(&self, disc: &Discretization<'_>) -> f64 {
        (0..self.pressures.len()).map(|e| disc.elements[e].pressure_means().dot(&self.pressures[e])).sum()
    }

    /// Largest `|b_h(u_h, q)|` over the pressure basis.
    pub fn divergence_residual(&self, disc: &Discretization<'_>) -> f64 {
        (0..self.cells.len())
            .map(|e| (&disc.operators[e].b * self.local_velocity(disc, e)).amax())
            .fold(0.0, f64::max)
    }

    /// Broken H1 seminorm of the reconstructed velocity.
    pub fn reconstruction_h1(&self, disc: &Discretization<'_>) -> f64 {
        self.reconstructions
            .iter()
            .zip(&disc.operators)
            .map(|(r, ops)| r.dot(&(&ops.stiffness * r)))
            .sum::<f64>()
            .sqrt()
    }

    /// Evaluates the reconstructed velocity and the pressure at `x`, or
    /// `None` outside the fluid.
    pub fn evaluate(&self, disc: &Discretization<'_>, x: Point2) -> Option<(Vector2<f64>, f64)> {
        let e = disc.mesh().locate(x)?;
        let ctx = &disc.elements[e];
        let u = ctx.spaces.recon.evaluate(&self.reconstructions[e], x);
        let p: f64 = (0..ctx.layout.pressure)
            .map(|m| {
                let span = &ctx.spaces.pressure.coefficients;
                let mut v = 0.0;
                for (j, f) in ctx.spaces.pressure.spanning.iter().enumerate() {
                    v += span[(j, m)] * f.value(x);
                }
                v * self.pressures[e][m]
            })
            .sum();
        Some((Vector2::new(u[0], u[1]), p))
    }
}

fn expand(disc: &Discretization<'_>, x: &DVector<f64>, pressure: impl Fn(usize) -> DVector<f64>, cells: Vec<DVector<f64>>) -> DiscreteSolution {
    let d = &disc.dofs;
    let faces: Vec<DVector<f64>> = (0..disc.faces.len())
        .map(|f| match (d.face_offsets[f], &disc.boundary_values[f]) {
            (Some(off), _) => x.rows(off, d.face_dims[f]).into_owned(),
            (None, Some(g)) => g.clone(),
            (None, None) => unreachable!(),
        })
        .collect();
    let pressures: Vec<DVector<f64>> = (0..cells.len()).map(pressure).collect();
    let mut sol = DiscreteSolution {
        faces,
        cells,
        pressures,
        reconstructions: Vec::new(),
        multiplier: x[x.len() - 1],
    };
    sol.reconstructions = (0..sol.cells.len())
        .map(|e| &disc.operators[e].reconstruction * sol.local_velocity(disc, e))
        .collect();
    sol
}

/// Uncondensed global system with Dirichlet values eliminated.
pub fn assemble(disc: &Discretization<'_>) -> SparseSystem {
    let d = &disc.dofs;
    let n = d.full_size();
    let lambda = n - 1;
    let mut sys = SparseSystem::new(n);
    for e in 0..disc.elements.len() {
        let slots = disc.full_slots(e);
        sys.scatter(&slots, &disc.local_matrix(e), &disc.local_rhs(e));
        let p0 = d.num_face_dofs + d.num_cell_dofs + d.pressure_offsets[e];
        let w = disc.multiplier_weight(e);
        sys.add(p0, lambda, w);
        sys.add(lambda, p0, w);
    }
    sys
}

/// Solves the uncondensed system directly.
pub fn solve_uncondensed(disc: &Discretization<'_>) -> Result<DiscreteSolution, Error> {
    let x = assemble(disc).solve()?;
    let d = &disc.dofs;
    let cells = (0..disc.elements.len())
        .map(|e| x.rows(d.num_face_dofs + d.cell_offsets[e], d.cell_dims[e]).into_owned())
        .collect();
    let p_base = d.num_face_dofs + d.num_cell_dofs;
    Ok(expand(disc, &x, |e| x.rows(p_base + d.pressure_offsets[e], d.pressure_dims[e]).into_owned(), cells))
}

/// Per-element data kept for back-substitution.
struct Condensed {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    /// `L_II^{-1} L_IB`.
    coupling: DMatrix<f64>,
    /// `L_II^{-1} r_I`.
    offset: DVector<f64>,
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Eliminates element velocities and all but the first pressure mode on
/// each element, solves the face/mean-pressure system and back-substitutes.
pub fn condense_and_solve(disc: &Discretization<'_>) -> Result<DiscreteSolution, Error> {
    let d = &disc.dofs;
    let ne = disc.elements.len();
    let n = d.condensed_size();
    let lambda = n - 1;
    let mut sys = SparseSystem::new(n);
    let mut data = Vec::with_capacity(ne);
    for e in 0..ne {
        let ctx = &disc.elements[e];
        let nt = ctx.layout.cell;
        let nv = ctx.layout.velocity();
        let nq = ctx.layout.pressure;
        let interior: Vec<usize> = (0..nt).chain(nv + 1..nv + nq).collect();
        let boundary: Vec<usize> = (nt..nv).chain(std::iter::once(nv)).collect();
        let l = disc.local_matrix(e);
        let r = disc.local_rhs(e);
        let l_ii = select(&l, &interior, &interior);
        let l_ib = select(&l, &interior, &boundary);
        let l_bi = select(&l, &boundary, &interior);
        let l_bb = select(&l, &boundary, &boundary);
        let r_i = DVector::from_fn(interior.len(), |i, _| r[interior[i]]);
        let r_b = DVector::from_fn(boundary.len(), |i, _| r[boundary[i]]);
        let lu = l_ii.lu();
        let singular = || SolveError::SingularLocal { element: e, detail: "condensation".into() };
        let coupling = lu.solve(&l_ib).ok_or_else(singular)?;
        let offset = lu.solve(&r_i).ok_or_else(singular)?;
        let schur = l_bb - &l_bi * &coupling;
        let rhs = r_b - &l_bi * &offset;
        let mut slots = Vec::with_capacity(boundary.len());
        disc.face_slots(e, &mut slots);
        slots.push(Slot::Free(d.num_face_dofs + e));
        sys.scatter(&slots, &schur, &rhs);
        let w = disc.multiplier_weight(e);
        sys.add(d.num_face_dofs + e, lambda, w);
        sys.add(lambda, d.num_face_dofs + e, w);
        data.push(Condensed { interior, boundary, coupling, offset });
    }
    let x = sys.solve()?;
    let mut cells = Vec::with_capacity(ne);
    let mut pressures = Vec::with_capacity(ne);
    for (e, c) in data.iter().enumerate() {
        let ctx = &disc.elements[e];
        let nt = ctx.layout.cell;
        let nv = ctx.layout.velocity();
        let mut slots = Vec::with_capacity(c.boundary.len());
        disc.face_slots(e, &mut slots);
        let xb = DVector::from_fn(c.boundary.len(), |i, _| {
            if i + 1 == c.boundary.len() {
                x[d.num_face_dofs + e]
            } else {
                match slots[i] {
                    Slot::Free(j) => x[j],
                    Slot::Fixed(v) => v,
                }
            }
        });
        let xi = &c.offset - &c.coupling * &xb;
        cells.push(xi.rows(0, nt).into_owned());
        let mut p = DVector::zeros(ctx.layout.pressure);
        p[0] = xb[xb.len() - 1];
        for (m, &li) in c.interior.iter().enumerate().skip(nt) {
            p[li - nv] = xi[m];
        }
        pressures.push(p);
    }
    Ok(expand(disc, &x, |e| pressures[e].clone(), cells))
}

/// Relative errors against an exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeErrors {
    /// Reconstruction against the L2 projection onto the reconstruction space.
    pub l2: f64,
    /// Energy norm of the discrete error against the interpolant.
    pub energy: f64,
    /// Pressure against its L2 projection onto the pressure space.
    pub pressure: f64,
}

/// Computes the relative errors of `sol` with respect to `(u, p)`.
pub fn relative_errors(
    disc: &Discretization<'_>,
    sol: &DiscreteSolution,
    u: &(dyn Fn(Point2) -> Vector2<f64> + Sync),
    p: &(dyn Fn(Point2) -> f64 + Sync),
) -> RelativeErrors {
    let (mut l2_num, mut l2_den) = (0.0, 0.0);
    let (mut a_num, mut a_den) = (0.0, 0.0);
    let (mut p_num, mut p_den) = (0.0, 0.0);
    // The multiplier fixes the pressure mean to zero; shift the exact one alike.
    let mut mean = 0.0;
    let mut area = 0.0;
    let mut proj_p = Vec::with_capacity(disc.elements.len());
    for ctx in &disc.elements {
        let pp = ctx.project_pressure(p);
        mean += ctx.pressure_means().dot(&pp);
        area += ctx.rule.measure();
        proj_p.push(pp);
    }
    let shift = mean / area;
    for (e, ctx) in disc.elements.iter().enumerate() {
        let pr = ctx.project_recon(u);
        l2_num += (&sol.reconstructions[e] - &pr).norm_squared();
        l2_den += pr.norm_squared();
        let iu = ctx.interpolate(&disc.faces, u);
        let diff = sol.local_velocity(disc, e) - &iu;
        let a = &disc.operators[e].a;
        a_num += diff.dot(&(a * &diff));
        a_den += iu.dot(&(a * &iu));
        let mut pe = proj_p[e].clone();
        pe -= shift * ctx.project_pressure(|_| 1.0);
        p_num += (&sol.pressures[e] - &pe).norm_squared();
        p_den += pe.norm_squared();
    }
    RelativeErrors {
        l2: (l2_num / l2_den).sqrt(),
        energy: (a_num.max(0.0) / a_den).sqrt(),
        pressure: (p_num / p_den).sqrt(),
    }
}
