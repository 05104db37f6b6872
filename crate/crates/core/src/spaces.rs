//! Local function spaces: polynomial bases, curved-face spaces and the
//! cylinder enrichment, each pruned to an independent L2-orthonormal basis.
//!
//! A [`FunctionSpace`] keeps its spanning fields and a coefficient matrix
//! `C` (spanning x dim): basis function `i` is `sum_j C[(j, i)] phi_j`.
//! Pruning runs a column-pivoted Gram–Schmidt with re-orthogonalisation on the
//! quadrature-weighted tabulation, which resolves residual norms down to
//! rounding level.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::analytic::CylinderSolution;
use crate::error::SpaceError;
use crate::geometry::{Circle, Element, Face, FaceGeometry, Mesh, Point2};
use crate::quadrature::QuadratureRule;

/// Relative residual norm below which a spanning function is dropped.
pub const PRUNE_TOLERANCE: f64 = 1e-10;

/// Relative norm below which a spanning column is treated as zero.
pub const ZERO_COLUMN_TOLERANCE: f64 = 1e-13;

/// `((x - c_x)/s)^px ((y - c_y)/s)^py`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub center: Point2,
    pub scale: f64,
    pub px: i32,
    pub py: i32,
}

fn ipow(x: f64, p: i32) -> f64 {
    if p <= 0 {
        if p == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        x.powi(p)
    }
}

impl Monomial {
    pub fn degree(&self) -> i32 {
        self.px + self.py
    }

    pub fn value(&self, x: Point2) -> f64 {
        let u = (x - self.center) / self.scale;
        ipow(u.x, self.px) * ipow(u.y, self.py)
    }

    pub fn gradient(&self, x: Point2) -> Vector2<f64> {
        let u = (x - self.center) / self.scale;
        let (px, py) = (self.px as f64, self.py as f64);
        Vector2::new(
            px * ipow(u.x, self.px - 1) * ipow(u.y, self.py),
            py * ipow(u.x, self.px) * ipow(u.y, self.py - 1),
        ) / self.scale
    }

    pub fn laplacian(&self, x: Point2) -> f64 {
        let u = (x - self.center) / self.scale;
        let (px, py) = (self.px as f64, self.py as f64);
        (px * (px - 1.0) * ipow(u.x, self.px - 2) * ipow(u.y, self.py)
            + py * (py - 1.0) * ipow(u.x, self.px) * ipow(u.y, self.py - 2))
            / (self.scale * self.scale)
    }

    pub fn hessian(&self, x: Point2) -> Matrix2<f64> {
        let u = (x - self.center) / self.scale;
        let (px, py) = (self.px as f64, self.py as f64);
        let xy = px * py * ipow(u.x, self.px - 1) * ipow(u.y, self.py - 1);
        Matrix2::new(
            px * (px - 1.0) * ipow(u.x, self.px - 2) * ipow(u.y, self.py),
            xy,
            xy,
            py * (py - 1.0) * ipow(u.x, self.px) * ipow(u.y, self.py - 2),
        ) / (self.scale * self.scale)
    }
}

/// Monomials of total degree at most `degree`, ordered by degree.
pub fn monomials(center: Point2, scale: f64, degree: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=degree as i32 {
        for py in 0..=d {
            out.push(Monomial { center, scale, px: d - py, py });
        }
    }
    out
}

pub trait Field {
    /// Number of components.
    const RANK: usize;
    fn write_value(&self, x: Point2, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarField {
    Monomial(Monomial),
    CylinderPressure(CylinderSolution),
}

impl ScalarField {
    pub fn value(&self, x: Point2) -> f64 {
        match self {
            ScalarField::Monomial(m) => m.value(x),
            ScalarField::CylinderPressure(s) => s.pressure_unchecked(x),
        }
    }

    pub fn gradient(&self, x: Point2) -> Vector2<f64> {
        match self {
            ScalarField::Monomial(m) => m.gradient(x),
            ScalarField::CylinderPressure(s) => s.pressure_gradient_unchecked(x),
        }
    }

    pub fn hessian(&self, x: Point2) -> Matrix2<f64> {
        match self {
            ScalarField::Monomial(m) => m.hessian(x),
            ScalarField::CylinderPressure(s) => s.pressure_hessian_unchecked(x),
        }
    }

    pub fn is_enrichment(&self) -> bool {
        !matches!(self, ScalarField::Monomial(_))
    }
}

impl Field for ScalarField {
    const RANK: usize = 1;
    fn write_value(&self, x: Point2, out: &mut [f64]) {
        out[0] = self.value(x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VectorField {
    /// Monomial times the unit vector `e_axis`.
    Component { mono: Monomial, axis: usize },
    CylinderVelocity(CylinderSolution),
    CylinderVelocityLaplacian(CylinderSolution),
    CylinderPressureGradient(CylinderSolution),
}

impl VectorField {
    pub fn value(&self, x: Point2) -> Vector2<f64> {
        match self {
            VectorField::Component { mono, axis } => {
                let mut v = Vector2::zeros();
                v[*axis] = mono.value(x);
                v
            }
            VectorField::CylinderVelocity(s) => s.velocity_unchecked(x),
            VectorField::CylinderVelocityLaplacian(s) => s.velocity_laplacian_unchecked(x),
            VectorField::CylinderPressureGradient(s) => s.pressure_gradient_unchecked(x),
        }
    }

    /// `G[(i, j)] = d v_i / d x_j`.
    pub fn gradient(&self, x: Point2) -> Matrix2<f64> {
        match self {
            VectorField::Component { mono, axis } => {
                let g = mono.gradient(x);
                let mut m = Matrix2::zeros();
                m[(*axis, 0)] = g.x;
                m[(*axis, 1)] = g.y;
                m
            }
            VectorField::CylinderVelocity(s) => s.velocity_gradient_unchecked(x),
            VectorField::CylinderVelocityLaplacian(s) => s.velocity_laplacian_gradient_unchecked(x),
            VectorField::CylinderPressureGradient(s) => s.pressure_hessian_unchecked(x),
        }
    }

    pub fn laplacian(&self, x: Point2) -> Vector2<f64> {
        match self {
            VectorField::Component { mono, axis } => {
                let mut v = Vector2::zeros();
                v[*axis] = mono.laplacian(x);
                v
            }
            VectorField::CylinderVelocity(s) => s.velocity_laplacian_unchecked(x),
            // Both are gradients of the harmonic pressure.
            VectorField::CylinderVelocityLaplacian(_) | VectorField::CylinderPressureGradient(_) => {
                Vector2::zeros()
            }
        }
    }

    pub fn is_enrichment(&self) -> bool {
        !matches!(self, VectorField::Component { .. })
    }
}

impl Field for VectorField {
    const RANK: usize = 2;
    fn write_value(&self, x: Point2, out: &mut [f64]) {
        let v = self.value(x);
        out[0] = v.x;
        out[1] = v.y;
    }
}

/// Unit normal of a face, evaluated pointwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceNormal {
    Constant(Vector2<f64>),
    /// `sign * (x - center) / |x - center|`.
    Radial { center: Point2, sign: f64 },
}

impl FaceNormal {
    pub fn of_face(geometry: &FaceGeometry, sign: f64) -> Self {
        match *geometry {
            FaceGeometry::Segment { .. } => {
                FaceNormal::Constant(sign * geometry.normal_at(geometry.start_point()))
            }
            FaceGeometry::Arc { circle, .. } => FaceNormal::Radial { center: circle.center, sign },
        }
    }

    pub fn at(&self, x: Point2) -> Vector2<f64> {
        match *self {
            FaceNormal::Constant(n) => n,
            FaceNormal::Radial { center, sign } => sign * (x - center).normalize(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceField {
    Constant { axis: usize },
    /// Power of the scaled tangent coordinate along a segment, times `e_axis`.
    Tangential { origin: Point2, tangent: Vector2<f64>, scale: f64, degree: i32, axis: usize },
    /// `m(x) n_j(x) e_axis`.
    NormalMonomial { mono: Monomial, normal: FaceNormal, normal_axis: usize, axis: usize },
    /// `(grad u) n` for the cylinder velocity.
    VelocityNormalDerivative { solution: CylinderSolution, normal: FaceNormal },
    /// `p n` for the cylinder pressure.
    PressureNormal { solution: CylinderSolution, normal: FaceNormal },
}

impl TraceField {
    pub fn value(&self, x: Point2) -> Vector2<f64> {
        let unit = |axis: usize, v: f64| {
            let mut e = Vector2::zeros();
            e[axis] = v;
            e
        };
        match self {
            TraceField::Constant { axis } => unit(*axis, 1.0),
            TraceField::Tangential { origin, tangent, scale, degree, axis } => {
                let t = (x - origin).dot(tangent) / scale;
                unit(*axis, ipow(t, *degree))
            }
            TraceField::NormalMonomial { mono, normal, normal_axis, axis } => {
                unit(*axis, mono.value(x) * normal.at(x)[*normal_axis])
            }
            TraceField::VelocityNormalDerivative { solution, normal } => {
                solution.velocity_gradient_unchecked(x) * normal.at(x)
            }
            TraceField::PressureNormal { solution, normal } => solution.pressure_unchecked(x) * normal.at(x),
        }
    }

    pub fn is_enrichment(&self) -> bool {
        matches!(
            self,
            TraceField::VelocityNormalDerivative { .. } | TraceField::PressureNormal { .. }
        )
    }
}

impl Field for TraceField {
    const RANK: usize = 2;
    fn write_value(&self, x: Point2, out: &mut [f64]) {
        let v = self.value(x);
        out[0] = v.x;
        out[1] = v.y;
    }
}

/// Values of `fields` at `points`; row `RANK * q + c`, column per field.
pub fn tabulate<F: Field>(fields: &[F], points: &[Point2]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(F::RANK * points.len(), fields.len());
    let mut buf = [0.0; 2];
    for (q, &x) in points.iter().enumerate() {
        for (j, f) in fields.iter().enumerate() {
            f.write_value(x, &mut buf);
            for c in 0..F::RANK {
                m[(F::RANK * q + c, j)] = buf[c];
            }
        }
    }
    m
}

/// Multiplies row block `q` by `sqrt(w_q)`.
pub fn weight_rows(m: &mut DMatrix<f64>, weights: &[f64], rank: usize) {
    for (q, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        for c in 0..rank {
            m.row_mut(rank * q + c).scale_mut(s);
        }
    }
}

/// Weighted L2 Gram matrix of `fields` under `rule`.
pub fn spanning_gram<F: Field>(fields: &[F], rule: &QuadratureRule) -> DMatrix<f64> {
    let mut t = tabulate(fields, &rule.points);
    weight_rows(&mut t, &rule.weights, F::RANK);
    t.transpose() * &t
}

#[derive(Debug, Clone)]
pub struct Pruning {
    /// Spanning x kept coefficients of the orthonormal basis.
    pub coefficients: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub pruned: Vec<usize>,
    /// Smallest relative residual norm among kept functions.
    pub min_residual: f64,
}

/// Selects an independent subset of the columns of the weighted tabulation
/// `a` and orthonormalises it. The first `leading` columns are visited in
/// order; the rest by largest remaining residual. A column is kept when its
/// residual norm, relative to its own norm, exceeds `tolerance`.
pub fn prune_dependent(a: &DMatrix<f64>, leading: usize, tolerance: f64) -> Pruning {
    let n = a.ncols();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    // Columns negligible against the largest one are numerically zero traces.
    let largest = norms.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let valid = |j: usize| norms[j] > ZERO_COLUMN_TOLERANCE * largest && norms[j].is_finite();
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut c: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    let mut min_residual = f64::INFINITY;

    let orthogonalise = |j: usize, q: &[DVector<f64>], c: &[DVector<f64>]| {
        let mut v: DVector<f64> = a.column(j) / norms[j];
        let mut coef = DVector::zeros(n);
        coef[j] = 1.0 / norms[j];
        for _ in 0..2 {
            for (qi, ci) in q.iter().zip(c) {
                let alpha = qi.dot(&v);
                v.axpy(-alpha, qi, 1.0);
                coef.axpy(-alpha, ci, 1.0);
            }
        }
        (v, coef)
    };

    let lead = leading.min(n);
    let mut remaining: Vec<usize> = Vec::new();
    for j in 0..n {
        if !valid(j) {
            pruned.push(j);
        } else if j >= lead {
            remaining.push(j);
        } else {
            let (v, coef) = orthogonalise(j, &q, &c);
            let r = v.norm();
            if r > tolerance {
                q.push(v / r);
                c.push(coef / r);
                kept.push(j);
                min_residual = min_residual.min(r);
            } else {
                pruned.push(j);
            }
        }
    }
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64, DVector<f64>, DVector<f64>)> = None;
        for (slot, &j) in remaining.iter().enumerate() {
            let (v, coef) = orthogonalise(j, &q, &c);
            let r = v.norm();
            if best.as_ref().map_or(true, |b| r > b.1) {
                best = Some((slot, r, v, coef));
            }
        }
        let (slot, r, v, coef) = best.unwrap();
        if r <= tolerance {
            pruned.append(&mut remaining);
            break;
        }
        kept.push(remaining.remove(slot));
        q.push(v / r);
        c.push(coef / r);
        min_residual = min_residual.min(r);
    }
    pruned.sort_unstable();

    let mut coefficients = DMatrix::zeros(n, c.len());
    for (i, ci) in c.iter().enumerate() {
        coefficients.set_column(i, ci);
    }
    Pruning { coefficients, kept, pruned, min_residual }
}

/// Pruned, orthonormalised span of a list of fields.
#[derive(Debug, Clone)]
pub struct FunctionSpace<F> {
    pub spanning: Vec<F>,
    pub coefficients: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub pruned: Vec<usize>,
    /// Reciprocal of the smallest kept residual; a conditioning indicator.
    pub condition: f64,
}

impl<F: Field> FunctionSpace<F> {
    /// Builds the space from `spanning` under `rule`, keeping the first
    /// `leading` functions whenever they are independent.
    pub fn new(
        spanning: Vec<F>,
        leading: usize,
        rule: &QuadratureRule,
        tolerance: f64,
        location: &str,
        what: &str,
    ) -> Result<Self, SpaceError> {
        let mut t = tabulate(&spanning, &rule.points);
        if t.iter().any(|v| !v.is_finite()) {
            return Err(SpaceError::NonFinite { what: what.into(), location: location.into() });
        }
        weight_rows(&mut t, &rule.weights, F::RANK);
        let p = prune_dependent(&t, leading, tolerance);
        if p.kept.is_empty() {
            return Err(SpaceError::Empty { what: what.into(), location: location.into() });
        }
        Ok(Self {
            spanning,
            coefficients: p.coefficients,
            kept: p.kept,
            pruned: p.pruned,
            condition: 1.0 / p.min_residual,
        })
    }

    pub fn dim(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Basis values at `points`, row `RANK * q + c`.
    pub fn values(&self, points: &[Point2]) -> DMatrix<f64> {
        tabulate(&self.spanning, points) * &self.coefficients
    }

    pub fn gram(&self, rule: &QuadratureRule) -> DMatrix<f64> {
        let mut v = self.values(&rule.points);
        weight_rows(&mut v, &rule.weights, F::RANK);
        v.transpose() * &v
    }

    /// Value of `sum_i coeffs[i] b_i` at `x`.
    pub fn evaluate(&self, coeffs: &DVector<f64>, x: Point2) -> [f64; 2] {
        let span = &self.coefficients * coeffs;
        let mut out = [0.0; 2];
        let mut buf = [0.0; 2];
        for (j, f) in self.spanning.iter().enumerate() {
            if span[j] == 0.0 {
                continue;
            }
            f.write_value(x, &mut buf);
            for c in 0..F::RANK {
                out[c] += span[j] * buf[c];
            }
        }
        out
    }

    pub fn num_enriched_spanning(&self) -> usize
    where
        F: EnrichmentTag,
    {
        self.spanning.iter().filter(|f| f.enrichment()).count()
    }
}

pub trait EnrichmentTag {
    fn enrichment(&self) -> bool;
}

impl EnrichmentTag for ScalarField {
    fn enrichment(&self) -> bool {
        self.is_enrichment()
    }
}

impl EnrichmentTag for VectorField {
    fn enrichment(&self) -> bool {
        self.is_enrichment()
    }
}

impl EnrichmentTag for TraceField {
    fn enrichment(&self) -> bool {
        self.is_enrichment()
    }
}

impl FunctionSpace<VectorField> {
    /// Basis gradients, row `4 q + 2 i + j` holds `d b_i / d x_j`.
    pub fn gradients(&self, points: &[Point2]) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(4 * points.len(), self.spanning.len());
        for (q, &x) in points.iter().enumerate() {
            for (s, f) in self.spanning.iter().enumerate() {
                let g = f.gradient(x);
                for i in 0..2 {
                    for j in 0..2 {
                        t[(4 * q + 2 * i + j, s)] = g[(i, j)];
                    }
                }
            }
        }
        t * &self.coefficients
    }

    /// Basis Laplacians, row `2 q + c`.
    pub fn laplacians(&self, points: &[Point2]) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(2 * points.len(), self.spanning.len());
        for (q, &x) in points.iter().enumerate() {
            for (s, f) in self.spanning.iter().enumerate() {
                let l = f.laplacian(x);
                t[(2 * q, s)] = l.x;
                t[(2 * q + 1, s)] = l.y;
            }
        }
        t * &self.coefficients
    }

    pub fn evaluate_gradient(&self, coeffs: &DVector<f64>, x: Point2) -> Matrix2<f64> {
        let span = &self.coefficients * coeffs;
        self.spanning
            .iter()
            .enumerate()
            .filter(|(j, _)| span[*j] != 0.0)
            .map(|(j, f)| span[j] * f.gradient(x))
            .sum()
    }
}

impl FunctionSpace<ScalarField> {
    /// Basis gradients, row `2 q + j`.
    pub fn gradients(&self, points: &[Point2]) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(2 * points.len(), self.spanning.len());
        for (q, &x) in points.iter().enumerate() {
            for (s, f) in self.spanning.iter().enumerate() {
                let g = f.gradient(x);
                t[(2 * q, s)] = g.x;
                t[(2 * q + 1, s)] = g.y;
            }
        }
        t * &self.coefficients
    }
}

/// Which cylinders enrich which elements.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentConfig {
    /// Cutoff distance from the cylinder surface; zero disables enrichment.
    pub gamma: f64,
    pub cylinders: Vec<Circle>,
    /// Speed scale of the enrichment functions.
    pub speed: f64,
}

impl EnrichmentConfig {
    pub fn none() -> Self {
        Self { gamma: 0.0, cylinders: Vec::new(), speed: 1.0 }
    }

    pub fn new(gamma: f64, cylinders: Vec<Circle>) -> Self {
        Self { gamma, cylinders, speed: 1.0 }
    }

    /// Cylinders whose surface lies within `gamma` of the element centroid.
    pub fn active(&self, element: &Element) -> Vec<usize> {
        if !(self.gamma > 0.0) {
            return Vec::new();
        }
        self.cylinders
            .iter()
            .enumerate()
            .filter(|(_, c)| (element.centroid - c.center).norm() - c.radius <= self.gamma)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn solution(&self, cylinder: usize) -> CylinderSolution {
        CylinderSolution { speed: self.speed, ..CylinderSolution::new(self.cylinders[cylinder]) }
    }
}

pub fn element_monomials(element: &Element, degree: usize) -> Vec<Monomial> {
    monomials(element.centroid, 0.5 * element.diameter, degree)
}

/// Vector polynomials of `degree`, component-major.
pub fn vector_polynomials(element: &Element, degree: usize) -> Vec<VectorField> {
    let ms = element_monomials(element, degree);
    (0..2)
        .flat_map(|axis| ms.iter().map(move |&mono| VectorField::Component { mono, axis }))
        .collect()
}

pub fn scalar_polynomials(element: &Element, degree: usize) -> Vec<ScalarField> {
    element_monomials(element, degree).into_iter().map(ScalarField::Monomial).collect()
}

/// Spanning sets `(V_recon, V_T, Q_T)` of an element with leading counts.
pub struct ElementSpanning {
    pub recon: (Vec<VectorField>, usize),
    pub cell: (Vec<VectorField>, usize),
    pub pressure: (Vec<ScalarField>, usize),
}

pub fn element_spanning(element: &Element, k: usize, enrichment: &EnrichmentConfig) -> ElementSpanning {
    let active = enrichment.active(element);
    let mut recon = vector_polynomials(element, k + 1);
    let recon_lead = recon.len();
    let mut cell = vector_polynomials(element, k);
    let cell_lead = cell.len();
    let mut pressure = scalar_polynomials(element, k);
    let pressure_lead = pressure.len();
    for &i in &active {
        let s = enrichment.solution(i);
        recon.push(VectorField::CylinderVelocity(s));
        cell.push(VectorField::CylinderVelocityLaplacian(s));
        cell.push(VectorField::CylinderPressureGradient(s));
        pressure.push(ScalarField::CylinderPressure(s));
    }
    ElementSpanning {
        recon: (recon, recon_lead),
        cell: (cell, cell_lead),
        pressure: (pressure, pressure_lead),
    }
}

/// Spanning set of the face space and its leading count: the polynomial
/// part, then normal traces of the enrichment of each owning element.
pub fn face_spanning(
    mesh: &Mesh,
    face: &Face,
    k: usize,
    enrichment: &EnrichmentConfig,
) -> (Vec<TraceField>, usize) {
    let mut fields = Vec::new();
    let lead;
    match face.geometry {
        FaceGeometry::Segment { start, end } => {
            let origin = 0.5 * (start + end);
            let tangent = (end - start).normalize();
            let scale = 0.5 * (end - start).norm();
            for axis in 0..2 {
                for degree in 0..=k as i32 {
                    fields.push(TraceField::Tangential { origin, tangent, scale, degree, axis });
                }
            }
            lead = fields.len();
        }
        FaceGeometry::Arc { .. } => {
            fields.push(TraceField::Constant { axis: 0 });
            fields.push(TraceField::Constant { axis: 1 });
            lead = 2;
            let mid = 0.5 * (face.geometry.start_point() + face.geometry.end_point());
            let normal = FaceNormal::of_face(&face.geometry, 1.0);
            for mono in monomials(mid, 0.5 * face.diameter, k) {
                for normal_axis in 0..2 {
                    for axis in 0..2 {
                        fields.push(TraceField::NormalMonomial { mono, normal, normal_axis, axis });
                    }
                }
            }
        }
    }
    for &owner in &face.elements {
        let element = &mesh.elements[owner];
        let (_, orientation) = element.faces.iter().find(|x| x.0 == face.id).copied().unwrap();
        let normal = FaceNormal::of_face(&face.geometry, orientation.sign());
        for i in enrichment.active(element) {
            let solution = enrichment.solution(i);
            fields.push(TraceField::VelocityNormalDerivative { solution, normal });
            fields.push(TraceField::PressureNormal { solution, normal });
        }
    }
    (fields, lead)
}
