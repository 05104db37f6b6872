//! Quadrature on segment faces, arc faces and arc-bounded elements.
//!
//! Uncut elements use tensor Gauss rules. Cut elements are integrated in
//! polar coordinates around the centre of the cutting cylinder: every ray from
//! the centre meets the cell minus the disc in a single radial interval, so the
//! element becomes a union of angular sectors `max(a, R) < rho < b` with exact
//! boundaries. No node ever falls inside a cylinder.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI, TAU};

use nalgebra::Vector2;

use crate::error::QuadratureError;
use crate::geometry::{Element, Face, FaceGeometry, Mesh, Point2};

/// Maximum number of degree doublings in adaptive integration.
pub const MAX_DOUBLINGS: usize = 6;

/// Smallest angular piece of the polar rule on cut cells.
const MIN_PIECE: f64 = 1e-6;
pub const ADAPTIVE_REL_TOL: f64 = 1e-11;
pub const ADAPTIVE_ABS_TOL: f64 = 1e-13;
/// Values below this magnitude are checked with the absolute tolerance.
pub const ADAPTIVE_ABS_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point2) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, w)| w * f(x)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point2, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Gauss points needed for exactness up to polynomial `degree` in 1D.
fn points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

/// Rule on a face: exact for polynomials of total degree `degree` on
/// segments; on arcs, Gauss in the angle with a few extra points.
pub fn face_rule(face: &Face, degree: usize) -> QuadratureRule {
    match face.geometry {
        FaceGeometry::Segment { start, end } => {
            let (t, w) = gauss_legendre(points_for_degree(degree));
            let len = (end - start).norm();
            QuadratureRule {
                points: t.iter().map(|t| start + 0.5 * (t + 1.0) * (end - start)).collect(),
                weights: w.iter().map(|w| 0.5 * w * len).collect(),
                degree,
            }
        }
        FaceGeometry::Arc { circle, angle_start, angle_end } => {
            let (t, w) = gauss_legendre(points_for_degree(degree) + 5);
            let half = 0.5 * (angle_end - angle_start);
            QuadratureRule {
                points: t.iter().map(|t| circle.point_at(angle_start + half * (t + 1.0))).collect(),
                weights: w.iter().map(|w| w * half * circle.radius).collect(),
                degree,
            }
        }
    }
}

/// Rule on an element, exact for bivariate polynomials of total degree
/// `degree` (to rounding on cut elements).
pub fn element_rule(mesh: &Mesh, element: &Element, degree: usize) -> QuadratureRule {
    match element.cut_by {
        None => box_rule(element.cell_box.0, element.cell_box.1, degree),
        Some(c) => cut_rule(mesh, element, c, degree),
    }
}

fn box_rule(lo: Point2, hi: Point2, degree: usize) -> QuadratureRule {
    let (t, w) = gauss_legendre(points_for_degree(degree));
    let half = 0.5 * (hi - lo);
    let mut points = Vec::with_capacity(t.len() * t.len());
    let mut weights = Vec::with_capacity(t.len() * t.len());
    for (ty, wy) in t.iter().zip(&w) {
        for (tx, wx) in t.iter().zip(&w) {
            points.push(Point2::new(lo.x + half.x * (tx + 1.0), lo.y + half.y * (ty + 1.0)));
            weights.push(wx * wy * half.x * half.y);
        }
    }
    QuadratureRule { points, weights, degree }
}

/// Parameter interval of the ray `c + rho d` (rho >= 0) inside the box.
fn ray_box(c: Point2, d: Vector2<f64>, lo: Point2, hi: Point2) -> Option<(f64, f64)> {
    let mut tmin: f64 = 0.0;
    let mut tmax = f64::INFINITY;
    for axis in 0..2 {
        if d[axis].abs() < 1e-300 {
            if c[axis] < lo[axis] || c[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let t1 = (lo[axis] - c[axis]) / d[axis];
        let t2 = (hi[axis] - c[axis]) / d[axis];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    (tmax > tmin).then_some((tmin, tmax))
}

/// Entry and exit of a ray through a box, with the axis of the face hit.
struct RayHit {
    entry: f64,
    /// `None` when the ray starts inside the box.
    entry_axis: Option<usize>,
    exit_axis: usize,
}

fn ray_box_edges(c: Point2, d: Vector2<f64>, lo: Point2, hi: Point2) -> Option<RayHit> {
    let mut hit = RayHit { entry: 0.0, entry_axis: None, exit_axis: 0 };
    let mut exit = f64::INFINITY;
    for axis in 0..2 {
        if d[axis].abs() < 1e-300 {
            if c[axis] < lo[axis] || c[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let t1 = (lo[axis] - c[axis]) / d[axis];
        let t2 = (hi[axis] - c[axis]) / d[axis];
        if t1.min(t2) > hit.entry {
            hit.entry = t1.min(t2);
            hit.entry_axis = Some(axis);
        }
        if t1.max(t2) < exit {
            exit = t1.max(t2);
            hit.exit_axis = axis;
        }
    }
    (exit > hit.entry).then_some(hit)
}

/// Angular distance from `[t0, t1]` to the nearest direction parallel to
/// the faces normal to `axis`.
fn pole_distance(t0: f64, t1: f64, axis: usize) -> f64 {
    // Faces x = const are parallel to the rays at +-pi/2, faces y = const at 0 and pi.
    let offset = if axis == 0 { FRAC_PI_2 } else { 0.0 };
    let mut best = f64::INFINITY;
    let base = ((t0 - offset) / PI).floor();
    for j in -1..=2 {
        let pole = offset + (base + j as f64) * PI;
        let d = if pole < t0 {
            t0 - pole
        } else if pole > t1 {
            pole - t1
        } else {
            0.0
        };
        best = best.min(d);
    }
    best
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

fn cut_rule(mesh: &Mesh, element: &Element, cylinder: usize, degree: usize) -> QuadratureRule {
    let circle = mesh.cylinders[cylinder];
    let c = circle.center;
    let r = circle.radius;
    let (lo, hi) = element.cell_box;
    let corners = [lo, Point2::new(hi.x, lo.y), hi, Point2::new(lo.x, hi.y)];
    let inside = lo.x < c.x && c.x < hi.x && lo.y < c.y && c.y < hi.y;
    let reference = if inside { PI } else { (0.5 * (lo + hi) - c).y.atan2((0.5 * (lo + hi) - c).x) };
    let unwrap = |p: Point2| {
        let d = p - c;
        reference + wrap_pi(d.y.atan2(d.x) - reference)
    };

    let mut breaks: Vec<f64> = corners
        .iter()
        .filter(|p| (*p - c).norm() > 1e-14)
        .map(|&p| unwrap(p))
        .collect();
    let (theta_min, theta_max) = if inside {
        (0.0, TAU)
    } else {
        let min = breaks.iter().copied().fold(f64::INFINITY, f64::min);
        let max = breaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    };
    for k in 0..4 {
        let (p, q) = (corners[k], corners[(k + 1) % 4]);
        let d = q - p;
        let f = p - c;
        let a = d.dot(&d);
        let b = 2.0 * f.dot(&d);
        let cc = f.dot(&f) - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc > 0.0 {
            for t in [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)] {
                if (0.0..=1.0).contains(&t) {
                    breaks.push(unwrap(p + t * d));
                }
            }
        }
    }
    breaks.push(theta_min);
    breaks.push(theta_max);
    breaks.retain(|t| *t >= theta_min && *t <= theta_max);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let n_theta = points_for_degree(degree) + 8;
    let n_rho = points_for_degree(degree + 1);
    let (tt, wt) = gauss_legendre(n_theta);
    let (tr, wr) = gauss_legendre(n_rho);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    for w in breaks.windows(2) {
        let count = ((w[1] - w[0]) / FRAC_PI_8).ceil().max(1.0) as usize;
        let step = (w[1] - w[0]) / count as f64;
        let mut stack: Vec<(f64, f64)> =
            (0..count).rev().map(|s| (w[0] + s as f64 * step, w[0] + (s + 1) as f64 * step)).collect();
        while let Some((t0, t1)) = stack.pop() {
            // Keep each piece well away from directions parallel to the
            // edges it integrates between, where the radial bounds blow up.
            let mid = 0.5 * (t0 + t1);
            let dir = Vector2::new(mid.cos(), mid.sin());
            let Some(hit) = ray_box_edges(c, dir, lo, hi) else { continue };
            let mut axes = vec![hit.exit_axis];
            if let Some(axis) = hit.entry_axis {
                if hit.entry > r {
                    axes.push(axis);
                }
            }
            let distance = axes.iter().map(|&axis| pole_distance(t0, t1, axis)).fold(f64::INFINITY, f64::min);
            if t1 - t0 > 0.5 * distance && t1 - t0 > MIN_PIECE {
                stack.push((mid, t1));
                stack.push((t0, mid));
            } else {
                pieces.push((t0, t1));
            }
        }
    }
    for (t0, t1) in pieces {
        let mid = 0.5 * (t0 + t1);
        let dir = Vector2::new(mid.cos(), mid.sin());
        let Some((a, b)) = ray_box(c, dir, lo, hi) else { continue };
        let lower = a.max(r);
        if b <= lower {
            continue;
        }
        if element.shares_cell {
            let probe = c + 0.5 * (lower + b) * dir;
            if !mesh.element_contains(element, probe) {
                continue;
            }
        }
        let half_t = 0.5 * (t1 - t0);
        for (x, wx) in tt.iter().zip(&wt) {
            let theta = mid + half_t * x;
            let dir = Vector2::new(theta.cos(), theta.sin());
            let Some((a, b)) = ray_box(c, dir, lo, hi) else { continue };
            let lower = a.max(r);
            if b <= lower {
                continue;
            }
            let half_r = 0.5 * (b - lower);
            for (y, wy) in tr.iter().zip(&wr) {
                let rho = lower + half_r * (y + 1.0);
                points.push(c + rho * dir);
                weights.push(wx * wy * half_t * half_r * rho);
            }
        }
    }
    QuadratureRule { points, weights, degree }
}

/// Integration domain for adaptive rules.
#[derive(Debug, Clone, Copy)]
pub enum Domain<'a> {
    Element(&'a Mesh, &'a Element),
    Face(&'a Face),
}

impl Domain<'_> {
    pub fn rule(&self, degree: usize) -> QuadratureRule {
        match *self {
            Domain::Element(mesh, element) => element_rule(mesh, element, degree),
            Domain::Face(face) => face_rule(face, degree),
        }
    }

    fn describe(&self) -> String {
        match self {
            Domain::Element(_, e) => format!("element {}", e.id),
            Domain::Face(f) => format!("face {}", f.id),
        }
    }
}

fn converged(old: f64, new: f64) -> bool {
    let diff = (new - old).abs();
    if new.abs() < ADAPTIVE_ABS_THRESHOLD {
        diff < ADAPTIVE_ABS_TOL || diff < ADAPTIVE_REL_TOL * new.abs()
    } else {
        diff < ADAPTIVE_REL_TOL * new.abs()
    }
}

/// Integrates `f`, doubling the rule degree from `base_degree` until two
/// successive values agree.
pub fn adaptive_integrate(
    domain: Domain<'_>,
    f: impl Fn(Point2) -> f64,
    base_degree: usize,
) -> Result<f64, QuadratureError> {
    let mut degree = base_degree.max(1);
    let mut old = domain.rule(degree).integrate(&f);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        degree *= 2;
        let new = domain.rule(degree).integrate(&f);
        if converged(old, new) {
            return Ok(new);
        }
        change = (new - old).abs() / new.abs().max(f64::MIN_POSITIVE);
        old = new;
    }
    Err(QuadratureError::NotConverged { what: domain.describe(), doublings: MAX_DOUBLINGS, change })
}

/// Doubles the degree from `base_degree` until the probe integrals of two
/// successive rules agree, and returns the finer of the two. Probe vectors
/// are compared as a whole, relative to their largest entry.
pub fn select_rule(
    domain: Domain<'_>,
    probes: impl Fn(&QuadratureRule) -> Vec<f64>,
    base_degree: usize,
) -> Result<QuadratureRule, QuadratureError> {
    let mut degree = base_degree.max(1);
    let mut old = probes(&domain.rule(degree));
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let next = domain.rule(2 * degree);
        let new = probes(&next);
        let scale = new.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = old.iter().zip(&new).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if converged(scale, scale + diff) || scale == 0.0 {
            return Ok(next);
        }
        change = diff / scale;
        degree *= 2;
        old = new;
    }
    Err(QuadratureError::NotConverged { what: domain.describe(), doublings: MAX_DOUBLINGS, change })
}
