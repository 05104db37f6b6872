//! Curved 2D meshes of the unit square with circular cylinders removed.
//!
//! Meshes are built from a uniform `n x n` Cartesian grid. Cells lying inside
//! a cylinder are deleted, and cells crossed by a cylinder boundary become
//! curved elements bounded by the surviving straight pieces of the cell edges
//! plus circular-arc faces.
//!
//! Every face stores a reference normal (right-hand normal of its stored
//! direction: for arcs, stored counter-clockwise, this is the radial direction
//! pointing away from the circle centre). Elements reference their faces with
//! an [`Orientation`] that flips the reference normal into the outward normal.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use nalgebra::Vector2;

use crate::error::MeshError;

pub type Point2 = Vector2<f64>;

/// Coordinates closer than this to a degenerate configuration are rejected.
pub const GEOMETRY_TOLERANCE: f64 = 1e-12;

/// Cut cells whose area fraction falls below this are rejected.
pub const MIN_AREA_FRACTION: f64 = 1e-8;

/// Longest arc kept as a single face.
const MAX_ARC_ANGLE: f64 = FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point2, radius: f64) -> Result<Self, MeshError> {
        if !(radius > 0.0) || !radius.is_finite() || !center.x.is_finite() || !center.y.is_finite() {
            return Err(MeshError::InvalidCircle { center: (center.x, center.y), radius });
        }
        Ok(Self { center, radius })
    }

    pub fn point_at(&self, angle: f64) -> Point2 {
        self.center + self.radius * Vector2::new(angle.cos(), angle.sin())
    }

    pub fn angle_of(&self, p: Point2) -> f64 {
        let d = p - self.center;
        d.y.atan2(d.x)
    }

    /// Strict interior test.
    pub fn contains(&self, p: Point2) -> bool {
        (p - self.center).norm() < self.radius
    }

    /// Does the closed disc meet the closed axis-aligned box?
    fn meets_box(&self, lo: Point2, hi: Point2) -> bool {
        let q = Point2::new(
            self.center.x.clamp(lo.x, hi.x),
            self.center.y.clamp(lo.y, hi.y),
        );
        (q - self.center).norm() < self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceGeometry {
    Segment { start: Point2, end: Point2 },
    /// Counter-clockwise arc from `angle_start` to `angle_end > angle_start`.
    Arc { circle: Circle, angle_start: f64, angle_end: f64 },
}

impl FaceGeometry {
    /// Point at parameter `t` in `[0, 1]` along the stored direction.
    pub fn point(&self, t: f64) -> Point2 {
        match *self {
            FaceGeometry::Segment { start, end } => start + t * (end - start),
            FaceGeometry::Arc { circle, angle_start, angle_end } => {
                circle.point_at(angle_start + t * (angle_end - angle_start))
            }
        }
    }

    pub fn start_point(&self) -> Point2 {
        self.point(0.0)
    }

    pub fn end_point(&self) -> Point2 {
        self.point(1.0)
    }

    pub fn length(&self) -> f64 {
        match *self {
            FaceGeometry::Segment { start, end } => (end - start).norm(),
            FaceGeometry::Arc { circle, angle_start, angle_end } => {
                circle.radius * (angle_end - angle_start)
            }
        }
    }

    /// Reference unit normal at a point of the face.
    pub fn normal_at(&self, x: Point2) -> Vector2<f64> {
        match *self {
            FaceGeometry::Segment { start, end } => {
                let t = (end - start).normalize();
                Vector2::new(t.y, -t.x)
            }
            FaceGeometry::Arc { circle, .. } => (x - circle.center) / circle.radius,
        }
    }

    pub fn is_arc(&self) -> bool {
        matches!(self, FaceGeometry::Arc { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Internal,
    /// On the boundary of the unit square.
    Square,
    /// On the boundary of the cylinder with this index.
    Cylinder(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub id: usize,
    pub geometry: FaceGeometry,
    pub boundary: BoundaryKind,
    pub diameter: f64,
    /// Owning elements; two for internal faces, one for boundary faces.
    pub elements: Vec<usize>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.boundary != BoundaryKind::Internal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Forward,
    Reversed,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Forward => 1.0,
            Orientation::Reversed => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Forward => Orientation::Reversed,
            Orientation::Reversed => Orientation::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: usize,
    /// Counter-clockwise boundary loop.
    pub faces: Vec<(usize, Orientation)>,
    pub centroid: Point2,
    pub diameter: f64,
    pub area: f64,
    /// Grid cell `(i, j)` the element was cut from.
    pub cell: (usize, usize),
    /// Lower-left and upper-right corners of that cell.
    pub cell_box: (Point2, Point2),
    /// Index of the cylinder cutting the element, if any.
    pub cut_by: Option<usize>,
    /// Another element was cut from the same grid cell.
    pub shares_cell: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub subdivisions: usize,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    pub cylinders: Vec<Circle>,
    pub h: f64,
}

impl Mesh {
    pub fn num_internal_faces(&self) -> usize {
        self.faces.iter().filter(|f| !f.is_boundary()).count()
    }

    /// Outward unit normal of `face` (as seen from the element owning it with
    /// `orientation`) at `x`.
    pub fn outward_normal(&self, face: usize, orientation: Orientation, x: Point2) -> Vector2<f64> {
        orientation.sign() * self.faces[face].geometry.normal_at(x)
    }

    /// Boundary points of the loop: start point of every face in traversal order.
    pub fn element_vertices(&self, element: &Element) -> Vec<Point2> {
        element
            .faces
            .iter()
            .map(|&(f, o)| traversal_start(&self.faces[f].geometry, o))
            .collect()
    }

    /// Point-in-element test via the winding number of a polygonised loop.
    pub fn element_contains(&self, element: &Element, p: Point2) -> bool {
        let (lo, hi) = element.cell_box;
        if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
            return false;
        }
        if let Some(c) = element.cut_by {
            if self.cylinders[c].contains(p) {
                return false;
            }
        }
        let poly = self.polygonise(element, 32);
        winding_number(&poly, p) != 0
    }

    /// Element containing `p`, if `p` lies in the fluid domain.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
            return None;
        }
        if self.cylinders.iter().any(|c| c.contains(p)) {
            return None;
        }
        let n = self.subdivisions;
        let i = ((p.x * n as f64) as usize).min(n - 1);
        let j = ((p.y * n as f64) as usize).min(n - 1);
        let first = self.elements.partition_point(|e| (e.cell.1, e.cell.0) < (j, i));
        let candidates: Vec<&Element> =
            self.elements[first..].iter().take_while(|e| e.cell == (i, j)).collect();
        match candidates.len() {
            0 => None,
            1 => Some(candidates[0].id),
            _ => candidates.into_iter().find(|e| self.element_contains(e, p)).map(|e| e.id),
        }
    }

    fn polygonise(&self, element: &Element, arc_samples: usize) -> Vec<Point2> {
        let mut poly = Vec::new();
        for &(f, o) in &element.faces {
            let g = &self.faces[f].geometry;
            let m = if g.is_arc() { arc_samples } else { 1 };
            for s in 0..m {
                let t = s as f64 / m as f64;
                let t = if o == Orientation::Forward { t } else { 1.0 - t };
                poly.push(g.point(t));
            }
        }
        poly
    }

    /// Plain-text dump, header line `hho-mesh v1`.
    pub fn to_text(&self) -> String {
        let mut vertices: Vec<Point2> = Vec::new();
        let vertex_id = |p: Point2, vertices: &mut Vec<Point2>| -> usize {
            if let Some(i) = vertices.iter().position(|q| (q - p).norm() < 1e-13) {
                i
            } else {
                vertices.push(p);
                vertices.len() - 1
            }
        };
        let mut face_lines = Vec::with_capacity(self.faces.len());
        for face in &self.faces {
            let a = vertex_id(face.geometry.start_point(), &mut vertices);
            let b = vertex_id(face.geometry.end_point(), &mut vertices);
            let tag = match face.boundary {
                BoundaryKind::Internal => "I".to_string(),
                BoundaryKind::Square => "Q".to_string(),
                BoundaryKind::Cylinder(c) => format!("C{c}"),
            };
            let line = match face.geometry {
                FaceGeometry::Segment { .. } => format!("S {a} {b} {tag}"),
                FaceGeometry::Arc { circle, angle_start, angle_end } => format!(
                    "A {a} {b} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {tag}",
                    circle.center.x, circle.center.y, circle.radius, angle_start, angle_end
                ),
            };
            face_lines.push(line);
        }
        let mut out = String::new();
        let _ = writeln!(out, "hho-mesh v1");
        let _ = writeln!(out, "subdivisions {}", self.subdivisions);
        let _ = writeln!(out, "cylinders {}", self.cylinders.len());
        for c in &self.cylinders {
            let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", c.center.x, c.center.y, c.radius);
        }
        let _ = writeln!(out, "vertices {}", vertices.len());
        for v in &vertices {
            let _ = writeln!(out, "{:.17e} {:.17e}", v.x, v.y);
        }
        let _ = writeln!(out, "faces {}", face_lines.len());
        for l in face_lines {
            let _ = writeln!(out, "{l}");
        }
        let _ = writeln!(out, "elements {}", self.elements.len());
        for e in &self.elements {
            let _ = write!(out, "{}", e.faces.len());
            for &(f, o) in &e.faces {
                let _ = write!(out, " {}{}", if o == Orientation::Forward { "+" } else { "-" }, f);
            }
            let _ = writeln!(out);
        }
        out
    }
}

fn traversal_start(g: &FaceGeometry, o: Orientation) -> Point2 {
    match o {
        Orientation::Forward => g.start_point(),
        Orientation::Reversed => g.end_point(),
    }
}

fn traversal_end(g: &FaceGeometry, o: Orientation) -> Point2 {
    traversal_start(g, o.flipped())
}

fn winding_number(poly: &[Point2], p: Point2) -> i32 {
    let mut wn = 0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if a.y <= p.y {
            if b.y > p.y && cross > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// One maximal piece of a grid edge between consecutive circle crossings.
#[derive(Debug, Clone, Copy)]
struct EdgePiece {
    start: Point2,
    end: Point2,
    face: Option<usize>,
}

/// A piece as seen while walking a cell boundary counter-clockwise.
#[derive(Debug, Clone, Copy)]
struct LoopPiece {
    start: Point2,
    end: Point2,
    face: Option<usize>,
    orientation: Orientation,
}

fn split_edge(
    start: Point2,
    end: Point2,
    cylinders: &[Circle],
) -> Result<Vec<(Point2, Point2, bool)>, MeshError> {
    let d = end - start;
    let len = d.norm();
    let mut cuts: Vec<f64> = Vec::new();
    for (ci, c) in cylinders.iter().enumerate() {
        for p in [start, end] {
            if ((p - c.center).norm() - c.radius).abs() < GEOMETRY_TOLERANCE {
                return Err(MeshError::DegenerateIntersection {
                    cylinder: ci,
                    detail: format!("boundary passes through grid vertex ({}, {})", p.x, p.y),
                });
            }
        }
        // |start + t d - c|^2 = R^2
        let f = start - c.center;
        let a = d.dot(&d);
        let b = 2.0 * f.dot(&d);
        let cc = f.dot(&f) - c.radius * c.radius;
        let disc = b * b - 4.0 * a * cc;
        // Distance from the centre to the supporting line.
        let foot = (-b / (2.0 * a)).clamp(-1.0, 2.0);
        let dist = (f + (-b / (2.0 * a)) * d).norm();
        if (dist - c.radius).abs() < GEOMETRY_TOLERANCE && (-1e-12..=1.0 + 1e-12).contains(&foot) {
            return Err(MeshError::DegenerateIntersection {
                cylinder: ci,
                detail: format!(
                    "boundary tangent to grid edge ({}, {})-({}, {})",
                    start.x, start.y, end.x, end.y
                ),
            });
        }
        if disc <= 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
            if t > 0.0 && t < 1.0 {
                if t * len < GEOMETRY_TOLERANCE || (1.0 - t) * len < GEOMETRY_TOLERANCE {
                    return Err(MeshError::DegenerateIntersection {
                        cylinder: ci,
                        detail: "crossing too close to a grid vertex".into(),
                    });
                }
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ts = vec![0.0];
    ts.extend(cuts);
    ts.push(1.0);
    let pieces = ts
        .windows(2)
        .map(|w| {
            let a = start + w[0] * d;
            let b = start + w[1] * d;
            let mid = 0.5 * (a + b);
            let fluid = !cylinders.iter().any(|c| c.contains(mid));
            (a, b, fluid)
        })
        .collect();
    Ok(pieces)
}

/// Builds the `n x n` Cartesian mesh of the unit square with `cylinders` cut out.
pub fn build_cartesian_cut_mesh(n: usize, cylinders: &[Circle]) -> Result<Mesh, MeshError> {
    if n < 2 {
        return Err(MeshError::TooFewSubdivisions(n));
    }
    for (i, c) in cylinders.iter().enumerate() {
        let gap = [c.center.x, 1.0 - c.center.x, c.center.y, 1.0 - c.center.y]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if gap - c.radius <= GEOMETRY_TOLERANCE {
            return Err(MeshError::CylinderNotInterior(i));
        }
        for (j, d) in cylinders.iter().enumerate().skip(i + 1) {
            if (c.center - d.center).norm() <= c.radius + d.radius + GEOMETRY_TOLERANCE {
                return Err(MeshError::CylindersOverlap(i, j));
            }
        }
    }

    let hstep = 1.0 / n as f64;
    let vertex = |i: usize, j: usize| Point2::new(i as f64 * hstep, j as f64 * hstep);
    let mut faces: Vec<Face> = Vec::new();

    // Horizontal edge (i, j) joins vertex (i, j) to (i + 1, j); vertical edge
    // (i, j) joins (i, j) to (i, j + 1).
    let mut horizontal: Vec<Vec<EdgePiece>> = Vec::with_capacity(n * (n + 1));
    let mut vertical: Vec<Vec<EdgePiece>> = Vec::with_capacity(n * (n + 1));
    for vert in [false, true] {
        for a in 0..=n {
            for b in 0..n {
                let (p, q, on_square) = if vert {
                    (vertex(a, b), vertex(a, b + 1), a == 0 || a == n)
                } else {
                    (vertex(b, a), vertex(b + 1, a), a == 0 || a == n)
                };
                let pieces = split_edge(p, q, cylinders)?
                    .into_iter()
                    .map(|(s, e, fluid)| {
                        let face = fluid.then(|| {
                            let id = faces.len();
                            faces.push(Face {
                                id,
                                geometry: FaceGeometry::Segment { start: s, end: e },
                                boundary: if on_square { BoundaryKind::Square } else { BoundaryKind::Internal },
                                diameter: (e - s).norm(),
                                elements: Vec::new(),
                            });
                            id
                        });
                        EdgePiece { start: s, end: e, face }
                    })
                    .collect();
                if vert {
                    vertical.push(pieces);
                } else {
                    horizontal.push(pieces);
                }
            }
        }
    }
    // horizontal[j * n + i], vertical[i * n + j]
    let h_edge = |i: usize, j: usize| &horizontal[j * n + i];
    let v_edge = |i: usize, j: usize| &vertical[i * n + j];

    let mut elements: Vec<Element> = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let lo = vertex(i, j);
            let hi = vertex(i + 1, j + 1);
            let touching: Vec<usize> = cylinders
                .iter()
                .enumerate()
                .filter(|(_, c)| c.meets_box(lo, hi))
                .map(|(ci, _)| ci)
                .collect();
            if touching.len() > 1 {
                return Err(MeshError::MultipleCylindersInCell { cell: (i, j) });
            }

            let mut pieces: Vec<LoopPiece> = Vec::new();
            let forward = |edge: &Vec<EdgePiece>, pieces: &mut Vec<LoopPiece>| {
                for p in edge {
                    pieces.push(LoopPiece { start: p.start, end: p.end, face: p.face, orientation: Orientation::Forward });
                }
            };
            let reversed = |edge: &Vec<EdgePiece>, pieces: &mut Vec<LoopPiece>| {
                for p in edge.iter().rev() {
                    pieces.push(LoopPiece { start: p.end, end: p.start, face: p.face, orientation: Orientation::Reversed });
                }
            };
            forward(h_edge(i, j), &mut pieces);
            forward(v_edge(i + 1, j), &mut pieces);
            reversed(h_edge(i, j + 1), &mut pieces);
            reversed(v_edge(i, j), &mut pieces);

            let all_fluid = pieces.iter().all(|p| p.face.is_some());
            if pieces.iter().all(|p| p.face.is_none()) {
                continue; // cell covered by a cylinder
            }
            if all_fluid {
                if let Some(&ci) = touching.first() {
                    // The disc meets the cell without crossing its boundary.
                    let _ = ci;
                    return Err(MeshError::NotSimplyConnected { cell: (i, j) });
                }
                let loop_faces = pieces.iter().map(|p| (p.face.unwrap(), p.orientation)).collect();
                elements.push(new_element(elements.len(), loop_faces, (i, j), (lo, hi), None, &faces));
                continue;
            }
            let ci = touching[0];
            let circle = cylinders[ci];
            let m = pieces.len();
            // Exits: starts of fluid pieces preceded by a removed piece.
            let exits: Vec<usize> = (0..m)
                .filter(|&p| pieces[p].face.is_some() && pieces[(p + m - 1) % m].face.is_none())
                .collect();
            let mut visited = vec![false; m];
            for first in 0..m {
                if visited[first] || pieces[first].face.is_none() {
                    continue;
                }
                let mut loop_faces: Vec<(usize, Orientation)> = Vec::new();
                let mut cur = first;
                loop {
                    visited[cur] = true;
                    loop_faces.push((pieces[cur].face.unwrap(), pieces[cur].orientation));
                    let next = (cur + 1) % m;
                    let next = if pieces[next].face.is_some() {
                        next
                    } else {
                        // Follow the circle clockwise to the nearest exit.
                        let entry = pieces[cur].end;
                        let theta_entry = circle.angle_of(entry);
                        let (exit, sweep) = exits
                            .iter()
                            .map(|&e| {
                                let theta = circle.angle_of(pieces[e].start);
                                let mut sweep = (theta_entry - theta).rem_euclid(TAU);
                                if sweep < 1e-14 {
                                    sweep = TAU;
                                }
                                (e, sweep)
                            })
                            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                            .expect("cut cell without exit point");
                        let theta_exit = circle.angle_of(pieces[exit].start);
                        let count = (sweep / MAX_ARC_ANGLE - 1e-9).ceil().max(1.0) as usize;
                        let step = sweep / count as f64;
                        // Stored counter-clockwise from the exit; walked backwards.
                        for s in (0..count).rev() {
                            let a0 = theta_exit + s as f64 * step;
                            let a1 = a0 + step;
                            let id = faces.len();
                            let geometry = FaceGeometry::Arc { circle, angle_start: a0, angle_end: a1 };
                            let diameter = (geometry.end_point() - geometry.start_point()).norm();
                            faces.push(Face {
                                id,
                                geometry,
                                boundary: BoundaryKind::Cylinder(ci),
                                diameter,
                                elements: Vec::new(),
                            });
                            loop_faces.push((id, Orientation::Reversed));
                        }
                        exit
                    };
                    if next == first {
                        break;
                    }
                    if visited[next] {
                        return Err(MeshError::OpenLoop { element: elements.len() });
                    }
                    cur = next;
                }
                let e = new_element(elements.len(), loop_faces, (i, j), (lo, hi), Some(ci), &faces);
                if e.area < MIN_AREA_FRACTION * hstep * hstep {
                    return Err(MeshError::TinyCutCell { cell: (i, j), fraction: e.area / (hstep * hstep) });
                }
                elements.push(e);
            }
        }
    }

    for e in &elements {
        for &(f, _) in &e.faces {
            faces[f].elements.push(e.id);
        }
    }
    for k in 1..elements.len() {
        if elements[k].cell == elements[k - 1].cell {
            elements[k].shares_cell = true;
            elements[k - 1].shares_cell = true;
        }
    }
    let h = elements.iter().map(|e| e.diameter).fold(0.0, f64::max);
    Ok(Mesh { subdivisions: n, elements, faces, cylinders: cylinders.to_vec(), h })
}

fn new_element(
    id: usize,
    loop_faces: Vec<(usize, Orientation)>,
    cell: (usize, usize),
    cell_box: (Point2, Point2),
    cut_by: Option<usize>,
    faces: &[Face],
) -> Element {
    let (area, first_moment) = area_and_moment(&loop_faces, faces);
    let centroid = first_moment / area;
    let diameter = loop_diameter(&loop_faces, faces);
    Element { id, faces: loop_faces, centroid, diameter, area, cell, cell_box, cut_by, shares_cell: false }
}

/// Area and first moments through the divergence theorem on the boundary loop.
fn area_and_moment(loop_faces: &[(usize, Orientation)], faces: &[Face]) -> (f64, Vector2<f64>) {
    let (nodes, weights) = crate::quadrature::gauss_legendre(12);
    let mut area = 0.0;
    let mut moment = Vector2::zeros();
    for &(f, o) in loop_faces {
        let g = &faces[f].geometry;
        let len = g.length();
        for (t, w) in nodes.iter().zip(&weights) {
            let x = g.point(0.5 * (t + 1.0));
            let n = o.sign() * g.normal_at(x);
            let ds = 0.5 * w * len;
            area += 0.5 * x.dot(&n) * ds;
            moment.x += 0.5 * x.x * x.x * n.x * ds;
            moment.y += 0.5 * x.y * x.y * n.y * ds;
        }
    }
    (area, moment)
}

/// Max pairwise distance between loop vertices and arc extremal points.
fn loop_diameter(loop_faces: &[(usize, Orientation)], faces: &[Face]) -> f64 {
    let vertices: Vec<Point2> = loop_faces
        .iter()
        .map(|&(f, o)| traversal_start(&faces[f].geometry, o))
        .collect();
    let mut candidates = vertices.clone();
    for &(f, _) in loop_faces {
        if let FaceGeometry::Arc { circle, angle_start, angle_end } = faces[f].geometry {
            // Farthest arc point from a vertex is an endpoint or the antipode.
            for v in &vertices {
                let d = *v - circle.center;
                if d.norm() < 1e-15 {
                    continue;
                }
                let anti = (-d.y).atan2(-d.x);
                let rel = (anti - angle_start).rem_euclid(TAU);
                if rel <= angle_end - angle_start {
                    candidates.push(circle.point_at(anti));
                }
            }
        }
    }
    let mut diam: f64 = 0.0;
    for (a, p) in candidates.iter().enumerate() {
        for q in &candidates[a + 1..] {
            diam = diam.max((p - q).norm());
        }
    }
    diam
}

/// Per-element quality measures and global consistency data.
#[derive(Debug, Clone)]
pub struct MeshDiagnostics {
    /// Element area divided by the full grid-cell area.
    pub area_fractions: Vec<f64>,
    /// Distance from centroid to the element boundary divided by `h_T`.
    pub chunkiness: Vec<f64>,
    pub min_chunkiness: f64,
    pub max_chunkiness: f64,
    pub total_area: f64,
    /// `1 - sum pi R_i^2`.
    pub expected_area: f64,
    pub num_internal_faces: usize,
    pub num_boundary_faces: usize,
}

/// Checks mesh topology, failing on dangling faces, open loops, or
/// inconsistent orientations, and reports element quality.
pub fn validate_mesh(mesh: &Mesh) -> Result<MeshDiagnostics, MeshError> {
    let mut owners: Vec<Vec<(usize, Orientation)>> = vec![Vec::new(); mesh.faces.len()];
    for e in &mesh.elements {
        for (k, &(f, o)) in e.faces.iter().enumerate() {
            if f >= mesh.faces.len() {
                return Err(MeshError::DanglingFace(f));
            }
            owners[f].push((e.id, o));
            let (g, gn) = (&mesh.faces[f].geometry, &mesh.faces[e.faces[(k + 1) % e.faces.len()].0].geometry);
            let next_o = e.faces[(k + 1) % e.faces.len()].1;
            if (traversal_end(g, o) - traversal_start(gn, next_o)).norm() > 1e-10 {
                return Err(MeshError::OpenLoop { element: e.id });
            }
        }
        if !(e.area > 0.0) {
            return Err(MeshError::InconsistentOrientation { face: e.faces[0].0 });
        }
    }
    for (f, own) in owners.iter().enumerate() {
        let face = &mesh.faces[f];
        match (face.is_boundary(), own.as_slice()) {
            (true, [_]) => {}
            (false, [(_, a), (_, b)]) => {
                if a == b {
                    return Err(MeshError::InconsistentOrientation { face: f });
                }
            }
            _ => return Err(MeshError::DanglingFace(f)),
        }
        let mut listed = face.elements.clone();
        let mut found: Vec<usize> = own.iter().map(|x| x.0).collect();
        listed.sort_unstable();
        found.sort_unstable();
        if listed != found {
            return Err(MeshError::DanglingFace(f));
        }
    }
    let cell_area = (1.0 / mesh.subdivisions as f64).powi(2);
    let area_fractions: Vec<f64> = mesh.elements.iter().map(|e| e.area / cell_area).collect();
    let chunkiness: Vec<f64> = mesh
        .elements
        .iter()
        .map(|e| {
            let d = e
                .faces
                .iter()
                .map(|&(f, _)| distance_to_face(&mesh.faces[f].geometry, e.centroid))
                .fold(f64::INFINITY, f64::min);
            d / e.diameter
        })
        .collect();
    let expected_area = 1.0 - mesh.cylinders.iter().map(|c| PI * c.radius * c.radius).sum::<f64>();
    Ok(MeshDiagnostics {
        min_chunkiness: chunkiness.iter().copied().fold(f64::INFINITY, f64::min),
        max_chunkiness: chunkiness.iter().copied().fold(0.0, f64::max),
        total_area: mesh.elements.iter().map(|e| e.area).sum(),
        expected_area,
        num_internal_faces: mesh.num_internal_faces(),
        num_boundary_faces: mesh.faces.len() - mesh.num_internal_faces(),
        area_fractions,
        chunkiness,
    })
}

fn distance_to_face(g: &FaceGeometry, p: Point2) -> f64 {
    match *g {
        FaceGeometry::Segment { start, end } => {
            let d = end - start;
            let t = ((p - start).dot(&d) / d.dot(&d)).clamp(0.0, 1.0);
            (start + t * d - p).norm()
        }
        FaceGeometry::Arc { circle, angle_start, angle_end } => {
            let rel = (circle.angle_of(p) - angle_start).rem_euclid(TAU);
            if rel <= angle_end - angle_start {
                ((p - circle.center).norm() - circle.radius).abs()
            } else {
                (g.start_point() - p).norm().min((g.end_point() - p).norm())
            }
        }
    }
}
