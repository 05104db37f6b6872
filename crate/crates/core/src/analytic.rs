//! Closed-form fields: the creeping-flow solution around a cylinder, the
//! manufactured solution of the single-cylinder test and far-field data.
//!
//! With `X = x - c_x`, `Y = y - c_y`, `s = r^2` the cylinder velocity reads
//! `u = a(s) (X^2 - Y^2, 2XY) + ln(r/R) e_x` with `a(s) = R^2/(2s^2) - 1/(2s)`,
//! and the pressure `p = C - 2X/s`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};

use crate::error::AnalyticError;
use crate::geometry::{Circle, Point2};

/// Points closer than this inside the circle are still accepted.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

pub trait ScalarFunction {
    fn value(&self, x: Point2) -> f64;
}

pub trait VectorFunction {
    fn value(&self, x: Point2) -> Vector2<f64>;
}

/// Vector function with a gradient `G[(i, j)] = d u_i / d x_j`.
pub trait SmoothVectorFunction: VectorFunction {
    fn gradient(&self, x: Point2) -> Matrix2<f64>;
}

impl<F: Fn(Point2) -> f64> ScalarFunction for F {
    fn value(&self, x: Point2) -> f64 {
        self(x)
    }
}

impl<F: Fn(Point2) -> Vector2<f64>> VectorFunction for F {
    fn value(&self, x: Point2) -> Vector2<f64> {
        self(x)
    }
}

/// Vector field given by closures for the value and the gradient.
pub struct FnVectorField<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V: Fn(Point2) -> Vector2<f64>, G> VectorFunction for FnVectorField<V, G> {
    fn value(&self, x: Point2) -> Vector2<f64> {
        (self.value)(x)
    }
}

impl<V: Fn(Point2) -> Vector2<f64>, G: Fn(Point2) -> Matrix2<f64>> SmoothVectorFunction
    for FnVectorField<V, G>
{
    fn gradient(&self, x: Point2) -> Matrix2<f64> {
        (self.gradient)(x)
    }
}

/// Creeping flow around one cylinder, normalised for unit viscosity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderSolution {
    pub circle: Circle,
    /// Speed scale multiplying both velocity and pressure.
    pub speed: f64,
    /// Additive pressure constant.
    pub pressure_constant: f64,
}

struct Coefficients {
    x: f64,
    y: f64,
    s: f64,
    a: f64,
    a1: f64,
    a2: f64,
    a3: f64,
}

impl CylinderSolution {
    pub fn new(circle: Circle) -> Self {
        Self { circle, speed: 1.0, pressure_constant: 0.0 }
    }

    fn check(&self, p: Point2) -> Result<(), AnalyticError> {
        let r = (p - self.circle.center).norm();
        if r < self.circle.radius - DOMAIN_TOLERANCE || !r.is_finite() {
            return Err(AnalyticError::InsideCylinder { x: p.x, y: p.y, r, radius: self.circle.radius });
        }
        Ok(())
    }

    fn coefficients(&self, p: Point2) -> Coefficients {
        let x = p.x - self.circle.center.x;
        let y = p.y - self.circle.center.y;
        let s = x * x + y * y;
        let r2 = self.circle.radius * self.circle.radius;
        Coefficients {
            x,
            y,
            s,
            a: r2 / (2.0 * s * s) - 1.0 / (2.0 * s),
            a1: -r2 / (s * s * s) + 1.0 / (2.0 * s * s),
            a2: 3.0 * r2 / (s * s * s * s) - 1.0 / (s * s * s),
            a3: -12.0 * r2 / (s * s * s * s * s) + 3.0 / (s * s * s * s),
        }
    }

    pub fn velocity(&self, p: Point2) -> Result<Vector2<f64>, AnalyticError> {
        self.check(p)?;
        Ok(self.velocity_unchecked(p))
    }

    pub fn velocity_gradient(&self, p: Point2) -> Result<Matrix2<f64>, AnalyticError> {
        self.check(p)?;
        Ok(self.velocity_gradient_unchecked(p))
    }

    pub fn velocity_laplacian(&self, p: Point2) -> Result<Vector2<f64>, AnalyticError> {
        self.check(p)?;
        Ok(self.velocity_laplacian_unchecked(p))
    }

    pub fn pressure(&self, p: Point2) -> Result<f64, AnalyticError> {
        self.check(p)?;
        Ok(self.pressure_unchecked(p))
    }

    pub fn pressure_gradient(&self, p: Point2) -> Result<Vector2<f64>, AnalyticError> {
        self.check(p)?;
        Ok(self.pressure_gradient_unchecked(p))
    }

    pub(crate) fn velocity_unchecked(&self, p: Point2) -> Vector2<f64> {
        let k = self.coefficients(p);
        let log = 0.5 * (k.s / (self.circle.radius * self.circle.radius)).ln();
        self.speed * Vector2::new(k.a * (k.x * k.x - k.y * k.y) + log, 2.0 * k.a * k.x * k.y)
    }

    pub(crate) fn velocity_gradient_unchecked(&self, p: Point2) -> Matrix2<f64> {
        let Coefficients { x, y, s, a, a1, .. } = self.coefficients(p);
        let d = x * x - y * y;
        self.speed
            * Matrix2::new(
                2.0 * a1 * x * d + 2.0 * a * x + x / s,
                2.0 * a1 * y * d - 2.0 * a * y + y / s,
                4.0 * a1 * x * x * y + 2.0 * a * y,
                4.0 * a1 * x * y * y + 2.0 * a * x,
            )
    }

    pub(crate) fn velocity_laplacian_unchecked(&self, p: Point2) -> Vector2<f64> {
        let Coefficients { x, y, s, a1, a2, .. } = self.coefficients(p);
        let m = 12.0 * a1 + 4.0 * s * a2;
        self.speed * m * Vector2::new(x * x - y * y, 2.0 * x * y)
    }

    /// Gradient of the Laplacian, `H[(i, j)] = d (Lap u)_i / d x_j`.
    pub(crate) fn velocity_laplacian_gradient_unchecked(&self, p: Point2) -> Matrix2<f64> {
        let Coefficients { x, y, s, a1, a2, a3, .. } = self.coefficients(p);
        let m = 12.0 * a1 + 4.0 * s * a2;
        let dm = 16.0 * a2 + 4.0 * s * a3;
        let d = x * x - y * y;
        self.speed
            * Matrix2::new(
                2.0 * dm * x * d + 2.0 * m * x,
                2.0 * dm * y * d - 2.0 * m * y,
                4.0 * dm * x * x * y + 2.0 * m * y,
                4.0 * dm * x * y * y + 2.0 * m * x,
            )
    }

    pub(crate) fn pressure_unchecked(&self, p: Point2) -> f64 {
        let k = self.coefficients(p);
        self.pressure_constant + self.speed * (-2.0 * k.x / k.s)
    }

    pub(crate) fn pressure_gradient_unchecked(&self, p: Point2) -> Vector2<f64> {
        let Coefficients { x, y, s, .. } = self.coefficients(p);
        self.speed * Vector2::new(2.0 * (x * x - y * y) / (s * s), 4.0 * x * y / (s * s))
    }

    /// Hessian of the pressure.
    pub(crate) fn pressure_hessian_unchecked(&self, p: Point2) -> Matrix2<f64> {
        let Coefficients { x, y, s, .. } = self.coefficients(p);
        let (s2, s3) = (s * s, s * s * s);
        let d = x * x - y * y;
        self.speed
            * Matrix2::new(
                4.0 * x / s2 - 8.0 * x * d / s3,
                -4.0 * y / s2 - 8.0 * y * d / s3,
                4.0 * y / s2 - 16.0 * x * x * y / s3,
                4.0 * x / s2 - 16.0 * x * y * y / s3,
            )
    }
}

impl VectorFunction for CylinderSolution {
    fn value(&self, x: Point2) -> Vector2<f64> {
        self.velocity_unchecked(x)
    }
}

impl SmoothVectorFunction for CylinderSolution {
    fn gradient(&self, x: Point2) -> Matrix2<f64> {
        self.velocity_gradient_unchecked(x)
    }
}

/// Radial profile of the stream function `zeta_1(r) sin(theta)`.
pub fn stream_zeta1(r: f64, radius: f64, speed: f64) -> Result<f64, AnalyticError> {
    if r < radius - DOMAIN_TOLERANCE {
        return Err(AnalyticError::InsideCylinder { x: r, y: 0.0, r, radius });
    }
    Ok(speed * ((r * r - radius * radius) / (2.0 * r) - r * (r / radius).ln()))
}

/// Derivative of [`stream_zeta1`] in `r`.
pub fn stream_zeta1_derivative(r: f64, radius: f64, speed: f64) -> Result<f64, AnalyticError> {
    if r < radius - DOMAIN_TOLERANCE {
        return Err(AnalyticError::InsideCylinder { x: r, y: 0.0, r, radius });
    }
    Ok(speed * (-0.5 + radius * radius / (2.0 * r * r) - (r / radius).ln()))
}

/// Smooth part of the manufactured solution.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothPart;

impl SmoothPart {
    pub fn velocity(&self, p: Point2) -> Vector2<f64> {
        let (sx, cx) = (PI * p.x).sin_cos();
        let (sy, cy) = (PI * p.y).sin_cos();
        Vector2::new(sx * sx * sy * cy, -sx * cx * sy * sy)
    }

    pub fn velocity_gradient(&self, p: Point2) -> Matrix2<f64> {
        let (sx, sy) = ((PI * p.x).sin(), (PI * p.y).sin());
        let (s2x, c2x) = (2.0 * PI * p.x).sin_cos();
        let (s2y, c2y) = (2.0 * PI * p.y).sin_cos();
        // u1 = sx^2 s2y / 2, u2 = -s2x sy^2 / 2
        Matrix2::new(
            0.5 * PI * s2x * s2y,
            PI * sx * sx * c2y,
            -PI * c2x * sy * sy,
            -0.5 * PI * s2x * s2y,
        )
    }

    pub fn pressure(&self, p: Point2) -> f64 {
        (p.x - 0.5) * (p.y - 0.5).powi(2)
    }

    pub fn pressure_gradient(&self, p: Point2) -> Vector2<f64> {
        Vector2::new((p.y - 0.5).powi(2), 2.0 * (p.x - 0.5) * (p.y - 0.5))
    }

    /// `-Lap u + grad p` for unit viscosity.
    pub fn body_force(&self, p: Point2) -> Vector2<f64> {
        let (s2x, c2x) = (2.0 * PI * p.x).sin_cos();
        let (s2y, c2y) = (2.0 * PI * p.y).sin_cos();
        let pi2 = PI * PI;
        Vector2::new(
            -pi2 * s2y * (2.0 * c2x - 1.0) + (p.y - 0.5).powi(2),
            pi2 * s2x * (2.0 * c2y - 1.0) + 2.0 * (p.x - 0.5) * (p.y - 0.5),
        )
    }
}

/// Exact solution of the single-cylinder test: the cylinder pair plus
/// (optionally) the smooth part.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedSolution {
    pub cylinder: CylinderSolution,
    pub include_smooth: bool,
}

impl ManufacturedSolution {
    pub fn new(circle: Circle) -> Self {
        Self { cylinder: CylinderSolution::new(circle), include_smooth: true }
    }

    /// The pure cylinder pair, with zero body force.
    pub fn cylinder_only(circle: Circle) -> Self {
        Self { cylinder: CylinderSolution::new(circle), include_smooth: false }
    }

    pub fn velocity(&self, p: Point2) -> Vector2<f64> {
        let mut v = self.cylinder.velocity_unchecked(p);
        if self.include_smooth {
            v += SmoothPart.velocity(p);
        }
        v
    }

    pub fn velocity_gradient(&self, p: Point2) -> Matrix2<f64> {
        let mut g = self.cylinder.velocity_gradient_unchecked(p);
        if self.include_smooth {
            g += SmoothPart.velocity_gradient(p);
        }
        g
    }

    pub fn pressure(&self, p: Point2) -> f64 {
        let mut q = self.cylinder.pressure_unchecked(p);
        if self.include_smooth {
            q += SmoothPart.pressure(p);
        }
        q
    }

    pub fn body_force(&self, p: Point2) -> Vector2<f64> {
        if self.include_smooth {
            SmoothPart.body_force(p)
        } else {
            Vector2::zeros()
        }
    }
}

impl VectorFunction for ManufacturedSolution {
    fn value(&self, x: Point2) -> Vector2<f64> {
        self.velocity(x)
    }
}

impl SmoothVectorFunction for ManufacturedSolution {
    fn gradient(&self, x: Point2) -> Matrix2<f64> {
        self.velocity_gradient(x)
    }
}
