//! Reference frames, the differentiable kinematic update, time-to-collision,
//! oriented-box intersection and the circle decomposition of vehicle footprints.
//!
//! Everything that has to be differentiated is generic over [`Real`], so the
//! exact same formula runs on `f64` (metrics, data preparation) and on graph
//! scalars (policy features, simulator update, losses).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::autodiff::Real;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Maximum (and non-closing) time-to-collision in seconds.
pub const TTC_MAX: f64 = 10.0;

/// A planar pose: global position plus a unit heading vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D<R = f64> {
    pub x: R,
    pub y: R,
    /// Heading unit vector, x component.
    pub hx: R,
    /// Heading unit vector, y component.
    pub hy: R,
}

impl<R: Real> Pose2D<R> {
    /// Build a pose, normalizing the heading vector.
    pub fn new(x: R, y: R, hx: R, hy: R) -> Self {
        let n = hx.hypot(hy);
        Pose2D { x, y, hx: hx / n, hy: hy / n }
    }

    pub fn position(&self) -> (R, R) {
        (self.x, self.y)
    }

    pub fn heading_angle(&self) -> R {
        self.hy.atan2(self.hx)
    }
}

impl Pose2D<f64> {
    pub fn from_angle(x: f64, y: f64, theta: f64) -> Self {
        Pose2D { x, y, hx: theta.cos(), hy: theta.sin() }
    }
}

/// An axis-aligned-in-body rectangle at a pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2D<f64>,
    pub length: f64,
    pub width: f64,
}

/// Transform a global point into the frame (origin at the frame position,
/// x-axis along the frame heading).
pub fn to_local<R: Real>(point: (R, R), frame: &Pose2D<R>) -> (R, R) {
    let dx = point.0 - frame.x;
    let dy = point.1 - frame.y;
    (dx * frame.hx + dy * frame.hy, -(dx * frame.hy) + dy * frame.hx)
}

/// Inverse of [`to_local`].
pub fn to_global<R: Real>(point: (R, R), frame: &Pose2D<R>) -> (R, R) {
    (
        frame.x + point.0 * frame.hx - point.1 * frame.hy,
        frame.y + point.0 * frame.hy + point.1 * frame.hx,
    )
}

/// Rotate a vector from the frame orientation into the global orientation
/// (no translation).
pub fn rotate_to_global<R: Real>(v: (R, R), frame: &Pose2D<R>) -> (R, R) {
    (v.0 * frame.hx - v.1 * frame.hy, v.0 * frame.hy + v.1 * frame.hx)
}

/// Rotate a global vector into the frame orientation (no translation).
pub fn rotate_to_local<R: Real>(v: (R, R), frame: &Pose2D<R>) -> (R, R) {
    (v.0 * frame.hx + v.1 * frame.hy, -(v.0 * frame.hy) + v.1 * frame.hx)
}

/// Below this displacement the heading is left unchanged, so standstill does
/// not inject heading noise.
pub const HEADING_UPDATE_MIN_DISP: f64 = 1e-6;

/// Advance a pose by a position delta expressed in its own frame. The new
/// heading is the direction of the global displacement when the motion is
/// larger than [`HEADING_UPDATE_MIN_DISP`], otherwise the old heading.
pub fn apply_action<R: Real>(pose: &Pose2D<R>, action: (R, R)) -> Pose2D<R> {
    let (gx, gy) = rotate_to_global(action, pose);
    let x = pose.x + gx;
    let y = pose.y + gy;
    let norm2 = gx * gx + gy * gy;
    if norm2.val().sqrt() > HEADING_UPDATE_MIN_DISP {
        let n = norm2.sqrt();
        Pose2D { x, y, hx: gx / n, hy: gy / n }
    } else {
        Pose2D { x, y, hx: pose.hx, hy: pose.hy }
    }
}

/// Time in seconds until the center distance would shrink to zero at the
/// current closing speed, clamped to `[0, TTC_MAX]`; `TTC_MAX` when the pair
/// is not closing.
pub fn time_to_collision<R: Real>(
    src_pos: (R, R),
    src_vel: (R, R),
    tgt_pos: (R, R),
    tgt_vel: (R, R),
) -> R {
    let dx = tgt_pos.0 - src_pos.0;
    let dy = tgt_pos.1 - src_pos.1;
    let dvx = tgt_vel.0 - src_vel.0;
    let dvy = tgt_vel.1 - src_vel.1;
    let dist2 = dx * dx + dy * dy;
    if dist2.val() <= 0.0 {
        return dist2.lift(TTC_MAX);
    }
    let dist = dist2.sqrt();
    // d(dist)/dt = (rel_p . rel_v) / dist; closing speed is its negation.
    let closing = -((dx * dvx + dy * dvy) / dist);
    if closing.val() > 1e-12 {
        (dist / closing).clamp(0.0, TTC_MAX)
    } else {
        dist2.lift(TTC_MAX)
    }
}

impl OrientedBox {
    pub fn new(center: Pose2D<f64>, length: f64, width: f64) -> Self {
        OrientedBox { center, length, width }
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        [
            to_global((hl, hw), &self.center),
            to_global((hl, -hw), &self.center),
            to_global((-hl, -hw), &self.center),
            to_global((-hl, hw), &self.center),
        ]
    }
}

fn project(corners: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in corners {
        let p = x * axis.0 + y * axis.1;
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// Separating-axis intersection test for two oriented rectangles. Touching
/// boxes count as intersecting.
pub fn obb_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [
        (a.center.hx, a.center.hy),
        (-a.center.hy, a.center.hx),
        (b.center.hx, b.center.hy),
        (-b.center.hy, b.center.hx),
    ];
    for axis in axes {
        let (alo, ahi) = project(&ca, axis);
        let (blo, bhi) = project(&cb, axis);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Longitudinal center offsets for an `n`-circle footprint cover: radius is
/// `width / 2`, centers equally spaced over `[-(length-width)/2, +(length-width)/2]`.
pub fn circle_offsets(length: f64, width: f64, n: usize) -> Result<(Vec<f64>, f64), GeometryError> {
    if length < width {
        return Err(GeometryError::Contract(format!(
            "circle decomposition requires length >= width, got {length} < {width}"
        )));
    }
    let radius = width / 2.0;
    let half_span = (length - width) / 2.0;
    let offsets = if n == 1 {
        vec![0.0]
    } else {
        (0..n)
            .map(|k| -half_span + (2.0 * half_span) * k as f64 / (n - 1) as f64)
            .collect()
    };
    Ok((offsets, radius))
}

/// Circle centers (global) and the shared radius for a box footprint.
pub fn circle_decomposition(
    b: &OrientedBox,
    n: usize,
) -> Result<Vec<(f64, f64, f64)>, GeometryError> {
    let (offsets, radius) = circle_offsets(b.length, b.width, n)?;
    Ok(offsets
        .into_iter()
        .map(|o| {
            let (x, y) = to_global((o, 0.0), &b.center);
            (x, y, radius)
        })
        .collect())
}

/// Point-in-polygon with a closed boundary: points on an edge count as inside.
pub fn point_in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    // Boundary check first so the parity test does not have to be exact there.
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) {
            let x_cross = xj + (p.1 - yj) / (yi - yj) * (xi - xj);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    if len == 0.0 {
        return (p.0 - a.0).abs() < 1e-9 && (p.1 - a.1).abs() < 1e-9;
    }
    if (cross / len).abs() > 1e-9 {
        return false;
    }
    let dot = (p.0 - a.0) * (b.0 - a.0) + (p.1 - a.1) * (b.1 - a.1);
    (-1e-9..=len * len + 1e-9).contains(&dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn pose(x: f64, y: f64, hx: f64, hy: f64) -> Pose2D {
        Pose2D::new(x, y, hx, hy)
    }

    #[test]
    fn to_local_identity_frame() {
        let f = pose(0.0, 0.0, 1.0, 0.0);
        assert_eq!(to_local((0.0, 0.0), &f), (0.0, 0.0));
    }

    #[test]
    fn to_local_rotated_frame() {
        // Frame looks along +y; the global point (0, 1) is one unit ahead.
        let f = pose(0.0, 0.0, 0.0, 1.0);
        let (lx, ly) = to_local((0.0, 1.0), &f);
        assert!((lx - 1.0).abs() < 1e-12 && ly.abs() < 1e-12);
    }

    #[test]
    fn local_global_round_trip() {
        let mut worst = 0.0f64;
        for k in 0..100 {
            let a = k as f64 * 0.37;
            let f = pose(a.sin() * 50.0, a.cos() * 30.0, (a * 1.7).cos(), (a * 1.7).sin());
            let p = ((a * 3.1).sin() * 80.0, (a * 2.3).cos() * 80.0);
            let back = to_global(to_local(p, &f), &f);
            worst = worst.max((back.0 - p.0).abs()).max((back.1 - p.1).abs());
        }
        assert!(worst < 1e-9, "round-trip error {worst}");
    }

    #[test]
    fn apply_action_zero_keeps_pose() {
        let p = pose(3.0, 4.0, 0.6, 0.8);
        let q = apply_action(&p, (0.0, 0.0));
        assert_eq!(p, q);
    }

    #[test]
    fn apply_action_rotates_into_global() {
        let p = pose(0.0, 0.0, 0.0, 1.0);
        let q = apply_action(&p, (1.0, 0.0));
        assert!((q.x - 0.0).abs() < 1e-12 && (q.y - 1.0).abs() < 1e-12);
        assert!((q.hx - 0.0).abs() < 1e-12 && (q.hy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_action_gradient_matches_finite_difference() {
        let eval = |ax: f64, ay: f64| {
            let p = pose(1.0, 2.0, (0.3f64).cos(), (0.3f64).sin());
            apply_action(&p, (ax, ay)).x
        };
        let g = Graph::new();
        let p = Pose2D::new(g.var(1.0), g.var(2.0), g.var((0.3f64).cos()), g.var((0.3f64).sin()));
        let ax = g.var_leaf(0.4);
        let ay = g.var_leaf(-0.2);
        let q = apply_action(&p, (ax, ay));
        g.backward(q.x.id()).unwrap();
        let h = 1e-6;
        let fdx = (eval(0.4 + h, -0.2) - eval(0.4 - h, -0.2)) / (2.0 * h);
        let fdy = (eval(0.4, -0.2 + h) - eval(0.4, -0.2 - h)) / (2.0 * h);
        let gx = g.grad(ax.id()).unwrap().item();
        let gy = g.grad(ay.id()).unwrap().item();
        assert!((gx - fdx).abs() < 1e-5, "{gx} vs {fdx}");
        assert!((gy - fdy).abs() < 1e-5, "{gy} vs {fdy}");
    }

    #[test]
    fn apply_action_preserves_heading_norm() {
        let mut p = pose(0.0, 0.0, 1.0, 0.0);
        for k in 0..200 {
            let a = ((k as f64 * 0.7).sin() * 2.0, (k as f64 * 1.3).cos() * 2.0);
            p = apply_action(&p, a);
            let n = (p.hx * p.hx + p.hy * p.hy).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ttc_head_on() {
        // 10 m separation closing at 5 m/s.
        let t = time_to_collision((0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (0.0, 0.0));
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ttc_non_closing_is_max() {
        let t = time_to_collision((0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (5.0, 0.0));
        assert_eq!(t, TTC_MAX);
    }

    #[test]
    fn ttc_clamps_to_max() {
        // 200 m at 5 m/s closing would be 40 s.
        let t = time_to_collision((0.0, 0.0), (5.0, 0.0), (200.0, 0.0), (0.0, 0.0));
        assert_eq!(t, TTC_MAX);
    }

    #[test]
    fn obb_self_overlap_and_disjoint() {
        let a = OrientedBox::new(pose(0.0, 0.0, 1.0, 0.0), 5.0, 2.0);
        assert!(obb_intersect(&a, &a));
        let b = OrientedBox::new(pose(100.0, 0.0, 1.0, 0.0), 5.0, 2.0);
        assert!(!obb_intersect(&a, &b));
        assert!(!obb_intersect(&b, &a));
    }

    #[test]
    fn obb_rotated_corner_penetration() {
        // A 45-degree box whose corner dips 0.1 m into a flat box.
        let flat = OrientedBox::new(pose(0.0, 0.0, 1.0, 0.0), 4.0, 2.0);
        let half_diag = (2.0f64).sqrt() / 2.0 * 2.0; // corner reach of a 2x2 box at 45 deg
        let rotated = OrientedBox::new(
            Pose2D::from_angle(0.0, 1.0 + half_diag - 0.1, std::f64::consts::FRAC_PI_4),
            2.0,
            2.0,
        );
        assert!(obb_intersect(&flat, &rotated));
        // Backed off by 0.2 m it clears.
        let clear = OrientedBox::new(
            Pose2D::from_angle(0.0, 1.0 + half_diag + 0.1, std::f64::consts::FRAC_PI_4),
            2.0,
            2.0,
        );
        assert!(!obb_intersect(&flat, &clear));
    }

    #[test]
    fn circle_decomposition_spacing() {
        let b = OrientedBox::new(pose(0.0, 0.0, 1.0, 0.0), 5.0, 2.0);
        let circles = circle_decomposition(&b, 5).unwrap();
        let expect = [-1.5, -0.75, 0.0, 0.75, 1.5];
        for (c, e) in circles.iter().zip(expect) {
            assert!((c.0 - e).abs() < 1e-12 && c.1.abs() < 1e-12);
            assert!((c.2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_decomposition_square_box() {
        let b = OrientedBox::new(pose(2.0, 3.0, 1.0, 0.0), 2.0, 2.0);
        let circles = circle_decomposition(&b, 5).unwrap();
        assert_eq!(circles.len(), 5);
        for c in circles {
            assert!((c.0 - 2.0).abs() < 1e-12 && (c.1 - 3.0).abs() < 1e-12);
            assert!((c.2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_decomposition_rotates_rigidly() {
        let b = OrientedBox::new(pose(1.0, -2.0, 1.0, 0.0), 5.0, 2.0);
        let circles = circle_decomposition(&b, 5).unwrap();
        let rot = OrientedBox::new(Pose2D::from_angle(1.0, -2.0, std::f64::consts::FRAC_PI_2), 5.0, 2.0);
        let rotated = circle_decomposition(&rot, 5).unwrap();
        for (c, r) in circles.iter().zip(&rotated) {
            // Rotating the box by 90 degrees about its center maps (dx, dy) -> (-dy, dx).
            let dx = c.0 - 1.0;
            let dy = c.1 + 2.0;
            assert!((r.0 - 1.0 - (-dy)).abs() < 1e-12);
            assert!((r.1 + 2.0 - dx).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_decomposition_rejects_wide_boxes() {
        let b = OrientedBox::new(pose(0.0, 0.0, 1.0, 0.0), 1.0, 2.0);
        assert!(circle_decomposition(&b, 5).is_err());
    }

    #[test]
    fn point_in_polygon_boundary_is_inside() {
        let square = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)];
        assert!(point_in_polygon((1.0, 1.0), &square));
        assert!(point_in_polygon((2.0, 1.0), &square));
        assert!(point_in_polygon((0.0, 0.0), &square));
        assert!(!point_in_polygon((2.1, 1.0), &square));
    }
}
