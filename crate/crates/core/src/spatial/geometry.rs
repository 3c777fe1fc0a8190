//! Planar geometry on convex rings and the equal-area projection.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm2().sqrt()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Spherical Lambert azimuthal equal-area projection, output in km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    lon0: f64,
    sin_lat0: f64,
    cos_lat0: f64,
    center: (f64, f64),
}

impl Projection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        let phi = lat0.to_radians();
        Projection { lon0: lon0.to_radians(), sin_lat0: phi.sin(), cos_lat0: phi.cos(), center: (lon0, lat0) }
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn forward(&self, lon: f64, lat: f64) -> Point {
        let (sin_phi, cos_phi) = lat.to_radians().sin_cos();
        let (sin_dl, cos_dl) = (lon.to_radians() - self.lon0).sin_cos();
        let k = (2.0 / (1.0 + self.sin_lat0 * sin_phi + self.cos_lat0 * cos_phi * cos_dl)).sqrt();
        Point::new(
            EARTH_RADIUS_KM * k * cos_phi * sin_dl,
            EARTH_RADIUS_KM * k * (self.cos_lat0 * sin_phi - self.sin_lat0 * cos_phi * cos_dl),
        )
    }

    pub fn inverse(&self, p: Point) -> (f64, f64) {
        let rho = p.norm2().sqrt();
        if rho == 0.0 {
            return self.center;
        }
        let c = 2.0 * (rho / (2.0 * EARTH_RADIUS_KM)).asin();
        let (sin_c, cos_c) = c.sin_cos();
        let lat = (cos_c * self.sin_lat0 + p.y * sin_c * self.cos_lat0 / rho).asin();
        let lon = self.lon0 + (p.x * sin_c).atan2(rho * self.cos_lat0 * cos_c - p.y * self.sin_lat0 * sin_c);
        (lon.to_degrees(), lat.to_degrees())
    }
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].cross(ring[(i + 1) % n])).sum::<f64>() / 2.0
}

pub fn area(ring: &[Point]) -> f64 {
    signed_area(ring).abs()
}

/// Convex hull by monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && (hull[hull.len() - 1] - hull[hull.len() - 2]).cross(p - hull[hull.len() - 2]) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Convex hull of `points` grown by `distance`, with round corners of
/// `segments` vertices per full turn.
pub fn buffered_hull(points: &[Point], distance: f64, segments: usize) -> Vec<Point> {
    let mut grown = Vec::with_capacity(points.len() * segments);
    let hull = convex_hull(points);
    for p in &hull {
        for k in 0..segments {
            let a = std::f64::consts::TAU * k as f64 / segments as f64;
            grown.push(*p + Point::new(a.cos(), a.sin()) * distance);
        }
    }
    convex_hull(&grown)
}

/// Orients a ring counter-clockwise, drops a repeated closing vertex and
/// checks convexity; the error carries the index of the first reflex vertex.
pub fn normalize_convex_ring(mut ring: Vec<Point>) -> Result<Vec<Point>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring.dedup();
    if ring.len() < 3 || signed_area(&ring) == 0.0 {
        return Err(Error::Config("boundary ring needs at least 3 non-collinear vertices".into()));
    }
    if signed_area(&ring) < 0.0 {
        ring.reverse();
    }
    let n = ring.len();
    let scale = ring.iter().map(|p| p.norm2()).fold(0.0, f64::max).max(1.0);
    for i in 0..n {
        let (a, b, c) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
        if (b - a).cross(c - b) < -1e-12 * scale {
            return Err(Error::NonConvexBoundary(i));
        }
    }
    Ok(ring)
}

/// Inclusive point-in-convex-ring test for counter-clockwise rings.
pub fn contains_convex(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    n >= 3 && (0..n).all(|i| (ring[(i + 1) % n] - ring[i]).cross(p - ring[i]) >= 0.0)
}

/// Clips a convex ring to `{p : normal . p <= offset}` (Sutherland-Hodgman).
/// `labels[i]` names the edge from vertex `i` to vertex `i + 1`; edges created
/// along the cut get `cut`.
pub fn clip_half_plane<L: Copy>(
    ring: &[Point],
    labels: &[L],
    normal: Point,
    offset: f64,
    cut: L,
) -> (Vec<Point>, Vec<L>) {
    let n = ring.len();
    let mut out = Vec::with_capacity(n + 1);
    let mut out_labels = Vec::with_capacity(n + 1);
    let push = |p: Point, l: L, out: &mut Vec<Point>, out_labels: &mut Vec<L>| {
        if let Some(last) = out.last() {
            if (p - *last).norm2() <= 1e-24 * (1.0 + p.norm2()) {
                out.pop();
                out_labels.pop();
            }
        }
        out.push(p);
        out_labels.push(l);
    };
    for i in 0..n {
        let (p, q) = (ring[i], ring[(i + 1) % n]);
        let dp = normal.dot(p) - offset;
        let dq = normal.dot(q) - offset;
        let crossing = || p + (q - p) * (dp / (dp - dq));
        match (dp <= 0.0, dq <= 0.0) {
            (true, true) => push(p, labels[i], &mut out, &mut out_labels),
            (true, false) => {
                push(p, labels[i], &mut out, &mut out_labels);
                if dp < 0.0 {
                    push(crossing(), cut, &mut out, &mut out_labels);
                } else {
                    *out_labels.last_mut().unwrap() = cut;
                }
            }
            (false, true) => {
                if dq < 0.0 {
                    push(crossing(), labels[i], &mut out, &mut out_labels);
                }
            }
            (false, false) => {}
        }
    }
    if out.len() > 1 && (out[0] - out[out.len() - 1]).norm2() <= 1e-24 * (1.0 + out[0].norm2()) {
        out.pop();
        out_labels.pop();
    }
    if out.len() < 3 {
        return (Vec::new(), Vec::new());
    }
    (out, out_labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point> {
        vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)]
    }

    #[test]
    fn projection_round_trip_and_scale() {
        let proj = Projection::new(19.05, 47.5);
        assert_eq!(proj.forward(19.05, 47.5), Point::new(0.0, 0.0));
        let p = proj.forward(19.2, 47.6);
        let (lon, lat) = proj.inverse(p);
        assert!((lon - 19.2).abs() < 1e-10 && (lat - 47.6).abs() < 1e-10);
        // One hundredth of a degree of latitude is about 1.112 km.
        let north = proj.forward(19.05, 47.51);
        assert!((north.y - 1.1119).abs() < 1e-3, "{north:?}");
    }

    #[test]
    fn hull_and_area() {
        let mut pts = square();
        pts.push(Point::new(0.5, 0.5));
        pts.push(Point::new(0.5, 0.0));
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert_eq!(signed_area(&hull), 1.0);
    }

    #[test]
    fn clip_square_in_half() {
        let sq = square();
        let (ring, labels) = clip_half_plane(&sq, &[0u8; 4], Point::new(1.0, 0.0), 0.5, 1);
        assert!((area(&ring) - 0.5).abs() < 1e-15);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 1);
        let (empty, _) = clip_half_plane(&sq, &[0u8; 4], Point::new(1.0, 0.0), -1.0, 1);
        assert!(empty.is_empty());
    }

    #[test]
    fn convexity_check() {
        let mut ring = square();
        ring.reverse();
        assert!(signed_area(&normalize_convex_ring(ring).unwrap()) > 0.0);
        let notch = vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 0.5),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        assert!(matches!(normalize_convex_ring(notch), Err(Error::NonConvexBoundary(2))));
    }

    #[test]
    fn buffer_contains_grown_points() {
        let b = buffered_hull(&square(), 1.0, 64);
        assert!(contains_convex(&b, Point::new(-0.9, 0.5)));
        assert!(!contains_convex(&b, Point::new(-1.1, 0.5)));
    }
}
