//! Validated table families: Bunimovich flowers and dispersing tables with
//! two flat points.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::billiard::{dot, norm, BilliardTable, Curvature, FlatCurve, Piece, Shape, Vec2};
use super::DynamicsError;

/// One circular piece of a flower table. Focusing arcs run counterclockwise
/// around their center from `theta0`; dispersing arcs run clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub center: Vec2,
    pub radius: f64,
    pub theta0: f64,
    pub span: f64,
    pub curvature: Curvature,
}

impl ArcSpec {
    /// Image under rotation by `angle` about the origin followed by `shift`.
    pub fn moved(&self, angle: f64, shift: Vec2) -> Self {
        let (s, c) = angle.sin_cos();
        let p = self.center;
        Self {
            center: [c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]],
            theta0: self.theta0 + angle,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowerSpec {
    /// Boundary pieces in counterclockwise order.
    pub arcs: Vec<ArcSpec>,
}

fn unit(a: f64) -> Vec2 {
    [a.cos(), a.sin()]
}

impl FlowerSpec {
    /// `n` petals of radius `petal_radius` and angular span `span` joined
    /// by dispersing arcs of radius `dispersing_radius` that touch the petal
    /// circles externally, so every junction is C¹. The petal centers sit on
    /// a ring whose radius is fixed by the tangency.
    pub fn tangent(n: usize, petal_radius: f64, span: f64, dispersing_radius: f64) -> Self {
        let reach = petal_radius + dispersing_radius;
        let half = PI / n as f64;
        let ring = reach * (0.5 * span - half).sin() / half.sin();
        let mut arcs = Vec::with_capacity(2 * n);
        for i in 0..n {
            let a = TAU * i as f64 / n as f64;
            let c = [ring * a.cos(), ring * a.sin()];
            arcs.push(ArcSpec {
                center: c,
                radius: petal_radius,
                theta0: a - 0.5 * span,
                span,
                curvature: Curvature::Focusing,
            });
            let dir = unit(a + 0.5 * span);
            arcs.push(ArcSpec {
                center: [c[0] + reach * dir[0], c[1] + reach * dir[1]],
                radius: dispersing_radius,
                theta0: a + 0.5 * span + PI,
                span: span - 2.0 * half,
                curvature: Curvature::Dispersing,
            });
        }
        Self { arcs }
    }

    /// `n` petals centered on a ring of radius `ring`, joined by dispersing
    /// arcs through the petal endpoints with centers on the bisectors.
    /// Junctions are corners unless `ring` matches the tangent layout.
    pub fn cornered(n: usize, ring: f64, petal_radius: f64, span: f64, dispersing_radius: f64) -> Self {
        let mut arcs = Vec::with_capacity(2 * n);
        for i in 0..n {
            let a = TAU * i as f64 / n as f64;
            let b = a + TAU / n as f64;
            let c = [ring * a.cos(), ring * a.sin()];
            arcs.push(ArcSpec {
                center: c,
                radius: petal_radius,
                theta0: a - 0.5 * span,
                span,
                curvature: Curvature::Focusing,
            });
            let e0 = [c[0] + petal_radius * (a + 0.5 * span).cos(), c[1] + petal_radius * (a + 0.5 * span).sin()];
            let cn = [ring * b.cos(), ring * b.sin()];
            let e1 = [cn[0] + petal_radius * (b - 0.5 * span).cos(), cn[1] + petal_radius * (b - 0.5 * span).sin()];
            let bis = unit(a + PI / n as f64);
            let eb = dot(e0, bis);
            let t = eb + (eb * eb - dot(e0, e0) + dispersing_radius * dispersing_radius).max(0.0).sqrt();
            let o = [t * bis[0], t * bis[1]];
            let th0 = (e0[1] - o[1]).atan2(e0[0] - o[0]);
            let th1 = (e1[1] - o[1]).atan2(e1[0] - o[0]);
            arcs.push(ArcSpec {
                center: o,
                radius: dispersing_radius,
                theta0: th0,
                span: (th0 - th1).rem_euclid(TAU),
                curvature: Curvature::Dispersing,
            });
        }
        Self { arcs }
    }

    pub fn moved(&self, angle: f64, shift: Vec2) -> Self {
        Self { arcs: self.arcs.iter().map(|a| a.moved(angle, shift)).collect() }
    }
}

impl Default for FlowerSpec {
    fn default() -> Self {
        Self::tangent(5, 0.3, 0.8 * PI, 1.0)
    }
}

/// Smallest distance from `p` to a boundary piece.
fn distance_to_piece(p: Vec2, piece: &Piece) -> f64 {
    match &piece.shape {
        Shape::Arc { center, radius, theta0, span, orientation } => {
            let d = [p[0] - center[0], p[1] - center[1]];
            let th = d[1].atan2(d[0]);
            let u = (orientation * (th - theta0)).rem_euclid(TAU);
            let ends = [piece.point(0.0), piece.point(piece.length())];
            let to_end = ends.iter().map(|e| norm([p[0] - e[0], p[1] - e[1]])).fold(f64::INFINITY, f64::min);
            if u <= *span {
                (norm(d) - radius).abs().min(to_end)
            } else {
                to_end
            }
        }
        Shape::Segment { a, b } => {
            let e = [b[0] - a[0], b[1] - a[1]];
            let u = (dot([p[0] - a[0], p[1] - a[1]], e) / dot(e, e)).clamp(0.0, 1.0);
            norm([p[0] - a[0] - u * e[0], p[1] - a[1] - u * e[1]])
        }
        Shape::Flat(_) => {
            let l = piece.length();
            (0..=4096)
                .map(|k| {
                    let q = piece.point(l * k as f64 / 4096.0);
                    norm([p[0] - q[0], p[1] - q[1]])
                })
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Relative slack allowed when a boundary piece touches a petal circle.
const TOUCH_TOL: f64 = 1e-9;

/// Builds and validates a flower table. Rejections name the violated
/// condition.
pub fn flowers_table(spec: &FlowerSpec) -> Result<BilliardTable, DynamicsError> {
    if spec.arcs.is_empty() {
        return Err(DynamicsError::InvalidTable("a flower needs at least one arc".into()));
    }
    for (i, a) in spec.arcs.iter().enumerate() {
        if !(a.radius > 0.0 && a.span > 0.0) {
            return Err(DynamicsError::InvalidTable(format!("arc {i}: radius and span must be positive")));
        }
        match a.curvature {
            Curvature::Focusing if a.span >= PI => {
                return Err(DynamicsError::InvalidTable(format!(
                    "arc {i}: focusing arcs must be strictly smaller than a semicircle (span {})",
                    a.span
                )))
            }
            Curvature::Flat => {
                return Err(DynamicsError::InvalidTable(format!("arc {i}: flower arcs must be curved")));
            }
            _ => {}
        }
    }
    if !spec.arcs.iter().any(|a| a.curvature == Curvature::Dispersing) {
        return Err(DynamicsError::InvalidTable("at least one dispersing component is required".into()));
    }
    let pieces: Vec<Piece> = spec
        .arcs
        .iter()
        .enumerate()
        .map(|(i, a)| Piece::arc(a.center, a.radius, a.theta0, a.span, a.curvature, i))
        .collect();
    let table = BilliardTable::new(pieces)?;
    for i in 0..table.pieces().len() {
        let turn = table.corner_turn(i);
        if turn.abs() >= PI - 1e-9 {
            return Err(DynamicsError::InvalidTable(format!("corner after arc {i} is a cusp (turn {turn})")));
        }
    }
    for (i, a) in spec.arcs.iter().enumerate() {
        if a.curvature != Curvature::Focusing {
            continue;
        }
        for (j, piece) in table.pieces().iter().enumerate() {
            if j != i && distance_to_piece(a.center, piece) < a.radius * (1.0 - TOUCH_TOL) {
                return Err(DynamicsError::InvalidTable(format!(
                    "arc {i}: its full circle is not contained in the table (crosses arc {j})"
                )));
            }
        }
    }
    Ok(table)
}

/// Dispersing table whose top and bottom are the flat-point curves
/// `y = ±(1 + |x|^β)` on `|x| <= half_width`, each continued C¹ at both
/// ends by a dispersing arc, and closed on the left and right by dispersing
/// side arcs meeting the extensions at corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatPointSpec {
    pub beta: f64,
    pub half_width: f64,
    pub extension_radius: f64,
    pub extension_span: f64,
    pub side_radius: f64,
}

impl Default for FlatPointSpec {
    fn default() -> Self {
        Self { beta: 6.0, half_width: 0.5, extension_radius: 0.5, extension_span: 0.2, side_radius: 3.0 }
    }
}

/// Default fast-subset radius as a fraction of the flat half width.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.9;

impl FlatPointSpec {
    /// Arclength radius around each flat point excluded from the fast
    /// subset by default.
    pub fn default_radius(&self) -> f64 {
        DEFAULT_RADIUS_FRACTION * self.half_width
    }

    /// Tail index `(β + 2)/(β - 2) + 1` of the return time to the fast
    /// subset.
    pub fn tail_index(&self) -> f64 {
        (self.beta + 2.0) / (self.beta - 2.0) + 1.0
    }
}

/// Dispersing arc of `radius` and `span` continuing a piece C¹ at `p`,
/// where `inward` is the table-side normal there. With `ends_at_p` the arc
/// runs into `p`, otherwise it starts from `p`.
fn extension(p: Vec2, inward: Vec2, radius: f64, span: f64, ends_at_p: bool, group: usize) -> Piece {
    let center = [p[0] - radius * inward[0], p[1] - radius * inward[1]];
    let th_p = inward[1].atan2(inward[0]);
    let theta0 = if ends_at_p { th_p + span } else { th_p };
    Piece::arc(center, radius, theta0, span, Curvature::Dispersing, group)
}

/// Dispersing arc from `a` to `b` bulging into the table, which lies to
/// the left of `a -> b`.
fn side_arc(a: Vec2, b: Vec2, radius: f64, group: usize) -> Result<Piece, DynamicsError> {
    let chord = [b[0] - a[0], b[1] - a[1]];
    let len = norm(chord);
    if radius < 0.5 * len {
        return Err(DynamicsError::InvalidTable(format!("side radius {radius} shorter than half the gap {len}")));
    }
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let right = [chord[1] / len, -chord[0] / len];
    let off = (radius * radius - 0.25 * len * len).sqrt();
    let c = [mid[0] + off * right[0], mid[1] + off * right[1]];
    let th0 = (a[1] - c[1]).atan2(a[0] - c[0]);
    let th1 = (b[1] - c[1]).atan2(b[0] - c[0]);
    Ok(Piece::arc(c, radius, th0, (th0 - th1).rem_euclid(TAU), Curvature::Dispersing, group))
}

pub fn flat_point_table(spec: &FlatPointSpec) -> Result<BilliardTable, DynamicsError> {
    if !(spec.beta > 2.0) {
        return Err(DynamicsError::InvalidTable(format!(
            "beta must exceed 2 for a flat point (got {}; curvature does not vanish)",
            spec.beta
        )));
    }
    if !(spec.half_width > 0.0 && spec.extension_radius > 0.0 && spec.extension_span > 0.0 && spec.side_radius > 0.0) {
        return Err(DynamicsError::InvalidTable("widths, radii and spans must be positive".into()));
    }
    let bottom = Piece::flat(FlatCurve::new(spec.beta, spec.half_width, -1.0)?, 0);
    let top = Piece::flat(FlatCurve::new(spec.beta, spec.half_width, 1.0)?, 1);
    let (lb, lt) = (bottom.length(), top.length());
    let (r, sp) = (spec.extension_radius, spec.extension_span);
    let br = extension(bottom.point(lb), bottom.normal(lb), r, sp, false, 0);
    let tr = extension(top.point(0.0), top.normal(0.0), r, sp, true, 1);
    let tl = extension(top.point(lt), top.normal(lt), r, sp, false, 1);
    let bl = extension(bottom.point(0.0), bottom.normal(0.0), r, sp, true, 0);
    let right = side_arc(br.point(br.length()), tr.point(0.0), spec.side_radius, 2)?;
    let left = side_arc(tl.point(tl.length()), bl.point(0.0), spec.side_radius, 3)?;
    let table = BilliardTable::new(vec![bottom, br, right, tr, top, tl, left, bl])?;
    for i in 0..table.pieces().len() {
        let turn = table.corner_turn(i);
        if turn.abs() >= PI - 1e-9 {
            return Err(DynamicsError::InvalidTable(format!("corner after piece {i} is a cusp (turn {turn})")));
        }
    }
    Ok(table)
}

/// Arclength of the flat point on piece `piece` of a flat-point table.
pub fn flat_point_position(table: &BilliardTable, piece: usize) -> Option<f64> {
    match &table.pieces().get(piece)?.shape {
        Shape::Flat(c) => Some(c.s_of_x(0.0)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::billiard::point_in_polygon;

    #[test]
    fn tangent_flower_is_valid_and_smooth() {
        for n in 3..=6 {
            let t = flowers_table(&FlowerSpec::tangent(n, 0.3, 0.8 * PI, 1.0)).unwrap();
            for i in 0..t.pieces().len() {
                assert!(t.corner_turn(i).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn semicircle_rejected() {
        let err = flowers_table(&FlowerSpec::tangent(4, 0.3, PI, 1.0)).unwrap_err().to_string();
        assert!(err.contains("strictly smaller than a semicircle"), "{err}");
    }

    #[test]
    fn beta_two_rejected() {
        let spec = FlatPointSpec { beta: 2.0, ..FlatPointSpec::default() };
        let err = flat_point_table(&spec).unwrap_err().to_string();
        assert!(err.contains("beta must exceed 2"), "{err}");
    }

    #[test]
    fn period_two_orbit() {
        let t = flat_point_table(&FlatPointSpec::default()).unwrap();
        let s0 = flat_point_position(&t, 0).unwrap();
        let start = t.state(0, s0, 0.0);
        assert!(start.pos[0].abs() < 1e-12 && (start.pos[1] + 1.0).abs() < 1e-12);
        let mid = t.step(&start).unwrap();
        assert_eq!(mid.piece, 4);
        let back = t.step(&mid).unwrap();
        assert_eq!(back.piece, 0);
        assert!((back.s - s0).abs() < 1e-12 && back.phi.abs() < 1e-12);
    }

    #[test]
    fn cornered_matches_tangent_at_the_tangent_ring() {
        let tan = FlowerSpec::tangent(4, 0.3, 0.8 * PI, 1.0);
        let ring = norm(tan.arcs[0].center);
        let cor = FlowerSpec::cornered(4, ring, 0.3, 0.8 * PI, 1.0);
        for (a, b) in tan.arcs.iter().zip(&cor.arcs) {
            assert!(norm([a.center[0] - b.center[0], a.center[1] - b.center[1]]) < 1e-9);
            assert!((a.span - b.span).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_table_closes_with_positive_corners() {
        let t = flat_point_table(&FlatPointSpec::default()).unwrap();
        let poly = t.polygon(200.0);
        assert!(point_in_polygon([0.0, 0.0], &poly));
        assert!(!point_in_polygon([0.0, 1.2], &poly));
    }
}
