//! Planar cluster-shape analysis: convex hulls, alpha shapes built on a
//! Delaunay triangulation, and the concave-to-convex area ratio.
//!
//! Non-finite coordinates are ignored and duplicate points count once.

use std::collections::{BTreeMap, BTreeSet};

use robust::{orient2d, Coord};
use spade::{DelaunayTriangulation, Point2, Triangulation};

pub type Point = [f64; 2];

/// A region of the plane bounded by one or more closed rings.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    /// Outer boundary, counterclockwise, without the closing repeat.
    pub vertices: Vec<Point>,
    /// Every boundary ring including the outer one. Holes run clockwise.
    pub rings: Vec<Vec<Point>>,
    pub area: f64,
    /// Fewer than three distinct points, or all of them collinear.
    pub degenerate: bool,
}

impl Polygon {
    fn degenerate(vertices: Vec<Point>) -> Self {
        Polygon {
            rings: vec![vertices.clone()],
            vertices,
            area: 0.0,
            degenerate: true,
        }
    }
}

/// Signed shoelace area; positive for counterclockwise rings.
pub fn shoelace(ring: &[Point]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

#[inline]
fn orient(a: Point, b: Point, c: Point) -> f64 {
    orient2d(
        Coord { x: a[0], y: a[1] },
        Coord { x: b[0], y: b[1] },
        Coord { x: c[0], y: c[1] },
    )
}

fn distinct(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points
        .iter()
        .copied()
        .filter(|p| p[0].is_finite() && p[1].is_finite())
        .collect();
    // -0.0 and 0.0 are the same point
    for p in pts.iter_mut() {
        p[0] += 0.0;
        p[1] += 0.0;
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    pts
}

/// Monotone-chain hull with exact orientation tests. Collinear boundary
/// points are dropped.
pub fn convex_hull(points: &[Point]) -> Polygon {
    let pts = distinct(points);
    if pts.len() < 3 {
        return Polygon::degenerate(pts);
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // all collinear: the two extremes remain
        return Polygon::degenerate(lower);
    }
    let area = shoelace(&lower);
    Polygon {
        rings: vec![lower.clone()],
        vertices: lower,
        area,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy)]
struct Triangle {
    v: [usize; 3],
    area: f64,
    circumradius: f64,
}

#[derive(Debug, Clone)]
struct Mesh {
    positions: Vec<Point>,
    triangles: Vec<Triangle>,
}

fn triangle_metrics(a: Point, b: Point, c: Point) -> (f64, f64) {
    let area = (orient(a, b, c) / 2.0).abs();
    let len = |p: Point, q: Point| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let r = if area > 0.0 {
        len(a, b) * len(b, c) * len(c, a) / (4.0 * area)
    } else {
        f64::INFINITY
    };
    (area, r)
}

/// Delaunay mesh of the distinct points, or `None` when they are
/// collinear or fewer than three.
fn delaunay(pts: &[Point]) -> Option<Mesh> {
    if pts.len() < 3 {
        return None;
    }
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    for p in pts {
        dt.insert(Point2::new(p[0], p[1])).ok()?;
    }
    let positions: Vec<Point> = dt
        .vertices()
        .map(|v| {
            let p = v.position();
            [p.x, p.y]
        })
        .collect();
    let mut triangles: Vec<Triangle> = dt
        .inner_faces()
        .map(|f| {
            let mut v = f.vertices().map(|h| h.fix().index());
            if orient(positions[v[0]], positions[v[1]], positions[v[2]]) < 0.0 {
                v.swap(1, 2);
            }
            let (area, circumradius) =
                triangle_metrics(positions[v[0]], positions[v[1]], positions[v[2]]);
            Triangle {
                v,
                area,
                circumradius,
            }
        })
        .collect();
    if triangles.is_empty() {
        return None;
    }
    triangles.sort_by_key(|t| t.v);
    Some(Mesh {
        positions,
        triangles,
    })
}

/// Union-find over triangle indices.
struct Components {
    parent: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Components {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Returns true when two distinct sets were merged.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Clockwise angle swept from direction `from` to direction `to`, in [0, 2π).
fn clockwise_angle(from: Point, to: Point) -> f64 {
    let a = from[1].atan2(from[0]) - to[1].atan2(to[0]);
    a.rem_euclid(std::f64::consts::TAU)
}

/// Splits the directed boundary edges of a triangle set into closed rings.
/// At a vertex with several outgoing boundary edges the ring turns into the
/// wedge that contains the interior, so rings touching at a vertex are kept
/// apart.
fn trace_rings(mesh: &Mesh, tris: &[usize]) -> Vec<Vec<usize>> {
    let mut directed: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &t in tris {
        let v = mesh.triangles[t].v;
        for k in 0..3 {
            directed.insert((v[k], v[(k + 1) % 3]));
        }
    }
    let boundary: Vec<(usize, usize)> = directed
        .iter()
        .copied()
        .filter(|(a, b)| !directed.contains(&(*b, *a)))
        .collect();
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in &boundary {
        outgoing.entry(a).or_default().push(b);
    }
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let p = &mesh.positions;
    let mut rings = Vec::new();
    for &(start, first) in &boundary {
        if used.contains(&(start, first)) {
            continue;
        }
        used.insert((start, first));
        let mut ring = vec![start];
        let (mut prev, mut cur) = (start, first);
        while cur != start {
            ring.push(cur);
            let back = [p[prev][0] - p[cur][0], p[prev][1] - p[cur][1]];
            let next = outgoing[&cur]
                .iter()
                .copied()
                .filter(|w| !used.contains(&(cur, *w)))
                .min_by(|&w1, &w2| {
                    let d1 = [p[w1][0] - p[cur][0], p[w1][1] - p[cur][1]];
                    let d2 = [p[w2][0] - p[cur][0], p[w2][1] - p[cur][1]];
                    clockwise_angle(back, d1).total_cmp(&clockwise_angle(back, d2))
                })
                .expect("boundary edges form closed rings");
            used.insert((cur, next));
            prev = cur;
            cur = next;
        }
        rings.push(ring);
    }
    rings
}

/// Groups kept triangles into edge-connected components, in order of their
/// lowest triangle index.
fn components(mesh: &Mesh, keep: &[usize]) -> Vec<Vec<usize>> {
    let mut uf = Components::new(mesh.triangles.len());
    let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &t in keep {
        let v = mesh.triangles[t].v;
        for k in 0..3 {
            if let Some(o) = owner.insert(edge_key(v[k], v[(k + 1) % 3]), t) {
                uf.union(o, t);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &t in keep {
        groups.entry(uf.find(t)).or_default().push(t);
    }
    groups.into_values().collect()
}

fn polygon_from(mesh: &Mesh, tris: &[usize]) -> Polygon {
    let rings: Vec<Vec<Point>> = trace_rings(mesh, tris)
        .into_iter()
        .map(|r| r.into_iter().map(|i| mesh.positions[i]).collect())
        .collect();
    let outer = rings
        .iter()
        .max_by(|a, b| shoelace(a).total_cmp(&shoelace(b)))
        .cloned()
        .unwrap_or_default();
    Polygon {
        vertices: outer,
        rings,
        area: tris.iter().map(|&t| mesh.triangles[t].area).sum(),
        degenerate: false,
    }
}

fn cutoff(alpha: f64) -> f64 {
    if alpha > 0.0 {
        1.0 / alpha
    } else {
        f64::INFINITY
    }
}

/// Polygons formed by the Delaunay triangles whose circumradius is at most
/// `1 / alpha`. `alpha <= 0` keeps every triangle.
pub fn alpha_shape(points: &[Point], alpha: f64) -> Vec<Polygon> {
    let pts = distinct(points);
    let Some(mesh) = delaunay(&pts) else {
        return vec![convex_hull(&pts)];
    };
    let limit = cutoff(alpha);
    let keep: Vec<usize> = (0..mesh.triangles.len())
        .filter(|&t| mesh.triangles[t].circumradius <= limit)
        .collect();
    components(&mesh, &keep)
        .iter()
        .map(|c| polygon_from(&mesh, c))
        .collect()
}

/// The tightest alpha shape that is a single polygon touching every point.
///
/// Triangles are added in increasing circumradius order; the first radius
/// at which the kept set is one edge-connected component covering all
/// vertices gives the shape, and `alpha` is its reciprocal. The full
/// triangulation always qualifies, so an answer exists. For degenerate
/// input the convex hull is returned with `alpha = 0`.
pub fn smallest_single_polygon_alpha(points: &[Point]) -> (f64, Polygon) {
    let pts = distinct(points);
    let Some(mesh) = delaunay(&pts) else {
        return (0.0, convex_hull(&pts));
    };
    let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
    order.sort_by(|&a, &b| {
        mesh.triangles[a]
            .circumradius
            .total_cmp(&mesh.triangles[b].circumradius)
            .then(a.cmp(&b))
    });

    let mut uf = Components::new(mesh.triangles.len());
    let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut covered = vec![false; mesh.positions.len()];
    let mut n_covered = 0;
    let mut n_components = 0usize;
    let mut i = 0;
    while i < order.len() {
        let radius = mesh.triangles[order[i]].circumradius;
        while i < order.len() && mesh.triangles[order[i]].circumradius == radius {
            let t = order[i];
            n_components += 1;
            let v = mesh.triangles[t].v;
            for k in 0..3 {
                if !covered[v[k]] {
                    covered[v[k]] = true;
                    n_covered += 1;
                }
                if let Some(o) = owner.insert(edge_key(v[k], v[(k + 1) % 3]), t) {
                    if uf.union(o, t) {
                        n_components -= 1;
                    }
                }
            }
            i += 1;
        }
        if n_components == 1 && n_covered == mesh.positions.len() {
            let keep: Vec<usize> = order[..i].to_vec();
            let mut keep_sorted = keep;
            keep_sorted.sort_unstable();
            let alpha = if radius.is_finite() && radius > 0.0 {
                1.0 / radius
            } else {
                0.0
            };
            return (alpha, polygon_from(&mesh, &keep_sorted));
        }
    }
    unreachable!("the full triangulation is one component covering every vertex")
}

/// Area of the tightest single-polygon alpha shape over the convex hull
/// area. Clusters of fewer than three distinct points, or collinear ones,
/// score 1.
pub fn convexity(points: &[Point]) -> f64 {
    let hull = convex_hull(points);
    if hull.degenerate || hull.area <= 0.0 {
        return 1.0;
    }
    let (_, concave) = smallest_single_polygon_alpha(points);
    (concave.area / hull.area).clamp(0.0, 1.0)
}
