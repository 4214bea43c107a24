use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpatialLocation;

/// Triangulated domain. Triangles are stored counter-clockwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn of_sites(sites: &[SpatialLocation]) -> Self {
        let mut b = Self::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in sites {
            b.min_x = b.min_x.min(s.x);
            b.min_y = b.min_y.min(s.y);
            b.max_x = b.max_x.max(s.x);
            b.max_y = b.max_y.max(s.y);
        }
        b
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Validates indices and orientation; clockwise triangles are flipped,
    /// zero-area triangles rejected.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(k) = vertices.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Mesh(format!("vertex {k} has a non-finite coordinate")));
        }
        let n = vertices.len();
        for (k, tri) in triangles.iter_mut().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::Mesh(format!("triangle {k} references vertex {bad}, but N = {n}")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area.abs() <= 1e-14 {
                return Err(Error::Mesh(format!("triangle {k} {tri:?} has zero area")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }
        if triangles.is_empty() {
            return Err(Error::Mesh("mesh has no triangles".into()));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn corners(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn area(&self, k: usize) -> f64 {
        let [a, b, c] = self.corners(k);
        signed_area(a, b, c)
    }

    /// Text form: header `N M`, then `x y` per vertex, then `i j k` per triangle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.vertices.len(), self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{} {}", v[0], v[1]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

/// Structured triangulation of `bbox` grown by `padding` on every side.
///
/// The grid has spacing exactly `resolution` in both directions and is
/// centred on the padded box; each cell is split along its diagonal.
pub fn regular_mesh(bbox: BoundingBox, resolution: f64, padding: f64) -> Result<Mesh> {
    if !(resolution > 0.0) || !(padding >= 0.0) {
        return Err(Error::domain(format!("need resolution > 0 and padding >= 0, got {resolution}, {padding}")));
    }
    let (w, h) = (bbox.width() + 2.0 * padding, bbox.height() + 2.0 * padding);
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::domain(format!("degenerate bounding box {bbox:?} with padding {padding}")));
    }
    let cells = |len: f64| ((len / resolution) - 1e-9).ceil().max(1.0) as usize;
    let (nx, ny) = (cells(w), cells(h));
    let x0 = bbox.min_x - padding - 0.5 * (nx as f64 * resolution - w);
    let y0 = bbox.min_y - padding - 0.5 * (ny as f64 * resolution - h);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for r in 0..=ny {
        for c in 0..=nx {
            vertices.push([x0 + c as f64 * resolution, y0 + r as f64 * resolution]);
        }
    }
    let idx = |r: usize, c: usize| r * (nx + 1) + c;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for r in 0..ny {
        for c in 0..nx {
            let (v00, v10, v01, v11) = (idx(r, c), idx(r, c + 1), idx(r + 1, c), idx(r + 1, c + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Mesh::new(vertices, triangles)
}

/// Default mesh for a set of sites: a regular mesh over their bounding box,
/// padded by 20% of the box diagonal, with spacing chosen so the node count
/// is close to `target_nodes`.
pub fn auto_mesh(sites: &[SpatialLocation], target_nodes: usize) -> Result<Mesh> {
    let mut diag = BoundingBox::of_sites(sites).diagonal();
    if !(diag > 0.0) {
        diag = 1.0;
    }
    auto_mesh_padded(sites, target_nodes, 0.2 * diag)
}

/// [`auto_mesh`] with an explicit padding distance.
pub fn auto_mesh_padded(sites: &[SpatialLocation], target_nodes: usize, padding: f64) -> Result<Mesh> {
    if sites.is_empty() || target_nodes < 4 {
        return Err(Error::domain("auto mesh needs sites and at least 4 target nodes"));
    }
    if !(padding > 0.0) || !padding.is_finite() {
        return Err(Error::domain(format!("auto mesh padding must be positive, got {padding}")));
    }
    let bbox = BoundingBox::of_sites(sites);
    let (w, h) = (bbox.width() + 2.0 * padding, bbox.height() + 2.0 * padding);
    // Solve (w/r + 1)(h/r + 1) = target for the spacing r.
    let nt = target_nodes as f64;
    let (a, b, c) = (nt - 1.0, -(w + h), -w * h);
    let resolution = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    // Snap the spacing to a whole number of cells across the width and keep
    // the neighbouring choice whose node count lands closest to the target.
    let k0 = (w / resolution).round().max(1.0) as usize;
    let nodes = |k: usize| {
        let r = w / k as f64;
        let ny = ((h / r) - 1e-9).ceil().max(1.0) as usize;
        (k + 1) * (ny + 1)
    };
    let best = (k0.saturating_sub(2).max(1)..=k0 + 2)
        .min_by_key(|&k| nodes(k).abs_diff(target_nodes))
        .expect("candidate range is non-empty");
    regular_mesh(bbox, w / best as f64, padding)
}

/// Parses the whitespace-delimited mesh format; `#` starts a comment.
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| Error::Mesh("empty mesh file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|tok| tok.parse().map_err(|_| Error::Mesh(format!("line {hline}: bad header token {tok:?}"))))
        .collect::<Result<_>>()?;
    let [n, m] = dims[..] else {
        return Err(Error::Mesh(format!("line {hline}: header must be `N M`")));
    };

    let mut vertices = Vec::with_capacity(n);
    for k in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| Error::Mesh(format!("missing vertex {k}")))?;
        let xy: Vec<f64> = l
            .split_whitespace()
            .map(|tok| tok.parse().map_err(|_| Error::Mesh(format!("line {ln}: bad coordinate {tok:?}"))))
            .collect::<Result<_>>()?;
        let [x, y] = xy[..] else {
            return Err(Error::Mesh(format!("line {ln}: vertex {k} needs 2 coordinates")));
        };
        vertices.push([x, y]);
    }
    let mut triangles = Vec::with_capacity(m);
    for k in 0..m {
        let (ln, l) = lines.next().ok_or_else(|| Error::Mesh(format!("missing triangle {k}")))?;
        let ijk: Vec<usize> = l
            .split_whitespace()
            .map(|tok| tok.parse().map_err(|_| Error::Mesh(format!("line {ln}: triangle {k}: bad index {tok:?}"))))
            .collect::<Result<_>>()?;
        let [i, j, kk] = ijk[..] else {
            return Err(Error::Mesh(format!("line {ln}: triangle {k} needs 3 indices")));
        };
        triangles.push([i, j, kk]);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Mesh(format!("line {ln}: trailing content after {m} triangles")));
    }
    Mesh::new(vertices, triangles)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Mesh(format!("cannot read {}: {e}", path.display())))?;
    parse_mesh(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoundingBox {
        BoundingBox::new(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn regular_mesh_examples() {
        let m = regular_mesh(unit(), 1.0, 0.0).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (4, 2));
        let m = regular_mesh(unit(), 0.5, 0.0).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (9, 8));
        let m = regular_mesh(BoundingBox::new(-1.0, 2.0, 3.0, 3.5), 0.3, 0.7).unwrap();
        for k in 0..m.n_triangles() {
            assert!((m.area(k) - 0.045).abs() < 1e-12);
        }
        assert!(regular_mesh(BoundingBox::new(0.0, 0.0, 0.0, 0.0), 0.1, 0.0).is_err());
        assert!(regular_mesh(unit(), 0.0, 0.0).is_err());
    }

    #[test]
    fn padded_mesh_covers_box() {
        let m = regular_mesh(unit(), 0.3, 0.25).unwrap();
        let xs = m.vertices().iter().map(|v| v[0]);
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        assert!(lo <= -0.25 + 1e-12 && hi >= 1.25 - 1e-12);
    }

    #[test]
    fn auto_mesh_hits_target() {
        let sites = [SpatialLocation::new(0.0, 0.0), SpatialLocation::new(1.0, 1.0)];
        for target in [50, 120, 150, 400] {
            let m = auto_mesh(&sites, target).unwrap();
            let got = m.n_vertices() as f64;
            assert!((got / target as f64 - 1.0).abs() < 0.2, "target {target} got {got}");
        }
    }

    #[test]
    fn explicit_padding_is_honoured() {
        let sites = [SpatialLocation::new(0.0, 0.0), SpatialLocation::new(1.0, 1.0)];
        let m = auto_mesh_padded(&sites, 121, 0.5).unwrap();
        let xs = m.vertices().iter().map(|v| v[0]);
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        assert!((lo + 0.5).abs() < 1e-9 && (hi - 1.5).abs() < 1e-9);
        assert_eq!(m.n_vertices(), 121);
        assert!(auto_mesh_padded(&sites, 121, 0.0).is_err());
    }

    #[test]
    fn parse_small_mesh_and_errors() {
        let m = parse_mesh("# tri\n3 1\n0 0\n1 0\n0 1 # v2\n0 1 2\n").unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (3, 1));

        let err = parse_mesh("3 1\n0 0\n1 0\n0 1\n0 1 7\n").unwrap_err();
        assert!(err.to_string().contains("triangle 0"), "{err}");
        let err = parse_mesh("3 1\n0 0\n1 0\n2 0\n0 1 2\n").unwrap_err();
        assert!(err.to_string().contains("zero area"), "{err}");
        assert!(parse_mesh("3 1\n0 0\n1 0\n").is_err());
    }

    #[test]
    fn clockwise_triangles_are_reoriented() {
        let m = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]]).unwrap();
        assert!(m.area(0) > 0.0);
    }

    #[test]
    fn text_round_trip() {
        let m = regular_mesh(BoundingBox::new(0.1, -0.3, 1.7, 0.9), 0.137, 0.21).unwrap();
        let back = parse_mesh(&m.to_text()).unwrap();
        assert_eq!(m, back);
    }
}
