//! Piecewise-linear interpolation of scattered sites onto a pixel grid.
//!
//! Pixels inside the convex hull take barycentric weights of their Delaunay
//! triangle; pixels outside take the nearest site. The per-pixel stencils are
//! computed once per site layout and reused for every image.

use spade::{DelaunayTriangulation, Point2, Triangulation};

use super::TopomapError;

/// Pixel-centre geometry of an `height × width` grid over a square window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub x_min: f64,
    pub y_max: f64,
    pub side: f64,
}

impl Grid {
    /// Square window around the tight bounding box of `points`, padded by 5%
    /// of the box's larger side on each edge.
    pub fn fitted(points: &[[f64; 2]], height: usize, width: usize) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let extent = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
        let side = extent * 1.10;
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        Self { height, width, x_min: cx - side / 2.0, y_max: cy + side / 2.0, side }
    }

    /// Centre of pixel `(row, col)`; row 0 is the top (largest y).
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x_min + (col as f64 + 0.5) * self.side / self.width as f64,
            self.y_max - (row as f64 + 0.5) * self.side / self.height as f64,
        ]
    }
}

/// Up to three `(site, weight)` pairs; weights are non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub sites: [usize; 3],
    pub weights: [f64; 3],
}

impl Stencil {
    fn nearest(site: usize) -> Self {
        Self { sites: [site, site, site], weights: [1.0, 0.0, 0.0] }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.sites.iter().zip(&self.weights).map(|(&s, &w)| w * values[s]).sum()
    }
}

/// Delaunay triangulation of a fixed site set.
#[derive(Debug, Clone)]
pub struct SiteTriangulation {
    sites: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

impl SiteTriangulation {
    pub fn new(sites: &[[f64; 2]]) -> Result<Self, TopomapError> {
        if sites.len() < 3 {
            return Err(TopomapError::DegenerateSites(format!("{} sites, need at least 3", sites.len())));
        }
        for (i, a) in sites.iter().enumerate() {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return Err(TopomapError::DegenerateSites(format!("site {i} is not finite")));
            }
            for (j, b) in sites.iter().enumerate().skip(i + 1) {
                if (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-12 {
                    return Err(TopomapError::DegenerateSites(format!("sites {i} and {j} coincide")));
                }
            }
        }
        let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
        for s in sites {
            dt.insert(Point2::new(s[0], s[1]))
                .map_err(|e| TopomapError::DegenerateSites(format!("triangulation rejected a site: {e:?}")))?;
        }
        let triangles: Vec<[usize; 3]> =
            dt.inner_faces().map(|f| f.vertices().map(|v| v.fix().index())).collect();
        if triangles.is_empty() {
            return Err(TopomapError::DegenerateSites("all sites are collinear".into()));
        }
        Ok(Self { sites: sites.to_vec(), triangles })
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    /// Interpolation stencil at `p`.
    pub fn stencil(&self, p: [f64; 2]) -> Stencil {
        // Exact hits short-circuit so sites reproduce their own values.
        if let Some(i) = self.sites.iter().position(|s| s[0] == p[0] && s[1] == p[1]) {
            return Stencil::nearest(i);
        }
        for tri in &self.triangles {
            if let Some(w) = barycentric(p, self.sites[tri[0]], self.sites[tri[1]], self.sites[tri[2]]) {
                return Stencil { sites: *tri, weights: w };
            }
        }
        let nearest = self
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        Stencil::nearest(nearest)
    }
}

/// Barycentric weights of `p` in triangle `abc`, or `None` if outside.
fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    let l3 = 1.0 - l1 - l2;
    const TOL: f64 = -1e-12;
    if l1 < TOL || l2 < TOL || l3 < TOL {
        return None;
    }
    let w = [l1.max(0.0), l2.max(0.0), l3.max(0.0)];
    let s: f64 = w.iter().sum();
    Some([w[0] / s, w[1] / s, w[2] / s])
}

/// Precomputed stencils for every pixel of a grid.
#[derive(Debug, Clone)]
pub struct InterpolationPlan {
    grid: Grid,
    triangulation: SiteTriangulation,
    stencils: Vec<Stencil>,
}

impl InterpolationPlan {
    pub fn new(sites: &[[f64; 2]], grid: Grid) -> Result<Self, TopomapError> {
        let triangulation = SiteTriangulation::new(sites)?;
        let stencils = (0..grid.height)
            .flat_map(|r| (0..grid.width).map(move |c| (r, c)))
            .map(|(r, c)| triangulation.stencil(grid.pixel_center(r, c)))
            .collect();
        Ok(Self { grid, triangulation, stencils })
    }

    /// Plan over the padded bounding square of `sites`.
    pub fn fitted(sites: &[[f64; 2]], height: usize, width: usize) -> Result<Self, TopomapError> {
        Self::new(sites, Grid::fitted(sites, height, width))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_sites(&self) -> usize {
        self.triangulation.sites.len()
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    /// Row-major `height × width` grid of interpolated values.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.num_sites(), "one value per site");
        self.stencils.iter().map(|s| s.eval(values)).collect()
    }

    /// Interpolant evaluated at an arbitrary point.
    pub fn eval_at(&self, p: [f64; 2], values: &[f64]) -> f64 {
        self.triangulation.stencil(p).eval(values)
    }
}

/// One-shot interpolation onto the padded bounding square of `points`.
pub fn interpolate_grid(
    points: &[[f64; 2]],
    values: &[f64],
    height: usize,
    width: usize,
) -> Result<Vec<f64>, TopomapError> {
    if points.len() != values.len() {
        return Err(TopomapError::DegenerateSites(format!("{} sites vs {} values", points.len(), values.len())));
    }
    Ok(InterpolationPlan::fitted(points, height, width)?.apply(values))
}
