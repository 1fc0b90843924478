//! Marching-squares contours and a small SVG writer.

use std::collections::BTreeMap;
use std::fmt::Write;

use cbc_core::verify::{linspace, BoundingBox};
use cbc_core::Polynomial;

/// Samples of a function on a regular `nx x ny` grid, row-major in `y`.
#[derive(Debug, Clone)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn sample(p: &Polynomial, bbox: &BoundingBox, k: usize) -> Grid {
        let xs = linspace(bbox.lo[0], bbox.hi[0], k);
        let ys = linspace(bbox.lo[1], bbox.hi[1], k);
        let mut values = Vec::with_capacity(k * k);
        for y in &ys {
            for x in &xs {
                values.push(p.eval(&[*x, *y]));
            }
        }
        Grid { xs, ys, values }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            })
    }
}

/// Grid edge: `H(i, j)` joins nodes `(i, j)` and `(i+1, j)`, `V(i, j)` joins
/// `(i, j)` and `(i, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Contour {
    /// Even-odd point-in-polygon test; meaningful for closed contours.
    pub fn encloses(&self, p: [f64; 2]) -> bool {
        let pts = &self.points;
        let mut inside = false;
        let mut j = pts.len() - 1;
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

fn crossing(g: &Grid, e: Edge, level: f64) -> [f64; 2] {
    let ((i0, j0), (i1, j1)) = match e {
        Edge::H(i, j) => ((i, j), (i + 1, j)),
        Edge::V(i, j) => ((i, j), (i, j + 1)),
    };
    let (z0, z1) = (g.at(i0, j0), g.at(i1, j1));
    let t = if z1 == z0 {
        0.5
    } else {
        ((level - z0) / (z1 - z0)).clamp(0.0, 1.0)
    };
    [
        g.xs[i0] + t * (g.xs[i1] - g.xs[i0]),
        g.ys[j0] + t * (g.ys[j1] - g.ys[j0]),
    ]
}

/// Level-`level` contours of the grid, joined into polylines. A contour is
/// closed when it returns to its first edge.
pub fn contours(g: &Grid, level: f64) -> Vec<Contour> {
    let (nx, ny) = (g.xs.len(), g.ys.len());
    let mut segs: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let z = [g.at(i, j), g.at(i + 1, j), g.at(i + 1, j + 1), g.at(i, j + 1)];
            if z.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let inside = z.map(|v| v >= level);
            let (bottom, right, top, left) = (Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j));
            let case = inside
                .iter()
                .enumerate()
                .fold(0, |acc, (k, b)| acc | (usize::from(*b) << k));
            let center_in = z.iter().sum::<f64>() / 4.0 >= level;
            match case {
                0 | 15 => {}
                5 if center_in => segs.extend([(bottom, right), (left, top)]),
                5 => segs.extend([(left, bottom), (right, top)]),
                10 if center_in => segs.extend([(left, bottom), (right, top)]),
                10 => segs.extend([(bottom, right), (left, top)]),
                _ => {
                    let sides = [
                        (bottom, inside[0] != inside[1]),
                        (right, inside[1] != inside[2]),
                        (top, inside[2] != inside[3]),
                        (left, inside[3] != inside[0]),
                    ];
                    let cut: Vec<Edge> = sides.iter().filter(|s| s.1).map(|s| s.0).collect();
                    segs.push((cut[0], cut[1]));
                }
            }
        }
    }

    let mut by_edge: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (k, (a, b)) in segs.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut out = Vec::new();
    // Open chains start at edges with a single segment (the grid border).
    let starts: Vec<Edge> = by_edge
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(e, _)| *e)
        .chain(segs.iter().map(|s| s.0))
        .collect();
    for start in starts {
        let Some(&first) = by_edge[&start].iter().find(|k| !used[**k]) else {
            continue;
        };
        let mut edges = vec![start];
        let mut cur = start;
        let mut seg = Some(first);
        while let Some(k) = seg {
            used[k] = true;
            let (a, b) = segs[k];
            cur = if a == cur { b } else { a };
            edges.push(cur);
            seg = by_edge[&cur].iter().copied().find(|k| !used[*k]);
        }
        let closed = edges.len() > 2 && cur == start;
        if closed {
            edges.pop();
        }
        out.push(Contour {
            points: edges.iter().map(|e| crossing(g, *e, level)).collect(),
            closed,
        });
    }
    out
}

/// SVG canvas mapping a 2D box onto a square viewport.
pub struct Svg {
    bbox: BoundingBox,
    size: f64,
    body: String,
}

impl Svg {
    pub fn new(bbox: &BoundingBox, size: f64) -> Svg {
        Svg {
            bbox: bbox.clone(),
            size,
            body: String::new(),
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = (p[0] - self.bbox.lo[0]) / (self.bbox.hi[0] - self.bbox.lo[0]);
        let sy = (p[1] - self.bbox.lo[1]) / (self.bbox.hi[1] - self.bbox.lo[1]);
        (sx * self.size, (1.0 - sy) * self.size)
    }

    fn path_data(&self, pts: &[[f64; 2]], closed: bool) -> String {
        let mut d = String::new();
        for (k, p) in pts.iter().enumerate() {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
        }
        if closed {
            d.push('Z');
        }
        d.trim_end().to_string()
    }

    pub fn contour(&mut self, c: &Contour, stroke: &str, width: f64, dash: Option<&str>) {
        if c.points.len() < 2 {
            return;
        }
        let d = self.path_data(&c.points, c.closed);
        let dash = dash.map(|s| format!(" stroke-dasharray=\"{s}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash}/>"
        );
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str, width: f64) {
        let inside: Vec<[f64; 2]> = pts.iter().copied().filter(|p| self.bbox.contains(p)).collect();
        if inside.len() < 2 {
            return;
        }
        let d = self.path_data(&inside, false);
        let _ = writeln!(
            self.body,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\" stroke-opacity=\"0.8\"/>"
        );
    }

    /// Short segment from `at` along `dir`, scaled to `len` data units.
    pub fn arrow(&mut self, at: [f64; 2], dir: [f64; 2], len: f64, stroke: &str) {
        let norm = dir[0].hypot(dir[1]);
        if norm == 0.0 || !norm.is_finite() {
            return;
        }
        let tip = [at[0] + len * dir[0] / norm, at[1] + len * dir[1] / norm];
        let (x0, y0) = self.map(at);
        let (x1, y1) = self.map(tip);
        let _ = writeln!(
            self.body,
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"{stroke}\" stroke-width=\"1\" marker-end=\"url(#head)\"/>"
        );
    }

    pub fn label(&mut self, text: &str, line: usize) {
        let _ = writeln!(
            self.body,
            "<text x=\"8\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            16 + 14 * line,
            escape(text)
        );
    }

    pub fn finish(self) -> String {
        let s = self.size;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">"
        );
        out.push_str(
            "<defs><marker id=\"head\" viewBox=\"0 0 6 6\" refX=\"6\" refY=\"3\" markerWidth=\"5\" markerHeight=\"5\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 Z\" fill=\"#444\"/></marker></defs>\n",
        );
        let _ = writeln!(out, "<rect width=\"{s}\" height=\"{s}\" fill=\"white\"/>");
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stroke colors cycled over trajectories.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
