//! P1 finite elements for the switched two-room heat benchmark.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::forward;
use crate::model::Dynamics;
use crate::ops::{ModeOperators, SwitchedOperatorSet};
use crate::signal::Horizon;
use crate::sparse;

/// Axis-aligned rectangle `(x0, x1) × (y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    fn inside(&self, o: &Rect) -> bool {
        self.x0 >= o.x0 && self.x1 <= o.x1 && self.y0 >= o.y0 && self.y1 <= o.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Room1,
    Door,
    Room3,
    Wall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub h: f64,
    pub domain: Rect,
    pub room1: Rect,
    pub door: Rect,
    pub room3: Rect,
    /// Heat capacities: door closed, rooms (and door open), walls.
    pub zeta: [f64; 3],
    /// Conductivities in the same layout.
    pub kappa: [f64; 3],
    pub robin: f64,
    pub convection: [f64; 2],
    pub reaction: f64,
    pub n_controls: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            h: 0.2,
            domain: Rect::new(0.0, 10.3, 0.0, 5.0),
            room1: Rect::new(0.0, 5.0, 0.0, 5.0),
            door: Rect::new(5.0, 5.3, 2.3, 2.7),
            room3: Rect::new(5.3, 10.3, 0.0, 5.0),
            zeta: [1.0, 0.5, 1.0],
            kappa: [0.01, 10.0, 0.01],
            robin: 0.15,
            convection: [0.01, 0.0],
            reaction: 0.01,
            n_controls: 10,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::Config(format!("mesh size {}", self.h)));
        }
        let parts = [self.room1, self.door, self.room3];
        for r in parts.iter().chain([&self.domain]) {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return Err(Error::Config(format!("degenerate subdomain {r:?}")));
            }
        }
        for r in &parts {
            if !r.inside(&self.domain) {
                return Err(Error::Config(format!("subdomain {r:?} leaves the domain")));
            }
        }
        if self.room1.overlaps(&self.door) || self.room1.overlaps(&self.room3) || self.door.overlaps(&self.room3) {
            return Err(Error::Config("subdomains overlap".into()));
        }
        if self.zeta.iter().chain(&self.kappa).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("capacities and conductivities must be positive".into()));
        }
        if !(self.robin >= 0.0) || !(self.reaction > 0.0) {
            return Err(Error::Config("need robin >= 0 and reaction > 0".into()));
        }
        if self.n_controls == 0 {
            return Err(Error::Config("need at least one control".into()));
        }
        Ok(())
    }

    /// Capacity and conductivity of a region in a mode (0: door closed, 1: open).
    pub fn coefficients(&self, region: Region, mode: usize) -> (f64, f64) {
        match region {
            Region::Room1 | Region::Room3 => (self.zeta[1], self.kappa[1]),
            Region::Wall => (self.zeta[2], self.kappa[2]),
            Region::Door if mode == 0 => (self.zeta[0], self.kappa[0]),
            Region::Door => (self.zeta[1], self.kappa[1]),
        }
    }
}

/// Structured triangulation with lines snapped to every subdomain edge.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Vertex triples and region per triangle.
    pub triangles: Vec<([usize; 3], Region)>,
}

fn axis(breaks: &mut Vec<f64>, h: f64) -> Vec<f64> {
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let n = ((w[1] - w[0]) / h - 1e-9).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(w[0] + (w[1] - w[0]) * i as f64 / n as f64);
        }
    }
    out
}

impl Mesh {
    pub fn build(cfg: &BenchmarkConfig) -> Result<Self> {
        cfg.validate()?;
        let rects = [cfg.domain, cfg.room1, cfg.door, cfg.room3];
        let mut xb: Vec<f64> = rects.iter().flat_map(|r| [r.x0, r.x1]).collect();
        let mut yb: Vec<f64> = rects.iter().flat_map(|r| [r.y0, r.y1]).collect();
        let xs = axis(&mut xb, cfg.h);
        let ys = axis(&mut yb, cfg.h);
        let ny = ys.len();
        let mut triangles = Vec::with_capacity(2 * (xs.len() - 1) * (ny - 1));
        let mut door_cells = 0;
        for i in 0..xs.len() - 1 {
            for j in 0..ny - 1 {
                let (cx, cy) = (0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]));
                let region = if cfg.door.contains(cx, cy) {
                    door_cells += 1;
                    Region::Door
                } else if cfg.room1.contains(cx, cy) {
                    Region::Room1
                } else if cfg.room3.contains(cx, cy) {
                    Region::Room3
                } else {
                    Region::Wall
                };
                let v00 = i * ny + j;
                let v10 = (i + 1) * ny + j;
                let v01 = i * ny + j + 1;
                let v11 = (i + 1) * ny + j + 1;
                triangles.push(([v00, v10, v11], region));
                triangles.push(([v00, v11, v01], region));
            }
        }
        if door_cells == 0 {
            return Err(Error::Config("the door contains no element".into()));
        }
        Ok(Self { xs, ys, triangles })
    }

    pub fn n_nodes(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn coords(&self, v: usize) -> (f64, f64) {
        let ny = self.ys.len();
        (self.xs[v / ny], self.ys[v % ny])
    }
}

/// `∫_a^b` of the two hat functions of the segment `[s0, s1]`.
fn partial_edge(s0: f64, s1: f64, a: f64, b: f64) -> (f64, f64) {
    let l = s1 - s0;
    let first = ((s1 - a).powi(2) - (s1 - b).powi(2)) / (2.0 * l);
    let second = ((b - s0).powi(2) - (a - s0).powi(2)) / (2.0 * l);
    (first, second)
}

/// Assembled benchmark: operator set plus the mesh it came from.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub ops: Arc<SwitchedOperatorSet>,
    pub mesh: Mesh,
}

pub fn assemble(cfg: &BenchmarkConfig) -> Result<Assembly> {
    let mesh = Mesh::build(cfg)?;
    let n = mesh.n_nodes();
    let ny = mesh.ys.len();
    let nx = mesh.xs.len();
    let mut mass = [CooMatrix::new(n, n), CooMatrix::new(n, n)];
    let mut stiff = [CooMatrix::new(n, n), CooMatrix::new(n, n)];
    let mut output = DMatrix::zeros(2, n);

    for (tri, region) in &mesh.triangles {
        let p: Vec<(f64, f64)> = tri.iter().map(|&v| mesh.coords(v)).collect();
        let det = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        let area = 0.5 * det.abs();
        // ∇φ_a = (y_{a+1} − y_{a+2}, x_{a+2} − x_{a+1}) / det
        let grad: Vec<(f64, f64)> = (0..3)
            .map(|a| {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                ((p[b].1 - p[c].1) / det, (p[c].0 - p[b].0) / det)
            })
            .collect();
        for mode in 0..2 {
            let (zeta, kappa) = cfg.coefficients(*region, mode);
            for a in 0..3 {
                for b in 0..3 {
                    let consistent = if a == b { area / 6.0 } else { area / 12.0 };
                    mass[mode].push(tri[a], tri[b], zeta * consistent);
                    let diff = kappa * area * (grad[a].0 * grad[b].0 + grad[a].1 * grad[b].1);
                    // Row: test function a; column: trial function b.
                    let conv = (cfg.convection[0] * grad[b].0 + cfg.convection[1] * grad[b].1) * area / 3.0;
                    stiff[mode].push(tri[a], tri[b], diff + conv + cfg.reaction * consistent);
                }
            }
        }
        let row = match region {
            Region::Room1 => Some((0, cfg.room1.area())),
            Region::Room3 => Some((1, cfg.room3.area())),
            _ => None,
        };
        if let Some((r, vol)) = row {
            for &v in tri {
                output[(r, v)] += area / 3.0 / vol;
            }
        }
    }

    // Robin term on every boundary edge except the left one.
    let mut robin_edges: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..nx - 1 {
        let len = mesh.xs[i + 1] - mesh.xs[i];
        robin_edges.push((i * ny, (i + 1) * ny, len));
        robin_edges.push((i * ny + ny - 1, (i + 1) * ny + ny - 1, len));
    }
    for j in 0..ny - 1 {
        robin_edges.push(((nx - 1) * ny + j, (nx - 1) * ny + j + 1, mesh.ys[j + 1] - mesh.ys[j]));
    }
    for (a, b, len) in robin_edges {
        for s in &mut stiff {
            let g = cfg.robin * len;
            s.push(a, a, g / 3.0);
            s.push(b, b, g / 3.0);
            s.push(a, b, g / 6.0);
            s.push(b, a, g / 6.0);
        }
    }

    // Controls: equal pieces of the left edge, integrated exactly against the hats.
    let rho = cfg.n_controls;
    let (y_lo, y_hi) = (cfg.domain.y0, cfg.domain.y1);
    let piece = (y_hi - y_lo) / rho as f64;
    let mut input = CooMatrix::new(n, rho);
    for j in 0..ny - 1 {
        let (s0, s1) = (mesh.ys[j], mesh.ys[j + 1]);
        for k in 0..rho {
            let (c0, c1) = (y_lo + piece * k as f64, y_lo + piece * (k + 1) as f64);
            let (a, b) = (s0.max(c0), s1.min(c1));
            if b > a {
                let (f0, f1) = partial_edge(s0, s1, a, b);
                input.push(j, k, f0);
                input.push(j + 1, k, f1);
            }
        }
    }
    let input = CsrMatrix::from(&input);

    let modes: Vec<ModeOperators> = (0..2)
        .map(|m| ModeOperators {
            mass: CsrMatrix::from(&mass[m]),
            stiffness: CsrMatrix::from(&stiff[m]),
            input: input.clone(),
            output: output.clone(),
        })
        .collect();
    let v_inner = sparse::sym_part(&modes[0].stiffness);
    let ops = SwitchedOperatorSet::new(modes, v_inner)?;
    Ok(Assembly { ops: Arc::new(ops), mesh })
}

/// Target output: response to `u ≡ 1` from the constant-one state.
pub fn compute_targets<D: Dynamics + ?Sized>(model: &D, horizon: &Horizon) -> Result<DMatrix<f64>> {
    let ones = DVector::from_element(model.dim(), 1.0);
    let u = DMatrix::from_element(model.n_inputs(), horizon.n_nodes(), 1.0);
    let states = forward::solve_state_values(model, horizon, &ones, &u)?;
    forward::apply_output(model, horizon, &states)
}
