//! Switching signals, uniform time grids and the per-step mode schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Piecewise-constant mode function on `[start, end]`.
///
/// `modes[k]` is active on `(breakpoints[k-1], breakpoints[k]]`, with
/// `breakpoints[-1] = start` and `breakpoints[len] = end`, so there is one
/// more mode than there are breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    start: f64,
    end: f64,
    breakpoints: Vec<f64>,
    modes: Vec<usize>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

impl SwitchingSignal {
    pub fn new(start: f64, end: f64, breakpoints: Vec<f64>, modes: Vec<usize>) -> Result<Self> {
        if !(end > start) {
            return Err(Error::Invalid(format!("empty signal domain [{start}, {end}]")));
        }
        if modes.len() != breakpoints.len() + 1 {
            return Err(Error::Invalid(format!(
                "{} breakpoints need {} modes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                modes.len()
            )));
        }
        let mut last = start;
        for &b in &breakpoints {
            if !(b > last) || close(b, last) || !(b < end) || close(b, end) {
                return Err(Error::Invalid(format!("breakpoint {b} not strictly inside increasing order")));
            }
            last = b;
        }
        // merge neighbours carrying the same mode
        let mut bps = Vec::with_capacity(breakpoints.len());
        let mut ms = vec![modes[0]];
        for (k, &b) in breakpoints.iter().enumerate() {
            if modes[k + 1] != *ms.last().unwrap() {
                bps.push(b);
                ms.push(modes[k + 1]);
            }
        }
        Ok(Self { start, end, breakpoints: bps, modes: ms })
    }

    pub fn constant(start: f64, end: f64, mode: usize) -> Self {
        Self { start, end, breakpoints: Vec::new(), modes: vec![mode] }
    }

    /// Switches every `period` seconds, cycling through `cycle`.
    pub fn periodic(start: f64, end: f64, period: f64, cycle: &[usize]) -> Result<Self> {
        if cycle.is_empty() || !(period > 0.0) {
            return Err(Error::Invalid("periodic signal needs a positive period and a mode cycle".into()));
        }
        let mut bps = Vec::new();
        let mut modes = vec![cycle[0]];
        let mut k = 1usize;
        loop {
            let t = start + k as f64 * period;
            if t >= end || close(t, end) {
                break;
            }
            bps.push(t);
            modes.push(cycle[k % cycle.len()]);
            k += 1;
        }
        Self::new(start, end, bps, modes)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn n_modes_used(&self) -> usize {
        self.modes.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn mode_at(&self, t: f64, side: Side) -> Result<usize> {
        if (t < self.start && !close(t, self.start)) || (t > self.end && !close(t, self.end)) {
            return Err(Error::Domain(format!("t = {t} outside [{}, {}]", self.start, self.end)));
        }
        let mut k = 0;
        for &b in &self.breakpoints {
            let passed = match side {
                Side::Left => t > b && !close(t, b),
                Side::Right => t > b || close(t, b),
            };
            if passed {
                k += 1;
            } else {
                break;
            }
        }
        Ok(self.modes[k])
    }
}

/// Uniform grid `t_start + kτ`, `k = 0..n_nodes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    tau: f64,
    n_nodes: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, tau: f64, n_nodes: usize) -> Result<Self> {
        if !(tau > 0.0) || n_nodes < 2 {
            return Err(Error::Invalid(format!("time grid needs tau > 0 and at least two nodes (tau = {tau}, K = {n_nodes})")));
        }
        Ok(Self { t_start, tau, n_nodes })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.node(self.n_nodes - 1)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_steps(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.tau
    }

    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.tau;
        let k = x.round();
        if k < 0.0 || (x - k).abs() > 1e-8 || k as usize >= self.n_nodes {
            None
        } else {
            Some(k as usize)
        }
    }
}

/// A time grid together with the mode driving each implicit-Euler step.
///
/// Step `k` covers `(t_k, t_{k+1}]` and uses `modes[k] = σ(t_{k+1}⁻)`. A node
/// `k` in `1..K-1` where `modes[k-1] != modes[k]` is a switching node; the
/// grid endpoints are never switching nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    grid: TimeGrid,
    modes: Vec<usize>,
}

impl Horizon {
    pub fn new(signal: &SwitchingSignal, grid: TimeGrid) -> Result<Self> {
        for &b in signal.breakpoints() {
            let inside = b > grid.t_start() - 1e-12 && b < grid.t_end() + 1e-12;
            if inside && grid.node_index(b).is_none() {
                return Err(Error::Invalid(format!("switching time {b} is not a grid node")));
            }
        }
        let modes = (0..grid.n_steps())
            .map(|k| signal.mode_at(grid.node(k + 1), Side::Left))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, modes })
    }

    pub fn from_modes(grid: TimeGrid, modes: Vec<usize>) -> Result<Self> {
        if modes.len() != grid.n_steps() {
            return Err(Error::Dimension(format!("{} step modes for {} steps", modes.len(), grid.n_steps())));
        }
        Ok(Self { grid, modes })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.grid.tau()
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn step_mode(&self, k: usize) -> usize {
        self.modes[k]
    }

    /// Mode used to measure a state value stored at node `k` (`σ(t_k⁻)`, or
    /// `σ(t_0⁺)` at the first node).
    pub fn node_mode(&self, k: usize) -> usize {
        if k == 0 {
            self.modes[0]
        } else {
            self.modes[k - 1]
        }
    }

    pub fn is_switch(&self, k: usize) -> bool {
        k >= 1 && k < self.modes.len() && self.modes[k - 1] != self.modes[k]
    }

    pub fn switch_nodes(&self) -> Vec<usize> {
        (1..self.modes.len()).filter(|&k| self.is_switch(k)).collect()
    }

    /// Number of switching intervals.
    pub fn n_intervals(&self) -> usize {
        self.switch_nodes().len() + 1
    }

    /// Index of the switching interval containing step `k`.
    pub fn interval_of_step(&self, k: usize) -> usize {
        (1..=k).filter(|&j| self.is_switch(j)).count()
    }

    /// Sub-horizon covering nodes `start..start + n_nodes`.
    pub fn window(&self, start: usize, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 || start + n_nodes > self.n_nodes() {
            return Err(Error::Domain(format!(
                "window [{start}, {}) outside {} nodes",
                start + n_nodes,
                self.n_nodes()
            )));
        }
        let grid = TimeGrid::new(self.grid.node(start), self.tau(), n_nodes)?;
        Ok(Self { grid, modes: self.modes[start..start + n_nodes - 1].to_vec() })
    }
}
