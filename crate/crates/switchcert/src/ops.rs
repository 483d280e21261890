//! Per-mode operator matrices of the switched system and their cached
//! factorizations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::io::{load_coo_from_matrix_market_file, save_to_matrix_market_file};
use nalgebra_sparse::CsrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::band::BandLu;
use crate::error::{Error, Result};
use crate::signal::SwitchingSignal;
use crate::sparse;

/// Operators of one mode: mass `M`, stiffness `A`, input `B` (N×ρ) and output `C` (p×N).
#[derive(Debug, Clone)]
pub struct ModeOperators {
    pub mass: CsrMatrix<f64>,
    pub stiffness: CsrMatrix<f64>,
    pub input: CsrMatrix<f64>,
    pub output: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SwitchedOperatorSet {
    modes: Vec<ModeOperators>,
    v_inner: CsrMatrix<f64>,
    transitions: BTreeMap<(usize, usize), CsrMatrix<f64>>,
    sym_stiffness: Vec<CsrMatrix<f64>>,
    mass_lu: Vec<BandLu>,
    riesz_lu: Vec<BandLu>,
    v_inner_lu: BandLu,
    coercivity: f64,
}

impl SwitchedOperatorSet {
    pub fn new(modes: Vec<ModeOperators>, v_inner: CsrMatrix<f64>) -> Result<Self> {
        Self::with_transitions(modes, v_inner, BTreeMap::new())
    }

    /// `transitions[(i, j)]` maps a state leaving mode `i` into mode `j`;
    /// missing pairs are the identity.
    pub fn with_transitions(
        modes: Vec<ModeOperators>,
        v_inner: CsrMatrix<f64>,
        transitions: BTreeMap<(usize, usize), CsrMatrix<f64>>,
    ) -> Result<Self> {
        let first = modes.first().ok_or_else(|| Error::Invalid("no modes".into()))?;
        let n = first.mass.nrows();
        let rho = first.input.ncols();
        let p = first.output.nrows();
        for (i, m) in modes.iter().enumerate() {
            let ok = m.mass.nrows() == n
                && m.mass.ncols() == n
                && m.stiffness.nrows() == n
                && m.stiffness.ncols() == n
                && m.input.nrows() == n
                && m.input.ncols() == rho
                && m.output.nrows() == p
                && m.output.ncols() == n;
            if !ok {
                return Err(Error::Dimension(format!("operators of mode {i} do not match N = {n}, rho = {rho}, p = {p}")));
            }
        }
        if v_inner.nrows() != n || v_inner.ncols() != n {
            return Err(Error::Dimension("v_inner must be N x N".into()));
        }
        for (&(i, j), k) in &transitions {
            if i == j {
                return Err(Error::Invalid(format!("transition ({i}, {i}) must be the identity")));
            }
            if k.nrows() != n || k.ncols() != n || i >= modes.len() || j >= modes.len() {
                return Err(Error::Dimension(format!("transition ({i}, {j})")));
            }
        }
        let mut mass_lu = Vec::new();
        let mut riesz_lu = Vec::new();
        let mut sym_stiffness = Vec::new();
        for (i, m) in modes.iter().enumerate() {
            let scale = m.mass.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if sparse::max_asymmetry(&m.mass) > 1e-12 * scale {
                return Err(Error::Invalid(format!("mass matrix of mode {i} is not symmetric")));
            }
            let lu = BandLu::from_csr(&m.mass).map_err(|_| Error::Invalid(format!("mass matrix of mode {i} is not positive definite")))?;
            if lu.min_pivot() <= 0.0 {
                return Err(Error::Invalid(format!("mass matrix of mode {i} is not positive definite")));
            }
            mass_lu.push(lu);
            let s = sparse::sym_part(&m.stiffness);
            let lu = BandLu::from_csr(&s).map_err(|_| Error::Invalid(format!("stiffness of mode {i} is not coercive")))?;
            if lu.min_pivot() <= 0.0 {
                return Err(Error::Invalid(format!("stiffness of mode {i} is not coercive")));
            }
            riesz_lu.push(lu);
            sym_stiffness.push(s);
        }
        let v_inner_lu = BandLu::from_csr(&v_inner)?;
        if v_inner_lu.min_pivot() <= 0.0 {
            return Err(Error::Invalid("v_inner is not positive definite".into()));
        }
        let mut set = Self { modes, v_inner, transitions, sym_stiffness, mass_lu, riesz_lu, v_inner_lu, coercivity: 0.0 };
        set.coercivity = set.sampled_coercivity(100, 7);
        if !(set.coercivity > 0.0) {
            return Err(Error::Invalid("stiffness not coercive on sampled vectors".into()));
        }
        Ok(set)
    }

    /// Smallest Rayleigh quotient `vᵀ sym(A_i) v / vᵀ V v` over seeded random vectors and all modes.
    fn sampled_coercivity(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let mut best = f64::INFINITY;
        for _ in 0..samples {
            let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let den = sparse::quad_form(&self.v_inner, &v);
            for s in &self.sym_stiffness {
                best = best.min(sparse::quad_form(s, &v) / den);
            }
        }
        best
    }

    pub fn dim(&self) -> usize {
        self.modes[0].mass.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.modes[0].input.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.modes[0].output.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, i: usize) -> &ModeOperators {
        &self.modes[i]
    }

    pub fn v_inner(&self) -> &CsrMatrix<f64> {
        &self.v_inner
    }

    pub fn v_inner_lu(&self) -> &BandLu {
        &self.v_inner_lu
    }

    pub fn sym_stiffness(&self, i: usize) -> &CsrMatrix<f64> {
        &self.sym_stiffness[i]
    }

    pub fn mass_lu(&self, i: usize) -> &BandLu {
        &self.mass_lu[i]
    }

    pub fn riesz_lu(&self, i: usize) -> &BandLu {
        &self.riesz_lu[i]
    }

    pub fn transition(&self, from: usize, to: usize) -> Option<&CsrMatrix<f64>> {
        self.transitions.get(&(from, to))
    }

    pub fn has_transitions(&self) -> bool {
        !self.transitions.is_empty()
    }

    /// Lower coercivity estimate of the stiffness forms against `v_inner`, recorded at construction.
    pub fn coercivity_estimate(&self) -> f64 {
        self.coercivity
    }

    /// Writes every operator as a Matrix Market file plus a `meta.txt` summary.
    pub fn save_dir(&self, dir: &Path, signal: Option<&SwitchingSignal>) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, m) in self.modes.iter().enumerate() {
            save_to_matrix_market_file(&m.mass, dir.join(format!("mass_{i}.mtx")))?;
            save_to_matrix_market_file(&m.stiffness, dir.join(format!("stiffness_{i}.mtx")))?;
            save_to_matrix_market_file(&m.input, dir.join(format!("input_{i}.mtx")))?;
            save_to_matrix_market_file(&sparse::from_dense(&m.output), dir.join(format!("output_{i}.mtx")))?;
        }
        save_to_matrix_market_file(&self.v_inner, dir.join("v_inner.mtx"))?;
        for (&(i, j), k) in &self.transitions {
            save_to_matrix_market_file(k, dir.join(format!("transition_{i}_{j}.mtx")))?;
        }
        let mut meta = format!(
            "n {}\nrho {}\np {}\nmodes {}\n",
            self.dim(),
            self.n_inputs(),
            self.n_outputs(),
            self.n_modes()
        );
        if let Some(s) = signal {
            meta.push_str(&format!("signal_start {}\nsignal_end {}\n", s.start(), s.end()));
            let bps: Vec<String> = s.breakpoints().iter().map(|b| b.to_string()).collect();
            let ms: Vec<String> = s.modes().iter().map(|m| m.to_string()).collect();
            meta.push_str(&format!("breakpoints {}\nsignal_modes {}\n", bps.join(" "), ms.join(" ")));
        }
        fs::write(dir.join("meta.txt"), meta)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<(Self, Option<SwitchingSignal>)> {
        let meta = fs::read_to_string(dir.join("meta.txt"))?;
        let mut kv = BTreeMap::new();
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once(' ') {
                kv.insert(k.to_string(), v.trim().to_string());
            } else if !line.trim().is_empty() {
                kv.insert(line.trim().to_string(), String::new());
            }
        }
        let get_usize = |k: &str| -> Result<usize> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::MatrixMarket(format!("meta.txt lacks {k}")))
        };
        let n_modes = get_usize("modes")?;
        let load = |name: String| -> Result<CsrMatrix<f64>> {
            let coo = load_coo_from_matrix_market_file::<f64, _>(dir.join(&name))
                .map_err(|e| Error::MatrixMarket(format!("{name}: {e}")))?;
            Ok(CsrMatrix::from(&coo))
        };
        let mut modes = Vec::new();
        for i in 0..n_modes {
            modes.push(ModeOperators {
                mass: load(format!("mass_{i}.mtx"))?,
                stiffness: load(format!("stiffness_{i}.mtx"))?,
                input: load(format!("input_{i}.mtx"))?,
                output: sparse::to_dense(&load(format!("output_{i}.mtx"))?),
            });
        }
        let v_inner = load("v_inner.mtx".into())?;
        let mut transitions = BTreeMap::new();
        for i in 0..n_modes {
            for j in 0..n_modes {
                let path = dir.join(format!("transition_{i}_{j}.mtx"));
                if path.exists() {
                    transitions.insert((i, j), load(format!("transition_{i}_{j}.mtx"))?);
                }
            }
        }
        let set = Self::with_transitions(modes, v_inner, transitions)?;
        let signal = match (kv.get("signal_start"), kv.get("signal_end")) {
            (Some(s), Some(e)) => {
                let parse = |v: &str| -> Result<f64> { v.parse().map_err(|_| Error::MatrixMarket(format!("bad number {v}"))) };
                let bps = kv
                    .get("breakpoints")
                    .map(|v| v.split_whitespace().map(parse).collect::<Result<Vec<_>>>())
                    .transpose()?
                    .unwrap_or_default();
                let ms = kv
                    .get("signal_modes")
                    .map(|v| {
                        v.split_whitespace()
                            .map(|m| m.parse::<usize>().map_err(|_| Error::MatrixMarket(format!("bad mode {m}"))))
                            .collect::<Result<Vec<_>>>()
                    })
                    .transpose()?
                    .unwrap_or_default();
                Some(SwitchingSignal::new(parse(s)?, parse(e)?, bps, ms)?)
            }
            _ => None,
        };
        if get_usize("n")? != set.dim() {
            return Err(Error::MatrixMarket("meta.txt dimension disagrees with matrices".into()));
        }
        Ok((set, signal))
    }
}
