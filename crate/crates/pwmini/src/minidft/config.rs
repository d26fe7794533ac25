//! JSON description of a calculation: cell, grid, atoms, and solver knobs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minidft::density::Well;
use crate::minidft::grid::PwGrid;
use crate::pseudo::{synthesize_entry, KindRecord, KindTable, PseudoEntry};

/// One atom: a position inside the cell and the kind it refers to.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AtomSpec {
    pub position: [f64; 3],
    pub kind: u32,
}

/// Per-kind parameters: the pseudopotential channels and the attractive
/// well this kind contributes to the external potential.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KindSpec {
    pub atomic_number: u32,
    pub l_channels: usize,
    pub sigma: f64,
    pub weights: Vec<f64>,
    pub well_depth: f64,
    pub well_width: f64,
}

impl KindSpec {
    fn record(&self) -> KindRecord {
        KindRecord {
            atomic_number: self.atomic_number,
            l_channels: self.l_channels,
            sigma: self.sigma,
            weights: self.weights.clone(),
        }
    }
}

/// Iteration knobs with workable defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SolverConfig {
    /// Density residual `‖ρ_out − ρ_in‖₂·ΔV` below which the loop stops.
    pub tol: f64,
    pub max_outer: usize,
    /// Diagonalization sweeps per outer iteration.
    pub inner_sweeps: usize,
    /// Linear mixing fraction of the new density.
    pub mix_beta: f64,
    /// Pseudopotential ring prefetch depth.
    pub window: usize,
    /// Column parameter C of the multistage allreduce; 0 picks
    /// `min(P, 2)` automatically.
    pub reduce_columns: usize,
    /// Extra eigensolver states beyond the reported wavefunctions.  The
    /// boundary state of a block solver converges slowly when the next
    /// level above it is close; guards push that boundary past the states
    /// anyone reads.
    pub guard_states: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-7,
            max_outer: 30,
            inner_sweeps: 3,
            mix_beta: 0.5,
            window: 2,
            reduce_columns: 0,
            guard_states: 2,
            seed: 42,
        }
    }
}

/// Full system description as read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemConfig {
    /// Cell edge lengths.
    pub cell: [f64; 3],
    /// Kinetic-energy cutoff used to size the grid.
    pub ecut: f64,
    /// Explicit grid override; when present `ecut` is only documentation.
    #[serde(default)]
    pub grid_dims: Option<[usize; 3]>,
    pub atoms: Vec<AtomSpec>,
    pub kinds: Vec<KindSpec>,
    /// Electron count; closed shell, so it must be even.
    pub electrons: usize,
    /// Number of orbitals to solve for.
    pub wavefunctions: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl SystemConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: SystemConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("system description: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.cell.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return bad(format!("cell lengths must be positive, got {:?}", self.cell));
        }
        if self.grid_dims.is_none() && !(self.ecut > 0.0) {
            return bad(format!("cutoff must be positive, got {}", self.ecut));
        }
        if let Some(dims) = self.grid_dims {
            if dims.iter().any(|&n| n == 0) {
                return bad(format!("grid dimensions must be positive, got {dims:?}"));
            }
        }
        if self.wavefunctions == 0 {
            return bad("at least one wavefunction is required".into());
        }
        if self.electrons == 0 || self.electrons % 2 != 0 {
            return bad(format!(
                "electron count must be positive and even, got {}",
                self.electrons
            ));
        }
        if self.electrons > 2 * self.wavefunctions {
            return bad(format!(
                "{} electrons need {} orbitals but only {} are configured",
                self.electrons,
                self.electrons / 2,
                self.wavefunctions
            ));
        }
        for kind in &self.kinds {
            if kind.l_channels == 0 || kind.weights.len() != kind.l_channels {
                return bad(format!(
                    "kind {} declares {} channels but {} weights",
                    kind.atomic_number,
                    kind.l_channels,
                    kind.weights.len()
                ));
            }
            if !(kind.sigma > 0.0) || !(kind.well_width > 0.0) {
                return bad(format!(
                    "kind {} needs positive widths (sigma {}, well {})",
                    kind.atomic_number, kind.sigma, kind.well_width
                ));
            }
        }
        for (i, atom) in self.atoms.iter().enumerate() {
            if !self.kinds.iter().any(|k| k.atomic_number == atom.kind) {
                return bad(format!("atom {i} refers to undeclared kind {}", atom.kind));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return bad(format!("solver tolerance must be positive, got {}", s.tol));
        }
        if !(s.mix_beta > 0.0 && s.mix_beta <= 1.0) {
            return bad(format!("mixing fraction must be in (0, 1], got {}", s.mix_beta));
        }
        if s.max_outer == 0 || s.inner_sweeps == 0 {
            return bad("iteration counts must be at least 1".into());
        }
        if s.window == 0 {
            return bad("prefetch window must be at least 1".into());
        }
        Ok(())
    }

    /// The grid this system runs on.
    pub fn grid(&self) -> Result<PwGrid> {
        match self.grid_dims {
            Some(dims) => PwGrid::from_dims(dims, self.cell),
            None => PwGrid::from_ecut(self.ecut, self.cell),
        }
    }

    /// Kind registry for direct-indexed lookups.
    pub fn kind_table(&self) -> Result<KindTable> {
        let capacity = self
            .kinds
            .iter()
            .map(|k| k.atomic_number as usize + 1)
            .max()
            .unwrap_or(1)
            .max(KindTable::DEFAULT_CAPACITY);
        let mut table = KindTable::with_capacity(capacity);
        for kind in &self.kinds {
            table.register(kind.record())?;
        }
        Ok(table)
    }

    fn kind_of<'a>(&self, table: &'a KindTable, atom: &AtomSpec) -> Result<&'a KindRecord> {
        table.lookup(atom.kind as usize)?.ok_or_else(|| {
            Error::Config(format!("atom kind {} is not registered", atom.kind))
        })
    }

    /// External-potential wells, one per atom.
    pub fn wells(&self) -> Result<Vec<Well>> {
        self.atoms
            .iter()
            .enumerate()
            .map(|(i, atom)| {
                let spec = self
                    .kinds
                    .iter()
                    .find(|k| k.atomic_number == atom.kind)
                    .ok_or_else(|| {
                        Error::Config(format!("atom {i} refers to undeclared kind {}", atom.kind))
                    })?;
                Ok(Well {
                    center: atom.position,
                    depth: spec.well_depth,
                    width: spec.well_width,
                })
            })
            .collect()
    }

    /// Synthesized pseudopotential entries in atom order.
    pub fn entries(&self, table: &KindTable, grid: &PwGrid) -> Result<Vec<PseudoEntry>> {
        self.atoms
            .iter()
            .enumerate()
            .map(|(atom_id, atom)| {
                let record = self.kind_of(table, atom)?;
                synthesize_entry(
                    atom_id as u64,
                    record,
                    grid.dims(),
                    grid.lengths(),
                    atom.position,
                )
            })
            .collect()
    }
}
