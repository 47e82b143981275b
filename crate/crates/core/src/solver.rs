//! The general three-phase analysis: solve `I = YV` together with the device
//! relations for every terminal voltage and current, then recover internal
//! variables.
//!
//! Buses are partitioned by the canonical relation their device imposes —
//! voltage pinned, current pinned, or affine admittance. Pinned quantities
//! are eliminated, impedance admittances move onto the diagonal, and the
//! remaining complex linear system (three rows per bus with unknown voltage)
//! is solved by dense LU with partial pivoting.

use crate::devices::{external_model, recover_internal, ExternalRelation, TerminalState};
use crate::linalg::DenseLu;
use crate::network::{assemble, line_flow, line_power_matrix, Network};
use crate::phasor::{C3, C3x3};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Reciprocal-condition threshold below which the reduced system is treated
/// as singular (an ill-posed network rather than roundoff).
pub const SOLVER_RCOND_MIN: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("network has no voltage source; the analysis problem needs a voltage reference")]
    NoVoltageSource,
    #[error("reduced network system is singular to working precision (rcond = {rcond:.3e})")]
    SingularSystem { rcond: f64 },
    #[error("bus {bus}: {source}")]
    Device {
        bus: String,
        source: crate::devices::DeviceError,
    },
    #[error("solution shape does not match network: {detail}")]
    ShapeMismatch { detail: String },
}

/// Bus indices grouped by the canonical relation class of their device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusPartition {
    pub n_v: Vec<usize>,
    pub n_c: Vec<usize>,
    pub n_i: Vec<usize>,
}

/// Partition the buses and derive each device's terminal relation.
pub fn partition(net: &Network) -> Result<(BusPartition, Vec<ExternalRelation>), SolveError> {
    let mut part = BusPartition {
        n_v: Vec::new(),
        n_c: Vec::new(),
        n_i: Vec::new(),
    };
    let mut relations = Vec::with_capacity(net.n_buses());
    for (j, bus) in net.buses().iter().enumerate() {
        let rel = external_model(&bus.device).map_err(|source| SolveError::Device {
            bus: bus.id.clone(),
            source,
        })?;
        match rel {
            ExternalRelation::FixedVoltage { .. } => part.n_v.push(j),
            ExternalRelation::FixedCurrent { .. } => part.n_c.push(j),
            ExternalRelation::Admittance { .. } => part.n_i.push(j),
        }
        relations.push(rel);
    }
    if part.n_v.is_empty() {
        return Err(SolveError::NoVoltageSource);
    }
    Ok((part, relations))
}

/// Solved state of one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusState {
    pub terminal: TerminalState,
    pub internal: crate::devices::InternalState,
}

/// Flows on one line: sending-end currents and power matrices from each end.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFlow {
    pub i_from: C3,
    pub i_to: C3,
    pub s_from: C3x3,
    pub s_to: C3x3,
}

/// Residuals of a solution against its network.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticReport {
    /// `‖I - YV‖∞` over all buses and phases.
    pub network_residual: f64,
    /// Residual relative to `max(1, ‖I‖∞)`.
    pub network_residual_rel: f64,
    /// Per-bus nodal current balance against recomputed line flows.
    pub kcl_residuals: Vec<f64>,
    pub max_kcl_residual: f64,
    /// `|𝟏ᵀI_j|` for each Δ-configured voltage source; nonzero values mean
    /// the source carries zero-sequence current, reported rather than
    /// enforced.
    pub delta_source_kcl: Vec<(usize, f64)>,
    /// Total injected power minus power absorbed by lines and shunts.
    pub power_mismatch: f64,
    pub power_mismatch_rel: f64,
}

/// Full solution: per-bus terminal and internal states, per-line flows, and
/// residual diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub buses: Vec<BusState>,
    pub lines: Vec<LineFlow>,
    pub diagnostics: DiagnosticReport,
}

impl Solution {
    pub fn voltages(&self) -> Vec<C3> {
        self.buses.iter().map(|b| b.terminal.v).collect()
    }

    pub fn currents(&self) -> Vec<C3> {
        self.buses.iter().map(|b| b.terminal.i).collect()
    }
}

/// Solve the analysis problem for a network.
///
/// Eliminates pinned voltages and currents, solves the reduced system for
/// the unknown voltages (current-source buses first, then impedance buses,
/// phases innermost — a fixed ordering so outputs are reproducible), and
/// back-substitutes for the unknown currents before recovering each device's
/// internal state.
pub fn solve(net: &Network) -> Result<Solution, SolveError> {
    let (part, relations) = partition(net)?;
    let y = assemble(net);
    let n = net.n_buses();

    let unknown_buses: Vec<usize> = part.n_c.iter().chain(part.n_i.iter()).copied().collect();
    let slot_of = {
        let mut slots = vec![usize::MAX; n];
        for (s, &j) in unknown_buses.iter().enumerate() {
            slots[j] = s;
        }
        slots
    };
    let m = unknown_buses.len();

    // Known voltages enter the right-hand side.
    let mut v_known = vec![C3::zero(); n];
    for &j in &part.n_v {
        if let ExternalRelation::FixedVoltage { v } = relations[j] {
            v_known[j] = v;
        }
    }

    let mut a = DMatrix::<Complex64>::zeros(3 * m, 3 * m);
    let mut rhs = DVector::<Complex64>::zeros(3 * m);
    for (row_slot, &j) in unknown_buses.iter().enumerate() {
        let mut b_j = match relations[j] {
            ExternalRelation::FixedCurrent { i } => i,
            ExternalRelation::Admittance { i_offset, .. } => i_offset,
            ExternalRelation::FixedVoltage { .. } => unreachable!("voltage buses are eliminated"),
        };
        for &k in &part.n_v {
            b_j -= y.block(j, k) * v_known[k];
        }
        for ph in 0..3 {
            rhs[3 * row_slot + ph] = b_j[ph];
        }

        for &k in &unknown_buses {
            let mut block = y.block(j, k);
            if j == k {
                if let ExternalRelation::Admittance { y_eff, .. } = relations[j] {
                    block += y_eff;
                }
            }
            let col_slot = slot_of[k];
            for r in 0..3 {
                for c in 0..3 {
                    a[(3 * row_slot + r, 3 * col_slot + c)] = block.0[r][c];
                }
            }
        }
    }

    let lu = DenseLu::factor(a);
    let rcond = lu.rcond();
    if rcond < SOLVER_RCOND_MIN {
        return Err(SolveError::SingularSystem { rcond });
    }
    let x = lu
        .solve(&rhs)
        .ok_or(SolveError::SingularSystem { rcond: 0.0 })?;

    let mut v = v_known;
    for (slot, &j) in unknown_buses.iter().enumerate() {
        v[j] = C3::new(x[3 * slot], x[3 * slot + 1], x[3 * slot + 2]);
    }

    let mut i = vec![C3::zero(); n];
    for j in 0..n {
        i[j] = match relations[j] {
            ExternalRelation::FixedCurrent { i } => i,
            ExternalRelation::Admittance { y_eff, i_offset } => -(y_eff * v[j]) + i_offset,
            ExternalRelation::FixedVoltage { .. } => y.apply_row(j, &v),
        };
    }

    let buses = net
        .buses()
        .iter()
        .enumerate()
        .map(|(j, bus)| BusState {
            terminal: TerminalState::from_vi(v[j], i[j]),
            internal: recover_internal(&bus.device, &v[j], &i[j]),
        })
        .collect();

    let lines = compute_line_flows(net, &v);

    let mut solution = Solution {
        buses,
        lines,
        diagnostics: DiagnosticReport::default(),
    };
    solution.diagnostics = residuals(net, &solution)?;
    Ok(solution)
}

fn compute_line_flows(net: &Network, v: &[C3]) -> Vec<LineFlow> {
    net.lines()
        .iter()
        .map(|line| {
            let (i_from, i_to) = line_flow(line, &v[line.from], &v[line.to]);
            LineFlow {
                i_from,
                i_to,
                s_from: line_power_matrix(&v[line.from], &i_from),
                s_to: line_power_matrix(&v[line.to], &i_to),
            }
        })
        .collect()
}

/// Recompute all residuals of a solution against a network.
pub fn residuals(net: &Network, sol: &Solution) -> Result<DiagnosticReport, SolveError> {
    let n = net.n_buses();
    if sol.buses.len() != n {
        return Err(SolveError::ShapeMismatch {
            detail: format!("{} bus states for {} buses", sol.buses.len(), n),
        });
    }
    if sol.lines.len() != net.lines().len() {
        return Err(SolveError::ShapeMismatch {
            detail: format!(
                "{} line flows for {} lines",
                sol.lines.len(),
                net.lines().len()
            ),
        });
    }

    let v: Vec<C3> = sol.buses.iter().map(|b| b.terminal.v).collect();
    let i: Vec<C3> = sol.buses.iter().map(|b| b.terminal.i).collect();

    let y = assemble(net);
    let yv = y.apply(&v);
    let mut network_residual = 0.0f64;
    let mut i_scale = 0.0f64;
    for j in 0..n {
        network_residual = network_residual.max((i[j] - yv[j]).norm_inf());
        i_scale = i_scale.max(i[j].norm_inf());
    }

    // Nodal current balance from independently recomputed line flows.
    let mut kcl = vec![C3::zero(); n];
    for j in 0..n {
        kcl[j] = i[j];
        if let Some(sh) = &net.buses()[j].shunt {
            kcl[j] -= *sh * v[j];
        }
    }
    for line in net.lines() {
        let (i_from, i_to) = line_flow(line, &v[line.from], &v[line.to]);
        kcl[line.from] -= i_from;
        kcl[line.to] -= i_to;
    }
    let kcl_residuals: Vec<f64> = kcl.iter().map(|r| r.norm_inf()).collect();
    let max_kcl_residual = kcl_residuals.iter().copied().fold(0.0, f64::max);

    let delta_source_kcl = net
        .buses()
        .iter()
        .enumerate()
        .filter(|(_, bus)| {
            matches!(
                bus.device,
                crate::devices::DeviceSpec::VoltageSourceDelta { .. }
            )
        })
        .map(|(j, _)| (j, i[j].sum().norm()))
        .collect();

    // Power conservation: injections vs line + shunt absorption.
    let total_injection: Complex64 = sol.buses.iter().map(|b| b.terminal.s.sum()).sum();
    let mut absorbed = Complex64::new(0.0, 0.0);
    for flow in &sol.lines {
        absorbed += flow.s_from.diag().sum() + flow.s_to.diag().sum();
    }
    for (j, bus) in net.buses().iter().enumerate() {
        if let Some(sh) = &bus.shunt {
            absorbed += v[j].outer(&(*sh * v[j])).diag().sum();
        }
    }
    let power_mismatch = (total_injection - absorbed).norm();
    let power_scale = total_injection.norm().max(absorbed.norm()).max(1.0);

    Ok(DiagnosticReport {
        network_residual,
        network_residual_rel: network_residual / i_scale.max(1.0),
        kcl_residuals,
        max_kcl_residual,
        delta_source_kcl,
        power_mismatch,
        power_mismatch_rel: power_mismatch / power_scale,
    })
}
