//! Three-phase line model, the network graph, and assembly of the block
//! admittance matrix relating all terminal currents to all terminal voltages.

use crate::devices::{DeviceError, DeviceSpec};
use crate::phasor::{C3, C3x3};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("network has no buses")]
    EmptyNetwork,
    #[error("duplicate bus id {0:?}")]
    DuplicateBus(String),
    #[error("line endpoint index {index} out of range (network has {n_buses} buses)")]
    UnknownBus { index: usize, n_buses: usize },
    #[error("line connects bus {0} to itself")]
    SelfLoop(usize),
    #[error("non-finite entries in {0}")]
    NonFinite(String),
    #[error("network graph is disconnected")]
    DisconnectedGraph,
    #[error("network has no voltage source to fix a reference")]
    NoVoltageSource,
    #[error("bus {bus}: {source}")]
    Device { bus: String, source: DeviceError },
}

/// One bus: an identifier, the device connected there, and an optional nodal
/// shunt admittance (folded into the diagonal of the admittance matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub device: DeviceSpec,
    pub shunt: Option<C3x3>,
}

impl Bus {
    pub fn new(id: impl Into<String>, device: DeviceSpec) -> Self {
        Bus {
            id: id.into(),
            device,
            shunt: None,
        }
    }
}

/// A three-phase line between two buses, characterized by a series admittance
/// block and one shunt admittance block at each end (not necessarily equal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub y_series: C3x3,
    pub y_shunt_from: C3x3,
    pub y_shunt_to: C3x3,
}

impl LineSpec {
    pub fn series(from: usize, to: usize, y_series: C3x3) -> Self {
        LineSpec {
            from,
            to,
            y_series,
            y_shunt_from: C3x3::zero(),
            y_shunt_to: C3x3::zero(),
        }
    }
}

/// A validated three-phase network: a connected graph of buses joined by
/// lines, with at most one line per bus pair (parallel lines are merged by
/// summing their admittance blocks at construction).
#[derive(Debug, Clone)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<LineSpec>,
    index: BTreeMap<String, usize>,
}

impl Network {
    pub fn new(buses: Vec<Bus>, lines: Vec<LineSpec>) -> Result<Self, NetworkError> {
        if buses.is_empty() {
            return Err(NetworkError::EmptyNetwork);
        }
        let n = buses.len();
        let mut index = BTreeMap::new();
        for (k, bus) in buses.iter().enumerate() {
            if index.insert(bus.id.clone(), k).is_some() {
                return Err(NetworkError::DuplicateBus(bus.id.clone()));
            }
            bus.device.validate().map_err(|source| NetworkError::Device {
                bus: bus.id.clone(),
                source,
            })?;
            if let Some(sh) = &bus.shunt {
                if !sh.is_finite() {
                    return Err(NetworkError::NonFinite(format!("shunt at bus {}", bus.id)));
                }
            }
        }
        if !buses.iter().any(|b| b.device.is_voltage_source()) {
            return Err(NetworkError::NoVoltageSource);
        }

        // Merge parallel lines onto a canonical (min, max) orientation.
        let mut merged: BTreeMap<(usize, usize), LineSpec> = BTreeMap::new();
        for line in lines {
            if line.from >= n || line.to >= n {
                return Err(NetworkError::UnknownBus {
                    index: line.from.max(line.to),
                    n_buses: n,
                });
            }
            if line.from == line.to {
                return Err(NetworkError::SelfLoop(line.from));
            }
            if !(line.y_series.is_finite()
                && line.y_shunt_from.is_finite()
                && line.y_shunt_to.is_finite())
            {
                return Err(NetworkError::NonFinite(format!(
                    "line {}-{}",
                    buses[line.from].id, buses[line.to].id
                )));
            }
            let flip = line.from > line.to;
            let key = if flip {
                (line.to, line.from)
            } else {
                (line.from, line.to)
            };
            let oriented = if flip {
                LineSpec {
                    from: line.to,
                    to: line.from,
                    y_series: line.y_series,
                    y_shunt_from: line.y_shunt_to,
                    y_shunt_to: line.y_shunt_from,
                }
            } else {
                line
            };
            merged
                .entry(key)
                .and_modify(|acc| {
                    acc.y_series += oriented.y_series;
                    acc.y_shunt_from += oriented.y_shunt_from;
                    acc.y_shunt_to += oriented.y_shunt_to;
                })
                .or_insert(oriented);
        }
        let lines: Vec<LineSpec> = merged.into_values().collect();

        // Connectivity over the structural graph.
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(j) = stack.pop() {
            for line in &lines {
                let other = if line.from == j {
                    line.to
                } else if line.to == j {
                    line.from
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(NetworkError::DisconnectedGraph);
        }

        Ok(Network {
            buses,
            lines,
            index,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[LineSpec] {
        &self.lines
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Replace the device at a bus, revalidating the spec.
    pub fn with_device(mut self, bus: usize, device: DeviceSpec) -> Result<Self, NetworkError> {
        device.validate().map_err(|source| NetworkError::Device {
            bus: self.buses[bus].id.clone(),
            source,
        })?;
        self.buses[bus].device = device;
        Ok(self)
    }
}

/// Sending-end currents of a line from the terminal voltages at its ends:
/// `I_jk = yˢ(V_j - V_k) + yᵐ_jk V_j` and the mirror image at the far end.
pub fn line_flow(line: &LineSpec, v_from: &C3, v_to: &C3) -> (C3, C3) {
    let i_from = line.y_series * (*v_from - *v_to) + line.y_shunt_from * *v_from;
    let i_to = line.y_series * (*v_to - *v_from) + line.y_shunt_to * *v_to;
    (i_from, i_to)
}

/// Line power matrix `S = V Iᴴ`; its diagonal is the sending-end power
/// vector, off-diagonal entries are cross-phase coupling terms.
pub fn line_power_matrix(v: &C3, i: &C3) -> C3x3 {
    v.outer(i)
}

/// Block-sparse admittance matrix: a map from bus pairs to 3×3 blocks.
#[derive(Debug, Clone)]
pub struct BlockAdmittance {
    n_buses: usize,
    blocks: BTreeMap<(usize, usize), C3x3>,
}

impl BlockAdmittance {
    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    /// The (j, k) block; zero when structurally absent.
    pub fn block(&self, j: usize, k: usize) -> C3x3 {
        self.blocks.get(&(j, k)).copied().unwrap_or_else(C3x3::zero)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &C3x3)> {
        self.blocks.iter()
    }

    /// Matrix-vector product `I = YV` over per-bus phase vectors.
    pub fn apply(&self, v: &[C3]) -> Vec<C3> {
        assert_eq!(v.len(), self.n_buses);
        let mut out = vec![C3::zero(); self.n_buses];
        for (&(j, k), block) in &self.blocks {
            out[j] += *block * v[k];
        }
        out
    }

    /// One block-row of `YV`.
    pub fn apply_row(&self, j: usize, v: &[C3]) -> C3 {
        self.blocks
            .range((j, 0)..=(j, self.n_buses))
            .fold(C3::zero(), |acc, (&(_, k), block)| acc + *block * v[k])
    }
}

/// Assemble the network admittance matrix: off-diagonal blocks `-yˢ_jk` for
/// each line, diagonal blocks summing the series and own-end shunt blocks of
/// incident lines plus any nodal shunt at the bus.
pub fn assemble(net: &Network) -> BlockAdmittance {
    let n = net.n_buses();
    let mut blocks: BTreeMap<(usize, usize), C3x3> = BTreeMap::new();
    for j in 0..n {
        let mut diag = net.buses()[j].shunt.unwrap_or_else(C3x3::zero);
        for line in net.lines() {
            if line.from == j {
                diag += line.y_series + line.y_shunt_from;
            } else if line.to == j {
                diag += line.y_series + line.y_shunt_to;
            }
        }
        blocks.insert((j, j), diag);
    }
    for line in net.lines() {
        blocks.insert((line.from, line.to), -line.y_series);
        blocks.insert((line.to, line.from), -line.y_series);
    }
    BlockAdmittance {
        n_buses: n,
        blocks,
    }
}
