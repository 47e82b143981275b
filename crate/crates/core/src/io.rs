//! Network and solution file formats.
//!
//! Both formats are JSON with complex scalars as `[re, im]` pairs, 3-vectors
//! as three pairs, and 3×3 matrices as nine pairs row-major. Floats are
//! emitted with 17 significant digits so files round-trip losslessly and
//! repeated runs are byte-identical.

use crate::devices::DeviceSpec;
use crate::network::{Bus, LineSpec, Network, NetworkError};
use crate::perphase::BalanceReport;
use crate::phasor::{cx, C3, C3x3};
use crate::solver::Solution;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const NETWORK_FILE_VERSION: u32 = 1;
pub const SOLUTION_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: validation error: {message}")]
    Validation { path: String, message: String },
}

type CxPair = [f64; 2];
type Vec3Repr = [CxPair; 3];
type Mat3Repr = [CxPair; 9];

fn c_out(c: Complex64) -> CxPair {
    [c.re, c.im]
}

fn c_in(p: CxPair) -> Complex64 {
    cx(p[0], p[1])
}

fn v3_out(v: &C3) -> Vec3Repr {
    [c_out(v[0]), c_out(v[1]), c_out(v[2])]
}

fn v3_in(r: &Vec3Repr) -> C3 {
    C3::new(c_in(r[0]), c_in(r[1]), c_in(r[2]))
}

fn m3_out(m: &C3x3) -> Mat3Repr {
    let mut out = [[0.0; 2]; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = c_out(m.0[r][c]);
        }
    }
    out
}

fn m3_in(rep: &Mat3Repr) -> C3x3 {
    let mut m = C3x3::zero();
    for r in 0..3 {
        for c in 0..3 {
            m.0[r][c] = c_in(rep[3 * r + c]);
        }
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub version: u32,
    pub buses: Vec<BusFile>,
    pub lines: Vec<LineFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusFile {
    pub id: String,
    pub device: DeviceFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shunt: Option<Mat3Repr>,
}

/// On-disk device description: `kind` ∈ {voltage_source, current_source,
/// impedance}, `config` ∈ {y, delta}, plus whichever parameters the kind
/// needs. Omitted `gamma`/`beta` default to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceFile {
    pub kind: String,
    pub config: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec3Repr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec3Repr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Mat3Repr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<CxPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<CxPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineFile {
    pub from: String,
    pub to: String,
    pub y_series: Mat3Repr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_shunt_from: Option<Mat3Repr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_shunt_to: Option<Mat3Repr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub version: u32,
    pub solver: SolverMeta,
    pub buses: Vec<BusSolutionFile>,
    pub lines: Vec<LineFlowFile>,
    pub diagnostics: DiagnosticsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverMeta {
    /// Which path produced the solution: `full` or `per-phase`.
    pub mode: String,
    pub tolerances: TolerancesFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TolerancesFile {
    pub balance: f64,
    pub rcond_min: f64,
    pub range_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusSolutionFile {
    pub id: String,
    pub v: Vec3Repr,
    pub i: Vec3Repr,
    pub s: Vec3Repr,
    pub v_internal: Vec3Repr,
    pub i_internal: Vec3Repr,
    pub s_internal: Vec3Repr,
    pub gamma: CxPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<CxPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineFlowFile {
    pub from: String,
    pub to: String,
    pub i_from_to: Vec3Repr,
    pub i_to_from: Vec3Repr,
    pub s_from: Mat3Repr,
    pub s_to: Mat3Repr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub network_residual: f64,
    pub network_residual_rel: f64,
    pub max_kcl_residual: f64,
    pub kcl_residuals: Vec<f64>,
    pub delta_source_kcl: Vec<DeltaSourceKclFile>,
    pub power_mismatch: f64,
    pub power_mismatch_rel: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance_report: Option<Vec<BalanceViolationFile>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSourceKclFile {
    pub bus: String,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceViolationFile {
    pub element: String,
    pub magnitude: f64,
    pub detail: String,
}

fn device_to_file(dev: &DeviceSpec) -> DeviceFile {
    let mut f = DeviceFile {
        kind: String::new(),
        config: String::new(),
        e: None,
        j: None,
        z: None,
        gamma: None,
        beta: None,
    };
    match dev {
        DeviceSpec::VoltageSourceY { e, gamma } => {
            f.kind = "voltage_source".into();
            f.config = "y".into();
            f.e = Some(v3_out(e));
            f.gamma = Some(c_out(*gamma));
        }
        DeviceSpec::VoltageSourceDelta { e, gamma, beta } => {
            f.kind = "voltage_source".into();
            f.config = "delta".into();
            f.e = Some(v3_out(e));
            f.gamma = Some(c_out(*gamma));
            f.beta = Some(c_out(*beta));
        }
        DeviceSpec::CurrentSourceY { j, gamma } => {
            f.kind = "current_source".into();
            f.config = "y".into();
            f.j = Some(v3_out(j));
            f.gamma = Some(c_out(*gamma));
        }
        DeviceSpec::CurrentSourceDelta { j } => {
            f.kind = "current_source".into();
            f.config = "delta".into();
            f.j = Some(v3_out(j));
        }
        DeviceSpec::ImpedanceY { z, gamma } => {
            f.kind = "impedance".into();
            f.config = "y".into();
            f.z = Some(m3_out(z));
            f.gamma = Some(c_out(*gamma));
        }
        DeviceSpec::ImpedanceDelta { z, beta } => {
            f.kind = "impedance".into();
            f.config = "delta".into();
            f.z = Some(m3_out(z));
            f.beta = Some(c_out(*beta));
        }
    }
    f
}

fn device_from_file(path: &str, bus_id: &str, d: &DeviceFile) -> Result<DeviceSpec, IoError> {
    let invalid = |message: String| IoError::Validation {
        path: path.to_string(),
        message,
    };
    let gamma = d.gamma.map(c_in).unwrap_or_else(|| cx(0.0, 0.0));
    let beta = d.beta.map(c_in).unwrap_or_else(|| cx(0.0, 0.0));
    let need_e = || {
        d.e.as_ref()
            .map(v3_in)
            .ok_or_else(|| invalid(format!("bus {bus_id}: voltage source requires field `e`")))
    };
    let need_j = || {
        d.j.as_ref()
            .map(v3_in)
            .ok_or_else(|| invalid(format!("bus {bus_id}: current source requires field `j`")))
    };
    let need_z = || {
        d.z.as_ref()
            .map(m3_in)
            .ok_or_else(|| invalid(format!("bus {bus_id}: impedance requires field `z`")))
    };
    match (d.kind.as_str(), d.config.as_str()) {
        ("voltage_source", "y") => Ok(DeviceSpec::VoltageSourceY { e: need_e()?, gamma }),
        ("voltage_source", "delta") => Ok(DeviceSpec::VoltageSourceDelta {
            e: need_e()?,
            gamma,
            beta,
        }),
        ("current_source", "y") => Ok(DeviceSpec::CurrentSourceY { j: need_j()?, gamma }),
        ("current_source", "delta") => Ok(DeviceSpec::CurrentSourceDelta { j: need_j()? }),
        ("impedance", "y") => Ok(DeviceSpec::ImpedanceY { z: need_z()?, gamma }),
        ("impedance", "delta") => Ok(DeviceSpec::ImpedanceDelta { z: need_z()?, beta }),
        (kind, config) => Err(invalid(format!(
            "bus {bus_id}: unknown device kind/config `{kind}`/`{config}` \
             (expected voltage_source|current_source|impedance and y|delta)"
        ))),
    }
}

pub fn network_to_file(net: &Network) -> NetworkFile {
    NetworkFile {
        version: NETWORK_FILE_VERSION,
        buses: net
            .buses()
            .iter()
            .map(|bus| BusFile {
                id: bus.id.clone(),
                device: device_to_file(&bus.device),
                shunt: bus.shunt.as_ref().map(m3_out),
            })
            .collect(),
        lines: net
            .lines()
            .iter()
            .map(|line| LineFile {
                from: net.buses()[line.from].id.clone(),
                to: net.buses()[line.to].id.clone(),
                y_series: m3_out(&line.y_series),
                y_shunt_from: Some(m3_out(&line.y_shunt_from)),
                y_shunt_to: Some(m3_out(&line.y_shunt_to)),
            })
            .collect(),
    }
}

pub fn network_from_file(path: &str, file: &NetworkFile) -> Result<Network, IoError> {
    let invalid = |message: String| IoError::Validation {
        path: path.to_string(),
        message,
    };
    if file.version != NETWORK_FILE_VERSION {
        return Err(invalid(format!(
            "unsupported network file version {} (expected {NETWORK_FILE_VERSION})",
            file.version
        )));
    }
    let mut buses = Vec::with_capacity(file.buses.len());
    for bf in &file.buses {
        let device = device_from_file(path, &bf.id, &bf.device)?;
        buses.push(Bus {
            id: bf.id.clone(),
            device,
            shunt: bf.shunt.as_ref().map(m3_in),
        });
    }
    let index = |id: &str| {
        buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| invalid(format!("line endpoint {id:?} is not a bus")))
    };
    let mut lines = Vec::with_capacity(file.lines.len());
    for lf in &file.lines {
        lines.push(LineSpec {
            from: index(&lf.from)?,
            to: index(&lf.to)?,
            y_series: m3_in(&lf.y_series),
            y_shunt_from: lf.y_shunt_from.as_ref().map(m3_in).unwrap_or_else(C3x3::zero),
            y_shunt_to: lf.y_shunt_to.as_ref().map(m3_in).unwrap_or_else(C3x3::zero),
        });
    }
    Network::new(buses, lines).map_err(|e| match e {
        NetworkError::Device { bus, source } => invalid(format!("bus {bus}: {source}")),
        other => invalid(other.to_string()),
    })
}

/// Load and validate a network file.
pub fn load(path: impl AsRef<Path>) -> Result<Network, IoError> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref()).map_err(|source| IoError::Io {
        path: path_str.clone(),
        source,
    })?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path_str.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    network_from_file(&path_str, &file)
}

/// Serialize a network back to its file form and write it.
pub fn save_network(path: impl AsRef<Path>, net: &Network) -> Result<(), IoError> {
    let path_str = path.as_ref().display().to_string();
    let text = to_json_17(&network_to_file(net));
    std::fs::write(path.as_ref(), text).map_err(|source| IoError::Io {
        path: path_str,
        source,
    })
}

/// Assemble the on-disk form of a solution.
pub fn solution_to_file(
    net: &Network,
    sol: &Solution,
    mode: &str,
    balance_report: Option<&BalanceReport>,
) -> SolutionFile {
    SolutionFile {
        version: SOLUTION_FILE_VERSION,
        solver: SolverMeta {
            mode: mode.to_string(),
            tolerances: TolerancesFile {
                balance: crate::perphase::BALANCE_TOL_DEFAULT,
                rcond_min: crate::solver::SOLVER_RCOND_MIN,
                range_rel: 1e-9,
            },
        },
        buses: net
            .buses()
            .iter()
            .zip(&sol.buses)
            .map(|(bus, state)| BusSolutionFile {
                id: bus.id.clone(),
                v: v3_out(&state.terminal.v),
                i: v3_out(&state.terminal.i),
                s: v3_out(&state.terminal.s),
                v_internal: v3_out(&state.internal.v_int),
                i_internal: v3_out(&state.internal.i_int),
                s_internal: v3_out(&state.internal.s_int),
                gamma: c_out(state.internal.gamma),
                beta: state.internal.beta.map(c_out),
            })
            .collect(),
        lines: net
            .lines()
            .iter()
            .zip(&sol.lines)
            .map(|(line, flow)| LineFlowFile {
                from: net.buses()[line.from].id.clone(),
                to: net.buses()[line.to].id.clone(),
                i_from_to: v3_out(&flow.i_from),
                i_to_from: v3_out(&flow.i_to),
                s_from: m3_out(&flow.s_from),
                s_to: m3_out(&flow.s_to),
            })
            .collect(),
        diagnostics: DiagnosticsFile {
            network_residual: sol.diagnostics.network_residual,
            network_residual_rel: sol.diagnostics.network_residual_rel,
            max_kcl_residual: sol.diagnostics.max_kcl_residual,
            kcl_residuals: sol.diagnostics.kcl_residuals.clone(),
            delta_source_kcl: sol
                .diagnostics
                .delta_source_kcl
                .iter()
                .map(|(j, r)| DeltaSourceKclFile {
                    bus: net.buses()[*j].id.clone(),
                    residual: *r,
                })
                .collect(),
            power_mismatch: sol.diagnostics.power_mismatch,
            power_mismatch_rel: sol.diagnostics.power_mismatch_rel,
            balance_report: balance_report.map(|rep| {
                rep.violations
                    .iter()
                    .map(|v| BalanceViolationFile {
                        element: v.element.clone(),
                        magnitude: v.magnitude,
                        detail: v.detail.clone(),
                    })
                    .collect()
            }),
        },
    }
}

pub fn read_solution(path: impl AsRef<Path>) -> Result<SolutionFile, IoError> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref()).map_err(|source| IoError::Io {
        path: path_str.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path_str,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Maximum relative difference between the terminal quantities (v, i, s) of
/// two solution files. Differences are normalized per quantity class by the
/// largest magnitude present in either file.
pub fn compare_solutions(a: &SolutionFile, b: &SolutionFile) -> Result<f64, String> {
    if a.buses.len() != b.buses.len() {
        return Err(format!(
            "bus count mismatch: {} vs {}",
            a.buses.len(),
            b.buses.len()
        ));
    }
    let mut worst = 0.0f64;
    for class in 0..3 {
        let pick = |bus: &BusSolutionFile| match class {
            0 => bus.v,
            1 => bus.i,
            _ => bus.s,
        };
        let mut scale = 0.0f64;
        let mut diff = 0.0f64;
        for (ba, bb) in a.buses.iter().zip(&b.buses) {
            if ba.id != bb.id {
                return Err(format!("bus id mismatch: {:?} vs {:?}", ba.id, bb.id));
            }
            let (va, vb) = (pick(ba), pick(bb));
            for k in 0..3 {
                let ca = c_in(va[k]);
                let cb = c_in(vb[k]);
                scale = scale.max(ca.norm()).max(cb.norm());
                diff = diff.max((ca - cb).norm());
            }
        }
        worst = worst.max(diff / scale.max(1e-30));
    }
    Ok(worst)
}

/// Serialize with 17-significant-digit floats, pretty-printed, trailing
/// newline. Output is deterministic byte-for-byte for identical values.
pub fn to_json_17<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17Formatter::default());
    value
        .serialize(&mut ser)
        .expect("JSON serialization cannot fail for file structs");
    out.push(b'\n');
    String::from_utf8(out).expect("serializer emits UTF-8")
}

/// Pretty-print formatter that writes every float with 17 significant digits
/// (`{:.16e}`), enough to reproduce any f64 exactly on re-parse.
#[derive(Default)]
struct Digits17Formatter {
    indent: usize,
}


impl Digits17Formatter {
    fn newline<W: ?Sized + std::io::Write>(&self, writer: &mut W) -> std::io::Result<()> {
        writer.write_all(b"\n")?;
        for _ in 0..self.indent {
            writer.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl serde_json::ser::Formatter for Digits17Formatter {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent += 1;
        writer.write_all(b"[")
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent -= 1;
        self.newline(writer)?;
        writer.write_all(b"]")
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        if !first {
            writer.write_all(b",")?;
        }
        self.newline(writer)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent += 1;
        writer.write_all(b"{")
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent -= 1;
        self.newline(writer)?;
        writer.write_all(b"}")
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        if !first {
            writer.write_all(b",")?;
        }
        self.newline(writer)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        writer.write_all(b": ")
    }
}
