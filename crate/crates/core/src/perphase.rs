//! Balanced-network detection and the per-phase fast path.
//!
//! A network is *balanced* when every source vector lies in span(α₊), every
//! impedance is a scalar multiple of the identity, and every line block is a
//! scalar multiple of the identity. The admittance matrix then factors as a
//! Kronecker product `Y = Y^{1φ} ⊗ I` of a scalar per-phase matrix with the
//! 3×3 identity, and the three-phase solution is the per-phase solution
//! tensored with α₊ — exactly when the specified neutral and zero-sequence
//! voltages vanish. With nonzero specified γ the terminal quantities pick up
//! an extra zero-sequence component `(γ̃, β̃)` but still carry no negative
//! sequence; [`decompose_extended`] extracts and verifies that decomposition
//! from a full solve.

use crate::devices::{recover_internal, DeviceSpec, TerminalState};
use crate::linalg::DenseLu;
use crate::network::{Bus, LineSpec, Network};
use crate::phasor::{alpha_plus, cx, sequence_components, C3, C3x3};
use crate::solver::{self, BusState, LineFlow, Solution};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::fmt;
use thiserror::Error;

/// Default relative tolerance for balance detection.
pub const BALANCE_TOL_DEFAULT: f64 = 1e-9;

/// Reciprocal-condition threshold for the reduced per-phase system.
pub const PER_PHASE_RCOND_MIN: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PerPhaseError {
    #[error("reduced per-phase system is singular to working precision (rcond = {rcond:.3e})")]
    SingularReducedSystem { rcond: f64 },
    #[error("lift requires zero-sequence components (γ̃, β̃) but the per-phase solution carries none")]
    MissingZeroSequence,
}

/// Scalar specification of one balanced device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BalancedDevice {
    VoltageY {
        lambda: Complex64,
        gamma: Complex64,
    },
    VoltageDelta {
        lambda: Complex64,
        gamma: Complex64,
        beta: Complex64,
    },
    CurrentY {
        mu: Complex64,
        gamma: Complex64,
    },
    CurrentDelta {
        mu: Complex64,
    },
    ImpedanceY {
        epsilon: Complex64,
        gamma: Complex64,
    },
    ImpedanceDelta {
        epsilon: Complex64,
        beta: Complex64,
    },
}

impl BalancedDevice {
    /// Class coefficient relating the internal scalar parameter to the
    /// terminal quantity: 1 for Y devices, `(1-α²)/3` / `(1-α²)` / `3` for Δ
    /// voltage sources, current sources, and impedances respectively.
    pub fn hat_alpha(&self) -> Complex64 {
        let a = crate::phasor::alpha();
        let one_minus_a2 = cx(1.0, 0.0) - a * a;
        match self {
            BalancedDevice::VoltageY { .. }
            | BalancedDevice::CurrentY { .. }
            | BalancedDevice::ImpedanceY { .. } => cx(1.0, 0.0),
            BalancedDevice::VoltageDelta { .. } => one_minus_a2 / 3.0,
            BalancedDevice::CurrentDelta { .. } => one_minus_a2,
            BalancedDevice::ImpedanceDelta { .. } => cx(3.0, 0.0),
        }
    }

    pub fn is_voltage_source(&self) -> bool {
        matches!(
            self,
            BalancedDevice::VoltageY { .. } | BalancedDevice::VoltageDelta { .. }
        )
    }

    pub fn is_current_source(&self) -> bool {
        matches!(
            self,
            BalancedDevice::CurrentY { .. } | BalancedDevice::CurrentDelta { .. }
        )
    }

    pub fn is_impedance(&self) -> bool {
        matches!(
            self,
            BalancedDevice::ImpedanceY { .. } | BalancedDevice::ImpedanceDelta { .. }
        )
    }

    /// Materialize the three-phase device this scalar spec stands for.
    pub fn to_device_spec(&self) -> DeviceSpec {
        match *self {
            BalancedDevice::VoltageY { lambda, gamma } => DeviceSpec::VoltageSourceY {
                e: alpha_plus() * lambda,
                gamma,
            },
            BalancedDevice::VoltageDelta {
                lambda,
                gamma,
                beta,
            } => DeviceSpec::VoltageSourceDelta {
                e: alpha_plus() * lambda,
                gamma,
                beta,
            },
            BalancedDevice::CurrentY { mu, gamma } => DeviceSpec::CurrentSourceY {
                j: alpha_plus() * mu,
                gamma,
            },
            BalancedDevice::CurrentDelta { mu } => DeviceSpec::CurrentSourceDelta {
                j: alpha_plus() * mu,
            },
            BalancedDevice::ImpedanceY { epsilon, gamma } => DeviceSpec::ImpedanceY {
                z: C3x3::identity() * (cx(1.0, 0.0) / epsilon),
                gamma,
            },
            BalancedDevice::ImpedanceDelta { epsilon, beta } => DeviceSpec::ImpedanceDelta {
                z: C3x3::identity() * (cx(1.0, 0.0) / epsilon),
                beta,
            },
        }
    }
}

/// Scalar line admittances of a balanced line `yˢ = ηˢI`, `yᵐ = ηᵐI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedLine {
    pub from: usize,
    pub to: usize,
    pub eta_s: Complex64,
    pub eta_m_from: Complex64,
    pub eta_m_to: Complex64,
}

/// Scalar description of a balanced network.
#[derive(Debug, Clone)]
pub struct BalancedSpec {
    pub bus_ids: Vec<String>,
    pub devices: Vec<BalancedDevice>,
    /// Scalar nodal shunt admittance per bus (zero when absent).
    pub shunts: Vec<Complex64>,
    pub lines: Vec<BalancedLine>,
}

impl BalancedSpec {
    pub fn n_buses(&self) -> usize {
        self.devices.len()
    }

    /// Rebuild the three-phase network this scalar spec describes.
    pub fn to_network(&self) -> Network {
        let buses = self
            .bus_ids
            .iter()
            .zip(&self.devices)
            .zip(&self.shunts)
            .map(|((id, dev), sh)| {
                let mut bus = Bus::new(id.clone(), dev.to_device_spec());
                if sh.norm() > 0.0 {
                    bus.shunt = Some(C3x3::identity() * *sh);
                }
                bus
            })
            .collect();
        let lines = self
            .lines
            .iter()
            .map(|l| LineSpec {
                from: l.from,
                to: l.to,
                y_series: C3x3::identity() * l.eta_s,
                y_shunt_from: C3x3::identity() * l.eta_m_from,
                y_shunt_to: C3x3::identity() * l.eta_m_to,
            })
            .collect();
        Network::new(buses, lines).expect("balanced spec describes a valid network")
    }

    /// True when every specified neutral / zero-sequence voltage that enters
    /// the network equations is zero: the condition under which the plain
    /// per-phase lift `V = v⊗α₊`, `I = i⊗α₊` reproduces the full solution.
    /// (The γ of a Y current source only affects internal recovery and may be
    /// nonzero.)
    pub fn zero_sequence_free(&self) -> bool {
        self.devices.iter().all(|d| match d {
            BalancedDevice::VoltageY { gamma, .. }
            | BalancedDevice::VoltageDelta { gamma, .. }
            | BalancedDevice::ImpedanceY { gamma, .. } => gamma.norm() <= 1e-12,
            BalancedDevice::CurrentY { .. }
            | BalancedDevice::CurrentDelta { .. }
            | BalancedDevice::ImpedanceDelta { .. } => true,
        })
    }
}

/// One element that broke the balance check.
#[derive(Debug, Clone)]
pub struct BalanceViolation {
    /// Which element, e.g. `bus load3` or `line src-load3 (series)`.
    pub element: String,
    /// Relative magnitude of the offending content.
    pub magnitude: f64,
    pub detail: String,
}

/// Everything that kept a network from being treated as balanced.
#[derive(Debug, Clone, Default)]
pub struct BalanceReport {
    pub violations: Vec<BalanceViolation>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for BalanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "balanced");
        }
        for v in &self.violations {
            writeln!(f, "{}: {} (relative magnitude {:.3e})", v.element, v.detail, v.magnitude)?;
        }
        Ok(())
    }
}

fn scalar_part(block: &C3x3) -> (Complex64, f64) {
    let eta = block.trace() / 3.0;
    let resid = (*block - C3x3::identity() * eta).norm_fro();
    let scale = block.norm_fro();
    (eta, if scale > 0.0 { resid / scale } else { 0.0 })
}

fn vector_imbalance(x: &C3) -> (Complex64, f64) {
    let s = sequence_components(x);
    let scale = x.norm_inf();
    let off = s.zero.norm().max(s.negative.norm());
    (s.positive, if scale > 0.0 { off / scale } else { 0.0 })
}

/// Decide whether a network is balanced within `tol` and extract the scalar
/// spec if so. On failure the report lists every offending element with the
/// relative magnitude of its unbalanced content.
pub fn check_balanced(net: &Network, tol: f64) -> Result<BalancedSpec, BalanceReport> {
    let mut report = BalanceReport::default();
    let mut devices = Vec::with_capacity(net.n_buses());
    let mut shunts = Vec::with_capacity(net.n_buses());

    for bus in net.buses() {
        let dev = match &bus.device {
            DeviceSpec::VoltageSourceY { e, gamma } => {
                let (lambda, off) = vector_imbalance(e);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "Y voltage source has zero- or negative-sequence content".into(),
                    });
                }
                BalancedDevice::VoltageY {
                    lambda,
                    gamma: *gamma,
                }
            }
            DeviceSpec::VoltageSourceDelta { e, gamma, beta } => {
                let (lambda, off) = vector_imbalance(e);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "Δ voltage source has zero- or negative-sequence content".into(),
                    });
                }
                BalancedDevice::VoltageDelta {
                    lambda,
                    gamma: *gamma,
                    beta: *beta,
                }
            }
            DeviceSpec::CurrentSourceY { j, gamma } => {
                let (mu, off) = vector_imbalance(j);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "Y current source has zero- or negative-sequence content".into(),
                    });
                }
                BalancedDevice::CurrentY { mu, gamma: *gamma }
            }
            DeviceSpec::CurrentSourceDelta { j } => {
                let (mu, off) = vector_imbalance(j);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "Δ current source has zero- or negative-sequence content".into(),
                    });
                }
                BalancedDevice::CurrentDelta { mu }
            }
            DeviceSpec::ImpedanceY { z, gamma } => {
                let (eta_inv, off) = scalar_part(z);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "Y impedance is not a scalar multiple of the identity".into(),
                    });
                    BalancedDevice::ImpedanceY {
                        epsilon: cx(0.0, 0.0),
                        gamma: *gamma,
                    }
                } else {
                    BalancedDevice::ImpedanceY {
                        epsilon: cx(1.0, 0.0) / eta_inv,
                        gamma: *gamma,
                    }
                }
            }
            DeviceSpec::ImpedanceDelta { z, beta } => {
                let (eta_inv, off) = scalar_part(z);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "Δ impedance is not a scalar multiple of the identity".into(),
                    });
                    BalancedDevice::ImpedanceDelta {
                        epsilon: cx(0.0, 0.0),
                        beta: *beta,
                    }
                } else {
                    BalancedDevice::ImpedanceDelta {
                        epsilon: cx(1.0, 0.0) / eta_inv,
                        beta: *beta,
                    }
                }
            }
        };
        devices.push(dev);

        let eta_sh = match &bus.shunt {
            Some(sh) => {
                let (eta, off) = scalar_part(sh);
                if off > tol {
                    report.violations.push(BalanceViolation {
                        element: format!("bus {}", bus.id),
                        magnitude: off,
                        detail: "nodal shunt is not a scalar multiple of the identity".into(),
                    });
                }
                eta
            }
            None => cx(0.0, 0.0),
        };
        shunts.push(eta_sh);
    }

    let mut lines = Vec::with_capacity(net.lines().len());
    for line in net.lines() {
        let name = |part: &str| {
            format!(
                "line {}-{} ({part})",
                net.buses()[line.from].id,
                net.buses()[line.to].id
            )
        };
        let (eta_s, off_s) = scalar_part(&line.y_series);
        if off_s > tol {
            report.violations.push(BalanceViolation {
                element: name("series"),
                magnitude: off_s,
                detail: "series admittance block is not a scalar multiple of the identity".into(),
            });
        }
        let (eta_m_from, off_f) = scalar_part(&line.y_shunt_from);
        if off_f > tol {
            report.violations.push(BalanceViolation {
                element: name("shunt at from-end"),
                magnitude: off_f,
                detail: "shunt admittance block is not a scalar multiple of the identity".into(),
            });
        }
        let (eta_m_to, off_t) = scalar_part(&line.y_shunt_to);
        if off_t > tol {
            report.violations.push(BalanceViolation {
                element: name("shunt at to-end"),
                magnitude: off_t,
                detail: "shunt admittance block is not a scalar multiple of the identity".into(),
            });
        }
        lines.push(BalancedLine {
            from: line.from,
            to: line.to,
            eta_s,
            eta_m_from,
            eta_m_to,
        });
    }

    if report.is_balanced() {
        Ok(BalancedSpec {
            bus_ids: net.buses().iter().map(|b| b.id.clone()).collect(),
            devices,
            shunts,
            lines,
        })
    } else {
        Err(report)
    }
}

/// The scalar per-phase admittance matrix and its solver-ready partitions.
///
/// Buses are grouped voltage sources first, then current sources, then
/// impedances; `a21`/`a22` are the blocks of that partition, `a22_prime`
/// adds the per-phase device admittances `ĥα_jε_j` to the impedance diagonal,
/// and `y_minus_c_*` are the rows used to back-substitute the unknown
/// currents.
#[derive(Debug, Clone)]
pub struct PerPhaseModel {
    pub y_1phi: DMatrix<Complex64>,
    pub n_v: Vec<usize>,
    pub n_c: Vec<usize>,
    pub n_i: Vec<usize>,
    pub a21: DMatrix<Complex64>,
    pub a22: DMatrix<Complex64>,
    pub a22_prime: DMatrix<Complex64>,
    pub y_minus_c_v: DMatrix<Complex64>,
    pub y_minus_c_mv: DMatrix<Complex64>,
    /// Diagonal `ĥα_jε_j` over the impedance buses.
    pub y_i_diag: Vec<Complex64>,
}

/// Build the per-phase admittance matrix and reduced submatrices.
pub fn build_per_phase(spec: &BalancedSpec) -> PerPhaseModel {
    let n = spec.n_buses();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for (j, sh) in spec.shunts.iter().enumerate() {
        y[(j, j)] += *sh;
    }
    for line in &spec.lines {
        y[(line.from, line.from)] += line.eta_s + line.eta_m_from;
        y[(line.to, line.to)] += line.eta_s + line.eta_m_to;
        y[(line.from, line.to)] -= line.eta_s;
        y[(line.to, line.from)] -= line.eta_s;
    }

    let mut n_v = Vec::new();
    let mut n_c = Vec::new();
    let mut n_i = Vec::new();
    for (j, dev) in spec.devices.iter().enumerate() {
        if dev.is_voltage_source() {
            n_v.push(j);
        } else if dev.is_current_source() {
            n_c.push(j);
        } else {
            n_i.push(j);
        }
    }

    let mv: Vec<usize> = n_c.iter().chain(n_i.iter()).copied().collect();
    let rows_minus_c: Vec<usize> = n_v.iter().chain(n_i.iter()).copied().collect();

    let submatrix = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| y[(rows[r], cols[c])])
    };

    let a21 = submatrix(&mv, &n_v);
    let a22 = submatrix(&mv, &mv);
    let y_i_diag: Vec<Complex64> = n_i
        .iter()
        .map(|&j| spec.devices[j].hat_alpha() * impedance_epsilon(&spec.devices[j]))
        .collect();
    let mut a22_prime = a22.clone();
    for (k, d) in y_i_diag.iter().enumerate() {
        let slot = n_c.len() + k;
        a22_prime[(slot, slot)] += *d;
    }

    PerPhaseModel {
        y_minus_c_v: submatrix(&rows_minus_c, &n_v),
        y_minus_c_mv: submatrix(&rows_minus_c, &mv),
        y_1phi: y,
        n_v,
        n_c,
        n_i,
        a21,
        a22,
        a22_prime,
        y_i_diag,
    }
}

fn impedance_epsilon(dev: &BalancedDevice) -> Complex64 {
    match dev {
        BalancedDevice::ImpedanceY { epsilon, .. }
        | BalancedDevice::ImpedanceDelta { epsilon, .. } => *epsilon,
        _ => cx(0.0, 0.0),
    }
}

/// Scalar solution of the per-phase network, with the optional zero-sequence
/// extension extracted from a full solve.
#[derive(Debug, Clone)]
pub struct PerPhaseSolution {
    pub v: Vec<Complex64>,
    pub i: Vec<Complex64>,
    /// `‖i - Y^{1φ}v‖∞`.
    pub residual: f64,
    pub zero_seq: Option<ZeroSequence>,
}

/// Per-bus zero-sequence components of the terminal quantities.
#[derive(Debug, Clone)]
pub struct ZeroSequence {
    pub gamma: Vec<Complex64>,
    pub beta: Vec<Complex64>,
}

/// Solve the per-phase network: pinned `v_v = ĥα_jλ_j` and `i_c = -ĥα_jμ_j`,
/// reduced solve for the remaining voltages, back-substitution for the
/// remaining currents.
pub fn solve_per_phase(
    model: &PerPhaseModel,
    spec: &BalancedSpec,
) -> Result<PerPhaseSolution, PerPhaseError> {
    let n = spec.n_buses();
    let m = model.n_c.len() + model.n_i.len();

    let v_v = DVector::from_iterator(
        model.n_v.len(),
        model.n_v.iter().map(|&j| {
            let dev = &spec.devices[j];
            dev.hat_alpha() * voltage_lambda(dev)
        }),
    );
    let mut i_minus_v = DVector::<Complex64>::zeros(m);
    for (slot, &j) in model.n_c.iter().enumerate() {
        i_minus_v[slot] = -spec.devices[j].hat_alpha() * current_mu(&spec.devices[j]);
    }

    let b = &i_minus_v - &model.a21 * &v_v;
    let lu = DenseLu::factor(model.a22_prime.clone());
    let rcond = lu.rcond();
    if rcond < PER_PHASE_RCOND_MIN {
        return Err(PerPhaseError::SingularReducedSystem { rcond });
    }
    let v_mv = lu
        .solve(&b)
        .ok_or(PerPhaseError::SingularReducedSystem { rcond: 0.0 })?;

    let mut v = vec![cx(0.0, 0.0); n];
    for (slot, &j) in model.n_v.iter().enumerate() {
        v[j] = v_v[slot];
    }
    for (slot, &j) in model.n_c.iter().chain(model.n_i.iter()).enumerate() {
        v[j] = v_mv[slot];
    }

    let mut i = vec![cx(0.0, 0.0); n];
    for (slot, &j) in model.n_c.iter().enumerate() {
        i[j] = i_minus_v[slot];
    }
    let i_minus_c = &model.y_minus_c_v * &v_v + &model.y_minus_c_mv * &v_mv;
    for (slot, &j) in model.n_v.iter().chain(model.n_i.iter()).enumerate() {
        i[j] = i_minus_c[slot];
    }

    let residual = {
        let v_vec = DVector::from_column_slice(&v);
        let yv = &model.y_1phi * &v_vec;
        (0..n)
            .map(|j| (i[j] - yv[j]).norm())
            .fold(0.0, f64::max)
    };

    Ok(PerPhaseSolution {
        v,
        i,
        residual,
        zero_seq: None,
    })
}

fn voltage_lambda(dev: &BalancedDevice) -> Complex64 {
    match dev {
        BalancedDevice::VoltageY { lambda, .. } | BalancedDevice::VoltageDelta { lambda, .. } => {
            *lambda
        }
        _ => cx(0.0, 0.0),
    }
}

fn current_mu(dev: &BalancedDevice) -> Complex64 {
    match dev {
        BalancedDevice::CurrentY { mu, .. } | BalancedDevice::CurrentDelta { mu } => *mu,
        _ => cx(0.0, 0.0),
    }
}

/// Lift the scalar solution back to three phases and recover every internal
/// state.
///
/// With `assume_zero_sequence_free` the lift is `V = v⊗α₊`, `I = i⊗α₊`;
/// otherwise the solution's `(γ̃, β̃)` extension is required and added along
/// `𝟏`. Internal recovery applies the ordinary conversion rules to the lifted
/// terminal quantities with each device's specified γ/β.
pub fn lift(
    pp: &PerPhaseSolution,
    spec: &BalancedSpec,
    assume_zero_sequence_free: bool,
) -> Result<Solution, PerPhaseError> {
    let n = spec.n_buses();
    let (gamma_tilde, beta_tilde): (Vec<Complex64>, Vec<Complex64>) = if assume_zero_sequence_free
    {
        (vec![cx(0.0, 0.0); n], vec![cx(0.0, 0.0); n])
    } else {
        let zs = pp
            .zero_seq
            .as_ref()
            .ok_or(PerPhaseError::MissingZeroSequence)?;
        (zs.gamma.clone(), zs.beta.clone())
    };

    let net = spec.to_network();
    let buses: Vec<BusState> = (0..n)
        .map(|j| {
            let v = alpha_plus() * pp.v[j] + C3::splat(gamma_tilde[j]);
            let i = alpha_plus() * pp.i[j] + C3::splat(beta_tilde[j]);
            BusState {
                terminal: TerminalState::from_vi(v, i),
                internal: recover_internal(&net.buses()[j].device, &v, &i),
            }
        })
        .collect();

    let v: Vec<C3> = buses.iter().map(|b| b.terminal.v).collect();
    let lines: Vec<LineFlow> = net
        .lines()
        .iter()
        .map(|line| {
            let (i_from, i_to) = crate::network::line_flow(line, &v[line.from], &v[line.to]);
            LineFlow {
                i_from,
                i_to,
                s_from: crate::network::line_power_matrix(&v[line.from], &i_from),
                s_to: crate::network::line_power_matrix(&v[line.to], &i_to),
            }
        })
        .collect();

    let mut solution = Solution {
        buses,
        lines,
        diagnostics: Default::default(),
    };
    solution.diagnostics =
        solver::residuals(&net, &solution).expect("lift builds shape-consistent solution");
    Ok(solution)
}

/// Extended zero-sequence decomposition of a full solution against the
/// per-phase one.
#[derive(Debug, Clone)]
pub struct ExtendedDecomposition {
    /// Zero-sequence component of each terminal voltage.
    pub gamma_tilde: Vec<Complex64>,
    /// Zero-sequence component of each terminal current.
    pub beta_tilde: Vec<Complex64>,
    pub max_negative_voltage: f64,
    pub max_negative_current: f64,
    /// Largest mismatch between positive-sequence components and the
    /// per-phase `(v, i)`.
    pub max_positive_mismatch: f64,
    /// Negative-sequence content plus positive-sequence mismatch; near zero
    /// for a genuinely balanced network.
    pub residual: f64,
}

/// Split every terminal quantity of `full` into sequence components and
/// check them against the per-phase solution: the zero parts are `(γ̃, β̃)`,
/// the positive parts must match `(v, i)`, and the negative parts must
/// vanish.
pub fn decompose_extended(full: &Solution, pp: &PerPhaseSolution) -> ExtendedDecomposition {
    assert_eq!(
        full.buses.len(),
        pp.v.len(),
        "full and per-phase solutions describe different networks"
    );
    let mut gamma_tilde = Vec::with_capacity(pp.v.len());
    let mut beta_tilde = Vec::with_capacity(pp.v.len());
    let mut max_neg_v = 0.0f64;
    let mut max_neg_i = 0.0f64;
    let mut max_pos = 0.0f64;
    for (j, bus) in full.buses.iter().enumerate() {
        let sv = sequence_components(&bus.terminal.v);
        let si = sequence_components(&bus.terminal.i);
        gamma_tilde.push(sv.zero);
        beta_tilde.push(si.zero);
        max_neg_v = max_neg_v.max(sv.negative.norm());
        max_neg_i = max_neg_i.max(si.negative.norm());
        max_pos = max_pos
            .max((sv.positive - pp.v[j]).norm())
            .max((si.positive - pp.i[j]).norm());
    }
    ExtendedDecomposition {
        gamma_tilde,
        beta_tilde,
        max_negative_voltage: max_neg_v,
        max_negative_current: max_neg_i,
        max_positive_mismatch: max_pos,
        residual: max_neg_v.max(max_neg_i) + max_pos,
    }
}

/// Attach a zero-sequence extension to a per-phase solution so it can be
/// lifted without the zero-γ assumption.
pub fn with_zero_sequence(mut pp: PerPhaseSolution, decomp: &ExtendedDecomposition) -> PerPhaseSolution {
    pp.zero_seq = Some(ZeroSequence {
        gamma: decomp.gamma_tilde.clone(),
        beta: decomp.beta_tilde.clone(),
    });
    pp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::external_model;
    use crate::network::assemble;
    use crate::phasor::{alpha_minus, gamma as gamma_mat};

    fn two_bus_spec() -> BalancedSpec {
        BalancedSpec {
            bus_ids: vec!["src".into(), "load".into()],
            devices: vec![
                BalancedDevice::VoltageY {
                    lambda: cx(1.0, 0.0),
                    gamma: cx(0.0, 0.0),
                },
                BalancedDevice::ImpedanceY {
                    epsilon: cx(1.0, 0.0),
                    gamma: cx(0.0, 0.0),
                },
            ],
            shunts: vec![cx(0.0, 0.0); 2],
            lines: vec![BalancedLine {
                from: 0,
                to: 1,
                eta_s: cx(1.0, 0.0),
                eta_m_from: cx(0.0, 0.0),
                eta_m_to: cx(0.0, 0.0),
            }],
        }
    }

    #[test]
    fn check_balanced_accepts_balanced_network() {
        let net = two_bus_spec().to_network();
        let spec = check_balanced(&net, BALANCE_TOL_DEFAULT).unwrap();
        match spec.devices[0] {
            BalancedDevice::VoltageY { lambda, .. } => {
                assert!((lambda - cx(1.0, 0.0)).norm() <= 1e-14)
            }
            ref other => panic!("unexpected {other:?}"),
        }
        assert!((spec.lines[0].eta_s - cx(1.0, 0.0)).norm() <= 1e-14);
    }

    #[test]
    fn check_balanced_reports_perturbed_line() {
        let mut net = two_bus_spec().to_network();
        // re-create with a perturbed off-diagonal entry in the series block
        let mut y_series = net.lines()[0].y_series;
        y_series.0[0][1] += cx(1e-3, 0.0);
        let buses = net.buses().to_vec();
        net = Network::new(
            buses,
            vec![LineSpec {
                y_series,
                ..net.lines()[0]
            }],
        )
        .unwrap();
        let report = check_balanced(&net, BALANCE_TOL_DEFAULT).unwrap_err();
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert!(v.element.contains("line src-load"), "element: {}", v.element);
        assert!(
            v.magnitude > 1e-4 && v.magnitude < 1e-2,
            "magnitude {:.3e}",
            v.magnitude
        );
    }

    #[test]
    fn check_balanced_flags_negative_sequence_source() {
        let mut spec = two_bus_spec();
        spec.devices[0] = BalancedDevice::VoltageY {
            lambda: cx(1.0, 0.0),
            gamma: cx(0.0, 0.0),
        };
        let mut net = spec.to_network();
        let buses = {
            let mut b = net.buses().to_vec();
            b[0].device = DeviceSpec::VoltageSourceDelta {
                e: alpha_minus(),
                gamma: cx(0.0, 0.0),
                beta: cx(0.0, 0.0),
            };
            b
        };
        net = Network::new(buses, net.lines().to_vec()).unwrap();
        let report = check_balanced(&net, BALANCE_TOL_DEFAULT).unwrap_err();
        assert_eq!(report.violations.len(), 1);
        // a pure negative-sequence source: unbalanced content has full weight
        assert!((report.violations[0].magnitude - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn per_phase_matrix_two_bus() {
        let spec = two_bus_spec();
        let model = build_per_phase(&spec);
        let eta = cx(1.0, 0.0);
        assert!((model.y_1phi[(0, 0)] - eta).norm() <= 1e-15);
        assert!((model.y_1phi[(1, 1)] - eta).norm() <= 1e-15);
        assert!((model.y_1phi[(0, 1)] + eta).norm() <= 1e-15);
        assert!((model.y_1phi[(1, 0)] + eta).norm() <= 1e-15);
        // a22' differs from a22 exactly by the padded device diagonal
        let mut padded = model.a22.clone();
        padded[(0, 0)] += model.y_i_diag[0];
        assert_eq!(model.a22_prime, padded);
    }

    #[test]
    fn kronecker_structure_matches_assembly() {
        let spec = two_bus_spec();
        let model = build_per_phase(&spec);
        let y3 = assemble(&spec.to_network());
        for j in 0..2 {
            for k in 0..2 {
                let expected = C3x3::identity() * model.y_1phi[(j, k)];
                assert!((y3.block(j, k) - expected).norm_max() <= 1e-13);
            }
        }
    }

    #[test]
    fn per_phase_two_bus_solution() {
        let spec = two_bus_spec();
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();
        assert!((pp.v[1] - cx(0.5, 0.0)).norm() <= 1e-13);
        assert!((pp.i[1] + cx(0.5, 0.0)).norm() <= 1e-13);
        assert!((pp.i[0] - cx(0.5, 0.0)).norm() <= 1e-13);
        assert!(pp.residual <= 1e-13);
    }

    #[test]
    fn lifted_internal_power_of_load() {
        let spec = two_bus_spec();
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();
        let sol = lift(&pp, &spec, true).unwrap();
        // s^Y = -v·ī across all three phases of the load
        let expected = C3::ones() * cx(0.25, 0.0);
        assert!((sol.buses[1].internal.s_int - expected).norm_inf() <= 1e-13);
        assert!(sol.diagnostics.network_residual <= 1e-12);
    }

    #[test]
    fn delta_device_rows_reproduce_external_models() {
        // per-phase terminal values for Δ devices must equal the
        // three-phase external models of the materialized specs
        let lambda = cx(0.9, -0.2);
        let spec = BalancedSpec {
            bus_ids: vec!["src".into(), "load".into()],
            devices: vec![
                BalancedDevice::VoltageDelta {
                    lambda,
                    gamma: cx(0.0, 0.0),
                    beta: cx(0.1, 0.0),
                },
                BalancedDevice::ImpedanceDelta {
                    epsilon: cx(0.8, 0.1),
                    beta: cx(0.0, 0.0),
                },
            ],
            shunts: vec![cx(0.0, 0.0); 2],
            lines: vec![BalancedLine {
                from: 0,
                to: 1,
                eta_s: cx(1.5, -0.3),
                eta_m_from: cx(0.0, 0.0),
                eta_m_to: cx(0.0, 0.0),
            }],
        };
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();
        let sol = lift(&pp, &spec, true).unwrap();

        match external_model(&spec.devices[0].to_device_spec()).unwrap() {
            crate::devices::ExternalRelation::FixedVoltage { v } => {
                assert!((sol.buses[0].terminal.v - v).norm_inf() <= 1e-13)
            }
            other => panic!("unexpected {other:?}"),
        }
        // lifted Δ impedance current obeys its admittance relation
        let i1 = sol.buses[1].terminal.i;
        let v1 = sol.buses[1].terminal.v;
        let y_delta = (C3x3::identity() * 3.0 - C3x3::ones()) * cx(0.8, 0.1);
        assert!((i1 + y_delta * v1).norm_inf() <= 1e-12);
    }

    #[test]
    fn lift_beta_keeps_delta_current_in_plane() {
        // with β = 0 the recovered internal Δ current stays in span(α₊)
        let mut spec = two_bus_spec();
        spec.devices[1] = BalancedDevice::ImpedanceDelta {
            epsilon: cx(1.0, 0.0),
            beta: cx(0.0, 0.0),
        };
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();
        let sol = lift(&pp, &spec, true).unwrap();
        let s = sequence_components(&sol.buses[1].internal.i_int);
        assert!(s.zero.norm() <= 1e-13);
        assert!(s.negative.norm() <= 1e-13);

        // with β ≠ 0 the zero-sequence loop current appears
        spec.devices[1] = BalancedDevice::ImpedanceDelta {
            epsilon: cx(1.0, 0.0),
            beta: cx(0.3, 0.1),
        };
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();
        let sol = lift(&pp, &spec, true).unwrap();
        let s = sequence_components(&sol.buses[1].internal.i_int);
        assert!((s.zero - cx(0.3, 0.1)).norm() <= 1e-13);
    }

    #[test]
    fn lift_with_zero_sequence_mixes_basis_terms() {
        // lift with explicit (γ̃, β̃): the Y-device internal power picks up
        // an α₋ term with coefficient (γ - γ̃)·ī
        let spec = two_bus_spec();
        let model = build_per_phase(&spec);
        let mut pp = solve_per_phase(&model, &spec).unwrap();
        let g1 = cx(0.2, -0.4);
        pp.zero_seq = Some(ZeroSequence {
            gamma: vec![cx(0.0, 0.0), g1],
            beta: vec![cx(0.0, 0.0), cx(0.0, 0.0)],
        });
        let sol = lift(&pp, &spec, false).unwrap();
        let s_int = sol.buses[1].internal.s_int;
        let comps = sequence_components(&s_int);
        // spec γ of the load is 0, its lifted zero-sequence voltage is g1
        let expected_neg = (cx(0.0, 0.0) - g1) * pp.i[1].conj();
        assert!((comps.negative - expected_neg).norm() <= 1e-13);

        // requesting the plain lift path with missing zero_seq fails
        let bare = solve_per_phase(&model, &spec).unwrap();
        assert!(matches!(
            lift(&bare, &spec, false),
            Err(PerPhaseError::MissingZeroSequence)
        ));
    }

    #[test]
    fn voltage_sources_only_leaves_nothing_to_reduce() {
        // both buses pinned: the reduced system is empty and the currents
        // come straight from the per-phase admittance rows
        let mut spec = two_bus_spec();
        spec.devices[1] = BalancedDevice::VoltageY {
            lambda: cx(0.4, 0.0),
            gamma: cx(0.0, 0.0),
        };
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();
        assert!((pp.v[0] - cx(1.0, 0.0)).norm() <= 1e-15);
        assert!((pp.v[1] - cx(0.4, 0.0)).norm() <= 1e-15);
        assert!((pp.i[0] - cx(0.6, 0.0)).norm() <= 1e-13);
        assert!((pp.i[1] + cx(0.6, 0.0)).norm() <= 1e-13);
        assert!(pp.residual <= 1e-14);
    }

    #[test]
    fn singular_reduced_system_guard() {
        // a current-source bus behind an electrically dead line has no path
        // to the reference: the reduced row is exactly zero
        let mut spec = two_bus_spec();
        spec.devices[1] = BalancedDevice::CurrentY {
            mu: cx(1.0, 0.0),
            gamma: cx(0.0, 0.0),
        };
        spec.lines[0].eta_s = cx(0.0, 0.0);
        let model = build_per_phase(&spec);
        assert!(matches!(
            solve_per_phase(&model, &spec),
            Err(PerPhaseError::SingularReducedSystem { .. })
        ));
    }

    #[test]
    fn decompose_flags_unbalanced_solution() {
        let spec = two_bus_spec();
        let model = build_per_phase(&spec);
        let pp = solve_per_phase(&model, &spec).unwrap();

        // full-solve an unbalanced variant of the same network
        let net = spec.to_network();
        let mut buses = net.buses().to_vec();
        buses[1].device = DeviceSpec::ImpedanceY {
            z: C3x3::identity() + gamma_mat() * cx(0.2, 0.0),
            gamma: cx(0.0, 0.0),
        };
        let unbalanced = Network::new(buses, net.lines().to_vec()).unwrap();
        let full = crate::solver::solve(&unbalanced).unwrap();
        let d = decompose_extended(&full, &pp);
        assert!(d.residual > 1e-3, "residual {:.3e}", d.residual);
    }

    #[test]
    fn zero_sequence_free_predicate() {
        let mut spec = two_bus_spec();
        assert!(spec.zero_sequence_free());
        spec.devices[0] = BalancedDevice::VoltageY {
            lambda: cx(1.0, 0.0),
            gamma: cx(0.5, 0.0),
        };
        assert!(!spec.zero_sequence_free());
        // γ on a Y current source does not enter the network equations
        spec.devices[0] = BalancedDevice::VoltageY {
            lambda: cx(1.0, 0.0),
            gamma: cx(0.0, 0.0),
        };
        spec.devices[1] = BalancedDevice::CurrentY {
            mu: cx(1.0, 0.0),
            gamma: cx(0.7, 0.0),
        };
        assert!(spec.zero_sequence_free());
    }
}
