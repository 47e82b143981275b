//! Device models: internal behavior, Y/Δ conversion rules, and the derived
//! external (terminal-level) models.
//!
//! A three-phase single-terminal device is described twice. The *internal*
//! model relates the voltages/currents/powers across its three constituent
//! single-phase elements and depends only on the element type (source or
//! impedance). The *conversion rule* maps internal variables to terminal
//! variables and depends only on the configuration (Y or Δ). Composing the
//! two yields the external model the network solver consumes; every device
//! reduces to one of three canonical relations ([`ExternalRelation`]).
//!
//! Sign conventions: internal current and power are taken in the direction
//! *through* each single-phase element; terminal current and power are
//! injections *out of* the device into the network.

use crate::phasor::{
    alpha_plus, cx, gamma, gamma_t, range_tolerance, sequence_components, C3, C3x3,
};
use num_complex::Complex64;
use thiserror::Error;

/// Reciprocal-condition threshold below which an impedance matrix is treated
/// as singular.
pub const IMPEDANCE_RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    /// Terminal currents of a Δ device must sum to zero (KCL) before the
    /// internal current can be recovered.
    #[error("KCL violated: |sum I| = {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    KclViolation { residual: f64, tolerance: f64 },
    /// Internal Δ voltages must sum to zero (KVL around the loop).
    #[error("KVL violated: |sum E| = {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    KvlViolation { residual: f64, tolerance: f64 },
    /// A vector that must lie in the range of `Γ`/`Γᵀ` does not.
    #[error("vector not in range of the conversion map: residual {residual:.3e} > {tolerance:.3e}")]
    NotInRange { residual: f64, tolerance: f64 },
    /// Impedance matrix is not invertible to working precision.
    #[error("impedance matrix is singular to working precision (rcond = {rcond:.3e})")]
    SingularImpedance { rcond: f64 },
    /// Operation applied to a device kind it is not defined for.
    #[error("wrong device kind: expected {expected}, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
}

/// Specification of one three-phase device, as given in an analysis problem.
///
/// The fields are exactly the quantities a problem must pin down: source
/// vectors, impedance matrices, neutral voltages `gamma` for Y devices,
/// zero-sequence terminal voltage `gamma` for Δ voltage sources, and loop
/// currents `beta` where internal Δ currents must be recoverable.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceSpec {
    /// Ideal Y voltage source: internal voltage fixed at `e`, neutral at `gamma`.
    VoltageSourceY { e: C3, gamma: Complex64 },
    /// Ideal Δ voltage source: internal line-to-line voltage fixed at `e`
    /// (entries must sum to zero), terminal zero-sequence voltage `gamma`,
    /// loop current `beta`.
    VoltageSourceDelta {
        e: C3,
        gamma: Complex64,
        beta: Complex64,
    },
    /// Ideal Y current source: internal current fixed at `j`, neutral at `gamma`.
    CurrentSourceY { j: C3, gamma: Complex64 },
    /// Ideal Δ current source: internal loop currents fixed at `j`.
    CurrentSourceDelta { j: C3 },
    /// Y-configured impedance `z` with neutral voltage `gamma`.
    ImpedanceY { z: C3x3, gamma: Complex64 },
    /// Δ-configured impedance `z` with loop current `beta`.
    ImpedanceDelta { z: C3x3, beta: Complex64 },
}

impl DeviceSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DeviceSpec::VoltageSourceY { .. } => "voltage source (Y)",
            DeviceSpec::VoltageSourceDelta { .. } => "voltage source (Δ)",
            DeviceSpec::CurrentSourceY { .. } => "current source (Y)",
            DeviceSpec::CurrentSourceDelta { .. } => "current source (Δ)",
            DeviceSpec::ImpedanceY { .. } => "impedance (Y)",
            DeviceSpec::ImpedanceDelta { .. } => "impedance (Δ)",
        }
    }

    pub fn is_voltage_source(&self) -> bool {
        matches!(
            self,
            DeviceSpec::VoltageSourceY { .. } | DeviceSpec::VoltageSourceDelta { .. }
        )
    }

    pub fn is_current_source(&self) -> bool {
        matches!(
            self,
            DeviceSpec::CurrentSourceY { .. } | DeviceSpec::CurrentSourceDelta { .. }
        )
    }

    pub fn is_impedance(&self) -> bool {
        matches!(
            self,
            DeviceSpec::ImpedanceY { .. } | DeviceSpec::ImpedanceDelta { .. }
        )
    }

    pub fn is_delta(&self) -> bool {
        matches!(
            self,
            DeviceSpec::VoltageSourceDelta { .. }
                | DeviceSpec::CurrentSourceDelta { .. }
                | DeviceSpec::ImpedanceDelta { .. }
        )
    }

    /// The specified `gamma` parameter, when the spec carries one.
    pub fn gamma_spec(&self) -> Option<Complex64> {
        match self {
            DeviceSpec::VoltageSourceY { gamma, .. }
            | DeviceSpec::VoltageSourceDelta { gamma, .. }
            | DeviceSpec::CurrentSourceY { gamma, .. }
            | DeviceSpec::ImpedanceY { gamma, .. } => Some(*gamma),
            DeviceSpec::CurrentSourceDelta { .. } | DeviceSpec::ImpedanceDelta { .. } => None,
        }
    }

    /// The specified loop current `beta`, when the spec carries one. For a Δ
    /// current source this is implied by the given internal current.
    pub fn beta_spec(&self) -> Option<Complex64> {
        match self {
            DeviceSpec::VoltageSourceDelta { beta, .. }
            | DeviceSpec::ImpedanceDelta { beta, .. } => Some(*beta),
            DeviceSpec::CurrentSourceDelta { j } => Some(j.sum() / 3.0),
            _ => None,
        }
    }

    /// Check the build-time invariants: KVL on Δ voltage sources, finite
    /// entries, and impedance invertibility.
    pub fn validate(&self) -> Result<(), DeviceError> {
        let finite = match self {
            DeviceSpec::VoltageSourceY { e, gamma } => e.is_finite() && gamma.is_finite(),
            DeviceSpec::VoltageSourceDelta { e, gamma, beta } => {
                e.is_finite() && gamma.is_finite() && beta.is_finite()
            }
            DeviceSpec::CurrentSourceY { j, gamma } => j.is_finite() && gamma.is_finite(),
            DeviceSpec::CurrentSourceDelta { j } => j.is_finite(),
            DeviceSpec::ImpedanceY { z, gamma } => z.is_finite() && gamma.is_finite(),
            DeviceSpec::ImpedanceDelta { z, beta } => z.is_finite() && beta.is_finite(),
        };
        if !finite {
            return Err(DeviceError::NotInRange {
                residual: f64::INFINITY,
                tolerance: 0.0,
            });
        }
        match self {
            DeviceSpec::VoltageSourceDelta { e, .. } => {
                let residual = e.sum().norm();
                let tolerance = range_tolerance(e.norm_inf());
                if residual > tolerance {
                    return Err(DeviceError::KvlViolation {
                        residual,
                        tolerance,
                    });
                }
            }
            DeviceSpec::ImpedanceY { z, .. } | DeviceSpec::ImpedanceDelta { z, .. } => {
                let rcond = z.rcond_one();
                if rcond < IMPEDANCE_RCOND_MIN {
                    return Err(DeviceError::SingularImpedance { rcond });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Terminal (bus-level) state of a device: voltage, injection current, and
/// injection power `s = diag(V Iᴴ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalState {
    pub v: C3,
    pub i: C3,
    pub s: C3,
}

impl TerminalState {
    pub fn from_vi(v: C3, i: C3) -> Self {
        let s = v.outer(&i).diag();
        TerminalState { v, i, s }
    }
}

/// Internal state across the three single-phase elements, plus the
/// zero-sequence quantities. `beta` is absent for Y devices — there is no
/// loop for current to circulate in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalState {
    pub v_int: C3,
    pub i_int: C3,
    pub s_int: C3,
    pub gamma: Complex64,
    pub beta: Option<Complex64>,
}

/// Canonical linear relation a device imposes on its terminal variables.
///
/// Every ideal source or impedance reduces to one of these three, which is
/// all the solver needs to know about a bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExternalRelation {
    /// Terminal voltage pinned: `V = v`.
    FixedVoltage { v: C3 },
    /// Terminal injection pinned: `I = i`.
    FixedCurrent { i: C3 },
    /// Affine admittance relation: `I = -y_eff·V + i_offset`.
    Admittance { y_eff: C3x3, i_offset: C3 },
}

/// Recover Y-internal state from terminal state: `V^Y = V - γ𝟏`, `I^Y = -I`.
pub fn y_internal_from_terminal(v: &C3, i: &C3, gamma: Complex64) -> InternalState {
    let v_int = *v - C3::splat(gamma);
    let i_int = -*i;
    InternalState {
        v_int,
        i_int,
        s_int: v_int.outer(&i_int).diag(),
        gamma,
        beta: None,
    }
}

fn delta_internal_unchecked(v: &C3, i: &C3, beta: Complex64) -> InternalState {
    let v_int = gamma() * *v;
    let i_int = gamma() * *i * (-1.0 / 3.0) + C3::splat(beta);
    InternalState {
        v_int,
        i_int,
        s_int: v_int.outer(&i_int).diag(),
        gamma: v.sum() / 3.0,
        beta: Some(beta),
    }
}

/// Recover Δ-internal state from terminal state: `V^Δ = ΓV`,
/// `I^Δ = -(1/3)ΓI + β𝟏`. Requires the terminal currents to satisfy KCL
/// (`𝟏ᵀI = 0`), otherwise no internal current reproduces them.
pub fn delta_internal_from_terminal(
    v: &C3,
    i: &C3,
    beta: Complex64,
) -> Result<InternalState, DeviceError> {
    let residual = i.sum().norm();
    let tolerance = range_tolerance(i.norm_inf());
    if residual > tolerance {
        return Err(DeviceError::KclViolation {
            residual,
            tolerance,
        });
    }
    Ok(delta_internal_unchecked(v, i, beta))
}

/// Terminal power of a Δ device from its internal state. The terminal
/// voltage is only determined up to its zero-sequence part, which `gamma`
/// supplies; the *total* terminal power is independent of it.
pub fn delta_terminal_power(
    v_int: &C3,
    i_int: &C3,
    gamma_zero_seq: Complex64,
) -> Result<C3, DeviceError> {
    let residual = v_int.sum().norm();
    let tolerance = range_tolerance(v_int.norm_inf());
    if residual > tolerance {
        return Err(DeviceError::NotInRange {
            residual,
            tolerance,
        });
    }
    let v = gamma_t() * *v_int * (1.0 / 3.0) + C3::splat(gamma_zero_seq);
    let i = -(gamma_t() * *i_int);
    Ok(v.outer(&i).diag())
}

/// Internal power of a Δ device from its terminal state. The internal
/// current is only determined up to the loop flow `beta`; the *total*
/// internal power is independent of it.
pub fn delta_internal_power(v: &C3, i: &C3, beta: Complex64) -> Result<C3, DeviceError> {
    Ok(delta_internal_from_terminal(v, i, beta)?.s_int)
}

/// Derive the canonical terminal-level relation for a device.
pub fn external_model(spec: &DeviceSpec) -> Result<ExternalRelation, DeviceError> {
    match spec {
        DeviceSpec::VoltageSourceY { e, gamma } => Ok(ExternalRelation::FixedVoltage {
            v: *e + C3::splat(*gamma),
        }),
        DeviceSpec::VoltageSourceDelta { e, gamma, .. } => Ok(ExternalRelation::FixedVoltage {
            v: gamma_t() * *e * (1.0 / 3.0) + C3::splat(*gamma),
        }),
        DeviceSpec::CurrentSourceY { j, .. } => Ok(ExternalRelation::FixedCurrent { i: -*j }),
        DeviceSpec::CurrentSourceDelta { j } => Ok(ExternalRelation::FixedCurrent {
            i: -(gamma_t() * *j),
        }),
        DeviceSpec::ImpedanceY { z, gamma } => {
            let y = invert_impedance(z)?;
            Ok(ExternalRelation::Admittance {
                y_eff: y,
                i_offset: y * C3::splat(*gamma),
            })
        }
        DeviceSpec::ImpedanceDelta { z, .. } => {
            let y = invert_impedance(z)?;
            Ok(ExternalRelation::Admittance {
                y_eff: gamma_t() * y * gamma(),
                i_offset: C3::zero(),
            })
        }
    }
}

fn invert_impedance(z: &C3x3) -> Result<C3x3, DeviceError> {
    let rcond = z.rcond_one();
    if rcond < IMPEDANCE_RCOND_MIN {
        return Err(DeviceError::SingularImpedance { rcond });
    }
    // rcond above the floor implies the inverse exists
    Ok(z.inverse().expect("invertible by rcond check"))
}

/// Rewrite a Δ source as the Y source with identical external behavior:
/// `E^Y = (1/3)ΓᵀE^Δ` (same `gamma`) for voltage sources, `J^Y = ΓᵀJ^Δ` for
/// current sources — both devices then inject the same terminal current
/// `I = -J^Y = -ΓᵀJ^Δ`. The Y equivalent of a current source gets
/// `gamma = 0`; only internal-variable recovery depends on that choice.
pub fn delta_to_y(spec: &DeviceSpec) -> Result<DeviceSpec, DeviceError> {
    match spec {
        DeviceSpec::VoltageSourceDelta { e, gamma, .. } => Ok(DeviceSpec::VoltageSourceY {
            e: gamma_t() * *e * (1.0 / 3.0),
            gamma: *gamma,
        }),
        DeviceSpec::CurrentSourceDelta { j } => Ok(DeviceSpec::CurrentSourceY {
            j: gamma_t() * *j,
            gamma: cx(0.0, 0.0),
        }),
        other => Err(DeviceError::WrongKind {
            expected: "Δ voltage or current source",
            found: other.kind_name(),
        }),
    }
}

/// Recover the internal state of a device from the solved terminal state,
/// using the parameters carried by its spec.
///
/// Δ voltage sources are recovered without the KCL pre-check: their terminal
/// current is a free unknown of the analysis and a nonzero `𝟏ᵀI` is reported
/// as a diagnostic rather than an error.
pub fn recover_internal(spec: &DeviceSpec, v: &C3, i: &C3) -> InternalState {
    match spec {
        DeviceSpec::VoltageSourceY { gamma, .. }
        | DeviceSpec::CurrentSourceY { gamma, .. }
        | DeviceSpec::ImpedanceY { gamma, .. } => y_internal_from_terminal(v, i, *gamma),
        DeviceSpec::VoltageSourceDelta { beta, .. } => delta_internal_unchecked(v, i, *beta),
        DeviceSpec::ImpedanceDelta { beta, .. } => delta_internal_unchecked(v, i, *beta),
        DeviceSpec::CurrentSourceDelta { j } => {
            let v_int = gamma() * *v;
            InternalState {
                v_int,
                i_int: *j,
                s_int: v_int.outer(j).diag(),
                gamma: v.sum() / 3.0,
                beta: Some(j.sum() / 3.0),
            }
        }
    }
}

/// A balanced positive-sequence Y voltage source `E = λα₊`.
pub fn balanced_voltage_source_y(lambda: Complex64, gamma: Complex64) -> DeviceSpec {
    DeviceSpec::VoltageSourceY {
        e: alpha_plus() * lambda,
        gamma,
    }
}

/// Scaling applied by the conversion map to a balanced Δ source converted to
/// its Y equivalent: `1/(√3·e^{iπ/6})` for voltages.
pub fn delta_to_y_voltage_ratio() -> Complex64 {
    cx(1.0, 0.0) / (3.0f64.sqrt() * Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_6))
}

/// Ratio of the Y-equivalent parameter to the Δ parameter for balanced
/// current sources: `√3·e^{-iπ/6}`. The terminal injection of both devices
/// is the negation of the Y parameter, so the injection-to-`J^Δ` ratio
/// carries an extra factor of `e^{iπ}`.
pub fn delta_to_y_current_ratio() -> Complex64 {
    Complex64::from_polar(3.0f64.sqrt(), -std::f64::consts::FRAC_PI_6)
}

/// Class-dependent scalar relating a balanced device's internal parameter to
/// its terminal quantity: 1 for Y devices, `(1-α²)/3` for Δ voltage sources,
/// `1-α²` for Δ current sources, and 3 for Δ impedances.
pub fn hat_alpha(spec: &DeviceSpec) -> Complex64 {
    let a = crate::phasor::alpha();
    let one_minus_a2 = cx(1.0, 0.0) - a * a;
    match spec {
        DeviceSpec::VoltageSourceY { .. }
        | DeviceSpec::CurrentSourceY { .. }
        | DeviceSpec::ImpedanceY { .. } => cx(1.0, 0.0),
        DeviceSpec::VoltageSourceDelta { .. } => one_minus_a2 / 3.0,
        DeviceSpec::CurrentSourceDelta { .. } => one_minus_a2,
        DeviceSpec::ImpedanceDelta { .. } => cx(3.0, 0.0),
    }
}

/// Positive-sequence content of a source vector under the 1/3-projection
/// convention, i.e. the `λ` (or `μ`) with `x = λα₊` when `x` is balanced.
pub fn positive_sequence_coefficient(x: &C3) -> Complex64 {
    sequence_components(x).positive
}
