//! Shared test support: deterministic random network generators, the naive
//! stacked dense oracle, and comparison helpers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use phaseflow::devices::{external_model, DeviceSpec, ExternalRelation};
use phaseflow::network::{assemble, Bus, LineSpec, Network};
use phaseflow::phasor::{cx, C3, C3x3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_cx(rng: &mut impl Rng, scale: f64) -> Complex64 {
    cx(
        rng.random_range(-1.0..1.0) * scale,
        rng.random_range(-1.0..1.0) * scale,
    )
}

pub fn rand_c3(rng: &mut impl Rng, scale: f64) -> C3 {
    C3::new(
        rand_cx(rng, scale),
        rand_cx(rng, scale),
        rand_cx(rng, scale),
    )
}

/// Remove the zero-sequence part so the vector satisfies a sum-to-zero
/// constraint exactly (up to rounding).
pub fn project_zero_sum(v: C3) -> C3 {
    v - C3::splat(v.sum() / 3.0)
}

/// Complex-symmetric admittance block with a diagonally dominant real part,
/// so assembled systems stay comfortably nonsingular.
pub fn admittance_block(rng: &mut impl Rng) -> C3x3 {
    let mut m = C3x3::zero();
    for r in 0..3 {
        for c in r..3 {
            let v = rand_cx(rng, 0.4);
            m.0[r][c] = v;
            m.0[c][r] = v;
        }
    }
    for k in 0..3 {
        m.0[k][k] += cx(rng.random_range(1.5..3.0), rng.random_range(-0.8..0.8));
    }
    m
}

/// Small shunt block with nonnegative-real diagonal.
pub fn shunt_block(rng: &mut impl Rng) -> C3x3 {
    let mut m = C3x3::zero();
    for r in 0..3 {
        for c in r..3 {
            let v = rand_cx(rng, 0.01);
            m.0[r][c] = v;
            m.0[c][r] = v;
        }
    }
    for k in 0..3 {
        m.0[k][k] += cx(rng.random_range(0.02..0.08), rng.random_range(-0.05..0.05));
    }
    m
}

/// Random connected topology: a random spanning tree plus, when `meshed`,
/// extra chords with probability ~0.3 per candidate.
pub fn topology(rng: &mut impl Rng, n: usize, meshed: bool) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = rng.random_range(0..k);
        edges.push((parent, k));
    }
    if meshed && n >= 3 {
        let extra = rng.random_range(1..=n.div_ceil(3));
        for _ in 0..extra {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && !edges.contains(&(a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceClass {
    VoltageY,
    VoltageDelta,
    CurrentY,
    CurrentDelta,
    ImpedanceY,
    ImpedanceDelta,
}

pub const ALL_CLASSES: [DeviceClass; 6] = [
    DeviceClass::VoltageY,
    DeviceClass::VoltageDelta,
    DeviceClass::CurrentY,
    DeviceClass::CurrentDelta,
    DeviceClass::ImpedanceY,
    DeviceClass::ImpedanceDelta,
];

/// Device classes whose zero-sequence behavior keeps the textbook
/// `γ̃₋ᵥ = -A₂₂⁻¹A₂₁γᵥ` relation exact (everything except Y impedances,
/// whose grounded neutrals source zero-sequence current).
pub const CLASSES_WITHOUT_Y_IMPEDANCE: [DeviceClass; 5] = [
    DeviceClass::VoltageY,
    DeviceClass::VoltageDelta,
    DeviceClass::CurrentY,
    DeviceClass::CurrentDelta,
    DeviceClass::ImpedanceDelta,
];

pub fn random_unbalanced_device(
    rng: &mut impl Rng,
    class: DeviceClass,
    random_gamma: bool,
) -> DeviceSpec {
    let gamma = if random_gamma {
        rand_cx(rng, 0.3)
    } else {
        cx(0.0, 0.0)
    };
    match class {
        DeviceClass::VoltageY => DeviceSpec::VoltageSourceY {
            e: rand_c3(rng, 1.0),
            gamma,
        },
        DeviceClass::VoltageDelta => DeviceSpec::VoltageSourceDelta {
            e: project_zero_sum(rand_c3(rng, 1.0)),
            gamma,
            beta: rand_cx(rng, 0.3),
        },
        DeviceClass::CurrentY => DeviceSpec::CurrentSourceY {
            j: rand_c3(rng, 1.0),
            gamma,
        },
        DeviceClass::CurrentDelta => DeviceSpec::CurrentSourceDelta {
            j: rand_c3(rng, 1.0),
        },
        DeviceClass::ImpedanceY => DeviceSpec::ImpedanceY {
            z: admittance_block(rng).inverse().expect("dominant block inverts"),
            gamma,
        },
        DeviceClass::ImpedanceDelta => DeviceSpec::ImpedanceDelta {
            z: admittance_block(rng).inverse().expect("dominant block inverts"),
            beta: rand_cx(rng, 0.3),
        },
    }
}

pub struct UnbalancedOpts {
    pub n_buses: usize,
    pub meshed: bool,
    pub with_line_shunts: bool,
    pub with_bus_shunts: bool,
    pub random_gamma: bool,
}

impl Default for UnbalancedOpts {
    fn default() -> Self {
        UnbalancedOpts {
            n_buses: 6,
            meshed: true,
            with_line_shunts: true,
            with_bus_shunts: false,
            random_gamma: true,
        }
    }
}

/// Random unbalanced network with coupled line blocks and a mixed device
/// population; bus 0 always carries a voltage source.
pub fn random_unbalanced_network(rng: &mut impl Rng, opts: &UnbalancedOpts) -> Network {
    let n = opts.n_buses;
    let mut buses = Vec::with_capacity(n);
    for j in 0..n {
        let class = if j == 0 {
            if rng.random_bool(0.5) {
                DeviceClass::VoltageY
            } else {
                DeviceClass::VoltageDelta
            }
        } else {
            ALL_CLASSES[rng.random_range(0..ALL_CLASSES.len())]
        };
        let mut bus = Bus::new(format!("bus{j}"), random_unbalanced_device(rng, class, opts.random_gamma));
        if opts.with_bus_shunts && rng.random_bool(0.3) {
            bus.shunt = Some(shunt_block(rng));
        }
        buses.push(bus);
    }
    let lines = topology(rng, n, opts.meshed)
        .into_iter()
        .map(|(a, b)| LineSpec {
            from: a,
            to: b,
            y_series: admittance_block(rng),
            y_shunt_from: if opts.with_line_shunts && rng.random_bool(0.5) {
                shunt_block(rng)
            } else {
                C3x3::zero()
            },
            y_shunt_to: if opts.with_line_shunts && rng.random_bool(0.5) {
                shunt_block(rng)
            } else {
                C3x3::zero()
            },
        })
        .collect();
    Network::new(buses, lines).expect("generator produces valid networks")
}

pub struct BalancedOpts {
    pub n_buses: usize,
    pub meshed: bool,
    pub classes: Vec<DeviceClass>,
    /// Random γ at voltage sources (otherwise zero).
    pub random_gamma_v: bool,
    /// Random γ at Y impedances (otherwise zero).
    pub random_gamma_y_impedance: bool,
    /// Random γ at Y current sources (never enters network equations).
    pub random_gamma_y_current: bool,
    pub random_beta: bool,
    pub with_line_shunts: bool,
    pub with_bus_shunts: bool,
}

impl Default for BalancedOpts {
    fn default() -> Self {
        BalancedOpts {
            n_buses: 6,
            meshed: true,
            classes: ALL_CLASSES.to_vec(),
            random_gamma_v: false,
            random_gamma_y_impedance: false,
            random_gamma_y_current: false,
            random_beta: true,
            with_line_shunts: true,
            with_bus_shunts: false,
        }
    }
}

fn maybe_gamma(rng: &mut impl Rng, on: bool) -> Complex64 {
    if on {
        rand_cx(rng, 0.5)
    } else {
        cx(0.0, 0.0)
    }
}

fn maybe_scalar_shunt(rng: &mut impl Rng, on: bool) -> Complex64 {
    if on {
        cx(rng.random_range(0.01..0.1), rng.random_range(-0.1..0.1))
    } else {
        cx(0.0, 0.0)
    }
}

/// Random balanced network: every source in span(α₊), scalar impedances and
/// line blocks; bus 0 always carries a voltage source.
pub fn random_balanced_network(rng: &mut impl Rng, opts: &BalancedOpts) -> Network {
    use phaseflow::phasor::alpha_plus;
    let n = opts.n_buses;
    let mut buses = Vec::with_capacity(n);
    for j in 0..n {
        let class = if j == 0 {
            let v_classes: Vec<DeviceClass> = opts
                .classes
                .iter()
                .copied()
                .filter(|c| matches!(c, DeviceClass::VoltageY | DeviceClass::VoltageDelta))
                .collect();
            if v_classes.is_empty() {
                DeviceClass::VoltageY
            } else {
                v_classes[rng.random_range(0..v_classes.len())]
            }
        } else {
            opts.classes[rng.random_range(0..opts.classes.len())]
        };
        let beta = if opts.random_beta {
            rand_cx(rng, 0.3)
        } else {
            cx(0.0, 0.0)
        };
        let device = match class {
            DeviceClass::VoltageY => DeviceSpec::VoltageSourceY {
                e: alpha_plus() * (cx(1.0, 0.0) + rand_cx(rng, 0.3)),
                gamma: maybe_gamma(rng, opts.random_gamma_v),
            },
            DeviceClass::VoltageDelta => DeviceSpec::VoltageSourceDelta {
                e: alpha_plus() * (cx(1.0, 0.0) + rand_cx(rng, 0.3)),
                gamma: maybe_gamma(rng, opts.random_gamma_v),
                beta,
            },
            DeviceClass::CurrentY => DeviceSpec::CurrentSourceY {
                j: alpha_plus() * rand_cx(rng, 1.0),
                gamma: maybe_gamma(rng, opts.random_gamma_y_current),
            },
            DeviceClass::CurrentDelta => DeviceSpec::CurrentSourceDelta {
                j: alpha_plus() * rand_cx(rng, 1.0),
            },
            DeviceClass::ImpedanceY => DeviceSpec::ImpedanceY {
                z: C3x3::identity()
                    * (cx(1.0, 0.0)
                        / cx(rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5))),
                gamma: maybe_gamma(rng, opts.random_gamma_y_impedance),
            },
            DeviceClass::ImpedanceDelta => DeviceSpec::ImpedanceDelta {
                z: C3x3::identity()
                    * (cx(1.0, 0.0)
                        / cx(rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5))),
                beta,
            },
        };
        let mut bus = Bus::new(format!("bus{j}"), device);
        if opts.with_bus_shunts && rng.random_bool(0.3) {
            bus.shunt = Some(
                C3x3::identity() * cx(rng.random_range(0.01..0.08), rng.random_range(-0.05..0.05)),
            );
        }
        buses.push(bus);
    }
    let lines = topology(rng, n, opts.meshed)
        .into_iter()
        .map(|(a, b)| {
            let eta_s = cx(rng.random_range(0.8..2.5), rng.random_range(-1.0..1.0));
            let on_f = opts.with_line_shunts && rng.random_bool(0.5);
            let on_t = opts.with_line_shunts && rng.random_bool(0.5);
            LineSpec {
                from: a,
                to: b,
                y_series: C3x3::identity() * eta_s,
                y_shunt_from: C3x3::identity() * maybe_scalar_shunt(rng, on_f),
                y_shunt_to: C3x3::identity() * maybe_scalar_shunt(rng, on_t),
            }
        })
        .collect();
    Network::new(buses, lines).expect("generator produces valid networks")
}

/// Naive dense oracle: stack the network equations `YV - I = 0` and all
/// device constraint rows into one `6(N+1)`-dimensional system (no
/// elimination) and solve it directly.
pub fn naive_oracle(net: &Network) -> (Vec<C3>, Vec<C3>) {
    let n = net.n_buses();
    let y = assemble(net);
    let size = 6 * n;
    let mut a = DMatrix::<Complex64>::zeros(size, size);
    let mut b = DVector::<Complex64>::zeros(size);

    // network rows: sum_k Y_jk V_k - I_j = 0
    for j in 0..n {
        for k in 0..n {
            let blk = y.block(j, k);
            for r in 0..3 {
                for c in 0..3 {
                    a[(3 * j + r, 3 * k + c)] += blk.0[r][c];
                }
            }
        }
        for r in 0..3 {
            a[(3 * j + r, 3 * n + 3 * j + r)] -= cx(1.0, 0.0);
        }
    }

    // device rows
    for (j, bus) in net.buses().iter().enumerate() {
        let row0 = 3 * n + 3 * j;
        match external_model(&bus.device).expect("valid device") {
            ExternalRelation::FixedVoltage { v } => {
                for r in 0..3 {
                    a[(row0 + r, 3 * j + r)] = cx(1.0, 0.0);
                    b[row0 + r] = v[r];
                }
            }
            ExternalRelation::FixedCurrent { i } => {
                for r in 0..3 {
                    a[(row0 + r, 3 * n + 3 * j + r)] = cx(1.0, 0.0);
                    b[row0 + r] = i[r];
                }
            }
            ExternalRelation::Admittance { y_eff, i_offset } => {
                for r in 0..3 {
                    a[(row0 + r, 3 * n + 3 * j + r)] = cx(1.0, 0.0);
                    for c in 0..3 {
                        a[(row0 + r, 3 * j + c)] += y_eff.0[r][c];
                    }
                    b[row0 + r] = i_offset[r];
                }
            }
        }
    }

    let x = a.lu().solve(&b).expect("oracle system solvable");
    let mut v = vec![C3::zero(); n];
    let mut i = vec![C3::zero(); n];
    for j in 0..n {
        v[j] = C3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
        i[j] = C3::new(x[3 * n + 3 * j], x[3 * n + 3 * j + 1], x[3 * n + 3 * j + 2]);
    }
    (v, i)
}

/// Max relative difference between two sets of per-bus phase vectors,
/// normalized by the largest magnitude in either set.
pub fn max_rel_diff(a: &[C3], b: &[C3]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut scale = 0.0f64;
    let mut diff = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        scale = scale.max(x.norm_inf()).max(y.norm_inf());
        diff = diff.max((*x - *y).norm_inf());
    }
    diff / scale.max(1e-30)
}

/// Kronecker product with the 3×3 identity, built independently of the
/// library's assembly path.
pub fn kron_identity3(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = m.nrows();
    DMatrix::from_fn(3 * n, 3 * n, |r, c| {
        if r % 3 == c % 3 {
            m[(r / 3, c / 3)]
        } else {
            cx(0.0, 0.0)
        }
    })
}

/// Dense form of a block admittance matrix.
pub fn block_to_dense(y: &phaseflow::network::BlockAdmittance) -> DMatrix<Complex64> {
    let n = y.n_buses();
    let mut m = DMatrix::<Complex64>::zeros(3 * n, 3 * n);
    for (&(j, k), blk) in y.blocks() {
        for r in 0..3 {
            for c in 0..3 {
                m[(3 * j + r, 3 * k + c)] = blk.0[r][c];
            }
        }
    }
    m
}

/// Explicit Δ-impedance Laplacian for diagonal loop admittances
/// `diag(y_ab, y_bc, y_ca)` — the hand-written form used as an oracle for
/// `Γᵀ y Γ`.
pub fn delta_laplacian_explicit(y_ab: Complex64, y_bc: Complex64, y_ca: Complex64) -> C3x3 {
    C3x3::new([
        [y_ca + y_ab, -y_ab, -y_ca],
        [-y_ab, y_ab + y_bc, -y_bc],
        [-y_ca, -y_bc, y_bc + y_ca],
    ])
}

/// Largest entry magnitude of a complex matrix.
pub fn dmatrix_max_norm(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}
