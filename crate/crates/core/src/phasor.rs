//! Conversion-matrix algebra for three-phase phasor quantities.
//!
//! The 3×3 conversion matrix `Γ` maps the terminal voltages of a
//! Δ-configured device to its internal line-to-line voltages; its transpose
//! maps internal Δ currents to (negated) terminal currents. `Γ` is singular —
//! its null space is spanned by the all-ones vector — so inverting the
//! conversion requires the pseudo-inverse solves provided here, each with a
//! free zero-sequence parameter. The same eigenbasis (`𝟏`, `α₊`, `α₋`)
//! underlies the sequence decomposition used by the balanced-network fast
//! path.
//!
//! Sign convention: `α = e^{-i2π/3}`, so the positive-sequence vector is
//! `α₊ = (1, α, α²)` with phase *b* lagging phase *a* by 120°. Textbooks
//! differ on this sign; every formula in this crate assumes this one.

use num_complex::Complex64;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};
use thiserror::Error;

/// Shorthand constructor for a complex scalar.
#[inline]
pub const fn cx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Error from the pseudo-inverse solves on `Γ` / `Γᵀ`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhasorError {
    /// The right-hand side is not in the range of the matrix: its entries do
    /// not sum to zero within tolerance, so no solution exists.
    #[error("right-hand side not in range: |sum b| = {imbalance:.3e} exceeds tolerance {tolerance:.3e}")]
    NotInRange { imbalance: f64, tolerance: f64 },
}

/// Scale-relative tolerance for range/KCL/KVL membership checks:
/// `1e-9 · max(1, scale)`.
pub fn range_tolerance(scale: f64) -> f64 {
    1e-9 * scale.max(1.0)
}

/// A complex 3-vector: one entry per phase (a, b, c).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct C3(pub [Complex64; 3]);

impl C3 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64) -> Self {
        C3([a, b, c])
    }

    pub fn zero() -> Self {
        C3([cx(0.0, 0.0); 3])
    }

    /// The all-ones vector `𝟏`.
    pub fn ones() -> Self {
        C3([cx(1.0, 0.0); 3])
    }

    /// `(v, v, v)`.
    pub fn splat(v: Complex64) -> Self {
        C3([v; 3])
    }

    pub fn conj(&self) -> Self {
        C3([self.0[0].conj(), self.0[1].conj(), self.0[2].conj()])
    }

    /// `𝟏ᵀx`: sum of the entries.
    pub fn sum(&self) -> Complex64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Unconjugated dot product `xᵀy`.
    pub fn dot(&self, other: &C3) -> Complex64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    /// Hermitian inner product `xᴴy` (self is conjugated).
    pub fn hdot(&self, other: &C3) -> Complex64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1] + self.0[2].conj() * other.0[2]
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &C3) -> C3 {
        C3([
            self.0[0] * other.0[0],
            self.0[1] * other.0[1],
            self.0[2] * other.0[2],
        ])
    }

    /// Outer product `x yᴴ`.
    pub fn outer(&self, other: &C3) -> C3x3 {
        let mut m = C3x3::zero();
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[r] * other.0[c].conj();
            }
        }
        m
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl Index<usize> for C3 {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for C3 {
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        &mut self.0[i]
    }
}

impl Add for C3 {
    type Output = C3;
    fn add(self, rhs: C3) -> C3 {
        C3([
            self.0[0] + rhs.0[0],
            self.0[1] + rhs.0[1],
            self.0[2] + rhs.0[2],
        ])
    }
}

impl AddAssign for C3 {
    fn add_assign(&mut self, rhs: C3) {
        *self = *self + rhs;
    }
}

impl Sub for C3 {
    type Output = C3;
    fn sub(self, rhs: C3) -> C3 {
        C3([
            self.0[0] - rhs.0[0],
            self.0[1] - rhs.0[1],
            self.0[2] - rhs.0[2],
        ])
    }
}

impl SubAssign for C3 {
    fn sub_assign(&mut self, rhs: C3) {
        *self = *self - rhs;
    }
}

impl Neg for C3 {
    type Output = C3;
    fn neg(self) -> C3 {
        C3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<Complex64> for C3 {
    type Output = C3;
    fn mul(self, rhs: Complex64) -> C3 {
        C3([self.0[0] * rhs, self.0[1] * rhs, self.0[2] * rhs])
    }
}

impl Mul<f64> for C3 {
    type Output = C3;
    fn mul(self, rhs: f64) -> C3 {
        C3([self.0[0] * rhs, self.0[1] * rhs, self.0[2] * rhs])
    }
}

/// A complex 3×3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct C3x3(pub [[Complex64; 3]; 3]);

impl C3x3 {
    pub const fn new(rows: [[Complex64; 3]; 3]) -> Self {
        C3x3(rows)
    }

    pub fn zero() -> Self {
        C3x3([[cx(0.0, 0.0); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for k in 0..3 {
            m.0[k][k] = cx(1.0, 0.0);
        }
        m
    }

    /// `𝟏𝟏ᵀ`: the all-ones matrix.
    pub fn ones() -> Self {
        C3x3([[cx(1.0, 0.0); 3]; 3])
    }

    pub fn from_diag(d: &C3) -> Self {
        let mut m = Self::zero();
        for k in 0..3 {
            m.0[k][k] = d.0[k];
        }
        m
    }

    pub fn diag(&self) -> C3 {
        C3([self.0[0][0], self.0[1][1], self.0[2][2]])
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn transpose(&self) -> C3x3 {
        let mut m = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[c][r];
            }
        }
        m
    }

    pub fn conj(&self) -> C3x3 {
        let mut m = *self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = m.0[r][c].conj();
            }
        }
        m
    }

    /// Hermitian transpose.
    pub fn adjoint(&self) -> C3x3 {
        self.transpose().conj()
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse by adjugate; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<C3x3> {
        let d = self.det();
        if d.norm() == 0.0 {
            return None;
        }
        let m = &self.0;
        let cof = |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
        let adj = C3x3([
            [cof(1, 1, 2, 2), -cof(0, 1, 2, 2), cof(0, 1, 1, 2)],
            [-cof(1, 0, 2, 2), cof(0, 0, 2, 2), -cof(0, 0, 1, 2)],
            [cof(1, 0, 2, 1), -cof(0, 0, 2, 1), cof(0, 0, 1, 1)],
        ]);
        let inv = adj * (cx(1.0, 0.0) / d);
        if inv.is_finite() {
            Some(inv)
        } else {
            None
        }
    }

    /// Reciprocal 1-norm condition number, `1/(‖A‖₁‖A⁻¹‖₁)`; 0 when singular.
    pub fn rcond_one(&self) -> f64 {
        match self.inverse() {
            Some(inv) => {
                let p = self.norm_one() * inv.norm_one();
                if p == 0.0 {
                    0.0
                } else {
                    1.0 / p
                }
            }
            None => 0.0,
        }
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..3)
            .map(|c| (0..3).map(|r| self.0[r][c].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute entry.
    pub fn norm_max(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl Add for C3x3 {
    type Output = C3x3;
    fn add(self, rhs: C3x3) -> C3x3 {
        let mut m = self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] += rhs.0[r][c];
            }
        }
        m
    }
}

impl AddAssign for C3x3 {
    fn add_assign(&mut self, rhs: C3x3) {
        *self = *self + rhs;
    }
}

impl Sub for C3x3 {
    type Output = C3x3;
    fn sub(self, rhs: C3x3) -> C3x3 {
        let mut m = self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] -= rhs.0[r][c];
            }
        }
        m
    }
}

impl Neg for C3x3 {
    type Output = C3x3;
    fn neg(self) -> C3x3 {
        let mut m = self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = -m.0[r][c];
            }
        }
        m
    }
}

impl Mul<C3x3> for C3x3 {
    type Output = C3x3;
    fn mul(self, rhs: C3x3) -> C3x3 {
        let mut m = C3x3::zero();
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = cx(0.0, 0.0);
                for k in 0..3 {
                    acc += self.0[r][k] * rhs.0[k][c];
                }
                m.0[r][c] = acc;
            }
        }
        m
    }
}

impl Mul<C3> for C3x3 {
    type Output = C3;
    fn mul(self, rhs: C3) -> C3 {
        let mut v = C3::zero();
        for r in 0..3 {
            let mut acc = cx(0.0, 0.0);
            for k in 0..3 {
                acc += self.0[r][k] * rhs.0[k];
            }
            v.0[r] = acc;
        }
        v
    }
}

impl Mul<Complex64> for C3x3 {
    type Output = C3x3;
    fn mul(self, rhs: Complex64) -> C3x3 {
        let mut m = self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] *= rhs;
            }
        }
        m
    }
}

impl Mul<f64> for C3x3 {
    type Output = C3x3;
    fn mul(self, rhs: f64) -> C3x3 {
        self * cx(rhs, 0.0)
    }
}

/// `α = e^{-i2π/3}`.
pub fn alpha() -> Complex64 {
    cx(-0.5, -(3.0f64.sqrt()) / 2.0)
}

/// Positive-sequence vector `α₊ = (1, α, α²)`.
pub fn alpha_plus() -> C3 {
    let a = alpha();
    C3::new(cx(1.0, 0.0), a, a * a)
}

/// Negative-sequence vector `α₋ = (1, α², α)`.
pub fn alpha_minus() -> C3 {
    let a = alpha();
    C3::new(cx(1.0, 0.0), a * a, a)
}

/// The conversion matrix `Γ` (integer entries).
pub fn gamma() -> C3x3 {
    let o = cx(1.0, 0.0);
    let z = cx(0.0, 0.0);
    C3x3::new([[o, -o, z], [z, o, -o], [-o, z, o]])
}

/// The transposed conversion matrix `Γᵀ`.
pub fn gamma_t() -> C3x3 {
    gamma().transpose()
}

/// Pseudo-inverse `Γ† = (1/3)Γᵀ`.
pub fn gamma_dagger() -> C3x3 {
    gamma_t() * (1.0 / 3.0)
}

/// Pseudo-inverse `Γᵀ† = (1/3)Γ`.
pub fn gamma_t_dagger() -> C3x3 {
    gamma() * (1.0 / 3.0)
}

fn solve_singular(m: C3x3, b: &C3, free: Complex64) -> Result<C3, PhasorError> {
    let imbalance = b.sum().norm();
    let tolerance = range_tolerance(b.norm_inf());
    if imbalance > tolerance {
        return Err(PhasorError::NotInRange {
            imbalance,
            tolerance,
        });
    }
    Ok(m * *b * (1.0 / 3.0) + C3::splat(free))
}

/// Solve `Γx = b`. Solutions exist iff the entries of `b` sum to zero, and
/// then form the line `x = (1/3)Γᵀb + free·𝟏`.
pub fn solve_gamma(b: &C3, free: Complex64) -> Result<C3, PhasorError> {
    solve_singular(gamma_t(), b, free)
}

/// Solve `Γᵀx = b`; mirror of [`solve_gamma`] with `x = (1/3)Γb + free·𝟏`.
pub fn solve_gamma_t(b: &C3, free: Complex64) -> Result<C3, PhasorError> {
    solve_singular(gamma(), b, free)
}

/// Zero/positive/negative-sequence components of a phase vector.
///
/// Components are the 1/3-scaled projections onto `𝟏`, `α₊`, `α₋`, so that
/// `x = zero·𝟏 + positive·α₊ + negative·α₋` and the `zero` of a terminal
/// voltage is exactly the neutral-shift quantity `γ = (1/3)𝟏ᵀV`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceComponents {
    pub zero: Complex64,
    pub positive: Complex64,
    pub negative: Complex64,
}

impl SequenceComponents {
    pub fn reconstruct(&self) -> C3 {
        C3::splat(self.zero) + alpha_plus() * self.positive + alpha_minus() * self.negative
    }
}

/// Decompose `x` into sequence components (1/3-projection convention).
pub fn sequence_components(x: &C3) -> SequenceComponents {
    SequenceComponents {
        zero: C3::ones().hdot(x) / 3.0,
        positive: alpha_plus().hdot(x) / 3.0,
        negative: alpha_minus().hdot(x) / 3.0,
    }
}
