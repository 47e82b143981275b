//! Dense complex LU factorization with a 1-norm condition estimate, shared by
//! the full-network and per-phase solvers.

use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;

type Lu = nalgebra::LU<Complex64, Dyn, Dyn>;

/// LU (partial pivoting) of a square complex matrix together with a
/// factorization of its adjoint, kept for condition estimation.
pub(crate) struct DenseLu {
    n: usize,
    norm_one: f64,
    lu: Lu,
    lu_adj: Lu,
}

impl DenseLu {
    pub fn factor(a: DMatrix<Complex64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let norm_one = (0..n)
            .map(|c| a.column(c).iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let lu_adj = a.adjoint().lu();
        let lu = a.lu();
        DenseLu {
            n,
            norm_one,
            lu,
            lu_adj,
        }
    }

    pub fn solve(&self, b: &DVector<Complex64>) -> Option<DVector<Complex64>> {
        if self.n == 0 {
            return Some(DVector::zeros(0));
        }
        self.lu.solve(b)
    }

    fn solve_adjoint(&self, b: &DVector<Complex64>) -> Option<DVector<Complex64>> {
        self.lu_adj.solve(b)
    }

    /// Reciprocal 1-norm condition estimate `1/(‖A‖₁·est(‖A⁻¹‖₁))`, using a
    /// Hager-style power iteration on the factored matrix. Returns 0 when the
    /// factorization cannot solve (singular to working precision); an empty
    /// system reports 1.
    pub fn rcond(&self) -> f64 {
        if self.n == 0 {
            return 1.0;
        }
        if self.norm_one == 0.0 {
            return 0.0;
        }
        let inv_norm = match self.estimate_inverse_norm_one() {
            Some(v) if v > 0.0 => v,
            Some(_) => return 1.0,
            None => return 0.0,
        };
        1.0 / (self.norm_one * inv_norm)
    }

    fn estimate_inverse_norm_one(&self) -> Option<f64> {
        let n = self.n;
        let mut x = DVector::from_element(n, Complex64::new(1.0 / n as f64, 0.0));
        let mut est = 0.0f64;
        let mut last_pick = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x)?;
            let y_norm1: f64 = y.iter().map(|c| c.norm()).sum();
            est = est.max(y_norm1);
            // steepest-ascent direction: sign pattern of y
            let xi = DVector::from_iterator(
                n,
                y.iter().map(|c| {
                    let m = c.norm();
                    if m == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        c / m
                    }
                }),
            );
            let z = self.solve_adjoint(&xi)?;
            let (pick, z_max) = z
                .iter()
                .enumerate()
                .map(|(k, c)| (k, c.norm()))
                .fold((0, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            let progress = z.dotc(&x).re;
            if z_max <= progress || pick == last_pick {
                break;
            }
            x = DVector::zeros(n);
            x[pick] = Complex64::new(1.0, 0.0);
            last_pick = pick;
        }
        Some(est)
    }
}
