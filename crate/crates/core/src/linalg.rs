//! Complex matrix products routed through real kernels, which are far faster
//! than the generic complex path.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::hilbert::CMatrix;

pub(crate) struct Split {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl Split {
    pub fn of(a: &CMatrix) -> Self {
        Self { re: a.map(|z| z.re), im: a.map(|z| z.im) }
    }

    pub fn join(&self) -> CMatrix {
        CMatrix::from_fn(self.re.nrows(), self.re.ncols(), |i, j| Complex64::new(self.re[(i, j)], self.im[(i, j)]))
    }

    pub fn is_real(&self) -> bool {
        self.im.iter().all(|&x| x == 0.0)
    }

    pub fn mul(&self, b: &Split) -> Split {
        Split { re: &self.re * &b.re - &self.im * &b.im, im: &self.re * &b.im + &self.im * &b.re }
    }

    pub fn mul_real(&self, b: &DMatrix<f64>) -> Split {
        Split { re: &self.re * b, im: &self.im * b }
    }

    pub fn real_mul(a: &DMatrix<f64>, b: &Split) -> Split {
        Split { re: a * &b.re, im: a * &b.im }
    }
}

/// `a · b`.
pub(crate) fn mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    if a.nrows() * a.ncols() * b.ncols() < 512 {
        return a * b;
    }
    let (sa, sb) = (Split::of(a), Split::of(b));
    match (sa.is_real(), sb.is_real()) {
        (true, true) => (&sa.re * &sb.re).map(|x| Complex64::new(x, 0.0)),
        (true, false) => Split::real_mul(&sa.re, &sb).join(),
        (false, true) => sa.mul_real(&sb.re).join(),
        (false, false) => sa.mul(&sb).join(),
    }
}
