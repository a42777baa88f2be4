//! Dense and banded symmetric linear algebra.

mod dense;
mod factor;
mod spectral;

pub use dense::{axpy, dot, frobenius_norm, norm2, outer, Matrix};
pub use factor::{
    factorize_banded, factorize_spd, lu_factorize, solve_factored, BandedSym, Bandwidth,
    LuFactorization, SymmetricFactorization, MAX_BANDED_WIDTH, PIVOT_TOLERANCE, SYMMETRY_TOLERANCE,
};
pub use spectral::{
    condition_number, extreme_eigenvalues, spectral_norm, symmetric_eigen, SpectralEstimate,
    SymmetricEigen, EXACT_LIMIT,
};
