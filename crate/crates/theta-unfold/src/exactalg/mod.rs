//! Exact scalars (rationals, prime fields, cyclotomic fields) and dense
//! exact linear algebra.

pub mod cyclo;
pub mod field;
pub mod matrix;
pub mod opmat;
pub mod scalar;

pub use cyclo::Cyc;
pub use field::{is_odd_prime, Field, Fq, Rat};
pub use matrix::Matrix;
pub use opmat::{CMat, Coeff, ExactMat, OpMatrix, ZMat};
pub use scalar::{scalar_arith, Op, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExactError {
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// ψ(x) = ζ_q^x.
pub fn additive_character(q: u32, x: Fq) -> Cyc {
    debug_assert_eq!(x.q, q);
    Cyc::root(x.v as i64, q)
}

/// Exponent of ψ as an integer mod q (for building Z[ζ_q] count vectors).
pub fn psi_exponent(x: Fq) -> usize {
    x.v as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn character_values() {
        assert_eq!(additive_character(3, Fq::new(0, 3)), Cyc::one(3));
        let p = additive_character(3, Fq::new(1, 3)).mul(&additive_character(3, Fq::new(2, 3)));
        assert_eq!(p, Cyc::one(3));
    }

    #[test]
    fn quadratic_gauss_sum_q3() {
        let mut g = Cyc::zero(3);
        for x in 0..3 {
            let v = Fq::new(x, 3);
            g = g.add(&additive_character(3, v.mul(&v)));
        }
        assert_eq!(g.mul(&g), Cyc::int(-3));
    }

    proptest! {
        #[test]
        fn kernel_vectors_are_exact(rows in 1usize..4, cols in 1usize..5, seed in proptest::collection::vec(-3i64..4, 16)) {
            let m = Matrix::from_fn(rows, cols, &Rat::zero(), |i, j| Rat::int(seed[(i * cols + j) % 16]));
            let k = m.kernel_basis();
            prop_assert_eq!(k.len(), cols - m.rank());
            for v in &k {
                prop_assert!(m.mul_vec(v).iter().all(|x| x.is_zero()));
            }
        }

        #[test]
        fn cyclotomic_self_difference_is_zero(n in 1u32..16, c in proptest::collection::vec(-5i64..6, 16)) {
            let a = Cyc::from_power_sum(&c[..n as usize]);
            prop_assert!(a.sub(&a).coeffs().iter().all(|x| x.is_zero()));
        }

        #[test]
        fn character_orthogonality(qi in 0usize..3, c in 1i64..50, x in 0i64..50) {
            let q = [3u32, 5, 7][qi];
            prop_assert!(additive_character(q, Fq::new(x, q)).pow(q) == Cyc::one(q));
            if c % q as i64 != 0 {
                let mut s = Cyc::zero(q);
                for y in 0..q as i64 {
                    s = s.add(&additive_character(q, Fq::new(c * y, q)));
                }
                prop_assert!(s.is_zero());
            }
        }
    }
}
