use std::fmt;

use super::cyclo::Cyc;
use super::field::{Field, Fq, Rat};
use super::ExactError;

/// Tagged scalar. Arithmetic never converts between variants.
#[derive(Clone, PartialEq, Eq)]
pub enum Scalar {
    Rational(Rat),
    Prime(Fq),
    Cyclotomic(Cyc),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Scalar {
    pub fn kind(&self) -> &'static str {
        match self {
            Scalar::Rational(_) => "rational",
            Scalar::Prime(_) => "prime",
            Scalar::Cyclotomic(_) => "cyclotomic",
        }
    }
}

fn apply<T: Field>(a: &T, b: &T, op: Op) -> Result<T, ExactError> {
    Ok(match op {
        Op::Add => a.add(b),
        Op::Sub => a.sub(b),
        Op::Mul => a.mul(b),
        Op::Div => a.div(b).ok_or(ExactError::DivisionByZero)?,
    })
}

pub fn scalar_arith(a: &Scalar, b: &Scalar, op: Op) -> Result<Scalar, ExactError> {
    match (a, b) {
        (Scalar::Rational(x), Scalar::Rational(y)) => apply(x, y, op).map(Scalar::Rational),
        (Scalar::Prime(x), Scalar::Prime(y)) => {
            if x.q != y.q {
                return Err(ExactError::VariantMismatch(format!("F_{} vs F_{}", x.q, y.q)));
            }
            apply(x, y, op).map(Scalar::Prime)
        }
        (Scalar::Cyclotomic(x), Scalar::Cyclotomic(y)) => apply(x, y, op).map(Scalar::Cyclotomic),
        _ => Err(ExactError::VariantMismatch(format!("{} vs {}", a.kind(), b.kind()))),
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Rational(x) => write!(f, "{x}"),
            Scalar::Prime(x) => write!(f, "{} mod {}", x.v, x.q),
            Scalar::Cyclotomic(x) => write!(f, "{x:?}"),
        }
    }
}
