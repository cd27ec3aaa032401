use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Exact field arithmetic. Elements carry whatever context they need
/// (the modulus for `Fq`, the conductor for `Cyc`), so constants are
/// built from an existing element.
pub trait Field: Clone + PartialEq + Eq + fmt::Debug + Send + Sync {
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    fn from_i64_like(&self, v: i64) -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn inv(&self) -> Option<Self>;

    fn is_one(&self) -> bool {
        *self == self.one_like()
    }
    fn div(&self, o: &Self) -> Option<Self> {
        o.inv().map(|i| self.mul(&i))
    }
}

/// Rational number backed by big integers.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rat(pub BigRational);

impl Rat {
    pub fn new(n: i64, d: i64) -> Rat {
        Rat(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }
    pub fn int(n: i64) -> Rat {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }
    pub fn zero() -> Rat {
        Rat(BigRational::zero())
    }
    pub fn one() -> Rat {
        Rat(BigRational::one())
    }
    pub fn to_f64(&self) -> f64 {
        use num_traits::ToPrimitive;
        self.0.to_f64().unwrap_or(f64::NAN)
    }
    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Field for Rat {
    fn zero_like(&self) -> Self {
        Rat::zero()
    }
    fn one_like(&self) -> Self {
        Rat::one()
    }
    fn from_i64_like(&self, v: i64) -> Self {
        Rat::int(v)
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
    fn add(&self, o: &Self) -> Self {
        Rat(&self.0 + &o.0)
    }
    fn sub(&self, o: &Self) -> Self {
        Rat(&self.0 - &o.0)
    }
    fn mul(&self, o: &Self) -> Self {
        Rat(&self.0 * &o.0)
    }
    fn neg(&self) -> Self {
        Rat(-&self.0)
    }
    fn inv(&self) -> Option<Self> {
        if self.0.is_zero() {
            None
        } else {
            Some(Rat(self.0.recip()))
        }
    }
}

/// Element of the prime field F_q (q an odd prime below 2^16).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fq {
    pub v: u32,
    pub q: u32,
}

impl Fq {
    pub fn new(v: i64, q: u32) -> Fq {
        Fq { v: v.rem_euclid(q as i64) as u32, q }
    }
    pub fn pow(&self, mut e: u64) -> Fq {
        let mut base = *self;
        let mut acc = Fq { v: 1 % self.q, q: self.q };
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }
    /// Legendre symbol: 0, 1 or -1.
    pub fn legendre(&self) -> i32 {
        if self.v == 0 {
            return 0;
        }
        if self.pow(((self.q - 1) / 2) as u64).v == 1 {
            1
        } else {
            -1
        }
    }
    pub fn is_square(&self) -> bool {
        self.legendre() >= 0
    }
    /// Balanced representative in (-q/2, q/2].
    pub fn signed(&self) -> i64 {
        let v = self.v as i64;
        if v > (self.q as i64) / 2 {
            v - self.q as i64
        } else {
            v
        }
    }
}

impl fmt::Debug for Fq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.v)
    }
}

impl fmt::Display for Fq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.v)
    }
}

impl Field for Fq {
    fn zero_like(&self) -> Self {
        Fq { v: 0, q: self.q }
    }
    fn one_like(&self) -> Self {
        Fq { v: 1, q: self.q }
    }
    fn from_i64_like(&self, v: i64) -> Self {
        Fq::new(v, self.q)
    }
    fn is_zero(&self) -> bool {
        self.v == 0
    }
    fn add(&self, o: &Self) -> Self {
        debug_assert_eq!(self.q, o.q);
        let s = self.v + o.v;
        Fq { v: if s >= self.q { s - self.q } else { s }, q: self.q }
    }
    fn sub(&self, o: &Self) -> Self {
        debug_assert_eq!(self.q, o.q);
        Fq { v: if self.v >= o.v { self.v - o.v } else { self.v + self.q - o.v }, q: self.q }
    }
    fn mul(&self, o: &Self) -> Self {
        debug_assert_eq!(self.q, o.q);
        Fq { v: ((self.v as u64 * o.v as u64) % self.q as u64) as u32, q: self.q }
    }
    fn neg(&self) -> Self {
        Fq { v: if self.v == 0 { 0 } else { self.q - self.v }, q: self.q }
    }
    fn inv(&self) -> Option<Self> {
        if self.v == 0 {
            None
        } else {
            Some(self.pow((self.q - 2) as u64))
        }
    }
}

pub fn is_odd_prime(q: u32) -> bool {
    if q < 3 || q.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_sum() {
        assert_eq!(Rat::new(2, 3).add(&Rat::new(1, 6)), Rat::new(5, 6));
    }

    #[test]
    fn prime_field_division() {
        let three = Fq::new(3, 5);
        let two = Fq::new(2, 5);
        assert_eq!(three.div(&two).unwrap(), Fq::new(4, 5));
        assert!(Fq::new(0, 5).inv().is_none());
    }

    #[test]
    fn legendre_mod_3_and_5() {
        assert_eq!(Fq::new(2, 3).legendre(), -1);
        assert_eq!(Fq::new(-1, 5).legendre(), 1);
        assert_eq!(Fq::new(2, 5).legendre(), -1);
    }

    #[test]
    fn primes() {
        assert!(is_odd_prime(3) && is_odd_prime(5) && is_odd_prime(7));
        assert!(!is_odd_prime(2) && !is_odd_prime(9) && !is_odd_prime(1));
    }
}
