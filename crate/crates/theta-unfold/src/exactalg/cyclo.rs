use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use super::field::{Field, Rat};
use super::matrix::Matrix;

/// Reduction data for Q(ζ_n): the powers ζ^k (0 ≤ k < n) written in the
/// power basis 1, ζ, …, ζ^{φ(n)-1}.
#[derive(Debug)]
pub struct CycTable {
    pub n: u32,
    pub phi: usize,
    pub pow: Vec<Vec<i64>>,
}

fn poly_divexact(num: &[i64], den: &[i64]) -> Vec<i64> {
    // den is monic
    let mut r = num.to_vec();
    let dl = den.len();
    let mut out = vec![0i64; num.len() + 1 - dl];
    for i in (0..out.len()).rev() {
        let c = r[i + dl - 1];
        out[i] = c;
        if c != 0 {
            for (j, d) in den.iter().enumerate() {
                r[i + j] -= c * d;
            }
        }
    }
    debug_assert!(r.iter().all(|&x| x == 0));
    out
}

/// Coefficients (low degree first) of the n-th cyclotomic polynomial.
pub fn cyclotomic_poly(n: u32) -> Vec<i64> {
    let mut p = vec![0i64; n as usize + 1];
    p[0] = -1;
    p[n as usize] = 1;
    for d in 1..n {
        if n.is_multiple_of(d) {
            p = poly_divexact(&p, &cyclotomic_poly(d));
        }
    }
    p
}

fn build_table(n: u32) -> CycTable {
    let phi_poly = cyclotomic_poly(n);
    let phi = phi_poly.len() - 1;
    let mut pow = Vec::with_capacity(n as usize);
    let mut cur = vec![0i64; phi];
    cur[0] = 1;
    for _ in 0..n {
        pow.push(cur.clone());
        let mut next = vec![0i64; phi + 1];
        next[1..(phi + 1)].copy_from_slice(&cur[..phi]);
        let top = next[phi];
        if top != 0 {
            for i in 0..phi {
                next[i] -= top * phi_poly[i];
            }
        }
        next.truncate(phi);
        cur = next;
    }
    CycTable { n, phi, pow }
}

pub fn table(n: u32) -> Arc<CycTable> {
    static TABLES: OnceLock<RwLock<HashMap<u32, Arc<CycTable>>>> = OnceLock::new();
    let lock = TABLES.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(t) = lock.read().unwrap().get(&n) {
        return t.clone();
    }
    let t = Arc::new(build_table(n));
    lock.write().unwrap().entry(n).or_insert(t).clone()
}

/// Element of the cyclotomic field Q(ζ_n), stored as its coordinates in the
/// power basis, reduced modulo Φ_n. Operands of different conductor are
/// compared and combined inside Q(ζ_lcm).
#[derive(Clone)]
pub struct Cyc {
    n: u32,
    c: Vec<BigRational>,
}

impl Cyc {
    pub fn zero(n: u32) -> Cyc {
        let t = table(n);
        Cyc { n, c: vec![BigRational::zero(); t.phi] }
    }
    pub fn one(n: u32) -> Cyc {
        Cyc::rational(Rat::one(), n)
    }
    pub fn rational(r: Rat, n: u32) -> Cyc {
        let mut z = Cyc::zero(n);
        z.c[0] = r.0;
        z
    }
    pub fn int(v: i64) -> Cyc {
        Cyc::rational(Rat::int(v), 1)
    }
    /// ζ_n^k.
    pub fn root(k: i64, n: u32) -> Cyc {
        let t = table(n);
        let k = k.rem_euclid(n as i64) as usize;
        Cyc { n, c: t.pow[k].iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect() }
    }
    /// Σ a_k ζ_n^k with n = a.len().
    pub fn from_power_sum(a: &[i64]) -> Cyc {
        let n = a.len() as u32;
        let t = table(n);
        let mut acc = vec![0i128; t.phi];
        for (k, &ak) in a.iter().enumerate() {
            if ak != 0 {
                for (i, &p) in t.pow[k].iter().enumerate() {
                    acc[i] += ak as i128 * p as i128;
                }
            }
        }
        Cyc { n, c: acc.into_iter().map(|x| BigRational::from_integer(BigInt::from(x))).collect() }
    }
    pub fn conductor(&self) -> u32 {
        self.n
    }
    pub fn coeffs(&self) -> Vec<Rat> {
        self.c.iter().map(|x| Rat(x.clone())).collect()
    }
    pub fn is_rational(&self) -> bool {
        self.c.iter().skip(1).all(|x| x.is_zero())
    }

    /// Embed into Q(ζ_m); requires n | m.
    pub fn lift(&self, m: u32) -> Cyc {
        if m == self.n {
            return self.clone();
        }
        assert!(m.is_multiple_of(self.n), "conductor {} does not divide {}", self.n, m);
        let s = (m / self.n) as usize;
        let t = table(m);
        let mut out = vec![BigRational::zero(); t.phi];
        for (i, ci) in self.c.iter().enumerate() {
            if ci.is_zero() {
                continue;
            }
            for (j, &p) in t.pow[(i * s) % m as usize].iter().enumerate() {
                if p != 0 {
                    out[j] += ci * BigRational::from_integer(BigInt::from(p));
                }
            }
        }
        Cyc { n: m, c: out }
    }

    fn align(&self, o: &Cyc) -> (Cyc, Cyc) {
        if self.n == o.n {
            (self.clone(), o.clone())
        } else {
            let m = self.n.lcm(&o.n);
            (self.lift(m), o.lift(m))
        }
    }

    fn from_exponent_sums(n: u32, acc: Vec<BigRational>) -> Cyc {
        let t = table(n);
        let mut out = vec![BigRational::zero(); t.phi];
        for (k, a) in acc.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, &p) in t.pow[k].iter().enumerate() {
                if p == 1 {
                    out[j] += a;
                } else if p != 0 {
                    out[j] += a * BigRational::from_integer(BigInt::from(p));
                }
            }
        }
        Cyc { n, c: out }
    }

    /// Complex conjugate (ζ ↦ ζ^{-1}).
    pub fn conj(&self) -> Cyc {
        let n = self.n as usize;
        let mut acc = vec![BigRational::zero(); n];
        for (i, ci) in self.c.iter().enumerate() {
            if !ci.is_zero() {
                acc[(n - i) % n] += ci;
            }
        }
        Cyc::from_exponent_sums(self.n, acc)
    }

    pub fn scale(&self, r: &Rat) -> Cyc {
        Cyc { n: self.n, c: self.c.iter().map(|x| x * &r.0).collect() }
    }

    pub fn to_c64(&self) -> Complex64 {
        let mut z = Complex64::new(0.0, 0.0);
        for (i, ci) in self.c.iter().enumerate() {
            if ci.is_zero() {
                continue;
            }
            let ang = 2.0 * std::f64::consts::PI * i as f64 / self.n as f64;
            z += Complex64::from_polar(ci.to_f64().unwrap_or(f64::NAN), ang);
        }
        z
    }

    /// Coefficient strings, lowest power first.
    pub fn coeff_strings(&self) -> Vec<String> {
        self.c.iter().map(|x| x.to_string()).collect()
    }

    pub fn pow(&self, mut e: u32) -> Cyc {
        let mut base = self.clone();
        let mut acc = Cyc::one(self.n);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }
}

impl PartialEq for Cyc {
    fn eq(&self, o: &Cyc) -> bool {
        if self.n == o.n {
            self.c == o.c
        } else {
            let (a, b) = self.align(o);
            a.c == b.c
        }
    }
}
impl Eq for Cyc {}

impl fmt::Debug for Cyc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, ci) in self.c.iter().enumerate() {
            if ci.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if i == 0 {
                write!(f, "{}", ci)?;
            } else {
                write!(f, "({})z{}^{}", ci, self.n, i)?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl fmt::Display for Cyc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Field for Cyc {
    fn zero_like(&self) -> Self {
        Cyc::zero(self.n)
    }
    fn one_like(&self) -> Self {
        Cyc::one(self.n)
    }
    fn from_i64_like(&self, v: i64) -> Self {
        Cyc::rational(Rat::int(v), self.n)
    }
    fn is_zero(&self) -> bool {
        self.c.iter().all(|x| x.is_zero())
    }
    fn add(&self, o: &Self) -> Self {
        if self.n == o.n {
            return Cyc { n: self.n, c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() };
        }
        let (a, b) = self.align(o);
        a.add(&b)
    }
    fn sub(&self, o: &Self) -> Self {
        if self.n == o.n {
            return Cyc { n: self.n, c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() };
        }
        let (a, b) = self.align(o);
        a.sub(&b)
    }
    fn mul(&self, o: &Self) -> Self {
        if self.n != o.n {
            let (a, b) = self.align(o);
            return a.mul(&b);
        }
        let n = self.n as usize;
        let mut acc = vec![BigRational::zero(); n];
        for (i, a) in self.c.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.c.iter().enumerate() {
                if !b.is_zero() {
                    acc[(i + j) % n] += a * b;
                }
            }
        }
        Cyc::from_exponent_sums(self.n, acc)
    }
    fn neg(&self) -> Self {
        Cyc { n: self.n, c: self.c.iter().map(|x| -x).collect() }
    }
    fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        if self.is_rational() {
            let r = self.c[0].recip();
            return Some(Cyc::rational(Rat(r), self.n));
        }
        // Solve (self · x) = 1 through the multiplication matrix.
        let phi = self.c.len();
        let mut m = Matrix::zeros(phi, phi, &Rat::zero());
        for j in 0..phi {
            let col = self.mul(&Cyc::root(j as i64, self.n));
            for i in 0..phi {
                m.set(i, j, Rat(col.c[i].clone()));
            }
        }
        let mut rhs = vec![Rat::zero(); phi];
        rhs[0] = Rat::one();
        let x = m.solve(&rhs)?;
        Some(Cyc { n: self.n, c: x.into_iter().map(|r| r.0).collect() })
    }
}

/// Exact rational from a `Cyc` known to be rational.
pub fn rational_part(c: &Cyc) -> Option<Rat> {
    if c.is_rational() {
        Some(Rat(c.c[0].clone()))
    } else {
        None
    }
}
