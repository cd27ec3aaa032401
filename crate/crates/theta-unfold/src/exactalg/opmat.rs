//! Operator matrices over Q(ζ_q), q an odd prime.
//!
//! `ExactMat` keeps entries as Z[ζ_q] coefficient vectors (checked i64) over a
//! common integer denominator and moves to big-rational cyclotomic entries
//! when a checked operation overflows. `CMat` is the floating point backend.

use std::fmt;

use num_complex::Complex64;
use num_integer::Integer;

use super::cyclo::Cyc;
use super::field::{Field, Rat};
use super::matrix::Matrix;

/// Scalar values produced by operator matrices.
pub trait Coeff: Clone + Send + Sync + fmt::Debug {
    fn c_zero(q: u32) -> Self;
    /// (Σ_k counts[k] ζ_q^k) / den with q = counts.len().
    fn c_from_counts(counts: &[i64], den: i64) -> Self;
    fn plus(&self, o: &Self) -> Self;
    fn minus(&self, o: &Self) -> Self;
    fn times(&self, o: &Self) -> Self;
    fn conj_c(&self) -> Self;
    fn inv_c(&self) -> Option<Self>;
    fn same(&self, o: &Self) -> bool;
    fn is_zero_c(&self) -> bool;
    fn to_c64(&self) -> Complex64;
    /// Exact coefficient rendering, if the backend has one.
    fn exact_coeffs(&self) -> Option<Vec<String>>;
}

pub const FLOAT_TOL: f64 = 1e-9;

fn close(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= FLOAT_TOL * (1.0f64).max(a.norm()).max(b.norm())
}

impl Coeff for Cyc {
    fn c_zero(q: u32) -> Self {
        Cyc::zero(q)
    }
    fn c_from_counts(counts: &[i64], den: i64) -> Self {
        Cyc::from_power_sum(counts).scale(&Rat::new(1, den))
    }
    fn plus(&self, o: &Self) -> Self {
        self.add(o)
    }
    fn minus(&self, o: &Self) -> Self {
        self.sub(o)
    }
    fn times(&self, o: &Self) -> Self {
        self.mul(o)
    }
    fn conj_c(&self) -> Self {
        self.conj()
    }
    fn inv_c(&self) -> Option<Self> {
        Field::inv(self)
    }
    fn same(&self, o: &Self) -> bool {
        self == o
    }
    fn is_zero_c(&self) -> bool {
        Field::is_zero(self)
    }
    fn to_c64(&self) -> Complex64 {
        Cyc::to_c64(self)
    }
    fn exact_coeffs(&self) -> Option<Vec<String>> {
        Some(self.coeff_strings())
    }
}

fn root_c64(k: i64, q: usize) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k.rem_euclid(q as i64) as f64) / q as f64)
}

impl Coeff for Complex64 {
    fn c_zero(_q: u32) -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn c_from_counts(counts: &[i64], den: i64) -> Self {
        let q = counts.len();
        let s: Complex64 = counts.iter().enumerate().map(|(k, &c)| root_c64(k as i64, q) * c as f64).sum();
        s / den as f64
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn minus(&self, o: &Self) -> Self {
        self - o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn conj_c(&self) -> Self {
        self.conj()
    }
    fn inv_c(&self) -> Option<Self> {
        (self.norm() > FLOAT_TOL).then(|| 1.0 / self)
    }
    fn same(&self, o: &Self) -> bool {
        close(*self, *o)
    }
    fn is_zero_c(&self) -> bool {
        self.norm() <= FLOAT_TOL
    }
    fn to_c64(&self) -> Complex64 {
        *self
    }
    fn exact_coeffs(&self) -> Option<Vec<String>> {
        None
    }
}

/// Matrix over Z[ζ_q]. Each entry is a length-q exponent-count vector kept in
/// canonical form (last coordinate zero), so equality is coefficient-wise.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ZMat {
    rows: usize,
    cols: usize,
    q: usize,
    data: Vec<i64>,
}

fn canon_i128(v: &mut [i128]) {
    let t = v[v.len() - 1];
    if t != 0 {
        for x in v.iter_mut() {
            *x -= t;
        }
    }
}

impl ZMat {
    pub fn zeros(rows: usize, cols: usize, q: usize) -> ZMat {
        ZMat { rows, cols, q, data: vec![0; rows * cols * q] }
    }

    pub fn identity(d: usize, q: usize) -> ZMat {
        let mut m = ZMat::zeros(d, d, q);
        for i in 0..d {
            m.data[(i * d + i) * q] = 1;
        }
        m
    }

    /// Entries from raw exponent counts (rows*cols*q values); returns None on overflow.
    pub fn from_counts(rows: usize, cols: usize, q: usize, counts: &[i64]) -> Option<ZMat> {
        assert_eq!(counts.len(), rows * cols * q);
        let mut m = ZMat { rows, cols, q, data: counts.to_vec() };
        for e in m.data.chunks_mut(q) {
            let t = e[q - 1];
            if t != 0 {
                for x in e.iter_mut() {
                    *x = x.checked_sub(t)?;
                }
            }
        }
        Some(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn entry(&self, i: usize, j: usize) -> &[i64] {
        let o = (i * self.cols + j) * self.q;
        &self.data[o..o + self.q]
    }
    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    pub fn mul(&self, o: &ZMat) -> Option<ZMat> {
        assert_eq!(self.cols, o.rows, "operator shape mismatch");
        assert_eq!(self.q, o.q);
        let q = self.q;
        let mut out = ZMat::zeros(self.rows, o.cols, q);
        let mut acc = vec![0i128; o.cols * q];
        for i in 0..self.rows {
            acc.iter_mut().for_each(|x| *x = 0);
            for k in 0..self.cols {
                let a = self.entry(i, k);
                if a.iter().all(|&x| x == 0) {
                    continue;
                }
                for j in 0..o.cols {
                    let b = o.entry(k, j);
                    let dst = &mut acc[j * q..(j + 1) * q];
                    for (s, &av) in a.iter().enumerate() {
                        if av == 0 {
                            continue;
                        }
                        for (t, &bv) in b.iter().enumerate() {
                            if bv != 0 {
                                let idx = if s + t >= q { s + t - q } else { s + t };
                                dst[idx] += av as i128 * bv as i128;
                            }
                        }
                    }
                }
            }
            for j in 0..o.cols {
                let e = &mut acc[j * q..(j + 1) * q];
                canon_i128(e);
                let base = (i * o.cols + j) * q;
                for (t, &v) in e.iter().enumerate() {
                    out.data[base + t] = i64::try_from(v).ok()?;
                }
            }
        }
        Some(out)
    }

    pub fn add(&self, o: &ZMat) -> Option<ZMat> {
        assert_eq!((self.rows, self.cols, self.q), (o.rows, o.cols, o.q));
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a.checked_add(*b)).collect::<Option<Vec<_>>>()?;
        Some(ZMat { data, ..*self })
    }

    pub fn scale_int(&self, s: i64) -> Option<ZMat> {
        let data = self.data.iter().map(|a| a.checked_mul(s)).collect::<Option<Vec<_>>>()?;
        Some(ZMat { data, ..*self })
    }

    /// Multiply every entry by Σ_k c[k] ζ^k.
    pub fn scale_zeta(&self, c: &[i64]) -> Option<ZMat> {
        let q = self.q;
        assert_eq!(c.len(), q);
        let mut out = ZMat::zeros(self.rows, self.cols, q);
        let mut acc = vec![0i128; q];
        for (e, dst) in self.data.chunks(q).zip(out.data.chunks_mut(q)) {
            acc.iter_mut().for_each(|x| *x = 0);
            for (s, &av) in e.iter().enumerate() {
                if av == 0 {
                    continue;
                }
                for (t, &cv) in c.iter().enumerate() {
                    acc[(s + t) % q] += av as i128 * cv as i128;
                }
            }
            canon_i128(&mut acc);
            for (d, &v) in dst.iter_mut().zip(&acc) {
                *d = i64::try_from(v).ok()?;
            }
        }
        Some(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ZMat {
        let q = self.q;
        let mut out = ZMat::zeros(self.cols, self.rows, q);
        let mut tmp = vec![0i128; q];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let e = self.entry(i, j);
                for (k, &v) in e.iter().enumerate() {
                    tmp[(q - k) % q] = v as i128;
                }
                canon_i128(&mut tmp);
                let base = (j * self.rows + i) * q;
                for k in 0..q {
                    out.data[base + k] = tmp[k] as i64;
                }
            }
        }
        out
    }

    pub fn keep_rows(&self, keep: &[bool]) -> ZMat {
        let mut out = self.clone();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                let o = i * self.cols * self.q;
                out.data[o..o + self.cols * self.q].iter_mut().for_each(|x| *x = 0);
            }
        }
        out
    }

    fn content_gcd(&self) -> i64 {
        self.data.iter().fold(0i64, |g, &x| g.gcd(&x))
    }

    fn div_exact(&self, d: i64) -> ZMat {
        ZMat { data: self.data.iter().map(|x| x / d).collect(), ..*self }
    }

    pub fn to_cyc(&self, den: i64) -> Matrix<Cyc> {
        let proto = Cyc::zero(self.q as u32);
        let inv = Rat::new(1, den);
        Matrix::from_fn(self.rows, self.cols, &proto, |i, j| Cyc::from_power_sum(self.entry(i, j)).scale(&inv))
    }
}

impl fmt::Debug for ZMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ZMat[{}x{} over Z[z{}]]", self.rows, self.cols, self.q)
    }
}

/// Exact operator: value = m / den (Small) or big-rational cyclotomic entries (Big).
#[derive(Clone)]
pub enum ExactMat {
    Small { den: i64, m: ZMat },
    Big { q: u32, m: Matrix<Cyc> },
}

/// Operator matrices usable by the Weil and unfolding code.
pub trait OpMatrix: Clone + Send + Sync + fmt::Debug + 'static {
    type Value: Coeff;
    const BACKEND: &'static str;

    fn from_counts(rows: usize, cols: usize, q: usize, den: i64, counts: &[i64]) -> Self;
    fn identity(d: usize, q: usize) -> Self;
    fn zeros(rows: usize, cols: usize, q: usize) -> Self;
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn mul(&self, o: &Self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn scale_rat(&self, num: i64, den: i64) -> Self;
    fn scale_value(&self, v: &Self::Value) -> Self;
    fn adjoint(&self) -> Self;
    fn keep_rows(&self, keep: &[bool]) -> Self;
    fn entry(&self, i: usize, j: usize) -> Self::Value;
    fn trace(&self) -> Self::Value;
    fn same(&self, o: &Self) -> bool;
    fn is_zero(&self) -> bool;
    fn to_c64(&self) -> Vec<Complex64>;
}

impl fmt::Debug for ExactMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExactMat::Small { den, m } => write!(f, "{m:?}/{den}"),
            ExactMat::Big { m, .. } => write!(f, "Big{m:?}"),
        }
    }
}

impl ExactMat {
    fn small(den: i64, m: ZMat) -> ExactMat {
        let (den, m) = if den < 0 { (-den, m.scale_int(-1).expect("negation")) } else { (den, m) };
        let g = m.content_gcd().gcd(&den);
        if g > 1 {
            ExactMat::Small { den: den / g, m: m.div_exact(g) }
        } else {
            ExactMat::Small { den, m }
        }
    }

    pub fn is_small(&self) -> bool {
        matches!(self, ExactMat::Small { .. })
    }

    pub fn q(&self) -> usize {
        match self {
            ExactMat::Small { m, .. } => m.q,
            ExactMat::Big { q, .. } => *q as usize,
        }
    }

    pub fn to_big(&self) -> Matrix<Cyc> {
        match self {
            ExactMat::Small { den, m } => m.to_cyc(*den),
            ExactMat::Big { m, .. } => m.clone(),
        }
    }

    fn big(&self, m: Matrix<Cyc>) -> ExactMat {
        ExactMat::Big { q: self.q() as u32, m }
    }

    /// Forces the big-rational representation (used to exercise the fallback).
    pub fn into_big(self) -> ExactMat {
        let q = self.q() as u32;
        ExactMat::Big { q, m: self.to_big() }
    }

    /// Scale to denominator `l` (a multiple of den).
    fn lift_den(den: i64, m: &ZMat, l: i64) -> Option<ZMat> {
        m.scale_int(l / den)
    }

    fn try_small_add(&self, o: &ExactMat, sign: i64) -> Option<ExactMat> {
        if let (ExactMat::Small { den: d1, m: m1 }, ExactMat::Small { den: d2, m: m2 }) = (self, o) {
            let l = d1.checked_mul(d2 / d1.gcd(d2))?;
            let a = Self::lift_den(*d1, m1, l)?;
            let b = Self::lift_den(*d2, m2, l)?.scale_int(sign)?;
            return Some(Self::small(l, a.add(&b)?));
        }
        None
    }
}

/// Converts an exact cyclotomic value to (counts, den) over conductor q, if it fits.
fn cyc_counts(v: &Cyc, q: usize) -> Option<(Vec<i64>, i64)> {
    let v = if v.conductor() == 1 { v.lift(q as u32) } else { v.clone() };
    if v.conductor() as usize != q {
        return None;
    }
    let coeffs = v.coeffs();
    let mut den = num_bigint::BigInt::from(1);
    for c in &coeffs {
        den = den.lcm(c.0.denom());
    }
    let den_i: i64 = i64::try_from(&den).ok()?;
    let mut counts = vec![0i64; q];
    for (k, c) in coeffs.iter().enumerate() {
        let n = c.0.numer() * (&den / c.0.denom());
        counts[k] = i64::try_from(&n).ok()?;
    }
    Some((counts, den_i))
}

impl OpMatrix for ExactMat {
    type Value = Cyc;
    const BACKEND: &'static str = "exact";

    fn from_counts(rows: usize, cols: usize, q: usize, den: i64, counts: &[i64]) -> Self {
        match ZMat::from_counts(rows, cols, q, counts) {
            Some(m) => ExactMat::small(den, m),
            None => {
                let proto = Cyc::zero(q as u32);
                let inv = Rat::new(1, den);
                let m = Matrix::from_fn(rows, cols, &proto, |i, j| {
                    let o = (i * cols + j) * q;
                    Cyc::from_power_sum(&counts[o..o + q]).scale(&inv)
                });
                ExactMat::Big { q: q as u32, m }
            }
        }
    }

    fn identity(d: usize, q: usize) -> Self {
        ExactMat::Small { den: 1, m: ZMat::identity(d, q) }
    }

    fn zeros(rows: usize, cols: usize, q: usize) -> Self {
        ExactMat::Small { den: 1, m: ZMat::zeros(rows, cols, q) }
    }

    fn rows(&self) -> usize {
        match self {
            ExactMat::Small { m, .. } => m.rows,
            ExactMat::Big { m, .. } => m.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            ExactMat::Small { m, .. } => m.cols,
            ExactMat::Big { m, .. } => m.cols(),
        }
    }

    fn mul(&self, o: &Self) -> Self {
        if let (ExactMat::Small { den: d1, m: m1 }, ExactMat::Small { den: d2, m: m2 }) = (self, o) {
            if let (Some(d), Some(m)) = (d1.checked_mul(*d2), m1.mul(m2)) {
                return Self::small(d, m);
            }
        }
        self.big(self.to_big().mul(&o.to_big()))
    }

    fn add(&self, o: &Self) -> Self {
        self.try_small_add(o, 1).unwrap_or_else(|| self.big(self.to_big().add(&o.to_big())))
    }

    fn sub(&self, o: &Self) -> Self {
        self.try_small_add(o, -1).unwrap_or_else(|| self.big(self.to_big().sub(&o.to_big())))
    }

    fn scale_rat(&self, num: i64, den: i64) -> Self {
        assert!(den != 0);
        if let ExactMat::Small { den: d, m } = self {
            if let (Some(nd), Some(nm)) = (d.checked_mul(den), m.scale_int(num)) {
                return Self::small(nd, nm);
            }
        }
        let r = Cyc::rational(Rat::new(num, den), self.q() as u32);
        self.big(self.to_big().scale(&r))
    }

    fn scale_value(&self, v: &Cyc) -> Self {
        if let ExactMat::Small { den, m } = self {
            if let Some((c, vd)) = cyc_counts(v, m.q) {
                if let (Some(nd), Some(nm)) = (den.checked_mul(vd), m.scale_zeta(&c)) {
                    return Self::small(nd, nm);
                }
            }
        }
        self.big(self.to_big().scale(v))
    }

    fn adjoint(&self) -> Self {
        match self {
            ExactMat::Small { den, m } => ExactMat::Small { den: *den, m: m.adjoint() },
            ExactMat::Big { q, m } => {
                let proto = Cyc::zero(*q);
                ExactMat::Big { q: *q, m: Matrix::from_fn(m.cols(), m.rows(), &proto, |i, j| m.get(j, i).conj()) }
            }
        }
    }

    fn keep_rows(&self, keep: &[bool]) -> Self {
        match self {
            ExactMat::Small { den, m } => ExactMat::Small { den: *den, m: m.keep_rows(keep) },
            ExactMat::Big { q, m } => {
                let proto = Cyc::zero(*q);
                ExactMat::Big {
                    q: *q,
                    m: Matrix::from_fn(m.rows(), m.cols(), &proto, |i, j| if keep[i] { m.get(i, j).clone() } else { proto.clone() }),
                }
            }
        }
    }

    fn entry(&self, i: usize, j: usize) -> Cyc {
        match self {
            ExactMat::Small { den, m } => Cyc::c_from_counts(m.entry(i, j), *den),
            ExactMat::Big { m, .. } => m.get(i, j).clone(),
        }
    }

    fn trace(&self) -> Cyc {
        match self {
            ExactMat::Small { den, m } => {
                let q = m.q;
                let mut acc = vec![0i128; q];
                for i in 0..m.rows.min(m.cols) {
                    for (a, &v) in acc.iter_mut().zip(m.entry(i, i)) {
                        *a += v as i128;
                    }
                }
                match acc.iter().map(|&x| i64::try_from(x).ok()).collect::<Option<Vec<i64>>>() {
                    Some(c) => Cyc::c_from_counts(&c, *den),
                    None => self.to_big().trace(),
                }
            }
            ExactMat::Big { m, .. } => m.trace(),
        }
    }

    fn same(&self, o: &Self) -> bool {
        if let (ExactMat::Small { den: d1, m: m1 }, ExactMat::Small { den: d2, m: m2 }) = (self, o) {
            // both sides are gcd-reduced with positive denominators
            return d1 == d2 && m1 == m2;
        }
        self.to_big() == o.to_big()
    }

    fn is_zero(&self) -> bool {
        match self {
            ExactMat::Small { m, .. } => m.is_zero(),
            ExactMat::Big { m, .. } => m.is_zero(),
        }
    }

    fn to_c64(&self) -> Vec<Complex64> {
        match self {
            ExactMat::Small { den, m } => {
                let q = m.q;
                let roots: Vec<Complex64> = (0..q).map(|k| root_c64(k as i64, q)).collect();
                m.data.chunks(q).map(|e| e.iter().zip(&roots).map(|(&c, r)| r * c as f64).sum::<Complex64>() / *den as f64).collect()
            }
            ExactMat::Big { m, .. } => m.entries().iter().map(|c| c.to_c64()).collect(),
        }
    }
}

/// Dense complex matrix (floating point backend).
#[derive(Clone)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CMat[{}x{}]", self.rows, self.cols)
    }
}

impl CMat {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }
}

impl OpMatrix for CMat {
    type Value = Complex64;
    const BACKEND: &'static str = "float";

    fn from_counts(rows: usize, cols: usize, q: usize, den: i64, counts: &[i64]) -> Self {
        let data = counts.chunks(q).map(|e| Complex64::c_from_counts(e, den)).collect();
        CMat { rows, cols, data }
    }

    fn identity(d: usize, _q: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            data[i * d + i] = Complex64::new(1.0, 0.0);
        }
        CMat { rows: d, cols: d, data }
    }

    fn zeros(rows: usize, cols: usize, _q: usize) -> Self {
        CMat { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }

    fn mul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows, "operator shape mismatch");
        let mut data = vec![Complex64::new(0.0, 0.0); self.rows * o.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let row = &o.data[k * o.cols..(k + 1) * o.cols];
                let dst = &mut data[i * o.cols..(i + 1) * o.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        CMat { rows: self.rows, cols: o.cols, data }
    }

    fn add(&self, o: &Self) -> Self {
        CMat { data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(), ..*self }
    }
    fn sub(&self, o: &Self) -> Self {
        CMat { data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect(), ..*self }
    }
    fn scale_rat(&self, num: i64, den: i64) -> Self {
        let s = num as f64 / den as f64;
        CMat { data: self.data.iter().map(|a| a * s).collect(), ..*self }
    }
    fn scale_value(&self, v: &Complex64) -> Self {
        CMat { data: self.data.iter().map(|a| a * v).collect(), ..*self }
    }
    fn adjoint(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j).conj());
            }
        }
        CMat { rows: self.cols, cols: self.rows, data }
    }
    fn keep_rows(&self, keep: &[bool]) -> Self {
        let mut out = self.clone();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out.data[i * self.cols..(i + 1) * self.cols].iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
            }
        }
        out
    }
    fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.get(i, j)
    }
    fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }
    fn same(&self, o: &Self) -> bool {
        (self.rows, self.cols) == (o.rows, o.cols) && self.data.iter().zip(&o.data).all(|(a, b)| close(*a, *b))
    }
    fn is_zero(&self) -> bool {
        self.data.iter().all(|a| a.norm() <= FLOAT_TOL)
    }
    fn to_c64(&self) -> Vec<Complex64> {
        self.data.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(q: usize, seed: i64) -> Vec<i64> {
        (0..4 * q).map(|i| ((i as i64 * 7 + seed * 13) % 5) - 2).collect()
    }

    #[test]
    fn small_and_big_products_agree() {
        let a = ExactMat::from_counts(2, 2, 3, 3, &sample(3, 1));
        let b = ExactMat::from_counts(2, 2, 3, 9, &sample(3, 2));
        let s = a.mul(&b);
        assert!(s.is_small());
        let big = a.clone().into_big().mul(&b.clone().into_big());
        assert!(!big.is_small());
        assert_eq!(s.to_big(), big.to_big());
        assert!(s.same(&big));
    }

    #[test]
    fn overflow_falls_back_to_big() {
        let huge = vec![i64::MAX / 2, 0, 0];
        let a = ExactMat::from_counts(1, 1, 3, 1, &huge);
        let p = a.mul(&a);
        assert!(!p.is_small());
        let v = p.entry(0, 0);
        let expect = Cyc::int(i64::MAX / 2).mul(&Cyc::int(i64::MAX / 2));
        assert_eq!(v, expect);
        let s = a.add(&a).add(&a);
        assert!(!s.is_small());
        assert_eq!(s.entry(0, 0), Cyc::int(i64::MAX / 2).mul(&Cyc::int(3)));
    }

    #[test]
    fn adjoint_conjugates() {
        // entry ζ at (0,1)
        let mut c = vec![0i64; 4 * 3];
        c[3 + 1] = 1;
        let a = ExactMat::from_counts(2, 2, 3, 1, &c);
        let adj = a.adjoint();
        assert_eq!(adj.entry(1, 0), Cyc::root(2, 3));
        assert!(adj.entry(0, 1).is_zero_c());
    }

    #[test]
    fn sums_with_denominators() {
        let one = ExactMat::identity(2, 3);
        let third = one.scale_rat(1, 3);
        let s = third.add(&third).add(&third);
        assert!(s.same(&one));
        assert!(s.sub(&one).is_zero());
        let z = one.scale_value(&Cyc::root(1, 3)).scale_value(&Cyc::root(2, 3));
        assert!(z.same(&one));
    }

    #[test]
    fn float_backend_matches_exact() {
        let counts = sample(3, 4);
        let e = ExactMat::from_counts(2, 2, 3, 3, &counts);
        let f = CMat::from_counts(2, 2, 3, 3, &counts);
        let pe = e.mul(&e.adjoint());
        let pf = f.mul(&f.adjoint());
        for (x, y) in pe.to_c64().iter().zip(pf.to_c64()) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!(pe.trace().to_c64().re - pf.trace().re < 1e-12);
    }
}
