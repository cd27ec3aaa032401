use std::fmt;

use super::field::Field;
use super::ExactError;

/// Dense row-major matrix over an exact field.
#[derive(Clone, PartialEq, Eq)]
pub struct Matrix<T: Field> {
    rows: usize,
    cols: usize,
    zero: T,
    data: Vec<T>,
}

/// Reduced row echelon form with the pivot columns it found.
pub struct Echelon<T: Field> {
    pub rref: Matrix<T>,
    pub pivots: Vec<usize>,
}

impl<T: Field> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize, proto: &T) -> Self {
        let zero = proto.zero_like();
        Matrix { rows, cols, data: vec![zero.clone(); rows * cols], zero }
    }

    pub fn identity(n: usize, proto: &T) -> Self {
        let mut m = Self::zeros(n, n, proto);
        for i in 0..n {
            m.set(i, i, proto.one_like());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, proto: &T, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, zero: proto.zero_like(), data }
    }

    pub fn from_i64(rows: &[Vec<i64>], proto: &T) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        Self::from_fn(r, c, proto, |i, j| proto.from_i64_like(rows[i][j]))
    }

    pub fn from_columns(rows: usize, cols: &[Vec<T>], proto: &T) -> Self {
        Self::from_fn(rows, cols.len(), proto, |i, j| cols[j][i].clone())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn proto(&self) -> &T {
        &self.zero
    }
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.cols + j]
    }
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }
    pub fn entries(&self) -> &[T] {
        &self.data
    }
    pub fn row(&self, i: usize) -> Vec<T> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }
    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }
    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, &self.zero, |i, j| self.get(j, i).clone())
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix { rows: self.rows, cols: self.cols, zero: self.zero.clone(), data: self.data.iter().zip(&o.data).map(|(a, b)| a.add(b)).collect() }
    }
    pub fn sub(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix { rows: self.rows, cols: self.cols, zero: self.zero.clone(), data: self.data.iter().zip(&o.data).map(|(a, b)| a.sub(b)).collect() }
    }
    pub fn neg(&self) -> Self {
        Matrix { rows: self.rows, cols: self.cols, zero: self.zero.clone(), data: self.data.iter().map(|a| a.neg()).collect() }
    }
    pub fn scale(&self, s: &T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, zero: self.zero.clone(), data: self.data.iter().map(|a| a.mul(s)).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows, "matrix shape mismatch");
        let mut out = Self::zeros(self.rows, o.cols, &self.zero);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..o.cols {
                    let b = o.get(k, j);
                    if !b.is_zero() {
                        let idx = i * o.cols + j;
                        out.data[idx] = out.data[idx].add(&a.mul(b));
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = self.zero.clone();
                for (j, vj) in v.iter().enumerate() {
                    let a = self.get(i, j);
                    if !a.is_zero() && !vj.is_zero() {
                        acc = acc.add(&a.mul(vj));
                    }
                }
                acc
            })
            .collect()
    }

    pub fn trace(&self) -> T {
        let mut acc = self.zero.clone();
        for i in 0..self.rows.min(self.cols) {
            acc = acc.add(self.get(i, i));
        }
        acc
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), &self.zero, |i, j| self.get(rows[i], cols[j]).clone())
    }

    /// Block-diagonal sum.
    pub fn direct_sum(&self, o: &Self) -> Self {
        let mut m = Self::zeros(self.rows + o.rows, self.cols + o.cols, &self.zero);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.set(i, j, self.get(i, j).clone());
            }
        }
        for i in 0..o.rows {
            for j in 0..o.cols {
                m.set(self.rows + i, self.cols + j, o.get(i, j).clone());
            }
        }
        m
    }

    pub fn kronecker(&self, o: &Self) -> Self {
        Self::from_fn(self.rows * o.rows, self.cols * o.cols, &self.zero, |i, j| {
            self.get(i / o.rows, j / o.cols).mul(o.get(i % o.rows, j % o.cols))
        })
    }

    /// Reduced row echelon form. Pivot rule: scan columns left to right and
    /// take the first row (top-down) with a nonzero entry.
    pub fn echelon(&self) -> Echelon<T> {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| !m.get(i, c).is_zero()) else { continue };
            if p != r {
                for j in 0..m.cols {
                    m.data.swap(p * m.cols + j, r * m.cols + j);
                }
            }
            let inv = m.get(r, c).inv().expect("pivot is nonzero");
            for j in c..m.cols {
                let v = m.get(r, j).mul(&inv);
                m.set(r, j, v);
            }
            for i in 0..m.rows {
                if i == r {
                    continue;
                }
                let f = m.get(i, c).clone();
                if f.is_zero() {
                    continue;
                }
                for j in c..m.cols {
                    let v = m.get(i, j).sub(&f.mul(m.get(r, j)));
                    m.set(i, j, v);
                }
            }
            pivots.push(c);
            r += 1;
        }
        Echelon { rref: m, pivots }
    }

    pub fn rank(&self) -> usize {
        self.echelon().pivots.len()
    }

    /// Basis of the right kernel, one vector per free column, with the free
    /// variable set to one (so the basis is deterministic).
    pub fn kernel_basis(&self) -> Vec<Vec<T>> {
        let e = self.echelon();
        let pivset: Vec<bool> = (0..self.cols).map(|c| e.pivots.contains(&c)).collect();
        let mut out = Vec::new();
        for free in (0..self.cols).filter(|&c| !pivset[c]) {
            let mut v = vec![self.zero.clone(); self.cols];
            v[free] = self.zero.one_like();
            for (r, &pc) in e.pivots.iter().enumerate() {
                v[pc] = e.rref.get(r, free).neg();
            }
            out.push(v);
        }
        out
    }

    /// Some solution of self·x = b (free variables zero), or None.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        assert_eq!(b.len(), self.rows, "right-hand side length mismatch");
        let aug = Self::from_fn(self.rows, self.cols + 1, &self.zero, |i, j| {
            if j < self.cols {
                self.get(i, j).clone()
            } else {
                b[i].clone()
            }
        });
        let e = aug.echelon();
        if e.pivots.last() == Some(&self.cols) {
            return None;
        }
        let mut x = vec![self.zero.clone(); self.cols];
        for (r, &pc) in e.pivots.iter().enumerate() {
            x[pc] = e.rref.get(r, self.cols).clone();
        }
        Some(x)
    }

    pub fn try_solve(&self, b: &[T]) -> Result<Option<Vec<T>>, ExactError> {
        if b.len() != self.rows {
            return Err(ExactError::Shape(format!("{}x{} system with rhs of length {}", self.rows, self.cols, b.len())));
        }
        Ok(self.solve(b))
    }

    pub fn inverse(&self) -> Option<Self> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let aug = Self::from_fn(n, 2 * n, &self.zero, |i, j| {
            if j < n {
                self.get(i, j).clone()
            } else if j - n == i {
                self.zero.one_like()
            } else {
                self.zero.clone()
            }
        });
        let e = aug.echelon();
        if e.pivots.len() < n || (n > 0 && e.pivots[n - 1] >= n) {
            return None;
        }
        Some(Self::from_fn(n, n, &self.zero, |i, j| e.rref.get(i, n + j).clone()))
    }

    pub fn det(&self) -> T {
        assert!(self.is_square());
        let n = self.rows;
        let mut m = self.clone();
        let mut d = self.zero.one_like();
        for c in 0..n {
            let Some(p) = (c..n).find(|&i| !m.get(i, c).is_zero()) else { return self.zero.clone() };
            if p != c {
                for j in 0..n {
                    m.data.swap(p * n + j, c * n + j);
                }
                d = d.neg();
            }
            let piv = m.get(c, c).clone();
            d = d.mul(&piv);
            let inv = piv.inv().expect("nonzero pivot");
            for i in c + 1..n {
                let f = m.get(i, c).mul(&inv);
                if f.is_zero() {
                    continue;
                }
                for j in c..n {
                    let v = m.get(i, j).sub(&f.mul(m.get(c, j)));
                    m.set(i, j, v);
                }
            }
        }
        d
    }

    pub fn map<U: Field>(&self, proto: &U, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix::from_fn(self.rows, self.cols, proto, |i, j| f(self.get(i, j)))
    }

    pub fn pow(&self, mut e: u64) -> Self {
        let mut base = self.clone();
        let mut acc = Self::identity(self.rows, &self.zero);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    /// Column vectors spanning the column space (pivot columns).
    pub fn column_space(&self) -> Vec<Vec<T>> {
        self.echelon().pivots.iter().map(|&c| self.col(c)).collect()
    }
}

impl<T: Field> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}x{}]", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:?}", self.get(i, j))).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// Rank of a list of vectors.
pub fn span_rank<T: Field>(vecs: &[Vec<T>], dim: usize, proto: &T) -> usize {
    if vecs.is_empty() {
        return 0;
    }
    Matrix::from_columns(dim, vecs, proto).rank()
}
