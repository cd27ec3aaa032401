//! Heisenberg and Weil representations over F_q in the Schrödinger model,
//! the Stone–von Neumann intertwiner oracle, dual-pair embeddings with the
//! tower Lagrangian, mixed-model formulas and ω_{γ′}.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::exactalg::{Coeff, Field, Fq, Matrix, OpMatrix};
use crate::formed::{lagrangian_split, mat_key, FormedError, FormedSpace, Symmetry};
use crate::orbits::NilpotentScaffold;
use crate::transfer::DualPairSetting;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WeilError {
    #[error("expected a symplectic space")]
    NotSymplectic,
    #[error("not a Lagrangian: {0}")]
    NotLagrangian(String),
    #[error("element does not preserve the symplectic form")]
    NotSymplecticElement,
    #[error("no factorization g = h·(h⁻¹g) with both factors regular")]
    NoFactorization,
    #[error("element outside the stated subgroup: {0}")]
    OutsideSubgroup(String),
    #[error(transparent)]
    Formed(#[from] FormedError),
}

fn fq_inv(a: i64, q: i64) -> i64 {
    Fq::new(a, q as u32).inv().expect("invertible").v as i64
}

/// Symplectic space W = X ⊕ Y with dual bases ⟨x_i, y_j⟩ = δ_ij; functions on Y(F_q).
#[derive(Clone, Debug)]
pub struct HeisenbergModel {
    pub q: u32,
    /// dim Y.
    pub n: usize,
    /// Columns x_1..x_n, y_1..y_n in ambient coordinates.
    pub basis: Matrix<Fq>,
    inv_basis: Matrix<Fq>,
    /// Form in (x, y) coordinates: [[0, I], [−I, 0]].
    pub om: Matrix<Fq>,
}

impl HeisenbergModel {
    /// Model with the given Lagrangian Y; X is completed greedily from the
    /// standard basis, then made dual to Y and isotropic.
    pub fn new(w: &FormedSpace<Fq>, y: &[Vec<Fq>]) -> Result<Self, WeilError> {
        if w.symmetry != Symmetry::Symplectic {
            return Err(WeilError::NotSymplectic);
        }
        let p = *w.proto();
        let q = p.q;
        let dim = w.dim();
        if 2 * y.len() != dim {
            return Err(WeilError::NotLagrangian(format!("dim Y = {} in dim W = {dim}", y.len())));
        }
        for a in y {
            for b in y {
                if !w.form(a, b).is_zero() {
                    return Err(WeilError::NotLagrangian("Y not isotropic".into()));
                }
            }
        }
        let n = y.len();
        let mut span: Vec<Vec<Fq>> = y.to_vec();
        let mut xs: Vec<Vec<Fq>> = Vec::new();
        for k in 0..dim {
            if xs.len() == n {
                break;
            }
            let e: Vec<Fq> = (0..dim).map(|i| Fq::new((i == k) as i64, q)).collect();
            let mut cand = span.clone();
            cand.push(e.clone());
            if Matrix::from_columns(dim, &cand, &p).rank() == cand.len() {
                span = cand;
                xs.push(e);
            }
        }
        if xs.len() != n {
            return Err(WeilError::NotLagrangian("Y has dependent vectors".into()));
        }
        let pm = Matrix::from_fn(n, n, &p, |i, j| w.form(&xs[i], &y[j]));
        let pinv = pm.inverse().ok_or_else(|| WeilError::NotLagrangian("degenerate pairing with X".into()))?;
        let comb = |c: &dyn Fn(usize) -> Fq, vs: &[Vec<Fq>]| -> Vec<Fq> {
            let mut out = vec![p; dim];
            for (k, v) in vs.iter().enumerate() {
                let ck = c(k);
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = o.add(&ck.mul(vi));
                }
            }
            out
        };
        let xd: Vec<Vec<Fq>> = (0..n).map(|i| comb(&|k| *pinv.get(i, k), &xs)).collect();
        let half = Fq::new(2, q).inv().expect("q odd");
        let xn: Vec<Vec<Fq>> = (0..n)
            .map(|i| {
                let corr = comb(&|j| w.form(&xd[i], &xd[j]).mul(&half), y);
                xd[i].iter().zip(&corr).map(|(a, b)| a.add(b)).collect()
            })
            .collect();
        let mut cols = xn;
        cols.extend(y.iter().cloned());
        let basis = Matrix::from_columns(dim, &cols, &p);
        let inv_basis = basis.inverse().expect("basis");
        let om = Matrix::from_fn(dim, dim, &p, |i, j| w.form(&cols[i], &cols[j]));
        let expect = Matrix::from_fn(dim, dim, &p, |i, j| {
            if j == i + n {
                Fq::new(1, q)
            } else if i == j + n {
                Fq::new(-1, q)
            } else {
                p
            }
        });
        assert_eq!(om, expect, "symplectic basis construction");
        Ok(HeisenbergModel { q, n, basis, inv_basis, om })
    }

    /// Model with the Lagrangian from symplectic Gram–Schmidt.
    pub fn from_split(w: &FormedSpace<Fq>) -> Result<Self, WeilError> {
        if w.dim() == 0 {
            return HeisenbergModel::new(w, &[]);
        }
        let (_, y) = lagrangian_split(w)?;
        HeisenbergModel::new(w, &y.basis)
    }

    pub fn dim_w(&self) -> usize {
        2 * self.n
    }

    pub fn size(&self) -> usize {
        (self.q as usize).pow(self.n as u32)
    }

    pub fn zero(&self) -> Fq {
        Fq::new(0, self.q)
    }

    /// Index Σ c_i q^i of a point of Y given by its y-coordinates.
    pub fn index(&self, yc: &[Fq]) -> usize {
        yc.iter().rev().fold(0usize, |acc, c| acc * self.q as usize + c.v as usize)
    }

    pub fn point(&self, mut idx: usize) -> Vec<Fq> {
        (0..self.n)
            .map(|_| {
                let c = Fq::new((idx % self.q as usize) as i64, self.q);
                idx /= self.q as usize;
                c
            })
            .collect()
    }

    fn point_i64(&self, idx: usize) -> Vec<i64> {
        self.point(idx).into_iter().map(|c| c.v as i64).collect()
    }

    /// (x, y) coordinates of an ambient vector.
    pub fn coords(&self, v: &[Fq]) -> Vec<Fq> {
        self.inv_basis.mul_vec(v)
    }

    pub fn ambient(&self, c: &[Fq]) -> Vec<Fq> {
        self.basis.mul_vec(c)
    }

    pub fn pair(&self, a: &[Fq], b: &[Fq]) -> Fq {
        let ob = self.om.mul_vec(b);
        a.iter().zip(&ob).fold(self.zero(), |s, (x, y)| s.add(&x.mul(y)))
    }

    /// Matrix in (x, y) coordinates of an ambient linear map.
    pub fn sp_matrix(&self, act: impl Fn(&[Fq]) -> Vec<Fq>) -> Matrix<Fq> {
        let d = self.dim_w();
        let cols: Vec<Vec<Fq>> = (0..d).map(|k| self.coords(&act(&self.basis.col(k)))).collect();
        Matrix::from_columns(d, &cols, &Fq::new(0, self.q))
    }

    pub fn is_symplectic(&self, g: &Matrix<Fq>) -> bool {
        g.rows() == self.dim_w() && g.transpose().mul(&self.om).mul(g) == self.om
    }

    /// ρ(w, t) as a monomial: row y₀ has its entry in column `targets[y₀]` with
    /// value ψ(exps[y₀]), where (ρφ)(y₀) = ψ(t + ⟨y₀, x⟩ + ½⟨y, x⟩)φ(y₀ + y).
    pub fn rho_monomial(&self, w: &[Fq], t: Fq) -> (Vec<usize>, Vec<usize>) {
        let q = self.q as i64;
        let n = self.n;
        let x: Vec<i64> = w[..n].iter().map(|c| c.v as i64).collect();
        let y: Vec<i64> = w[n..].iter().map(|c| c.v as i64).collect();
        let half = fq_inv(2, q);
        let yx: i64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let d = self.size();
        let mut targets = Vec::with_capacity(d);
        let mut exps = Vec::with_capacity(d);
        for i0 in 0..d {
            let y0 = self.point_i64(i0);
            let y0x: i64 = y0.iter().zip(&x).map(|(a, b)| a * b).sum();
            let e = (t.v as i64 - y0x - half * yx).rem_euclid(q);
            let y1: Vec<Fq> = y0.iter().zip(&y).map(|(a, b)| Fq::new(a + b, q as u32)).collect();
            targets.push(self.index(&y1));
            exps.push(e as usize);
        }
        (targets, exps)
    }

    pub fn rho<M: OpMatrix>(&self, w: &[Fq], t: Fq) -> M {
        let d = self.size();
        let q = self.q as usize;
        let (targets, exps) = self.rho_monomial(w, t);
        let mut counts = vec![0i64; d * d * q];
        for i0 in 0..d {
            counts[(i0 * d + targets[i0]) * q + exps[i0]] = 1;
        }
        M::from_counts(d, d, q, 1, &counts)
    }

    /// Canonical operator σ((−1)^n det(g−1)) q^{−n} Σ_w ψ(¼⟨κw, w⟩) ρ(w),
    /// κ = (g+1)(g−1)⁻¹; None when g − 1 is singular.
    pub fn canonical<M: OpMatrix>(&self, g: &Matrix<Fq>) -> Option<M> {
        let dim = self.dim_w();
        let p = self.zero();
        let q = self.q as i64;
        let id = Matrix::identity(dim, &p);
        let gm = g.sub(&id);
        let gmi = gm.inverse()?;
        let kappa = g.add(&id).mul(&gmi);
        let a = kappa.transpose().mul(&self.om);
        let a: Vec<i64> = a.entries().iter().map(|c| c.v as i64).collect();
        let sign = if self.n % 2 == 1 { Fq::new(-1, self.q) } else { Fq::new(1, self.q) };
        let sigma = sign.mul(&gm.det()).legendre() as i64;
        let n = self.n;
        let d = self.size();
        let qu = q as usize;
        let quarter = fq_inv(4, q);
        let half = fq_inv(2, q);
        let pts: Vec<Vec<i64>> = (0..d).map(|i| self.point_i64(i)).collect();
        let rows: Vec<Vec<i64>> = (0..d)
            .into_par_iter()
            .map(|i0| {
                let mut row = vec![0i64; d * qu];
                let y0 = &pts[i0];
                let mut wv = vec![0i64; 2 * n];
                for i1 in 0..d {
                    let y: Vec<i64> = pts[i1].iter().zip(y0).map(|(a, b)| (a - b).rem_euclid(q)).collect();
                    wv[n..].copy_from_slice(&y);
                    for x in &pts {
                        wv[..n].copy_from_slice(x);
                        let mut qv = 0i64;
                        for r in 0..2 * n {
                            if wv[r] == 0 {
                                continue;
                            }
                            let mut s = 0i64;
                            for c in 0..2 * n {
                                s += a[r * 2 * n + c] * wv[c];
                            }
                            qv += wv[r] * s;
                        }
                        let y0x: i64 = y0.iter().zip(x).map(|(u, v)| u * v).sum();
                        let yx: i64 = y.iter().zip(x).map(|(u, v)| u * v).sum();
                        let e = (quarter * qv - y0x - half * yx).rem_euclid(q) as usize;
                        row[i1 * qu + e] += sigma;
                    }
                }
                row
            })
            .collect();
        let counts: Vec<i64> = rows.concat();
        Some(M::from_counts(d, d, qu, q.pow(n as u32), &counts))
    }

    /// Random symplectic element: a product of `len` random transvections.
    pub fn random_element(&self, rng: &mut ChaCha8Rng, len: usize) -> Matrix<Fq> {
        let dim = self.dim_w();
        let p = self.zero();
        let mut g = Matrix::identity(dim, &p);
        for _ in 0..len {
            let v: Vec<Fq> = (0..dim).map(|_| Fq::new(rng.gen_range(0..self.q as i64), self.q)).collect();
            let c = Fq::new(rng.gen_range(1..self.q as i64), self.q);
            g = g.mul(&self.transvection(&v, c));
        }
        g
    }

    /// w ↦ w + c⟨w, v⟩v.
    pub fn transvection(&self, v: &[Fq], c: Fq) -> Matrix<Fq> {
        let dim = self.dim_w();
        let p = self.zero();
        let cols: Vec<Vec<Fq>> = (0..dim)
            .map(|k| {
                let e: Vec<Fq> = (0..dim).map(|i| Fq::new((i == k) as i64, self.q)).collect();
                let s = c.mul(&self.pair(&e, v));
                e.iter().zip(v).map(|(a, b)| a.add(&s.mul(b))).collect()
            })
            .collect();
        Matrix::from_columns(dim, &cols, &p)
    }

    /// Unit vector in (x, y) coordinates.
    pub fn unit(&self, k: usize) -> Vec<Fq> {
        (0..self.dim_w()).map(|i| Fq::new((i == k) as i64, self.q)).collect()
    }
}

/// Full Weil representation of Sp(W)(F_q): canonical operators for regular
/// g − 1, and ω(h)ω(h⁻¹g) through a seeded helper list otherwise.
pub struct WeilRep<M: OpMatrix> {
    pub model: Arc<HeisenbergModel>,
    helpers: Vec<(Matrix<Fq>, Matrix<Fq>)>,
    cache: RwLock<HashMap<Vec<u8>, M>>,
}

impl<M: OpMatrix> WeilRep<M> {
    pub fn new(model: Arc<HeisenbergModel>, seed: u64) -> Self {
        let mut helpers = Vec::new();
        if model.n > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let id = Matrix::identity(model.dim_w(), &model.zero());
            let mut tries = 0;
            while helpers.len() < 40 && tries < 4000 {
                tries += 1;
                let h = model.random_element(&mut rng, 2 * model.dim_w() + 2);
                if !h.sub(&id).det().is_zero() {
                    let hi = h.inverse().expect("symplectic");
                    helpers.push((h, hi));
                }
            }
        }
        WeilRep { model, helpers, cache: RwLock::new(HashMap::new()) }
    }

    pub fn size(&self) -> usize {
        self.model.size()
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("cache").len()
    }

    fn regular(&self, g: &Matrix<Fq>) -> Option<M> {
        let key = mat_key(g);
        if let Some(m) = self.cache.read().expect("cache").get(&key) {
            return Some(m.clone());
        }
        let m = self.model.canonical::<M>(g)?;
        self.cache.write().expect("cache").insert(key, m.clone());
        Some(m)
    }

    pub fn try_omega(&self, g: &Matrix<Fq>) -> Result<M, WeilError> {
        let q = self.model.q as usize;
        if self.model.n == 0 {
            return Ok(M::identity(1, q));
        }
        if !self.model.is_symplectic(g) {
            return Err(WeilError::NotSymplecticElement);
        }
        let id = Matrix::identity(self.model.dim_w(), &self.model.zero());
        if *g == id {
            return Ok(M::identity(self.size(), q));
        }
        let key = mat_key(g);
        if let Some(m) = self.cache.read().expect("cache").get(&key) {
            return Ok(m.clone());
        }
        if let Some(m) = self.regular(g) {
            return Ok(m);
        }
        for (h, hi) in &self.helpers {
            let y = hi.mul(g);
            if !y.sub(&id).det().is_zero() {
                let m = self.regular(h).expect("regular helper").mul(&self.regular(&y).expect("regular"));
                self.cache.write().expect("cache").insert(key, m.clone());
                return Ok(m);
            }
        }
        Err(WeilError::NoFactorization)
    }

    pub fn omega(&self, g: &Matrix<Fq>) -> M {
        self.try_omega(g).expect("Weil operator")
    }
}

/// Intertwiner shape from the Stone–von Neumann relations ω ρ(w) = ρ(gw) ω on a
/// basis of W, solved by union-find with ψ-exponent potentials.
#[derive(Clone, Debug)]
pub struct SvnShape {
    pub q: u32,
    pub size: usize,
    /// Dimension of the solution space.
    pub dim: usize,
    /// For a one-dimensional solution: ψ-exponent of each entry, None where forced zero.
    pub entries: Vec<Option<usize>>,
}

struct PotentialUf {
    parent: Vec<usize>,
    pot: Vec<i64>,
    bad: Vec<bool>,
    q: i64,
}

impl PotentialUf {
    fn find(&mut self, a: usize) -> (usize, i64) {
        let mut path = Vec::new();
        let mut x = a;
        while self.parent[x] != x {
            path.push(x);
            x = self.parent[x];
        }
        let root = x;
        // pot[x] is relative to parent; compress
        let mut acc = 0i64;
        for &v in path.iter().rev() {
            acc = (acc + self.pot[v]).rem_euclid(self.q);
            self.pot[v] = acc;
            self.parent[v] = root;
        }
        (root, if a == root { 0 } else { self.pot[a] })
    }

    /// val(a) = ζ^d val(b).
    fn union(&mut self, a: usize, b: usize, d: i64) {
        let (ra, pa) = self.find(a);
        let (rb, pb) = self.find(b);
        if ra == rb {
            if (pa - pb - d).rem_euclid(self.q) != 0 {
                self.bad[ra] = true;
            }
            return;
        }
        // val(a) = ζ^pa val(ra), val(b) = ζ^pb val(rb) ⇒ val(ra) = ζ^{d + pb − pa} val(rb)
        self.parent[ra] = rb;
        self.pot[ra] = (d + pb - pa).rem_euclid(self.q);
        let bad = self.bad[ra] || self.bad[rb];
        self.bad[rb] = bad;
    }
}

pub fn svn_intertwiner(model: &HeisenbergModel, g: &Matrix<Fq>) -> Result<SvnShape, WeilError> {
    if !model.is_symplectic(g) {
        return Err(WeilError::NotSymplecticElement);
    }
    let d = model.size();
    let q = model.q as i64;
    let mut uf = PotentialUf { parent: (0..d * d).collect(), pot: vec![0; d * d], bad: vec![false; d * d], q };
    let zero = model.zero();
    for k in 0..model.dim_w() {
        let w = model.unit(k);
        let gw = g.mul_vec(&w);
        let (tw, ew) = model.rho_monomial(&w, zero);
        let (tg, eg) = model.rho_monomial(&gw, zero);
        // ω[i][k] = ζ^{eg(i) − ew(k)} ω[tg(i)][tw(k)]
        for i in 0..d {
            for c in 0..d {
                let dlt = eg[i] as i64 - ew[c] as i64;
                uf.union(i * d + c, tg[i] * d + tw[c], dlt);
            }
        }
    }
    let mut good_roots = Vec::new();
    for v in 0..d * d {
        let (r, _) = uf.find(v);
        if !uf.bad[r] && !good_roots.contains(&r) {
            good_roots.push(r);
        }
    }
    let dim = good_roots.len();
    let entries = if dim == 1 {
        let root = good_roots[0];
        (0..d * d)
            .map(|v| {
                let (r, p) = uf.find(v);
                (r == root).then_some(p as usize)
            })
            .collect()
    } else {
        vec![None; d * d]
    };
    Ok(SvnShape { q: model.q, size: d, dim, entries })
}

impl SvnShape {
    pub fn to_op<M: OpMatrix>(&self) -> M {
        let d = self.size;
        let q = self.q as usize;
        let mut counts = vec![0i64; d * d * q];
        for (v, e) in self.entries.iter().enumerate() {
            if let Some(e) = e {
                counts[v * q + e] = 1;
            }
        }
        M::from_counts(d, d, q, 1, &counts)
    }

    /// Scalar λ with op = λ·shape, if the solution is one-dimensional and op is proportional.
    pub fn ratio<M: OpMatrix>(&self, op: &M) -> Option<M::Value> {
        if self.dim != 1 {
            return None;
        }
        let d = self.size;
        let q = self.q as usize;
        let (v, e) = self.entries.iter().enumerate().find_map(|(v, e)| e.map(|e| (v, e)))?;
        let mut inv = vec![0i64; q];
        inv[(q - e) % q] = 1;
        let lam = op.entry(v / d, v % d).times(&M::Value::c_from_counts(&inv, 1));
        op.same(&self.to_op::<M>().scale_value(&lam)).then_some(lam)
    }
}

/// Flattened index b·dim V + a of the elementary map E_{b,a} ∈ Hom(V, V′).
fn flat(n: usize, b: usize, a: usize) -> usize {
    b * n + a
}

fn in_tower_y(wa: i64, wb: i64) -> bool {
    (wb >= 1 && wa.abs() < wb) || (wa <= -1 && wb.abs() <= wa.abs())
}

/// Tower Lagrangian of Hom(V, V′): E_{b,a} with wt′(b) ≥ 1, |wt(a)| < wt′(b) or
/// wt(a) ≤ −1, |wt′(b)| ≤ |wt(a)|, plus a Lagrangian of Hom(V_0, V′_0).
/// Also returns the number of elementary vectors and the Y₀₀ vectors.
pub fn tower_lagrangian(setting: &DualPairSetting<Fq>, wt: &[i64], wtp: &[i64]) -> Result<(Vec<Vec<Fq>>, Vec<Vec<Fq>>), WeilError> {
    let n = setting.v.dim();
    let np = setting.vp.dim();
    let p = *setting.v.proto();
    let dim = n * np;
    let w = setting.w_space();
    let unit = |k: usize| -> Vec<Fq> { (0..dim).map(|i| Fq::new((i == k) as i64, p.q)).collect() };
    let mut y = Vec::new();
    let mut zero_pairs = Vec::new();
    for b in 0..np {
        for a in 0..n {
            if wt[a] == 0 && wtp[b] == 0 {
                zero_pairs.push(flat(n, b, a));
            } else if in_tower_y(wt[a], wtp[b]) {
                y.push(unit(flat(n, b, a)));
            }
        }
    }
    let mut y00 = Vec::new();
    if !zero_pairs.is_empty() {
        let sub = FormedSpace::new(Symmetry::Symplectic, w.gram.submatrix(&zero_pairs, &zero_pairs))?;
        let (_, ys) = lagrangian_split(&sub)?;
        for v in &ys.basis {
            let mut full = vec![p; dim];
            for (k, &idx) in zero_pairs.iter().enumerate() {
                full[idx] = v[k];
            }
            y00.push(full);
        }
    }
    y.extend(y00.iter().cloned());
    Ok((y, y00))
}

/// Weil representation of Sp(Hom(V, V′)) restricted to G × G′, with the tower Lagrangian.
pub struct DualPairWeil<M: OpMatrix> {
    pub setting: DualPairSetting<Fq>,
    pub wt: Vec<i64>,
    pub wtp: Vec<i64>,
    pub y00: Vec<Vec<Fq>>,
    pub rep: WeilRep<M>,
}

impl<M: OpMatrix> DualPairWeil<M> {
    pub fn new(setting: DualPairSetting<Fq>, wt: Vec<i64>, wtp: Vec<i64>, seed: u64) -> Result<Self, WeilError> {
        let (y, y00) = tower_lagrangian(&setting, &wt, &wtp)?;
        let model = Arc::new(HeisenbergModel::new(&setting.w_space(), &y)?);
        Ok(DualPairWeil { setting, wt, wtp, y00, rep: WeilRep::new(model, seed) })
    }

    pub fn model(&self) -> &HeisenbergModel {
        &self.rep.model
    }

    pub fn size(&self) -> usize {
        self.rep.size()
    }

    /// Action F ↦ F g⁻¹ in (x, y) coordinates.
    pub fn embed_g(&self, g: &Matrix<Fq>) -> Matrix<Fq> {
        let gi = g.inverse().expect("invertible");
        self.model().sp_matrix(|v| self.setting.flatten(&self.setting.unflatten(v).mul(&gi)))
    }

    /// Action F ↦ g′F.
    pub fn embed_gp(&self, gp: &Matrix<Fq>) -> Matrix<Fq> {
        self.model().sp_matrix(|v| self.setting.flatten(&gp.mul(&self.setting.unflatten(v))))
    }

    /// σ(det h)^{dim(other)/2} for h in the orthogonal member.
    fn twist(&self, h: &Matrix<Fq>, other_dim: usize, orthogonal: bool) -> i64 {
        if !orthogonal {
            return 1;
        }
        let s = h.det().legendre() as i64;
        if (other_dim / 2) % 2 == 1 {
            s
        } else {
            1
        }
    }

    pub fn omega_g(&self, g: &Matrix<Fq>) -> M {
        let t = self.twist(g, self.setting.vp.dim(), self.setting.v.symmetry == Symmetry::Orthogonal);
        let m = self.rep.omega(&self.embed_g(g));
        if t == 1 {
            m
        } else {
            m.scale_rat(-1, 1)
        }
    }

    pub fn omega_gp(&self, gp: &Matrix<Fq>) -> M {
        let t = self.twist(gp, self.setting.v.dim(), self.setting.vp.symmetry == Symmetry::Orthogonal);
        let m = self.rep.omega(&self.embed_gp(gp));
        if t == 1 {
            m
        } else {
            m.scale_rat(-1, 1)
        }
    }

    /// Index of F as a point of Y, or None if F ∉ Y.
    pub fn point_of(&self, f: &Matrix<Fq>) -> Option<usize> {
        let c = self.model().coords(&self.setting.flatten(f));
        let n = self.model().n;
        c[..n].iter().all(|x| x.is_zero()).then(|| self.model().index(&c[n..]))
    }

    pub fn map_of_point(&self, idx: usize) -> Matrix<Fq> {
        let m = self.model();
        let mut c = vec![m.zero(); m.n];
        c.extend(m.point(idx));
        self.setting.unflatten(&m.ambient(&c))
    }
}

/// Σ_{y ∈ Y(F_q)} (op·φ)(y).
pub fn theta_sum<M: OpMatrix>(phi: &[M::Value], op: &M) -> M::Value {
    let d = op.rows();
    let mut s: Option<M::Value> = None;
    for i in 0..d {
        for (j, pj) in phi.iter().enumerate() {
            let t = op.entry(i, j).times(pj);
            s = Some(match s {
                None => t,
                Some(a) => a.plus(&t),
            });
        }
    }
    s.unwrap_or_else(|| phi.first().map(|p| p.minus(p)).expect("nonempty"))
}

/// Which formula of the mixed model is being checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixedKind {
    G,
    ZPrime,
    QPrime,
    MPrime,
}

/// Mixed model Hom(V_(r), V′_{r+1}) × Y_(r),(r) for the top level r + 1 of V′.
pub struct MixedModel<'a, M: OpMatrix> {
    pub full: &'a DualPairWeil<M>,
    pub inner: HeisenbergModel,
    pub inner_rep: WeilRep<M>,
    pub top: i64,
    /// Outer Y coordinates (indices into the full y-coordinates) and inner ones.
    outer_pos: Vec<usize>,
    inner_pos: Vec<usize>,
    inner_entries: Vec<usize>,
}

/// Result of comparing a mixed-model formula with the full Weil operator.
#[derive(Clone, Debug)]
pub struct MixedCheck<V> {
    pub kind: MixedKind,
    /// full = scalar · formula; None if not proportional.
    pub scalar: Option<V>,
}

impl<'a, M: OpMatrix> MixedModel<'a, M> {
    pub fn new(full: &'a DualPairWeil<M>, seed: u64) -> Result<Self, WeilError> {
        let top = full.wtp.iter().copied().max().unwrap_or(0);
        let n = full.setting.v.dim();
        let np = full.setting.vp.dim();
        let inner_rows: Vec<usize> = (0..np).filter(|&b| full.wtp[b].abs() < top).collect();
        let inner_entries: Vec<usize> = inner_rows.iter().flat_map(|&b| (0..n).map(move |a| flat(n, b, a))).collect();
        let model = full.model();
        let dn = model.n;
        let mut outer_pos = Vec::new();
        let mut inner_pos = Vec::new();
        for k in 0..dn {
            let v = model.basis.col(dn + k);
            let nz: Vec<usize> = (0..v.len()).filter(|&i| !v[i].is_zero()).collect();
            if nz.iter().all(|i| inner_entries.contains(i)) {
                inner_pos.push(k);
            } else if nz.iter().all(|i| !inner_entries.contains(i)) {
                outer_pos.push(k);
            } else {
                return Err(WeilError::NotLagrangian("tower Y mixes levels".into()));
            }
        }
        for k in 0..dn {
            let v = model.basis.col(k);
            let nz_in = (0..v.len()).any(|i| !v[i].is_zero() && inner_entries.contains(&i));
            let nz_out = (0..v.len()).any(|i| !v[i].is_zero() && !inner_entries.contains(&i));
            if nz_in && nz_out {
                return Err(WeilError::NotLagrangian("X mixes levels".into()));
            }
        }
        let w = full.setting.w_space();
        let sub = FormedSpace::new(Symmetry::Symplectic, w.gram.submatrix(&inner_entries, &inner_entries))?;
        let y_in: Vec<Vec<Fq>> = inner_pos.iter().map(|&k| inner_entries.iter().map(|&i| *model.basis.get(i, dn + k)).collect()).collect();
        let inner = HeisenbergModel::new(&sub, &y_in)?;
        let inner_rep = WeilRep::new(Arc::new(inner.clone()), seed);
        Ok(MixedModel { full, inner, inner_rep, top, outer_pos, inner_pos, inner_entries })
    }

    fn split(&self, idx: usize) -> (Vec<Fq>, usize) {
        let c = self.full.model().point(idx);
        let outer: Vec<Fq> = self.outer_pos.iter().map(|&k| c[k]).collect();
        let inner: Vec<Fq> = self.inner_pos.iter().map(|&k| c[k]).collect();
        (outer, self.inner.index(&inner))
    }

    /// F ∈ Hom(V_(r), V′_{r+1}) of a full point.
    fn outer_map(&self, idx: usize) -> Matrix<Fq> {
        let m = self.full.model();
        let mut c = vec![m.zero(); m.n];
        let pt = m.point(idx);
        let mut y = vec![m.zero(); m.n];
        for &k in &self.outer_pos {
            y[k] = pt[k];
        }
        c.extend(y);
        self.full.setting.unflatten(&m.ambient(&c))
    }

    fn join(&self, outer: &[Fq], inner_idx: usize) -> usize {
        let m = self.full.model();
        let mut c = vec![m.zero(); m.n];
        for (k, &pos) in self.outer_pos.iter().enumerate() {
            c[pos] = outer[k];
        }
        for (k, &pos) in self.inner_pos.iter().enumerate() {
            c[pos] = self.inner.point(inner_idx)[k];
        }
        m.index(&c)
    }

    fn outer_coords(&self, f: &Matrix<Fq>) -> Option<Vec<Fq>> {
        let m = self.full.model();
        let c = m.coords(&self.full.setting.flatten(f));
        let n = m.n;
        let ok = c[..n].iter().all(|x| x.is_zero()) && self.inner_pos.iter().all(|&k| c[n + k].is_zero());
        ok.then(|| self.outer_pos.iter().map(|&k| c[n + k]).collect())
    }

    /// Inner (x, y) coordinates of an element of Hom(V_(r), V′_(r)).
    fn inner_coords(&self, f: &Matrix<Fq>) -> Vec<Fq> {
        let flatv = self.full.setting.flatten(f);
        let v: Vec<Fq> = self.inner_entries.iter().map(|&i| flatv[i]).collect();
        self.inner.coords(&v)
    }

    /// Embedding of g ∈ G into the inner symplectic group.
    fn inner_g(&self, g: &Matrix<Fq>) -> Matrix<Fq> {
        let gi = g.inverse().expect("invertible");
        let s = &self.full.setting;
        let dim = self.inner_entries.len();
        let p = self.inner.zero();
        self.inner.sp_matrix(|v| {
            let mut full = vec![p; s.dim_w()];
            for (k, &i) in self.inner_entries.iter().enumerate() {
                full[i] = v[k];
            }
            let img = s.flatten(&s.unflatten(&full).mul(&gi));
            let out: Vec<Fq> = self.inner_entries.iter().map(|&i| img[i]).collect();
            debug_assert_eq!(out.len(), dim);
            out
        })
    }

    /// Operator given by the mixed-model formula for `kind`, without scalar.
    pub fn formula(&self, kind: MixedKind, elem: &Matrix<Fq>) -> Result<M, WeilError> {
        let m = self.full.model();
        let d = m.size();
        let q = m.q as usize;
        let mut counts = vec![0i64; d * d * q];
        let s = &self.full.setting;
        match kind {
            MixedKind::G => {
                let inner_op = self.inner_rep.omega(&self.inner_g(elem));
                let di = self.inner.size();
                let mut builder: Vec<(usize, usize, M::Value)> = Vec::new();
                for i0 in 0..d {
                    let (_, y0) = self.split(i0);
                    let fg = self.outer_map(i0).mul(elem);
                    let oc = self.outer_coords(&fg).ok_or_else(|| WeilError::OutsideSubgroup("F·g leaves Y_out".into()))?;
                    for y1 in 0..di {
                        builder.push((i0, self.join(&oc, y1), inner_op.entry(y0, y1)));
                    }
                }
                return Ok(assemble::<M>(d, q, builder));
            }
            MixedKind::ZPrime => {
                let z = elem.sub(&Matrix::identity(elem.rows(), elem.proto()));
                let half = Fq::new(2, m.q).inv().expect("q odd");
                for i0 in 0..d {
                    let f = self.outer_map(i0);
                    let e = z.mul(&f).mul(&s.adjoint(&f)).trace().mul(&half);
                    counts[(i0 * d + i0) * q + e.v as usize] = 1;
                }
            }
            MixedKind::QPrime => {
                let x = self.q_component(elem);
                let mut builder: Vec<(usize, usize, M::Value)> = Vec::new();
                for i0 in 0..d {
                    let (oc, y0) = self.split(i0);
                    let f = self.outer_map(i0);
                    // the pairing ψ(Tr(q′F·F₋*)) is ψ(⟨x, y₀⟩), i.e. ρ(−w) in this model
                    let w = self.inner_coords(&x.mul(&f).neg());
                    let (tg, ex) = self.inner.rho_monomial(&w, self.inner.zero());
                    let mut c = vec![0i64; q];
                    c[ex[y0]] = 1;
                    builder.push((i0, self.join(&oc, tg[y0]), M::Value::c_from_counts(&c, 1)));
                }
                return Ok(assemble::<M>(d, q, builder));
            }
            MixedKind::MPrime => {
                let mi = elem.inverse().expect("invertible");
                for i0 in 0..d {
                    let f = mi.mul(&self.outer_map(i0));
                    let oc = self.outer_coords(&f).ok_or_else(|| WeilError::OutsideSubgroup("m′⁻¹F leaves Y_out".into()))?;
                    let (_, y0) = self.split(i0);
                    counts[(i0 * d + self.join(&oc, y0)) * q] = 1;
                }
            }
        }
        Ok(M::from_counts(d, d, q, 1, &counts))
    }

    /// Component of u′ − 1 in Hom(V′_{top}, V′_(top−1)).
    fn q_component(&self, u: &Matrix<Fq>) -> Matrix<Fq> {
        let x = u.sub(&Matrix::identity(u.rows(), u.proto()));
        let wtp = &self.full.wtp;
        Matrix::from_fn(x.rows(), x.cols(), x.proto(), |b, a| {
            if wtp[a] == self.top && wtp[b].abs() < self.top {
                *x.get(b, a)
            } else {
                Fq::new(0, x.proto().q)
            }
        })
    }

    pub fn check(&self, kind: MixedKind, elem: &Matrix<Fq>) -> Result<MixedCheck<M::Value>, WeilError> {
        let formula = self.formula(kind, elem)?;
        let full = match kind {
            MixedKind::G => self.full.omega_g(elem),
            _ => self.full.omega_gp(elem),
        };
        Ok(MixedCheck { kind, scalar: proportion(&full, &formula) })
    }
}

fn assemble<M: OpMatrix>(d: usize, q: usize, entries: Vec<(usize, usize, M::Value)>) -> M {
    let mut acc = M::zeros(d, d, q);
    for (i, j, v) in entries {
        if v.is_zero_c() {
            continue;
        }
        let mut c = vec![0i64; d * d * q];
        c[(i * d + j) * q] = 1;
        acc = acc.add(&M::from_counts(d, d, q, 1, &c).scale_value(&v));
    }
    acc
}

/// λ with a = λ·b, if it exists.
pub fn proportion<M: OpMatrix>(a: &M, b: &M) -> Option<M::Value> {
    let d = b.rows();
    let (i, j) = (0..d).flat_map(|i| (0..b.cols()).map(move |j| (i, j))).find(|&(i, j)| !b.entry(i, j).is_zero_c())?;
    let bij = b.entry(i, j);
    let lam = a.entry(i, j).times(&bij.inv_c()?);
    a.same(&b.scale_value(&lam)).then_some(lam)
}

/// ω_{γ′}: the Heisenberg–Weil representation of U′ on functions on a
/// Lagrangian of 𝔤′_{−1} with ⟨v, w⟩ = ½Tr(e′[v, w]).
pub struct HeisenbergWeilGamma<M: OpMatrix> {
    pub scaffold: NilpotentScaffold<Fq>,
    pub basis: Vec<Matrix<Fq>>,
    pub space: FormedSpace<Fq>,
    pub rep: WeilRep<M>,
}

impl<M: OpMatrix> HeisenbergWeilGamma<M> {
    pub fn new(scaffold: &NilpotentScaffold<Fq>, seed: u64) -> Result<Self, WeilError> {
        let basis = scaffold.g_minus1();
        let p = *scaffold.real.proto();
        let e = &scaffold.real.e;
        let half = Fq::new(2, p.q).inv().expect("q odd");
        let gram = Matrix::from_fn(basis.len(), basis.len(), &p, |i, j| {
            let br = basis[i].mul(&basis[j]).sub(&basis[j].mul(&basis[i]));
            e.mul(&br).trace().mul(&half)
        });
        let space = FormedSpace::new(Symmetry::Symplectic, gram)?;
        let model = Arc::new(HeisenbergModel::from_split(&space)?);
        Ok(HeisenbergWeilGamma { scaffold: scaffold.clone(), basis, space, rep: WeilRep::new(model, seed) })
    }

    pub fn model(&self) -> &HeisenbergModel {
        &self.rep.model
    }

    /// Coordinates of v ∈ 𝔤′_{−1} in the chosen basis.
    pub fn lie_coords(&self, v: &Matrix<Fq>) -> Option<Vec<Fq>> {
        let p = *self.scaffold.real.proto();
        if self.basis.is_empty() {
            return v.is_zero().then(Vec::new);
        }
        let cols: Vec<Vec<Fq>> = self.basis.iter().map(|b| b.entries().to_vec()).collect();
        let a = Matrix::from_columns(v.rows() * v.cols(), &cols, &p);
        let c = a.solve(v.entries())?;
        (a.mul_vec(&c) == v.entries()).then_some(c)
    }

    /// Image (v, t) of u ∈ U′ in the Heisenberg group: v the weight −1 part of u − 1,
    /// t = ½Tr(e′(u − 1)) − ¼Tr(e′v²).
    pub fn heisenberg_image(&self, u: &Matrix<Fq>) -> Option<(Vec<Fq>, Fq)> {
        let real = &self.scaffold.real;
        let x = u.sub(&Matrix::identity(u.rows(), u.proto()));
        let w = &real.weights;
        let v = Matrix::from_fn(x.rows(), x.cols(), x.proto(), |a, b| {
            if w[a] - w[b] == -1 {
                *x.get(a, b)
            } else {
                Fq::new(0, x.proto().q)
            }
        });
        let q = real.proto().q;
        let half = Fq::new(2, q).inv().expect("q odd");
        let quarter = Fq::new(4, q).inv().expect("q odd");
        let t = real.e.mul(&x).trace().mul(&half).sub(&real.e.mul(&v).mul(&v).trace().mul(&quarter));
        Some((self.lie_coords(&v)?, t))
    }

    pub fn omega_u(&self, u: &Matrix<Fq>) -> Option<M> {
        let (c, t) = self.heisenberg_image(u)?;
        let w = self.model().coords(&c);
        Some(self.model().rho(&w, t))
    }

    /// Ad(l) on 𝔤′_{−1} in (x, y) coordinates.
    pub fn ad_matrix(&self, l: &Matrix<Fq>) -> Option<Matrix<Fq>> {
        let li = l.inverse()?;
        let n = self.basis.len();
        let p = *self.scaffold.real.proto();
        let mut cols = Vec::with_capacity(n);
        for b in &self.basis {
            cols.push(self.lie_coords(&l.mul(b).mul(&li))?);
        }
        let ad = Matrix::from_columns(n, &cols, &p);
        let m = self.model();
        Some(m.sp_matrix(|v| ad.mul_vec(v)))
    }

    pub fn omega_l(&self, l: &Matrix<Fq>) -> Option<M> {
        let g = self.ad_matrix(l)?;
        self.rep.try_omega(&g).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactalg::{CMat, Cyc, ExactMat};
    use crate::formed::isometry_points;
    use crate::orbits::{build_scaffold, realize_sl2};
    use crate::transfer::{datum_on_model, transfer_with_witness};
    use std::collections::BTreeMap;

    fn q3() -> Fq {
        Fq::new(0, 3)
    }

    fn sp2_model(q: u32) -> HeisenbergModel {
        HeisenbergModel::from_split(&FormedSpace::standard_symplectic(2, &Fq::new(0, q)).unwrap()).unwrap()
    }

    fn orth(diag: &[i64]) -> FormedSpace<Fq> {
        FormedSpace::diagonal(&diag.iter().map(|&x| Fq::new(x, 3)).collect::<Vec<_>>(), &q3()).unwrap()
    }

    #[test]
    fn trivial_and_central() {
        let z = HeisenbergModel::from_split(&FormedSpace::zero(Symmetry::Symplectic, &q3())).unwrap();
        assert_eq!(z.size(), 1);
        let r: ExactMat = z.rho(&[], Fq::new(1, 3));
        assert_eq!(r.entry(0, 0), Cyc::root(1, 3));
        let m = sp2_model(3);
        let c: ExactMat = m.rho(&[q3(), q3()], Fq::new(1, 3));
        assert!(c.same(&ExactMat::identity(3, 3).scale_value(&Cyc::root(1, 3))));
    }

    #[test]
    fn heisenberg_relation_exhaustive() {
        let m = sp2_model(3);
        let pts: Vec<Vec<Fq>> = (0..9).map(|k| vec![Fq::new(k % 3, 3), Fq::new(k / 3, 3)]).collect();
        let half = Fq::new(2, 3).inv().unwrap();
        for a in &pts {
            for b in &pts {
                let ra: ExactMat = m.rho(a, q3());
                let rb: ExactMat = m.rho(b, q3());
                let sum: Vec<Fq> = a.iter().zip(b).map(|(x, y)| x.add(y)).collect();
                let rs: ExactMat = m.rho(&sum, m.pair(a, b).mul(&half));
                assert!(ra.mul(&rb).same(&rs));
            }
        }
    }

    #[test]
    fn commutant_is_scalar() {
        for q in [3u32, 5] {
            let m = sp2_model(q);
            let s = svn_intertwiner(&m, &Matrix::identity(2, &Fq::new(0, q))).unwrap();
            assert_eq!(s.dim, 1);
        }
    }

    #[test]
    fn sp2_representation_exhaustive() {
        let w = FormedSpace::standard_symplectic(2, &q3()).unwrap();
        let m = Arc::new(HeisenbergModel::from_split(&w).unwrap());
        let rep: WeilRep<ExactMat> = WeilRep::new(m.clone(), 1);
        let pts = isometry_points(&w, 4).unwrap();
        assert_eq!(pts.len(), 24);
        let gs: Vec<Matrix<Fq>> = pts.iter().map(|g| m.sp_matrix(|v| g.mul_vec(v))).collect();
        for g in &gs {
            let s = svn_intertwiner(&m, g).unwrap();
            assert_eq!(s.dim, 1);
            assert!(s.ratio(&rep.omega(g)).is_some());
        }
        for a in &gs {
            for b in &gs {
                assert!(rep.omega(a).mul(&rep.omega(b)).same(&rep.omega(&a.mul(b))));
            }
        }
        let minus = Matrix::identity(2, &q3()).neg();
        assert!(rep.omega(&minus).mul(&rep.omega(&minus)).same(&ExactMat::identity(3, 3)));
    }

    #[test]
    fn float_backend_agrees() {
        let m = Arc::new(sp2_model(5));
        let ex: WeilRep<ExactMat> = WeilRep::new(m.clone(), 3);
        let fl: WeilRep<CMat> = WeilRep::new(m.clone(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let g = m.random_element(&mut rng, 4);
            let a = ex.omega(&g).to_c64();
            let b = fl.omega(&g).to_c64();
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-9));
        }
    }

    #[test]
    fn theta_sums() {
        let m = sp2_model(3);
        let id = ExactMat::identity(3, 3);
        let mut delta = vec![Cyc::zero(3); 3];
        delta[0] = Cyc::one(3);
        assert_eq!(theta_sum(&delta, &id), Cyc::one(3));
        let ones = vec![Cyc::one(3); 3];
        assert_eq!(theta_sum(&ones, &id), Cyc::int(3));
        // Weyl element: Fourier transform, θ(ω(w)δ₀) = Σ_y of a constant 1/√q·σ profile
        let weyl = m.sp_matrix(|v| vec![v[1].neg(), v[0]]);
        let rep: WeilRep<ExactMat> = WeilRep::new(Arc::new(m), 1);
        let op = rep.omega(&weyl);
        let s = theta_sum(&delta, &op);
        let col: Vec<Cyc> = (0..3).map(|i| op.entry(i, 0)).collect();
        assert!(col.iter().all(|c| c == &col[0]));
        assert_eq!(s, col[0].mul(&Cyc::int(3)));
    }

    fn p2() -> DualPairWeil<ExactMat> {
        let g = datum_on_model(Symmetry::Orthogonal, [(3usize, orth(&[1]))].into_iter().collect(), &q3()).unwrap();
        let w = transfer_with_witness(&g, &FormedSpace::standard_symplectic(2, &q3()).unwrap()).unwrap().unwrap();
        DualPairWeil::new(w.setting.clone(), w.gamma.weights.clone(), w.gamma_p.weights.clone(), 5).unwrap()
    }

    #[test]
    fn dual_pair_embeddings_commute_and_represent() {
        let dp = p2();
        assert_eq!(dp.size(), 27);
        let gpts = isometry_points(&dp.setting.v, 4).unwrap();
        let gppts = isometry_points(&dp.setting.vp, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..6 {
            let a = &gpts[rng.gen_range(0..gpts.len())];
            let b = &gpts[rng.gen_range(0..gpts.len())];
            assert!(dp.omega_g(a).mul(&dp.omega_g(b)).same(&dp.omega_g(&a.mul(b))));
            let c = &gppts[rng.gen_range(0..gppts.len())];
            assert!(dp.omega_g(a).mul(&dp.omega_gp(c)).same(&dp.omega_gp(c).mul(&dp.omega_g(a))));
        }
    }

    #[test]
    fn mixed_model_formulas_on_p2() {
        let dp = p2();
        let mm = MixedModel::new(&dp, 4).unwrap();
        let gpts = isometry_points(&dp.setting.v, 4).unwrap();
        for g in &gpts {
            let c = mm.check(MixedKind::G, g).unwrap();
            assert_eq!(c.scalar, Some(Cyc::one(3)), "G formula");
        }
        let gp = datum_on_model(Symmetry::Orthogonal, [(3usize, orth(&[1]))].into_iter().collect(), &q3()).unwrap();
        let sc = build_scaffold(&realize_sl2(&gp));
        let top = 2;
        for z in sc.z_level_points(top).unwrap() {
            let c = mm.check(MixedKind::ZPrime, &z).unwrap();
            assert!(c.scalar.is_some(), "Z′ formula");
            if z == Matrix::identity(3, &q3()) {
                assert_eq!(c.scalar.unwrap(), Cyc::one(3));
            }
        }
        let mut n_q = 0;
        for u in sc.u_level_points(top).unwrap() {
            let c = mm.check(MixedKind::QPrime, &u).unwrap();
            assert_eq!(c.scalar, Some(Cyc::one(3)), "Q′ formula");
            n_q += 1;
        }
        assert_eq!(n_q, 3);
        for a in 1..3 {
            let m = Matrix::from_i64(&[vec![a, 0, 0], vec![0, 1, 0], vec![0, 0, a]], &q3());
            assert!(dp.setting.vp.is_isometry(&m));
            let c = mm.check(MixedKind::MPrime, &m).unwrap();
            assert_eq!(c.scalar, Some(Cyc::one(3)), "M′ formula with ν = 1");
        }
    }

    #[test]
    fn heisenberg_weil_gamma_odd_orbit() {
        let std2 = FormedSpace::standard_symplectic(2, &q3()).unwrap();
        let forms: BTreeMap<usize, FormedSpace<Fq>> = [(2usize, orth(&[1])), (1, std2)].into_iter().collect();
        let gp = datum_on_model(Symmetry::Symplectic, forms, &q3()).unwrap();
        let sc = build_scaffold(&realize_sl2(&gp));
        let hw: HeisenbergWeilGamma<ExactMat> = HeisenbergWeilGamma::new(&sc, 1).unwrap();
        assert_eq!(hw.basis.len(), 2);
        assert_eq!(hw.model().size(), 3);
        let u = sc.u_points().unwrap();
        let up = sc.u_plus_points().unwrap();
        for x in &up {
            let chi = crate::orbits::chi_gamma(&sc, x).unwrap();
            assert!(hw.omega_u(x).unwrap().same(&ExactMat::identity(3, 3).scale_value(&chi)));
        }
        for a in &u {
            for b in &u {
                let lhs = hw.omega_u(a).unwrap().mul(&hw.omega_u(b).unwrap());
                assert!(lhs.same(&hw.omega_u(&a.mul(b)).unwrap()));
            }
        }
    }

    #[test]
    fn random_products_in_sp6() {
        let dp = p2();
        let m = dp.model().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..4 {
            let a = m.random_element(&mut rng, 8);
            let b = m.random_element(&mut rng, 8);
            let s = svn_intertwiner(&m, &a).unwrap();
            assert_eq!(s.dim, 1);
            assert!(s.ratio(&dp.rep.omega(&a)).is_some());
            assert!(dp.rep.omega(&a).mul(&dp.rep.omega(&b)).same(&dp.rep.omega(&a.mul(&b))));
        }
    }
}
