//! Nilpotent orbit data for classical groups: validation, explicit sl2
//! triples, weight gradings, unipotent scaffolding and the character χ_γ.

use std::collections::BTreeMap;

use num_traits::Signed;

use crate::exactalg::{Cyc, Field, Fq, Matrix, Rat};
use crate::formed::{adjoint_matrix, isometry_points, least_nonsquare, mat_key, FormedError, FormedSpace, Symmetry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrbitError {
    #[error("partition sums to {sum} but dim V = {dim}")]
    SizeMismatch { sum: usize, dim: usize },
    #[error("{rule}: part {part} has multiplicity {mult}")]
    Parity { part: usize, mult: usize, rule: &'static str },
    #[error("missing multiplicity form for part {0}")]
    MissingForm(usize),
    #[error("multiplicity form given for part {0}, which does not occur")]
    UnexpectedForm(usize),
    #[error("multiplicity form for part {j} has dim {got}, expected {expected}")]
    FormDim { j: usize, expected: usize, got: usize },
    #[error("multiplicity form for part {j} must be {expected:?}")]
    FormSymmetry { j: usize, expected: Symmetry },
    #[error("multiplicity forms are not compatible with the ambient form: {0}")]
    Incompatible(String),
    #[error("matrix is not nilpotent of order < q = {0}")]
    QTooSmall(u32),
    #[error("level {m} out of range 0..={r}")]
    LevelOutOfRange { m: i64, r: i64 },
    #[error("element is not in U+")]
    NotInUPlus,
    #[error("inconsistent unipotent layer {0}")]
    InconsistentLayer(i64),
    #[error(transparent)]
    Formed(#[from] FormedError),
}

pub fn normalize_partition(p: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = p.iter().copied().filter(|&x| x > 0).collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v
}

/// Part size -> multiplicity.
pub fn multiplicities(p: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &x in p.iter().filter(|&&x| x > 0) {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Symmetry type of the multiplicity form B_j.
pub fn multiplicity_symmetry(ambient: Symmetry, j: usize) -> Symmetry {
    match (ambient, j.is_multiple_of(2)) {
        (Symmetry::Orthogonal, true) | (Symmetry::Symplectic, false) => Symmetry::Symplectic,
        _ => Symmetry::Orthogonal,
    }
}

/// Fields where orthogonal forms can be compared (up to the classification
/// used here) and complemented.
pub trait WittField: Field {
    /// Whether two nondegenerate symmetric Gram matrices of equal size are
    /// in the same class (dimension and determinant square class).
    fn same_orthogonal_class(a: &Matrix<Self>, b: &Matrix<Self>) -> bool;
    /// Diagonal form X of dimension `dim` with det(part)·det(X) in the class of det(total).
    fn complement(total_det: &Self, part_det: &Self, dim: usize) -> Option<Matrix<Self>>;
}

fn is_rational_square(r: &Rat) -> bool {
    if r.0.is_negative() {
        return false;
    }
    let n = r.0.numer();
    let d = r.0.denom();
    let sn = n.sqrt();
    let sd = d.sqrt();
    &(&sn * &sn) == n && &(&sd * &sd) == d
}

impl WittField for Rat {
    fn same_orthogonal_class(a: &Matrix<Rat>, b: &Matrix<Rat>) -> bool {
        if a.rows() != b.rows() {
            return false;
        }
        if a.rows() == 0 {
            return true;
        }
        match a.det().div(&b.det()) {
            Some(r) => is_rational_square(&r),
            None => false,
        }
    }
    fn complement(total_det: &Rat, part_det: &Rat, dim: usize) -> Option<Matrix<Rat>> {
        let ratio = total_det.div(part_det)?;
        if dim == 0 {
            return is_rational_square(&ratio).then(|| Matrix::zeros(0, 0, &Rat::zero()));
        }
        let p = Rat::zero();
        Some(Matrix::from_fn(dim, dim, &p, |i, j| if i != j { Rat::zero() } else if i + 1 == dim { ratio.clone() } else { Rat::one() }))
    }
}

impl WittField for Fq {
    fn same_orthogonal_class(a: &Matrix<Fq>, b: &Matrix<Fq>) -> bool {
        a.rows() == b.rows() && (a.rows() == 0 || a.det().legendre() == b.det().legendre())
    }
    fn complement(total_det: &Fq, part_det: &Fq, dim: usize) -> Option<Matrix<Fq>> {
        let q = total_det.q;
        let want = total_det.legendre() * part_det.legendre();
        let p = Fq::new(0, q);
        if dim == 0 {
            return (want == 1).then(|| Matrix::zeros(0, 0, &p));
        }
        let last = if want == 1 { Fq::new(1, q) } else { least_nonsquare(q) };
        Some(Matrix::from_fn(dim, dim, &p, |i, j| if i != j { p } else if i + 1 == dim { last } else { Fq::new(1, q) }))
    }
}

/// Integer sl2 block on W_j: e w_i = w_{i−1}, h w_i = (j−1−2i) w_i,
/// f w_i = (i+1)(j−1−i) w_{i+1}, A_j(w_i, w_{j−1−i}) = (−1)^{i+j+1}.
pub fn sl2_block(j: usize) -> [Vec<Vec<i64>>; 4] {
    let mut e = vec![vec![0i64; j]; j];
    let mut h = vec![vec![0i64; j]; j];
    let mut f = vec![vec![0i64; j]; j];
    let mut a = vec![vec![0i64; j]; j];
    for i in 0..j {
        h[i][i] = j as i64 - 1 - 2 * i as i64;
        if i >= 1 {
            e[i - 1][i] = 1;
        }
        if i + 1 < j {
            f[i + 1][i] = ((i + 1) * (j - 1 - i)) as i64;
        }
        a[i][j - 1 - i] = if (i + j + 1).is_multiple_of(2) { 1 } else { -1 };
    }
    [e, h, f, a]
}

/// Nilpotent orbit datum: partition and multiplicity forms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrbitDatum<T: Field> {
    pub ambient: FormedSpace<T>,
    pub partition: Vec<usize>,
    pub forms: BTreeMap<usize, FormedSpace<T>>,
}

/// One isotypic block V^j ⊗ W_j inside the model space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub j: usize,
    pub mult: usize,
    pub offset: usize,
}

/// Model space ⊕_j (V^j, B_j) ⊗ (W_j, A_j) with blocks in decreasing j, plus e, h, f.
pub struct Model<T: Field> {
    pub space: FormedSpace<T>,
    pub e: Matrix<T>,
    pub h: Matrix<T>,
    pub f: Matrix<T>,
    pub weights: Vec<i64>,
    pub blocks: Vec<Block>,
}

pub fn build_model<T: Field>(symmetry: Symmetry, forms: &BTreeMap<usize, FormedSpace<T>>, proto: &T) -> Model<T> {
    let mut gram = Matrix::zeros(0, 0, proto);
    let (mut e, mut h, mut f) = (gram.clone(), gram.clone(), gram.clone());
    let mut weights = Vec::new();
    let mut blocks = Vec::new();
    let mut offset = 0;
    for (&j, bj) in forms.iter().rev() {
        let a = bj.dim();
        if a == 0 {
            continue;
        }
        let [be, bh, bf, ba] = sl2_block(j);
        let id = Matrix::identity(a, proto);
        gram = gram.direct_sum(&bj.gram.kronecker(&Matrix::from_i64(&ba, proto)));
        e = e.direct_sum(&id.kronecker(&Matrix::from_i64(&be, proto)));
        h = h.direct_sum(&id.kronecker(&Matrix::from_i64(&bh, proto)));
        f = f.direct_sum(&id.kronecker(&Matrix::from_i64(&bf, proto)));
        for _ in 0..a {
            for i in 0..j {
                weights.push(j as i64 - 1 - 2 * i as i64);
            }
        }
        blocks.push(Block { j, mult: a, offset });
        offset += a * j;
    }
    Model { space: FormedSpace { symmetry, gram }, e, h, f, weights, blocks }
}

pub fn validate_datum<T: WittField>(
    ambient: &FormedSpace<T>,
    partition: &[usize],
    forms: &BTreeMap<usize, FormedSpace<T>>,
) -> Result<OrbitDatum<T>, OrbitError> {
    let lambda = normalize_partition(partition);
    let sum: usize = lambda.iter().sum();
    if sum != ambient.dim() {
        return Err(OrbitError::SizeMismatch { sum, dim: ambient.dim() });
    }
    let mult = multiplicities(&lambda);
    for (&j, &a) in &mult {
        match ambient.symmetry {
            Symmetry::Orthogonal if j % 2 == 0 && a % 2 == 1 => {
                return Err(OrbitError::Parity { part: j, mult: a, rule: "even part with odd multiplicity in an orthogonal group" })
            }
            Symmetry::Symplectic if j % 2 == 1 && a % 2 == 1 => {
                return Err(OrbitError::Parity { part: j, mult: a, rule: "odd part with odd multiplicity in a symplectic group" })
            }
            _ => {}
        }
    }
    for &j in forms.keys() {
        if !mult.contains_key(&j) {
            return Err(OrbitError::UnexpectedForm(j));
        }
    }
    for (&j, &a) in &mult {
        let bj = forms.get(&j).ok_or(OrbitError::MissingForm(j))?;
        if bj.dim() != a {
            return Err(OrbitError::FormDim { j, expected: a, got: bj.dim() });
        }
        let expected = multiplicity_symmetry(ambient.symmetry, j);
        if bj.symmetry != expected {
            return Err(OrbitError::FormSymmetry { j, expected });
        }
    }
    let model = build_model(ambient.symmetry, forms, ambient.proto());
    if model.space.gram != ambient.gram
        && ambient.symmetry == Symmetry::Orthogonal
        && !T::same_orthogonal_class(&model.space.gram, &ambient.gram)
    {
        return Err(OrbitError::Incompatible("determinant classes differ".into()));
    }
    Ok(OrbitDatum { ambient: ambient.clone(), partition: lambda, forms: forms.clone() })
}

/// Explicit sl2 triple on the model space of a datum, with its weight grading.
#[derive(Clone, Debug)]
pub struct Sl2Realization<T: Field> {
    pub datum: OrbitDatum<T>,
    pub space: FormedSpace<T>,
    pub e: Matrix<T>,
    pub h: Matrix<T>,
    pub f: Matrix<T>,
    pub weights: Vec<i64>,
    pub blocks: Vec<Block>,
    pub r: i64,
}

pub fn realize_sl2<T: Field>(datum: &OrbitDatum<T>) -> Sl2Realization<T> {
    let m = build_model(datum.ambient.symmetry, &datum.forms, datum.ambient.proto());
    let r = m.weights.iter().copied().max().unwrap_or(0).max(0);
    Sl2Realization { datum: datum.clone(), space: m.space, e: m.e, h: m.h, f: m.f, weights: m.weights, blocks: m.blocks, r }
}

fn bracket<T: Field>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    a.mul(b).sub(&b.mul(a))
}

impl<T: Field> Sl2Realization<T> {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn proto(&self) -> &T {
        self.space.proto()
    }

    pub fn indices_of_weight(&self, k: i64) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.weights[i] == k).collect()
    }

    /// Basis indices of V_(m) = V_{−m} ⊕ … ⊕ V_m.
    pub fn indices_up_to(&self, m: i64) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.weights[i].abs() <= m).collect()
    }

    pub fn weight_dim(&self, k: i64) -> usize {
        self.indices_of_weight(k).len()
    }

    /// Weight dims (dim V_{−r}, …, dim V_r).
    pub fn weight_profile(&self) -> Vec<usize> {
        (-self.r..=self.r).map(|k| self.weight_dim(k)).collect()
    }

    fn unit(&self, i: usize) -> Vec<T> {
        let p = self.proto();
        (0..self.dim()).map(|k| if k == i { p.one_like() } else { p.zero_like() }).collect()
    }

    /// All realization invariants; returns the list of violated ones.
    pub fn check(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let two = self.proto().from_i64_like(2);
        if bracket(&self.h, &self.e) != self.e.scale(&two) {
            bad.push("[h,e] != 2e".into());
        }
        if bracket(&self.h, &self.f) != self.f.scale(&two).neg() {
            bad.push("[h,f] != -2f".into());
        }
        if bracket(&self.e, &self.f) != self.h {
            bad.push("[e,f] != h".into());
        }
        for (name, x) in [("e", &self.e), ("h", &self.h), ("f", &self.f)] {
            if !self.space.in_lie_algebra(x) {
                bad.push(format!("{name} not in the Lie algebra"));
            }
        }
        let mult = multiplicities(&self.datum.partition);
        for k in -self.r..=self.r {
            let expect: usize = mult.iter().filter(|(&j, _)| j as i64 > k.abs() && (j as i64 - k.abs() - 1) % 2 == 0).map(|(_, &a)| a).sum();
            if self.weight_dim(k) != expect {
                bad.push(format!("dim V_{k} = {} expected {expect}", self.weight_dim(k)));
            }
        }
        for k in 1..=self.r {
            let pos = self.indices_of_weight(k);
            let neg = self.indices_of_weight(-k);
            let pair = Matrix::from_fn(pos.len(), neg.len(), self.proto(), |a, b| self.space.gram.get(pos[a], neg[b]).clone());
            if pair.rank() != pos.len() || pos.len() != neg.len() {
                bad.push(format!("V_{k} and V_-{k} not perfectly paired"));
            }
        }
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let (wi, wj) = (self.weights[i], self.weights[j]);
                if wi + wj != 0 && !self.space.form(&self.unit(i), &self.unit(j)).is_zero() {
                    bad.push(format!("B pairs weights {wi} and {wj}"));
                }
            }
        }
        bad
    }

    /// Basis of 𝔤_d (adjoint weight d), weight-homogeneous, from the
    /// kernel of X ↦ XᵀJ + JX on entries (a,b) with wt(a) − wt(b) = d.
    pub fn lie_graded(&self, d: i64) -> Vec<Matrix<T>> {
        let pos: Vec<(usize, usize)> = self.entry_positions(|a, b| self.weights[a] - self.weights[b] == d);
        self.lie_on_positions(&pos)
    }

    pub fn entry_positions(&self, keep: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
        let n = self.dim();
        (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|&(a, b)| keep(a, b)).collect()
    }

    /// Kernel of X ↦ XᵀJ + JX for X supported on the given positions.
    pub fn lie_on_positions(&self, pos: &[(usize, usize)]) -> Vec<Matrix<T>> {
        let n = self.dim();
        let p = self.proto();
        let sys = self.lie_system(pos);
        sys.kernel_basis()
            .into_iter()
            .map(|v| {
                let mut x = Matrix::zeros(n, n, p);
                for (k, &(a, b)) in pos.iter().enumerate() {
                    x.set(a, b, v[k].clone());
                }
                x
            })
            .collect()
    }

    /// Matrix of the linear map (entries at `pos`) ↦ XᵀJ + JX (all n² entries).
    fn lie_system(&self, pos: &[(usize, usize)]) -> Matrix<T> {
        let n = self.dim();
        let j = &self.space.gram;
        let p = self.proto();
        let mut m = Matrix::zeros(n * n, pos.len(), p);
        for (k, &(a, b)) in pos.iter().enumerate() {
            // X = E_ab: (XᵀJ)_{b,c} = J_{a,c}; (JX)_{c,b} = J_{c,a}
            for c in 0..n {
                let r1 = b * n + c;
                m.set(r1, k, m.get(r1, k).add(j.get(a, c)));
                let r2 = c * n + b;
                m.set(r2, k, m.get(r2, k).add(j.get(c, a)));
            }
        }
        m
    }

    /// Endomorphism adjoint x* with B(x*v, w) = B(v, xw).
    pub fn endo_adjoint(&self, x: &Matrix<T>) -> Matrix<T> {
        adjoint_matrix(x, &self.space, &self.space)
    }
}

/// Support pattern of 𝔲_m inside End(V): maps V_m → V_(m−1) ⊕ V_{−m} and V_(m−1) → V_{−m}.
pub fn u_level_pattern(weights: &[i64], m: i64) -> impl Fn(usize, usize) -> bool + '_ {
    move |a, b| {
        let (wa, wb) = (weights[a], weights[b]);
        if wa.abs() > m || wb.abs() > m {
            return false;
        }
        (wb == m && wa < m) || (wa == -m && wb > -m && wb < m)
    }
}

/// Support pattern of 𝔷_m: Hom(V_m, V_{−m}).
pub fn z_level_pattern(weights: &[i64], m: i64) -> impl Fn(usize, usize) -> bool + '_ {
    move |a, b| weights[a] == -m && weights[b] == m
}

/// Lie algebra scaffolding of a realization.
#[derive(Clone, Debug)]
pub struct NilpotentScaffold<T: Field> {
    pub real: Sl2Realization<T>,
    /// 𝔤_d for every d with a nonzero piece.
    pub graded: BTreeMap<i64, Vec<Matrix<T>>>,
}

pub fn build_scaffold<T: Field>(real: &Sl2Realization<T>) -> NilpotentScaffold<T> {
    let mut graded = BTreeMap::new();
    for d in -2 * real.r..=2 * real.r {
        let b = real.lie_graded(d);
        if !b.is_empty() {
            graded.insert(d, b);
        }
    }
    NilpotentScaffold { real: real.clone(), graded }
}

impl<T: Field> NilpotentScaffold<T> {
    fn collect(&self, keep: impl Fn(i64) -> bool) -> Vec<Matrix<T>> {
        self.graded.iter().filter(|(&d, _)| keep(d)).flat_map(|(_, b)| b.iter().cloned()).collect()
    }
    pub fn g(&self) -> Vec<Matrix<T>> {
        self.collect(|_| true)
    }
    pub fn p(&self) -> Vec<Matrix<T>> {
        self.collect(|d| d <= 0)
    }
    pub fn m(&self) -> Vec<Matrix<T>> {
        self.collect(|d| d == 0)
    }
    pub fn u(&self) -> Vec<Matrix<T>> {
        self.collect(|d| d < 0)
    }
    pub fn u_plus(&self) -> Vec<Matrix<T>> {
        self.collect(|d| d <= -2)
    }
    pub fn g_minus1(&self) -> Vec<Matrix<T>> {
        self.collect(|d| d == -1)
    }
    pub fn u_level(&self, m: i64) -> Vec<Matrix<T>> {
        let pos = self.real.entry_positions(u_level_pattern(&self.real.weights, m));
        self.real.lie_on_positions(&pos)
    }
    pub fn u_plus_level(&self, m: i64) -> Vec<Matrix<T>> {
        let w = &self.real.weights;
        let pat = u_level_pattern(w, m);
        let pos = self.real.entry_positions(|a, b| pat(a, b) && w[a] - w[b] <= -2);
        self.real.lie_on_positions(&pos)
    }
    pub fn z_level(&self, m: i64) -> Vec<Matrix<T>> {
        let pos = self.real.entry_positions(z_level_pattern(&self.real.weights, m));
        self.real.lie_on_positions(&pos)
    }
    /// Images q − q* of the elementary maps q ∈ Hom(V_(m−1), V_{−m}).
    pub fn q_level(&self, m: i64) -> Vec<Matrix<T>> {
        let w = &self.real.weights;
        let n = self.real.dim();
        let p = self.real.proto();
        let mut out = Vec::new();
        for a in (0..n).filter(|&a| w[a] == -m) {
            for b in (0..n).filter(|&b| w[b].abs() < m) {
                let mut x = Matrix::zeros(n, n, p);
                x.set(a, b, p.one_like());
                out.push(x.sub(&self.real.endo_adjoint(&x)));
            }
        }
        out
    }
}

/// Exp of a nilpotent matrix over F_q, truncated at degree q − 1; requires X^q = 0.
pub fn exp_nilpotent(x: &Matrix<Fq>) -> Result<Matrix<Fq>, OrbitError> {
    let q = x.proto().q;
    if !x.pow(q as u64).is_zero() {
        return Err(OrbitError::QTooSmall(q));
    }
    let n = x.rows();
    let mut acc = Matrix::identity(n, x.proto());
    let mut term = Matrix::identity(n, x.proto());
    for k in 1..q as i64 {
        term = term.mul(x).scale(&Fq::new(k, q).inv().expect("k < q"));
        acc = acc.add(&term);
    }
    Ok(acc)
}

/// Log of a unipotent matrix over F_q; requires (u − 1)^q = 0.
pub fn log_unipotent(u: &Matrix<Fq>) -> Result<Matrix<Fq>, OrbitError> {
    let q = u.proto().q;
    let n = u.rows();
    let y = u.sub(&Matrix::identity(n, u.proto()));
    if !y.pow(q as u64).is_zero() {
        return Err(OrbitError::QTooSmall(q));
    }
    let mut acc = Matrix::zeros(n, n, u.proto());
    let mut pw = Matrix::identity(n, u.proto());
    for k in 1..q as i64 {
        pw = pw.mul(&y);
        let c = Fq::new(if k % 2 == 1 { 1 } else { -1 }, q).mul(&Fq::new(k, q).inv().expect("k < q"));
        acc = acc.add(&pw.scale(&c));
    }
    Ok(acc)
}

/// exp and the round trip check log(exp(n)) = n.
pub fn exp_log(x: &Matrix<Fq>) -> Result<(Matrix<Fq>, bool), OrbitError> {
    let u = exp_nilpotent(x)?;
    let back = log_unipotent(&u)?;
    Ok((u.clone(), back == *x))
}

/// Unipotent points 1 + N of G(F_q) with N supported on `pattern` and of
/// adjoint weight ≤ −min_drop, by a layered solve of NᵀJ + JN + NᵀJN = 0.
pub fn unipotent_points(
    real: &Sl2Realization<Fq>,
    pattern: &dyn Fn(usize, usize) -> bool,
    min_drop: i64,
) -> Result<Vec<Matrix<Fq>>, OrbitError> {
    let n = real.dim();
    let p = *real.proto();
    let q = p.q;
    let w = &real.weights;
    let j = &real.space.gram;
    let max_drop = 2 * real.r;
    struct Layer {
        pos: Vec<(usize, usize)>,
        sys: Matrix<Fq>,
        kernel: Vec<Vec<Fq>>,
    }
    let mut layers: Vec<(i64, Layer)> = Vec::new();
    for d in min_drop.max(1)..=max_drop {
        let pos = real.entry_positions(|a, b| pattern(a, b) && w[a] - w[b] == -d);
        if pos.is_empty() {
            continue;
        }
        let sys = real.lie_system(&pos);
        let kernel = sys.kernel_basis();
        layers.push((d, Layer { pos, sys, kernel }));
    }
    let to_mat = |pos: &[(usize, usize)], v: &[Fq]| {
        let mut x = Matrix::zeros(n, n, &p);
        for (k, &(a, b)) in pos.iter().enumerate() {
            x.set(a, b, v[k]);
        }
        x
    };
    // partial solutions: list of (drop, N_drop)
    let mut partial: Vec<Vec<(i64, Matrix<Fq>)>> = vec![Vec::new()];
    for (d, layer) in &layers {
        let mut next = Vec::new();
        for lower in &partial {
            let mut rhs = Matrix::zeros(n, n, &p);
            for (a, na) in lower {
                for (b, nb) in lower {
                    if a + b == *d {
                        rhs = rhs.sub(&na.transpose().mul(j).mul(nb));
                    }
                }
            }
            let b: Vec<Fq> = (0..n * n).map(|k| *rhs.get(k / n, k % n)).collect();
            let part = layer.sys.solve(&b).ok_or(OrbitError::InconsistentLayer(*d))?;
            let dimk = layer.kernel.len();
            for t in 0..(q as usize).pow(dimk as u32) {
                let mut v = part.clone();
                let mut tt = t;
                for kv in &layer.kernel {
                    let c = Fq::new((tt % q as usize) as i64, q);
                    tt /= q as usize;
                    for (x, y) in v.iter_mut().zip(kv) {
                        *x = x.add(&c.mul(y));
                    }
                }
                let mut l = lower.clone();
                l.push((*d, to_mat(&layer.pos, &v)));
                next.push(l);
            }
        }
        partial = next;
    }
    let mut pts: Vec<Matrix<Fq>> = partial
        .into_iter()
        .map(|ls| ls.iter().fold(Matrix::identity(n, &p), |acc, (_, x)| acc.add(x)))
        .collect();
    pts.sort_by_key(mat_key);
    Ok(pts)
}

impl NilpotentScaffold<Fq> {
    pub fn u_points(&self) -> Result<Vec<Matrix<Fq>>, OrbitError> {
        unipotent_points(&self.real, &|_, _| true, 1)
    }
    pub fn u_plus_points(&self) -> Result<Vec<Matrix<Fq>>, OrbitError> {
        unipotent_points(&self.real, &|_, _| true, 2)
    }
    pub fn u_level_points(&self, m: i64) -> Result<Vec<Matrix<Fq>>, OrbitError> {
        let pat = u_level_pattern(&self.real.weights, m);
        unipotent_points(&self.real, &pat, 1)
    }
    pub fn z_level_points(&self, m: i64) -> Result<Vec<Matrix<Fq>>, OrbitError> {
        let pat = z_level_pattern(&self.real.weights, m);
        unipotent_points(&self.real, &pat, 1)
    }

    /// M_γ(F_q): products of isometries of the multiplicity spaces, acting as g_j ⊗ 1.
    pub fn m_gamma_points(&self) -> Result<Vec<Matrix<Fq>>, OrbitError> {
        let p = *self.real.proto();
        let mut acc = vec![Matrix::zeros(0, 0, &p)];
        for blk in &self.real.blocks {
            let bj = &self.real.datum.forms[&blk.j];
            let pts = isometry_points(bj, 6)?;
            let id = Matrix::identity(blk.j, &p);
            let mut next = Vec::new();
            for a in &acc {
                for g in &pts {
                    next.push(a.direct_sum(&g.kronecker(&id)));
                }
            }
            acc = next;
        }
        Ok(acc)
    }
}

/// ½Tr(e(u − 1)) (or Tr(e(u − 1)) with `half = false`).
pub fn chi_exponent(e: &Matrix<Fq>, u: &Matrix<Fq>, half: bool) -> Fq {
    let n = u.rows();
    let t = e.mul(&u.sub(&Matrix::identity(n, u.proto()))).trace();
    if half {
        t.mul(&Fq::new(2, t.q).inv().expect("q odd"))
    } else {
        t
    }
}

/// χ_γ(u) = ψ(½Tr(e(u − 1))) for u ∈ U⁺(F_q).
pub fn chi_gamma(scaffold: &NilpotentScaffold<Fq>, u: &Matrix<Fq>) -> Result<Cyc, OrbitError> {
    let real = &scaffold.real;
    let n = real.dim();
    let x = u.sub(&Matrix::identity(n, real.proto()));
    let w = &real.weights;
    let in_uplus = real.space.is_isometry(u)
        && (0..n).all(|a| (0..n).all(|b| x.get(a, b).is_zero() || w[a] - w[b] <= -2));
    if !in_uplus {
        return Err(OrbitError::NotInUPlus);
    }
    let q = real.proto().q;
    Ok(Cyc::root(chi_exponent(&real.e, u, true).v as i64, q))
}

/// V_(m) with its subgroup membership predicates.
pub struct FlagGroups<'a> {
    pub real: &'a Sl2Realization<Fq>,
    pub m: i64,
    pub indices: Vec<usize>,
    pub space: FormedSpace<Fq>,
}

pub fn weight_flag_groups(real: &Sl2Realization<Fq>, m: i64) -> Result<FlagGroups<'_>, OrbitError> {
    if m < 0 || m > real.r {
        return Err(OrbitError::LevelOutOfRange { m, r: real.r });
    }
    let indices = real.indices_up_to(m);
    let sub = real.space.gram.submatrix(&indices, &indices);
    let space = FormedSpace::new(real.space.symmetry, sub)?;
    Ok(FlagGroups { real, m, indices, space })
}

impl FlagGroups<'_> {
    fn w(&self, i: usize) -> i64 {
        self.real.weights[i]
    }

    /// g ∈ G_(m): isometry of V, preserving V_(m) and trivial off it.
    pub fn in_g(&self, g: &Matrix<Fq>) -> bool {
        let n = self.real.dim();
        let inside = |i: usize| self.w(i).abs() <= self.m;
        self.real.space.is_isometry(g)
            && (0..n).all(|a| {
                (0..n).all(|b| {
                    let v = g.get(a, b);
                    if !inside(b) || !inside(a) {
                        (a == b && v.v == 1) || (a != b && v.is_zero())
                    } else {
                        true
                    }
                })
            })
    }

    fn maps_into(&self, g: &Matrix<Fq>, src: impl Fn(i64) -> bool, dst: impl Fn(i64) -> bool) -> bool {
        let n = self.real.dim();
        (0..n).filter(|&b| src(self.w(b))).all(|b| (0..n).filter(|&a| !dst(self.w(a))).all(|a| g.get(a, b).is_zero()))
    }

    pub fn in_p(&self, g: &Matrix<Fq>) -> bool {
        let m = self.m;
        m >= 1 && self.in_g(g) && self.maps_into(g, |k| k == -m, |k| k == -m)
    }

    /// Levi M_(m) = GL(V_{−m}) × G_(m−1): preserves V_{−m}, V_(m−1), V_m.
    pub fn in_levi(&self, g: &Matrix<Fq>) -> bool {
        let m = self.m;
        self.in_p(g)
            && self.maps_into(g, |k| k == m, |k| k == m)
            && self.maps_into(g, |k| k.abs() < m, |k| k.abs() < m)
    }

    pub fn in_u(&self, g: &Matrix<Fq>) -> bool {
        let n = self.real.dim();
        let x = g.sub(&Matrix::identity(n, g.proto()));
        let pat = u_level_pattern(&self.real.weights, self.m);
        self.m >= 1 && self.in_g(g) && (0..n).all(|a| (0..n).all(|b| x.get(a, b).is_zero() || pat(a, b)))
    }

    /// Points of G_(m)(F_q) embedded in GL(V).
    pub fn g_points(&self) -> Result<Vec<Matrix<Fq>>, OrbitError> {
        let n = self.real.dim();
        let p = *self.real.proto();
        let pts = isometry_points(&self.space, 6)?;
        Ok(pts
            .into_iter()
            .map(|h| {
                let mut g = Matrix::identity(n, &p);
                for (a, &ia) in self.indices.iter().enumerate() {
                    for (b, &ib) in self.indices.iter().enumerate() {
                        g.set(ia, ib, *h.get(a, b));
                    }
                }
                g
            })
            .collect())
    }

    /// Levi part of g ∈ P_m: its block-diagonal part for V_m | V_(m−1) | V_{−m}.
    pub fn levi_part(&self, g: &Matrix<Fq>) -> Matrix<Fq> {
        let n = self.real.dim();
        let m = self.m;
        let class = |k: i64| if k.abs() > m { 3 } else if k == m { 0 } else if k == -m { 2 } else { 1 };
        Matrix::from_fn(n, n, g.proto(), |a, b| {
            if class(self.w(a)) == class(self.w(b)) {
                *g.get(a, b)
            } else {
                Fq::new(0, g.proto().q)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q3() -> Fq {
        Fq::new(0, 3)
    }

    fn rat_form(sym: Symmetry, diag: &[i64]) -> FormedSpace<Rat> {
        let p = Rat::zero();
        match sym {
            Symmetry::Orthogonal => FormedSpace::diagonal(&diag.iter().map(|&x| Rat::int(x)).collect::<Vec<_>>(), &p).unwrap(),
            Symmetry::Symplectic => FormedSpace::standard_symplectic(diag.len(), &p).unwrap(),
        }
    }

    fn fq_orth(diag: &[i64]) -> FormedSpace<Fq> {
        FormedSpace::diagonal(&diag.iter().map(|&x| Fq::new(x, 3)).collect::<Vec<_>>(), &q3()).unwrap()
    }

    /// Datum whose ambient is its own model space.
    fn datum_fq(sym: Symmetry, forms: Vec<(usize, FormedSpace<Fq>)>) -> OrbitDatum<Fq> {
        let forms: BTreeMap<usize, FormedSpace<Fq>> = forms.into_iter().collect();
        let model = build_model(sym, &forms, &q3());
        let part: Vec<usize> = forms.iter().flat_map(|(&j, b)| std::iter::repeat_n(j, b.dim())).collect();
        validate_datum(&model.space, &part, &forms).unwrap()
    }

    #[test]
    fn validator_rules() {
        let sp4 = rat_form(Symmetry::Symplectic, &[0; 4]);
        let forms: BTreeMap<usize, FormedSpace<Rat>> =
            [(3, rat_form(Symmetry::Orthogonal, &[1])), (1, rat_form(Symmetry::Orthogonal, &[1]))].into_iter().collect();
        match validate_datum(&sp4, &[3, 1], &forms) {
            Err(OrbitError::Parity { mult: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let f2: BTreeMap<usize, FormedSpace<Rat>> = [(2, rat_form(Symmetry::Symplectic, &[0, 0]))].into_iter().collect();
        let model = build_model(Symmetry::Orthogonal, &f2, &Rat::zero());
        assert!(validate_datum(&model.space, &[2, 2], &f2).is_ok());
        let sp2 = rat_form(Symmetry::Symplectic, &[0, 0]);
        let f1: BTreeMap<usize, FormedSpace<Rat>> = [(2, rat_form(Symmetry::Orthogonal, &[1]))].into_iter().collect();
        assert!(validate_datum(&sp2, &[2], &f1).is_ok());
        assert!(matches!(validate_datum(&sp2, &[2, 1], &f1), Err(OrbitError::SizeMismatch { .. })));
        let bad: BTreeMap<usize, FormedSpace<Rat>> = [(2, rat_form(Symmetry::Symplectic, &[0, 0]))].into_iter().collect();
        assert!(matches!(validate_datum(&sp2, &[2], &bad), Err(OrbitError::FormDim { .. })));
    }

    #[test]
    fn incompatible_determinant_rejected() {
        let o2 = fq_orth(&[1, 1]);
        let forms: BTreeMap<usize, FormedSpace<Fq>> = [(1, fq_orth(&[1, 2]))].into_iter().collect();
        assert!(matches!(validate_datum(&o2, &[1, 1], &forms), Err(OrbitError::Incompatible(_))));
        let ok: BTreeMap<usize, FormedSpace<Fq>> = [(1, fq_orth(&[2, 2]))].into_iter().collect();
        assert!(validate_datum(&o2, &[1, 1], &ok).is_ok());
    }

    #[test]
    fn regular_sp2_triple() {
        let sp2 = rat_form(Symmetry::Symplectic, &[0, 0]);
        let f1: BTreeMap<usize, FormedSpace<Rat>> = [(2, rat_form(Symmetry::Orthogonal, &[1]))].into_iter().collect();
        let d = validate_datum(&sp2, &[2], &f1).unwrap();
        let r = realize_sl2(&d);
        let p = Rat::zero();
        assert_eq!(r.e, Matrix::from_i64(&[vec![0, 1], vec![0, 0]], &p));
        assert_eq!(r.h, Matrix::from_i64(&[vec![1, 0], vec![0, -1]], &p));
        assert_eq!(r.f, Matrix::from_i64(&[vec![0, 0], vec![1, 0]], &p));
        assert!(r.check().is_empty());
    }

    #[test]
    fn zero_orbit_and_weight_profile() {
        let o6: BTreeMap<usize, FormedSpace<Rat>> =
            [(3, rat_form(Symmetry::Orthogonal, &[1])), (1, rat_form(Symmetry::Orthogonal, &[1, 1, 1]))].into_iter().collect();
        let m = build_model(Symmetry::Orthogonal, &o6, &Rat::zero());
        let d = validate_datum(&m.space, &[3, 1, 1, 1], &o6).unwrap();
        let r = realize_sl2(&d);
        assert_eq!(r.weight_profile(), vec![1, 0, 4, 0, 1]);
        assert!(r.check().is_empty());
        let triv: BTreeMap<usize, FormedSpace<Rat>> = [(1, rat_form(Symmetry::Orthogonal, &[1, 2, 3]))].into_iter().collect();
        let m = build_model(Symmetry::Orthogonal, &triv, &Rat::zero());
        let r = realize_sl2(&validate_datum(&m.space, &[1, 1, 1], &triv).unwrap());
        assert!(r.e.is_zero() && r.h.is_zero() && r.f.is_zero());
    }

    #[test]
    fn realizations_satisfy_invariants_for_many_partitions() {
        for (sym, forms) in [
            (Symmetry::Symplectic, vec![(4, rat_form(Symmetry::Orthogonal, &[1])), (2, rat_form(Symmetry::Orthogonal, &[-1, 2]))]),
            (Symmetry::Orthogonal, vec![(5, rat_form(Symmetry::Orthogonal, &[2])), (2, rat_form(Symmetry::Symplectic, &[0, 0]))]),
            (Symmetry::Symplectic, vec![(3, rat_form(Symmetry::Symplectic, &[0, 0])), (1, rat_form(Symmetry::Symplectic, &[0, 0]))]),
        ] {
            let forms: BTreeMap<usize, FormedSpace<Rat>> = forms.into_iter().collect();
            let m = build_model(sym, &forms, &Rat::zero());
            let part: Vec<usize> = forms.iter().flat_map(|(&j, b)| std::iter::repeat_n(j, b.dim())).collect();
            let r = realize_sl2(&validate_datum(&m.space, &part, &forms).unwrap());
            assert_eq!(r.check(), Vec::<String>::new(), "{part:?}");
        }
    }

    #[test]
    fn scaffold_dimensions() {
        let sp2 = datum_fq(Symmetry::Symplectic, vec![(2, fq_orth(&[1]))]);
        let s = build_scaffold(&realize_sl2(&sp2));
        assert_eq!(s.u_plus().len(), 1);
        assert_eq!(s.u().len(), 1);
        let o3 = datum_fq(Symmetry::Orthogonal, vec![(3, fq_orth(&[1]))]);
        let s = build_scaffold(&realize_sl2(&o3));
        assert_eq!(s.u_plus().len(), 1);
        assert_eq!(s.g_minus1().len(), 0);
        let std2 = FormedSpace::standard_symplectic(2, &q3()).unwrap();
        let sp4 = datum_fq(Symmetry::Symplectic, vec![(2, fq_orth(&[1])), (1, std2)]);
        let s = build_scaffold(&realize_sl2(&sp4));
        assert_eq!(s.g_minus1().len(), 2);
        assert_eq!(s.g().len(), 10);
        // every graded basis element lies in the Lie algebra
        for x in s.g() {
            assert!(s.real.space.in_lie_algebra(&x));
        }
    }

    #[test]
    fn level_pieces() {
        let o6 = datum_fq(Symmetry::Orthogonal, vec![(3, fq_orth(&[1])), (1, fq_orth(&[1, 1, 1]))]);
        let s = build_scaffold(&realize_sl2(&o6));
        let r = &s.real;
        // z_m skew: z* = −z
        for m in 1..=r.r {
            for z in s.z_level(m) {
                assert_eq!(r.endo_adjoint(&z), z.neg());
            }
            let ul = s.u_level(m);
            let qs = s.q_level(m);
            for x in &qs {
                assert!(r.space.in_lie_algebra(x));
            }
            let span = ul.len();
            assert_eq!(span, qs.len() + s.z_level(m).len(), "level {m}");
            let pts = s.u_level_points(m).unwrap();
            assert_eq!(pts.len(), 3usize.pow(span as u32));
            assert_eq!(s.z_level_points(m).unwrap().len(), 3usize.pow(s.z_level(m).len() as u32));
        }
    }

    #[test]
    fn unipotent_counts_match_lie_dimensions() {
        let sp4 = datum_fq(Symmetry::Symplectic, vec![(4, fq_orth(&[1]))]);
        let s = build_scaffold(&realize_sl2(&sp4));
        let u = s.u_points().unwrap();
        assert_eq!(u.len(), 3usize.pow(s.u().len() as u32));
        let up = s.u_plus_points().unwrap();
        assert_eq!(up.len(), 81);
        for g in &u {
            assert!(s.real.space.is_isometry(g));
        }
    }

    #[test]
    fn exp_log_round_trips() {
        let p = Fq::new(0, 5);
        assert_eq!(exp_nilpotent(&Matrix::zeros(3, 3, &p)).unwrap(), Matrix::identity(3, &p));
        let n = Matrix::from_i64(&[vec![0, 0, 0], vec![2, 0, 0], vec![0, 0, 0]], &p);
        assert_eq!(exp_nilpotent(&n).unwrap(), Matrix::identity(3, &p).add(&n));
        for seed in 0..20i64 {
            let n = Matrix::from_i64(&[vec![0, 0, 0], vec![seed % 5, 0, 0], vec![(seed * 3) % 5, (seed * 7 + 1) % 5, 0]], &p);
            let (_, ok) = exp_log(&n).unwrap();
            assert!(ok);
        }
        let p3 = q3();
        let big = Matrix::from_fn(4, 4, &p3, |i, j| if i == j + 1 { Fq::new(1, 3) } else { p3 });
        assert!(matches!(exp_nilpotent(&big), Err(OrbitError::QTooSmall(3))));
    }

    #[test]
    fn chi_values() {
        let sp2 = datum_fq(Symmetry::Symplectic, vec![(2, fq_orth(&[1]))]);
        let s = build_scaffold(&realize_sl2(&sp2));
        let id = Matrix::identity(2, &q3());
        assert_eq!(chi_gamma(&s, &id).unwrap(), Cyc::one(3));
        for t in 0..3 {
            let u = exp_nilpotent(&s.real.f.scale(&Fq::new(t, 3))).unwrap();
            // ψ(t/2), 1/2 = 2 mod 3
            assert_eq!(chi_gamma(&s, &u).unwrap(), Cyc::root(2 * t, 3));
        }
        let o3 = datum_fq(Symmetry::Orthogonal, vec![(3, fq_orth(&[1]))]);
        let s = build_scaffold(&realize_sl2(&o3));
        let gens = s.u_plus();
        let nontrivial = gens.iter().any(|x| {
            let u = exp_nilpotent(x).unwrap();
            let c = chi_gamma(&s, &u).unwrap();
            c != Cyc::one(3) && c.pow(3) == Cyc::one(3)
        });
        assert!(nontrivial);
    }

    #[test]
    fn chi_is_a_character_and_m_gamma_centralizes() {
        let sp4 = datum_fq(Symmetry::Symplectic, vec![(2, fq_orth(&[1])), (1, FormedSpace::standard_symplectic(2, &q3()).unwrap())]);
        let s = build_scaffold(&realize_sl2(&sp4));
        let up = s.u_plus_points().unwrap();
        for a in &up {
            for b in &up {
                let lhs = chi_gamma(&s, &a.mul(b)).unwrap();
                assert_eq!(lhs, chi_gamma(&s, a).unwrap().mul(&chi_gamma(&s, b).unwrap()));
            }
        }
        let mg = s.m_gamma_points().unwrap();
        assert_eq!(mg.len(), 2 * 24);
        for g in &mg {
            let gi = g.inverse().unwrap();
            for x in [&s.real.e, &s.real.h, &s.real.f] {
                assert_eq!(&g.mul(x).mul(&gi), x);
            }
        }
    }

    #[test]
    fn flag_groups() {
        let sp2 = datum_fq(Symmetry::Symplectic, vec![(2, fq_orth(&[1]))]);
        let r = realize_sl2(&sp2);
        let fg = weight_flag_groups(&r, 1).unwrap();
        let g = fg.g_points().unwrap();
        assert_eq!(g.len(), 24);
        let p: Vec<_> = g.iter().filter(|x| fg.in_p(x)).collect();
        assert_eq!(p.len(), 6);
        let levi: Vec<_> = g.iter().filter(|x| fg.in_levi(x)).collect();
        assert_eq!(levi.len(), 2);
        for x in &p {
            let l = fg.levi_part(x);
            assert!(fg.in_levi(&l));
            assert!(fg.in_u(&l.inverse().unwrap().mul(x)));
        }
        assert!(weight_flag_groups(&r, 2).is_err());
        let f0 = weight_flag_groups(&r, 0).unwrap();
        assert_eq!(f0.space.dim(), 0);
        let o3 = datum_fq(Symmetry::Orthogonal, vec![(3, fq_orth(&[1]))]);
        let r3 = realize_sl2(&o3);
        assert_eq!(weight_flag_groups(&r3, 1).unwrap().space.dim(), 1);
        assert_eq!(weight_flag_groups(&r3, 2).unwrap().g_points().unwrap().len(), 48);
    }
}
