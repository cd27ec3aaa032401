//! Formed spaces (V, B), adjoints, Lagrangians and finite isometry groups.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rayon::prelude::*;

use crate::exactalg::{Field, Fq, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Orthogonal,
    Symplectic,
}

impl Symmetry {
    pub fn sign(self) -> i64 {
        match self {
            Symmetry::Orthogonal => 1,
            Symmetry::Symplectic => -1,
        }
    }
    pub fn opposite(self) -> Symmetry {
        match self {
            Symmetry::Orthogonal => Symmetry::Symplectic,
            Symmetry::Symplectic => Symmetry::Orthogonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormedError {
    #[error("gram matrix is not square")]
    NotSquare,
    #[error("gram matrix is degenerate")]
    Degenerate,
    #[error("gram matrix does not have the declared symmetry")]
    WrongSymmetry,
    #[error("symplectic space of odd dimension {0}")]
    OddSymplectic(usize),
    #[error("expected a symplectic space")]
    NotSymplectic,
    #[error("dimension {dim} exceeds enumeration bound {bound}")]
    BoundExceeded { dim: usize, bound: usize },
    #[error("action is not closed on the seed set")]
    NotClosed,
    #[error("field mismatch")]
    FieldMismatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Finite-dimensional space with a nondegenerate (anti)symmetric form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormedSpace<T: Field> {
    pub symmetry: Symmetry,
    pub gram: Matrix<T>,
}

impl<T: Field> FormedSpace<T> {
    pub fn new(symmetry: Symmetry, gram: Matrix<T>) -> Result<Self, FormedError> {
        if !gram.is_square() {
            return Err(FormedError::NotSquare);
        }
        let t = gram.transpose();
        let expect = if symmetry == Symmetry::Orthogonal { gram.clone() } else { gram.neg() };
        if t != expect {
            return Err(FormedError::WrongSymmetry);
        }
        if symmetry == Symmetry::Symplectic && gram.rows() % 2 == 1 {
            return Err(FormedError::OddSymplectic(gram.rows()));
        }
        if gram.rows() > 0 && gram.det().is_zero() {
            return Err(FormedError::Degenerate);
        }
        Ok(FormedSpace { symmetry, gram })
    }

    pub fn zero(symmetry: Symmetry, proto: &T) -> Self {
        FormedSpace { symmetry, gram: Matrix::zeros(0, 0, proto) }
    }

    /// Orthogonal space with the given diagonal.
    pub fn diagonal(entries: &[T], proto: &T) -> Result<Self, FormedError> {
        let n = entries.len();
        let g = Matrix::from_fn(n, n, proto, |i, j| if i == j { entries[i].clone() } else { proto.zero_like() });
        Self::new(Symmetry::Orthogonal, g)
    }

    /// Symplectic space of dimension 2k: basis e_1..e_k, f_k..f_1 with the
    /// antidiagonal block form B(e_i, f_i) = 1.
    pub fn standard_symplectic(dim: usize, proto: &T) -> Result<Self, FormedError> {
        if dim % 2 == 1 {
            return Err(FormedError::OddSymplectic(dim));
        }
        let h = dim / 2;
        let g = Matrix::from_fn(dim, dim, proto, |i, j| {
            if i + j + 1 == dim {
                proto.from_i64_like(if i < h { 1 } else { -1 })
            } else {
                proto.zero_like()
            }
        });
        Self::new(Symmetry::Symplectic, g)
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn proto(&self) -> &T {
        self.gram.proto()
    }

    pub fn form(&self, v: &[T], w: &[T]) -> T {
        let gw = self.gram.mul_vec(w);
        v.iter().zip(&gw).fold(self.proto().zero_like(), |a, (x, y)| a.add(&x.mul(y)))
    }

    /// Orthogonal direct sum.
    pub fn direct_sum(&self, o: &Self) -> Self {
        assert_eq!(self.symmetry, o.symmetry);
        FormedSpace { symmetry: self.symmetry, gram: self.gram.direct_sum(&o.gram) }
    }

    /// Restriction of the form to the span of `basis` (columns), if nondegenerate.
    pub fn restrict(&self, basis: &[Vec<T>]) -> Result<Self, FormedError> {
        let n = basis.len();
        let g = Matrix::from_fn(n, n, self.proto(), |i, j| self.form(&basis[i], &basis[j]));
        Self::new(self.symmetry, g)
    }

    /// Membership of X in the isometry Lie algebra: XᵀJ + JX = 0.
    pub fn in_lie_algebra(&self, x: &Matrix<T>) -> bool {
        x.transpose().mul(&self.gram).add(&self.gram.mul(x)).is_zero()
    }

    /// Membership of g in the isometry group: gᵀJg = J.
    pub fn is_isometry(&self, g: &Matrix<T>) -> bool {
        g.transpose().mul(&self.gram).mul(g) == self.gram
    }
}

impl FormedSpace<Fq> {
    /// Legendre symbol of the discriminant (−1)^{n(n−1)/2}·det: 1 square, −1 nonsquare.
    pub fn disc_class(&self) -> i32 {
        let n = self.dim() as i64;
        let sign = if (n * (n - 1) / 2) % 2 == 0 { 1 } else { -1 };
        if n == 0 {
            return 1;
        }
        self.gram.det().mul(&Fq::new(sign, self.proto().q)).legendre()
    }

    /// Diagonal orthogonal form diag(1, …, 1, d) with d = 1 (square) or the least nonsquare.
    pub fn orthogonal_fq(dim: usize, square: bool, q: u32) -> Self {
        let p = Fq::new(0, q);
        let mut e = vec![Fq::new(1, q); dim];
        if dim > 0 && !square {
            e[dim - 1] = least_nonsquare(q);
        }
        Self::diagonal(&e, &p).expect("diagonal unit form is nondegenerate")
    }
}

pub fn least_nonsquare(q: u32) -> Fq {
    (2..q).map(|a| Fq::new(a as i64, q)).find(|a| a.legendre() == -1).expect("odd prime has a nonsquare")
}

/// Linear map between formed spaces; matrix is (dim target) × (dim source).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearMap<T: Field> {
    pub source: FormedSpace<T>,
    pub target: FormedSpace<T>,
    pub matrix: Matrix<T>,
}

impl<T: Field> LinearMap<T> {
    pub fn new(source: FormedSpace<T>, target: FormedSpace<T>, matrix: Matrix<T>) -> Result<Self, FormedError> {
        if matrix.rows() != target.dim() || matrix.cols() != source.dim() {
            return Err(FormedError::Shape(format!(
                "{}x{} matrix for {} -> {}",
                matrix.rows(),
                matrix.cols(),
                source.dim(),
                target.dim()
            )));
        }
        Ok(LinearMap { source, target, matrix })
    }
}

/// f* = J⁻ᵀ fᵀ J′ᵀ, characterized by B(f*v′, v) = B′(v′, f v).
pub fn adjoint_matrix<T: Field>(f: &Matrix<T>, source: &FormedSpace<T>, target: &FormedSpace<T>) -> Matrix<T> {
    let jinv_t = source.gram.inverse().expect("nondegenerate").transpose();
    jinv_t.mul(&f.transpose()).mul(&target.gram.transpose())
}

pub fn adjoint<T: Field>(f: &LinearMap<T>) -> Result<LinearMap<T>, FormedError> {
    if f.source.proto().zero_like() != f.target.proto().zero_like() {
        return Err(FormedError::FieldMismatch);
    }
    let m = adjoint_matrix(&f.matrix, &f.source, &f.target);
    LinearMap::new(f.target.clone(), f.source.clone(), m)
}

/// Span of column vectors in an ambient formed space.
#[derive(Clone, Debug)]
pub struct Subspace<T: Field> {
    pub ambient: FormedSpace<T>,
    pub basis: Vec<Vec<T>>,
}

impl<T: Field> Subspace<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

pub fn is_isotropic<T: Field>(s: &Subspace<T>) -> bool {
    s.basis.iter().all(|a| s.basis.iter().all(|b| s.ambient.form(a, b).is_zero()))
}

/// Deterministic symplectic Gram–Schmidt on the standard basis. Returns
/// (X, Y) with B(x_i, y_j) = δ_ij.
pub fn lagrangian_split<T: Field>(w: &FormedSpace<T>) -> Result<(Subspace<T>, Subspace<T>), FormedError> {
    if w.symmetry != Symmetry::Symplectic {
        return Err(FormedError::NotSymplectic);
    }
    let n = w.dim();
    let p = w.proto().clone();
    let mut rest: Vec<Vec<T>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { p.one_like() } else { p.zero_like() }).collect())
        .collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    while !rest.is_empty() {
        let a = rest.remove(0);
        let bi = rest.iter().position(|b| !w.form(&a, b).is_zero()).ok_or(FormedError::Degenerate)?;
        let b = rest.remove(bi);
        let c = w.form(&a, &b).inv().expect("nonzero");
        let b: Vec<T> = b.iter().map(|x| x.mul(&c)).collect();
        rest = rest
            .into_iter()
            .map(|r| {
                let rb = w.form(&r, &b);
                let ra = w.form(&r, &a);
                r.iter().zip(a.iter().zip(&b)).map(|(ri, (ai, bi))| ri.sub(&rb.mul(ai)).add(&ra.mul(bi))).collect()
            })
            .collect();
        xs.push(a);
        ys.push(b);
    }
    Ok((Subspace { ambient: w.clone(), basis: xs }, Subspace { ambient: w.clone(), basis: ys }))
}

/// Byte key of an F_q matrix, for hashing group elements.
pub fn mat_key(m: &Matrix<Fq>) -> Vec<u8> {
    m.entries().iter().map(|x| x.v as u8).collect()
}

pub const DEFAULT_ENUM_BOUND: usize = 4;

fn all_vectors(n: usize, q: u32) -> Vec<Vec<Fq>> {
    let total = (q as usize).pow(n as u32);
    (0..total)
        .map(|mut t| {
            (0..n)
                .map(|_| {
                    let v = Fq::new((t % q as usize) as i64, q);
                    t /= q as usize;
                    v
                })
                .collect()
        })
        .collect()
}

/// All g with gᵀJg = J, by choosing images of basis vectors column by column
/// on the right quadrics. Sorted by entry key.
pub fn isometry_points(v: &FormedSpace<Fq>, bound: usize) -> Result<Vec<Matrix<Fq>>, FormedError> {
    let n = v.dim();
    if n > bound {
        return Err(FormedError::BoundExceeded { dim: n, bound });
    }
    let q = v.proto().q;
    let p = Fq::new(0, q);
    if n == 0 {
        return Ok(vec![Matrix::zeros(0, 0, &p)]);
    }
    let vecs = all_vectors(n, q);
    // candidates for column i: vectors with B(c, c) = J_ii
    let by_norm: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..vecs.len()).filter(|&k| v.form(&vecs[k], &vecs[k]) == *v.gram.get(i, i)).collect())
        .collect();
    let extend = |start: usize| -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![start]];
        while let Some(cols) = stack.pop() {
            let i = cols.len();
            if i == n {
                out.push(cols);
                continue;
            }
            for &c in &by_norm[i] {
                let ok = cols.iter().enumerate().all(|(j, &d)| {
                    v.form(&vecs[c], &vecs[d]) == *v.gram.get(i, j) && v.form(&vecs[d], &vecs[c]) == *v.gram.get(j, i)
                });
                if ok {
                    let mut nc = cols.clone();
                    nc.push(c);
                    stack.push(nc);
                }
            }
        }
        out
    };
    let mut pts: Vec<Matrix<Fq>> = by_norm[0]
        .par_iter()
        .flat_map_iter(|&s| extend(s))
        .map(|cols| Matrix::from_fn(n, n, &p, |i, j| vecs[cols[j]][i]))
        .collect();
    pts.sort_by_key(mat_key);
    Ok(pts)
}

/// One orbit of a finite group action on seeds.
#[derive(Clone, Debug)]
pub struct Orbit<S> {
    pub representative: S,
    pub members: Vec<S>,
    /// Indices into the group point list.
    pub stabilizer: Vec<usize>,
}

/// Partition `seeds` into orbits of `points` acting via `action`. The
/// representative of each orbit is its least element.
pub fn orbit_decompose<G, S, F>(points: &[G], action: F, seeds: &[S]) -> Result<Vec<Orbit<S>>, FormedError>
where
    G: Sync,
    S: Clone + Ord + Hash + Send + Sync,
    F: Fn(&G, &S) -> S + Sync,
{
    let index: HashMap<&S, usize> = seeds.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut assigned = vec![usize::MAX; seeds.len()];
    let mut orbits: Vec<Orbit<S>> = Vec::new();
    for start in 0..seeds.len() {
        if assigned[start] != usize::MAX {
            continue;
        }
        let s = &seeds[start];
        let images: Vec<S> = points.par_iter().map(|g| action(g, s)).collect();
        let mut members = BTreeMap::new();
        let mut stabilizer = Vec::new();
        for (gi, im) in images.into_iter().enumerate() {
            let Some(&k) = index.get(&im) else { return Err(FormedError::NotClosed) };
            if k == start {
                stabilizer.push(gi);
            }
            members.insert(im, k);
        }
        let id = orbits.len();
        for &k in members.values() {
            assigned[k] = id;
        }
        let members: Vec<S> = members.into_keys().collect();
        orbits.push(Orbit { representative: members[0].clone(), members, stabilizer });
    }
    // recompute stabilizers at the least representative
    for o in orbits.iter_mut() {
        let r = &o.representative;
        o.stabilizer = points.par_iter().enumerate().filter(|(_, g)| action(g, r) == *r).map(|(i, _)| i).collect();
    }
    orbits.sort_by(|a, b| a.representative.cmp(&b.representative));
    Ok(orbits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactalg::Rat;
    use proptest::prelude::*;

    fn fq(n: i64) -> Fq {
        Fq::new(n, 3)
    }

    #[test]
    fn symmetry_and_degeneracy_checks() {
        let p = Rat::zero();
        let g = Matrix::from_i64(&[vec![0, 1], vec![1, 0]], &p);
        assert_eq!(FormedSpace::new(Symmetry::Symplectic, g.clone()), Err(FormedError::WrongSymmetry));
        assert!(FormedSpace::new(Symmetry::Orthogonal, g).is_ok());
        let d = Matrix::from_i64(&[vec![1, 1], vec![1, 1]], &p);
        assert_eq!(FormedSpace::new(Symmetry::Orthogonal, d), Err(FormedError::Degenerate));
        assert!(FormedSpace::<Rat>::standard_symplectic(3, &p).is_err());
    }

    #[test]
    fn adjoint_of_zero_and_identity() {
        let p = Rat::zero();
        let w = FormedSpace::standard_symplectic(2, &p).unwrap();
        let z = LinearMap::new(w.clone(), w.clone(), Matrix::zeros(2, 2, &p)).unwrap();
        assert!(adjoint(&z).unwrap().matrix.is_zero());
        let id = LinearMap::new(w.clone(), w.clone(), Matrix::identity(2, &p)).unwrap();
        let a = adjoint(&id).unwrap();
        assert_eq!(adjoint(&a).unwrap().matrix, id.matrix);
    }

    #[test]
    fn adjoint_defining_identity_plane_to_3space() {
        let p = Rat::zero();
        let w = FormedSpace::standard_symplectic(2, &p).unwrap();
        let o = FormedSpace::diagonal(&[Rat::int(1), Rat::int(2), Rat::int(-3)], &p).unwrap();
        let f = LinearMap::new(w.clone(), o.clone(), Matrix::from_i64(&[vec![1, -2], vec![3, 5], vec![0, 7]], &p)).unwrap();
        let fs = adjoint(&f).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let vp: Vec<Rat> = (0..3).map(|k| Rat::int((k == i) as i64)).collect();
                let v: Vec<Rat> = (0..2).map(|k| Rat::int((k == j) as i64)).collect();
                let lhs = w.form(&fs.matrix.mul_vec(&vp), &v);
                let rhs = o.form(&vp, &f.matrix.mul_vec(&v));
                assert_eq!(lhs, rhs);
            }
        }
        // f** = εε′ f = −f
        assert_eq!(adjoint(&fs).unwrap().matrix, f.matrix.neg());
    }

    #[test]
    fn isotropy() {
        let p = Rat::zero();
        let w = FormedSpace::standard_symplectic(2, &p).unwrap();
        let zero = Subspace { ambient: w.clone(), basis: vec![] };
        assert!(is_isotropic(&zero));
        let both = Subspace { ambient: w.clone(), basis: vec![vec![Rat::one(), Rat::zero()], vec![Rat::zero(), Rat::one()]] };
        assert!(!is_isotropic(&both));
    }

    #[test]
    fn lagrangian_splits() {
        let p = Rat::zero();
        let w2 = FormedSpace::standard_symplectic(2, &p).unwrap();
        let (x, y) = lagrangian_split(&w2).unwrap();
        assert_eq!(x.basis, vec![vec![Rat::one(), Rat::zero()]]);
        assert_eq!(y.basis, vec![vec![Rat::zero(), Rat::one()]]);
        let w0 = FormedSpace::<Rat>::zero(Symmetry::Symplectic, &p);
        let (x, y) = lagrangian_split(&w0).unwrap();
        assert_eq!((x.dim(), y.dim()), (0, 0));
        let w4 = FormedSpace::standard_symplectic(4, &p).unwrap();
        let (x, y) = lagrangian_split(&w4).unwrap();
        assert!(is_isotropic(&x) && is_isotropic(&y) && x.dim() == 2);
        let pair = Matrix::from_fn(2, 2, &p, |i, j| w4.form(&x.basis[i], &y.basis[j]));
        assert_eq!(pair, Matrix::identity(2, &p));
        let o = FormedSpace::diagonal(&[Rat::one()], &p).unwrap();
        assert!(lagrangian_split(&o).is_err());
    }

    fn brute_force(v: &FormedSpace<Fq>) -> usize {
        let n = v.dim();
        let q = v.proto().q as usize;
        let p = *v.proto();
        (0..q.pow((n * n) as u32))
            .filter(|&t| {
                let g = Matrix::from_fn(n, n, &p, |i, j| Fq::new(((t / q.pow((i * n + j) as u32)) % q) as i64, q as u32));
                v.is_isometry(&g)
            })
            .count()
    }

    #[test]
    fn sp2_f3_has_24_points() {
        let w = FormedSpace::standard_symplectic(2, &fq(0)).unwrap();
        let pts = isometry_points(&w, 4).unwrap();
        assert_eq!(pts.len(), 24);
        assert_eq!(pts.len(), 3 * (9 - 1));
        assert_eq!(brute_force(&w), 24);
    }

    #[test]
    fn small_orthogonal_groups() {
        let o1 = FormedSpace::diagonal(&[fq(1)], &fq(0)).unwrap();
        assert_eq!(isometry_points(&o1, 4).unwrap().len(), 2);
        let o3 = FormedSpace::diagonal(&[fq(1), fq(1), fq(1)], &fq(0)).unwrap();
        let pts = isometry_points(&o3, 4).unwrap();
        assert_eq!(pts.len(), 48);
        assert_eq!(brute_force(&o3), 48);
        let o2 = FormedSpace::diagonal(&[fq(1), fq(1)], &fq(0)).unwrap();
        assert_eq!(isometry_points(&o2, 4).unwrap().len(), 8);
        let o6 = FormedSpace::orthogonal_fq(6, true, 3);
        assert!(matches!(isometry_points(&o6, 4), Err(FormedError::BoundExceeded { .. })));
    }

    #[test]
    fn group_axioms_o4_and_sp4() {
        for v in [FormedSpace::orthogonal_fq(4, true, 3), FormedSpace::standard_symplectic(4, &fq(0)).unwrap()] {
            let pts = isometry_points(&v, 4).unwrap();
            let keys: std::collections::HashSet<Vec<u8>> = pts.iter().map(mat_key).collect();
            assert!(keys.contains(&mat_key(&Matrix::identity(4, &fq(0)))));
            for (i, a) in pts.iter().enumerate().step_by(37) {
                for b in pts.iter().skip(i % 11).step_by(53) {
                    assert!(keys.contains(&mat_key(&a.mul(b))));
                }
                assert!(keys.contains(&mat_key(&a.inverse().unwrap())));
            }
        }
    }

    #[test]
    fn sp2_transitive_on_nonzero_vectors() {
        let w = FormedSpace::standard_symplectic(2, &fq(0)).unwrap();
        let pts = isometry_points(&w, 4).unwrap();
        let seeds: Vec<Vec<u32>> = (1..9).map(|t| vec![t % 3, t / 3]).collect();
        let act = |g: &Matrix<Fq>, s: &Vec<u32>| {
            let v: Vec<Fq> = s.iter().map(|&x| fq(x as i64)).collect();
            g.mul_vec(&v).iter().map(|x| x.v).collect::<Vec<u32>>()
        };
        let orbits = orbit_decompose(&pts, act, &seeds).unwrap();
        assert_eq!(orbits.len(), 1);
        assert_eq!(orbits[0].members.len(), 8);
        assert_eq!(orbits[0].members.len() * orbits[0].stabilizer.len(), 24);
        assert_eq!(orbits[0].representative, vec![0, 1]);
    }

    #[test]
    fn trivial_group_and_unclosed_action() {
        let pts = vec![()];
        let seeds = vec![1, 2, 3];
        let o = orbit_decompose(&pts, |_, s: &i32| *s, &seeds).unwrap();
        assert_eq!(o.len(), 3);
        assert!(matches!(orbit_decompose(&pts, |_, s: &i32| s + 1, &seeds), Err(FormedError::NotClosed)));
    }

    proptest! {
        #[test]
        fn adjoint_is_signed_involution(entries in proptest::collection::vec(-4i64..5, 12), sym in 0usize..4) {
            let p = Rat::zero();
            let sp = FormedSpace::standard_symplectic(2, &p).unwrap();
            let sp4 = FormedSpace::standard_symplectic(4, &p).unwrap();
            let o3 = FormedSpace::diagonal(&[Rat::int(1), Rat::int(-1), Rat::int(2)], &p).unwrap();
            let (s, t) = match sym { 0 => (sp.clone(), o3.clone()), 1 => (o3.clone(), sp.clone()), 2 => (o3.clone(), o3.clone()), _ => (sp4.clone(), sp.clone()) };
            let m = Matrix::from_fn(t.dim(), s.dim(), &p, |i, j| Rat::int(entries[(i * s.dim() + j) % 12]));
            let f = LinearMap::new(s.clone(), t.clone(), m).unwrap();
            let ff = adjoint(&adjoint(&f).unwrap()).unwrap();
            let e = s.symmetry.sign() * t.symmetry.sign();
            prop_assert_eq!(ff.matrix, f.matrix.scale(&Rat::int(e)));
        }

        #[test]
        fn isometries_preserve_form(idx in 0usize..48) {
            let o3 = FormedSpace::diagonal(&[fq(1), fq(1), fq(1)], &fq(0)).unwrap();
            let pts = isometry_points(&o3, 4).unwrap();
            let g = &pts[idx];
            for i in 0..3 {
                for j in 0..3 {
                    let v: Vec<Fq> = (0..3).map(|k| fq((k == i) as i64)).collect();
                    let w: Vec<Fq> = (0..3).map(|k| fq((k == j) as i64)).collect();
                    prop_assert_eq!(o3.form(&g.mul_vec(&v), &g.mul_vec(&w)), o3.form(&v, &w));
                }
            }
        }
    }
}
