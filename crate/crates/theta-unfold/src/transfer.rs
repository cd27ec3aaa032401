//! Moment maps on Hom(V, V′), the orbit transfer γ′ → γ with an explicit
//! witness, the small dual pair (L, L′) and the glue isomorphism.

use std::collections::BTreeMap;

use crate::exactalg::{Field, Matrix};
use crate::formed::{adjoint_matrix, lagrangian_split, FormedError, FormedSpace, Subspace, Symmetry};
use crate::orbits::{
    build_model, build_scaffold, normalize_partition, realize_sl2, validate_datum, OrbitDatum, OrbitError,
    Sl2Realization, WittField,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransferError {
    #[error("V and V' must have opposite symmetry")]
    SameSymmetry,
    #[error("not in the image of the moment map: {0}")]
    NotInImage(String),
    #[error("witness invalid: {0}")]
    InvalidWitness(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Formed(#[from] FormedError),
}

/// (V, B) and (V′, B′) of opposite symmetry; W = Hom(V, V′) with ⟨F₁, F₂⟩ = Tr(F₂* F₁).
#[derive(Clone, Debug)]
pub struct DualPairSetting<T: Field> {
    pub v: FormedSpace<T>,
    pub vp: FormedSpace<T>,
}

impl<T: Field> DualPairSetting<T> {
    pub fn new(v: FormedSpace<T>, vp: FormedSpace<T>) -> Result<Self, TransferError> {
        if v.symmetry == vp.symmetry {
            return Err(TransferError::SameSymmetry);
        }
        Ok(DualPairSetting { v, vp })
    }

    pub fn dim_w(&self) -> usize {
        self.v.dim() * self.vp.dim()
    }

    /// F*: V′ → V.
    pub fn adjoint(&self, f: &Matrix<T>) -> Matrix<T> {
        adjoint_matrix(f, &self.v, &self.vp)
    }

    pub fn form(&self, f1: &Matrix<T>, f2: &Matrix<T>) -> T {
        self.adjoint(f2).mul(f1).trace()
    }

    /// Gram matrix of W on the elementary basis E_{b,a} (index b·dim V + a).
    pub fn w_space(&self) -> FormedSpace<T> {
        let n = self.v.dim();
        let np = self.vp.dim();
        let jinv = self.v.gram.inverse().expect("nondegenerate");
        let g = Matrix::from_fn(n * np, n * np, self.v.proto(), |k, l| {
            let (b1, a1) = (k / n, k % n);
            let (b2, a2) = (l / n, l % n);
            jinv.get(a2, a1).mul(self.vp.gram.get(b1, b2))
        });
        FormedSpace { symmetry: Symmetry::Symplectic, gram: g }
    }

    pub fn flatten(&self, f: &Matrix<T>) -> Vec<T> {
        f.entries().to_vec()
    }

    pub fn unflatten(&self, v: &[T]) -> Matrix<T> {
        let n = self.v.dim();
        Matrix::from_fn(self.vp.dim(), n, self.v.proto(), |b, a| v[b * n + a].clone())
    }
}

/// (φ′(f), φ(f)) = (f f*, f* f).
pub fn moment_maps<T: Field>(s: &DualPairSetting<T>, f: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let fs = s.adjoint(f);
    (f.mul(&fs), fs.mul(f))
}

/// Drop the first column of λ′ and pad with 1s up to dim V.
pub fn transfer_partition(lambda_p: &[usize], dim_v: usize) -> Result<Vec<usize>, TransferError> {
    let mut lam: Vec<usize> = normalize_partition(lambda_p).into_iter().filter(|&x| x >= 2).map(|x| x - 1).collect();
    let used: usize = lam.iter().sum();
    if used > dim_v {
        return Err(TransferError::NotInImage(format!("needs dim V >= {used}, got {dim_v}")));
    }
    lam.extend(std::iter::repeat_n(1, dim_v - used));
    Ok(lam)
}

/// Multiplicity forms of γ: B_j = B′_{j+1}, and B_1 = B′_2 ⊕ (complement on V_new).
/// None when no compatible form exists on V_new.
pub fn transfer_orbit<T: WittField>(gp: &OrbitDatum<T>, v: &FormedSpace<T>) -> Result<Option<OrbitDatum<T>>, TransferError> {
    if gp.ambient.symmetry == v.symmetry {
        return Err(TransferError::SameSymmetry);
    }
    let lam = match transfer_partition(&gp.partition, v.dim()) {
        Ok(l) => l,
        Err(TransferError::NotInImage(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let p = v.proto();
    let mut forms: BTreeMap<usize, FormedSpace<T>> = BTreeMap::new();
    for (&jp, b) in &gp.forms {
        if jp >= 2 {
            forms.insert(jp - 1, b.clone());
        }
    }
    let n_new = v.dim() - lam.iter().filter(|&&x| x >= 2).sum::<usize>() - forms.get(&1).map_or(0, |b| b.dim());
    let partial = build_model(v.symmetry, &forms, p);
    let comp = match v.symmetry {
        Symmetry::Symplectic => {
            if n_new % 2 == 1 {
                return Ok(None);
            }
            FormedSpace::standard_symplectic(n_new, p)?
        }
        Symmetry::Orthogonal => {
            let part_det = if partial.space.dim() == 0 { p.one_like() } else { partial.space.gram.det() };
            match T::complement(&v.gram.det(), &part_det, n_new) {
                Some(g) => FormedSpace { symmetry: Symmetry::Orthogonal, gram: g },
                None => return Ok(None),
            }
        }
    };
    let b1 = match forms.remove(&1) {
        Some(b) => b.direct_sum(&comp),
        None => comp,
    };
    if b1.dim() > 0 {
        forms.insert(1, b1);
    }
    match validate_datum(v, &lam, &forms) {
        Ok(d) => Ok(Some(d)),
        Err(OrbitError::Incompatible(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Witness f ∈ Hom(V, V′) with f*f = e and f f* = e′, plus derived data.
#[derive(Clone, Debug)]
pub struct MomentWitness<T: Field> {
    pub gamma_p: Sl2Realization<T>,
    pub gamma: Sl2Realization<T>,
    pub setting: DualPairSetting<T>,
    pub f: Matrix<T>,
    /// Basis indices of V spanning V_new = ker f.
    pub new_indices: Vec<usize>,
    /// Basis indices of V′ spanning V^{1′} ⊗ W_1.
    pub one_prime_indices: Vec<usize>,
}

/// f = ⊕_j id ⊗ (u_i ↦ w_i) from W_j (in γ) to W_{j+1} (in γ′), zero on V_new.
pub fn construct_witness<T: Field>(gamma_p: &Sl2Realization<T>, gamma: &Sl2Realization<T>) -> Result<MomentWitness<T>, TransferError> {
    let setting = DualPairSetting::new(gamma.space.clone(), gamma_p.space.clone())?;
    let p = gamma.proto().clone();
    let (n, np) = (gamma.dim(), gamma_p.dim());
    let mut f = Matrix::zeros(np, n, &p);
    let mut new_indices = Vec::new();
    let mut one_prime_indices = Vec::new();
    for bp in &gamma_p.blocks {
        if bp.j == 1 {
            one_prime_indices.extend(bp.offset..bp.offset + bp.mult);
            continue;
        }
        let b = gamma
            .blocks
            .iter()
            .find(|b| b.j == bp.j - 1)
            .ok_or_else(|| TransferError::NotInImage(format!("no part {} in γ", bp.j - 1)))?;
        if b.mult < bp.mult || (b.j >= 2 && b.mult != bp.mult) {
            return Err(TransferError::NotInImage(format!("multiplicity mismatch at part {}", b.j)));
        }
        for k in 0..bp.mult {
            for i in 0..b.j {
                f.set(bp.offset + k * bp.j + i, b.offset + k * b.j + i, p.one_like());
            }
        }
    }
    for b in &gamma.blocks {
        if b.j == 1 {
            let used = gamma_p.blocks.iter().find(|bp| bp.j == 2).map_or(0, |bp| bp.mult);
            new_indices.extend(b.offset + used..b.offset + b.mult);
        } else if !gamma_p.blocks.iter().any(|bp| bp.j == b.j + 1) {
            return Err(TransferError::NotInImage(format!("part {} of γ has no source", b.j)));
        }
    }
    let w = MomentWitness { gamma_p: gamma_p.clone(), gamma: gamma.clone(), setting, f, new_indices, one_prime_indices };
    let bad = w.check();
    if !bad.is_empty() {
        return Err(TransferError::InvalidWitness(bad.join("; ")));
    }
    Ok(w)
}

/// Realize γ = transfer(γ′) on V and build the witness; None when γ′ is not in the image.
pub fn transfer_with_witness<T: WittField>(
    gp: &OrbitDatum<T>,
    v: &FormedSpace<T>,
) -> Result<Option<MomentWitness<T>>, TransferError> {
    match transfer_orbit(gp, v)? {
        None => Ok(None),
        Some(g) => construct_witness(&realize_sl2(gp), &realize_sl2(&g)).map(Some),
    }
}

impl<T: Field> MomentWitness<T> {
    /// Restriction f_m = f|_{V_m}: V_m → V′_{m+1}, as a matrix.
    pub fn graded_block(&self, m: i64) -> Matrix<T> {
        let src = self.gamma.indices_of_weight(m);
        let dst = self.gamma_p.indices_of_weight(m + 1);
        self.f.submatrix(&dst, &src)
    }

    pub fn kernel_basis(&self) -> Vec<Vec<T>> {
        self.f.kernel_basis()
    }

    pub fn v_new(&self) -> Result<FormedSpace<T>, FormedError> {
        self.gamma.space.restrict(&self.kernel_basis())
    }

    /// Number of m < 0 with f_m not bijective (f_m is only injective there in general).
    pub fn negative_nonbijective(&self) -> usize {
        (-self.gamma.r..0)
            .filter(|&m| {
                let b = self.graded_block(m);
                !(b.rows() == b.cols() && b.rank() == b.cols())
            })
            .count()
    }

    pub fn check(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let (ep, e) = moment_maps(&self.setting, &self.f);
        if e != self.gamma.e {
            bad.push("f*f != e".into());
        }
        if ep != self.gamma_p.e {
            bad.push("f f* != e'".into());
        }
        let (w, wp) = (&self.gamma.weights, &self.gamma_p.weights);
        for b in 0..self.f.rows() {
            for a in 0..self.f.cols() {
                if !self.f.get(b, a).is_zero() && wp[b] != w[a] + 1 {
                    bad.push(format!("f maps weight {} to {}", w[a], wp[b]));
                }
            }
        }
        for m in 1..=self.gamma.r {
            let blk = self.graded_block(m);
            if blk.rows() != blk.cols() || blk.rank() != blk.cols() {
                bad.push(format!("f_{m} not bijective"));
            }
        }
        for m in -self.gamma.r..0 {
            if self.graded_block(m).rank() != self.gamma.weight_dim(m) {
                bad.push(format!("f_{m} not injective"));
            }
        }
        let ker = self.kernel_basis();
        if ker.iter().any(|v| v.iter().enumerate().any(|(i, x)| !x.is_zero() && w[i] != 0)) {
            bad.push("ker f not inside V_0".into());
        }
        if ker.len() != self.new_indices.len() {
            bad.push("V_new != ker f".into());
        }
        if self.v_new().is_err() {
            bad.push("form degenerate on ker f".into());
        }
        bad
    }

    pub fn small_dual_pair(&self) -> Result<SmallDualPair<T>, TransferError> {
        let p = self.gamma.proto();
        let l = FormedSpace::new(self.gamma.space.symmetry, self.gamma.space.gram.submatrix(&self.new_indices, &self.new_indices))?;
        let ip = &self.one_prime_indices;
        let lp = FormedSpace::new(self.gamma_p.space.symmetry, self.gamma_p.space.gram.submatrix(ip, ip))?;
        let glue = if l.dim() * lp.dim() == 0 {
            FormedSpace::zero(Symmetry::Symplectic, p)
        } else {
            DualPairSetting::new(l.clone(), lp.clone())?.w_space()
        };
        let (gx, gy) = if glue.dim() == 0 {
            (Subspace { ambient: glue.clone(), basis: vec![] }, Subspace { ambient: glue.clone(), basis: vec![] })
        } else {
            lagrangian_split(&glue)?
        };
        Ok(SmallDualPair {
            same_type: l.symmetry == self.gamma.space.symmetry && lp.symmetry == self.gamma_p.space.symmetry,
            l,
            lp,
            glue,
            glue_x: gx,
            glue_y: gy,
        })
    }

    /// The map (−𝔤_{−1}) ⊕ 𝔤′_{−1} ⊕ Hom(V_new, V^{1′}) → 𝕊 = ⊕_j Hom(V_j, V′_j).
    pub fn glue_isomorphism(&self) -> GlueMap<T> {
        let p = self.gamma.proto().clone();
        let (n, np) = (self.gamma.dim(), self.gamma_p.dim());
        let g1 = build_scaffold(&self.gamma).g_minus1();
        let g1p = build_scaffold(&self.gamma_p).g_minus1();
        let mut images: Vec<Matrix<T>> = Vec::new();
        for x in &g1 {
            images.push(self.f.mul(x));
        }
        for x in &g1p {
            images.push(x.mul(&self.f));
        }
        let mut glue_basis = Vec::new();
        for &b in &self.one_prime_indices {
            for &a in &self.new_indices {
                let mut m = Matrix::zeros(np, n, &p);
                m.set(b, a, p.one_like());
                glue_basis.push(m.clone());
                images.push(m);
            }
        }
        let two_inv = p.from_i64_like(2).inv().expect("char != 2");
        let kappa = |e: &Matrix<T>, xs: &[Matrix<T>]| {
            Matrix::from_fn(xs.len(), xs.len(), &p, |a, b| {
                let br = xs[a].mul(&xs[b]).sub(&xs[b].mul(&xs[a]));
                e.mul(&br).trace().mul(&two_inv)
            })
        };
        let dom_g1 = kappa(&self.gamma.e, &g1).neg();
        let dom_g1p = kappa(&self.gamma_p.e, &g1p);
        let dom_glue = Matrix::from_fn(glue_basis.len(), glue_basis.len(), &p, |a, b| self.setting.form(&glue_basis[a], &glue_basis[b]));
        let domain_gram = dom_g1.direct_sum(&dom_g1p).direct_sum(&dom_glue);
        let (w, wp) = (&self.gamma.weights, &self.gamma_p.weights);
        let s_positions: Vec<(usize, usize)> =
            (0..np).flat_map(|b| (0..n).map(move |a| (b, a))).filter(|&(b, a)| wp[b] == w[a]).collect();
        GlueMap { setting: self.setting.clone(), dims: [g1.len(), g1p.len(), glue_basis.len()], images, domain_gram, s_positions }
    }
}

/// L = G(V_new), L′ = G′(V^{1′}) and the glue space Hom(V_new, V^{1′}).
#[derive(Clone, Debug)]
pub struct SmallDualPair<T: Field> {
    pub l: FormedSpace<T>,
    pub lp: FormedSpace<T>,
    pub glue: FormedSpace<T>,
    pub glue_x: Subspace<T>,
    pub glue_y: Subspace<T>,
    pub same_type: bool,
}

#[derive(Clone, Debug)]
pub struct GlueMap<T: Field> {
    pub setting: DualPairSetting<T>,
    /// dim 𝔤_{−1}, dim 𝔤′_{−1}, dim of the glue space.
    pub dims: [usize; 3],
    pub images: Vec<Matrix<T>>,
    pub domain_gram: Matrix<T>,
    /// Entries (b, a) of Hom(V, V′) with equal weights, spanning 𝕊.
    pub s_positions: Vec<(usize, usize)>,
}

impl<T: Field> GlueMap<T> {
    pub fn target_dim(&self) -> usize {
        self.s_positions.len()
    }

    fn image_coords(&self) -> Matrix<T> {
        let p = self.domain_gram.proto();
        let cols: Vec<Vec<T>> = self.images.iter().map(|m| self.s_positions.iter().map(|&(b, a)| m.get(b, a).clone()).collect()).collect();
        Matrix::from_columns(self.s_positions.len(), &cols, p)
    }

    /// Every image lies in 𝕊.
    pub fn lands_in_s(&self) -> bool {
        let w = &self.s_positions;
        self.images.iter().all(|m| {
            (0..m.rows()).all(|b| (0..m.cols()).all(|a| m.get(b, a).is_zero() || w.contains(&(b, a))))
        })
    }

    pub fn is_bijective(&self) -> bool {
        self.images.len() == self.target_dim() && self.lands_in_s() && self.image_coords().rank() == self.target_dim()
    }

    /// ⟨φ(a), φ(b)⟩ on 𝕊 equals the domain form.
    pub fn pulls_back_form(&self) -> bool {
        let k = self.images.len();
        let p = self.domain_gram.proto();
        let pulled = Matrix::from_fn(k, k, p, |a, b| self.setting.form(&self.images[a], &self.images[b]));
        pulled == self.domain_gram
    }
}

/// Datum whose ambient space is the model space of the given multiplicity forms.
pub fn datum_on_model<T: WittField>(symmetry: Symmetry, forms: BTreeMap<usize, FormedSpace<T>>, proto: &T) -> Result<OrbitDatum<T>, OrbitError> {
    let m = build_model(symmetry, &forms, proto);
    let part: Vec<usize> = forms.iter().flat_map(|(&j, b)| std::iter::repeat_n(j, b.dim())).collect();
    validate_datum(&m.space, &part, &forms)
}
