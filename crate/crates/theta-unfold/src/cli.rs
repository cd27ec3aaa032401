//! Command-line front end: JSON case specs, presets, transfer reports and verification suites.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::exactalg::{CMat, Coeff, ExactMat, Field, Fq, Matrix, OpMatrix, Rat};
use crate::formed::{FormedSpace, Symmetry};
use crate::orbits::{multiplicities, multiplicity_symmetry, normalize_partition, validate_datum, OrbitDatum, OrbitError, WittField};
use crate::transfer::{datum_on_model, transfer_orbit, transfer_partition, transfer_with_witness, MomentWitness};
use crate::unfold::{basis_phi, random_phi, random_values, CaseOptions, FiniteCase};
use crate::weil::{HeisenbergModel, WeilRep};

#[derive(Parser, Debug)]
#[command(name = "theta-unfold", about = "Nilpotent orbit transfer and theta period checks over finite fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Transfer γ′ to γ and print the orbit data and period labels.
    Transfer(CaseArgs),
    /// Run the verification suite for a case.
    Verify(CaseArgs),
    /// List the built-in presets.
    Presets {
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(clap::Args, Debug)]
pub struct CaseArgs {
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<String>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<String>,
    /// Test hook: perturb the moment-map witness.
    #[arg(long, hide = true)]
    pub corrupt_witness: bool,
    /// Test hook: drop the ½ in the character of U⁺′.
    #[arg(long, hide = true)]
    pub drop_half: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Exact,
    Float,
}

/// A form: {"dim", "disc"} over F_q, or diagonal entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FormSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc: Option<Disc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<i64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disc {
    Square,
    Nonsquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Orthogonal,
    Symplectic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(rename = "type")]
    pub kind: GroupKind,
    #[serde(flatten)]
    pub form: FormSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub partition: Vec<usize>,
    /// Multiplicity forms keyed by part size.
    #[serde(default)]
    pub forms: BTreeMap<String, FormSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    /// Odd prime, or 0 / absent for the rationals.
    #[serde(default)]
    pub q: Option<u32>,
    #[serde(rename = "G")]
    pub g: GroupSpec,
    #[serde(rename = "Gprime")]
    pub gprime: GroupSpec,
    pub gamma_prime: GammaSpec,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub backend: Option<BackendArg>,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(msg: impl fmt::Display) -> SpecError {
    SpecError::Invalid(msg.to_string())
}

pub const ALL_CHECKS: [&str; 9] = ["transfer", "witness", "glue", "weil", "key_identity", "vanishing", "steps", "key_result", "equivariance"];

/// Field-specific construction of orthogonal forms from a spec.
pub trait SpecField: WittField + fmt::Display {
    fn proto_of(q: Option<u32>) -> Self;
    fn orthogonal(spec: &FormSpec, dim: usize, proto: &Self) -> Result<FormedSpace<Self>, SpecError>;
}

impl SpecField for Fq {
    fn proto_of(q: Option<u32>) -> Self {
        Fq::new(0, q.expect("prime"))
    }
    fn orthogonal(spec: &FormSpec, dim: usize, proto: &Self) -> Result<FormedSpace<Self>, SpecError> {
        if let Some(d) = &spec.diag {
            let entries: Vec<Fq> = d.iter().map(|&x| proto.from_i64_like(x)).collect();
            return FormedSpace::diagonal(&entries, proto).map_err(invalid);
        }
        let want = match spec.disc.unwrap_or(Disc::Square) {
            Disc::Square => 1,
            Disc::Nonsquare => -1,
        };
        if dim == 0 {
            return if want == 1 { Ok(FormedSpace::zero(Symmetry::Orthogonal, proto)) } else { Err(invalid("a 0-dimensional form has square discriminant")) };
        }
        [true, false]
            .into_iter()
            .map(|sq| FormedSpace::orthogonal_fq(dim, sq, proto.q))
            .find(|s| s.disc_class() == want)
            .ok_or_else(|| invalid("no form with that discriminant"))
    }
}

impl SpecField for Rat {
    fn proto_of(_q: Option<u32>) -> Self {
        Rat::zero()
    }
    fn orthogonal(spec: &FormSpec, _dim: usize, proto: &Self) -> Result<FormedSpace<Self>, SpecError> {
        let d = spec.diag.as_ref().ok_or_else(|| invalid("orthogonal forms over Q are given by \"diag\""))?;
        let entries: Vec<Rat> = d.iter().map(|&x| Rat::int(x)).collect();
        FormedSpace::diagonal(&entries, proto).map_err(invalid)
    }
}

fn form_dim(spec: &FormSpec) -> Option<usize> {
    spec.dim.or(spec.diag.as_ref().map(|d| d.len()))
}

fn build_space<T: SpecField>(sym: Symmetry, spec: &FormSpec, dim: Option<usize>, proto: &T) -> Result<FormedSpace<T>, SpecError> {
    let dim = form_dim(spec).or(dim).ok_or_else(|| invalid("form needs \"dim\" or \"diag\""))?;
    if let (Some(a), Some(b)) = (form_dim(spec), spec.dim) {
        if a != b {
            return Err(invalid("\"dim\" and \"diag\" disagree"));
        }
    }
    match sym {
        Symmetry::Orthogonal => T::orthogonal(spec, dim, proto),
        Symmetry::Symplectic => {
            if spec.disc.is_some() || spec.diag.is_some() {
                return Err(invalid("symplectic forms take only \"dim\""));
            }
            FormedSpace::standard_symplectic(dim, proto).map_err(invalid)
        }
    }
}

fn symmetry(k: GroupKind) -> Symmetry {
    match k {
        GroupKind::Orthogonal => Symmetry::Orthogonal,
        GroupKind::Symplectic => Symmetry::Symplectic,
    }
}

/// Parsed case over a field: V, γ′ realized on the model space of V′.
pub struct ParsedCase<T: Field> {
    pub v: FormedSpace<T>,
    pub gp: OrbitDatum<T>,
}

pub fn parse_case<T: SpecField>(spec: &CaseSpec) -> Result<ParsedCase<T>, SpecError> {
    let proto = T::proto_of(spec.q);
    let sym_p = symmetry(spec.gprime.kind);
    let sym = symmetry(spec.g.kind);
    if sym == sym_p {
        return Err(invalid("G and G′ must be of opposite types"));
    }
    let v = build_space(sym, &spec.g.form, None, &proto)?;
    let vp = build_space(sym_p, &spec.gprime.form, None, &proto)?;
    let lambda = normalize_partition(&spec.gamma_prime.partition);
    if let Err(e @ (OrbitError::SizeMismatch { .. } | OrbitError::Parity { .. })) = validate_datum(&vp, &lambda, &BTreeMap::new()) { return Err(invalid(e)) }
    let mult = multiplicities(&lambda);
    let mut forms = BTreeMap::new();
    for (key, f) in &spec.gamma_prime.forms {
        let j: usize = key.parse().map_err(|_| invalid(format!("form key {key:?} is not a part size")))?;
        let a = *mult.get(&j).ok_or_else(|| invalid(format!("multiplicity form given for part {j}, which does not occur")))?;
        forms.insert(j, build_space(multiplicity_symmetry(sym_p, j), f, Some(a), &proto)?);
    }
    for (&j, &a) in &mult {
        if let std::collections::btree_map::Entry::Vacant(e) = forms.entry(j) {
            let s = multiplicity_symmetry(sym_p, j);
            let f = if s == Symmetry::Symplectic { FormSpec { dim: Some(a), ..Default::default() } } else { default_orthogonal(a) };
            e.insert(build_space(s, &f, Some(a), &proto)?);
        }
    }
    validate_datum(&vp, &lambda, &forms).map_err(invalid)?;
    let gp = datum_on_model(sym_p, forms, &proto).map_err(invalid)?;
    Ok(ParsedCase { v, gp })
}

fn default_orthogonal(a: usize) -> FormSpec {
    FormSpec { diag: Some(vec![1; a]), ..Default::default() }
}

pub fn load_spec(args: &CaseArgs) -> Result<CaseSpec, SpecError> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => preset(name).ok_or_else(|| invalid(format!("unknown preset {name:?}")))?.spec,
        (None, None) => return Err(invalid("one of --spec or --preset is required")),
    };
    if let Some(s) = args.seed {
        spec.seed = Some(s);
    }
    if let Some(b) = args.backend {
        spec.backend = Some(b);
    }
    if spec.q == Some(0) {
        spec.q = None;
    }
    if let Some(q) = spec.q {
        if !crate::exactalg::is_odd_prime(q) {
            return Err(invalid(format!("q = {q} is not an odd prime")));
        }
    }
    for c in &spec.checks {
        if !ALL_CHECKS.contains(&c.as_str()) {
            return Err(invalid(format!("unknown check {c:?}")));
        }
    }
    Ok(spec)
}

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub spec: CaseSpec,
}

fn fq_form(dim: usize, disc: Disc) -> FormSpec {
    FormSpec { dim: Some(dim), disc: Some(disc), diag: None }
}

fn grp(kind: GroupKind, form: FormSpec) -> GroupSpec {
    GroupSpec { kind, form }
}

fn orth(dim: usize, disc: Disc) -> GroupSpec {
    grp(GroupKind::Orthogonal, fq_form(dim, disc))
}

fn symp(dim: usize) -> GroupSpec {
    grp(GroupKind::Symplectic, FormSpec { dim: Some(dim), ..Default::default() })
}

/// G′ descriptor matching the model space of γ′ over F_q.
fn model_gprime(q: u32, kind: GroupKind, partition: &[usize], forms: &BTreeMap<String, FormSpec>) -> GroupSpec {
    let dim = partition.iter().sum();
    if kind == GroupKind::Symplectic {
        return symp(dim);
    }
    let probe = CaseSpec {
        q: Some(q),
        g: symp(0),
        gprime: orth(dim, Disc::Square),
        gamma_prime: GammaSpec { partition: partition.to_vec(), forms: forms.clone() },
        checks: vec![],
        seed: None,
        backend: None,
    };
    let proto = Fq::new(0, q);
    let sym_p = Symmetry::Orthogonal;
    let mult = multiplicities(partition);
    let mut fs = BTreeMap::new();
    for (&j, &a) in &mult {
        let s = multiplicity_symmetry(sym_p, j);
        let f = probe.gamma_prime.forms.get(&j.to_string()).cloned().unwrap_or_else(|| {
            if s == Symmetry::Symplectic {
                FormSpec { dim: Some(a), ..Default::default() }
            } else {
                default_orthogonal(a)
            }
        });
        fs.insert(j, build_space(s, &f, Some(a), &proto).expect("preset form"));
    }
    let model = datum_on_model(sym_p, fs, &proto).expect("preset datum");
    let disc = if model.ambient.disc_class() == 1 { Disc::Square } else { Disc::Nonsquare };
    orth(dim, disc)
}

fn case(q: u32, g: GroupSpec, kind_p: GroupKind, partition: &[usize], forms: &[(usize, FormSpec)]) -> CaseSpec {
    let forms: BTreeMap<String, FormSpec> = forms.iter().map(|(j, f)| (j.to_string(), f.clone())).collect();
    CaseSpec {
        q: Some(q),
        g,
        gprime: model_gprime(q, kind_p, partition, &forms),
        gamma_prime: GammaSpec { partition: partition.to_vec(), forms },
        checks: vec![],
        seed: Some(1),
        backend: Some(BackendArg::Exact),
    }
}

pub fn presets() -> Vec<Preset> {
    use GroupKind::*;
    let sq = Disc::Square;
    let one = || fq_form(1, Disc::Square);
    vec![
        Preset { name: "P1", description: "(O_2, Sp_2), γ′ = [2]: trivial γ, L = O_1", spec: case(3, orth(2, Disc::Nonsquare), Symplectic, &[2], &[(2, one())]) },
        Preset { name: "P2", description: "(Sp_2, O_3), γ′ = [3]: even case, γ = [2]", spec: case(3, symp(2), Orthogonal, &[3], &[(3, one())]) },
        Preset { name: "P3", description: "(O_4, Sp_4), γ′ = [2,1,1]: trivial γ", spec: case(3, orth(4, sq), Symplectic, &[2, 1, 1], &[(2, one())]) },
        Preset { name: "P4", description: "(O_6, Sp_4), γ′ = [4]: γ = [3,1,1,1], L = O_3", spec: case(3, orth(6, sq), Symplectic, &[4], &[(4, one())]) },
        Preset { name: "P5", description: "(O_2, Sp_4), γ′ = [4]: not in the image", spec: case(3, orth(2, Disc::Nonsquare), Symplectic, &[4], &[(4, one())]) },
        Preset { name: "bessel-whittaker", description: "Whittaker on Sp_4 from Bessel on O_6", spec: case(3, orth(6, sq), Symplectic, &[4], &[(4, one())]) },
        Preset { name: "fj-whittaker", description: "Whittaker on O_4 from Fourier-Jacobi on Sp_4", spec: case(3, symp(4), Orthogonal, &[3, 1], &[(3, one()), (1, one())]) },
        Preset { name: "bessel-fj", description: "hook [4,1,1] on Sp_6 from hook [3,1,1] on O_5", spec: case(3, orth(5, sq), Symplectic, &[4, 1, 1], &[(4, one())]) },
        Preset { name: "whittaker-fj", description: "Fourier-Jacobi [4,1,1] on Sp_6 from Whittaker [3,1] on O_4", spec: case(3, orth(4, sq), Symplectic, &[4, 1, 1], &[(4, one())]) },
        Preset { name: "reductive-fj", description: "[2,1,1] on Sp_4 from the trivial orbit on O_4", spec: case(3, orth(4, sq), Symplectic, &[2, 1, 1], &[(2, one())]) },
        Preset { name: "shalika", description: "Shalika [2,2] on Sp_4 from the reductive period on O_3", spec: case(3, orth(3, sq), Symplectic, &[2, 2], &[(2, fq_form(2, sq))]) },
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Period type attached to a partition.
pub fn period_label(sym: Symmetry, lambda: &[usize]) -> &'static str {
    let l = normalize_partition(lambda);
    if l.is_empty() || l.iter().all(|&x| x == 1) {
        return "reductive";
    }
    let dim: usize = l.iter().sum();
    let regular = l.len() == 1 || (sym == Symmetry::Orthogonal && dim.is_multiple_of(2) && l.len() == 2 && l[1] == 1);
    if regular {
        return "Whittaker";
    }
    if l.iter().all(|&x| x == 2) {
        return "Shalika";
    }
    if l[1..].iter().all(|&x| x == 1) {
        return match sym {
            Symmetry::Orthogonal => "Bessel",
            Symmetry::Symplectic => "Fourier-Jacobi",
        };
    }
    "none"
}

fn group_label(s: Symmetry, dim: usize) -> String {
    match s {
        Symmetry::Orthogonal => format!("O_{dim}"),
        Symmetry::Symplectic => format!("Sp_{dim}"),
    }
}

fn matrix_json<T: Field + fmt::Display>(m: &Matrix<T>) -> Value {
    Value::Array((0..m.rows()).map(|i| Value::Array(m.row(i).iter().map(|x| Value::String(x.to_string())).collect())).collect())
}

fn forms_json<T: Field + fmt::Display>(d: &OrbitDatum<T>) -> Value {
    let mut out = serde_json::Map::new();
    for (j, f) in &d.forms {
        out.insert(j.to_string(), json!({"dim": f.dim(), "symmetry": format!("{:?}", f.symmetry).to_lowercase(), "gram": matrix_json(&f.gram)}));
    }
    Value::Object(out)
}

/// Report skeleton: the case echo with seed and backend filled in.
fn envelope(spec: &CaseSpec) -> Value {
    let mut v = serde_json::to_value(spec).expect("json");
    v["seed"] = json!(spec.seed.unwrap_or(1));
    if spec.q.is_some() {
        v["backend"] = json!(spec.backend.unwrap_or(BackendArg::Exact));
    }
    v
}

pub fn transfer_report<T: SpecField>(spec: &CaseSpec) -> Result<Value, SpecError> {
    let c = parse_case::<T>(spec)?;
    let lambda_p = normalize_partition(&spec.gamma_prime.partition);
    let sym_p = c.gp.ambient.symmetry;
    let sym = c.v.symmetry;
    let label_p = period_label(sym_p, &lambda_p);
    let mut out = envelope(spec);
    out["gamma_prime_datum"] = json!({"partition": lambda_p, "forms": forms_json(&c.gp), "period": label_p});
    match transfer_orbit(&c.gp, &c.v).map_err(invalid)? {
        None => {
            let why = match transfer_partition(&lambda_p, c.v.dim()) {
                Err(e) => e.to_string(),
                Ok(_) => "multiplicity forms admit no complement of the required class".into(),
            };
            out["in_image"] = json!(false);
            out["result"] = json!("not in image");
            out["obstruction"] = json!(why);
        }
        Some(g) => {
            let w = transfer_with_witness(&c.gp, &c.v).map_err(invalid)?.expect("in image");
            let small = w.small_dual_pair().map_err(invalid)?;
            let label = period_label(sym, &g.partition);
            out["in_image"] = json!(true);
            out["gamma"] = json!({"partition": g.partition, "forms": forms_json(&g), "period": label});
            out["V_new"] = json!(small.l.dim());
            out["L"] = json!(group_label(small.l.symmetry, small.l.dim()));
            out["Lprime"] = json!(group_label(small.lp.symmetry, small.lp.dim()));
            out["periods"] = json!(format!("{label_p} on G′ <- {label} on G"));
            out["witness"] = matrix_json(&w.f);
        }
    }
    Ok(out)
}

/// Scalar rendering: exact coefficient vector when available plus a float.
pub fn value_json<V: Coeff>(v: &V) -> Value {
    let c = v.to_c64();
    json!({"exact": v.exact_coeffs(), "re": c.re, "im": c.im})
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub detail: Value,
    pub millis: u128,
}

/// Largest Weil space and group the verifier will enumerate.
const MAX_WEIL_DIM: usize = 81;
const MAX_GROUP_SPACE: usize = 4;

fn status(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn check_witness(w: &MomentWitness<Fq>) -> (Status, Value) {
    let bad = w.check();
    (status(bad.is_empty()), json!({"violations": bad, "injective_only_negative_levels": w.negative_nonbijective()}))
}

fn check_glue(w: &MomentWitness<Fq>) -> (Status, Value) {
    let g = w.glue_isomorphism();
    let ok = g.is_bijective() && g.pulls_back_form() && g.lands_in_s();
    (status(ok), json!({"dims": g.dims, "target_dim": g.target_dim(), "bijective": g.is_bijective(), "pullback": g.pulls_back_form()}))
}

struct Runner {
    checks: Vec<CheckResult>,
    wanted: Vec<String>,
}

impl Runner {
    fn wants(&self, name: &str) -> bool {
        self.wanted.is_empty() || self.wanted.iter().any(|c| c == name)
    }
    fn run(&mut self, name: &str, f: impl FnOnce() -> (Status, Value)) {
        if !self.wants(name) {
            return;
        }
        let t = Instant::now();
        let (status, detail) = f();
        self.checks.push(CheckResult { name: name.into(), status, detail, millis: t.elapsed().as_millis() });
    }
    fn na(&mut self, name: &str, why: &str) {
        if self.wants(name) {
            self.checks.push(CheckResult { name: name.into(), status: Status::NotApplicable, detail: json!({"reason": why}), millis: 0 });
        }
    }
}

fn verify_finite<M: OpMatrix>(spec: &CaseSpec, hooks: (bool, bool), runner: &mut Runner) -> Result<(), SpecError> {
    let c = parse_case::<Fq>(spec)?;
    let q = c.v.proto().q;
    let seed = spec.seed.unwrap_or(1);
    let w = transfer_with_witness(&c.gp, &c.v).map_err(invalid)?;
    runner.run("transfer", || match &w {
        Some(w) => (Status::Pass, json!({"in_image": true, "gamma": w.gamma.datum.partition})),
        None => (Status::Pass, json!({"in_image": false})),
    });
    match &w {
        Some(w) => {
            runner.run("witness", || check_witness(w));
            runner.run("glue", || check_glue(w));
        }
        None => {
            runner.na("witness", "γ′ not in image");
            runner.na("glue", "γ′ not in image");
        }
    }
    let n_w = c.v.dim() * c.gp.ambient.dim() / 2;
    let d = (q as usize).checked_pow(n_w as u32).unwrap_or(usize::MAX);
    if d > MAX_WEIL_DIM || c.v.dim() > MAX_GROUP_SPACE {
        for name in ["weil", "key_identity", "vanishing", "steps", "key_result", "equivariance"] {
            runner.na(name, "beyond desk scale for the Weil model");
        }
        return Ok(());
    }
    let opts = CaseOptions { seed, corrupt_witness: hooks.0, drop_half: hooks.1, ..CaseOptions::default() };
    let case: FiniteCase<M> = FiniteCase::new(&c.gp, &c.v, opts).map_err(invalid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    runner.run("weil", || {
        let g = &case.g_points;
        let mut bad = 0;
        let trials = 20;
        for _ in 0..trials {
            let a = &g[rng.gen_range(0..g.len())];
            let b = &g[rng.gen_range(0..g.len())];
            if !case.omega_g(a).mul(&case.omega_g(b)).same(&case.omega_g(&a.mul(b))) {
                bad += 1;
            }
        }
        (status(bad == 0), json!({"pairs": trials, "failures": bad, "weil_dim": case.size()}))
    });

    if case.in_image() {
        runner.run("key_identity", || {
            let all: Vec<usize> = (0..case.g_points.len()).collect();
            match case.key_identity_mismatches(&all) {
                Ok(bad) => {
                    let ce: Vec<Value> = bad.iter().take(3).map(|&i| matrix_json(&case.g_points[i])).collect();
                    let mut detail = json!({"g_checked": all.len(), "schwartz_basis": case.size() * case.size(), "mismatches": bad.len(), "counterexamples": ce});
                    if let Some(&i) = bad.first() {
                        let g = &case.g_points[i];
                        let (a, b) = find_witness_entry(&case.key_lhs_matrix(g), &case.key_rhs_matrix(g).expect("in image"));
                        let phi: M = basis_phi(case.size(), q, b, a);
                        detail["lhs"] = value_json(&case.key_lhs(&phi, g));
                        detail["rhs"] = value_json(&case.key_rhs(&phi, g).expect("in image"));
                    }
                    (status(bad.is_empty()), detail)
                }
                Err(e) => (Status::Fail, json!({"error": e.to_string()})),
            }
        });
        runner.na("vanishing", "γ′ is in the image");
        runner.run("steps", || match case.step_filters() {
            Ok(lines) => {
                let ok = lines.iter().all(|l| l.pass);
                let v: Vec<Value> = lines.iter().map(|l| json!({"level": l.level, "step": l.step, "pass": l.pass, "detail": l.detail})).collect();
                (status(ok), Value::Array(v))
            }
            Err(e) => (Status::Fail, json!({"error": e.to_string()})),
        });
        if case.is_even_simple() {
            runner.run("key_result", || {
                let mut rows = Vec::new();
                let mut ok = true;
                for _ in 0..5 {
                    let phi: M = random_phi(case.size(), q, &mut rng);
                    let f: Vec<M::Value> = random_values(case.g_points.len(), q, &mut rng);
                    match case.key_result_check(&phi, &f) {
                        Ok(r) => {
                            ok &= r.equal;
                            rows.push(json!({"lhs": r.lhs.as_ref().map(value_json), "rhs": r.rhs.as_ref().map(value_json), "equal": r.equal}));
                        }
                        Err(e) => {
                            ok = false;
                            rows.push(json!({"error": e.to_string()}));
                        }
                    }
                }
                (status(ok), Value::Array(rows))
            });
        } else {
            runner.na("key_result", "only the even case with trivial L′ is evaluated");
        }
        runner.run("equivariance", || match case.equivariance_check(20) {
            Ok(r) => (status(r.failures == 0), json!({"samples": r.samples, "failures": r.failures})),
            Err(e) => (Status::Fail, json!({"error": e.to_string()})),
        });
    } else {
        runner.na("key_identity", "γ′ not in image");
        runner.run("vanishing", || {
            let r = case.vanishing_check();
            (status(r.pass()), json!({"projector_zero": r.projector_zero, "g_checked": r.checked, "schwartz_basis": case.size() * case.size(), "nonzero_g": r.nonzero_g}))
        });
        for name in ["steps", "key_result", "equivariance"] {
            runner.na(name, "γ′ not in image");
        }
    }
    Ok(())
}

fn find_witness_entry<M: OpMatrix>(a: &M, b: &M) -> (usize, usize) {
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if !a.entry(i, j).same(&b.entry(i, j)) {
                return (i, j);
            }
        }
    }
    (0, 0)
}

fn verify_rational(spec: &CaseSpec, runner: &mut Runner) -> Result<(), SpecError> {
    let c = parse_case::<Rat>(spec)?;
    let w = transfer_with_witness(&c.gp, &c.v).map_err(invalid)?;
    runner.run("transfer", || (Status::Pass, json!({"in_image": w.is_some()})));
    match &w {
        Some(w) => {
            runner.run("witness", || {
                let bad = w.check();
                (status(bad.is_empty()), json!({"violations": bad}))
            });
            runner.run("glue", || {
                let g = w.glue_isomorphism();
                (status(g.is_bijective() && g.pulls_back_form()), json!({"dims": g.dims}))
            });
        }
        None => {
            runner.na("witness", "γ′ not in image");
            runner.na("glue", "γ′ not in image");
        }
    }
    for name in ["weil", "key_identity", "vanishing", "steps", "key_result", "equivariance"] {
        runner.na(name, "requires a finite field");
    }
    Ok(())
}

/// Runs the selected checks; returns the report and whether every check passed.
pub fn verify_report(spec: &CaseSpec, hooks: (bool, bool)) -> Result<(Value, bool), SpecError> {
    let mut runner = Runner { checks: Vec::new(), wanted: spec.checks.clone() };
    match spec.q {
        None => verify_rational(spec, &mut runner)?,
        Some(_) => match spec.backend.unwrap_or(BackendArg::Exact) {
            BackendArg::Exact => verify_finite::<ExactMat>(spec, hooks, &mut runner)?,
            BackendArg::Float => verify_finite::<CMat>(spec, hooks, &mut runner)?,
        },
    }
    let ok = runner.checks.iter().all(|c| c.status != Status::Fail);
    let mut report = envelope(spec);
    report["checks"] = json!(runner.checks);
    report["status"] = json!(if ok { "pass" } else { "fail" });
    Ok((report, ok))
}

pub fn presets_report() -> Value {
    let list: Vec<Value> = presets()
        .into_iter()
        .map(|p| {
            let transfer = transfer_report::<Fq>(&p.spec).ok();
            json!({
                "name": p.name,
                "description": p.description,
                "spec": p.spec,
                "in_image": transfer.as_ref().map(|t| t["in_image"].clone()),
                "gamma": transfer.as_ref().and_then(|t| t.get("gamma").map(|g| g["partition"].clone())),
                "periods": transfer.as_ref().and_then(|t| t.get("periods").cloned()),
            })
        })
        .collect();
    Value::Array(list)
}

/// Weil multiplicativity on random pairs of a symplectic group (used by tests and reports).
pub fn random_multiplicativity<M: OpMatrix>(model: std::sync::Arc<HeisenbergModel>, pairs: usize, seed: u64) -> usize {
    let rep: WeilRep<M> = WeilRep::new(model.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut bad = 0;
    for _ in 0..pairs {
        let a = model.random_element(&mut rng, 6);
        let b = model.random_element(&mut rng, 6);
        if !rep.omega(&a).mul(&rep.omega(&b)).same(&rep.omega(&a.mul(&b))) {
            bad += 1;
        }
    }
    bad
}

fn emit(v: &Value, out: Option<&str>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("json");
    match out {
        Some(path) => std::fs::write(path, text + "\n"),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r,
            }
        }
    }
}

/// Entry point; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result: Result<(Value, bool, Option<String>), SpecError> = match cli.command {
        Command::Presets { out } => Ok((presets_report(), true, out)),
        Command::Transfer(args) => load_spec(&args).and_then(|spec| {
            let r = if spec.q.is_some() { transfer_report::<Fq>(&spec) } else { transfer_report::<Rat>(&spec) };
            r.map(|v| (v, true, args.out.clone()))
        }),
        Command::Verify(args) => load_spec(&args)
            .and_then(|spec| verify_report(&spec, (args.corrupt_witness, args.drop_half)).map(|(v, ok)| (v, ok, args.out.clone()))),
    };
    match result {
        Ok((v, ok, out)) => {
            if let Err(e) = emit(&v, out.as_deref()) {
                eprintln!("error: {e}");
                return 2;
            }
            if ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            let v = json!({"error": e.to_string()});
            let _ = emit(&v, None);
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        for p in presets() {
            let text = serde_json::to_string(&p.spec).unwrap();
            let back: CaseSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, p.spec);
        }
    }

    #[test]
    fn labels() {
        assert_eq!(period_label(Symmetry::Symplectic, &[4]), "Whittaker");
        assert_eq!(period_label(Symmetry::Orthogonal, &[3, 1, 1, 1]), "Bessel");
        assert_eq!(period_label(Symmetry::Orthogonal, &[3, 1]), "Whittaker");
        assert_eq!(period_label(Symmetry::Symplectic, &[2, 2]), "Shalika");
        assert_eq!(period_label(Symmetry::Orthogonal, &[1, 1, 1]), "reductive");
        assert_eq!(period_label(Symmetry::Symplectic, &[2, 1, 1]), "Fourier-Jacobi");
        assert_eq!(period_label(Symmetry::Symplectic, &[4, 2]), "none");
    }

    #[test]
    fn preset_transfers() {
        let t = transfer_report::<Fq>(&preset("bessel-whittaker").unwrap().spec).unwrap();
        assert_eq!(t["gamma"]["partition"], json!([3, 1, 1, 1]));
        assert_eq!(t["L"], json!("O_3"));
        assert_eq!(t["periods"], json!("Whittaker on G′ <- Bessel on G"));
        let t = transfer_report::<Fq>(&preset("shalika").unwrap().spec).unwrap();
        assert_eq!(t["gamma"]["partition"], json!([1, 1, 1]));
        assert_eq!(t["gamma"]["period"], json!("reductive"));
        assert_eq!(t["gamma_prime_datum"]["period"], json!("Shalika"));
        let t = transfer_report::<Fq>(&preset("P3").unwrap().spec).unwrap();
        assert_eq!(t["gamma"]["partition"], json!([1, 1, 1, 1]));
        let t = transfer_report::<Fq>(&preset("P5").unwrap().spec).unwrap();
        assert_eq!(t["in_image"], json!(false));
        for p in presets() {
            let t = transfer_report::<Fq>(&p.spec).unwrap();
            assert_eq!(t["in_image"], json!(p.name != "P5"), "{}", p.name);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = preset("P1").unwrap().spec;
        s.gprime = symp(4);
        s.gamma_prime = GammaSpec { partition: vec![3, 1], forms: BTreeMap::new() };
        let e = parse_case::<Fq>(&s).err().unwrap().to_string();
        assert!(e.contains("odd part with odd multiplicity"), "{e}");
        let mut s = preset("P1").unwrap().spec;
        s.g = symp(2);
        assert!(parse_case::<Fq>(&s).is_err());
    }

    #[test]
    fn rational_transfer() {
        let spec = CaseSpec {
            q: None,
            g: grp(GroupKind::Orthogonal, FormSpec { diag: Some(vec![1, 1, 1, -1, 2, 1]), ..Default::default() }),
            gprime: symp(4),
            gamma_prime: GammaSpec { partition: vec![4], forms: [("4".to_string(), FormSpec { diag: Some(vec![1]), ..Default::default() })].into_iter().collect() },
            checks: vec![],
            seed: None,
            backend: None,
        };
        let t = transfer_report::<Rat>(&spec).unwrap();
        assert_eq!(t["gamma"]["partition"], json!([3, 1, 1, 1]));
        let (r, ok) = verify_report(&spec, (false, false)).unwrap();
        assert!(ok, "{r}");
    }

    #[test]
    fn verify_p2_float_and_p5() {
        let mut s = preset("P2").unwrap().spec;
        s.backend = Some(BackendArg::Float);
        let (r, ok) = verify_report(&s, (false, false)).unwrap();
        assert!(ok, "{r}");
        let (r, ok) = verify_report(&s, (true, false)).unwrap();
        assert!(!ok, "{r}");
        let mut s = preset("P5").unwrap().spec;
        s.backend = Some(BackendArg::Float);
        s.checks = vec!["vanishing".into()];
        let (r, ok) = verify_report(&s, (false, false)).unwrap();
        assert!(ok, "{r}");
    }
}
