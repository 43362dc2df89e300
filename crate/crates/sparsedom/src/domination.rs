//! Constructive sparse domination: the recursive stopping-time families for
//! `T` and `[b, T]`, the sparse operators, the oscillation family and the
//! layer machinery used in the weak-type estimates.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::czo::{apply_t, commutator, dyadic_local_maximal, local_grand_maximal, CZKernel};
use crate::error::{Error, Result};
use crate::grid::{covering_cube, three_lattice_shifts, Cell, CellCube, CountPrefix, DyadicLattice, GridFunction, Prefix};
use crate::orlicz::{complementary, luxemburg_cells, orlicz_maximal, CubeMode, YoungFunction};
use crate::report::{digest, digest_values, ratio, CheckReport, Sample};
use crate::sparse::{augment, layer_decomposition, verify_sparse, SparseFamily};
use crate::weights::{bmo_norm, mean_oscillation, restrict, CubeSet, Weight};

/// Which sparse operator [`sparse_apply`] evaluates.
#[derive(Clone, Copy, Debug)]
pub enum Variant<'a> {
    /// `Σ f_Q χ_Q`
    Plain,
    /// `Σ ‖f‖_{L log L, Q} χ_Q`
    LLogL,
    /// `Σ |b(x) − b_Q| f_Q χ_Q`
    Comm(&'a GridFunction),
    /// `Σ avg_Q(|b − b_Q| f) χ_Q`
    CommStar(&'a GridFunction),
}

/// Pointwise sum over the family; averages are zero-extended outside the box.
pub fn sparse_apply(s: &SparseFamily, f: &GridFunction, variant: Variant<'_>) -> Result<GridFunction> {
    if s.dim != f.dim() {
        return Err(Error::Parameter(format!("{}-dimensional family on {}-dimensional data", s.dim, f.dim())));
    }
    if let Variant::Comm(b) | Variant::CommStar(b) = variant {
        b.check_same_grid(f)?;
    }
    let llogl = YoungFunction::LLogL;
    let fv = f.values();
    let mut out = vec![0.0; f.len()];
    for q in s.cubes() {
        let idx = f.indices_in(q);
        if idx.is_empty() {
            continue;
        }
        let vol = q.volume() as f64;
        let avg = |g: &[f64]| idx.iter().map(|&i| g[i]).sum::<f64>() / vol;
        match variant {
            Variant::Plain | Variant::LLogL | Variant::CommStar(_) => {
                let c = match variant {
                    Variant::Plain => avg(fv),
                    Variant::LLogL => luxemburg_cells(f, q, &llogl),
                    Variant::CommStar(b) => {
                        let bq = avg(b.values());
                        idx.iter().map(|&i| (b.values()[i] - bq).abs() * fv[i]).sum::<f64>() / vol
                    }
                    Variant::Comm(_) => unreachable!(),
                };
                for &i in &idx {
                    out[i] += c;
                }
            }
            Variant::Comm(b) => {
                let (fq, bq) = (avg(fv), avg(b.values()));
                for &i in &idx {
                    out[i] += (b.values()[i] - bq).abs() * fq;
                }
            }
        }
    }
    f.with_values(out)
}

/// Maximal dyadic `P ⊊ Q` with `|P ∩ E| ≥ |P| / 2^{n+1}`.
fn cz_cubes(q: &CellCube, count: impl Fn(&CellCube) -> i64) -> Vec<CellCube> {
    let n = q.dim as u32;
    let mut out = Vec::new();
    let mut stack = q.children().unwrap_or_default();
    while let Some(p) = stack.pop() {
        let c = count(&p);
        if c == 0 {
            continue;
        }
        if (c << (n + 1)) >= p.volume() {
            out.push(p);
        } else if let Some(ch) = p.children() {
            stack.extend(ch);
        }
    }
    out.sort();
    out
}

/// One recursion node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub cube: CellCube,
    pub depth: usize,
    /// Index of the shifted lattice holding `R_Q`.
    pub lattice: usize,
    pub cover: CellCube,
    /// Realized thresholds for `|f|`, `M_{T,Q} f`, then (commutator only)
    /// `|(b − b_R) f|`, `M_{T,Q}((b − b_R) f)`. Empty when `|Q| < 2^{n+4}`.
    pub thresholds: Vec<f64>,
    /// Thresholds over `|f|_{3Q}` (resp. `C_T |f|_{3Q}`, ...).
    pub alphas: Vec<f64>,
    pub exceptional_fraction: f64,
    pub children: usize,
    pub children_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeData {
    pub lattice: usize,
    pub cube: CellCube,
    /// The recursion cube lifted to `cube`.
    pub source: CellCube,
    pub f_avg: f64,
    pub osc_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationResult {
    pub kernel: String,
    pub commutator: bool,
    pub dim: usize,
    pub cells: Vec<usize>,
    /// Declared density of every `S_j`.
    pub eta: f64,
    /// The ½-sparse recursion family on the base lattice.
    pub local_family: SparseFamily,
    /// `S_j`, one per shifted lattice.
    pub families: Vec<SparseFamily>,
    pub carleson: Vec<f64>,
    pub cubes: Vec<CubeData>,
    pub nodes: Vec<NodeDiagnostics>,
    pub max_depth: usize,
    pub empirical_alpha: f64,
    pub lhs_max: f64,
    pub empirical_constant: f64,
    pub argmax: Option<Cell>,
    #[serde(skip)]
    pub lhs: Vec<f64>,
    #[serde(skip)]
    pub rhs: Vec<f64>,
}

impl DominationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

struct Setup {
    g: u32,
    base: DyadicLattice,
    shifts: Vec<DyadicLattice>,
}

fn setup(f: &GridFunction) -> Result<Setup> {
    let cells = f.cells();
    let n = cells[0];
    if cells.iter().any(|&c| c != n) || !n.is_power_of_two() {
        return Err(Error::Parameter(format!("domination needs a square box with a power-of-two side, got {cells:?}")));
    }
    let g = n.trailing_zeros();
    let bx = f.bounds();
    let base = DyadicLattice::new(f.dim(), f.origin().to_vec(), f.h(), 0, g, bx)?;
    let cover = DyadicLattice::new(f.dim(), f.origin().to_vec(), f.h(), 0, g + 2, bx.expand(10 * n as i64))?;
    Ok(Setup { g, base, shifts: three_lattice_shifts(&cover) })
}

/// `Q₀` (the smallest base cube containing the support) and the siblings of
/// its ancestors: a partition of the box with `supp f ⊂ 3Q` for each piece.
fn partition(base: &DyadicLattice, support: &[Cell]) -> Vec<CellCube> {
    let dim = base.dim;
    let (mut lo, mut hi) = (support[0], support[0]);
    for c in support {
        for a in 0..dim {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let last = CellCube::new(dim, hi, 1);
    let q0 = (0..=base.g_max).map(|g| base.member_at(g, lo)).find(|q| q.contains(&last)).expect("the top cube is the box");
    let mut out = vec![q0];
    let mut a = q0;
    while let Some(p) = base.parent(&a) {
        out.extend(base.children(&p).into_iter().filter(|c| *c != a));
        a = p;
    }
    out
}

struct Split {
    diag: NodeDiagnostics,
    children: Vec<CellCube>,
}

fn split_node(k: &CZKernel, f: &GridFunction, af: &GridFunction, b: Option<&GridFunction>, q: &CellCube, (j, r): (usize, CellCube), depth: usize, base: &DyadicLattice) -> Result<Split> {
    let dim = q.dim;
    let vol = q.volume();
    let m = (vol >> (dim + 4)) as usize;
    let idx = f.indices_in(q);
    let t3 = q.triple();
    let avg_f = af.sum_over(&t3) / t3.volume() as f64;
    let mut thresholds = Vec::new();
    let mut alphas = Vec::new();
    let mut mask = vec![false; f.len()];
    let mut exceptional = 0i64;
    if m > 0 {
        let mut levels: Vec<(Vec<f64>, f64)> = vec![
            (af.values().to_vec(), avg_f),
            (local_grand_maximal(k, f, q, base)?.values().to_vec(), k.c_t() * avg_f),
        ];
        if let Some(b) = b {
            let c = b.average_cells(&r);
            let g = b.zip(f, |bv, fv| (bv - c) * fv)?;
            let ag = g.abs();
            let avg_g = ag.sum_over(&t3) / t3.volume() as f64;
            let mg = local_grand_maximal(k, &g, q, base)?;
            levels.push((ag.values().to_vec(), avg_g));
            levels.push((mg.values().to_vec(), k.c_t() * avg_g));
        }
        for (v, reference) in &levels {
            let mut vals: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            vals.sort_by(|x, y| y.total_cmp(x));
            let t = vals[m];
            for &i in &idx {
                if v[i] > t {
                    mask[i] = true;
                }
            }
            thresholds.push(t);
            alphas.push(ratio(t, *reference));
        }
        exceptional = idx.iter().filter(|&&i| mask[i]).count() as i64;
    }
    let children = if exceptional > 0 {
        let cp = CountPrefix::new(dim, f.cells(), &mask);
        cz_cubes(q, |p| cp.count(p))
    } else {
        Vec::new()
    };
    let covered: i64 = children.iter().map(|p| p.volume()).sum();
    if 2 * covered > vol {
        return Err(Error::Structural {
            msg: format!("children of {q} cover {covered} of {vol} cells"),
            part: None,
            cube: Some(*q),
        });
    }
    Ok(Split {
        diag: NodeDiagnostics {
            cube: *q,
            depth,
            lattice: j,
            cover: r,
            thresholds,
            alphas,
            exceptional_fraction: exceptional as f64 / vol as f64,
            children: children.len(),
            children_fraction: covered as f64 / vol as f64,
        },
        children,
    })
}

/// `|[b, T] f| ≤ C Σ_j (T_{S_j,b}|f| + T*_{S_j,b}|f|)` with families built by
/// the stopping-time recursion.
pub fn build_commutator_domination(k: &CZKernel, b: &GridFunction, f: &GridFunction) -> Result<DominationResult> {
    b.check_same_grid(f)?;
    build(k, Some(b), f)
}

/// `|Tf| ≤ C Σ_j A_{S_j}|f|`.
pub fn build_t_domination(k: &CZKernel, f: &GridFunction) -> Result<DominationResult> {
    build(k, None, f)
}

fn build(k: &CZKernel, b: Option<&GridFunction>, f: &GridFunction) -> Result<DominationResult> {
    if k.dim != f.dim() {
        return Err(Error::Parameter(format!("kernel is {}-dimensional, data is {}-dimensional", k.dim, f.dim())));
    }
    if f.values().iter().chain(b.map_or(&[][..], |b| b.values())).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite input values".into()));
    }
    let st = setup(f)?;
    let dim = f.dim();
    let af = f.abs();
    let pf = Prefix::new(&af);
    let support: Vec<Cell> = f.support().into_iter().map(|i| f.cell_of(i)).collect();
    let mut nodes = Vec::new();
    let mut local = Vec::new();
    let mut lifted: BTreeMap<(usize, CellCube), CellCube> = BTreeMap::new();
    if !support.is_empty() {
        let mut queue: VecDeque<(CellCube, usize)> = partition(&st.base, &support).into_iter().map(|q| (q, 0)).collect();
        while let Some((q, depth)) = queue.pop_front() {
            if pf.sum(&q.triple()) == 0.0 {
                continue;
            }
            if depth > st.g as usize + 1 {
                return Err(Error::Resolution(format!("recursion below {q} exceeds depth {}", st.g + 1)));
            }
            let cover = covering_cube(&q.triple(), &st.shifts)?;
            lifted.entry(cover).or_insert(q);
            local.push(q);
            let sp = split_node(k, f, &af, b, &q, cover, depth, &st.base)?;
            queue.extend(sp.children.iter().map(|p| (*p, depth + 1)));
            nodes.push(sp.diag);
        }
    }

    let mut local_family = SparseFamily::on_lattice(&st.base, local)?;
    let v = verify_sparse(&local_family, 0.5)?;
    if !v.certified() {
        return Err(Error::Structural { msg: "recursion family is not ½-sparse".into(), part: None, cube: v.offending });
    }
    local_family.eta = Some(0.5);

    let eta = 1.0 / (2.0 * 9f64.powi(dim as i32));
    let mut families = Vec::with_capacity(st.shifts.len());
    let mut carleson = Vec::with_capacity(st.shifts.len());
    for (j, lat) in st.shifts.iter().enumerate() {
        let cubes: Vec<CellCube> = lifted.keys().filter(|(i, _)| *i == j).map(|(_, r)| *r).collect();
        let mut fam = SparseFamily::on_lattice(lat, cubes)?;
        let v = verify_sparse(&fam, eta)?;
        if !v.certified() || v.carleson > 1.0 / eta + 1e-9 {
            let (_, worst) = crate::sparse::carleson_with_argmax(&fam);
            return Err(Error::Structural {
                msg: format!("family {j} has Carleson constant {} above {}", v.carleson, 1.0 / eta),
                part: Some(j),
                cube: worst.or(v.offending),
            });
        }
        fam.eta = Some(eta);
        carleson.push(v.carleson);
        families.push(fam);
    }

    let mut rhs = vec![0.0; f.len()];
    for fam in &families {
        let parts = match b {
            Some(b) => vec![sparse_apply(fam, &af, Variant::Comm(b))?, sparse_apply(fam, &af, Variant::CommStar(b))?],
            None => vec![sparse_apply(fam, &af, Variant::Plain)?],
        };
        for p in parts {
            for (o, v) in rhs.iter_mut().zip(p.values()) {
                *o += v;
            }
        }
    }
    let lhs: Vec<f64> = match b {
        Some(b) => commutator(k, b, f)?,
        None => apply_t(k, f)?,
    }
    .values()
    .iter()
    .map(|v| v.abs())
    .collect();
    let mut empirical_constant = 0.0;
    let mut argmax = None;
    for (i, (l, r)) in lhs.iter().zip(&rhs).enumerate() {
        let q = ratio(*l, *r);
        if q > empirical_constant {
            empirical_constant = q;
            argmax = Some(f.cell_of(i));
        }
    }

    let cubes = lifted
        .iter()
        .map(|(&(j, r), &q)| {
            let osc_avg = b.map_or(0.0, |b| {
                let c = b.average_cells(&r);
                f.indices_in(&r).into_iter().map(|i| (b.values()[i] - c).abs() * af.values()[i]).sum::<f64>() / r.volume() as f64
            });
            CubeData { lattice: j, cube: r, source: q, f_avg: af.average_cells(&r), osc_avg }
        })
        .collect();
    Ok(DominationResult {
        kernel: k.name(),
        commutator: b.is_some(),
        dim,
        cells: f.cells().to_vec(),
        eta,
        local_family,
        families,
        carleson,
        cubes,
        max_depth: nodes.iter().map(|n| n.depth).max().unwrap_or(0),
        empirical_alpha: nodes.iter().flat_map(|n| n.alphas.iter().copied()).fold(0.0, f64::max),
        nodes,
        lhs_max: lhs.iter().copied().fold(0.0, f64::max),
        empirical_constant,
        argmax,
        lhs,
        rhs,
    })
}

/// Pointwise record of the oscillation bound on the augmented family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationCertificate {
    pub eta: f64,
    pub constant: f64,
    pub cubes_checked: usize,
    pub cells_checked: usize,
    /// `max |b(x) − b_Q| / (2^{n+2} Σ_{R ⊆ Q} Ω(b; R) χ_R(x))`.
    pub max_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct OscillationFamily {
    pub family: SparseFamily,
    /// `F(Q)` for every `Q ∈ S`.
    pub local: BTreeMap<CellCube, SparseFamily>,
    pub certificate: OscillationCertificate,
}

/// Sub-cubes `P_j` of one oscillation stopping step.
fn oscillation_children(b: &GridFunction, p: &CellCube) -> Result<Vec<CellCube>> {
    let window = restrict(b, p)?;
    let vol = p.volume() as f64;
    let mean = window.values().iter().sum::<f64>() / vol;
    let g = window.map(|v| v - mean)?;
    let omega = g.values().iter().map(|v| v.abs()).sum::<f64>() / vol;
    let whole = CellCube::new(p.dim, [0, 0], p.side);
    let md = dyadic_local_maximal(&g, &whole)?;
    let level = (1u64 << (p.dim + 2)) as f64 * omega;
    let mask: Vec<bool> = md.values().iter().map(|v| *v > level).collect();
    if !mask.iter().any(|m| *m) {
        return Ok(Vec::new());
    }
    let cp = CountPrefix::new(p.dim, window.cells(), &mask);
    let out: Vec<CellCube> = cz_cubes(&whole, |c| cp.count(c))
        .into_iter()
        .map(|c| {
            let mut lo = c.lo;
            for a in 0..p.dim {
                lo[a] += p.lo[a];
            }
            CellCube::new(p.dim, lo, c.side)
        })
        .collect();
    let covered: i64 = out.iter().map(|c| c.volume()).sum();
    if 2 * covered > p.volume() {
        return Err(Error::Structural { msg: format!("oscillation children of {p} cover {covered} cells"), part: None, cube: Some(*p) });
    }
    Ok(out)
}

/// Augment a γ-sparse `S` so that `|b − b_Q| ≤ 2^{n+2} Σ_{R ⊆ Q} Ω(b; R) χ_R`
/// on every member; the bound is verified cell by cell.
pub fn build_oscillation_family(b: &GridFunction, s: &SparseFamily, gamma: f64) -> Result<OscillationFamily> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if s.dim != b.dim() {
        return Err(Error::Parameter("family and data dimensions differ".into()));
    }
    let bx = b.bounds();
    for q in s.cubes() {
        if !bx.contains_cube(q) {
            return Err(Error::Domain(format!("cube {q} is not inside the data box")));
        }
        if (q.side & (q.side - 1)) != 0 {
            return Err(Error::Parameter(format!("cube {q} does not have a power-of-two side")));
        }
    }
    if !verify_sparse(s, gamma)?.certified() {
        return Err(Error::Hypothesis(format!("family is not {gamma}-sparse")));
    }
    let mut memo: HashMap<CellCube, Vec<CellCube>> = HashMap::new();
    let mut local = BTreeMap::new();
    for q in s.cubes() {
        let mut tree = Vec::new();
        let mut stack = vec![*q];
        while let Some(p) = stack.pop() {
            if !memo.contains_key(&p) {
                memo.insert(p, oscillation_children(b, &p)?);
            }
            stack.extend(memo[&p].iter().copied());
            tree.push(p);
        }
        let mut fam = SparseFamily::new(s.dim, tree)?;
        if let Some(l) = &s.lattice {
            if fam.cubes().iter().all(|c| l.is_member(c)) {
                fam.lattice = Some(l.clone());
            }
        }
        local.insert(*q, fam);
    }
    let family = augment(s, &local, gamma, 0.5)?;
    let certificate = check_oscillation_bound(b, &family)?;
    Ok(OscillationFamily { family, local, certificate })
}

fn check_oscillation_bound(b: &GridFunction, fam: &SparseFamily) -> Result<OscillationCertificate> {
    let dim = fam.dim;
    let constant = (1u64 << (dim + 2)) as f64;
    let omega: Vec<f64> = fam.cubes().iter().map(|r| mean_oscillation(b, r)).collect();
    let mut cells_checked = 0;
    let mut max_ratio: f64 = 0.0;
    for q in fam.cubes() {
        let window = restrict(b, q)?;
        let n = window.len();
        let bq = window.values().iter().sum::<f64>() / n as f64;
        let mut rhs = vec![0.0; n];
        for (r, om) in fam.cubes().iter().zip(&omega) {
            if !q.contains(r) {
                continue;
            }
            for c in r.cells() {
                let local = [c[0] - q.lo[0], c[1] - q.lo[1]];
                let i = window.index(local).expect("inside");
                rhs[i] += constant * om;
            }
        }
        for (i, (bv, r)) in window.values().iter().zip(&rhs).enumerate() {
            let lhs = (bv - bq).abs();
            let tol = 64.0 * f64::EPSILON * (bv.abs() + bq.abs() + r);
            if lhs > r + tol {
                let c = window.cell_of(i);
                return Err(Error::Certificate(format!(
                    "oscillation bound fails at cell {:?} of {q}: {lhs} > {r}",
                    [c[0] + q.lo[0], c[1] + q.lo[1]]
                )));
            }
            max_ratio = max_ratio.max(ratio(lhs, *r));
        }
        cells_checked += n;
    }
    Ok(OscillationCertificate {
        eta: fam.eta.unwrap_or(0.0),
        constant,
        cubes_checked: fam.len(),
        cells_checked,
        max_ratio,
    })
}

/// Norm window imposed on the family of the key lemma.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// `4^{k−1} < ‖f‖_{Ψ,Q} ≤ 4^k`
    Positive,
    /// `4^{−k−1} < ‖f‖_{Ψ,Q} ≤ 4^{−k}`
    Negative,
}

impl Window {
    pub fn bounds(self, k: u32) -> (f64, f64) {
        let k = k as i32;
        match self {
            Window::Positive => (4f64.powi(k - 1), 4f64.powi(k)),
            Window::Negative => (4f64.powi(-k - 1), 4f64.powi(-k)),
        }
    }
}

/// Fixed data of one key-lemma instance.
#[derive(Clone, Debug)]
pub struct KeyLemma {
    pub psi: YoungFunction,
    /// `Ψ(4t) ≤ Λ Ψ(t)`
    pub lambda: f64,
    pub k: u32,
    pub window: Window,
    pub phi: YoungFunction,
}

/// `φ̄⁻¹(y)`; for `φ(t) = t` the complement is `0` on `[0, 1]`, `∞` after.
fn complement_inverse(phi: &YoungFunction, y: f64) -> Result<f64> {
    match phi {
        YoungFunction::Identity => Ok(1.0),
        _ => Ok(complementary(phi)?.inverse(y)),
    }
}

/// Checks the hypotheses, then evaluates the per-cube lower bound on
/// `∫_{E_Q} Ψ(4^k|f|)` and both sides of
/// `∫_E (Σ χ_Q) w ≤ 2^k w(E) + 4Λ/φ̄⁻¹((2Λ)^{2^k}) ∫ Ψ(4^k|f|) M_{φ(L)} w`.
pub fn key_lemma_check(lemma: &KeyLemma, f: &GridFunction, fk: &SparseFamily, w: &Weight, e: &[bool]) -> Result<CheckReport> {
    let KeyLemma { psi, lambda, k, window, phi } = lemma;
    let (lambda, k) = (*lambda, *k);
    f.check_same_grid(w.grid())?;
    if e.len() != f.len() {
        return Err(Error::Parameter("set mask does not match the grid".into()));
    }
    if !(lambda >= 1.0) {
        return Err(Error::Parameter(format!("Λ must be at least 1, got {lambda}")));
    }
    for i in 0..=240 {
        let t = 10f64.powf(-6.0 + 12.0 * i as f64 / 240.0);
        if psi.eval(4.0 * t) > lambda * psi.eval(t) * (1.0 + 1e-12) {
            return Err(Error::Hypothesis(format!("Ψ(4t) > Λ Ψ(t) at t = {t}")));
        }
    }
    let bx = f.bounds();
    if let Some(q) = fk.cubes().iter().find(|q| q.dim != f.dim() || !bx.contains_cube(q)) {
        return Err(Error::Domain(format!("cube {q} is not inside the data box")));
    }
    let (lo, hi) = window.bounds(k);
    for q in fk.cubes() {
        let nrm = luxemburg_cells(f, q, psi);
        if !(nrm > lo && nrm <= hi) {
            return Err(Error::Hypothesis(format!("‖f‖ over {q} is {nrm}, outside ({lo}, {hi}]")));
        }
    }
    let eta = 1.0 - 1.0 / (2.0 * lambda);
    if !verify_sparse(fk, eta)?.certified() {
        return Err(Error::Hypothesis(format!("family is not {eta}-sparse")));
    }

    let mut rep = CheckReport::new(
        format!("key_lemma_k{k}"),
        "key_lemma",
        digest(&[&digest_values("key_lemma", &[f.values(), w.values()]), &fk.to_text(), &psi.to_string(), &phi.to_string(), &format!("{lambda} {k} {window:?}")]),
    )
    .with_ceiling(Some(1.0 + 1e-9));
    let layers = layer_decomposition(fk);
    let scale = 4f64.powi(k as i32);
    let pv: Vec<f64> = f.values().iter().map(|v| psi.eval(scale * v.abs())).collect();
    let vol = f.cell_volume();
    let mut cube_estimate_min = f64::INFINITY;
    let shrink = (1.0 / (2.0 * lambda)).powi(1 << k.min(30));
    for (i, q) in fk.cubes().iter().enumerate() {
        let s: f64 = layers.e_cells(q).into_iter().filter_map(|c| f.index(c)).map(|j| pv[j]).sum();
        let lower = 2.0 * lambda * s / q.volume() as f64;
        cube_estimate_min = cube_estimate_min.min(lower);
        rep.push(Sample::new(i as f64, 1.0, lower));
        let ak = layers.a_cells(q, k).len() as f64;
        rep.push(Sample::new(i as f64, ak, shrink * q.volume() as f64));
    }
    let counts: Vec<f64> = {
        let mut c = vec![0.0; f.len()];
        for q in fk.cubes() {
            for i in f.indices_in(q) {
                c[i] += 1.0;
            }
        }
        c
    };
    let wv = w.values();
    let lhs: f64 = (0..f.len()).filter(|&i| e[i]).map(|i| counts[i] * wv[i]).sum::<f64>() * vol;
    let we: f64 = (0..f.len()).filter(|&i| e[i]).map(|i| wv[i]).sum::<f64>() * vol;
    let mw = orlicz_maximal(w.grid(), phi, CubeMode::AllCubes);
    let tail: f64 = pv.iter().zip(mw.values()).map(|(p, m)| p * m).sum::<f64>() * vol;
    let base = (2.0 * lambda).powi(1 << k.min(30));
    let coef = 4.0 * lambda / complement_inverse(phi, base)?;
    let rhs = 2f64.powi(k as i32) * we + if coef.is_finite() { coef * tail } else { 0.0 };
    rep.push(Sample::new(k as f64, lhs, rhs));
    rep.extra("k", k as f64);
    rep.extra("lambda", lambda);
    rep.extra("lhs", lhs);
    rep.extra("rhs", rhs);
    rep.extra("layers", layers.layers.len() as f64);
    rep.extra("cube_estimate_min", if cube_estimate_min.is_finite() { cube_estimate_min } else { 0.0 });
    let rep = rep.finish();
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TbfLevel {
    pub k: u32,
    pub cubes: Vec<CellCube>,
    /// `|F_k(Q)|` in cells, aligned with `cubes`.
    pub exceptional: Vec<usize>,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct TbfSplit {
    pub bmo: f64,
    pub levels: Vec<TbfLevel>,
    pub t1: GridFunction,
    pub t2: GridFunction,
    pub tsb: GridFunction,
    /// Cells where every member containing them has `|f|_Q ≤ 1/4`.
    pub region: Vec<bool>,
    pub split_ratio: f64,
    pub split_ok: bool,
    pub measure_ratio: f64,
    pub measure_ok: bool,
}

/// Split `T_{S,b} f` by the levels `4^{−k−1} < |f|_Q ≤ 4^{−k}` and the sets
/// `F_k(Q) = {|b − b_Q| > (3/2)^k ‖b‖_BMO}`.
pub fn tbf_decomposition(b: &GridFunction, s: &SparseFamily, f: &GridFunction) -> Result<TbfSplit> {
    b.check_same_grid(f)?;
    let bx = f.bounds();
    if let Some(q) = s.cubes().iter().find(|q| q.dim != f.dim() || !bx.contains_cube(q)) {
        return Err(Error::Domain(format!("cube {q} is not inside the data box")));
    }
    let bmo = bmo_norm(b, &CubeSet::AllInBox)?.value;
    let n = f.dim() as i32;
    let af = f.abs();
    let bv = b.values();
    let mut t1 = vec![0.0; f.len()];
    let mut t2 = vec![0.0; f.len()];
    let mut tsb = vec![0.0; f.len()];
    let mut region = vec![true; f.len()];
    let mut levels: BTreeMap<u32, TbfLevel> = BTreeMap::new();
    let mut measure_ratio: f64 = 0.0;
    for q in s.cubes() {
        let idx = f.indices_in(q);
        let vol = q.volume() as f64;
        let fq = idx.iter().map(|&i| af.values()[i]).sum::<f64>() / vol;
        let bq = idx.iter().map(|&i| bv[i]).sum::<f64>() / vol;
        for &i in &idx {
            tsb[i] += (bv[i] - bq).abs() * fq;
        }
        if fq == 0.0 {
            continue;
        }
        if fq > 0.25 {
            for &i in &idx {
                region[i] = false;
            }
            continue;
        }
        let mut k = 1u32;
        while fq <= 4f64.powi(-(k as i32) - 1) {
            k += 1;
        }
        let thr = 1.5f64.powi(k as i32) * bmo;
        let alpha = (1.0 - 1.5f64.powi(k as i32) / (2f64.powi(n) * std::f64::consts::E)).exp().min(1.0);
        let mut count = 0usize;
        for &i in &idx {
            t1[i] += thr * fq;
            let d = (bv[i] - bq).abs();
            if d > thr {
                t2[i] += d * fq;
                count += 1;
            }
        }
        measure_ratio = measure_ratio.max(ratio(count as f64, alpha * vol));
        let lv = levels.entry(k).or_insert(TbfLevel { k, cubes: Vec::new(), exceptional: Vec::new(), alpha });
        lv.cubes.push(*q);
        lv.exceptional.push(count);
    }
    let mut split_ratio: f64 = 0.0;
    for i in 0..f.len() {
        if region[i] {
            let sum = t1[i] + t2[i];
            let r = if tsb[i] <= sum * (1.0 + 1e-12) { ratio(tsb[i], sum).min(1.0) } else { ratio(tsb[i], sum) };
            split_ratio = split_ratio.max(r);
        }
    }
    Ok(TbfSplit {
        bmo,
        levels: levels.into_values().collect(),
        t1: f.with_values(t1)?,
        t2: f.with_values(t2)?,
        tsb: f.with_values(tsb)?,
        region,
        split_ok: split_ratio <= 1.0,
        split_ratio,
        measure_ok: measure_ratio <= 1.0,
        measure_ratio,
    })
}
