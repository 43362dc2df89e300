//! Sparse and Carleson families of lattice cubes.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt17, Cell, CellBox, CellCube, DyadicLattice};

/// Pairwise-disjoint witness set `E_Q ⊂ Q`, as a list of unit cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub cube: CellCube,
    pub cells: Vec<Cell>,
}

/// A finite family of cubes, optionally tied to a lattice and carrying
/// witness sets. Cubes are kept sorted and unique.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub dim: usize,
    #[serde(default)]
    pub lattice: Option<DyadicLattice>,
    cubes: Vec<CellCube>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub witnesses: Option<Vec<Witness>>,
}

impl SparseFamily {
    pub fn new(dim: usize, cubes: impl IntoIterator<Item = CellCube>) -> Result<Self> {
        let mut cubes: Vec<CellCube> = cubes.into_iter().collect();
        if let Some(c) = cubes.iter().find(|c| c.dim != dim || c.side <= 0) {
            return Err(Error::Contract(format!("cube {c} does not fit a {dim}-dimensional family")));
        }
        cubes.sort();
        cubes.dedup();
        Ok(SparseFamily { dim, lattice: None, cubes, eta: None, witnesses: None })
    }

    /// Family declared on a lattice; every cube must be a member.
    pub fn on_lattice(lattice: &DyadicLattice, cubes: impl IntoIterator<Item = CellCube>) -> Result<Self> {
        let mut f = SparseFamily::new(lattice.dim, cubes)?;
        if let Some(c) = f.cubes.iter().find(|c| !lattice.is_member(c)) {
            return Err(Error::Contract(format!("cube {c} is not a member of the declared lattice")));
        }
        f.lattice = Some(lattice.clone());
        Ok(f)
    }

    pub fn empty(dim: usize) -> Self {
        SparseFamily { dim, lattice: None, cubes: Vec::new(), eta: None, witnesses: None }
    }

    pub fn cubes(&self) -> &[CellCube] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn contains(&self, q: &CellCube) -> bool {
        self.cubes.binary_search(q).is_ok()
    }

    pub fn total_volume(&self) -> i64 {
        self.cubes.iter().map(|c| c.volume()).sum()
    }

    /// Check the witness invariants against `eta`.
    pub fn check_witnesses(&self) -> Result<()> {
        let (Some(ws), Some(eta)) = (&self.witnesses, self.eta) else {
            return Ok(());
        };
        let mut seen = HashSet::new();
        for w in ws {
            if !self.contains(&w.cube) {
                return Err(Error::Contract(format!("witness for non-member {}", w.cube)));
            }
            if let Some(c) = w.cells.iter().find(|c| !w.cube.contains_cell(**c)) {
                return Err(Error::Contract(format!("witness cell {c:?} outside {}", w.cube)));
            }
            if (w.cells.len() as f64) < eta * w.cube.volume() as f64 {
                return Err(Error::Contract(format!("witness of {} too small", w.cube)));
            }
            for c in &w.cells {
                if !seen.insert(*c) {
                    return Err(Error::Contract(format!("witness cell {c:?} claimed twice")));
                }
            }
        }
        Ok(())
    }

    /// For every member, indices of members containing it (including itself).
    fn containers(&self) -> Vec<Vec<usize>> {
        let index: HashMap<CellCube, usize> = self.cubes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        match &self.lattice {
            Some(lat) if self.cubes.iter().all(|c| lat.generation_of(c).is_some()) => self
                .cubes
                .iter()
                .map(|c| {
                    let g0 = lat.generation_of(c).unwrap();
                    (g0..=lat.g_max)
                        .filter_map(|g| index.get(&lat.member_at(g, c.lo)).copied())
                        .collect()
                })
                .collect(),
            _ => {
                let mut by_side: Vec<usize> = (0..self.cubes.len()).collect();
                by_side.sort_by_key(|&i| std::cmp::Reverse(self.cubes[i].side));
                self.cubes
                    .iter()
                    .map(|c| {
                        by_side
                            .iter()
                            .copied()
                            .take_while(|&i| self.cubes[i].side >= c.side)
                            .filter(|&i| self.cubes[i].contains(c))
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// Number of strict containers of each member.
    pub fn nesting_depths(&self) -> Vec<usize> {
        self.containers().iter().map(|v| v.len() - 1).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("sparsefamily v1\n");
        s.push_str(&format!("dim {}\n", self.dim));
        match self.eta {
            Some(e) => s.push_str(&format!("eta {}\n", fmt17(e))),
            None => s.push_str("eta none\n"),
        }
        if let Some(l) = &self.lattice {
            s.push_str(&format!("lattice unit {} scale {} gmin {} gmax {} origin", fmt17(l.unit), l.scale, l.g_min, l.g_max));
            for o in &l.origin {
                s.push_str(&format!(" {}", fmt17(*o)));
            }
            s.push_str(" shift");
            for a in 0..l.dim {
                s.push_str(&format!(" {}", l.shift[a]));
            }
            s.push_str(" bounds");
            for a in 0..l.dim {
                s.push_str(&format!(" {} {}", l.bounds.lo[a], l.bounds.hi[a]));
            }
            s.push('\n');
        }
        for c in &self.cubes {
            s.push_str("cube");
            for a in 0..self.dim {
                s.push_str(&format!(" {}", c.lo[a]));
            }
            s.push_str(&format!(" {}\n", c.side));
        }
        if let Some(ws) = &self.witnesses {
            for w in ws {
                s.push_str("witness");
                for a in 0..self.dim {
                    s.push_str(&format!(" {}", w.cube.lo[a]));
                }
                s.push_str(&format!(" {} :", w.cube.side));
                for c in &w.cells {
                    if self.dim == 1 {
                        s.push_str(&format!(" {}", c[0]));
                    } else {
                        s.push_str(&format!(" {},{}", c[0], c[1]));
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
        let mut dim = 0usize;
        let mut eta = None;
        let mut lattice = None;
        let mut cubes = Vec::new();
        let mut witnesses: Option<Vec<Witness>> = None;
        let mut saw_header = false;
        for (ln, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if !saw_header {
                if l != "sparsefamily v1" {
                    return Err(perr(ln, "expected header `sparsefamily v1`".into()));
                }
                saw_header = true;
                continue;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            let int = |t: &str| t.parse::<i64>().map_err(|_| perr(ln, format!("bad integer `{t}`")));
            let real = |t: &str| t.parse::<f64>().map_err(|_| perr(ln, format!("bad number `{t}`")));
            match toks[0] {
                "dim" => {
                    dim = toks.get(1).and_then(|t| t.parse().ok()).filter(|d| *d == 1 || *d == 2).ok_or_else(|| perr(ln, "bad dim".into()))?;
                }
                "eta" => {
                    eta = match toks.get(1) {
                        Some(&"none") => None,
                        Some(t) => Some(real(t)?),
                        None => return Err(perr(ln, "missing eta".into())),
                    }
                }
                "lattice" => {
                    if dim == 0 {
                        return Err(perr(ln, "dim must precede lattice".into()));
                    }
                    let want = 12 + 4 * dim;
                    if toks.len() != want {
                        return Err(perr(ln, "malformed lattice line".into()));
                    }
                    let unit = real(toks[2])?;
                    let scale = int(toks[4])?;
                    let g_min = int(toks[6])? as u32;
                    let g_max = int(toks[8])? as u32;
                    let mut k = 10;
                    let mut origin = Vec::new();
                    for _ in 0..dim {
                        origin.push(real(toks[k])?);
                        k += 1;
                    }
                    k += 1;
                    let mut shift = [0i64; 2];
                    for s in shift.iter_mut().take(dim) {
                        *s = int(toks[k])?;
                        k += 1;
                    }
                    k += 1;
                    let mut lo = [0i64; 2];
                    let mut hi = [1i64; 2];
                    for a in 0..dim {
                        lo[a] = int(toks[k])?;
                        hi[a] = int(toks[k + 1])?;
                        k += 2;
                    }
                    lattice = Some(DyadicLattice { dim, origin, unit, scale, shift, g_min, g_max, bounds: CellBox::new(dim, lo, hi) });
                }
                "cube" | "witness" => {
                    if dim == 0 {
                        return Err(perr(ln, "dim must precede cubes".into()));
                    }
                    if toks.len() < dim + 2 {
                        return Err(perr(ln, "short cube line".into()));
                    }
                    let mut lo = [0i64; 2];
                    for (a, v) in lo.iter_mut().enumerate().take(dim) {
                        *v = int(toks[1 + a])?;
                    }
                    let side = int(toks[1 + dim])?;
                    if side <= 0 {
                        return Err(perr(ln, "side must be positive".into()));
                    }
                    let cube = CellCube::new(dim, lo, side);
                    if toks[0] == "cube" {
                        if toks.len() != dim + 2 {
                            return Err(perr(ln, "trailing tokens on cube line".into()));
                        }
                        cubes.push(cube);
                    } else {
                        if toks.get(2 + dim) != Some(&":") {
                            return Err(perr(ln, "expected `:` in witness line".into()));
                        }
                        let mut cells = Vec::new();
                        for t in &toks[3 + dim..] {
                            let c = if dim == 1 {
                                [int(t)?, 0]
                            } else {
                                let (a, b) = t.split_once(',').ok_or_else(|| perr(ln, format!("bad cell `{t}`")))?;
                                [int(a)?, int(b)?]
                            };
                            cells.push(c);
                        }
                        witnesses.get_or_insert_with(Vec::new).push(Witness { cube, cells });
                    }
                }
                other => return Err(perr(ln, format!("unknown key `{other}`"))),
            }
        }
        if !saw_header {
            return Err(perr(0, "empty input".into()));
        }
        let mut f = match &lattice {
            Some(l) => SparseFamily::on_lattice(l, cubes)?,
            None => SparseFamily::new(dim, cubes)?,
        };
        f.eta = eta;
        f.witnesses = witnesses;
        f.check_witnesses()?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("family serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: SparseFamily = serde_json::from_str(s)?;
        let mut g = match &f.lattice {
            Some(l) => SparseFamily::on_lattice(l, f.cubes.clone())?,
            None => SparseFamily::new(f.dim, f.cubes.clone())?,
        };
        g.eta = f.eta;
        g.witnesses = f.witnesses;
        g.check_witnesses()?;
        Ok(g)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        if s.trim_start().starts_with('{') {
            SparseFamily::from_json(&s)
        } else {
            SparseFamily::from_text(&s)
        }
    }
}

/// `sup_Q Σ_{P ⊆ Q} |P| / |Q|`; 0 for the empty family.
pub fn carleson_constant(s: &SparseFamily) -> f64 {
    carleson_with_argmax(s).0
}

pub fn carleson_with_argmax(s: &SparseFamily) -> (f64, Option<CellCube>) {
    if s.cubes.is_empty() {
        return (0.0, None);
    }
    let mut acc = vec![0i64; s.cubes.len()];
    for (i, cont) in s.containers().iter().enumerate() {
        for &k in cont {
            acc[k] += s.cubes[i].volume();
        }
    }
    let mut best = (0.0, None);
    for (i, q) in s.cubes.iter().enumerate() {
        let r = acc[i] as f64 / q.volume() as f64;
        if r > best.0 {
            best = (r, Some(*q));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Certification {
    /// Smallest-first greedy, each cube takes all unclaimed cells.
    Greedy,
    /// Smallest-first greedy, each cube takes only `⌈η|Q|⌉` unclaimed cells.
    GreedyMinimal,
    /// No witnesses found, but `Λ ≤ 1/η` (Carleson implies sparse).
    Carleson,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVerdict {
    pub eta: f64,
    pub method: Certification,
    pub carleson: f64,
    pub witnesses: Option<Vec<Witness>>,
    /// First cube whose witness fell short in the plain greedy pass.
    pub offending: Option<CellCube>,
}

impl SparseVerdict {
    pub fn certified(&self) -> bool {
        self.method != Certification::Failed
    }
}

fn greedy(s: &SparseFamily, eta: f64, minimal: bool) -> std::result::Result<Vec<Witness>, CellCube> {
    if s.cubes.is_empty() {
        return Ok(Vec::new());
    }
    let mut lo = [i64::MAX; 2];
    let mut hi = [i64::MIN; 2];
    for c in &s.cubes {
        for a in 0..s.dim {
            lo[a] = lo[a].min(c.lo[a]);
            hi[a] = hi[a].max(c.hi(a));
        }
    }
    let w1 = if s.dim == 2 { (hi[1] - lo[1]) as usize } else { 1 };
    let idx = |c: Cell| -> usize {
        let i = (c[0] - lo[0]) as usize;
        if s.dim == 2 {
            i * w1 + (c[1] - lo[1]) as usize
        } else {
            i
        }
    };
    let total = (hi[0] - lo[0]) as usize * w1;
    let mut claimed = vec![false; total];
    let mut order: Vec<&CellCube> = s.cubes.iter().collect();
    order.sort_by_key(|c| (c.side, **c));
    let mut out = Vec::with_capacity(order.len());
    for q in order {
        let need = (eta * q.volume() as f64 - 1e-9).ceil().max(0.0) as usize;
        let mut cells = Vec::new();
        for c in q.cells() {
            let k = idx(c);
            if !claimed[k] {
                claimed[k] = true;
                cells.push(c);
                if minimal && cells.len() >= need {
                    break;
                }
            }
        }
        if cells.len() < need {
            return Err(*q);
        }
        out.push(Witness { cube: *q, cells });
    }
    out.sort_by_key(|w| w.cube);
    Ok(out)
}

/// Try to certify η-sparseness with explicit witnesses; cross-check Carleson.
pub fn verify_sparse(s: &SparseFamily, eta: f64) -> Result<SparseVerdict> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("eta must lie in (0, 1], got {eta}")));
    }
    let (carleson, _) = carleson_with_argmax(s);
    let (method, witnesses, offending) = match greedy(s, eta, false) {
        Ok(w) => (Certification::Greedy, Some(w), None),
        Err(bad) => match greedy(s, eta, true) {
            Ok(w) => (Certification::GreedyMinimal, Some(w), Some(bad)),
            Err(_) if carleson <= 1.0 / eta + 1e-12 => (Certification::Carleson, None, Some(bad)),
            Err(_) => (Certification::Failed, None, Some(bad)),
        },
    };
    if witnesses.is_some() && carleson > 1.0 / eta + 1e-9 {
        return Err(Error::Structural {
            msg: format!("witnesses found at eta {eta} but Carleson constant {carleson} exceeds 1/eta"),
            part: None,
            cube: None,
        });
    }
    Ok(SparseVerdict { eta, method, carleson, witnesses, offending })
}

/// Attach witnesses from a successful verification.
pub fn certify(s: &SparseFamily, eta: f64) -> Result<SparseFamily> {
    let v = verify_sparse(s, eta)?;
    if !v.certified() {
        return Err(Error::Structural {
            msg: format!("family is not certified {eta}-sparse (Carleson {})", v.carleson),
            part: None,
            cube: v.offending,
        });
    }
    let mut out = s.clone();
    out.eta = Some(eta);
    out.witnesses = v.witnesses;
    Ok(out)
}

/// Split an η-sparse family into `m` parts by nesting depth mod `m`; each
/// part is certified at `m / (m + 1/η - 1)`.
pub fn split_family(s: &SparseFamily, eta: f64, m: usize) -> Result<Vec<SparseFamily>> {
    if m < 2 {
        return Err(Error::Parameter(format!("split needs m >= 2, got {m}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("eta must lie in (0, 1], got {eta}")));
    }
    let target = m as f64 / (m as f64 + 1.0 / eta - 1.0);
    let depths = s.nesting_depths();
    let mut parts: Vec<Vec<CellCube>> = vec![Vec::new(); m];
    for (q, d) in s.cubes.iter().zip(depths) {
        parts[d % m].push(*q);
    }
    let mut out = Vec::with_capacity(m);
    for (j, cubes) in parts.into_iter().enumerate() {
        let mut part = SparseFamily::new(s.dim, cubes)?;
        part.lattice = s.lattice.clone();
        let v = verify_sparse(&part, target)?;
        if !v.certified() {
            return Err(Error::Structural {
                msg: format!("part {j} is not certified {target}-sparse (Carleson {})", v.carleson),
                part: Some(j),
                cube: v.offending,
            });
        }
        part.eta = Some(target);
        part.witnesses = v.witnesses;
        out.push(part);
    }
    Ok(out)
}

/// Augmented family: the union over `Q ∈ S` of the cubes of `F(Q)` not
/// contained in any `R ∈ S` with `R ⊊ Q`. Certified at `η η₀ / (1 + η₀)`.
pub fn augment(s: &SparseFamily, f: &BTreeMap<CellCube, SparseFamily>, eta0: f64, eta: f64) -> Result<SparseFamily> {
    let mut out = Vec::new();
    for q in &s.cubes {
        let fq = f.get(q);
        let cubes: Vec<CellCube> = match fq {
            None => vec![*q],
            Some(fam) => {
                if !fam.contains(q) {
                    return Err(Error::Contract(format!("F({q}) does not contain {q}")));
                }
                if let Some(p) = fam.cubes.iter().find(|p| !q.contains(p)) {
                    return Err(Error::Contract(format!("F({q}) has {p} outside {q}")));
                }
                fam.cubes.clone()
            }
        };
        let smaller: Vec<&CellCube> = s.cubes.iter().filter(|r| *r != q && q.contains(r)).collect();
        out.extend(cubes.into_iter().filter(|p| !smaller.iter().any(|r| r.contains(p))));
    }
    let mut fam = SparseFamily::new(s.dim, out)?;
    fam.lattice = s.lattice.clone();
    let target = eta * eta0 / (1.0 + eta0);
    let v = verify_sparse(&fam, target)?;
    if !v.certified() {
        return Err(Error::Structural {
            msg: format!("augmented family is not certified {target}-sparse (Carleson {})", v.carleson),
            part: None,
            cube: v.offending,
        });
    }
    fam.eta = Some(target);
    fam.witnesses = v.witnesses;
    Ok(fam)
}

/// Layers of a family: layer 0 holds the maximal cubes, layer ν+1 the
/// maximal cubes of what remains.
#[derive(Clone, Debug)]
pub struct LayerDecomposition {
    pub dim: usize,
    pub layers: Vec<Vec<CellCube>>,
    layer_of: BTreeMap<CellCube, usize>,
}

impl LayerDecomposition {
    pub fn layer(&self, q: &CellCube) -> Option<usize> {
        self.layer_of.get(q).copied()
    }

    /// Cubes of layer `nu` inside `q`.
    pub fn inside(&self, q: &CellCube, nu: usize) -> Vec<CellCube> {
        self.layers.get(nu).map_or_else(Vec::new, |l| l.iter().filter(|p| q.contains(p)).copied().collect())
    }

    /// `E_Q`: `Q` minus its next-layer cubes.
    pub fn e_cells(&self, q: &CellCube) -> Vec<Cell> {
        let nu = self.layer(q).expect("member");
        let holes = self.inside(q, nu + 1);
        q.cells().into_iter().filter(|c| !holes.iter().any(|h| h.contains_cell(*c))).collect()
    }

    /// `A_k(Q)`: union of layer `ν + 2^k` cubes inside `Q`.
    pub fn a_cubes(&self, q: &CellCube, k: u32) -> Vec<CellCube> {
        let nu = self.layer(q).expect("member");
        self.inside(q, nu + (1usize << k))
    }

    pub fn a_cells(&self, q: &CellCube, k: u32) -> Vec<Cell> {
        let mut v: Vec<Cell> = self.a_cubes(q, k).iter().flat_map(|c| c.cells()).collect();
        v.sort();
        v
    }
}

pub fn layer_decomposition(f: &SparseFamily) -> LayerDecomposition {
    let cont = f.containers();
    // process larger cubes first so containers are assigned before contents
    let mut order: Vec<usize> = (0..f.cubes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(f.cubes[i].side), f.cubes[i]));
    let mut layer = vec![0usize; f.cubes.len()];
    for &i in &order {
        layer[i] = cont[i].iter().filter(|&&k| k != i).map(|&k| layer[k] + 1).max().unwrap_or(0);
    }
    let depth = layer.iter().copied().max().map_or(0, |m| m + 1);
    let mut layers = vec![Vec::new(); depth];
    let mut layer_of = BTreeMap::new();
    for (i, q) in f.cubes.iter().enumerate() {
        layers[layer[i]].push(*q);
        layer_of.insert(*q, layer[i]);
    }
    LayerDecomposition { dim: f.dim, layers, layer_of }
}
