//! Scenario configs, seeded data generators and the inequality checks they run.
//!
//! A scenario is a small key=value file:
//!
//! ```text
//! [scenario]
//! name = demo
//! seed = 7
//!
//! [grid]
//! dim = 1
//! lo = 0
//! hi = 1
//! cells = 256
//!
//! [check fs_power]
//! kind = fs
//! w = power alpha=-0.5
//! f = blobs count=3
//! ceiling = 100
//! ```
//!
//! Generators are `name key=value ...`; random parameters are drawn from a
//! stream seeded by the scenario seed and the check id, so doubling `cells`
//! samples the same continuum function.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::czo::{commutator, CZKernel};
use crate::domination::{build_commutator_domination, build_oscillation_family, build_t_domination, sparse_apply, Variant};
use crate::grid::{three_lattice_shifts, CellCube, DyadicLattice, GridFunction};
use crate::orlicz::{c_phi, composed_constant_check, hardy_littlewood, orlicz_level_set, orlicz_maximal, CubeMode, YoungFunction};
use crate::report::{digest, CheckReport, Sample, SCHEMA_VERSION};
use crate::rng::Lcg;
use crate::sparse::{carleson_constant, verify_sparse, SparseFamily};
use crate::weights::{a1_constant, ainf_constant, ap_constant, bmo_norm, distribution, weighted_bmo_norm, CubeSet, Weight};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// generators

const SHAPES: &[(&str, &[(&str, f64)])] = &[
    ("zero", &[]),
    ("const", &[("value", 1.0)]),
    ("indicator", &[("lo", 0.25), ("hi", 0.75), ("value", 1.0)]),
    ("sign", &[("at", 0.5)]),
    ("log", &[("center", 0.5), ("floor", 1e-6), ("coef", 1.0)]),
    ("power", &[("alpha", -0.5), ("center", 0.5), ("floor", 1e-9)]),
    ("steps", &[("pieces", 8.0), ("lo", 0.0), ("hi", 1.0), ("min", 0.5), ("max", 2.0), ("outside", 0.0)]),
    ("jumps", &[("count", 4.0), ("lo", 0.0), ("hi", 1.0), ("amp", 1.0), ("width", 0.0), ("log", 0.0), ("floor", 1e-3)]),
    ("blobs", &[("count", 3.0), ("lo", 0.25), ("hi", 0.75), ("max", 1.0), ("base", 0.0), ("signed", 0.0)]),
    ("noise", &[("lo", 0.0), ("hi", 1.0), ("min", -1.0), ("max", 1.0)]),
    ("spike", &[("at", 0.5), ("value", 1.0)]),
    ("sine", &[("freq", 1.0), ("lo", 0.0), ("hi", 1.0)]),
];

/// A parametric function on the grid's continuum box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Generator {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl Generator {
    pub fn parse(text: &str) -> std::result::Result<Generator, String> {
        let mut words = text.split_whitespace();
        let name = words.next().ok_or("empty generator")?.to_string();
        let (_, defaults) = SHAPES.iter().find(|(n, _)| *n == name).ok_or_else(|| format!("unknown generator `{name}`"))?;
        let mut params: BTreeMap<String, f64> = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, got `{w}`"))?;
            if !params.contains_key(k) {
                return Err(format!("generator `{name}` has no parameter `{k}`"));
            }
            let v: f64 = v.parse().map_err(|_| format!("bad number `{v}` for `{k}`"))?;
            if !v.is_finite() {
                return Err(format!("parameter `{k}` must be finite"));
            }
            params.insert(k.to_string(), v);
        }
        Ok(Generator { name, params })
    }

    pub fn param(&self, k: &str) -> f64 {
        self.params[k]
    }

    pub fn describe(&self) -> String {
        let mut s = self.name.clone();
        for (k, v) in &self.params {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }

    /// Sample on `grid`; random parameters come from `rng`.
    pub fn sample(&self, grid: &GridSpec, rng: &mut Lcg) -> Result<GridFunction> {
        let p = |k: &str| self.param(k);
        let dim = grid.dim;
        let inside = |x: &[f64], lo: f64, hi: f64| x.iter().all(|&t| t >= lo && t < hi);
        let dist = |x: &[f64], c: f64| x.iter().map(|t| (t - c) * (t - c)).sum::<f64>().sqrt();
        match self.name.as_str() {
            "zero" => grid.sample(|_| 0.0),
            "const" => grid.sample(|_| p("value")),
            "indicator" => grid.sample(|x| if inside(x, p("lo"), p("hi")) { p("value") } else { 0.0 }),
            "sign" => grid.sample(|x| if x[0] < p("at") { -1.0 } else { 1.0 }),
            "log" => grid.sample(|x| p("coef") * dist(x, p("center")).max(p("floor")).ln()),
            "power" => grid.sample(|x| dist(x, p("center")).max(p("floor")).powf(p("alpha"))),
            "steps" => {
                let k = (p("pieces") as usize).max(1);
                let levels: Vec<f64> = (0..k.pow(dim as u32)).map(|_| rng.range(p("min"), p("max"))).collect();
                let (lo, hi) = (p("lo"), p("hi"));
                grid.sample(|x| {
                    if !inside(x, lo, hi) {
                        return p("outside");
                    }
                    let idx = |t: f64| (((t - lo) / (hi - lo) * k as f64) as usize).min(k - 1);
                    let j = if dim == 1 { idx(x[0]) } else { idx(x[0]) * k + idx(x[1]) };
                    levels[j]
                })
            }
            "jumps" => {
                let n = p("count").max(0.0) as usize;
                let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.range(p("lo"), p("hi")), rng.range(-p("amp"), p("amp")))).collect();
                let c: Vec<f64> = (0..dim).map(|_| rng.range(p("lo"), p("hi"))).collect();
                grid.sample(|x| {
                    // a jump of width 0, or a linear ramp of the given width
                    let w = p("width");
                    let j: f64 = pts.iter().map(|(t, a)| a * if w > 0.0 { ((x[0] - t) / w + 0.5).clamp(0.0, 1.0) } else if x[0] >= *t { 1.0 } else { 0.0 }).sum();
                    let r = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    j + p("log") * r.max(p("floor")).ln()
                })
            }
            "blobs" => {
                let n = p("count").max(0.0) as usize;
                let (lo, hi) = (p("lo"), p("hi"));
                let w = hi - lo;
                let blobs: Vec<(Vec<f64>, f64, f64)> = (0..n)
                    .map(|_| {
                        let side = rng.range(w / 20.0, w / 4.0);
                        let anchor: Vec<f64> = (0..dim).map(|_| rng.range(lo, hi - side)).collect();
                        let mut v = rng.range(0.1 * p("max"), p("max"));
                        if p("signed") != 0.0 && rng.uniform() < 0.5 {
                            v = -v;
                        }
                        (anchor, side, v)
                    })
                    .collect();
                grid.sample(|x| {
                    p("base")
                        + blobs
                            .iter()
                            .filter(|(a, s, _)| x.iter().zip(a).all(|(t, a)| *t >= *a && *t < a + s))
                            .map(|(_, _, v)| v)
                            .sum::<f64>()
                })
            }
            "noise" => {
                let t = grid.template()?;
                let (lo, hi) = (p("lo"), p("hi"));
                let vals = (0..t.len())
                    .map(|i| {
                        let m = t.midpoint(i);
                        let v = rng.range(p("min"), p("max"));
                        if inside(&m[..dim], lo, hi) {
                            v
                        } else {
                            0.0
                        }
                    })
                    .collect();
                t.with_values(vals)
            }
            "spike" => {
                let t = grid.template()?;
                let h = t.h();
                let cell = ((p("at") - grid.lo) / h).floor() as i64;
                let c = [cell, if dim == 2 { cell } else { 0 }];
                let mut vals = vec![0.0; t.len()];
                let i = t.index(c).ok_or_else(|| Error::Parameter(format!("spike at {} is outside the box", p("at"))))?;
                vals[i] = p("value");
                t.with_values(vals)
            }
            "sine" => grid.sample(|x| if inside(x, p("lo"), p("hi")) { (2.0 * std::f64::consts::PI * p("freq") * x[0]).sin() } else { 0.0 }),
            other => Err(Error::Parameter(format!("unknown generator `{other}`"))),
        }
    }
}

/// Grid geometry: `cells` per axis covering `[lo, hi)^dim`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(dim: usize, lo: f64, hi: f64, cells: usize) -> Self {
        GridSpec { dim, lo, hi, cells }
    }

    pub fn with_cells(&self, cells: usize) -> Self {
        GridSpec { cells, ..self.clone() }
    }

    pub fn sample(&self, g: impl Fn(&[f64]) -> f64) -> Result<GridFunction> {
        GridFunction::sample(self.dim, self.lo, self.hi, self.cells, g)
    }

    pub fn template(&self) -> Result<GridFunction> {
        self.sample(|_| 0.0)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.dim != 1 && self.dim != 2 {
            return Err(format!("dim must be 1 or 2, got {}", self.dim));
        }
        if !(self.hi > self.lo) || self.cells == 0 {
            return Err("grid needs hi > lo and cells > 0".into());
        }
        Ok(())
    }
}

/// Deterministic seed for a named stream of a check.
pub fn stream_seed(seed: u64, id: &str, tag: &str) -> u64 {
    let d = digest(&[&seed.to_string(), id, tag]);
    u64::from_str_radix(&d[..16], 16).expect("hex digest")
}

/// A random dyadic family on a power-of-two box: each cube picks a depth
/// `d ∈ {1, ..., max_depth}` and keeps at most `frac·2^{dn}` of its depth-`d`
/// descendants, so every member is `1 − frac` sparse.
pub fn random_sparse_family(f: &GridFunction, frac: f64, min_side: i64, max_depth: u32, rng: &mut Lcg) -> Result<SparseFamily> {
    let n = f.cells()[0];
    if !n.is_power_of_two() || f.cells().iter().any(|&c| c != n) {
        return Err(Error::Parameter("random sparse families need a power-of-two square box".into()));
    }
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Parameter(format!("fraction must lie in [0, 1), got {frac}")));
    }
    let dim = f.dim();
    let top = CellCube::new(dim, [0, 0], n as i64);
    let mut out = vec![top];
    let mut stack = vec![top];
    while let Some(q) = stack.pop() {
        if q.side < 2 * min_side.max(1) {
            continue;
        }
        let max_d = (q.side / min_side.max(1)).trailing_zeros().min(max_depth.max(1)) as u64;
        let d = 1 + rng.below(max_d) as u32;
        let s = q.side >> d;
        let per = 1usize << d;
        let mut subs: Vec<CellCube> = Vec::new();
        for i in 0..per {
            for j in 0..if dim == 2 { per } else { 1 } {
                subs.push(CellCube::new(dim, [q.lo[0] + i as i64 * s, q.lo[1] + j as i64 * s], s));
            }
        }
        let cap = (frac * subs.len() as f64).floor() as u64;
        let keep = rng.below(cap + 1) as usize;
        for t in 0..keep {
            let r = t + rng.below((subs.len() - t) as u64) as usize;
            subs.swap(t, r);
            out.push(subs[t]);
            stack.push(subs[t]);
        }
    }
    let lat = DyadicLattice::standard(f, n.trailing_zeros());
    let mut s = SparseFamily::on_lattice(&lat, out)?;
    s.eta = Some(1.0 - frac);
    Ok(s)
}

// ---------------------------------------------------------------------------
// inequality checks

/// `count` log-spaced levels spanning `decades` below `top`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaGrid {
    pub count: usize,
    pub decades: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { count: 13, decades: 2.0 }
    }
}

impl LambdaGrid {
    pub fn levels(&self, top: f64) -> Vec<f64> {
        if !(top > 0.0) {
            return Vec::new();
        }
        (1..=self.count).map(|i| top * 10f64.powf(-self.decades * i as f64 / self.count as f64)).collect()
    }
}

/// Cube family for maximal operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MaxMode {
    /// Every grid-aligned cube in the box.
    All,
    /// The `3ⁿ` shifted triple lattices.
    Lattices,
}

impl MaxMode {
    fn parse(s: &str) -> std::result::Result<MaxMode, String> {
        match s {
            "all" => Ok(MaxMode::All),
            "lattice" | "lattices" => Ok(MaxMode::Lattices),
            o => Err(format!("unknown maximal mode `{o}`")),
        }
    }
}

fn with_mode<R>(f: &GridFunction, mode: MaxMode, body: impl FnOnce(CubeMode<'_>) -> R) -> R {
    match mode {
        MaxMode::All => body(CubeMode::AllCubes),
        MaxMode::Lattices => {
            let n = f.cells().iter().copied().max().unwrap_or(1);
            let g = (usize::BITS - (n - 1).leading_zeros()).max(1);
            let shifts = three_lattice_shifts(&DyadicLattice::standard(f, g));
            body(CubeMode::Lattices(&shifts))
        }
    }
}

fn integral(f: &GridFunction) -> f64 {
    f.values().iter().sum::<f64>() * f.cell_volume()
}

fn lp_norm(f: &GridFunction, w: &Weight, p: f64) -> f64 {
    (f.values().iter().zip(w.values()).map(|(v, wv)| v.abs().powf(p) * wv).sum::<f64>() * f.cell_volume()).powf(1.0 / p)
}

/// `λ w{Mf > λ} ≤ c ∫|f| Mw`.
pub fn check_fs(id: &str, w: &Weight, f: &GridFunction, lambdas: LambdaGrid, mode: MaxMode, ceiling: Option<f64>) -> Result<CheckReport> {
    f.check_same_grid(w.grid())?;
    let (mf, mw) = with_mode(f, mode, |m| (hardy_littlewood(f, m), hardy_littlewood(w.grid(), m)));
    let rhs = integral(&f.abs().zip(&mw, |a, b| a * b)?);
    let top = mf.values().iter().copied().fold(0.0, f64::max);
    let mut r = CheckReport::new(id, "fs", digest(&["fs", id])).with_ceiling(ceiling);
    for l in lambdas.levels(top) {
        r.push(Sample::new(l, l * distribution(w, &mf, l)?, rhs));
    }
    Ok(r.finish())
}

/// `w{M_Φ f > λ} ≤ 3ⁿ ∫ Φ(9ⁿ|f|/λ) Mw`.
pub fn check_orlicz_fs(id: &str, phi: &YoungFunction, w: &Weight, f: &GridFunction, lambdas: LambdaGrid, mode: MaxMode, ceiling: Option<f64>) -> Result<CheckReport> {
    f.check_same_grid(w.grid())?;
    let n = f.dim() as i32;
    let (c3, c9) = (3f64.powi(n), 9f64.powi(n));
    let mw = with_mode(f, mode, |m| hardy_littlewood(w.grid(), m));
    let top = f.values().iter().map(|v| v.abs()).fold(0.0, f64::max) / phi.inverse(1.0);
    let mut r = CheckReport::new(id, "orlicz_fs", digest(&["orlicz_fs", id, &phi.to_string()])).with_ceiling(ceiling);
    let mut plain: f64 = 0.0;
    for l in lambdas.levels(top) {
        let set = with_mode(f, mode, |m| orlicz_level_set(f, phi, l, m));
        let lhs: f64 = set.iter().zip(w.values()).filter(|(s, _)| **s).map(|(_, v)| v).sum::<f64>() * f.cell_volume();
        let weighted = |a: f64| f.values().iter().zip(mw.values()).map(|(v, m)| phi.eval(a * v.abs() / l) * m).sum::<f64>() * f.cell_volume();
        plain = plain.max(crate::report::ratio(lhs, weighted(1.0)));
        r.push(Sample::new(l, lhs, c3 * weighted(c9)));
    }
    if *phi == YoungFunction::LLogL {
        // Φ(at) ≤ a(1 + log a)Φ(t) for a ≥ 1 turns the literal form into c_n∫Φ(|f|/λ)Mw
        r.extra("llogl_constant", c3 * c9 * (1.0 + c9.ln()));
        r.extra("llogl_empirical", plain);
    }
    Ok(r.finish())
}

/// Data of a weighted commutator estimate.
#[derive(Clone, Debug)]
pub struct CommCase {
    pub kernel: CZKernel,
    pub b: GridFunction,
    pub f: GridFunction,
    pub w: Weight,
}

impl CommCase {
    fn check(&self) -> Result<()> {
        self.b.check_same_grid(&self.f)?;
        self.f.check_same_grid(self.w.grid())
    }
}

fn bmo_cubes(f: &GridFunction) -> CubeSet {
    cubes_up_to(f, 4096)
}

/// All in-box cubes up to `limit` cells, dyadic cubes beyond.
fn cubes_up_to(f: &GridFunction, limit: usize) -> CubeSet {
    if f.len() <= limit {
        CubeSet::AllInBox
    } else {
        let n = f.cells()[0].max(1);
        CubeSet::Lattice(DyadicLattice::standard(f, usize::BITS - 1 - n.leading_zeros()))
    }
}

/// `w{|[b,T]f| > λ} ≤ c C_T C_φ ∫ Φ(‖b‖|f|/λ) M_{Φ∘φ(L)} w`.
pub fn check_weakcomm(id: &str, case: &CommCase, phi: &YoungFunction, lambdas: LambdaGrid, mode: MaxMode, ceiling: Option<f64>) -> Result<CheckReport> {
    case.check()?;
    let CommCase { kernel, b, f, w } = case;
    let llogl = YoungFunction::LLogL;
    let bmo = bmo_norm(b, &bmo_cubes(b))?.value;
    let comm = commutator(kernel, b, f)?;
    let composed = YoungFunction::compose_llogl(phi.clone());
    let m = with_mode(f, mode, |md| orlicz_maximal(w.grid(), &composed, md));
    let cp = c_phi(phi)?;
    let scale = kernel.c_t() * cp;
    let top = comm.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut r = CheckReport::new(id, "weakcomm", digest(&["weakcomm", id, &phi.to_string(), &kernel.name()])).with_ceiling(ceiling);
    for l in lambdas.levels(top) {
        let lhs = distribution(w, &comm, l)?;
        let rhs = scale * f.values().iter().zip(m.values()).map(|(v, mv)| llogl.eval(bmo * v.abs() / l) * mv).sum::<f64>() * f.cell_volume();
        r.push(Sample::new(l, lhs, rhs));
    }
    r.extra("bmo", bmo);
    r.extra("c_phi", cp);
    r.extra("c_t", kernel.c_t());
    Ok(r.finish())
}

/// `w{|[b,T]f| > λ} ≤ c [w]_{A1} Φ([w]_{A∞}) ∫ Φ(‖b‖|f|/λ) w`, with the
/// intermediate constants of the argument recorded as extras.
pub fn check_cor15(id: &str, case: &CommCase, lambdas: LambdaGrid, mode: MaxMode, ceiling: Option<f64>) -> Result<CheckReport> {
    case.check()?;
    let CommCase { kernel, b, f, w } = case;
    let llogl = YoungFunction::LLogL;
    let bmo = bmo_norm(b, &bmo_cubes(b))?.value;
    let a1 = a1_constant(w).value;
    // each A∞ cube costs a local maximal function
    let ainf = ainf_constant(w, &cubes_up_to(w.grid(), 256))?.value;
    let comm = commutator(kernel, b, f)?;
    let scale = a1 * llogl.eval(ainf);
    let top = comm.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut r = CheckReport::new(id, "cor15", digest(&["cor15", id, &kernel.name()])).with_ceiling(ceiling);
    for l in lambdas.levels(top) {
        let lhs = distribution(w, &comm, l)?;
        let rhs = scale * f.values().iter().zip(w.values()).map(|(v, wv)| llogl.eval(bmo * v.abs() / l) * wv).sum::<f64>() * f.cell_volume();
        r.push(Sample::new(l, lhs, rhs));
    }
    // largest r ∈ (1, 2] on a bisection with M_{L^r} w ≤ 2Mw everywhere
    let eps = 1.0 / (std::f64::consts::E + ainf).ln();
    let rr = with_mode(f, mode, |md| {
        let mw = hardy_littlewood(w.grid(), md);
        let ok = |rr: f64| {
            let mr = orlicz_maximal(w.grid(), &YoungFunction::power(rr), md);
            mr.values().iter().zip(mw.values()).all(|(a, b)| *a <= 2.0 * b * (1.0 + 1e-12))
        };
        let (mut lo, mut hi) = (1.0, 2.0);
        if ok(hi) {
            lo = hi;
        } else {
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        lo
    });
    r.extra("a1", a1);
    r.extra("ainf", ainf);
    r.extra("bmo", bmo);
    r.extra("eps", eps);
    r.extra("calibrated_r", rr);
    if rr > 1.0 {
        r.extra("calibrated_cn", 1.0 / ((rr - 1.0) * ainf));
        let alpha = (rr - 1.0) / (1.0 + eps);
        let phi_e = YoungFunction::LogPower(1.0 + eps);
        let (me, mpow) = with_mode(f, mode, |md| {
            (orlicz_maximal(w.grid(), &phi_e, md), orlicz_maximal(w.grid(), &YoungFunction::power(1.0 + (1.0 + eps) * alpha), md))
        });
        let c = me.values().iter().zip(mpow.values()).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).fold(0.0, f64::max);
        r.extra("log_step_constant", c * alpha.powf(1.0 + eps));
    } else {
        r.notes.push("no r > 1 with M_{L^r} w ≤ 2Mw on this grid".into());
    }
    Ok(r.finish())
}

/// Two-weight bound `‖[b,T]f‖_{L^p(λ)} ≤ c ([μ]_{A_p}[λ]_{A_p})^{max(1, 1/(p−1))} ‖b‖_{BMO_ν} ‖f‖_{L^p(μ)}`
/// with `ν = (μ/λ)^{1/p}`; one sample per test function.
pub fn check_bloom(id: &str, kernel: &CZKernel, p: f64, mu: &Weight, lam: &Weight, b: &GridFunction, fs: &[GridFunction], ceiling: Option<f64>) -> Result<CheckReport> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    mu.grid().check_same_grid(lam.grid())?;
    b.check_same_grid(mu.grid())?;
    let nu = Weight::new(mu.grid().zip(lam.grid(), |m, l| (m / l).powf(1.0 / p))?)?;
    let cubes = bmo_cubes(b);
    let bmo_nu = weighted_bmo_norm(b, &nu, &cubes)?.value;
    let amu = ap_constant(mu, p, &cubes)?.value;
    let alam = ap_constant(lam, p, &cubes)?.value;
    let e = 1f64.max(1.0 / (p - 1.0));
    let scale = (amu * alam).powf(e) * bmo_nu;
    let mut r = CheckReport::new(id, "bloom", digest(&["bloom", id, &kernel.name(), &p.to_string()])).with_ceiling(ceiling);
    for (i, f) in fs.iter().enumerate() {
        f.check_same_grid(b)?;
        let lhs = lp_norm(&commutator(kernel, b, f)?, lam, p);
        r.push(Sample::new(i as f64, lhs, scale * lp_norm(f, mu, p)));
    }
    r.extra("ap_mu", amu);
    r.extra("ap_lambda", alam);
    r.extra("bmo_nu", bmo_nu);
    r.extra("exponent", e);
    Ok(r.finish())
}

/// `‖A_S f‖_{L^p(w)} ≤ c [w]_{A_p}^{max(1, 1/(p−1))} ‖f‖_{L^p(w)}`, over the
/// given functions and `σχ_Q` for the largest cubes of `S`.
pub fn check_asp(id: &str, s: &SparseFamily, w: &Weight, p: f64, fs: &[GridFunction], ceiling: Option<f64>) -> Result<CheckReport> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    let sigma = w.dual(p)?;
    let a = ap_constant(w, p, &CubeSet::AllInBox)?.value;
    let e = 1f64.max(1.0 / (p - 1.0));
    let mut tests: Vec<GridFunction> = fs.to_vec();
    let mut big: Vec<&CellCube> = s.cubes().iter().collect();
    big.sort_by_key(|q| std::cmp::Reverse(q.side));
    for q in big.into_iter().take(4) {
        let idx = sigma.grid().indices_in(q);
        let mut v = vec![0.0; sigma.grid().len()];
        for i in idx {
            v[i] = sigma.values()[i];
        }
        tests.push(sigma.grid().with_values(v)?);
    }
    let mut r = CheckReport::new(id, "asp", digest(&["asp", id, &p.to_string()])).with_ceiling(ceiling);
    for (i, f) in tests.iter().enumerate() {
        f.check_same_grid(w.grid())?;
        let af = sparse_apply(s, &f.abs(), Variant::Plain)?;
        r.push(Sample::new(i as f64, lp_norm(&af, w, p), a.powf(e) * lp_norm(f, w, p)));
    }
    r.extra("ap", a);
    r.extra("exponent", e);
    Ok(r.finish())
}

/// Builds the sparse domination and reports the empirical constant at its argmax.
pub fn check_domination(id: &str, kernel: &CZKernel, f: &GridFunction, b: Option<&GridFunction>, ceiling: Option<f64>) -> Result<CheckReport> {
    let d = match b {
        Some(b) => build_commutator_domination(kernel, b, f)?,
        None => build_t_domination(kernel, f)?,
    };
    let mut r = CheckReport::new(id, "domination", digest(&["domination", id, &kernel.name()])).with_ceiling(ceiling);
    let at = d.argmax.and_then(|c| f.index(c));
    let (lhs, rhs) = at.map(|i| (d.lhs[i], d.rhs[i])).unwrap_or((0.0, 0.0));
    r.push(Sample::new(at.map(|i| i as f64).unwrap_or(0.0), lhs, rhs));
    let carleson = d.carleson.iter().copied().fold(0.0, f64::max);
    r.extra("carleson", carleson);
    r.extra("max_depth", d.max_depth as f64);
    r.extra("cubes", d.cubes.len() as f64);
    r.extra("empirical_alpha", d.empirical_alpha);
    let limit = 1.0 / d.eta;
    if carleson > limit * (1.0 + 1e-12) {
        r.fail(format!("Carleson constant {carleson} exceeds {limit}"));
    }
    Ok(r.finish())
}

/// Builds the oscillation family; the sample is the worst certified ratio.
pub fn check_oscillation(id: &str, b: &GridFunction, s: &SparseFamily, gamma: f64, ceiling: Option<f64>) -> Result<CheckReport> {
    let o = build_oscillation_family(b, s, gamma)?;
    let mut r = CheckReport::new(id, "oscillation", digest(&["oscillation", id, &gamma.to_string()])).with_ceiling(ceiling);
    r.push(Sample::new(gamma, o.certificate.max_ratio, 1.0));
    r.extra("eta", o.certificate.eta);
    r.extra("constant", o.certificate.constant);
    r.extra("family_size", o.family.len() as f64);
    Ok(r.finish())
}

// ---------------------------------------------------------------------------
// scenario configs

/// A parsed check.
#[derive(Clone, Debug)]
pub enum CheckKind {
    Fs { w: Generator, f: Generator, lambdas: LambdaGrid, maximal: MaxMode },
    OrliczFs { phi: YoungFunction, w: Generator, f: Generator, lambdas: LambdaGrid, maximal: MaxMode },
    WeakComm { kernel: CZKernel, phi: YoungFunction, b: Generator, f: Generator, w: Generator, lambdas: LambdaGrid, maximal: MaxMode },
    Cor15 { kernel: CZKernel, b: Generator, f: Generator, w: Generator, lambdas: LambdaGrid, maximal: MaxMode },
    Bloom { kernel: CZKernel, p: f64, mu: Generator, lam: Generator, b: Generator, fs: Vec<Generator> },
    Asp { p: f64, w: Generator, fs: Vec<Generator>, frac: f64 },
    Domination { kernel: CZKernel, f: Generator, b: Option<Generator> },
    Oscillation { b: Generator, frac: f64, gamma: f64 },
    Constants { phi: YoungFunction },
}

#[derive(Clone, Debug)]
pub struct CheckSpec {
    pub id: String,
    pub line: usize,
    pub kind: CheckKind,
    pub ceiling: Option<f64>,
    /// Overrides the scenario grid resolution.
    pub cells: Option<usize>,
    /// Canonical text of the raw parameters, for digests.
    pub canonical: String,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub grid: GridSpec,
    pub json_out: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
    pub checks: Vec<CheckSpec>,
}

struct Params {
    line: usize,
    map: BTreeMap<String, (String, usize)>,
}

impl Params {
    fn err(line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { line, msg: msg.into() }
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn opt<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => parse(&v).map(Some).map_err(|m| Params::err(line, format!("`{key}`: {m}"))),
        }
    }

    fn req<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        let line = self.line;
        self.opt(key, parse)?.ok_or_else(|| Params::err(line, format!("missing `{key}`")))
    }

    fn done(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((k, (_, line))) => Err(Params::err(line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn num(s: &str) -> std::result::Result<f64, String> {
    s.trim().parse::<f64>().map_err(|_| format!("bad number `{s}`"))
}

fn kernel(s: &str) -> std::result::Result<CZKernel, String> {
    CZKernel::by_name(s.trim()).map_err(|e| e.to_string())
}

fn young(s: &str) -> std::result::Result<YoungFunction, String> {
    YoungFunction::parse(s).map_err(|e| match e {
        Error::Parse { msg, .. } => msg,
        o => o.to_string(),
    })
}

fn generator_list(s: &str) -> std::result::Result<Vec<Generator>, String> {
    s.split(';').map(|g| Generator::parse(g.trim())).collect()
}

fn lambda_grid(s: &str) -> std::result::Result<LambdaGrid, String> {
    let v: Vec<&str> = s.split_whitespace().collect();
    match v.as_slice() {
        [c, d] => {
            let count: usize = c.parse().map_err(|_| format!("bad count `{c}`"))?;
            let decades = num(d)?;
            if count == 0 || !(decades > 0.0) {
                return Err("need count > 0 and decades > 0".into());
            }
            Ok(LambdaGrid { count, decades })
        }
        _ => Err("expected `count decades`".into()),
    }
}

fn build_check(id: String, line: usize, mut p: Params) -> Result<CheckSpec> {
    let canonical = p.map.iter().map(|(k, (v, _))| format!("{k}={v}")).collect::<Vec<_>>().join("\n");
    let kind_name = p.req("kind", |s| Ok(s.trim().to_string()))?;
    let ceiling = p.opt("ceiling", num)?;
    let cells = p.opt("cells", |s| s.trim().parse::<usize>().map_err(|_| format!("bad cell count `{s}`")))?;
    let gen = Generator::parse;
    let lambdas = |p: &mut Params| -> Result<LambdaGrid> { Ok(p.opt("lambdas", lambda_grid)?.unwrap_or_default()) };
    let maximal = |p: &mut Params| -> Result<MaxMode> { Ok(p.opt("maximal", MaxMode::parse)?.unwrap_or(MaxMode::Lattices)) };
    let kind = match kind_name.as_str() {
        "fs" => CheckKind::Fs { w: p.req("w", gen)?, f: p.req("f", gen)?, lambdas: lambdas(&mut p)?, maximal: maximal(&mut p)? },
        "orlicz_fs" => CheckKind::OrliczFs {
            phi: p.opt("phi", young)?.unwrap_or(YoungFunction::LLogL),
            w: p.req("w", gen)?,
            f: p.req("f", gen)?,
            lambdas: lambdas(&mut p)?,
            maximal: maximal(&mut p)?,
        },
        "weakcomm" => CheckKind::WeakComm {
            kernel: p.req("kernel", kernel)?,
            phi: p.req("phi", young)?,
            b: p.req("b", gen)?,
            f: p.req("f", gen)?,
            w: p.req("w", gen)?,
            lambdas: lambdas(&mut p)?,
            maximal: maximal(&mut p)?,
        },
        "cor15" => CheckKind::Cor15 {
            kernel: p.req("kernel", kernel)?,
            b: p.req("b", gen)?,
            f: p.req("f", gen)?,
            w: p.req("w", gen)?,
            lambdas: lambdas(&mut p)?,
            maximal: maximal(&mut p)?,
        },
        "bloom" => CheckKind::Bloom {
            kernel: p.req("kernel", kernel)?,
            p: p.req("p", num)?,
            mu: p.req("mu", gen)?,
            lam: p.req("lambda", gen)?,
            b: p.req("b", gen)?,
            fs: p.req("f", generator_list)?,
        },
        "asp" => CheckKind::Asp {
            p: p.req("p", num)?,
            w: p.req("w", gen)?,
            fs: p.req("f", generator_list)?,
            frac: p.opt("frac", num)?.unwrap_or(0.5),
        },
        "domination" => CheckKind::Domination { kernel: p.req("kernel", kernel)?, f: p.req("f", gen)?, b: p.opt("b", gen)? },
        "oscillation" => CheckKind::Oscillation {
            b: p.req("b", gen)?,
            frac: p.opt("frac", num)?.unwrap_or(0.5),
            gamma: p.opt("gamma", num)?.unwrap_or(0.5),
        },
        "constants" => CheckKind::Constants { phi: p.req("phi", young)? },
        other => return Err(Params::err(line, format!("unknown check kind `{other}`"))),
    };
    p.done()?;
    Ok(CheckSpec { id, line, kind, ceiling, cells, canonical })
}

struct Section {
    header: String,
    line: usize,
    params: Params,
}

fn assemble(name_line: usize, sections: Vec<Section>) -> Result<Scenario> {
    let mut name = None;
    let mut seed = 0u64;
    let mut json_out = None;
    let mut csv_out = None;
    let mut grid = None;
    let mut checks: Vec<CheckSpec> = Vec::new();
    for Section { header, line, mut params } in sections {
        if header == "scenario" {
            name = params.opt("name", |s| Ok(s.trim().to_string()))?;
            seed = params.opt("seed", |s| s.trim().parse::<u64>().map_err(|_| format!("bad seed `{s}`")))?.unwrap_or(0);
            json_out = params.opt("json_out", |s| Ok(PathBuf::from(s.trim())))?;
            csv_out = params.opt("csv_out", |s| Ok(PathBuf::from(s.trim())))?;
            params.done()?;
        } else if header == "grid" {
            let int = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad integer `{s}`"));
            let g = GridSpec {
                dim: params.opt("dim", int)?.unwrap_or(1),
                lo: params.opt("lo", num)?.unwrap_or(0.0),
                hi: params.opt("hi", num)?.unwrap_or(1.0),
                cells: params.req("cells", int)?,
            };
            g.validate().map_err(|m| Params::err(line, m))?;
            params.done()?;
            grid = Some(g);
        } else if let Some(id) = header.strip_prefix("check ") {
            let id = id.trim().to_string();
            if id.is_empty() || checks.iter().any(|c| c.id == id) {
                return Err(Params::err(line, format!("missing or duplicate check id `{id}`")));
            }
            checks.push(build_check(id, line, params)?);
        } else {
            return Err(Params::err(line, format!("unknown section `[{header}]`")));
        }
    }
    let grid = grid.ok_or_else(|| Params::err(name_line, "missing [grid] section"))?;
    Ok(Scenario { name: name.unwrap_or_else(|| "scenario".into()), seed, grid, json_out, csv_out, checks })
}

impl Scenario {
    /// Parse the key=value form. Lines are `[section]`, `key = value`, blank
    /// or `#` comments.
    pub fn parse(text: &str) -> Result<Scenario> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.split('#').next().unwrap_or("").trim();
            if t.is_empty() {
                continue;
            }
            if let Some(h) = t.strip_prefix('[') {
                let h = h.strip_suffix(']').ok_or_else(|| Params::err(line, "unterminated section header"))?;
                sections.push(Section { header: h.trim().to_string(), line, params: Params { line, map: BTreeMap::new() } });
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| Params::err(line, format!("expected key = value, got `{t}`")))?;
            let s = sections.last_mut().ok_or_else(|| Params::err(line, "key outside any section"))?;
            let k = k.trim().to_string();
            if s.params.map.insert(k.clone(), (v.trim().to_string(), line)).is_some() {
                return Err(Params::err(line, format!("duplicate key `{k}`")));
            }
        }
        assemble(1, sections)
    }

    /// JSON form: `{"scenario": {...}, "grid": {...}, "checks": [{"id": ..., "kind": ..., ...}]}`
    /// with scalar values; errors report line 0.
    pub fn parse_json(text: &str) -> Result<Scenario> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Params::err(e.line(), e.to_string()))?;
        let obj = |v: &serde_json::Value| -> Result<BTreeMap<String, (String, usize)>> {
            let o = v.as_object().ok_or_else(|| Params::err(0, "expected an object"))?;
            o.iter()
                .map(|(k, v)| {
                    let s = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Number(n) => n.to_string(),
                        serde_json::Value::Bool(b) => b.to_string(),
                        _ => return Err(Params::err(0, format!("`{k}` must be a scalar"))),
                    };
                    Ok((k.clone(), (s, 0)))
                })
                .collect()
        };
        let mut sections = Vec::new();
        for h in ["scenario", "grid"] {
            if let Some(s) = v.get(h) {
                sections.push(Section { header: h.into(), line: 0, params: Params { line: 0, map: obj(s)? } });
            }
        }
        for c in v.get("checks").and_then(|c| c.as_array()).into_iter().flatten() {
            let mut map = obj(c)?;
            let (id, _) = map.remove("id").ok_or_else(|| Params::err(0, "check without `id`"))?;
            sections.push(Section { header: format!("check {id}"), line: 0, params: Params { line: 0, map } });
        }
        assemble(0, sections)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::parse_json(&text)
        } else {
            Scenario::parse(&text)
        }
    }
}

fn run_check(sc: &Scenario, c: &CheckSpec) -> Result<CheckReport> {
    let grid = c.cells.map(|n| sc.grid.with_cells(n)).unwrap_or_else(|| sc.grid.clone());
    let mut tag = 0u64;
    let mut draw = |g: &Generator| -> Result<GridFunction> {
        tag += 1;
        let mut rng = Lcg::new(stream_seed(sc.seed, &c.id, &tag.to_string()));
        g.sample(&grid, &mut rng)
    };
    let weight = |f: GridFunction| Weight::new(f);
    let mut report = match &c.kind {
        CheckKind::Fs { w, f, lambdas, maximal } => {
            let (w, f) = (weight(draw(w)?)?, draw(f)?);
            check_fs(&c.id, &w, &f, *lambdas, *maximal, c.ceiling)?
        }
        CheckKind::OrliczFs { phi, w, f, lambdas, maximal } => {
            let (w, f) = (weight(draw(w)?)?, draw(f)?);
            check_orlicz_fs(&c.id, phi, &w, &f, *lambdas, *maximal, c.ceiling)?
        }
        CheckKind::WeakComm { kernel, phi, b, f, w, lambdas, maximal } => {
            let case = CommCase { kernel: kernel.clone(), b: draw(b)?, f: draw(f)?, w: weight(draw(w)?)? };
            check_weakcomm(&c.id, &case, phi, *lambdas, *maximal, c.ceiling)?
        }
        CheckKind::Cor15 { kernel, b, f, w, lambdas, maximal } => {
            let case = CommCase { kernel: kernel.clone(), b: draw(b)?, f: draw(f)?, w: weight(draw(w)?)? };
            check_cor15(&c.id, &case, *lambdas, *maximal, c.ceiling)?
        }
        CheckKind::Bloom { kernel, p, mu, lam, b, fs } => {
            let (mu, lam, b) = (weight(draw(mu)?)?, weight(draw(lam)?)?, draw(b)?);
            let fs = fs.iter().map(&mut draw).collect::<Result<Vec<_>>>()?;
            check_bloom(&c.id, kernel, *p, &mu, &lam, &b, &fs, c.ceiling)?
        }
        CheckKind::Asp { p, w, fs, frac } => {
            let w = weight(draw(w)?)?;
            let fs = fs.iter().map(&mut draw).collect::<Result<Vec<_>>>()?;
            let mut rng = Lcg::new(stream_seed(sc.seed, &c.id, "family"));
            let s = random_sparse_family(w.grid(), *frac, 1, 3, &mut rng)?;
            check_asp(&c.id, &s, &w, *p, &fs, c.ceiling)?
        }
        CheckKind::Domination { kernel, f, b } => {
            let f = draw(f)?;
            let b = b.as_ref().map(&mut draw).transpose()?;
            check_domination(&c.id, kernel, &f, b.as_ref(), c.ceiling)?
        }
        CheckKind::Oscillation { b, frac, gamma } => {
            let b = draw(b)?;
            let mut rng = Lcg::new(stream_seed(sc.seed, &c.id, "family"));
            let s = random_sparse_family(&b, *frac, 1, 3, &mut rng)?;
            if !verify_sparse(&s, *gamma)?.certified() {
                return Err(Error::Hypothesis(format!("random family is not {gamma}-sparse (Carleson {})", carleson_constant(&s))));
            }
            check_oscillation(&c.id, &b, &s, *gamma, c.ceiling.or(Some(1.0)))?
        }
        CheckKind::Constants { phi } => {
            let mut r = composed_constant_check(phi, c.ceiling)?;
            r.id = c.id.clone();
            r
        }
    };
    report.digest = digest(&[&report.digest, &c.canonical, &sc.seed.to_string(), &format!("{:?}", grid)]);
    Ok(report)
}

/// Result of a scenario run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub reports: Vec<CheckReport>,
    /// Checks that raised an error rather than producing samples.
    pub errored: Vec<String>,
}

impl Outcome {
    pub fn failing(&self) -> Vec<&str> {
        self.reports.iter().filter(|r| !r.passed).map(|r| r.id.as_str()).collect()
    }

    /// 0 all passed, 1 some ceiling exceeded, 2 a check errored.
    pub fn exit_code(&self) -> i32 {
        if !self.errored.is_empty() {
            2
        } else if self.reports.iter().any(|r| !r.passed) {
            1
        } else {
            0
        }
    }
}

pub fn run_scenario(sc: &Scenario) -> Outcome {
    let mut reports = Vec::new();
    let mut errored = Vec::new();
    for c in &sc.checks {
        let t = Instant::now();
        let mut r = match run_check(sc, c) {
            Ok(r) => r,
            Err(e) => {
                errored.push(c.id.clone());
                let mut r = CheckReport::new(c.id.clone(), "error", digest(&["error", &c.id]));
                r.fail(format!("error: {e}"));
                r
            }
        };
        r.runtime_ms = t.elapsed().as_secs_f64() * 1e3;
        reports.push(r);
    }
    reports.sort_by(|a, b| a.id.cmp(&b.id));
    Outcome { reports, errored }
}

#[derive(Serialize)]
struct Document<'a> {
    schema_version: u32,
    scenario: &'a str,
    seed: u64,
    reports: &'a [CheckReport],
}

/// Pretty JSON of a run; deterministic for a fixed scenario.
pub fn outcome_json(sc: &Scenario, o: &Outcome) -> String {
    let doc = Document { schema_version: SCHEMA_VERSION, scenario: &sc.name, seed: sc.seed, reports: &o.reports };
    serde_json::to_string_pretty(&doc).expect("reports serialize")
}

/// One row per sample: `id,param,lhs,rhs,ratio`.
pub fn outcome_csv(o: &Outcome) -> String {
    let mut s = String::from("id,param,lhs,rhs,ratio\n");
    for r in &o.reports {
        for x in &r.samples {
            s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.id, x.param, x.lhs, x.rhs, x.ratio));
        }
    }
    s
}
