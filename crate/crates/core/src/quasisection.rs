//! Meeting sets `((C1, C2)) = { h : h^T C1 ∩ C2 != ∅ }` for shell/box sets
//! under block-conformal families, reduced to linear inequalities in the
//! group parameters, and the boundedness test that decides quasi-sections.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{mat_exp, DilationAlgebra, RealMatrix};
use crate::orbit::orbit_dim;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuasiSectionError {
    #[error("family is not block-conformal in the given coordinates: {0}")]
    NotDiagonalizableFamily(String),
    #[error("the meeting set is empty (inequality system infeasible)")]
    InfeasibleSystem,
    #[error("coverage unverified: {uncovered} of {total} sampled points are not in H^T C (e.g. {example:?})")]
    CoverageUnverified { uncovered: usize, total: usize, example: Vec<f64> },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("boxes use different block partitions")]
    PartitionMismatch,
    #[error("linear program failed: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, QuasiSectionError>;

/// `lo <= |v_K| <= hi` for the Euclidean norm of the coordinates `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub coords: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

/// Product of shells over a partition of the coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub shells: Vec<Shell>,
}

impl BoxSet {
    pub fn new(shells: Vec<Shell>) -> Result<Self> {
        let mut seen: Vec<usize> = shells.iter().flat_map(|s| s.coords.iter().copied()).collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(QuasiSectionError::InvalidBox("shell coordinates must partition 0..n".into()));
        }
        for s in &shells {
            if s.coords.is_empty() || !(s.lo >= 0.0) || !(s.hi.is_finite()) || s.hi <= s.lo {
                return Err(QuasiSectionError::InvalidBox(format!("bad bounds [{}, {}]", s.lo, s.hi)));
            }
        }
        if shells.iter().all(|s| s.lo == 0.0) {
            return Err(QuasiSectionError::InvalidBox("no coordinate is bounded away from zero".into()));
        }
        Ok(BoxSet { shells })
    }

    /// Per-coordinate bounds `lo_i <= |v_i| <= hi_i`.
    pub fn coordinate(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::new(bounds.iter().enumerate().map(|(i, &(lo, hi))| Shell { coords: vec![i], lo, hi }).collect())
    }

    /// `C_i(rho)`: `|v_i| <= rho` and `1/rho <= |v_j| <= rho` for `j != i`.
    pub fn c_i(n: usize, i: usize, rho: f64) -> Result<Self> {
        let bounds: Vec<(f64, f64)> = (0..n).map(|j| if j == i { (0.0, rho) } else { (1.0 / rho, rho) }).collect();
        Self::coordinate(&bounds)
    }

    /// `1/rho <= |v_i| <= rho` for all `i`.
    pub fn full(n: usize, rho: f64) -> Result<Self> {
        Self::coordinate(&vec![(1.0 / rho, rho); n])
    }

    pub fn dim(&self) -> usize {
        self.shells.iter().map(|s| s.coords.len()).sum()
    }

    pub fn partition(&self) -> Vec<Vec<usize>> {
        self.shells.iter().map(|s| s.coords.clone()).collect()
    }

    pub fn block_norm(&self, k: usize, v: &[f64]) -> f64 {
        self.shells[k].coords.iter().map(|&c| v[c] * v[c]).sum::<f64>().sqrt()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        self.shells.iter().enumerate().all(|(k, s)| {
            let r = self.block_norm(k, v);
            r >= s.lo && r <= s.hi
        })
    }

    /// Uniformly random radius per shell, random direction inside the block.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for s in &self.shells {
            let r = rng.gen_range(s.lo..=s.hi);
            let dir: Vec<f64> = s.coords.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (&c, x) in s.coords.iter().zip(dir) {
                v[c] = r * x / norm;
            }
        }
        v
    }
}

/// The acting generators restricted to each block are `mu I + skew`, so
/// `|exp(sum t_j M_j) w_K| = exp(mu_K . t) |w_K|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingModel {
    pub blocks: Vec<Vec<usize>>,
    /// `mu[k][j]`: conformal scale of acting generator `j` on block `k`.
    pub mu: Vec<Vec<f64>>,
}

impl ScalingModel {
    pub fn new(alg: &DilationAlgebra, blocks: &[Vec<usize>]) -> Result<Self> {
        let acting = alg.dual_generators();
        let thr = 1e-9 * alg.scale().max(1.0);
        let n = alg.n();
        let mut block_of = vec![usize::MAX; n];
        for (k, b) in blocks.iter().enumerate() {
            for &c in b {
                if c >= n {
                    return Err(QuasiSectionError::InvalidBox(format!("coordinate {c} out of range")));
                }
                block_of[c] = k;
            }
        }
        if block_of.contains(&usize::MAX) {
            return Err(QuasiSectionError::InvalidBox("blocks do not cover every coordinate".into()));
        }
        let mut mu = vec![Vec::with_capacity(acting.len()); blocks.len()];
        for (j, m) in acting.iter().enumerate() {
            for r in 0..n {
                for c in 0..n {
                    if block_of[r] != block_of[c] && m[(r, c)].abs() > thr {
                        return Err(QuasiSectionError::NotDiagonalizableFamily(format!(
                            "generator {j} couples coordinates {r} and {c}"
                        )));
                    }
                }
            }
            for (k, b) in blocks.iter().enumerate() {
                let scale = b.iter().map(|&i| m[(i, i)]).sum::<f64>() / b.len() as f64;
                for &r in b {
                    for &c in b {
                        let sym = 0.5 * (m[(r, c)] + m[(c, r)]) - if r == c { scale } else { 0.0 };
                        if sym.abs() > thr {
                            return Err(QuasiSectionError::NotDiagonalizableFamily(format!(
                                "generator {j} is not conformal on block {b:?}"
                            )));
                        }
                    }
                }
                mu[k].push(scale);
            }
        }
        Ok(ScalingModel { blocks: blocks.to_vec(), mu })
    }

    /// Coordinate blocks joined whenever some generator couples them.
    pub fn finest(alg: &DilationAlgebra) -> Result<Self> {
        let n = alg.n();
        let thr = 1e-9 * alg.scale().max(1.0);
        let mut label: Vec<usize> = (0..n).collect();
        for m in alg.generators() {
            for r in 0..n {
                for c in 0..n {
                    if r != c && m[(r, c)].abs() > thr {
                        let (a, b) = (label[r], label[c]);
                        for l in label.iter_mut() {
                            if *l == b {
                                *l = a;
                            }
                        }
                    }
                }
            }
        }
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut keys: Vec<usize> = Vec::new();
        for (i, &l) in label.iter().enumerate() {
            match keys.iter().position(|&k| k == l) {
                Some(p) => blocks[p].push(i),
                None => {
                    keys.push(l);
                    blocks.push(vec![i]);
                }
            }
        }
        Self::new(alg, &blocks)
    }
}

/// Linear inequalities `rows . t <= rhs` in the group parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInequalitySystem {
    pub d: usize,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub labels: Vec<String>,
}

impl ParamInequalitySystem {
    pub fn contains(&self, t: &[f64], slack: f64) -> bool {
        self.rows.iter().zip(&self.rhs).all(|(r, c)| dot(r, t) <= c + slack)
    }

    fn push(&mut self, row: Vec<f64>, rhs: f64, label: String) {
        self.rows.push(row);
        self.rhs.push(rhs);
        self.labels.push(label);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inequalities describing `{ t : exp(sum t_j X_j)^T C1 ∩ C2 != ∅ }`.
///
/// Shells are independent, so the radius of each block is eliminated on its
/// own: `[lo1, hi1] e^{mu.t}` must meet `[lo2, hi2]`.
pub fn meeting_system(alg: &DilationAlgebra, c1: &BoxSet, c2: &BoxSet) -> Result<ParamInequalitySystem> {
    if c1.partition() != c2.partition() {
        return Err(QuasiSectionError::PartitionMismatch);
    }
    if c1.dim() != alg.n() {
        return Err(QuasiSectionError::InvalidBox(format!("box has dimension {}, family {}", c1.dim(), alg.n())));
    }
    let model = ScalingModel::new(alg, &c1.partition())?;
    let mut sys = ParamInequalitySystem { d: alg.d(), rows: Vec::new(), rhs: Vec::new(), labels: Vec::new() };
    for (k, (s1, s2)) in c1.shells.iter().zip(&c2.shells).enumerate() {
        let mu = &model.mu[k];
        if s2.lo > 0.0 {
            // e^{mu.t} hi1 >= lo2
            sys.push(mu.iter().map(|m| -m).collect(), (s1.hi / s2.lo).ln(), format!("block {k}: lower"));
        }
        if s1.lo > 0.0 {
            // e^{mu.t} lo1 <= hi2
            sys.push(mu.clone(), (s2.hi / s1.lo).ln(), format!("block {k}: upper"));
        }
    }
    Ok(sys)
}

enum LpOutcome {
    Optimal(f64, Vec<f64>),
    Infeasible,
    Unbounded,
}

fn solve_lp(rows: &[Vec<f64>], rhs: &[f64], d: usize, box_bound: Option<f64>, objective: &[f64]) -> Result<LpOutcome> {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let (lo, hi) = match box_bound {
        Some(b) => (-b, b),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let vars: Vec<_> = (0..d).map(|j| p.add_var(objective[j], (lo, hi))).collect();
    for (row, &c) in rows.iter().zip(rhs) {
        if row.iter().all(|&x| x == 0.0) {
            if c < 0.0 {
                return Ok(LpOutcome::Infeasible);
            }
            continue;
        }
        let expr: Vec<_> = vars.iter().zip(row).filter(|(_, &x)| x != 0.0).map(|(&v, &x)| (v, x)).collect();
        p.add_constraint(expr, ComparisonOp::Le, c);
    }
    match p.solve() {
        Ok(sol) => Ok(LpOutcome::Optimal(sol.objective(), vars.iter().map(|&v| *sol.var_value(v)).collect())),
        Err(minilp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(minilp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
    }
}

/// Extent of the polytope `{ t : rows . t <= rhs }`.
#[derive(Debug, Clone, PartialEq)]
pub enum PolytopeBounds {
    Empty,
    Bounded(Vec<(f64, f64)>),
    Unbounded,
}

pub fn polytope_bounds(rows: &[Vec<f64>], rhs: &[f64], d: usize) -> Result<PolytopeBounds> {
    if let LpOutcome::Infeasible = solve_lp(rows, rhs, d, None, &vec![0.0; d])? {
        return Ok(PolytopeBounds::Empty);
    }
    let mut extent = Vec::with_capacity(d);
    for k in 0..d {
        let mut range = [0.0; 2];
        for (slot, sign) in [(1usize, 1.0), (0usize, -1.0)] {
            let mut obj = vec![0.0; d];
            obj[k] = sign;
            match solve_lp(rows, rhs, d, None, &obj)? {
                LpOutcome::Optimal(v, _) => range[slot] = sign * v,
                LpOutcome::Unbounded => return Ok(PolytopeBounds::Unbounded),
                LpOutcome::Infeasible => return Ok(PolytopeBounds::Empty),
            }
        }
        extent.push((range[0], range[1]));
    }
    Ok(PolytopeBounds::Bounded(extent))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundedness {
    pub bounded: bool,
    /// Nonzero `u` with `L u <= 0` when unbounded.
    pub witness: Option<Vec<f64>>,
    /// Per-parameter extent of the meeting set when bounded.
    pub bounding_box: Option<Vec<(f64, f64)>>,
}

/// Relative compactness of `{ t : L t <= c }`: bounded iff the recession cone
/// `{ u : L u <= 0 }` is trivial, decided by `2d` LPs over `|u|_inf <= 1`.
pub fn is_relatively_compact(sys: &ParamInequalitySystem) -> Result<Boundedness> {
    let d = sys.d;
    if let LpOutcome::Infeasible = solve_lp(&sys.rows, &sys.rhs, d, None, &vec![0.0; d])? {
        return Err(QuasiSectionError::InfeasibleSystem);
    }
    let zeros = vec![0.0; sys.rows.len()];
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut obj = vec![0.0; d];
            obj[k] = sign;
            if let LpOutcome::Optimal(value, u) = solve_lp(&sys.rows, &zeros, d, Some(1.0), &obj)? {
                if value > 1e-9 {
                    let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    let u: Vec<f64> = u.iter().map(|x| x / scale).collect();
                    let valid = sys.rows.iter().all(|r| dot(r, &u) <= 1e-9);
                    if valid {
                        return Ok(Boundedness { bounded: false, witness: Some(u), bounding_box: None });
                    }
                }
            }
        }
    }
    let extent = match polytope_bounds(&sys.rows, &sys.rhs, d)? {
        PolytopeBounds::Bounded(e) => e,
        _ => return Err(QuasiSectionError::Lp("bounded system produced a non-optimal extent LP".into())),
    };
    Ok(Boundedness { bounded: true, witness: None, bounding_box: Some(extent) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingSetDescription {
    pub first: usize,
    pub second: usize,
    pub system: ParamInequalitySystem,
    /// `None` when the meeting set is empty.
    pub boundedness: Option<Boundedness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UDescription {
    /// Seeded Gaussian samples filtered to the top orbit stratum.
    TopStratum { samples: usize, seed: u64 },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuasiSectionStatus {
    Exists,
    DoesNotExist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiSectionReport {
    pub status: QuasiSectionStatus,
    pub pairs: Vec<MeetingSetDescription>,
    pub sampled: usize,
    pub covered: usize,
}

/// Whether `xi` lies in `H^T C` for the box `c`: an LP feasibility test in
/// the parameters.
pub fn covers(model: &ScalingModel, c: &BoxSet, xi: &[f64]) -> Result<bool> {
    let d = model.mu.first().map_or(0, |m| m.len());
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (k, s) in c.shells.iter().enumerate() {
        let r = c.block_norm(k, xi);
        if r <= 1e-300 {
            if s.lo > 0.0 {
                return Ok(false);
            }
            continue;
        }
        rows.push(model.mu[k].clone());
        rhs.push((s.hi / r).ln());
        if s.lo > 0.0 {
            rows.push(model.mu[k].iter().map(|m| -m).collect());
            rhs.push(-(s.lo / r).ln());
        }
    }
    Ok(!matches!(solve_lp(&rows, &rhs, d, None, &vec![0.0; d])?, LpOutcome::Infeasible))
}

/// Quasi-section decision for a union of boxes `C`.
///
/// Any unbounded pair `((C_i, C_j))` of compact subsets of `U` rules out a
/// quasi-section for `U` altogether. If every pair is bounded the verdict
/// additionally needs `H^T C = U`, which is checked on samples of `U`.
pub fn quasi_section_verdict(alg: &DilationAlgebra, boxes: &[BoxSet], u: &UDescription) -> Result<QuasiSectionReport> {
    let mut pairs = Vec::new();
    let mut unbounded = false;
    for i in 0..boxes.len() {
        for j in 0..boxes.len() {
            let system = meeting_system(alg, &boxes[i], &boxes[j])?;
            let boundedness = match is_relatively_compact(&system) {
                Ok(b) => Some(b),
                Err(QuasiSectionError::InfeasibleSystem) => None,
                Err(e) => return Err(e),
            };
            unbounded |= boundedness.as_ref().is_some_and(|b| !b.bounded);
            pairs.push(MeetingSetDescription { first: i, second: j, system, boundedness });
        }
    }
    if unbounded {
        return Ok(QuasiSectionReport { status: QuasiSectionStatus::DoesNotExist, pairs, sampled: 0, covered: 0 });
    }
    let points = match u {
        UDescription::Points { points } => points.clone(),
        UDescription::TopStratum { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..*samples)
                .map(|_| (0..alg.n()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>())
                .filter(|p| orbit_dim(alg, p) == alg.d())
                .collect()
        }
    };
    let models: Vec<ScalingModel> =
        boxes.iter().map(|b| ScalingModel::new(alg, &b.partition())).collect::<Result<_>>()?;
    let mut covered = 0;
    let mut example = None;
    for p in &points {
        let mut hit = false;
        for (b, m) in boxes.iter().zip(&models) {
            if covers(m, b, p)? {
                hit = true;
                break;
            }
        }
        if hit {
            covered += 1;
        } else if example.is_none() {
            example = Some(p.clone());
        }
    }
    if let Some(example) = example {
        return Err(QuasiSectionError::CoverageUnverified { uncovered: points.len() - covered, total: points.len(), example });
    }
    Ok(QuasiSectionReport { status: QuasiSectionStatus::Exists, pairs, sampled: points.len(), covered })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Largest parameter radius at which a meeting was observed.
    pub max_hit_radius: f64,
    pub likely_unbounded: bool,
    /// Always true: sampling cannot prove boundedness.
    pub numerical: bool,
}

/// Sampling probe for families without a conformal block model: tests
/// `h^T v ∈ C2` for random `v ∈ C1` over a parameter grid on `[-radius, radius]^d`.
/// Hits beyond `0.8 radius` flag the meeting set as likely unbounded.
pub fn probe_meeting_set(
    alg: &DilationAlgebra,
    c1: &BoxSet,
    c2: &BoxSet,
    radius: f64,
    steps: usize,
    samples: usize,
    seed: u64,
) -> ProbeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<DVector<f64>> = (0..samples).map(|_| DVector::from_vec(c1.sample(&mut rng))).collect();
    let d = alg.d();
    let total = (2 * steps + 1).pow(d as u32);
    let acting: Vec<RealMatrix> = alg.dual_generators();
    let mut max_hit: f64 = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        let t: Vec<f64> = (0..d)
            .map(|_| {
                let k = rem % (2 * steps + 1);
                rem /= 2 * steps + 1;
                radius * (k as f64 - steps as f64) / steps as f64
            })
            .collect();
        let r = t.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if r <= max_hit {
            continue;
        }
        let mut log = RealMatrix::zeros(alg.n(), alg.n());
        for (tj, m) in t.iter().zip(&acting) {
            log += m * *tj;
        }
        let Ok(h) = mat_exp(&log, 1.0) else { continue };
        if points.iter().any(|v| c2.contains((&h * v).as_slice())) {
            max_hit = r;
        }
    }
    ProbeReport { max_hit_radius: max_hit, likely_unbounded: max_hit > 0.8 * radius, numerical: true }
}
