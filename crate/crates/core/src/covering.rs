//! Constructive ε-nets over `{Θ ∈ R^{d1×d2} : rank(Θ) ≤ r, ‖Θ‖_F ≤ 1}`.
//!
//! The factor construction mirrors the covering argument for low-rank matrices:
//! every target `Θ = Σ_i s_i u_i v_iᵀ` is approximated by `Σ_i s̄_i ū_i v̄_iᵀ` where the
//! `ū_i`, `v̄_i` come from nets of the unit spheres and `s̄` from a grid of the
//! non-negative, non-increasing part of the unit ball. With per-column sphere
//! resolution `a` and singular-value resolution `g` the composed error is at most
//! `a + g + (1 + a·sqrt(r))·a` (and `g + sqrt(2)·a` for rank one).
//!
//! Sphere nets are grids on the faces of the cube `[-1, 1]^d` pushed radially onto
//! the sphere. Radial projection onto the unit ball is 1-Lipschitz outside the
//! ball, so a face grid of half-diagonal `a` yields a chordal net of radius `a`.
//!
//! When the factor product would exceed the element cap, [`NetStrategy::Auto`]
//! falls back to a greedy separated subset of seeded random rank-`r` draws. That
//! net covers its sample pool exactly and the rest of the set statistically.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::rng_for;

/// Bumped whenever the construction changes, so stale caches are not reused.
pub const GRID_VERSION: u32 = 1;
pub const DEFAULT_NET_CAP: usize = 500_000;
const DEFAULT_POOL: usize = 100_000;
const GREEDY_SEPARATION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetStrategy {
    /// Sphere-net × singular-value-grid product with a deterministic covering radius.
    FactorGrid,
    /// Greedy `0.8·eps`-separated subset of `pool` seeded rank-`r` draws.
    Greedy { pool: usize, seed: u64 },
    /// Factor grid when it fits under the cap, greedy otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub cap: usize,
    pub strategy: NetStrategy,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            cap: DEFAULT_NET_CAP,
            strategy: NetStrategy::Auto,
        }
    }
}

/// Finite set of rank-≤r matrices with `‖·‖_F ≤ 1`, stored as packed column-major vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankNet {
    eps: f64,
    d1: usize,
    d2: usize,
    rank: usize,
    strategy: NetStrategy,
    data: Vec<f64>,
}

impl LowRankNet {
    /// Wraps explicit elements. Elements must share the shape and have rank ≤ `rank`.
    pub fn from_elements(eps: f64, rank: usize, elements: &[DMatrix<f64>]) -> Result<Self> {
        let first = elements.first().ok_or(Error::EmptyNet)?;
        let (d1, d2) = first.shape();
        let mut data = Vec::with_capacity(elements.len() * d1 * d2);
        for e in elements {
            if e.shape() != (d1, d2) {
                return Err(Error::DimensionMismatch {
                    expected: (d1, d2),
                    found: e.shape(),
                });
            }
            data.extend_from_slice(e.as_slice());
        }
        Ok(LowRankNet {
            eps,
            d1,
            d2,
            rank,
            strategy: NetStrategy::FactorGrid,
            data,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn strategy(&self) -> NetStrategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.d1 * self.d2)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Packed `vec(Θ_i)` of element `i`.
    pub fn element_vec(&self, i: usize) -> &[f64] {
        let p = self.d1 * self.d2;
        &self.data[i * p..(i + 1) * p]
    }

    pub fn element(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d1, self.d2, self.element_vec(i))
    }

    /// All elements back to back, each as `vec(Θ_i)`.
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_vecs(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d1 * self.d2)
    }

    /// `⟨Θ_i, X⟩` for every element, written into `out`.
    pub fn predictions_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.iter_vecs()
                .map(|e| e.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()),
        );
    }

    /// Name under which this net is cached on disk.
    pub fn cache_key(d1: usize, d2: usize, r: usize, eps: f64, strategy: NetStrategy) -> String {
        let tag = match strategy {
            NetStrategy::FactorGrid => "factor".to_string(),
            NetStrategy::Greedy { pool, seed } => format!("greedy-p{pool}-s{seed}"),
            NetStrategy::Auto => "auto".to_string(),
        };
        format!("net-{d1}x{d2}-r{r}-eps{eps}-{tag}-v{GRID_VERSION}.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Theoretical size bound `(9/eps)^{(d1+d2+1) r}`; `+inf` when it overflows.
pub fn net_size_bound(d1: usize, d2: usize, r: usize, eps: f64) -> f64 {
    log_net_size_bound(d1, d2, r, eps).exp()
}

pub fn log_net_size_bound(d1: usize, d2: usize, r: usize, eps: f64) -> f64 {
    ((d1 + d2 + 1) * r) as f64 * (9.0 / eps).ln()
}

/// Builds a net with the default cap and [`NetStrategy::Auto`].
pub fn build_net(d1: usize, d2: usize, r: usize, eps: f64) -> Result<LowRankNet> {
    build_net_with(d1, d2, r, eps, &NetConfig::default())
}

pub fn build_net_with(
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
    config: &NetConfig,
) -> Result<LowRankNet> {
    if !(eps > 0.0 && eps <= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "eps {eps} must lie in (0, 2]"
        )));
    }
    if d1 == 0 || d2 == 0 || r == 0 || r > d1.min(d2) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={}",
            d1.min(d2)
        )));
    }
    match config.strategy {
        NetStrategy::FactorGrid => {
            let plan = FactorPlan::new(d1, d2, r, eps);
            let size = plan.size();
            if size > config.cap as f64 {
                return Err(Error::NetCapExceeded {
                    estimated: size,
                    cap: config.cap,
                });
            }
            Ok(plan.build())
        }
        NetStrategy::Greedy { pool, seed } => greedy_net(d1, d2, r, eps, pool, seed, config.cap),
        NetStrategy::Auto => {
            let plan = FactorPlan::new(d1, d2, r, eps);
            if plan.size() <= config.cap as f64 {
                Ok(plan.build())
            } else {
                greedy_net(d1, d2, r, eps, DEFAULT_POOL, 0, config.cap)
            }
        }
    }
}

/// Factor-grid element count without building anything.
pub fn factor_grid_size(d1: usize, d2: usize, r: usize, eps: f64) -> f64 {
    FactorPlan::new(d1, d2, r, eps).size()
}

/// Loads the net from `cache_dir` when present, otherwise builds and stores it.
pub fn load_or_build(
    cache_dir: &Path,
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
    config: &NetConfig,
) -> Result<LowRankNet> {
    let path: PathBuf = cache_dir.join(LowRankNet::cache_key(d1, d2, r, eps, config.strategy));
    if path.exists() {
        let net = LowRankNet::load(&path)?;
        if net.dims() == (d1, d2) && net.rank() == r && net.eps() == eps && net.len() <= config.cap
        {
            return Ok(net);
        }
    }
    let net = build_net_with(d1, d2, r, eps, config)?;
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    net.save(&path)?;
    Ok(net)
}

/// `min_i ‖target − Θ_i‖_F`.
pub fn nearest_distance(net: &LowRankNet, target: &DMatrix<f64>) -> Result<f64> {
    if net.is_empty() {
        return Err(Error::EmptyNet);
    }
    if target.shape() != net.dims() {
        return Err(Error::DimensionMismatch {
            expected: net.dims(),
            found: target.shape(),
        });
    }
    Ok(nearest_sq(net.iter_vecs(), target.as_slice()).sqrt())
}

fn nearest_sq<'a>(elements: impl Iterator<Item = &'a [f64]>, x: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for e in elements {
        let mut d = 0.0;
        for (a, b) in e.iter().zip(x) {
            let t = a - b;
            d += t * t;
            if d >= best {
                break;
            }
        }
        if d < best {
            best = d;
        }
    }
    best
}

/// Random rank-≤r matrix of unit Frobenius norm (`G₁ G₂ᵀ`, normalized).
pub fn sample_low_rank_unit<R: Rng + ?Sized>(
    d1: usize,
    d2: usize,
    r: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(d1, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(d2, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = a * b.transpose();
        let n = m.norm();
        if n > 0.0 {
            return m / n;
        }
    }
}

struct FactorPlan {
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
    sphere_res: f64,
    sv_res: f64,
}

impl FactorPlan {
    fn new(d1: usize, d2: usize, r: usize, eps: f64) -> Self {
        // 30% of the budget on singular values, the rest on the two sphere factors.
        let sv_res = 0.3 * eps;
        let rest = eps - sv_res;
        let sphere_res = if r == 1 {
            rest / std::f64::consts::SQRT_2
        } else {
            // a + (1 + a·sqrt(r))·a = rest
            let sr = (r as f64).sqrt();
            (-2.0 + (4.0 + 4.0 * sr * rest).sqrt()) / (2.0 * sr)
        };
        FactorPlan {
            d1,
            d2,
            r,
            eps,
            sphere_res,
            sv_res,
        }
    }

    fn size(&self) -> f64 {
        let nu = sphere_net_size(self.d1, self.sphere_res, true);
        let nv = sphere_net_size(self.d2, self.sphere_res, false);
        let ns = singular_value_grid_size(self.r, self.sv_res);
        (nu * nv).powi(self.r as i32) * ns
    }

    fn build(&self) -> LowRankNet {
        let us = sphere_net(self.d1, self.sphere_res, true);
        let vs = sphere_net(self.d2, self.sphere_res, false);
        let sigmas = singular_value_grid(self.r, self.sv_res);
        let p = self.d1 * self.d2;
        let mut data = Vec::with_capacity(self.size() as usize * p);
        let pairs: Vec<(usize, usize)> = (0..us.len())
            .flat_map(|i| (0..vs.len()).map(move |j| (i, j)))
            .collect();
        // outer products ū v̄ᵀ for every column choice
        let outer: Vec<DMatrix<f64>> = pairs
            .iter()
            .map(|&(i, j)| &us[i] * vs[j].transpose())
            .collect();
        let mut idx = vec![0usize; self.r];
        loop {
            for s in &sigmas {
                let mut m = DMatrix::<f64>::zeros(self.d1, self.d2);
                for (c, &k) in idx.iter().enumerate() {
                    m += &outer[k] * s[c];
                }
                let n = m.norm();
                if n > 1.0 {
                    m /= n;
                }
                data.extend_from_slice(m.as_slice());
            }
            // odometer over r column choices
            let mut pos = 0;
            loop {
                if pos == self.r {
                    return LowRankNet {
                        eps: self.eps,
                        d1: self.d1,
                        d2: self.d2,
                        rank: self.r,
                        strategy: NetStrategy::FactorGrid,
                        data,
                    };
                }
                idx[pos] += 1;
                if idx[pos] < outer.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }
}

fn face_cells(d: usize, res: f64) -> usize {
    if d == 1 {
        1
    } else {
        ((d as f64 - 1.0).sqrt() / res).ceil().max(1.0) as usize
    }
}

fn sphere_net_size(d: usize, res: f64, projective: bool) -> f64 {
    let faces = if projective { d } else { 2 * d };
    faces as f64 * (face_cells(d, res) as f64).powi(d as i32 - 1)
}

/// Chordal `res`-net of the unit sphere in `R^d`. With `projective`, only points with a
/// positive dominant coordinate are kept, which covers the sphere up to sign.
pub fn sphere_net(d: usize, res: f64, projective: bool) -> Vec<DVector<f64>> {
    let n = face_cells(d, res);
    let centers: Vec<f64> = (0..n)
        .map(|k| -1.0 + (2 * k + 1) as f64 / n as f64)
        .collect();
    let signs: &[f64] = if projective { &[1.0] } else { &[1.0, -1.0] };
    let mut out = Vec::with_capacity(sphere_net_size(d, res, projective) as usize);
    for axis in 0..d {
        for &sign in signs {
            let free = d - 1;
            let mut idx = vec![0usize; free];
            loop {
                let mut p = DVector::zeros(d);
                let mut f = 0;
                for c in 0..d {
                    if c == axis {
                        p[c] = sign;
                    } else {
                        p[c] = centers[idx[f]];
                        f += 1;
                    }
                }
                let norm = p.norm();
                out.push(p / norm);
                let mut pos = 0;
                while pos < free {
                    idx[pos] += 1;
                    if idx[pos] < n {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == free {
                    break;
                }
            }
        }
    }
    out
}

/// Element count of [`singular_value_grid`], or an upper estimate when enumerating
/// would be too slow.
fn singular_value_grid_size(r: usize, res: f64) -> f64 {
    let m = ((r as f64).sqrt() / (2.0 * res)).ceil().max(1.0);
    if m.powi(r as i32) <= 1e6 {
        singular_value_grid(r, res).len() as f64
    } else {
        m.powi(r as i32)
    }
}

/// Non-increasing, non-negative vectors in the unit ball of `R^r`, cell-centred on a grid
/// whose cells have half-diagonal at most `res`; centres outside the ball are projected.
pub fn singular_value_grid(r: usize, res: f64) -> Vec<Vec<f64>> {
    let m = ((r as f64).sqrt() / (2.0 * res)).ceil().max(1.0) as usize;
    let h = 1.0 / m as f64;
    let mut out = Vec::new();
    let mut idx = vec![0usize; r];
    loop {
        let non_increasing = idx.windows(2).all(|w| w[0] >= w[1]);
        let lower_sq: f64 = idx.iter().map(|&k| (k as f64 * h).powi(2)).sum();
        if non_increasing && lower_sq <= 1.0 {
            let mut c: Vec<f64> = idx.iter().map(|&k| (k as f64 + 0.5) * h).collect();
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1.0 {
                c.iter_mut().for_each(|x| *x /= n);
            }
            out.push(c);
        }
        let mut pos = 0;
        while pos < r {
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == r {
            return out;
        }
    }
}

fn greedy_net(
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
    pool: usize,
    seed: u64,
    cap: usize,
) -> Result<LowRankNet> {
    let mut rng = rng_for(seed, 17);
    let p = d1 * d2;
    let sep_sq = (GREEDY_SEPARATION * eps).powi(2);
    let dim = (r * (d1 + d2 - r)) as f64;
    let mut data: Vec<f64> = Vec::new();
    // the zero matrix first, then radially uniform draws
    let mut candidate = DMatrix::zeros(d1, d2);
    for i in 0..=pool {
        if i > 0 {
            let radius: f64 = rng.random::<f64>().powf(1.0 / dim);
            candidate = sample_low_rank_unit(d1, d2, r, &mut rng) * radius;
        }
        let x = candidate.as_slice();
        if nearest_sq(data.chunks_exact(p), x) > sep_sq {
            data.extend_from_slice(x);
            if data.len() / p > cap {
                return Err(Error::NetCapExceeded {
                    estimated: (data.len() / p) as f64 * pool as f64 / (i + 1) as f64,
                    cap,
                });
            }
        }
    }
    Ok(LowRankNet {
        eps,
        d1,
        d2,
        rank: r,
        strategy: NetStrategy::Greedy { pool, seed },
        data,
    })
}
