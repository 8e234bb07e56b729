//! Shared builders and independent oracle implementations for the
//! integration and acceptance suites. Everything here deliberately avoids
//! the production solver paths it is used to check.
//!
//! Each test binary compiles its own copy and uses a subset.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use pqlgei_core::data::{standardize_genotypes, Coefficients, Dataset, Family};
use pqlgei_core::kinship::{build_kd, compute_grm, KinshipPair};
use pqlgei_core::solver::GroupStats;
use pqlgei_core::varcomp::NullModel;

/// Hardy-Weinberg genotype matrix with polymorphic columns.
pub fn hwe_genotypes(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, p);
    for j in 0..p {
        let freq = rng.random_range(0.1..0.5);
        loop {
            let mut sum = 0.0;
            for i in 0..n {
                let mut dose = 0.0;
                for _ in 0..2 {
                    if rng.random_range(0.0..1.0) < freq {
                        dose += 1.0;
                    }
                }
                g[(i, j)] = dose;
                sum += dose;
            }
            if sum > 0.0 && sum < 2.0 * n as f64 {
                break;
            }
        }
    }
    g
}

/// Test instance: standardized design genotypes, binary exposure, kinship
/// from a disjoint HWE panel, and a response with mild fixed effects.
pub struct Instance {
    pub ds: Dataset,
    pub kin: KinshipPair,
}

pub fn make_instance(n: usize, p: usize, family: Family, seed: u64) -> Instance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = standardize_genotypes(&hwe_genotypes(n, p, &mut rng), None)
        .unwrap()
        .matrix;
    let z = DMatrix::from_fn(n, 2, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    let d = DVector::from_fn(n, |_, _| if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { 0.0 });
    let panel = standardize_genotypes(&hwe_genotypes(n, 2 * n + 40, &mut rng), None)
        .unwrap()
        .matrix;
    let k = compute_grm(&panel).unwrap();
    let (kd, _) = build_kd(&k, &d, None).unwrap();
    let kin = KinshipPair::new(k, kd, panel.ncols(), pqlgei_core::kinship::ExposureKind::Binary);

    let y = match family {
        Family::Binomial => DVector::from_fn(n, |i, _| {
            let eta: f64 = 0.2 + 0.4 * z[(i, 1)] - 0.3 * d[i] + 0.5 * g[(i, 0)] - 0.4 * g[(i, 1)];
            let pr = 1.0 / (1.0 + (-eta).exp());
            if rng.random_range(0.0..1.0) < pr {
                1.0
            } else {
                0.0
            }
        }),
        Family::Gaussian => DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.2 + 0.4 * z[(i, 1)] - 0.3 * d[i] + 0.5 * g[(i, 0)] - 0.4 * g[(i, 1)] + e
        }),
    };
    let ds = Dataset::new(
        y,
        z,
        d,
        g,
        (0..n).map(|i| format!("s{i}")).collect(),
        (0..p).map(|j| format!("v{j}")).collect(),
    )
    .unwrap();
    Instance { ds, kin }
}

/// Null model with pinned variance components (bypasses AI-REML).
pub fn fixed_null(family: Family, m: usize, tau_g: f64, tau_d: f64, phi: f64) -> NullModel {
    NullModel {
        family,
        tau_g,
        tau_d,
        phi,
        theta0: DVector::zeros(m),
        alpha0: 0.0,
        converged: true,
        iterations: 0,
        trace: Vec::new(),
    }
}

/// Golden-section minimizer of a unimodal 1-D function on [a, b].
pub fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Surrogate group objective (up to an additive constant):
/// h(b, g) = 1/2 (sg b^2 + sdg g^2) + c0 b g - a0 b - b0 g
///           + lam1 ||(b, g)||_2 + lam2 |g|.
pub fn group_objective(stats: &GroupStats, lam1: f64, lam2: f64, b: f64, g: f64) -> f64 {
    0.5 * stats.sg * b * b + 0.5 * stats.sdg * g * g + stats.c0 * b * g
        - stats.a0 * b
        - stats.b0 * g
        + lam1 * b.hypot(g)
        + lam2 * g.abs()
}

/// Brute-force minimizer of the group objective: coarse grid, then
/// alternating exact 1-D (golden) coordinate minimization. The non-smooth
/// parts are axis-aligned away from the origin, so coordinate minimization
/// converges for this convex 2-D objective; the origin is checked explicitly.
pub fn brute_force_group(stats: &GroupStats, lam1: f64, lam2: f64) -> (f64, f64) {
    let r = (stats.a0.abs() + stats.b0.abs()) / stats.sg.min(stats.sdg).max(1e-3) + 1.0;
    let steps = 160;
    let (mut best_b, mut best_g, mut best) = (0.0, 0.0, group_objective(stats, lam1, lam2, 0.0, 0.0));
    for ib in 0..=steps {
        let b = -r + 2.0 * r * ib as f64 / steps as f64;
        for ig in 0..=steps {
            let g = -r + 2.0 * r * ig as f64 / steps as f64;
            let v = group_objective(stats, lam1, lam2, b, g);
            if v < best {
                best = v;
                best_b = b;
                best_g = g;
            }
        }
    }
    let (mut b, mut g) = (best_b, best_g);
    for _ in 0..400 {
        let gb = g;
        let fb = |bb: f64| group_objective(stats, lam1, lam2, bb, gb);
        let nb = golden_min(&fb, b - 1.0, b + 1.0, 1e-13);
        let bb = nb;
        let fg = |gg: f64| group_objective(stats, lam1, lam2, bb, gg);
        let ng = golden_min(&fg, g - 1.0, g + 1.0, 1e-13);
        // Snap to the |gamma| kink when the 1-D minimum straddles it.
        let ng = if group_objective(stats, lam1, lam2, bb, 0.0) <= group_objective(stats, lam1, lam2, bb, ng)
        {
            0.0
        } else {
            ng
        };
        let moved = (nb - b).abs().max((ng - g).abs());
        b = nb;
        g = ng;
        if moved < 1e-14 {
            break;
        }
    }
    // Accelerated proximal-gradient polish handles the group-norm kink at
    // the origin, where coordinate search can stall. The prox of
    // lam2|gamma| + lam1||(beta,gamma)|| is the soft-threshold on gamma
    // followed by the group shrink.
    let half_tr = 0.5 * (stats.sg + stats.sdg);
    let disc = (0.25 * (stats.sg - stats.sdg) * (stats.sg - stats.sdg)
        + stats.c0 * stats.c0)
        .sqrt();
    let lipschitz = (half_tr + disc).max(1e-8);
    let step = 1.0 / lipschitz;
    let prox = |bb: f64, gg: f64| -> (f64, f64) {
        let gs = {
            let t = lam2 * step;
            if gg > t {
                gg - t
            } else if gg < -t {
                gg + t
            } else {
                0.0
            }
        };
        let norm = bb.hypot(gs);
        let t = lam1 * step;
        if norm <= t {
            (0.0, 0.0)
        } else {
            let scale = 1.0 - t / norm;
            (bb * scale, gs * scale)
        }
    };
    for start in [(0.0, 0.0), (best_b, best_g), (b, g)] {
        let (mut pb, mut pg) = start;
        let (mut yb, mut yg) = (pb, pg);
        let mut t_acc: f64 = 1.0;
        for _ in 0..300_000 {
            let grad_b = stats.sg * yb + stats.c0 * yg - stats.a0;
            let grad_g = stats.c0 * yb + stats.sdg * yg - stats.b0;
            let (nb, ng) = prox(yb - step * grad_b, yg - step * grad_g);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            let mom = (t_acc - 1.0) / t_next;
            yb = nb + mom * (nb - pb);
            yg = ng + mom * (ng - pg);
            let moved = (nb - pb).abs().max((ng - pg).abs());
            pb = nb;
            pg = ng;
            t_acc = t_next;
            if moved < 1e-15 {
                break;
            }
        }
        if group_objective(stats, lam1, lam2, pb, pg) < group_objective(stats, lam1, lam2, b, g) {
            b = pb;
            g = pg;
        }
    }
    if group_objective(stats, lam1, lam2, 0.0, 0.0) <= group_objective(stats, lam1, lam2, b, g) {
        (0.0, 0.0)
    } else {
        (b, g)
    }
}

/// Restricted log-likelihood via explicit dense inverses (oracle for the
/// production implementation and the grid searches).
#[allow(clippy::too_many_arguments)]
pub fn naive_reml(
    tau_g: f64,
    tau_d: f64,
    phi: f64,
    k: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    delta: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> f64 {
    let n = y.len();
    let r = x.ncols();
    let mut v = k * tau_g + kd * tau_d;
    for i in 0..n {
        v[(i, i)] += phi * delta[i];
    }
    let vinv = v.clone().try_inverse().unwrap();
    let xtvx = x.transpose() * &vinv * x;
    let xtvx_inv = xtvx.clone().try_inverse().unwrap();
    let nu = &xtvx_inv * (x.transpose() * &vinv * y);
    let resid = y - x * nu;
    let quad = (resid.transpose() * &vinv * &resid)[(0, 0)];
    let c = (n - r) as f64 * (2.0 * std::f64::consts::PI).ln();
    -0.5 * (c + v.determinant().ln() + xtvx.determinant().ln() + quad)
}

/// FISTA reference for the gaussian group-lasso problem
/// min 1/2 ||y - Z theta - D alpha - G beta - (D o G) gamma||^2
///     + lambda sum_j ||(beta_j, gamma_j)||_2
/// with (theta, alpha) unpenalized. Independent of the coordinate solver.
pub struct GroupLassoRef {
    pub x: DMatrix<f64>,
    pub n_unpen: usize,
    pub p_groups: usize,
    lipschitz: f64,
}

impl GroupLassoRef {
    pub fn new(z: &DMatrix<f64>, d: &DVector<f64>, g: &DMatrix<f64>) -> Self {
        let n = z.nrows();
        let m = z.ncols();
        let p = g.ncols();
        let mut x = DMatrix::zeros(n, m + 1 + 2 * p);
        x.view_mut((0, 0), (n, m)).copy_from(z);
        x.set_column(m, d);
        for j in 0..p {
            let gj = g.column(j).clone_owned();
            x.set_column(m + 1 + 2 * j, &gj);
            x.set_column(m + 1 + 2 * j + 1, &DVector::from_fn(n, |i, _| d[i] * gj[i]));
        }
        // Lipschitz constant of the gradient: largest eigenvalue of X'X,
        // via power iteration.
        let xtx = x.transpose() * &x;
        let dim = xtx.nrows();
        let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
        let mut lam = 1.0;
        for _ in 0..500 {
            let w = &xtx * &v;
            lam = w.norm();
            if lam == 0.0 {
                break;
            }
            v = w / lam;
        }
        GroupLassoRef { x, n_unpen: m + 1, p_groups: p, lipschitz: lam.max(1e-12) }
    }

    /// Solve at one lambda, warm-started from `start`, to tight precision.
    pub fn solve(&self, y: &DVector<f64>, lambda: f64, start: Option<&DVector<f64>>) -> DVector<f64> {
        let dim = self.x.ncols();
        let mut beta = start.cloned().unwrap_or_else(|| DVector::zeros(dim));
        let mut zv = beta.clone();
        let mut t: f64 = 1.0;
        let step = 1.0 / self.lipschitz;
        let obj = |b: &DVector<f64>| -> f64 {
            let r = y - &self.x * b;
            let mut o = 0.5 * r.norm_squared();
            for j in 0..self.p_groups {
                let i = self.n_unpen + 2 * j;
                o += lambda * b[i].hypot(b[i + 1]);
            }
            o
        };
        let mut last = obj(&beta);
        for it in 0..400_000 {
            let grad = self.x.transpose() * (&self.x * &zv - y);
            let mut next = &zv - &grad * step;
            // Group proximal map on the penalized pairs.
            for j in 0..self.p_groups {
                let i = self.n_unpen + 2 * j;
                let norm = next[i].hypot(next[i + 1]);
                let thresh = lambda * step;
                if norm <= thresh {
                    next[i] = 0.0;
                    next[i + 1] = 0.0;
                } else {
                    let scale = 1.0 - thresh / norm;
                    next[i] *= scale;
                    next[i + 1] *= scale;
                }
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            zv = &next + (&next - &beta) * momentum;
            beta = next;
            t = t_next;
            if it % 200 == 199 {
                let o = obj(&beta);
                // Monotone restart.
                if o > last {
                    zv = beta.clone();
                    t = 1.0;
                }
                if (last - o).abs() <= 1e-15 * o.abs().max(1.0) {
                    break;
                }
                last = o;
            }
        }
        beta
    }

    pub fn split(&self, sol: &DVector<f64>, m: usize, p: usize) -> Coefficients {
        let mut coef = Coefficients::zeros(m, p);
        for k in 0..m {
            coef.theta[k] = sol[k];
        }
        coef.alpha = sol[m];
        for j in 0..p {
            coef.beta[j] = sol[m + 1 + 2 * j];
            coef.gamma[j] = sol[m + 1 + 2 * j + 1];
        }
        coef
    }
}
