//! Gain certification for the sampled current loop in feedback with a
//! slope-restricted interference map.
//!
//! The loop is written in linear-fractional form
//!
//! ```text
//! x+ = A x + B1 h + B2 r      h = delta(p), chord slopes in [alpha, beta]
//! p  = C1 x + D11 h + D12 r
//! e  = C2 x + D21 h + D22 r
//! ```
//!
//! where `delta` may vary from cycle to cycle. If the dissipation matrix
//! assembled by [`build_dissipation_lmi`] is negative definite for some
//! storage matrix `P > 0` and multiplier `lambda >= 0`, every trajectory
//! from rest satisfies `sum e^2 <= gamma_sq * sum r^2`, so the l2 gain from
//! `r` to `e` is at most `sqrt(gamma_sq)`.

use nalgebra::DMatrix;
use std::fmt;

/// Slope bounds `[alpha, beta]` for the interference map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorBound {
    pub alpha: f64,
    pub beta: f64,
}

impl SectorBound {
    /// Builds a sector after checking `alpha <= beta` and finiteness.
    pub fn new(alpha: f64, beta: f64) -> Result<Self, LureError> {
        let s = SectorBound { alpha, beta };
        s.validate()?;
        Ok(s)
    }

    /// Sector `[-radius, radius]`.
    pub fn symmetric(radius: f64) -> Result<Self, LureError> {
        Self::new(-radius, radius)
    }

    /// Checks `alpha <= beta` with both endpoints finite.
    pub fn validate(&self) -> Result<(), LureError> {
        if self.alpha.is_finite() && self.beta.is_finite() && self.alpha <= self.beta {
            Ok(())
        } else {
            Err(LureError::InvalidSector {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }

    /// True when `alpha <= slope <= beta`.
    pub fn contains(&self, slope: f64) -> bool {
        self.alpha <= slope && slope <= self.beta
    }
}

impl fmt::Display for SectorBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.alpha, self.beta)
    }
}

/// State-space data of the linear part of the loop.
///
/// Dimensions: `a` is n x n, the nonlinearity channel has width m
/// (`d11` is m x m), the exogenous input has width q and the performance
/// output width z.
#[derive(Debug, Clone, PartialEq)]
pub struct LftSystem {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
}

/// Errors from system assembly, matrix checks, and the gain search.
#[derive(Debug, Clone, PartialEq)]
pub enum LureError {
    DimensionMismatch {
        context: &'static str,
        rows: usize,
        cols: usize,
    },
    NotSymmetric {
        deviation: f64,
    },
    InvalidSector {
        alpha: f64,
        beta: f64,
    },
    NegativeMultiplier {
        value: f64,
    },
    IllPosed {
        alpha: f64,
        beta: f64,
    },
    UnsupportedDimension {
        states: usize,
        channels: usize,
        inputs: usize,
        outputs: usize,
    },
    BadOptions {
        what: &'static str,
        value: f64,
    },
    Infeasible {
        alpha: f64,
        beta: f64,
        gamma_ceiling: f64,
    },
    VerificationFailed {
        gamma_hat: f64,
    },
}

impl fmt::Display for LureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LureError::DimensionMismatch { context, rows, cols } => {
                write!(f, "matrix {context} has incompatible shape {rows}x{cols}")
            }
            LureError::NotSymmetric { deviation } => {
                write!(f, "matrix is not symmetric, max asymmetry {deviation:e}")
            }
            LureError::InvalidSector { alpha, beta } => {
                write!(f, "invalid sector [{alpha}, {beta}]")
            }
            LureError::NegativeMultiplier { value } => {
                write!(f, "sector multiplier must be nonnegative, got {value}")
            }
            LureError::IllPosed { alpha, beta } => {
                write!(f, "feedback loop is ill-posed over the sector [{alpha}, {beta}]")
            }
            LureError::UnsupportedDimension { states, channels, inputs, outputs } => write!(
                f,
                "gain search supports one state, channel, input and output, \
                 got {states}/{channels}/{inputs}/{outputs}"
            ),
            LureError::BadOptions { what, value } => {
                write!(f, "solver option {what} is out of range: {value}")
            }
            LureError::Infeasible { alpha, beta, gamma_ceiling } => write!(
                f,
                "no gain certificate for sector [{alpha}, {beta}] up to gamma = {gamma_ceiling:e}"
            ),
            LureError::VerificationFailed { gamma_hat } => {
                write!(f, "witness re-verification failed at gamma = {gamma_hat:e}")
            }
        }
    }
}

impl std::error::Error for LureError {}

impl LftSystem {
    /// Builds a system after checking that all nine matrices agree on the
    /// state, channel, input, and output dimensions.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        c1: DMatrix<f64>,
        d11: DMatrix<f64>,
        d12: DMatrix<f64>,
        c2: DMatrix<f64>,
        d21: DMatrix<f64>,
        d22: DMatrix<f64>,
    ) -> Result<Self, LureError> {
        let n = a.nrows();
        let m = d11.nrows();
        let q = b2.ncols();
        let z = c2.nrows();
        let expect = |ctx: &'static str, mat: &DMatrix<f64>, rows: usize, cols: usize| {
            if mat.nrows() == rows && mat.ncols() == cols {
                Ok(())
            } else {
                Err(LureError::DimensionMismatch {
                    context: ctx,
                    rows: mat.nrows(),
                    cols: mat.ncols(),
                })
            }
        };
        expect("a", &a, n, n)?;
        expect("b1", &b1, n, m)?;
        expect("b2", &b2, n, q)?;
        expect("c1", &c1, m, n)?;
        expect("d11", &d11, m, m)?;
        expect("d12", &d12, m, q)?;
        expect("c2", &c2, z, n)?;
        expect("d21", &d21, z, m)?;
        expect("d22", &d22, z, q)?;
        Ok(LftSystem { a, b1, b2, c1, d11, d12, c2, d21, d22 })
    }

    /// One-state, one-channel, one-input, one-output system from scalars.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b1: f64,
        b2: f64,
        c1: f64,
        d11: f64,
        d12: f64,
        c2: f64,
        d21: f64,
        d22: f64,
    ) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        LftSystem {
            a: s(a),
            b1: s(b1),
            b2: s(b2),
            c1: s(c1),
            d11: s(d11),
            d12: s(d12),
            c2: s(c2),
            d21: s(d21),
            d22: s(d22),
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.d11.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b2.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c2.nrows()
    }

    /// Checks that `I - D11 * s` stays invertible at both sector endpoints
    /// with no sign change between them. Exact for a single channel, where
    /// the determinant is affine in the slope.
    pub fn well_posed(&self, sector: &SectorBound) -> bool {
        let m = self.n_channels();
        let eye = DMatrix::<f64>::identity(m, m);
        let det = |s: f64| (&eye - &self.d11 * s).determinant();
        let da = det(sector.alpha);
        let db = det(sector.beta);
        da != 0.0 && db != 0.0 && da * db > 0.0
    }
}

/// Unitless valley-current recursion: the next sample equals the channel
/// output `h`, the channel input is `p = x - h + r`, and the performance
/// output is the sample itself.
pub fn unitless_current_block() -> LftSystem {
    LftSystem::scalar(0.0, 1.0, 0.0, 1.0, -1.0, 1.0, 1.0, 0.0, 0.0)
}

/// Physical current-loop gain bound: a certified unitless gain `gamma_hat`
/// scaled by the input normalization, `gamma_hat * t_s_ss / inductance`.
pub fn current_block_gain_bound(gamma_hat: f64, t_s_ss: f64, inductance: f64) -> f64 {
    gamma_hat * t_s_ss / inductance
}

/// Assembles the dissipation matrix on the stacked vector `(x, h, r)`.
///
/// The matrix is the sum of the Lyapunov difference blocks for
/// `V(x) = x' P x`, the sector multiplier `lambda * N' Ms N` with
/// `N = [C1 D11 D12; 0 I 0]` and
/// `Ms = [-alpha*beta, (alpha+beta)/2; (alpha+beta)/2, -1]` applied per
/// channel, and the output term `G' G` with `G = [C2 D21 D22]`. Negative
/// definiteness for some `P > 0`, `lambda >= 0` certifies the gain bound
/// `sqrt(gamma_sq)`.
pub fn build_dissipation_lmi(
    sys: &LftSystem,
    sector: &SectorBound,
    p: &DMatrix<f64>,
    lambda: f64,
    gamma_sq: f64,
) -> Result<DMatrix<f64>, LureError> {
    sector.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LureError::NegativeMultiplier { value: lambda });
    }
    if !(gamma_sq >= 0.0) || !gamma_sq.is_finite() {
        return Err(LureError::BadOptions { what: "gamma_sq", value: gamma_sq });
    }
    let n = sys.n_states();
    let m = sys.n_channels();
    let q = sys.n_inputs();
    if p.nrows() != n || p.ncols() != n {
        return Err(LureError::DimensionMismatch {
            context: "p",
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    check_symmetric(p)?;

    let dim = n + m + q;
    // F maps (x, h, r) to x+, so the Lyapunov difference is F'PF - E'PE
    // with E selecting x.
    let mut f_map = DMatrix::<f64>::zeros(n, dim);
    f_map.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    f_map.view_mut((0, n), (n, m)).copy_from(&sys.b1);
    f_map.view_mut((0, n + m), (n, q)).copy_from(&sys.b2);
    let mut total = f_map.transpose() * p * &f_map;
    for i in 0..n {
        for j in 0..n {
            total[(i, j)] -= p[(i, j)];
        }
    }
    for k in 0..q {
        total[(n + m + k, n + m + k)] -= gamma_sq;
    }

    // Sector multiplier on (p_channel, h) per channel.
    let mut n_map = DMatrix::<f64>::zeros(2 * m, dim);
    n_map.view_mut((0, 0), (m, n)).copy_from(&sys.c1);
    n_map.view_mut((0, n), (m, m)).copy_from(&sys.d11);
    n_map.view_mut((0, n + m), (m, q)).copy_from(&sys.d12);
    n_map
        .view_mut((m, n), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    let mut ms = DMatrix::<f64>::zeros(2 * m, 2 * m);
    let mid = 0.5 * (sector.alpha + sector.beta);
    for c in 0..m {
        ms[(c, c)] = -sector.alpha * sector.beta;
        ms[(c, m + c)] = mid;
        ms[(m + c, c)] = mid;
        ms[(m + c, m + c)] = -1.0;
    }
    total += n_map.transpose() * ms * n_map * lambda;

    // Performance output term.
    let z = sys.n_outputs();
    let mut g_map = DMatrix::<f64>::zeros(z, dim);
    g_map.view_mut((0, 0), (z, n)).copy_from(&sys.c2);
    g_map.view_mut((0, n), (z, m)).copy_from(&sys.d21);
    g_map.view_mut((0, n + m), (z, q)).copy_from(&sys.d22);
    total += g_map.transpose() * g_map;

    Ok(total)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), LureError> {
    if m.nrows() != m.ncols() {
        return Err(LureError::DimensionMismatch {
            context: "symmetric check",
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let scale = 1.0 + max_abs(m);
    let mut dev = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if dev <= 1e-9 * scale {
        Ok(())
    } else {
        Err(LureError::NotSymmetric { deviation: dev })
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let half = (m + m.transpose()) * 0.5;
    half.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |acc, v| acc.max(*v))
}

/// Checks `M + margin * I <= 0` in the definite sense via a symmetric
/// eigendecomposition. Errors on non-square or asymmetric input.
pub fn is_negative_definite(m: &DMatrix<f64>, margin: f64) -> Result<bool, LureError> {
    check_symmetric(m)?;
    Ok(lambda_max(m) <= -margin)
}

/// Largest gain a constant in-sector slope can realize, `max |c| / (1 - |c|)`
/// over the endpoint slopes with `c = s / (1 - d11 s)` specialized to the
/// unitless current block (`c = s / (1 + s)`); infinite when some endpoint
/// reaches `|c| >= 1`.
pub fn lti_lower_bound_oracle(sector: &SectorBound) -> f64 {
    let per_slope = |s: f64| {
        let den = 1.0 + s;
        if den <= 0.0 {
            return f64::INFINITY;
        }
        let c = (s / den).abs();
        if c >= 1.0 {
            f64::INFINITY
        } else {
            c / (1.0 - c)
        }
    };
    per_slope(sector.alpha).max(per_slope(sector.beta))
}

/// Search controls for [`certify_gain_with`].
///
/// The search bisects `gamma_sq` over `[gamma_sq_lo, gamma_sq_hi]` to
/// relative tolerance `rel_tol` on the gain; each feasibility test sweeps
/// the multiplier over `lambda_grid` log-spaced points inside the window
/// allowed by the diagonal conditions, refining with `refine_iters`
/// golden-section steps. A candidate counts as feasible when the largest
/// eigenvalue is below `-margin_rel * (1 + max-entry)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub gamma_sq_lo: f64,
    pub gamma_sq_hi: f64,
    pub rel_tol: f64,
    pub margin_rel: f64,
    pub lambda_grid: usize,
    pub refine_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gamma_sq_lo: 1e-9,
            gamma_sq_hi: 1e6,
            rel_tol: 1e-4,
            margin_rel: 1e-10,
            lambda_grid: 40,
            refine_iters: 56,
        }
    }
}

/// Feasible storage and multiplier witnessing a gain bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCertificate {
    pub gamma_hat: f64,
    pub p: DMatrix<f64>,
    pub lambda_mult: f64,
    pub tolerance: f64,
}

impl GainCertificate {
    /// Rebuilds the dissipation matrix at the certified gain and confirms
    /// negative definiteness together with `P > 0`.
    pub fn verify(
        &self,
        sys: &LftSystem,
        sector: &SectorBound,
        margin_rel: f64,
    ) -> Result<bool, LureError> {
        check_symmetric(&self.p)?;
        let p_margin = margin_rel * (1.0 + max_abs(&self.p));
        let p_min = self
            .p
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(*v));
        if p_min < p_margin {
            return Ok(false);
        }
        let m = build_dissipation_lmi(
            sys,
            sector,
            &self.p,
            self.lambda_mult,
            self.gamma_hat * self.gamma_hat,
        )?;
        let margin = margin_rel * (1.0 + max_abs(&m));
        is_negative_definite(&m, margin)
    }
}

/// Dissipation matrix as an affine function of the scalar storage value and
/// the multiplier, cached so the search only pays for eigenvalue solves.
struct AffineLmi {
    m0: DMatrix<f64>,
    mp: DMatrix<f64>,
    ml: DMatrix<f64>,
    /// Per-diagonal coefficients (constant, p, lambda).
    diag: Vec<(f64, f64, f64)>,
    margin_rel: f64,
}

impl AffineLmi {
    fn build(
        sys: &LftSystem,
        sector: &SectorBound,
        gamma_sq: f64,
        margin_rel: f64,
    ) -> Result<Self, LureError> {
        let zero = DMatrix::from_element(1, 1, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let m0 = build_dissipation_lmi(sys, sector, &zero, 0.0, gamma_sq)?;
        let mp = build_dissipation_lmi(sys, sector, &one, 0.0, gamma_sq)? - &m0;
        let ml = build_dissipation_lmi(sys, sector, &zero, 1.0, gamma_sq)? - &m0;
        let diag = (0..m0.nrows())
            .map(|i| (m0[(i, i)], mp[(i, i)], ml[(i, i)]))
            .collect();
        Ok(AffineLmi { m0, mp, ml, diag, margin_rel })
    }

    fn at(&self, p: f64, lambda: f64) -> DMatrix<f64> {
        &self.m0 + &self.mp * p + &self.ml * lambda
    }

    /// Largest eigenvalue plus the relative margin; feasible iff negative.
    fn objective(&self, p: f64, lambda: f64) -> f64 {
        let m = self.at(p, lambda);
        lambda_max(&m) + self.margin_rel * (1.0 + max_abs(&m))
    }
}

/// Open interval of storage values keeping every diagonal entry negative
/// for the given multiplier, intersected with `p > 0`.
fn p_interval(diag: &[(f64, f64, f64)], lambda: f64) -> Option<(f64, f64)> {
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for &(e, fp, g) in diag {
        let c = e + g * lambda;
        let scale = e.abs() + fp.abs() + g.abs() * lambda + 1.0;
        if fp.abs() <= 1e-14 * scale {
            if c >= 0.0 {
                return None;
            }
        } else if fp > 0.0 {
            hi = hi.min(-c / fp);
        } else {
            lo = lo.max(-c / fp);
        }
    }
    if lo < hi {
        Some((lo, hi))
    } else {
        None
    }
}

/// Interval of multipliers for which some `p > 0` satisfies all diagonal
/// conditions, obtained by eliminating `p` from the affine inequalities.
fn lambda_window(diag: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    // Each diagonal gives e + g*lambda + fp*p < 0. Eliminating p couples
    // every lower bound (fp < 0) with every upper bound (fp > 0) into an
    // affine inequality a*lambda + b < 0; rows without p dependence and the
    // positivity of each upper bound contribute directly.
    let mut cons: Vec<(f64, f64)> = Vec::new();
    let classify = |e: f64, fp: f64, g: f64| {
        let scale = e.abs() + fp.abs() + g.abs() + 1.0;
        if fp.abs() <= 1e-14 * scale {
            0i8
        } else if fp > 0.0 {
            1
        } else {
            -1
        }
    };
    for &(e, fp, g) in diag {
        match classify(e, fp, g) {
            0 => cons.push((g, e)),
            1 => cons.push((g, e)),
            _ => {}
        }
    }
    for &(ei, fi, gi) in diag.iter().filter(|d| classify(d.0, d.1, d.2) == -1) {
        for &(ej, fj, gj) in diag.iter().filter(|d| classify(d.0, d.1, d.2) == 1) {
            cons.push((gi * fj - gj * fi, ei * fj - ej * fi));
        }
    }
    let mut lo = 1e-12_f64;
    let mut hi = 1e14_f64;
    for (a, b) in cons {
        let scale = a.abs() + b.abs() + 1.0;
        if a.abs() <= 1e-14 * scale {
            if b >= 0.0 {
                return None;
            }
        } else if a > 0.0 {
            hi = hi.min(-b / a);
        } else {
            lo = lo.max(-b / a);
        }
    }
    if lo < hi {
        Some((lo, hi))
    } else {
        None
    }
}

/// Golden-section minimization of a unimodal function, returning the best
/// point seen. Stops early once the value drops below `stop_below`.
fn golden_min<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    iters: usize,
    stop_below: f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if best.1 < stop_below {
            return best;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Witness {
    p: f64,
    lambda: f64,
}

/// Best storage value for a fixed multiplier, minimizing the margin-shifted
/// top eigenvalue over the diagonal-feasible interval in log scale.
fn min_over_p(affine: &AffineLmi, lambda: f64, iters: usize) -> Option<(f64, f64)> {
    let (plo, phi) = p_interval(&affine.diag, lambda)?;
    let hi = if phi.is_finite() { phi } else { plo.max(1.0) * 1e12 };
    let lo = plo.max(hi * 1e-18).max(f64::MIN_POSITIVE);
    if !(lo < hi) {
        return None;
    }
    let (tlo, thi) = (lo.ln(), hi.ln());
    let shift = 1e-9 * (thi - tlo).max(1e-12);
    let (t, v) = golden_min(
        |t: f64| affine.objective(t.exp(), lambda),
        tlo + shift,
        thi - shift,
        iters,
        0.0,
    );
    Some((v, t.exp()))
}

/// Searches the multiplier window for a feasible pair, first on a log grid
/// with early exit, then with a golden-section refinement around the grid
/// minimizer.
fn find_witness(
    sys: &LftSystem,
    sector: &SectorBound,
    gamma_sq: f64,
    opts: &SolverOptions,
) -> Result<Option<Witness>, LureError> {
    let affine = AffineLmi::build(sys, sector, gamma_sq, opts.margin_rel)?;
    let Some((wlo, whi)) = lambda_window(&affine.diag) else {
        return Ok(None);
    };
    let tlo = wlo.max(1e-12).ln();
    let thi = whi.min(1e14).ln();
    if !(tlo < thi) {
        return Ok(None);
    }
    let n = opts.lambda_grid.max(2);
    let step = (thi - tlo) / n as f64;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut grid_pts = Vec::with_capacity(n);
    for k in 0..n {
        let t = tlo + (k as f64 + 0.5) * step;
        let lambda = t.exp();
        grid_pts.push(t);
        if let Some((v, p)) = min_over_p(&affine, lambda, opts.refine_iters) {
            if v < 0.0 {
                return Ok(Some(Witness { p, lambda }));
            }
            if best.map_or(true, |(bv, _, _)| v < bv) {
                best = Some((v, t, p));
            }
        }
    }
    let Some((_, tbest, _)) = best else {
        return Ok(None);
    };
    let lo = (tbest - step).max(tlo);
    let hi = (tbest + step).min(thi);
    let (t, v) = golden_min(
        |t: f64| {
            min_over_p(&affine, t.exp(), opts.refine_iters)
                .map_or(f64::INFINITY, |(v, _)| v)
        },
        lo,
        hi,
        opts.refine_iters,
        0.0,
    );
    if v < 0.0 {
        let lambda = t.exp();
        let (_, p) = min_over_p(&affine, lambda, opts.refine_iters)
            .expect("refined multiplier lost its storage interval");
        Ok(Some(Witness { p, lambda }))
    } else {
        Ok(None)
    }
}

fn check_options(opts: &SolverOptions) -> Result<(), LureError> {
    if !(opts.gamma_sq_lo > 0.0) || !opts.gamma_sq_lo.is_finite() {
        return Err(LureError::BadOptions { what: "gamma_sq_lo", value: opts.gamma_sq_lo });
    }
    if !(opts.gamma_sq_hi > opts.gamma_sq_lo) || !opts.gamma_sq_hi.is_finite() {
        return Err(LureError::BadOptions { what: "gamma_sq_hi", value: opts.gamma_sq_hi });
    }
    if !(opts.rel_tol > 0.0) || !opts.rel_tol.is_finite() {
        return Err(LureError::BadOptions { what: "rel_tol", value: opts.rel_tol });
    }
    if !(opts.margin_rel >= 0.0) || !opts.margin_rel.is_finite() {
        return Err(LureError::BadOptions { what: "margin_rel", value: opts.margin_rel });
    }
    Ok(())
}

/// [`certify_gain_with`] under [`SolverOptions::default`].
pub fn certify_gain(sys: &LftSystem, sector: &SectorBound) -> Result<GainCertificate, LureError> {
    certify_gain_with(sys, sector, &SolverOptions::default())
}

/// Bisects the certified gain to relative tolerance and returns a verified
/// storage and multiplier witness at the returned (feasible) level.
pub fn certify_gain_with(
    sys: &LftSystem,
    sector: &SectorBound,
    opts: &SolverOptions,
) -> Result<GainCertificate, LureError> {
    sector.validate()?;
    check_options(opts)?;
    let dims = (sys.n_states(), sys.n_channels(), sys.n_inputs(), sys.n_outputs());
    if dims != (1, 1, 1, 1) {
        return Err(LureError::UnsupportedDimension {
            states: dims.0,
            channels: dims.1,
            inputs: dims.2,
            outputs: dims.3,
        });
    }
    if !sys.well_posed(sector) {
        return Err(LureError::IllPosed { alpha: sector.alpha, beta: sector.beta });
    }

    let finish = |gamma_sq: f64, w: Witness| -> Result<GainCertificate, LureError> {
        let gamma_hat = gamma_sq.sqrt();
        let cert = GainCertificate {
            gamma_hat,
            p: DMatrix::from_element(1, 1, w.p),
            lambda_mult: w.lambda,
            tolerance: opts.rel_tol,
        };
        if cert.verify(sys, sector, opts.margin_rel)? {
            Ok(cert)
        } else {
            Err(LureError::VerificationFailed { gamma_hat })
        }
    };

    let Some(hi_witness) = find_witness(sys, sector, opts.gamma_sq_hi, opts)? else {
        return Err(LureError::Infeasible {
            alpha: sector.alpha,
            beta: sector.beta,
            gamma_ceiling: opts.gamma_sq_hi.sqrt(),
        });
    };
    if let Some(w) = find_witness(sys, sector, opts.gamma_sq_lo, opts)? {
        return finish(opts.gamma_sq_lo, w);
    }

    let mut lo_sq = opts.gamma_sq_lo;
    let mut hi_sq = opts.gamma_sq_hi;
    let mut witness = hi_witness;
    for _ in 0..200 {
        if (hi_sq / lo_sq).sqrt() - 1.0 <= opts.rel_tol {
            break;
        }
        let mid = (lo_sq * hi_sq).sqrt();
        if let Some(w) = find_witness(sys, sector, mid, opts)? {
            hi_sq = mid;
            witness = w;
        } else {
            lo_sq = mid;
        }
    }
    finish(hi_sq, witness)
}

/// Certified gains over a rectangular grid of sector endpoints.
///
/// `gamma_hat` is stored row-major over `(alpha, beta)` pairs with
/// infeasible cells marked `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSurface {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gamma_hat: Vec<f64>,
}

impl GainSurface {
    /// Certified gain at alpha index `i`, beta index `j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.gamma_hat[i * self.betas.len() + j]
    }

    /// CSV with header `alpha_hat,beta_hat,gamma_hat`; infeasible cells
    /// print as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha_hat,beta_hat,gamma_hat\n");
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                let g = self.at(i, j);
                let g_str = if g.is_finite() {
                    format!("{g:.9e}")
                } else {
                    String::from("inf")
                };
                out.push_str(&format!("{a:.9e},{b:.9e},{g_str}\n"));
            }
        }
        out
    }
}

/// Certifies the gain of the unitless current block on an inclusive grid of
/// sector endpoints, marking infeasible cells with `f64::INFINITY`.
pub fn gain_surface(
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    n_alpha: usize,
    n_beta: usize,
    opts: &SolverOptions,
) -> Result<GainSurface, LureError> {
    if n_alpha == 0 {
        return Err(LureError::BadOptions { what: "n_alpha", value: 0.0 });
    }
    if n_beta == 0 {
        return Err(LureError::BadOptions { what: "n_beta", value: 0.0 });
    }
    let lin = |range: (f64, f64), n: usize, k: usize| {
        if n == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64
        }
    };
    let sys = unitless_current_block();
    let alphas: Vec<f64> = (0..n_alpha).map(|k| lin(alpha_range, n_alpha, k)).collect();
    let betas: Vec<f64> = (0..n_beta).map(|k| lin(beta_range, n_beta, k)).collect();
    let mut gamma_hat = Vec::with_capacity(n_alpha * n_beta);
    for &a in &alphas {
        for &b in &betas {
            let sector = SectorBound::new(a, b)?;
            match certify_gain_with(&sys, &sector, opts) {
                Ok(cert) => gamma_hat.push(cert.gamma_hat),
                Err(LureError::Infeasible { .. }) => gamma_hat.push(f64::INFINITY),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(GainSurface { alphas, betas, gamma_hat })
}
