//! Gain certification and runtime Lyapunov monitoring.
//!
//! Each PI-backstepping branch is linear in `[v, α_v, i, α_i]` (source-side
//! capacitor voltage, its integral, inductor current, its integral). The
//! closed-loop matrix, its characteristic quartic and a Routh–Hurwitz test
//! certify the gains; a Lyapunov matrix `P` solving `AᵀP + PA = −Q` gives
//! the quadratic storage used by the monitor.

use nalgebra::{DMatrix, Matrix4};

use crate::control::{BranchGains, GainSet, Setpoint};
use crate::error::{GridError, Result};
use crate::model::{AugmentedState, Disturbance, GridParameters};

/// Coefficients of `λ⁴ + p3·λ³ + p2·λ² + p1·λ + p0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticCoefficients {
    pub p3: f64,
    pub p2: f64,
    pub p1: f64,
    pub p0: f64,
}

impl QuarticCoefficients {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p3, self.p2, self.p1, self.p0]
    }

    /// Companion-matrix roots (dense eigen-solve).
    pub fn roots(&self) -> Vec<nalgebra::Complex<f64>> {
        let mut m = DMatrix::<f64>::zeros(4, 4);
        m[(0, 0)] = -self.p3;
        m[(0, 1)] = -self.p2;
        m[(0, 2)] = -self.p1;
        m[(0, 3)] = -self.p0;
        for i in 1..4 {
            m[(i, i - 1)] = 1.0;
        }
        m.complex_eigenvalues().iter().copied().collect()
    }
}

/// Source-side RC of a branch plus the coefficient of the outer integral
/// term `K̄·Kα·(v − v*)` in its current-loop law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchCircuit {
    pub r: f64,
    pub c: f64,
    pub cross: f64,
}

impl BranchCircuit {
    /// The PV law carries `C1·K̄1·K1α`.
    pub fn pv(p: &GridParameters) -> Self {
        Self {
            r: p.r1,
            c: p.c1,
            cross: p.c1,
        }
    }

    /// The battery law carries `K̄4·K4α` without the capacitance.
    pub fn battery(p: &GridParameters) -> Self {
        Self {
            r: p.r4,
            c: p.c4,
            cross: 1.0,
        }
    }
}

/// Closed-loop matrix of one branch in the coordinates `[v, α_v, i, α_i]`.
pub fn branch_matrix(g: &BranchGains, k: &BranchCircuit) -> Matrix4<f64> {
    let (r, c) = (k.r, k.c);
    let a31 = (g.inner - g.outer) * (c * g.outer - 1.0 / r) + k.cross * g.outer_bar * g.outer_int;
    let a32 = g.outer_bar * (g.inner * c - g.outer * c + 1.0 / r);
    Matrix4::new(
        -1.0 / (r * c),
        0.0,
        -1.0 / c,
        0.0,
        g.outer_int,
        0.0,
        0.0,
        0.0,
        a31,
        a32,
        -g.inner,
        -g.inner_bar,
        g.inner_int * (1.0 / r - c * g.outer),
        -g.inner_int * c * g.outer_bar,
        g.inner_int,
        0.0,
    )
}

pub fn build_a13(g: &GainSet, p: &GridParameters) -> Matrix4<f64> {
    branch_matrix(&g.pv(), &BranchCircuit::pv(p))
}

pub fn build_a46(g: &GainSet, p: &GridParameters) -> Matrix4<f64> {
    branch_matrix(&g.battery(), &BranchCircuit::battery(p))
}

/// Characteristic coefficients consistent with [`branch_matrix`].
pub fn branch_char_poly(g: &BranchGains, k: &BranchCircuit) -> QuarticCoefficients {
    let w = 1.0 / (k.r * k.c);
    let (k1, kb1, k1a) = (g.outer, g.outer_bar, g.outer_int);
    let (k3, kb3, k3a) = (g.inner, g.inner_bar, g.inner_int);
    QuarticCoefficients {
        p3: k3 + w,
        p2: kb3 * k3a + w * k3 + k.cross / k.c * kb1 * k1a + (k3 - k1) * (k1 - w),
        p1: kb1 * k1a * (w + k3 - k1) + k1 * kb3 * k3a,
        p0: kb1 * kb3 * k3a * k1a,
    }
}

/// The coefficients exactly as printed in the original derivation. They agree
/// with [`branch_char_poly`] except for `p1`, which differs by
/// `K3α·(K̄3 − 1)·(K1 − 1/(RC))`.
pub fn branch_char_poly_printed(g: &BranchGains, k: &BranchCircuit) -> QuarticCoefficients {
    let w = 1.0 / (k.r * k.c);
    let (k1, kb1, k1a) = (g.outer, g.outer_bar, g.outer_int);
    let (k3, kb3, k3a) = (g.inner, g.inner_bar, g.inner_int);
    QuarticCoefficients {
        p3: k3 + w,
        p2: kb3 * k3a + w * k3 + kb1 * k1a + (k3 - k1) * (k1 - w),
        p1: w * (kb3 * k3a + kb1 * k1a) + kb1 * k1a * (k3 - k1) + k3a * (k1 - w),
        p0: kb1 * kb3 * k3a * k1a,
    }
}

pub fn char_poly(g: &GainSet, p: &GridParameters) -> QuarticCoefficients {
    branch_char_poly(&g.pv(), &BranchCircuit::pv(p))
}

pub fn char_poly_battery(g: &GainSet, p: &GridParameters) -> QuarticCoefficients {
    branch_char_poly(&g.battery(), &BranchCircuit::battery(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    /// Boundary case `p0 = 0`: zero roots from the dropped integral states,
    /// the rest in the open left half-plane.
    MarginallyStable,
    Unstable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::MarginallyStable => "marginally stable",
            Verdict::Unstable => "unstable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouthReport {
    pub standard: Verdict,
    pub paper_literal: Verdict,
    /// Normalized margins of `p3 > 0`, `p3p2 − p1 > 0`,
    /// `p1(p3p2 − p1) − p3²p0 > 0`, `p0 > 0`, each in [−1, 1].
    pub margins: [f64; 4],
    pub min_margin: f64,
}

fn normalized(value: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        value / scale
    }
}

/// Standard quartic Routh–Hurwitz test alongside the printed conditions
/// (all coefficients positive, `p2 > p1/p3`, `p2 − p0p1/(p2 − p1/p3) > 0`).
pub fn routh_stable(c: &QuarticCoefficients) -> RouthReport {
    let QuarticCoefficients { p3, p2, p1, p0 } = *c;
    let b1 = p3 * p2 - p1;
    let c1 = p1 * b1 - p3 * p3 * p0;
    let margins = [
        normalized(p3, p3.abs()),
        normalized(b1, (p3 * p2).abs() + p1.abs()),
        normalized(c1, (p1 * p3 * p2).abs() + p1 * p1 + (p3 * p3 * p0).abs()),
        normalized(p0, p0.abs()),
    ];
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let head_ok = p3 > 0.0 && b1 > 0.0 && c1 > 0.0;
    // With p0 = 0 (and possibly p1 = 0) the remaining roots come from the
    // deflated cubic or quadratic.
    let deflated_ok = if p1 != 0.0 {
        p3 > 0.0 && p1 > 0.0 && b1 > 0.0
    } else {
        p3 > 0.0 && p2 > 0.0
    };
    let standard = if head_ok && p0 > 0.0 {
        Verdict::Stable
    } else if p0 == 0.0 && deflated_ok {
        Verdict::MarginallyStable
    } else {
        Verdict::Unstable
    };

    let third = p2 - p1 / p3;
    let literal_head = p3 > 0.0 && p2 > 0.0 && p1 > 0.0 && third > 0.0;
    let paper_literal = if literal_head && p0 > 0.0 && p2 - p0 * p1 / third > 0.0 {
        Verdict::Stable
    } else if literal_head && p0 == 0.0 {
        Verdict::MarginallyStable
    } else {
        Verdict::Unstable
    };
    RouthReport {
        standard,
        paper_literal,
        margins,
        min_margin,
    }
}

/// Largest real part of the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `AᵀP + PA = −Q` through the Kronecker-vectorized linear system.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(GridError::InvalidParameters(format!(
            "shape mismatch: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(GridError::NotHurwitz(format!(
            "A has an eigenvalue with real part {abscissa:e}"
        )));
    }
    // Column-major vec: vec(AᵀP) = (I ⊗ Aᵀ)·vec(P), vec(PA) = (Aᵀ ⊗ I)·vec(P).
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|v| -v));
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| GridError::NotHurwitz("singular Kronecker system".into()))?;
    let p = DMatrix::from_iterator(n, n, sol.iter().copied());
    Ok((&p + p.transpose()) * 0.5)
}

/// Quadratic storage `½ eᵀPe` for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// True when the branch has no integral action and the form lives on the
    /// `[v, i]` coordinates only.
    pub reduced: bool,
}

impl QuadraticForm {
    fn value(&self, full_error: [f64; 4]) -> f64 {
        let e: Vec<f64> = if self.reduced {
            vec![full_error[0], full_error[2]]
        } else {
            full_error.to_vec()
        };
        let n = e.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += e[i] * self.p[(i, j)] * e[j];
            }
        }
        0.5 * acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchCertificate {
    pub coefficients: QuarticCoefficients,
    pub printed: QuarticCoefficients,
    pub routh: RouthReport,
    pub spectral_abscissa: f64,
    pub form: Result<QuadraticForm>,
}

/// Certifies one branch with `Q = I`. Without integral action the two
/// integral rows vanish; the Lyapunov solve then uses the `[v, i]` block.
pub fn certify_branch(g: &BranchGains, k: &BranchCircuit) -> BranchCertificate {
    let a = branch_matrix(g, k);
    let full = DMatrix::from_iterator(4, 4, a.iter().copied());
    let reduced = !g.has_integral_action();
    let target = if reduced {
        DMatrix::from_row_slice(2, 2, &[a[(0, 0)], a[(0, 2)], a[(2, 0)], a[(2, 2)]])
    } else {
        full.clone()
    };
    let n = target.nrows();
    let q = DMatrix::<f64>::identity(n, n);
    let form = lyapunov_solve(&target, &q).map(|p| QuadraticForm { p, q, reduced });
    BranchCertificate {
        coefficients: branch_char_poly(g, k),
        printed: branch_char_poly_printed(g, k),
        routh: routh_stable(&branch_char_poly(g, k)),
        spectral_abscissa: spectral_abscissa(&full),
        form,
    }
}

/// Lyapunov weights for both PI branches.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovWeights {
    pub pv: QuadraticForm,
    pub battery: QuadraticForm,
}

impl LyapunovWeights {
    pub fn certify(g: &GainSet, p: &GridParameters) -> Result<Self> {
        let pv = certify_branch(&g.pv(), &BranchCircuit::pv(p)).form?;
        let battery = certify_branch(&g.battery(), &BranchCircuit::battery(p)).form?;
        Ok(Self { pv, battery })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LyapunovSample {
    pub t: f64,
    pub v13: f64,
    pub v46: f64,
    pub v259: f64,
    pub v7: f64,
    pub v8: f64,
    pub v_total: f64,
}

/// Evaluates every term of the composite storage function.
///
/// The bus term is centred on the reference, `C9/2·(x9 − x9*)²`, so that the
/// composite function vanishes at the equilibrium.
pub fn lyapunov_sample(
    t: f64,
    s: &AugmentedState,
    sp: &Setpoint,
    d: &Disturbance,
    z7: f64,
    z8: f64,
    w: &LyapunovWeights,
    p: &GridParameters,
) -> LyapunovSample {
    let x = &s.phys;
    let r = &sp.refs;
    let e13 = [x.x1 - r.x1_star, s.alpha1, x.x3 - (d.v_pv - r.x1_star) / p.r1, s.alpha3];
    let e46 = [x.x4 - r.x4_star, s.alpha4, x.x6 - (d.v_b - r.x4_star) / p.r4, s.alpha6];
    let v13 = w.pv.value(e13);
    let v46 = w.battery.value(e46);
    let e2 = x.x2 - sp.x2_star;
    let e5 = x.x5 - sp.x5_star;
    let e9 = x.x9 - r.x9_star;
    let v259 = 0.5 * (p.c2 * e2 * e2 + p.c5 * e5 * e5 + p.c9 * e9 * e9);
    let v7 = 0.5 * (x.x7 - z7).powi(2);
    let v8 = 0.5 * (x.x8 - z8).powi(2);
    LyapunovSample {
        t,
        v13,
        v46,
        v259,
        v7,
        v8,
        v_total: v13 + v46 + v259 + v7 + v8,
    }
}

/// Tolerances of the monotonicity monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    /// Increase allowed relative to the window's initial value.
    pub rel_tol: f64,
    /// Per-integration-step allowance, relative to the larger of the two
    /// compared values.
    pub step_allowance: f64,
    /// Absolute floor on the allowed increase, in joules.
    pub abs_tol: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            step_allowance: 1e-9,
            abs_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t_start: f64,
    pub t_end: f64,
    pub increase: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorVerdict {
    Pass,
    Violations(Vec<Violation>),
    /// Saturation occurred inside the window.
    Saturated,
    /// The disturbance changed inside the window.
    Disturbed,
}

impl MonitorVerdict {
    pub fn is_inconclusive(&self) -> bool {
        matches!(self, MonitorVerdict::Saturated | MonitorVerdict::Disturbed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub verdict: MonitorVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub windows: Vec<MonitorWindow>,
    pub config: MonitorConfig,
    pub steps_per_sample: usize,
}

impl MonitorReport {
    pub fn violation_count(&self) -> usize {
        self.windows
            .iter()
            .map(|w| match &w.verdict {
                MonitorVerdict::Violations(v) => v.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn inconclusive(&self) -> bool {
        self.windows.iter().any(|w| w.verdict.is_inconclusive())
    }

    /// Total time covered by checked windows.
    pub fn checked_time(&self) -> f64 {
        self.windows
            .iter()
            .filter(|w| !w.verdict.is_inconclusive())
            .map(|w| w.t_end - w.t_start)
            .sum()
    }

    pub fn summary(&self) -> String {
        let count = |v: MonitorVerdict| self.windows.iter().filter(|w| w.verdict == v).count();
        let saturated = count(MonitorVerdict::Saturated);
        let disturbed = count(MonitorVerdict::Disturbed);
        let mut skipped = Vec::new();
        if saturated > 0 {
            skipped.push(format!("{saturated} saturated segment(s) inconclusive (outside Ω_K)"));
        }
        if disturbed > 0 {
            skipped.push(format!("{disturbed} segment(s) skipped under changing disturbance"));
        }
        if self.violation_count() > 0 {
            format!("{} violation(s)", self.violation_count())
        } else if !skipped.is_empty() && self.checked_time() == 0.0 {
            format!("monitor inconclusive ({})", skipped.join(", "))
        } else if !skipped.is_empty() {
            format!("pass ({})", skipped.join(", "))
        } else {
            "pass".to_string()
        }
    }
}

/// One point of a monitored trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorPoint {
    pub v: LyapunovSample,
    /// Identifies the reference interval the point belongs to.
    pub interval: usize,
    /// Steps with any saturated duty since the previous point.
    pub saturated_steps: u32,
    /// The disturbance differs from the previous point's.
    pub disturbed: bool,
}

/// Flags increases of the composite function between consecutive samples.
///
/// The trace is split into windows of constant reference; inside each, runs
/// of sample pairs with saturation or a disturbance change in between are
/// reported inconclusive and the remaining runs are checked. Allowed increase
/// between samples k, k+1: `abs_tol + rel_tol·V(window start) +
/// steps_per_sample·step_allowance·max(V_k, V_k+1)`.
pub fn lyapunov_monitor(points: &[MonitorPoint], steps_per_sample: usize, config: MonitorConfig) -> MonitorReport {
    // State of the pair ending at point k.
    let kind = |k: usize| {
        if points[k].saturated_steps > 0 {
            MonitorVerdict::Saturated
        } else if points[k].disturbed {
            MonitorVerdict::Disturbed
        } else {
            MonitorVerdict::Pass
        }
    };
    let mut windows = Vec::new();
    let mut start = 0;
    while start + 1 < points.len() {
        let same_interval = |k: usize| points[k + 1].interval == points[start].interval;
        if !same_interval(start) {
            start += 1;
            continue;
        }
        let class = kind(start + 1);
        let mut end = start + 1;
        while end + 1 < points.len() && same_interval(end) && kind(end + 1) == class {
            end += 1;
        }
        let w = &points[start..=end];
        let verdict = if class.is_inconclusive() {
            class
        } else {
            let v0 = w[0].v.v_total;
            let violations: Vec<Violation> = w
                .windows(2)
                .filter_map(|pair| {
                    let (a, b) = (pair[0].v, pair[1].v);
                    let allowed = config.abs_tol
                        + config.rel_tol * v0
                        + steps_per_sample as f64 * config.step_allowance * a.v_total.max(b.v_total);
                    let increase = b.v_total - a.v_total;
                    (increase > allowed || !b.v_total.is_finite()).then_some(Violation {
                        t_start: a.t,
                        t_end: b.t,
                        increase,
                        allowed,
                    })
                })
                .collect();
            if violations.is_empty() {
                MonitorVerdict::Pass
            } else {
                MonitorVerdict::Violations(violations)
            }
        };
        windows.push(MonitorWindow {
            t_start: w[0].v.t,
            t_end: w[w.len() - 1].v.t,
            verdict,
        });
        start = end;
    }
    MonitorReport {
        windows,
        config,
        steps_per_sample,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tuned() -> GainSet {
        GainSet {
            k1: 200.0,
            kbar1: 100.0,
            k1a: 50.0,
            k3: 400.0,
            kbar3: 100.0,
            k3a: 50.0,
            k7: 1000.0,
            k8: 1000.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gains_leave_only_passive_row() {
        let p = GridParameters::table();
        let a = build_a13(&GainSet::default(), &p);
        let mut expected = Matrix4::zeros();
        expected[(0, 0)] = -100.0;
        expected[(0, 2)] = -10.0;
        assert_relative_eq!(a, expected, max_relative = 1e-14);
    }

    #[test]
    fn matched_outer_gain_annihilates_coupling() {
        let p = GridParameters::table();
        let g = GainSet {
            k1: 100.0,
            k3: 7.0,
            ..Default::default()
        };
        assert_eq!(build_a13(&g, &p)[(2, 0)], 0.0);
    }

    #[test]
    fn proof_gains_are_stable_up_to_integral_modes() {
        let p = GridParameters::table();
        let g = GainSet::proof_defaults(&p);
        for a in [build_a13(&g, &p), build_a46(&g, &p)] {
            let mut eig: Vec<_> = a.complex_eigenvalues().iter().map(|l| l.re).collect();
            eig.sort_by(f64::total_cmp);
            assert!(eig[0] < 0.0 && eig[1] < 0.0, "{eig:?}");
            assert!(eig[2].abs() < 1e-12 && eig[3].abs() < 1e-12, "{eig:?}");
        }
        let rep = routh_stable(&char_poly(&g, &p));
        assert_eq!(rep.standard, Verdict::MarginallyStable);
        let cert = certify_branch(&g.pv(), &BranchCircuit::pv(&p));
        assert!(cert.form.as_ref().unwrap().reduced);
    }

    #[test]
    fn worked_quartic_coefficients() {
        let p = GridParameters::table();
        let c = char_poly(&tuned(), &p);
        assert_relative_eq!(c.p0, 2.5e7, max_relative = 1e-14);
        let c = char_poly(&GainSet::default(), &p);
        assert_eq!(c.p0, 0.0);
        assert_relative_eq!(c.p3, 100.0, max_relative = 1e-14);
    }

    #[test]
    fn printed_p1_differs_only_off_the_special_gains() {
        let p = GridParameters::table();
        let g = tuned();
        let exact = char_poly(&g, &p);
        let printed = branch_char_poly_printed(&g.pv(), &BranchCircuit::pv(&p));
        assert_eq!(exact.p3, printed.p3);
        assert_eq!(exact.p0, printed.p0);
        assert_relative_eq!(exact.p2, printed.p2, max_relative = 1e-14);
        let gap = g.k3a * (g.kbar3 - 1.0) * (g.k1 - 100.0);
        assert_relative_eq!(exact.p1 - printed.p1, gap, max_relative = 1e-12);
    }

    #[test]
    fn routh_examples() {
        let all_minus_one = QuarticCoefficients {
            p3: 4.0,
            p2: 6.0,
            p1: 4.0,
            p0: 1.0,
        };
        let rep = routh_stable(&all_minus_one);
        assert_eq!(rep.standard, Verdict::Stable);
        assert!(rep.min_margin > 0.0);

        // (λ²+λ+1)(λ²−0.1λ+1) = λ⁴ + 0.9λ³ + 1.9λ² + 0.9λ + 1
        let rhp = QuarticCoefficients {
            p3: 0.9,
            p2: 1.9,
            p1: 0.9,
            p0: 1.0,
        };
        assert_eq!(routh_stable(&rhp).standard, Verdict::Unstable);
        assert!(rhp.roots().iter().any(|r| r.re > 0.0));

        let boundary = QuarticCoefficients {
            p3: 4.0,
            p2: 6.0,
            p1: 4.0,
            p0: 0.0,
        };
        assert_eq!(routh_stable(&boundary).standard, Verdict::MarginallyStable);
    }

    #[test]
    fn lyapunov_identity_case() {
        let a = -DMatrix::<f64>::identity(4, 4);
        let q = DMatrix::<f64>::identity(4, 4) * 2.0;
        let p = lyapunov_solve(&a, &q).unwrap();
        assert_relative_eq!(p, DMatrix::identity(4, 4), epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_upper_triangular_case() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let q = DMatrix::identity(2, 2);
        let p = lyapunov_solve(&a, &q).unwrap();
        // Hand solution of −2a = −1, a − 3b = 0, 2b − 4c = −1.
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0]);
        assert_relative_eq!(p, expected, epsilon = 1e-14);
        let residual = a.transpose() * &p + &p * &a + &q;
        assert!(residual.amax() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_non_hurwitz() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        let err = lyapunov_solve(&a, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(err.to_string().starts_with("Lyapunov equation has no PD solution"));
    }

    #[test]
    fn tuned_gains_certify_with_positive_definite_form() {
        let p = GridParameters::table();
        let cert = certify_branch(&tuned().pv(), &BranchCircuit::pv(&p));
        assert_eq!(cert.routh.standard, Verdict::Stable);
        assert!(cert.spectral_abscissa < 0.0);
        let form = cert.form.unwrap();
        assert!(!form.reduced);
        assert!(form.p.clone().symmetric_eigenvalues().iter().all(|&l| l > 0.0));
    }

    fn sample(t: f64, v: f64) -> LyapunovSample {
        LyapunovSample {
            t,
            v_total: v,
            ..Default::default()
        }
    }

    #[test]
    fn monitor_flags_increase_and_saturation() {
        let pts: Vec<_> = [5.0, 4.0, 3.0, 3.5, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| MonitorPoint {
                v: sample(i as f64, v),
                interval: 0,
                saturated_steps: 0,
                disturbed: false,
            })
            .collect();
        let rep = lyapunov_monitor(&pts, 10, MonitorConfig::default());
        assert_eq!(rep.violation_count(), 1);

        // Saturation between samples 2 and 3 hides the increase there.
        let mut sat = pts.clone();
        sat[3].saturated_steps = 3;
        let rep = lyapunov_monitor(&sat, 10, MonitorConfig::default());
        assert_eq!(rep.violation_count(), 0);
        assert_eq!(rep.windows.len(), 3);
        assert!(rep.summary().starts_with("pass (1 saturated"));

        for p in sat.iter_mut().skip(1) {
            p.saturated_steps = 1;
        }
        let rep = lyapunov_monitor(&sat, 10, MonitorConfig::default());
        assert_eq!(rep.summary(), "monitor inconclusive (1 saturated segment(s) inconclusive (outside Ω_K))");

        // A disturbance step between samples 2 and 3 is skipped the same way.
        let mut dist = pts.clone();
        dist[3].disturbed = true;
        let rep = lyapunov_monitor(&dist, 10, MonitorConfig::default());
        assert_eq!(rep.violation_count(), 0);
        assert!(rep.summary().contains("1 segment(s) skipped under changing disturbance"));
    }

    #[test]
    fn monitor_tolerates_roundoff_at_rest() {
        let pts: Vec<_> = [0.0, 1e-20, 0.0, 3e-18]
            .iter()
            .enumerate()
            .map(|(i, &v)| MonitorPoint {
                v: sample(i as f64, v),
                interval: 0,
                saturated_steps: 0,
                disturbed: false,
            })
            .collect();
        assert_eq!(lyapunov_monitor(&pts, 100, MonitorConfig::default()).summary(), "pass");
    }

    #[test]
    fn monitor_splits_windows_by_interval() {
        let pts: Vec<_> = [3.0, 2.0, 9.0, 8.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| MonitorPoint {
                v: sample(i as f64, v),
                interval: i / 2,
                saturated_steps: 0,
                disturbed: false,
            })
            .collect();
        let rep = lyapunov_monitor(&pts, 1, MonitorConfig::default());
        assert_eq!(rep.windows.len(), 2);
        assert_eq!(rep.violation_count(), 0);
    }
}
