use std::io::Write;

use super::design::DesignConstraints;
use super::gram::MisfitGram;
use super::trace::{grad_phi_n, phi_n};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub step: f64,
    pub backtrack: f64,
    pub c1: f64,
    pub tol: f64,
    pub maxit: usize,
    pub max_backtracks: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { step: 1.0, backtrack: 0.5, c1: 1e-4, tol: 1e-6, maxit: 500, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub phi: f64,
    pub l1: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub d_opt: Vec<f64>,
    pub i_opt: f64,
    pub phi: f64,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    /// Set when the line search ran out of backtracks.
    pub line_search_failed: bool,
}

fn l1(d: &[f64]) -> f64 {
    d.iter().map(|x| x.abs()).sum()
}

/// Projected gradient descent with Armijo backtracking on `d ↦ φ_N(d,
/// I_max)`; `φ_N` is nonincreasing in the amplitude, so `I` stays at the cap.
pub fn optimize_design(
    gram: &MisfitGram,
    constraints: &DesignConstraints,
    d0: &[f64],
    sigma2: f64,
    opts: &OptimizeOptions,
) -> Result<DesignResult> {
    if !constraints.is_feasible(d0, 1e-9) {
        return Err(Error::Infeasible(format!("initial design {d0:?} violates the constraints")));
    }
    let amp = constraints.i_max;
    let mut d = d0.to_vec();
    let mut phi = phi_n(&d, amp, gram, sigma2)?;
    let mut history = vec![HistoryRow { iter: 0, phi, l1: l1(&d), step: 0.0 }];
    let mut converged = false;
    let mut failed = false;
    for iter in 1..=opts.maxit {
        let g = grad_phi_n(&d, amp, gram, sigma2)?;
        let trial: Vec<f64> = d.iter().zip(&g).map(|(x, gx)| x - gx).collect();
        let pg = constraints.project(&trial);
        let pg_norm = d.iter().zip(&pg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if pg_norm <= opts.tol {
            converged = true;
            break;
        }
        let mut step = opts.step;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let z: Vec<f64> = d.iter().zip(&g).map(|(x, gx)| x - step * gx).collect();
            let cand = constraints.project(&z);
            let decrease: f64 = g.iter().zip(cand.iter().zip(&d)).map(|(gx, (c, x))| gx * (c - x)).sum();
            let phi_c = phi_n(&cand, amp, gram, sigma2)?;
            if phi_c <= phi + opts.c1 * decrease && phi_c <= phi {
                accepted = Some((cand, phi_c));
                break;
            }
            step *= opts.backtrack;
        }
        match accepted {
            Some((cand, phi_c)) => {
                d = cand;
                phi = phi_c;
                history.push(HistoryRow { iter, phi, l1: l1(&d), step });
            }
            None => {
                failed = true;
                break;
            }
        }
    }
    Ok(DesignResult { d_opt: d, i_opt: amp, phi, history, converged, line_search_failed: failed })
}

pub fn write_history_csv(mut out: impl Write, history: &[HistoryRow]) -> Result<()> {
    writeln!(out, "iter,phi,l1,step")?;
    for h in history {
        writeln!(out, "{},{:e},{:e},{:e}", h.iter, h.phi, h.l1, h.step)?;
    }
    Ok(())
}
