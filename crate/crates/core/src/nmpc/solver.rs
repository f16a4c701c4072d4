//! Box-constrained quasi-Newton minimization of the horizon cost.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::ocp::{cost_unchecked, gradient_unchecked, Dynamics, OcpContext};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub cost: f64,
    /// Cost of the projected warm start.
    pub initial_cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Infinity norm of the projected gradient at the returned point.
    pub pg_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub u_seq: Vec<Vec<f64>>,
    pub report: SolveReport,
}

fn project(u: &mut [f64], lo: f64, hi: f64) {
    for v in u {
        *v = v.clamp(lo, hi);
    }
}

/// Gradient with components that push against an active bound removed.
fn projected_gradient(u: &[f64], g: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    u.iter()
        .zip(g)
        .map(|(&u, &g)| {
            if (u <= lo && g > 0.0) || (u >= hi && g < 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion on the free coordinates.
fn lbfgs_direction(
    g: &[f64],
    free: &[bool],
    pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(free)
            .map(|(x, f)| if *f { *x } else { 0.0 })
            .collect()
    };
    let mut q = mask(g);
    let mut alpha = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(&mask(s), &q);
        for (qi, yi) in q.iter_mut().zip(mask(y)) {
            *qi -= a * yi;
        }
        alpha.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let (sm, ym) = (mask(s), mask(y));
        let yy = dot(&ym, &ym);
        let gamma = if yy > 0.0 { dot(&sm, &ym) / yy } else { 1.0 };
        if gamma > 0.0 && gamma.is_finite() {
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alpha.into_iter().rev()) {
        let b = rho * dot(&mask(y), &q);
        for (qi, si) in q.iter_mut().zip(mask(s)) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn unflatten(flat: &[f64], m: usize) -> Vec<Vec<f64>> {
    flat.chunks(m).map(<[f64]>::to_vec).collect()
}

/// Minimizes the horizon cost over `u_seq ∈ [u_min, u_max]` starting from
/// `warm_start`.
///
/// Projected L-BFGS: the search direction comes from the limited-memory
/// inverse Hessian restricted to free coordinates, the step is projected onto
/// the box and accepted under an Armijo condition along the projection arc.
/// The returned cost never exceeds that of the projected warm start.
pub fn ocp_solve<D: Dynamics + ?Sized>(
    warm_start: &[Vec<f64>],
    ctx: &OcpContext<'_>,
    model: &D,
) -> Result<Solution> {
    let spec = ctx.spec;
    spec.validate()?;
    ctx.check(model, warm_start)?;
    let m = model.input_dim();
    let (lo, hi) = (spec.u_min, spec.u_max);

    let mut u: Vec<f64> = warm_start.iter().flatten().copied().collect();
    project(&mut u, lo, hi);
    let mut evaluations = 1;
    let (mut f, g) = gradient_unchecked(&unflatten(&u, m), ctx, model);
    let mut g: Vec<f64> = g.into_iter().flatten().collect();
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteCost);
    }
    let initial_cost = f;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut pg = projected_gradient(&u, &g, lo, hi);
    let mut iterations = 0;
    let mut converged = inf_norm(&pg) <= spec.tol;

    while !converged && iterations < spec.max_iter {
        let free: Vec<bool> = u
            .iter()
            .zip(&g)
            .map(|(&u, &g)| !((u <= lo && g > 0.0) || (u >= hi && g < 0.0)))
            .collect();
        let mut d = lbfgs_direction(&g, &free, &pairs);
        if dot(&d, &g) >= 0.0 {
            d = pg.iter().map(|v| -v).collect();
            pairs.clear();
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut t = 1.0;
            for _ in 0..40 {
                let mut cand: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut cand, lo, hi);
                let step: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
                let slope = dot(&g, &step);
                if inf_norm(&step) == 0.0 {
                    break;
                }
                evaluations += 1;
                let fc = cost_unchecked(&unflatten(&cand, m), ctx, model);
                if fc.is_finite() && fc <= f + 1e-4 * slope.min(0.0) && fc <= f {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            d = pg.iter().map(|v| -v).collect();
            pairs.clear();
        }
        let Some(u_new) = accepted else { break };
        iterations += 1;

        evaluations += 1;
        let (f_new, g_new) = gradient_unchecked(&unflatten(&u_new, m), ctx, model);
        let g_new: Vec<f64> = g_new.into_iter().flatten().collect();
        if !f_new.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteCost);
        }
        let s: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            pairs.push_back((s, y, 1.0 / sy));
            if pairs.len() > spec.memory.max(1) {
                pairs.pop_front();
            }
        }
        u = u_new;
        f = f_new;
        g = g_new;
        pg = projected_gradient(&u, &g, lo, hi);
        converged = inf_norm(&pg) <= spec.tol;
    }

    Ok(Solution {
        u_seq: unflatten(&u, m),
        report: SolveReport {
            cost: f,
            initial_cost,
            iterations,
            evaluations,
            pg_norm: inf_norm(&pg),
            converged,
        },
    })
}
