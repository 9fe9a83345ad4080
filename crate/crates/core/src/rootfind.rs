//! Safeguarded Newton iteration for scalar equations `g(x) = 0` started at
//! `x = 0`.
//!
//! The derivative is a central difference with step `1e-4 (1 + |x|)`. A sign
//! bracket is first located by growing `[-r, r]` geometrically, where `r` is
//! twice the first Newton step clamped to `[1e-6, 1]`; any Newton
//! step that leaves the bracket (or has an unusable derivative) is replaced by
//! bisection. Convergence is declared when `|g(x)| <= tol (1 + |g(0)|)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_expansions: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            tol: 1e-8,
            max_iter: 25,
            max_expansions: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Root {
    pub x: f64,
    pub value: f64,
    /// `g(0)`.
    pub initial: f64,
    /// Newton or bisection updates taken after bracketing.
    pub iterations: usize,
    pub trajectory: Vec<(f64, f64)>,
}

pub fn solve<F>(mut g: F, opts: RootOptions) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut trajectory = Vec::new();
    let mut eval = |x: f64, traj: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = g(x)?;
        traj.push((x, v));
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("equation is not finite at {x}")));
        }
        Ok(v)
    };

    let g0 = eval(0.0, &mut trajectory)?;
    let tol = opts.tol * (1.0 + g0.abs());
    if g0.abs() <= tol {
        return Ok(Root {
            x: 0.0,
            value: g0,
            initial: g0,
            iterations: 0,
            trajectory,
        });
    }

    // bracket around the root, keeping x = 0 as one end where possible
    let (mut lo, mut flo, mut hi, fhi);
    let h0 = 1e-4;
    let d0 = (eval(h0, &mut trajectory)? - eval(-h0, &mut trajectory)?) / (2.0 * h0);
    let step0 = (g0 / d0).abs();
    let mut radius = if step0.is_finite() && step0 > 0.0 { (2.0 * step0).clamp(1e-6, 1.0) } else { 1.0 };
    let mut expansions = 0;
    loop {
        let fr = eval(radius, &mut trajectory)?;
        if fr.signum() != g0.signum() || fr == 0.0 {
            (lo, flo, hi, fhi) = (0.0, g0, radius, fr);
            break;
        }
        let fl = eval(-radius, &mut trajectory)?;
        if fl.signum() != g0.signum() || fl == 0.0 {
            (lo, flo, hi, fhi) = (-radius, fl, 0.0, g0);
            break;
        }
        expansions += 1;
        if expansions > opts.max_expansions {
            return Err(Error::TargetingNonConvergence {
                iterations: 0,
                last: g0.abs(),
                trajectory,
            });
        }
        radius *= 2.0;
    }
    for &(x, v) in [(lo, flo), (hi, fhi)].iter() {
        if v.abs() <= tol {
            return Ok(Root {
                x,
                value: v,
                initial: g0,
                iterations: 0,
                trajectory,
            });
        }
    }

    let (mut x, mut fx) = (0.0_f64, g0);
    for iter in 1..=opts.max_iter {
        let step = 1e-4 * (1.0 + x.abs());
        let fp = eval(x + step, &mut trajectory)?;
        let fm = eval(x - step, &mut trajectory)?;
        let deriv = (fp - fm) / (2.0 * step);
        let newton = x - fx / deriv;
        let next = if deriv != 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let fnext = eval(next, &mut trajectory)?;
        if fnext.signum() == flo.signum() {
            lo = next;
            flo = fnext;
        } else {
            hi = next;
        }
        x = next;
        fx = fnext;
        if fx.abs() <= tol {
            return Ok(Root {
                x,
                value: fx,
                initial: g0,
                iterations: iter,
                trajectory,
            });
        }
        if hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
            break;
        }
    }
    Err(Error::TargetingNonConvergence {
        iterations: opts.max_iter,
        last: fx.abs(),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_origin_returns_immediately() {
        let r = solve(|x| Ok(x * 3.0), RootOptions::default()).unwrap();
        assert_eq!(r.x, 0.0);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.trajectory.len(), 1);
    }

    #[test]
    fn finds_root_of_cubic() {
        let r = solve(|x| Ok(x * x * x + x - 2.5), RootOptions::default()).unwrap();
        assert!(r.value.abs() <= 1e-8 * (1.0 + 2.5));
        assert!((r.x.powi(3) + r.x - 2.5).abs() < 1e-7);
    }

    #[test]
    fn grows_bracket_for_distant_root() {
        let r = solve(|x| Ok(x - 37.0), RootOptions::default()).unwrap();
        assert!((r.x - 37.0).abs() < 1e-6);
        let r = solve(|x| Ok((x + 5.5).tanh()), RootOptions::default()).unwrap();
        assert!((r.x + 5.5).abs() < 1e-7);
    }

    #[test]
    fn reports_trajectory_when_no_root() {
        match solve(|x| Ok(1.0 + x * x), RootOptions::default()) {
            Err(Error::TargetingNonConvergence { trajectory, .. }) => assert!(trajectory.len() > 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flat_derivative_falls_back_to_bisection() {
        // derivative vanishes at the start point
        let r = solve(|x| Ok(x.powi(3) - 0.2), RootOptions::default()).unwrap();
        assert!(r.value.abs() <= 1e-8 * 1.2);
        assert!((r.x - 0.2f64.cbrt()).abs() < 1e-6);
    }
}
