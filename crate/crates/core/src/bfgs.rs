//! Quasi-Newton (BFGS) minimization with Armijo backtracking.

use crate::simplex::Minimum;

#[derive(Clone, Copy, Debug)]
pub struct Bfgs {
    /// Budget in objective-plus-gradient evaluations.
    pub max_evaluations: usize,
    /// Stop when the largest gradient component falls below this.
    pub g_tol: f64,
    /// Stop when an accepted step lowers the value by less than this.
    pub f_tol: f64,
}

impl Default for Bfgs {
    fn default() -> Self {
        Self {
            max_evaluations: 5_000,
            g_tol: 1e-10,
            f_tol: 1e-15,
        }
    }
}

impl Bfgs {
    /// `fg` returns the value and gradient at a point.
    pub fn minimize<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(&self, mut fg: F, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut evals = 1usize;
        let mut x = start.to_vec();
        let (mut fx, mut g) = fg(&x);
        let mut hinv = identity(n);

        while evals < self.max_evaluations && fx.is_finite() && g.iter().fold(0.0f64, |m, v| m.max(v.abs())) > self.g_tol {
            let mut p: Vec<f64> = hinv.iter().map(|row| -dot(row, &g)).collect();
            let mut slope = dot(&g, &p);
            if slope >= 0.0 {
                hinv = identity(n);
                p = g.iter().map(|v| -v).collect();
                slope = dot(&g, &p);
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + step * b).collect();
                let (fnew, gn) = fg(&xn);
                evals += 1;
                if fnew <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gn));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, fnew, gn)) = accepted else { break };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-18 {
                let hy: Vec<f64> = hinv.iter().map(|row| dot(row, &y)).collect();
                let scale = (sy + dot(&y, &hy)) / (sy * sy);
                for i in 0..n {
                    for j in 0..n {
                        hinv[i][j] += scale * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                    }
                }
            }
            let done = fx - fnew < self.f_tol;
            x = xn;
            fx = fnew;
            g = gn;
            if done {
                break;
            }
        }
        Minimum {
            x,
            value: fx,
            evaluations: evals,
        }
    }
}

/// Central-difference gradient, for objectives without an analytic one.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}
