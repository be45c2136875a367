//! Unconstrained minimisation: BFGS with a Nelder–Mead fallback.

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Convergence threshold on the infinity norm of the gradient.
    pub grad_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, which returns the value and gradient or `None` where the
/// objective is undefined. Line-search failures hand over to Nelder–Mead
/// for a restart before BFGS resumes.
pub fn minimize<F>(f: F, x0: &[f64], opts: &OptimizeOptions) -> OptimizeResult
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = match f(&x) {
        Some(v) => v,
        None => {
            return OptimizeResult { x, value: f64::INFINITY, grad_norm: f64::INFINITY, iterations: 0, converged: false }
        }
    };
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut restarts = 0;
    let mut iter = 0;
    while iter < opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            return OptimizeResult { x, value: fx, grad_norm: inf_norm(&g), iterations: iter, converged: true };
        }
        iter += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&hinv[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            hinv = identity(n);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        if fresh {
            // scale the first step so its length is at most 1
            let len = dot(&dir, &dir).sqrt();
            if len > 1.0 {
                for d in &mut dir {
                    *d /= len;
                }
                slope /= len;
            }
        }
        match line_search(&f, &x, fx, slope, &dir) {
            Some((step, x_new, f_new, g_new)) => {
                let s: Vec<f64> = dir.iter().map(|d| d * step).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    if fresh {
                        let scale = sy / dot(&y, &y);
                        for v in &mut hinv {
                            *v *= scale;
                        }
                    }
                    bfgs_update(&mut hinv, &s, &y, sy);
                    fresh = false;
                }
                let small_change = (fx - f_new).abs() <= 1e-15 * (1.0 + fx.abs());
                x = x_new;
                fx = f_new;
                g = g_new;
                if small_change && inf_norm(&g) <= opts.grad_tol.sqrt() {
                    // stalled at round-off level near a stationary point
                    return OptimizeResult { x, value: fx, grad_norm: inf_norm(&g), iterations: iter, converged: true };
                }
            }
            None => {
                if restarts >= 3 {
                    break;
                }
                restarts += 1;
                let value_only = |p: &[f64]| f(p).map(|(v, _)| v).unwrap_or(f64::INFINITY);
                let (xn, fnm) = nelder_mead(value_only, &x, 400 * n.max(1), 1e-12);
                if fnm < fx {
                    if let Some((v, gn)) = f(&xn) {
                        x = xn;
                        fx = v;
                        g = gn;
                    }
                }
                hinv = identity(n);
                fresh = true;
            }
        }
    }
    let grad_norm = inf_norm(&g);
    OptimizeResult { x, value: fx, grad_norm, iterations: iter, converged: grad_norm <= opts.grad_tol }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

type Trial = (f64, Vec<f64>, f64, Vec<f64>);

/// Backtracking search for the Armijo condition, with one expansion attempt
/// when the unit step is accepted but the curvature condition fails.
fn line_search<F>(f: &F, x: &[f64], fx: f64, slope: f64, dir: &[f64]) -> Option<Trial>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let at = |t: f64| -> Option<(Vec<f64>, f64, Vec<f64>)> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let (v, g) = f(&xt)?;
        v.is_finite().then_some((xt, v, g))
    };
    let mut t = 1.0;
    let mut best: Option<Trial> = None;
    for _ in 0..60 {
        if let Some((xt, v, g)) = at(t) {
            if v <= fx + C1 * t * slope {
                let curv = dot(&g, dir);
                best = Some((t, xt, v, g));
                if curv >= C2 * slope || t < 1.0 {
                    break;
                }
                // sufficient decrease but still steep: try a longer step
                let t2 = t * 4.0;
                if let Some((x2, v2, g2)) = at(t2) {
                    if v2 <= fx + C1 * t2 * slope && v2 < best.as_ref().map_or(f64::INFINITY, |b| b.2) {
                        best = Some((t2, x2, v2, g2));
                    }
                }
                break;
            }
            // quadratic interpolation of the step, safeguarded
            let denom = 2.0 * (v - fx - slope * t);
            let tq = if denom > 0.0 { -slope * t * t / denom } else { t * 0.5 };
            t = tq.clamp(0.1 * t, 0.5 * t);
        } else {
            t *= 0.2;
        }
    }
    best
}

/// Nelder–Mead simplex search returning the best vertex and its value.
pub fn nelder_mead<F>(f: F, x0: &[f64], max_evals: usize, tol: f64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i].abs() > 1e-3 { 0.05 * p[i].abs() } else { 0.05 };
        let v = f(&p);
        simplex.push((p, v));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= tol * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64).collect();
        let toward = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + coef * (w - c)).collect()
        };
        let xr = toward(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = toward(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = toward(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    vertex.1 = f(&p);
                    vertex.0 = p;
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
