//! Derivative-free local minimization (Nelder–Mead simplex).

/// Termination settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evaluations: usize,
    /// Stop once the spread of objective values over the simplex is below this.
    pub f_tolerance: f64,
    /// ...and the simplex diameter (infinity norm) is below this.
    pub x_tolerance: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 500,
            f_tolerance: 1e-8,
            x_tolerance: 1e-6,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`. Non-finite objective values are treated
/// as `+∞`, so infeasible points are simply never accepted.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    if n == 0 {
        let v = eval(x0, &mut evaluations);
        return SimplexResult {
            x: Vec::new(),
            f: v,
            evaluations,
            converged: true,
        };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x, &mut evaluations);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evaluations < opts.max_evaluations {
        // stable sort keeps earlier vertices first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && worst.is_finite() {
            let spread = worst - best;
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread <= opts.f_tolerance * (1.0 + best.abs()) && diameter <= opts.x_tolerance {
                converged = true;
                break;
            }
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evaluations);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evaluations);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = vertex
                .0
                .iter()
                .zip(&x_best)
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            let v = eval(&x, &mut evaluations);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fbest) = simplex.swap_remove(0);
    SimplexResult {
        x,
        f: fbest,
        evaluations,
        converged,
    }
}
