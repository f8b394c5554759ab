//! Nelder-Mead simplex minimization.
//!
//! Small, dependency-free, and tolerant of objectives that return +inf or NaN
//! for invalid parameter regions (such values rank as worst, so the simplex
//! backs away from them).

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_iters: usize,
    /// Relative spread of objective values across the simplex at which the
    /// search is declared converged.
    pub ftol_rel: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iters: 1000,
            ftol_rel: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iters: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimize `f` starting from `x0`, with an initial simplex spanned by
/// per-coordinate displacements `steps` (must be non-zero).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len(), "one step per coordinate");
    let n = x0.len();
    assert!(n > 0);

    // standard coefficients: reflection, expansion, contraction, shrink
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();
    let mut iters = 0;
    let mut converged = false;

    while iters < opts.max_iters {
        iters += 1;

        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = 2.0 * (fvals[worst] - fvals[best]).abs()
            / (fvals[worst].abs() + fvals[best].abs() + 1e-300);
        if spread.is_finite() && spread < opts.ftol_rel {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; n];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for k in 0..n {
                centroid[k] += v[k] / n as f64;
            }
        }

        let reflect: Vec<f64> = (0..n)
            .map(|k| centroid[k] + alpha * (centroid[k] - simplex[worst][k]))
            .collect();
        let f_reflect = sanitize(f(&reflect));

        if f_reflect < fvals[best] {
            let expand: Vec<f64> = (0..n)
                .map(|k| centroid[k] + gamma * (reflect[k] - centroid[k]))
                .collect();
            let f_expand = sanitize(f(&expand));
            if f_expand < f_reflect {
                simplex[worst] = expand;
                fvals[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                fvals[worst] = f_reflect;
            }
        } else if f_reflect < fvals[second_worst] {
            simplex[worst] = reflect;
            fvals[worst] = f_reflect;
        } else {
            // contraction: outside if the reflection improved on the worst,
            // inside otherwise
            let toward: &[f64] = if f_reflect < fvals[worst] {
                &reflect
            } else {
                &simplex[worst]
            };
            let contract: Vec<f64> = (0..n)
                .map(|k| centroid[k] + rho * (toward[k] - centroid[k]))
                .collect();
            let f_contract = sanitize(f(&contract));
            if f_contract < fvals[worst].min(f_reflect) {
                simplex[worst] = contract;
                fvals[worst] = f_contract;
            } else {
                // shrink toward the best vertex
                let best_vertex = simplex[best].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i == best {
                        continue;
                    }
                    for k in 0..n {
                        v[k] = best_vertex[k] + sigma * (v[k] - best_vertex[k]);
                    }
                }
                for i in 0..=n {
                    if i != best {
                        fvals[i] = sanitize(f(&simplex[i]));
                    }
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if fvals[i] < fvals[best] {
            best = i;
        }
    }
    SimplexResult {
        x: simplex[best].clone(),
        fx: fvals[best],
        iters,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 5.0;
        // the stopping rule is on relative f-spread, so position accuracy
        // needs a tolerance well below (wanted precision)² / f(min)
        let opts = SimplexOptions {
            max_iters: 2000,
            ftol_rel: 1e-14,
        };
        let r = nelder_mead(f, &[0.0, 0.0], &[0.5, 0.5], &opts);
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-4, "x0 = {}", r.x[0]);
        assert!((r.x[1] + 1.0).abs() < 1e-4, "x1 = {}", r.x[1]);
        assert!((r.fx - 5.0).abs() < 1e-7);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let opts = SimplexOptions {
            max_iters: 5000,
            ftol_rel: 1e-12,
        };
        let r = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
        assert!((r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn backs_away_from_infinite_regions() {
        // objective is +inf for x < 0, minimized at (1, 0); the initial
        // simplex pokes into the forbidden region
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 1.0).powi(2) + x[1].powi(2) + 5.0
            }
        };
        let opts = SimplexOptions {
            max_iters: 2000,
            ftol_rel: 1e-14,
        };
        let r = nelder_mead(f, &[0.5, 0.5], &[-2.0, 1.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-4, "x0 = {}", r.x[0]);
        assert!(r.x[1].abs() < 1e-4, "x1 = {}", r.x[1]);
    }

    #[test]
    fn respects_iteration_cap() {
        let f = |x: &[f64]| x[0].powi(2);
        let opts = SimplexOptions {
            max_iters: 3,
            ftol_rel: 0.0,
        };
        let r = nelder_mead(f, &[100.0], &[1.0], &opts);
        assert_eq!(r.iters, 3);
        assert!(!r.converged);
    }
}
