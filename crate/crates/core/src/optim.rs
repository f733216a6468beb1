//! Small derivative-free minimizer.

/// Nelder–Mead settings.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_iterations: usize,
    /// Stop when the simplex spread in function value and extent fall below these.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            f_tol: 1e-15,
            x_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

impl NelderMead {
    /// Minimizes `f` from `start` with an axis-aligned initial simplex of edge `step`.
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64) -> Minimum {
        let n = start.len();
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for k in 0..n {
            let mut p = start.to_vec();
            p[k] += step;
            simplex.push(p);
        }
        let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut iterations = 0;
        while iterations < self.max_iterations {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let extent = simplex[1..]
                .iter()
                .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            if spread.abs() <= self.f_tol && extent <= self.x_tol {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let reflected = along(alpha);
            let f_r = f(&reflected);
            if f_r < values[0] {
                let expanded = along(gamma);
                let f_e = f(&expanded);
                if f_e < f_r {
                    simplex[n] = expanded;
                    values[n] = f_e;
                } else {
                    simplex[n] = reflected;
                    values[n] = f_r;
                }
            } else if f_r < values[n - 1] {
                simplex[n] = reflected;
                values[n] = f_r;
            } else {
                let contracted = if f_r < values[n] {
                    along(rho)
                } else {
                    along(-rho)
                };
                let f_c = f(&contracted);
                if f_c < values[n].min(f_r) {
                    simplex[n] = contracted;
                    values[n] = f_c;
                } else {
                    let best = simplex[0].clone();
                    for k in 1..=n {
                        for (x, b) in simplex[k].iter_mut().zip(&best) {
                            *x = b + sigma * (*x - b);
                        }
                        values[k] = f(&simplex[k]);
                    }
                }
            }
        }
        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap();
        Minimum {
            x: simplex[best].clone(),
            value: values[best],
            iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let m = NelderMead::default().minimize(f, &[-1.2, 1.0], 0.1);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn quadratic_bowl() {
        let f = |p: &[f64]| (p[0] - 3.0).powi(2) + 2.0 * (p[1] + 1.0).powi(2) + 0.5 * p[2] * p[2];
        let m = NelderMead::default().minimize(f, &[0.0, 0.0, 1.0], 0.5);
        assert!(m.value < 1e-12);
    }
}
