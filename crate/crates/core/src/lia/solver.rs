//! Least squares over the probability simplex.
//!
//! Minimises `f(w) = ‖A w − b‖² / M` subject to `w ≥ 0`, `Σ w = 1`, where
//! `A` has `m` columns of length `M`. Accelerated projected gradient gives
//! a first iterate; for small `m` every support is then solved exactly by
//! equality-constrained QR and the best feasible candidate wins.

/// Largest column count for which supports are enumerated exhaustively.
pub const MAX_ENUMERATED_COLUMNS: usize = 12;

const RANK_TOLERANCE: f64 = 1e-12;
const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once one step changes the objective by less than this.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `‖A w − b‖² / M` evaluated directly from the columns.
pub fn objective(columns: &[Vec<f64>], b: &[f64], w: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (row, &target) in b.iter().enumerate() {
        let fit: f64 = columns.iter().zip(w).map(|(c, wj)| c[row] * wj).sum();
        sum += (fit - target).powi(2);
    }
    sum / b.len() as f64
}

/// Solve the simplex-constrained least squares problem.
pub fn solve_simplex_lsq(columns: &[Vec<f64>], b: &[f64], options: &SolverOptions) -> Solution {
    let m = columns.len();
    assert!(m > 0, "at least one column required");
    let (w, iterations) = projected_gradient(columns, b, options);
    let mut best = Solution {
        objective: objective(columns, b, &w),
        weights: w,
        iterations,
    };
    let supports: Vec<Vec<usize>> = if m <= MAX_ENUMERATED_COLUMNS {
        (1u32..(1 << m))
            .map(|mask| (0..m).filter(|j| mask & (1 << j) != 0).collect())
            .collect()
    } else {
        vec![(0..m).filter(|&j| best.weights[j] > 1e-10).collect()]
    };
    let mut ordered = supports;
    ordered.sort_by_key(Vec::len);
    for support in ordered {
        let Some(w) = solve_on_support(columns, b, &support) else {
            continue;
        };
        let obj = objective(columns, b, &w);
        if obj < best.objective - (1e-12 * best.objective).max(1e-18) {
            best.weights = w;
            best.objective = obj;
        }
    }
    best
}

fn gram(columns: &[Vec<f64>], b: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = columns.len();
    let scale = 1.0 / b.len() as f64;
    let mut g = vec![vec![0.0; m]; m];
    let mut c = vec![0.0; m];
    for i in 0..m {
        for j in i..m {
            let v = columns[i]
                .iter()
                .zip(&columns[j])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                * scale;
            g[i][j] = v;
            g[j][i] = v;
        }
        c[i] = columns[i].iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * scale;
    }
    (g, c)
}

fn quadratic(g: &[Vec<f64>], c: &[f64], w: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..w.len() {
        q += w[i] * (g[i].iter().zip(w).map(|(x, y)| x * y).sum::<f64>() - 2.0 * c[i]);
    }
    q
}

/// FISTA with adaptive restart on the Gram form. Returns the iterate and
/// the number of iterations taken.
fn projected_gradient(
    columns: &[Vec<f64>],
    b: &[f64],
    options: &SolverOptions,
) -> (Vec<f64>, usize) {
    let m = columns.len();
    let (g, c) = gram(columns, b);
    // Gershgorin bound on λ_max(G); the gradient 2(Gw − c) is 2λ_max-Lipschitz.
    let lambda = g
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut w = vec![1.0 / m as f64; m];
    if lambda == 0.0 {
        return (w, 0);
    }
    let step = 1.0 / (2.0 * lambda);
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut f = quadratic(&g, &c, &w);
    for it in 1..=options.max_iterations {
        let grad: Vec<f64> = (0..m)
            .map(|i| 2.0 * (g[i].iter().zip(&y).map(|(x, v)| x * v).sum::<f64>() - c[i]))
            .collect();
        let z: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - step * gi).collect();
        let w_next = project_to_simplex(&z);
        let f_next = quadratic(&g, &c, &w_next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if f_next > f {
            // restart momentum
            y = w.clone();
            t = 1.0;
            continue;
        }
        let beta = (t - 1.0) / t_next;
        y = w_next
            .iter()
            .zip(&w)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        let change = f - f_next;
        w = w_next;
        f = f_next;
        t = t_next;
        if change < options.tolerance && it > 1 {
            return (w, it);
        }
    }
    (w, options.max_iterations)
}

/// Minimise over `{w : w_j = 0 off support, Σ w = 1}`; `None` when the
/// reduced problem is rank deficient or the minimiser leaves the simplex.
fn solve_on_support(columns: &[Vec<f64>], b: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let m = columns.len();
    let mut w = vec![0.0; m];
    let (&last, rest) = support.split_last()?;
    if rest.is_empty() {
        w[last] = 1.0;
        return Some(w);
    }
    let anchor = &columns[last];
    let reduced: Vec<Vec<f64>> = rest
        .iter()
        .map(|&j| columns[j].iter().zip(anchor).map(|(x, a)| x - a).collect())
        .collect();
    let r: Vec<f64> = b.iter().zip(anchor).map(|(x, a)| x - a).collect();
    let x = householder_lstsq(reduced, r)?;
    let mut total = 0.0;
    for (&j, &xj) in rest.iter().zip(&x) {
        if xj < -FEASIBILITY_SLACK {
            return None;
        }
        w[j] = xj.max(0.0);
        total += w[j];
    }
    let w_last = 1.0 - x.iter().sum::<f64>();
    if w_last < -FEASIBILITY_SLACK {
        return None;
    }
    w[last] = w_last.max(0.0);
    total += w[last];
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

/// `argmin ‖D x − r‖` for column-major `D` by Householder QR.
fn householder_lstsq(mut cols: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let n = cols.len();
    let rows = r.len();
    if n > rows {
        return None;
    }
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let mut diag = vec![0.0; n];
    for j in 0..n {
        let norm = cols[j][j..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= RANK_TOLERANCE * scale {
            return None;
        }
        let alpha = if cols[j][j] > 0.0 { -norm } else { norm };
        let mut v = cols[j][j..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv > 0.0 {
            let reflect = |target: &mut [f64]| {
                let s = 2.0 * v.iter().zip(target.iter()).map(|(a, b)| a * b).sum::<f64>() / vv;
                target.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
            };
            for col in cols.iter_mut().skip(j + 1) {
                reflect(&mut col[j..]);
            }
            reflect(&mut r[j..]);
        }
        diag[j] = alpha;
    }
    let mut x = vec![0.0; n];
    for j in (0..n).rev() {
        let mut s = r[j];
        for l in j + 1..n {
            s -= cols[l][j] * x[l];
        }
        x[j] = s / diag[j];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[1.0, 1.0, 1.0]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = project_to_simplex(&[-1.0, 0.5, 0.2]);
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.65).abs() < 1e-15 && (p[2] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn lstsq_exact_system() {
        let cols = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let x = householder_lstsq(cols, vec![2.0, 3.0, 5.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
        assert!(householder_lstsq(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![1.0, 0.0]).is_none());
    }

    #[test]
    fn interior_optimum_of_two_points() {
        // Best convex combination of (1,0) and (0,1) to approximate (0.3,0.7).
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = solve_simplex_lsq(&cols, &[0.3, 0.7], &SolverOptions::default());
        assert!((s.weights[0] - 0.3).abs() < 1e-14);
        assert!(s.objective < 1e-28);
    }

    #[test]
    fn vertex_optimum() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = solve_simplex_lsq(&cols, &[2.0, -1.0], &SolverOptions::default());
        assert_eq!(s.weights, vec![1.0, 0.0]);
        assert!((s.objective - 1.0).abs() < 1e-15);
    }
}
