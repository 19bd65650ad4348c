//! Independent oracles shared by the integration suites. Everything here is
//! deliberately reimplemented from first principles (dense enumeration, grid
//! quadrature, brute-force search) rather than calling back into the library,
//! so agreement is evidence and not tautology.
#![allow(dead_code)]

use banditlp::lp::AllocationProblem;
use rand::Rng;

/// Solves A x = b by Gaussian elimination with partial pivoting. Returns
/// None when the system is (numerically) singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// All linear constraints of an allocation problem in `a x <= b` form over
/// the flattened variable vector (row-major over users then items): box
/// bounds, global rows, and user-cap rows.
fn constraint_rows(problem: &AllocationProblem) -> Vec<(Vec<f64>, f64)> {
    let n = problem.num_users * problem.num_items;
    let idx = |u: usize, i: usize| u * problem.num_items + i;
    let mut rows = Vec::new();
    for j in 0..n {
        let mut lo = vec![0.0; n];
        lo[j] = -1.0;
        rows.push((lo, 0.0)); // -x_j <= 0
        let mut hi = vec![0.0; n];
        hi[j] = 1.0;
        rows.push((hi, 1.0)); // x_j <= 1
    }
    for row in &problem.rows {
        let mut a = vec![0.0; n];
        for &(u, i, coef) in &row.entries {
            a[idx(u, i)] += coef;
        }
        rows.push((a, row.bound));
    }
    if let Some(caps) = &problem.user_caps {
        for u in 0..problem.num_users {
            let mut a = vec![0.0; n];
            for i in 0..problem.num_items {
                a[idx(u, i)] = caps.weights[u][i];
            }
            rows.push((a, caps.kappa[u]));
        }
    }
    rows
}

/// Exhaustive vertex enumeration of the linear program min c'x over the
/// problem's feasible polytope (the gamma term is ignored; callers use tiny
/// gamma as a linear-program proxy). Every vertex is the solution of some n
/// linearly independent active constraints, so enumerating all n-subsets of
/// constraint rows visits every vertex. Returns (objective, x) of the best
/// feasible vertex, or None when no subset yields a feasible point.
pub fn vertex_enumeration_optimum(problem: &AllocationProblem) -> Option<(f64, Vec<f64>)> {
    let rows = constraint_rows(problem);
    let n = problem.num_users * problem.num_items;
    let c: Vec<f64> = problem.objective.iter().flatten().copied().collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = subset.iter().map(|&r| rows[r].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&r| rows[r].1).collect();
        if let Some(x) = solve_dense(a, b) {
            if is_feasible(&rows, &x) {
                let obj: f64 = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
                if best.as_ref().is_none_or(|(bo, _)| obj < *bo) {
                    best = Some((obj, x));
                }
            }
        }
        if !next_combination(&mut subset, rows.len()) {
            break;
        }
    }
    best
}

/// Every feasible vertex of the problem's polytope, for weak-duality checks.
pub fn feasible_vertices(problem: &AllocationProblem) -> Vec<Vec<f64>> {
    let rows = constraint_rows(problem);
    let n = problem.num_users * problem.num_items;
    let mut found = Vec::new();
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = subset.iter().map(|&r| rows[r].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&r| rows[r].1).collect();
        if let Some(x) = solve_dense(a, b) {
            if is_feasible(&rows, &x) {
                found.push(x);
            }
        }
        if !next_combination(&mut subset, rows.len()) {
            break;
        }
    }
    found
}

fn is_feasible(rows: &[(Vec<f64>, f64)], x: &[f64]) -> bool {
    rows.iter().all(|(a, b)| {
        let lhs: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
        lhs <= b + 1e-9 * (1.0 + b.abs())
    })
}

/// Advances `subset` to the next k-combination of {0..m}; false when done.
fn next_combination(subset: &mut [usize], m: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < m - (k - i) {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Posterior moments of the single weight of a bias-free 1-D logistic model
/// y ~ Bernoulli(sigmoid(w z)), w ~ N(0, sigma0_sq), computed by dense grid
/// quadrature over w in [-10, 10].
pub fn quadrature_weight_posterior(data: &[(f64, f64)], sigma0_sq: f64) -> (f64, f64) {
    let n = 40_001;
    let (lo, hi) = (-10.0, 10.0);
    let step = (hi - lo) / (n - 1) as f64;
    let log_post = |w: f64| -> f64 {
        let mut lp = -w * w / (2.0 * sigma0_sq);
        for &(z, y) in data {
            let f = w * z;
            // log sigmoid(f) = -log(1+e^-f); log (1-sigmoid(f)) = -log(1+e^f)
            lp += if y > 0.5 {
                -(1.0 + (-f).exp()).ln()
            } else {
                -(1.0 + f.exp()).ln()
            };
        }
        lp
    };
    let logs: Vec<f64> = (0..n).map(|i| log_post(lo + step * i as f64)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean: f64 = weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * (lo + step * i as f64))
        .sum::<f64>()
        / total;
    let var: f64 = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let d = lo + step * i as f64 - mean;
            w * d * d
        })
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Exact isotonic least-squares error by exhaustive enumeration: equal scores
/// must share a fitted value (step functions of the score), so ties are
/// grouped first; every partition of the groups into contiguous blocks whose
/// means are nondecreasing is a candidate, and the best SSE among them is the
/// optimum. Only practical for short inputs.
pub fn exhaustive_isotonic_sse(scores: &[f64], labels: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // (count, sum, sum of squares) per tie-group in ascending score order.
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    let mut last_score = f64::NAN;
    for &i in &order {
        if scores[i] == last_score {
            let g = groups.last_mut().unwrap();
            g.0 += 1.0;
            g.1 += labels[i];
            g.2 += labels[i] * labels[i];
        } else {
            last_score = scores[i];
            groups.push((1.0, labels[i], labels[i] * labels[i]));
        }
    }
    let g = groups.len();
    let mut best = f64::INFINITY;
    // Bit b of `mask` set = a block boundary after group b.
    for mask in 0u32..(1 << (g - 1)) {
        let mut sse = 0.0;
        let mut prev_mean = f64::NEG_INFINITY;
        let mut ok = true;
        let mut start = 0;
        for end in 0..g {
            let boundary = end == g - 1 || mask & (1 << end) != 0;
            if !boundary {
                continue;
            }
            let (mut cnt, mut sum, mut sq) = (0.0, 0.0, 0.0);
            for grp in &groups[start..=end] {
                cnt += grp.0;
                sum += grp.1;
                sq += grp.2;
            }
            let mean = sum / cnt;
            if mean < prev_mean {
                ok = false;
                break;
            }
            prev_mean = mean;
            sse += sq - sum * sum / cnt;
            start = end + 1;
        }
        if ok && sse < best {
            best = sse;
        }
    }
    best
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Writes a logged-bandit CSV (user_id,item_id,f0..f{d-1},reward) whose click
/// probabilities are a logistic function of a user-feature/item-direction
/// score, so the reward surface is learnable from the features. Items are
/// given distinct base rates so the top-CTR slice is stable.
pub fn write_logged_csv(
    path: &std::path::Path,
    users: usize,
    items: usize,
    dim: usize,
    rows_per_user: usize,
    seed: u64,
) {
    let mut rng = seeds_stream(seed);
    let dirs: Vec<Vec<f64>> = (0..items)
        .map(|_| (0..dim).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let mut out = String::new();
    out.push_str("user_id,item_id");
    for f in 0..dim {
        out.push_str(&format!(",f{f}"));
    }
    out.push_str(",reward\n");
    for u in 0..users {
        let feats: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
        for _ in 0..rows_per_user {
            let i = rng.random_range(0..items);
            let score: f64 = feats.iter().zip(&dirs[i]).map(|(a, b)| a * b).sum();
            let base = -1.5 + 2.5 * (i as f64 + 0.5) / items as f64;
            let p = 1.0 / (1.0 + (-(base + 0.8 * score)).exp());
            let reward = u8::from(rng.random::<f64>() < p);
            out.push_str(&format!("{u},{i}"));
            for f in &feats {
                out.push_str(&format!(",{f}"));
            }
            out.push_str(&format!(",{reward}\n"));
        }
    }
    std::fs::write(path, out).unwrap();
}

fn seeds_stream(seed: u64) -> impl Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Boxed Muller keeps the oracle free of rand_distr.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Mean and half-width of a 95% normal-approximation confidence interval.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}
