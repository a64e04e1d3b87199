//! Exact optimal assignment, used as a slow reference for W1 estimates.

use crate::nn::Matrix;

use super::MetricError;

/// Minimum total cost of a perfect matching on a square cost matrix
/// (Hungarian algorithm with potentials, `O(n^3)`). Returns the cost and the
/// column assigned to each row.
pub fn exact_assignment_cost(cost: &Matrix) -> Result<(f64, Vec<usize>), MetricError> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(MetricError::InvalidArgument(format!(
            "cost matrix must be square, got {}x{}",
            n,
            cost.cols()
        )));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    // One-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok((total, assignment))
}

/// Exact empirical W1 between equal-size point sets under Euclidean cost.
pub fn exact_wasserstein(a: &Matrix, b: &Matrix) -> Result<f64, MetricError> {
    if a.rows() != b.rows() {
        return Err(MetricError::CountMismatch {
            left: a.rows(),
            right: b.rows(),
        });
    }
    if a.cols() != b.cols() {
        return Err(MetricError::DimMismatch {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    let n = a.rows();
    if n == 0 {
        return Err(MetricError::InvalidArgument("empty samples".to_string()));
    }
    let mut cost = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d: f64 = a
                .row_slice(i)
                .iter()
                .zip(b.row_slice(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            cost.set(i, j, d.sqrt());
        }
    }
    Ok(exact_assignment_cost(&cost)?.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn matches_brute_force() {
        let cost = Matrix::from_rows(&[
            vec![4.0, 1.0, 3.0, 2.5],
            vec![2.0, 0.0, 5.0, 1.0],
            vec![3.0, 2.0, 2.0, 7.0],
            vec![1.5, 4.0, 0.5, 3.0],
        ]);
        let brute = permutations(4)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let (got, assignment) = exact_assignment_cost(&cost).unwrap();
        assert!((got - brute).abs() < 1e-12);
        let mut seen = assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn one_dimensional_agrees_with_sorting() {
        let a = Matrix::column(&[0.3, -1.2, 2.0, 0.9, -0.1]);
        let b = Matrix::column(&[1.1, 0.0, -2.0, 0.4, 0.7]);
        let exact = exact_wasserstein(&a, &b).unwrap();
        let sorted = super::super::wasserstein_1d(a.as_slice(), b.as_slice()).unwrap();
        assert!((exact - sorted).abs() < 1e-12);
    }
}
