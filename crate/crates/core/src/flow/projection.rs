/// Euclidean projection of `v` onto `{x : ||x||_1 <= radius}`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let p = project_capped_simplex(&abs, radius);
    p.into_iter().zip(v).map(|(a, x)| a.copysign(*x)).collect()
}

/// Projection of a non-negative vector onto `{x >= 0 : sum(x) <= radius}`.
pub fn project_capped_simplex(a: &[f64], radius: f64) -> Vec<f64> {
    let radius = radius.max(0.0);
    let total: f64 = a.iter().sum();
    if total <= radius {
        return a.to_vec();
    }
    let threshold = simplex_threshold(a, radius);
    a.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

/// Threshold `theta` with `sum(max(a - theta, 0)) = radius`, assuming the sum
/// of `a` exceeds `radius`.
fn simplex_threshold(a: &[f64], radius: f64) -> f64 {
    let mut sorted = a.to_vec();
    sorted.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut theta = sorted[0] - radius;
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let candidate = (cumsum - radius) / (k + 1) as f64;
        if x - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}
