//! Small dense-vector helpers shared by the objectives and the optimizers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn scaled(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Cosine similarity between two nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// `1 - cos(a, b)` computed as half the squared chord between the unit
/// directions, which keeps full relative precision for nearly colinear
/// vectors where `1 - dot/(|a||b|)` cancels catastrophically.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    let chord: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x / na - y / nb;
            d * d
        })
        .sum();
    (0.5 * chord).clamp(0.0, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_distance_matches_naive_form() {
        let a = [1.0, 2.0, -0.5];
        let b = [0.3, -1.0, 2.0];
        let naive = 1.0 - cosine(&a, &b);
        assert!((cosine_distance(&a, &b) - naive).abs() < 1e-14);
    }

    #[test]
    fn cosine_distance_resolves_tiny_angles() {
        let eps = 1e-9;
        let a = [1.0, 0.0];
        let b = [1.0, eps];
        // 1 - cos(eps) = eps^2 / 2 to leading order
        let d = cosine_distance(&a, &b);
        assert!((d / (0.5 * eps * eps) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn opposite_vectors_have_distance_two() {
        assert!((cosine_distance(&[1.0, 1.0], &[-2.0, -2.0]) - 2.0).abs() < 1e-15);
    }
}
