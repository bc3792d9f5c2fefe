//! Small dense-vector helpers shared across the crate. Embeddings are plain
//! `&[f32]` / `&[f64]` slices; nothing here allocates unless it has to.

pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_f32(a: &[f32]) -> f32 {
    dot_f32(a, a).sqrt()
}

pub fn norm_f64(a: &[f64]) -> f64 {
    dot_f64(a, a).sqrt()
}

/// L2-normalize in place. A zero vector is left untouched and `false` is returned.
pub fn normalize_f32(a: &mut [f32]) -> bool {
    let n = norm_f32(a);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for x in a.iter_mut() {
        *x /= n;
    }
    true
}

pub fn normalize_f64(a: &mut [f64]) -> bool {
    let n = norm_f64(a);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for x in a.iter_mut() {
        *x /= n;
    }
    true
}

pub fn squared_dist_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn cosine_f32(a: &[f32], b: &[f32]) -> f32 {
    let na = norm_f32(a);
    let nb = norm_f32(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot_f32(a, b) / (na * nb)
}
