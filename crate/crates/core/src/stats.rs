//! Small statistical helpers used by tests and reports.

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_basics() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[5.0, 6.0]), 1.0);
        assert!((ks_statistic(&[0.0, 2.0], &[1.0, 2.0]) - 0.5).abs() < 1e-12);
        assert_eq!(ks_statistic(&[], &[1.0]), 1.0);
    }

    #[test]
    fn ks_handles_ties() {
        // F_a jumps to 1 at 1.0, F_b reaches 0.5 there
        assert!((ks_statistic(&[1.0, 1.0], &[1.0, 2.0]) - 0.5).abs() < 1e-12);
    }
}
