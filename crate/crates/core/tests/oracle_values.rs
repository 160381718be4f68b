use approx::assert_relative_eq;
use permshield::designs::paired_design;
use permshield::oracle::exact_estimates;
use permshield::perm::RowSet;

fn exact(n: usize, p: usize, rows: &[usize]) -> (f64, f64, f64, usize) {
    let d = paired_design(n, p).unwrap();
    let e = exact_estimates(&d.x, &d.z, &RowSet::from_one_based(n, rows).unwrap(), 0.05).unwrap();
    (e.mu_exact, e.safety_exact, e.d_quantile_exact, e.group_size)
}

#[test]
fn paired_six_two_fix_four() {
    let (mu, safety, q, size) = exact(6, 2, &[4]);
    assert_eq!(size, 120);
    assert_relative_eq!(mu, 31.0 / 20.0, max_relative = 1e-12);
    assert_relative_eq!(safety, 2.0 / 5.0, max_relative = 1e-12);
    assert_eq!(q, 0.0);
}

#[test]
fn paired_seven_two_fix_four_meets_bound_exactly() {
    let (mu, safety, q, size) = exact(7, 2, &[4]);
    assert_eq!(size, 720);
    assert_relative_eq!(mu, 49.0 / 30.0, max_relative = 1e-12);
    assert_relative_eq!(safety, 2.0 / 6.0, max_relative = 1e-12);
    assert_eq!(q, 0.0);
}

#[test]
fn paired_seven_three_fix_two_five() {
    let (mu, safety, _, size) = exact(7, 3, &[2, 5]);
    assert_eq!(size, 120);
    assert_relative_eq!(mu, 31.0 / 20.0, max_relative = 1e-12);
    assert_relative_eq!(safety, 2.0 / 5.0, max_relative = 1e-12);
}

#[test]
fn paired_eight_two_unrestricted() {
    let (mu, safety, q, size) = exact(8, 2, &[]);
    assert_eq!(size, 40320);
    assert_relative_eq!(mu, 107.0 / 56.0, max_relative = 1e-12);
    assert_relative_eq!(safety, 11.0 / 84.0, max_relative = 1e-12);
    assert_eq!(q, 0.0);
}

#[test]
fn full_row_set_leaves_one_element() {
    let d = paired_design(6, 2).unwrap();
    let e = exact_estimates(&d.x, &d.z, &RowSet::full(6), 0.05).unwrap();
    assert_eq!((e.mu_exact, e.safety_exact, e.group_size), (0.0, 0.0, 1));
}
