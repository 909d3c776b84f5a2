use aggdiff::cartesian::{evolve_3d, rearrange_3d, CartesianField, CartesianOptions};
use aggdiff::{Kernel, Params};

fn two_balls(n: usize, h: f64) -> CartesianField {
    CartesianField::sample(n, h, 2, |x| {
        let a = (x[0] - 1.0).powi(2) + x[1] * x[1] + x[2] * x[2];
        let b = (x[0] + 1.0).powi(2) + x[1] * x[1] + x[2] * x[2];
        if a < 0.64 || b < 0.64 { 1.0 } else { 0.0 }
    })
    .unwrap()
}

#[test]
fn octahedral_symmetry_is_preserved() {
    let p = Params::new(2.0, 3).unwrap();
    // symmetric under the reflections of each axis and under y <-> z
    let f0 = two_balls(24, 0.3);
    assert_eq!(f0.values(), f0.transformed([0, 2, 1], [true, false, true]).values());
    let mut opts = CartesianOptions::new(0.05);
    opts.snapshot_times = vec![0.05];
    let traj = evolve_3d(f0.clone(), &Kernel::Newtonian, &p, &opts).unwrap();
    let f = &traj.final_field;
    let scale = f.sup();
    for flip in [[true, false, false], [false, true, false], [false, false, true]] {
        let g = f.transformed([0, 1, 2], flip);
        let gap = f.values().iter().zip(g.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-12 * scale, "{flip:?}: {gap}");
    }
    let swapped = f.transformed([0, 2, 1], [false; 3]);
    let gap = f.values().iter().zip(swapped.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-12 * scale, "{gap}");
    let drift = (f.total_mass() - f0.total_mass()).abs();
    assert!(drift <= 1e-12 * f0.total_mass(), "{drift}");
}

#[test]
fn rearrangement_of_field_is_equimeasurable() {
    let f = two_balls(20, 0.25);
    let star = rearrange_3d(&f);
    assert!((star.total_mass() - f.total_mass()).abs() < 1e-12 * f.total_mass());
    assert_eq!(star.sup(), f.sup());
}
