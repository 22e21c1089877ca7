use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use z2lgt::dynamics::integrate_trotter;
use z2lgt::state::{line_defect_state, sample_disorder};
use z2lgt::surface::{
    defect_mask, family_vicsek_collapse, height_function, height_stats, HeightRule, WidthCurve,
};
use z2lgt::{build_honeycomb, Boundary, ModelParams, Variant};

#[test]
fn line_defect_front_starts_flat_and_stays_bounded() {
    let lat = build_honeycomb(4, 6, Boundary::Periodic, Boundary::Open).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut fields = Vec::new();
    for _ in 0..3 {
        let d = sample_disorder(&lat, 0.1, &mut rng).unwrap();
        let p = ModelParams::new(1.0, 1.0, 10.0, d, Variant::WithMatter).with_t_end(40.0);
        let c = line_defect_state(&lat, &mut rng).unwrap();
        let times: Vec<f64> = (0..=40).map(f64::from).collect();
        let rec = integrate_trotter(&c, &lat, &p, &times).unwrap();
        let gauss = rec.gauss_series.unwrap();
        let mask = defect_mask(&gauss, 0.2).unwrap();
        let bottom: Vec<usize> = lat.row_vertices(0).collect();
        assert!(bottom.iter().all(|&j| mask[0][j]));
        assert_eq!(mask[0].iter().filter(|&&m| m).count(), bottom.len());
        for rule in [HeightRule::ClusterConnected, HeightRule::Topmost] {
            let h = height_function(&mask, &rec.times, &lat, rule).unwrap();
            assert_eq!(h.n_columns(), 2 * lat.n_cells_x);
            assert!(h.heights[0].iter().all(|&x| x == 0.0));
            for row in &h.heights {
                assert!(row
                    .iter()
                    .all(|&x| (0.0..=lat.height_extent()).contains(&x)));
            }
            if rule == HeightRule::ClusterConnected {
                fields.push(h);
            }
        }
    }
    let st = height_stats(&fields).unwrap();
    assert!(st.width.iter().all(|&w| w >= 0.0));
    assert_eq!(st.mean[0], 0.0);
}

fn noisy_curves(rng: &mut impl Rng, time_unit: f64) -> Vec<WidthCurve> {
    [20.0, 40.0, 80.0]
        .iter()
        .map(|&l: &f64| {
            let times: Vec<f64> = (0..80).map(|k| 10f64.powf(k as f64 / 20.0)).collect();
            let width = times
                .iter()
                .map(|t| {
                    let s = t / l.powf(1.5);
                    l.sqrt() * s.powf(1.0 / 3.0) / (1.0 + s.powf(1.0 / 3.0))
                        * (1.0 + 0.05 * rng.random_range(-1.0..1.0))
                })
                .collect();
            WidthCurve {
                l,
                times: times.iter().map(|t| t * time_unit).collect(),
                width,
            }
        })
        .collect()
}

#[test]
fn collapse_ignores_size_order_and_time_unit() {
    let curves = noisy_curves(&mut ChaCha8Rng::seed_from_u64(3), 1.0);
    let scaled = noisy_curves(&mut ChaCha8Rng::seed_from_u64(3), 7.5);
    let mut shuffled = curves.clone();
    shuffled.swap(0, 2);
    for (a, z) in [(0.5, 1.5), (0.5, 2.0), (1.0, 1.0)] {
        let r = family_vicsek_collapse(&curves, a, z).unwrap().residual;
        let r_shuffled = family_vicsek_collapse(&shuffled, a, z).unwrap().residual;
        let r_scaled = family_vicsek_collapse(&scaled, a, z).unwrap().residual;
        assert!((r - r_shuffled).abs() <= 1e-12 * r.max(1e-300));
        assert!(
            (r - r_scaled).abs() <= 1e-9 * r.max(1e-300),
            "{r} vs {r_scaled}"
        );
    }
    let best = family_vicsek_collapse(&curves, 0.5, 1.5).unwrap().residual;
    assert!(best < family_vicsek_collapse(&curves, 0.5, 2.0).unwrap().residual);
    assert!(best < family_vicsek_collapse(&curves, 1.0, 1.0).unwrap().residual);
}
