//! Geometry and killing properties checked over the whole shape catalog.

use proptest::prelude::*;
use semilin::geometry::{Domain, Shape};
use semilin::path::{PathConfig, WalkState, Walker};
use semilin::rng::stream_rng;
use semilin::stats::parallel_estimate;

fn catalog() -> Vec<Domain> {
    let ball2 = Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 };
    let slab = Shape::Box { lo: vec![-0.5, -2.0], hi: vec![0.5, 2.0] };
    vec![
        Domain::unit_ball(2),
        Domain::unit_ball(3),
        Domain::ball(vec![0.3, -0.2], 0.7).unwrap(),
        Domain::cube(vec![-1.0, -0.5], vec![1.0, 0.5]).unwrap(),
        Domain::cube(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap(),
        Domain::annulus(vec![0.0, 0.0], 0.3, 1.0).unwrap(),
        Domain::new(Shape::Intersection(vec![ball2.clone(), slab.clone()])).unwrap(),
        Domain::new(Shape::Difference(Box::new(ball2), Box::new(Shape::Ball { center: vec![0.5, 0.0], radius: 0.25 })))
            .unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn contains_agrees_with_the_distance_sign(which in 0usize..8, coords in prop::collection::vec(-1.5f64..1.5, 3)) {
        let dom = &catalog()[which];
        let x = &coords[..dom.dimension()];
        let sd = dom.signed_distance(x).unwrap();
        prop_assert_eq!(dom.contains(x).unwrap(), sd > 0.0);
    }

    #[test]
    fn distance_is_one_lipschitz(which in 0usize..8, a in prop::collection::vec(-1.5f64..1.5, 3), b in prop::collection::vec(-1.5f64..1.5, 3)) {
        let dom = &catalog()[which];
        let d = dom.dimension();
        let gap = a[..d].iter().zip(&b[..d]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!((dom.sdf(&a[..d]) - dom.sdf(&b[..d])).abs() <= gap * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn sampled_points_lie_strictly_inside_the_bounding_sphere(which in 0usize..8, seed in 0u64..1000) {
        let dom = &catalog()[which];
        let mut rng = stream_rng(seed, 3);
        let x = dom.sample_interior(&mut rng).unwrap();
        let sd = dom.signed_distance(&x).unwrap();
        prop_assert!(sd > 0.0 && sd <= dom.bounding_radius(), "sd {}", sd);
    }
}

#[test]
fn mean_lifetime_respects_the_exit_time_bound_on_every_shape() {
    for (i, dom) in catalog().iter().enumerate() {
        let cfg = PathConfig::for_domain(dom, 1e-3, 40 + i as u64).unwrap();
        let walker = Walker::new(dom, &cfg);
        let mut rng = stream_rng(77, i as u64);
        for _ in 0..3 {
            let x = dom.sample_interior(&mut rng).unwrap();
            let e = parallel_estimate(2000, |p| {
                let mut st = WalkState::new(dom.dimension());
                walker.lifetime(&x, p, &mut st).0
            });
            let bound = dom.exit_time_bound(&x).unwrap();
            assert!(e.mean <= bound + 3.0 * e.se, "shape {i} at {x:?}: {e:?} > {bound}");
        }
    }
}
