use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsp_core::projection::GridGeometry;
use rsp_core::sim::*;

fn geom() -> GridGeometry {
    GridGeometry::new(32, 32, 0.5, 10.0).unwrap()
}

fn world_with(objects: Vec<Object>, obstacles: Vec<Rect>) -> WorldState {
    WorldState {
        objects,
        obstacles,
        size: [16.0, 16.0],
        rng_seed: 0,
        time_step: 0,
    }
}

fn object(center: [f64; 2], velocity: [f64; 2]) -> Object {
    Object {
        center,
        extent: [2.0, 2.0],
        velocity,
    }
}

#[test]
fn sequences_are_pure_functions_of_the_seed() {
    let cfg = SimConfig::default();
    let a = generate_sequence(&cfg, &geom(), 17).unwrap();
    let b = generate_sequence(&cfg, &geom(), 17).unwrap();
    let c = generate_sequence(&cfg, &geom(), 18).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), cfg.seq_len);
}

#[test]
fn constant_velocity_kinematics() {
    let w = world_with(vec![object([4.0, 8.0], [10.0, 0.0])], vec![]);
    let n = step_world(&w, 0.05).unwrap();
    assert!((n.objects[0].center[0] - 4.5).abs() < 1e-12);
    assert_eq!(n.objects[0].center[1], 8.0);
    assert_eq!(n.time_step, 1);
}

#[test]
fn one_cell_per_frame_at_five_meters_per_second() {
    let g = geom();
    let mut w = single_object_world(&g, 5.0, 0);
    let mut prev = object_footprint(&w, &g, 0);
    assert!(prev.iter().any(|&b| b));
    for _ in 0..5 {
        w = step_world(&w, 1.0 / g.frame_rate).unwrap();
        let cur = object_footprint(&w, &g, 0);
        for i in 0..g.x {
            for j in 0..g.y {
                let before = i > 0 && prev[(i - 1) * g.y + j];
                assert_eq!(cur[i * g.y + j], before, "cell ({i},{j})");
            }
        }
        prev = cur;
    }
}

#[test]
fn objects_reflect_at_the_boundary() {
    let w = world_with(vec![object([14.5, 8.0], [10.0, -4.0])], vec![]);
    let n = step_world(&w, 0.1).unwrap();
    // Would reach 15.5 but the edge allows at most 15.0.
    assert!((n.objects[0].center[0] - 14.5).abs() < 1e-12);
    assert_eq!(n.objects[0].velocity, [-10.0, -4.0]);
    assert!((n.objects[0].center[1] - 7.6).abs() < 1e-12);
    assert!(step_world(&w, 0.0).is_err());
}

#[test]
fn rays_stop_at_the_first_blocked_cell() {
    let g = geom();
    let cells = trace_ray([16.5, 16.5], [1.0, 0.0], &g, |c| c / g.y == 20);
    let rows: Vec<usize> = cells.iter().map(|c| c / g.y).collect();
    assert_eq!(rows, (16..=20).collect::<Vec<_>>());
    assert!(cells.iter().all(|c| c % g.y == 16));
    let all = trace_ray([16.5, 16.5], [0.0, -1.0], &g, |_| false);
    assert_eq!(all.len(), 17);
}

#[test]
fn obstacles_occlude_cells_behind_them() {
    let g = geom();
    // A wall at x in [10, 11] spanning y in [4, 12] in front of the sensor at (8, 8).
    let wall = Rect {
        min: [10.0, 4.0],
        max: [11.0, 12.0],
    };
    let w = world_with(vec![], vec![wall]);
    let cfg = SimConfig {
        objects: 0,
        obstacles: 0,
        ..SimConfig::default()
    };
    let f = render_frame(&w, &cfg, &g, &mut ChaCha8Rng::seed_from_u64(0));
    let cell = |x: f64, y: f64| ((x / 0.5) as usize) * g.y + (y / 0.5) as usize;
    assert!(f.observability[cell(9.0, 8.0)] > 0.9);
    assert!(f.observability[cell(10.2, 8.0)] > 0.0);
    assert_eq!(f.gt_class[cell(10.2, 8.0)], Class::Occupied as u8);
    for x in [12.0, 13.5, 15.5] {
        let c = cell(x, 8.0);
        assert_eq!(f.observability[c], 0.0);
        assert_eq!(f.gt_class[c], Class::Unknown as u8);
        assert_eq!(f.input[c], 0.0);
    }
}

fn count_detections(cfg: &SimConfig, frames: usize, want_occupied: bool) -> (u64, u64) {
    let g = geom();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut trials = 0u64;
    let mut hits = 0u64;
    for s in 0..frames {
        let Ok(w) = new_world(cfg, &g, s as u64) else { continue };
        let f = render_frame(&w, cfg, &g, &mut rng);
        for c in 0..f.cells() {
            let occupied = f.gt_class[c] == Class::Occupied as u8 || f.gt_class[c] == Class::Moving as u8;
            if f.observability[c] > 0.0 && occupied == want_occupied {
                trials += 1;
                hits += f.input[c] as u64;
            }
        }
    }
    (trials, hits)
}

fn within_three_sigma(trials: u64, hits: u64, p: f64) {
    let mean = trials as f64 * p;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    assert!((hits as f64 - mean).abs() <= 3.0 * sigma, "{hits} of {trials}, expected {mean} +- {sigma}");
}

#[test]
fn false_positives_follow_the_binomial_rate() {
    let cfg = SimConfig {
        objects: 2,
        obstacles: 2,
        p_fp: 0.07,
        ..SimConfig::default()
    };
    let (n, k) = count_detections(&cfg, 40, false);
    assert!(n > 10_000);
    within_three_sigma(n, k, 0.07);
}

#[test]
fn dropouts_follow_the_binomial_rate() {
    let cfg = SimConfig {
        objects: 4,
        obstacles: 4,
        p_drop: 0.3,
        ..SimConfig::default()
    };
    let (n, k) = count_detections(&cfg, 80, true);
    assert!(n > 1000);
    within_three_sigma(n, k, 0.7);
}

#[test]
fn labels_are_consistent() {
    let g = geom();
    for seed in 0..20 {
        let cfg = SimConfig {
            channels: 2,
            ..SimConfig::default()
        };
        for f in generate_sequence(&cfg, &g, seed).unwrap() {
            for c in 0..f.cells() {
                let class = Class::from_index(f.gt_class[c]).unwrap();
                let speed = f.speed(c);
                let o = f.observability[c];
                assert!((0.0..=1.0).contains(&o));
                assert_eq!(class == Class::Unknown, o == 0.0);
                assert_eq!(f.input[2 * c + 1], if o > 0.0 { 1.0 } else { 0.0 });
                match class {
                    Class::Moving => assert!(speed > MOVING_THRESHOLD),
                    Class::Occupied => assert!(speed <= MOVING_THRESHOLD),
                    Class::Free => assert_eq!(speed, 0.0),
                    Class::Unknown => {}
                }
            }
        }
    }
}

#[test]
fn worlds_keep_the_sensor_clear_and_bodies_apart() {
    let g = geom();
    let ego = ego_position(&g);
    for seed in 0..50 {
        let w = new_world(&SimConfig::default(), &g, seed).unwrap();
        let rects: Vec<Rect> = w.objects.iter().map(Object::rect).chain(w.obstacles.iter().copied()).collect();
        for (i, a) in rects.iter().enumerate() {
            assert!(!a.contains(ego));
            assert!(a.min[0] >= 0.0 && a.min[1] >= 0.0 && a.max[0] <= 16.0 && a.max[1] <= 16.0);
            for b in &rects[i + 1..] {
                assert!(!a.overlaps(b));
            }
        }
        for o in &w.objects {
            assert!(o.speed() <= 12.0 + 1e-9);
        }
    }
}

#[test]
fn sensor_neighbourhood_is_fully_observed() {
    let g = geom();
    let occ = vec![false; g.cells()];
    let obs = observability(&occ, &g, 720);
    for i in 14..18 {
        for j in 14..18 {
            assert_eq!(obs[i * g.y + j], 1.0);
        }
    }
    assert!(obs.iter().all(|&o| o > 0.0));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SimConfig { p_drop: 1.5, ..SimConfig::default() },
        SimConfig { rays: 0, ..SimConfig::default() },
        SimConfig { channels: 3, ..SimConfig::default() },
        SimConfig { v_max: -1.0, ..SimConfig::default() },
    ];
    for c in bad {
        assert!(new_world(&c, &geom(), 0).is_err());
    }
}
