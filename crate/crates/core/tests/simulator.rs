mod common;

use common::*;
use fastusct::phantom::{MediumMap, WATER_DENSITY};
use fastusct::simulator::{acquire_parallel, acquire_sequential, run_forward, Pulse, SimConfig};
use fastusct::{make_firing_plan, Error};
use ndarray::Array2;

fn max_abs(a: &Array2<f32>) -> f64 {
    a.iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64))
}

fn first_arrival(env: &[f64], fraction: f64) -> usize {
    let peak = env.iter().cloned().fold(0.0, f64::max);
    env.iter().position(|&v| v >= fraction * peak).unwrap()
}

#[test]
fn opposite_receiver_peak_matches_flight_time() {
    let cfg = small_config();
    let geo = small_ring();
    let f = run_forward(&water(&cfg), &geo, &small_pulse(), &[0], &cfg).unwrap();
    let expected = (cfg.sampling_rate * 2.0 * geo.radius_mm * 1e-3 / cfg.sound_speed).round() as i64;
    assert_eq!(expected, 345);
    let peak = argmax(&envelope_row(f.samples.row(32))) as i64;
    assert!((peak - expected).abs() <= 2, "peak {peak}, expected {expected}");
    // every receiver, straight-ray delay
    for rx in 1..geo.n_receivers {
        let d = geo.receiver_positions()[rx].distance(&geo.transmitter_positions()[0]);
        let target = cfg.sampling_rate * d * 1e-3 / cfg.sound_speed;
        let k = argmax(&envelope_row(f.samples.row(rx))) as f64;
        assert!((k - target).abs() <= 2.0, "rx {rx}: {k} vs {target}");
    }
    assert_eq!(f.tx_set, vec![0]);
    assert_eq!(f.samples.dim(), (64, 512));
    assert_eq!(f.t0, 0.0);
}

#[test]
fn zero_pulse_gives_zero_frame() {
    let cfg = small_config();
    let pulse = Pulse::new(0.25e6, 1, 0.0).unwrap();
    let f = run_forward(&water(&cfg), &small_ring(), &pulse, &[3], &cfg).unwrap();
    assert!(f.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn simultaneous_firing_superposes() {
    let cfg = small_config();
    let geo = small_ring();
    let m = water(&cfg);
    let p = small_pulse();
    let a = run_forward(&m, &geo, &p, &[2], &cfg).unwrap();
    let b = run_forward(&m, &geo, &p, &[9], &cfg).unwrap();
    let ab = run_forward(&m, &geo, &p, &[9, 2], &cfg).unwrap();
    assert_eq!(ab.tx_set, vec![2, 9]);
    let sum = &a.samples + &b.samples;
    let err = max_abs(&(&ab.samples - &sum));
    assert!(err <= 1e-6 * max_abs(&sum), "relative error {}", err / max_abs(&sum));
}

#[test]
fn passive_medium_does_not_amplify() {
    let cfg = small_config();
    let f = run_forward(&water(&cfg), &small_ring(), &small_pulse(), &[0], &cfg).unwrap();
    assert!(max_abs(&f.samples) <= 10.0);
    assert!(max_abs(&f.samples) > 0.0);
}

#[test]
fn flight_time_is_reciprocal() {
    let cfg = small_config();
    let geo = small_ring();
    let m = water(&cfg);
    let p = small_pulse();
    // tx 0 sits on receiver 0, tx 3 on receiver 12, tx 9 on receiver 36
    let f0 = run_forward(&m, &geo, &p, &[0], &cfg).unwrap();
    let f3 = run_forward(&m, &geo, &p, &[3], &cfg).unwrap();
    let f9 = run_forward(&m, &geo, &p, &[9], &cfg).unwrap();
    for (fa, ra, fb, rb) in [(&f0, 12, &f3, 0), (&f0, 36, &f9, 0), (&f3, 36, &f9, 12)] {
        let ta = first_arrival(&envelope_row(fa.samples.row(ra)), 0.2) as i64;
        let tb = first_arrival(&envelope_row(fb.samples.row(rb)), 0.2) as i64;
        assert!((ta - tb).abs() <= 1, "{ta} vs {tb}");
    }
}

#[test]
fn single_scatterer_arrivals_follow_the_ellipse() {
    let cfg = small_config();
    let geo = small_ring();
    let water_map = water(&cfg);
    let mut rho = water_map.density().clone();
    // scatterer at (x, y) = (12, -7) mm
    let (sx, sy) = (12.0, -7.0);
    let half = (cfg.grid_size / 2) as f64;
    rho[[(sy + half) as usize, (sx + half) as usize]] = 1500.0;
    let phantom = MediumMap::new(rho, cfg.pixel_pitch_mm, WATER_DENSITY, cfg.sound_speed).unwrap();
    let p = small_pulse();
    for tx in [0usize, 5] {
        let base = run_forward(&water_map, &geo, &p, &[tx], &cfg).unwrap();
        let with = run_forward(&phantom, &geo, &p, &[tx], &cfg).unwrap();
        let scattered = &with.samples - &base.samples;
        let ptx = geo.transmitter_positions()[tx];
        let s = fastusct::Point2::new(sx, sy);
        for rx in 0..geo.n_receivers {
            let path = ptx.distance(&s) + s.distance(&geo.receiver_positions()[rx]);
            let target = cfg.sampling_rate * path * 1e-3 / cfg.sound_speed;
            let k = argmax(&envelope_row(scattered.row(rx))) as f64;
            assert!((k - target.round()).abs() <= 3.0, "tx {tx} rx {rx}: {k} vs {target:.1}");
        }
    }
}

#[test]
fn boundary_reflections_stay_below_one_percent() {
    let cfg = small_config();
    let big = SimConfig {
        grid_size: 2 * cfg.grid_size,
        ..cfg.clone()
    };
    let geo = small_ring();
    let p = small_pulse();
    let small = run_forward(&water(&cfg), &geo, &p, &[0], &cfg).unwrap();
    let oracle = run_forward(&water(&big), &geo, &p, &[0], &big).unwrap();
    // the doubled domain pushes its own boundary echoes past the record
    let incident = max_abs(&oracle.samples.slice(ndarray::s![1.., ..]).to_owned());
    let diff = &small.samples - &oracle.samples;
    let reflected = max_abs(&diff.slice(ndarray::s![1.., ..]).to_owned());
    assert!(reflected < 0.01 * incident, "reflection ratio {}", reflected / incident);
}

#[test]
fn acquisition_modes() {
    let cfg = small_config();
    let geo = small_ring();
    let m = water(&cfg);
    let p = small_pulse();

    let usct = make_firing_plan(&geo, 16, 1).unwrap();
    let seq = acquire_sequential(&m, &geo, &usct, &p, &cfg).unwrap();
    assert_eq!(seq.len(), 16);
    assert!(seq.iter().all(|f| f.tx_set.len() == 1));
    let par_p1 = acquire_parallel(&m, &geo, &usct, &p, &cfg).unwrap();
    assert_eq!(par_p1, seq);

    let fast = make_firing_plan(&geo, 4, 4).unwrap();
    let par = acquire_parallel(&m, &geo, &fast, &p, &cfg).unwrap();
    assert_eq!(par.len(), 4);
    for (frame, group) in par.iter().zip(&fast.groups) {
        assert_eq!(frame.tx_set.len(), 4);
        let mut sum = Array2::<f32>::zeros(frame.samples.dim());
        for &t in group {
            sum += &seq[usct.groups.iter().position(|g| g == &vec![t]).unwrap()].samples;
        }
        let err = max_abs(&(&frame.samples - &sum));
        assert!(err <= 1e-6 * max_abs(&sum));
    }

    let one = make_firing_plan(&geo, 1, 1).unwrap();
    let single = acquire_sequential(&m, &geo, &one, &p, &cfg).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0], run_forward(&m, &geo, &p, &one.groups[0], &cfg).unwrap());

    let mut reversed = usct.clone();
    reversed.groups.reverse();
    let rev = acquire_sequential(&m, &geo, &reversed, &p, &cfg).unwrap();
    let mut expected = seq.clone();
    expected.reverse();
    assert_eq!(rev, expected);

    assert!(matches!(
        acquire_sequential(&m, &geo, &fast, &p, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn configuration_errors() {
    let cfg = small_config();
    let geo = small_ring();
    let m = water(&cfg);
    let p = small_pulse();
    let too_coarse = SimConfig {
        time_step: 1.0 / cfg.sampling_rate * 3.0,
        ..cfg.clone()
    };
    assert!(matches!(run_forward(&m, &geo, &p, &[0], &too_coarse), Err(Error::Config(_))));
    let short = SimConfig {
        n_samples: 100,
        ..cfg.clone()
    };
    assert!(matches!(run_forward(&m, &geo, &p, &[0], &short), Err(Error::Config(_))));
    assert!(run_forward(&m, &geo, &p, &[16], &cfg).is_err());
    assert!(run_forward(&m, &geo, &p, &[], &cfg).is_err());
    let wrong_size = SimConfig {
        grid_size: 160,
        ..cfg.clone()
    };
    assert!(matches!(run_forward(&m, &geo, &p, &[0], &wrong_size), Err(Error::Shape { .. })));
}

#[test]
fn overflowing_field_reports_the_step() {
    let cfg = small_config();
    let loud = Pulse::new(0.25e6, 1, 1e308).unwrap();
    match run_forward(&water(&cfg), &small_ring(), &loud, &[0, 1, 2, 3], &cfg) {
        Err(Error::Unstable { step }) => assert!(step > 0),
        other => panic!("expected instability, got {other:?}"),
    }
}

#[test]
fn acquisition_errors_carry_the_group_index() {
    let cfg = SimConfig {
        n_samples: 100,
        ..small_config()
    };
    let geo = small_ring();
    let plan = make_firing_plan(&geo, 2, 1).unwrap();
    match acquire_sequential(&water(&cfg), &geo, &plan, &small_pulse(), &cfg) {
        Err(Error::Acquisition { index, .. }) => assert_eq!(index, 0),
        other => panic!("unexpected {other:?}"),
    }
}
