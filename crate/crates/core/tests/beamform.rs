mod common;

use common::*;
use fastusct::beamform::{das_field, das_reconstruct, DasOptions, ReconRegion};
use fastusct::{build_ring_array, Point2, RfFrame, RingArrayGeometry};
use ndarray::Array2;
use proptest::prelude::*;

const FS: f64 = 5e6;
const C: f64 = 1450.0;
const T: usize = 512;

fn delay(geo: &RingArrayGeometry, tx: usize, rx: usize, s: Point2) -> f64 {
    let path = geo.transmitter_positions()[tx].distance(&s) + s.distance(&geo.receiver_positions()[rx]);
    FS * path * 1e-3 / C
}

/// Unit impulse at the rounded round-trip delay of a point at `s`.
fn impulse_frames(geo: &RingArrayGeometry, s: Point2, txs: &[usize]) -> Vec<RfFrame> {
    txs.iter()
        .map(|&tx| {
            let mut a = Array2::<f32>::zeros((geo.n_receivers, T));
            for rx in 0..geo.n_receivers {
                a[[rx, delay(geo, tx, rx, s).round() as usize]] = 1.0;
            }
            RfFrame::new(a, FS, vec![tx])
        })
        .collect()
}

/// Smooth one-cycle wavelet at the exact round-trip delay.
fn wavelet_frames(geo: &RingArrayGeometry, s: Point2) -> Vec<RfFrame> {
    (0..geo.n_transmitters)
        .map(|tx| {
            let a = Array2::from_shape_fn((geo.n_receivers, T), |(rx, k)| {
                let d = k as f64 - delay(geo, tx, rx, s);
                let ph = 2.0 * std::f64::consts::PI * d / 20.0;
                (ph.cos() * (-(d / 8.0).powi(2)).exp()) as f32
            });
            RfFrame::new(a, FS, vec![tx])
        })
        .collect()
}

fn argmax2(a: &Array2<f64>) -> (usize, usize) {
    let mut best = (0, 0);
    for ((r, c), v) in a.indexed_iter() {
        if *v > a[best] {
            best = (r, c);
        }
    }
    best
}

fn region() -> ReconRegion {
    ReconRegion::centered(64.0, 64)
}

fn pixel_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64)
}

#[test]
fn impulse_oracle_locates_the_point() {
    let geo = small_ring();
    let s = Point2::new(10.0, -5.0);
    let frames = impulse_frames(&geo, s, &(0..16).collect::<Vec<_>>());
    for opts in [DasOptions::default(), DasOptions { interpolate: true }] {
        let img = das_reconstruct(&frames, &geo, &region(), C, FS, opts).unwrap();
        let truth = img.region.pixel_of(s).unwrap();
        let got = argmax2(&img.intensity);
        assert!(pixel_distance(got, truth) <= 2.0, "{got:?} vs {truth:?}");
    }
}

#[test]
fn zero_frames_zero_image_and_scaling() {
    let geo = small_ring();
    let zeros: Vec<RfFrame> = (0..4)
        .map(|t| RfFrame::new(Array2::zeros((64, T)), FS, vec![t]))
        .collect();
    let img = das_reconstruct(&zeros, &geo, &region(), C, FS, DasOptions::default()).unwrap();
    assert!(img.intensity.iter().all(|&v| v == 0.0));

    let frames = wavelet_frames(&geo, Point2::new(-3.0, 7.0));
    let doubled: Vec<RfFrame> = frames.iter().map(|f| f.with_samples(f.samples.mapv(|v| 2.0 * v))).collect();
    let a = das_reconstruct(&frames, &geo, &region(), C, FS, DasOptions::default()).unwrap();
    let b = das_reconstruct(&doubled, &geo, &region(), C, FS, DasOptions::default()).unwrap();
    for (x, y) in a.intensity.iter().zip(b.intensity.iter()) {
        assert!((y - 2.0 * x).abs() <= 1e-9 * (1.0 + x.abs()));
    }
}

#[test]
fn growing_the_aperture_keeps_the_peak() {
    let geo = small_ring();
    let s = Point2::new(-12.0, 4.0);
    let mut previous: Option<(usize, usize)> = None;
    for n in [4usize, 8, 16] {
        let txs: Vec<usize> = (0..n).map(|i| i * 16 / n).collect();
        let frames = impulse_frames(&geo, s, &txs);
        let img = das_reconstruct(&frames, &geo, &region(), C, FS, DasOptions::default()).unwrap();
        let peak = argmax2(&img.intensity);
        if let Some(p) = previous {
            assert!(pixel_distance(p, peak) <= 1.5, "{p:?} -> {peak:?}");
        }
        previous = Some(peak);
    }
}

#[test]
fn quarter_turn_of_the_data_turns_the_image() {
    let geo = small_ring();
    let frames = wavelet_frames(&geo, Point2::new(9.0, -14.0));
    // relabel: data of transmitter t and receiver k move to t + n_tx/4 and k + R/4
    let qt = geo.n_transmitters / 4;
    let qr = geo.n_receivers / 4;
    let mut rotated = frames.clone();
    for f in &frames {
        let t = (f.tx_set[0] + qt) % geo.n_transmitters;
        let mut a = Array2::<f32>::zeros(f.samples.dim());
        for k in 0..geo.n_receivers {
            a.row_mut((k + qr) % geo.n_receivers).assign(&f.samples.row(k));
        }
        rotated[t] = RfFrame::new(a, FS, vec![t]);
    }
    let a = das_reconstruct(&frames, &geo, &region(), C, FS, DasOptions::default()).unwrap();
    let b = das_reconstruct(&rotated, &geo, &region(), C, FS, DasOptions::default()).unwrap();
    // (x, y) -> (-y, x): pixel (r, c) goes to (c, n-1-r)
    let n = 64;
    let peak = a.intensity.iter().cloned().fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            worst = worst.max((a.intensity[[r, c]] - b.intensity[[c, n - 1 - r]]).abs());
        }
    }
    assert!(worst <= 0.05 * peak, "max deviation {worst} of peak {peak}");
}

#[test]
fn simulated_point_is_found() {
    use fastusct::phantom::{MediumMap, WATER_DENSITY};
    use fastusct::simulator::run_forward;
    let cfg = small_config();
    let geo = small_ring();
    let water_map = water(&cfg);
    let mut rho = water_map.density().clone();
    let (sx, sy) = (10.0, -5.0);
    rho[[(sy + 72.0) as usize, (sx + 72.0) as usize]] = 1500.0;
    let m = MediumMap::new(rho, 1.0, WATER_DENSITY, C).unwrap();
    let frames: Vec<RfFrame> = (0..16)
        .map(|t| {
            let base = run_forward(&water_map, &geo, &small_pulse(), &[t], &cfg).unwrap();
            let with = run_forward(&m, &geo, &small_pulse(), &[t], &cfg).unwrap();
            with.with_samples(&with.samples - &base.samples)
        })
        .collect();
    let img = das_reconstruct(&frames, &geo, &region(), C, FS, DasOptions::default()).unwrap();
    let truth = img.region.pixel_of(Point2::new(sx, sy)).unwrap();
    assert!(pixel_distance(argmax2(&img.intensity), truth) <= 2.0);
}

fn small_frames() -> impl Strategy<Value = Vec<Vec<f32>>> {
    proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 8 * 64), 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn complex_field_is_linear(fa in small_frames(), fb in small_frames(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let geo = build_ring_array(50.0, 8, 2).unwrap();
        let region = ReconRegion::centered(40.0, 6);
        let mk = |v: &Vec<Vec<f32>>, scale: f64| -> Vec<RfFrame> {
            v.iter().enumerate().map(|(t, s)| {
                let arr = Array2::from_shape_vec((8, 64), s.iter().map(|x| (*x as f64 * scale) as f32).collect()).unwrap();
                RfFrame::new(arr, 1e6, vec![t])
            }).collect()
        };
        // exact in f64: build the mix in f64 and compare against f64 sums
        let mix: Vec<RfFrame> = fa.iter().zip(&fb).enumerate().map(|(t, (x, y))| {
            let arr = Array2::from_shape_vec((8, 64), x.iter().zip(y).map(|(p, q)| (a * *p as f64 + b * *q as f64) as f32).collect()).unwrap();
            RfFrame::new(arr, 1e6, vec![t])
        }).collect();
        let opts = DasOptions::default();
        let fm = das_field(&mix, &geo, &region, 1450.0, 1e6, opts).unwrap().field;
        let fx = das_field(&mk(&fa, 1.0), &geo, &region, 1450.0, 1e6, opts).unwrap().field;
        let fy = das_field(&mk(&fb, 1.0), &geo, &region, 1450.0, 1e6, opts).unwrap().field;
        for ((m, x), y) in fm.iter().zip(fx.iter()).zip(fy.iter()) {
            let expect = x * a + y * b;
            // mixed input is rounded to f32 once per sample
            prop_assert!((m - expect).norm() <= 1e-5 * (1.0 + expect.norm()));
        }
    }
}
