//! Two-dimensional linear acoustics on a density map.
//!
//! Pressure–velocity first-order system on a staggered grid with spectral
//! (k-space corrected) spatial derivatives, variable density and constant
//! sound speed. A split-field PML absorbs outgoing waves. Sources and
//! receivers are coupled to the grid through a normalised Lanczos-3 kernel,
//! which is exact when an element sits on a grid node.
//!
//! Time origin: `t = 0` is the temporal centre of the transmitted pulse. The
//! run starts half a pulse earlier so that sample `k` of an [`RfFrame`] is
//! the pressure at `t = k / fs`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FiringPlan, Point2, RingArrayGeometry};
use crate::phantom::MediumMap;

/// Taper applied over the pulse duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub center_frequency: f64,
    pub n_cycles: usize,
    pub amplitude: f64,
    pub window: Taper,
}

impl Pulse {
    pub fn new(center_frequency: f64, n_cycles: usize, amplitude: f64) -> Result<Self> {
        if n_cycles == 0 || !(center_frequency > 0.0) {
            return Err(Error::Config(format!(
                "pulse needs n_cycles >= 1 and a positive frequency, got {n_cycles} at {center_frequency} Hz"
            )));
        }
        Ok(Self {
            center_frequency,
            n_cycles,
            amplitude,
            window: Taper::Hann,
        })
    }

    pub fn duration(&self) -> f64 {
        self.n_cycles as f64 / self.center_frequency
    }

    /// Pulse value at time `t` relative to its centre.
    pub fn value(&self, t: f64) -> f64 {
        let d = self.duration();
        let tau = t + 0.5 * d;
        if !(0.0..=d).contains(&tau) {
            return 0.0;
        }
        let taper = match self.window {
            Taper::Hann => 0.5 * (1.0 - (2.0 * PI * tau / d).cos()),
            Taper::Rectangular => 1.0,
        };
        self.amplitude * (2.0 * PI * self.center_frequency * tau).sin() * taper
    }
}

/// One acquisition: `R x T` receiver traces for a set of simultaneously
/// fired transmitters.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    pub samples: Array2<f32>,
    pub sampling_rate: f64,
    pub tx_set: Vec<usize>,
    pub t0: f64,
}

impl RfFrame {
    pub fn new(samples: Array2<f32>, sampling_rate: f64, tx_set: Vec<usize>) -> Self {
        Self {
            samples,
            sampling_rate,
            tx_set,
            t0: 0.0,
        }
    }

    pub fn n_receivers(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// Same traces, different samples.
    pub fn with_samples(&self, samples: Array2<f32>) -> Self {
        Self {
            samples,
            sampling_rate: self.sampling_rate,
            tx_set: self.tx_set.clone(),
            t0: self.t0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid_size: usize,
    pub pixel_pitch_mm: f64,
    pub sound_speed: f64,
    pub sampling_rate: f64,
    pub n_samples: usize,
    /// Internal time step, seconds.
    pub time_step: f64,
    pub pml_thickness: usize,
    /// PML absorption in nepers per grid point.
    #[serde(default = "default_pml_alpha")]
    pub pml_alpha: f64,
}

fn default_pml_alpha() -> f64 {
    2.0
}

const LANCZOS_A: usize = 3;
const CFL_LIMIT: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl SimConfig {
    /// Largest step not above the CFL target that divides the output
    /// sampling interval.
    pub fn step_for(sampling_rate: f64, pixel_pitch_mm: f64, sound_speed: f64, cfl: f64) -> f64 {
        let dx = pixel_pitch_mm * 1e-3;
        let per_sample = sound_speed / (sampling_rate * dx);
        let substeps = (per_sample / cfl).ceil().max(1.0);
        1.0 / (sampling_rate * substeps)
    }

    pub fn dx(&self) -> f64 {
        self.pixel_pitch_mm * 1e-3
    }

    pub fn cfl(&self) -> f64 {
        self.sound_speed * self.time_step / self.dx()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 || self.n_samples == 0 {
            return Err(Error::Config("grid needs >= 8 points and >= 1 sample".into()));
        }
        for (name, v) in [
            ("pixel_pitch_mm", self.pixel_pitch_mm),
            ("sound_speed", self.sound_speed),
            ("sampling_rate", self.sampling_rate),
            ("time_step", self.time_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cfl() > CFL_LIMIT {
            return Err(Error::Config(format!(
                "CFL number {:.3} exceeds {:.3}",
                self.cfl(),
                CFL_LIMIT
            )));
        }
        if 2 * self.pml_thickness >= self.grid_size {
            return Err(Error::Config("PML fills the whole grid".into()));
        }
        Ok(())
    }

    /// Checks the ring fits inside the absorbing layer and that the record
    /// covers one diameter of flight.
    pub fn validate_for(&self, geometry: &RingArrayGeometry) -> Result<()> {
        self.validate()?;
        let ring_px = geometry.radius_mm / self.pixel_pitch_mm;
        let free = (self.grid_size / 2) as f64 - self.pml_thickness as f64 - LANCZOS_A as f64;
        if ring_px > free {
            return Err(Error::Config(format!(
                "ring radius {ring_px:.1} px does not fit inside PML (free radius {free:.1} px)"
            )));
        }
        let record = self.n_samples as f64 / self.sampling_rate;
        let diameter = 2.0 * geometry.radius_mm * 1e-3 / self.sound_speed;
        if record < diameter {
            return Err(Error::Config(format!(
                "record of {record:.3e} s is shorter than the ring diameter flight time {diameter:.3e} s"
            )));
        }
        Ok(())
    }
}

/// Grid nodes and weights coupling a point to the pressure grid.
#[derive(Debug, Clone)]
struct Stencil {
    taps: Vec<(usize, f64)>,
}

fn lanczos(x: f64) -> f64 {
    let a = LANCZOS_A as f64;
    if x == 0.0 {
        1.0
    } else if x.abs() >= a {
        0.0
    } else {
        let px = PI * x;
        a * px.sin() * (px / a).sin() / (px * px)
    }
}

fn axis_weights(coord: f64) -> Vec<(usize, f64)> {
    let nearest = coord.round();
    if (coord - nearest).abs() < 1e-9 {
        return vec![(nearest as usize, 1.0)];
    }
    let base = coord.floor() as i64;
    let a = LANCZOS_A as i64;
    let mut w: Vec<(usize, f64)> = ((base - a + 1)..=(base + a))
        .map(|n| (n as usize, lanczos(coord - n as f64)))
        .collect();
    let sum: f64 = w.iter().map(|(_, v)| v).sum();
    for (_, v) in &mut w {
        *v /= sum;
    }
    w
}

impl Stencil {
    fn at(p: Point2, config: &SimConfig) -> Self {
        let half = (config.grid_size / 2) as f64;
        let col = p.x / config.pixel_pitch_mm + half;
        let row = p.y / config.pixel_pitch_mm + half;
        let g = config.grid_size;
        let mut taps = Vec::new();
        for (r, wr) in axis_weights(row) {
            for (c, wc) in axis_weights(col) {
                taps.push((r * g + c, wr * wc));
            }
        }
        Self { taps }
    }

    fn read(&self, field: &[f64]) -> f64 {
        self.taps.iter().map(|&(i, w)| w * field[i]).sum()
    }
}

/// 2-D FFT whose spectrum is stored transposed (`[kx][ky]`), saving two
/// transposes per forward/inverse pair.
struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            tmp: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    fn transpose_into(src: &[Complex64], dst: &mut [Complex64], n: usize) {
        const B: usize = 16;
        for ib in (0..n).step_by(B) {
            for jb in (0..n).step_by(B) {
                for i in ib..(ib + B).min(n) {
                    for j in jb..(jb + B).min(n) {
                        dst[j * n + i] = src[i * n + j];
                    }
                }
            }
        }
    }

    /// `[y][x]` field to `[kx][ky]` spectrum.
    fn forward_t(&mut self, data: &mut Vec<Complex64>) {
        self.forward.process_with_scratch(data, &mut self.scratch);
        Self::transpose_into(data, &mut self.tmp, self.n);
        std::mem::swap(data, &mut self.tmp);
        self.forward.process_with_scratch(data, &mut self.scratch);
    }

    /// `[kx][ky]` spectrum back to a `[y][x]` field, normalised.
    fn inverse_t(&mut self, data: &mut Vec<Complex64>) {
        self.inverse.process_with_scratch(data, &mut self.scratch);
        Self::transpose_into(data, &mut self.tmp, self.n);
        std::mem::swap(data, &mut self.tmp);
        self.inverse.process_with_scratch(data, &mut self.scratch);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn wavenumber(j: usize, n: usize, dx: f64) -> f64 {
    let m = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
    2.0 * PI * m as f64 / (n as f64 * dx)
}

fn pml_profile(n: usize, thickness: usize, alpha_max: f64, dt: f64, staggered: bool) -> Vec<f64> {
    let l = thickness as f64;
    (0..n)
        .map(|j| {
            let pos = j as f64 + if staggered { 0.5 } else { 0.0 };
            let depth = if thickness == 0 {
                0.0
            } else {
                let left = (l - pos).max(0.0);
                let right = (pos - (n as f64 - 1.0 - l)).max(0.0);
                left.max(right) / l
            };
            (-alpha_max * depth.powi(4) * dt / 2.0).exp()
        })
        .collect()
}

/// Precomputed operators for one medium and configuration.
struct Solver {
    n: usize,
    dt: f64,
    fft: Fft2,
    grad_op: Vec<Complex64>,
    div_op_x: Vec<Complex64>,
    div_op_y: Vec<Complex64>,
    mirror: Vec<usize>,
    inv_rho_x: Vec<f64>,
    inv_rho_y: Vec<f64>,
    bulk: Vec<f64>,
    pml_node: Vec<f64>,
    pml_stag: Vec<f64>,
}

impl Solver {
    fn new(medium: &MediumMap, config: &SimConfig) -> Self {
        let n = config.grid_size;
        let dx = config.dx();
        let dt = config.time_step;
        let c = config.sound_speed;
        let mut grad_op = vec![Complex64::new(0.0, 0.0); n * n];
        let mut div_op_x = grad_op.clone();
        let mut div_op_y = grad_op.clone();
        let mut mirror = vec![0; n * n];
        let i = Complex64::new(0.0, 1.0);
        for jx in 0..n {
            let kx = wavenumber(jx, n, dx);
            for jy in 0..n {
                let ky = wavenumber(jy, n, dx);
                let k = kx.hypot(ky);
                let arg = 0.5 * c * k * dt;
                let kappa = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
                let shift_x = Complex64::from_polar(1.0, 0.5 * kx * dx);
                let shift_y = Complex64::from_polar(1.0, 0.5 * ky * dx);
                let idx = jx * n + jy;
                let dxp = i * kx * shift_x * kappa;
                let dyp = i * ky * shift_y * kappa;
                grad_op[idx] = dxp + i * dyp;
                div_op_x[idx] = i * kx * shift_x.conj() * kappa;
                div_op_y[idx] = i * ky * shift_y.conj() * kappa;
                mirror[idx] = ((n - jx) % n) * n + (n - jy) % n;
            }
        }
        let rho = medium.density();
        let mut inv_rho_x = vec![0.0; n * n];
        let mut inv_rho_y = vec![0.0; n * n];
        let mut bulk = vec![0.0; n * n];
        for r in 0..n {
            for col in 0..n {
                let here = rho[[r, col]] as f64;
                let right = rho[[r, (col + 1) % n]] as f64;
                let up = rho[[(r + 1) % n, col]] as f64;
                inv_rho_x[r * n + col] = 2.0 / (here + right);
                inv_rho_y[r * n + col] = 2.0 / (here + up);
                bulk[r * n + col] = here * c * c;
            }
        }
        let alpha_max = config.pml_alpha * c / dx;
        Self {
            n,
            dt,
            fft: Fft2::new(n),
            grad_op,
            div_op_x,
            div_op_y,
            mirror,
            inv_rho_x,
            inv_rho_y,
            bulk,
            pml_node: pml_profile(n, config.pml_thickness, alpha_max, dt, false),
            pml_stag: pml_profile(n, config.pml_thickness, alpha_max, dt, true),
        }
    }
}

fn check_inputs(
    medium: &MediumMap,
    geometry: &RingArrayGeometry,
    tx_set: &[usize],
    config: &SimConfig,
) -> Result<()> {
    config.validate_for(geometry)?;
    if medium.size() != config.grid_size {
        return Err(Error::shape(
            format!("{0}x{0} medium", config.grid_size),
            format!("{0}x{0}", medium.size()),
        ));
    }
    if (medium.pixel_pitch_mm - config.pixel_pitch_mm).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "medium pitch {} mm differs from simulation pitch {} mm",
            medium.pixel_pitch_mm, config.pixel_pitch_mm
        )));
    }
    if (medium.sound_speed - config.sound_speed).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "medium sound speed {} differs from simulation sound speed {}",
            medium.sound_speed, config.sound_speed
        )));
    }
    if tx_set.is_empty() {
        return Err(Error::Input("transmit set is empty".into()));
    }
    for &t in tx_set {
        geometry.transmitter(t)?;
    }
    Ok(())
}

/// Simulates one shot with every transmitter in `tx_set` firing at `t = 0`.
pub fn run_forward(
    medium: &MediumMap,
    geometry: &RingArrayGeometry,
    pulse: &Pulse,
    tx_set: &[usize],
    config: &SimConfig,
) -> Result<RfFrame> {
    check_inputs(medium, geometry, tx_set, config)?;
    let mut solver = Solver::new(medium, config);
    let n = solver.n;
    let nn = n * n;
    let dt = solver.dt;

    let sources: Vec<Stencil> = tx_set
        .iter()
        .map(|&t| Stencil::at(geometry.transmitter_positions()[t], config))
        .collect();
    let receivers: Vec<Stencil> = geometry
        .receiver_positions()
        .iter()
        .map(|&p| Stencil::at(p, config))
        .collect();

    // Time index m holds the pressure at t = (m - pre_roll) * dt.
    let pre_roll = (0.5 * pulse.duration() / dt).ceil() as usize;
    let steps_per_sample = 1.0 / (config.sampling_rate * dt);
    let pickup: Vec<usize> = (0..config.n_samples)
        .map(|k| pre_roll + (k as f64 * steps_per_sample).round() as usize)
        .collect();
    let last = *pickup.last().expect("n_samples >= 1");
    let injection = 2.0 * config.sound_speed * dt / config.dx();

    let mut ux = vec![0.0; nn];
    let mut uy = vec![0.0; nn];
    let mut px = vec![0.0; nn];
    let mut py = vec![0.0; nn];
    let mut p = vec![0.0; nn];
    let mut buf = vec![Complex64::new(0.0, 0.0); nn];
    let mut work = vec![Complex64::new(0.0, 0.0); nn];
    let mut out = Array2::<f32>::zeros((geometry.n_receivers, config.n_samples));
    let mut next_pick = 0;

    for m in 1..=last {
        // grad p -> velocity
        for (b, &v) in buf.iter_mut().zip(&p) {
            *b = Complex64::new(v, 0.0);
        }
        solver.fft.forward_t(&mut buf);
        for (b, op) in buf.iter_mut().zip(&solver.grad_op) {
            *b *= op;
        }
        solver.fft.inverse_t(&mut buf);
        // ux sits at (r, c + 1/2) and uy at (r + 1/2, c).
        for r in 0..n {
            let ay = solver.pml_stag[r];
            for c in 0..n {
                let i = r * n + c;
                let ax = solver.pml_stag[c];
                ux[i] = ax * (ax * ux[i] - dt * solver.inv_rho_x[i] * buf[i].re);
                uy[i] = ay * (ay * uy[i] - dt * solver.inv_rho_y[i] * buf[i].im);
            }
        }

        // div u -> pressure
        for ((b, &vx), &vy) in buf.iter_mut().zip(&ux).zip(&uy) {
            *b = Complex64::new(vx, vy);
        }
        solver.fft.forward_t(&mut buf);
        for i in 0..nn {
            let z = buf[i];
            let zm = buf[solver.mirror[i]].conj();
            work[i] = solver.div_op_x[i] * (z + zm) * 0.5 + solver.div_op_y[i] * (z - zm) * 0.5;
        }
        solver.fft.inverse_t(&mut work);
        for r in 0..n {
            let ay = solver.pml_node[r];
            for c in 0..n {
                let i = r * n + c;
                let ax = solver.pml_node[c];
                let k = solver.bulk[i];
                px[i] = ax * (ax * px[i] - dt * k * work[i].re);
                py[i] = ay * (ay * py[i] - dt * k * work[i].im);
            }
        }

        let s = pulse.value((m as f64 - pre_roll as f64) * dt);
        if s != 0.0 {
            let half = 0.5 * injection * s;
            for src in &sources {
                for &(i, w) in &src.taps {
                    px[i] += half * w;
                    py[i] += half * w;
                }
            }
        }
        for ((pi, &a), &b) in p.iter_mut().zip(&px).zip(&py) {
            *pi = a + b;
        }

        if (m % 64 == 0 || m == last)
            && p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Unstable { step: m });
            }
        while next_pick < pickup.len() && pickup[next_pick] == m {
            for (rx, st) in receivers.iter().enumerate() {
                out[[rx, next_pick]] = st.read(&p) as f32;
            }
            next_pick += 1;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unstable { step: last });
    }
    let mut tx = tx_set.to_vec();
    tx.sort_unstable();
    Ok(RfFrame::new(out, config.sampling_rate, tx))
}

fn acquire(
    medium: &MediumMap,
    geometry: &RingArrayGeometry,
    plan: &FiringPlan,
    pulse: &Pulse,
    config: &SimConfig,
) -> Result<Vec<RfFrame>> {
    plan.groups
        .par_iter()
        .enumerate()
        .map(|(index, group)| {
            run_forward(medium, geometry, pulse, group, config).map_err(|e| Error::Acquisition {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// One single-transmitter shot per group of a `P = 1` plan, in plan order.
pub fn acquire_sequential(
    medium: &MediumMap,
    geometry: &RingArrayGeometry,
    plan: &FiringPlan,
    pulse: &Pulse,
    config: &SimConfig,
) -> Result<Vec<RfFrame>> {
    if !plan.is_sequential() {
        return Err(Error::Config(format!(
            "sequential acquisition needs P = 1, plan has P = {}",
            plan.parallelism
        )));
    }
    acquire(medium, geometry, plan, pulse, config)
}

/// One shot per group with all of the group's transmitters firing together.
pub fn acquire_parallel(
    medium: &MediumMap,
    geometry: &RingArrayGeometry,
    plan: &FiringPlan,
    pulse: &Pulse,
    config: &SimConfig,
) -> Result<Vec<RfFrame>> {
    acquire(medium, geometry, plan, pulse, config)
}
