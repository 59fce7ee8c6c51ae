//! Network geometry, fading channels, the energy beamformer and the
//! physical-layer quantities (harvest rate, SINR, throughput).
//!
//! Every scalar link follows `g = c * rho^2 * d^(-alpha)` with `rho^2 ~ Exp(1)`
//! and `c = 1e-3`. The PS-to-transmitter energy channels are i.i.d. Rayleigh
//! per antenna, so each entry has the same mean power `c * d^(-alpha)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::Allocation;

/// RNG stream used for node placement.
const TOPOLOGY_STREAM: u64 = 0;
/// RNG stream used for the energy channels.
const CHANNEL_STREAM: u64 = 1;
/// RNG stream used for the D2D link fading.
const LINK_STREAM: u64 = 2;

/// Converts a noise density in dBm/Hz over `bandwidth` Hz to watts.
pub fn noise_power_watts(density_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    let dbm = density_dbm_per_hz + 10.0 * bandwidth_hz.log10();
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Physical constants of one network. All powers are in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub num_antennas: usize,
    pub num_pairs: usize,
    pub ps_power: f64,
    pub conversion_eff: f64,
    pub circuit_power: f64,
    pub noise_power: f64,
    pub path_loss_exp: f64,
    pub path_loss_const: f64,
    pub area_side: f64,
    pub max_pair_dist: f64,
    /// Only used for reporting; throughput is in bits/s/Hz.
    pub bandwidth: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            num_antennas: 10,
            num_pairs: 3,
            ps_power: 1.0,
            conversion_eff: 0.5,
            circuit_power: 1e-7,
            noise_power: noise_power_watts(-170.0, 1e6),
            path_loss_exp: 3.0,
            path_loss_const: 1e-3,
            area_side: 50.0,
            max_pair_dist: 10.0,
            bandwidth: 1e6,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::param("num_antennas", "must be at least 1"));
        }
        if self.num_pairs == 0 {
            return Err(Error::param("num_pairs", "must be at least 1"));
        }
        let positive = [
            ("ps_power", self.ps_power),
            ("noise_power", self.noise_power),
            ("path_loss_exp", self.path_loss_exp),
            ("path_loss_const", self.path_loss_const),
            ("area_side", self.area_side),
            ("bandwidth", self.bandwidth),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.conversion_eff > 0.0 && self.conversion_eff < 1.0) {
            return Err(Error::param(
                "conversion_eff",
                format!("must lie in (0, 1), got {}", self.conversion_eff),
            ));
        }
        if !(self.circuit_power.is_finite() && self.circuit_power >= 0.0) {
            return Err(Error::param("circuit_power", "must be finite and >= 0"));
        }
        if !(self.max_pair_dist.is_finite() && self.max_pair_dist >= 0.0) {
            return Err(Error::param("max_pair_dist", "must be finite and >= 0"));
        }
        if self.max_pair_dist >= self.area_side {
            return Err(Error::param("max_pair_dist", "must be smaller than area_side"));
        }
        Ok(())
    }

    /// Deterministic part of the path-loss model, `c * d^(-alpha)`.
    pub fn mean_gain(&self, distance: f64) -> f64 {
        self.path_loss_const * distance.powf(-self.path_loss_exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn inside_square(&self, side: f64) -> bool {
        (0.0..=side).contains(&self.x) && (0.0..=side).contains(&self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    pub ps: Point,
}

impl Topology {
    pub fn num_pairs(&self) -> usize {
        self.tx.len()
    }
}

/// Places `N` pairs in the square: transmitters uniformly, each receiver
/// uniformly on the disk of radius `max_pair_dist` around its transmitter
/// (resampled until it falls inside the square). The PS sits at the center.
pub fn generate_topology(params: &SystemParams, seed: u64) -> Result<Topology> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TOPOLOGY_STREAM);
    let side = params.area_side;
    let radius = params.max_pair_dist;

    let mut tx = Vec::with_capacity(params.num_pairs);
    let mut rx = Vec::with_capacity(params.num_pairs);
    for _ in 0..params.num_pairs {
        let t = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
        let r = loop {
            let rho = radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let cand = Point::new(t.x + rho * theta.cos(), t.y + rho * theta.sin());
            if cand.inside_square(side) {
                break cand;
            }
        };
        tx.push(t);
        rx.push(r);
    }
    Ok(Topology {
        tx,
        rx,
        ps: Point::new(side / 2.0, side / 2.0),
    })
}

/// One fading realization. `g_cross[m][n]` is the gain from transmitter `m`
/// to receiver `n`; the diagonal is unused and stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub h: Vec<Vec<Complex64>>,
    pub g_direct: Vec<f64>,
    pub g_cross: Vec<Vec<f64>>,
}

impl ChannelState {
    pub fn num_pairs(&self) -> usize {
        self.h.len()
    }
}

fn link_distance(a: &Point, b: &Point, link: impl FnOnce() -> String) -> Result<f64> {
    let d = a.distance(b);
    if d == 0.0 {
        return Err(Error::DegenerateGeometry { link: link() });
    }
    Ok(d)
}

/// Draws the energy channels `h_n` and all D2D link gains for `topology`.
pub fn sample_channels(topology: &Topology, params: &SystemParams, seed: u64) -> Result<ChannelState> {
    params.validate()?;
    let n = topology.num_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CHANNEL_STREAM);

    // Antenna-major order: the first M' antennas of an M-antenna draw equal
    // the M'-antenna draw, which pairs realizations across array sizes.
    let stds = topology
        .tx
        .iter()
        .enumerate()
        .map(|(i, tx)| Ok((params.mean_gain(link_distance(&topology.ps, tx, || format!("PS->tx{i}"))?) / 2.0).sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    let mut h = vec![Vec::with_capacity(params.num_antennas); n];
    for _ in 0..params.num_antennas {
        for (hn, std) in h.iter_mut().zip(&stds) {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            hn.push(Complex64::new(std * re, std * im));
        }
    }

    // Link gains use their own stream so they do not depend on the antenna count.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LINK_STREAM);
    let mut g_direct = Vec::with_capacity(n);
    let mut g_cross = vec![vec![0.0; n]; n];
    for m in 0..n {
        for k in 0..n {
            let d = link_distance(&topology.tx[m], &topology.rx[k], || format!("tx{m}->rx{k}"))?;
            let rho2: f64 = Exp1.sample(&mut rng);
            let g = params.mean_gain(d) * rho2;
            if m == k {
                g_direct.push(g);
            } else {
                g_cross[m][k] = g;
            }
        }
    }
    // `g_direct` was filled in row order, so entry m is the (m, m) link.
    Ok(ChannelState { h, g_direct, g_cross })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub w: Vec<Complex64>,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `|a^H b|^2`.
pub fn inner_gain(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr()
}

/// Equal-weight energy beamformer, renormalized to unit norm.
pub fn energy_beamformer(channels: &ChannelState) -> Result<Beamformer> {
    let n = channels.num_pairs();
    if n == 0 {
        return Err(Error::Dimension("beamformer needs at least one user".into()));
    }
    energy_beamformer_weighted(channels, &vec![1.0 / n as f64; n])
}

/// `w = sum_n sqrt(weight_n) h_n / ||h_n||`, then scaled to `||w|| = 1`.
pub fn energy_beamformer_weighted(channels: &ChannelState, weights: &[f64]) -> Result<Beamformer> {
    if weights.len() != channels.num_pairs() {
        return Err(Error::Dimension(format!(
            "{} weights for {} users",
            weights.len(),
            channels.num_pairs()
        )));
    }
    let m = channels.h.first().map_or(0, Vec::len);
    let mut w = vec![Complex64::new(0.0, 0.0); m];
    for (h, &weight) in channels.h.iter().zip(weights) {
        let nh = norm(h);
        if !(nh.is_finite() && nh > 0.0) {
            return Err(Error::Dimension("energy channel with zero or non-finite norm".into()));
        }
        let scale = weight.sqrt() / nh;
        for (wi, hi) in w.iter_mut().zip(h) {
            *wi += hi * scale;
        }
    }
    let nw = norm(&w);
    if nw == 0.0 {
        return Err(Error::CancellingChannels);
    }
    w.iter_mut().for_each(|z| *z /= nw);
    Ok(Beamformer { w })
}

/// One realized problem: harvest rates and link gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub params: SystemParams,
    /// Harvested power per unit of WET time, `eta * p_PS * |h_n^H w|^2`.
    pub e: Vec<f64>,
    pub g_direct: Vec<f64>,
    pub g_cross: Vec<Vec<f64>>,
    /// Users whose harvest rate cannot cover circuit power in finite time.
    pub weak_users: Vec<usize>,
}

impl Instance {
    /// Builds an instance from raw harvest rates and gains, checking shapes.
    pub fn from_parts(
        params: SystemParams,
        e: Vec<f64>,
        g_direct: Vec<f64>,
        g_cross: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = e.len();
        if g_direct.len() != n || g_cross.len() != n || g_cross.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "e has {n} users, g_direct {}, g_cross {}",
                g_direct.len(),
                g_cross.len()
            )));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !e.iter().chain(&g_direct).chain(g_cross.iter().flatten()).all(|&v| finite_nonneg(v)) {
            return Err(Error::Format("gains and harvest rates must be finite and >= 0".into()));
        }
        let floor = params.circuit_power * f64::EPSILON;
        let weak_users = e
            .iter()
            .enumerate()
            .filter(|(_, &en)| en <= floor)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            params,
            e,
            g_direct,
            g_cross,
            weak_users,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.e.len()
    }

    /// Gain from transmitter `from` to receiver `to` (direct when equal).
    #[inline]
    pub fn gain(&self, from: usize, to: usize) -> f64 {
        if from == to {
            self.g_direct[to]
        } else {
            self.g_cross[from][to]
        }
    }

    /// Interference plus noise seen by receiver `n`.
    pub fn interference(&self, p: &[f64], n: usize) -> f64 {
        p.iter()
            .enumerate()
            .filter(|&(m, _)| m != n)
            .map(|(m, &pm)| pm * self.g_cross[m][n])
            .sum::<f64>()
            + self.params.noise_power
    }

    /// Sub-instance keeping only `users`, in the given order.
    pub fn restrict(&self, users: &[usize]) -> Instance {
        let e = users.iter().map(|&i| self.e[i]).collect();
        let g_direct = users.iter().map(|&i| self.g_direct[i]).collect();
        let g_cross = users
            .iter()
            .map(|&m| users.iter().map(|&k| self.g_cross[m][k]).collect())
            .collect();
        let mut params = self.params.clone();
        params.num_pairs = users.len();
        Instance::from_parts(params, e, g_direct, g_cross).expect("restriction preserves shape")
    }
}

/// Combines channels and beamformer into harvest rates.
pub fn build_instance(channels: &ChannelState, beam: &Beamformer, params: &SystemParams) -> Result<Instance> {
    if channels.h.iter().any(|h| h.len() != beam.w.len()) {
        return Err(Error::Dimension("channel and beamformer lengths differ".into()));
    }
    let scale = params.conversion_eff * params.ps_power;
    let e = channels.h.iter().map(|h| scale * inner_gain(h, &beam.w)).collect();
    let mut params = params.clone();
    params.num_pairs = channels.num_pairs();
    Instance::from_parts(params, e, channels.g_direct.clone(), channels.g_cross.clone())
}

/// Topology, fading draw, beamformer and instance for one seed.
pub fn realize(params: &SystemParams, seed: u64) -> Result<(ChannelState, Instance)> {
    let topo = generate_topology(params, seed)?;
    let channels = sample_channels(&topo, params, seed)?;
    let beam = energy_beamformer(&channels)?;
    let inst = build_instance(&channels, &beam, params)?;
    Ok((channels, inst))
}

/// SINR at receiver `n`.
pub fn sinr(p: &[f64], instance: &Instance, n: usize) -> f64 {
    p[n] * instance.g_direct[n] / instance.interference(p, n)
}

/// Per-pair spectral efficiency `log2(1 + gamma_n)` during WIT.
pub fn rates(p: &[f64], instance: &Instance) -> Vec<f64> {
    (0..instance.num_pairs())
        .map(|n| sinr(p, instance, n).ln_1p() / std::f64::consts::LN_2)
        .collect()
}

pub fn sum_rate(p: &[f64], instance: &Instance) -> f64 {
    rates(p, instance).iter().sum()
}

/// `tau1 * sum_n log2(1 + gamma_n)` in bits/s/Hz.
pub fn sum_throughput(alloc: &Allocation, instance: &Instance) -> f64 {
    if alloc.tau1 == 0.0 {
        return 0.0;
    }
    alloc.tau1 * sum_rate(&alloc.p, instance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_instance(e: Vec<f64>, gd: Vec<f64>, gc: Vec<Vec<f64>>, noise: f64) -> Instance {
        let params = SystemParams {
            noise_power: noise,
            num_pairs: e.len(),
            ..SystemParams::default()
        };
        Instance::from_parts(params, e, gd, gc).unwrap()
    }

    #[test]
    fn default_noise_is_minus_110_dbm() {
        let p = SystemParams::default();
        assert!((p.noise_power / 1e-14 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topology_respects_pair_distance() {
        let params = SystemParams {
            num_pairs: 3,
            ..SystemParams::default()
        };
        let topo = generate_topology(&params, 7).unwrap();
        assert_eq!(topo.num_pairs(), 3);
        for (t, r) in topo.tx.iter().zip(&topo.rx) {
            assert!(t.distance(r) <= 10.0);
            assert!(t.inside_square(50.0) && r.inside_square(50.0));
        }
        assert_eq!(topo.ps, Point::new(25.0, 25.0));
    }

    #[test]
    fn zero_pair_distance_puts_rx_on_tx() {
        let params = SystemParams {
            max_pair_dist: 0.0,
            num_pairs: 4,
            ..SystemParams::default()
        };
        let topo = generate_topology(&params, 3).unwrap();
        assert_eq!(topo.tx, topo.rx);
        let err = sample_channels(&topo, &params, 3).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { .. }));
    }

    #[test]
    fn topology_is_deterministic() {
        let params = SystemParams::default();
        assert_eq!(generate_topology(&params, 11).unwrap(), generate_topology(&params, 11).unwrap());
        assert_ne!(generate_topology(&params, 11).unwrap(), generate_topology(&params, 12).unwrap());
    }

    #[test]
    fn draws_nest_across_antenna_counts() {
        let small = SystemParams {
            num_antennas: 2,
            ..SystemParams::default()
        };
        let large = SystemParams {
            num_antennas: 5,
            ..SystemParams::default()
        };
        let topo = generate_topology(&small, 4).unwrap();
        assert_eq!(topo, generate_topology(&large, 4).unwrap());
        let a = sample_channels(&topo, &small, 4).unwrap();
        let b = sample_channels(&topo, &large, 4).unwrap();
        assert_eq!((&a.g_direct, &a.g_cross), (&b.g_direct, &b.g_cross));
        for (hs, hl) in a.h.iter().zip(&b.h) {
            assert_eq!(hs[..], hl[..2]);
        }
    }

    #[test]
    fn path_loss_deterministic_part() {
        let p = SystemParams::default();
        assert!((p.mean_gain(10.0) - 1e-6).abs() < 1e-18);
        assert!((p.mean_gain(1.0) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn rayleigh_entry_power_matches_path_loss() {
        // PS at center, a single transmitter 10 m away.
        let params = SystemParams {
            num_antennas: 1000,
            num_pairs: 1,
            ..SystemParams::default()
        };
        let topo = Topology {
            tx: vec![Point::new(35.0, 25.0)],
            rx: vec![Point::new(36.0, 25.0)],
            ps: Point::new(25.0, 25.0),
        };
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..100 {
            let ch = sample_channels(&topo, &params, seed).unwrap();
            acc += ch.h[0].iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += ch.h[0].len();
        }
        let mean = acc / count as f64;
        assert!((mean / 1e-6 - 1.0).abs() < 0.03, "mean entry power {mean:e}");
    }

    #[test]
    fn fading_moment_unit_mean() {
        // rho^2 = g / (c d^-alpha) over many direct links.
        let params = SystemParams {
            num_antennas: 1,
            num_pairs: 50,
            ..SystemParams::default()
        };
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..40 {
            let topo = generate_topology(&params, seed).unwrap();
            let ch = sample_channels(&topo, &params, seed).unwrap();
            for m in 0..params.num_pairs {
                for k in 0..params.num_pairs {
                    let g = if m == k { ch.g_direct[m] } else { ch.g_cross[m][k] };
                    sum += g / params.mean_gain(topo.tx[m].distance(&topo.rx[k]));
                    count += 1;
                }
            }
        }
        assert!(count >= 100_000);
        let mean = sum / count as f64;
        assert!((0.97..=1.03).contains(&mean), "mean rho^2 = {mean}");
    }

    #[test]
    fn single_user_beamformer_is_matched_filter() {
        let h = vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25), Complex64::new(0.0, 3.0)];
        let ch = ChannelState {
            h: vec![h.clone()],
            g_direct: vec![1.0],
            g_cross: vec![vec![0.0]],
        };
        let w = energy_beamformer(&ch).unwrap().w;
        let nh = norm(&h);
        for (wi, hi) in w.iter().zip(&h) {
            assert!((wi - hi / nh).norm() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_pair_splits_energy_evenly() {
        let s = 1e-3;
        let h1 = vec![Complex64::new(s, 0.0), Complex64::new(0.0, 0.0)];
        let h2 = vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, s)];
        let ch = ChannelState {
            h: vec![h1.clone(), h2.clone()],
            g_direct: vec![1.0, 1.0],
            g_cross: vec![vec![0.0; 2]; 2],
        };
        let beam = energy_beamformer(&ch).unwrap();
        assert!((norm(&beam.w) - 1.0).abs() < 1e-12);
        for h in [&h1, &h2] {
            let g = inner_gain(h, &beam.w);
            assert!((g / (1e-6 / 2.0) - 1.0).abs() < 1e-12);
        }
        let params = SystemParams {
            conversion_eff: 0.5,
            ps_power: 1.0,
            ..SystemParams::default()
        };
        let inst = build_instance(&ch, &beam, &params).unwrap();
        for e in &inst.e {
            assert!((e / 2.5e-7 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_channels_cancel() {
        let h1 = vec![Complex64::new(1.0, 0.0)];
        let h2 = vec![Complex64::new(-1.0, 0.0)];
        let ch = ChannelState {
            h: vec![h1, h2],
            g_direct: vec![1.0, 1.0],
            g_cross: vec![vec![0.0; 2]; 2],
        };
        assert!(matches!(energy_beamformer(&ch), Err(Error::CancellingChannels)));
    }

    #[test]
    fn unit_channel_harvest_rate() {
        let ch = ChannelState {
            h: vec![vec![Complex64::new(1.0, 0.0)]],
            g_direct: vec![1.0],
            g_cross: vec![vec![0.0]],
        };
        let beam = Beamformer {
            w: vec![Complex64::new(1.0, 0.0)],
        };
        let params = SystemParams {
            conversion_eff: 0.5,
            ps_power: 1.0,
            ..SystemParams::default()
        };
        let inst = build_instance(&ch, &beam, &params).unwrap();
        assert_eq!(inst.e, vec![0.5]);

        let tiny = SystemParams {
            conversion_eff: 1e-300,
            ..params
        };
        let inst = build_instance(&ch, &beam, &tiny).unwrap();
        assert!(inst.e[0] < 1e-299);
        assert_eq!(inst.weak_users, vec![0]);
    }

    #[test]
    fn sinr_examples() {
        let inst = scalar_instance(vec![1.0], vec![1e-6], vec![vec![0.0]], 1e-14);
        assert!((sinr(&[1e-4], &inst, 0) - 1e4).abs() < 1e-8);
        assert_eq!(sinr(&[0.0], &inst, 0), 0.0);

        let inst = scalar_instance(
            vec![1.0, 1.0],
            vec![1e-6, 1e-6],
            vec![vec![0.0, 0.0], vec![1e-8, 0.0]],
            1e-14,
        );
        let g1 = sinr(&[1e-4, 2e-4], &inst, 0);
        let expected = 1e-10 / (2e-12 + 1e-14);
        assert!((g1 / expected - 1.0).abs() < 1e-12);
        assert!((g1 - 49.75124).abs() < 1e-4);
    }

    #[test]
    fn throughput_examples() {
        let inst = scalar_instance(vec![1.0], vec![1e-6], vec![vec![0.0]], 1e-14);
        let alloc = Allocation::from_tau1(0.5, vec![1e-4]);
        let v = sum_throughput(&alloc, &inst);
        assert!((v - 0.5 * 10001f64.log2()).abs() < 1e-12);
        assert!((v - 6.644).abs() < 1e-3);
        assert_eq!(sum_throughput(&Allocation::from_tau1(0.0, vec![1e-4]), &inst), 0.0);

        let inst = scalar_instance(vec![1.0; 2], vec![1e-6, 3e-7], vec![vec![0.0; 2]; 2], 1e-14);
        let a = Allocation::from_tau1(0.3, vec![1e-6, 4e-6]);
        let b = Allocation::from_tau1(0.3, vec![2e-6, 8e-6]);
        assert!(sum_throughput(&b, &inst) > sum_throughput(&a, &inst));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_instance(n: usize, seed: u64) -> Instance {
            let params = SystemParams {
                num_pairs: n,
                ..SystemParams::default()
            };
            realize(&params, seed).unwrap().1
        }

        proptest! {
            #[test]
            fn sinr_monotone_in_own_and_other_power(
                seed in 0u64..500,
                n in 2usize..6,
                scale in proptest::collection::vec(1e-9f64..1e-5, 6),
                bump in 1.0f64..10.0,
                who in 0usize..6,
            ) {
                let inst = random_instance(n, seed);
                let p: Vec<f64> = scale[..n].to_vec();
                let who = who % n;
                let mut q = p.clone();
                q[who] *= bump;
                for k in 0..n {
                    let before = sinr(&p, &inst, k);
                    let after = sinr(&q, &inst, k);
                    if k == who {
                        prop_assert!(after >= before);
                    } else {
                        prop_assert!(after <= before);
                    }
                }
            }

            #[test]
            fn throughput_homogeneous_in_tau1(seed in 0u64..500, t1 in 0.0f64..0.5, k in 0.0f64..2.0) {
                let inst = random_instance(3, seed);
                let p = vec![1e-7, 2e-7, 5e-8];
                let a = sum_throughput(&Allocation::from_tau1(t1, p.clone()), &inst);
                let b = sum_throughput(&Allocation::from_tau1(t1 * k, p), &inst);
                prop_assert!((b - k * a).abs() <= 1e-12 * (1.0 + b.abs()));
            }

            #[test]
            fn beamformer_unit_norm_and_harvest_crosscheck(seed in 0u64..2000, m in 1usize..16, n in 1usize..10) {
                let params = SystemParams { num_antennas: m, num_pairs: n, ..SystemParams::default() };
                let topo = generate_topology(&params, seed).unwrap();
                let ch = sample_channels(&topo, &params, seed).unwrap();
                let beam = energy_beamformer(&ch).unwrap();
                prop_assert!((norm(&beam.w) - 1.0).abs() <= 1e-12);
                let inst = build_instance(&ch, &beam, &params).unwrap();
                for (h, e) in ch.h.iter().zip(&inst.e) {
                    // Independent real-arithmetic evaluation of |h^H w|^2.
                    let (mut re, mut im) = (0.0, 0.0);
                    for (a, b) in h.iter().zip(&beam.w) {
                        re += a.re * b.re + a.im * b.im;
                        im += a.re * b.im - a.im * b.re;
                    }
                    let expected = params.conversion_eff * params.ps_power * (re * re + im * im);
                    prop_assert!((e - expected).abs() <= 1e-12 * expected);
                }
            }
        }
    }
}
