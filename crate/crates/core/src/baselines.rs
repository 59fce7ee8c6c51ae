//! Comparison schemes.
//!
//! - TDMA: the same beamformed harvesting phase, but pairs then transmit in
//!   exclusive slots, so there is no interference but WIT time is shared.
//! - OET (omnidirectional energy transfer): no beamforming gain in the
//!   harvesting phase, the same simultaneous transmission afterwards.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{self, ChannelState, Instance, SystemParams};
use crate::oracle::golden_section_max;
use crate::solver::{self, Allocation, SolverOptions, SolverReport};

/// Bracket tolerance of the golden-section search over `tau0`.
pub const TDMA_TAU0_TOL: f64 = 1e-8;

const BISECT_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmaAllocation {
    pub tau0: f64,
    /// Slot length of every pair.
    pub tau: Vec<f64>,
    pub p: Vec<f64>,
}

impl TdmaAllocation {
    pub fn wit_time(&self) -> f64 {
        self.tau.iter().sum()
    }
}

/// Throughput of one pair as a function of its slot length for a fixed
/// harvest time. All harvested energy is spent: `p = tau0 e / tau - p_c`.
struct Slot {
    /// `tau0 * e * g / sigma^2`.
    energy_snr: f64,
    /// `1 - p_c g / sigma^2`.
    base: f64,
    /// Longest slot for which `p >= 0`.
    max_len: f64,
}

impl Slot {
    fn new(tau0: f64, e: f64, g: f64, noise: f64, pc: f64, budget: f64) -> Self {
        let k = g / noise;
        let max_len = if pc > 0.0 { (tau0 * e / pc).min(budget) } else { budget };
        Self {
            energy_snr: tau0 * e * k,
            base: 1.0 - pc * k,
            max_len,
        }
    }

    fn snr_plus_one(&self, tau: f64) -> f64 {
        (self.base + self.energy_snr / tau).max(1.0)
    }

    fn value(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        tau * self.snr_plus_one(tau).log2()
    }

    /// Derivative of `value`; decreasing in `tau`.
    fn slope(&self, tau: f64) -> f64 {
        let s = self.snr_plus_one(tau);
        s.log2() - self.energy_snr / (tau * s * LN_2)
    }

    /// Slot length at which the slope equals `lambda` (clipped to the range).
    fn length_at(&self, lambda: f64) -> f64 {
        if self.max_len <= 0.0 {
            return 0.0;
        }
        if self.slope(self.max_len) >= lambda {
            return self.max_len;
        }
        // The slope diverges at 0+, so the root is interior. Bisect in log space.
        let (mut lo, mut hi) = (self.max_len * 1e-300_f64.max(f64::MIN_POSITIVE), self.max_len);
        for _ in 0..BISECT_ITERS {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if self.slope(mid) > lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    }
}

/// Best slots for a fixed harvest time: water-filling on the common slope.
fn slots_for(instance: &Instance, tau0: f64) -> (Vec<f64>, f64) {
    let budget = 1.0 - tau0;
    let prm = &instance.params;
    let slots: Vec<Slot> = (0..instance.num_pairs())
        .map(|n| Slot::new(tau0, instance.e[n], instance.g_direct[n], prm.noise_power, prm.circuit_power, budget))
        .collect();
    let lengths = |lambda: f64| slots.iter().map(|s| s.length_at(lambda)).collect::<Vec<_>>();

    let mut tau = lengths(0.0);
    if tau.iter().sum::<f64>() > budget {
        let mut hi = 1.0;
        while lengths(hi).iter().sum::<f64>() > budget {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (lo + hi);
            if lengths(mid).iter().sum::<f64>() > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        tau = lengths(hi);
    }
    let value = slots.iter().zip(&tau).map(|(s, &t)| s.value(t)).sum();
    (tau, value)
}

/// TDMA harvest-then-transmit: maximizes `sum_n tau_n log2(1 + p_n g_n / sigma^2)`
/// over `tau0`, slot lengths and powers, spending all harvested energy.
pub fn tdma_solve(instance: &Instance) -> (TdmaAllocation, f64) {
    let n = instance.num_pairs();
    if instance.e.iter().all(|&e| e <= 0.0) {
        return (
            TdmaAllocation {
                tau0: 0.0,
                tau: vec![0.0; n],
                p: vec![0.0; n],
            },
            0.0,
        );
    }
    let (tau0, _) = golden_section_max(|t0| slots_for(instance, t0).1, 0.0, 1.0, TDMA_TAU0_TOL);
    let (tau, value) = slots_for(instance, tau0);
    let pc = instance.params.circuit_power;
    let p = tau
        .iter()
        .zip(&instance.e)
        .map(|(&t, &e)| if t > 0.0 { (tau0 * e / t - pc).max(0.0) } else { 0.0 })
        .collect();
    (TdmaAllocation { tau0, tau, p }, value)
}

/// Throughput of a given TDMA allocation.
pub fn tdma_value(alloc: &TdmaAllocation, instance: &Instance) -> f64 {
    let noise = instance.params.noise_power;
    alloc
        .tau
        .iter()
        .zip(&alloc.p)
        .zip(&instance.g_direct)
        .map(|((t, p), g)| t * (p * g / noise).ln_1p() / LN_2)
        .sum()
}

/// Instance whose harvest rates come from omnidirectional transfer,
/// `eta * p_PS * ||h_n||^2 / M`. Link gains are unchanged.
pub fn oet_instance(channels: &ChannelState, params: &SystemParams) -> Result<Instance> {
    let m = params.num_antennas as f64;
    let scale = params.conversion_eff * params.ps_power / m;
    let e = channels
        .h
        .iter()
        .map(|h| scale * h.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .collect();
    let mut params = params.clone();
    params.num_pairs = channels.num_pairs();
    Instance::from_parts(params, e, channels.g_direct.clone(), channels.g_cross.clone())
}

/// OET harvesting followed by the proposed allocator.
pub fn oet_solve(
    channels: &ChannelState,
    params: &SystemParams,
    opts: &SolverOptions,
) -> Result<(Allocation, SolverReport, f64)> {
    let inst = oet_instance(channels, params)?;
    let (alloc, report) = solver::solve(&inst, opts)?;
    let value = model::sum_throughput(&alloc, &inst);
    Ok((alloc, report, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{energy_beamformer, generate_topology, realize, sample_channels};

    fn pair_instance(e: Vec<f64>, g: Vec<f64>, pc: f64) -> Instance {
        let n = e.len();
        let params = SystemParams {
            circuit_power: pc,
            num_pairs: n,
            ..SystemParams::default()
        };
        Instance::from_parts(params, e, g, vec![vec![0.0; n]; n]).unwrap()
    }

    #[test]
    fn single_pair_matches_proposed() {
        let opts = SolverOptions::default();
        for seed in 0..10 {
            let params = SystemParams {
                num_pairs: 1,
                ..SystemParams::default()
            };
            let inst = realize(&params, seed).unwrap().1;
            let (_, tdma) = tdma_solve(&inst);
            let (alloc, _) = solver::solve(&inst, &opts).unwrap();
            let proposed = model::sum_throughput(&alloc, &inst);
            assert!((tdma - proposed).abs() <= 1e-6 * proposed, "{tdma} vs {proposed}");
        }
    }

    #[test]
    fn energy_is_fully_spent() {
        let params = SystemParams::default();
        for seed in 0..5 {
            let inst = realize(&params, seed).unwrap().1;
            let (a, v) = tdma_solve(&inst);
            assert!(a.tau0 + a.wit_time() <= 1.0 + 1e-9);
            assert!((tdma_value(&a, &inst) - v).abs() <= 1e-9 * v);
            for n in 0..inst.num_pairs() {
                if a.tau[n] > 0.0 && a.p[n] > 0.0 {
                    let used = a.tau[n] * (a.p[n] + inst.params.circuit_power);
                    let harvested = a.tau0 * inst.e[n];
                    assert!((used - harvested).abs() <= 1e-8 * harvested);
                }
            }
        }
    }

    #[test]
    fn proposed_dominates_without_interference() {
        // With p_c = 0 every pair can use the whole WIT phase at once.
        let opts = SolverOptions::default();
        let inst = pair_instance(vec![2e-7, 6e-7], vec![5e-6, 1e-6], 0.0);
        let (_, tdma) = tdma_solve(&inst);
        let (alloc, _) = solver::solve(&inst, &opts).unwrap();
        assert!(model::sum_throughput(&alloc, &inst) >= tdma);
    }

    #[test]
    fn vanishing_phases_give_zero() {
        let inst = pair_instance(vec![2e-7, 6e-7], vec![5e-6, 1e-6], 1e-7);
        assert_eq!(slots_for(&inst, 0.0).1, 0.0);
        assert!(slots_for(&inst, 1.0).1.abs() < 1e-12);
        assert!(slots_for(&inst, 1e-9).1 < 1e-6);
    }

    #[test]
    fn brute_force_two_pairs() {
        let inst = pair_instance(vec![2e-7, 6e-7], vec![5e-6, 1e-6], 1e-7);
        let (_, v) = tdma_solve(&inst);
        let s = Slot::new;
        let prm = &inst.params;
        let mut best: f64 = 0.0;
        let k = 400;
        for i in 1..k {
            let tau0 = i as f64 / k as f64;
            for j in 0..=k {
                let t1 = (1.0 - tau0) * j as f64 / k as f64;
                let t2 = 1.0 - tau0 - t1;
                let mut total = 0.0;
                for (n, t) in [(0, t1), (1, t2)] {
                    let slot = s(tau0, inst.e[n], inst.g_direct[n], prm.noise_power, prm.circuit_power, 1.0);
                    if t <= slot.max_len {
                        total += slot.value(t);
                    }
                }
                best = best.max(total);
            }
        }
        assert!(v >= best - 1e-9, "{v} < grid {best}");
        assert!(v - best <= 1e-2 * v, "{v} too far above grid {best}");
    }

    #[test]
    fn oet_matches_beamforming_with_one_antenna() {
        let params = SystemParams {
            num_antennas: 1,
            ..SystemParams::default()
        };
        let topo = generate_topology(&params, 9).unwrap();
        let ch = sample_channels(&topo, &params, 9).unwrap();
        let beam = energy_beamformer(&ch).unwrap();
        let bf = model::build_instance(&ch, &beam, &params).unwrap();
        let oet = oet_instance(&ch, &params).unwrap();
        for (a, b) in bf.e.iter().zip(&oet.e) {
            assert!((a - b).abs() <= 1e-12 * a);
        }
        assert_eq!(bf.g_direct, oet.g_direct);
        assert_eq!(bf.g_cross, oet.g_cross);
    }

    #[test]
    fn single_user_beamforming_gains_factor_m() {
        let params = SystemParams {
            num_antennas: 10,
            num_pairs: 1,
            ..SystemParams::default()
        };
        let topo = generate_topology(&params, 2).unwrap();
        let ch = sample_channels(&topo, &params, 2).unwrap();
        let beam = energy_beamformer(&ch).unwrap();
        let bf = model::build_instance(&ch, &beam, &params).unwrap();
        let oet = oet_instance(&ch, &params).unwrap();
        assert!((bf.e[0] / oet.e[0] - 10.0).abs() < 1e-9);
    }
}
