//! Cycle, activity and energy accounting.
//!
//! Cycle constants and energy weights are model parameters. The defaults are
//! calibrated to the qualitative behavior of the hardware (address-event
//! input wins on latency only when sparse; serial latency ignores which
//! channels fire; shifters are cheaper than multipliers; address-event
//! control bursts dominate power at low input density), not measured.

use std::ops::{Add, AddAssign};
use std::path::Path;

use thiserror::Error;

use crate::neuron::{Architecture, DecayImpl, IoMode, Mode, NeuronConfig, Trace};
use crate::stimulus::SpikeTrain;

pub const DEFAULT_CLOCK_HZ: f64 = 1e8;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("clock-driven latency of {0} is zero, cannot normalize")]
    ZeroClockLatency(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cycles spent per timestep by each architecture's control unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleCosts {
    pub clk_idle_step: u64,
    pub clk_active_step_base: u64,
    pub clk_per_input_scan: u64,
    pub evt_idle_step: u64,
    pub evt_active_step_base: u64,
    pub evt_per_input_scan: u64,
    pub aer_per_active_step_base: u64,
    pub aer_per_packet: u64,
    /// Clock-driven engines scan every input on every step, all-zero or not.
    pub clock_full_scan: bool,
}

impl Default for CycleCosts {
    fn default() -> Self {
        Self {
            clk_idle_step: 2,
            clk_active_step_base: 2,
            clk_per_input_scan: 1,
            evt_idle_step: 1,
            evt_active_step_base: 2,
            evt_per_input_scan: 1,
            aer_per_active_step_base: 2,
            aer_per_packet: 2,
            clock_full_scan: false,
        }
    }
}

/// Operation counts accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActivityCounters {
    pub multiplies: u64,
    pub shifts: u64,
    pub adds: u64,
    pub lut_reads: u64,
    pub threshold_checks: u64,
    pub reg_writes: u64,
    pub cu_transitions: u64,
    pub mem_reads: u64,
}

impl AddAssign for ActivityCounters {
    fn add_assign(&mut self, o: Self) {
        self.multiplies += o.multiplies;
        self.shifts += o.shifts;
        self.adds += o.adds;
        self.lut_reads += o.lut_reads;
        self.threshold_checks += o.threshold_checks;
        self.reg_writes += o.reg_writes;
        self.cu_transitions += o.cu_transitions;
        self.mem_reads += o.mem_reads;
    }
}

impl Add for ActivityCounters {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

/// Energy units charged per counted operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWeights {
    pub e_mult: f64,
    pub e_shift: f64,
    pub e_add: f64,
    pub e_lut: f64,
    pub e_cmp: f64,
    pub e_reg: f64,
    pub e_cu: f64,
    pub e_mem: f64,
    /// Control burst charged once per active step, address-event engines only.
    pub e_step_fixed: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            e_mult: 8.0,
            e_shift: 1.0,
            e_add: 2.0,
            e_lut: 2.0,
            e_cmp: 1.0,
            e_reg: 1.0,
            e_cu: 4.0,
            e_mem: 3.0,
            e_step_fixed: 12.0,
        }
    }
}

/// Everything loadable from a cost config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub cycles: CycleCosts,
    pub energy: EnergyWeights,
    pub clock_hz: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            cycles: CycleCosts::default(),
            energy: EnergyWeights::default(),
            clock_hz: DEFAULT_CLOCK_HZ,
        }
    }
}

impl CostModel {
    /// Parses `key = number` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, CostError> {
        let mut m = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CostError::Parse { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = number`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "clock_full_scan" {
                m.cycles.clock_full_scan = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(err(format!("clock_full_scan must be true/false, got `{value}`"))),
                };
                continue;
            }
            let number: f64 = value
                .parse()
                .map_err(|_| err(format!("`{value}` is not a number")))?;
            if !number.is_finite() || number < 0.0 {
                return Err(err(format!("{key} must be a finite non-negative number")));
            }
            let cycles = |slot: &mut u64| -> Result<(), CostError> {
                if number.fract() != 0.0 {
                    return Err(err(format!("{key} must be a whole number of cycles")));
                }
                *slot = number as u64;
                Ok(())
            };
            let c = &mut m.cycles;
            let e = &mut m.energy;
            match key {
                "clk_idle_step" => cycles(&mut c.clk_idle_step)?,
                "clk_active_step_base" => cycles(&mut c.clk_active_step_base)?,
                "clk_per_input_scan" => cycles(&mut c.clk_per_input_scan)?,
                "evt_idle_step" => cycles(&mut c.evt_idle_step)?,
                "evt_active_step_base" => cycles(&mut c.evt_active_step_base)?,
                "evt_per_input_scan" => cycles(&mut c.evt_per_input_scan)?,
                "aer_per_active_step_base" => cycles(&mut c.aer_per_active_step_base)?,
                "aer_per_packet" => cycles(&mut c.aer_per_packet)?,
                "e_mult" => e.e_mult = number,
                "e_shift" => e.e_shift = number,
                "e_add" => e.e_add = number,
                "e_lut" => e.e_lut = number,
                "e_cmp" => e.e_cmp = number,
                "e_reg" => e.e_reg = number,
                "e_cu" => e.e_cu = number,
                "e_mem" => e.e_mem = number,
                "e_step_fixed" => e.e_step_fixed = number,
                "clock_hz" if number > 0.0 => m.clock_hz = number,
                "clock_hz" => return Err(err("clock_hz must be positive".into())),
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Closed-form latency in cycles. Must agree with the cycles the engines accrue.
pub fn latency(config: &NeuronConfig, train: &SpikeTrain, costs: &CycleCosts) -> u64 {
    let n_steps = train.n_steps() as u64;
    let active = train.active_steps();
    let n_active = active.len() as u64;
    let n_idle = n_steps - n_active;
    let n = config.n_inputs() as u64;
    match (config.mode(), config.io_mode()) {
        (Mode::ClockDriven, _) => {
            let active_cost = costs.clk_active_step_base + n * costs.clk_per_input_scan;
            let idle_cost = if costs.clock_full_scan {
                active_cost
            } else {
                costs.clk_idle_step
            };
            n_active * active_cost + n_idle * idle_cost
        }
        (Mode::EventDriven, IoMode::Serial) => {
            n_active * (costs.evt_active_step_base + n * costs.evt_per_input_scan)
                + n_idle * costs.evt_idle_step
        }
        (Mode::EventDriven, IoMode::Aer) => {
            n_active * costs.aer_per_active_step_base + train.len() as u64 * costs.aer_per_packet
        }
    }
}

pub fn collect_activity(trace: &Trace) -> ActivityCounters {
    trace.activity
}

/// Dot product of counters and weights, plus the per-active-step control
/// burst for address-event engines.
pub fn energy(
    activity: &ActivityCounters,
    weights: &EnergyWeights,
    n_active_steps: u64,
    io: IoMode,
) -> f64 {
    let a = activity;
    let w = weights;
    let ops = a.multiplies as f64 * w.e_mult
        + a.shifts as f64 * w.e_shift
        + a.adds as f64 * w.e_add
        + a.lut_reads as f64 * w.e_lut
        + a.threshold_checks as f64 * w.e_cmp
        + a.reg_writes as f64 * w.e_reg
        + a.cu_transitions as f64 * w.e_cu
        + a.mem_reads as f64 * w.e_mem;
    let bursts = match io {
        IoMode::Aer => n_active_steps as f64 * w.e_step_fixed,
        IoMode::Serial => 0.0,
    };
    ops + bursts
}

/// Latency, energy and average power of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub latency_cycles: u64,
    pub latency_seconds: f64,
    pub energy_units: f64,
    /// `energy_units / latency_cycles`, or 0 for a run that took no cycles.
    pub avg_power_units: f64,
}

impl RunMetrics {
    pub fn new(latency_cycles: u64, energy_units: f64, clock_hz: f64) -> Self {
        let avg_power_units = if latency_cycles == 0 {
            0.0
        } else {
            energy_units / latency_cycles as f64
        };
        Self {
            latency_cycles,
            latency_seconds: latency_cycles as f64 / clock_hz,
            energy_units,
            avg_power_units,
        }
    }

    pub fn from_trace(trace: &Trace, io: IoMode, model: &CostModel) -> Self {
        let e = energy(&trace.activity, &model.energy, trace.active_steps, io);
        Self::new(trace.total_cycles, e, model.clock_hz)
    }

    /// Power per second of wall time at the model clock.
    pub fn avg_power_per_second(&self) -> f64 {
        if self.latency_seconds == 0.0 {
            0.0
        } else {
            self.energy_units / self.latency_seconds
        }
    }
}

/// `R[i][k] = L_event_i / L_clock_k`.
pub fn ratio_matrix(
    event_latencies: &[(Architecture, u64)],
    clock_latencies: &[(Architecture, u64)],
) -> Result<Vec<Vec<f64>>, CostError> {
    if let Some((arch, _)) = clock_latencies.iter().find(|(_, l)| *l == 0) {
        return Err(CostError::ZeroClockLatency(arch.name().into()));
    }
    Ok(event_latencies
        .iter()
        .map(|&(_, le)| {
            clock_latencies
                .iter()
                .map(|&(_, lc)| le as f64 / lc as f64)
                .collect()
        })
        .collect())
}

/// Per-step activity of one update, as the engines charge it.
pub(crate) struct StepCharge {
    pub cycles: u64,
    pub activity: ActivityCounters,
}

pub(crate) fn decay_activity(decay: DecayImpl, via_lut: bool) -> ActivityCounters {
    ActivityCounters {
        multiplies: (decay == DecayImpl::Multiplier) as u64,
        shifts: (decay == DecayImpl::Shifter) as u64,
        lut_reads: via_lut as u64,
        ..Default::default()
    }
}

/// Cost of a clock-driven step with `spikes` set bits out of `n` inputs.
pub(crate) fn clock_step_charge(
    costs: &CycleCosts,
    decay: DecayImpl,
    n: u64,
    spikes: u64,
    fired: bool,
) -> StepCharge {
    let scan = spikes > 0 || costs.clock_full_scan;
    let mut a = decay_activity(decay, false);
    a.mem_reads = spikes;
    a.adds = spikes;
    a.threshold_checks = 1;
    a.reg_writes = 1 + fired as u64;
    let cycles = if scan {
        a.cu_transitions = 2 + n;
        costs.clk_active_step_base + n * costs.clk_per_input_scan
    } else {
        a.cu_transitions = 2;
        costs.clk_idle_step
    };
    StepCharge {
        cycles,
        activity: a,
    }
}

/// Cost of an event-driven update consuming `spikes` inputs.
pub(crate) fn event_step_charge(
    costs: &CycleCosts,
    decay: DecayImpl,
    io: IoMode,
    n: u64,
    spikes: u64,
    fired: bool,
) -> StepCharge {
    let mut a = decay_activity(decay, true);
    a.mem_reads = spikes;
    a.adds = spikes;
    a.threshold_checks = 1;
    // membrane + time register
    a.reg_writes = 2 + fired as u64;
    let cycles = match io {
        IoMode::Serial => {
            a.cu_transitions = 2 + n;
            costs.evt_active_step_base + n * costs.evt_per_input_scan
        }
        IoMode::Aer => {
            // wake, decay, decode+fetch per packet, fire check
            a.cu_transitions = 3 + 2 * spikes;
            costs.aer_per_active_step_base + spikes * costs.aer_per_packet
        }
    };
    StepCharge {
        cycles,
        activity: a,
    }
}

/// Idle step of an event-driven engine: serial inputs bump the interval
/// counter, address-event inputs cost nothing.
pub(crate) fn event_idle_charge(costs: &CycleCosts, io: IoMode) -> StepCharge {
    match io {
        IoMode::Serial => StepCharge {
            cycles: costs.evt_idle_step,
            activity: ActivityCounters {
                reg_writes: 1,
                cu_transitions: 1,
                ..Default::default()
            },
        },
        IoMode::Aer => StepCharge {
            cycles: 0,
            activity: ActivityCounters::default(),
        },
    }
}

/// Decay-only update forced when the interval counter would overflow.
pub(crate) fn counter_wrap_charge(decay: DecayImpl) -> ActivityCounters {
    let mut a = decay_activity(decay, true);
    a.reg_writes = 2;
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = CycleCosts::default();
        assert_eq!(
            [
                c.clk_idle_step,
                c.clk_active_step_base,
                c.clk_per_input_scan,
                c.evt_idle_step,
                c.evt_active_step_base,
                c.evt_per_input_scan,
                c.aer_per_active_step_base,
                c.aer_per_packet
            ],
            [2, 2, 1, 1, 2, 1, 2, 2]
        );
        let e = EnergyWeights::default();
        assert!(e.e_mult > e.e_shift);
        assert_eq!(CostModel::default().clock_hz, 1e8);
    }

    #[test]
    fn energy_examples() {
        let w = EnergyWeights::default();
        assert_eq!(energy(&ActivityCounters::default(), &w, 0, IoMode::Serial), 0.0);
        let one_mult = ActivityCounters {
            multiplies: 1,
            ..Default::default()
        };
        assert_eq!(energy(&one_mult, &w, 0, IoMode::Serial), 8.0);
        assert_eq!(energy(&one_mult, &w, 3, IoMode::Serial), 8.0);
        assert_eq!(energy(&one_mult, &w, 3, IoMode::Aer), 8.0 + 36.0);
    }

    #[test]
    fn metrics_identity() {
        let m = RunMetrics::new(280, 1234.5, DEFAULT_CLOCK_HZ);
        assert_eq!(m.latency_seconds, 2.8e-6);
        assert!((m.avg_power_units * 280.0 - 1234.5).abs() <= 1e-12 * 1234.5);
        let z = RunMetrics::new(0, 0.0, DEFAULT_CLOCK_HZ);
        assert_eq!((z.avg_power_units, z.avg_power_per_second()), (0.0, 0.0));
    }

    #[test]
    fn ratio_examples() {
        use Architecture::*;
        let r = ratio_matrix(&[(EventAerMult, 10)], &[(ClockMult, 10), (ClockShift, 10)]).unwrap();
        assert_eq!(r, vec![vec![1.0, 1.0]]);
        let r = ratio_matrix(&[(EventAerMult, 40), (EventAerShift, 1800)], &[(ClockMult, 280), (ClockShift, 1000)]).unwrap();
        assert!((r[0][0] - 0.142857).abs() < 1e-6);
        assert_eq!(r[1][1], 1.8);
        assert!(matches!(
            ratio_matrix(&[(EventAerMult, 1)], &[(ClockMult, 0)]),
            Err(CostError::ZeroClockLatency(_))
        ));
    }

    #[test]
    fn config_file() {
        let m = CostModel::parse(
            "# tuning\ne_mult = 10\n  aer_per_packet=3 # inline\n\nclock_full_scan = true\nclock_hz = 5e7\n",
        )
        .unwrap();
        assert_eq!(m.energy.e_mult, 10.0);
        assert_eq!(m.cycles.aer_per_packet, 3);
        assert!(m.cycles.clock_full_scan);
        assert_eq!(m.clock_hz, 5e7);
        assert_eq!(m.energy.e_shift, 1.0);

        for (text, line) in [
            ("e_bogus = 1\n", 1),
            ("\ne_mult 3\n", 2),
            ("e_mult = abc\n", 1),
            ("e_mult = -1\n", 1),
            ("aer_per_packet = 1.5\n", 1),
            ("clock_full_scan = maybe\n", 1),
            ("clock_hz = 0\n", 1),
        ] {
            match CostModel::parse(text) {
                Err(CostError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} -> {other:?}"),
            }
        }
    }
}
