//! The six LIF neuron engines and their shared update datapath.
//!
//! Every update runs decay, then accumulation of the active weights, then
//! the fire check with reset. Clock-driven engines decay once per timestep.
//! Event-driven engines only wake on input and catch up the elapsed decay
//! with one lookup into a `beta^dt` table.
//!
//! A fresh [`NeuronState`] sits at time `-1`: the first clock step decays
//! the initial membrane once, and the first event at `t` sees `dt = t + 1`.

mod config;
pub mod divergence;
pub mod reference;

use thiserror::Error;

use crate::cost::{self, ActivityCounters, CycleCosts};
use crate::fxp::{add_with, decay_mult, decay_shift, sub_with, FxpError, QValue};
use crate::stimulus::{encode_aer, encode_serial, SpikeTrain, StimulusError};

pub use config::{Architecture, DecayImpl, IoMode, Mode, NeuronConfig, NeuronConfigBuilder, ResetMode};
pub use reference::{reference_run, RealRecord, RealTrace};

#[derive(Debug, Error)]
pub enum NeuronError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{op} called on a {arch} engine")]
    WrongMode { op: &'static str, arch: &'static str },
    #[error("input vector has {got} bits, engine has {expected} inputs")]
    InputWidth { got: usize, expected: usize },
    #[error("event update at t={now} carries no active inputs")]
    EmptyEvent { now: u32 },
    #[error("event at t={now} precedes the last update at t={last}")]
    TimeReversed { now: u32, last: i64 },
    #[error("interval {dt} at t={now} overflows the {counter_bits}-bit counter")]
    CounterOverflow { now: u32, dt: i64, counter_bits: u32 },
    #[error("address {address} is not one of the {n_inputs} inputs (malformed AER stream)")]
    UnknownAddress { address: u32, n_inputs: usize },
    #[error("train has {train_channels} channels and {train_steps} steps; engine needs {n_inputs} channels and at most {max_steps} steps")]
    TrainMismatch {
        train_channels: u32,
        train_steps: u32,
        n_inputs: usize,
        max_steps: u64,
    },
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
}

/// Mutable per-neuron state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeuronState {
    pub u_mem: QValue,
    /// Timestep of the latest update; `-1` before the first.
    pub last_event_time: i64,
    pub fired_last: bool,
}

impl NeuronState {
    pub fn initial(config: &NeuronConfig) -> Self {
        Self {
            u_mem: config.initial_membrane(),
            last_event_time: -1,
            fired_last: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub fired: bool,
    pub u_after: QValue,
    pub activity: ActivityCounters,
    pub cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub time: u32,
    pub u_raw: i32,
    pub fired: bool,
}

/// One run: a record per update instant plus cost totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub arch: Architecture,
    pub n_steps: u32,
    pub records: Vec<TraceRecord>,
    pub total_cycles: u64,
    pub activity: ActivityCounters,
    /// Timesteps that carried at least one input spike.
    pub active_steps: u64,
}

impl Trace {
    pub fn fire_times(&self) -> Vec<u32> {
        self.records.iter().filter(|r| r.fired).map(|r| r.time).collect()
    }

    pub fn final_u(&self) -> Option<i32> {
        self.records.last().map(|r| r.u_raw)
    }

    pub fn record_at(&self, time: u32) -> Option<&TraceRecord> {
        self.records
            .binary_search_by_key(&time, |r| r.time)
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Threshold comparison (`>=`) and reset on a freshly updated membrane.
pub fn fire_and_reset(u: QValue, config: &NeuronConfig) -> (bool, QValue) {
    let threshold = config.threshold();
    if u.raw() < threshold.raw() {
        return (false, u);
    }
    let after = match config.reset_mode() {
        ResetMode::Zero => QValue::zero(u.format()),
        ResetMode::Subtract => {
            sub_with(u, threshold, config.overflow()).expect("threshold shares the membrane format")
        }
    };
    (true, after)
}

fn accumulate<I>(mut u: QValue, config: &NeuronConfig, inputs: I) -> QValue
where
    I: IntoIterator<Item = u32>,
{
    for i in inputs {
        u = add_with(u, config.weight_in_membrane(i as usize), config.overflow())
            .expect("weights are stored in the membrane format");
    }
    if let Some(bias) = config.bias() {
        u = add_with(u, bias, config.overflow()).expect("bias is stored in the membrane format");
    }
    u
}

fn spike_count(config: &NeuronConfig, spikes: usize) -> u64 {
    spikes as u64 + config.bias().is_some() as u64
}

/// One clock-driven timestep: decay, serial accumulation of set bits, fire check.
/// An all-zero vector skips the input scan.
pub fn clock_step(
    state: &mut NeuronState,
    config: &NeuronConfig,
    costs: &CycleCosts,
    input_bits: &[bool],
) -> Result<StepOutcome, NeuronError> {
    if config.mode() != Mode::ClockDriven {
        return Err(NeuronError::WrongMode {
            op: "clock_step",
            arch: config.arch().name(),
        });
    }
    if input_bits.len() != config.n_inputs() {
        return Err(NeuronError::InputWidth {
            got: input_bits.len(),
            expected: config.n_inputs(),
        });
    }
    let decayed = match config.decay_impl() {
        DecayImpl::Multiplier => decay_mult(state.u_mem, config.beta_q()),
        DecayImpl::Shifter => decay_shift(state.u_mem, config.shift_amount())?,
    };
    let set = input_bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i as u32);
    let spikes = input_bits.iter().filter(|&&b| b).count();
    let u = accumulate(decayed, config, set);
    let (fired, u_after) = fire_and_reset(u, config);
    state.u_mem = u_after;
    state.last_event_time += 1;
    state.fired_last = fired;
    let charge = cost::clock_step_charge(
        costs,
        config.decay_impl(),
        config.n_inputs() as u64,
        spike_count(config, spikes),
        fired,
    );
    Ok(StepOutcome {
        fired,
        u_after,
        activity: charge.activity,
        cycles: charge.cycles,
    })
}

/// One event-driven update at `now` for the given input addresses, applied
/// in the order given.
pub fn event_step(
    state: &mut NeuronState,
    config: &NeuronConfig,
    costs: &CycleCosts,
    now: u32,
    active: &[u32],
) -> Result<StepOutcome, NeuronError> {
    if config.mode() != Mode::EventDriven {
        return Err(NeuronError::WrongMode {
            op: "event_step",
            arch: config.arch().name(),
        });
    }
    if active.is_empty() {
        return Err(NeuronError::EmptyEvent { now });
    }
    if let Some(&address) = active.iter().find(|&&a| a as usize >= config.n_inputs()) {
        return Err(NeuronError::UnknownAddress {
            address,
            n_inputs: config.n_inputs(),
        });
    }
    let dt = interval(state, config, now)?;
    let decayed = config.lut().apply(state.u_mem, dt)?;
    let u = accumulate(decayed, config, active.iter().copied());
    let (fired, u_after) = fire_and_reset(u, config);
    state.u_mem = u_after;
    state.last_event_time = now as i64;
    state.fired_last = fired;
    let charge = cost::event_step_charge(
        costs,
        config.decay_impl(),
        config.io_mode(),
        config.n_inputs() as u64,
        spike_count(config, active.len()),
        fired,
    );
    Ok(StepOutcome {
        fired,
        u_after,
        activity: charge.activity,
        cycles: charge.cycles,
    })
}

fn interval(state: &NeuronState, config: &NeuronConfig, now: u32) -> Result<u32, NeuronError> {
    let dt = now as i64 - state.last_event_time;
    if dt < 0 {
        return Err(NeuronError::TimeReversed {
            now,
            last: state.last_event_time,
        });
    }
    if dt > config.lut().max_dt() as i64 {
        return Err(NeuronError::CounterOverflow {
            now,
            dt,
            counter_bits: config.counter_bits(),
        });
    }
    Ok(dt as u32)
}

/// Decay-only update at `now` (no input, no fire check), e.g. when the
/// interval counter is about to wrap or to align a final readout.
pub fn decay_to(
    state: &mut NeuronState,
    config: &NeuronConfig,
    now: u32,
) -> Result<QValue, NeuronError> {
    let dt = interval(state, config, now)?;
    state.u_mem = config.lut().apply(state.u_mem, dt)?;
    state.last_event_time = now as i64;
    state.fired_last = false;
    Ok(state.u_mem)
}

pub fn run(config: &NeuronConfig, train: &SpikeTrain) -> Result<Trace, NeuronError> {
    run_with_costs(config, train, &CycleCosts::default())
}

/// Drives the engine selected by `config` over the whole train and aligns
/// the final record to the last timestep.
pub fn run_with_costs(
    config: &NeuronConfig,
    train: &SpikeTrain,
    costs: &CycleCosts,
) -> Result<Trace, NeuronError> {
    config.check_train(train)?;
    let mut trace = Trace {
        arch: config.arch(),
        n_steps: train.n_steps(),
        records: Vec::new(),
        total_cycles: 0,
        activity: ActivityCounters::default(),
        active_steps: 0,
    };
    let mut state = NeuronState::initial(config);
    match (config.mode(), config.io_mode()) {
        (Mode::ClockDriven, _) => {
            for (t, frame) in encode_serial(train).iter().enumerate() {
                let out = clock_step(&mut state, config, costs, &frame.0)?;
                trace.active_steps += !frame.is_zero() as u64;
                trace.push(t as u32, &out);
            }
        }
        (Mode::EventDriven, IoMode::Serial) => {
            for (t, frame) in encode_serial(train).iter().enumerate() {
                let t = t as u32;
                if frame.is_zero() {
                    let idle = cost::event_idle_charge(costs, IoMode::Serial);
                    trace.total_cycles += idle.cycles;
                    trace.activity += idle.activity;
                    if t as i64 - state.last_event_time == config.lut().max_dt() as i64 {
                        counter_wrap(&mut state, config, t, &mut trace)?;
                    }
                    continue;
                }
                let active: Vec<u32> = frame.set_bits().collect();
                let out = event_step(&mut state, config, costs, t, &active)?;
                trace.active_steps += 1;
                trace.push(t, &out);
            }
        }
        (Mode::EventDriven, IoMode::Aer) => {
            let packets = encode_aer(train, config.counter_bits(), config.addr_bits())?;
            let max_dt = config.lut().max_dt() as i64;
            let mut i = 0;
            while i < packets.len() {
                let t = packets[i].timestamp;
                let end = i + packets[i..].iter().take_while(|p| p.timestamp == t).count();
                while t as i64 - state.last_event_time > max_dt {
                    let wrap_at = (state.last_event_time + max_dt) as u32;
                    counter_wrap(&mut state, config, wrap_at, &mut trace)?;
                }
                let active: Vec<u32> = packets[i..end].iter().map(|p| p.address).collect();
                let out = event_step(&mut state, config, costs, t, &active)?;
                trace.active_steps += 1;
                trace.push(t, &out);
                i = end;
            }
            let last = train.n_steps() as i64 - 1;
            while last - state.last_event_time >= max_dt {
                let wrap_at = (state.last_event_time + max_dt) as u32;
                counter_wrap(&mut state, config, wrap_at, &mut trace)?;
            }
        }
    }
    let last = train.n_steps().saturating_sub(1);
    if train.n_steps() > 0 && state.last_event_time < last as i64 {
        let u = decay_to(&mut state, config, last)?;
        trace.records.push(TraceRecord {
            time: last,
            u_raw: u.raw(),
            fired: false,
        });
    }
    Ok(trace)
}

fn counter_wrap(
    state: &mut NeuronState,
    config: &NeuronConfig,
    at: u32,
    trace: &mut Trace,
) -> Result<(), NeuronError> {
    let u = decay_to(state, config, at)?;
    trace.activity += cost::counter_wrap_charge(config.decay_impl());
    trace.records.push(TraceRecord {
        time: at,
        u_raw: u.raw(),
        fired: false,
    });
    Ok(())
}

impl Trace {
    fn push(&mut self, time: u32, out: &StepOutcome) {
        self.records.push(TraceRecord {
            time,
            u_raw: out.u_after.raw(),
            fired: out.fired,
        });
        self.total_cycles += out.cycles;
        self.activity += out.activity;
    }
}
