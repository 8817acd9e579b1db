use std::fmt;

use crate::fxp::{quantize, BetaSpec, DecayLut, LutMode, Overflow, QFormat, QValue};
use crate::stimulus::SpikeTrain;

use super::NeuronError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    ClockDriven,
    EventDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecayImpl {
    Multiplier,
    Shifter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoMode {
    Serial,
    Aer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ResetMode {
    #[default]
    Zero,
    Subtract,
}

/// The six constructible neuron architectures. Clock-driven engines only
/// take serial input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    ClockMult,
    ClockShift,
    EventSerialMult,
    EventSerialShift,
    EventAerMult,
    EventAerShift,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::ClockMult,
        Architecture::ClockShift,
        Architecture::EventSerialMult,
        Architecture::EventSerialShift,
        Architecture::EventAerMult,
        Architecture::EventAerShift,
    ];

    pub fn from_parts(mode: Mode, decay: DecayImpl, io: IoMode) -> Result<Self, NeuronError> {
        use Architecture::*;
        Ok(match (mode, io, decay) {
            (Mode::ClockDriven, IoMode::Serial, DecayImpl::Multiplier) => ClockMult,
            (Mode::ClockDriven, IoMode::Serial, DecayImpl::Shifter) => ClockShift,
            (Mode::ClockDriven, IoMode::Aer, _) => {
                return Err(NeuronError::InvalidConfig(
                    "clock-driven engines take serial input only".into(),
                ))
            }
            (Mode::EventDriven, IoMode::Serial, DecayImpl::Multiplier) => EventSerialMult,
            (Mode::EventDriven, IoMode::Serial, DecayImpl::Shifter) => EventSerialShift,
            (Mode::EventDriven, IoMode::Aer, DecayImpl::Multiplier) => EventAerMult,
            (Mode::EventDriven, IoMode::Aer, DecayImpl::Shifter) => EventAerShift,
        })
    }

    pub fn mode(self) -> Mode {
        match self {
            Architecture::ClockMult | Architecture::ClockShift => Mode::ClockDriven,
            _ => Mode::EventDriven,
        }
    }

    pub fn decay(self) -> DecayImpl {
        match self {
            Architecture::ClockMult | Architecture::EventSerialMult | Architecture::EventAerMult => {
                DecayImpl::Multiplier
            }
            _ => DecayImpl::Shifter,
        }
    }

    pub fn io(self) -> IoMode {
        match self {
            Architecture::EventAerMult | Architecture::EventAerShift => IoMode::Aer,
            _ => IoMode::Serial,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::ClockMult => "clock-serial-mult",
            Architecture::ClockShift => "clock-serial-shift",
            Architecture::EventSerialMult => "event-serial-mult",
            Architecture::EventSerialShift => "event-serial-shift",
            Architecture::EventAerMult => "event-aer-mult",
            Architecture::EventAerShift => "event-aer-shift",
        }
    }

    /// The counterpart with the other decay implementation.
    pub fn with_decay(self, decay: DecayImpl) -> Self {
        Self::from_parts(self.mode(), decay, self.io()).expect("only decay changes")
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ClockDriven => "clock",
            Mode::EventDriven => "event",
        }
    }
}

impl DecayImpl {
    pub fn name(self) -> &'static str {
        match self {
            DecayImpl::Multiplier => "mult",
            DecayImpl::Shifter => "shift",
        }
    }
}

impl IoMode {
    pub fn name(self) -> &'static str {
        match self {
            IoMode::Serial => "serial",
            IoMode::Aer => "aer",
        }
    }
}

/// A validated neuron: architecture, parameters, and the decay machinery
/// derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronConfig {
    arch: Architecture,
    reset: ResetMode,
    beta: BetaSpec,
    threshold: QValue,
    weights: Vec<QValue>,
    weights_in_membrane: Vec<QValue>,
    bias: Option<QValue>,
    initial_membrane: QValue,
    membrane_fmt: QFormat,
    weight_fmt: QFormat,
    beta_fmt: QFormat,
    counter_bits: u32,
    addr_bits: u32,
    overflow: Overflow,
    beta_q: QValue,
    shift_amount: u32,
    lut: DecayLut,
}

impl NeuronConfig {
    pub fn builder(arch: Architecture, beta: BetaSpec, threshold_raw: i64, weights_raw: Vec<i64>) -> NeuronConfigBuilder {
        NeuronConfigBuilder {
            arch,
            reset: ResetMode::Zero,
            beta,
            threshold_raw,
            weights_raw,
            bias_raw: None,
            initial_raw: 0,
            membrane_bits: 9,
            weight_bits: 6,
            frac_bits: 0,
            beta_bits: (9, 8),
            counter_bits: 7,
            addr_bits: None,
            overflow: Overflow::Saturate,
        }
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn mode(&self) -> Mode {
        self.arch.mode()
    }

    pub fn decay_impl(&self) -> DecayImpl {
        self.arch.decay()
    }

    pub fn io_mode(&self) -> IoMode {
        self.arch.io()
    }

    pub fn reset_mode(&self) -> ResetMode {
        self.reset
    }

    pub fn beta(&self) -> BetaSpec {
        self.beta
    }

    pub fn threshold(&self) -> QValue {
        self.threshold
    }

    pub fn weights(&self) -> &[QValue] {
        &self.weights
    }

    pub(crate) fn weight_in_membrane(&self, i: usize) -> QValue {
        self.weights_in_membrane[i]
    }

    pub fn bias(&self) -> Option<QValue> {
        self.bias
    }

    pub fn initial_membrane(&self) -> QValue {
        self.initial_membrane
    }

    pub fn n_inputs(&self) -> usize {
        self.weights.len()
    }

    pub fn membrane_format(&self) -> QFormat {
        self.membrane_fmt
    }

    pub fn weight_format(&self) -> QFormat {
        self.weight_fmt
    }

    pub fn beta_format(&self) -> QFormat {
        self.beta_fmt
    }

    pub fn counter_bits(&self) -> u32 {
        self.counter_bits
    }

    pub fn addr_bits(&self) -> u32 {
        self.addr_bits
    }

    pub fn overflow(&self) -> Overflow {
        self.overflow
    }

    /// Quantized beta fed to the per-step multiplier.
    pub fn beta_q(&self) -> QValue {
        self.beta_q
    }

    /// `n` of the per-step `u - (u >> n)` shifter.
    pub fn shift_amount(&self) -> u32 {
        self.shift_amount
    }

    /// `beta^dt` table of the event-driven engines; product mode for
    /// multipliers, nearest power of two for shifters.
    pub fn lut(&self) -> &DecayLut {
        &self.lut
    }

    /// Longest train the time counter can index.
    pub fn max_steps(&self) -> u64 {
        1u64 << self.counter_bits
    }

    /// Same parameters on another architecture.
    pub fn with_arch(&self, arch: Architecture) -> Result<Self, NeuronError> {
        self.to_builder().arch(arch).build()
    }

    pub fn to_builder(&self) -> NeuronConfigBuilder {
        NeuronConfigBuilder {
            arch: self.arch,
            reset: self.reset,
            beta: self.beta,
            threshold_raw: self.threshold.raw() as i64,
            weights_raw: self.weights.iter().map(|w| w.raw() as i64).collect(),
            bias_raw: self.bias.map(|b| b.raw() as i64),
            initial_raw: self.initial_membrane.raw() as i64,
            membrane_bits: self.membrane_fmt.total_bits(),
            weight_bits: self.weight_fmt.total_bits(),
            frac_bits: self.membrane_fmt.frac_bits(),
            beta_bits: (self.beta_fmt.total_bits(), self.beta_fmt.frac_bits()),
            counter_bits: self.counter_bits,
            addr_bits: Some(self.addr_bits),
            overflow: self.overflow,
        }
    }

    pub(crate) fn check_train(&self, train: &SpikeTrain) -> Result<(), NeuronError> {
        if train.n_channels() as usize != self.n_inputs() || train.n_steps() as u64 > self.max_steps() {
            return Err(NeuronError::TrainMismatch {
                train_channels: train.n_channels(),
                train_steps: train.n_steps(),
                n_inputs: self.n_inputs(),
                max_steps: self.max_steps(),
            });
        }
        Ok(())
    }
}

/// Builder for [`NeuronConfig`]. Defaults: 9-bit membrane, 6-bit weights,
/// integer binary point, Q1.8 beta, 7-bit counter, zero reset, saturation.
#[derive(Debug, Clone)]
pub struct NeuronConfigBuilder {
    arch: Architecture,
    reset: ResetMode,
    beta: BetaSpec,
    threshold_raw: i64,
    weights_raw: Vec<i64>,
    bias_raw: Option<i64>,
    initial_raw: i64,
    membrane_bits: u32,
    weight_bits: u32,
    frac_bits: u32,
    beta_bits: (u32, u32),
    counter_bits: u32,
    addr_bits: Option<u32>,
    overflow: Overflow,
}

impl NeuronConfigBuilder {
    pub fn arch(mut self, arch: Architecture) -> Self {
        self.arch = arch;
        self
    }

    pub fn reset(mut self, reset: ResetMode) -> Self {
        self.reset = reset;
        self
    }

    pub fn beta(mut self, beta: BetaSpec) -> Self {
        self.beta = beta;
        self
    }

    pub fn threshold(mut self, raw: i64) -> Self {
        self.threshold_raw = raw;
        self
    }

    pub fn weights(mut self, raw: Vec<i64>) -> Self {
        self.weights_raw = raw;
        self
    }

    /// Per-neuron bias added on every update. Off unless set.
    pub fn bias(mut self, raw: Option<i64>) -> Self {
        self.bias_raw = raw;
        self
    }

    pub fn initial_membrane(mut self, raw: i64) -> Self {
        self.initial_raw = raw;
        self
    }

    pub fn membrane_bits(mut self, bits: u32) -> Self {
        self.membrane_bits = bits;
        self
    }

    pub fn weight_bits(mut self, bits: u32) -> Self {
        self.weight_bits = bits;
        self
    }

    /// Binary point shared by membrane, threshold and weights.
    pub fn frac_bits(mut self, bits: u32) -> Self {
        self.frac_bits = bits;
        self
    }

    pub fn beta_format(mut self, total_bits: u32, frac_bits: u32) -> Self {
        self.beta_bits = (total_bits, frac_bits);
        self
    }

    pub fn counter_bits(mut self, bits: u32) -> Self {
        self.counter_bits = bits;
        self
    }

    pub fn addr_bits(mut self, bits: u32) -> Self {
        self.addr_bits = Some(bits);
        self
    }

    pub fn overflow(mut self, policy: Overflow) -> Self {
        self.overflow = policy;
        self
    }

    pub fn build(self) -> Result<NeuronConfig, NeuronError> {
        let invalid = |m: String| NeuronError::InvalidConfig(m);
        if self.weights_raw.is_empty() {
            return Err(invalid("need at least one input".into()));
        }
        let membrane_fmt = QFormat::new(self.membrane_bits, self.frac_bits)?;
        let weight_fmt = QFormat::new(self.weight_bits, self.frac_bits)?;
        let beta_fmt = QFormat::new(self.beta_bits.0, self.beta_bits.1)?;
        if self.weight_bits > self.membrane_bits {
            return Err(invalid("weights must fit the membrane register".into()));
        }
        if !(1..=31).contains(&self.counter_bits) {
            return Err(invalid(format!("counter_bits {} outside 1..=31", self.counter_bits)));
        }
        let n = self.weights_raw.len();
        let min_addr = usize::BITS - (n - 1).leading_zeros();
        let addr_bits = self.addr_bits.unwrap_or(min_addr.max(1));
        if addr_bits > 31 || (n as u64) > 1u64 << addr_bits {
            return Err(invalid(format!("{n} inputs do not fit {addr_bits} address bits")));
        }
        let beta = self.beta.validate()?;
        let fits = |raw: i64, fmt: QFormat, what: &str| {
            if fmt.contains(raw) {
                Ok(QValue::from_raw(raw, fmt))
            } else {
                Err(invalid(format!("{what} raw {raw} outside {fmt}")))
            }
        };
        let threshold = fits(self.threshold_raw, membrane_fmt, "threshold")?;
        if threshold.raw() <= 0 {
            return Err(invalid("threshold must be positive".into()));
        }
        let weights = self
            .weights_raw
            .iter()
            .map(|&w| fits(w, weight_fmt, "weight"))
            .collect::<Result<Vec<_>, _>>()?;
        let weights_in_membrane = weights
            .iter()
            .map(|w| QValue::from_raw(w.raw() as i64, membrane_fmt))
            .collect();
        let bias = self
            .bias_raw
            .map(|b| fits(b, weight_fmt, "bias").map(|v| QValue::from_raw(v.raw() as i64, membrane_fmt)))
            .transpose()?;
        let initial_membrane = fits(self.initial_raw, membrane_fmt, "initial membrane")?;
        let shift_amount = beta.shift_amount();
        if self.arch.decay() == DecayImpl::Shifter && shift_amount >= membrane_fmt.total_bits() {
            return Err(invalid(format!(
                "beta {beta} needs a shift of {shift_amount} on a {}-bit membrane",
                membrane_fmt.total_bits()
            )));
        }
        let max_dt = ((1u64 << self.counter_bits) - 1) as u32;
        let lut_mode = match self.arch.decay() {
            DecayImpl::Multiplier => LutMode::ExactProduct,
            DecayImpl::Shifter => LutMode::NearestPow2,
        };
        let lut = DecayLut::build(beta, max_dt, lut_mode, beta_fmt, membrane_fmt)?;
        Ok(NeuronConfig {
            arch: self.arch,
            reset: self.reset,
            beta,
            threshold,
            weights,
            weights_in_membrane,
            bias,
            initial_membrane,
            membrane_fmt,
            weight_fmt,
            beta_fmt,
            counter_bits: self.counter_bits,
            addr_bits,
            overflow: self.overflow,
            beta_q: quantize(beta.real(), beta_fmt),
            shift_amount,
            lut,
        })
    }
}
