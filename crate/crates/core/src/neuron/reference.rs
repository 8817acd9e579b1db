//! Real-arithmetic golden model.
//!
//! Same update instants and reset rule as the fixed-point engines, but with
//! the exact real beta, no quantization and no saturation. Values are kept in
//! raw membrane LSB units so they compare directly with [`super::Trace`].

use crate::stimulus::SpikeTrain;

use super::{Mode, NeuronConfig, NeuronError, ResetMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealRecord {
    pub time: u32,
    pub u: f64,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealTrace {
    pub records: Vec<RealRecord>,
}

impl RealTrace {
    pub fn record_at(&self, time: u32) -> Option<&RealRecord> {
        self.records
            .binary_search_by_key(&time, |r| r.time)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn fire_times(&self) -> Vec<u32> {
        self.records.iter().filter(|r| r.fired).map(|r| r.time).collect()
    }
}

struct RealNeuron {
    beta: f64,
    threshold: f64,
    weights: Vec<f64>,
    bias: f64,
    reset: ResetMode,
}

impl RealNeuron {
    fn update(&self, decayed: f64, inputs: impl Iterator<Item = u32>) -> (bool, f64) {
        let mut u = decayed;
        for i in inputs {
            u += self.weights[i as usize];
        }
        u += self.bias;
        if u >= self.threshold {
            let after = match self.reset {
                ResetMode::Zero => 0.0,
                ResetMode::Subtract => u - self.threshold,
            };
            (true, after)
        } else {
            (false, u)
        }
    }
}

pub fn reference_run(config: &NeuronConfig, train: &SpikeTrain) -> Result<RealTrace, NeuronError> {
    config.check_train(train)?;
    let neuron = RealNeuron {
        beta: config.beta().real(),
        threshold: config.threshold().raw() as f64,
        weights: config.weights().iter().map(|w| w.raw() as f64).collect(),
        bias: config.bias().map_or(0.0, |b| b.raw() as f64),
        reset: config.reset_mode(),
    };
    let mut u = config.initial_membrane().raw() as f64;
    let mut records = Vec::new();
    let n_steps = train.n_steps();
    match config.mode() {
        Mode::ClockDriven => {
            for t in 0..n_steps {
                let (fired, after) = neuron.update(neuron.beta * u, train.channels_at(t));
                u = after;
                records.push(RealRecord { time: t, u, fired });
            }
        }
        Mode::EventDriven => {
            let max_dt = ((1u64 << config.counter_bits()) - 1) as i64;
            let mut last: i64 = -1;
            let decay = |u: f64, dt: i64| u * neuron.beta.powi(dt as i32);
            let wrap_until = |limit: i64, u: &mut f64, last: &mut i64, records: &mut Vec<RealRecord>| {
                while limit - *last >= max_dt {
                    *last += max_dt;
                    *u = decay(*u, max_dt);
                    records.push(RealRecord {
                        time: *last as u32,
                        u: *u,
                        fired: false,
                    });
                }
            };
            for (t, channels) in train.active_steps() {
                // Counter wraps land strictly before the next event.
                wrap_until(t as i64 - 1, &mut u, &mut last, &mut records);
                let (fired, after) = neuron.update(decay(u, t as i64 - last), channels.into_iter());
                u = after;
                last = t as i64;
                records.push(RealRecord { time: t, u, fired });
            }
            let end = n_steps as i64 - 1;
            wrap_until(end, &mut u, &mut last, &mut records);
            if last < end {
                u = decay(u, end - last);
                records.push(RealRecord {
                    time: end as u32,
                    u,
                    fired: false,
                });
            }
        }
    }
    Ok(RealTrace { records })
}
