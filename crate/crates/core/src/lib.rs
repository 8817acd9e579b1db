//! Bit-accurate models of six digital leaky-integrate-and-fire neuron
//! architectures (clock-driven or event-driven, multiplier or shifter
//! decay, serial or address-event input), with a density-controlled
//! stimulus generator and cycle/energy cost models.

pub mod cli;
pub mod cost;
pub mod fxp;
pub mod neuron;
pub mod stimulus;
