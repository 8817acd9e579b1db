//! Signed fixed-point arithmetic and the membrane decay kernels.
//!
//! Every value carries its [`QFormat`]: a total bit width (sign included) and
//! a binary-point position. Arithmetic results are forced back into range,
//! saturating by default, or wrapping when an [`Overflow::Wrap`] policy is
//! requested explicitly.
//!
//! Decay comes in three flavours that the neuron engines pick from:
//! a per-step multiply by a quantized beta ([`decay_mult`]), a per-step
//! `u - (u >> n)` shifter ([`decay_shift`]), and a table indexed by the
//! elapsed interval ([`DecayLut`]).

use std::fmt;

use thiserror::Error;

/// Errors raised by fixed-point operations whose contract was violated.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FxpError {
    #[error("invalid format: total_bits={total_bits} frac_bits={frac_bits} (need 0 <= frac < total <= 32)")]
    InvalidFormat { total_bits: u32, frac_bits: u32 },
    #[error("format mismatch: {left} vs {right}")]
    FormatMismatch { left: QFormat, right: QFormat },
    #[error("shift amount {shift} outside 1..{total_bits}")]
    ShiftOutOfRange { shift: u32, total_bits: u32 },
    #[error("interval {dt} exceeds decay table range 0..={max_dt}")]
    IntervalOutOfRange { dt: u32, max_dt: u32 },
    #[error("invalid beta: {0}")]
    InvalidBeta(String),
    #[error("decay table needs max_dt >= 1")]
    EmptyTable,
}

/// Overflow policy applied when a raw result leaves the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Overflow {
    #[default]
    Saturate,
    /// Two's-complement wraparound, as an unguarded adder would behave.
    Wrap,
}

/// Signed fixed-point layout: `total_bits` including sign, `frac_bits` after the binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl QFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FxpError> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(FxpError::InvalidFormat {
                total_bits,
                frac_bits,
            });
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn min_raw(self) -> i32 {
        (-(1i64 << (self.total_bits - 1))) as i32
    }

    pub fn max_raw(self) -> i32 {
        ((1i64 << (self.total_bits - 1)) - 1) as i32
    }

    /// Real value of one raw unit.
    pub fn lsb(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Brings a wide intermediate back into range under `policy`.
    pub fn fit(self, raw: i64, policy: Overflow) -> i32 {
        match policy {
            Overflow::Saturate => raw.clamp(self.min_raw() as i64, self.max_raw() as i64) as i32,
            Overflow::Wrap => {
                let shift = 64 - self.total_bits;
                ((raw << shift) >> shift) as i32
            }
        }
    }

    pub fn contains(self, raw: i64) -> bool {
        raw >= self.min_raw() as i64 && raw <= self.max_raw() as i64
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.total_bits - self.frac_bits, self.frac_bits)
    }
}

/// A raw fixed-point value tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i32,
    format: QFormat,
}

impl QValue {
    /// Builds a value from raw LSB units, saturating into range.
    pub fn from_raw(raw: i64, format: QFormat) -> Self {
        Self {
            raw: format.fit(raw, Overflow::Saturate),
            format,
        }
    }

    pub fn zero(format: QFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }
}

impl fmt::Display for QValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.raw, self.format)
    }
}

/// Round-to-nearest (ties away from zero) of `x * 2^frac`, saturated.
///
/// Panics on NaN; infinities saturate.
pub fn quantize(x: f64, fmt: QFormat) -> QValue {
    assert!(!x.is_nan(), "cannot quantize NaN");
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round();
    let raw = scaled.clamp(fmt.min_raw() as f64, fmt.max_raw() as f64) as i64;
    QValue::from_raw(raw, fmt)
}

pub fn sat_add(a: QValue, b: QValue) -> Result<QValue, FxpError> {
    add_with(a, b, Overflow::Saturate)
}

pub fn sat_sub(a: QValue, b: QValue) -> Result<QValue, FxpError> {
    sub_with(a, b, Overflow::Saturate)
}

pub fn add_with(a: QValue, b: QValue, policy: Overflow) -> Result<QValue, FxpError> {
    same_format(a, b)?;
    Ok(QValue {
        raw: a.format.fit(a.raw as i64 + b.raw as i64, policy),
        format: a.format,
    })
}

pub fn sub_with(a: QValue, b: QValue, policy: Overflow) -> Result<QValue, FxpError> {
    same_format(a, b)?;
    Ok(QValue {
        raw: a.format.fit(a.raw as i64 - b.raw as i64, policy),
        format: a.format,
    })
}

fn same_format(a: QValue, b: QValue) -> Result<(), FxpError> {
    if a.format != b.format {
        return Err(FxpError::FormatMismatch {
            left: a.format,
            right: b.format,
        });
    }
    Ok(())
}

/// `floor(u * beta / 2^beta_frac)` in `u`'s format. The arithmetic right
/// shift floors, negatives included.
pub fn decay_mult(u: QValue, beta_q: QValue) -> QValue {
    let product = (u.raw as i64 * beta_q.raw as i64) >> beta_q.format.frac_bits;
    QValue::from_raw(product, u.format)
}

/// `u - (u >> n)`: multiplication by `1 - 2^-n` with one shifter and one subtractor.
pub fn decay_shift(u: QValue, n: u32) -> Result<QValue, FxpError> {
    if n == 0 || n >= u.format.total_bits {
        return Err(FxpError::ShiftOutOfRange {
            shift: n,
            total_bits: u.format.total_bits,
        });
    }
    let raw = u.raw as i64;
    Ok(QValue::from_raw(raw - (raw >> n), u.format))
}

/// Decay coefficient as configured: any real in (0, 1), or `1 - 2^-n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSpec {
    Exact(f64),
    OneMinusPow2(u32),
}

impl BetaSpec {
    pub fn validate(self) -> Result<Self, FxpError> {
        match self {
            BetaSpec::Exact(b) if b.is_finite() && b > 0.0 && b < 1.0 => Ok(self),
            BetaSpec::Exact(b) => Err(FxpError::InvalidBeta(format!("{b} not in (0, 1)"))),
            BetaSpec::OneMinusPow2(0) => Err(FxpError::InvalidBeta("1 - 2^-0 = 0".into())),
            BetaSpec::OneMinusPow2(n) if n > 52 => Err(FxpError::InvalidBeta(format!(
                "1 - 2^-{n} not representable"
            ))),
            BetaSpec::OneMinusPow2(_) => Ok(self),
        }
    }

    /// Effective real-valued beta.
    pub fn real(self) -> f64 {
        match self {
            BetaSpec::Exact(b) => b,
            BetaSpec::OneMinusPow2(n) => 1.0 - (-(n as f64)).exp2(),
        }
    }

    /// Shift amount `n` for the per-step `u - (u >> n)` shifter.
    ///
    /// Exact betas are snapped to the nearest `n` in the log domain of `1 - beta`.
    pub fn shift_amount(self) -> u32 {
        match self {
            BetaSpec::OneMinusPow2(n) => n,
            BetaSpec::Exact(b) => (-(1.0 - b).log2()).round().max(1.0) as u32,
        }
    }
}

impl fmt::Display for BetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSpec::Exact(b) => write!(f, "{b}"),
            BetaSpec::OneMinusPow2(n) => write!(f, "1-2^-{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LutMode {
    /// Quantized `beta^dt` factors feeding a multiplier.
    ExactProduct,
    /// `beta^dt` snapped to the nearest power of two, stored as a right-shift amount.
    NearestPow2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum LutEntries {
    Factors(Vec<QValue>),
    Shifts(Vec<u32>),
}

/// Decay table indexed by the elapsed interval `dt` in `0..=max_dt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecayLut {
    mode: LutMode,
    max_dt: u32,
    entries: LutEntries,
}

impl DecayLut {
    /// Precomputes `beta^k` for `k` in `0..=max_dt`.
    ///
    /// Shift amounts are clamped to `membrane.total_bits() - 1`, beyond which
    /// an arithmetic shift has nothing left to remove.
    pub fn build(
        beta: BetaSpec,
        max_dt: u32,
        mode: LutMode,
        beta_fmt: QFormat,
        membrane: QFormat,
    ) -> Result<Self, FxpError> {
        if max_dt == 0 {
            return Err(FxpError::EmptyTable);
        }
        let b = beta.validate()?.real();
        let entries = match mode {
            LutMode::ExactProduct => LutEntries::Factors(
                (0..=max_dt)
                    .map(|k| quantize(b.powi(k as i32), beta_fmt))
                    .collect(),
            ),
            LutMode::NearestPow2 => {
                let per_step = -b.log2();
                let limit = (membrane.total_bits() - 1) as f64;
                LutEntries::Shifts(
                    (0..=max_dt)
                        .map(|k| (k as f64 * per_step).round().clamp(0.0, limit) as u32)
                        .collect(),
                )
            }
        };
        Ok(Self {
            mode,
            max_dt,
            entries,
        })
    }

    pub fn mode(&self) -> LutMode {
        self.mode
    }

    pub fn max_dt(&self) -> u32 {
        self.max_dt
    }

    /// Raw factor (ExactProduct) or shift amount (NearestPow2) stored for `dt`.
    pub fn entry(&self, dt: u32) -> Option<i64> {
        match &self.entries {
            LutEntries::Factors(f) => f.get(dt as usize).map(|q| q.raw() as i64),
            LutEntries::Shifts(s) => s.get(dt as usize).map(|&s| s as i64),
        }
    }

    /// `(dt, raw_or_shift)` pairs, in order.
    pub fn rows(&self) -> impl Iterator<Item = (u32, i64)> + '_ {
        (0..=self.max_dt).map(move |dt| (dt, self.entry(dt).unwrap_or_default()))
    }

    /// Decays `u` across `dt` elapsed steps. `dt == 0` passes `u` through:
    /// the saturated identity factor would otherwise shave an LSB.
    pub fn apply(&self, u: QValue, dt: u32) -> Result<QValue, FxpError> {
        if dt > self.max_dt {
            return Err(FxpError::IntervalOutOfRange {
                dt,
                max_dt: self.max_dt,
            });
        }
        if dt == 0 {
            return Ok(u);
        }
        Ok(match &self.entries {
            LutEntries::Factors(f) => decay_mult(u, f[dt as usize]),
            LutEntries::Shifts(s) => QValue::from_raw((u.raw() as i64) >> s[dt as usize], u.format()),
        })
    }
}

pub fn build_decay_lut(
    beta: BetaSpec,
    max_dt: u32,
    mode: LutMode,
    beta_fmt: QFormat,
    membrane: QFormat,
) -> Result<DecayLut, FxpError> {
    DecayLut::build(beta, max_dt, mode, beta_fmt, membrane)
}

pub fn apply_lut_decay(u: QValue, lut: &DecayLut, dt: u32) -> Result<QValue, FxpError> {
    lut.apply(u, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(total: u32, frac: u32) -> QFormat {
        QFormat::new(total, frac).unwrap()
    }

    fn mem() -> QFormat {
        q(9, 0)
    }

    fn beta_fmt() -> QFormat {
        q(9, 8)
    }

    #[test]
    fn format_bounds() {
        assert!(QFormat::new(1, 0).is_err());
        assert!(QFormat::new(33, 0).is_err());
        assert!(QFormat::new(9, 9).is_err());
        let f = q(9, 6);
        assert_eq!((f.min_raw(), f.max_raw()), (-256, 255));
        assert_eq!(f.lsb(), 1.0 / 64.0);
        let wide = q(32, 0);
        assert_eq!((wide.min_raw(), wide.max_raw()), (i32::MIN, i32::MAX));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.5, q(9, 6)).raw(), 32);
        assert_eq!(quantize(1e9, q(9, 6)).raw(), 255);
        assert_eq!(quantize(-1e9, q(9, 6)).raw(), -256);
        assert_eq!(quantize(0.9325, beta_fmt()).raw(), 239);
        // ties away from zero
        assert_eq!(quantize(0.5 / 256.0, beta_fmt()).raw(), 1);
        assert_eq!(quantize(-0.5 / 256.0, beta_fmt()).raw(), -1);
        assert_eq!(quantize(f64::INFINITY, beta_fmt()).raw(), 255);
    }

    #[test]
    fn add_examples() {
        let f = mem();
        let v = |r| QValue::from_raw(r, f);
        assert_eq!(sat_add(v(100), v(27)).unwrap().raw(), 127);
        assert_eq!(sat_add(v(255), v(10)).unwrap().raw(), 255);
        assert_eq!(sat_add(v(-256), v(-10)).unwrap().raw(), -256);
        assert_eq!(add_with(v(255), v(10), Overflow::Wrap).unwrap().raw(), -247);
        let other = QValue::from_raw(1, q(6, 0));
        assert!(matches!(
            sat_add(v(1), other),
            Err(FxpError::FormatMismatch { .. })
        ));
    }

    #[test]
    fn mult_examples() {
        let half = quantize(0.5, beta_fmt());
        assert_eq!(half.raw(), 128);
        let v = |r| QValue::from_raw(r, mem());
        assert_eq!(decay_mult(v(64), half).raw(), 32);
        assert_eq!(decay_mult(v(1), half).raw(), 0);
        assert_eq!(decay_mult(v(-64), half).raw(), -32);
    }

    #[test]
    fn mult_floors_negatives_exhaustively() {
        // Oracle: floor division in exact rational arithmetic.
        let f = mem();
        for beta_raw in [1i64, 77, 128, 200, 240, 255] {
            let b = QValue::from_raw(beta_raw, beta_fmt());
            for raw in f.min_raw()..=f.max_raw() {
                let expect = (raw as i64 * beta_raw).div_euclid(256);
                assert_eq!(decay_mult(QValue::from_raw(raw as i64, f), b).raw() as i64, expect);
            }
        }
    }

    #[test]
    fn shift_examples() {
        let v = |r| QValue::from_raw(r, mem());
        assert_eq!(decay_shift(v(64), 4).unwrap().raw(), 60);
        assert_eq!(decay_shift(v(64), 1).unwrap().raw(), 32);
        assert_eq!(decay_shift(v(15), 4).unwrap().raw(), 15);
        assert_eq!(decay_shift(v(-15), 4).unwrap().raw(), -14);
        assert!(decay_shift(v(1), 0).is_err());
        assert!(decay_shift(v(1), 9).is_err());
    }

    #[test]
    fn beta_spec() {
        assert_eq!(BetaSpec::OneMinusPow2(4).real(), 0.9375);
        assert_eq!(BetaSpec::OneMinusPow2(1).real(), 0.5);
        assert!(BetaSpec::OneMinusPow2(0).validate().is_err());
        assert!(BetaSpec::Exact(1.0).validate().is_err());
        assert!(BetaSpec::Exact(0.0).validate().is_err());
        assert!(BetaSpec::Exact(f64::NAN).validate().is_err());
        assert_eq!(BetaSpec::Exact(0.5).shift_amount(), 1);
        assert_eq!(BetaSpec::Exact(0.9325).shift_amount(), 4);
    }

    #[test]
    fn lut_examples() {
        let half = DecayLut::build(
            BetaSpec::Exact(0.5),
            127,
            LutMode::ExactProduct,
            beta_fmt(),
            mem(),
        )
        .unwrap();
        assert_eq!(half.entry(3), Some(32));
        // 1.0 is not representable in Q1.8: saturated
        assert_eq!(half.entry(0), Some(255));

        let pow2 = DecayLut::build(
            BetaSpec::Exact(0.5),
            127,
            LutMode::NearestPow2,
            beta_fmt(),
            mem(),
        )
        .unwrap();
        for k in 0..=127u32 {
            assert_eq!(pow2.entry(k), Some(k.min(8) as i64));
        }

        let near_one = DecayLut::build(
            BetaSpec::OneMinusPow2(4),
            127,
            LutMode::NearestPow2,
            beta_fmt(),
            mem(),
        )
        .unwrap();
        // -log2(0.9375) = 0.0931094...; round(k * that)
        for k in 0..=5 {
            assert_eq!(near_one.entry(k), Some(0));
        }
        assert_eq!(near_one.entry(6), Some(1));
        assert_eq!(near_one.entry(16), Some(1));
        assert_eq!(near_one.entry(17), Some(2));

        assert!(DecayLut::build(BetaSpec::Exact(0.5), 0, LutMode::NearestPow2, beta_fmt(), mem()).is_err());
    }

    #[test]
    fn lut_apply_examples() {
        let v = |r| QValue::from_raw(r, mem());
        let half = DecayLut::build(BetaSpec::Exact(0.5), 127, LutMode::ExactProduct, beta_fmt(), mem()).unwrap();
        assert_eq!(apply_lut_decay(v(80), &half, 3).unwrap().raw(), 10);
        assert_eq!(apply_lut_decay(v(80), &half, 0).unwrap().raw(), 80);
        let near_one = DecayLut::build(BetaSpec::OneMinusPow2(4), 127, LutMode::NearestPow2, beta_fmt(), mem()).unwrap();
        assert_eq!(apply_lut_decay(v(80), &near_one, 0).unwrap().raw(), 80);
        assert_eq!(apply_lut_decay(v(100), &near_one, 6).unwrap().raw(), 50);
        assert_eq!(
            apply_lut_decay(v(100), &near_one, 128),
            Err(FxpError::IntervalOutOfRange { dt: 128, max_dt: 127 })
        );
    }

    #[test]
    fn lut_entries_monotone() {
        for beta in [BetaSpec::Exact(0.5), BetaSpec::OneMinusPow2(4), BetaSpec::Exact(0.9325), BetaSpec::Exact(0.01)] {
            let ex = DecayLut::build(beta, 127, LutMode::ExactProduct, beta_fmt(), mem()).unwrap();
            let p2 = DecayLut::build(beta, 127, LutMode::NearestPow2, beta_fmt(), mem()).unwrap();
            assert_eq!(p2.entry(0), Some(0));
            for k in 1..=127 {
                assert!(ex.entry(k) <= ex.entry(k - 1));
                assert!(p2.entry(k) >= p2.entry(k - 1));
            }
        }
    }

    #[test]
    fn half_beta_product_matches_shift_exhaustively() {
        let ex = DecayLut::build(BetaSpec::Exact(0.5), 127, LutMode::ExactProduct, beta_fmt(), mem()).unwrap();
        let p2 = DecayLut::build(BetaSpec::OneMinusPow2(1), 127, LutMode::NearestPow2, beta_fmt(), mem()).unwrap();
        for k in 0..=beta_fmt().frac_bits() {
            for raw in 0..=mem().max_raw() {
                let u = QValue::from_raw(raw as i64, mem());
                assert_eq!(ex.apply(u, k), p2.apply(u, k), "raw {raw} dt {k}");
            }
        }
    }

    #[test]
    fn single_step_lut_equals_multiplier() {
        for beta in [BetaSpec::Exact(0.5), BetaSpec::OneMinusPow2(4), BetaSpec::Exact(0.9325), BetaSpec::Exact(0.71)] {
            let lut = DecayLut::build(beta, 127, LutMode::ExactProduct, beta_fmt(), mem()).unwrap();
            let bq = quantize(beta.real(), beta_fmt());
            for raw in mem().min_raw()..=mem().max_raw() {
                let u = QValue::from_raw(raw as i64, mem());
                assert_eq!(lut.apply(u, 1).unwrap(), decay_mult(u, bq));
            }
        }
    }

    #[test]
    fn real_power_matches_iteration() {
        for beta in [0.5, 0.9375, 0.9325, 0.123, 0.999] {
            let mut iter = 1.0f64;
            for k in 1..=127 {
                iter *= beta;
                let pow = f64::powi(beta, k);
                assert!(((pow - iter) / iter).abs() < 1e-12, "beta {beta} k {k}");
            }
        }
    }

    proptest! {
        #[test]
        fn saturation_closure(total in 2u32..=32, a in any::<i64>(), b in any::<i64>(), frac_pick in any::<u32>()) {
            let f = QFormat::new(total, frac_pick % total).unwrap();
            let x = QValue::from_raw(a, f);
            let y = QValue::from_raw(b, f);
            for r in [sat_add(x, y).unwrap(), sat_sub(x, y).unwrap(), add_with(x, y, Overflow::Wrap).unwrap()] {
                prop_assert!(f.contains(r.raw() as i64));
            }
            let beta = QValue::from_raw(b, beta_fmt());
            prop_assert!(f.contains(decay_mult(x, beta).raw() as i64));
            if total > 1 {
                let n = 1 + (frac_pick % (total - 1));
                prop_assert!(f.contains(decay_shift(x, n).unwrap().raw() as i64));
            }
        }

        #[test]
        fn decay_never_grows(raw in 0i64..=255, beta in 0.001f64..0.999, dt in 0u32..=127, n in 1u32..9) {
            let u = QValue::from_raw(raw, mem());
            let bq = quantize(beta, beta_fmt());
            prop_assert!(decay_mult(u, bq).raw() as i64 <= raw);
            prop_assert!(decay_shift(u, n).unwrap().raw() as i64 <= raw);
            for mode in [LutMode::ExactProduct, LutMode::NearestPow2] {
                let lut = DecayLut::build(BetaSpec::Exact(beta), 127, mode, beta_fmt(), mem()).unwrap();
                let out = lut.apply(u, dt).unwrap().raw() as i64;
                prop_assert!(out <= raw && out >= 0);
                prop_assert_eq!(lut.apply(QValue::zero(mem()), dt).unwrap().raw(), 0);
            }
        }
    }
}
