//! Acoustic channel: Thorp absorption, Urick transmission loss, Rayleigh
//! block fading, the four-term ambient noise model, SINR, and the decode
//! predicate.
//!
//! Powers are electrical watts at the transducer. Noise spectra are computed
//! in dB re µPa²/Hz and referred back to acoustic watts through the source
//! level of a 1 W omnidirectional projector (`source_level_ref_db`, 170.8 dB
//! re µPa @ 1 m), so signal and noise terms of the SINR share units.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::modem::TransmissionMode;

/// Physical parameters of the channel around the carrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_freq_khz: f64,
    pub bandwidth_hz: f64,
    pub transducer_efficiency: f64,
    pub anomaly_db: f64,
    pub shipping_factor: f64,
    pub wind_speed_ms: f64,
    /// Intensity at 1 m of a 1 W acoustic omnidirectional source, in dB re µPa.
    pub source_level_ref_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_khz: 24.0,
            bandwidth_hz: 6000.0,
            transducer_efficiency: 0.6,
            anomaly_db: 0.0,
            shipping_factor: 0.5,
            wind_speed_ms: 0.0,
            source_level_ref_db: 170.8,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_freq_khz > 0.0) {
            return Err(domain("carrier frequency must be positive"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(domain("bandwidth must be positive"));
        }
        if !(self.transducer_efficiency > 0.0 && self.transducer_efficiency <= 1.0) {
            return Err(domain("transducer efficiency must lie in (0, 1]"));
        }
        if !(0.0..=5.0).contains(&self.anomaly_db) {
            return Err(domain("transmission anomaly must lie in [0, 5] dB"));
        }
        if !(0.0..=1.0).contains(&self.shipping_factor) {
            return Err(domain("shipping factor must lie in [0, 1]"));
        }
        if !(self.wind_speed_ms >= 0.0) {
            return Err(domain("wind speed must be non-negative"));
        }
        Ok(())
    }
}

/// Transmission loss, fading coefficient, and their product `H·ρ²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGain {
    pub transmission_loss: f64,
    pub fading_coeff: f64,
    pub channel_gain: f64,
}

impl LinkGain {
    pub fn new(transmission_loss: f64, fading_coeff: f64) -> Self {
        Self { transmission_loss, fading_coeff, channel_gain: transmission_loss * fading_coeff * fading_coeff }
    }
}

/// A transmitter's contribution at the receiver: electrical power and link gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Emission {
    pub power_w: f64,
    pub gain: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Thorp's absorption coefficient in dB/km for a frequency in kHz.
pub fn thorp_absorption(carrier_freq_khz: f64) -> Result<f64> {
    if !(carrier_freq_khz > 0.0) {
        return Err(domain(format!("frequency must be positive, got {carrier_freq_khz}")));
    }
    let f2 = carrier_freq_khz * carrier_freq_khz;
    Ok(0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003)
}

/// Urick transmission loss with an explicit absorption coefficient.
pub fn transmission_loss_with(distance_km: f64, absorption_db_per_km: f64, anomaly_db: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(domain(format!("distance must be positive, got {distance_km} km")));
    }
    let spreading = (1000.0 * distance_km).powi(-2);
    Ok(spreading * 10f64.powf(-(absorption_db_per_km * distance_km + anomaly_db) / 10.0))
}

/// Urick transmission loss `H` (dimensionless) over `distance_km`.
pub fn transmission_loss(distance_km: f64, params: &ChannelParams) -> Result<f64> {
    let alpha = thorp_absorption(params.carrier_freq_khz)?;
    transmission_loss_with(distance_km, alpha, params.anomaly_db)
}

/// Inverse CDF of the unit-mean Rayleigh law `P[ρ ≤ x] = 1 − exp(−πx²/4)`.
pub fn fading_from_uniform(u: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&u));
    (-4.0 * (1.0 - u).ln() / std::f64::consts::PI).sqrt()
}

pub fn fading_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-std::f64::consts::PI * x * x / 4.0).exp()
    }
}

pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    fading_from_uniform(rng.random::<f64>())
}

/// The four ambient-noise components in dB re µPa²/Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseComponents {
    pub turbulence_db: f64,
    pub shipping_db: f64,
    pub waves_db: f64,
    pub thermal_db: f64,
}

impl NoiseComponents {
    pub fn at(params: &ChannelParams) -> Self {
        let f = params.carrier_freq_khz;
        let s = params.shipping_factor;
        let w = params.wind_speed_ms;
        Self {
            turbulence_db: 17.0 - 30.0 * f.log10(),
            shipping_db: 40.0 + 20.0 * (s - 0.5) + 26.0 * f.log10() - 60.0 * (f + 0.03).log10(),
            waves_db: 50.0 + 7.5 * w.sqrt() + 20.0 * f.log10() - 40.0 * (f + 0.4).log10(),
            thermal_db: -15.0 + 20.0 * f.log10(),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.turbulence_db, self.shipping_db, self.waves_db, self.thermal_db]
    }

    /// Total PSD in µPa²/Hz.
    pub fn total_upa2(&self) -> f64 {
        self.as_array().iter().map(|&db| db_to_linear(db)).sum()
    }
}

/// Total noise PSD in dB re µPa²/Hz.
pub fn noise_psd_db(params: &ChannelParams) -> f64 {
    linear_to_db(NoiseComponents::at(params).total_upa2())
}

/// Total noise PSD in acoustic watts per Hz (the units of `η₀·p·h`).
pub fn noise_psd(params: &ChannelParams) -> f64 {
    NoiseComponents::at(params).total_upa2() / db_to_linear(params.source_level_ref_db)
}

/// Noise power over the receive band, `N(f_c)·Δf`.
pub fn noise_power(params: &ChannelParams) -> f64 {
    noise_psd(params) * params.bandwidth_hz
}

/// Linear SINR of `intended` against `interferers` and ambient noise.
pub fn sinr(intended: Emission, interferers: &[Emission], params: &ChannelParams) -> f64 {
    let eta = params.transducer_efficiency;
    let interference: f64 = interferers.iter().map(|e| e.power_w * e.gain).sum();
    eta * intended.power_w * intended.gain / (eta * interference + noise_power(params))
}

/// Physical-model decode: SINR in dB meets the mode threshold (inclusive).
pub fn decodes(sinr_linear: f64, mode: &TransmissionMode) -> bool {
    sinr_linear > 0.0 && linear_to_db(sinr_linear) >= mode.threshold_db
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::ModeTable;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn thorp_golden_values() {
        assert!((thorp_absorption(24.0).unwrap() - 5.6912).abs() < 1e-3);
        // direct evaluation: 0.10891 + 1.04762 + 0.0275 + 0.003
        assert!((thorp_absorption(10.0).unwrap() - 1.18703).abs() < 1e-3);
        assert!((thorp_absorption(1e-9).unwrap() - 0.003).abs() < 1e-12);
        assert!(thorp_absorption(0.0).is_err());
        assert!(thorp_absorption(-3.0).is_err());
    }

    #[test]
    fn transmission_loss_cases() {
        let p = ChannelParams::default();
        let h = transmission_loss(4.0, &p).unwrap();
        assert_relative_eq!(h, 3.305e-10, max_relative = 0.01);
        assert_relative_eq!(transmission_loss_with(1.0, 0.0, 0.0).unwrap(), 1e-6, max_relative = 1e-12);
        let a5 = ChannelParams { anomaly_db: 5.0, ..p.clone() };
        let ratio = transmission_loss(4.0, &a5).unwrap() / h;
        assert_relative_eq!(ratio, 10f64.powf(-0.5), max_relative = 1e-12);
        assert!(transmission_loss(0.0, &p).is_err());
    }

    #[test]
    fn loss_decreases_with_distance_and_anomaly() {
        let p = ChannelParams::default();
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let h = transmission_loss(i as f64 * 0.2, &p).unwrap();
            assert!(h < prev);
            prev = h;
        }
        let lo = transmission_loss(3.0, &ChannelParams { anomaly_db: 1.0, ..p.clone() }).unwrap();
        let hi = transmission_loss(3.0, &ChannelParams { anomaly_db: 2.0, ..p }).unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn fading_inverse_cdf() {
        assert_eq!(fading_from_uniform(0.0), 0.0);
        assert!((fading_from_uniform(0.5) - 0.9394).abs() < 1e-3);
        for u in [0.1, 0.3, 0.77, 0.99] {
            assert_relative_eq!(fading_cdf(fading_from_uniform(u)), u, max_relative = 1e-12);
        }
    }

    #[test]
    fn fading_mean_is_unity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_fading(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn noise_components() {
        let p = ChannelParams::default();
        let c = NoiseComponents::at(&p);
        assert!((c.turbulence_db - (-24.39)).abs() < 0.05);
        let total = c.total_upa2();
        let max = c.as_array().iter().map(|&d| db_to_linear(d)).fold(0.0, f64::max);
        assert!(total > max);
        let windy = ChannelParams { wind_speed_ms: 5.0, ..p.clone() };
        assert!(noise_psd(&windy) > noise_psd(&p));
    }

    #[test]
    fn sinr_reduction_and_monotonicity() {
        let p = ChannelParams::default();
        let h = transmission_loss(4.0, &p).unwrap();
        let me = Emission { power_w: 40.0, gain: h };
        let alone = sinr(me, &[], &p);
        let hand = 0.6 * 40.0 * h / (noise_psd(&p) * 6000.0);
        assert_relative_eq!(alone, hand, max_relative = 1e-9);
        let other = Emission { power_w: 1.0, gain: h / 10.0 };
        assert!(sinr(me, &[other], &p) < alone);
        // noise > 0: scaling every power up raises SINR
        let scaled = sinr(Emission { power_w: 80.0, gain: h }, &[Emission { power_w: 2.0, gain: h / 10.0 }], &p);
        assert!(scaled > sinr(me, &[other], &p));
    }

    #[test]
    fn decode_thresholds() {
        let modes = ModeTable::standard();
        let m1 = modes.get(1).unwrap();
        let m5 = modes.get(5).unwrap();
        assert!(decodes(db_to_linear(3.8), m1));
        assert!(!decodes(db_to_linear(12.1), m5));
        for m in modes.iter() {
            assert!(decodes(db_to_linear(100.0), m));
        }
        assert!(!decodes(0.0, m1));
    }

    #[test]
    fn params_validation() {
        assert!(ChannelParams::default().validate().is_ok());
        assert!(ChannelParams { anomaly_db: 6.0, ..Default::default() }.validate().is_err());
        assert!(ChannelParams { transducer_efficiency: 0.0, ..Default::default() }.validate().is_err());
        assert!(ChannelParams { bandwidth_hz: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn decode_is_monotone_in_threshold(g_db in -20.0f64..40.0) {
            let modes = ModeTable::standard();
            let g = db_to_linear(g_db);
            for hi in modes.iter() {
                if decodes(g, hi) {
                    for lo in modes.iter().filter(|m| m.threshold_db <= hi.threshold_db) {
                        proptest::prop_assert!(decodes(g, lo));
                    }
                }
            }
        }
    }
}
