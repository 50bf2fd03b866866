//! Synthetic modulation datasets.
//!
//! Linear schemes are Gray-mapped onto unit-energy constellations and pulse
//! shaped with a root-raised-cosine filter. CPFSK and GFSK are produced by
//! integrating the instantaneous frequency into phase, so their envelope is
//! constant. Every waveform is renormalized to unit average power before the
//! AWGN channel, which makes the nominal SNR exact by construction.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, SignalRecord};
use crate::seed;

/// RRC filter half-length in symbols.
pub const RRC_SPAN_SYMBOLS: usize = 6;
/// Gaussian frequency filter half-length in symbols.
pub const GAUSS_SPAN_SYMBOLS: usize = 2;
pub const CPFSK_MOD_INDEX: f64 = 0.5;
pub const GFSK_MOD_INDEX: f64 = 0.5;
pub const GFSK_BT: f64 = 0.35;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("symbol index {index} out of range for {scheme} (order {order})")]
    SymbolOutOfRange {
        scheme: ModulationScheme,
        index: usize,
        order: usize,
    },
    #[error("{symbols} symbols at {sps} samples/symbol cannot fill {len} samples")]
    TooFewSymbols { symbols: usize, sps: usize, len: usize },
    #[error("unknown modulation scheme {0:?}")]
    UnknownScheme(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModulationScheme {
    Bpsk,
    Qpsk,
    Psk8,
    Pam4,
    Qam16,
    Qam64,
    Cpfsk,
    Gfsk,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 8] = [
        ModulationScheme::Bpsk,
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Pam4,
        ModulationScheme::Qam16,
        ModulationScheme::Qam64,
        ModulationScheme::Cpfsk,
        ModulationScheme::Gfsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Bpsk => "BPSK",
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Pam4 => "PAM4",
            ModulationScheme::Qam16 => "QAM16",
            ModulationScheme::Qam64 => "QAM64",
            ModulationScheme::Cpfsk => "CPFSK",
            ModulationScheme::Gfsk => "GFSK",
        }
    }

    /// Alphabet size. The FSK schemes are binary.
    pub fn order(self) -> usize {
        match self {
            ModulationScheme::Bpsk | ModulationScheme::Cpfsk | ModulationScheme::Gfsk => 2,
            ModulationScheme::Qpsk | ModulationScheme::Pam4 => 4,
            ModulationScheme::Psk8 => 8,
            ModulationScheme::Qam16 => 16,
            ModulationScheme::Qam64 => 64,
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, ModulationScheme::Cpfsk | ModulationScheme::Gfsk)
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase();
        ModulationScheme::ALL
            .into_iter()
            .find(|m| m.name() == wanted || (wanted == "PSK8" && *m == ModulationScheme::Psk8))
            .ok_or_else(|| SynthError::UnknownScheme(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub schemes: Vec<ModulationScheme>,
    pub snr_min_db: i32,
    pub snr_max_db: i32,
    pub snr_step_db: i32,
    pub per_class_per_snr: usize,
    pub signal_len: usize,
    pub samples_per_symbol: usize,
    pub rrc_rolloff: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            schemes: ModulationScheme::ALL.to_vec(),
            snr_min_db: -20,
            snr_max_db: 18,
            snr_step_db: 2,
            per_class_per_snr: 250,
            signal_len: 128,
            samples_per_symbol: 8,
            rrc_rolloff: 0.35,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.schemes.is_empty() {
            return bad("no modulation schemes".into());
        }
        if self.schemes.len() > u16::MAX as usize {
            return bad("too many schemes for 16-bit labels".into());
        }
        if self.snr_step_db <= 0 {
            return bad(format!("snr_step_db must be positive, got {}", self.snr_step_db));
        }
        if self.snr_min_db > self.snr_max_db {
            return bad(format!(
                "snr_min_db {} exceeds snr_max_db {}",
                self.snr_min_db, self.snr_max_db
            ));
        }
        if (self.snr_max_db - self.snr_min_db) % self.snr_step_db != 0 {
            return bad("snr range is not a multiple of snr_step_db".into());
        }
        if self.snr_min_db < i16::MIN as i32 || self.snr_max_db > i16::MAX as i32 {
            return bad("snr levels must fit in 16 bits".into());
        }
        if self.per_class_per_snr == 0 {
            return bad("per_class_per_snr must be positive".into());
        }
        if self.signal_len == 0 || self.samples_per_symbol == 0 {
            return bad("signal_len and samples_per_symbol must be positive".into());
        }
        if !self.signal_len.is_multiple_of(self.samples_per_symbol) {
            return bad(format!(
                "signal_len {} is not divisible by samples_per_symbol {}",
                self.signal_len, self.samples_per_symbol
            ));
        }
        if !(self.rrc_rolloff > 0.0 && self.rrc_rolloff <= 1.0) {
            return bad(format!("rrc_rolloff {} outside (0, 1]", self.rrc_rolloff));
        }
        Ok(())
    }

    pub fn snr_levels(&self) -> Vec<i32> {
        (self.snr_min_db..=self.snr_max_db)
            .step_by(self.snr_step_db as usize)
            .collect()
    }

    /// Symbols drawn per record: enough to cover the window plus filter
    /// transients on both sides.
    pub fn symbols_per_record(&self) -> usize {
        self.signal_len / self.samples_per_symbol + 2 * RRC_SPAN_SYMBOLS
    }

    pub fn num_records(&self) -> usize {
        self.schemes.len() * self.snr_levels().len() * self.per_class_per_snr
    }
}

fn inverse_gray(g: usize) -> usize {
    let mut n = g;
    let mut shift = g >> 1;
    while shift != 0 {
        n ^= shift;
        shift >>= 1;
    }
    n
}

/// Gray-coded PAM level in {-(M-1), ..., M-1} for an index of `bits` bits.
fn gray_pam_level(index: usize, levels: usize) -> f64 {
    (2 * inverse_gray(index)) as f64 - (levels as f64 - 1.0)
}

fn constellation_point(scheme: ModulationScheme, index: usize) -> Complex64 {
    use ModulationScheme::*;
    match scheme {
        Bpsk | Cpfsk | Gfsk => Complex64::new(if index == 0 { 1.0 } else { -1.0 }, 0.0),
        Qpsk => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let i = if index & 2 == 0 { s } else { -s };
            let q = if index & 1 == 0 { s } else { -s };
            Complex64::new(i, q)
        }
        Psk8 => Complex64::from_polar(1.0, 2.0 * PI * inverse_gray(index) as f64 / 8.0),
        Pam4 => Complex64::new(gray_pam_level(index, 4) / 5f64.sqrt(), 0.0),
        Qam16 => Complex64::new(gray_pam_level(index >> 2, 4), gray_pam_level(index & 3, 4))
            / 10f64.sqrt(),
        Qam64 => Complex64::new(gray_pam_level(index >> 3, 8), gray_pam_level(index & 7, 8))
            / 42f64.sqrt(),
    }
}

/// Map symbol indices onto Gray-coded, unit-average-energy constellation
/// points. For the FSK schemes the "points" are the ±1 frequency deviations.
pub fn map_symbols(
    scheme: ModulationScheme,
    symbol_indices: &[usize],
) -> Result<Vec<Complex64>, SynthError> {
    let order = scheme.order();
    symbol_indices
        .iter()
        .map(|&index| {
            if index >= order {
                Err(SynthError::SymbolOutOfRange { scheme, index, order })
            } else {
                Ok(constellation_point(scheme, index))
            }
        })
        .collect()
}

/// Uniform random symbol indices for one record.
pub fn draw_symbols(scheme: ModulationScheme, count: usize, stream_seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(stream_seed);
    let order = scheme.order();
    (0..count).map(|_| rng.random_range(0..order)).collect()
}

/// Root-raised-cosine impulse response sampled at `sps` samples per symbol,
/// `2 * span * sps + 1` taps, unit energy.
pub fn rrc_taps(sps: usize, rolloff: f64, span: usize) -> Vec<f64> {
    let beta = rolloff;
    let half = (span * sps) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            if n == 0 {
                1.0 - beta + 4.0 * beta / PI
            } else if ((4.0 * beta * t).abs() - 1.0).abs() < 1e-9 {
                let a = PI / (4.0 * beta);
                beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = energy.sqrt().recip();
    taps.iter_mut().for_each(|h| *h *= scale);
    taps
}

/// Gaussian smoothing filter for GFSK, normalized to unit DC gain.
pub fn gaussian_taps(sps: usize, bt: f64, span: usize) -> Vec<f64> {
    let sigma = sps as f64 * 2f64.ln().sqrt() / (2.0 * PI * bt);
    let half = (span * sps) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| (-(n as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|g| *g /= sum);
    taps
}

fn centered_window<T: Copy>(full: &[T], len: usize) -> Vec<T> {
    let start = (full.len() - len) / 2;
    full[start..start + len].to_vec()
}

fn normalize_power(x: &mut [Complex64]) {
    let power = x.iter().map(|s| s.norm_sqr()).sum::<f64>() / x.len() as f64;
    if power > 0.0 {
        let scale = power.sqrt().recip();
        x.iter_mut().for_each(|s| *s *= scale);
    }
}

fn integrate_phase(freq: &[f64], mod_index: f64, sps: usize) -> Vec<Complex64> {
    let step = PI * mod_index / sps as f64;
    let mut phase = 0.0f64;
    freq.iter()
        .map(|f| {
            phase += step * f;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Shape a symbol sequence into a length-`signal_len` waveform with unit
/// average power. The output window is centered in the full filtered stream.
pub fn shape_symbols(
    scheme: ModulationScheme,
    symbols: &[usize],
    spec: &GenSpec,
) -> Result<Vec<Complex64>, SynthError> {
    let sps = spec.samples_per_symbol;
    let len = spec.signal_len;
    if symbols.len() * sps < len {
        return Err(SynthError::TooFewSymbols {
            symbols: symbols.len(),
            sps,
            len,
        });
    }
    let points = map_symbols(scheme, symbols)?;
    let mut out = match scheme {
        ModulationScheme::Cpfsk => {
            let freq: Vec<f64> = points.iter().flat_map(|p| std::iter::repeat_n(p.re, sps)).collect();
            centered_window(&integrate_phase(&freq, CPFSK_MOD_INDEX, sps), len)
        }
        ModulationScheme::Gfsk => {
            let nrz: Vec<f64> = points.iter().flat_map(|p| std::iter::repeat_n(p.re, sps)).collect();
            let g = gaussian_taps(sps, GFSK_BT, GAUSS_SPAN_SYMBOLS);
            let freq = convolve_real(&nrz, &g);
            centered_window(&integrate_phase(&freq, GFSK_MOD_INDEX, sps), len)
        }
        _ => {
            let taps = rrc_taps(sps, spec.rrc_rolloff, RRC_SPAN_SYMBOLS);
            let mut full = vec![Complex64::new(0.0, 0.0); points.len() * sps + taps.len() - 1];
            for (k, p) in points.iter().enumerate() {
                for (j, h) in taps.iter().enumerate() {
                    full[k * sps + j] += p * h;
                }
            }
            centered_window(&full, len)
        }
    };
    normalize_power(&mut out);
    Ok(out)
}

fn convolve_real(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, xi) in x.iter().enumerate() {
        for (j, hj) in h.iter().enumerate() {
            y[i + j] += xi * hj;
        }
    }
    y
}

/// Draw `symbol_count` symbols from `stream_seed` and shape them.
pub fn synthesize_waveform(
    scheme: ModulationScheme,
    symbol_count: usize,
    spec: &GenSpec,
    stream_seed: u64,
) -> Result<Vec<Complex64>, SynthError> {
    let symbols = draw_symbols(scheme, symbol_count, stream_seed);
    shape_symbols(scheme, &symbols, spec)
}

/// Add circularly-symmetric Gaussian noise with per-complex-sample variance
/// `10^(-snr_db/10)`, assuming a unit-power input.
pub fn apply_awgn(signal: &[Complex64], snr_db: i32, noise_seed: u64) -> Vec<Complex64> {
    let sigma = (10f64.powf(-(snr_db as f64) / 10.0) / 2.0).sqrt();
    let mut rng = seed::rng(noise_seed);
    signal
        .iter()
        .map(|s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(re, im) * sigma
        })
        .collect()
}

/// Per-record symbol and noise seeds, keyed by (class, snr, index) so any
/// cell can be generated independently of the others.
pub fn record_seeds(spec_seed: u64, class: usize, snr_db: i32, index: usize) -> (u64, u64) {
    let base = seed::derive(spec_seed, &[class as u64, snr_db as i64 as u64, index as u64]);
    (
        seed::derive(base, &[seed::tag::SYMBOLS]),
        seed::derive(base, &[seed::tag::NOISE]),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Awgn,
    /// Skip the noise stage; used to audit the clean waveform power.
    Noiseless,
}

pub fn generate_dataset(spec: &GenSpec) -> Result<Dataset, SynthError> {
    generate_dataset_with(spec, Channel::Awgn)
}

pub fn generate_dataset_with(spec: &GenSpec, channel: Channel) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let levels = spec.snr_levels();
    let mut records = Vec::with_capacity(spec.num_records());
    for (class, &scheme) in spec.schemes.iter().enumerate() {
        for &snr in &levels {
            for index in 0..spec.per_class_per_snr {
                let (symbol_seed, noise_seed) = record_seeds(spec.seed, class, snr, index);
                let clean = synthesize_waveform(scheme, spec.symbols_per_record(), spec, symbol_seed)?;
                let signal = match channel {
                    Channel::Awgn => apply_awgn(&clean, snr, noise_seed),
                    Channel::Noiseless => clean,
                };
                records.push(SignalRecord::from_complex(class as u16, snr as i16, &signal));
            }
        }
    }
    Ok(Dataset {
        num_classes: spec.schemes.len() as u32,
        signal_len: spec.signal_len as u32,
        records,
    })
}

/// Class names in label order, for the dataset manifest.
pub fn class_names(spec: &GenSpec) -> Vec<String> {
    spec.schemes.iter().map(|s| s.name().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-9
    }

    #[test]
    fn constellation_examples() {
        use ModulationScheme::*;
        assert_eq!(map_symbols(Bpsk, &[0]).unwrap(), vec![Complex64::new(1.0, 0.0)]);
        let q = map_symbols(Qpsk, &[0]).unwrap()[0];
        assert!(close(q, Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)));
        let corners: Vec<Complex64> = map_symbols(Qam16, &(0..16).collect::<Vec<_>>())
            .unwrap()
            .into_iter()
            .filter(|p| (p.re.abs() - 3.0 / 10f64.sqrt()).abs() < 1e-12 && (p.im.abs() - 3.0 / 10f64.sqrt()).abs() < 1e-12)
            .collect();
        assert_eq!(corners.len(), 4);
    }

    #[test]
    fn constellations_have_unit_energy_and_distinct_points() {
        for scheme in ModulationScheme::ALL.into_iter().filter(|s| s.is_linear()) {
            let all: Vec<usize> = (0..scheme.order()).collect();
            let pts = map_symbols(scheme, &all).unwrap();
            let energy = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((energy - 1.0).abs() < 1e-6, "{scheme}: {energy}");
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    assert!((pts[i] - pts[j]).norm() > 1e-3, "{scheme} duplicates");
                }
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        // Adjacent PSK8 phases and adjacent PAM levels carry Gray-adjacent labels.
        let psk: Vec<(usize, f64)> = (0..8)
            .map(|i| (i, constellation_point(ModulationScheme::Psk8, i).arg().rem_euclid(2.0 * PI)))
            .collect();
        let mut by_phase = psk.clone();
        by_phase.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        for w in 0..8 {
            let a = by_phase[w].0;
            let b = by_phase[(w + 1) % 8].0;
            assert_eq!((a ^ b).count_ones(), 1);
        }
    }

    #[test]
    fn out_of_range_symbol_rejected() {
        let err = map_symbols(ModulationScheme::Qpsk, &[0, 4]).unwrap_err();
        assert_eq!(
            err,
            SynthError::SymbolOutOfRange {
                scheme: ModulationScheme::Qpsk,
                index: 4,
                order: 4
            }
        );
    }

    #[test]
    fn alternating_bpsk_has_unit_power() {
        let spec = GenSpec::default();
        let symbols: Vec<usize> = (0..spec.symbols_per_record()).map(|i| i % 2).collect();
        let w = shape_symbols(ModulationScheme::Bpsk, &symbols, &spec).unwrap();
        assert_eq!(w.len(), 128);
        let p = w.iter().map(|s| s.norm_sqr()).sum::<f64>() / 128.0;
        assert!((p - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fsk_envelopes_are_constant() {
        let spec = GenSpec::default();
        for scheme in [ModulationScheme::Cpfsk, ModulationScheme::Gfsk] {
            let w = synthesize_waveform(scheme, spec.symbols_per_record(), &spec, 11).unwrap();
            let (lo, hi) = w.iter().fold((f64::MAX, 0f64), |(lo, hi), s| {
                (lo.min(s.norm()), hi.max(s.norm()))
            });
            assert!(hi / lo <= 1.001, "{scheme}: {}", hi / lo);
        }
    }

    #[test]
    fn too_few_symbols_rejected() {
        let spec = GenSpec::default();
        assert!(matches!(
            synthesize_waveform(ModulationScheme::Qpsk, 15, &spec, 0),
            Err(SynthError::TooFewSymbols { .. })
        ));
        assert!(synthesize_waveform(ModulationScheme::Qpsk, 16, &spec, 0).is_ok());
    }

    #[test]
    fn waveform_is_deterministic() {
        let spec = GenSpec::default();
        for scheme in ModulationScheme::ALL {
            let a = synthesize_waveform(scheme, 28, &spec, 42).unwrap();
            let b = synthesize_waveform(scheme, 28, &spec, 42).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        }
    }

    #[test]
    fn awgn_high_snr_is_nearly_transparent() {
        let spec = GenSpec::default();
        let clean = synthesize_waveform(ModulationScheme::Qam16, 28, &spec, 3).unwrap();
        let noisy = apply_awgn(&clean, 60, 4);
        let rms = (clean.iter().zip(&noisy).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 128.0).sqrt();
        assert!(rms < 0.01, "{rms}");
    }

    #[test]
    fn awgn_at_zero_db_matches_signal_power() {
        let n = 200_000;
        let ones = vec![Complex64::new(1.0, 0.0); n];
        let noisy = apply_awgn(&ones, 0, 9);
        let noise_power = noisy.iter().zip(&ones).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n as f64;
        assert!((noise_power - 1.0).abs() < 0.02, "{noise_power}");
    }

    #[test]
    fn spec_validation() {
        let mut spec = GenSpec::default();
        assert!(spec.validate().is_ok());
        spec.snr_max_db = 17;
        assert!(spec.validate().is_err());
        let mut spec = GenSpec::default();
        spec.signal_len = 100;
        assert!(spec.validate().is_err());
        let mut spec = GenSpec::default();
        spec.rrc_rolloff = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dataset_size_and_balance() {
        let spec = GenSpec {
            snr_min_db: 12,
            snr_max_db: 18,
            per_class_per_snr: 125,
            ..GenSpec::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        assert_eq!(ds.records.len(), 4000);
        let mut hist = [0usize; 8];
        for r in &ds.records {
            hist[r.label as usize] += 1;
        }
        assert!(hist.iter().all(|&h| h == 500));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in ModulationScheme::ALL {
            assert_eq!(s.name().parse::<ModulationScheme>().unwrap(), s);
        }
        assert!("AM-DSB".parse::<ModulationScheme>().is_err());
    }
}
