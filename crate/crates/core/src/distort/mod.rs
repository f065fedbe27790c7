//! Programmatic speech degradation: random distortion chains applied to clean
//! signals, producing time-aligned (clean, distorted) pairs.
//!
//! A chain is a list of [`DistortionSpec`]s. Every spec carries its sampled
//! parameters and a sub-seed for whatever randomness the primitive needs at
//! apply time, so a serialized chain replays bit-exactly.

mod align;
mod dynamics;
pub mod filters;
mod noise;
mod reverb;
mod spectral;
mod transmission;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::signal::Signal;

pub use align::{align_offset, trim_to_common};
use filters::{Biquad, BiquadKind};

/// Peak above which the soft-clip guard engages.
pub const GUARD_LEVEL: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    BandPass,
    HighPass,
    LowPass,
    Downsample,
    MuLaw,
    Plosive,
    Sibilance,
    Overdrive,
    Clip,
    Compressor,
    DestroyLevels,
    NoiseGate,
    SimpleCompressor,
    SimpleExpander,
    Tremolo,
    BandReject,
    RandomEq,
    TwoPole,
    AdditiveNoise,
    ImpulsiveNoise,
    Reverb,
    FdnReverb,
    Chorus,
    Phaser,
    Rir,
    ShortDelay,
    ConvolvedSpectrogram,
    GriffinLim,
    PhaseRandomization,
    PhaseShuffle,
    SpectralHoles,
    SpectralNoise,
    ColoredNoise,
    Dc,
    ElectricityTone,
    NsColoredNoise,
    NsDc,
    NsElectricityTone,
    NsRandomTone,
    RandomTone,
    FrameShuffle,
    InsertAttenuation,
    InsertNoise,
    PerturbAmplitude,
    SampleDuplicate,
    SilentGap,
    Telephone,
    /// Pure integer delay. Not part of the weighted table; useful for
    /// hand-built chains and alignment checks.
    Delay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Uniform,
    LogUniform,
    /// Uniform over the integers in `[lo, hi]`.
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBound {
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

impl ParamBound {
    const fn new(lo: f64, hi: f64, scale: Scale) -> Self {
        Self { lo, hi, scale }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo <= self.hi
            && match self.scale {
                Scale::Uniform => true,
                Scale::LogUniform => self.lo > 0.0,
                Scale::Integer => self.lo.fract() == 0.0 && self.hi.fract() == 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid bound for {what}: {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut seed::Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        match self.scale {
            Scale::Uniform => rng.random_range(self.lo..self.hi),
            Scale::LogUniform => rng.random_range(self.lo.ln()..self.hi.ln()).exp(),
            Scale::Integer => rng.random_range(self.lo as i64..=self.hi as i64) as f64,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi && (self.scale != Scale::Integer || v.fract() == 0.0)
    }
}

use Scale::{Integer as I, LogUniform as L, Uniform as U};

const SNR: (&str, ParamBound) = ("snr_db", ParamBound::new(-5.0, 25.0, U));
const Q: (&str, ParamBound) = ("q", ParamBound::new(0.5, 5.0, U));
const STAGES: (&str, ParamBound) = ("stages", ParamBound::new(1.0, 3.0, I));
/// STFT frame is `256 << window`.
const WINDOW: (&str, ParamBound) = ("window", ParamBound::new(0.0, 2.0, I));
const DURATION: (&str, ParamBound) = ("duration_ms", ParamBound::new(50.0, 1000.0, L));
const PROBABILITY: (&str, ParamBound) = ("probability", ParamBound::new(0.1, 0.8, U));
const SLOT_PROBABILITY: (&str, ParamBound) = ("probability", ParamBound::new(0.05, 0.3, U));
const WAVEFORM: (&str, ParamBound) = ("waveform", ParamBound::new(0.0, 3.0, I));
const MAINS: (&str, ParamBound) = ("mains", ParamBound::new(0.0, 1.0, I));
const HARMONICS: (&str, ParamBound) = ("harmonics", ParamBound::new(1.0, 10.0, I));
const TONE_HZ: (&str, ParamBound) = ("freq_hz", ParamBound::new(100.0, 7000.0, L));
const WET: (&str, ParamBound) = ("wet", ParamBound::new(0.1, 0.7, U));
const RT60: (&str, ParamBound) = ("rt60_s", ParamBound::new(0.2, 2.0, L));

/// Static description of one distortion type.
pub struct KindInfo {
    /// Row of the distortion table, if the type belongs to it.
    pub table_id: Option<u8>,
    pub family: &'static str,
    pub weight: f64,
    pub params: &'static [(&'static str, ParamBound)],
}

impl DistortionKind {
    /// Every implemented type of the weighted table, in table order.
    pub const TABLE: [DistortionKind; 47] = {
        use DistortionKind::*;
        [
            BandPass,
            HighPass,
            LowPass,
            Downsample,
            MuLaw,
            Plosive,
            Sibilance,
            Overdrive,
            Clip,
            Compressor,
            DestroyLevels,
            NoiseGate,
            SimpleCompressor,
            SimpleExpander,
            Tremolo,
            BandReject,
            RandomEq,
            TwoPole,
            AdditiveNoise,
            ImpulsiveNoise,
            Reverb,
            FdnReverb,
            Chorus,
            Phaser,
            Rir,
            ShortDelay,
            ConvolvedSpectrogram,
            GriffinLim,
            PhaseRandomization,
            PhaseShuffle,
            SpectralHoles,
            SpectralNoise,
            ColoredNoise,
            Dc,
            ElectricityTone,
            NsColoredNoise,
            NsDc,
            NsElectricityTone,
            NsRandomTone,
            RandomTone,
            FrameShuffle,
            InsertAttenuation,
            InsertNoise,
            PerturbAmplitude,
            SampleDuplicate,
            SilentGap,
            Telephone,
        ]
    };

    pub fn info(self) -> KindInfo {
        use DistortionKind::*;
        let (table_id, family, weight, params): (
            Option<u8>,
            _,
            _,
            &'static [(&'static str, ParamBound)],
        ) = match self {
            BandPass => (
                Some(1),
                "band_limiting",
                5.0,
                const {
                    &[
                        ("high_hz", ParamBound::new(2000.0, 7200.0, L)),
                        ("low_hz", ParamBound::new(80.0, 1000.0, L)),
                        Q,
                        STAGES,
                    ]
                },
            ),
            HighPass => (
                Some(2),
                "band_limiting",
                5.0,
                const { &[("cutoff_hz", ParamBound::new(80.0, 1500.0, L)), Q, STAGES] },
            ),
            LowPass => (
                Some(3),
                "band_limiting",
                20.0,
                const { &[("cutoff_hz", ParamBound::new(800.0, 7200.0, L)), Q, STAGES] },
            ),
            Downsample => (
                Some(4),
                "band_limiting",
                30.0,
                const {
                    &[
                        ("method", ParamBound::new(0.0, 1.0, I)),
                        ("rate_hz", ParamBound::new(2000.0, 8000.0, L)),
                    ]
                },
            ),
            MuLaw => (
                Some(10),
                "codec",
                3.0,
                const {
                    &[
                        ("bits", ParamBound::new(4.0, 8.0, I)),
                        ("mu", ParamBound::new(15.0, 255.0, L)),
                    ]
                },
            ),
            Plosive => (
                Some(14),
                "distortion",
                10.0,
                const {
                    &[
                        ("freq_hz", ParamBound::new(80.0, 300.0, L)),
                        ("gain_db", ParamBound::new(3.0, 15.0, U)),
                    ]
                },
            ),
            Sibilance => (
                Some(15),
                "distortion",
                10.0,
                const {
                    &[
                        ("freq_hz", ParamBound::new(3000.0, 6000.0, L)),
                        ("gain_db", ParamBound::new(3.0, 15.0, U)),
                    ]
                },
            ),
            Overdrive => (
                Some(16),
                "distortion",
                5.0,
                const {
                    &[
                        ("gain_db", ParamBound::new(6.0, 30.0, U)),
                        ("harmonicity", ParamBound::new(0.0, 0.5, U)),
                    ]
                },
            ),
            Clip => (
                Some(17),
                "distortion",
                8.0,
                const { &[("threshold", ParamBound::new(0.1, 0.9, U))] },
            ),
            Compressor => (
                Some(18),
                "loudness_dynamics",
                10.0,
                const {
                    &[
                        ("attack_ms", ParamBound::new(1.0, 30.0, L)),
                        ("ratio", ParamBound::new(2.0, 20.0, L)),
                        ("release_ms", ParamBound::new(20.0, 500.0, L)),
                        ("threshold_db", ParamBound::new(-40.0, -10.0, U)),
                    ]
                },
            ),
            DestroyLevels => (
                Some(19),
                "loudness_dynamics",
                20.0,
                const {
                    &[
                        ("max_gain_db", ParamBound::new(3.0, 20.0, U)),
                        PROBABILITY,
                        ("segment_ms", ParamBound::new(50.0, 500.0, L)),
                    ]
                },
            ),
            NoiseGate => (
                Some(20),
                "loudness_dynamics",
                10.0,
                const {
                    &[
                        ("attack_ms", ParamBound::new(0.5, 10.0, L)),
                        ("range_db", ParamBound::new(20.0, 80.0, U)),
                        ("release_ms", ParamBound::new(20.0, 300.0, L)),
                        ("threshold_db", ParamBound::new(-50.0, -25.0, U)),
                    ]
                },
            ),
            SimpleCompressor => (
                Some(21),
                "loudness_dynamics",
                3.0,
                const { &[("ratio", ParamBound::new(1.5, 6.0, L))] },
            ),
            SimpleExpander => (
                Some(22),
                "loudness_dynamics",
                2.0,
                const { &[("ratio", ParamBound::new(1.5, 4.0, L))] },
            ),
            Tremolo => (
                Some(23),
                "loudness_dynamics",
                2.0,
                const {
                    &[
                        ("depth", ParamBound::new(0.2, 1.0, U)),
                        ("rate_hz", ParamBound::new(2.0, 15.0, L)),
                    ]
                },
            ),
            BandReject => (
                Some(24),
                "equalization",
                5.0,
                const { &[("center_hz", ParamBound::new(200.0, 6000.0, L)), Q] },
            ),
            RandomEq => (
                Some(25),
                "equalization",
                15.0,
                const {
                    &[
                        ("bands", ParamBound::new(1.0, 6.0, I)),
                        ("max_gain_db", ParamBound::new(3.0, 15.0, U)),
                    ]
                },
            ),
            TwoPole => (
                Some(26),
                "equalization",
                10.0,
                const {
                    &[
                        ("freq_hz", ParamBound::new(100.0, 6000.0, L)),
                        ("radius", ParamBound::new(0.8, 0.99, U)),
                    ]
                },
            ),
            AdditiveNoise => (Some(27), "recorded_noise", 150.0, const { &[SNR] }),
            ImpulsiveNoise => (
                Some(28),
                "recorded_noise",
                30.0,
                const {
                    &[
                        ("burst_ms", ParamBound::new(1.0, 20.0, L)),
                        ("rate_hz", ParamBound::new(1.0, 20.0, L)),
                        ("snr_db", ParamBound::new(0.0, 30.0, U)),
                    ]
                },
            ),
            Reverb => (Some(29), "reverb_delay", 30.0, const { &[RT60, WET] }),
            FdnReverb => (
                Some(30),
                "reverb_delay",
                5.0,
                const { &[RT60, ("size", ParamBound::new(0.5, 2.0, L)), WET] },
            ),
            Chorus => (
                Some(31),
                "reverb_delay",
                1.0,
                const {
                    &[
                        ("delay_ms", ParamBound::new(10.0, 30.0, U)),
                        ("depth_ms", ParamBound::new(1.0, 5.0, U)),
                        ("mix", ParamBound::new(0.2, 0.7, U)),
                        ("rate_hz", ParamBound::new(0.1, 3.0, L)),
                    ]
                },
            ),
            Phaser => (
                Some(32),
                "reverb_delay",
                1.0,
                const {
                    &[
                        ("feedback", ParamBound::new(0.0, 0.7, U)),
                        ("max_hz", ParamBound::new(1500.0, 5000.0, L)),
                        ("min_hz", ParamBound::new(200.0, 800.0, L)),
                        ("mix", ParamBound::new(0.3, 0.7, U)),
                        ("rate_hz", ParamBound::new(0.1, 2.0, L)),
                        ("stages", ParamBound::new(2.0, 8.0, I)),
                    ]
                },
            ),
            Rir => (
                Some(33),
                "reverb_delay",
                120.0,
                const {
                    &[
                        ("drr_db", ParamBound::new(-6.0, 12.0, U)),
                        ("gain_db", ParamBound::new(-6.0, 6.0, U)),
                        ("predelay_ms", ParamBound::new(0.0, 20.0, U)),
                        ("rt60_s", ParamBound::new(0.1, 1.2, L)),
                    ]
                },
            ),
            ShortDelay => (
                Some(34),
                "reverb_delay",
                3.0,
                const {
                    &[
                        ("delay_ms", ParamBound::new(1.0, 30.0, L)),
                        ("gain", ParamBound::new(0.2, 0.9, U)),
                    ]
                },
            ),
            ConvolvedSpectrogram => (
                Some(35),
                "spectral",
                1.0,
                const { &[("amount", ParamBound::new(1.0, 4.0, I)), WINDOW] },
            ),
            GriffinLim => (
                Some(36),
                "spectral",
                3.0,
                const { &[("amount", ParamBound::new(4.0, 32.0, I)), WINDOW] },
            ),
            PhaseRandomization => (
                Some(37),
                "spectral",
                1.0,
                const { &[("amount", ParamBound::new(0.1, 1.0, U)), WINDOW] },
            ),
            PhaseShuffle => (
                Some(38),
                "spectral",
                1.0,
                const { &[("amount", ParamBound::new(0.1, 1.0, U)), WINDOW] },
            ),
            SpectralHoles => (
                Some(39),
                "spectral",
                1.0,
                const { &[("amount", ParamBound::new(0.01, 0.15, U)), WINDOW] },
            ),
            SpectralNoise => (
                Some(40),
                "spectral",
                1.0,
                const { &[("snr_db", ParamBound::new(0.0, 30.0, U)), WINDOW] },
            ),
            ColoredNoise => (
                Some(41),
                "synthetic_noise",
                15.0,
                const { &[("slope_db", ParamBound::new(-6.0, 6.0, U)), SNR] },
            ),
            Dc => (
                Some(42),
                "synthetic_noise",
                1.0,
                const { &[("amplitude", ParamBound::new(-0.2, 0.2, U))] },
            ),
            ElectricityTone => (
                Some(43),
                "synthetic_noise",
                6.0,
                const {
                    &[
                        HARMONICS,
                        MAINS,
                        ("snr_db", ParamBound::new(0.0, 30.0, U)),
                        WAVEFORM,
                    ]
                },
            ),
            NsColoredNoise => (
                Some(44),
                "synthetic_noise",
                5.0,
                const {
                    &[
                        DURATION,
                        PROBABILITY,
                        ("slope_db", ParamBound::new(-6.0, 6.0, U)),
                        SNR,
                    ]
                },
            ),
            NsDc => (
                Some(45),
                "synthetic_noise",
                1.0,
                const {
                    &[
                        ("amplitude", ParamBound::new(-0.2, 0.2, U)),
                        DURATION,
                        PROBABILITY,
                    ]
                },
            ),
            NsElectricityTone => (
                Some(46),
                "synthetic_noise",
                3.0,
                const {
                    &[
                        DURATION,
                        HARMONICS,
                        MAINS,
                        PROBABILITY,
                        ("snr_db", ParamBound::new(0.0, 30.0, U)),
                    ]
                },
            ),
            NsRandomTone => (
                Some(47),
                "synthetic_noise",
                1.0,
                const {
                    &[
                        DURATION,
                        TONE_HZ,
                        PROBABILITY,
                        ("snr_db", ParamBound::new(0.0, 30.0, U)),
                    ]
                },
            ),
            RandomTone => (
                Some(48),
                "synthetic_noise",
                2.0,
                const { &[TONE_HZ, ("snr_db", ParamBound::new(0.0, 30.0, U)), WAVEFORM] },
            ),
            FrameShuffle => (
                Some(49),
                "transmission",
                10.0,
                const {
                    &[
                        ("length_ms", ParamBound::new(10.0, 60.0, L)),
                        SLOT_PROBABILITY,
                    ]
                },
            ),
            InsertAttenuation => (
                Some(50),
                "transmission",
                3.0,
                const {
                    &[
                        ("gain_db", ParamBound::new(-30.0, -6.0, U)),
                        ("length_ms", ParamBound::new(20.0, 300.0, L)),
                        SLOT_PROBABILITY,
                    ]
                },
            ),
            InsertNoise => (
                Some(51),
                "transmission",
                5.0,
                const {
                    &[
                        ("length_ms", ParamBound::new(20.0, 300.0, L)),
                        SLOT_PROBABILITY,
                        ("snr_db", ParamBound::new(-5.0, 20.0, U)),
                    ]
                },
            ),
            PerturbAmplitude => (
                Some(52),
                "transmission",
                1.0,
                const {
                    &[
                        ("gain_db", ParamBound::new(1.0, 6.0, U)),
                        ("length_ms", ParamBound::new(20.0, 300.0, L)),
                        SLOT_PROBABILITY,
                    ]
                },
            ),
            SampleDuplicate => (
                Some(53),
                "transmission",
                2.0,
                const {
                    &[
                        ("length_ms", ParamBound::new(5.0, 40.0, L)),
                        ("probability", ParamBound::new(0.01, 0.1, U)),
                    ]
                },
            ),
            SilentGap => (
                Some(54),
                "transmission",
                15.0,
                const {
                    &[
                        ("length_ms", ParamBound::new(20.0, 200.0, L)),
                        SLOT_PROBABILITY,
                    ]
                },
            ),
            Telephone => (
                Some(55),
                "transmission",
                10.0,
                const {
                    &[
                        ("high_hz", ParamBound::new(3000.0, 3800.0, L)),
                        ("low_hz", ParamBound::new(200.0, 400.0, L)),
                        ("ratio", ParamBound::new(2.0, 8.0, L)),
                        STAGES,
                    ]
                },
            ),
            Delay => (
                None,
                "reverb_delay",
                0.0,
                const { &[("samples", ParamBound::new(0.0, 1600.0, I))] },
            ),
        };
        KindInfo {
            table_id,
            family,
            weight,
            params,
        }
    }

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    /// Types whose output can be shifted in time relative to the input.
    pub fn may_delay(self) -> bool {
        matches!(
            self,
            DistortionKind::Delay | DistortionKind::Rir | DistortionKind::SampleDuplicate
        )
    }

    pub fn default_bounds(self) -> BTreeMap<String, ParamBound> {
        self.info()
            .params
            .iter()
            .map(|(n, b)| (n.to_string(), *b))
            .collect()
    }
}

/// One distortion with its parameters and apply-time sub-seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    #[serde(rename = "type")]
    pub kind: DistortionKind,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, params: &[(&str, f64)], seed: u64) -> Self {
        Self {
            kind,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        }
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        match self.params.get(name) {
            Some(v) if v.is_finite() => Ok(*v),
            Some(v) => Err(Error::config(format!(
                "{} parameter {name} = {v}",
                self.kind.name()
            ))),
            None => Err(Error::config(format!(
                "{} is missing parameter {name}",
                self.kind.name()
            ))),
        }
    }

    fn count(&self, name: &str) -> Result<usize> {
        let v = self.param(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::config(format!(
                "{name} must be a non-negative integer, got {v}"
            )));
        }
        Ok(v as usize)
    }

    /// Checks the parameter record against a bounds table.
    pub fn check_bounds(&self, bounds: &BTreeMap<String, ParamBound>) -> Result<()> {
        for (name, b) in bounds {
            let v = self.param(name)?;
            if !b.contains(v) {
                return Err(Error::config(format!(
                    "{} parameter {name} = {v} outside [{}, {}]",
                    self.kind.name(),
                    b.lo,
                    b.hi
                )));
            }
        }
        Ok(())
    }
}

fn default_count_probs() -> Vec<f64> {
    vec![0.35, 0.45, 0.15, 0.04, 0.01]
}

fn default_weights() -> BTreeMap<DistortionKind, f64> {
    DistortionKind::TABLE
        .iter()
        .map(|k| (*k, k.info().weight))
        .collect()
}

fn default_bounds() -> BTreeMap<DistortionKind, BTreeMap<String, ParamBound>> {
    DistortionKind::TABLE
        .iter()
        .map(|k| (*k, k.default_bounds()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Probability of chains of length 1, 2, ...
    #[serde(default = "default_count_probs")]
    pub count_probs: Vec<f64>,
    /// Selection weights; types absent from the map are never drawn.
    #[serde(default = "default_weights")]
    pub weights: BTreeMap<DistortionKind, f64>,
    /// Overrides merged over the built-in bounds table.
    #[serde(default = "default_bounds")]
    pub bounds: BTreeMap<DistortionKind, BTreeMap<String, ParamBound>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            count_probs: default_count_probs(),
            weights: default_weights(),
            bounds: default_bounds(),
        }
    }
}

impl ChainConfig {
    /// A config that only ever draws `kind`, once.
    pub fn single(kind: DistortionKind) -> Self {
        Self {
            count_probs: vec![1.0],
            weights: BTreeMap::from([(kind, 1.0)]),
            bounds: BTreeMap::from([(kind, kind.default_bounds())]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count_probs.is_empty() || self.count_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::config("count probabilities must be non-negative"));
        }
        let total: f64 = self.count_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "count probabilities sum to {total}, not 1"
            )));
        }
        if self.weights.is_empty() {
            return Err(Error::config("no distortion types enabled"));
        }
        for (kind, w) in &self.weights {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::config(format!(
                    "weight of {} must be > 0",
                    kind.name()
                )));
            }
            let bounds = self.bounds_for(*kind);
            for (name, _) in kind.info().params {
                let b = bounds
                    .get(*name)
                    .ok_or_else(|| Error::config(format!("no bound for {}.{name}", kind.name())))?;
                b.validate(&format!("{}.{name}", kind.name()))?;
            }
        }
        Ok(())
    }

    /// Bounds for `kind`, falling back to the built-in table.
    pub fn bounds_for(&self, kind: DistortionKind) -> BTreeMap<String, ParamBound> {
        let mut b = kind.default_bounds();
        if let Some(over) = self.bounds.get(&kind) {
            b.extend(over.iter().map(|(k, v)| (k.clone(), *v)));
        }
        b
    }

    /// Removes a type from the selection table.
    pub fn disable(&mut self, kind: DistortionKind) {
        self.weights.remove(&kind);
    }

    /// Selection probabilities after renormalization.
    pub fn probabilities(&self) -> BTreeMap<DistortionKind, f64> {
        let total: f64 = self.weights.values().sum();
        self.weights.iter().map(|(k, w)| (*k, w / total)).collect()
    }
}

/// Draws a chain: length from the count distribution (capped at the number
/// of enabled types), types without replacement in proportion to their
/// weights, then parameters in name order.
pub fn sample_chain(cfg: &ChainConfig, rng: &mut seed::Rng) -> Result<Vec<DistortionSpec>> {
    cfg.validate()?;
    let u: f64 = rng.random();
    let mut count = cfg.count_probs.len();
    let mut acc = 0.0;
    for (i, p) in cfg.count_probs.iter().enumerate() {
        acc += p;
        if u < acc {
            count = i + 1;
            break;
        }
    }
    let mut pool: Vec<(DistortionKind, f64)> = cfg.weights.iter().map(|(k, w)| (*k, *w)).collect();
    let count = count.min(pool.len());
    let mut chain = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, (_, w)) in pool.iter().enumerate() {
            if r < *w {
                pick = i;
                break;
            }
            r -= w;
        }
        let (kind, _) = pool.remove(pick);
        let params = cfg
            .bounds_for(kind)
            .iter()
            .map(|(name, b)| (name.clone(), b.sample(rng)))
            .collect();
        chain.push(DistortionSpec {
            kind,
            params,
            seed: rng.random(),
        });
    }
    Ok(chain)
}

/// Recorded noises and room responses available to the primitives.
#[derive(Debug, Clone, Default)]
pub struct Pools {
    pub noise: Vec<Signal>,
    pub rir: Vec<Signal>,
}

impl Pools {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        for s in self.noise.iter().chain(&self.rir) {
            s.require_rate(sample_rate, "pool entry")?;
            if s.is_empty() || s.energy() == 0.0 {
                return Err(Error::config("pool entries must be non-silent"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortedPair {
    pub clean: Signal,
    pub distorted: Signal,
    pub chain: Vec<DistortionSpec>,
    /// Lag of the distorted signal relative to the clean one before trimming.
    pub offset: i64,
    /// True when the soft-clip guard engaged.
    pub guarded: bool,
}

/// Applies one distortion.
pub fn apply(
    spec: &DistortionSpec,
    x: &[f64],
    sample_rate: u32,
    pools: &Pools,
) -> Result<Vec<f64>> {
    use DistortionKind::*;
    let sr = sample_rate as f64;
    let mut rng = seed::rng(spec.seed);
    let p = |n: &str| spec.param(n);
    let filter =
        |kind: BiquadKind, freq: f64, q: f64, stages: usize, x: &[f64]| -> Result<Vec<f64>> {
            Ok(filters::cascade(
                x,
                &Biquad::design(kind, freq, q, sr)?,
                stages,
            ))
        };
    let frame = |s: &DistortionSpec| -> Result<usize> {
        let w = s.count("window")?;
        if w > 6 {
            return Err(Error::config(format!("window code {w} too large")));
        }
        Ok(256 << w)
    };
    let y = match spec.kind {
        BandPass => {
            let (lo, hi) = (p("low_hz")?, p("high_hz")?);
            if lo >= hi {
                return Err(Error::domain(format!(
                    "band-pass low {lo} Hz >= high {hi} Hz"
                )));
            }
            let st = spec.count("stages")?;
            let y = filter(BiquadKind::HighPass, lo, p("q")?, st, x)?;
            filter(BiquadKind::LowPass, hi, p("q")?, st, &y)?
        }
        HighPass => filter(
            BiquadKind::HighPass,
            p("cutoff_hz")?,
            p("q")?,
            spec.count("stages")?,
            x,
        )?,
        LowPass => filter(
            BiquadKind::LowPass,
            p("cutoff_hz")?,
            p("q")?,
            spec.count("stages")?,
            x,
        )?,
        Downsample => {
            transmission::downsample(x, sample_rate, p("rate_hz")?, spec.count("method")?)?
        }
        MuLaw => dynamics::mu_law(x, p("mu")?, spec.count("bits")?)?,
        Plosive => filter(
            BiquadKind::LowShelf {
                gain_db: p("gain_db")?,
            },
            p("freq_hz")?,
            std::f64::consts::FRAC_1_SQRT_2,
            1,
            x,
        )?,
        Sibilance => filter(
            BiquadKind::HighShelf {
                gain_db: p("gain_db")?,
            },
            p("freq_hz")?,
            std::f64::consts::FRAC_1_SQRT_2,
            1,
            x,
        )?,
        Overdrive => dynamics::overdrive(x, p("gain_db")?, p("harmonicity")?)?,
        Clip => dynamics::clip(x, p("threshold")?)?,
        Compressor => dynamics::compressor(
            x,
            sr,
            &dynamics::Envelope {
                attack_ms: p("attack_ms")?,
                release_ms: p("release_ms")?,
            },
            p("threshold_db")?,
            p("ratio")?,
        )?,
        DestroyLevels => dynamics::destroy_levels(
            x,
            sr,
            p("segment_ms")?,
            p("probability")?,
            p("max_gain_db")?,
            &mut rng,
        )?,
        NoiseGate => dynamics::gate(
            x,
            sr,
            &dynamics::Envelope {
                attack_ms: p("attack_ms")?,
                release_ms: p("release_ms")?,
            },
            p("threshold_db")?,
            p("range_db")?,
        )?,
        SimpleCompressor => dynamics::power_law(x, 1.0 / p("ratio")?)?,
        SimpleExpander => dynamics::power_law(x, p("ratio")?)?,
        Tremolo => dynamics::tremolo(x, sr, p("rate_hz")?, p("depth")?)?,
        BandReject => filter(BiquadKind::Notch, p("center_hz")?, p("q")?, 1, x)?,
        RandomEq => dynamics::random_eq(x, sr, spec.count("bands")?, p("max_gain_db")?, &mut rng)?,
        TwoPole => filters::two_pole(x, p("freq_hz")?, p("radius")?, sr)?,
        AdditiveNoise => {
            let n = noise::from_pool(&pools.noise, x.len(), &mut rng)?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        ImpulsiveNoise => {
            let n = noise::impulsive(
                x.len(),
                sr,
                p("rate_hz")?,
                p("burst_ms")?,
                &pools.noise,
                &mut rng,
            )?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        Reverb => reverb::schroeder(x, sr, p("rt60_s")?, p("wet")?)?,
        FdnReverb => reverb::fdn(x, sr, p("rt60_s")?, p("size")?, p("wet")?)?,
        Chorus => reverb::chorus(
            x,
            sr,
            p("rate_hz")?,
            p("depth_ms")?,
            p("delay_ms")?,
            p("mix")?,
        )?,
        Phaser => reverb::phaser(
            x,
            sr,
            &reverb::PhaserParams {
                rate_hz: p("rate_hz")?,
                min_hz: p("min_hz")?,
                max_hz: p("max_hz")?,
                stages: spec.count("stages")?,
                feedback: p("feedback")?,
                mix: p("mix")?,
            },
        )?,
        Rir => {
            let rir = if pools.rir.is_empty() {
                reverb::synthetic_rir(sr, p("rt60_s")?, p("drr_db")?, p("predelay_ms")?, &mut rng)?
            } else {
                let pick = &pools.rir[rng.random_range(0..pools.rir.len())];
                reverb::augment_rir(&pick.samples, p("drr_db")?)?
            };
            reverb::convolve_rms(x, &rir, p("gain_db")?)
        }
        ShortDelay => reverb::short_delay(x, sr, p("delay_ms")?, p("gain")?)?,
        ConvolvedSpectrogram => spectral::convolved(x, frame(spec)?, spec.count("amount")?)?,
        GriffinLim => spectral::griffin_lim(x, frame(spec)?, spec.count("amount")?, &mut rng)?,
        PhaseRandomization => {
            spectral::phase_randomization(x, frame(spec)?, p("amount")?, &mut rng)?
        }
        PhaseShuffle => spectral::phase_shuffle(x, frame(spec)?, p("amount")?, &mut rng)?,
        SpectralHoles => spectral::holes(x, frame(spec)?, p("amount")?, &mut rng)?,
        SpectralNoise => spectral::noise(x, frame(spec)?, p("snr_db")?, &mut rng)?,
        ColoredNoise => {
            let n = noise::colored(x.len(), sr, p("slope_db")?, &mut rng);
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        Dc => {
            let a = p("amplitude")?;
            x.iter().map(|v| v + a).collect()
        }
        ElectricityTone => {
            let n = noise::mains(
                x.len(),
                sr,
                spec.count("mains")?,
                spec.count("harmonics")?,
                spec.count("waveform")?,
                &mut rng,
            )?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        NsColoredNoise => {
            let n = noise::colored(x.len(), sr, p("slope_db")?, &mut rng);
            let n = noise::gated(&n, sr, p("duration_ms")?, p("probability")?, &mut rng)?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        NsDc => {
            let n = vec![p("amplitude")?; x.len()];
            let n = noise::gated(&n, sr, p("duration_ms")?, p("probability")?, &mut rng)?;
            x.iter().zip(&n).map(|(a, b)| a + b).collect()
        }
        NsElectricityTone => {
            // Sawtooth hum: all harmonics up to the cap.
            let n = noise::mains(
                x.len(),
                sr,
                spec.count("mains")?,
                spec.count("harmonics")?,
                2,
                &mut rng,
            )?;
            let n = noise::gated(&n, sr, p("duration_ms")?, p("probability")?, &mut rng)?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        NsRandomTone => {
            let n = noise::tone(x.len(), sr, p("freq_hz")?, 0, usize::MAX, &mut rng)?;
            let n = noise::gated(&n, sr, p("duration_ms")?, p("probability")?, &mut rng)?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        RandomTone => {
            let n = noise::tone(
                x.len(),
                sr,
                p("freq_hz")?,
                spec.count("waveform")?,
                usize::MAX,
                &mut rng,
            )?;
            noise::add_at_snr(x, &n, p("snr_db")?)?
        }
        FrameShuffle => {
            transmission::frame_shuffle(x, sr, p("length_ms")?, p("probability")?, &mut rng)?
        }
        InsertAttenuation => transmission::insert_attenuation(
            x,
            sr,
            p("length_ms")?,
            p("probability")?,
            p("gain_db")?,
            &mut rng,
        )?,
        InsertNoise => transmission::insert_noise(
            x,
            sr,
            p("length_ms")?,
            p("probability")?,
            p("snr_db")?,
            &mut rng,
        )?,
        PerturbAmplitude => transmission::perturb_amplitude(
            x,
            sr,
            p("length_ms")?,
            p("probability")?,
            p("gain_db")?,
            &mut rng,
        )?,
        SampleDuplicate => {
            transmission::sample_duplicate(x, sr, p("length_ms")?, p("probability")?, &mut rng)?
        }
        SilentGap => {
            transmission::silent_gap(x, sr, p("length_ms")?, p("probability")?, &mut rng)?.0
        }
        Telephone => transmission::telephone(
            x,
            sr,
            p("low_hz")?,
            p("high_hz")?,
            p("ratio")?,
            spec.count("stages")?,
        )?,
        Delay => reverb::delay(x, spec.count("samples")?),
    };
    Ok(y)
}

/// Soft-clips with `4 tanh(x / 4)` when the peak exceeds [`GUARD_LEVEL`].
fn guard(y: &mut [f64]) -> bool {
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak <= GUARD_LEVEL {
        return false;
    }
    log::warn!("distorted peak {peak:.3} exceeds {GUARD_LEVEL}; soft-clipping");
    for v in y.iter_mut() {
        *v = GUARD_LEVEL * (*v / GUARD_LEVEL).tanh();
    }
    true
}

/// Applies `chain` in order, guards the level, and aligns the result to the
/// clean signal when some step can introduce delay.
pub fn apply_chain(
    clean: &Signal,
    chain: &[DistortionSpec],
    pools: &Pools,
) -> Result<DistortedPair> {
    clean.validate()?;
    if chain.is_empty() {
        return Err(Error::config("distortion chain is empty"));
    }
    pools.validate(clean.sample_rate)?;
    let mut y = clean.samples.clone();
    for (index, spec) in chain.iter().enumerate() {
        let wrap = |source: Error| Error::Distortion {
            index,
            kind: spec.kind.name(),
            source: Box::new(source),
        };
        y = apply(spec, &y, clean.sample_rate, pools).map_err(wrap)?;
        if y.len() != clean.len() {
            return Err(wrap(Error::Usage(format!(
                "length changed from {} to {}",
                clean.len(),
                y.len()
            ))));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(wrap(Error::NonFinite {
                what: format!("distorted sample {i}"),
                sigma: f64::NAN,
                t: f64::NAN,
            }));
        }
    }
    let guarded = guard(&mut y);
    let (clean_out, distorted, offset) = if chain.iter().any(|s| s.kind.may_delay()) {
        let offset = align_offset(&clean.samples, &y);
        let (a, b) = trim_to_common(&clean.samples, &y, offset);
        (a, b, offset)
    } else {
        (clean.samples.clone(), y, 0)
    };
    Ok(DistortedPair {
        clean: clean.with_samples(clean_out),
        distorted: clean.with_samples(distorted),
        chain: chain.to_vec(),
        offset,
        guarded,
    })
}

/// One line of the distortion log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub input: String,
    pub clean_output: String,
    pub distorted_output: String,
    pub seed: u64,
    pub chain: Vec<DistortionSpec>,
    pub offset: i64,
    pub guarded: bool,
}

/// Recomputes a logged pair from its clean input.
pub fn replay(record: &ChainRecord, clean: &Signal, pools: &Pools) -> Result<DistortedPair> {
    apply_chain(clean, &record.chain, pools)
}

/// Samples and applies a chain for the `index`-th file of a corpus seeded
/// with `master_seed`.
pub fn distort_file(
    clean: &Signal,
    cfg: &ChainConfig,
    pools: &Pools,
    master_seed: u64,
    index: u64,
) -> Result<DistortedPair> {
    let mut rng = seed::child_rng(master_seed, index);
    let chain = sample_chain(cfg, &mut rng)?;
    apply_chain(clean, &chain, pools)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speechlike(n: usize, s: u64) -> Signal {
        let mut rng = seed::rng(s);
        let mut y = 0.0;
        let samples = (0..n)
            .map(|i| {
                y = 0.9 * y + rng.random_range(-0.1..0.1);
                let env =
                    0.5 + 0.5 * (i as f64 * 2.0 * std::f64::consts::PI * 3.0 / 16_000.0).sin();
                y * env + 0.2 * (i as f64 * 0.07).sin() * env
            })
            .collect();
        Signal::new(samples, 16_000).unwrap()
    }

    fn noise_pool() -> Pools {
        let mut rng = seed::rng(99);
        let n: Vec<f64> = (0..12_000).map(|_| rng.random_range(-0.3..0.3)).collect();
        Pools {
            noise: vec![Signal::new(n, 16_000).unwrap()],
            rir: vec![],
        }
    }

    #[test]
    fn default_table_is_consistent() {
        let cfg = ChainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.weights.len(), 47);
        let ids: Vec<u8> = DistortionKind::TABLE
            .iter()
            .map(|k| k.info().table_id.unwrap())
            .collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for k in DistortionKind::TABLE {
            let names: Vec<&str> = k.info().params.iter().map(|p| p.0).collect();
            let mut sorted = names.clone();
            sorted.sort_unstable();
            assert_eq!(names, sorted, "{k:?} params must be listed in name order");
        }
        let p = cfg.probabilities();
        assert!((p.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let total: f64 = DistortionKind::TABLE.iter().map(|k| k.info().weight).sum();
        assert!((p[&DistortionKind::AdditiveNoise] - 150.0 / total).abs() < 1e-12);
    }

    #[test]
    fn degenerate_config_yields_that_type() {
        let mut rng = seed::rng(1);
        let cfg = ChainConfig::single(DistortionKind::Clip);
        for _ in 0..20 {
            let chain = sample_chain(&cfg, &mut rng).unwrap();
            assert_eq!(chain.len(), 1);
            assert_eq!(chain[0].kind, DistortionKind::Clip);
            chain[0]
                .check_bounds(&cfg.bounds_for(DistortionKind::Clip))
                .unwrap();
        }
    }

    #[test]
    fn chains_have_distinct_types_within_bounds() {
        let cfg = ChainConfig::default();
        let mut rng = seed::rng(2);
        for _ in 0..500 {
            let chain = sample_chain(&cfg, &mut rng).unwrap();
            assert!((1..=5).contains(&chain.len()));
            let mut kinds: Vec<_> = chain.iter().map(|s| s.kind).collect();
            kinds.sort();
            kinds.dedup();
            assert_eq!(kinds.len(), chain.len());
            for s in &chain {
                s.check_bounds(&cfg.bounds_for(s.kind)).unwrap();
            }
        }
    }

    #[test]
    fn log_uniform_parameters_are_uniform_in_log_space() {
        let b = ParamBound::new(800.0, 7200.0, Scale::LogUniform);
        let mut rng = seed::rng(3);
        let n = 20_000;
        let mid = (800.0f64 * 7200.0).sqrt();
        let below = (0..n).filter(|_| b.sample(&mut rng) < mid).count();
        let frac = below as f64 / n as f64;
        // Binomial standard error at p = 0.5.
        assert!(
            (frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(),
            "{frac}"
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ChainConfig::default();
        cfg.count_probs = vec![0.5, 0.4];
        assert!(cfg.validate().is_err());
        let mut cfg = ChainConfig::default();
        cfg.weights.insert(DistortionKind::Clip, 0.0);
        assert!(cfg.validate().is_err());
        let mut cfg = ChainConfig::default();
        cfg.bounds.insert(
            DistortionKind::LowPass,
            BTreeMap::from([(
                "cutoff_hz".to_string(),
                ParamBound::new(-1.0, 10.0, Scale::LogUniform),
            )]),
        );
        assert!(cfg.validate().is_err());
        let mut cfg = ChainConfig::default();
        cfg.weights.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_clip_chain_is_unchanged() {
        let x = speechlike(8000, 4);
        let chain = vec![DistortionSpec::new(
            DistortionKind::Clip,
            &[("threshold", 1.0)],
            0,
        )];
        let pair = apply_chain(&x, &chain, &Pools::default()).unwrap();
        assert_eq!(pair.distorted, x);
        assert_eq!(pair.clean, x);
        assert_eq!(pair.offset, 0);
    }

    #[test]
    fn constructed_delay_is_recovered() {
        let x = speechlike(8000, 5);
        let chain = vec![DistortionSpec::new(
            DistortionKind::Delay,
            &[("samples", 100.0)],
            0,
        )];
        let pair = apply_chain(&x, &chain, &Pools::default()).unwrap();
        assert_eq!(pair.offset, 100);
        assert_eq!(pair.clean.len(), pair.distorted.len());
        assert_eq!(pair.clean.len(), 7900);
        let worst = pair
            .clean
            .samples
            .iter()
            .zip(&pair.distorted.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn additive_noise_hits_requested_snr() {
        let x = speechlike(16_000, 6);
        let pools = noise_pool();
        for snr in [-5.0, 10.0, 25.0] {
            let chain = vec![DistortionSpec::new(
                DistortionKind::AdditiveNoise,
                &[("snr_db", snr)],
                7,
            )];
            let pair = apply_chain(&x, &chain, &pools).unwrap();
            let num: f64 = x.samples.iter().map(|v| v * v).sum();
            let den: f64 = x
                .samples
                .iter()
                .zip(&pair.distorted.samples)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let measured = 10.0 * (num / den).log10();
            assert!((measured - snr).abs() < 0.1, "{measured} vs {snr}");
        }
        let chain = vec![DistortionSpec::new(
            DistortionKind::AdditiveNoise,
            &[("snr_db", 10.0)],
            7,
        )];
        assert!(matches!(
            apply_chain(&x, &chain, &Pools::default()),
            Err(Error::Distortion { index: 0, .. })
        ));
    }

    #[test]
    fn errors_carry_the_chain_index() {
        let x = speechlike(4000, 8);
        let chain = vec![
            DistortionSpec::new(DistortionKind::Clip, &[("threshold", 0.5)], 0),
            DistortionSpec::new(
                DistortionKind::LowPass,
                &[("cutoff_hz", 9000.0), ("q", 0.7), ("stages", 1.0)],
                0,
            ),
        ];
        match apply_chain(&x, &chain, &Pools::default()) {
            Err(Error::Distortion { index, kind, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(kind, "low_pass");
            }
            other => panic!("{other:?}"),
        }
        let missing = vec![DistortionSpec::new(DistortionKind::Clip, &[], 0)];
        assert!(apply_chain(&x, &missing, &Pools::default()).is_err());
        assert!(apply_chain(&x, &[], &Pools::default()).is_err());
    }

    #[test]
    fn guard_soft_clips_loud_output() {
        let x = Signal::new(vec![0.5; 100], 16_000).unwrap();
        let chain = vec![DistortionSpec::new(
            DistortionKind::Dc,
            &[("amplitude", 9.5)],
            0,
        )];
        let pair = apply_chain(&x, &chain, &Pools::default()).unwrap();
        assert!(pair.guarded);
        let want = 4.0 * (10.0f64 / 4.0).tanh();
        assert!(pair
            .distorted
            .samples
            .iter()
            .all(|v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn every_table_type_runs_with_sampled_parameters() {
        let x = speechlike(16_000, 9);
        let pools = noise_pool();
        let mut rng = seed::rng(10);
        for kind in DistortionKind::TABLE {
            let cfg = ChainConfig::single(kind);
            for _ in 0..3 {
                let chain = sample_chain(&cfg, &mut rng).unwrap();
                let pair =
                    apply_chain(&x, &chain, &pools).unwrap_or_else(|e| panic!("{kind:?}: {e}"));
                assert!(pair.distorted.samples.iter().all(|v| v.is_finite()));
                assert!(pair.distorted.peak() <= GUARD_LEVEL);
            }
        }
    }

    #[test]
    fn replay_from_json_is_bit_exact() {
        let x = speechlike(16_000, 11);
        let pools = noise_pool();
        let cfg = ChainConfig::default();
        for i in 0..30 {
            let pair = distort_file(&x, &cfg, &pools, 12, i).unwrap();
            let record = ChainRecord {
                input: "in.wav".into(),
                clean_output: "c.wav".into(),
                distorted_output: "d.wav".into(),
                seed: seed::derive(12, i),
                chain: pair.chain.clone(),
                offset: pair.offset,
                guarded: pair.guarded,
            };
            let line = serde_json::to_string(&record).unwrap();
            let back: ChainRecord = serde_json::from_str(&line).unwrap();
            let again = replay(&back, &x, &pools).unwrap();
            assert_eq!(again, pair);
        }
    }
}
