//! Registry of supported waveform kinds: symbol, display name, physical
//! unit, and sampling rate. Every wave that enters the archive must match
//! one of these entries exactly, including its rate.

use crate::error::{Error, Result};

/// One registered wave kind. `rate` is in samples per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveSpec {
    pub symbol: &'static str,
    pub name: &'static str,
    pub unit: &'static str,
    pub rate: u32,
}

/// The full wave registry. Symbols are unique; rates are one of 63, 125,
/// or 500 samples per second.
pub const WAVE_REGISTRY: &[WaveSpec] = &[
    WaveSpec { symbol: "AWF", name: "Airway Flow", unit: "l/min", rate: 125 },
    WaveSpec { symbol: "O2", name: "Airway Oxygen", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "ABP", name: "Arterial Blood Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "ART", name: "Arterial Blood Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "CO2", name: "Airway Expired Carbon Dioxide", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "CVP", name: "Central Venous Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "AGT", name: "Gas Analyzer Agent", unit: "%", rate: 125 },
    WaveSpec { symbol: "SEV", name: "Gas Analyzer Sevoflurane", unit: "%", rate: 125 },
    WaveSpec { symbol: "ICP", name: "Intra-Cranial Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "aVR", name: "Lead aVR - ECG Wave Label", unit: "mV", rate: 500 },
    WaveSpec { symbol: "I", name: "Lead I - ECG Wave Label", unit: "mV", rate: 500 },
    WaveSpec { symbol: "II", name: "Lead II - ECG Wave Label", unit: "mV", rate: 500 },
    WaveSpec { symbol: "III", name: "Lead III - ECG Wave Label", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V", name: "Lead V - ECG Wave Label", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V1", name: "Chest/Precordial Lead V1", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V2", name: "Chest/Precordial Lead V2", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V3", name: "Chest/Precordial Lead V3", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V4", name: "Chest/Precordial Lead V4", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V5", name: "Chest/Precordial Lead V5", unit: "mV", rate: 500 },
    WaveSpec { symbol: "V6", name: "Chest/Precordial Lead V6", unit: "mV", rate: 500 },
    WaveSpec { symbol: "LAP", name: "Left Arterial Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "PLETHl", name: "Pleth Left Wave", unit: "N/A", rate: 125 },
    WaveSpec { symbol: "PLTHpo", name: "Pleth Post Ductal", unit: "N/A", rate: 125 },
    WaveSpec { symbol: "PLTHpr", name: "Pleth Pre Ductal", unit: "N/A", rate: 125 },
    WaveSpec { symbol: "PLETHr", name: "Pleth Right Wave", unit: "N/A", rate: 125 },
    WaveSpec { symbol: "Pleth", name: "Pleth Wave", unit: "N/A", rate: 125 },
    WaveSpec { symbol: "PlethT", name: "Pleth wave from Telemetry", unit: "N/A", rate: 125 },
    WaveSpec { symbol: "PAP", name: "Pulmonary Artery Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "Resp", name: "Resp Wave (Impedance via ECG electrodes)", unit: "Ohm", rate: 63 },
    WaveSpec { symbol: "RAP", name: "Right Arterial Pressure", unit: "mmHg", rate: 63 },
    WaveSpec { symbol: "UAP", name: "Umbilical Arterial Pressure", unit: "mmHg", rate: 125 },
    WaveSpec { symbol: "UVP", name: "Umbilical Venous Pressure", unit: "mmHg", rate: 125 },
];

/// Looks up a wave by symbol (case-sensitive).
pub fn wave_spec(symbol: &str) -> Result<&'static WaveSpec> {
    WAVE_REGISTRY
        .iter()
        .find(|w| w.symbol == symbol)
        .ok_or_else(|| Error::UnknownWaveSymbol(symbol.to_string()))
}

pub fn is_known_symbol(symbol: &str) -> bool {
    WAVE_REGISTRY.iter().any(|w| w.symbol == symbol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn symbols_are_unique() {
        let set: BTreeSet<_> = WAVE_REGISTRY.iter().map(|w| w.symbol).collect();
        assert_eq!(set.len(), WAVE_REGISTRY.len());
    }

    #[test]
    fn rates_are_restricted() {
        for w in WAVE_REGISTRY {
            assert!(matches!(w.rate, 63 | 125 | 500), "{} has rate {}", w.symbol, w.rate);
        }
    }

    #[test]
    fn key_entries() {
        let ii = wave_spec("II").unwrap();
        assert_eq!((ii.rate, ii.unit), (500, "mV"));
        let pleth = wave_spec("Pleth").unwrap();
        assert_eq!(pleth.rate, 125);
        let resp = wave_spec("Resp").unwrap();
        assert_eq!((resp.rate, resp.unit), (63, "Ohm"));
        assert!(wave_spec("NOPE").is_err());
    }
}
