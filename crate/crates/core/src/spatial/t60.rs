use super::{Srir, SpatialError};
use crate::dsp::SAMPLE_RATE;

/// Reverberation time of the W channel by Schroeder backward integration
/// and a line fit over the −5 to −35 dB span, extrapolated to −60 dB.
pub fn measure_t60(srir: &Srir) -> Result<f64, SpatialError> {
    measure_t60_from_ir(&srir.audio.channels[0], SAMPLE_RATE as f64)
}

pub fn measure_t60_from_ir(ir: &[f32], fs: f64) -> Result<f64, SpatialError> {
    let energy: Vec<f64> = ir.iter().map(|&v| (v as f64).powi(2)).collect();
    schroeder_t60(&energy, 1.0 / fs)
}

/// Schroeder backward integration of an energy sequence sampled every `dt`
/// seconds, with a least-squares line over the −5..−35 dB span.
pub fn schroeder_t60(energy: &[f64], dt: f64) -> Result<f64, SpatialError> {
    let mut edc = vec![0.0f64; energy.len()];
    let mut acc = 0.0;
    for i in (0..energy.len()).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    if acc <= 0.0 {
        return Err(SpatialError::InsufficientDecay("silent response".into()));
    }
    let db = |e: f64| 10.0 * (e / acc).log10();
    let start = edc
        .iter()
        .position(|&e| db(e) <= -5.0)
        .ok_or_else(|| SpatialError::InsufficientDecay("never reaches -5 dB".into()))?;
    let end = edc
        .iter()
        .position(|&e| db(e) <= -35.0)
        .ok_or_else(|| SpatialError::InsufficientDecay("never reaches -35 dB".into()))?;
    if end < start + 8 {
        return Err(SpatialError::InsufficientDecay(format!(
            "only {} samples between -5 and -35 dB",
            end.saturating_sub(start)
        )));
    }
    let n = (end - start + 1) as f64;
    let mx = (start + end) as f64 / 2.0;
    let my = (start..=end).map(|i| db(edc[i])).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in start..=end {
        let x = i as f64 - mx;
        sxy += x * (db(edc[i]) - my);
        sxx += x * x;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(SpatialError::InsufficientDecay("non-decaying fit".into()));
    }
    Ok(-60.0 / slope * dt)
}
