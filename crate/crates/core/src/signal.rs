//! RF line processing: quadrature demodulation to an envelope image.

use crate::grid::{Grid2, RfFrame};

/// Envelope (magnitude of the complex baseband signal) of every RF line.
///
/// Each line is mixed down by the centre frequency and low-pass filtered
/// with a Gaussian whose frequency-domain sigma is 4/7 of the centre
/// frequency (4 MHz at 7 MHz), which rejects the image at twice the carrier.
pub fn envelope(frame: &RfFrame) -> Grid2<f32> {
    let (na, nl) = frame.shape();
    let f = frame.center_freq_hz() / frame.sampling_freq_hz();
    let sigma_f = 4.0 / 7.0 * f;
    let sigma_t = 1.0 / (2.0 * std::f64::consts::PI * sigma_f);
    let radius = (5.0 * sigma_t).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma_t * sigma_t)).exp())
        .collect();
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..na)
        .map(|i| {
            let ph = 2.0 * std::f64::consts::PI * f * i as f64;
            (ph.cos(), -ph.sin())
        })
        .unzip();

    let mut out = Grid2::filled(na, nl, 0.0f32);
    let mut re = vec![0.0; na];
    let mut im = vec![0.0; na];
    for j in 0..nl {
        let line = frame.samples().line(j);
        for i in 0..na {
            re[i] = line[i] as f64 * cos_t[i];
            im[i] = line[i] as f64 * sin_t[i];
        }
        let dst = out.line_mut(j);
        for (i, d) in dst.iter_mut().enumerate() {
            let (mut sr, mut si, mut sw) = (0.0, 0.0, 0.0);
            for (t, w) in taps.iter().enumerate() {
                let k = i as isize + t as isize - radius;
                if k >= 0 && (k as usize) < na {
                    sr += w * re[k as usize];
                    si += w * im[k as usize];
                    sw += w;
                }
            }
            *d = ((sr * sr + si * si).sqrt() / sw) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_of_pure_tone_is_flat() {
        let (fs, fc) = (40e6, 7e6);
        let g = Grid2::from_fn(400, 2, |i, _| {
            (3.0 * (2.0 * std::f64::consts::PI * fc / fs * i as f64 + 0.4).cos()) as f32
        });
        let frame = RfFrame::new(g, fs, fc, 0.2).unwrap();
        let env = envelope(&frame);
        // Mixing halves the amplitude of a real tone.
        for i in 20..380 {
            assert!((env.get(i, 0) - 1.5).abs() < 0.01, "i {i}: {}", env.get(i, 0));
        }
    }

    #[test]
    fn envelope_tracks_gaussian_pulse() {
        let (fs, fc) = (40e6, 7e6);
        let g = Grid2::from_fn(200, 2, |i, _| {
            let d = i as f64 - 100.0;
            ((-d * d / (2.0 * 36.0)).exp() * (2.0 * std::f64::consts::PI * fc / fs * d).cos()) as f32
        });
        let frame = RfFrame::new(g, fs, fc, 0.2).unwrap();
        let env = envelope(&frame);
        let peak = (0..200).max_by(|&a, &b| env.get(a, 0).total_cmp(&env.get(b, 0))).unwrap();
        assert!((peak as i64 - 100).abs() <= 1);
        assert!(env.get(100, 0) > 5.0 * env.get(130, 0));
    }
}
