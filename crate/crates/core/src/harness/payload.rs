//! Payload transport: any byte stream goes to bits (MSB first), is
//! zero-padded to whole frames, transmitted frame by frame, and compared
//! sample-by-sample after reception.
//!
//! Distortion metrics treat the payload as 8-bit samples: MSE, RMSE and
//! PSNR = 10 log10(255^2 / MSE), capped at 100 dB (the cap engages for
//! MSE below 255^2 * 1e-10, where the formula itself crosses 100). With
//! image metadata present, the per-sample |difference| map is written as an
//! 8-bit binary PGM.

use super::pipeline::{channel_pass, receive, transmit_payload_bits, LinkSetup};
use super::{noise_var_from_snr_db, ExperimentConfig, HarnessError};
use crate::hnr::Model;

pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageMeta {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct PayloadReport {
    pub byte_count: usize,
    pub padded_bits: usize,
    pub post_ber: f64,
    pub mse: f64,
    pub rmse: f64,
    pub psnr_db: f64,
    pub l1_map_path: Option<String>,
}

/// Most-significant bit first.
pub fn bits_from_bytes(bytes: &[u8]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(bytes.len() * 8);
    for &b in bytes {
        for i in (0..8).rev() {
            bits.push((b >> i) & 1);
        }
    }
    bits
}

pub fn bytes_from_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect()
}

/// Zero-pad to the smallest multiple of `frame_capacity` that fits.
pub fn pad_bits(bits: &[u8], frame_capacity: usize) -> Vec<u8> {
    let mut out = bits.to_vec();
    out.resize(bits.len().div_ceil(frame_capacity) * frame_capacity, 0);
    out
}

pub fn psnr_db(mse: f64) -> f64 {
    if mse <= 255.0 * 255.0 * 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// (MSE, RMSE, PSNR dB) over 8-bit samples.
pub fn sample_metrics(original: &[u8], recon: &[u8]) -> (f64, f64, f64) {
    debug_assert_eq!(original.len(), recon.len());
    let mse = original
        .iter()
        .zip(recon)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / original.len() as f64;
    (mse, mse.sqrt(), psnr_db(mse))
}

/// Transport a payload through the configured link at the first SNR of the
/// config's list.
pub fn run_payload(
    bytes: &[u8],
    cfg: &ExperimentConfig,
    model: Option<&Model>,
    image: Option<ImageMeta>,
    l1_map_out: Option<&str>,
) -> Result<PayloadReport, HarnessError> {
    if bytes.is_empty() {
        return Err(HarnessError::Config("empty payload".into()));
    }
    if let Some(meta) = image {
        if meta.width * meta.height * meta.channels != bytes.len() {
            return Err(HarnessError::Config(format!(
                "image metadata {}x{}x{} does not match {} bytes",
                meta.width,
                meta.height,
                meta.channels,
                bytes.len()
            )));
        }
    }
    let setup = LinkSetup::from_config(cfg)?;
    let cap = setup.info_capacity();
    let snr_db = cfg.snr_db[0];
    let noise_var = noise_var_from_snr_db(snr_db);

    let bits = bits_from_bytes(bytes);
    let padded = pad_bits(&bits, cap);
    let frames = padded.len() / cap;

    let mut received = Vec::with_capacity(padded.len());
    for f in 0..frames {
        let chunk = &padded[f * cap..(f + 1) * cap];
        let tx = transmit_payload_bits(&setup, chunk)?;
        let frame_seed = crate::rng::derive_seed(cfg.seed, crate::rng::stream::EVAL_DATA, f as u64);
        let (rx_grid, real) = channel_pass(&setup, &tx, noise_var, frame_seed)?;
        let out = receive(&setup, &rx_grid, &real, noise_var, model)?;
        received.extend(out.info_bits);
    }

    // strip padding, compare at bit and sample level
    let received_bits = &received[..bits.len()];
    let bit_errors = bits.iter().zip(received_bits).filter(|(a, b)| a != b).count();
    let recon = bytes_from_bits(received_bits);
    let (mse, rmse, psnr) = sample_metrics(bytes, &recon);

    let l1_map_path = match (image, l1_map_out) {
        (Some(meta), Some(path)) => {
            let diff: Vec<u8> = bytes
                .iter()
                .zip(&recon)
                .map(|(&a, &b)| a.abs_diff(b))
                .collect();
            write_pgm(path, meta.width * meta.channels, meta.height, &diff)?;
            Some(path.to_string())
        }
        _ => None,
    };

    Ok(PayloadReport {
        byte_count: bytes.len(),
        padded_bits: padded.len(),
        post_ber: bit_errors as f64 / bits.len() as f64,
        mse,
        rmse,
        psnr_db: psnr,
        l1_map_path,
    })
}

/// 8-bit binary PGM (P5).
pub fn write_pgm(path: &str, width: usize, height: usize, data: &[u8]) -> Result<(), HarnessError> {
    if data.len() != width * height {
        return Err(HarnessError::Config(format!(
            "pgm {}x{} needs {} samples, got {}",
            width,
            height,
            width * height,
            data.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    std::fs::write(path, out).map_err(|e| HarnessError::Io(format!("{path}: {e}")))
}

/// Built-in 64x64 grayscale test image: gradient background, bright square,
/// dark disc. Returns (samples, width, height).
pub fn synth_test_image() -> (Vec<u8>, usize, usize) {
    let (w, h) = (64usize, 64usize);
    let mut img = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut v = ((x * 255) / (w - 1) + (y * 128) / (h - 1)) as i32 * 2 / 3;
            if (16..32).contains(&x) && (16..32).contains(&y) {
                v = 240;
            }
            let (dx, dy) = (x as i32 - 44, y as i32 - 44);
            if dx * dx + dy * dy < 100 {
                v = 16;
            }
            img[y * w + x] = v.clamp(0, 255) as u8;
        }
    }
    (img, w, h)
}

/// Built-in audio payload: one second of an 8-bit 440 Hz tone at 8 kHz.
pub fn synth_audio_tone() -> Vec<u8> {
    let rate = 8000usize;
    (0..rate)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let s = (2.0 * std::f64::consts::PI * 440.0 * t).sin();
            (127.5 + 127.0 * s).round() as u8
        })
        .collect()
}
