use super::*;
use crate::channel::ChannelModel;
use crate::hnr::{HnrConfig, Model};

#[test]
fn snr_conversion_single_source() {
    assert!((noise_var_from_snr_db(0.0) - 1.0).abs() < 1e-15);
    assert!((noise_var_from_snr_db(10.0) - 0.1).abs() < 1e-15);
    assert!((noise_var_from_snr_db(-10.0) - 10.0).abs() < 1e-12);
}

#[test]
fn config_defaults_match_parameter_table() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.grid.fft_size, 129);
    assert_eq!(cfg.grid.guards, [12, 12]);
    assert_eq!(cfg.grid.num_symbols, 16);
    assert_eq!(cfg.grid.pilot_symbol_indices, vec![2, 11]);
    assert_eq!(cfg.modulation, "qam64");
    assert_eq!(cfg.chan.carrier_freq, 28e9);
    assert_eq!(cfg.chan.subcarrier_spacing, 240e3);
    assert!((cfg.chan.delay_spread - 266e-9).abs() < 1e-15);
    assert_eq!(cfg.chan.num_rx, 2);
    assert_eq!(cfg.chan.speed_range_kmh, [0.0, 120.0]);
    assert!(matches!(cfg.code, CodeRef::Regular { n: 1024, dv: 3, dc: 6, .. }));
}

#[test]
fn config_parse_overrides_and_rejects_unknown() {
    let cfg = ExperimentConfig::parse(
        "# comment\nmodulation = qpsk\nsnr_db = 1, 2.5, 4\ngrid.pilot_symbols = 0\nchannel.model = flat_rayleigh\ncode.n = 64\ngrid.fft_size = 12\ngrid.guard_left = 1\ngrid.guard_right = 1\ngrid.num_symbols = 4\n",
    )
    .unwrap();
    assert_eq!(cfg.modulation, "qpsk");
    assert_eq!(cfg.snr_db, vec![1.0, 2.5, 4.0]);
    assert_eq!(cfg.chan.model, ChannelModel::FlatRayleigh);
    assert!(matches!(cfg.code, CodeRef::Regular { n: 64, .. }));

    match ExperimentConfig::parse("nonsense_key = 3\n") {
        Err(HarnessError::Config(msg)) => assert!(msg.contains("line 1"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
    assert!(ExperimentConfig::parse("seed = not_a_number\n").is_err());
}

#[test]
fn toy_preset_fits_one_codeword() {
    let cfg = ExperimentConfig::toy();
    let setup = LinkSetup::from_config(&cfg).unwrap();
    let layout = setup.layout.as_ref().unwrap();
    assert_eq!(setup.grid.num_usable(), 16);
    assert_eq!(layout.frame_bits, 128);
    assert_eq!(layout.codewords_per_frame, 1);
    assert_eq!(layout.filler_bits, 0);
    let code = setup.code.as_ref().unwrap();
    assert_eq!(code.n(), 128);
    assert_eq!(code.k(), 64, "toy code must be full rank for rate 1/2");
}

#[test]
fn bits_bytes_msb_first_roundtrip() {
    let bytes = [0b1011_0001u8, 0x00, 0xFF, 0x5A];
    let bits = bits_from_bytes(&bytes);
    assert_eq!(&bits[..8], &[1, 0, 1, 1, 0, 0, 0, 1]);
    assert_eq!(bytes_from_bits(&bits), bytes);
}

#[test]
fn padding_roundtrip_zero_to_three_capacities() {
    let cap = 96;
    for len in [0, 1, cap - 1, cap, cap + 1, 2 * cap, 3 * cap - 7, 3 * cap] {
        let bits: Vec<u8> = (0..len).map(|i| (i % 2) as u8).collect();
        let padded = pad_bits(&bits, cap);
        assert_eq!(padded.len() % cap, 0);
        assert!(padded.len() >= bits.len());
        assert!(padded.len() < bits.len() + cap || (len == 0 && padded.is_empty()));
        assert_eq!(&padded[..bits.len()], &bits[..], "strip(pad(x)) == x for len {len}");
        assert!(padded[bits.len()..].iter().all(|&b| b == 0));
    }
}

#[test]
fn metric_identities() {
    // one corrupted sample 0 -> 255 in a 100-sample payload
    let orig = vec![0u8; 100];
    let mut recon = orig.clone();
    recon[37] = 255;
    let (mse, rmse, psnr) = sample_metrics(&orig, &recon);
    assert_eq!(mse, 255.0 * 255.0 / 100.0);
    assert_eq!(mse, 650.25);
    assert!((rmse * rmse - mse).abs() < 1e-12);
    assert!(psnr < PSNR_CAP_DB);

    // zero error hits the cap
    let (mse0, _, psnr0) = sample_metrics(&orig, &orig);
    assert_eq!(mse0, 0.0);
    assert_eq!(psnr0, PSNR_CAP_DB);

    // monotone decreasing in MSE below the cap
    let mut last = f64::INFINITY;
    for errs in [1usize, 2, 5, 20, 50] {
        let mut r = orig.clone();
        for i in 0..errs {
            r[i] = 255;
        }
        let (_, _, p) = sample_metrics(&orig, &r);
        assert!(p < last);
        last = p;
    }
}

#[test]
fn psnr_cap_threshold() {
    assert_eq!(psnr_db(0.0), 100.0);
    assert_eq!(psnr_db(255.0 * 255.0 * 1e-10), 100.0);
    assert!(psnr_db(255.0 * 255.0 * 1e-9) < 100.0);
    assert!((psnr_db(255.0 * 255.0 * 1e-9) - 90.0).abs() < 1e-9);
}

#[test]
fn synth_payloads() {
    let (img, w, h) = synth_test_image();
    assert_eq!(img.len(), w * h);
    assert!(img.iter().any(|&v| v > 200) && img.iter().any(|&v| v < 60));
    let audio = synth_audio_tone();
    assert_eq!(audio.len(), 8000);
}

fn quick_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.frames_per_point = 10;
    cfg.snr_db = vec![40.0];
    cfg.chan.model = ChannelModel::Ideal;
    cfg.chan.num_rx = 1;
    cfg.receiver = "perfect_csi".into();
    cfg
}

#[test]
fn sweep_noiseless_is_error_free_and_deterministic() {
    let cfg = quick_cfg();
    let rows = run_sweep(&cfg, None).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].info_ber, 0.0);
    assert_eq!(rows[0].bler, 0.0);
    assert_eq!(rows[0].frames, 10);

    let a = sweep_csv(&run_sweep(&cfg, None).unwrap());
    let b = sweep_csv(&run_sweep(&cfg, None).unwrap());
    assert_eq!(a, b, "identical config and seed must give identical CSV bytes");
    assert!(a.starts_with("snr_db,info_ber,coded_ber,bler,frames,bit_count,mc_stderr,receiver,channel,seed\r\n"));
}

#[test]
fn sweep_uncoded_mode() {
    let mut cfg = quick_cfg();
    cfg.code = CodeRef::None;
    cfg.snr_db = vec![20.0];
    cfg.frames_per_point = 5;
    let rows = run_sweep(&cfg, None).unwrap();
    assert_eq!(rows[0].info_ber, 0.0);
    // uncoded: info and coded rates coincide
    assert_eq!(rows[0].info_ber, rows[0].coded_ber);
}

#[test]
fn hnr_receiver_requires_model() {
    let mut cfg = quick_cfg();
    cfg.receiver = "hnr".into();
    assert!(run_sweep(&cfg, None).is_err());
}

#[test]
fn payload_roundtrip_noiseless() {
    let cfg = quick_cfg();
    let (img, w, h) = synth_test_image();
    let dir = std::env::temp_dir().join(format!("hnrsim_payload_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let l1 = dir.join("l1.pgm");
    let report = run_payload(
        &img,
        &cfg,
        None,
        Some(ImageMeta { width: w, height: h, channels: 1 }),
        Some(l1.to_str().unwrap()),
    )
    .unwrap();
    assert_eq!(report.byte_count, w * h);
    assert_eq!(report.post_ber, 0.0);
    assert_eq!(report.mse, 0.0);
    assert_eq!(report.psnr_db, PSNR_CAP_DB);
    assert_eq!(report.padded_bits % LinkSetup::from_config(&cfg).unwrap().info_capacity(), 0);

    let pgm = std::fs::read(&l1).unwrap();
    assert!(pgm.starts_with(format!("P5\n{w} {h}\n255\n").as_bytes()));
    assert_eq!(pgm.len(), format!("P5\n{w} {h}\n255\n").len() + w * h);
    // error-free round trip: the difference map is all zeros
    assert!(pgm[format!("P5\n{w} {h}\n255\n").len()..].iter().all(|&v| v == 0));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn payload_rejects_empty_and_bad_meta() {
    let cfg = quick_cfg();
    assert!(run_payload(&[], &cfg, None, None, None).is_err());
    assert!(run_payload(
        &[1, 2, 3],
        &cfg,
        None,
        Some(ImageMeta { width: 2, height: 2, channels: 1 }),
        None
    )
    .is_err());
}

// ---------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------

fn small_model() -> Model {
    let cfg = HnrConfig {
        num_blocks: 1,
        num_heads: 2,
        embed_dim: 8,
        ffn_dim: 8,
        gnn_embed_dim: 4,
        gnn_msg_dim: 4,
        gnn_hidden: 8,
        cn_mlp_layers: 3,
        mp_iters: 2,
    };
    Model::init(&cfg, 7, 2, 5).unwrap()
}

#[test]
fn checkpoint_roundtrip_bit_exact() {
    let model = small_model();
    let opt = OptState {
        step: 17,
        moments: vec![(vec![0.5; 3], vec![0.25; 3]), (vec![-1.0], vec![2.0])],
    };
    let bytes = checkpoint_bytes(&model, 0xDEAD_BEEF, Some(&opt));
    let (loaded, fp, opt2) = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(fp, 0xDEAD_BEEF);
    assert_eq!(opt2, Some(opt));
    assert_eq!(loaded, model);
    // save -> load -> save produces identical bytes
    let bytes2 = checkpoint_bytes(&loaded, fp, opt2.as_ref());
    assert_eq!(bytes, bytes2);
}

#[test]
fn checkpoint_error_kinds_are_distinct() {
    let model = small_model();
    let bytes = checkpoint_bytes(&model, 1, None);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        checkpoint_from_bytes(&bad_magic),
        Err(CheckpointError::BadMagic)
    ));

    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(matches!(
        checkpoint_from_bytes(&bad_version),
        Err(CheckpointError::VersionMismatch { found: 99 })
    ));

    let truncated = &bytes[..bytes.len() / 2];
    assert!(matches!(
        checkpoint_from_bytes(truncated),
        Err(CheckpointError::Truncated)
    ));
}

#[test]
fn fingerprint_differs_across_configs() {
    let hnr = HnrConfig::default();
    let a = compute_fingerprint(&ExperimentConfig::default(), &hnr);
    let mut qpsk = ExperimentConfig::default();
    qpsk.modulation = "qpsk".into();
    let b = compute_fingerprint(&qpsk, &hnr);
    assert_ne!(a, b, "modulation must be part of the fingerprint");

    let mut other_code = ExperimentConfig::default();
    other_code.code = CodeRef::Regular { n: 512, dv: 3, dc: 6, seed: 1 };
    assert_ne!(a, compute_fingerprint(&other_code, &hnr));

    let toy = compute_fingerprint(&ExperimentConfig::toy(), &hnr);
    assert_ne!(a, toy);
}

#[test]
fn checkpoint_fingerprint_verified_on_inference_load() {
    let model = small_model();
    let cfg = ExperimentConfig::toy();
    let wrong = compute_fingerprint(&ExperimentConfig::default(), &model.config);
    let dir = std::env::temp_dir().join(format!("hnrsim_ckpt_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(path.to_str().unwrap(), &model, wrong, None).unwrap();
    match load_for_inference(path.to_str().unwrap(), &cfg) {
        Err(CheckpointError::FingerprintMismatch { .. }) => {}
        other => panic!("expected fingerprint mismatch, got {other:?}"),
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn shipped_config_files_match_presets() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
    let default_text = std::fs::read_to_string(format!("{root}/configs/default.cfg")).unwrap();
    let parsed = ExperimentConfig::parse(&default_text).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());

    let toy_text = std::fs::read_to_string(format!("{root}/configs/toy.cfg")).unwrap();
    let parsed = ExperimentConfig::parse(&toy_text).unwrap();
    assert_eq!(parsed, ExperimentConfig::toy());
}
