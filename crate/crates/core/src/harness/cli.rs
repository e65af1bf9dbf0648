//! Command-line front end.
//!
//! ```text
//! hnrsim gencode --n 1024 --dv 3 --dc 6 --seed 1 --out code.alist
//! hnrsim sweep   --config <path|default|toy> [--seed N] [--out csv] [--ckpt file]
//! hnrsim train   <1|2|3|all> --config <...> [--seed N] [--scale F]
//!                [--from ckpt] [--out ckpt] [--metrics csv]
//! hnrsim payload --config <...> (--in FILE | --synth-image | --synth-audio)
//!                [--width W --height H --channels C] [--l1-map out.pgm]
//! hnrsim inspect --ckpt file
//! ```
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use super::checkpoint::{self, load_checkpoint, save_checkpoint};
use super::payload::{run_payload, synth_audio_tone, synth_test_image, ImageMeta};
use super::pipeline::LinkSetup;
use super::sweep::{run_sweep, sweep_csv};
use super::{ExperimentConfig, HarnessError};
use crate::fec::{build_regular_ldpc, emit_alist};
use crate::hnr::{
    expected_param_count, train_stage1, train_stage2, train_stage3, MetricsRow, Model,
    StageReport, TrainEnv, TrainOptions,
};

const USAGE: &str = "usage: hnrsim <command> [flags]

commands:
  gencode   --n N --dv DV --dc DC [--seed S] --out FILE
  sweep     --config PATH|default|toy [--seed N] [--out FILE] [--ckpt FILE]
  train     1|2|3|all --config PATH|default|toy [--seed N] [--scale F]
            [--from CKPT] [--out CKPT] [--metrics FILE] [--threads N]
  payload   --config PATH|default|toy (--in FILE | --synth-image | --synth-audio)
            [--width W --height H --channels C] [--l1-map FILE] [--seed N]
  inspect   --ckpt FILE
";

struct Flags {
    named: Vec<(String, String)>,
    positional: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str], bare: &[&str]) -> Result<Flags, String> {
        let mut named = Vec::new();
        let mut positional = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            if let Some(name) = a.strip_prefix("--") {
                if bare.contains(&name) {
                    named.push((name.to_string(), "true".to_string()));
                } else if allowed.contains(&name) {
                    i += 1;
                    let Some(v) = args.get(i) else {
                        return Err(format!("flag --{name} needs a value"));
                    };
                    named.push((name.to_string(), v.clone()));
                } else {
                    return Err(format!("unknown flag --{name}"));
                }
            } else {
                positional.push(a.clone());
            }
            i += 1;
        }
        Ok(Flags { named, positional })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.named
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn has(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    fn num<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>, String> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("invalid value for --{name}: `{v}`")),
        }
    }
}

/// Entry point used by main(); returns the process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}");
            eprintln!();
            eprintln!("{USAGE}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<String> for CliError {
    fn from(e: String) -> Self {
        CliError::Usage(e)
    }
}

fn load_config(flags: &Flags) -> Result<ExperimentConfig, CliError> {
    let name = flags.get("config").unwrap_or("default");
    let mut cfg = ExperimentConfig::load(name)?;
    if let Some(seed) = flags.num::<u64>("seed")? {
        cfg.seed = seed;
    }
    if let Some(scale) = flags.num::<f64>("scale")? {
        cfg.scale = scale;
    }
    if let Some(threads) = flags.num::<usize>("threads")? {
        cfg.threads = threads;
    }
    if let Some(out) = flags.get("out") {
        cfg.out = out.to_string();
    }
    if let Some(m) = flags.get("metrics") {
        cfg.metrics_out = m.to_string();
    }
    if let Some(c) = flags.get("ckpt") {
        cfg.checkpoint = Some(c.to_string());
    }
    Ok(cfg)
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage("missing command".into()));
    };
    match command.as_str() {
        "gencode" => cmd_gencode(&args[1..]),
        "sweep" => cmd_sweep(&args[1..]),
        "train" => cmd_train(&args[1..]),
        "payload" => cmd_payload(&args[1..]),
        "inspect" => cmd_inspect(&args[1..]),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn cmd_gencode(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["n", "dv", "dc", "seed", "out"], &[])?;
    let n = flags.num::<usize>("n")?.ok_or_else(|| "gencode needs --n".to_string())?;
    let dv = flags.num::<usize>("dv")?.unwrap_or(3);
    let dc = flags.num::<usize>("dc")?.unwrap_or(6);
    let seed = flags.num::<u64>("seed")?.unwrap_or(1);
    let out = flags.get("out").ok_or_else(|| "gencode needs --out".to_string())?;
    let h = build_regular_ldpc(n, dv, dc, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(out, emit_alist(&h)).map_err(|e| CliError::Runtime(format!("{out}: {e}")))?;
    println!("wrote {out}: n={} m={} edges={}", h.n, h.m, h.num_edges());
    Ok(())
}

fn cmd_sweep(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["config", "seed", "out", "ckpt", "threads", "scale"], &[])?;
    let cfg = load_config(&flags)?;
    let model = match (&cfg.checkpoint, cfg.receiver.as_str()) {
        (Some(path), _) => Some(
            checkpoint::load_for_inference(path, &cfg)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        ),
        (None, "hnr") => {
            return Err(CliError::Runtime(
                "receiver `hnr` requires --ckpt or `checkpoint =` in the config".into(),
            ))
        }
        _ => None,
    };
    let rows = run_sweep(&cfg, model.as_ref())?;
    let csv = sweep_csv(&rows);
    std::fs::write(&cfg.out, &csv)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out)))?;
    for r in &rows {
        println!(
            "snr {:>6.2} dB  info_ber {:.3e}  coded_ber {:.3e}  bler {:.3e}  ({} frames)",
            r.snr_db, r.info_ber, r.coded_ber, r.bler, r.frames
        );
    }
    println!("wrote {}", cfg.out);
    Ok(())
}

fn train_env_from(cfg: &ExperimentConfig) -> Result<TrainEnv, CliError> {
    let setup = LinkSetup::from_config(cfg)?;
    let code = setup
        .code
        .ok_or_else(|| CliError::Runtime("training requires a code".into()))?;
    let layout = setup.layout.expect("layout exists with code");
    let graph = setup.graph.expect("graph exists with code");
    Ok(TrainEnv {
        grid: setup.grid,
        chan: setup.chan,
        constellation: setup.constellation,
        code,
        layout,
        graph,
        pilots: setup.pilots,
        snr_db_range: cfg.train_snr_range(),
    })
}

fn train_options_from(cfg: &ExperimentConfig) -> TrainOptions {
    let mut o = TrainOptions::new(cfg.seed, cfg.scale);
    o.batch = cfg.train_batch;
    o.val_frames = cfg.train_val_frames;
    o.val_every = cfg.train_val_every;
    o.threads = cfg.threads;
    o.stage1_steps = cfg.train_stage1_steps;
    o.stage2_steps = cfg.train_stage2_steps;
    o.stage3_steps = cfg.train_stage3_steps;
    o
}

pub(crate) fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("stage,step,loss,lr,val_bce,val_ber\r\n");
    for r in rows {
        let v1 = r.val_bce.map(|v| v.to_string()).unwrap_or_default();
        let v2 = r.val_ber.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{},{}\r\n", r.stage, r.step, r.loss, r.lr, v1, v2));
    }
    out
}

fn print_report(r: &StageReport) {
    println!(
        "stage {}: {} steps, loss {:.4} -> {:.4} (min {:.4}), val_bce {:.4}, val_ber {:.3e}",
        r.stage, r.steps, r.first_loss, r.last_loss, r.min_loss, r.val_bce, r.val_ber
    );
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &["config", "seed", "scale", "from", "out", "metrics", "threads"],
        &[],
    )?;
    let stage = flags
        .positional
        .first()
        .map(|s| s.as_str())
        .ok_or_else(|| "train needs a stage: 1, 2, 3 or all".to_string())?;
    if !matches!(stage, "1" | "2" | "3" | "all") {
        return Err(CliError::Usage(format!("unknown stage `{stage}`")));
    }
    let cfg = load_config(&flags)?;
    let env = train_env_from(&cfg)?;
    let opts = train_options_from(&cfg);

    let mut model = match flags.get("from") {
        Some(path) => {
            let (m, found, _) = load_checkpoint(path).map_err(|e| CliError::Runtime(e.to_string()))?;
            let expected = checkpoint::compute_fingerprint(&cfg, &m.config);
            if expected != found {
                return Err(CliError::Runtime(
                    checkpoint::CheckpointError::FingerprintMismatch { expected, found }
                        .to_string(),
                ));
            }
            m
        }
        // stages 2 and 3 continue from an earlier stage's output
        None if matches!(stage, "2" | "3") => {
            return Err(CliError::Runtime(format!(
                "stage {stage} needs --from with the previous stage's checkpoint"
            )));
        }
        None => Model::init(
            &crate::hnr::HnrConfig::default(),
            crate::hnr::feat_dim_for(cfg.chan.num_rx),
            env.constellation.bits_per_symbol,
            cfg.seed,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?,
    };

    let mut all_rows: Vec<MetricsRow> = Vec::new();
    let run = |which: &str, model: &mut Model, rows: &mut Vec<MetricsRow>| -> Result<(), CliError> {
        let report = match which {
            "1" => train_stage1(&env, model, &opts),
            "2" => train_stage2(&env, model, &opts),
            "3" => train_stage3(&env, model, &opts),
            _ => unreachable!(),
        }
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        print_report(&report);
        rows.extend(report.rows.clone());
        Ok(())
    };

    match stage {
        "all" => {
            run("1", &mut model, &mut all_rows)?;
            run("2", &mut model, &mut all_rows)?;
            run("3", &mut model, &mut all_rows)?;
        }
        s => run(s, &mut model, &mut all_rows)?,
    }

    let out = flags.get("out").unwrap_or("model.ckpt");
    let fingerprint = checkpoint::compute_fingerprint(&cfg, &model.config);
    save_checkpoint(out, &model, fingerprint, None)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&cfg.metrics_out, metrics_csv(&all_rows))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.metrics_out)))?;
    println!("wrote {out} and {}", cfg.metrics_out);
    Ok(())
}

fn cmd_payload(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &["config", "seed", "in", "width", "height", "channels", "l1-map", "ckpt", "threads"],
        &["synth-image", "synth-audio"],
    )?;
    let cfg = load_config(&flags)?;
    let model = match &cfg.checkpoint {
        Some(path) => Some(
            checkpoint::load_for_inference(path, &cfg)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        ),
        None if cfg.receiver == "hnr" => {
            return Err(CliError::Runtime("receiver `hnr` requires --ckpt".into()))
        }
        None => None,
    };

    let (bytes, meta) = if flags.has("synth-image") {
        let (img, w, h) = synth_test_image();
        (img, Some(ImageMeta { width: w, height: h, channels: 1 }))
    } else if flags.has("synth-audio") {
        (synth_audio_tone(), None)
    } else if let Some(path) = flags.get("in") {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
        let meta = match (flags.num::<usize>("width")?, flags.num::<usize>("height")?) {
            (Some(w), Some(h)) => Some(ImageMeta {
                width: w,
                height: h,
                channels: flags.num::<usize>("channels")?.unwrap_or(1),
            }),
            _ => None,
        };
        (bytes, meta)
    } else {
        return Err(CliError::Usage(
            "payload needs --in FILE, --synth-image or --synth-audio".into(),
        ));
    };

    let report = run_payload(&bytes, &cfg, model.as_ref(), meta, flags.get("l1-map"))?;
    println!(
        "payload: {} bytes, {} padded bits, ber {:.3e}, mse {:.6}, rmse {:.6}, psnr {:.2} dB",
        report.byte_count, report.padded_bits, report.post_ber, report.mse, report.rmse, report.psnr_db
    );
    if let Some(p) = &report.l1_map_path {
        println!("l1 map: {p}");
    }
    Ok(())
}

fn cmd_inspect(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["ckpt"], &[])?;
    let path = flags.get("ckpt").ok_or_else(|| "inspect needs --ckpt".to_string())?;
    let (model, fingerprint, opt) =
        load_checkpoint(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("checkpoint: {path}");
    println!("fingerprint: {fingerprint:#018x}");
    println!(
        "architecture: {} blocks, {} heads, embed {}, ffn {}, gnn {}x{} hidden {}, cn layers {}, mp iters {}",
        model.config.num_blocks,
        model.config.num_heads,
        model.config.embed_dim,
        model.config.ffn_dim,
        model.config.gnn_embed_dim,
        model.config.gnn_msg_dim,
        model.config.gnn_hidden,
        model.config.cn_mlp_layers,
        model.config.mp_iters
    );
    println!("feat_dim: {}  bits/symbol: {}", model.feat_dim, model.bits_per_symbol);
    let count = model.param_count();
    let formula = expected_param_count(&model.config, model.feat_dim, model.bits_per_symbol);
    println!("parameters: {count} (formula: {formula})");
    println!(
        "optimizer state: {}",
        match &opt {
            Some(o) => format!("present (step {})", o.step),
            None => "absent".into(),
        }
    );
    let mut names = 0usize;
    model.visit(|_, _| names += 1);
    println!("tensors: {names}");
    Ok(())
}
