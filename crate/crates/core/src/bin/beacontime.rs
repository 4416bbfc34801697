#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;

use beacontime::anchor::{sign_anchor, ApCertificate, Ed25519Signer, SignedAnchor, Signer, TrustStore};
use beacontime::capture::{read_capture, CaptureWriter};
use beacontime::chain::{generate_chain, Validity};
use beacontime::clock::ClockModel;
use beacontime::cost::{first_authentication_cost, steady_state_cost, transit_cost_report, CostTable};
use beacontime::ids::ApId;
use beacontime::rng::stream;
use beacontime::scenario::Scenario;
use beacontime::sim;
use beacontime::timeserver::{compute_offset_rtd, mean_std, preset, DelayModel, Protocol, TimeService};
use beacontime::transmitter::{ApConfig, Transmitter, TU_US};
use beacontime::verifier::{RxInfo, Verifier, VerifierConfig};
use beacontime::BeaconFrame;

/// `println!` that exits quietly once stdout is closed (e.g. piped into `head`).
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

#[derive(Parser)]
#[command(name = "beacontime", version, about = "Authenticated beacon time broadcast toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write CSV outputs plus a summary.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate or inspect hash chains, anchors, certificates and captures.
    Chain {
        #[command(subcommand)]
        action: ChainAction,
    },
    /// Replay a beacon capture through the verifier.
    Verify {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        /// Trust store; defaults to trust.txt next to the certificate.
        #[arg(long)]
        trust: Option<PathBuf>,
        /// Reference time minus local clock, applied to capture timestamps.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        offset_us: i64,
        #[arg(long, default_value_t = 10_000)]
        margin_us: i64,
    },
    /// Authentication cost of crossing one AP's coverage.
    Cost {
        #[arg(long)]
        speed: f64,
        #[arg(long)]
        coverage: f64,
        #[arg(long, default_value_t = 600)]
        anchor_period: u32,
        /// Worst-case hash walk; defaults to anchor_period - 1.
        #[arg(long)]
        k: Option<u32>,
        #[arg(long, default_value_t = 100)]
        tbtt_tu: u32,
        #[arg(long, default_value_t = 52.0)]
        c_sig: f64,
        #[arg(long, default_value_t = 7.67)]
        c_hmac: f64,
        #[arg(long, default_value_t = 1.64)]
        c_hash: f64,
    },
    /// Simulate time-server exchanges and print per-exchange CSV.
    Ntsim {
        /// Preset name (e.g. nts.sth1) or a TOML file with a delay model.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 10_000)]
        count: u32,
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        auth: OnOff,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Replace every n-th reply with a forged one (0 disables).
        #[arg(long, default_value_t = 0)]
        forge_every: u32,
        #[arg(long, default_value_t = 50_000, allow_hyphen_values = true)]
        forge_shift_us: i64,
        #[arg(long, default_value_t = 6.0)]
        nts_load_multiplier: f64,
    },
}

#[derive(Subcommand)]
enum ChainAction {
    /// Write anchor.bin, cert.bin, trust.txt and optionally capture.bin.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        length: u32,
        #[arg(long, default_value_t = 600)]
        period: u32,
        #[arg(long, default_value = "02:00:00:00:00:01")]
        ap_id: String,
        #[arg(long, default_value_t = 0)]
        start_us: u64,
        /// Beacons to write to capture.bin (0 skips the capture).
        #[arg(long, default_value_t = 0)]
        beacons: u32,
        /// Anchor attached in-band every n beacons (0 disables).
        #[arg(long, default_value_t = 0)]
        anchor_every: u32,
    },
    /// Print the contents of an anchor, certificate or capture file.
    Inspect {
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long)]
        capture: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { scenario, out } => simulate(&scenario, &out),
        Command::Chain { action: ChainAction::Gen { out, seed, length, period, ap_id, start_us, beacons, anchor_every } } => {
            chain_gen(&out, seed, length, period, &ap_id, start_us, beacons, anchor_every)
        }
        Command::Chain { action: ChainAction::Inspect { anchor, cert, capture } } => inspect(anchor, cert, capture),
        Command::Verify { capture, anchor, cert, trust, offset_us, margin_us } => {
            verify(&capture, &anchor, &cert, trust, offset_us, margin_us)
        }
        Command::Cost { speed, coverage, anchor_period, k, tbtt_tu, c_sig, c_hmac, c_hash } => {
            let table = CostTable { c_sig_us: c_sig, c_hmac_us: c_hmac, c_hash_us: c_hash, c_cert_us: c_sig };
            table.validate().map_err(config)?;
            if !(speed > 0.0) || !(coverage > 0.0) || anchor_period == 0 {
                return Err(config("speed, coverage and anchor-period must be positive"));
            }
            let k = k.unwrap_or(anchor_period - 1);
            let interval = f64::from(tbtt_tu) * f64::from(TU_US);
            let r = transit_cost_report(speed, coverage, interval, k, &table);
            outln!("transit_s = {:.2}", r.transit_s);
            outln!("beacons = {}", r.beacons);
            outln!("k = {}", r.k);
            outln!("first_auth_us = {:.2}", first_authentication_cost(k, false, &table));
            outln!("steady_state_us = {:.2}", steady_state_cost(&table));
            outln!("total_auth_us = {:.2}", r.total_auth_us);
            outln!("fraction_percent = {:.5}", r.fraction * 100.0);
            Ok(())
        }
        Command::Ntsim { model, count, auth, seed, forge_every, forge_shift_us, nts_load_multiplier } => {
            ntsim(&model, count, auth == OnOff::On, seed, forge_every, forge_shift_us, nts_load_multiplier)
        }
    }
}

fn simulate(path: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::from_toml(&text).map_err(config)?;
    let result = sim::run(&scenario).map_err(|e| match e {
        sim::SimError::Config(c) => config(c),
        other => runtime(other),
    })?;
    sim::write_outputs(&result, out).map_err(runtime)?;
    let s = &result.summary;
    outln!(
        "beacons={} authenticated={} attacker_authenticated={}",
        s.beacons_transmitted, s.cost.authenticated, s.security.attacker_frames_authenticated
    );
    for d in &s.detection {
        outln!(
            "window={}s alarms={} false_alarms={} time_to_detect_s={}",
            d.window_s,
            d.alarms,
            d.false_alarms,
            d.time_to_detect_s.map_or("-".to_string(), |t| format!("{t:.3}"))
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn chain_gen(
    out: &Path,
    seed: u64,
    length: u32,
    period: u32,
    ap_id: &str,
    start_us: u64,
    beacons: u32,
    anchor_every: u32,
) -> Result<(), Failure> {
    let ap_id = ApId::parse(ap_id).ok_or_else(|| config(format!("invalid AP id {ap_id:?}")))?;
    let interval = 100 * u64::from(TU_US);
    let validity = Validity::new(start_us, start_us + (u64::from(length) + 1) * interval);
    let mut rng = stream(seed, "chain-gen");
    let chain = generate_chain(rng.random(), length, period, validity).map_err(config)?;
    let root = Ed25519Signer::from_secret(rng.random());
    let signer = Ed25519Signer::from_secret(rng.random());
    let cert = ApCertificate::issue(ap_id, signer.public_key(), "root-ca", &root);
    let anchor = sign_anchor(&chain, 0, ap_id, &signer).map_err(runtime)?;
    let mut trust = TrustStore::default();
    trust.add_root("root-ca", root.public_key());

    fs::create_dir_all(out).map_err(runtime)?;
    fs::write(out.join("anchor.bin"), anchor.encode()).map_err(runtime)?;
    fs::write(out.join("cert.bin"), cert.encode()).map_err(runtime)?;
    fs::write(out.join("trust.txt"), trust.to_text()).map_err(runtime)?;
    outln!("chain_id = {}", chain.chain_id());
    outln!("length = {length}");
    outln!("anchor_period = {period}");
    outln!("h0 = {}", hex::encode(chain.initial_anchor()));

    if beacons > 0 {
        let cfg = ApConfig { ap_id, anchor_every, rng_seed: seed, ..ApConfig::default() };
        let tx = Transmitter::new(cfg, chain, &signer, Some(cert)).map_err(runtime)?;
        let mut w = CaptureWriter::new(Vec::new());
        for e in tx.emit_schedule(beacons).map_err(config)? {
            let bytes = e.frame.serialize().map_err(runtime)?;
            w.write_record((e.actual_tx_us + 200) as u64, &bytes).map_err(runtime)?;
        }
        fs::write(out.join("capture.bin"), w.into_inner()).map_err(runtime)?;
        outln!("beacons = {beacons}");
    }
    Ok(())
}

fn inspect(anchor: Option<PathBuf>, cert: Option<PathBuf>, capture: Option<PathBuf>) -> Result<(), Failure> {
    if anchor.is_none() && cert.is_none() && capture.is_none() {
        return Err(config("nothing to inspect: pass --anchor, --cert or --capture"));
    }
    if let Some(p) = anchor {
        let a = SignedAnchor::decode(&read(&p)?).map_err(runtime)?;
        outln!("anchor.chain_id = {}", a.chain_id);
        outln!("anchor.index = {}", a.index);
        outln!("anchor.value = {}", hex::encode(a.value));
        outln!("anchor.signer = {}", a.signer_id);
        outln!("anchor.validity_us = {}..{}", a.validity.start_us, a.validity.end_us);
    }
    if let Some(p) = cert {
        let c = ApCertificate::decode(&read(&p)?).map_err(runtime)?;
        outln!("cert.ap_id = {}", c.ap_id);
        outln!("cert.issuer = {}", c.issuer_id);
        outln!("cert.public_key = {}", hex::encode(&c.public_key));
    }
    if let Some(p) = capture {
        let records = read_capture(&read(&p)?).map_err(runtime)?;
        outln!("rx_time_us,ap_id,index,timestamp_us,anchor,cert,len");
        for r in records {
            match r.decode_frame() {
                Ok(f) => outln!(
                    "{},{},{},{},{},{},{}",
                    r.rx_time_us,
                    f.ap_id,
                    f.index,
                    f.timestamp_us,
                    u8::from(f.anchor_blob.is_some()),
                    u8::from(f.cert_blob.is_some()),
                    r.frame.len()
                ),
                Err(e) => outln!("{},,,,,,{} ({e})", r.rx_time_us, r.frame.len()),
            }
        }
    }
    Ok(())
}

fn verify(
    capture: &Path,
    anchor: &Path,
    cert: &Path,
    trust: Option<PathBuf>,
    offset_us: i64,
    margin_us: i64,
) -> Result<(), Failure> {
    let trust_path = trust.unwrap_or_else(|| cert.with_file_name("trust.txt"));
    let trust_text =
        fs::read_to_string(&trust_path).map_err(|e| Failure::Config(format!("{}: {e}", trust_path.display())))?;
    let trust = TrustStore::from_text(&trust_text).map_err(config)?;
    let anchor = SignedAnchor::decode(&read(anchor)?).map_err(config)?;
    let cert = ApCertificate::decode(&read(cert)?).map_err(config)?;
    let records = read_capture(&read(capture)?).map_err(config)?;

    let mut v = Verifier::new(VerifierConfig { safety_margin_us: margin_us, ..VerifierConfig::default() }, trust);
    v.set_time_offset(offset_us);
    if !v.install_certificate(cert) {
        return Err(runtime("certificate does not chain to a trusted root"));
    }
    let first_rx = records.first().map_or(0, |r| r.rx_time_us as i64);
    let installed = v.install_anchor(anchor, first_rx);
    if installed.status.is_rejection() {
        return Err(runtime(format!("anchor rejected: {}", installed.detail)));
    }

    outln!("event,rx_time_us,ap_id,index,status,hash_walk_k,detail");
    let mut indices = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let frame = match BeaconFrame::deserialize(&r.frame) {
            Ok(f) => f,
            Err(e) => {
                outln!("{i},{},,,Undecodable,0,{e}", r.rx_time_us);
                indices.push(None);
                continue;
            }
        };
        indices.push(Some(frame.index));
        let out = v.on_receive(&frame, RxInfo { local_time_us: r.rx_time_us as i64, event_id: i as u64 });
        outln!(
            "{i},{},{},{},{},{},{}",
            r.rx_time_us,
            frame.ap_id,
            frame.index,
            out.status,
            out.hash_walk_k,
            out.detail.replace(',', ";")
        );
        for res in out.resolved {
            outln!(
                "{},{},{},{},{},0,resolved",
                res.event_id, records[res.event_id as usize].rx_time_us, res.ap_id, res.index, res.status
            );
        }
    }
    let c = v.counters();
    outln!(
        "# counters sig_verifies={} cert_verifies={} hmacs={} hashes={} authenticated={} cost_us={:.2}",
        c.sig_verifies,
        c.cert_verifies,
        c.hmacs,
        c.hashes,
        v.observations().len(),
        c.cost_us(&CostTable::default())
    );
    Ok(())
}

fn load_model(spec: &str) -> Result<(Protocol, DelayModel), Failure> {
    if let Some(p) = preset(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(config(format!("{spec:?} is neither a preset nor a file")));
    }
    let text = fs::read_to_string(path).map_err(config)?;
    let m: DelayModel = toml::from_str(&text).map_err(config)?;
    Ok((Protocol::Nts, m))
}

fn ntsim(
    model: &str,
    count: u32,
    auth: bool,
    seed: u64,
    forge_every: u32,
    forge_shift_us: i64,
    multiplier: f64,
) -> Result<(), Failure> {
    let (_, mut m) = load_model(model)?;
    m.rng_seed ^= seed;
    let mut service = TimeService::new(m).map_err(config)?;
    let server_id = "timeserver";
    let mut trust = TrustStore::default();
    trust.add_time_server(server_id);
    let keys = if auth { Some(service.establish_session(&trust, server_id, 0).map_err(runtime)?) } else { None };
    let clock = ClockModel::ideal();

    outln!("i,t1,t2,t3,t4,offset_s,rtd_s,forged,auth_ok");
    let (mut offsets, mut rtds) = (Vec::new(), Vec::new());
    let (mut forged, mut forged_accepted) = (0u32, 0u32);
    for i in 0..count {
        let t = i64::from(i) * 1_000_000;
        let x = service.exchange(&clock, &clock, t, keys.as_ref(), server_id);
        let is_forged = forge_every > 0 && (i + 1) % forge_every == 0;
        let rx = if is_forged { beacontime::attacker::skew_time_reply(&x, forge_shift_us) } else { x.clone() };
        let ok = match &keys {
            Some(k) => service.verify(&rx, k, &x.nonce),
            None => true,
        };
        let r = compute_offset_rtd(&rx);
        if is_forged {
            forged += 1;
            forged_accepted += u32::from(ok);
        }
        if ok {
            offsets.push(r.offset_s);
            rtds.push(r.rtd_s);
        }
        outln!(
            "{i},{},{},{},{},{:.6e},{:.6e},{},{}",
            rx.t1,
            rx.t2,
            rx.t3,
            rx.t4,
            r.offset_s,
            r.rtd_s,
            u8::from(is_forged),
            u8::from(ok)
        );
    }
    let (rm, rs) = mean_std(&rtds);
    let (om, os) = mean_std(&offsets);
    let c = service.counters();
    outln!("# rtd_mean_s={rm:.4e} rtd_std_s={rs:.4e} offset_mean_s={om:.4e} offset_std_s={os:.4e} n={}", rtds.len());
    outln!("# forged={forged} forged_accepted={forged_accepted}");
    outln!(
        "# exchanges={} key_establishments={} mac_generations={} mac_verifications={} load={:.1} plain_load={} multiplier={multiplier}",
        c.exchanges,
        c.key_establishments,
        c.mac_generations,
        c.mac_verifications,
        c.computational_load(multiplier),
        c.exchanges
    );
    Ok(())
}
