//! Acceptance checks, one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use beacontime::clock::gnss_bias;
use beacontime::cost::{first_authentication_cost, steady_state_cost};
use beacontime::scenario::{example_scenario, Scenario};
use beacontime::sim::{self, RunOutput};
use beacontime::timeserver::mean_std;
use beacontime::{BeaconFrame, CostTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_beacontime");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn cli(args: &[&str]) -> (String, Duration) {
    let t = Instant::now();
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    let elapsed = t.elapsed();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    (String::from_utf8(out.stdout).unwrap(), elapsed)
}

fn key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn num(map: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    map.get(key)
        .ok_or(format!("missing {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn scenario(extra: &str, seed: u64) -> Scenario {
    let text = example_scenario().replace("master = 1", &format!("master = {seed}"));
    Scenario::from_toml(&format!("{text}\n{extra}")).expect("scenario parses")
}

fn cost_example() -> Outcome {
    let (out, elapsed) = cli(&["cost", "--speed", "15", "--coverage", "100", "--anchor-period", "600", "--k", "599"]);
    let kv = key_values(&out);
    let total = num(&kv, "total_auth_us")?;
    let frac = num(&kv, "fraction_percent")?;
    let transit = num(&kv, "transit_s")?;
    let beacons = num(&kv, "beacons")?;
    check((total - 3211.0).abs() <= 15.0, format!("total {total}"))?;
    check((frac - 0.013).abs() <= 0.001, format!("fraction {frac} %"))?;
    check((transit - 24.0).abs() < 0.05, format!("transit {transit}"))?;
    check((beacons - 234.0).abs() <= 1.0, format!("beacons {beacons}"))?;
    check(elapsed < Duration::from_secs(1), format!("runtime {elapsed:?}"))?;
    Ok(format!("total {total} us, {frac} %, transit {transit} s, {beacons} beacons, {elapsed:.2?}"))
}

fn formulas() -> Outcome {
    let t = CostTable::default();
    let first = first_authentication_cost(599, false, &t);
    let steady = steady_state_cost(&t);
    check((first - 1042.03).abs() < 1e-9, format!("C'(599) = {first}"))?;
    check((steady - 9.31).abs() < 1e-9, format!("C'' = {steady}"))?;
    Ok(format!("C'(599) = {first:.2} us, C'' = {steady:.2} us"))
}

fn window_mean_bias(out: &RunOutput, start_us: i64, len_us: i64) -> f64 {
    let p = out.scenario.gnss.profile();
    let steps = 1_000;
    (0..steps)
        .map(|i| gnss_bias(&p, start_us + (2 * i + 1) * len_us / (2 * steps)))
        .sum::<f64>()
        / steps as f64
}

fn detection() -> Outcome {
    let t = Instant::now();
    let runs: Vec<RunOutput> = (1..=20)
        .map(|seed| sim::run(&scenario("", seed)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let elapsed = t.elapsed();

    let ramp = runs[0].scenario.gnss.profile().ramp_start_us;
    let eps = runs[0].scenario.detection.epsilon_us;
    let sigma = eps;
    let mut false_alarms = BTreeMap::new();
    let mut clean_std = Vec::new();
    let mut late = 0;
    for (wi, report) in runs[0].reports.iter().enumerate() {
        let w_us = (report.config.window_s * 1e6).round() as i64;
        let mut clean_means = Vec::new();
        let mut fa = 0;
        for run in &runs {
            let rep = &run.reports[wi];
            fa += rep.false_alarm_count;
            for w in &rep.windows {
                if w.window_start_us + w_us <= ramp {
                    if w.n_obs > 0 {
                        clean_means.push(w.mean_residual_us);
                    }
                    continue;
                }
                let need = eps + 3.0 * sigma / (w.n_obs.max(1) as f64).sqrt();
                if window_mean_bias(run, w.window_start_us, w_us) > need && !w.alarm {
                    late += 1;
                }
            }
        }
        false_alarms.insert(report.config.window_s as u32, fa);
        clean_std.push(mean_std(&clean_means).1);
    }
    let a = false_alarms.values().all(|&n| n == 0);
    let b = late == 0;
    let c = clean_std[0] > clean_std[1] && clean_std[1] > clean_std[2];
    let fast = elapsed <= Duration::from_secs(30);
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    let detail = format!(
        "(a) {} false alarms before ramp {false_alarms:?}; (b) {} {late} windows above eps + 3 sigma_mean without alarm; \
         (c) {} window-mean std {:.2}/{:.2}/{:.2} us; runtime {} {elapsed:.2?}",
        mark(a),
        mark(b),
        mark(c),
        clean_std[0],
        clean_std[1],
        clean_std[2],
        mark(fast)
    );
    if a && b && c && fast {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn security() -> Outcome {
    let attacks = [
        ("forge_beacon", "[attack]\nkind = \"forge_beacon\"\ncount = 1000\n", false),
        ("replay_sequence", "[attack]\nkind = \"replay_sequence\"\nreplay_after_us = 5000000\ncount = 1000\n", false),
        ("meacon", "[attack]\nkind = \"meacon\"\ndelay_us = 112400\ncount = 1000\n", false),
        ("rogue_ap", "[attack]\nkind = \"rogue_ap\"\nrogue_aps = 2\ncount = 1000\n", false),
        (
            "forge_time_reply",
            "[timeserver]\npoll_interval_s = 0.25\n\n[attack]\nkind = \"forge_time_reply\"\nbogus_offset_us = 50000\ncount = 1000\n",
            true,
        ),
    ];
    let mut parts = Vec::new();
    for (name, extra, replies) in attacks {
        let out = sim::run(&scenario(extra, 3)).map_err(|e| e.to_string())?;
        let s = &out.summary.security;
        let (sent, authenticated, legacy) = if replies {
            (s.attacker_replies, s.attacker_replies_accepted, s.legacy_attacker_replies_accepted)
        } else {
            (s.attacker_frames, s.attacker_frames_authenticated, s.legacy_attacker_frames_accepted)
        };
        check(sent == 1000, format!("{name}: {sent} attacker items"))?;
        check(authenticated == 0, format!("{name}: {authenticated} attacker items authenticated"))?;
        check(s.attacker_frames_in_detector_feed == 0, format!("{name}: attacker items in detector feed"))?;
        check(legacy > 0, format!("{name}: legacy client accepted nothing"))?;

        // Honest observations must be exactly those of an unattacked run.
        if !matches!(name, "meacon" | "forge_time_reply") {
            let clean = sim::run(&scenario(&extra.replace(&format!("kind = \"{name}\""), "kind = \"none\""), 3))
                .map_err(|e| e.to_string())?;
            check(
                sim::observations_csv(&clean.observations) == sim::observations_csv(&out.observations),
                format!("{name}: authenticated feed differs from the attack-free run"),
            )?;
        }
        parts.push(format!("{name} 0/{sent} (legacy {legacy})"));
    }
    Ok(parts.join(", "))
}

fn oracle() -> Outcome {
    let pki = common::Pki::new();
    let mut frames = 0;
    let mut auth = 0;
    for seed in 0..10_000u64 {
        let s = common::run_case(&pki, 1_000_000 + seed)?;
        frames += s.frames;
        auth += s.authenticated;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = rng.random_range(0..10);
        let gap = rng.random_range(1..20);
        let m = rng.random_range(0..30);
        let h = common::honest_run_hashes(&pki, rng.random(), a + gap + m + 2, a, a + gap, m);
        check(h == u64::from(gap + m), format!("telescoping: {h} hashes for k={gap}, m={m}"))?;
    }
    Ok(format!("10000 cases, {frames} frames, {auth} authenticated, telescoping holds on 200 runs"))
}

fn ntsim() -> Outcome {
    let t = Instant::now();
    let (clean, _) = cli(&["ntsim", "--model", "nts.sth1", "--count", "10000", "--seed", "11"]);
    let (forged, _) = cli(&["ntsim", "--model", "nts.sth1", "--count", "10000", "--seed", "12", "--forge-every", "7"]);
    let (plain, _) = cli(&["ntsim", "--model", "nts.sth1", "--count", "10000", "--seed", "12", "--forge-every", "7", "--auth", "off"]);
    let elapsed = t.elapsed();

    let rows = |text: &str| -> Vec<Vec<String>> {
        text.lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    };
    let col = |rows: &[Vec<String>], i: usize| -> Vec<f64> { rows.iter().map(|r| r[i].parse().unwrap()).collect() };
    let r = rows(&clean);
    check(r.len() == 10_000, format!("{} exchanges", r.len()))?;
    let n = r.len() as f64;
    let (rtd, off) = (mean_std(&col(&r, 6)).0, mean_std(&col(&r, 5)).0);
    check((rtd - 2.765e-2).abs() <= 3.0 * 7.151e-3 / n.sqrt(), format!("rtd mean {rtd:e}"))?;
    check((off - 9.380e-4).abs() <= 3.0 * 3.309e-3 / n.sqrt(), format!("offset mean {off:e}"))?;

    let f = rows(&forged);
    let forged_rows: Vec<_> = f.iter().filter(|r| r[7] == "1").collect();
    check(!forged_rows.is_empty(), "no forged replies")?;
    let accepted = forged_rows.iter().filter(|r| r[8] == "1").count();
    check(accepted == 0, format!("{accepted} forged replies accepted"))?;
    let p = rows(&plain);
    let plain_accepted = p.iter().filter(|r| r[7] == "1" && r[8] == "1").count();
    check(plain_accepted > 0, "unauthenticated mode accepted no forged reply")?;

    let counters = forged.lines().find(|l| l.starts_with("# exchanges=")).ok_or("no counter line")?;
    let kv: BTreeMap<&str, f64> = counters[2..]
        .split_whitespace()
        .filter_map(|p| p.split_once('='))
        .filter_map(|(k, v)| v.parse().ok().map(|v| (k, v)))
        .collect();
    let ratio = kv["load"] / kv["plain_load"];
    check((ratio - 6.0).abs() < 1e-9, format!("load ratio {ratio}"))?;
    check(elapsed < Duration::from_secs(10), format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "rtd {rtd:.4e} s, offset {off:.4e} s, forged discarded {}/{}, load ratio {ratio}, {elapsed:.2?}",
        forged_rows.len(),
        forged_rows.len()
    ))
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut ok, mut oversize) = (0, 0);
    for _ in 0..100_000 {
        let f = common::random_frame(&mut rng);
        match f.serialize() {
            Ok(bytes) => {
                check(bytes.len() <= 2320, format!("{} octets", bytes.len()))?;
                check(BeaconFrame::deserialize(&bytes).as_ref() == Ok(&f), "round trip mismatch")?;
                check(BeaconFrame::deserialize(&bytes).unwrap().serialize().unwrap() == bytes, "re-encode mismatch")?;
                ok += 1;
            }
            Err(_) => {
                check(f.encoded_len() > 2320, "construction error below the size limit")?;
                oversize += 1;
            }
        }
    }
    let mut decoded = 0;
    for i in 0..100_000 {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = rng.random_range(0..2_400);
            (0..len).map(|_| rng.random()).collect()
        } else {
            let mut b = common::random_frame(&mut rng).serialize().unwrap_or_default();
            for _ in 0..rng.random_range(1..6) {
                if !b.is_empty() {
                    let at = rng.random_range(0..b.len());
                    b[at] = rng.random();
                }
            }
            let cut = rng.random_range(0..=b.len());
            b.truncate(cut);
            b
        };
        let r = std::panic::catch_unwind(|| BeaconFrame::deserialize(&bytes).is_ok());
        check(r.is_ok(), "decoder panicked")?;
        decoded += usize::from(r.unwrap());
    }
    Ok(format!("{ok} round trips, {oversize} oversize rejected, 100000 fuzz inputs ({decoded} decoded)"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (i, extra) in ["", "[attack]\nkind = \"rogue_ap\"\nrogue_aps = 2\ncount = 300\n"].iter().enumerate() {
        let path = dir.path().join(format!("s{i}.toml"));
        std::fs::write(&path, scenario(extra, 9).to_toml()).map_err(|e| e.to_string())?;
        let a = dir.path().join(format!("a{i}"));
        let b = dir.path().join(format!("b{i}"));
        for out in [&a, &b] {
            cli(&["simulate", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        }
        for entry in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
            let name = entry.map_err(|e| e.to_string())?.file_name();
            if !name.to_string_lossy().ends_with(".csv") {
                continue;
            }
            let x = std::fs::read(a.join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(&name)).map_err(|e| e.to_string())?;
            check(x == y, format!("{} differs", name.to_string_lossy()))?;
            files += 1;
        }
    }
    Ok(format!("{files} CSV files byte-identical across repeated runs"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 cost worked example", cost_example),
        ("2 formula reproduction", formulas),
        ("3 detection experiment", detection),
        ("4 security properties", security),
        ("5 chain mechanics oracle", oracle),
        ("6 time-server statistics", ntsim),
        ("7 codec", codec),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("PASS criterion {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {name}: panicked");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
