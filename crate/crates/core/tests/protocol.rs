use femu_core::control::config::Resolver;
use femu_core::control::protocol::{serve_stream, Session, COMMANDS};
use proptest::prelude::*;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn session() -> Session {
    let dir = std::env::temp_dir();
    Session::new(Resolver::new(Some(&dir)).with_config_dir(None), 0)
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    *items.choose(rng).unwrap()
}

fn program(rng: &mut ChaCha8Rng) -> Value {
    let phases: Vec<Value> = (0..rng.gen_range(0..5))
        .map(|_| match rng.gen_range(0..4) {
            0 => json!({"op": "compute", "kernel": pick(rng, &["mm", "conv", "fft"]), "target": "cpu"}),
            1 => {
                json!({"op": "acquire", "fs_hz": 1000, "n_samples": rng.gen_range(0..20), "per_sample_cpu_cycles": 100})
            }
            2 => json!({"op": "sleep", "mode": "power_gated", "duration_cycles": rng.gen_range(0..5000)}),
            _ => json!({"op": "flash_read", "bytes": rng.gen_range(0..4096), "addr": 0}),
        })
        .collect();
    json!({"name": "p", "phases": phases})
}

fn random_message(rng: &mut ChaCha8Rng, id: usize) -> String {
    let cmd = if rng.gen_bool(0.05) {
        "no_such_command"
    } else {
        COMMANDS[..13].choose(rng).unwrap()
    };
    let args = match cmd {
        "load_program" => json!({"program": program(rng), "timing": "cgra-calibrated"}),
        "run" if rng.gen_bool(0.5) => json!({"until_cycle": rng.gen_range(0..2_000_000)}),
        "read_counters" | "estimate_energy" => json!({"mode": pick(rng, &["automatic", "manual"])}),
        "configure_adc" => json!({"fs_hz": pick(rng, &[1000, 0]), "source": {"synthetic": {"len": 64}}}),
        "flash_init" => json!({"mode": pick(rng, &["virtual", "physical_model"])}),
        "flash_read" => json!({"addr": rng.gen_range(0..100), "len": rng.gen_range(0..16)}),
        "flash_write" => json!({"addr": rng.gen_range(0..100), "data": pick(rng, &["abcd", "zz", ""])}),
        "register_accelerator" => json!({"spec": pick(rng, &["cgra-rtl", "cgra-sw", "missing"])}),
        "offload" => {
            json!({"target": "cgra", "operands": {"kernel": "fft", "input": {"shape": [512, 2], "data": vec![0; 1024]}}})
        }
        _ => Value::Null,
    };
    let msg = json!({"id": id, "cmd": cmd, "args": args}).to_string();
    if rng.gen_bool(0.03) {
        msg[..msg.len() / 2].to_string()
    } else {
        msg
    }
}

#[test]
fn ten_thousand_messages_get_one_ordered_reply_each() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let lines: Vec<String> = (0..10_000).map(|i| random_message(&mut rng, i)).collect();
    let input = lines.join("\n") + "\n";

    let serve = |input: &str| {
        let mut out = Vec::new();
        serve_stream(&mut session(), input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    };
    let first = serve(&input);
    let replies: Vec<Value> = first.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies.len(), lines.len());
    let mut ok = 0;
    for (line, reply) in lines.iter().zip(&replies) {
        let sent: Option<Value> = serde_json::from_str(line).ok();
        match sent {
            Some(msg) => assert_eq!(reply["id"], msg["id"]),
            None => assert_eq!(reply["error"]["code"], "BadArguments"),
        }
        if reply["ok"] == true {
            ok += 1;
        } else {
            assert!(reply["error"]["message"].is_string());
        }
    }
    assert!(ok > 1000, "only {ok} successful replies");
    assert_eq!(serve(&input), first);
}

proptest! {
    #[test]
    fn arbitrary_lines_get_exactly_one_reply(lines in prop::collection::vec("[ -~]{0,40}", 1..30)) {
        let lines: Vec<String> = lines.into_iter().filter(|l| !l.trim().is_empty()).collect();
        let mut s = session();
        for line in &lines {
            let reply = s.handle_line(line).to_line();
            prop_assert!(!reply.contains('\n'));
            let v: Value = serde_json::from_str(&reply).unwrap();
            prop_assert!(v["ok"].is_boolean());
        }
    }
}
