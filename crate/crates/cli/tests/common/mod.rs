#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use macropat::{Alphabet, Corpus, DialogueAct, Meeting, Suggestion, Sym};

pub fn macropat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_macropat"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = macropat(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

pub fn outputs(dir: &Path) -> Vec<PathBuf> {
    manifest(dir)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| PathBuf::from(p.as_str().unwrap()))
        .collect()
}

/// Suggestions whose acceptance depends on a few words, with filler text.
pub fn suggestion_corpus(meetings: usize) -> Corpus {
    let filler = ["budget", "colour", "remote", "button", "design", "shape", "price", "battery"];
    let mut out = Vec::new();
    let mut state: u64 = 0x2545_F491_4F6C_DD1D;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for i in 0..meetings {
        let mut acts = Vec::new();
        let mut suggestions = Vec::new();
        for j in 0..8 {
            let r = next();
            let yeah = r % 3 == 0;
            let maybe = r % 5 == 1;
            let mut words = vec![filler[(r >> 8) as usize % filler.len()], filler[(r >> 16) as usize % filler.len()]];
            if yeah {
                words.push("yeah");
            }
            if maybe {
                words.push("maybe");
            }
            let accepted = if yeah { (r >> 24) % 10 < 9 } else if maybe { (r >> 24) % 10 < 3 } else { (r >> 24) % 2 == 0 };
            acts.push(DialogueAct {
                time: j as f64 * 10.0,
                speaker: ["A", "B"][j % 2].into(),
                label: Sym((j % 4) as u16),
                text: Some(words.join(" ")),
            });
            suggestions.push(Suggestion { act_index: j, accepted });
        }
        out.push(Meeting {
            id: format!("s{i:03}"),
            acts,
            decision_windows: vec![(20.0, 40.0 + (i % 5) as f64 * 5.0)],
            suggestions,
        });
    }
    Corpus::new(Alphabet::assessment(), out).unwrap()
}
