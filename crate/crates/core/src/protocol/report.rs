//! CSV and summary writers. Headers are fixed; every row has the same
//! number of columns.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::protocol::meter::PayloadKind;
use crate::protocol::sim::{ExperimentReport, RoundTranscript, Summary};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRANSCRIPT_FILE: &str = "transcript.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const ELECTIONS_FILE: &str = "elections.csv";

pub const TRANSCRIPT_HEADER: &str = "round,seq,sender,receiver,payload_kind,bytes";
pub const ELECTIONS_HEADER: &str = "round,node_id,role,S,P,selected";

pub fn metrics_header() -> String {
    let mut h = String::from("round,accuracy,winner,winner_malicious,applied,distances");
    for k in PayloadKind::ALL {
        let _ = write!(h, ",bytes_{}", k.name());
    }
    h.push_str(",verification_bytes,full_gradient_bytes,benchmark");
    h
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn metrics_csv(transcripts: &[RoundTranscript]) -> String {
    let mut s = metrics_header();
    s.push('\n');
    for t in transcripts {
        let winner = t.winner();
        let distances = t
            .candidates
            .iter()
            .map(|c| match c.distance {
                Some(d) => format!("{}:{d}", c.aggregator),
                None => format!("{}:-", c.aggregator),
            })
            .collect::<Vec<_>>()
            .join(";");
        let _ = write!(
            s,
            "{},{:.6},{},{},{},{}",
            t.round_id,
            t.accuracy,
            winner.map_or("none".to_string(), |w| w.aggregator.to_string()),
            u8::from(t.candidates.iter().any(|c| c.accepted && c.contains_malicious)),
            u8::from(t.applied),
            distances
        );
        for k in PayloadKind::ALL {
            let _ = write!(s, ",{}", t.bytes_by_kind(k));
        }
        let bench = t.benchmark.to_bytes();
        let _ = writeln!(
            s,
            ",{},{},{}",
            t.verification_bytes,
            t.full_gradient_bytes,
            hex(&bench[4..])
        );
    }
    s
}

pub fn transcript_csv(transcripts: &[RoundTranscript]) -> String {
    let mut s = String::from(TRANSCRIPT_HEADER);
    s.push('\n');
    for t in transcripts {
        for (seq, m) in t.messages.iter().enumerate() {
            let _ = writeln!(s, "{},{seq},{},{},{},{}", t.round_id, m.sender, m.receiver, m.kind, m.bytes);
        }
    }
    s
}

pub fn elections_csv(transcripts: &[RoundTranscript]) -> String {
    let mut s = String::from(ELECTIONS_HEADER);
    s.push('\n');
    for t in transcripts {
        for &(id, score, share) in &t.pre_scores {
            let role = if t.election.trainers.contains(&id) {
                "lt"
            } else if t.election.aggregators.contains(&id) {
                "ag"
            } else {
                "idle"
            };
            let _ = writeln!(
                s,
                "{},{id},{role},{score:.6},{share:.6},{}",
                t.round_id,
                u8::from(role != "idle")
            );
        }
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.6}"))
}

pub fn summary_text(s: &Summary) -> String {
    let mut out = String::new();
    let malicious = s
        .malicious_nodes
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(out, "final_accuracy = {:.6}", s.final_accuracy);
    let _ = writeln!(out, "rounds = {}", s.rounds);
    let _ = writeln!(out, "malicious_nodes = {}", if malicious.is_empty() { "none" } else { &malicious });
    let _ = writeln!(out, "verification_bytes = {}", s.verification_bytes);
    let _ = writeln!(out, "full_gradient_bytes = {}", s.full_gradient_bytes);
    let _ = writeln!(
        out,
        "verification_ratio = {}",
        s.verification_ratio.map_or("n/a".into(), |r| format!("{r:.6e}"))
    );
    let _ = writeln!(out, "detection_precision = {}", opt(s.detection_precision));
    let _ = writeln!(out, "detection_recall = {}", opt(s.detection_recall));
    let _ = writeln!(out, "malicious_wins = {}", s.malicious_wins);
    let _ = writeln!(out, "rounds_without_candidates = {}", s.rounds_without_candidates);
    out
}

/// Writes the four output files into `dir`, creating it if needed.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(METRICS_FILE), metrics_csv(&report.transcripts))?;
    std::fs::write(dir.join(TRANSCRIPT_FILE), transcript_csv(&report.transcripts))?;
    std::fs::write(dir.join(ELECTIONS_FILE), elections_csv(&report.transcripts))?;
    std::fs::write(dir.join(SUMMARY_FILE), summary_text(&report.summary))?;
    Ok(())
}
