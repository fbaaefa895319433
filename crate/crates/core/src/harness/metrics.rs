//! Communication accounting: per-phase message and byte counts, the closed-form
//! costs of an honest run, the HoneyBadger-style baseline and the scaling fit.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::message::{MessageKind, HEADER_LEN};
use crate::sim::{EventKind, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Committee,
    Ppb,
    Propose,
    Suggest,
    Aba,
    Echo,
    Decrypt,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Committee,
        Phase::Ppb,
        Phase::Propose,
        Phase::Suggest,
        Phase::Aba,
        Phase::Echo,
        Phase::Decrypt,
    ];

    pub fn of(kind: MessageKind) -> Phase {
        match kind {
            MessageKind::CoinShare => Phase::Committee,
            MessageKind::PpbSend | MessageKind::PpbAck => Phase::Ppb,
            MessageKind::Propose => Phase::Propose,
            MessageKind::Suggest => Phase::Suggest,
            MessageKind::AbaEst | MessageKind::AbaAux | MessageKind::AbaCoinShare => Phase::Aba,
            MessageKind::ProposalEcho => Phase::Echo,
            MessageKind::DecShare => Phase::Decrypt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Committee => "committee",
            Phase::Ppb => "ppb",
            Phase::Propose => "propose",
            Phase::Suggest => "suggest",
            Phase::Aba => "aba",
            Phase::Echo => "echo",
            Phase::Decrypt => "decrypt",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Count {
    pub messages: u64,
    pub bytes: u64,
}

impl Count {
    fn add(&mut self, bytes: u64) {
        self.messages += 1;
        self.bytes += bytes;
    }
}

/// Traffic of one run, counted at send time over all parties (self-sends included).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub total: Count,
    pub phases: BTreeMap<Phase, Count>,
    pub kinds: BTreeMap<MessageKind, Count>,
    /// Sends whose kind byte was unreadable (garbage headers).
    pub unknown: Count,
}

impl MetricsReport {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut m = MetricsReport {
            phases: Phase::ALL.iter().map(|p| (*p, Count::default())).collect(),
            ..Default::default()
        };
        for e in &trace.events {
            if let EventKind::Send { msg, bytes, .. } = &e.kind {
                m.total.add(*bytes);
                match msg {
                    Some(k) => {
                        m.kinds.entry(*k).or_default().add(*bytes);
                        m.phases.entry(Phase::of(*k)).or_default().add(*bytes);
                    }
                    None => m.unknown.add(*bytes),
                }
            }
        }
        m
    }

    pub fn phase(&self, phase: Phase) -> Count {
        self.phases.get(&phase).copied().unwrap_or_default()
    }

    pub fn kind(&self, kind: MessageKind) -> Count {
        self.kinds.get(&kind).copied().unwrap_or_default()
    }
}

/// Per-epoch bytes of the all-parties-propose baseline: `n^2 v + K n^3 log2 n`.
pub fn baseline_bytes(n: usize, v: usize, k: usize) -> f64 {
    let n = n as f64;
    n * n * v as f64 + k as f64 * n * n * n * n.log2()
}

/// Probability bound that a committee of `kappa` parties sampled uniformly holds no
/// honest party, `(1/3)^kappa`.
pub fn all_byzantine_bound(kappa: usize) -> f64 {
    (1.0f64 / 3.0).powi(kappa as i32)
}

/// Exact probability that `kappa` of `n` parties drawn without replacement are all
/// among the `f` faulty ones.
pub fn all_byzantine_exact(n: usize, f: usize, kappa: usize) -> f64 {
    if kappa > f {
        return 0.0;
    }
    (0..kappa)
        .map(|i| (f - i) as f64 / (n - i) as f64)
        .product()
}

/// Closed-form bytes per phase for an all-honest run in which every proposer's
/// batch encodes to exactly `v` bytes. Phases whose message count depends on the
/// schedule (suggestions, agreement, echoes) are computed from the message counts in
/// the trace times their fixed sizes; `decrypt` needs the committed slot count of
/// each epoch.
pub fn expected_phase_bytes(trace: &Trace, v: usize) -> BTreeMap<Phase, u64> {
    let cfg = &trace.config;
    let p = cfg.params;
    let (n, kappa, k) = (p.n() as u64, p.kappa() as u64, p.sec_param() as u64);
    let (e, s, v) = (
        u64::from(cfg.epochs),
        u64::from(cfg.promotion_steps),
        v as u64,
    );
    let h = HEADER_LEN as u64;
    let ct = k + v;
    let m = MetricsReport::from_trace(trace);
    let msgs = |kind| m.kind(kind).messages;

    let committee = e * n * n * (h + k);
    let ppb = e * kappa * s * n * ((h + ct + k) + (h + k)) + e * kappa * (s - 1) * n * k;
    let propose = e * kappa * n * (h + ct + k);
    let suggest = msgs(MessageKind::Suggest) * (h + ct + k + 2);
    let aba = (msgs(MessageKind::AbaEst) + msgs(MessageKind::AbaAux)) * (h + 2)
        + msgs(MessageKind::AbaCoinShare) * (h + k);
    let echo = msgs(MessageKind::ProposalEcho) * (h + ct + k);
    let q_total: u64 = trace
        .honest_parties()
        .first()
        .map(|p0| trace.blocks(*p0).iter().map(|b| b.q as u64).sum())
        .unwrap_or(0);
    let decrypt = q_total * n * n * (h + 4 + k);
    BTreeMap::from([
        (Phase::Committee, committee),
        (Phase::Ppb, ppb),
        (Phase::Propose, propose),
        (Phase::Suggest, suggest),
        (Phase::Aba, aba),
        (Phase::Echo, echo),
        (Phase::Decrypt, decrypt),
    ])
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| *x <= 0.0 || *y <= 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProtocolParams;
    use crate::sim::{run_simulation, SimConfig, Workload};

    #[test]
    fn baseline_matches_hand_computation() {
        // 16 * 256 + 32 * 64 * 2
        assert_eq!(baseline_bytes(4, 256, 32), 4096.0 + 4096.0);
    }

    #[test]
    fn all_byzantine_probabilities() {
        assert!((all_byzantine_exact(7, 2, 2) - 1.0 / 21.0).abs() < 1e-12);
        assert_eq!(all_byzantine_exact(7, 2, 3), 0.0);
        assert!(all_byzantine_exact(7, 2, 2) <= all_byzantine_bound(2));
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [4.0, 7.0, 10.0]
            .iter()
            .map(|x: &f64| (*x, 3.0 * x.powf(2.5)))
            .collect();
        assert!((loglog_slope(&pts).unwrap() - 2.5).abs() < 1e-9);
        assert_eq!(loglog_slope(&pts[..1]), None);
    }

    #[test]
    fn phase_bytes_match_closed_form() {
        for (f, steps) in [(1, 1), (2, 1), (1, 3)] {
            let params = ProtocolParams::with_fault_bound(f, 1, 32, 11).unwrap();
            let mut cfg = SimConfig::new(params, 2);
            cfg.promotion_steps = steps;
            cfg.workload = Workload::fixed_batch_bytes(256, 1, 2).unwrap();
            let trace = run_simulation(&cfg).unwrap();
            let m = MetricsReport::from_trace(&trace);
            let expected = expected_phase_bytes(&trace, 256);
            for phase in Phase::ALL {
                assert_eq!(
                    m.phase(phase).bytes,
                    expected[&phase],
                    "{phase} f={f} S={steps}"
                );
            }
            assert_eq!(m.total.bytes, trace.outcome.bytes);
        }
    }
}
