//! Concealment statistics over the hex encodings of stealth addresses and
//! masked amounts: character-frequency KL divergence, empirical CDFs, and a
//! two-sample Kolmogorov–Smirnov battery comparing special and normal fields.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, extract_auth, extract_segment, AuthResult, SegmentResult, DEFAULT_MAX_DRAWS};
use crate::error::AnalysisError;
use crate::group::Digest32;
use crate::ledger::Block;
use crate::monero::{build_normal_tx, random_amount, scan_output, KeyQuad, PublicAddress, ScanResult, Transaction};

pub const HEX_SYMBOLS: usize = 16;
/// Significance level for the KS battery.
pub const KS_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    AuthAddr0,
    AuthAddr1,
    TransAddr,
    TransAmount,
    NormalAddr,
    NormalAmount,
}

impl FieldKind {
    pub const ALL: [FieldKind; 6] = [
        FieldKind::AuthAddr0,
        FieldKind::AuthAddr1,
        FieldKind::TransAddr,
        FieldKind::TransAmount,
        FieldKind::NormalAddr,
        FieldKind::NormalAmount,
    ];

    pub fn is_amount(self) -> bool {
        matches!(self, FieldKind::TransAmount | FieldKind::NormalAmount)
    }

    pub fn is_special(self) -> bool {
        !matches!(self, FieldKind::NormalAddr | FieldKind::NormalAmount)
    }

    /// Hex length of one field.
    pub fn hex_len(self) -> usize {
        if self.is_amount() {
            16
        } else {
            64
        }
    }

    /// The normal-transaction field a special field is compared against.
    pub fn normal_counterpart(self) -> FieldKind {
        if self.is_amount() {
            FieldKind::NormalAmount
        } else {
            FieldKind::NormalAddr
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::AuthAddr0 => "auth_addr0",
            FieldKind::AuthAddr1 => "auth_addr1",
            FieldKind::TransAddr => "trans_addr",
            FieldKind::TransAmount => "trans_amount",
            FieldKind::NormalAddr => "normal_addr",
            FieldKind::NormalAmount => "normal_amount",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        FieldKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Counts of the hex symbols `0`..`f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharFreq {
    pub counts: [u64; HEX_SYMBOLS],
}

fn hex_value(c: u8) -> Option<usize> {
    match c {
        b'0'..=b'9' => Some((c - b'0') as usize),
        b'a'..=b'f' => Some((c - b'a' + 10) as usize),
        _ => None,
    }
}

impl CharFreq {
    pub fn from_counts(counts: [u64; HEX_SYMBOLS]) -> Self {
        CharFreq { counts }
    }

    pub fn add_hex(&mut self, s: &str) -> Result<(), AnalysisError> {
        for c in s.bytes() {
            self.counts[hex_value(c).ok_or(AnalysisError::NonHex)?] += 1;
        }
        Ok(())
    }

    pub fn from_fields<'a, I: IntoIterator<Item = &'a str>>(fields: I) -> Result<Self, AnalysisError> {
        let mut f = CharFreq::default();
        for s in fields {
            f.add_hex(s)?;
        }
        Ok(f)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> [f64; HEX_SYMBOLS] {
        let total = self.total() as f64;
        self.counts.map(|c| c as f64 / total)
    }
}

/// `Σ P(x)·log2(P(x)/Q(x))` after adding one count to every symbol of both
/// distributions.
pub fn kld(p: &CharFreq, q: &CharFreq) -> Result<f64, AnalysisError> {
    if p.total() == 0 || q.total() == 0 {
        return Err(AnalysisError::EmptyDistribution);
    }
    let pt = (p.total() + HEX_SYMBOLS as u64) as f64;
    let qt = (q.total() + HEX_SYMBOLS as u64) as f64;
    let d = (0..HEX_SYMBOLS)
        .map(|x| {
            let px = (p.counts[x] + 1) as f64 / pt;
            let qx = (q.counts[x] + 1) as f64 / qt;
            px * (px / qx).log2()
        })
        .sum::<f64>();
    // Rounding can leave a tiny negative residue for identical inputs.
    Ok(d.max(0.0))
}

/// Cumulative probabilities at symbols `0`..`f`; the last entry is exactly 1.
pub fn ecdf(freq: &CharFreq) -> [f64; HEX_SYMBOLS] {
    let total = freq.total();
    let mut out = [0.0; HEX_SYMBOLS];
    let mut acc = 0u64;
    for (i, c) in freq.counts.iter().enumerate() {
        acc += c;
        out[i] = if acc == total { 1.0 } else { acc as f64 / total as f64 };
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut prev_term = 0.0f64;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() <= 1e-10 * prev_term.abs() || term.abs() <= 1e-12 * sum.abs() {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev_term = term;
    }
    1.0
}

/// Asymptotic p-value for statistic `d` with sample sizes `n` and `m`, using
/// the effective size `√(nm/(n+m))` with the usual small-sample correction.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    kolmogorov_survival((en + 0.12 + 0.11 / en) * d)
}

/// Two-sample KS test on real-valued observations. Ties are handled by
/// comparing the empirical CDFs only at distinct values.
pub fn ks_test(sample_a: &[f64], sample_b: &[f64]) -> KsResult {
    assert!(!sample_a.is_empty() && !sample_b.is_empty(), "KS samples must be non-empty");
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    KsResult { statistic: d, p_value: ks_p_value(d, n, m) }
}

/// KS test where each sample is the pooled hex-character values of its
/// instances; equivalent to [`ks_test`] on the expanded value lists.
pub fn ks_test_freq(a: &CharFreq, b: &CharFreq) -> KsResult {
    let (n, m) = (a.total(), b.total());
    assert!(n > 0 && m > 0, "KS samples must be non-empty");
    let (mut ca, mut cb, mut d) = (0u64, 0u64, 0.0f64);
    for x in 0..HEX_SYMBOLS {
        ca += a.counts[x];
        cb += b.counts[x];
        d = d.max((ca as f64 / n as f64 - cb as f64 / m as f64).abs());
    }
    KsResult { statistic: d, p_value: ks_p_value(d, n as usize, m as usize) }
}

/// What a labelled transaction is, as seen by a receiver that knows the sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Auth,
    Trans,
    Normal,
    Other,
}

/// Classifies every confirmed transaction using the receiver's keys.
pub fn label_chain(blocks: &[Block], receiver: &KeyQuad, sender: &PublicAddress) -> HashMap<Digest32, TxKind> {
    let mut labels = HashMap::new();
    let mut signature = None;
    for tx in blocks.iter().flat_map(|b| &b.txs) {
        let kind = if let AuthResult::Authenticated { signature: sig, .. } =
            extract_auth(tx, receiver, &[sender.view_pub])
        {
            signature = Some(sig);
            TxKind::Auth
        } else if signature
            .is_some_and(|sig| matches!(extract_segment(tx, receiver, &sig), SegmentResult::Segment { .. }))
        {
            TxKind::Trans
        } else if tx
            .outputs
            .first()
            .is_some_and(|o| matches!(scan_output(tx, o, &receiver.view_priv, &receiver.spend_pub), ScanResult::Owned(_)))
        {
            TxKind::Normal
        } else {
            TxKind::Other
        };
        labels.insert(tx.id(), kind);
    }
    labels
}

fn field_of(tx: &Transaction, kind: FieldKind) -> Option<String> {
    let (output, amount) = match kind {
        FieldKind::AuthAddr0 => (0, false),
        FieldKind::AuthAddr1 => (1, false),
        FieldKind::TransAddr | FieldKind::NormalAddr => (0, false),
        FieldKind::TransAmount | FieldKind::NormalAmount => (0, true),
    };
    let o = tx.outputs.get(output)?;
    Some(if amount { hex::encode(o.masked_amount) } else { hex::encode(o.stealth_address) })
}

fn tx_kind_for(kind: FieldKind) -> TxKind {
    match kind {
        FieldKind::AuthAddr0 | FieldKind::AuthAddr1 => TxKind::Auth,
        FieldKind::TransAddr | FieldKind::TransAmount => TxKind::Trans,
        FieldKind::NormalAddr | FieldKind::NormalAmount => TxKind::Normal,
    }
}

/// The first `n` fields of `kind` on the chain, in chain order.
pub fn collect_fields(
    blocks: &[Block],
    labels: &HashMap<Digest32, TxKind>,
    kind: FieldKind,
    n: usize,
) -> Result<Vec<String>, AnalysisError> {
    let want = tx_kind_for(kind);
    let fields: Vec<String> = blocks
        .iter()
        .flat_map(|b| &b.txs)
        .filter(|tx| labels.get(&tx.id()) == Some(&want))
        .filter_map(|tx| field_of(tx, kind))
        .take(n)
        .collect();
    if fields.len() < n {
        return Err(AnalysisError::Insufficient { kind, needed: n, available: fields.len() });
    }
    Ok(fields)
}

/// Field strings per kind plus an independent normal-transaction reference
/// set (addresses and amounts).
#[derive(Clone, Debug, Default)]
pub struct FieldCorpus {
    pub fields: BTreeMap<FieldKind, Vec<String>>,
    pub reference_addr: Vec<String>,
    pub reference_amount: Vec<String>,
}

const PLAINTEXT: &[u8] = b"Meet at the north gate at dawn; bring the ledger and two witnesses. ";

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(index as u128 * 1024);
    // Fold the index into the seed too so streams never overlap.
    ChaCha20Rng::seed_from_u64(rng.gen::<u64>() ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

impl FieldCorpus {
    /// Builds `per_kind` AuthTx, TransTx and normal transactions in memory
    /// (never broadcast) plus `reference` further normal transactions
    /// between unrelated wallets. Deterministic in `seed`.
    pub fn generate(per_kind: usize, reference: usize, seed: u64) -> Result<Self, AnalysisError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let alice = KeyQuad::generate(&mut rng);
        let bob = KeyQuad::generate(&mut rng);
        let (a, b) = (alice.public(), bob.public());
        let session_sig = codec::gen_auth_field(&mut rng, &alice.view_priv, &b, DEFAULT_MAX_DRAWS)?.signature;

        let auth: Vec<(String, String)> = (0..per_kind)
            .into_par_iter()
            .map(|i| {
                let mut r = stream_rng(seed, 1, i as u64);
                let f = codec::gen_auth_field(&mut r, &alice.view_priv, &b, DEFAULT_MAX_DRAWS)?;
                let tx = codec::auth_tx(&f, &b, &a, &mut r, 1);
                Ok((hex::encode(tx.outputs[0].stealth_address), hex::encode(tx.outputs[1].stealth_address)))
            })
            .collect::<Result<_, AnalysisError>>()?;

        let trans: Vec<(String, String)> = (0..per_kind)
            .into_par_iter()
            .map(|i| {
                let mut r = stream_rng(seed, 2, i as u64);
                let mut segment = [0u8; 32];
                for (k, byte) in segment.iter_mut().enumerate() {
                    *byte = PLAINTEXT[(i * 32 + k) % PLAINTEXT.len()];
                }
                let seq = (i % 999) as u32 + 1;
                let f = codec::gen_trans_field(&segment, seq, seq == 999, &b, &session_sig, &mut r, DEFAULT_MAX_DRAWS)?;
                let tx = codec::trans_tx(&f, &a, &mut r, 1);
                Ok((hex::encode(tx.outputs[0].stealth_address), hex::encode(tx.outputs[0].masked_amount)))
            })
            .collect::<Result<_, AnalysisError>>()?;

        let normal: Vec<(String, String)> = (0..per_kind)
            .into_par_iter()
            .map(|i| {
                let mut r = stream_rng(seed, 3, i as u64);
                let amount = random_amount(&mut r);
                let tx = build_normal_tx(&mut r, &a, &b, amount, 1);
                (hex::encode(tx.outputs[0].stealth_address), hex::encode(tx.outputs[0].masked_amount))
            })
            .collect();

        let reference: Vec<(String, String)> = (0..reference)
            .into_par_iter()
            .map(|i| {
                let mut r = stream_rng(seed, 4, i as u64);
                let from = KeyQuad::generate(&mut r).public();
                let to = KeyQuad::generate(&mut r).public();
                let amount = random_amount(&mut r);
                let tx = build_normal_tx(&mut r, &from, &to, amount, 1);
                (hex::encode(tx.outputs[0].stealth_address), hex::encode(tx.outputs[0].masked_amount))
            })
            .collect();

        let (a0, a1) = auth.into_iter().unzip();
        let (ta, tm) = trans.into_iter().unzip();
        let (na, nm) = normal.into_iter().unzip();
        let (reference_addr, reference_amount) = reference.into_iter().unzip();
        let mut fields = BTreeMap::new();
        fields.insert(FieldKind::AuthAddr0, a0);
        fields.insert(FieldKind::AuthAddr1, a1);
        fields.insert(FieldKind::TransAddr, ta);
        fields.insert(FieldKind::TransAmount, tm);
        fields.insert(FieldKind::NormalAddr, na);
        fields.insert(FieldKind::NormalAmount, nm);
        Ok(FieldCorpus { fields, reference_addr, reference_amount })
    }

    /// Collects `per_kind` fields of every kind from a labelled chain. The
    /// reference set is the `reference` normal transactions after the first
    /// `per_kind`.
    pub fn from_chain(
        blocks: &[Block],
        labels: &HashMap<Digest32, TxKind>,
        per_kind: usize,
        reference: usize,
    ) -> Result<Self, AnalysisError> {
        let mut fields = BTreeMap::new();
        for kind in FieldKind::ALL {
            fields.insert(kind, collect_fields(blocks, labels, kind, per_kind)?);
        }
        let mut addrs = collect_fields(blocks, labels, FieldKind::NormalAddr, per_kind + reference)?;
        let mut amounts = collect_fields(blocks, labels, FieldKind::NormalAmount, per_kind + reference)?;
        Ok(FieldCorpus {
            fields,
            reference_addr: addrs.split_off(per_kind),
            reference_amount: amounts.split_off(per_kind),
        })
    }

    pub fn get(&self, kind: FieldKind) -> &[String] {
        self.fields.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub groups: usize,
    pub group_size: usize,
    pub reference_size: usize,
    pub ks_samples: usize,
    pub ks_instances: usize,
    /// Leading fields of each kind the KS battery samples from.
    pub ks_corpus: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Five groups of 2,000 transactions per kind.
    pub fn desk(seed: u64) -> Self {
        ExperimentConfig {
            groups: 5,
            group_size: 2_000,
            reference_size: 10_000,
            ks_samples: 1_000,
            ks_instances: 500,
            ks_corpus: 10_000,
            seed,
        }
    }

    pub fn per_kind(&self) -> usize {
        self.groups * self.group_size
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidConfig(m.to_string()));
        if self.groups == 0 {
            return bad("groups must be at least 1");
        }
        if self.group_size == 0 {
            return bad("group size must be at least 1");
        }
        if self.reference_size == 0 {
            return bad("reference size must be at least 1");
        }
        if self.ks_samples == 0 || self.ks_instances == 0 {
            return bad("KS samples and instances must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KldRow {
    pub group: usize,
    pub kind: FieldKind,
    /// Bits.
    pub kld: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub kind: FieldKind,
    pub cdf: [f64; HEX_SYMBOLS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsBattery {
    pub special: FieldKind,
    pub normal: FieldKind,
    pub p_values: Vec<f64>,
    pub fraction_above_alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config: ExperimentConfig,
    pub group_sizes: Vec<usize>,
    pub reference_sizes: (usize, usize),
    pub kld: Vec<KldRow>,
    pub cdf: Vec<CdfRow>,
    pub ks: Vec<KsBattery>,
}

impl AnalysisReport {
    pub fn kld_of(&self, group: usize, kind: FieldKind) -> Option<f64> {
        self.kld.iter().find(|r| r.group == group && r.kind == kind).map(|r| r.kld)
    }

    /// Fixed-layout text tables: KLD per group, CDF per kind, KS summary.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# KLD (bits) against normal reference");
        let _ = write!(s, "{:>5}", "group");
        for k in FieldKind::ALL {
            let _ = write!(s, " {:>14}", k.name());
        }
        s.push('\n');
        for g in 0..self.config.groups {
            let _ = write!(s, "{:>5}", g + 1);
            for k in FieldKind::ALL {
                let _ = write!(s, " {:>14.3e}", self.kld_of(g, k).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\n# CDF of hex characters");
        let _ = write!(s, "{:>14}", "kind");
        for x in 0..HEX_SYMBOLS {
            let _ = write!(s, " {:>6x}", x);
        }
        s.push('\n');
        for row in &self.cdf {
            let _ = write!(s, "{:>14}", row.kind.name());
            for v in row.cdf {
                let _ = write!(s, " {:>6.4}", v);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\n# KS battery ({} samples x {} instances)", self.config.ks_samples, self.config.ks_instances);
        let _ = writeln!(s, "{:>14} {:>14} {:>10} {:>10} {:>10}", "special", "normal", "p>0.05", "median_p", "min_p");
        for b in &self.ks {
            let mut sorted = b.p_values.clone();
            sorted.sort_by(f64::total_cmp);
            let _ = writeln!(
                s,
                "{:>14} {:>14} {:>10.4} {:>10.4} {:>10.4}",
                b.special.name(),
                b.normal.name(),
                b.fraction_above_alpha,
                sorted[sorted.len() / 2],
                sorted[0]
            );
        }
        s
    }

    /// Machine-readable rows, one JSON object per line.
    pub fn rows_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.kld {
            out += &serde_json::json!({"table": "kld", "group": r.group + 1, "kind": r.kind, "kld": r.kld}).to_string();
            out.push('\n');
        }
        for r in &self.cdf {
            out += &serde_json::json!({"table": "cdf", "kind": r.kind, "cdf": r.cdf}).to_string();
            out.push('\n');
        }
        for b in &self.ks {
            for (i, p) in b.p_values.iter().enumerate() {
                out += &serde_json::json!({"table": "ks", "special": b.special, "normal": b.normal, "sample": i, "p": p})
                    .to_string();
                out.push('\n');
            }
        }
        out
    }
}

/// Special/normal pairs compared by the KS battery.
pub const KS_PAIRS: [(FieldKind, FieldKind); 4] = [
    (FieldKind::AuthAddr0, FieldKind::NormalAddr),
    (FieldKind::AuthAddr1, FieldKind::NormalAddr),
    (FieldKind::TransAddr, FieldKind::NormalAddr),
    (FieldKind::TransAmount, FieldKind::NormalAmount),
];

pub fn ks_battery(
    special: &[String],
    normal: &[String],
    samples: usize,
    instances: usize,
    seed: u64,
) -> Result<Vec<f64>, AnalysisError> {
    if special.len() < instances || normal.len() < instances {
        return Err(AnalysisError::InvalidConfig(format!(
            "KS needs {instances} instances but corpora hold {} and {}",
            special.len(),
            normal.len()
        )));
    }
    (0..samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, 5, j as u64);
            let a = CharFreq::from_fields(sample(&mut rng, special.len(), instances).iter().map(|i| special[i].as_str()))?;
            let b = CharFreq::from_fields(sample(&mut rng, normal.len(), instances).iter().map(|i| normal[i].as_str()))?;
            Ok(ks_test_freq(&a, &b).p_value)
        })
        .collect()
}

/// Runs the KLD, CDF and KS experiments over `corpus`.
pub fn run_experiment(corpus: &FieldCorpus, config: &ExperimentConfig) -> Result<AnalysisReport, AnalysisError> {
    config.validate()?;
    let per_kind = config.per_kind();
    for kind in FieldKind::ALL {
        let have = corpus.get(kind).len();
        if have < per_kind {
            return Err(AnalysisError::Insufficient { kind, needed: per_kind, available: have });
        }
    }
    for (kind, set) in [(FieldKind::NormalAddr, &corpus.reference_addr), (FieldKind::NormalAmount, &corpus.reference_amount)] {
        if set.len() < config.reference_size {
            return Err(AnalysisError::Insufficient { kind, needed: config.reference_size, available: set.len() });
        }
    }
    let ref_addr = CharFreq::from_fields(corpus.reference_addr[..config.reference_size].iter().map(String::as_str))?;
    let ref_amount = CharFreq::from_fields(corpus.reference_amount[..config.reference_size].iter().map(String::as_str))?;

    let mut kld_rows = Vec::new();
    for g in 0..config.groups {
        for kind in FieldKind::ALL {
            let slice = &corpus.get(kind)[g * config.group_size..(g + 1) * config.group_size];
            let freq = CharFreq::from_fields(slice.iter().map(String::as_str))?;
            let reference = if kind.is_amount() { &ref_amount } else { &ref_addr };
            kld_rows.push(KldRow { group: g, kind, kld: kld(&freq, reference)? });
        }
    }

    let mut cdf = Vec::new();
    for kind in FieldKind::ALL {
        let freq = CharFreq::from_fields(corpus.get(kind)[..per_kind].iter().map(String::as_str))?;
        cdf.push(CdfRow { kind, cdf: ecdf(&freq) });
    }

    let mut ks = Vec::new();
    for (i, (special, normal)) in KS_PAIRS.into_iter().enumerate() {
        let take = |k: FieldKind| {
            let all = corpus.get(k);
            &all[..config.ks_corpus.min(all.len())]
        };
        let p_values = ks_battery(
            take(special),
            take(normal),
            config.ks_samples,
            config.ks_instances,
            config.seed.wrapping_add(i as u64),
        )?;
        let above = p_values.iter().filter(|p| **p > KS_ALPHA).count();
        ks.push(KsBattery {
            special,
            normal,
            fraction_above_alpha: above as f64 / p_values.len() as f64,
            p_values,
        });
    }

    Ok(AnalysisReport {
        config: *config,
        group_sizes: vec![config.group_size; config.groups],
        reference_sizes: (config.reference_size, config.reference_size),
        kld: kld_rows,
        cdf,
        ks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_freq(n: u64) -> CharFreq {
        CharFreq::from_counts([n; 16])
    }

    #[test]
    fn kld_basics() {
        let p = uniform_freq(100);
        assert_eq!(kld(&p, &p).unwrap(), 0.0);
        let mut spike = [0u64; 16];
        spike[0] = 10_000_000;
        let v = kld(&CharFreq::from_counts(spike), &uniform_freq(10_000_000)).unwrap();
        assert!((v - 4.0).abs() < 0.01, "{v}");
        assert!(matches!(kld(&CharFreq::default(), &p), Err(AnalysisError::EmptyDistribution)));
    }

    #[test]
    fn ecdf_shapes() {
        let u = ecdf(&uniform_freq(3));
        for (i, v) in u.iter().enumerate() {
            assert!((v - (i + 1) as f64 / 16.0).abs() < 1e-12);
        }
        let mut f = [0u64; 16];
        f[15] = 9;
        let c = ecdf(&CharFreq::from_counts(f));
        assert!(c[..15].iter().all(|v| *v == 0.0));
        assert_eq!(c[15], 1.0);
    }

    #[test]
    fn ks_identical_samples() {
        let a: Vec<f64> = (0..100).map(|i| (i % 16) as f64).collect();
        let r = ks_test(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn ks_freq_matches_expanded() {
        let a = CharFreq::from_counts([5, 1, 0, 9, 3, 3, 3, 3, 8, 0, 0, 2, 7, 1, 1, 4]);
        let b = CharFreq::from_counts([2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 9]);
        let expand = |f: &CharFreq| -> Vec<f64> {
            f.counts.iter().enumerate().flat_map(|(x, c)| std::iter::repeat_n(x as f64, *c as usize)).collect()
        };
        let r1 = ks_test_freq(&a, &b);
        let r2 = ks_test(&expand(&a), &expand(&b));
        assert!((r1.statistic - r2.statistic).abs() < 1e-12);
        assert!((r1.p_value - r2.p_value).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_reference_points() {
        // Q(1.36) ≈ 0.0495 and Q(1.0) ≈ 0.2700 from standard tables.
        assert!((kolmogorov_survival(1.36) - 0.0495).abs() < 5e-4);
        assert!((kolmogorov_survival(1.0) - 0.2700).abs() < 5e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(5.0) < 1e-20);
    }

    #[test]
    fn config_rejects_zero_groups() {
        let mut c = ExperimentConfig::desk(1);
        c.groups = 0;
        assert!(matches!(c.validate(), Err(AnalysisError::InvalidConfig(_))));
        c.groups = 5;
        c.group_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_hex_is_rejected() {
        assert!(matches!(CharFreq::from_fields(["00zz"]), Err(AnalysisError::NonHex)));
    }
}
